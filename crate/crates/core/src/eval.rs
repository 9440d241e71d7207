//! Dataset ingestion and point-in-box grounding accuracy.
//!
//! Reports break accuracy down by (platform, element type), by platform, and
//! overall. The overall number is a micro-average over records.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_jsonl, Reject};
use crate::types::{ElementType, GroundingRecord, GtBox, ImageSize, Platform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BboxConvention {
    #[default]
    Xyxy,
    Xywh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Containment {
    /// `x1 <= px <= x2` on both axes.
    #[default]
    Inclusive,
    /// `x1 <= px < x2` on both axes.
    HalfOpen,
}

/// Canonical on-disk dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLine {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub instruction: String,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub data_type: ElementType,
    #[serde(default)]
    pub platform: Platform,
}

impl DatasetLine {
    fn into_record(self, convention: BboxConvention) -> std::result::Result<GroundingRecord, String> {
        let size = ImageSize::new(self.width, self.height).map_err(|e| e.to_string())?;
        if self.bbox.iter().any(|v| !v.is_finite()) {
            return Err("bbox has non-finite coordinates".into());
        }
        let [a, b, c, d] = self.bbox;
        let (x2, y2) = match convention {
            BboxConvention::Xyxy => (c, d),
            BboxConvention::Xywh => (a + c, b + d),
        };
        let gt = GtBox {
            x1: a,
            y1: b,
            x2,
            y2,
        };
        if gt.x1 > gt.x2 || gt.y1 > gt.y2 {
            return Err(format!("bbox {:?} has negative extent", self.bbox));
        }
        if gt.x1 < 0.0 || gt.y1 < 0.0 || gt.x2 > self.width as f64 || gt.y2 > self.height as f64 {
            return Err(format!(
                "bbox {:?} exceeds the {} image",
                [gt.x1, gt.y1, gt.x2, gt.y2],
                size
            ));
        }
        Ok(GroundingRecord {
            image_id: self.image_id,
            size,
            instruction: self.instruction,
            gt_box: gt,
            element_type: self.data_type,
            platform: self.platform,
        })
    }
}

impl From<&GroundingRecord> for DatasetLine {
    fn from(r: &GroundingRecord) -> Self {
        DatasetLine {
            image_id: r.image_id.clone(),
            width: r.size.width(),
            height: r.size.height(),
            instruction: r.instruction.clone(),
            bbox: [r.gt_box.x1, r.gt_box.y1, r.gt_box.x2, r.gt_box.y2],
            data_type: r.element_type,
            platform: r.platform,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedDataset {
    pub records: Vec<GroundingRecord>,
    pub rejects: Vec<Reject>,
}

/// Loads JSONL records. Bad lines and out-of-image boxes land in `rejects`.
pub fn load_dataset(path: &Path, convention: BboxConvention) -> Result<LoadedDataset> {
    let (lines, mut rejects) = read_jsonl::<serde_json::Value>(path)?;
    let mut records = Vec::with_capacity(lines.len());
    // read_jsonl drops blank lines, so recover line numbers from the raw text.
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    let numbered: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .filter(|(n, _)| !rejects.iter().any(|r| r.line == *n))
        .collect();
    for (value, (line, raw)) in lines.into_iter().zip(numbered) {
        let parsed = serde_json::from_value::<DatasetLine>(value)
            .map_err(|e| e.to_string())
            .and_then(|l| l.into_record(convention));
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(Reject {
                line,
                reason,
                raw: raw.to_string(),
            }),
        }
    }
    rejects.sort_by_key(|r| r.line);
    if records.is_empty() && rejects.is_empty() {
        tracing::warn!(path = %path.display(), "dataset is empty");
    }
    if !rejects.is_empty() {
        tracing::warn!(count = rejects.len(), path = %path.display(), "skipped dataset lines");
    }
    Ok(LoadedDataset { records, rejects })
}

/// Point-in-box hit test.
pub fn is_correct(point: (f64, f64), gt: &GtBox) -> bool {
    is_correct_with(point, gt, Containment::Inclusive)
}

pub fn is_correct_with(point: (f64, f64), gt: &GtBox, containment: Containment) -> bool {
    let (px, py) = point;
    match containment {
        Containment::Inclusive => gt.x1 <= px && px <= gt.x2 && gt.y1 <= py && py <= gt.y2,
        Containment::HalfOpen => gt.x1 <= px && px < gt.x2 && gt.y1 <= py && py < gt.y2,
    }
}

/// Identifies one grounding query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub image_id: String,
    pub instruction: String,
}

impl RecordKey {
    pub fn new(image_id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            instruction: instruction.into(),
        }
    }

    pub fn of(r: &GroundingRecord) -> Self {
        Self::new(r.image_id.clone(), r.instruction.clone())
    }
}

/// One prediction line as written by the `consensus` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub image_id: String,
    pub instruction: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<crate::types::PixelRect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<u64>,
}

impl PredictionLine {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.image_id.clone(), self.instruction.clone())
    }
}

pub type Predictions = HashMap<RecordKey, (f64, f64)>;

pub fn predictions_from_lines(lines: &[PredictionLine]) -> Predictions {
    lines.iter().map(|l| (l.key(), (l.x, l.y))).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub hits: usize,
    pub missing: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }

    fn add(&mut self, hit: bool, missing: bool) {
        self.total += 1;
        self.hits += hit as usize;
        self.missing += missing as usize;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub platform: Platform,
    pub element_type: ElementType,
    #[serde(flatten)]
    pub tally: Tally,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformStats {
    pub platform: Platform,
    #[serde(flatten)]
    pub tally: Tally,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Always `"micro"`: the overall accuracy weights every record equally.
    pub averaging: String,
    pub cells: Vec<CellStats>,
    pub platforms: Vec<PlatformStats>,
    pub overall: Tally,
    pub overall_accuracy: f64,
}

impl Report {
    pub fn cell(&self, platform: Platform, element_type: ElementType) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.platform == platform && c.element_type == element_type)
    }

    /// Accuracy as a percentage rounded to two decimals, as reported in tables.
    pub fn overall_percent(&self) -> f64 {
        (self.overall_accuracy * 10000.0).round() / 100.0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("platform,element_type,total,hits,missing,accuracy\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4}",
                c.platform.as_str(),
                c.element_type.as_str(),
                c.tally.total,
                c.tally.hits,
                c.tally.missing,
                c.accuracy
            );
        }
        for p in &self.platforms {
            let _ = writeln!(
                out,
                "{},all,{},{},{},{:.4}",
                p.platform.as_str(),
                p.tally.total,
                p.tally.hits,
                p.tally.missing,
                p.accuracy
            );
        }
        let _ = writeln!(
            out,
            "all,all,{},{},{},{:.4}",
            self.overall.total, self.overall.hits, self.overall.missing, self.overall_accuracy
        );
        out
    }
}

/// Scores predictions against records. Missing predictions count as misses.
pub fn evaluate(predictions: &Predictions, records: &[GroundingRecord]) -> Report {
    evaluate_with(predictions, records, Containment::Inclusive)
}

pub fn evaluate_with(
    predictions: &Predictions,
    records: &[GroundingRecord],
    containment: Containment,
) -> Report {
    let mut cells: BTreeMap<(Platform, ElementType), Tally> = BTreeMap::new();
    let mut platforms: BTreeMap<Platform, Tally> = BTreeMap::new();
    let mut overall = Tally::default();
    for r in records {
        let pred = predictions.get(&RecordKey::of(r));
        let hit = pred.is_some_and(|&p| is_correct_with(p, &r.gt_box, containment));
        let missing = pred.is_none();
        cells
            .entry((r.platform, r.element_type))
            .or_default()
            .add(hit, missing);
        platforms.entry(r.platform).or_default().add(hit, missing);
        overall.add(hit, missing);
    }
    Report {
        averaging: "micro".into(),
        cells: cells
            .into_iter()
            .map(|((platform, element_type), tally)| CellStats {
                platform,
                element_type,
                accuracy: tally.accuracy(),
                tally,
            })
            .collect(),
        platforms: platforms
            .into_iter()
            .map(|(platform, tally)| PlatformStats {
                platform,
                accuracy: tally.accuracy(),
                tally,
            })
            .collect(),
        overall_accuracy: overall.accuracy(),
        overall,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub platform: Platform,
    /// `None` for a whole-platform row.
    pub element_type: Option<ElementType>,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Accuracy differences `after − before`, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub cells: Vec<CellDelta>,
    pub overall_before: f64,
    pub overall_after: f64,
    pub overall_delta: f64,
}

impl DeltaReport {
    /// Renders rows like `mobile/icon  77.49+1.57`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let label = match c.element_type {
                Some(t) => format!("{}/{}", c.platform.as_str(), t.as_str()),
                None => format!("{}/all", c.platform.as_str()),
            };
            let _ = writeln!(out, "{label:<16} {}", format_delta(c.after, c.delta));
        }
        let _ = writeln!(
            out,
            "{:<16} {}",
            "overall",
            format_delta(self.overall_after, self.overall_delta)
        );
        out
    }
}

/// `82.63+2.52` style, two decimals with an explicit sign.
pub fn format_delta(value: f64, delta: f64) -> String {
    format!("{value:.2}{delta:+.2}")
}

fn pct(x: f64) -> f64 {
    x * 100.0
}

pub fn compare_reports(before: &Report, after: &Report) -> DeltaReport {
    let mut cells = Vec::new();
    let mut keys: Vec<(Platform, ElementType)> = before
        .cells
        .iter()
        .chain(&after.cells)
        .map(|c| (c.platform, c.element_type))
        .collect();
    keys.sort();
    keys.dedup();
    for (p, t) in keys {
        let b = before.cell(p, t).map_or(0.0, |c| pct(c.accuracy));
        let a = after.cell(p, t).map_or(0.0, |c| pct(c.accuracy));
        cells.push(CellDelta {
            platform: p,
            element_type: Some(t),
            before: b,
            after: a,
            delta: a - b,
        });
    }
    let mut plats: Vec<Platform> = before
        .platforms
        .iter()
        .chain(&after.platforms)
        .map(|p| p.platform)
        .collect();
    plats.sort();
    plats.dedup();
    let lookup = |r: &Report, p: Platform| {
        r.platforms
            .iter()
            .find(|s| s.platform == p)
            .map_or(0.0, |s| pct(s.accuracy))
    };
    for p in plats {
        let (b, a) = (lookup(before, p), lookup(after, p));
        cells.push(CellDelta {
            platform: p,
            element_type: None,
            before: b,
            after: a,
            delta: a - b,
        });
    }
    let (ob, oa) = (pct(before.overall_accuracy), pct(after.overall_accuracy));
    DeltaReport {
        cells,
        overall_before: ob,
        overall_after: oa,
        overall_delta: oa - ob,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PixelRect;
    use proptest::prelude::*;

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64) -> GtBox {
        GtBox { x1, y1, x2, y2 }
    }

    fn record(id: &str, platform: Platform, t: ElementType, b: GtBox) -> GroundingRecord {
        GroundingRecord {
            image_id: id.into(),
            size: ImageSize::new(100, 100).unwrap(),
            instruction: format!("tap {id}"),
            gt_box: b,
            element_type: t,
            platform,
        }
    }

    #[test]
    fn containment_boundaries() {
        let b: GtBox = PixelRect::new(10, 20, 30, 40).into();
        assert!(is_correct((20.0, 30.0), &b));
        assert!(is_correct((10.0, 20.0), &b));
        assert!(is_correct((30.0, 40.0), &b));
        assert!(!is_correct((30.01, 30.0), &b));
        assert!(!is_correct_with((30.0, 30.0), &b, Containment::HalfOpen));
        assert!(is_correct_with((10.0, 20.0), &b, Containment::HalfOpen));
    }

    #[test]
    fn all_centers_hit_and_none_missing() {
        let records = vec![
            record("a", Platform::Mobile, ElementType::Text, gt(1.0, 1.0, 5.0, 5.0)),
            record("b", Platform::Web, ElementType::Icon, gt(10.0, 10.0, 20.0, 30.0)),
        ];
        let preds: Predictions = records
            .iter()
            .map(|r| (RecordKey::of(r), r.gt_box.center()))
            .collect();
        let rep = evaluate(&preds, &records);
        assert_eq!(rep.overall_accuracy, 1.0);
        assert!(rep.cells.iter().all(|c| c.accuracy == 1.0));

        let rep = evaluate(&Predictions::new(), &records);
        assert_eq!(rep.overall_accuracy, 0.0);
        assert_eq!(rep.overall.missing, 2);
    }

    #[test]
    fn compare_identity_and_swap() {
        let records = vec![
            record("a", Platform::Mobile, ElementType::Text, gt(1.0, 1.0, 5.0, 5.0)),
            record("b", Platform::Web, ElementType::Icon, gt(10.0, 10.0, 20.0, 30.0)),
        ];
        let mut preds = Predictions::new();
        preds.insert(RecordKey::of(&records[0]), (2.0, 2.0));
        let a = evaluate(&preds, &records);
        let b = evaluate(&Predictions::new(), &records);
        let id = compare_reports(&a, &a);
        assert!(id.cells.iter().all(|c| c.delta == 0.0));
        assert_eq!(id.overall_delta, 0.0);
        let ab = compare_reports(&a, &b);
        let ba = compare_reports(&b, &a);
        for (x, y) in ab.cells.iter().zip(&ba.cells) {
            assert_eq!(x.delta, -y.delta);
        }
        assert_eq!(ab.overall_delta, -50.0);
        assert_eq!(format_delta(82.63, 2.52), "82.63+2.52");
        assert_eq!(format_delta(12.46, -0.82), "12.46-0.82");
    }

    #[test]
    fn csv_has_rows_for_cells_platforms_and_total() {
        let records = vec![record("a", Platform::Desktop, ElementType::Icon, gt(0.0, 0.0, 4.0, 4.0))];
        let csv = evaluate(&Predictions::new(), &records).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "desktop,icon,1,0,1,0.0000");
        assert_eq!(lines[3], "all,all,1,0,1,0.0000");
    }

    // Clamping the point into the box leaves it unchanged exactly when it is inside.
    fn clamp_oracle(p: (f64, f64), b: &GtBox) -> bool {
        let cx = p.0.clamp(b.x1, b.x2);
        let cy = p.1.clamp(b.y1, b.y2);
        cx == p.0 && cy == p.1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn is_correct_matches_clamp_oracle(
            px in -5.0f64..60.0, py in -5.0f64..60.0,
            x1 in 0.0f64..50.0, w in 0.0f64..20.0, y1 in 0.0f64..50.0, h in 0.0f64..20.0,
            snap in 0u8..4,
        ) {
            let b = gt(x1, y1, x1 + w, y1 + h);
            // exercise exact boundary hits too
            let p = match snap { 0 => (b.x1, py), 1 => (px, b.y2), _ => (px, py) };
            prop_assert_eq!(is_correct(p, &b), clamp_oracle(p, &b));
        }
    }

    proptest! {
        #[test]
        fn evaluate_is_order_independent(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut records: Vec<GroundingRecord> = (0..12)
                .map(|i| record(&format!("r{i}"),
                    [Platform::Mobile, Platform::Desktop, Platform::Web][i % 3],
                    [ElementType::Text, ElementType::Icon][i % 2],
                    gt(i as f64, 0.0, i as f64 + 3.0, 3.0)))
                .collect();
            let preds: Predictions = records.iter().enumerate()
                .filter(|(i, _)| i % 4 != 0)
                .map(|(i, r)| (RecordKey::of(r), (i as f64 + (i % 5) as f64, 1.0)))
                .collect();
            let base = evaluate(&preds, &records);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            records.shuffle(&mut rng);
            let shuffled = evaluate(&preds, &records);
            prop_assert_eq!(&base, &shuffled);
            let sum: usize = base.cells.iter().map(|c| c.tally.hits).sum();
            prop_assert_eq!(sum, base.overall.hits);
        }
    }
}
