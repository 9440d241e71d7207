//! Domain types shared by every stage of the pipeline.
//!
//! Coordinates are continuous pixel positions. Rasterization truncates toward
//! zero, and cell `(x, y)` is the unit square `[x, x+1) × [y, y+1)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Screenshot dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawImageSize")]
pub struct ImageSize {
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct RawImageSize {
    width: u32,
    height: u32,
}

impl TryFrom<RawImageSize> for ImageSize {
    type Error = Error;

    fn try_from(raw: RawImageSize) -> Result<Self> {
        ImageSize::new(raw.width, raw.height)
    }
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image size must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// What a model said, before rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictedTarget {
    Point { x: f64, y: f64 },
    Box { x1: f64, y1: f64, x2: f64, y2: f64 },
    Unparseable,
}

impl PredictedTarget {
    /// The point used for click-style evaluation: the point itself or the box center.
    pub fn click_point(&self) -> Option<(f64, f64)> {
        match *self {
            PredictedTarget::Point { x, y } => Some((x, y)),
            PredictedTarget::Box { x1, y1, x2, y2 } => Some(((x1 + x2) / 2.0, (y1 + y2) / 2.0)),
            PredictedTarget::Unparseable => None,
        }
    }
}

/// Builds a box target, swapping reversed corners per axis.
///
/// Any non-finite coordinate yields [`PredictedTarget::Unparseable`].
pub fn canonicalize_box(b: [f64; 4]) -> PredictedTarget {
    if b.iter().any(|v| !v.is_finite()) {
        return PredictedTarget::Unparseable;
    }
    let [x1, y1, x2, y2] = b;
    PredictedTarget::Box {
        x1: x1.min(x2),
        y1: y1.min(y2),
        x2: x1.max(x2),
        y2: y1.max(y2),
    }
}

/// Half-open integer cell rectangle covering `x ∈ [x1, x2)`, `y ∈ [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PixelRect {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl PixelRect {
    pub const EMPTY: PixelRect = PixelRect {
        x1: 0,
        y1: 0,
        x2: 0,
        y2: 0,
    };

    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u64 {
        self.x2.saturating_sub(self.x1) as u64
    }

    pub fn height(&self) -> u64 {
        self.y2.saturating_sub(self.y1) as u64
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains_cell(&self, x: u32, y: u32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn fits(&self, size: ImageSize) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2 && self.x2 <= size.width && self.y2 <= size.height
    }

    pub fn intersection_area(&self, other: &PixelRect) -> u64 {
        let w = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1)) as u64;
        let h = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1)) as u64;
        w * h
    }

    /// Continuous midpoint of the rectangle.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x1 as f64 + self.x2 as f64) / 2.0,
            (self.y1 as f64 + self.y2 as f64) / 2.0,
        )
    }

    /// Truncates a float rectangle toward zero and clamps it into the image.
    pub fn rasterize(x1: f64, y1: f64, x2: f64, y2: f64, size: ImageSize) -> Self {
        let clamp = |v: f64, hi: u32| -> u32 { (v.trunc() as i64).clamp(0, hi as i64) as u32 };
        let (x1, x2) = (clamp(x1, size.width), clamp(x2, size.width));
        let (y1, y2) = (clamp(y1, size.height), clamp(y2, size.height));
        Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }
}

impl fmt::Display for PixelRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// One stochastic model output together with its effective voting rect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub raw_text: String,
    pub target: PredictedTarget,
    pub rect: PixelRect,
}

impl Sample {
    pub fn from_text(text: impl Into<String>, alpha: f64, size: ImageSize) -> Self {
        let raw_text = text.into();
        let (target, rect) = crate::parse::parse_prediction(&raw_text, alpha, size);
        Self {
            raw_text,
            target,
            rect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidConfig(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }
}

/// Which point of the consensus region is reported as the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointMode {
    #[default]
    BboxCenter,
    Centroid,
}

/// Test-time voting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcConfig {
    pub k_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub alpha: f64,
    pub connectivity: Connectivity,
    pub point_mode: PointMode,
}

impl Default for RcConfig {
    fn default() -> Self {
        Self {
            k_samples: 64,
            temperature: 0.5,
            top_p: 0.95,
            alpha: 50.0,
            connectivity: Connectivity::Four,
            point_mode: PointMode::BboxCenter,
        }
    }
}

impl RcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_samples < 1 {
            return Err(Error::InvalidConfig("k_samples must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidConfig("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Rollout and optimizer settings for region-consistency policy optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcpoConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub kl_beta: f64,
    pub steps: usize,
}

impl Default for RcpoConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            temperature: 0.7,
            learning_rate: 1e-6,
            kl_beta: 0.04,
            steps: 40,
        }
    }
}

impl RcpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig(
                "group_size must be >= 2 to form relative advantages".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.kl_beta >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate and kl_beta must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Text,
    Icon,
    #[default]
    #[serde(other)]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
    #[default]
    #[serde(other)]
    Unknown,
}

impl ElementType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ElementType::Text => "text",
            ElementType::Icon => "icon",
            ElementType::Unknown => "unknown",
        }
    }
}

impl Platform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Platform::Mobile => "mobile",
            Platform::Desktop => "desktop",
            Platform::Web => "web",
            Platform::Unknown => "unknown",
        }
    }
}

/// Ground-truth box in continuous pixel coordinates, `x1 <= x2`, `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl GtBox {
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

impl From<PixelRect> for GtBox {
    fn from(r: PixelRect) -> Self {
        GtBox {
            x1: r.x1 as f64,
            y1: r.y1 as f64,
            x2: r.x2 as f64,
            y2: r.y2 as f64,
        }
    }
}

/// One benchmark item: a screenshot, an instruction, and the target box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub image_id: String,
    pub size: ImageSize,
    pub instruction: String,
    pub gt_box: GtBox,
    pub element_type: ElementType,
    pub platform: Platform,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonicalize_swaps_reversed_axes() {
        assert_eq!(
            canonicalize_box([30.0, 40.0, 10.0, 20.0]),
            PredictedTarget::Box {
                x1: 10.0,
                y1: 20.0,
                x2: 30.0,
                y2: 40.0
            }
        );
        assert_eq!(
            canonicalize_box([10.0, 20.0, 30.0, 40.0]),
            PredictedTarget::Box {
                x1: 10.0,
                y1: 20.0,
                x2: 30.0,
                y2: 40.0
            }
        );
    }

    #[test]
    fn canonicalize_rejects_non_finite() {
        assert_eq!(
            canonicalize_box([f64::NAN, 0.0, 1.0, 1.0]),
            PredictedTarget::Unparseable
        );
        assert_eq!(
            canonicalize_box([0.0, f64::INFINITY, 1.0, 1.0]),
            PredictedTarget::Unparseable
        );
    }

    #[test]
    fn image_size_rejects_zero() {
        assert!(ImageSize::new(0, 5).is_err());
        assert!(ImageSize::new(5, 0).is_err());
        assert_eq!(ImageSize::new(3, 2).unwrap().cells(), 6);
    }

    #[test]
    fn config_defaults() {
        let rc = RcConfig::default();
        assert_eq!(rc.k_samples, 64);
        assert_eq!(rc.temperature, 0.5);
        assert_eq!(rc.top_p, 0.95);
        assert_eq!(rc.alpha, 50.0);
        assert_eq!(rc.connectivity, Connectivity::Four);
        rc.validate().unwrap();

        let po = RcpoConfig::default();
        assert_eq!(po.group_size, 16);
        assert_eq!(po.temperature, 0.7);
        assert_eq!(po.learning_rate, 1e-6);
        assert_eq!(po.kl_beta, 0.04);
        po.validate().unwrap();
        assert!(RcpoConfig {
            group_size: 1,
            ..po
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rasterize_truncates_and_clamps() {
        let size = ImageSize::new(100, 50).unwrap();
        assert_eq!(
            PixelRect::rasterize(-3.7, 2.9, 10.9, 70.0, size),
            PixelRect::new(0, 2, 10, 50)
        );
    }

    proptest! {
        #[test]
        fn area_zero_iff_empty_axis(x1 in 0u32..50, y1 in 0u32..50, w in 0u32..20, h in 0u32..20) {
            let r = PixelRect::new(x1, y1, x1 + w, y1 + h);
            prop_assert_eq!(r.area() == 0, w == 0 || h == 0);
            prop_assert_eq!(r.area(), w as u64 * h as u64);
        }
    }
}
