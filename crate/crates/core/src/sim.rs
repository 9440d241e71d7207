//! Model-free experiments for the voting and reward machinery.
//!
//! Noisy prediction generators stand in for a sampled VLM, a diagonal
//! Gaussian "toy policy" is trained with region-consistency rewards and
//! closed-form score-function gradients, and sweeps trace how consensus
//! accuracy responds to dispersion, sample count and point expansion.
//! Everything is a pure function of its config and seed.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::is_correct;
use crate::parse::expand_point;
use crate::reward::{group_advantages, region_consistency_rewards, DEFAULT_EPS};
use crate::types::{Connectivity, GtBox, ImageSize, PixelRect, PointMode, RcpoConfig};
use crate::vote::consensus_of_rects;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite non-negative sigma")
}

/// Box-style prediction generator around a ground-truth box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: ImageSize,
    pub gt_box: PixelRect,
    /// Per-axis Gaussian noise on the box center, in px.
    pub center_noise_sigma: f64,
    /// Half-extents are scaled by `1 + U(-jitter, jitter)`.
    pub size_jitter: f64,
    pub outlier_rate: f64,
    /// Outlier boxes get half-extents drawn from `U(1, outlier_spread)` px.
    pub outlier_spread: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must be in [0, 1]");
        }
        if !(self.center_noise_sigma >= 0.0) || !(self.outlier_spread >= 0.0) {
            return bad("center_noise_sigma and outlier_spread must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.size_jitter) {
            return bad("size_jitter must be in [0, 1]");
        }
        if !self.gt_box.fits(self.size) {
            return bad("gt_box must lie inside the image");
        }
        Ok(())
    }
}

fn synth_with(cfg: &SynthConfig, k: usize, rng: &mut ChaCha8Rng) -> Vec<PixelRect> {
    let (cx, cy) = cfg.gt_box.center();
    let (hw, hh) = (cfg.gt_box.width() as f64 / 2.0, cfg.gt_box.height() as f64 / 2.0);
    let noise = normal(cfg.center_noise_sigma);
    let (w, h) = (cfg.size.width() as f64, cfg.size.height() as f64);
    (0..k)
        .map(|_| {
            if rng.random::<f64>() < cfg.outlier_rate {
                let ox = rng.random_range(0.0..w);
                let oy = rng.random_range(0.0..h);
                let top = cfg.outlier_spread.max(1.0);
                let ow = if top > 1.0 { rng.random_range(1.0..top) } else { 1.0 };
                let oh = if top > 1.0 { rng.random_range(1.0..top) } else { 1.0 };
                PixelRect::rasterize(ox - ow, oy - oh, ox + ow, oy + oh, cfg.size)
            } else {
                let x = cx + noise.sample(rng);
                let y = cy + noise.sample(rng);
                let (jx, jy) = if cfg.size_jitter > 0.0 {
                    (
                        1.0 + rng.random_range(-cfg.size_jitter..=cfg.size_jitter),
                        1.0 + rng.random_range(-cfg.size_jitter..=cfg.size_jitter),
                    )
                } else {
                    (1.0, 1.0)
                };
                PixelRect::rasterize(x - hw * jx, y - hh * jy, x + hw * jx, y + hh * jy, cfg.size)
            }
        })
        .collect()
}

/// `k` noisy box predictions for `cfg.gt_box`, deterministic in `cfg.seed`.
pub fn synth_samples(cfg: &SynthConfig, k: usize) -> Result<Vec<PixelRect>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(synth_with(cfg, k, &mut rng))
}

/// Point-style predictor with a distractor element next to the target.
///
/// `dispersion` acts like a decoding temperature on a two-component
/// Gaussian mixture: each component's density is raised to `1/dispersion`,
/// which widens it by `sqrt(dispersion)` and reweights components by their
/// tempered mass. At low dispersion the sharper component (the distractor)
/// dominates, like greedy decoding locking onto a wrong element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointModel {
    pub size: ImageSize,
    /// Target boxes have half-extents in `[min, max]` px per axis.
    pub gt_half_extent: (f64, f64),
    pub target_sigma: f64,
    /// Mixture weight of the distractor at dispersion 1.
    pub distractor_weight: f64,
    pub distractor_sigma: f64,
    /// Distance of the distractor from the target center, px.
    pub distractor_offset: f64,
    /// Fraction of predictions uniform over the screen.
    pub outlier_rate: f64,
}

impl Default for PointModel {
    fn default() -> Self {
        Self {
            size: ImageSize::new(320, 240).expect("static size"),
            gt_half_extent: (10.0, 18.0),
            target_sigma: 10.0,
            distractor_weight: 0.3,
            distractor_sigma: 3.0,
            distractor_offset: 45.0,
            outlier_rate: 0.15,
        }
    }
}

/// One synthetic grounding query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTask {
    pub gt: PixelRect,
    pub distractor: (f64, f64),
}

impl PointModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gt_half_extent.0 >= 1.0
            && self.gt_half_extent.1 >= self.gt_half_extent.0
            && self.target_sigma > 0.0
            && self.distractor_sigma > 0.0
            && (0.0..1.0).contains(&self.distractor_weight)
            && (0.0..=1.0).contains(&self.outlier_rate)
            && self.distractor_offset >= 0.0
            && 2.0 * (self.gt_half_extent.1 + self.distractor_offset) < self.size.width().min(self.size.height()) as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("inconsistent point model {self:?}")))
        }
    }

    pub fn task(&self, rng: &mut ChaCha8Rng) -> PointTask {
        let (lo, hi) = self.gt_half_extent;
        let hw = rng.random_range(lo..=hi).round();
        let hh = rng.random_range(lo..=hi).round();
        let margin = self.distractor_offset + hi;
        let (w, h) = (self.size.width() as f64, self.size.height() as f64);
        let cx = rng.random_range(margin..=w - margin).round();
        let cy = rng.random_range(margin..=h - margin).round();
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        PointTask {
            gt: PixelRect::rasterize(cx - hw, cy - hh, cx + hw, cy + hh, self.size),
            distractor: (
                cx + self.distractor_offset * angle.cos(),
                cy + self.distractor_offset * angle.sin(),
            ),
        }
    }

    /// Probability of drawing from the distractor at the given dispersion.
    pub fn distractor_share(&self, dispersion: f64) -> f64 {
        // log tempered mass of an isotropic 2D Gaussian with weight w, std s:
        // (ln w - 2 ln s) / T + 2 ln s, up to terms shared by both components.
        let log_mass = |w: f64, s: f64| (w.ln() - 2.0 * s.ln()) / dispersion + 2.0 * s.ln();
        let lt = log_mass(1.0 - self.distractor_weight, self.target_sigma);
        let ld = log_mass(self.distractor_weight, self.distractor_sigma);
        1.0 / (1.0 + (lt - ld).exp())
    }

    pub fn sample_points(
        &self,
        task: &PointTask,
        dispersion: f64,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(f64, f64)> {
        let share = self.distractor_share(dispersion);
        let scale = dispersion.sqrt();
        let target = normal(self.target_sigma * scale);
        let distractor = normal(self.distractor_sigma * scale);
        let (tx, ty) = task.gt.center();
        let (w, h) = (self.size.width() as f64, self.size.height() as f64);
        (0..k)
            .map(|_| {
                if rng.random::<f64>() < self.outlier_rate {
                    (rng.random_range(0.0..w), rng.random_range(0.0..h))
                } else if rng.random::<f64>() < share {
                    let (dx, dy) = task.distractor;
                    (dx + distractor.sample(rng), dy + distractor.sample(rng))
                } else {
                    (tx + target.sample(rng), ty + target.sample(rng))
                }
            })
            .collect()
    }
}

/// Settings shared by every point of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: PointModel,
    pub tasks: usize,
    pub k_samples: usize,
    pub alpha: f64,
    pub dispersion: f64,
    pub connectivity: Connectivity,
    pub point_mode: PointMode,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            model: PointModel::default(),
            tasks: 300,
            k_samples: 32,
            alpha: 30.0,
            dispersion: 1.0,
            connectivity: Connectivity::Four,
            point_mode: PointMode::BboxCenter,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Dispersion,
    KSamples,
    Alpha,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Dispersion => "dispersion",
            SweepParam::KSamples => "k_samples",
            SweepParam::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Fraction of tasks whose consensus point lands in the target.
    pub accuracy: f64,
    /// Fraction of tasks whose first sample lands in the target.
    pub single_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},accuracy,single_accuracy\n", self.param.as_str());
        for p in &self.points {
            let _ = writeln!(out, "{},{:.6},{:.6}", p.value, p.accuracy, p.single_accuracy);
        }
        out
    }
}

/// Consensus and single-sample accuracy of GUI-RC on synthetic point predictions.
///
/// Task `i` always draws from stream `i` of `cfg.seed`, so different settings
/// see the same targets and the same underlying random numbers.
pub fn point_accuracy(cfg: &SweepConfig) -> Result<SweepPoint> {
    cfg.model.validate()?;
    if cfg.k_samples == 0 || cfg.tasks == 0 || !(cfg.alpha > 0.0) || !(cfg.dispersion > 0.0) {
        return Err(Error::InvalidConfig(
            "sweep needs tasks, k_samples >= 1 and positive alpha and dispersion".into(),
        ));
    }
    let mut hits = 0usize;
    let mut single = 0usize;
    for t in 0..cfg.tasks {
        let mut rng = stream_rng(cfg.seed, t as u64);
        let task = cfg.model.task(&mut rng);
        let points = cfg.model.sample_points(&task, cfg.dispersion, cfg.k_samples, &mut rng);
        let gt = GtBox::from(task.gt);
        single += is_correct(points[0], &gt) as usize;
        let rects: Vec<PixelRect> = points
            .iter()
            .map(|&(x, y)| expand_point(x, y, cfg.alpha, cfg.model.size))
            .collect();
        if let Ok(c) = consensus_of_rects(&rects, cfg.model.size, cfg.connectivity) {
            hits += is_correct(c.point(cfg.point_mode), &gt) as usize;
        }
    }
    Ok(SweepPoint {
        value: 0.0,
        accuracy: hits as f64 / cfg.tasks as f64,
        single_accuracy: single as f64 / cfg.tasks as f64,
    })
}

pub fn ablation_sweep(param: SweepParam, values: &[f64], cfg: &SweepConfig) -> Result<SweepCurve> {
    let points = values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match param {
                SweepParam::Dispersion => c.dispersion = v,
                SweepParam::KSamples => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::InvalidConfig(format!("k_samples must be a positive integer, got {v}")));
                    }
                    c.k_samples = v as usize
                }
                SweepParam::Alpha => c.alpha = v,
            }
            point_accuracy(&c).map(|p| SweepPoint { value: v, ..p })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve { param, points })
}

/// Paired comparison of consensus against one random sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceConfig {
    pub size: ImageSize,
    pub tasks_per_trial: usize,
    pub k_samples: usize,
    /// Each trial draws its noise sigma uniformly from this range, px.
    pub sigma_range: (f64, f64),
    /// Each trial draws its outlier rate uniformly from `[0, outlier_max]`.
    pub outlier_max: f64,
    pub size_jitter: f64,
    pub outlier_spread: f64,
    /// Target half-extent range, px.
    pub gt_half_extent: (f64, f64),
    pub connectivity: Connectivity,
    pub point_mode: PointMode,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        Self {
            size: ImageSize::new(320, 240).expect("static size"),
            tasks_per_trial: 20,
            k_samples: 16,
            sigma_range: (5.0, 30.0),
            outlier_max: 0.3,
            size_jitter: 0.3,
            outlier_spread: 40.0,
            gt_half_extent: (10.0, 25.0),
            connectivity: Connectivity::Four,
            point_mode: PointMode::BboxCenter,
            bootstrap_resamples: 2000,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub sigma: f64,
    pub outlier_rate: f64,
    pub consensus_accuracy: f64,
    pub single_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceSummary {
    pub trials: usize,
    pub consensus: MeanCi,
    pub single: MeanCi,
    pub difference: MeanCi,
    /// Fraction of trials with consensus accuracy >= single-sample accuracy.
    pub dominance_rate: f64,
    pub per_trial: Vec<TrialResult>,
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> MeanCi {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 || resamples == 0 {
        return MeanCi { mean, lo: mean, hi: mean };
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    MeanCi {
        mean,
        lo: at(0.025),
        hi: at(0.975),
    }
}

fn dominance_trial(cfg: &DominanceConfig, t: usize) -> TrialResult {
    let (lo, hi) = cfg.gt_half_extent;
    let (w, h) = (cfg.size.width() as f64, cfg.size.height() as f64);
    let mut rng = stream_rng(cfg.seed, t as u64);
    let sigma = rng.random_range(cfg.sigma_range.0..=cfg.sigma_range.1);
    let outlier_rate = rng.random_range(0.0..=cfg.outlier_max);
    let (mut rc_hits, mut single_hits) = (0usize, 0usize);
    for _ in 0..cfg.tasks_per_trial {
        let hw = rng.random_range(lo..=hi).round();
        let hh = rng.random_range(lo..=hi).round();
        let cx = rng.random_range(hw..=w - hw).round();
        let cy = rng.random_range(hh..=h - hh).round();
        let gt_rect = PixelRect::rasterize(cx - hw, cy - hh, cx + hw, cy + hh, cfg.size);
        let synth = SynthConfig {
            size: cfg.size,
            gt_box: gt_rect,
            center_noise_sigma: sigma,
            size_jitter: cfg.size_jitter,
            outlier_rate,
            outlier_spread: cfg.outlier_spread,
            seed: 0,
        };
        let rects = synth_with(&synth, cfg.k_samples, &mut rng);
        let gt = GtBox::from(gt_rect);
        let pick = rng.random_range(0..rects.len());
        single_hits += is_correct(rects[pick].center(), &gt) as usize;
        if let Ok(c) = consensus_of_rects(&rects, cfg.size, cfg.connectivity) {
            rc_hits += is_correct(c.point(cfg.point_mode), &gt) as usize;
        }
    }
    let n = cfg.tasks_per_trial as f64;
    TrialResult {
        sigma,
        outlier_rate,
        consensus_accuracy: rc_hits as f64 / n,
        single_accuracy: single_hits as f64 / n,
    }
}

/// Maps `f` over `0..n` on scoped worker threads, keeping index order.
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("trial worker panicked"))
            .collect()
    })
}

pub fn rc_vs_single_experiment(cfg: &DominanceConfig, trials: usize) -> Result<DominanceSummary> {
    if trials == 0 || cfg.tasks_per_trial == 0 || cfg.k_samples == 0 {
        return Err(Error::InvalidConfig("need trials, tasks and samples".into()));
    }
    let (lo, hi) = cfg.gt_half_extent;
    let (w, h) = (cfg.size.width() as f64, cfg.size.height() as f64);
    if lo < 1.0 || hi < lo || 2.0 * hi >= w.min(h) {
        return Err(Error::InvalidConfig("gt_half_extent does not fit the image".into()));
    }
    let (s0, s1) = cfg.sigma_range;
    if !(0.0 <= s0 && s0 <= s1) || !(0.0..=1.0).contains(&cfg.outlier_max) {
        return Err(Error::InvalidConfig("need 0 <= sigma_min <= sigma_max and outlier_max in [0, 1]".into()));
    }
    let per_trial = par_map(trials, |t| dominance_trial(cfg, t));
    let mut boot = stream_rng(cfg.seed, u64::MAX);
    let rc: Vec<f64> = per_trial.iter().map(|t| t.consensus_accuracy).collect();
    let single: Vec<f64> = per_trial.iter().map(|t| t.single_accuracy).collect();
    let diff: Vec<f64> = rc.iter().zip(&single).map(|(a, b)| a - b).collect();
    let wins = per_trial
        .iter()
        .filter(|t| t.consensus_accuracy >= t.single_accuracy)
        .count();
    Ok(DominanceSummary {
        trials,
        consensus: bootstrap_mean_ci(&rc, cfg.bootstrap_resamples, &mut boot),
        single: bootstrap_mean_ci(&single, cfg.bootstrap_resamples, &mut boot),
        difference: bootstrap_mean_ci(&diff, cfg.bootstrap_resamples, &mut boot),
        dominance_rate: wins as f64 / trials as f64,
        per_trial,
    })
}

/// Diagonal Gaussian over the box center with a fixed box size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub mu: (f64, f64),
    pub log_sigma: (f64, f64),
    pub log_halfwidth: (f64, f64),
}

impl ToyPolicy {
    pub fn sigma(&self) -> (f64, f64) {
        (self.log_sigma.0.exp(), self.log_sigma.1.exp())
    }

    pub fn halfwidth(&self) -> (f64, f64) {
        (self.log_halfwidth.0.exp(), self.log_halfwidth.1.exp())
    }

    /// Root-mean-square of the per-axis center standard deviations.
    pub fn center_std(&self) -> f64 {
        let (sx, sy) = self.sigma();
        ((sx * sx + sy * sy) / 2.0).sqrt()
    }

    /// Log-density of a box center under the policy.
    pub fn log_prob(&self, center: (f64, f64)) -> f64 {
        let (sx, sy) = self.sigma();
        let zx = (center.0 - self.mu.0) / sx;
        let zy = (center.1 - self.mu.1) / sy;
        -0.5 * (zx * zx + zy * zy) - self.log_sigma.0 - self.log_sigma.1 - LN_2PI
    }

    /// Gradient of [`Self::log_prob`] with respect to `(mu, log_sigma)`.
    pub fn score(&self, center: (f64, f64)) -> PolicyGrad {
        let (sx, sy) = self.sigma();
        let zx = (center.0 - self.mu.0) / sx;
        let zy = (center.1 - self.mu.1) / sy;
        PolicyGrad {
            mu: (zx / sx, zy / sy),
            log_sigma: (zx * zx - 1.0, zy * zy - 1.0),
        }
    }
}

/// Gradient over the trainable parameters `(mu, log_sigma)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyGrad {
    pub mu: (f64, f64),
    pub log_sigma: (f64, f64),
}

impl PolicyGrad {
    fn axpy(&mut self, a: f64, g: &PolicyGrad) {
        self.mu.0 += a * g.mu.0;
        self.mu.1 += a * g.mu.1;
        self.log_sigma.0 += a * g.log_sigma.0;
        self.log_sigma.1 += a * g.log_sigma.1;
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu.0, self.mu.1, self.log_sigma.0, self.log_sigma.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub center: (f64, f64),
    pub rect: PixelRect,
    pub logprob: f64,
}

/// Draws a center, builds the fixed-size box around it, and clamps it to the image.
/// The log-probability is of the unclamped center.
pub fn policy_sample(p: &ToyPolicy, size: ImageSize, rng: &mut ChaCha8Rng) -> Rollout {
    let (sx, sy) = p.sigma();
    let cx = p.mu.0 + sx * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let cy = p.mu.1 + sy * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let (hx, hy) = p.halfwidth();
    Rollout {
        center: (cx, cy),
        rect: PixelRect::rasterize(cx - hx, cy - hy, cx + hx, cy + hy, size),
        logprob: p.log_prob((cx, cy)),
    }
}

/// `-(1/K) Σ A_k log π(c_k)` evaluated at `p` for fixed draws.
pub fn surrogate_at(p: &ToyPolicy, centers: &[(f64, f64)], advantages: &[f64]) -> Result<f64> {
    let logprobs: Vec<f64> = centers.iter().map(|&c| p.log_prob(c)).collect();
    crate::reward::rcpo_surrogate_loss(advantages, &logprobs)
}

/// Analytic gradient of [`surrogate_at`]; advantages are constants.
pub fn surrogate_grad(p: &ToyPolicy, centers: &[(f64, f64)], advantages: &[f64]) -> Result<PolicyGrad> {
    if centers.len() != advantages.len() {
        return Err(Error::LengthMismatch {
            left: centers.len(),
            right: advantages.len(),
        });
    }
    let mut g = PolicyGrad::default();
    let k = centers.len() as f64;
    for (&c, &a) in centers.iter().zip(advantages) {
        g.axpy(-a / k, &p.score(c));
    }
    Ok(g)
}

/// `KL(p || reference)` summed over both axes.
pub fn kl_to_reference(p: &ToyPolicy, reference: &ToyPolicy) -> f64 {
    let axis = |mu: f64, ls: f64, mu0: f64, ls0: f64| {
        let (s2, s02) = ((2.0 * ls).exp(), (2.0 * ls0).exp());
        ls0 - ls + (s2 + (mu - mu0).powi(2)) / (2.0 * s02) - 0.5
    };
    axis(p.mu.0, p.log_sigma.0, reference.mu.0, reference.log_sigma.0)
        + axis(p.mu.1, p.log_sigma.1, reference.mu.1, reference.log_sigma.1)
}

pub fn kl_grad(p: &ToyPolicy, reference: &ToyPolicy) -> PolicyGrad {
    let (s0x, s0y) = reference.sigma();
    let (sx, sy) = p.sigma();
    PolicyGrad {
        mu: (
            (p.mu.0 - reference.mu.0) / (s0x * s0x),
            (p.mu.1 - reference.mu.1) / (s0y * s0y),
        ),
        log_sigma: (sx * sx / (s0x * s0x) - 1.0, sy * sy / (s0y * s0y) - 1.0),
    }
}

/// Surrogate plus `beta`-weighted KL to the reference policy.
pub fn objective(
    p: &ToyPolicy,
    reference: &ToyPolicy,
    beta: f64,
    centers: &[(f64, f64)],
    advantages: &[f64],
) -> Result<f64> {
    Ok(surrogate_at(p, centers, advantages)? + beta * kl_to_reference(p, reference))
}

pub fn objective_grad(
    p: &ToyPolicy,
    reference: &ToyPolicy,
    beta: f64,
    centers: &[(f64, f64)],
    advantages: &[f64],
) -> Result<PolicyGrad> {
    let mut g = surrogate_grad(p, centers, advantages)?;
    g.axpy(beta, &kl_grad(p, reference));
    Ok(g)
}

pub fn apply_step(p: &ToyPolicy, g: &PolicyGrad, lr: f64) -> ToyPolicy {
    ToyPolicy {
        mu: (p.mu.0 - lr * g.mu.0, p.mu.1 - lr * g.mu.1),
        log_sigma: (p.log_sigma.0 - lr * g.log_sigma.0, p.log_sigma.1 - lr * g.log_sigma.1),
        log_halfwidth: p.log_halfwidth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    /// Policy center spread before the update, see [`ToyPolicy::center_std`].
    pub center_std: f64,
    /// Spread of this step's sampled centers.
    pub sample_center_std: f64,
    pub consensus_area: u64,
    /// Fraction of rollouts whose center hit the target, when one is known.
    pub hit_rate: Option<f64>,
    pub mu: (f64, f64),
    pub updated: bool,
}

/// One group of rollouts, rewarded by their own vote grid, and one gradient step.
///
/// A group whose advantages are all zero leaves the policy untouched.
pub fn rcpo_train_step(
    p: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &RcpoConfig,
    size: ImageSize,
    gt: Option<&GtBox>,
    rng: &mut ChaCha8Rng,
) -> Result<(ToyPolicy, StepStats)> {
    cfg.validate()?;
    let rollouts: Vec<Rollout> = (0..cfg.group_size).map(|_| policy_sample(p, size, rng)).collect();
    let rects: Vec<PixelRect> = rollouts.iter().map(|r| r.rect).collect();
    let centers: Vec<(f64, f64)> = rollouts.iter().map(|r| r.center).collect();
    let rewards = region_consistency_rewards(&rects, size)?;
    let advantages = group_advantages(&rewards, DEFAULT_EPS)?;

    let k = rollouts.len() as f64;
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| centers.iter().map(f).sum::<f64>() / k;
    let (mx, my) = (mean(&|c| c.0), mean(&|c| c.1));
    let var = mean(&|c| ((c.0 - mx).powi(2) + (c.1 - my).powi(2)) / 2.0);
    let stats = StepStats {
        step: 0,
        mean_reward: rewards.iter().sum::<f64>() / k,
        center_std: p.center_std(),
        sample_center_std: var.sqrt(),
        consensus_area: consensus_of_rects(&rects, size, Connectivity::Four).map_or(0, |c| c.area),
        hit_rate: gt.map(|g| centers.iter().filter(|&&c| is_correct(c, g)).count() as f64 / k),
        mu: p.mu,
        updated: advantages.iter().any(|&a| a != 0.0),
    };
    if !stats.updated {
        return Ok((*p, stats));
    }
    let g = objective_grad(p, reference, cfg.kl_beta, &centers, &advantages)?;
    Ok((apply_step(p, &g, cfg.learning_rate), stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub size: ImageSize,
    /// Used only to report hit rates; training never sees it.
    pub gt_box: Option<PixelRect>,
    pub init: ToyPolicy,
    pub rcpo: RcpoConfig,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            size: ImageSize::new(320, 240).expect("static size"),
            gt_box: Some(PixelRect::new(140, 100, 180, 130)),
            init: ToyPolicy {
                mu: (166.0, 111.0),
                log_sigma: (24f64.ln(), 24f64.ln()),
                log_halfwidth: (20f64.ln(), 15f64.ln()),
            },
            // The toy parameters are a handful of pixels, not VLM weights.
            rcpo: RcpoConfig {
                learning_rate: 0.02,
                steps: 200,
                ..RcpoConfig::default()
            },
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub steps: Vec<StepStats>,
    pub initial: ToyPolicy,
    pub final_policy: ToyPolicy,
}

impl TrainingCurve {
    /// Mean of `mean_reward` over consecutive windows of `window` steps.
    pub fn windowed_reward(&self, window: usize) -> Vec<f64> {
        self.steps
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().map(|s| s.mean_reward).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,mean_reward,center_std,sample_center_std,consensus_area,hit_rate,mu_x,mu_y\n",
        );
        for s in &self.steps {
            let hit = s.hit_rate.map(|h| format!("{h:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{},{:.4},{:.4}",
                s.step, s.mean_reward, s.center_std, s.sample_center_std, s.consensus_area, hit, s.mu.0, s.mu.1
            );
        }
        out
    }
}

pub fn run_rcpo_demo(cfg: &DemoConfig) -> Result<TrainingCurve> {
    cfg.rcpo.validate()?;
    let gt = cfg.gt_box.map(GtBox::from);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = cfg.init;
    let mut steps = Vec::with_capacity(cfg.rcpo.steps);
    for step in 0..cfg.rcpo.steps {
        let (next, mut stats) = rcpo_train_step(&policy, &cfg.init, &cfg.rcpo, cfg.size, gt.as_ref(), &mut rng)?;
        stats.step = step;
        steps.push(stats);
        policy = next;
    }
    Ok(TrainingCurve {
        steps,
        initial: cfg.init,
        final_policy: policy,
    })
}
