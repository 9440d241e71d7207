//! Region-consistency rewards and group-relative advantages.
//!
//! A rect's reward is the mean vote count over its cells divided by the
//! grid maximum, with the grid built from the same group of rects. The
//! advantage of each sample is its reward standardized within the group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parse::parse_prediction;
use crate::types::{ImageSize, PixelRect};
use crate::vote::{build_vote_grid, max_vote};

/// Default guard added to the group standard deviation.
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub epsilon: f64,
}

impl GroupRewards {
    pub fn from_rects(rects: &[PixelRect], size: ImageSize, eps: f64) -> Result<Self> {
        let rewards = region_consistency_rewards(rects, size)?;
        let advantages = group_advantages(&rewards, eps)?;
        Ok(Self {
            rewards,
            advantages,
            epsilon: eps,
        })
    }
}

/// Reward per rect: `Σ votes(r) / (v_max · |r|)`, 0 for empty rects or an empty grid.
pub fn region_consistency_rewards(rects: &[PixelRect], size: ImageSize) -> Result<Vec<f64>> {
    if rects.is_empty() {
        return Err(Error::TooFewValues { needed: 1, got: 0 });
    }
    let grid = build_vote_grid(rects, size)?;
    let v_max = max_vote(&grid);
    if v_max == 0 {
        return Ok(vec![0.0; rects.len()]);
    }
    let integral = grid.integral();
    Ok(rects
        .iter()
        .map(|r| {
            let area = r.area();
            if area == 0 {
                0.0
            } else {
                integral.rect_sum(r) as f64 / (v_max as f64 * area as f64)
            }
        })
        .collect())
}

/// `(R_k − mean) / (std + eps)` with the population standard deviation.
///
/// A group whose rewards are all equal gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: rewards.len(),
        });
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Advantage-weighted negative log-likelihood, averaged over the group.
pub fn rcpo_surrogate_loss(advantages: &[f64], logprobs: &[f64]) -> Result<f64> {
    if advantages.len() != logprobs.len() {
        return Err(Error::LengthMismatch {
            left: advantages.len(),
            right: logprobs.len(),
        });
    }
    if advantages.is_empty() {
        return Err(Error::TooFewValues { needed: 1, got: 0 });
    }
    let total: f64 = advantages.iter().zip(logprobs).map(|(a, l)| a * l).sum();
    Ok(-total / advantages.len() as f64)
}

/// Parses every text (points become `alpha` squares) and scores the group.
pub fn reward_from_texts<S: AsRef<str>>(
    texts: &[S],
    alpha: f64,
    size: ImageSize,
) -> Result<Vec<f64>> {
    let rects: Vec<PixelRect> = texts
        .iter()
        .map(|t| parse_prediction(t.as_ref(), alpha, size).1)
        .collect();
    region_consistency_rewards(&rects, size)
}
