//! Spatial-voting test-time scaling for GUI grounding.
//!
//! Sample several predictions for one instruction, let each one vote on the
//! screen cells it covers, and keep the largest region holding the most
//! votes. The same vote grid yields per-sample consistency rewards for
//! label-free policy optimization.

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod parse;
pub mod reward;
pub mod sampler;
pub mod sim;
pub mod types;
pub mod vote;

pub use error::{Error, Result};
pub use parse::{expand_point, extract_numbers, parse_prediction};
pub use reward::{
    group_advantages, rcpo_surrogate_loss, region_consistency_rewards, reward_from_texts,
    GroupRewards,
};
pub use types::{
    canonicalize_box, Connectivity, ElementType, GroundingRecord, GtBox, ImageSize, PixelRect,
    Platform, PointMode, PredictedTarget, RcConfig, RcpoConfig, Sample,
};
pub use vote::{
    build_vote_grid, build_vote_grid_naive, consensus_of_rects, extract_consensus, gui_rc,
    gui_rc_texts, max_vote, ConsensusRegion, VoteGrid,
};
