//! Triangle matching between two maps and the end-to-end fusion pipeline.

mod assignment;
mod consensus;
mod glr;
mod pipeline;

pub use assignment::{max_score_permutation, min_cost_assignment, solve_assignment};
pub use consensus::{correspondences_from_inliers, recover_missed, reject_outliers, InlierSet};
pub use glr::{glr_statistic, score_matrix, MleSpread, ScoreMatrix, ScoredPair};
pub use pipeline::{
    fuse_pipeline, match_maps, Diagnostics, FusionConfig, FusionOutcome, MatchResult,
};
