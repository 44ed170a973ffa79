use serde::Serialize;

use super::assignment::solve_assignment;
use super::consensus::{correspondences_from_inliers, recover_missed, reject_outliers, InlierSet};
use super::glr::{score_matrix, ScoreMatrix, ScoredPair};
use crate::align::{align_mle, combine_maps, AlignmentEstimate, Correspondence, FusedMap};
use crate::error::{FusionError, Result};
use crate::hypergraph::{build_hypergraph, TriangleHypergraph};
use crate::mapmodel::StochasticMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FusionConfig {
    /// Stop rejecting once the pooled standardized variance is at most this.
    pub var_threshold: f64,
    /// Fewest triangle matches a consensus may rest on.
    pub min_inliers: usize,
    /// Gate for recovering unmatched landmarks, in combined noise sigmas.
    pub gate_sigmas: f64,
    /// Only score triangle pairs whose perimeter ranks differ by at most this.
    pub band: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            var_threshold: 1.0,
            min_inliers: 3,
            gate_sigmas: 3.0,
            band: None,
        }
    }
}

/// Everything the triangle-matching stage produced.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub hypergraph_p: TriangleHypergraph,
    pub hypergraph_q: TriangleHypergraph,
    pub scores: ScoreMatrix,
    pub assignment: Vec<(usize, usize)>,
    pub inliers: InlierSet,
    pub correspondence: Correspondence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub triangles_p: usize,
    pub triangles_q: usize,
    pub dropped_ties_p: usize,
    pub dropped_ties_q: usize,
    pub assigned: usize,
    pub inliers: usize,
    pub rejection_iterations: usize,
    pub pooled_variance: f64,
    pub initial_correspondences: usize,
    pub recovered: usize,
    pub final_correspondences: usize,
    pub j1_min: f64,
}

#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub fused: FusedMap,
    pub estimate: AlignmentEstimate,
    pub correspondence: Correspondence,
    pub matching: MatchResult,
    pub diagnostics: Diagnostics,
}

fn check_config(cfg: &FusionConfig) -> Result<()> {
    if !(cfg.var_threshold.is_finite() && cfg.var_threshold > 0.0) {
        return Err(FusionError::InvalidParameter(format!(
            "var_threshold must be finite and > 0, got {}",
            cfg.var_threshold
        )));
    }
    if cfg.min_inliers == 0 {
        return Err(FusionError::InvalidParameter(
            "min_inliers must be at least 1".into(),
        ));
    }
    if !(cfg.gate_sigmas.is_finite() && cfg.gate_sigmas >= 0.0) {
        return Err(FusionError::InvalidParameter(format!(
            "gate_sigmas must be finite and >= 0, got {}",
            cfg.gate_sigmas
        )));
    }
    Ok(())
}

/// Triangle matching up to the landmark correspondence implied by the
/// consensus triangle matches.
pub fn match_maps(
    map_p: &StochasticMap,
    map_q: &StochasticMap,
    cfg: &FusionConfig,
) -> Result<MatchResult> {
    check_config(cfg)?;
    let hypergraph_p = build_hypergraph(map_p)?;
    let hypergraph_q = build_hypergraph(map_q)?;
    if hypergraph_p.is_empty() || hypergraph_q.is_empty() {
        return Err(FusionError::NoConsensus {
            reason: "no usable triangles after dropping edge ties".into(),
        });
    }
    let scores = score_matrix(
        &hypergraph_p,
        &hypergraph_q,
        map_p.noise_var(),
        map_q.noise_var(),
        cfg.band,
    )?;
    let assignment = solve_assignment(&scores);
    let candidates: Vec<ScoredPair> = assignment
        .iter()
        .filter_map(|&(i, j)| scores.pair(i, j).copied())
        .collect();
    let inliers = reject_outliers(&candidates, cfg.var_threshold, cfg.min_inliers)?;
    let correspondence = correspondences_from_inliers(&inliers, &hypergraph_p, &hypergraph_q)?;
    Ok(MatchResult {
        hypergraph_p,
        hypergraph_q,
        scores,
        assignment,
        inliers,
        correspondence,
    })
}

/// Full fusion: triangle matching, consensus, alignment on the implied
/// landmark pairs, recovery of missed pairs, re-alignment and combination.
pub fn fuse_pipeline(
    map_p: &StochasticMap,
    map_q: &StochasticMap,
    cfg: &FusionConfig,
) -> Result<FusionOutcome> {
    let matching = match_maps(map_p, map_q, cfg)?;
    let initial = &matching.correspondence;
    let first = align_mle(map_p, map_q, initial).map_err(no_consensus)?;
    let correspondence = recover_missed(map_p, map_q, initial, &first, cfg.gate_sigmas)?;
    let estimate = if correspondence.len() == initial.len() {
        first
    } else {
        align_mle(map_p, map_q, &correspondence).map_err(no_consensus)?
    };
    let fused = combine_maps(map_p, map_q, &correspondence, &estimate)?;
    let diagnostics = Diagnostics {
        triangles_p: matching.hypergraph_p.len(),
        triangles_q: matching.hypergraph_q.len(),
        dropped_ties_p: matching.hypergraph_p.dropped_ties,
        dropped_ties_q: matching.hypergraph_q.dropped_ties,
        assigned: matching.assignment.len(),
        inliers: matching.inliers.accepted.len(),
        rejection_iterations: matching.inliers.iterations,
        pooled_variance: matching.inliers.pooled_variance,
        initial_correspondences: initial.len(),
        recovered: correspondence.len() - initial.len(),
        final_correspondences: correspondence.len(),
        j1_min: estimate.j1_min,
    };
    Ok(FusionOutcome {
        fused,
        estimate,
        correspondence,
        matching,
        diagnostics,
    })
}

fn no_consensus(e: FusionError) -> FusionError {
    match e {
        FusionError::TooFewCorrespondences(_) | FusionError::DegenerateGeometry(_) => {
            FusionError::NoConsensus {
                reason: e.to_string(),
            }
        }
        other => other,
    }
}
