//! Fusion of two stochastic landmark maps observed in unknown, rigidly
//! related frames.
//!
//! The pipeline matches Groth-ordered Delaunay triangles between the maps with
//! a likelihood-ratio score and a one-to-one assignment, keeps the triangle
//! matches whose transform estimates agree, and then aligns the maps in closed
//! form to produce a single combined map.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::approx_constant))]

pub mod align;
pub mod error;
pub mod geom;
pub mod harness;
pub mod hypergraph;
pub mod mapmodel;
pub mod matching;

pub use align::{
    align_mle, align_points, combine_maps, j0_cost, j1_cost, mle_theta_from_coeffs,
    AlignmentEstimate, Correspondence, FusedMap, Provenance,
};
pub use error::{FusionError, Result};
pub use geom::{apply_rigid, centroid_center, normalize_angle, rotate_point, Point2, Rigid2};
pub use hypergraph::{
    build_hypergraph, delaunay_triangulate, groth_order, DirectedTriangle, TriangleHypergraph,
};
pub use mapmodel::{
    generate_scene, read_map, sigma2_for_snr, snr_db, synthesize_maps, write_map, GroundTruthScene,
    Landmark, LandmarkId, SceneKind, StochasticMap,
};
pub use matching::{
    correspondences_from_inliers, fuse_pipeline, glr_statistic, recover_missed, reject_outliers,
    score_matrix, solve_assignment, FusionConfig, FusionOutcome, InlierSet, ScoreMatrix,
    ScoredPair,
};
