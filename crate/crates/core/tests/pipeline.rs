#![allow(clippy::approx_constant)]

use std::collections::{BTreeSet, HashSet};

use mapfusion::harness::noise_var_for;
use mapfusion::matching::{match_maps, InlierSet, MleSpread};
use mapfusion::{
    align_mle, correspondences_from_inliers, fuse_pipeline, generate_scene, groth_order,
    recover_missed, synthesize_maps, Correspondence, DirectedTriangle, FusionConfig, FusionError,
    GroundTruthScene, Landmark, LandmarkId, Point2, Provenance, Rigid2, SceneKind, ScoredPair,
    StochasticMap, TriangleHypergraph,
};

fn reference_transform() -> Rigid2 {
    Rigid2::new(0.7854, Point2::new(100.0, 5.0))
}

fn scene(n_total: usize, n_common: usize, seed: u64) -> GroundTruthScene {
    generate_scene(
        SceneKind::Uniform,
        n_total,
        n_common,
        100.0,
        reference_transform(),
        seed,
    )
    .unwrap()
}

fn maps_at(scene: &GroundTruthScene, snr: f64, seed: u64) -> (StochasticMap, StochasticMap) {
    let s2 = noise_var_for(scene, snr).unwrap();
    synthesize_maps(scene, s2, s2, seed).unwrap()
}

#[test]
fn noiseless_full_overlap_is_recovered_exactly() {
    let sc = scene(30, 30, 4);
    let (p, q) = maps_at(&sc, f64::INFINITY, 4);
    let out = fuse_pipeline(&p, &q, &FusionConfig::default()).unwrap();
    assert_eq!(out.correspondence.len(), 30);
    assert!(out.correspondence.pairs().iter().all(|(a, b)| a == b));
    assert!((out.estimate.theta - 0.7854).abs() < 1e-9);
    assert!((out.estimate.t - Point2::new(100.0, 5.0)).norm() < 1e-9);
    for (l, (_, src)) in out.fused.map.landmarks().iter().zip(&out.fused.provenance) {
        let Provenance::Common { p, .. } = *src else {
            panic!("full overlap leaves no exclusive landmarks");
        };
        assert!((l.pos - sc.truth(p).unwrap()).norm() < 1e-9);
    }
    assert_eq!(out.diagnostics.final_correspondences, 30);
    assert_eq!(out.diagnostics.triangles_p, out.diagnostics.triangles_q);
}

#[test]
fn partial_overlap_at_40_db() {
    let sc = scene(60, 40, 8);
    let (p, q) = maps_at(&sc, 40.0, 8);
    let out = fuse_pipeline(&p, &q, &FusionConfig::default()).unwrap();
    let wrong = out
        .correspondence
        .pairs()
        .iter()
        .filter(|(a, b)| a != b)
        .count();
    assert!(wrong <= 2, "{wrong} wrong pairs");
    assert!(out.correspondence.len() - wrong >= 35);
    assert!((out.estimate.theta - 0.7854).abs() < 0.01);
    assert_eq!(
        out.fused.map.len(),
        p.len() + q.len() - out.correspondence.len()
    );
}

#[test]
fn pipeline_is_deterministic_across_thread_counts() {
    let sc = scene(40, 30, 12);
    let (p, q) = maps_at(&sc, 30.0, 12);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fuse_pipeline(&p, &q, &FusionConfig::default()).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.fused, b.fused);
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.matching.scores.values(), b.matching.scores.values());
}

#[test]
fn pipeline_input_errors() {
    let tiny = StochasticMap::new(
        "p",
        0.1,
        vec![
            Landmark::new(LandmarkId(0), Point2::new(0.0, 0.0)),
            Landmark::new(LandmarkId(1), Point2::new(1.0, 0.0)),
        ],
    )
    .unwrap();
    assert!(fuse_pipeline(&tiny, &tiny, &FusionConfig::default()).is_err());

    let sc = scene(30, 30, 1);
    let (p, q) = maps_at(&sc, 30.0, 1);
    let bad = FusionConfig {
        var_threshold: 0.0,
        ..FusionConfig::default()
    };
    assert!(matches!(
        fuse_pipeline(&p, &q, &bad),
        Err(FusionError::InvalidParameter(_))
    ));
}

#[test]
fn disjoint_maps_report_no_consensus_or_garbage_not_panic() {
    let a = scene(30, 30, 21);
    let b = scene(30, 30, 22);
    let (p, _) = maps_at(&a, 30.0, 1);
    let (_, q) = maps_at(&b, 30.0, 2);
    match fuse_pipeline(&p, &q, &FusionConfig::default()) {
        Ok(out) => assert!(out.correspondence.len() >= 2),
        Err(e) => assert!(matches!(e, FusionError::NoConsensus { .. }), "{e}"),
    }
}

#[test]
fn banded_scoring_still_fuses_full_overlap() {
    let sc = scene(30, 30, 5);
    let (p, q) = maps_at(&sc, 40.0, 5);
    let cfg = FusionConfig {
        band: Some(8),
        ..FusionConfig::default()
    };
    let m = match_maps(&p, &q, &cfg).unwrap();
    let (n_p, n_q) = m.scores.real_dims();
    for i in 0..n_p {
        for j in 0..n_q {
            if i.abs_diff(j) > 8 {
                assert_eq!(m.scores.get(i, j), 0.0);
                assert!(m.scores.pair(i, j).is_none());
            }
        }
    }
    let out = fuse_pipeline(&p, &q, &cfg).unwrap();
    assert!((out.estimate.theta - 0.7854).abs() < 0.01);
}

// Correspondences from triangle matches ------------------------------------

fn tri(ids: [u64; 3]) -> DirectedTriangle {
    let pts = [
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(0.0, 2.0),
    ];
    let mut t = groth_order([
        (LandmarkId(0), pts[0]),
        (LandmarkId(1), pts[1]),
        (LandmarkId(2), pts[2]),
    ])
    .unwrap();
    t.ids = ids.map(LandmarkId);
    t
}

fn hypergraph(edges: Vec<DirectedTriangle>) -> TriangleHypergraph {
    TriangleHypergraph {
        vertices: edges.iter().flat_map(|t| t.ids).collect(),
        edges,
        dropped_ties: 0,
    }
}

fn matched(i: usize, j: usize, lambda: f64) -> ScoredPair {
    ScoredPair {
        i,
        j,
        lambda,
        j1_min: -2.0 * lambda.ln(),
        theta: 0.0,
        t: Point2::ORIGIN,
        spread: MleSpread {
            theta_var: 1.0,
            lever: Point2::ORIGIN,
            t_var: 1.0,
        },
        degenerate: false,
    }
}

fn inliers(accepted: Vec<ScoredPair>) -> InlierSet {
    InlierSet {
        accepted,
        consensus_theta: 0.0,
        consensus_t: Point2::ORIGIN,
        iterations: 0,
        removed: vec![],
        pooled_variance: 0.0,
        history: vec![0.0],
    }
}

fn id_pairs(c: &Correspondence) -> Vec<(u64, u64)> {
    c.pairs().iter().map(|(p, q)| (p.0, q.0)).collect()
}

#[test]
fn one_inlier_triangle_gives_three_pairs() {
    let gp = hypergraph(vec![tri([1, 2, 3])]);
    let gq = hypergraph(vec![tri([11, 12, 13])]);
    let c = correspondences_from_inliers(&inliers(vec![matched(0, 0, 0.8)]), &gp, &gq).unwrap();
    assert_eq!(id_pairs(&c), vec![(1, 11), (2, 12), (3, 13)]);
}

#[test]
fn two_triangles_sharing_an_edge_give_four_pairs() {
    let gp = hypergraph(vec![tri([1, 2, 3]), tri([2, 3, 4])]);
    let gq = hypergraph(vec![tri([11, 12, 13]), tri([12, 13, 14])]);
    let set = inliers(vec![matched(0, 0, 0.8), matched(1, 1, 0.7)]);
    let c = correspondences_from_inliers(&set, &gp, &gq).unwrap();
    assert_eq!(id_pairs(&c), vec![(1, 11), (2, 12), (3, 13), (4, 14)]);
}

#[test]
fn conflicting_pairings_keep_the_stronger() {
    let gp = hypergraph(vec![tri([1, 2, 3]), tri([1, 5, 6])]);
    let gq = hypergraph(vec![tri([11, 12, 13]), tri([21, 25, 26])]);
    let set = inliers(vec![matched(0, 0, 0.9), matched(1, 1, 0.4)]);
    let c = correspondences_from_inliers(&set, &gp, &gq).unwrap();
    let pairs = id_pairs(&c);
    assert!(pairs.contains(&(1, 11)));
    assert!(!pairs.iter().any(|&(_, q)| q == 21));
    assert!(pairs.contains(&(5, 25)) && pairs.contains(&(6, 26)));
}

#[test]
fn out_of_range_match_is_rejected() {
    let gp = hypergraph(vec![tri([1, 2, 3])]);
    let gq = hypergraph(vec![tri([11, 12, 13])]);
    assert!(correspondences_from_inliers(&inliers(vec![matched(0, 4, 0.5)]), &gp, &gq).is_err());
}

// Missed-pair recovery ------------------------------------------------------

#[test]
fn withheld_pair_is_recovered_without_noise() {
    let sc = scene(30, 30, 31);
    let (p, q) = maps_at(&sc, f64::INFINITY, 31);
    let pairs: Vec<_> = sc.common.iter().skip(1).map(|l| (l.id, l.id)).collect();
    let corr = Correspondence::new(pairs).unwrap();
    let est = align_mle(&p, &q, &corr).unwrap();
    let out = recover_missed(&p, &q, &corr, &est, 3.0).unwrap();
    assert_eq!(out.len(), 30);
    let id = sc.common[0].id;
    assert!(out.pairs().contains(&(id, id)));
}

#[test]
fn far_landmark_is_not_recovered() {
    let sig2 = 0.01;
    let base: Vec<Point2> = (0..6)
        .map(|k| Point2::new((k * 7 % 11) as f64 * 3.0, (k * 5 % 7) as f64 * 4.0))
        .collect();
    let lm = |pts: &[Point2]| -> Vec<Landmark> {
        pts.iter()
            .enumerate()
            .map(|(k, &x)| Landmark::new(LandmarkId(k as u64), x))
            .collect()
    };
    let p = StochasticMap::new("p", sig2, lm(&base)).unwrap();
    let mut moved = base.clone();
    // 10 gates away: 10 * 3 * sqrt(0.02)
    moved[5] += Point2::new(30.0 * 0.02f64.sqrt(), 0.0);
    let q = StochasticMap::new("q", sig2, lm(&moved)).unwrap();
    let corr =
        Correspondence::new((0..5).map(|k| (LandmarkId(k), LandmarkId(k))).collect()).unwrap();
    let est = align_mle(&p, &q, &corr).unwrap();
    let out = recover_missed(&p, &q, &corr, &est, 3.0).unwrap();
    assert_eq!(out.len(), 5);
    assert!(recover_missed(&p, &q, &corr, &est, f64::NAN).is_err());
}

#[test]
fn recovery_only_grows_and_stays_one_to_one() {
    for seed in 0..100u64 {
        let sc = scene(30, 30, 500 + seed);
        let (p, q) = maps_at(&sc, 30.0, 500 + seed);
        let Ok(m) = match_maps(&p, &q, &FusionConfig::default()) else {
            continue;
        };
        let Ok(est) = align_mle(&p, &q, &m.correspondence) else {
            continue;
        };
        let out = recover_missed(&p, &q, &m.correspondence, &est, 3.0).unwrap();
        assert!(out.len() >= m.correspondence.len());
        let before: HashSet<_> = m.correspondence.pairs().iter().collect();
        assert!(before.iter().all(|x| out.pairs().contains(x)));
        let ps: BTreeSet<_> = out.pairs().iter().map(|x| x.0).collect();
        let qs: BTreeSet<_> = out.pairs().iter().map(|x| x.1).collect();
        assert_eq!(ps.len(), out.len());
        assert_eq!(qs.len(), out.len());
    }
}
