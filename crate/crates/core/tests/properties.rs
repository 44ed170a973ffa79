use std::collections::BTreeSet;

use mapfusion::mapmodel::{map_from_json, map_to_json};
use mapfusion::matching::{max_score_permutation, MleSpread};
use mapfusion::{
    align_points, build_hypergraph, delaunay_triangulate, glr_statistic, groth_order, j1_cost,
    normalize_angle, reject_outliers, solve_assignment, Landmark, LandmarkId, Point2, Rigid2,
    ScoreMatrix, ScoredPair, StochasticMap,
};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point2> {
    (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn rigid() -> impl Strategy<Value = Rigid2> {
    (-3.1..3.1f64, point()).prop_map(|(th, t)| Rigid2::new(th, t))
}

fn landmarks(pts: &[Point2]) -> Vec<Landmark> {
    pts.iter()
        .enumerate()
        .map(|(k, &p)| Landmark::new(LandmarkId(k as u64), p))
        .collect()
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap()
}

fn orient(a: Point2, b: Point2, c: Point2) -> BigRational {
    (rat(b.x) - rat(a.x)) * (rat(c.y) - rat(a.y)) - (rat(b.y) - rat(a.y)) * (rat(c.x) - rat(a.x))
}

fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> BigRational {
    let row = |p: Point2| {
        let (x, y) = (rat(p.x) - rat(d.x), rat(p.y) - rat(d.y));
        let w = &x * &x + &y * &y;
        (x, y, w)
    };
    let (ax, ay, aw) = row(a);
    let (bx, by, bw) = row(b);
    let (cx, cy, cw) = row(c);
    ax * (&by * &cw - &bw * &cy) - ay * (&bx * &cw - &bw * &cx) + aw * (bx * cy - by * cx)
}

fn boundary_count(pts: &[Point2]) -> usize {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let mut hull: Vec<Point2> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        for &q in p.iter() {
            while hull.len() >= start + 2
                && !orient(hull[hull.len() - 2], hull[hull.len() - 1], q).is_positive()
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
        if pass == 0 {
            p.reverse();
        }
    }
    let on_edge = |q: Point2, a: Point2, b: Point2| {
        orient(a, b, q).is_zero()
            && q.x >= a.x.min(b.x)
            && q.x <= a.x.max(b.x)
            && q.y >= a.y.min(b.y)
            && q.y <= a.y.max(b.y)
    };
    pts.iter()
        .filter(|&&q| (0..hull.len()).any(|k| on_edge(q, hull[k], hull[(k + 1) % hull.len()])))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_alignment_recovers_the_transform(
        pts in prop::collection::vec(point(), 3..20),
        g in rigid(),
        sp2 in 0.01..2.0f64,
        sq2 in 0.01..2.0f64,
    ) {
        let spread: f64 = pts.iter().map(|p| p.dist(pts[0])).fold(0.0, f64::max);
        prop_assume!(spread > 1.0);
        let xq: Vec<Point2> = pts.iter().map(|&p| g.apply(p)).collect();
        let est = align_points(&pts, &xq, sp2, sq2).unwrap();
        prop_assert!(normalize_angle(est.theta - g.theta()).abs() < 1e-9);
        prop_assert!((est.t - g.t).norm() < 1e-7);
        for (m, p) in est.mu.iter().zip(&pts) {
            prop_assert!((*m - *p).norm() < 1e-7);
        }
    }

    #[test]
    fn estimate_minimizes_the_cost(
        pairs in prop::collection::vec((point(), point()), 2..12),
        dth in -0.5..0.5f64,
        dt in point(),
    ) {
        let (xp, xq): (Vec<Point2>, Vec<Point2>) = pairs.into_iter().unzip();
        let Ok(est) = align_points(&xp, &xq, 0.3, 0.7) else { return Ok(()); };
        let best = j1_cost(&est.mu, est.t, est.theta, &xp, &xq, 0.3, 0.7).unwrap();
        let other = j1_cost(&est.mu, est.t + Point2::new(dt.x * 0.01, dt.y * 0.01), est.theta + dth, &xp, &xq, 0.3, 0.7).unwrap();
        prop_assert!(best <= other * (1.0 + 1e-12) + 1e-9);
        prop_assert!(best >= 0.0);
    }

    #[test]
    fn groth_order_ignores_vertex_order_and_rigid_motion(
        a in point(), b in point(), c in point(), g in rigid(), perm in 0usize..6,
    ) {
        let ids = [LandmarkId(1), LandmarkId(2), LandmarkId(3)];
        let pts = [a, b, c];
        let Ok(base) = groth_order([(ids[0], a), (ids[1], b), (ids[2], c)]) else {
            return Ok(());
        };
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let o = orders[perm];
        let v = o.map(|k| (ids[k], g.apply(pts[k])));
        match groth_order(v) {
            Ok(moved) => prop_assert_eq!(moved.ids, base.ids),
            Err(_) => {
                let e = base.edge_lengths;
                let tight = (e[0] - e[1]).abs().min((e[1] - e[2]).abs()).min((e[0] - e[2]).abs());
                prop_assert!(tight < 1e-6 * base.perimeter);
            }
        }
    }

    #[test]
    fn glr_is_a_probability_and_rigid_invariant(
        a in point(), b in point(), c in point(), d in point(), g in rigid(),
    ) {
        let id = |k| LandmarkId(k);
        let Ok(tp) = groth_order([(id(0), a), (id(1), b), (id(2), c)]) else { return Ok(()); };
        let Ok(tq) = groth_order([(id(3), b), (id(4), c), (id(5), d)]) else { return Ok(()); };
        let s = glr_statistic(&tp, &tq, 0.5, 0.5);
        prop_assert!((0.0..=1.0).contains(&s.lambda));
        prop_assert!(s.j1_min >= 0.0 || s.degenerate);
        let moved = tq.pos.map(|p| g.apply(p));
        let tq2 = groth_order([(tq.ids[0], moved[0]), (tq.ids[1], moved[1]), (tq.ids[2], moved[2])]);
        if let Ok(tq2) = tq2 {
            if tq2.ids == tq.ids {
                let s2 = glr_statistic(&tp, &tq2, 0.5, 0.5);
                prop_assert!((s.j1_min - s2.j1_min).abs() <= 1e-6 * (1.0 + s.j1_min));
            }
        }
    }

    #[test]
    fn delaunay_is_empty_circle_with_euler_count(
        pts in prop::collection::vec((-20i32..20, -20i32..20), 3..18),
    ) {
        let mut uniq: Vec<Point2> = pts
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|(x, y)| Point2::new(x as f64 * 0.5 + 0.1 * y as f64, y as f64))
            .collect();
        uniq.dedup();
        let lm = landmarks(&uniq);
        let Ok(tris) = delaunay_triangulate(&lm) else { return Ok(()); };
        let h = boundary_count(&uniq);
        prop_assert_eq!(tris.len(), 2 * uniq.len() - 2 - h);
        for t in &tris {
            let [a, b, c] = t.map(|i| uniq[i.0 as usize]);
            let o = orient(a, b, c);
            prop_assert!(!o.is_zero());
            for (k, &d) in uniq.iter().enumerate() {
                if t.iter().any(|i| i.0 as usize == k) {
                    continue;
                }
                let s = incircle(a, b, c, d) * o.signum();
                prop_assert!(!s.is_positive());
            }
        }
    }

    #[test]
    fn assignment_is_optimal_and_one_to_one(
        vals in prop::collection::vec(0u8..5, 16),
        n_p in 1usize..5,
        n_q in 1usize..5,
    ) {
        let m = n_p.max(n_q);
        let mut v = vec![0.0; m * m];
        for i in 0..n_p {
            for j in 0..n_q {
                v[i * m + j] = vals[i * 4 + j] as f64 / 4.0;
            }
        }
        let s = ScoreMatrix::from_values(m, v.clone()).unwrap();
        let pairs = solve_assignment(&s);
        let is: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
        let js: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(is.len(), pairs.len());
        prop_assert_eq!(js.len(), pairs.len());
        let perm = max_score_permutation(&s);
        let got: f64 = perm.iter().enumerate().map(|(i, &j)| v[i * m + j]).sum();
        let mut idx: Vec<usize> = (0..m).collect();
        let mut best = f64::NEG_INFINITY;
        permute(&mut idx, 0, &mut |p| {
            best = best.max(p.iter().enumerate().map(|(i, &j)| v[i * m + j]).sum());
        });
        prop_assert!((got - best).abs() < 1e-12);
    }

    #[test]
    fn pooled_variance_never_increases(
        est in prop::collection::vec((-0.3..0.3f64, -5.0..5.0f64, -5.0..5.0f64, 0.001..0.1f64), 3..25),
    ) {
        let scored: Vec<ScoredPair> = est
            .iter()
            .enumerate()
            .map(|(k, &(th, x, y, v))| ScoredPair {
                i: k,
                j: k,
                lambda: 0.5,
                j1_min: 1.0,
                theta: th,
                t: Point2::new(x, y),
                spread: MleSpread { theta_var: v * 0.01, lever: Point2::new(y, -x), t_var: v },
                degenerate: false,
            })
            .collect();
        let (history, iters) = match reject_outliers(&scored, 1.0, 3) {
            Ok(set) => {
                prop_assert!(set.pooled_variance <= 1.0);
                prop_assert_eq!(set.accepted.len() + set.removed.len(), scored.len());
                (set.history, set.iterations)
            }
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(history.len(), iters + 1);
        for w in history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn map_json_round_trips(
        pts in prop::collection::vec(point(), 0..10),
        var in 0.0..10.0f64,
    ) {
        let map = StochasticMap::new("frame", var, landmarks(&pts)).unwrap();
        let back = map_from_json(&map_to_json(&map)).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn hypergraph_triangles_are_delaunay_triangles(pts in prop::collection::vec(point(), 4..25)) {
        let map = StochasticMap::new("p", 0.1, landmarks(&pts)).unwrap();
        let Ok(g) = build_hypergraph(&map) else { return Ok(()); };
        let tris: BTreeSet<[LandmarkId; 3]> = delaunay_triangulate(map.landmarks())
            .unwrap()
            .into_iter()
            .map(|mut t| { t.sort(); t })
            .collect();
        prop_assert_eq!(g.len() + g.dropped_ties, tris.len());
        for e in &g.edges {
            let mut ids = e.ids;
            ids.sort();
            prop_assert!(tris.contains(&ids));
            prop_assert!(e.edge_lengths[0] < e.edge_lengths[1] && e.edge_lengths[1] < e.edge_lengths[2]);
        }
        prop_assert!(g.edges.windows(2).all(|w| w[0].perimeter <= w[1].perimeter));
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}
