use std::collections::HashMap;

use serde::Serialize;

use super::glr::ScoredPair;
use crate::align::{effective_total_variance, AlignmentEstimate, Correspondence};
use crate::error::{FusionError, Result};
use crate::geom::{normalize_angle, Point2};
use crate::hypergraph::TriangleHypergraph;
use crate::mapmodel::{LandmarkId, StochasticMap};

const CENTER_MAX_STEPS: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct InlierSet {
    /// Surviving triangle matches, in input order.
    pub accepted: Vec<ScoredPair>,
    pub consensus_theta: f64,
    pub consensus_t: Point2,
    /// Number of matches removed.
    pub iterations: usize,
    /// Input positions of the removed matches, in removal order.
    pub removed: Vec<usize>,
    /// Pooled standardized variance of the accepted set.
    pub pooled_variance: f64,
    /// Pooled variance before each removal and at termination.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Center {
    theta: f64,
    t: Point2,
}

fn residual(s: &ScoredPair, c: Center) -> f64 {
    s.spread
        .distance2(normalize_angle(s.theta - c.theta), s.t - c.t)
}

fn sse(set: &[&ScoredPair], c: Center) -> f64 {
    set.iter().map(|s| residual(s, c)).sum()
}

fn solve3(a: [f64; 6], b: [f64; 3]) -> Option<[f64; 3]> {
    let [a00, a01, a02, a11, a12, a22] = a;
    let m = [[a00, a01, a02], [a01, a11, a12], [a02, a12, a22]];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if !(d.is_finite() && d > 0.0) {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        *xk = det(&mk) / d;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// One information-weighted least-squares step with rotations unwrapped
/// around the current center.
fn weighted_step(set: &[&ScoredPair], c: Center) -> Option<Center> {
    let mut a = [0.0; 6];
    let mut b = [0.0; 3];
    for s in set {
        let w = s.spread.information();
        let x = [c.theta + normalize_angle(s.theta - c.theta), s.t.x, s.t.y];
        for (acc, wk) in a.iter_mut().zip(w) {
            *acc += wk;
        }
        b[0] += w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
        b[1] += w[1] * x[0] + w[3] * x[1] + w[4] * x[2];
        b[2] += w[2] * x[0] + w[4] * x[1] + w[5] * x[2];
    }
    let [th, tx, ty] = solve3(a, b)?;
    Some(Center {
        theta: normalize_angle(th),
        t: Point2::new(tx, ty),
    })
}

/// Descends from `start`; the returned center never has a larger error.
fn refine_center(set: &[&ScoredPair], start: Center) -> (Center, f64) {
    let mut c = start;
    let mut e = sse(set, c);
    for _ in 0..CENTER_MAX_STEPS {
        let Some(next) = weighted_step(set, c) else {
            break;
        };
        let en = sse(set, next);
        if !(en < e) {
            break;
        }
        let done = e - en <= 1e-12 * e;
        c = next;
        e = en;
        if done {
            break;
        }
    }
    (c, e)
}

fn initial_center(set: &[&ScoredPair]) -> Center {
    let n = set.len() as f64;
    let (s, co) = set.iter().fold((0.0, 0.0), |(s, c), p| {
        (s + p.theta.sin(), c + p.theta.cos())
    });
    let theta = if s == 0.0 && co == 0.0 {
        0.0
    } else {
        s.atan2(co)
    };
    let t = set.iter().fold(Point2::ORIGIN, |acc, p| acc + p.t);
    Center {
        theta: normalize_angle(theta),
        t: (1.0 / n) * t,
    }
}

/// Iteratively removes the triangle match whose transform estimate lies
/// farthest from the weighted consensus, in units of its own noise spread,
/// until the pooled standardized variance drops to `var_threshold`.
///
/// The pooled variance is `SSE / (3 N)` at the weighted center and never
/// increases from one removal to the next. Degenerate pairs are ignored.
pub fn reject_outliers(
    scored: &[ScoredPair],
    var_threshold: f64,
    min_inliers: usize,
) -> Result<InlierSet> {
    if !(var_threshold.is_finite() && var_threshold > 0.0) {
        return Err(FusionError::InvalidParameter(format!(
            "variance threshold must be finite and > 0, got {var_threshold}"
        )));
    }
    if min_inliers == 0 {
        return Err(FusionError::InvalidParameter(
            "min_inliers must be at least 1".into(),
        ));
    }
    let (mut index, mut active): (Vec<usize>, Vec<&ScoredPair>) = scored
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.degenerate)
        .unzip();
    if active.len() < min_inliers {
        return Err(FusionError::NoConsensus {
            reason: format!(
                "{} usable triangle matches, need {min_inliers}",
                active.len()
            ),
        });
    }

    let mut center = initial_center(&active);
    let mut history = Vec::new();
    let mut removed = Vec::new();
    loop {
        let (c, e) = refine_center(&active, center);
        center = c;
        let pooled = e / (3 * active.len()) as f64;
        history.push(pooled);
        if pooled <= var_threshold {
            return Ok(InlierSet {
                accepted: active.into_iter().copied().collect(),
                consensus_theta: center.theta,
                consensus_t: center.t,
                iterations: removed.len(),
                removed,
                pooled_variance: pooled,
                history,
            });
        }
        if active.len() <= min_inliers {
            return Err(FusionError::NoConsensus {
                reason: format!(
                    "pooled variance {pooled:.3e} still above {var_threshold} with {} matches left",
                    active.len()
                ),
            });
        }
        let worst = active
            .iter()
            .enumerate()
            .map(|(k, s)| (k, residual(s, center)))
            .fold((0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
            .0;
        active.remove(worst);
        removed.push(index.remove(worst));
    }
}

/// Landmark pairing implied by the accepted triangle matches. Each vertex
/// pair `(a, a')`, `(b, b')`, `(c, c')` is credited with the match's
/// likelihood ratio; pairs are then taken greedily by total credit so that
/// the result is one-to-one.
pub fn correspondences_from_inliers(
    inliers: &InlierSet,
    gp: &TriangleHypergraph,
    gq: &TriangleHypergraph,
) -> Result<Correspondence> {
    let mut credit: HashMap<(LandmarkId, LandmarkId), (f64, usize)> = HashMap::new();
    for s in &inliers.accepted {
        let (Some(tp), Some(tq)) = (gp.edges.get(s.i), gq.edges.get(s.j)) else {
            return Err(FusionError::InvalidParameter(format!(
                "triangle match ({}, {}) is out of range",
                s.i, s.j
            )));
        };
        for (&a, &b) in tp.ids.iter().zip(&tq.ids) {
            let e = credit.entry((a, b)).or_insert((0.0, 0));
            e.0 += s.lambda;
            e.1 += 1;
        }
    }
    let mut ranked: Vec<_> = credit.into_iter().collect();
    ranked.sort_by(|(ka, (wa, na)), (kb, (wb, nb))| {
        wb.total_cmp(wa).then(nb.cmp(na)).then(ka.cmp(kb))
    });
    let mut used_p = std::collections::HashSet::new();
    let mut used_q = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for ((p, q), _) in ranked {
        if used_p.contains(&p) || used_q.contains(&q) {
            continue;
        }
        used_p.insert(p);
        used_q.insert(q);
        pairs.push((p, q));
    }
    pairs.sort();
    Correspondence::new(pairs)
}

/// Extends `corr` with unmatched landmarks that are mutual nearest neighbours
/// after pulling `q` into frame `p`, within `gate_sigmas` standard deviations
/// of the combined noise.
pub fn recover_missed(
    map_p: &StochasticMap,
    map_q: &StochasticMap,
    corr: &Correspondence,
    est: &AlignmentEstimate,
    gate_sigmas: f64,
) -> Result<Correspondence> {
    if !(gate_sigmas.is_finite() && gate_sigmas >= 0.0) {
        return Err(FusionError::InvalidParameter(format!(
            "gate must be finite and >= 0, got {gate_sigmas}"
        )));
    }
    let g = est.transform();
    let mut free_p: Vec<(LandmarkId, Point2)> = map_p
        .landmarks()
        .iter()
        .filter(|l| !corr.contains_p(l.id))
        .map(|l| (l.id, l.pos))
        .collect();
    let mut free_q: Vec<(LandmarkId, Point2)> = map_q
        .landmarks()
        .iter()
        .filter(|l| !corr.contains_q(l.id))
        .map(|l| (l.id, g.apply_inverse(l.pos)))
        .collect();
    let xp: Vec<Point2> = map_p.landmarks().iter().map(|l| l.pos).collect();
    let xq: Vec<Point2> = free_q.iter().map(|&(_, x)| x).collect();
    let total = effective_total_variance(map_p.noise_var(), map_q.noise_var(), &xp, &xq);
    let gate2 = gate_sigmas * gate_sigmas * total;

    let nearest = |x: Point2, pool: &[(LandmarkId, Point2)]| -> Option<usize> {
        pool.iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| x.dist(a.1).total_cmp(&x.dist(b.1)).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
    };

    let mut pairs = corr.pairs().to_vec();
    loop {
        let mut found: Vec<(usize, usize)> = Vec::new();
        for (ip, &(_, x)) in free_p.iter().enumerate() {
            let Some(iq) = nearest(x, &free_q) else { break };
            if (free_q[iq].1 - x).norm2() > gate2 {
                continue;
            }
            if nearest(free_q[iq].1, &free_p) == Some(ip) {
                found.push((ip, iq));
            }
        }
        if found.is_empty() {
            break;
        }
        for &(ip, iq) in &found {
            pairs.push((free_p[ip].0, free_q[iq].0));
        }
        let (gone_p, gone_q): (Vec<usize>, Vec<usize>) = found.into_iter().unzip();
        free_p = drop_indices(free_p, &gone_p);
        free_q = drop_indices(free_q, &gone_q);
    }
    pairs.sort();
    Correspondence::new(pairs)
}

fn drop_indices<T>(v: Vec<T>, gone: &[usize]) -> Vec<T> {
    v.into_iter()
        .enumerate()
        .filter(|(k, _)| !gone.contains(k))
        .map(|(_, x)| x)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::glr::MleSpread;

    fn pair(theta: f64, t: (f64, f64)) -> ScoredPair {
        ScoredPair {
            i: 0,
            j: 0,
            lambda: 1.0,
            j1_min: 0.0,
            theta,
            t: Point2::new(t.0, t.1),
            spread: MleSpread {
                theta_var: 1e-4,
                lever: Point2::new(0.5, -2.0),
                t_var: 0.01,
            },
            degenerate: false,
        }
    }

    #[test]
    fn identical_estimates_need_no_removal() {
        let v = vec![pair(0.3, (1.0, 2.0)); 6];
        let r = reject_outliers(&v, 1.0, 3).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.accepted.len(), 6);
        assert!((r.consensus_theta - 0.3).abs() < 1e-12);
        assert!((r.consensus_t - Point2::new(1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn gross_outlier_is_removed_first() {
        let mut v: Vec<ScoredPair> = (0..8)
            .map(|k| pair(0.3 + 1e-3 * (k as f64 - 3.5), (1.0, 2.0)))
            .collect();
        v.push(pair(-2.0, (40.0, -7.0)));
        let r = reject_outliers(&v, 1.0, 3).unwrap();
        assert_eq!(r.removed, vec![8]);
        assert!(r.accepted.iter().all(|s| s.theta > 0.0));
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn consensus_straddling_pi_is_not_split() {
        let v: Vec<ScoredPair> = [3.14, -3.14, 3.13, -3.13]
            .iter()
            .map(|&th| pair(th, (0.0, 0.0)))
            .collect();
        let r = reject_outliers(&v, 1e6, 2).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.consensus_theta.abs() > 3.1);
    }

    #[test]
    fn errors() {
        let v = vec![pair(0.0, (0.0, 0.0)); 2];
        assert!(matches!(
            reject_outliers(&v, 1.0, 3),
            Err(FusionError::NoConsensus { .. })
        ));
        assert!(reject_outliers(&v, 0.0, 1).is_err());
        assert!(reject_outliers(&v, 1.0, 0).is_err());
        let spread = vec![
            pair(0.0, (0.0, 0.0)),
            pair(1.0, (5.0, 5.0)),
            pair(2.0, (-5.0, 9.0)),
        ];
        assert!(matches!(
            reject_outliers(&spread, 1.0, 3),
            Err(FusionError::NoConsensus { .. })
        ));
    }

    #[test]
    fn degenerate_pairs_are_skipped() {
        let mut bad = pair(1.0, (9.0, 9.0));
        bad.degenerate = true;
        let mut v = vec![pair(0.0, (0.0, 0.0)); 3];
        v.push(bad);
        let r = reject_outliers(&v, 1.0, 3).unwrap();
        assert_eq!(r.accepted.len(), 3);
        assert_eq!(r.iterations, 0);
    }
}
