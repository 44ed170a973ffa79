use rayon::prelude::*;
use serde::Serialize;

use crate::align::{align_points, effective_total_variance};
use crate::error::{FusionError, Result};
use crate::geom::{centroid, Point2};
use crate::hypergraph::{DirectedTriangle, TriangleHypergraph};

/// First-order spread of a triangle pair's `(theta, t)` estimate under the
/// common-triangle hypothesis.
///
/// `t + theta * lever` decorrelates translation from rotation, so the squared
/// standardized distance of an error `(e_theta, e_t)` is
/// `e_theta^2 / theta_var + |e_t + e_theta * lever|^2 / t_var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MleSpread {
    pub theta_var: f64,
    pub lever: Point2,
    pub t_var: f64,
}

impl MleSpread {
    pub fn distance2(&self, e_theta: f64, e_t: Point2) -> f64 {
        e_theta * e_theta / self.theta_var + (e_t + e_theta * self.lever).norm2() / self.t_var
    }

    /// Information matrix over `(theta, t_x, t_y)`, upper triangle
    /// `[tt, tx, ty, xx, xy, yy]`.
    pub(crate) fn information(&self) -> [f64; 6] {
        let s = 1.0 / self.t_var;
        let l = self.lever;
        [
            1.0 / self.theta_var + l.norm2() * s,
            l.x * s,
            l.y * s,
            s,
            0.0,
            s,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredPair {
    /// Index into the perimeter-sorted triangles of `p`.
    pub i: usize,
    /// Index into the perimeter-sorted triangles of `q`.
    pub j: usize,
    /// Likelihood ratio `exp(-j1_min / 2)`, in `[0, 1]`.
    pub lambda: f64,
    pub j1_min: f64,
    pub theta: f64,
    pub t: Point2,
    pub spread: MleSpread,
    /// Alignment of the pair failed; `lambda` is 0 and the MLEs are unset.
    pub degenerate: bool,
}

impl ScoredPair {
    pub fn at(mut self, i: usize, j: usize) -> Self {
        self.i = i;
        self.j = j;
        self
    }
}

/// Likelihood ratio of "same triangle seen in both frames" against "two
/// unrelated triangles". Under the unrelated hypothesis every mean is free
/// and the residual vanishes, so only the aligned residual survives:
/// `log(lambda) = -j1_min / 2`.
pub fn glr_statistic(
    tri_p: &DirectedTriangle,
    tri_q: &DirectedTriangle,
    sigma_p2: f64,
    sigma_q2: f64,
) -> ScoredPair {
    match align_points(&tri_p.pos, &tri_q.pos, sigma_p2, sigma_q2) {
        Ok(est) => {
            let total = effective_total_variance(sigma_p2, sigma_q2, &tri_p.pos, &tri_q.pos);
            let cp = centroid(&tri_p.pos).expect("three vertices");
            let spread_p: f64 = tri_p.pos.iter().map(|&x| (x - cp).norm2()).sum();
            let spread = MleSpread {
                theta_var: total / spread_p,
                lever: cp.rotated(est.theta).perp(),
                t_var: total / 3.0,
            };
            ScoredPair {
                i: 0,
                j: 0,
                lambda: (-0.5 * est.j1_min).exp(),
                j1_min: est.j1_min,
                theta: est.theta,
                t: est.t,
                spread,
                degenerate: false,
            }
        }
        Err(_) => ScoredPair {
            i: 0,
            j: 0,
            lambda: 0.0,
            j1_min: f64::INFINITY,
            theta: 0.0,
            t: Point2::ORIGIN,
            spread: MleSpread {
                theta_var: f64::INFINITY,
                lever: Point2::ORIGIN,
                t_var: f64::INFINITY,
            },
            degenerate: true,
        },
    }
}

/// Square `m x m` matrix of likelihood ratios, `m = max(|E_p|, |E_q|)`,
/// zero-padded outside the real triangle pairs.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    m: usize,
    n_p: usize,
    n_q: usize,
    values: Vec<f64>,
    /// Row-major over the real `n_p x n_q` block; `None` where banding skipped
    /// the pair.
    pairs: Vec<Option<ScoredPair>>,
}

impl ScoreMatrix {
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn real_dims(&self) -> (usize, usize) {
        (self.n_p, self.n_q)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pair(&self, i: usize, j: usize) -> Option<&ScoredPair> {
        if i < self.n_p && j < self.n_q {
            self.pairs[i * self.n_q + j].as_ref()
        } else {
            None
        }
    }

    /// Builds a matrix directly from values (no per-pair MLEs); rows and
    /// columns are all treated as real.
    pub fn from_values(m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * m {
            return Err(FusionError::LengthMismatch {
                left: values.len(),
                right: m * m,
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FusionError::InvalidParameter(
                "score entries must be finite and >= 0".into(),
            ));
        }
        Ok(ScoreMatrix {
            m,
            n_p: m,
            n_q: m,
            values,
            pairs: vec![None; m * m],
        })
    }
}

/// Scores every real triangle pair. With `band = Some(b)` only pairs whose
/// perimeter ranks differ by at most `b` are scored; the rest stay zero.
pub fn score_matrix(
    gp: &TriangleHypergraph,
    gq: &TriangleHypergraph,
    sigma_p2: f64,
    sigma_q2: f64,
    band: Option<usize>,
) -> Result<ScoreMatrix> {
    if gp.is_empty() || gq.is_empty() {
        return Err(FusionError::Empty(
            "score matrix needs triangles in both maps",
        ));
    }
    let (n_p, n_q) = (gp.len(), gq.len());
    let m = n_p.max(n_q);
    let pairs: Vec<Option<ScoredPair>> = (0..n_p)
        .into_par_iter()
        .flat_map_iter(|i| {
            let tp = &gp.edges[i];
            (0..n_q).map(move |j| {
                if band.is_some_and(|b| i.abs_diff(j) > b) {
                    None
                } else {
                    Some(glr_statistic(tp, &gq.edges[j], sigma_p2, sigma_q2).at(i, j))
                }
            })
        })
        .collect();
    let mut values = vec![0.0; m * m];
    for (k, p) in pairs.iter().enumerate() {
        if let Some(p) = p {
            values[(k / n_q) * m + k % n_q] = p.lambda;
        }
    }
    Ok(ScoreMatrix {
        m,
        n_p,
        n_q,
        values,
        pairs,
    })
}
