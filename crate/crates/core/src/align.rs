//! Closed-form maximum-likelihood alignment of two maps with known
//! correspondence, and construction of the fused map.
//!
//! With the common landmarks centered on their per-map centroids the
//! profile cost over rotation is `alpha cos(theta) + beta sin(theta) + gamma`,
//! so the optimum rotation is `atan2(-beta, -alpha)`. Translation and the
//! fused common landmarks then follow per landmark in O(n).

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{FusionError, Result};
use crate::geom::{centroid_center, normalize_angle, Point2, Rigid2};
use crate::mapmodel::{Landmark, LandmarkId, StochasticMap};

/// Variances below `(VAR_FLOOR_REL * coordinate scale)^2` are lifted to that
/// floor so that noiseless maps still give finite costs.
pub const VAR_FLOOR_REL: f64 = 1e-9;

/// One-to-one list of `(id in p, id in q)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Correspondence {
    pairs: Vec<(LandmarkId, LandmarkId)>,
}

impl Correspondence {
    pub fn new(pairs: Vec<(LandmarkId, LandmarkId)>) -> Result<Self> {
        let mut seen_p = HashSet::new();
        let mut seen_q = HashSet::new();
        for &(p, q) in &pairs {
            if !seen_p.insert(p) {
                return Err(FusionError::NotOneToOne(p));
            }
            if !seen_q.insert(q) {
                return Err(FusionError::NotOneToOne(q));
            }
        }
        Ok(Correspondence { pairs })
    }

    pub fn pairs(&self) -> &[(LandmarkId, LandmarkId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains_p(&self, id: LandmarkId) -> bool {
        self.pairs.iter().any(|&(p, _)| p == id)
    }

    pub fn contains_q(&self, id: LandmarkId) -> bool {
        self.pairs.iter().any(|&(_, q)| q == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentEstimate {
    pub theta: f64,
    pub t: Point2,
    /// Fused common landmarks in frame `p`, in correspondence order.
    pub mu: Vec<Point2>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Weighted squared error at the optimum.
    pub j1_min: f64,
    pub n_common: usize,
}

impl AlignmentEstimate {
    pub fn transform(&self) -> Rigid2 {
        Rigid2::new(self.theta, self.t)
    }
}

/// Minimizer of `alpha cos(theta) + beta sin(theta)` on `(-pi, pi]`.
pub fn mle_theta_from_coeffs(alpha: f64, beta: f64) -> Result<f64> {
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(FusionError::NonFinite("rotation coefficients"));
    }
    if alpha == 0.0 && beta == 0.0 {
        return Err(FusionError::DegenerateGeometry(
            "rotation is unobservable (alpha = beta = 0)".into(),
        ));
    }
    Ok(normalize_angle((-beta).atan2(-alpha)))
}

/// `sigma_p^2 + sigma_q^2`, floored relative to the coordinate magnitude.
pub(crate) fn effective_total_variance(sp2: f64, sq2: f64, xp: &[Point2], xq: &[Point2]) -> f64 {
    let scale2 = xp
        .iter()
        .chain(xq)
        .map(|p| p.norm2())
        .fold(1.0f64, f64::max);
    (sp2 + sq2).max(VAR_FLOOR_REL * VAR_FLOOR_REL * scale2)
}

/// Aligns matched point lists `xp[i] <-> xq[i]`.
pub fn align_points(
    xp: &[Point2],
    xq: &[Point2],
    sigma_p2: f64,
    sigma_q2: f64,
) -> Result<AlignmentEstimate> {
    if xp.len() != xq.len() {
        return Err(FusionError::LengthMismatch {
            left: xp.len(),
            right: xq.len(),
        });
    }
    let n = xp.len();
    if n < 2 {
        return Err(FusionError::TooFewCorrespondences(n));
    }
    if !(sigma_p2 >= 0.0 && sigma_q2 >= 0.0 && sigma_p2.is_finite() && sigma_q2.is_finite()) {
        return Err(FusionError::InvalidParameter(format!(
            "variances must be finite and >= 0, got {sigma_p2}, {sigma_q2}"
        )));
    }
    let (cp, dp) = centroid_center(xp)?;
    let (cq, dq) = centroid_center(xq)?;

    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (a, b) in dp.iter().zip(&dq) {
        alpha -= b.dot(*a);
        beta -= b.dot(a.perp());
        gamma += 0.5 * (a.norm2() + b.norm2());
    }
    let theta = mle_theta_from_coeffs(alpha, beta)?;
    let (s, c) = theta.sin_cos();
    let t = cq - cp.rotated_sc(s, c);

    let total = sigma_p2 + sigma_q2;
    let w = if total > 0.0 { sigma_p2 / total } else { 0.5 };
    let mu = xp
        .iter()
        .zip(&dp)
        .zip(&dq)
        .map(|((&x, &a), &b)| x - w * a + w * b.rotated_sc(-s, c))
        .collect();

    let residual: f64 = dp
        .iter()
        .zip(&dq)
        .map(|(&a, &b)| (b - a.rotated_sc(s, c)).norm2())
        .sum();
    let j1_min = residual / effective_total_variance(sigma_p2, sigma_q2, xp, xq);

    Ok(AlignmentEstimate {
        theta,
        t,
        mu,
        alpha,
        beta,
        gamma,
        j1_min,
        n_common: n,
    })
}

/// Looks up the matched coordinates of `corr` in both maps.
pub fn matched_points(
    map_p: &StochasticMap,
    map_q: &StochasticMap,
    corr: &Correspondence,
) -> Result<(Vec<Point2>, Vec<Point2>)> {
    let mut xp = Vec::with_capacity(corr.len());
    let mut xq = Vec::with_capacity(corr.len());
    for &(p, q) in corr.pairs() {
        xp.push(map_p.position(p)?);
        xq.push(map_q.position(q)?);
    }
    Ok((xp, xq))
}

pub fn align_mle(
    map_p: &StochasticMap,
    map_q: &StochasticMap,
    corr: &Correspondence,
) -> Result<AlignmentEstimate> {
    if corr.len() < 2 {
        return Err(FusionError::TooFewCorrespondences(corr.len()));
    }
    let (xp, xq) = matched_points(map_p, map_q, corr)?;
    align_points(&xp, &xq, map_p.noise_var(), map_q.noise_var())
}

fn check_cost_inputs(a: usize, b: usize, sp2: f64, sq2: f64) -> Result<()> {
    if a != b {
        return Err(FusionError::LengthMismatch { left: a, right: b });
    }
    if !(sp2 > 0.0 && sq2 > 0.0) {
        return Err(FusionError::InvalidParameter(format!(
            "cost needs positive variances, got {sp2}, {sq2}"
        )));
    }
    Ok(())
}

/// Weighted squared error over the common block for given `(mu, t, theta)`.
pub fn j1_cost(
    mu: &[Point2],
    t: Point2,
    theta: f64,
    xp1: &[Point2],
    xq1: &[Point2],
    sigma_p2: f64,
    sigma_q2: f64,
) -> Result<f64> {
    check_cost_inputs(mu.len(), xp1.len(), sigma_p2, sigma_q2)?;
    check_cost_inputs(mu.len(), xq1.len(), sigma_p2, sigma_q2)?;
    let g = Rigid2::new(theta, t);
    let mut jp = 0.0;
    let mut jq = 0.0;
    for ((&m, &a), &b) in mu.iter().zip(xp1).zip(xq1) {
        jp += (a - m).norm2();
        jq += (b - g.apply(m)).norm2();
    }
    Ok(jp / sigma_p2 + jq / sigma_q2)
}

/// Weighted squared error over the exclusive blocks.
#[allow(clippy::too_many_arguments)]
pub fn j0_cost(
    v_p: &[Point2],
    v_q: &[Point2],
    t: Point2,
    theta: f64,
    xp0: &[Point2],
    xq0: &[Point2],
    sigma_p2: f64,
    sigma_q2: f64,
) -> Result<f64> {
    check_cost_inputs(v_p.len(), xp0.len(), sigma_p2, sigma_q2)?;
    check_cost_inputs(v_q.len(), xq0.len(), sigma_p2, sigma_q2)?;
    let g = Rigid2::new(theta, t);
    let jp: f64 = v_p.iter().zip(xp0).map(|(&v, &x)| (x - v).norm2()).sum();
    let jq: f64 = v_q
        .iter()
        .zip(xq0)
        .map(|(&v, &x)| (x - g.apply(v)).norm2())
        .sum();
    Ok(jp / sigma_p2 + jq / sigma_q2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Common { p: LandmarkId, q: LandmarkId },
    OnlyP { p: LandmarkId },
    OnlyQ { q: LandmarkId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedMap {
    /// Combined map in frame `p`; ids are fresh and index `provenance`.
    pub map: StochasticMap,
    pub provenance: Vec<(LandmarkId, Provenance)>,
}

/// Builds `(mu*, v_p*, v_q*)`: fused common landmarks, unmatched `p`
/// landmarks as observed, unmatched `q` landmarks pulled back into frame `p`.
pub fn combine_maps(
    map_p: &StochasticMap,
    map_q: &StochasticMap,
    corr: &Correspondence,
    est: &AlignmentEstimate,
) -> Result<FusedMap> {
    if est.mu.len() != corr.len() {
        return Err(FusionError::LengthMismatch {
            left: est.mu.len(),
            right: corr.len(),
        });
    }
    for &(p, q) in corr.pairs() {
        map_p.position(p)?;
        map_q.position(q)?;
    }
    let matched_p: HashSet<LandmarkId> = corr.pairs().iter().map(|&(p, _)| p).collect();
    let matched_q: HashSet<LandmarkId> = corr.pairs().iter().map(|&(_, q)| q).collect();
    let g = est.transform();

    let mut landmarks = Vec::with_capacity(map_p.len() + map_q.len() - corr.len());
    let mut provenance = Vec::with_capacity(landmarks.capacity());
    let mut push = |pos: Point2, src: Provenance| {
        let id = LandmarkId(landmarks.len() as u64);
        landmarks.push(Landmark::new(id, pos));
        provenance.push((id, src));
    };
    for (&(p, q), &m) in corr.pairs().iter().zip(&est.mu) {
        push(m, Provenance::Common { p, q });
    }
    for l in map_p
        .landmarks()
        .iter()
        .filter(|l| !matched_p.contains(&l.id))
    {
        push(l.pos, Provenance::OnlyP { p: l.id });
    }
    for l in map_q
        .landmarks()
        .iter()
        .filter(|l| !matched_q.contains(&l.id))
    {
        push(g.apply_inverse(l.pos), Provenance::OnlyQ { q: l.id });
    }
    let var = map_p.noise_var().max(map_q.noise_var());
    Ok(FusedMap {
        map: StochasticMap::new(map_p.frame(), var, landmarks)?,
        provenance,
    })
}
