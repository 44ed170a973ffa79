//! Seeded Monte Carlo studies: detection ROC of the triangle likelihood
//! ratio, survival of common triangles under noise, and estimation error of
//! the fused map and transform.
//!
//! Trial `k` at SNR index `s` draws its noise (and, unless the scene is
//! fixed, its ground truth) from `derive_seed(cfg.seed, &[s, k])`, so
//! results do not depend on the number of worker threads. A fixed scene is
//! drawn from `cfg.seed` itself.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::align::{align_mle, combine_maps, Correspondence, FusedMap, Provenance};
use crate::error::{FusionError, Result};
use crate::geom::{normalize_angle, Point2, Rigid2};
use crate::hypergraph::{groth_order, hypergraph_from_landmarks, DirectedTriangle};
use crate::mapmodel::{
    derive_seed, gaussian, generate_scene, rng_for, sigma2_for_snr, synthesize_maps, write_atomic,
    GroundTruthScene, LandmarkId, SceneKind, STREAM_EXPERIMENT, STREAM_NOISE_P, STREAM_NOISE_Q,
};
use crate::matching::{fuse_pipeline, glr_statistic, FusionConfig};

/// MSE values are floored here (in dB) so exact recovery stays finite.
pub const MSE_FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformParams {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
}

impl TransformParams {
    pub fn rigid(&self) -> Rigid2 {
        Rigid2::new(self.theta, Point2::new(self.tx, self.ty))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneParams {
    pub kind: SceneKind,
    pub n_total: usize,
    pub n_common: usize,
    pub extent: f64,
    /// Fixed frame transform; `None` draws a random one.
    pub transform: Option<TransformParams>,
    /// Draw one ground truth from the experiment seed and reuse it in every
    /// trial, so only the map noise varies. Otherwise each trial draws its
    /// own scene.
    pub fixed: bool,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            kind: SceneKind::Uniform,
            n_total: 30,
            n_common: 30,
            extent: 100.0,
            #[allow(clippy::approx_constant)]
            transform: Some(TransformParams {
                theta: 0.7854,
                tx: 100.0,
                ty: 5.0,
            }),
            fixed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// SNR levels in dB; `+inf` means noiseless maps.
    pub snr_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub scene: SceneParams,
    pub pipeline: FusionConfig,
}

impl ExperimentConfig {
    pub fn roc_default() -> Self {
        ExperimentConfig {
            snr_list: vec![10.0, 20.0, 30.0, 60.0],
            trials: 2000,
            seed: 1,
            scene: SceneParams {
                transform: None,
                fixed: false,
                ..SceneParams::default()
            },
            pipeline: FusionConfig::default(),
        }
    }

    pub fn fraction_default() -> Self {
        ExperimentConfig {
            snr_list: vec![f64::INFINITY, 40.0, 30.0, 20.0, 10.0],
            trials: 200,
            seed: 1,
            scene: SceneParams::default(),
            pipeline: FusionConfig::default(),
        }
    }

    pub fn mse_default() -> Self {
        ExperimentConfig {
            snr_list: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            trials: 200,
            seed: 1,
            scene: SceneParams::default(),
            pipeline: FusionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(FusionError::InvalidParameter("trials must be >= 1".into()));
        }
        if self.snr_list.is_empty() {
            return Err(FusionError::InvalidParameter(
                "SNR list must not be empty".into(),
            ));
        }
        if let Some(s) = self
            .snr_list
            .iter()
            .find(|s| s.is_nan() || **s == f64::NEG_INFINITY)
        {
            return Err(FusionError::InvalidParameter(format!(
                "SNR must be a number or +inf, got {s}"
            )));
        }
        let sc = &self.scene;
        if sc.n_common > sc.n_total {
            return Err(FusionError::InvalidParameter(format!(
                "n_common ({}) exceeds n_total ({})",
                sc.n_common, sc.n_total
            )));
        }
        if sc.n_total < 3 {
            return Err(FusionError::InvalidParameter(format!(
                "scenes need at least 3 landmarks, got {}",
                sc.n_total
            )));
        }
        if !(sc.extent.is_finite() && sc.extent > 0.0) {
            return Err(FusionError::InvalidParameter(format!(
                "extent must be finite and > 0, got {}",
                sc.extent
            )));
        }
        if let Some(t) = sc.transform {
            if !(t.theta.is_finite() && t.tx.is_finite() && t.ty.is_finite()) {
                return Err(FusionError::NonFinite("scene transform"));
            }
        }
        Ok(())
    }
}

/// One aggregate per `(snr, metric)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub snr_db: f64,
    pub metric: String,
    /// Headline value (AUC, mean fraction, MSE in dB, success rate).
    pub value: f64,
    /// Mean of the per-trial quantity in natural units.
    pub mean: f64,
    /// Trials that contributed.
    pub count: usize,
    /// Trials that could not be evaluated.
    pub failures: usize,
}

impl ResultRow {
    fn new(experiment: &str, snr_db: f64, metric: &str, value: f64, mean: f64) -> Self {
        ResultRow {
            experiment: experiment.into(),
            snr_db,
            metric: metric.into(),
            value,
            mean,
            count: 0,
            failures: 0,
        }
    }

    fn counts(mut self, count: usize, failures: usize) -> Self {
        self.count = count;
        self.failures = failures;
        self
    }
}

/// Looks up a row by SNR and metric.
pub fn find_row<'a>(rows: &'a [ResultRow], snr_db: f64, metric: &str) -> Option<&'a ResultRow> {
    rows.iter()
        .find(|r| r.metric == metric && r.snr_db.total_cmp(&snr_db).is_eq())
}

/// Per-coordinate noise variance for a scene at `snr_db` (`+inf` gives 0).
pub fn noise_var_for(scene: &GroundTruthScene, snr_db: f64) -> Result<f64> {
    if snr_db == f64::INFINITY {
        Ok(0.0)
    } else {
        sigma2_for_snr(scene, snr_db)
    }
}

/// Random frame transform: rotation uniform on a full turn, translation
/// uniform on `[-extent, extent]^2`, from the experiment stream of `seed`.
pub fn random_transform(seed: u64, extent: f64) -> Rigid2 {
    random_rigid(&mut rng_for(seed, STREAM_EXPERIMENT), extent)
}

fn random_rigid(rng: &mut impl Rng, extent: f64) -> Rigid2 {
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let tx = rng.random_range(-extent..extent);
    let ty = rng.random_range(-extent..extent);
    Rigid2::new(theta, Point2::new(tx, ty))
}

fn scene_seed(cfg: &ExperimentConfig, trial_seed: u64) -> u64 {
    if cfg.scene.fixed {
        cfg.seed
    } else {
        trial_seed
    }
}

fn trial_scene(cfg: &ExperimentConfig, trial_seed: u64) -> Result<GroundTruthScene> {
    let sc = &cfg.scene;
    let seed = scene_seed(cfg, trial_seed);
    let g = match sc.transform {
        Some(t) => t.rigid(),
        None => random_transform(seed, sc.extent),
    };
    generate_scene(sc.kind, sc.n_total, sc.n_common, sc.extent, g, seed)
}

// ROC ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub snr_db: f64,
    pub tau: f64,
    pub p_d: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocTable {
    pub curve: Vec<RocPoint>,
    pub summary: Vec<ResultRow>,
}

/// `(tau, p_d, p_fa)` for the rule `lambda >= tau`, with `tau` running over
/// every distinct observed value in increasing order and finally `+inf`.
pub fn roc_curve(h1: &[f64], h0: &[f64]) -> Vec<(f64, f64, f64)> {
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (s1, s0) = (sorted(h1), sorted(h0));
    let mut taus: Vec<f64> = s1.iter().chain(&s0).copied().collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus.push(f64::INFINITY);
    let frac_at_least = |s: &[f64], tau: f64| {
        if s.is_empty() {
            0.0
        } else {
            (s.len() - s.partition_point(|&x| x < tau)) as f64 / s.len() as f64
        }
    };
    taus.into_iter()
        .map(|tau| (tau, frac_at_least(&s1, tau), frac_at_least(&s0, tau)))
        .collect()
}

/// Probability that an `h1` score exceeds an `h0` score, ties counting half.
pub fn auc_mann_whitney(h1: &[f64], h0: &[f64]) -> f64 {
    if h1.is_empty() || h0.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = h1
        .iter()
        .map(|&x| (x, true))
        .chain(h0.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < all.len() {
        let mut e = k;
        while e < all.len() && all[e].0 == all[k].0 {
            e += 1;
        }
        let mid_rank = (k + 1 + e) as f64 / 2.0;
        rank_sum += mid_rank * all[k..e].iter().filter(|x| x.1).count() as f64;
        k = e;
    }
    let n1 = h1.len() as f64;
    let n0 = h0.len() as f64;
    (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0)
}

fn noisy_triangle(
    tri: &DirectedTriangle,
    g: Rigid2,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<DirectedTriangle> {
    let v = [0, 1, 2].map(|k| (tri.ids[k], g.apply(tri.pos[k]) + gaussian(rng, sigma)));
    groth_order(v)
}

/// Likelihood ratio of a noisy triangle pair; a pair that cannot be put in
/// Groth order scores 0.
fn pair_lambda(
    tp: &DirectedTriangle,
    tq: &DirectedTriangle,
    g: Rigid2,
    sigma2: f64,
    seed: u64,
) -> f64 {
    let sigma = sigma2.sqrt();
    let a = noisy_triangle(
        tp,
        Rigid2::IDENTITY,
        sigma,
        &mut rng_for(seed, STREAM_NOISE_P),
    );
    let b = noisy_triangle(tq, g, sigma, &mut rng_for(seed, STREAM_NOISE_Q));
    match (a, b) {
        (Ok(a), Ok(b)) => glr_statistic(&a, &b, sigma2, sigma2).lambda,
        _ => 0.0,
    }
}

/// `(lambda under H1, lambda under H0)` for one trial.
fn roc_trial(cfg: &ExperimentConfig, snr: f64, seed: u64) -> Result<(f64, f64)> {
    let sc = &cfg.scene;
    let scene = generate_scene(
        sc.kind,
        sc.n_total,
        sc.n_total,
        sc.extent,
        Rigid2::IDENTITY,
        scene_seed(cfg, seed),
    )?;
    let sigma2 = noise_var_for(&scene, snr)?;
    let truth = hypergraph_from_landmarks(&scene.all())?;
    let n = truth.len();
    if n < 2 {
        return Err(FusionError::DegenerateGeometry(format!(
            "scene has {n} usable triangles, need 2"
        )));
    }
    let mut rng = rng_for(seed, STREAM_EXPERIMENT);
    let g1 = random_rigid(&mut rng, sc.extent);
    let g0 = random_rigid(&mut rng, sc.extent);
    let same = rng.random_range(0..n);
    let first = rng.random_range(0..n);
    let second = (first + rng.random_range(1..n)) % n;
    let e = &truth.edges;
    let h1 = pair_lambda(&e[same], &e[same], g1, sigma2, derive_seed(seed, &[1]));
    let h0 = pair_lambda(&e[first], &e[second], g0, sigma2, derive_seed(seed, &[0]));
    Ok((h1, h0))
}

/// Detection performance of `lambda >= tau` for a common triangle observed
/// in two frames (H1) against two distinct triangles of one scene (H0).
pub fn roc_experiment(cfg: &ExperimentConfig) -> Result<RocTable> {
    cfg.validate()?;
    let mut curve = Vec::new();
    let mut summary = Vec::new();
    for (s, &snr) in cfg.snr_list.iter().enumerate() {
        let trials: Vec<Result<(f64, f64)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| roc_trial(cfg, snr, derive_seed(cfg.seed, &[s as u64, k as u64])))
            .collect();
        let ok: Vec<(f64, f64)> = trials
            .iter()
            .filter_map(|t| t.as_ref().ok().copied())
            .collect();
        let failures = cfg.trials - ok.len();
        let (h1, h0): (Vec<f64>, Vec<f64>) = ok.into_iter().unzip();
        for (tau, p_d, p_fa) in roc_curve(&h1, &h0) {
            curve.push(RocPoint {
                snr_db: snr,
                tau,
                p_d,
                p_fa,
            });
        }
        let auc = auc_mann_whitney(&h1, &h0);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        summary.push(
            ResultRow::new("roc", snr, "auc", auc, auc).counts(h1.len() + h0.len(), failures),
        );
        let m1 = mean(&h1);
        summary.push(ResultRow::new("roc", snr, "lambda_h1", m1, m1).counts(h1.len(), failures));
        let m0 = mean(&h0);
        summary.push(ResultRow::new("roc", snr, "lambda_h0", m0, m0).counts(h0.len(), failures));
    }
    Ok(RocTable { curve, summary })
}

// Common-triangle fraction ------------------------------------------------

fn fraction_trial(cfg: &ExperimentConfig, snr: f64, seed: u64) -> Result<f64> {
    let scene = trial_scene(cfg, seed)?;
    let sigma2 = noise_var_for(&scene, snr)?;
    let (map_p, map_q) = synthesize_maps(&scene, sigma2, sigma2, seed)?;
    let triples = |l: &[crate::mapmodel::Landmark]| -> Result<HashSet<[LandmarkId; 3]>> {
        Ok(hypergraph_from_landmarks(l)?
            .edges
            .into_iter()
            .map(|t| t.ids)
            .collect())
    };
    let truth = triples(&scene.common)?;
    if truth.is_empty() {
        return Err(FusionError::DegenerateGeometry(
            "ground truth has no usable triangles".into(),
        ));
    }
    let in_p = triples(map_p.landmarks())?;
    let in_q = triples(map_q.landmarks())?;
    let kept = truth
        .iter()
        .filter(|t| in_p.contains(*t) && in_q.contains(*t))
        .count();
    Ok(kept as f64 / truth.len() as f64)
}

/// Fraction of ground-truth Groth triples present in both noisy
/// hypergraphs, per SNR. Needs a full-overlap scene.
pub fn triangle_fraction_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.scene.n_common != cfg.scene.n_total {
        return Err(FusionError::InvalidParameter(
            "triangle fraction study needs a full-overlap scene (n_common = n_total)".into(),
        ));
    }
    let mut rows = Vec::new();
    for (s, &snr) in cfg.snr_list.iter().enumerate() {
        let got: Vec<Result<f64>> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| fraction_trial(cfg, snr, derive_seed(cfg.seed, &[s as u64, k as u64])))
            .collect();
        let ok: Vec<f64> = got.into_iter().filter_map(|r| r.ok()).collect();
        let failures = cfg.trials - ok.len();
        let mean = if ok.is_empty() {
            0.0
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        };
        rows.push(
            ResultRow::new("trifrac", snr, "common_fraction", mean, mean)
                .counts(ok.len(), failures),
        );
    }
    Ok(rows)
}

// MSE ---------------------------------------------------------------------

type Metric = (&'static str, fn(&TrialErrors) -> f64);

/// Squared errors of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialErrors {
    /// Mean over fused landmarks of the squared position error.
    pub u: f64,
    /// Squared rotation error, wrapped.
    pub theta: f64,
    pub t: f64,
}

/// Squared errors of a fused map and transform against ground truth. Each
/// fused landmark is compared with the truth of the `p` landmark it came
/// from, or of its `q` landmark if `p` did not see it.
pub fn fused_errors(
    scene: &GroundTruthScene,
    fused: &FusedMap,
    theta: f64,
    t: Point2,
) -> Result<TrialErrors> {
    let mut se = 0.0;
    for (l, (_, src)) in fused.map.landmarks().iter().zip(&fused.provenance) {
        let id = match *src {
            Provenance::Common { p, .. } | Provenance::OnlyP { p } => p,
            Provenance::OnlyQ { q } => q,
        };
        let truth = scene.truth(id).ok_or(FusionError::UnknownId {
            id,
            frame: "scene".into(),
        })?;
        se += (l.pos - truth).norm2();
    }
    let n = fused.map.len().max(1) as f64;
    let g = scene.transform;
    Ok(TrialErrors {
        u: se / n,
        theta: normalize_angle(theta - g.theta()).powi(2),
        t: (t - g.t).norm2(),
    })
}

/// One MSE trial: the known-correspondence estimate when `known`, otherwise
/// the full pipeline.
pub fn mse_trial(cfg: &ExperimentConfig, snr: f64, seed: u64, known: bool) -> Result<TrialErrors> {
    let scene = trial_scene(cfg, seed)?;
    let sigma2 = noise_var_for(&scene, snr)?;
    let (map_p, map_q) = synthesize_maps(&scene, sigma2, sigma2, seed)?;
    let (fused, est) = if known {
        let corr = Correspondence::new(scene.common.iter().map(|l| (l.id, l.id)).collect())?;
        let est = align_mle(&map_p, &map_q, &corr)?;
        (combine_maps(&map_p, &map_q, &corr, &est)?, est)
    } else {
        let out = fuse_pipeline(&map_p, &map_q, &cfg.pipeline)?;
        (out.fused, out.estimate)
    };
    fused_errors(&scene, &fused, est.theta, est.t)
}

pub fn to_db(mse: f64) -> f64 {
    (10.0 * mse.log10()).max(MSE_FLOOR_DB)
}

/// MSE in dB of the fused map, rotation and translation per SNR, plus the
/// success rate. MSE rows are omitted at an SNR where every trial failed.
pub fn mse_sweep(cfg: &ExperimentConfig, known_correspondence: bool) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.scene.n_common < 2 {
        return Err(FusionError::InvalidParameter(
            "MSE study needs at least 2 common landmarks".into(),
        ));
    }
    let exp = if known_correspondence {
        "mse_known"
    } else {
        "mse_pipeline"
    };
    let mut rows = Vec::new();
    for (s, &snr) in cfg.snr_list.iter().enumerate() {
        let got: Vec<Result<TrialErrors>> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(cfg.seed, &[s as u64, k as u64]);
                mse_trial(cfg, snr, seed, known_correspondence)
            })
            .collect();
        let ok: Vec<TrialErrors> = got.into_iter().filter_map(|r| r.ok()).collect();
        let failures = cfg.trials - ok.len();
        if !ok.is_empty() {
            let n = ok.len() as f64;
            let metrics: [Metric; 3] = [
                ("mse_u_db", |e| e.u),
                ("mse_theta_db", |e| e.theta),
                ("mse_t_db", |e| e.t),
            ];
            for (name, f) in metrics {
                let mse = ok.iter().map(f).sum::<f64>() / n;
                rows.push(
                    ResultRow::new(exp, snr, name, to_db(mse), mse).counts(ok.len(), failures),
                );
            }
        }
        let rate = ok.len() as f64 / cfg.trials as f64;
        rows.push(ResultRow::new(exp, snr, "success_rate", rate, rate).counts(ok.len(), failures));
    }
    Ok(rows)
}

// Output ------------------------------------------------------------------

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| FusionError::Format(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| FusionError::Format(e.to_string()))
}

/// CSV with header `experiment,snr_db,metric,value,mean,count,failures`.
pub fn result_rows_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Ok(b"experiment,snr_db,metric,value,mean,count,failures\n".to_vec());
    }
    csv_bytes(rows)
}

/// CSV with header `snr_db,tau,p_d,p_fa`.
pub fn roc_csv(curve: &[RocPoint]) -> Result<Vec<u8>> {
    if curve.is_empty() {
        return Ok(b"snr_db,tau,p_d,p_fa\n".to_vec());
    }
    csv_bytes(curve)
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    outputs: &'a [&'a str],
    version: &'a str,
}

pub fn manifest_json(
    experiment: &str,
    cfg: &ExperimentConfig,
    outputs: &[&str],
) -> Result<Vec<u8>> {
    let m = Manifest {
        experiment,
        seed: cfg.seed,
        config: cfg,
        outputs,
        version: env!("CARGO_PKG_VERSION"),
    };
    let mut s = serde_json::to_string_pretty(&m).map_err(|e| FusionError::Format(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Writes `files` and a `manifest.json` into `dir`, each atomically.
pub fn write_outputs(
    dir: &Path,
    experiment: &str,
    cfg: &ExperimentConfig,
    files: &[(&str, Vec<u8>)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
    }
    write_atomic(
        &dir.join("manifest.json"),
        &manifest_json(experiment, cfg, &names)?,
    )
}
