use std::path::Path;

use mapfusion::harness::{
    mse_sweep, noise_var_for, random_transform, result_rows_csv, roc_csv, roc_experiment,
    triangle_fraction_experiment, write_outputs, ExperimentConfig, SceneParams, TransformParams,
};
use mapfusion::mapmodel::{map_to_json, scene_from_json, scene_to_json};
use mapfusion::matching::match_maps;
use mapfusion::{
    align_mle, build_hypergraph, fuse_pipeline, generate_scene, read_map, synthesize_maps,
    AlignmentEstimate, Correspondence, FusionConfig, LandmarkId, Provenance, Rigid2, StochasticMap,
};
use serde::{Deserialize, Serialize};

use crate::output::{csv_bytes, json_bytes, sidecar, Staged};
use crate::{CliError, Command, ExperimentArgs, PipelineArgs, SceneArgs};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fuse {
            maps,
            out,
            pipeline,
        } => fuse(&maps.map_p, &maps.map_q, &out, &pipeline_config(&pipeline)?),
        Command::Match {
            maps,
            out,
            scores,
            pipeline,
        } => match_cmd(
            &maps.map_p,
            &maps.map_q,
            &out,
            scores.as_deref(),
            &pipeline_config(&pipeline)?,
        ),
        Command::Align { maps, corr, out } => align(&maps.map_p, &maps.map_q, &corr, &out),
        Command::Triangulate { map, out } => triangulate(&map, &out),
        Command::Simulate {
            out_dir,
            scene,
            scene_args,
            snr,
            seed,
        } => simulate(&out_dir, scene.as_deref(), &scene_args, snr, seed),
        Command::Roc { exp } => {
            let mut cfg = experiment_config(ExperimentConfig::roc_default(), &exp)?;
            cfg.scene.fixed = false;
            let table = roc_experiment(&cfg)?;
            write_outputs(
                &exp.out_dir,
                "roc",
                &cfg,
                &[
                    ("roc.csv", roc_csv(&table.curve)?),
                    ("roc_summary.csv", result_rows_csv(&table.summary)?),
                ],
            )?;
            Ok(())
        }
        Command::Mse { exp, known } => {
            let cfg = experiment_config(ExperimentConfig::mse_default(), &exp)?;
            let rows = mse_sweep(&cfg, known)?;
            let (name, file) = if known {
                ("mse_known", "mse_known.csv")
            } else {
                ("mse_pipeline", "mse_pipeline.csv")
            };
            write_outputs(&exp.out_dir, name, &cfg, &[(file, result_rows_csv(&rows)?)])?;
            Ok(())
        }
        Command::Trifrac { exp } => {
            let cfg = experiment_config(ExperimentConfig::fraction_default(), &exp)?;
            let rows = triangle_fraction_experiment(&cfg)?;
            write_outputs(
                &exp.out_dir,
                "trifrac",
                &cfg,
                &[("trifrac.csv", result_rows_csv(&rows)?)],
            )?;
            Ok(())
        }
    }
}

fn pipeline_config(a: &PipelineArgs) -> Result<FusionConfig, CliError> {
    if !(a.var_threshold.is_finite() && a.var_threshold > 0.0) {
        return Err(CliError::usage(format!(
            "--var-threshold must be a positive number, got {}",
            a.var_threshold
        )));
    }
    if a.min_inliers == 0 {
        return Err(CliError::usage("--min-inliers must be at least 1"));
    }
    if !(a.gate_sigmas.is_finite() && a.gate_sigmas >= 0.0) {
        return Err(CliError::usage(format!(
            "--gate-sigmas must be a number >= 0, got {}",
            a.gate_sigmas
        )));
    }
    Ok(FusionConfig {
        var_threshold: a.var_threshold,
        min_inliers: a.min_inliers,
        gate_sigmas: a.gate_sigmas,
        band: a.band,
    })
}

fn scene_params(a: &SceneArgs, fixed: bool) -> SceneParams {
    SceneParams {
        kind: a.kind.into(),
        n_total: a.n_total,
        n_common: a.n_common,
        extent: a.extent,
        transform: (!a.random_transform).then_some(TransformParams {
            theta: a.theta,
            tx: a.tx,
            ty: a.ty,
        }),
        fixed,
    }
}

fn check_scene(p: &SceneParams) -> Result<(), CliError> {
    if p.kind == mapfusion::SceneKind::Grid {
        let side = (p.n_total as f64).sqrt().round() as usize;
        if side * side != p.n_total {
            return Err(CliError::usage(format!(
                "--n-total must be a perfect square for grid scenes, got {}",
                p.n_total
            )));
        }
    }
    let probe = ExperimentConfig {
        snr_list: vec![f64::INFINITY],
        trials: 1,
        seed: 0,
        scene: p.clone(),
        pipeline: FusionConfig::default(),
    };
    probe.validate().map_err(|e| CliError::usage(e.to_string()))
}

fn experiment_config(
    base: ExperimentConfig,
    a: &ExperimentArgs,
) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig {
        snr_list: a.snr.clone().unwrap_or(base.snr_list),
        trials: a.trials.unwrap_or(base.trials),
        seed: a.seed,
        scene: scene_params(&a.scene, !a.per_trial_scene),
        pipeline: pipeline_config(&a.pipeline)?,
    };
    check_scene(&cfg.scene)?;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

fn read_maps(p: &Path, q: &Path) -> Result<(StochasticMap, StochasticMap), CliError> {
    let map_p = read_map(p).map_err(|e| CliError::from(e).context(p))?;
    let map_q = read_map(q).map_err(|e| CliError::from(e).context(q))?;
    Ok((map_p, map_q))
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    p_id: u64,
    q_id: u64,
}

#[derive(Serialize)]
struct ProvenanceRecord {
    id: LandmarkId,
    #[serde(flatten)]
    source: Provenance,
}

#[derive(Serialize)]
struct AlignmentFile<'a> {
    theta: f64,
    tx: f64,
    ty: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    j1_min: f64,
    n_common: usize,
    correspondence: Vec<PairRecord>,
    /// Fused common landmarks in frame p, in correspondence order.
    mu: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Vec<ProvenanceRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<&'a mapfusion::matching::Diagnostics>,
}

fn alignment_file<'a>(
    est: &AlignmentEstimate,
    corr: &Correspondence,
    provenance: Option<Vec<ProvenanceRecord>>,
    diagnostics: Option<&'a mapfusion::matching::Diagnostics>,
) -> AlignmentFile<'a> {
    AlignmentFile {
        theta: est.theta,
        tx: est.t.x,
        ty: est.t.y,
        alpha: est.alpha,
        beta: est.beta,
        gamma: est.gamma,
        j1_min: est.j1_min,
        n_common: est.n_common,
        correspondence: pair_records(corr),
        mu: est.mu.iter().map(|m| [m.x, m.y]).collect(),
        provenance,
        diagnostics,
    }
}

fn pair_records(corr: &Correspondence) -> Vec<PairRecord> {
    corr.pairs()
        .iter()
        .map(|&(p, q)| PairRecord {
            p_id: p.0,
            q_id: q.0,
        })
        .collect()
}

fn fuse(p: &Path, q: &Path, out: &Path, cfg: &FusionConfig) -> Result<(), CliError> {
    let (map_p, map_q) = read_maps(p, q)?;
    let outcome = fuse_pipeline(&map_p, &map_q, cfg)?;
    let provenance = outcome
        .fused
        .provenance
        .iter()
        .map(|&(id, source)| ProvenanceRecord { id, source })
        .collect();
    let align = alignment_file(
        &outcome.estimate,
        &outcome.correspondence,
        Some(provenance),
        Some(&outcome.diagnostics),
    );
    let mut staged = Staged::default();
    staged.add(out, map_to_json(&outcome.fused.map).as_bytes())?;
    staged.add(&sidecar(out, ".alignment.json"), &json_bytes(&align)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&outcome.diagnostics)
        .and_then(|_| w.flush().map_err(Into::into))
        .map_err(|e| CliError {
            code: 2,
            message: format!("cannot format diagnostics: {e}"),
        })?;
    let diag = w.into_inner().map_err(|e| CliError {
        code: 2,
        message: format!("cannot format diagnostics: {e}"),
    })?;
    staged.add(&sidecar(out, ".diagnostics.csv"), &diag)?;
    staged.commit()?;
    let d = &outcome.diagnostics;
    println!(
        "fused {} landmarks: {} matched ({} recovered), theta {:.6} rad, t ({:.4}, {:.4})",
        outcome.fused.map.len(),
        d.final_correspondences,
        d.recovered,
        outcome.estimate.theta,
        outcome.estimate.t.x,
        outcome.estimate.t.y
    );
    Ok(())
}

#[derive(Serialize)]
struct ScoreRecord {
    i: usize,
    j: usize,
    lambda: f64,
}

fn match_cmd(
    p: &Path,
    q: &Path,
    out: &Path,
    scores: Option<&Path>,
    cfg: &FusionConfig,
) -> Result<(), CliError> {
    let (map_p, map_q) = read_maps(p, q)?;
    let m = match_maps(&map_p, &map_q, cfg)?;
    let mut staged = Staged::default();
    staged.add(
        out,
        &csv_bytes(&["p_id", "q_id"], &pair_records(&m.correspondence))?,
    )?;
    if let Some(path) = scores {
        let (n_p, n_q) = m.scores.real_dims();
        let rows: Vec<ScoreRecord> = (0..n_p)
            .flat_map(|i| (0..n_q).map(move |j| (i, j)))
            .map(|(i, j)| ScoreRecord {
                i,
                j,
                lambda: m.scores.get(i, j),
            })
            .collect();
        staged.add(path, &csv_bytes(&["i", "j", "lambda"], &rows)?)?;
    }
    staged.commit()?;
    println!(
        "{} landmark pairs from {} of {} assigned triangle matches",
        m.correspondence.len(),
        m.inliers.accepted.len(),
        m.assignment.len()
    );
    Ok(())
}

fn read_correspondence(path: &Path) -> Result<Correspondence, CliError> {
    let data = std::fs::read(path).map_err(|e| CliError::from(e).context(path))?;
    let mut rdr = csv::Reader::from_reader(data.as_slice());
    let mut pairs = Vec::new();
    for (k, rec) in rdr.deserialize::<PairRecord>().enumerate() {
        let rec = rec.map_err(|e| CliError {
            code: 2,
            message: format!(
                "{}: record {}: {e} (expected header p_id,q_id and integer ids)",
                path.display(),
                k + 1
            ),
        })?;
        pairs.push((LandmarkId(rec.p_id), LandmarkId(rec.q_id)));
    }
    Correspondence::new(pairs).map_err(|e| CliError::from(e).context(path))
}

fn align(p: &Path, q: &Path, corr: &Path, out: &Path) -> Result<(), CliError> {
    let (map_p, map_q) = read_maps(p, q)?;
    let corr = read_correspondence(corr)?;
    let est = align_mle(&map_p, &map_q, &corr)?;
    let mut staged = Staged::default();
    staged.add(out, &json_bytes(&alignment_file(&est, &corr, None, None))?)?;
    staged.commit()?;
    println!(
        "theta {:.6} rad, t ({:.4}, {:.4}), j1_min {:.4}",
        est.theta, est.t.x, est.t.y, est.j1_min
    );
    Ok(())
}

#[derive(Serialize)]
struct TriangleRecord {
    a_id: u64,
    b_id: u64,
    c_id: u64,
    e_ab: f64,
    e_bc: f64,
    e_ca: f64,
    perimeter: f64,
}

fn triangulate(map: &Path, out: &Path) -> Result<(), CliError> {
    let m = read_map(map).map_err(|e| CliError::from(e).context(map))?;
    let h = build_hypergraph(&m)?;
    let rows: Vec<TriangleRecord> = h
        .edges
        .iter()
        .map(|t| TriangleRecord {
            a_id: t.a().0,
            b_id: t.b().0,
            c_id: t.c().0,
            e_ab: t.edge_lengths[0],
            e_bc: t.edge_lengths[1],
            e_ca: t.edge_lengths[2],
            perimeter: t.perimeter,
        })
        .collect();
    let header = ["a_id", "b_id", "c_id", "e_ab", "e_bc", "e_ca", "perimeter"];
    let mut staged = Staged::default();
    staged.add(out, &csv_bytes(&header, &rows)?)?;
    staged.commit()?;
    if h.dropped_ties > 0 {
        eprintln!(
            "note: dropped {} triangles with two equal edges",
            h.dropped_ties
        );
    }
    Ok(())
}

fn simulate(
    out_dir: &Path,
    scene_file: Option<&Path>,
    a: &SceneArgs,
    snr: f64,
    seed: u64,
) -> Result<(), CliError> {
    if snr.is_nan() || snr == f64::NEG_INFINITY {
        return Err(CliError::usage(format!(
            "--snr must be a number or inf, got {snr}"
        )));
    }
    let scene = match scene_file {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path))?;
            scene_from_json(&text).map_err(|e| CliError::from(e).context(path))?
        }
        None => {
            let params = scene_params(a, true);
            check_scene(&params)?;
            let g = match params.transform {
                Some(t) => t.rigid(),
                None => random_transform(seed, params.extent),
            };
            generate_scene(
                params.kind,
                params.n_total,
                params.n_common,
                params.extent,
                g,
                seed,
            )?
        }
    };
    let sigma2 = noise_var_for(&scene, snr)?;
    let (map_p, map_q) = synthesize_maps(&scene, sigma2, sigma2, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::from(e).context(out_dir))?;
    let mut staged = Staged::default();
    staged.add(&out_dir.join("map_p.json"), map_to_json(&map_p).as_bytes())?;
    staged.add(&out_dir.join("map_q.json"), map_to_json(&map_q).as_bytes())?;
    staged.add(
        &out_dir.join("truth.json"),
        scene_to_json(&scene).as_bytes(),
    )?;
    staged.commit()?;
    let g: Rigid2 = scene.transform;
    println!(
        "{} + {} landmarks, noise variance {sigma2:.6e}, theta {} t ({}, {})",
        map_p.len(),
        map_q.len(),
        g.theta(),
        g.t.x,
        g.t.y
    );
    Ok(())
}
