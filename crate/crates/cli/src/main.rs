mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mapfusion::{FusionError, SceneKind};

/// Fuse two stochastic landmark maps observed in unknown, rigidly related
/// frames.
#[derive(Debug, Parser)]
#[command(name = "mapfuse", version)]
pub struct Cli {
    /// Worker threads for parallel stages (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match and fuse two maps; writes the fused map, OUT.alignment.json and
    /// OUT.diagnostics.csv.
    Fuse {
        #[command(flatten)]
        maps: MapPair,
        /// Fused map output path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Match triangles and write the implied landmark correspondence.
    Match {
        #[command(flatten)]
        maps: MapPair,
        /// Correspondence CSV output (p_id,q_id).
        #[arg(long)]
        out: PathBuf,
        /// Also dump the likelihood-ratio matrix as CSV (i,j,lambda).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Align two maps under a given correspondence.
    Align {
        #[command(flatten)]
        maps: MapPair,
        /// Correspondence CSV with header p_id,q_id.
        #[arg(long)]
        corr: PathBuf,
        /// Alignment JSON output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the Groth-ordered Delaunay triangles of a map as CSV.
    Triangulate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a ground-truth scene and two noisy maps of it; writes
    /// map_p.json, map_q.json and truth.json into OUT_DIR.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        /// Reuse a ground-truth file instead of drawing a scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        scene_args: SceneArgs,
        /// Noise level of both maps in dB ("inf" for noiseless).
        #[arg(long, default_value_t = 30.0)]
        snr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Detection ROC of the triangle likelihood ratio; writes roc.csv,
    /// roc_summary.csv and manifest.json.
    Roc {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Estimation error of the fused map and transform; writes
    /// mse_known.csv or mse_pipeline.csv and manifest.json.
    Mse {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Use the true correspondence instead of the matching pipeline.
        #[arg(long)]
        known: bool,
    },
    /// Fraction of true triangles kept by both noisy maps; writes
    /// trifrac.csv and manifest.json.
    Trifrac {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
}

#[derive(Debug, Args)]
pub struct MapPair {
    /// Map of agent p (reference frame).
    #[arg(long)]
    pub map_p: PathBuf,
    /// Map of agent q.
    #[arg(long)]
    pub map_q: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Stop rejecting triangle matches once the pooled standardized variance
    /// is at most this.
    #[arg(long, default_value_t = 1.0)]
    pub var_threshold: f64,
    /// Fewest triangle matches a consensus may rest on.
    #[arg(long, default_value_t = 3)]
    pub min_inliers: usize,
    /// Gate for recovering missed landmark pairs, in noise sigmas.
    #[arg(long, default_value_t = 3.0)]
    pub gate_sigmas: f64,
    /// Only score triangle pairs whose perimeter ranks differ by at most this
    /// [default: off].
    #[arg(long)]
    pub band: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Uniform,
    Grid,
}

impl From<KindArg> for SceneKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Uniform => SceneKind::Uniform,
            KindArg::Grid => SceneKind::Grid,
        }
    }
}

#[allow(clippy::approx_constant)]
const DEFAULT_THETA: f64 = 0.7854;

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Uniform)]
    pub kind: KindArg,
    /// Landmarks in the scene (a perfect square for grids).
    #[arg(long, default_value_t = 30)]
    pub n_total: usize,
    /// Landmarks seen by both agents.
    #[arg(long, default_value_t = 30)]
    pub n_common: usize,
    /// Side of the square the landmarks occupy, in meters.
    #[arg(long, default_value_t = 100.0)]
    pub extent: f64,
    /// Rotation from frame p to frame q, radians.
    #[arg(long, default_value_t = DEFAULT_THETA, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub tx: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub ty: f64,
    /// Draw a random transform instead of --theta/--tx/--ty.
    #[arg(long)]
    pub random_transform: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated SNR levels in dB ("inf" for noiseless)
    /// [default: roc 10,20,30,60; mse 10,20,30,40,50; trifrac inf,40,30,20,10].
    #[arg(long, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    /// Trials per SNR level [default: roc 2000; mse and trifrac 200].
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Draw a new ground truth for every trial instead of one per run
    /// (always on for roc).
    #[arg(long)]
    pub per_trial_scene: bool,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Failure with the process exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn context(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        let code = match e {
            FusionError::NoConsensus { .. } => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot set up {} worker threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
