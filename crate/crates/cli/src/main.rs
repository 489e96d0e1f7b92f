use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ethokit::analytics::ReferenceMode;
use ethokit::pipeline::{self, PipelineConfig, PipelineError, RunManifest, Session, Stage};
use ethokit::synthetic::{generate_session, SynthConfig};

/// Multi-view mouse kinematics and behavior analytics.
///
/// Every stage reads and writes files under `<session>/artifacts/` and
/// records a manifest in `<session>/artifacts/manifests/<stage>.json`.
/// Exit codes: 0 success, 2 validation error, 1 runtime error.
#[derive(Debug, Parser)]
#[command(name = "ethokit", version)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the offline providers regardless of the configuration.
    #[arg(long, global = true)]
    offline: bool,
    /// Root seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads per stage (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Session directory.
    #[arg(long, short, global = true, default_value = ".")]
    session: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate inputs and write the sampled frame table.
    Ingest,
    /// Triangulate every keypoint frame into 3D poses.
    Triangulate,
    /// Per-keypoint velocities of the sampled frames.
    Velocity,
    /// Describe, extract, rate and filter the sampled frames.
    Annotate {
        /// Minimum quality score kept.
        #[arg(long)]
        min_score: Option<f64>,
    },
    /// Embed the kept descriptions into the vector store.
    Embed,
    /// Two-stage clustering into named behaviors.
    Cluster {
        #[arg(long)]
        theta_c: Option<usize>,
        #[arg(long)]
        theta_e: Option<usize>,
        /// Merger name (offline, provider).
        #[arg(long)]
        merger: Option<String>,
    },
    /// Body-part labels from the pattern lexicon.
    Finegrained {
        /// Assigner name (offline, provider, disabled).
        #[arg(long)]
        assigner: Option<String>,
        /// Starting lexicon instead of the shipped seed.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Isolation-forest novelty detection over the embeddings.
    Anomaly {
        #[arg(long)]
        contamination: Option<f64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        quorum: Option<f64>,
    },
    /// Rank stored descriptions against a text query.
    Search {
        #[arg(long)]
        query: String,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Ethogram, window proportions, group table and occupancy.
    Ethogram {
        /// Window length in seconds.
        #[arg(long)]
        window_s: Option<f64>,
    },
    /// Phenotype profile of the session's subject.
    Profile,
    /// Predict the subject's group from the reference cohort.
    Predict {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ReferenceMode>,
    },
    /// Run the whole chain from ingest to predict.
    Run {
        /// Query for the final search stage.
        #[arg(long, default_value = "Mouse is lying down on the ground")]
        query: String,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic session directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Service configuration file (TOML).
    #[arg(long)]
    service_config: Option<PathBuf>,
    /// Directory holding one session directory per subfolder.
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output session directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1200.0)]
    duration_s: f64,
    #[arg(long, default_value = "vehicle")]
    group: String,
    #[arg(long, default_value_t = 0.05)]
    noise_px: f64,
}

fn parse_mode(s: &str) -> Result<ReferenceMode, String> {
    match s {
        "nearest" => Ok(ReferenceMode::Nearest),
        "centroid" => Ok(ReferenceMode::Centroid),
        _ => Err(format!("unknown mode {s:?} (nearest, centroid)")),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.offline {
        config = config.offline();
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(j) = cli.jobs {
        config.jobs = j;
    }
    Ok(config)
}

fn report(m: &RunManifest) {
    println!("{} {:.2}s {}", m.command, m.wall_time_s, m.summary);
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = load_config(&cli)?;
    let stage = match cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                seed: cli.seed.unwrap_or(0),
                duration_s: a.duration_s,
                group: a.group,
                noise_px: a.noise_px,
                ..SynthConfig::default()
            };
            let s = generate_session(&a.out, &cfg).map_err(|e| match e.kind() {
                std::io::ErrorKind::InvalidInput => PipelineError::Validation(e.to_string()),
                _ => PipelineError::Runtime(e.to_string()),
            })?;
            println!(
                "wrote {} ({} samples, {} keypoint frames, jump at frame {})",
                a.out.display(),
                s.samples,
                s.frames_written,
                s.jump_frame
            );
            return Ok(());
        }
        Command::Serve(a) => {
            let mut sc = match &a.service_config {
                Some(p) => ethokit_service::ServiceConfig::load(p).map_err(PipelineError::Validation)?,
                None => ethokit_service::ServiceConfig::default(),
            };
            sc.apply_env();
            sc.pipeline = config;
            if cli.offline {
                sc.offline = true;
            }
            if let Some(d) = a.data_root {
                sc.data_root = d;
            }
            if let Some(p) = a.port {
                sc.port = p;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Runtime(e.to_string()))?;
            return rt.block_on(ethokit_service::serve(sc)).map_err(PipelineError::Runtime);
        }
        Command::Run { query } => {
            let session = Session::open(&cli.session)?;
            for m in pipeline::run_all(&session, &config, &query)? {
                report(&m);
            }
            return Ok(());
        }
        Command::Ingest => Stage::Ingest,
        Command::Triangulate => Stage::Triangulate,
        Command::Velocity => Stage::Velocity,
        Command::Annotate { min_score } => {
            if let Some(s) = min_score {
                config.min_score = s;
            }
            Stage::Annotate
        }
        Command::Embed => Stage::Embed,
        Command::Cluster { theta_c, theta_e, merger } => {
            config.cluster.theta_c = theta_c.unwrap_or(config.cluster.theta_c);
            config.cluster.theta_e = theta_e.unwrap_or(config.cluster.theta_e);
            if let Some(m) = merger {
                config.cluster.merger = m;
            }
            Stage::Cluster
        }
        Command::Finegrained { assigner, lexicon } => {
            if let Some(a) = assigner {
                config.finegrained.assigner = a;
            }
            if lexicon.is_some() {
                config.finegrained.lexicon = lexicon;
            }
            Stage::FineGrained
        }
        Command::Anomaly { contamination, runs, quorum } => {
            config.anomaly.contamination = contamination.unwrap_or(config.anomaly.contamination);
            config.anomaly.runs = runs.unwrap_or(config.anomaly.runs);
            config.anomaly.quorum = quorum.unwrap_or(config.anomaly.quorum);
            Stage::Anomaly
        }
        Command::Search { query, n } => Stage::Search { query, n: n.unwrap_or(config.search_n) },
        Command::Ethogram { window_s } => {
            config.window_s = window_s.unwrap_or(config.window_s);
            Stage::Ethogram
        }
        Command::Profile => Stage::Profile,
        Command::Predict { mode } => {
            if let Some(m) = mode {
                config.predict.mode = m;
            }
            Stage::Predict
        }
    };
    let session = Session::open(&cli.session)?;
    let m = pipeline::run(&session, &config, &stage)?;
    if let Stage::Search { .. } = stage {
        print!("{}", std::fs::read_to_string(session.artifact(pipeline::stages::SEARCH))?);
    } else {
        report(&m);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
