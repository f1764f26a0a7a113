//! `deltarig`: synthetic rigs, datasets, training, evaluation and analysis
//! from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deltarig_core::eval::SweepProtocol;
use deltarig_core::rig::RigKind;
use deltarig_core::{Error, ErrorCategory, Result};

use config::{Preset, RunConfig};

#[derive(Parser)]
#[command(name = "deltarig", version, about = "Learn rig deformations in differential coordinates")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON file overriding preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic rig: rest mesh OBJ and rig JSON.
    MakeRig {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<RigKind>,
        #[arg(long)]
        vertices: Option<usize>,
    },
    /// Sample poses, pick anchors and write the training dataset.
    GenData {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        poses: Option<usize>,
    },
    /// Train the differential and anchor networks.
    Train {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a trained model and the baselines on the test split.
    Eval {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Deform the mesh for one pose (rest pose when none is given).
    Predict {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Pose parameters as JSON: `{"joints": [[rx,ry,rz,tx,ty,tz,s], ...], "numeric": [...]}`.
        #[arg(long)]
        pose: Option<PathBuf>,
    },
    /// Train and score one model per grid value.
    Sweep {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// pc_percent, layers, anchor_percent or train_size.
        #[arg(long)]
        protocol: Option<SweepProtocol>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Noise amplification per eigenmode of the anchored Laplacian.
    AnalyzeSpectrum {
        /// OBJ mesh; a square grid is used when omitted.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        anchors: Option<usize>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<RigKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown rig kind {s:?}"))
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Io => 3,
        ErrorCategory::Input => 4,
        ErrorCategory::Numerical => 5,
        ErrorCategory::Integrity => 6,
        ErrorCategory::Config => 7,
    }
}

fn run(cli: Cli) -> Result<PathBuf> {
    let g = &cli.global;
    let mut cfg = RunConfig::resolve(g.preset, g.config.as_deref())?;
    match &cli.command {
        Command::MakeRig { kind, vertices } => {
            if let Some(k) = kind {
                cfg.rig.kind = *k;
                if *k == RigKind::Body {
                    let body = deltarig_core::rig::SyntheticConfig::body();
                    cfg.rig.joints = body.joints;
                    cfg.rig.numeric = body.numeric;
                }
            }
            if let Some(v) = vertices {
                cfg.rig.vertices = *v;
            }
        }
        Command::GenData { poses: Some(p), .. } => cfg.poses = *p,
        Command::Sweep { protocol, grid, .. } => {
            if let Some(p) = protocol {
                cfg.sweep.protocol = *p;
            }
            if let Some(g) = grid {
                cfg.sweep.grid = g.clone();
            }
        }
        Command::AnalyzeSpectrum { anchors: Some(a), .. } => cfg.spectrum.anchors = *a,
        _ => {}
    }
    let seed = g.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;

    let out = &g.out;
    match &cli.command {
        Command::MakeRig { .. } => commands::make_rig(&cfg, out),
        Command::GenData { rig, .. } => commands::gen_data(&cfg, rig, out),
        Command::Train { rig, data } => commands::train(&cfg, rig, data, out),
        Command::Eval { rig, data, model } => commands::eval(&cfg, rig, data, model, out),
        Command::Predict { rig, model, pose } => commands::predict(&cfg, rig, model, pose.as_deref(), out),
        Command::Sweep { rig, data, .. } => commands::run_sweep(&cfg, rig, data, out),
        Command::AnalyzeSpectrum { mesh, .. } => commands::analyze_spectrum(&cfg, mesh.as_deref(), out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
