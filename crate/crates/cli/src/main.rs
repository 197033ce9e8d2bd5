//! `quatro` command-line front end: register two clouds, run a synthetic
//! sweep, or write a synthetic scene to disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use quatro::error::Error;
use quatro::features::{load_correspondences, save_correspondences};
use quatro::harness::{generate_scene, load_pipeline_config, load_scene_spec, load_sweep_file, run_sweep};
use quatro::io::{load_cloud, write_cloud, CloudFormat};
use quatro::pipeline::{register, register_with_correspondences, Attitude, InsReadings, StageTimings};
use quatro::{PipelineConfig, PointCloud, RigidTransform, RotationMode, Solver};

#[derive(Debug, Parser)]
#[command(
    name = "quatro",
    version,
    about = "Global point cloud registration with quasi-SO(3) rotation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register SRC onto TGT and print the transform as JSON.
    Register(RegisterArgs),
    /// Run a Monte-Carlo sweep and write results.csv, summary.json and timings.csv.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene with ground truth.
    GenScene {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Quasi,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Quatro,
    Gnc,
    Ransac,
}

#[derive(Debug, clap::Args)]
struct RegisterArgs {
    /// Source cloud (.bin KITTI or .ply ASCII).
    src: PathBuf,
    /// Target cloud (.bin KITTI or .ply ASCII).
    tgt: PathBuf,
    /// Correspondence file; skips feature matching.
    #[arg(long)]
    corr: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Source sensor roll and pitch in radians.
    #[arg(long, num_args = 2, value_names = ["ROLL", "PITCH"], allow_negative_numbers = true)]
    ins: Option<Vec<f64>>,
    /// Target sensor roll and pitch in radians (level when omitted).
    #[arg(long, num_args = 2, value_names = ["ROLL", "PITCH"], allow_negative_numbers = true)]
    ins_tgt: Option<Vec<f64>>,
    /// Refine with point-to-point ICP.
    #[arg(long)]
    refine: bool,
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Include per-stage timings (makes output run-dependent).
    #[arg(long)]
    timings: bool,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Registration(String),
}

impl Failure {
    fn input(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

#[derive(Serialize)]
struct RegisterOutput {
    /// Row-major 4×4 homogeneous matrix mapping source into target.
    transform: [[f64; 4]; 4],
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
    mode: RotationMode,
    solver: Solver,
    degenerate: bool,
    num_raw_corr: Option<usize>,
    num_pruned_corr: Option<usize>,
    rotation_inliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<StageTimings>,
}

impl RegisterOutput {
    fn new(t: &RigidTransform, solver: Solver) -> Self {
        let (yaw, pitch, roll) = t.yaw_pitch_roll();
        Self {
            transform: t.to_rows(),
            yaw_deg: yaw.to_degrees(),
            pitch_deg: pitch.to_degrees(),
            roll_deg: roll.to_degrees(),
            mode: t.mode,
            solver,
            degenerate: t.degenerate,
            num_raw_corr: None,
            num_pruned_corr: None,
            rotation_inliers: None,
            message: None,
            timings_ms: None,
        }
    }
}

fn load(path: &Path) -> Result<PointCloud, Failure> {
    let format = CloudFormat::from_path(path).ok_or_else(|| {
        Failure::Usage(format!(
            "{}: unknown cloud format (expected .bin or .ply)",
            path.display()
        ))
    })?;
    load_cloud(path, format).map_err(Failure::input)
}

fn attitude(v: &Option<Vec<f64>>) -> Option<Attitude> {
    v.as_ref().map(|v| Attitude::new(v[0], v[1]))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Registration(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_register(args: &RegisterArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => load_pipeline_config(path).map_err(Failure::input)?,
        None => PipelineConfig::default(),
    };
    if let Some(mode) = args.mode {
        config.mode = match mode {
            ModeArg::Quasi => RotationMode::QuasiSo3,
            ModeArg::Full => RotationMode::FullSo3,
        };
    }
    if let Some(solver) = args.solver {
        config.solver = match solver {
            SolverArg::Quatro => Solver::Quatro,
            SolverArg::Gnc => Solver::FullGnc,
            SolverArg::Ransac => Solver::Ransac,
        };
    }
    if args.ins.is_some() || args.ins_tgt.is_some() {
        config.ins = Some(InsReadings {
            src: attitude(&args.ins).unwrap_or_default(),
            tgt: attitude(&args.ins_tgt).unwrap_or_default(),
        });
    }
    config.refine |= args.refine;
    if let Some(seed) = args.seed {
        config.ransac.seed = seed;
    }
    for warning in config.validate().map_err(Failure::input)? {
        eprintln!("warning: {warning}");
    }

    let src = load(&args.src)?;
    let tgt = load(&args.tgt)?;
    let corr = match &args.corr {
        Some(path) => Some(load_correspondences(path).map_err(Failure::input)?),
        None => None,
    };
    let result = match &corr {
        Some(corr) => register_with_correspondences(&src, &tgt, corr, &config),
        None => register(&src, &tgt, &config),
    };
    let output = match result {
        Ok(r) => {
            let mut o = RegisterOutput::new(&r.transform, r.solver);
            o.degenerate = r.degenerate;
            o.num_raw_corr = Some(r.num_raw_corr);
            o.num_pruned_corr = Some(r.num_pruned_corr);
            o.rotation_inliers = Some(r.rotation_inliers);
            o.timings_ms = args.timings.then_some(r.timings);
            o
        }
        Err(e) if e.is_degenerate_rotation() => {
            let mut o = RegisterOutput::new(&RigidTransform::identity().with_degenerate(true), config.solver);
            o.mode = config.rotation_mode();
            o.num_raw_corr = corr.as_ref().map(|c| c.len());
            o.message = Some(e.to_string());
            o
        }
        Err(e) => return Err(Failure::Registration(e.to_string())),
    };
    emit(args.out.as_deref(), &to_json(&output))
}

fn run_sweep_cmd(spec: &Path, out: &Path) -> Result<(), Failure> {
    let file = load_sweep_file(spec).map_err(Failure::input)?;
    let report = run_sweep(&file.sweep, &file.scene, &file.config).map_err(|e| Failure::Registration(e.to_string()))?;
    let written = report.write(out).map_err(|e| Failure::Registration(e.to_string()))?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct GroundTruthOutput {
    transform: [[f64; 4]; 4],
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
    ins: Attitude,
    inliers: usize,
    correspondences: usize,
}

fn run_gen_scene(spec: &Path, out: &Path) -> Result<(), Failure> {
    let spec = load_scene_spec(spec).map_err(Failure::input)?;
    let scene = generate_scene(&spec).map_err(Failure::input)?;
    let fail = |e: Error| Failure::Registration(e.to_string());
    fs::create_dir_all(out).map_err(|e| Failure::Registration(format!("{}: {e}", out.display())))?;
    write_cloud(out.join("src.ply"), &scene.src, CloudFormat::PlyAscii).map_err(fail)?;
    write_cloud(out.join("tgt.ply"), &scene.tgt, CloudFormat::PlyAscii).map_err(fail)?;
    save_correspondences(out.join("correspondences.txt"), &scene.corr).map_err(fail)?;
    let labels: String = scene.labels.iter().map(|&l| if l { "1\n" } else { "0\n" }).collect();
    let (yaw, pitch, roll) = scene.ground_truth.yaw_pitch_roll();
    let gt = GroundTruthOutput {
        transform: scene.ground_truth.to_rows(),
        yaw_deg: yaw.to_degrees(),
        pitch_deg: pitch.to_degrees(),
        roll_deg: roll.to_degrees(),
        ins: scene.ins,
        inliers: scene.inlier_count(),
        correspondences: scene.corr.len(),
    };
    for (name, body) in [("labels.txt", labels), ("ground_truth.json", to_json(&gt))] {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| Failure::Registration(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let outcome = match &cli.command {
        Command::Register(args) => run_register(args),
        Command::Sweep { spec, out } => run_sweep_cmd(spec, out),
        Command::GenScene { spec, out } => run_gen_scene(spec, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Registration(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
