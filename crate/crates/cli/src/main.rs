use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hba_core::config::RunConfig;
use hba_core::error::{ConfigError, FrameIoError};
use hba_core::evaluation::{ate, mme};
use hba_core::frame_io::{
    format_trajectory, load_scan, load_sequence, load_trajectory, write_map, write_trajectory, PoseFormat,
    ScanFormat, Trajectory,
};
use hba_core::pipeline::{format_report, run, Mode};
use hba_core::pose_graph::write_edge_list;
use hba_core::pyramid::{closed_form_l, closed_form_layers_real, layer_cap, predict_cost, select_layers};
use hba_core::synth::{generate, write_fixture, SceneSpec};
use hba_core::Error;

#[derive(Parser)]
#[command(name = "hba", version, about = "Hierarchical LiDAR bundle adjustment and pose-graph map refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// parsed once per process, so the size of the largest variant is irrelevant
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Refine a trajectory against its scans.
    Run(RunArgs),
    /// Trajectory and map metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a synthetic fixture from a scene description.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the predicted cost per layer count and the chosen count.
    Plan {
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 10)]
        w: usize,
        #[arg(long, default_value_t = 5)]
        s: usize,
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
    /// Time the refinement modes on a noisy, perturbed synthetic box-room loop.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scans: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// hierarchical, original_ba, reduced_ba or direct_assign.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    max_passes: Option<usize>,
    /// kitti or tum, for both input and output trajectories.
    #[arg(long)]
    pose_format: Option<String>,
    /// Any config key as `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Refined trajectory; standard output when omitted.
    #[arg(long)]
    out_poses: Option<PathBuf>,
    #[arg(long)]
    out_map: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Edge list of the final pose graph.
    #[arg(long)]
    out_graph: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    Ate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long, default_value = "kitti")]
        format: String,
    },
    Mme {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = hba_core::evaluation::DEFAULT_MME_RADIUS)]
        radius: f64,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// Comma-separated modes.
    #[arg(long, default_value = "hierarchical,original_ba")]
    modes: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn read_text(path: &Path, what: &str) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            FrameIoError::NotFound {
                what: what.into(),
                path: path.to_path_buf(),
            }
            .into()
        } else {
            FrameIoError::Io {
                path: path.to_path_buf(),
                source: e,
            }
            .into()
        }
    })
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    FrameIoError::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn parse_format(raw: &str) -> Result<PoseFormat, Error> {
    raw.parse().map_err(|_| {
        ConfigError::InvalidValue {
            key: "pose_format".into(),
            value: raw.into(),
        }
        .into()
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    let mut config = RunConfig::default();
    if let Some(p) = path {
        config.apply_text(&read_text(p, "config")?)?;
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut config = load_config(args.config.as_deref())?;
    let flags = [
        ("mode", args.mode.clone()),
        ("workers", args.workers.map(|v| v.to_string())),
        ("window", args.window.map(|v| v.to_string())),
        ("stride", args.stride.map(|v| v.to_string())),
        ("layers", args.layers.map(|v| v.to_string())),
        ("max_passes", args.max_passes.map(|v| v.to_string())),
        ("pose_format", args.pose_format.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    for kv in &args.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("--set expects key=value, got `{kv}`")))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;

    let trajectory = load_trajectory(&args.poses, config.pose_format)?;
    let frames = load_sequence(&args.scans, &trajectory, &config.filter)?;
    log::info!(
        "{} frames, mode {}, window {}, stride {}, {} workers",
        frames.len(),
        config.pipeline.mode,
        config.pipeline.pyramid.window,
        config.pipeline.pyramid.stride,
        config.pipeline.pyramid.workers
    );
    let out = run(&frames, &trajectory.poses, &config.pipeline);
    let refined = Trajectory {
        poses: out.poses.clone(),
        stamps: trajectory.stamps.clone(),
    };
    // outputs are written even when a later pass failed: they hold the last good poses
    match &args.out_poses {
        Some(p) => write_trajectory(&refined, p, config.pose_format)?,
        None => print!("{}", format_trajectory(&refined, config.pose_format)),
    }
    if let Some(p) = &args.out_map {
        write_map(&frames, &out.poses, p)?;
    }
    if let Some(p) = &args.report {
        fs::write(p, format_report(&out.reports)).map_err(|e| io_error(p, e))?;
    }
    if let (Some(p), Some(graph)) = (&args.out_graph, &out.graph) {
        write_edge_list(graph, p)?;
    }
    if let Some(last) = out.reports.last() {
        log::info!("{} passes, final top BA cost {:e}", out.reports.len(), last.cost_ba);
    }
    match out.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_eval(cmd: EvalCommand) -> Result<(), Error> {
    match cmd {
        EvalCommand::Ate { gt, est, format } => {
            let format = parse_format(&format)?;
            let gt = load_trajectory(&gt, format)?;
            let est = load_trajectory(&est, format)?;
            let r = ate(&est.poses, &gt.poses)?;
            println!("rot_rmse_deg={:.6} trans_rmse_m={:.6}", r.rot_rmse_deg, r.trans_rmse_m);
        }
        EvalCommand::Mme { map, radius } => {
            let format = ScanFormat::from_extension(&map)
                .ok_or_else(|| ConfigError::Invalid(format!("{}: unrecognized map extension", map.display())))?;
            let points = load_scan(&map, format)?;
            let score = mme(&points, radius)?;
            println!("mme={score:.6} radius={radius}");
        }
    }
    Ok(())
}

fn cmd_synth(spec: &Path, out: &Path) -> Result<(), Error> {
    let spec = SceneSpec::parse(&read_text(spec, "spec")?)?;
    let data = generate(&spec)?;
    write_fixture(&data, out)?;
    println!("frames={} out={}", data.frames.len(), out.display());
    Ok(())
}

fn cmd_plan(frames: usize, w: usize, s: usize, n: usize) -> Result<(), Error> {
    if frames == 0 || n == 0 || s < 2 || s >= w {
        return Err(ConfigError::Invalid(format!("plan needs frames>0, n>0 and 2 <= s < w (got N={frames} w={w} s={s} n={n})")).into());
    }
    let cap = layer_cap(frames, w, s);
    println!("N={frames} w={w} s={s} n={n}");
    for l in 1..=cap {
        println!("T_{l}={:e}", predict_cost(frames, w, s, n, l));
    }
    println!(
        "closed_form_l={} ({:.4})",
        closed_form_l(frames, w, s, n),
        closed_form_layers_real(frames, w, s, n)
    );
    println!("cap={cap}");
    println!("chosen_l={}", select_layers(frames, w, s, n));
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    let mut config = load_config(args.config.as_deref())?;
    config.set("workers", &args.workers.to_string())?;
    config.validate()?;
    let modes: Vec<Mode> = args
        .modes
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<_, _>>()?;
    let mut spec = SceneSpec::box_room_loop(args.frames);
    spec.sensor.point_noise = 0.02;
    spec.perturbation.rotation_deg = 0.5;
    spec.perturbation.translation_m = 0.02;
    let data = generate(&spec)?;
    println!("mode,frames,workers,wall_s,rss_mb_estimate,passes,cost_ba,rot_rmse_deg,trans_rmse_m");
    for mode in modes {
        let mut c = config.pipeline.clone();
        c.mode = mode;
        let start = Instant::now();
        let out = run(&data.frames, &data.perturbed, &c);
        let wall = start.elapsed().as_secs_f64();
        let (poses, reports) = out.into_result()?;
        let r = ate(&poses, &data.ground_truth)?;
        let rss = reports.iter().map(|r| r.rss_mb_estimate).fold(0.0, f64::max);
        let cost = reports.last().map_or(f64::NAN, |r| r.cost_ba);
        println!(
            "{mode},{},{},{wall:.3},{rss:.3},{},{cost:e},{:.6},{:.6}",
            args.frames,
            args.workers,
            reports.len(),
            r.rot_rmse_deg,
            r.trans_rmse_m
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
        Command::Plan { frames, w, s, n } => cmd_plan(frames, w, s, n),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
