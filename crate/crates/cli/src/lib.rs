//! `bootflow` command-line interface.
//!
//! Exit codes: 0 success, 2 usage error, 3 input or format error, 4 numerical
//! failure. Diagnostics go to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bootflow::gradcheck::{gradient_suite, GRAD_STEP, GRAD_TOLERANCE};
use bootflow::io::bundle::{read_bundle, write_bundle};
use bootflow::io::config::RunConfig;
use bootflow::io::flo::{read_flow_dir, write_flow_dir};
use bootflow::io::track::{read_track, write_track, Track};
use bootflow::io::write_atomic;
use bootflow::pipeline::{bootstrap, joint_epe, CycleSchedule, GroundTruth, Stage};
use bootflow::skeleton::{average_cameras, average_detections};
use bootflow::synth::{
    benchmark_noise, epe, generate_scene_with, joint_error_2d, perturb_bundle, FlowCorruption, NoiseConfig,
    SceneConfig, BENCHMARK_AMPLITUDE, BENCHMARK_FRAMES, BENCHMARK_SIZE, FOREARM,
};
use bootflow::{average_flows, average_tracks, mpjpe, Error, Mode, Scene, SkeletonTopology};
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "bootflow", version, about = "Alternating human flow and pose refinement")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an exact synthetic scene.
    Synth(SynthArgs),
    /// Add noise and flow corruption to a scene.
    Perturb(PerturbArgs),
    /// Run one flow stage.
    RefineFlow(StageArgs),
    /// Run one pose stage.
    RefinePose(StageArgs),
    /// Run the full schedule.
    Bootstrap(BootstrapArgs),
    /// Compare a scene against ground truth.
    Eval(EvalArgs),
    /// Average two tracks or two flow directories.
    Avg(AvgArgs),
    /// Check analytic gradients against central differences.
    CheckGrads(GradArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = BENCHMARK_FRAMES)]
    frames: usize,
    #[arg(long, default_value_t = BENCHMARK_SIZE)]
    width: usize,
    #[arg(long, default_value_t = BENCHMARK_SIZE)]
    height: usize,
    /// Joint swing amplitude, radians.
    #[arg(long, default_value_t = BENCHMARK_AMPLITUDE)]
    amplitude: f64,
    /// Background flow as `u,v`.
    #[arg(long, value_parser = parse_pair, default_value = "0,0")]
    background: [f64; 2],
    #[arg(long, default_value_t = bootflow::raster::DEFAULT_RADIUS)]
    radius: usize,
    /// Skeleton JSON (`joint_count`, `bones`, optional `names`, `eval_subset`).
    #[arg(long)]
    topology: Option<PathBuf>,
    /// `2d` drops the pose and camera tracks.
    #[arg(long, default_value = "3d")]
    mode: Mode,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Joint noise, meters.
    #[arg(long, default_value_t = 0.0)]
    pose_sigma: f64,
    /// Camera noise as `s,tx,ty`.
    #[arg(long, value_parser = parse_triple, default_value = "0,0,0")]
    camera_sigma: [f64; 3],
    /// Detection noise, pixels.
    #[arg(long, default_value_t = 0.0)]
    detection_sigma: f64,
    /// Flow rectangle `x,y,width,height` to overwrite.
    #[arg(long, value_parser = parse_rect, conflicts_with = "benchmark")]
    corrupt: Option<[usize; 4]>,
    /// Flow written into the corrupted rectangle, `u,v`.
    #[arg(long, value_parser = parse_pair, default_value = "0,0")]
    replacement: [f64; 2],
    /// Standard benchmark noise (overrides the sigmas; needs 17 joints).
    #[arg(long)]
    benchmark: bool,
}

#[derive(Args, Debug)]
struct StageArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epoch budget (defaults to the configured one for this stage kind).
    #[arg(long)]
    epochs: Option<usize>,
    /// Ground-truth scene, required for `targets = "ground_truth"`.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[arg(long, required_unless_present = "print_config")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth scene; enables per-stage metrics.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    /// Mode used for `--print-config` without a config file.
    #[arg(long, default_value = "3d")]
    mode: Mode,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Print JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AvgArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = GRAD_STEP)]
    step: f64,
    #[arg(long, default_value_t = GRAD_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    json: bool,
}

fn parse_list<const N: usize, V: std::str::FromStr>(s: &str) -> Result<[V; N], String> {
    let parts: Vec<V> = s
        .split(',')
        .map(|p| p.trim().parse::<V>().map_err(|_| format!("bad number `{p}`")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected {N} comma-separated values"))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_list(s)
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_list(s)
}

fn parse_rect(s: &str) -> Result<[usize; 4], String> {
    parse_list(s)
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let mut stdout = String::new();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Perturb(a) => perturb(a),
        Command::RefineFlow(a) => single_stage(a, false),
        Command::RefinePose(a) => single_stage(a, true),
        Command::Bootstrap(a) => run_bootstrap(a, &mut stdout),
        Command::Eval(a) => eval(a, &mut stdout),
        Command::Avg(a) => avg(a),
        Command::CheckGrads(a) => check_grads(a, &mut stdout),
    };
    print!("{stdout}");
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

type CmdResult = Result<i32, Error>;

fn read_topology(path: &Path) -> Result<SkeletonTopology, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        field: "topology".into(),
        index: None,
        message: e.to_string(),
    })
}

fn synth(a: SynthArgs) -> CmdResult {
    let topo = match &a.topology {
        Some(p) => read_topology(p)?,
        None => SkeletonTopology::human17(),
    };
    let cfg = SceneConfig {
        seed: a.seed,
        frames: a.frames,
        width: a.width,
        height: a.height,
        amplitude: a.amplitude,
        background: a.background,
        radius: a.radius,
    };
    let mut bundle = generate_scene_with(&cfg, &topo)?.bundle;
    if a.mode == Mode::Mode2D {
        bundle.pose = None;
        bundle.camera = None;
        bundle.mode = Mode::Mode2D;
    }
    write_bundle(&a.out, &bundle)?;
    Ok(EXIT_OK)
}

fn perturb(a: PerturbArgs) -> CmdResult {
    let src: Scene = read_bundle(&a.input)?;
    let cfg = if a.benchmark {
        let det = src.current_joints2d()?;
        if det.joints() <= FOREARM[1] {
            return Err(Error::InvalidInput("--benchmark needs the 17-joint skeleton".into()));
        }
        benchmark_noise(&det, src.width, src.height, a.replacement, a.seed)?
    } else {
        NoiseConfig {
            pose_sigma: a.pose_sigma,
            camera_sigma: a.camera_sigma,
            detection_sigma: a.detection_sigma,
            flow_corruption: a.corrupt.map(|[x, y, width, height]| FlowCorruption {
                x,
                y,
                width,
                height,
                replacement: a.replacement,
            }),
            seed: a.seed,
        }
    };
    let out = perturb_bundle(&src, &cfg)?;
    write_bundle(&a.out, &out)?;
    Ok(EXIT_OK)
}

fn load_config(path: Option<&Path>, mode: Mode) -> Result<RunConfig, Error> {
    let cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::for_mode(mode),
    };
    if cfg.mode != mode {
        return Err(Error::InvalidInput(format!("config is for {} mode but the scene is {}", cfg.mode, mode)));
    }
    Ok(cfg)
}

fn load_gt(path: Option<&Path>) -> Result<Option<GroundTruth<f64>>, Error> {
    path.map(|p| read_bundle::<f64>(p).map(|b| GroundTruth::from_bundle(&b))).transpose()
}

fn single_stage(a: StageArgs, pose: bool) -> CmdResult {
    let bundle: Scene = read_bundle(&a.input)?;
    let cfg = load_config(a.config.as_deref(), bundle.mode)?;
    let mut bc = cfg.bootstrap_config::<f64>()?;
    let configured = |want_pose: bool| {
        bc.schedule.stages.iter().find_map(|s| match (*s, want_pose) {
            (Stage::Pose { epochs }, true) | (Stage::Flow { epochs }, false) => Some(epochs),
            _ => None,
        })
    };
    let default = if pose { cfg.pose.epochs } else { cfg.default_flow_epochs() };
    let epochs = a.epochs.or_else(|| configured(pose)).unwrap_or(default);
    bc.schedule = CycleSchedule {
        stages: vec![if pose { Stage::Pose { epochs } } else { Stage::Flow { epochs } }],
    };
    let gt = load_gt(a.gt.as_deref())?;
    let (out, _) = bootstrap(&bundle, &bc, gt.as_ref())?;
    write_bundle(&a.out, &out)?;
    Ok(EXIT_OK)
}

fn run_bootstrap(a: BootstrapArgs, stdout: &mut String) -> CmdResult {
    if a.print_config {
        let cfg = match &a.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::for_mode(a.mode),
        };
        stdout.push_str(&cfg.to_toml());
        return Ok(EXIT_OK);
    }
    let input = a.input.expect("clap enforces --input");
    let bundle: Scene = read_bundle(&input)?;
    let cfg = load_config(a.config.as_deref(), bundle.mode)?;
    let out_dir = a
        .out
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| Error::InvalidInput("no output directory (--out or paths.output)".into()))?;
    let gt = load_gt(a.gt.as_deref())?;
    let (out, log) = bootstrap(&bundle, &cfg.bootstrap_config()?, gt.as_ref())?;
    write_bundle(&out_dir, &out)?;
    let mut report = serde_json::to_string_pretty(&log).expect("metrics serialize");
    report.push('\n');
    write_atomic(&out_dir.join("metrics.json"), report.as_bytes())?;
    Ok(EXIT_OK)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn eval(a: EvalArgs, stdout: &mut String) -> CmdResult {
    let pred: Scene = read_bundle(&a.pred)?;
    let gt_bundle: Scene = read_bundle(&a.gt)?;
    let gt = GroundTruth::from_bundle(&gt_bundle);
    if pred.frames() != gt_bundle.frames() || pred.topology.joint_count() != gt_bundle.topology.joint_count() {
        return Err(Error::InvalidInput("prediction and ground truth differ in shape".into()));
    }
    let subset = gt_bundle.topology.eval_subset();
    let frames = pred.frames();
    let pred_2d = pred.current_joints2d()?;

    let mut rows: Vec<[Option<f64>; 4]> = Vec::with_capacity(frames);
    for t in 0..frames {
        let m = match (&pred.pose, &gt.pose) {
            (Some(p), Some(g)) => {
                let pf = bootflow::PoseTrack::new(1, p.joints(), p.frame(t).to_vec())?;
                let gf = bootflow::PoseTrack::new(1, g.joints(), g.frame(t).to_vec())?;
                Some(mpjpe(&pf, &gf, subset)? * 1000.0)
            }
            _ => None,
        };
        let j2 = match &gt.joints2d {
            Some(g) => {
                let pf = bootflow::DetectionTrack::certain(1, g.joints(), pred_2d.frame(t).to_vec())?;
                let gf = bootflow::DetectionTrack::certain(1, g.joints(), g.frame(t).to_vec())?;
                Some(joint_error_2d(&pf, &gf, subset)?)
            }
            None => None,
        };
        let (e, ej) = if t + 1 < frames {
            let e = epe(&pred.flows[t], &gt.flows[t], None)?;
            let ej = match &gt.joints2d {
                Some(g) => {
                    let one = bootflow::DetectionTrack::certain(1, g.joints(), g.frame(t).to_vec())?;
                    Some(joint_epe(&pred.flows[t..=t], &gt.flows[t..=t], Some(&one))?)
                }
                None => None,
            };
            (Some(e), ej)
        } else {
            (None, None)
        };
        rows.push([m, j2, e, ej]);
    }
    let mean_mpjpe = match (&pred.pose, &gt.pose) {
        (Some(p), Some(g)) => Some(mpjpe(p, g, subset)? * 1000.0),
        _ => None,
    };
    let mean_2d = gt.joints2d.as_ref().map(|g| joint_error_2d(&pred_2d, g, subset)).transpose()?;
    let mean_epe = if frames > 1 { Some(joint_epe(&pred.flows, &gt.flows, None)?) } else { None };
    let mean_epe_j = match (&gt.joints2d, frames > 1) {
        (Some(g), true) => Some(joint_epe(&pred.flows, &gt.flows, Some(g))?),
        _ => None,
    };

    if a.json {
        let v = serde_json::json!({
            "mpjpe_mm": mean_mpjpe,
            "joint_error_2d_px": mean_2d,
            "epe_px": mean_epe,
            "epe_joints_px": mean_epe_j,
            "frames": rows.iter().enumerate().map(|(t, r)| serde_json::json!({
                "frame": t, "mpjpe_mm": r[0], "joint_error_2d_px": r[1], "epe_px": r[2], "epe_joints_px": r[3],
            })).collect::<Vec<_>>(),
        });
        stdout.push_str(&serde_json::to_string_pretty(&v).expect("json"));
        stdout.push('\n');
        return Ok(EXIT_OK);
    }
    let header = ["frame", "mpjpe_mm", "joint2d_px", "epe_px", "epe_joints_px"];
    let _ = writeln!(stdout, "{:>6} {:>14} {:>14} {:>14} {:>14}", header[0], header[1], header[2], header[3], header[4]);
    for (t, r) in rows.iter().enumerate() {
        let _ = writeln!(
            stdout,
            "{t:>6} {:>14} {:>14} {:>14} {:>14}",
            fmt_opt(r[0]),
            fmt_opt(r[1]),
            fmt_opt(r[2]),
            fmt_opt(r[3])
        );
    }
    let _ = writeln!(
        stdout,
        "{:>6} {:>14} {:>14} {:>14} {:>14}",
        "mean",
        fmt_opt(mean_mpjpe),
        fmt_opt(mean_2d),
        fmt_opt(mean_epe),
        fmt_opt(mean_epe_j)
    );
    Ok(EXIT_OK)
}

fn avg(a: AvgArgs) -> CmdResult {
    if a.a.is_dir() && a.b.is_dir() {
        let fa = read_flow_dir::<f64>(&a.a)?;
        let fb = read_flow_dir::<f64>(&a.b)?;
        if fa.len() != fb.len() {
            return Err(Error::InvalidInput(format!("flow directories hold {} and {} fields", fa.len(), fb.len())));
        }
        if fa.is_empty() {
            return Err(Error::InvalidInput("no .flo files found".into()));
        }
        let avg = fa.iter().zip(&fb).map(|(x, y)| average_flows(x, y)).collect::<Result<Vec<_>, _>>()?;
        write_flow_dir(&a.out, &avg)?;
        return Ok(EXIT_OK);
    }
    let out = match (read_track::<f64>(&a.a)?, read_track::<f64>(&a.b)?) {
        (Track::Pose(x), Track::Pose(y)) => Track::Pose(average_tracks(&x, &y)?),
        (Track::Camera(x), Track::Camera(y)) => Track::Camera(average_cameras(&x, &y)?),
        (Track::Detections(x), Track::Detections(y)) => Track::Detections(average_detections(&x, &y)?),
        (x, y) => {
            return Err(Error::InvalidInput(format!("cannot average a {} track with a {} track", x.kind(), y.kind())));
        }
    };
    write_track(&a.out, &out)?;
    Ok(EXIT_OK)
}

fn check_grads(a: GradArgs, stdout: &mut String) -> CmdResult {
    if !(a.step.is_finite() && a.step > 0.0) || !(a.tolerance.is_finite() && a.tolerance > 0.0) {
        return Err(Error::InvalidInput("step and tolerance must be positive".into()));
    }
    let report = gradient_suite(a.seeds, a.step, a.tolerance)?;
    if a.json {
        stdout.push_str(&serde_json::to_string_pretty(&report).expect("json"));
        stdout.push('\n');
    } else {
        let _ = writeln!(stdout, "{:<14} {:>14} {:>6}", "term", "max_rel_error", "ok");
        for (term, worst) in report.worst_by_term() {
            let _ = writeln!(stdout, "{term:<14} {worst:>14.3e} {:>6}", if worst < a.tolerance { "yes" } else { "NO" });
        }
    }
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: gradient check failed (tolerance {:e})", a.tolerance);
        Ok(EXIT_NUMERICAL)
    }
}
