//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bootflow::gradcheck::{gradient_suite, GRAD_STEP, GRAD_TOLERANCE};
use bootflow::io::flo::{decode_flo, encode_flo};
use bootflow::io::track::{decode_track, encode_track, Track};
use bootflow::pipeline::{flow_stage, joint_epe, PoseStart, PseudoTargets};
use bootflow::raster::{identity_target, Mask};
use bootflow::synth::{standard_benchmark, Perturbed};
use bootflow::{
    bootstrap, mpjpe, perturb, refine_flow, refine_pose, BootstrapConfig, CycleSchedule, Error, FlowField, FlowRefiner,
    GridRefiner, Mode, NoiseConfig, PoseHyperParams, TargetFlow,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pose-only recovery baseline (meters), from the reference run.
const POSE_BASELINE: f64 = 0.018362;
const POSE_BASELINE_TOL: f64 = 0.05;
/// Stride/sigma/lr/epochs of the refiner used for the flow recovery check.
const RECOVERY_REFINER: (usize, f64, f64, usize) = (2, 1.0, 0.05, 50);
const RECOVERY_FLOOR: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome, Error>) -> Outcome {
    let t0 = Instant::now();
    let mut o = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    let took = t0.elapsed();
    o.detail += &format!(" ({:.1}s", took.as_secs_f64());
    if let Some(limit) = limit {
        o.detail += &format!(", limit {}s", limit.as_secs());
        if took > limit {
            o.pass = false;
        }
    }
    o.detail += ")";
    o
}

fn noisy(seed: u64) -> Result<Perturbed<f64>, Error> {
    let b = standard_benchmark::<f64>(seed)?;
    perturb(&b.ground_truth, &b.noise)
}

fn ms(v: f64) -> String {
    format!("{:.3}mm", v * 1000.0)
}

fn gradients() -> Result<Outcome, Error> {
    let r = gradient_suite(20, GRAD_STEP, GRAD_TOLERANCE)?;
    let worst: Vec<String> = r.worst_by_term().iter().map(|(t, e)| format!("{t}={e:.1e}")).collect();
    Ok(outcome(r.passed(), format!("{} cases, worst relative error {}", r.cases.len(), worst.join(" "))))
}

fn fixed_point() -> Result<Outcome, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pass = true;
    let mut checked = 0;
    for _ in 0..5 {
        let base = common::random_flow(&mut rng, 128, 96, 4.0);
        let full = TargetFlow { flow: base.clone(), overlay_mask: Mask::full(128, 96)? };
        for epochs in [0, 8, 50] {
            pass &= refine_flow(&base, &identity_target(&base), epochs, 0.05)? == base;
            pass &= GridRefiner::default().refine(&base, &full, epochs)?.flow == base;
            checked += 2;
        }
    }
    Ok(outcome(pass, format!("{checked} runs over epochs 0/8/50, output identical to base")))
}

fn flow_recovery() -> Result<Outcome, Error> {
    let p = noisy(0)?;
    let gt = &p.reference;
    let joints = gt.joints2d.as_ref().expect("benchmark has 2D joints");
    let base = joint_epe(&p.estimate.flows, &gt.flows, Some(joints))?;
    let (stride, sigma, lr, epochs) = RECOVERY_REFINER;
    let refiner = GridRefiner { stride, sigma, lr, ..GridRefiner::default() };
    let (flows, _) = flow_stage(&p.estimate, joints, epochs, 15, &refiner)?;
    let after = joint_epe(&flows, &gt.flows, Some(joints))?;
    let reduction = 1.0 - after / base;
    let (flows, _) = flow_stage(&p.estimate, joints, 8, 15, &GridRefiner::default())?;
    let default_after = joint_epe(&flows, &gt.flows, Some(joints))?;
    Ok(outcome(
        reduction >= RECOVERY_FLOOR,
        format!(
            "joint EPE {base:.3} -> {after:.3} px ({:.1}% reduction, stride {stride}, sigma {sigma}, lr {lr}, {epochs} epochs; \
             info: default refiner, 8 epochs -> {default_after:.3} px)",
            100.0 * reduction
        ),
    ))
}

fn pose_recovery() -> Result<Outcome, Error> {
    let bench = standard_benchmark::<f64>(0)?;
    let cfg = NoiseConfig { pose_sigma: 0.02, seed: bench.noise.seed, ..Default::default() };
    let p = perturb(&bench.ground_truth, &cfg)?;
    let e = &p.estimate;
    let truth = p.reference.pose.as_ref().expect("3D benchmark");
    let pose = e.pose.as_ref().expect("3D benchmark");
    let init = mpjpe(pose, truth, None)?;
    let r = refine_pose(
        pose,
        e.camera.as_ref().expect("3D benchmark"),
        e.detections.as_ref().expect("benchmark has detections"),
        &e.flows,
        &e.topology,
        &PoseHyperParams::default(),
    )?;
    let fin = mpjpe(&r.pose, truth, None)?;
    let rel = fin / POSE_BASELINE - 1.0;
    Ok(outcome(
        fin < init && rel.abs() < POSE_BASELINE_TOL,
        format!("MPJPE {} -> {} (baseline {}, {:+.2}%)", ms(init), ms(fin), ms(POSE_BASELINE), 100.0 * rel),
    ))
}

fn cycle_mpjpe(p: &Perturbed<f64>, targets: PseudoTargets) -> Result<Vec<f64>, Error> {
    let mut cfg = BootstrapConfig::<f64>::default_for(Mode::Mode3D);
    cfg.schedule = CycleSchedule::cycles(Mode::Mode3D, 4);
    cfg.targets = targets;
    cfg.pose_start = PoseStart::Current;
    let (_, log) = bootstrap(&p.estimate, &cfg, Some(&p.reference))?;
    Ok(log.pose_stage_mpjpe())
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn cycles() -> Result<Outcome, Error> {
    let p = noisy(0)?;
    let est = cycle_mpjpe(&p, PseudoTargets::Estimated)?;
    let gt = cycle_mpjpe(&p, PseudoTargets::GroundTruth)?;
    let first_best = est.iter().all(|v| est[0] <= *v);
    let no_drift = non_increasing(&gt);
    let fmt = |v: &[f64]| v.iter().map(|x| ms(*x)).collect::<Vec<_>>().join(" ");
    let mut held = 0;
    let seeds = 1..6u64;
    for seed in seeds.clone() {
        held += usize::from(non_increasing(&cycle_mpjpe(&noisy(seed)?, PseudoTargets::GroundTruth)?));
    }
    Ok(outcome(
        first_best && no_drift,
        format!(
            "estimated: {}; ground truth: {} (info: no drift on {held}/{} further seeds)",
            fmt(&est),
            fmt(&gt),
            seeds.count()
        ),
    ))
}

fn ablation() -> Result<Outcome, Error> {
    let p = noisy(0)?;
    let mut vals = Vec::new();
    for k in 1..=4 {
        let mut cfg = BootstrapConfig::<f64>::default_for(Mode::Mode3D);
        let hp = &mut cfg.pose;
        if k < 4 {
            hp.lambda_opt = 0.0;
        }
        if k < 3 {
            hp.lambda_pos = 0.0;
            hp.lambda_cam = 0.0;
            hp.lambda_bone = 0.0;
        }
        if k < 2 {
            hp.lambda_2d = 0.0;
        }
        let (_, log) = bootstrap(&p.estimate, &cfg, Some(&p.reference))?;
        vals.push(log.last().and_then(|r| r.mpjpe).expect("3D metrics"));
    }
    let pass = vals[..3].iter().all(|v| vals[3] < *v);
    let names = ["3d", "+2d", "+temp", "+opt"];
    let line: Vec<String> = names.iter().zip(&vals).map(|(n, v)| format!("{n} {}", ms(*v))).collect();
    Ok(outcome(pass, line.join(", ")))
}

fn rasters() -> Result<Outcome, Error> {
    let c = common::compare_rasters(50, 50);
    Ok(outcome(
        c.ok(),
        format!(
            "50 skeletons, {} pixels ({} covered), mask mismatches {}, owner mismatches {} ({} rounding ties), max flow deviation {:.1e}",
            c.pixels, c.covered, c.mask_mismatches, c.owner_mismatches, c.near_ties, c.max_flow_deviation
        ),
    ))
}

fn cli(args: &[&str]) -> i32 {
    bootflow_cli::run(std::iter::once("bootflow").chain(args.iter().copied()))
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn formats() -> Result<Outcome, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut flo_ok = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..48), rng.random_range(1..48));
        let f = FlowField::from_fn(w, h, |_, _| [rng.random_range(-300.0f32..300.0), rng.random_range(-300.0f32..300.0)])?;
        let back: FlowField<f32> = decode_flo(&encode_flo(&f))?;
        let exact = back.dims() == f.dims()
            && back.data().iter().zip(f.data()).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
        flo_ok += usize::from(exact);
    }

    let mut track_err = 0.0f64;
    for _ in 0..20 {
        let pose = common::random_pose(&mut rng, 7, 17);
        let det = common::random_detections(&mut rng, 7, 17);
        if let Track::Pose(b) = decode_track::<f64>(&encode_track(&Track::Pose(pose.clone())))? {
            for (a, b) in pose.positions().iter().zip(b.positions()) {
                track_err = (0..3).fold(track_err, |m, c| m.max((a[c] - b[c]).abs()));
            }
        } else {
            track_err = f64::INFINITY;
        }
        if let Track::Detections(b) = decode_track::<f64>(&encode_track(&Track::Detections(det.clone())))? {
            for (a, b) in det.pixels().iter().zip(b.pixels()) {
                track_err = (0..2).fold(track_err, |m, c| m.max((a[c] - b[c]).abs()));
            }
            for (a, b) in det.confidences().iter().zip(b.confidences()) {
                track_err = track_err.max((a - b).abs());
            }
        } else {
            track_err = f64::INFINITY;
        }
    }

    let good = encode_flo(&FlowField::<f64>::zeros(3, 2)?);
    let offset = |bytes: &[u8]| match decode_flo::<f32>(bytes) {
        Err(Error::Format { offset, .. }) => Some(offset),
        _ => None,
    };
    let mut bad_tag = good.clone();
    bad_tag[0] ^= 1;
    let mut bad_width = good.clone();
    bad_width[4..8].copy_from_slice(&(-1i32).to_le_bytes());
    let mut bad_height = good.clone();
    bad_height[8..12].copy_from_slice(&0i32.to_le_bytes());
    let mut nan = good.clone();
    nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut trailing = good.clone();
    trailing.push(0);
    let cases = [
        (offset(&bad_tag), Some(0)),
        (offset(&bad_width), Some(4)),
        (offset(&bad_height), Some(8)),
        (offset(&good[..good.len() - 3]), Some(good.len() as u64 - 3)),
        (offset(&trailing), Some(good.len() as u64)),
        (offset(&nan), Some(12)),
        (offset(&good[..7]), Some(7)),
    ];
    let headers_ok = cases.iter().all(|(got, want)| got == want);

    let dir = tempfile::tempdir().map_err(|e| Error::Io { path: PathBuf::new(), source: e })?;
    let scene = dir.path().join("scene");
    let mut exit_ok = cli(&["synth", "--out", path(&scene), "--frames", "3", "--width", "24", "--height", "24"]) == 0;
    let flo = std::fs::read_dir(scene.join("flows"))
        .map_err(|e| Error::Io { path: scene.clone(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.extension().is_some_and(|x| x == "flo"));
    if let Some(flo) = flo {
        std::fs::write(&flo, &bad_tag).map_err(|e| Error::Io { path: flo.clone(), source: e })?;
        exit_ok &= cli(&["eval", "--pred", path(&scene), "--gt", path(&scene)]) == 3;
    } else {
        exit_ok = false;
    }

    Ok(outcome(
        flo_ok == 100 && track_err <= 1e-12 && headers_ok && exit_ok,
        format!(
            ".flo bit-exact {flo_ok}/100, track max error {track_err:.1e}, header offsets {}, corrupted scene exit code {}",
            if headers_ok { "as documented" } else { "WRONG" },
            if exit_ok { "3" } else { "WRONG" }
        ),
    ))
}

fn collect(dir: &Path, root: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(&p, root, out)?;
        } else {
            out.push((p.strip_prefix(root).expect("under root").to_path_buf(), std::fs::read(&p)?));
        }
    }
    Ok(())
}

fn determinism() -> Result<Outcome, Error> {
    let dir = tempfile::tempdir().map_err(|e| Error::Io { path: PathBuf::new(), source: e })?;
    let d = |n: &str| dir.path().join(n);
    let (gt, noisy, a, b) = (d("gt"), d("noisy"), d("a"), d("b"));
    let steps: [&[&str]; 4] = [
        &["synth", "--out", path(&gt), "--seed", "3"],
        &["perturb", "--input", path(&gt), "--out", path(&noisy), "--benchmark", "--seed", "4"],
        &["bootstrap", "--input", path(&noisy), "--gt", path(&gt), "--out", path(&a)],
        &["bootstrap", "--input", path(&noisy), "--gt", path(&gt), "--out", path(&b)],
    ];
    for s in steps {
        let code = cli(s);
        if code != 0 {
            return Ok(outcome(false, format!("`{}` exited with {code}", s[0])));
        }
    }
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    let io = |e| Error::Io { path: dir.path().to_path_buf(), source: e };
    collect(&a, &a, &mut fa).map_err(io)?;
    collect(&b, &b, &mut fb).map_err(io)?;
    let bytes: usize = fa.iter().map(|(_, v)| v.len()).sum();
    Ok(outcome(
        !fa.is_empty() && fa == fb,
        format!("{} files, {bytes} bytes, identical across two runs", fa.len()),
    ))
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria: Vec<(&str, Option<Duration>, fn() -> Result<Outcome, Error>)> = vec![
        ("gradient correctness", secs(30), gradients),
        ("refiner fixed point", secs(5), fixed_point),
        ("flow recovery", secs(60), flow_recovery),
        ("pose recovery", secs(60), pose_recovery),
        ("cycle study", None, cycles),
        ("loss ablation", None, ablation),
        ("rasterization oracle", secs(30), rasters),
        ("format conformance", None, formats),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let o = timed(limit, f);
        failed += usize::from(!o.pass);
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
