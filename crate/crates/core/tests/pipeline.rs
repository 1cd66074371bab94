use bootflow::gradcheck::{gradient_suite, GRAD_STEP, GRAD_TOLERANCE, TERMS};
use bootflow::pipeline::{bootstrap_with, PseudoTargets};
use bootflow::synth::standard_benchmark;
use bootflow::{bootstrap, perturb, BootstrapConfig, CycleSchedule, Error, GridRefiner, Mode, PoseHyperParams, Stage};

fn noisy_benchmark(seed: u64) -> bootflow::synth::Perturbed<f64> {
    let b = standard_benchmark::<f64>(seed).unwrap();
    perturb(&b.ground_truth, &b.noise).unwrap()
}

#[test]
fn default_schedules_match_settings() {
    assert_eq!(
        CycleSchedule::default_for(Mode::Mode3D).stages,
        vec![Stage::Flow { epochs: 8 }, Stage::Pose { epochs: 1500 }, Stage::Flow { epochs: 8 }]
    );
    assert_eq!(
        CycleSchedule::default_for(Mode::Mode2D).stages,
        vec![Stage::Flow { epochs: 50 }, Stage::Pose { epochs: 1500 }, Stage::Flow { epochs: 50 }]
    );
    let hp = PoseHyperParams::<f64>::default();
    assert_eq!(
        [hp.lambda_opt, hp.lambda_3d, hp.lambda_2d, hp.lambda_pos, hp.lambda_cam, hp.lambda_bone, hp.lr],
        [0.01, 400.0, 0.01, 300.0, 0.1, 1e4, 0.001]
    );
    assert_eq!(bootflow::raster::DEFAULT_RADIUS, 15);
}

#[test]
fn empty_and_zero_epoch_schedules_are_identity() {
    let p = noisy_benchmark(0);
    let mut cfg = BootstrapConfig::default_for(Mode::Mode3D);
    cfg.schedule = CycleSchedule::empty();
    let (out, log) = bootstrap(&p.estimate, &cfg, Some(&p.reference)).unwrap();
    assert_eq!(out, p.estimate);
    assert_eq!(log.records.len(), 1);
    cfg.schedule = CycleSchedule { stages: vec![Stage::Pose { epochs: 0 }] };
    let (out, _) = bootstrap(&p.estimate, &cfg, None).unwrap();
    assert_eq!(out, p.estimate);
}

#[test]
fn default_schedule_improves_pose() {
    let p = noisy_benchmark(0);
    let cfg = BootstrapConfig::default_for(Mode::Mode3D);
    let (out, log) = bootstrap(&p.estimate, &cfg, Some(&p.reference)).unwrap();
    let init = log.initial().unwrap();
    let pose = log.records.iter().find(|r| r.kind == "pose").unwrap();
    assert_eq!(log.records.len(), 4);
    assert!(pose.mpjpe.unwrap() < init.mpjpe.unwrap());
    // reference run: 32.222 mm -> 18.604 mm
    assert!((pose.mpjpe.unwrap() / 0.018604 - 1.0).abs() < 0.05, "{:?}", pose.mpjpe);
    // feeding the output back with no stages changes nothing
    let mut empty = cfg.clone();
    empty.schedule = CycleSchedule::empty();
    assert_eq!(bootstrap(&out, &empty, None).unwrap().0, out);
    // deterministic
    assert_eq!(bootstrap(&p.estimate, &cfg, Some(&p.reference)).unwrap(), (out, log));
}

/// Does not hold: outside the corrupted rectangle the benchmark flow is
/// exact, while the overlay drawn from the 20 mm pose estimates is off by
/// about 1.5 px at the joints, so fine-tuning toward it raises joint EPE
/// (seed 0: 0.268 -> 0.492 -> 0.452 px).
#[test]
#[ignore = "joint EPE rises on the standard benchmark under the default schedule"]
fn default_schedule_improves_flow() {
    let p = noisy_benchmark(0);
    let (_, log) = bootstrap(&p.estimate, &BootstrapConfig::default_for(Mode::Mode3D), Some(&p.reference)).unwrap();
    assert!(log.last().unwrap().epe.unwrap() < log.initial().unwrap().epe.unwrap());
}

#[test]
fn two_d_mode_runs_without_pose() {
    let p = noisy_benchmark(1);
    let mut bundle = p.estimate.clone();
    bundle.mode = Mode::Mode2D;
    bundle.pose = None;
    bundle.camera = None;
    let mut cfg = BootstrapConfig::default_for(Mode::Mode2D);
    cfg.schedule = CycleSchedule { stages: vec![Stage::Flow { epochs: 5 }, Stage::Pose { epochs: 20 }] };
    let (out, log) = bootstrap(&bundle, &cfg, Some(&p.reference)).unwrap();
    assert!(out.joints2d.is_some());
    assert!(log.records.iter().all(|r| r.mpjpe.is_none()));
    assert!(log.records.iter().all(|r| r.joint_error_2d.is_some()));
}

#[test]
fn stage_errors_carry_the_stage_index() {
    let p = noisy_benchmark(0);
    let mut cfg = BootstrapConfig::default_for(Mode::Mode3D);
    cfg.schedule = CycleSchedule { stages: vec![Stage::Flow { epochs: 1 }, Stage::Pose { epochs: 5 }] };
    cfg.pose.lr = 1e300;
    let err = bootstrap(&p.estimate, &cfg, None).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: 1, .. }), "{err:?}");
    assert!(matches!(err.root(), Error::Numerical(_)));
}

#[test]
fn ground_truth_targets_need_ground_truth() {
    let p = noisy_benchmark(0);
    let mut cfg = BootstrapConfig::default_for(Mode::Mode3D);
    cfg.targets = PseudoTargets::GroundTruth;
    assert!(bootstrap_with(&p.estimate, &cfg, &GridRefiner::default(), None).is_err());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let report = gradient_suite(20, GRAD_STEP, GRAD_TOLERANCE).unwrap();
    assert_eq!(report.cases.len(), 20 * TERMS.len());
    for c in &report.cases {
        assert!(c.max_rel_error < GRAD_TOLERANCE, "{c:?}");
    }
    assert!(report.passed());
}
