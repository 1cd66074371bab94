//! Alternating flow and pose refinement stages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::pose::{refine_pose_2d_with, refine_pose_with, Pose2dObjective, PoseHyperParams, PoseObjective};
use crate::raster::{bone_flow, compose_target_flow, DEFAULT_RADIUS};
use crate::refiner::{FlowRefiner, GridRefiner};
use crate::scalar::Scalar;
use crate::skeleton::{CameraTrack, DetectionTrack, Mode, PoseTrack, SceneBundle};
use crate::synth::{epe, joint_error_2d, mpjpe};

/// Default flow fine-tuning budget per stage in 3D mode.
pub const FLOW_EPOCHS_3D: usize = 8;
/// Default flow fine-tuning budget per stage in 2D mode.
pub const FLOW_EPOCHS_2D: usize = 50;
pub const POSE_EPOCHS: usize = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum Stage {
    Flow { epochs: usize },
    Pose { epochs: usize },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Flow { .. } => "flow",
            Stage::Pose { .. } => "pose",
        }
    }

    pub fn epochs(&self) -> usize {
        match *self {
            Stage::Flow { epochs } | Stage::Pose { epochs } => epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub stages: Vec<Stage>,
}

impl CycleSchedule {
    pub fn empty() -> Self {
        Self { stages: Vec::new() }
    }

    /// Flow, pose, flow.
    pub fn default_for(mode: Mode) -> Self {
        Self::cycles(mode, 1)
    }

    /// `pose_stages` pose stages, each preceded and the last one followed by
    /// a flow stage.
    pub fn cycles(mode: Mode, pose_stages: usize) -> Self {
        let flow = Stage::Flow {
            epochs: flow_epochs(mode),
        };
        let mut stages = vec![flow];
        for _ in 0..pose_stages {
            stages.push(Stage::Pose { epochs: POSE_EPOCHS });
            stages.push(flow);
        }
        Self { stages }
    }
}

pub fn flow_epochs(mode: Mode) -> usize {
    match mode {
        Mode::Mode3D => FLOW_EPOCHS_3D,
        Mode::Mode2D => FLOW_EPOCHS_2D,
    }
}

/// Where the in-loop pseudo-targets come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PseudoTargets {
    /// Overlays are drawn from the current pose and poses follow the noisy detections.
    #[default]
    Estimated,
    /// Overlays and detections are replaced by ground truth.
    GroundTruth,
}

/// Where each pose stage starts its optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoseStart {
    /// From the output of the previous pose stage.
    #[default]
    Current,
    /// From the original input estimates.
    Initial,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowStageParams<T> {
    pub radius: usize,
    pub refiner: GridRefiner<T>,
}

impl<T: Scalar> Default for FlowStageParams<T> {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            refiner: GridRefiner::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapConfig<T> {
    pub schedule: CycleSchedule,
    pub pose: PoseHyperParams<T>,
    pub flow: FlowStageParams<T>,
    pub targets: PseudoTargets,
    pub pose_start: PoseStart,
}

impl<T: Scalar> BootstrapConfig<T> {
    pub fn default_for(mode: Mode) -> Self {
        Self {
            schedule: CycleSchedule::default_for(mode),
            pose: PoseHyperParams::default(),
            flow: FlowStageParams::default(),
            targets: PseudoTargets::Estimated,
            pose_start: PoseStart::Current,
        }
    }
}

/// Exact reference used for metrics and for ground-truth pseudo-targets.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub pose: Option<PoseTrack<T>>,
    pub camera: Option<CameraTrack<T>>,
    /// Exact 2D joints (projections of the pose in 3D scenes).
    pub joints2d: Option<DetectionTrack<T>>,
    pub flows: Vec<FlowField<T>>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn from_bundle(b: &SceneBundle<T>) -> Self {
        let joints2d = match (&b.pose, &b.camera) {
            (Some(p), Some(c)) => p.project(c).ok(),
            _ => b.joints2d.clone().or_else(|| b.detections.clone()),
        };
        Self {
            pose: b.pose.clone(),
            camera: b.camera.clone(),
            joints2d,
            flows: b.flows.clone(),
        }
    }
}

/// Metrics after one stage (or for the input, when `stage` is `None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Option<usize>,
    pub kind: String,
    pub epochs: usize,
    pub loss: Option<f64>,
    /// meters
    pub mpjpe: Option<f64>,
    /// pixels
    pub joint_error_2d: Option<f64>,
    /// pixels
    pub epe: Option<f64>,
    pub drift: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub mode: Mode,
    pub records: Vec<StageRecord>,
}

impl MetricsLog {
    /// MPJPE after each pose stage, in order.
    pub fn pose_stage_mpjpe(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.kind == "pose")
            .filter_map(|r| r.mpjpe)
            .collect()
    }

    pub fn initial(&self) -> Option<&StageRecord> {
        self.records.first().filter(|r| r.stage.is_none())
    }

    pub fn last(&self) -> Option<&StageRecord> {
        self.records.last()
    }
}

struct Metrics {
    mpjpe: Option<f64>,
    joint_error_2d: Option<f64>,
    epe: Option<f64>,
}

fn measure<T: Scalar>(bundle: &SceneBundle<T>, gt: &GroundTruth<T>) -> Result<Metrics> {
    let subset = bundle.topology.eval_subset();
    let mpjpe = match (&bundle.pose, &gt.pose) {
        (Some(p), Some(g)) if bundle.mode == Mode::Mode3D => Some(mpjpe(p, g, subset)?.as_f64()),
        _ => None,
    };
    let joint_error_2d = match &gt.joints2d {
        Some(g) => Some(joint_error_2d(&bundle.current_joints2d()?, g, subset)?.as_f64()),
        None => None,
    };
    let epe = if gt.flows.len() == bundle.flows.len() && !gt.flows.is_empty() {
        Some(joint_epe(&bundle.flows, &gt.flows, gt.joints2d.as_ref())?)
    } else {
        None
    };
    Ok(Metrics {
        mpjpe,
        joint_error_2d,
        epe,
    })
}

/// EPE pooled over the ground-truth joint locations of the first frame of
/// each pair (joints outside the image are skipped), or over all pixels when
/// no joints are known.
pub fn joint_epe<T: Scalar>(pred: &[FlowField<T>], gt: &[FlowField<T>], joints: Option<&DetectionTrack<T>>) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid("flow lists differ in length"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        match joints {
            Some(j) => {
                let (w, h) = (T::from_usize_lossy(p.width() - 1), T::from_usize_lossy(p.height() - 1));
                let pts: Vec<[T; 2]> = j
                    .frame(t)
                    .iter()
                    .copied()
                    .filter(|q| q[0] >= T::zero() && q[1] >= T::zero() && q[0] <= w && q[1] <= h)
                    .collect();
                if pts.is_empty() {
                    continue;
                }
                total += epe(p, g, Some(&pts))?.as_f64() * pts.len() as f64;
                count += pts.len();
            }
            None => {
                total += epe(p, g, None)?.as_f64();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Runs the schedule. Returns the refined bundle and a per-stage log; the log
/// carries metrics only when `gt` is given.
pub fn bootstrap<T: Scalar>(
    bundle: &SceneBundle<T>,
    config: &BootstrapConfig<T>,
    gt: Option<&GroundTruth<T>>,
) -> Result<(SceneBundle<T>, MetricsLog)> {
    bootstrap_with(bundle, config, &config.flow.refiner, gt)
}

/// [`bootstrap`] with a caller-provided flow refiner.
pub fn bootstrap_with<T: Scalar, R: FlowRefiner<T>>(
    bundle: &SceneBundle<T>,
    config: &BootstrapConfig<T>,
    refiner: &R,
    gt: Option<&GroundTruth<T>>,
) -> Result<(SceneBundle<T>, MetricsLog)> {
    bundle.validate()?;
    config.pose.validate()?;
    if config.targets == PseudoTargets::GroundTruth && gt.and_then(|g| g.joints2d.as_ref()).is_none() {
        return Err(Error::invalid("ground-truth pseudo-targets need ground-truth joints"));
    }
    let anchor_pose = bundle.pose.clone();
    let anchor_camera = bundle.camera.clone();
    let anchor_2d = match bundle.mode {
        Mode::Mode2D => Some(bundle.current_joints2d()?),
        Mode::Mode3D => None,
    };

    let mut log = MetricsLog {
        mode: bundle.mode,
        records: Vec::new(),
    };
    if let Some(g) = gt {
        let m = measure(bundle, g)?;
        log.records.push(StageRecord {
            stage: None,
            kind: "initial".into(),
            epochs: 0,
            loss: None,
            mpjpe: m.mpjpe,
            joint_error_2d: m.joint_error_2d,
            epe: m.epe,
            drift: false,
        });
    }

    let mut current = bundle.clone();
    for (index, stage) in config.schedule.stages.iter().enumerate() {
        let annotate = |e: Error| Error::Stage {
            stage: index,
            source: Box::new(e),
        };
        // Each stage works on a copy so a failure leaves `current` intact.
        let mut next = current.clone();
        let loss = match *stage {
            Stage::Flow { epochs } => {
                let overlay = match config.targets {
                    PseudoTargets::Estimated => current.current_joints2d().map_err(annotate)?,
                    PseudoTargets::GroundTruth => gt.and_then(|g| g.joints2d.clone()).expect("checked above"),
                };
                let (flows, loss) = flow_stage(&current, &overlay, epochs, config.flow.radius, refiner).map_err(annotate)?;
                next.flows = flows;
                loss
            }
            Stage::Pose { epochs } => {
                let hp = PoseHyperParams { epochs, ..config.pose };
                let gt_det = match config.targets {
                    PseudoTargets::GroundTruth => gt.and_then(|g| g.joints2d.clone()),
                    PseudoTargets::Estimated => None,
                };
                match current.mode {
                    Mode::Mode3D => {
                        let anchor = anchor_pose.as_ref().expect("validated");
                        let detections = gt_det.as_ref().or(current.detections.as_ref());
                        let objective = PoseObjective {
                            anchor,
                            detections,
                            flows: &current.flows,
                            topology: &current.topology,
                            params: &hp,
                        };
                        let (start_pose, start_cam) = match config.pose_start {
                            PoseStart::Current => (current.pose.as_ref().expect("validated"), current.camera.as_ref().expect("validated")),
                            PoseStart::Initial => (anchor, anchor_camera.as_ref().expect("validated")),
                        };
                        let r = refine_pose_with(&objective, start_pose, start_cam).map_err(annotate)?;
                        next.pose = Some(r.pose);
                        next.camera = Some(r.camera);
                        r.trajectory.last().map(|b| b.total.as_f64())
                    }
                    Mode::Mode2D => {
                        let anchor = anchor_2d.as_ref().expect("2d anchor");
                        let detections = gt_det.as_ref().or(current.detections.as_ref()).expect("validated");
                        let objective = Pose2dObjective {
                            anchor,
                            detections,
                            flows: &current.flows,
                            topology: &current.topology,
                            params: &hp,
                        };
                        let start = match config.pose_start {
                            PoseStart::Current => current.current_joints2d().map_err(annotate)?,
                            PoseStart::Initial => anchor.clone(),
                        };
                        let r = refine_pose_2d_with(&objective, &start).map_err(annotate)?;
                        next.joints2d = Some(r.joints);
                        r.trajectory.last().map(|b| b.total.as_f64())
                    }
                }
            }
        };
        current = next;

        if let Some(g) = gt {
            let m = measure(&current, g).map_err(annotate)?;
            let prev = log.records.last();
            let worse = |now: Option<f64>, before: Option<f64>| matches!((now, before), (Some(a), Some(b)) if a > b);
            let drift = prev.is_some_and(|p| {
                worse(m.mpjpe, p.mpjpe) || worse(m.joint_error_2d, p.joint_error_2d) || worse(m.epe, p.epe)
            });
            if drift {
                log::warn!(
                    "stage {index} ({}) increased the error against ground truth; later cycles may be drifting",
                    stage.name()
                );
            }
            log.records.push(StageRecord {
                stage: Some(index),
                kind: stage.name().into(),
                epochs: stage.epochs(),
                loss,
                mpjpe: m.mpjpe,
                joint_error_2d: m.joint_error_2d,
                epe: m.epe,
                drift,
            });
        } else {
            log.records.push(StageRecord {
                stage: Some(index),
                kind: stage.name().into(),
                epochs: stage.epochs(),
                loss,
                mpjpe: None,
                joint_error_2d: None,
                epe: None,
                drift: false,
            });
        }
    }
    Ok((current, log))
}

/// Refines every frame pair toward its pose-derived target. Pairs are
/// independent and run in parallel. Returns the flows and the mean final loss.
pub fn flow_stage<T: Scalar, R: FlowRefiner<T>>(
    bundle: &SceneBundle<T>,
    joints: &DetectionTrack<T>,
    epochs: usize,
    radius: usize,
    refiner: &R,
) -> Result<(Vec<FlowField<T>>, Option<f64>)> {
    if joints.frames() != bundle.frames() {
        return Err(Error::invalid("overlay joints do not cover every frame"));
    }
    let results: Vec<(FlowField<T>, Option<f64>)> = bundle
        .flows
        .par_iter()
        .enumerate()
        .map(|(t, base)| {
            let bf = bone_flow(joints.frame(t), joints.frame(t + 1), &bundle.topology, bundle.width, bundle.height, radius)?;
            let target = compose_target_flow(base, &bf)?;
            let refined = refiner.refine(base, &target, epochs)?;
            Ok((refined.flow, refined.losses.last().map(|l| l.as_f64())))
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = results.iter().filter_map(|r| r.1).collect();
    let loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
    Ok((results.into_iter().map(|r| r.0).collect(), loss))
}
