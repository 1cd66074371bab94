//! TOML run configuration. `RunConfig::default()` reproduces the published
//! optimization settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::SmoothL1;
use crate::pipeline::{flow_epochs, BootstrapConfig, CycleSchedule, FlowStageParams, PoseStart, PseudoTargets, Stage};
use crate::pose::PoseHyperParams;
use crate::raster::DEFAULT_RADIUS;
use crate::refiner::{GridRefiner, DEFAULT_LR, DEFAULT_SIGMA, DEFAULT_STRIDE};
use crate::scalar::Scalar;
use crate::skeleton::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub stride: usize,
    /// grid cells
    pub sigma: f64,
    pub lr: f64,
    /// smooth-L1 transition, pixels
    pub beta: f64,
    /// stick-figure half thickness, pixels
    pub radius: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            sigma: DEFAULT_SIGMA,
            lr: DEFAULT_LR,
            beta: 1.0,
            radius: DEFAULT_RADIUS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flows: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub targets: PseudoTargets,
    pub pose_start: PoseStart,
    pub schedule: Vec<Stage>,
    pub pose: PoseHyperParams<f64>,
    pub flow: FlowParams,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Mode3D)
    }
}

impl RunConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            seed: 0,
            targets: PseudoTargets::Estimated,
            pose_start: PoseStart::Current,
            schedule: CycleSchedule::default_for(mode).stages,
            pose: PoseHyperParams::default(),
            flow: FlowParams::default(),
            paths: Paths::default(),
        }
    }

    /// Parses a config. A file that sets `mode = "2d"` but leaves the schedule
    /// out gets the 2D flow budget.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format {
            offset: e.span().map_or(0, |s| s.start as u64),
            message: e.message().to_string(),
        })?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        if !raw.contains_key("schedule") {
            cfg.schedule = CycleSchedule::default_for(cfg.mode).stages;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        let f = &self.flow;
        if f.stride == 0 {
            return Err(Error::schema("flow.stride", None, "must be positive"));
        }
        if !(f.sigma.is_finite() && f.sigma >= 0.0) {
            return Err(Error::schema("flow.sigma", None, "must be finite and non-negative"));
        }
        if !(f.lr.is_finite() && f.lr >= 0.0) {
            return Err(Error::schema("flow.lr", None, "must be finite and non-negative"));
        }
        SmoothL1::new(f.beta).map_err(|_| Error::schema("flow.beta", None, "must be finite and positive"))?;
        Ok(())
    }

    pub fn bootstrap_config<T: Scalar>(&self) -> Result<BootstrapConfig<T>> {
        self.validate()?;
        let p = &self.pose;
        let b = &p.betas;
        let pose = PoseHyperParams {
            lambda_opt: T::lit(p.lambda_opt),
            lambda_3d: T::lit(p.lambda_3d),
            lambda_2d: T::lit(p.lambda_2d),
            lambda_pos: T::lit(p.lambda_pos),
            lambda_cam: T::lit(p.lambda_cam),
            lambda_bone: T::lit(p.lambda_bone),
            lr: T::lit(p.lr),
            epochs: p.epochs,
            betas: crate::pose::LossBetas {
                flow: T::lit(b.flow),
                joints3d: T::lit(b.joints3d),
                joints2d: T::lit(b.joints2d),
                position: T::lit(b.position),
                camera: T::lit(b.camera),
                bone: T::lit(b.bone),
            },
            detach_flow_sampling: p.detach_flow_sampling,
            bone_term_2d: p.bone_term_2d,
        };
        Ok(BootstrapConfig {
            schedule: CycleSchedule {
                stages: self.schedule.clone(),
            },
            pose,
            flow: FlowStageParams {
                radius: self.flow.radius,
                refiner: GridRefiner {
                    stride: self.flow.stride,
                    sigma: T::lit(self.flow.sigma),
                    lr: T::lit(self.flow.lr),
                    penalty: SmoothL1::new(T::lit(self.flow.beta))?,
                },
            },
            targets: self.targets,
            pose_start: self.pose_start,
        })
    }

    /// Flow budget the defaults use for this mode.
    pub fn default_flow_epochs(&self) -> usize {
        flow_epochs(self.mode)
    }
}
