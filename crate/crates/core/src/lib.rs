//! Inference-time bootstrapping of human optical flow and pose.
//!
//! Flow fields are fine-tuned toward a stick-figure flow drawn from the pose
//! estimates, and poses are then refined to agree with the improved flow,
//! the 2D detections, the initial estimates and temporal/bone-length
//! consistency. All numeric code is generic over [`Scalar`]; the aliases
//! below fix it to `f64` (the precision used by the file formats and CLI).

pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod refiner;
pub mod scalar;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
pub use flow::{average_flows, FlowField};
pub use optim::{finite_diff_check, smooth_l1, AdamState, SmoothL1};
pub use pipeline::{bootstrap, BootstrapConfig, CycleSchedule, GroundTruth, MetricsLog, Stage};
pub use pose::{refine_pose, refine_pose_2d, PoseHyperParams};
pub use raster::{bone_flow, compose_target_flow, rasterize_skeleton, BoneRaster, TargetFlow};
pub use refiner::{init_refiner, refine_flow, refiner_apply, CorrectionGrid, FlowRefiner, GridRefiner};
pub use scalar::Scalar;
pub use skeleton::{
    average_tracks, bone_lengths, project, Camera, CameraTrack, DetectionTrack, Mode, PoseTrack, SceneBundle,
    SkeletonTopology,
};
pub use synth::{epe, generate_scene, mpjpe, perturb, NoiseConfig};

pub type Pose = PoseTrack<f64>;
pub type Cameras = CameraTrack<f64>;
pub type Detections = DetectionTrack<f64>;
pub type Flow = FlowField<f64>;
pub type Scene = SceneBundle<f64>;
pub type HyperParams = PoseHyperParams<f64>;
pub type Refiner = GridRefiner<f64>;

pub type PoseF32 = PoseTrack<f32>;
pub type FlowF32 = FlowField<f32>;
