//! Scene directories.
//!
//! ```text
//! scene.json        version, width, height, mode, topology
//! pose.json         pose track (3d mode)
//! camera.json       camera track (3d mode)
//! detections.json   detection track
//! joints2d.json     current 2D joints (2d mode, optional)
//! flows/0000.flo    flow from frame 0 to frame 1, and so on
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flo::{read_flow_dir, write_flow_dir};
use super::track::{read_camera, read_detections, read_pose, write_track, Track};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeleton::{Mode, SceneBundle, SkeletonTopology};

pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    width: usize,
    height: usize,
    mode: Mode,
    topology: SkeletonTopology,
}

pub fn write_bundle<T: Scalar>(dir: &Path, bundle: &SceneBundle<T>) -> Result<()> {
    bundle.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scene = SceneFile {
        version: SCENE_VERSION,
        width: bundle.width,
        height: bundle.height,
        mode: bundle.mode,
        topology: bundle.topology.clone(),
    };
    let mut text = serde_json::to_string_pretty(&scene).expect("scene serializes");
    text.push('\n');
    super::write_atomic(&dir.join("scene.json"), text.as_bytes())?;
    if let Some(p) = &bundle.pose {
        write_track(&dir.join("pose.json"), &Track::Pose(p.clone()))?;
    }
    if let Some(c) = &bundle.camera {
        write_track(&dir.join("camera.json"), &Track::Camera(c.clone()))?;
    }
    if let Some(d) = &bundle.detections {
        write_track(&dir.join("detections.json"), &Track::Detections(d.clone()))?;
    }
    if let Some(d) = &bundle.joints2d {
        write_track(&dir.join("joints2d.json"), &Track::Detections(d.clone()))?;
    }
    write_flow_dir(&dir.join("flows"), &bundle.flows)
}

pub fn read_scene_header(dir: &Path) -> Result<(usize, usize, Mode, SkeletonTopology)> {
    let path = dir.join("scene.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let scene: SceneFile = serde_json::from_str(&text).map_err(|e| Error::schema("scene.json", None, e.to_string()))?;
    if scene.version != SCENE_VERSION {
        return Err(Error::schema("version", None, format!("unsupported scene version {}", scene.version)));
    }
    Ok((scene.width, scene.height, scene.mode, scene.topology))
}

pub fn read_bundle<T: Scalar>(dir: &Path) -> Result<SceneBundle<T>> {
    let (width, height, mode, topology) = read_scene_header(dir)?;
    let optional = |name: &str| {
        let p = dir.join(name);
        p.exists().then_some(p)
    };
    let bundle = SceneBundle {
        topology,
        width,
        height,
        mode,
        pose: optional("pose.json").map(|p| read_pose(&p)).transpose()?,
        camera: optional("camera.json").map(|p| read_camera(&p)).transpose()?,
        detections: optional("detections.json").map(|p| read_detections(&p)).transpose()?,
        joints2d: optional("joints2d.json").map(|p| read_detections(&p)).transpose()?,
        flows: read_flow_dir(&dir.join("flows"))?,
    };
    bundle.validate()?;
    Ok(bundle)
}
