//! JSON track files.
//!
//! ```json
//! {"version": 1, "kind": "pose", "frames": 2, "joints": 1, "units": "meters",
//!  "positions": [0.0, 0.1, 2.0, 0.0, 0.1, 2.0]}
//! ```
//!
//! Pose files carry `positions` (x, y, z per joint, frame-major), camera files
//! carry `cameras` (s, tx, ty per frame) and detection files carry `pixels`
//! (x, y per joint) plus `confidence` (one per joint). Floats are written in
//! shortest round-trip form, so `f64` values survive a write/read cycle exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::skeleton::{CameraTrack, DetectionTrack, PoseTrack};

pub const TRACK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Track<T> {
    Pose(PoseTrack<T>),
    Camera(CameraTrack<T>),
    Detections(DetectionTrack<T>),
}

impl<T> Track<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Track::Pose(_) => "pose",
            Track::Camera(_) => "camera",
            Track::Detections(_) => "detections",
        }
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrackFile {
    version: Option<u32>,
    kind: Option<String>,
    frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    joints: Option<usize>,
    units: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    positions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cameras: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pixels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<Vec<f64>>,
}

fn required<V>(v: Option<V>, field: &str) -> Result<V> {
    v.ok_or_else(|| Error::schema(field, None, "required field is missing"))
}

fn to_f64<T: Scalar>(v: impl IntoIterator<Item = T>) -> Vec<f64> {
    v.into_iter().map(Scalar::as_f64).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn pairs<T: Scalar>(flat: &[f64], field: &str) -> Result<Vec<[T; 2]>> {
    if !flat.len().is_multiple_of(2) {
        return Err(Error::schema(field, None, "length must be a multiple of 2"));
    }
    Ok(flat.chunks_exact(2).map(|c| [T::lit(c[0]), T::lit(c[1])]).collect())
}

pub fn encode_track<T: Scalar>(track: &Track<T>) -> String {
    let mut file = TrackFile {
        version: Some(TRACK_VERSION),
        kind: Some(track.kind().into()),
        ..Default::default()
    };
    match track {
        Track::Pose(p) => {
            file.frames = Some(p.frames());
            file.joints = Some(p.joints());
            file.units = Some("meters".into());
            file.positions = Some(to_f64(p.to_flat()));
        }
        Track::Camera(c) => {
            file.frames = Some(c.frames());
            file.units = Some("scale,pixels,pixels".into());
            file.cameras = Some(to_f64(c.to_flat()));
        }
        Track::Detections(d) => {
            file.frames = Some(d.frames());
            file.joints = Some(d.joints());
            file.units = Some("pixels".into());
            file.pixels = Some(to_f64(d.pixels().iter().flatten().copied()));
            file.confidence = Some(to_f64(d.confidences().iter().copied()));
        }
    }
    let mut s = serde_json::to_string_pretty(&file).expect("track serializes");
    s.push('\n');
    s
}

fn json_error(text: &str, e: serde_json::Error) -> Error {
    // serde_json reports 1-based line and column; convert to a byte offset.
    let offset: usize = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + e.column().saturating_sub(1);
    Error::Format {
        offset: offset as u64,
        message: e.to_string(),
    }
}

pub fn decode_track<T: Scalar>(text: &str) -> Result<Track<T>> {
    let file: TrackFile = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
    let version = required(file.version, "version")?;
    if version != TRACK_VERSION {
        return Err(Error::schema("version", None, format!("unsupported version {version}")));
    }
    let kind = required(file.kind, "kind")?;
    let frames = required(file.frames, "frames")?;
    required(file.units.as_ref(), "units")?;
    match kind.as_str() {
        "pose" => {
            let joints = required(file.joints, "joints")?;
            let flat = required(file.positions, "positions")?;
            if flat.len() != frames * joints * 3 {
                return Err(Error::schema(
                    "positions",
                    None,
                    format!("expected {} values, got {}", frames * joints * 3, flat.len()),
                ));
            }
            Ok(Track::Pose(PoseTrack::from_flat(frames, joints, &from_f64::<T>(&flat))?))
        }
        "camera" => {
            let flat = required(file.cameras, "cameras")?;
            if flat.len() != frames * 3 {
                return Err(Error::schema("cameras", None, format!("expected {} values, got {}", frames * 3, flat.len())));
            }
            Ok(Track::Camera(CameraTrack::from_flat(&from_f64::<T>(&flat))?))
        }
        "detections" => {
            let joints = required(file.joints, "joints")?;
            let pixels = pairs::<T>(&required(file.pixels, "pixels")?, "pixels")?;
            let confidence = from_f64::<T>(&required(file.confidence, "confidence")?);
            Ok(Track::Detections(DetectionTrack::new(frames, joints, pixels, confidence)?))
        }
        other => Err(Error::schema("kind", None, format!("unknown track kind `{other}`"))),
    }
}

pub fn read_track<T: Scalar>(path: &Path) -> Result<Track<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_track(&text)
}

pub fn write_track<T: Scalar>(path: &Path, track: &Track<T>) -> Result<()> {
    super::write_atomic(path, encode_track(track).as_bytes())
}

fn wrong_kind(expected: &str, got: &str) -> Error {
    Error::schema("kind", None, format!("expected a {expected} track, found `{got}`"))
}

pub fn read_pose<T: Scalar>(path: &Path) -> Result<PoseTrack<T>> {
    match read_track(path)? {
        Track::Pose(p) => Ok(p),
        t => Err(wrong_kind("pose", t.kind())),
    }
}

pub fn read_camera<T: Scalar>(path: &Path) -> Result<CameraTrack<T>> {
    match read_track(path)? {
        Track::Camera(c) => Ok(c),
        t => Err(wrong_kind("camera", t.kind())),
    }
}

pub fn read_detections<T: Scalar>(path: &Path) -> Result<DetectionTrack<T>> {
    match read_track(path)? {
        Track::Detections(d) => Ok(d),
        t => Err(wrong_kind("detections", t.kind())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_confidence_is_named() {
        let text = r#"{"version":1,"kind":"detections","frames":1,"joints":1,"units":"pixels","pixels":[1.0,2.0]}"#;
        match decode_track::<f64>(text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "confidence"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_offset() {
        let text = "{\n  \"version\": 1,\n  oops\n}";
        match decode_track::<f64>(text) {
            Err(Error::Format { offset, .. }) => assert_eq!(&text[offset as usize..offset as usize + 1], "o"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn camera_roundtrip() {
        let c = CameraTrack::from_flat(&[1.5, 0.1, -3.0, 2.0, 1e-17, 64.0]).unwrap();
        let t = decode_track::<f64>(&encode_track(&Track::Camera(c.clone()))).unwrap();
        assert_eq!(t, Track::Camera(c));
    }
}
