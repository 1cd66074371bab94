//! Skeleton topology, joint/camera/detection tracks and the weak-perspective
//! camera model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::scalar::Scalar;

/// Joint names of the default 17-joint skeleton.
pub const HUMAN17_NAMES: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "neck",
    "nose",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

/// Bones of the default skeleton. The face is modelled with head-nose and
/// nose-neck instead of a single head-neck bone.
pub const HUMAN17_BONES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

/// The usual fourteen evaluation joints (limbs, neck and head) of [`HUMAN17_NAMES`].
pub const HUMAN17_COMMON14: [usize; 14] = [3, 2, 1, 4, 5, 6, 16, 15, 14, 11, 12, 13, 8, 10];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology")]
pub struct SkeletonTopology {
    joint_count: usize,
    bones: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_subset: Option<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawTopology {
    joint_count: usize,
    bones: Vec<(usize, usize)>,
    #[serde(default)]
    names: Option<Vec<String>>,
    #[serde(default)]
    eval_subset: Option<Vec<usize>>,
}

impl TryFrom<RawTopology> for SkeletonTopology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        let topo = SkeletonTopology::new(raw.joint_count, raw.bones)?;
        let topo = match raw.names {
            Some(n) => topo.with_names(n)?,
            None => topo,
        };
        match raw.eval_subset {
            Some(s) => topo.with_eval_subset(s),
            None => Ok(topo),
        }
    }
}

impl SkeletonTopology {
    pub fn new(joint_count: usize, bones: Vec<(usize, usize)>) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        let mut seen = BTreeSet::new();
        for (i, &(j, k)) in bones.iter().enumerate() {
            if j >= joint_count || k >= joint_count {
                return Err(Error::schema("bones", Some(i), format!("joint index out of range for {joint_count} joints")));
            }
            if j == k {
                return Err(Error::schema("bones", Some(i), "bone connects a joint to itself"));
            }
            if !seen.insert((j.min(k), j.max(k))) {
                return Err(Error::schema("bones", Some(i), "duplicate bone"));
            }
        }
        if !bones_connected(joint_count, &bones) {
            return Err(Error::invalid("bone list does not form a connected graph"));
        }
        Ok(Self {
            joint_count,
            bones,
            names: None,
            eval_subset: None,
        })
    }

    /// The default 17-joint human skeleton. `eval_subset` is left unset, so
    /// metrics use every joint; see [`HUMAN17_COMMON14`].
    pub fn human17() -> Self {
        Self::new(17, HUMAN17_BONES.to_vec())
            .and_then(|t| t.with_names(HUMAN17_NAMES.iter().map(|s| s.to_string()).collect()))
            .expect("built-in topology is valid")
    }

    /// A simple open chain `0-1-2-...-(n-1)`.
    pub fn chain(joint_count: usize) -> Result<Self> {
        Self::new(joint_count, (1..joint_count).map(|k| (k - 1, k)).collect())
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.joint_count {
            return Err(Error::schema("names", None, format!("expected {} names, got {}", self.joint_count, names.len())));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn with_eval_subset(mut self, subset: Vec<usize>) -> Result<Self> {
        if let Some(i) = subset.iter().position(|&j| j >= self.joint_count) {
            return Err(Error::schema("eval_subset", Some(i), "joint index out of range"));
        }
        self.eval_subset = Some(subset);
        Ok(self)
    }

    #[inline]
    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    #[inline]
    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn eval_subset(&self) -> Option<&[usize]> {
        self.eval_subset.as_deref()
    }
}

fn bones_connected(joint_count: usize, bones: &[(usize, usize)]) -> bool {
    if bones.is_empty() {
        return true;
    }
    let mut parent: Vec<usize> = (0..joint_count).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(j, k) in bones {
        let (a, b) = (find(&mut parent, j), find(&mut parent, k));
        parent[a] = b;
    }
    let root = find(&mut parent, bones[0].0);
    bones
        .iter()
        .flat_map(|&(j, k)| [j, k])
        .all(|j| find(&mut parent, j) == root)
}

/// Weak-perspective camera: uniform scale (pixels per meter) and a 2D offset in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub s: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Scalar> Camera<T> {
    pub fn new(s: T, tx: T, ty: T) -> Self {
        Self { s, tx, ty }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.s, self.tx, self.ty]
    }

    pub fn from_array(v: [T; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_valid(&self) -> bool {
        self.s.is_finite() && self.tx.is_finite() && self.ty.is_finite() && self.s > T::zero()
    }

    /// Projects without validation.
    #[inline]
    pub fn apply(&self, p: &[T; 3]) -> [T; 2] {
        [self.s * p[0] + self.tx, self.s * p[1] + self.ty]
    }
}

/// Projects a 3D point with a weak-perspective camera.
pub fn project<T: Scalar>(point: [T; 3], cam: Camera<T>) -> Result<[T; 2]> {
    if !point.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite 3D point"));
    }
    if !cam.is_valid() {
        return Err(Error::invalid("camera must be finite with s > 0"));
    }
    Ok(cam.apply(&point))
}

/// Analytic partial derivatives of [`project`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionPartials<T> {
    /// `d(u, v) / d(x, y)` is `scale * I`; z has no effect.
    pub d_point: T,
    pub d_s: [T; 2],
    pub d_tx: [T; 2],
    pub d_ty: [T; 2],
}

pub fn project_partials<T: Scalar>(point: [T; 3], cam: Camera<T>) -> ProjectionPartials<T> {
    let (o, z) = (T::one(), T::zero());
    ProjectionPartials {
        d_point: cam.s,
        d_s: [point[0], point[1]],
        d_tx: [o, z],
        d_ty: [z, o],
    }
}

/// 3D joint positions (meters) over time, stored frame-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrack<T> {
    frames: usize,
    joints: usize,
    positions: Vec<[T; 3]>,
}

impl<T: Scalar> PoseTrack<T> {
    pub fn new(frames: usize, joints: usize, positions: Vec<[T; 3]>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::invalid("pose track needs at least one frame and one joint"));
        }
        if positions.len() != frames * joints {
            return Err(Error::schema(
                "positions",
                None,
                format!("expected {} joints ({frames}x{joints}), got {}", frames * joints, positions.len()),
            ));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::schema("positions", Some(i), "non-finite coordinate"));
        }
        Ok(Self { frames, joints, positions })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn joints(&self) -> usize {
        self.joints
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> [T; 3] {
        self.positions[t * self.joints + j]
    }

    pub fn frame(&self, t: usize) -> &[[T; 3]] {
        &self.positions[t * self.joints..(t + 1) * self.joints]
    }

    pub fn positions(&self) -> &[[T; 3]] {
        &self.positions
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.frames == other.frames && self.joints == other.joints
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.positions.iter().flatten().copied().collect()
    }

    pub fn from_flat(frames: usize, joints: usize, flat: &[T]) -> Result<Self> {
        if flat.len() != frames * joints * 3 {
            return Err(Error::invalid("flat pose buffer has wrong length"));
        }
        Self::new(frames, joints, flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Projects every joint with its frame's camera.
    pub fn project(&self, cameras: &CameraTrack<T>) -> Result<DetectionTrack<T>> {
        if cameras.frames() != self.frames {
            return Err(Error::invalid("camera track length does not match pose track"));
        }
        let pixels = (0..self.frames)
            .flat_map(|t| {
                let cam = cameras.get(t);
                self.frame(t).iter().map(move |p| cam.apply(p))
            })
            .collect();
        DetectionTrack::new(self.frames, self.joints, pixels, vec![T::one(); self.frames * self.joints])
    }
}

/// Per-frame weak-perspective cameras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraTrack<T> {
    cameras: Vec<Camera<T>>,
}

impl<T: Scalar> CameraTrack<T> {
    pub fn new(cameras: Vec<Camera<T>>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("camera track needs at least one frame"));
        }
        if let Some(i) = cameras.iter().position(|c| !c.is_valid()) {
            return Err(Error::schema("cameras", Some(i), "camera must be finite with s > 0"));
        }
        Ok(Self { cameras })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.cameras.len()
    }

    #[inline]
    pub fn get(&self, t: usize) -> Camera<T> {
        self.cameras[t]
    }

    pub fn cameras(&self) -> &[Camera<T>] {
        &self.cameras
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.cameras.iter().flat_map(|c| c.to_array()).collect()
    }

    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::invalid("flat camera buffer length must be a multiple of 3"));
        }
        Self::new(flat.chunks_exact(3).map(|c| Camera::new(c[0], c[1], c[2])).collect())
    }
}

/// 2D joint pixels with per-joint confidences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrack<T> {
    frames: usize,
    joints: usize,
    pixels: Vec<[T; 2]>,
    confidence: Vec<T>,
}

impl<T: Scalar> DetectionTrack<T> {
    pub fn new(frames: usize, joints: usize, pixels: Vec<[T; 2]>, confidence: Vec<T>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::invalid("detection track needs at least one frame and one joint"));
        }
        let n = frames * joints;
        if pixels.len() != n {
            return Err(Error::schema("pixels", None, format!("expected {n} entries, got {}", pixels.len())));
        }
        if confidence.len() != n {
            return Err(Error::schema("confidence", None, format!("expected {n} entries, got {}", confidence.len())));
        }
        if let Some(i) = pixels.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::schema("pixels", Some(i), "non-finite coordinate"));
        }
        if let Some(i) = confidence.iter().position(|&w| !(w >= T::zero() && w <= T::one())) {
            return Err(Error::schema("confidence", Some(i), "confidence must lie in [0, 1]"));
        }
        Ok(Self {
            frames,
            joints,
            pixels,
            confidence,
        })
    }

    /// Detections with confidence one everywhere.
    pub fn certain(frames: usize, joints: usize, pixels: Vec<[T; 2]>) -> Result<Self> {
        Self::new(frames, joints, pixels, vec![T::one(); frames * joints])
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn joints(&self) -> usize {
        self.joints
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> [T; 2] {
        self.pixels[t * self.joints + j]
    }

    #[inline]
    pub fn confidence(&self, t: usize, j: usize) -> T {
        self.confidence[t * self.joints + j]
    }

    pub fn frame(&self, t: usize) -> &[[T; 2]] {
        &self.pixels[t * self.joints..(t + 1) * self.joints]
    }

    pub fn pixels(&self) -> &[[T; 2]] {
        &self.pixels
    }

    pub fn confidences(&self) -> &[T] {
        &self.confidence
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.frames == other.frames && self.joints == other.joints
    }

    /// Same confidences, new pixel positions.
    pub fn with_pixels(&self, pixels: Vec<[T; 2]>) -> Result<Self> {
        Self::new(self.frames, self.joints, pixels, self.confidence.clone())
    }
}

/// Euclidean length of every bone at frame `t`, in bone-list order.
pub fn bone_lengths<T: Scalar>(pose: &PoseTrack<T>, topo: &SkeletonTopology, t: usize) -> Result<Vec<T>> {
    if t >= pose.frames() {
        return Err(Error::Index {
            index: t,
            len: pose.frames(),
        });
    }
    if pose.joints() != topo.joint_count() {
        return Err(Error::invalid("pose joint count does not match topology"));
    }
    let frame = pose.frame(t);
    Ok(topo
        .bones()
        .iter()
        .map(|&(j, k)| norm3(sub3(frame[j], frame[k])))
        .collect())
}

/// Element-wise mean of two pose tracks.
pub fn average_tracks<T: Scalar>(a: &PoseTrack<T>, b: &PoseTrack<T>) -> Result<PoseTrack<T>> {
    if !a.same_dims(b) {
        return Err(Error::invalid("pose track dimension mismatch"));
    }
    let half = T::lit(0.5);
    let positions = a
        .positions
        .iter()
        .zip(&b.positions)
        .map(|(p, q)| [(p[0] + q[0]) * half, (p[1] + q[1]) * half, (p[2] + q[2]) * half])
        .collect();
    PoseTrack::new(a.frames, a.joints, positions)
}

pub fn average_cameras<T: Scalar>(a: &CameraTrack<T>, b: &CameraTrack<T>) -> Result<CameraTrack<T>> {
    if a.frames() != b.frames() {
        return Err(Error::invalid("camera track length mismatch"));
    }
    let half = T::lit(0.5);
    CameraTrack::new(
        a.cameras
            .iter()
            .zip(&b.cameras)
            .map(|(p, q)| Camera::new((p.s + q.s) * half, (p.tx + q.tx) * half, (p.ty + q.ty) * half))
            .collect(),
    )
}

/// Mean of pixel positions and of confidences.
pub fn average_detections<T: Scalar>(a: &DetectionTrack<T>, b: &DetectionTrack<T>) -> Result<DetectionTrack<T>> {
    if !a.same_dims(b) {
        return Err(Error::invalid("detection track dimension mismatch"));
    }
    let half = T::lit(0.5);
    let pixels = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| [(p[0] + q[0]) * half, (p[1] + q[1]) * half])
        .collect();
    let confidence = a.confidence.iter().zip(&b.confidence).map(|(&p, &q)| (p + q) * half).collect();
    DetectionTrack::new(a.frames, a.joints, pixels, confidence)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    #[serde(rename = "3d")]
    Mode3D,
    #[serde(rename = "2d")]
    Mode2D,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Mode3D => "3d",
            Mode::Mode2D => "2d",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(Mode::Mode3D),
            "2d" => Ok(Mode::Mode2D),
            other => Err(Error::invalid(format!("unknown mode `{other}` (expected 3d or 2d)"))),
        }
    }
}

/// Everything the pipeline consumes and produces for one scene.
///
/// `detections` are the fixed output of a 2D joint detector. `joints2d` holds
/// the current 2D joint estimates in 2D mode; when absent the detections are
/// used.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle<T> {
    pub topology: SkeletonTopology,
    pub width: usize,
    pub height: usize,
    pub mode: Mode,
    pub pose: Option<PoseTrack<T>>,
    pub camera: Option<CameraTrack<T>>,
    pub detections: Option<DetectionTrack<T>>,
    pub joints2d: Option<DetectionTrack<T>>,
    pub flows: Vec<FlowField<T>>,
}

impl<T: Scalar> SceneBundle<T> {
    /// Number of frames implied by the flow list.
    pub fn frames(&self) -> usize {
        self.flows.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene must have positive image dimensions"));
        }
        let frames = self.frames();
        let joints = self.topology.joint_count();
        if let Some(i) = self.flows.iter().position(|f| f.dims() != (self.width, self.height)) {
            return Err(Error::schema("flows", Some(i), "flow field does not match image dimensions"));
        }
        match self.mode {
            Mode::Mode3D => {
                if self.pose.is_none() || self.camera.is_none() {
                    return Err(Error::invalid("3d mode requires pose and camera tracks"));
                }
            }
            Mode::Mode2D => {
                if self.detections.is_none() {
                    return Err(Error::invalid("2d mode requires detections"));
                }
            }
        }
        if let Some(p) = &self.pose {
            if p.frames() != frames || p.joints() != joints {
                return Err(Error::invalid(format!(
                    "pose track is {}x{}, expected {frames}x{joints} (flows imply {frames} frames)",
                    p.frames(),
                    p.joints()
                )));
            }
        }
        if let Some(c) = &self.camera {
            if c.frames() != frames {
                return Err(Error::invalid("camera track length does not match frame count"));
            }
        }
        for (name, d) in [("detections", &self.detections), ("joints2d", &self.joints2d)] {
            if let Some(d) = d {
                if d.frames() != frames || d.joints() != joints {
                    return Err(Error::invalid(format!("{name} track is {}x{}, expected {frames}x{joints}", d.frames(), d.joints())));
                }
            }
        }
        Ok(())
    }

    /// Current 2D joint positions: projected pose in 3D mode, refined 2D
    /// joints (or detections) in 2D mode.
    pub fn current_joints2d(&self) -> Result<DetectionTrack<T>> {
        match self.mode {
            Mode::Mode3D => {
                let pose = self.pose.as_ref().ok_or_else(|| Error::invalid("missing pose"))?;
                let cam = self.camera.as_ref().ok_or_else(|| Error::invalid("missing camera"))?;
                pose.project(cam)
            }
            Mode::Mode2D => self
                .joints2d
                .as_ref()
                .or(self.detections.as_ref())
                .cloned()
                .ok_or_else(|| Error::invalid("missing detections")),
        }
    }
}

#[inline]
pub(crate) fn sub3<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm3<T: Scalar>(v: [T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
