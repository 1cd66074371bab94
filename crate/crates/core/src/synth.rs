//! Synthetic articulated scenes with exact ground truth, noise injection and
//! the evaluation metrics.
//!
//! Random draws come from `ChaCha8Rng` seeded with `seed_from_u64`, which is
//! portable across platforms, so generated scenes are reproducible bit for bit.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::pipeline::GroundTruth;
use crate::raster::{bone_flow, compose_target_flow, DEFAULT_RADIUS};
use crate::scalar::Scalar;
use crate::skeleton::{Camera, CameraTrack, DetectionTrack, Mode, PoseTrack, SceneBundle, SkeletonTopology, HUMAN17_BONES};

/// Child offsets (meters, y down) of the default skeleton's bones in rest pose.
const HUMAN17_REST: [[f64; 3]; 16] = [
    [-0.12, 0.02, 0.0],
    [0.0, 0.42, 0.02],
    [0.0, 0.42, -0.03],
    [0.12, 0.02, 0.0],
    [0.0, 0.42, 0.02],
    [0.0, 0.42, -0.03],
    [0.0, -0.25, 0.0],
    [0.0, -0.25, 0.02],
    [0.0, -0.12, -0.08],
    [0.0, -0.10, 0.04],
    [0.17, 0.03, 0.0],
    [0.05, 0.27, 0.0],
    [0.02, 0.25, 0.03],
    [-0.17, 0.03, 0.0],
    [-0.05, 0.27, 0.0],
    [-0.02, 0.25, 0.03],
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig<T> {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Joint swing amplitude in radians; also scales root and camera motion.
    pub amplitude: T,
    /// Constant flow of every non-body pixel.
    pub background: [T; 2],
    /// Thickening radius used to draw the ground-truth body flow.
    pub radius: usize,
}

impl<T: Scalar> SceneConfig<T> {
    pub fn new(seed: u64, frames: usize, width: usize, height: usize, amplitude: T) -> Self {
        Self {
            seed,
            frames,
            width,
            height,
            amplitude,
            background: [T::zero(); 2],
            radius: DEFAULT_RADIUS,
        }
    }
}

/// A scene whose pose, cameras, detections and flows are all exact.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthBundle<T> {
    pub bundle: SceneBundle<T>,
    pub background: [T; 2],
    pub radius: usize,
}

impl<T: Scalar> GroundTruthBundle<T> {
    pub fn reference(&self) -> GroundTruth<T> {
        GroundTruth::from_bundle(&self.bundle)
    }
}

/// Generates a scene with the default background (zero) and radius.
pub fn generate_scene<T: Scalar>(
    seed: u64,
    frames: usize,
    topo: &SkeletonTopology,
    width: usize,
    height: usize,
    amplitude: T,
) -> Result<GroundTruthBundle<T>> {
    generate_scene_with(&SceneConfig::new(seed, frames, width, height, amplitude), topo)
}

/// Smooth articulated motion: every bone of a spanning tree rooted at joint 0
/// keeps its rest length while its direction swings sinusoidally.
pub fn generate_scene_with<T: Scalar>(cfg: &SceneConfig<T>, topo: &SkeletonTopology) -> Result<GroundTruthBundle<T>> {
    if cfg.frames < 2 {
        return Err(Error::invalid("a scene needs at least two frames"));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::invalid("scene image dimensions must be positive"));
    }
    if !cfg.amplitude.is_finite() || cfg.amplitude < T::zero() {
        return Err(Error::invalid("motion amplitude must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let joints = topo.joint_count();
    let tree = spanning_tree(topo);
    let is_human17 = joints == 17 && topo.bones() == HUMAN17_BONES;

    // Rest offsets per tree edge (parent, child, offset).
    let mut edges: Vec<(usize, usize, [f64; 3], Oscillator)> = Vec::with_capacity(tree.len());
    for &(parent, child, bone) in &tree {
        let offset = if is_human17 {
            HUMAN17_REST[bone]
        } else {
            random_offset(&mut rng)
        };
        edges.push((parent, child, offset, Oscillator::draw(&mut rng)));
    }
    // Joints outside the bone graph ride along with the root.
    let mut loose = Vec::new();
    {
        let mut reached = vec![false; joints];
        reached[0] = true;
        for &(_, c, _) in &tree {
            reached[c] = true;
        }
        for (j, r) in reached.iter().enumerate() {
            if !r {
                loose.push((j, random_offset(&mut rng)));
            }
        }
    }
    let root_osc = Oscillator::draw(&mut rng);
    let cam_phase: [f64; 3] = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];

    let amp = cfg.amplitude.as_f64();
    let pose_at = |t: usize| -> Vec<[f64; 3]> {
        let tf = t as f64;
        let mut p = vec![[0.0; 3]; joints];
        let root = root_osc.angles(tf, 0.05 * amp);
        p[0] = root;
        for (parent, child, offset, osc) in &edges {
            let a = osc.angles(tf, amp);
            let d = rotate(*offset, a);
            let base = p[*parent];
            p[*child] = [base[0] + d[0], base[1] + d[1], base[2] + d[2]];
        }
        for (j, off) in &loose {
            p[*j] = [root[0] + off[0], root[1] + off[1], root[2] + off[2]];
        }
        p
    };

    let rest = pose_at(0);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &rest {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(0.1);
    let s0 = 0.6 * cfg.width.min(cfg.height) as f64 / extent;
    let center = [(lo[0] + hi[0]) * 0.5, (lo[1] + hi[1]) * 0.5];
    let tx0 = cfg.width as f64 * 0.5 - s0 * center[0];
    let ty0 = cfg.height as f64 * 0.5 - s0 * center[1];

    let mut positions = Vec::with_capacity(cfg.frames * joints);
    let mut cameras = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let tf = t as f64;
        positions.extend(pose_at(t).into_iter().map(|p| p.map(T::lit)));
        cameras.push(Camera::new(
            T::lit(s0 * (1.0 + 0.02 * amp * (0.3 * tf + cam_phase[0]).sin())),
            T::lit(tx0 + 2.0 * amp * (0.2 * tf + cam_phase[1]).sin()),
            T::lit(ty0 + 2.0 * amp * (0.25 * tf + cam_phase[2]).sin()),
        ));
    }
    let pose = PoseTrack::new(cfg.frames, joints, positions)?;
    let camera = CameraTrack::new(cameras)?;
    let detections = pose.project(&camera)?;
    let background = FlowField::constant(cfg.width, cfg.height, cfg.background)?;
    let flows = (0..cfg.frames - 1)
        .map(|t| {
            let bf = bone_flow(detections.frame(t), detections.frame(t + 1), topo, cfg.width, cfg.height, cfg.radius)?;
            Ok(compose_target_flow(&background, &bf)?.flow)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GroundTruthBundle {
        bundle: SceneBundle {
            topology: topo.clone(),
            width: cfg.width,
            height: cfg.height,
            mode: Mode::Mode3D,
            pose: Some(pose),
            camera: Some(camera),
            detections: Some(detections),
            joints2d: None,
            flows,
        },
        background: cfg.background,
        radius: cfg.radius,
    })
}

/// BFS spanning tree from joint 0 as `(parent, child, bone index)`.
fn spanning_tree(topo: &SkeletonTopology) -> Vec<(usize, usize, usize)> {
    let n = topo.joint_count();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (b, &(j, k)) in topo.bones().iter().enumerate() {
        adj[j].push((k, b));
        adj[k].push((j, b));
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    // Start at joint 0, or at the first bone's joint if 0 is isolated.
    let start = if adj[0].is_empty() {
        topo.bones().first().map_or(0, |b| b.0)
    } else {
        0
    };
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(j) = queue.pop_front() {
        for &(k, b) in &adj[j] {
            if !seen[k] {
                seen[k] = true;
                out.push((j, k, b));
                queue.push_back(k);
            }
        }
    }
    if start != 0 {
        // Keep joint 0 as the root reference; the bone graph floats next to it.
        out.insert(0, (0, start, usize::MAX));
    }
    out.into_iter()
        .map(|(p, c, b)| (p, c, if b == usize::MAX { 0 } else { b }))
        .collect()
}

fn random_offset(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let v: [f64; 3] = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
    let len = rng.random_range(0.15..0.35);
    [v[0] / n * len, v[1] / n * len, v[2] / n * len]
}

#[derive(Clone, Copy, Debug)]
struct Oscillator {
    weight: [f64; 3],
    freq: [f64; 3],
    phase: [f64; 3],
}

impl Oscillator {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut o = Oscillator {
            weight: [0.0; 3],
            freq: [0.0; 3],
            phase: [0.0; 3],
        };
        for a in 0..3 {
            o.weight[a] = rng.random_range(0.3..1.0);
            o.freq[a] = rng.random_range(0.2..0.6);
            o.phase[a] = rng.random_range(0.0..std::f64::consts::TAU);
        }
        o
    }

    /// Zero at every `t` when `scale == 0`; otherwise a smooth swing that is
    /// offset so `t = 0` is the rest configuration.
    fn angles(&self, t: f64, scale: f64) -> [f64; 3] {
        let mut a = [0.0; 3];
        for i in 0..3 {
            a[i] = scale * self.weight[i] * ((self.freq[i] * t + self.phase[i]).sin() - self.phase[i].sin());
        }
        a
    }
}

/// Applies `Rz * Ry * Rx` with the given angles.
fn rotate(v: [f64; 3], a: [f64; 3]) -> [f64; 3] {
    let (sx, cx) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sz, cz) = a[2].sin_cos();
    let v1 = [v[0], cx * v[1] - sx * v[2], sx * v[1] + cx * v[2]];
    let v2 = [cy * v1[0] + sy * v1[2], v1[1], -sy * v1[0] + cy * v1[2]];
    [cz * v2[0] - sz * v2[1], sz * v2[0] + cz * v2[1], v2[2]]
}

/// Rectangle of every flow field overwritten with a constant flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCorruption<T> {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub replacement: [T; 2],
}

impl<T: Scalar> FlowCorruption<T> {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig<T> {
    /// Per-coordinate standard deviation of joint noise, meters.
    pub pose_sigma: T,
    /// Standard deviation of `(s, tx, ty)` noise.
    pub camera_sigma: [T; 3],
    /// Per-coordinate detection noise, pixels.
    pub detection_sigma: T,
    pub flow_corruption: Option<FlowCorruption<T>>,
    pub seed: u64,
}

impl<T: Scalar> Default for NoiseConfig<T> {
    fn default() -> Self {
        Self {
            pose_sigma: T::zero(),
            camera_sigma: [T::zero(); 3],
            detection_sigma: T::zero(),
            flow_corruption: None,
            seed: 0,
        }
    }
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.pose_sigma, self.detection_sigma, self.camera_sigma[0], self.camera_sigma[1], self.camera_sigma[2]];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= T::zero())) {
            return Err(Error::invalid("noise sigmas must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Noisy estimates plus the exact reference they were drawn from.
#[derive(Clone, Debug)]
pub struct Perturbed<T> {
    pub estimate: SceneBundle<T>,
    pub reference: GroundTruth<T>,
}

pub fn perturb<T: Scalar>(gt: &GroundTruthBundle<T>, cfg: &NoiseConfig<T>) -> Result<Perturbed<T>> {
    Ok(Perturbed {
        estimate: perturb_bundle(&gt.bundle, cfg)?,
        reference: gt.reference(),
    })
}

/// Noisy copy of any bundle; tracks that are absent stay absent.
pub fn perturb_bundle<T: Scalar>(src: &SceneBundle<T>, cfg: &NoiseConfig<T>) -> Result<SceneBundle<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gauss = |sigma: T| -> T {
        if sigma == T::zero() {
            return T::zero();
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * T::lit(z)
    };
    let mut out = src.clone();
    if let Some(pose) = &src.pose {
        let positions = pose
            .positions()
            .iter()
            .map(|p| [p[0] + gauss(cfg.pose_sigma), p[1] + gauss(cfg.pose_sigma), p[2] + gauss(cfg.pose_sigma)])
            .collect();
        out.pose = Some(PoseTrack::new(pose.frames(), pose.joints(), positions)?);
    }
    if let Some(cam) = &src.camera {
        let cams = cam
            .cameras()
            .iter()
            .map(|c| {
                let s = c.s + gauss(cfg.camera_sigma[0]);
                Camera::new(s.max(c.s * T::lit(1e-3)), c.tx + gauss(cfg.camera_sigma[1]), c.ty + gauss(cfg.camera_sigma[2]))
            })
            .collect();
        out.camera = Some(CameraTrack::new(cams)?);
    }
    if let Some(det) = &src.detections {
        let pixels = det
            .pixels()
            .iter()
            .map(|p| [p[0] + gauss(cfg.detection_sigma), p[1] + gauss(cfg.detection_sigma)])
            .collect();
        out.detections = Some(DetectionTrack::new(det.frames(), det.joints(), pixels, det.confidences().to_vec())?);
    }
    if let Some(c) = &cfg.flow_corruption {
        for f in &mut out.flows {
            for y in c.y..(c.y + c.height).min(f.height()) {
                for x in c.x..(c.x + c.width).min(f.width()) {
                    f.set(x, y, c.replacement);
                }
            }
        }
    }
    Ok(out)
}

/// The standard desk-scale benchmark: 10 frames of the 17-joint skeleton at
/// 128x128, with the flow of the left forearm region wiped out.
#[derive(Clone, Debug)]
pub struct Benchmark<T> {
    pub ground_truth: GroundTruthBundle<T>,
    pub noise: NoiseConfig<T>,
}

pub const BENCHMARK_FRAMES: usize = 10;
pub const BENCHMARK_SIZE: usize = 128;
pub const BENCHMARK_AMPLITUDE: f64 = 0.3;
pub const BENCHMARK_CORRUPTION: usize = 32;

pub fn standard_benchmark<T: Scalar>(seed: u64) -> Result<Benchmark<T>> {
    let topo = SkeletonTopology::human17();
    let gt = generate_scene(seed, BENCHMARK_FRAMES, &topo, BENCHMARK_SIZE, BENCHMARK_SIZE, T::lit(BENCHMARK_AMPLITUDE))?;
    let det = gt.bundle.detections.as_ref().expect("generated scenes carry detections");
    let noise = benchmark_noise(det, BENCHMARK_SIZE, BENCHMARK_SIZE, gt.background, seed.wrapping_add(1))?;
    Ok(Benchmark { ground_truth: gt, noise })
}

/// Left elbow and wrist of the 17-joint skeleton.
pub const FOREARM: [usize; 2] = [12, 13];

/// Square of side `size` centred on the sequence-mean position of `joints`,
/// shifted to lie inside the image.
pub fn limb_corruption<T: Scalar>(
    det: &DetectionTrack<T>,
    joints: &[usize],
    width: usize,
    height: usize,
    size: usize,
    replacement: [T; 2],
) -> Result<FlowCorruption<T>> {
    if joints.is_empty() || joints.iter().any(|&j| j >= det.joints()) {
        return Err(Error::invalid("limb joints out of range"));
    }
    if size == 0 || size > width || size > height {
        return Err(Error::invalid("corruption square must fit inside the image"));
    }
    let mut c = [0.0f64; 2];
    for t in 0..det.frames() {
        for &j in joints {
            let p = det.get(t, j);
            c[0] += p[0].as_f64();
            c[1] += p[1].as_f64();
        }
    }
    let n = (joints.len() * det.frames()) as f64;
    let half = size as f64 / 2.0;
    let x = (c[0] / n - half).round().clamp(0.0, (width - size) as f64) as usize;
    let y = (c[1] / n - half).round().clamp(0.0, (height - size) as f64) as usize;
    Ok(FlowCorruption {
        x,
        y,
        width: size,
        height: size,
        replacement,
    })
}

/// Noise of the standard benchmark: 20 mm joints, 1 px detections and the
/// left-forearm flow replaced by `background`.
pub fn benchmark_noise<T: Scalar>(
    det: &DetectionTrack<T>,
    width: usize,
    height: usize,
    background: [T; 2],
    seed: u64,
) -> Result<NoiseConfig<T>> {
    Ok(NoiseConfig {
        pose_sigma: T::lit(0.02),
        camera_sigma: [T::zero(); 3],
        detection_sigma: T::lit(1.0),
        flow_corruption: Some(limb_corruption(det, &FOREARM, width, height, BENCHMARK_CORRUPTION, background)?),
        seed,
    })
}

// ---------------------------------------------------------------------------
// Metrics

/// Mean per-joint position error over frames and (optionally) a joint subset.
pub fn mpjpe<T: Scalar>(pred: &PoseTrack<T>, gt: &PoseTrack<T>, subset: Option<&[usize]>) -> Result<T> {
    if !pred.same_dims(gt) {
        return Err(Error::invalid("prediction and ground truth differ in shape"));
    }
    let all: Vec<usize>;
    let joints = match subset {
        Some(s) => {
            if let Some(i) = s.iter().position(|&j| j >= gt.joints()) {
                return Err(Error::schema("subset", Some(i), "joint index out of range"));
            }
            s
        }
        None => {
            all = (0..gt.joints()).collect();
            &all
        }
    };
    if joints.is_empty() {
        return Err(Error::invalid("empty joint subset"));
    }
    let mut total = T::zero();
    for t in 0..gt.frames() {
        for &j in joints {
            let (a, b) = (pred.get(t, j), gt.get(t, j));
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            total += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        }
    }
    Ok(total / T::from_usize_lossy(gt.frames() * joints.len()))
}

/// Mean 2D joint distance in pixels.
pub fn joint_error_2d<T: Scalar>(pred: &DetectionTrack<T>, gt: &DetectionTrack<T>, subset: Option<&[usize]>) -> Result<T> {
    if !pred.same_dims(gt) {
        return Err(Error::invalid("prediction and ground truth differ in shape"));
    }
    let joints: Vec<usize> = subset.map_or_else(|| (0..gt.joints()).collect(), <[usize]>::to_vec);
    if joints.iter().any(|&j| j >= gt.joints()) || joints.is_empty() {
        return Err(Error::invalid("bad joint subset"));
    }
    let mut total = T::zero();
    for t in 0..gt.frames() {
        for &j in &joints {
            let (a, b) = (pred.get(t, j), gt.get(t, j));
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        }
    }
    Ok(total / T::from_usize_lossy(gt.frames() * joints.len()))
}

/// End-point error over all pixels, or at the given (sub-pixel) locations.
pub fn epe<T: Scalar>(pred: &FlowField<T>, gt: &FlowField<T>, points: Option<&[[T; 2]]>) -> Result<T> {
    pred.ensure_same_dims(gt)?;
    match points {
        None => {
            let total: T = pred
                .data()
                .iter()
                .zip(gt.data())
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .sum();
            Ok(total / T::from_usize_lossy(pred.data().len()))
        }
        Some(pts) => {
            if pts.is_empty() {
                return Err(Error::invalid("no evaluation points"));
            }
            let (w, h) = (T::from_usize_lossy(pred.width() - 1), T::from_usize_lossy(pred.height() - 1));
            let mut total = T::zero();
            for (i, p) in pts.iter().enumerate() {
                if !(p[0] >= T::zero() && p[0] <= w && p[1] >= T::zero() && p[1] <= h) {
                    return Err(Error::invalid(format!("evaluation point {i} ({}, {}) is outside the image", p[0], p[1])));
                }
                let (a, b) = (pred.sample(p[0], p[1]).value, gt.sample(p[0], p[1]).value);
                total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            }
            Ok(total / T::from_usize_lossy(pts.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::bone_lengths;

    #[test]
    fn zero_amplitude_is_static_with_background_flow() {
        let topo = SkeletonTopology::human17();
        let gt = generate_scene_with(&SceneConfig::new(3, 4, 64, 64, 0.0), &topo).unwrap();
        let pose = gt.bundle.pose.as_ref().unwrap();
        for t in 1..4 {
            assert_eq!(pose.frame(t), pose.frame(0));
        }
        for f in &gt.bundle.flows {
            assert!(f.data().iter().all(|v| *v == [0.0, 0.0]));
        }

        // A static body over a moving background has zero flow on the body.
        let cfg = SceneConfig {
            background: [0.5, -0.25],
            ..SceneConfig::new(3, 4, 64, 64, 0.0)
        };
        let gt = generate_scene_with(&cfg, &topo).unwrap();
        let j = gt.bundle.current_joints2d().unwrap();
        let mask = crate::raster::rasterize_skeleton(j.frame(0), &topo, 64, 64, gt.radius).unwrap().mask();
        for f in &gt.bundle.flows {
            for y in 0..64 {
                for x in 0..64 {
                    let want = if mask.get(x, y) { [0.0, 0.0] } else { [0.5, -0.25] };
                    assert_eq!(f.get(x, y), want);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let topo = SkeletonTopology::chain(5).unwrap();
        let a = generate_scene::<f64>(11, 5, &topo, 48, 40, 0.4).unwrap();
        let b = generate_scene::<f64>(11, 5, &topo, 48, 40, 0.4).unwrap();
        assert_eq!(a, b);
        let c = generate_scene::<f64>(12, 5, &topo, 48, 40, 0.4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bone_lengths_are_constant() {
        for topo in [SkeletonTopology::human17(), SkeletonTopology::chain(6).unwrap()] {
            let gt = generate_scene::<f64>(5, 12, &topo, 128, 128, 0.5).unwrap();
            let pose = gt.bundle.pose.as_ref().unwrap();
            let l0 = bone_lengths(pose, &topo, 0).unwrap();
            for t in 1..12 {
                for (a, b) in bone_lengths(pose, &topo, t).unwrap().iter().zip(&l0) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn degenerate_scenes_rejected() {
        let topo = SkeletonTopology::chain(3).unwrap();
        assert!(generate_scene::<f64>(0, 1, &topo, 32, 32, 0.1).is_err());
        assert!(generate_scene::<f64>(0, 3, &topo, 0, 32, 0.1).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let topo = SkeletonTopology::human17();
        let gt = generate_scene::<f64>(2, 3, &topo, 64, 64, 0.3).unwrap();
        let p = perturb(&gt, &NoiseConfig::default()).unwrap();
        assert_eq!(p.estimate, gt.bundle);
    }

    #[test]
    fn corruption_is_local() {
        let topo = SkeletonTopology::human17();
        let gt = generate_scene::<f64>(2, 3, &topo, 64, 64, 0.3).unwrap();
        let region = FlowCorruption {
            x: 10,
            y: 20,
            width: 16,
            height: 8,
            replacement: [4.0, 4.0],
        };
        let p = perturb(
            &gt,
            &NoiseConfig {
                flow_corruption: Some(region),
                ..Default::default()
            },
        )
        .unwrap();
        for (est, truth) in p.estimate.flows.iter().zip(&gt.bundle.flows) {
            let outside: Vec<[f64; 2]> = (0..64)
                .flat_map(|y| (0..64).map(move |x| (x, y)))
                .filter(|&(x, y)| !region.contains(x, y))
                .map(|(x, y)| [x as f64, y as f64])
                .collect();
            assert_eq!(epe(est, truth, Some(&outside)).unwrap(), 0.0);
            assert!(epe(est, truth, None).unwrap() > 0.0);
        }
    }

    #[test]
    fn metric_examples() {
        let a = PoseTrack::new(1, 1, vec![[0.0f64, 0.0, 0.0]]).unwrap();
        let b = PoseTrack::new(1, 1, vec![[0.03, 0.0, 0.0]]).unwrap();
        assert_eq!(mpjpe(&a, &a, None).unwrap(), 0.0);
        assert!((mpjpe(&a, &b, None).unwrap() - 0.03).abs() < 1e-15);
        let f = FlowField::zeros(4, 4).unwrap();
        let g = FlowField::constant(4, 4, [3.0, 4.0]).unwrap();
        assert_eq!(epe(&f, &f, None).unwrap(), 0.0);
        assert_eq!(epe(&f, &g, None).unwrap(), 5.0);
        assert_eq!(epe(&f, &g, Some(&[[1.5, 2.25]])).unwrap(), 5.0);
        assert!(epe(&f, &g, Some(&[[4.5, 0.0]])).is_err());
    }
}
