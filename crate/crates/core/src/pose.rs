//! Pose refinement against optical flow, detections, the initial estimate
//! and temporal/bone-length consistency.
//!
//! Every term is an arithmetic mean of smooth-L1 penalties over its index set,
//! with closed-form gradients w.r.t. joint positions and cameras. The 2D
//! variant optimizes pixel positions directly and drops the camera term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::optim::{AdamState, SmoothL1};
use crate::scalar::Scalar;
use crate::skeleton::{Camera, CameraTrack, DetectionTrack, PoseTrack, SkeletonTopology};

const BONE_EPS: f64 = 1e-12;

/// Transition points of the smooth-L1 penalty of each term, in the term's unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct LossBetas<T> {
    /// pixels
    pub flow: T,
    /// meters
    pub joints3d: T,
    /// pixels; also used for every term of the 2D variant except the flow term
    pub joints2d: T,
    /// meters
    pub position: T,
    pub camera: T,
    /// meters
    pub bone: T,
}

impl<T: Scalar> Default for LossBetas<T> {
    fn default() -> Self {
        let one = T::one();
        Self {
            flow: one,
            joints3d: one,
            joints2d: one,
            position: one,
            camera: one,
            bone: one,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PoseHyperParams<T> {
    pub lambda_opt: T,
    pub lambda_3d: T,
    pub lambda_2d: T,
    pub lambda_pos: T,
    pub lambda_cam: T,
    pub lambda_bone: T,
    pub lr: T,
    pub epochs: usize,
    pub betas: LossBetas<T>,
    /// Treat the flow sampled at the previous projection as a constant.
    pub detach_flow_sampling: bool,
    /// Keep the bone-length term in the 2D variant (lengths in pixels).
    pub bone_term_2d: bool,
}

impl<T: Scalar> Default for PoseHyperParams<T> {
    fn default() -> Self {
        Self {
            lambda_opt: T::lit(0.01),
            lambda_3d: T::lit(400.0),
            lambda_2d: T::lit(0.01),
            lambda_pos: T::lit(300.0),
            lambda_cam: T::lit(0.1),
            lambda_bone: T::lit(1e4),
            lr: T::lit(0.001),
            epochs: 1500,
            betas: LossBetas::default(),
            detach_flow_sampling: false,
            bone_term_2d: true,
        }
    }
}

impl<T: Scalar> PoseHyperParams<T> {
    /// All weights zero; useful as a base for ablations.
    pub fn zero_weights(&self) -> Self {
        let z = T::zero();
        Self {
            lambda_opt: z,
            lambda_3d: z,
            lambda_2d: z,
            lambda_pos: z,
            lambda_cam: z,
            lambda_bone: z,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_opt", self.lambda_opt),
            ("lambda_3d", self.lambda_3d),
            ("lambda_2d", self.lambda_2d),
            ("lambda_pos", self.lambda_pos),
            ("lambda_cam", self.lambda_cam),
            ("lambda_bone", self.lambda_bone),
        ];
        for (name, w) in weights {
            if !(w >= T::zero() && w.is_finite()) {
                return Err(Error::schema(name, None, "weight must be finite and non-negative"));
            }
        }
        if !(self.lr >= T::zero() && self.lr.is_finite()) {
            return Err(Error::schema("lr", None, "learning rate must be finite and non-negative"));
        }
        let b = self.betas;
        for (name, v) in [
            ("betas.flow", b.flow),
            ("betas.joints3d", b.joints3d),
            ("betas.joints2d", b.joints2d),
            ("betas.position", b.position),
            ("betas.camera", b.camera),
            ("betas.bone", b.bone),
        ] {
            SmoothL1::new(v).map_err(|_| Error::schema(name, None, "beta must be positive"))?;
        }
        Ok(())
    }
}

/// Facts about an evaluation point that matter for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics<T> {
    /// Flow samples whose location fell outside the image.
    pub clamped_samples: usize,
    /// Smallest distance of any residual component from the smooth-L1 transition.
    pub min_kink_gap: T,
    /// Smallest distance of any flow sampling coordinate from an integer pixel line.
    pub min_cell_gap: T,
    pub min_bone_length: T,
}

impl<T: Scalar> Default for Diagnostics<T> {
    fn default() -> Self {
        Self {
            clamped_samples: 0,
            min_kink_gap: T::infinity(),
            min_cell_gap: T::infinity(),
            min_bone_length: T::infinity(),
        }
    }
}

impl<T: Scalar> Diagnostics<T> {
    pub fn merge(&mut self, other: &Self) {
        self.clamped_samples += other.clamped_samples;
        self.min_kink_gap = self.min_kink_gap.min(other.min_kink_gap);
        self.min_cell_gap = self.min_cell_gap.min(other.min_cell_gap);
        self.min_bone_length = self.min_bone_length.min(other.min_bone_length);
    }

    fn kink(&mut self, pen: &SmoothL1<T>, r: &[T]) {
        for &c in r {
            self.min_kink_gap = self.min_kink_gap.min(pen.kink_gap(c));
        }
    }
}

/// One loss term's value with gradients w.r.t. all joints and cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue<T> {
    pub value: T,
    pub grad_pose: Vec<[T; 3]>,
    pub grad_camera: Vec<[T; 3]>,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Scalar> TermValue<T> {
    fn zero(points: usize, frames: usize) -> Self {
        Self {
            value: T::zero(),
            grad_pose: vec![[T::zero(); 3]; points],
            grad_camera: vec![[T::zero(); 3]; frames],
            diagnostics: Diagnostics::default(),
        }
    }

    /// `self += weight * other`
    fn add_scaled(&mut self, weight: T, other: &Self) {
        self.value += weight * other.value;
        for (a, b) in self.grad_pose.iter_mut().zip(&other.grad_pose) {
            for c in 0..3 {
                a[c] += weight * b[c];
            }
        }
        for (a, b) in self.grad_camera.iter_mut().zip(&other.grad_camera) {
            for c in 0..3 {
                a[c] += weight * b[c];
            }
        }
        self.diagnostics.merge(&other.diagnostics);
    }

    /// Flat gradient laid out as `[pose..., camera...]`.
    pub fn flat_gradient(&self) -> Vec<T> {
        self.grad_pose
            .iter()
            .flatten()
            .chain(self.grad_camera.iter().flatten())
            .copied()
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Kernels over point arrays. Each returns (mean value, gradient per point).

/// Flow consistency of consecutive 2D joint positions.
fn flow_kernel<T: Scalar>(
    points: &[[T; 2]],
    frames: usize,
    joints: usize,
    flows: &[FlowField<T>],
    pen: &SmoothL1<T>,
    detach: bool,
    diag: &mut Diagnostics<T>,
) -> (T, Vec<[T; 2]>) {
    let mut grad = vec![[T::zero(); 2]; points.len()];
    if frames < 2 || joints == 0 {
        return (T::zero(), grad);
    }
    let n = T::from_usize_lossy((frames - 1) * joints);
    let mut value = T::zero();
    for t in 1..frames {
        let flow = &flows[t - 1];
        let max = [T::from_usize_lossy(flow.width() - 1), T::from_usize_lossy(flow.height() - 1)];
        for j in 0..joints {
            let ip = (t - 1) * joints + j;
            let iq = t * joints + j;
            let p = points[ip];
            let q = points[iq];
            let s = flow.sample(p[0], p[1]);
            if s.clamped {
                diag.clamped_samples += 1;
            }
            for a in 0..2 {
                let gap = if p[a] < T::zero() {
                    -p[a]
                } else if p[a] > max[a] {
                    p[a] - max[a]
                } else {
                    (p[a] - p[a].round()).abs()
                };
                diag.min_cell_gap = diag.min_cell_gap.min(gap);
            }
            let r = [s.value[0] - (q[0] - p[0]), s.value[1] - (q[1] - p[1])];
            diag.kink(pen, &r);
            let mut g = [T::zero(); 2];
            value += pen.accumulate(r, &mut g);
            let g = [g[0] / n, g[1] / n];
            for a in 0..2 {
                let mut dp = g[a];
                if !detach {
                    dp += g[0] * s.jacobian[0][a] + g[1] * s.jacobian[1][a];
                }
                grad[ip][a] += dp;
                grad[iq][a] -= g[a];
            }
        }
    }
    (value / n, grad)
}

/// Mean (optionally weighted) penalty of `x - anchor`.
fn deviation_kernel<T: Scalar, const N: usize>(
    x: &[[T; N]],
    anchor: &[[T; N]],
    weights: Option<&[T]>,
    pen: &SmoothL1<T>,
    diag: &mut Diagnostics<T>,
) -> (T, Vec<[T; N]>) {
    let mut grad = vec![[T::zero(); N]; x.len()];
    if x.is_empty() {
        return (T::zero(), grad);
    }
    let n = T::from_usize_lossy(x.len());
    let mut value = T::zero();
    for i in 0..x.len() {
        let w = weights.map_or(T::one(), |w| w[i]);
        let mut r = [T::zero(); N];
        for c in 0..N {
            r[c] = x[i][c] - anchor[i][c];
        }
        if w > T::zero() {
            diag.kink(pen, &r);
        }
        let mut g = [T::zero(); N];
        value += w * pen.accumulate(r, &mut g);
        for c in 0..N {
            grad[i][c] = w * g[c] / n;
        }
    }
    (value / n, grad)
}

/// Mean penalty of frame-to-frame changes.
fn temporal_kernel<T: Scalar, const N: usize>(
    x: &[[T; N]],
    frames: usize,
    per_frame: usize,
    pen: &SmoothL1<T>,
    diag: &mut Diagnostics<T>,
) -> (T, Vec<[T; N]>) {
    let mut grad = vec![[T::zero(); N]; x.len()];
    if frames < 2 || per_frame == 0 {
        return (T::zero(), grad);
    }
    let n = T::from_usize_lossy((frames - 1) * per_frame);
    let mut value = T::zero();
    for t in 1..frames {
        for j in 0..per_frame {
            let (ia, ib) = (t * per_frame + j, (t - 1) * per_frame + j);
            let mut r = [T::zero(); N];
            for c in 0..N {
                r[c] = x[ia][c] - x[ib][c];
            }
            diag.kink(pen, &r);
            let mut g = [T::zero(); N];
            value += pen.accumulate(r, &mut g);
            for c in 0..N {
                grad[ia][c] += g[c] / n;
                grad[ib][c] -= g[c] / n;
            }
        }
    }
    (value / n, grad)
}

/// Mean penalty of frame-to-frame bone length changes.
fn bone_kernel<T: Scalar, const N: usize>(
    x: &[[T; N]],
    frames: usize,
    joints: usize,
    bones: &[(usize, usize)],
    pen: &SmoothL1<T>,
    diag: &mut Diagnostics<T>,
) -> (T, Vec<[T; N]>) {
    let mut grad = vec![[T::zero(); N]; x.len()];
    if frames < 2 || bones.is_empty() {
        return (T::zero(), grad);
    }
    let eps = T::lit(BONE_EPS);
    let length = |t: usize, j: usize, k: usize| {
        let (a, b) = (x[t * joints + j], x[t * joints + k]);
        let mut d = [T::zero(); N];
        let mut s = T::zero();
        for c in 0..N {
            d[c] = a[c] - b[c];
            s += d[c] * d[c];
        }
        (s.sqrt(), d)
    };
    let n = T::from_usize_lossy((frames - 1) * bones.len());
    let mut value = T::zero();
    for t in 1..frames {
        for &(j, k) in bones {
            let (lc, dc) = length(t, j, k);
            let (lp, dp) = length(t - 1, j, k);
            diag.min_bone_length = diag.min_bone_length.min(lc).min(lp);
            let r = lc - lp;
            diag.kink(pen, &[r]);
            value += pen.value(r);
            let g = pen.grad(r) / n;
            let (ic, ip) = (g / lc.max(eps), g / lp.max(eps));
            for c in 0..N {
                grad[t * joints + j][c] += ic * dc[c];
                grad[t * joints + k][c] -= ic * dc[c];
                grad[(t - 1) * joints + j][c] -= ip * dp[c];
                grad[(t - 1) * joints + k][c] += ip * dp[c];
            }
        }
    }
    (value / n, grad)
}

fn project_all<T: Scalar>(pose: &PoseTrack<T>, cams: &CameraTrack<T>) -> Vec<[T; 2]> {
    (0..pose.frames())
        .flat_map(|t| {
            let cam = cams.get(t);
            pose.frame(t).iter().map(move |p| cam.apply(p))
        })
        .collect()
}

/// Chains pixel-space gradients through the weak-perspective projection.
fn backprop_projection<T: Scalar>(pose: &PoseTrack<T>, cams: &CameraTrack<T>, grad_px: &[[T; 2]], out: &mut TermValue<T>) {
    let joints = pose.joints();
    for t in 0..pose.frames() {
        let Camera { s, .. } = cams.get(t);
        for j in 0..joints {
            let i = t * joints + j;
            let g = grad_px[i];
            let x = pose.get(t, j);
            out.grad_pose[i][0] += s * g[0];
            out.grad_pose[i][1] += s * g[1];
            let gc = &mut out.grad_camera[t];
            gc[0] += g[0] * x[0] + g[1] * x[1];
            gc[1] += g[0];
            gc[2] += g[1];
        }
    }
}

fn check_cameras<T: Scalar>(pose: &PoseTrack<T>, cams: &CameraTrack<T>) -> Result<()> {
    if cams.frames() != pose.frames() {
        return Err(Error::invalid(format!(
            "{} cameras for {} frames",
            cams.frames(),
            pose.frames()
        )));
    }
    Ok(())
}

fn check_flows<T: Scalar>(frames: usize, flows: &[FlowField<T>]) -> Result<()> {
    if frames < 2 {
        return Err(Error::invalid("flow consistency needs at least two frames"));
    }
    if flows.len() != frames - 1 {
        return Err(Error::invalid(format!("expected {} flow fields, got {}", frames - 1, flows.len())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Public loss terms (unweighted unless stated).

/// Projected joint motion vs. the flow sampled at the previous projection.
pub fn loss_opt<T: Scalar>(
    pose: &PoseTrack<T>,
    cams: &CameraTrack<T>,
    flows: &[FlowField<T>],
    pen: SmoothL1<T>,
    detach: bool,
) -> Result<TermValue<T>> {
    check_cameras(pose, cams)?;
    check_flows(pose.frames(), flows)?;
    let px = project_all(pose, cams);
    let mut out = TermValue::zero(px.len(), pose.frames());
    let (value, grad_px) = flow_kernel(&px, pose.frames(), pose.joints(), flows, &pen, detach, &mut out.diagnostics);
    out.value = value;
    backprop_projection(pose, cams, &grad_px, &mut out);
    Ok(out)
}

/// Deviation of the joints from their initial estimate.
pub fn loss_3d<T: Scalar>(pose: &PoseTrack<T>, initial: &PoseTrack<T>, pen: SmoothL1<T>) -> Result<TermValue<T>> {
    if !pose.same_dims(initial) {
        return Err(Error::invalid("pose and initial estimate differ in shape"));
    }
    let mut out = TermValue::zero(pose.positions().len(), pose.frames());
    let (value, grad) = deviation_kernel(pose.positions(), initial.positions(), None, &pen, &mut out.diagnostics);
    out.value = value;
    out.grad_pose = grad;
    Ok(out)
}

/// Confidence-weighted distance between detections and projected joints.
pub fn loss_2d<T: Scalar>(pose: &PoseTrack<T>, cams: &CameraTrack<T>, det: &DetectionTrack<T>, pen: SmoothL1<T>) -> Result<TermValue<T>> {
    check_cameras(pose, cams)?;
    if det.frames() != pose.frames() || det.joints() != pose.joints() {
        return Err(Error::invalid("detections and pose differ in shape"));
    }
    let px = project_all(pose, cams);
    let mut out = TermValue::zero(px.len(), pose.frames());
    // The penalty is even, so P(X) - det gives the same value as det - P(X).
    let (value, grad) = deviation_kernel(&px, det.pixels(), Some(det.confidences()), &pen, &mut out.diagnostics);
    out.value = value;
    backprop_projection(pose, cams, &grad, &mut out);
    Ok(out)
}

/// Weights of the three temporal sub-terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalWeights<T> {
    pub position: T,
    pub camera: T,
    pub bone: T,
}

/// Weighted sum of position smoothness, camera smoothness and bone-length
/// consistency. Returns the combined term and its three weighted parts.
pub fn loss_temp<T: Scalar>(
    pose: &PoseTrack<T>,
    cams: &CameraTrack<T>,
    topo: &SkeletonTopology,
    weights: TemporalWeights<T>,
    betas: &LossBetas<T>,
) -> Result<(TermValue<T>, [T; 3])> {
    check_cameras(pose, cams)?;
    if pose.frames() < 2 {
        return Err(Error::invalid("temporal consistency needs at least two frames"));
    }
    if pose.joints() != topo.joint_count() {
        return Err(Error::invalid("pose joint count does not match topology"));
    }
    let (frames, joints) = (pose.frames(), pose.joints());
    let mut out = TermValue::zero(pose.positions().len(), frames);
    let mut parts = [T::zero(); 3];

    let pen = SmoothL1::new(betas.position)?;
    let (v, g) = temporal_kernel(pose.positions(), frames, joints, &pen, &mut out.diagnostics);
    parts[0] = weights.position * v;
    for (a, b) in out.grad_pose.iter_mut().zip(&g) {
        for c in 0..3 {
            a[c] += weights.position * b[c];
        }
    }

    let cam_vals: Vec<[T; 3]> = cams.cameras().iter().map(|c| c.to_array()).collect();
    let pen = SmoothL1::new(betas.camera)?;
    let (v, g) = temporal_kernel(&cam_vals, frames, 1, &pen, &mut out.diagnostics);
    parts[1] = weights.camera * v;
    for (a, b) in out.grad_camera.iter_mut().zip(&g) {
        for c in 0..3 {
            a[c] += weights.camera * b[c];
        }
    }

    let pen = SmoothL1::new(betas.bone)?;
    let (v, g) = bone_kernel(pose.positions(), frames, joints, topo.bones(), &pen, &mut out.diagnostics);
    parts[2] = weights.bone * v;
    for (a, b) in out.grad_pose.iter_mut().zip(&g) {
        for c in 0..3 {
            a[c] += weights.bone * b[c];
        }
    }
    out.value = parts[0] + parts[1] + parts[2];
    Ok((out, parts))
}

// ---------------------------------------------------------------------------
// Full objective and optimization.

/// Weighted term values at one evaluation point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown<T> {
    pub opt: T,
    pub joints3d: T,
    pub joints2d: T,
    pub temp: T,
    pub temp_position: T,
    pub temp_camera: T,
    pub temp_bone: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    fn new(opt: T, joints3d: T, joints2d: T, temp: [T; 3]) -> Self {
        let temp_sum = temp[0] + temp[1] + temp[2];
        Self {
            opt,
            joints3d,
            joints2d,
            temp: temp_sum,
            temp_position: temp[0],
            temp_camera: temp[1],
            temp_bone: temp[2],
            total: opt + joints3d + joints2d + temp_sum,
        }
    }
}

impl<T: Scalar> std::fmt::Display for LossBreakdown<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={} opt={} 3d={} 2d={} temp={} (pos={} cam={} bone={})",
            self.total, self.opt, self.joints3d, self.joints2d, self.temp, self.temp_position, self.temp_camera, self.temp_bone
        )
    }
}

/// The full 3D objective for fixed anchor, detections and flows.
#[derive(Clone, Copy, Debug)]
pub struct PoseObjective<'a, T> {
    pub anchor: &'a PoseTrack<T>,
    pub detections: Option<&'a DetectionTrack<T>>,
    pub flows: &'a [FlowField<T>],
    pub topology: &'a SkeletonTopology,
    pub params: &'a PoseHyperParams<T>,
}

impl<'a, T: Scalar> PoseObjective<'a, T> {
    pub fn evaluate(&self, pose: &PoseTrack<T>, cams: &CameraTrack<T>) -> Result<(LossBreakdown<T>, TermValue<T>)> {
        let hp = self.params;
        let b = &hp.betas;
        let z = T::zero();
        let mut total = TermValue::zero(pose.positions().len(), pose.frames());

        let mut opt = z;
        if hp.lambda_opt > z {
            let t = loss_opt(pose, cams, self.flows, SmoothL1::new(b.flow)?, hp.detach_flow_sampling)?;
            opt = hp.lambda_opt * t.value;
            total.add_scaled(hp.lambda_opt, &t);
        }
        let mut j3 = z;
        if hp.lambda_3d > z {
            let t = loss_3d(pose, self.anchor, SmoothL1::new(b.joints3d)?)?;
            j3 = hp.lambda_3d * t.value;
            total.add_scaled(hp.lambda_3d, &t);
        }
        let mut j2 = z;
        if hp.lambda_2d > z {
            if let Some(det) = self.detections {
                let t = loss_2d(pose, cams, det, SmoothL1::new(b.joints2d)?)?;
                j2 = hp.lambda_2d * t.value;
                total.add_scaled(hp.lambda_2d, &t);
            }
        }
        let mut temp = [z; 3];
        if hp.lambda_pos > z || hp.lambda_cam > z || hp.lambda_bone > z {
            let weights = TemporalWeights {
                position: hp.lambda_pos,
                camera: hp.lambda_cam,
                bone: hp.lambda_bone,
            };
            let (t, parts) = loss_temp(pose, cams, self.topology, weights, b)?;
            temp = parts;
            total.add_scaled(T::one(), &t);
        }
        let breakdown = LossBreakdown::new(opt, j3, j2, temp);
        total.value = breakdown.total;
        Ok((breakdown, total))
    }
}

#[derive(Clone, Debug)]
pub struct PoseRefinement<T> {
    pub pose: PoseTrack<T>,
    pub camera: CameraTrack<T>,
    /// Loss before each epoch, then after the last.
    pub trajectory: Vec<LossBreakdown<T>>,
}

/// Refines joints and cameras starting from (and anchored to) the initial estimates.
pub fn refine_pose<T: Scalar>(
    initial_pose: &PoseTrack<T>,
    initial_camera: &CameraTrack<T>,
    detections: &DetectionTrack<T>,
    flows: &[FlowField<T>],
    topology: &SkeletonTopology,
    params: &PoseHyperParams<T>,
) -> Result<PoseRefinement<T>> {
    let objective = PoseObjective {
        anchor: initial_pose,
        detections: Some(detections),
        flows,
        topology,
        params,
    };
    refine_pose_with(&objective, initial_pose, initial_camera)
}

/// Runs `params.epochs` Adam steps of `objective` starting at `(pose, camera)`.
pub fn refine_pose_with<T: Scalar>(
    objective: &PoseObjective<'_, T>,
    pose: &PoseTrack<T>,
    camera: &CameraTrack<T>,
) -> Result<PoseRefinement<T>> {
    let hp = objective.params;
    hp.validate()?;
    if !pose.same_dims(objective.anchor) {
        return Err(Error::invalid("initial pose and anchor differ in shape"));
    }
    if pose.joints() != objective.topology.joint_count() {
        return Err(Error::invalid("pose joint count does not match topology"));
    }
    check_cameras(pose, camera)?;
    let (frames, joints) = (pose.frames(), pose.joints());
    let split = frames * joints * 3;
    let mut params: Vec<T> = pose.to_flat();
    params.extend(camera.to_flat());

    let unpack = |p: &[T]| -> Result<(PoseTrack<T>, CameraTrack<T>)> {
        Ok((PoseTrack::from_flat(frames, joints, &p[..split])?, CameraTrack::from_flat(&p[split..])?))
    };

    let trajectory = run_adam(&mut params, hp.epochs, hp.lr, |p| {
        let (x, c) = unpack(p).map_err(|e| Error::Numerical(format!("optimization left the valid domain: {e}")))?;
        let (b, t) = objective.evaluate(&x, &c)?;
        Ok((b, t.flat_gradient()))
    })?;
    let (pose, camera) = unpack(&params).map_err(|e| Error::Numerical(format!("optimization left the valid domain: {e}")))?;
    Ok(PoseRefinement { pose, camera, trajectory })
}

fn run_adam<T: Scalar>(
    params: &mut [T],
    epochs: usize,
    lr: T,
    mut eval: impl FnMut(&[T]) -> Result<(LossBreakdown<T>, Vec<T>)>,
) -> Result<Vec<LossBreakdown<T>>> {
    let mut adam = AdamState::new(params.len());
    let mut trajectory = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let (breakdown, grad) = eval(params)?;
        if !breakdown.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("pose loss is non-finite at epoch {epoch}: {breakdown}")));
        }
        trajectory.push(breakdown);
        if epoch == epochs {
            break;
        }
        adam.step(params, &grad, lr)?;
    }
    Ok(trajectory)
}

// ---------------------------------------------------------------------------
// 2D fallback.

/// The 2D objective: projections are replaced by the optimized pixel
/// positions and the camera term is dropped.
#[derive(Clone, Copy, Debug)]
pub struct Pose2dObjective<'a, T> {
    pub anchor: &'a DetectionTrack<T>,
    pub detections: &'a DetectionTrack<T>,
    pub flows: &'a [FlowField<T>],
    pub topology: &'a SkeletonTopology,
    pub params: &'a PoseHyperParams<T>,
}

impl<'a, T: Scalar> Pose2dObjective<'a, T> {
    /// Value breakdown and gradient w.r.t. the pixel positions.
    pub fn evaluate(&self, x: &[[T; 2]]) -> Result<(LossBreakdown<T>, Vec<[T; 2]>, Diagnostics<T>)> {
        let hp = self.params;
        let b = &hp.betas;
        let (frames, joints) = (self.anchor.frames(), self.anchor.joints());
        if x.len() != frames * joints {
            return Err(Error::invalid("2D variable count does not match anchor"));
        }
        let z = T::zero();
        let mut grad = vec![[z; 2]; x.len()];
        let mut diag = Diagnostics::default();
        let mut add = |w: T, g: &[[T; 2]]| {
            for (a, b) in grad.iter_mut().zip(g) {
                a[0] += w * b[0];
                a[1] += w * b[1];
            }
        };
        let pix = SmoothL1::new(b.joints2d)?;

        let mut opt = z;
        if hp.lambda_opt > z {
            check_flows(frames, self.flows)?;
            let (v, g) = flow_kernel(x, frames, joints, self.flows, &SmoothL1::new(b.flow)?, hp.detach_flow_sampling, &mut diag);
            opt = hp.lambda_opt * v;
            add(hp.lambda_opt, &g);
        }
        let mut dev = z;
        if hp.lambda_3d > z {
            let (v, g) = deviation_kernel(x, self.anchor.pixels(), None, &pix, &mut diag);
            dev = hp.lambda_3d * v;
            add(hp.lambda_3d, &g);
        }
        let mut det = z;
        if hp.lambda_2d > z {
            let (v, g) = deviation_kernel(x, self.detections.pixels(), Some(self.detections.confidences()), &pix, &mut diag);
            det = hp.lambda_2d * v;
            add(hp.lambda_2d, &g);
        }
        let mut temp = [z; 3];
        if (hp.lambda_pos > z || (hp.lambda_bone > z && hp.bone_term_2d)) && frames < 2 {
            return Err(Error::invalid("temporal consistency needs at least two frames"));
        }
        if hp.lambda_pos > z {
            let (v, g) = temporal_kernel(x, frames, joints, &pix, &mut diag);
            temp[0] = hp.lambda_pos * v;
            add(hp.lambda_pos, &g);
        }
        if hp.lambda_bone > z && hp.bone_term_2d {
            let (v, g) = bone_kernel(x, frames, joints, self.topology.bones(), &pix, &mut diag);
            temp[2] = hp.lambda_bone * v;
            add(hp.lambda_bone, &g);
        }
        Ok((LossBreakdown::new(opt, dev, det, temp), grad, diag))
    }
}

#[derive(Clone, Debug)]
pub struct Pose2dRefinement<T> {
    pub joints: DetectionTrack<T>,
    pub trajectory: Vec<LossBreakdown<T>>,
}

/// 2D fallback: refines pixel joints starting from (and anchored to) `initial`.
pub fn refine_pose_2d<T: Scalar>(
    initial: &DetectionTrack<T>,
    detections: &DetectionTrack<T>,
    flows: &[FlowField<T>],
    topology: &SkeletonTopology,
    params: &PoseHyperParams<T>,
) -> Result<Pose2dRefinement<T>> {
    let objective = Pose2dObjective {
        anchor: initial,
        detections,
        flows,
        topology,
        params,
    };
    refine_pose_2d_with(&objective, initial)
}

pub fn refine_pose_2d_with<T: Scalar>(objective: &Pose2dObjective<'_, T>, start: &DetectionTrack<T>) -> Result<Pose2dRefinement<T>> {
    let hp = objective.params;
    hp.validate()?;
    if !start.same_dims(objective.anchor) || !start.same_dims(objective.detections) {
        return Err(Error::invalid("2D tracks differ in shape"));
    }
    if start.joints() != objective.topology.joint_count() {
        return Err(Error::invalid("joint count does not match topology"));
    }
    let mut params: Vec<T> = start.pixels().iter().flatten().copied().collect();
    let to_points = |p: &[T]| p.chunks_exact(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>();
    let trajectory = run_adam(&mut params, hp.epochs, hp.lr, |p| {
        let (b, g, _) = objective.evaluate(&to_points(p))?;
        Ok((b, g.into_iter().flatten().collect()))
    })?;
    let joints = start
        .with_pixels(to_points(&params))
        .map_err(|e| Error::Numerical(format!("2D refinement produced invalid joints: {e}")))?;
    Ok(Pose2dRefinement { joints, trajectory })
}
