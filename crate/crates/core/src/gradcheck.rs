//! Finite-difference verification of every analytic gradient.
//!
//! Scenes are small (3 frames, 5 joints, 32x32) and random. A scene is redrawn
//! when any residual sits within the kink margin of a smooth-L1 transition,
//! any flow sample lies within [`CELL_MARGIN`] pixels of a bilinear cell
//! boundary or falls outside the image, so central differences never straddle
//! a kink. Pixel residuals move up to a few hundred times the step (the camera
//! scale times the flow gradient) and get [`KINK_MARGIN_PX`]; metric residuals
//! move by about one step and get [`KINK_MARGIN_M`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::optim::{finite_diff_check, SmoothL1};
use crate::pose::{loss_2d, loss_3d, loss_opt, loss_temp, Diagnostics, LossBetas, Pose2dObjective, PoseHyperParams, TemporalWeights, TermValue};
use crate::refiner::{CorrectionGrid, GridRefiner};
use crate::skeleton::{Camera, CameraTrack, DetectionTrack, PoseTrack, SkeletonTopology};

pub const GRAD_FRAMES: usize = 3;
pub const GRAD_JOINTS: usize = 5;
pub const GRAD_SIZE: usize = 32;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const KINK_MARGIN_PX: f64 = 1e-2;
pub const KINK_MARGIN_M: f64 = 1e-4;
pub const CELL_MARGIN: f64 = 1e-2;
const MAX_ATTEMPTS: u64 = 1000;

pub const TERMS: [&str; 6] = ["loss_opt", "loss_3d", "loss_2d", "loss_temp", "refiner", "objective_2d"];

/// Random scene for gradient checks.
#[derive(Clone, Debug)]
pub struct GradScene {
    pub topology: SkeletonTopology,
    pub pose: PoseTrack<f64>,
    pub initial: PoseTrack<f64>,
    pub cameras: CameraTrack<f64>,
    pub detections: DetectionTrack<f64>,
    pub flows: Vec<FlowField<f64>>,
    pub betas: LossBetas<f64>,
    pub weights: TemporalWeights<f64>,
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

impl GradScene {
    pub fn random(rng: &mut ChaCha8Rng) -> Result<Self> {
        let (frames, joints) = (GRAD_FRAMES, GRAD_JOINTS);
        let bones: Vec<(usize, usize)> = (1..joints).map(|k| (rng.random_range(0..k), k)).collect();
        let topology = SkeletonTopology::new(joints, bones.clone())?;
        let mut rest = vec![[0.0; 3]; joints];
        for &(p, c) in &bones {
            let len = rng.random_range(0.1..0.3);
            let d = [gauss(rng, 1.0), gauss(rng, 1.0), gauss(rng, 1.0)];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-6);
            rest[c] = [0, 1, 2].map(|a| rest[p][a] + len * d[a] / n);
        }
        let mut positions = Vec::with_capacity(frames * joints);
        for _ in 0..frames {
            positions.extend(rest.iter().map(|p| p.map(|v| v + gauss(rng, 0.03))));
        }
        let pose = PoseTrack::new(frames, joints, positions)?;

        // Fit every projection inside [4, 28].
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pose.positions() {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-3);
        let s0 = 24.0 / extent * rng.random_range(0.6..0.85);
        let center = [(lo[0] + hi[0]) * 0.5, (lo[1] + hi[1]) * 0.5];
        let cameras = CameraTrack::new(
            (0..frames)
                .map(|_| {
                    let s = s0 * (1.0 + gauss(rng, 0.01));
                    Camera::new(s, 16.0 - s * center[0] + gauss(rng, 0.5), 16.0 - s * center[1] + gauss(rng, 0.5))
                })
                .collect(),
        )?;
        let initial = PoseTrack::new(frames, joints, pose.positions().iter().map(|p| p.map(|v| v + gauss(rng, 0.05))).collect())?;
        let proj = pose.project(&cameras)?;
        let detections = DetectionTrack::new(
            frames,
            joints,
            proj.pixels().iter().map(|p| p.map(|v| v + gauss(rng, 2.0))).collect(),
            (0..frames * joints).map(|_| rng.random_range(0.0..1.0)).collect(),
        )?;
        let flows = (0..frames - 1)
            .map(|_| FlowField::from_fn(GRAD_SIZE, GRAD_SIZE, |_, _| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]))
            .collect::<Result<Vec<_>>>()?;
        let betas = LossBetas {
            flow: rng.random_range(0.3..1.5),
            joints3d: rng.random_range(0.01..0.1),
            joints2d: rng.random_range(0.3..3.0),
            position: rng.random_range(0.005..0.05),
            camera: rng.random_range(0.05..1.0),
            bone: rng.random_range(0.005..0.05),
        };
        let weights = TemporalWeights {
            position: rng.random_range(0.5..2.0),
            camera: rng.random_range(0.5..2.0),
            bone: rng.random_range(0.5..2.0),
        };
        Ok(Self {
            topology,
            pose,
            initial,
            cameras,
            detections,
            flows,
            betas,
            weights,
        })
    }

    fn split(&self, flat: &[f64]) -> (PoseTrack<f64>, CameraTrack<f64>) {
        let n = self.pose.positions().len() * 3;
        let pose = PoseTrack::from_flat(self.pose.frames(), self.pose.joints(), &flat[..n]).expect("same shape");
        let cams = CameraTrack::from_flat(&flat[n..]).expect("same shape");
        (pose, cams)
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.pose.to_flat();
        v.extend(self.cameras.to_flat());
        v
    }

    /// Evaluates a pose term by name.
    pub fn term(&self, name: &str, pose: &PoseTrack<f64>, cams: &CameraTrack<f64>) -> Result<TermValue<f64>> {
        let b = &self.betas;
        match name {
            "loss_opt" => loss_opt(pose, cams, &self.flows, SmoothL1::new(b.flow)?, false),
            "loss_3d" => loss_3d(pose, &self.initial, SmoothL1::new(b.joints3d)?),
            "loss_2d" => loss_2d(pose, cams, &self.detections, SmoothL1::new(b.joints2d)?),
            "loss_temp" => Ok(loss_temp(pose, cams, &self.topology, self.weights, b)?.0),
            other => Err(Error::invalid(format!("unknown pose term `{other}`"))),
        }
    }
}

fn kink_margin(term: &str) -> f64 {
    match term {
        "loss_3d" | "loss_temp" => KINK_MARGIN_M,
        _ => KINK_MARGIN_PX,
    }
}

fn safe(d: &Diagnostics<f64>, margin: f64) -> bool {
    d.clamped_samples == 0 && d.min_kink_gap >= margin && d.min_cell_gap >= CELL_MARGIN && d.min_bone_length >= 1e-3
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCase {
    pub term: String,
    pub seed: u64,
    /// Scenes drawn before one was free of kinks.
    pub attempts: u64,
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_component: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub step: f64,
    pub tolerance: f64,
    pub cases: Vec<GradCase>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.max_rel_error < self.tolerance)
    }

    /// Worst relative error per term, in [`TERMS`] order.
    pub fn worst_by_term(&self) -> Vec<(String, f64)> {
        TERMS
            .iter()
            .filter_map(|t| {
                self.cases
                    .iter()
                    .filter(|c| c.term == *t)
                    .map(|c| c.max_rel_error)
                    .reduce(f64::max)
                    .map(|m| (t.to_string(), m))
            })
            .collect()
    }
}

fn rng_for(seed: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    rng
}

/// Checks one term on the first kink-free scene drawn from `seed`.
pub fn check_term(term: &str, seed: u64, step: f64) -> Result<GradCase> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, attempt);
        let (analytic, params, loss): (Vec<f64>, Vec<f64>, Box<dyn Fn(&[f64]) -> f64>) = match term {
            "refiner" => {
                let refiner = GridRefiner {
                    penalty: SmoothL1::new(rng.random_range(0.3..1.5))?,
                    ..GridRefiner::default()
                };
                let base = FlowField::from_fn(GRAD_SIZE, GRAD_SIZE, |_, _| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])?;
                let mut grid = CorrectionGrid::zeros(GRAD_SIZE, GRAD_SIZE, refiner.stride, refiner.sigma)?;
                let (gw, gh) = grid.grid_dims();
                for gy in 0..gh {
                    for gx in 0..gw {
                        grid.set(gx, gy, [gauss(&mut rng, 0.5), gauss(&mut rng, 0.5)]);
                    }
                }
                let applied = grid.apply(&base)?;
                // One residual sign per component, so no cell gradient cancels
                // down to the rounding floor of the difference quotient.
                let sign = [rng.random_bool(0.5), rng.random_bool(0.5)].map(|b| if b { 1.0 } else { -1.0 });
                let target = FlowField::from_fn(GRAD_SIZE, GRAD_SIZE, |x, y| {
                    let a = applied.get(x, y);
                    [a[0] - sign[0] * rng.random_range(0.05..2.0), a[1] - sign[1] * rng.random_range(0.05..2.0)]
                })?;
                let gap = applied
                    .data()
                    .iter()
                    .zip(target.data())
                    .flat_map(|(a, t)| [a[0] - t[0], a[1] - t[1]])
                    .map(|r| refiner.penalty.kink_gap(r))
                    .fold(f64::INFINITY, f64::min);
                // Grid steps move each residual by at most `step`.
                if gap < 10.0 * step {
                    continue;
                }
                let (_, grad) = refiner.objective(&grid, &base, &target)?;
                let params: Vec<f64> = grid.values().iter().flatten().copied().collect();
                let template = grid.clone();
                let loss = move |x: &[f64]| {
                    let mut g = template.clone();
                    for gy in 0..gh {
                        for gx in 0..gw {
                            let i = gy * gw + gx;
                            g.set(gx, gy, [x[2 * i], x[2 * i + 1]]);
                        }
                    }
                    refiner.objective(&g, &base, &target).map(|v| v.0).unwrap_or(f64::NAN)
                };
                (grad.into_iter().flatten().collect(), params, Box::new(loss))
            }
            "objective_2d" => {
                let scene = GradScene::random(&mut rng)?;
                let anchor = scene.pose.project(&scene.cameras)?;
                let anchor = DetectionTrack::certain(anchor.frames(), anchor.joints(), anchor.pixels().iter().map(|p| p.map(|v| v + gauss(&mut rng, 1.5))).collect())?;
                let params_hp = PoseHyperParams {
                    lambda_opt: 1.0,
                    lambda_3d: 1.0,
                    lambda_2d: 1.0,
                    lambda_pos: 1.0,
                    lambda_bone: 1.0,
                    betas: scene.betas,
                    ..PoseHyperParams::default()
                };
                let x0 = scene.pose.project(&scene.cameras)?;
                let objective = Pose2dObjective {
                    anchor: &anchor,
                    detections: &scene.detections,
                    flows: &scene.flows,
                    topology: &scene.topology,
                    params: &params_hp,
                };
                let (_, grad, diag) = objective.evaluate(x0.pixels())?;
                // Pixel variables move sampling points by `step` only.
                if !safe(&diag, KINK_MARGIN_PX) {
                    continue;
                }
                let params: Vec<f64> = x0.pixels().iter().flatten().copied().collect();
                let scene2 = scene.clone();
                let hp2 = params_hp;
                let anchor2 = anchor.clone();
                let loss = move |x: &[f64]| {
                    let pts: Vec<[f64; 2]> = x.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
                    let obj = Pose2dObjective {
                        anchor: &anchor2,
                        detections: &scene2.detections,
                        flows: &scene2.flows,
                        topology: &scene2.topology,
                        params: &hp2,
                    };
                    obj.evaluate(&pts).map(|r| r.0.total).unwrap_or(f64::NAN)
                };
                (grad.into_iter().flatten().collect(), params, Box::new(loss))
            }
            name => {
                let scene = GradScene::random(&mut rng)?;
                let t = scene.term(name, &scene.pose, &scene.cameras)?;
                if !safe(&t.diagnostics, kink_margin(name)) {
                    continue;
                }
                let params = scene.flat();
                let name = name.to_string();
                let loss = move |x: &[f64]| {
                    let (p, c) = scene.split(x);
                    scene.term(&name, &p, &c).map(|v| v.value).unwrap_or(f64::NAN)
                };
                (t.flat_gradient(), params, Box::new(loss))
            }
        };
        let check = finite_diff_check(&*loss, &analytic, &params, step)?;
        return Ok(GradCase {
            term: term.to_string(),
            seed,
            attempts: attempt + 1,
            params: params.len(),
            max_rel_error: check.max_rel_error,
            worst_component: check.worst_component,
        });
    }
    Err(Error::Numerical(format!("no kink-free scene found for `{term}` with seed {seed}")))
}

/// Every term on `seeds` scenes each.
pub fn gradient_suite(seeds: u64, step: f64, tolerance: f64) -> Result<GradReport> {
    let mut cases = Vec::new();
    for term in TERMS {
        for seed in 0..seeds {
            cases.push(check_term(term, seed, step)?);
        }
    }
    Ok(GradReport { step, tolerance, cases })
}
