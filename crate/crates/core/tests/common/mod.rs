//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the library's numeric code.
#![allow(dead_code)]

use bootflow::{DetectionTrack, FlowField, PoseTrack, SkeletonTopology};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random connected topology over 2..=8 joints with 2D joints scattered in
/// and around a `w x h` image. A few joints are made coincident so that
/// zero-length bones get exercised.
pub fn random_skeleton(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (SkeletonTopology, Vec<[f64; 2]>) {
    let n = rng.random_range(2..=8);
    let mut bones = Vec::new();
    for k in 1..n {
        bones.push((rng.random_range(0..k), k));
    }
    // occasional extra edge that closes a loop
    if n > 2 && rng.random_bool(0.3) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !bones.contains(&(a, b)) && !bones.contains(&(b, a)) {
            bones.push((a, b));
        }
    }
    let margin = 20.0;
    let mut joints: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                rng.random_range(-margin..w as f64 + margin),
                rng.random_range(-margin..h as f64 + margin),
            ]
        })
        .collect();
    if rng.random_bool(0.15) {
        joints[1] = joints[0];
    }
    (SkeletonTopology::new(n, bones).unwrap(), joints)
}

/// Distance from `p` to segment `a-b` and the clamped projection fraction,
/// computed via the endpoint/perpendicular case split.
pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let to_a = ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt();
    if len2 == 0.0 {
        return (to_a, 0.0);
    }
    let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
    if t <= 0.0 {
        (to_a, 0.0)
    } else if t >= 1.0 {
        (((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt(), 1.0)
    } else {
        let cross = (p[0] - a[0]) * dy - (p[1] - a[1]) * dx;
        (cross.abs() / len2.sqrt(), t)
    }
}

/// Per-pixel coverage: bone + fraction + distance of the owner, or `None`.
#[derive(Clone, Copy, Debug)]
pub struct OracleHit {
    pub bone: usize,
    pub frac: f64,
    pub dist: f64,
    /// Distance of the runner-up covering bone, if any.
    pub second: Option<f64>,
}

/// A pixel is covered by a bone when some pixel on the same row or column,
/// no more than `r` away (possibly outside the image), has its center within
/// half a pixel of the bone's segment. The owner is the covering bone with
/// the nearest segment, lower index first on ties.
pub fn brute_raster(joints: &[[f64; 2]], topo: &SkeletonTopology, w: usize, h: usize, r: usize) -> Vec<Option<OracleHit>> {
    let r = r as i64;
    let on_centerline = |x: i64, y: i64, a: [f64; 2], b: [f64; 2]| segment_distance([x as f64, y as f64], a, b).0 <= 0.5;
    let mut out = vec![None; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut best: Option<OracleHit> = None;
            for (bi, &(j, k)) in topo.bones().iter().enumerate() {
                let (a, b) = (joints[j], joints[k]);
                let covered = (-r..=r).any(|d| on_centerline(x + d, y, a, b) || on_centerline(x, y + d, a, b));
                if !covered {
                    continue;
                }
                let (dist, frac) = segment_distance([x as f64, y as f64], a, b);
                best = match best {
                    None => Some(OracleHit { bone: bi, frac, dist, second: None }),
                    Some(cur) if dist < cur.dist => Some(OracleHit {
                        bone: bi,
                        frac,
                        dist,
                        second: Some(cur.dist),
                    }),
                    Some(cur) => Some(OracleHit {
                        second: Some(cur.second.map_or(dist, |s| s.min(dist))),
                        ..cur
                    }),
                };
            }
            out[y as usize * w + x as usize] = best;
        }
    }
    out
}

/// Flow of a covered pixel: endpoint displacements blended by the fraction.
pub fn oracle_flow(hit: &OracleHit, topo: &SkeletonTopology, j0: &[[f64; 2]], j1: &[[f64; 2]]) -> [f64; 2] {
    let (j, k) = topo.bones()[hit.bone];
    let a = hit.frac;
    let mut f = [0.0; 2];
    for c in 0..2 {
        f[c] = (1.0 - a) * (j1[j][c] - j0[j][c]) + a * (j1[k][c] - j0[k][c]);
    }
    f
}

pub fn mpjpe_oracle(pred: &PoseTrack<f64>, gt: &PoseTrack<f64>, subset: Option<&[usize]>) -> f64 {
    let joints: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..pred.joints()).collect(),
    };
    let mut sum = 0.0;
    for t in 0..pred.frames() {
        for &j in &joints {
            let (p, g) = (pred.get(t, j), gt.get(t, j));
            let dx = p[0] - g[0];
            let dy = p[1] - g[1];
            let dz = p[2] - g[2];
            sum += (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }
    sum / (pred.frames() * joints.len()) as f64
}

pub fn bone_length_oracle(pose: &PoseTrack<f64>, topo: &SkeletonTopology, t: usize) -> Vec<f64> {
    topo.bones()
        .iter()
        .map(|&(j, k)| {
            let (a, b) = (pose.get(t, j), pose.get(t, k));
            (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>().sqrt()
        })
        .collect()
}

/// Bilinear value of `f` at a real location, sampled from the four
/// surrounding pixel centers with border clamping.
pub fn bilinear_oracle(f: &FlowField<f64>, x: f64, y: f64) -> [f64; 2] {
    let x = x.clamp(0.0, (f.width() - 1) as f64);
    let y = y.clamp(0.0, (f.height() - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(f.width() - 1), (y0 + 1).min(f.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; 2];
    for c in 0..2 {
        let top = f.get(x0, y0)[c] * (1.0 - fx) + f.get(x1, y0)[c] * fx;
        let bot = f.get(x0, y1)[c] * (1.0 - fx) + f.get(x1, y1)[c] * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Mean endpoint error over all pixels, or over bilinear samples at `points`.
pub fn epe_oracle(pred: &FlowField<f64>, gt: &FlowField<f64>, points: Option<&[[f64; 2]]>) -> f64 {
    let norm = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    match points {
        None => {
            let mut s = 0.0;
            for y in 0..pred.height() {
                for x in 0..pred.width() {
                    s += norm(pred.get(x, y), gt.get(x, y));
                }
            }
            s / (pred.width() * pred.height()) as f64
        }
        Some(pts) => {
            let s: f64 = pts
                .iter()
                .map(|p| norm(bilinear_oracle(pred, p[0], p[1]), bilinear_oracle(gt, p[0], p[1])))
                .sum();
            s / pts.len() as f64
        }
    }
}

pub fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, scale: f64) -> FlowField<f64> {
    FlowField::from_fn(w, h, |_, _| [rng.random_range(-scale..scale), rng.random_range(-scale..scale)]).unwrap()
}

pub fn random_pose(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> PoseTrack<f64> {
    let p = (0..frames * joints)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0)])
        .collect();
    PoseTrack::new(frames, joints, p).unwrap()
}

pub fn random_detections(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> DetectionTrack<f64> {
    let px = (0..frames * joints)
        .map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)])
        .collect();
    let conf = (0..frames * joints).map(|_| rng.random_range(0.0..=1.0)).collect();
    DetectionTrack::new(frames, joints, px, conf).unwrap()
}

/// Outcome of comparing the library raster/flow against [`brute_raster`].
#[derive(Debug, Default)]
pub struct RasterComparison {
    pub pixels: usize,
    pub covered: usize,
    pub mask_mismatches: usize,
    /// Owner disagreements where the oracle's nearest bone is not a near tie.
    pub owner_mismatches: usize,
    /// Owner disagreements inside that rounding band.
    pub near_ties: usize,
    pub max_flow_deviation: f64,
}

impl RasterComparison {
    pub fn ok(&self) -> bool {
        self.mask_mismatches == 0 && self.owner_mismatches == 0 && self.max_flow_deviation < 1e-9
    }
}

/// Checks `rasterize_skeleton` and `bone_flow` on `count` random skeletons
/// against the per-pixel oracle. Frame t+1 joints are random offsets of
/// frame t so the bones both translate and deform.
pub fn compare_rasters(seed: u64, count: usize) -> RasterComparison {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cmp = RasterComparison::default();
    for _ in 0..count {
        let w = rng.random_range(8..=56);
        let h = rng.random_range(8..=56);
        let r = if rng.random_bool(0.2) { 15 } else { rng.random_range(0..=6) };
        let (topo, j0) = random_skeleton(&mut rng, w, h);
        let j1: Vec<[f64; 2]> = j0
            .iter()
            .map(|p| [p[0] + rng.random_range(-6.0..6.0), p[1] + rng.random_range(-6.0..6.0)])
            .collect();
        let raster = bootflow::rasterize_skeleton(&j0, &topo, w, h, r).unwrap();
        let flow = bootflow::bone_flow(&j0, &j1, &topo, w, h, r).unwrap();
        let oracle = brute_raster(&j0, &topo, w, h, r);
        for y in 0..h {
            for x in 0..w {
                cmp.pixels += 1;
                let o = oracle[y * w + x];
                let lib_hit = raster.hit(x, y);
                if o.is_some() != lib_hit.is_some() || o.is_some() != flow.mask.get(x, y) {
                    cmp.mask_mismatches += 1;
                    continue;
                }
                let f = flow.flow.get(x, y);
                match (o, lib_hit) {
                    (Some(o), Some(l)) => {
                        cmp.covered += 1;
                        let near_tie = o.second.is_some_and(|s| s - o.dist < 1e-9);
                        let mut o = o;
                        if l.bone != o.bone {
                            if near_tie {
                                // equidistant within rounding: judge the flow by the bone actually picked
                                let (j, k) = topo.bones()[l.bone];
                                let (dist, frac) = segment_distance([x as f64, y as f64], j0[j], j0[k]);
                                o = OracleHit { bone: l.bone, frac, dist, second: None };
                                cmp.near_ties += 1;
                            } else {
                                cmp.owner_mismatches += 1;
                            }
                        }
                        let want = oracle_flow(&o, &topo, &j0, &j1);
                        let dev = (f[0] - want[0]).abs().max((f[1] - want[1]).abs());
                        cmp.max_flow_deviation = cmp.max_flow_deviation.max(dev);
                    }
                    _ => {
                        let dev = f[0].abs().max(f[1].abs());
                        cmp.max_flow_deviation = cmp.max_flow_deviation.max(dev);
                    }
                }
            }
        }
    }
    cmp
}
