//! Thick stick-figure rasterization and pose-derived target flow.
//!
//! Each bone is drawn as the set of pixels whose centers lie within half a
//! pixel of the bone segment, then dilated with a plus-shaped structuring
//! element. A covered pixel belongs to the covering bone whose segment is
//! nearest, and remembers where along that bone its nearest centerline point
//! sits, so bone motion can be interpolated from the two endpoint motions.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::scalar::Scalar;
use crate::skeleton::SkeletonTopology;

/// Default arm length of the plus-shaped thickening element, in pixels.
pub const DEFAULT_RADIUS: usize = 15;

/// Boolean image mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::invalid("mask dimensions do not match its data"));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// Owner bone and arc-length fraction of a covered pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoneHit<T> {
    pub bone: usize,
    pub frac: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoneRaster<T> {
    width: usize,
    height: usize,
    cells: Vec<Option<BoneHit<T>>>,
}

impl<T: Scalar> BoneRaster<T> {
    #[inline]
    pub fn hit(&self, x: usize, y: usize) -> Option<BoneHit<T>> {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn mask_at(&self, x: usize, y: usize) -> bool {
        self.hit(x, y).is_some()
    }

    pub fn owner(&self, x: usize, y: usize) -> Option<usize> {
        self.hit(x, y).map(|h| h.bone)
    }

    pub fn frac(&self, x: usize, y: usize) -> Option<T> {
        self.hit(x, y).map(|h| h.frac)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.cells.iter().map(Option::is_some).collect(),
        }
    }
}

struct Segment<T> {
    a: [T; 2],
    d: [T; 2],
    len2: T,
}

impl<T: Scalar> Segment<T> {
    fn new(a: [T; 2], b: [T; 2]) -> Self {
        let d = [b[0] - a[0], b[1] - a[1]];
        Self {
            a,
            d,
            len2: d[0] * d[0] + d[1] * d[1],
        }
    }

    /// Clamped projection fraction and squared distance of `p` to the segment.
    fn locate(&self, p: [T; 2]) -> (T, T) {
        let rx = p[0] - self.a[0];
        let ry = p[1] - self.a[1];
        let frac = if self.len2 > T::zero() {
            ((rx * self.d[0] + ry * self.d[1]) / self.len2).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        let ex = rx - frac * self.d[0];
        let ey = ry - frac * self.d[1];
        (frac, ex * ex + ey * ey)
    }
}

/// Rasterizes all bones of a skeleton into a thick, owner-labelled raster.
pub fn rasterize_skeleton<T: Scalar>(
    joints2d: &[[T; 2]],
    topo: &SkeletonTopology,
    width: usize,
    height: usize,
    radius: usize,
) -> Result<BoneRaster<T>> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("cannot rasterize into a zero-area image"));
    }
    if joints2d.len() != topo.joint_count() {
        return Err(Error::invalid(format!(
            "expected {} joints, got {}",
            topo.joint_count(),
            joints2d.len()
        )));
    }
    if let Some(j) = joints2d.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::invalid(format!("joint {j} has a non-finite position")));
    }

    let mut cells: Vec<Option<BoneHit<T>>> = vec![None; width * height];
    let mut best_d2 = vec![T::infinity(); width * height];
    let half2 = T::lit(0.25);
    let r = radius as i64;
    // Centerline pixels farther than `radius` outside the image cannot reach it.
    let lo_x = -r;
    let hi_x = width as i64 - 1 + r;
    let lo_y = -r;
    let hi_y = height as i64 - 1 + r;

    for (bone, &(j, k)) in topo.bones().iter().enumerate() {
        let seg = Segment::new(joints2d[j], joints2d[k]);
        let (a, b) = (joints2d[j], joints2d[k]);
        let h = T::lit(0.5);
        let x0 = ((a[0].min(b[0]) - h).ceil().as_f64() as i64).max(lo_x);
        let x1 = ((a[0].max(b[0]) + h).floor().as_f64() as i64).min(hi_x);
        let y0 = ((a[1].min(b[1]) - h).ceil().as_f64() as i64).max(lo_y);
        let y1 = ((a[1].max(b[1]) + h).floor().as_f64() as i64).min(hi_y);

        let mut stamp = |px: i64, py: i64| {
            if px < 0 || py < 0 || px >= width as i64 || py >= height as i64 {
                return;
            }
            let idx = py as usize * width + px as usize;
            let (frac, d2) = seg.locate([T::from_i64(px).unwrap(), T::from_i64(py).unwrap()]);
            // Bones are visited in index order, so strict improvement keeps the lower index on ties.
            if d2 < best_d2[idx] {
                best_d2[idx] = d2;
                cells[idx] = Some(BoneHit { bone, frac });
            }
        };

        for qy in y0..=y1 {
            for qx in x0..=x1 {
                let (_, d2) = seg.locate([T::from_i64(qx).unwrap(), T::from_i64(qy).unwrap()]);
                if d2 > half2 {
                    continue;
                }
                for d in -r..=r {
                    stamp(qx + d, qy);
                    if d != 0 {
                        stamp(qx, qy + d);
                    }
                }
            }
        }
    }

    Ok(BoneRaster { width, height, cells })
}

/// Rough flow of the bone pixels of frame `t`, plus the mask it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneFlow<T> {
    /// Zero outside the mask.
    pub flow: FlowField<T>,
    pub mask: Mask,
}

/// Flow of the stick figure from frame `t` to `t + 1`.
///
/// A pixel owned by bone `(j, k)` at fraction `a` moves by
/// `(1 - a) * dj + a * dk`, where `dj`, `dk` are the endpoint displacements.
pub fn bone_flow<T: Scalar>(
    joints_t: &[[T; 2]],
    joints_t1: &[[T; 2]],
    topo: &SkeletonTopology,
    width: usize,
    height: usize,
    radius: usize,
) -> Result<BoneFlow<T>> {
    if joints_t.len() != joints_t1.len() {
        return Err(Error::invalid("joint sets of consecutive frames differ in size"));
    }
    let raster = rasterize_skeleton(joints_t, topo, width, height, radius)?;
    let disp: Vec<[T; 2]> = joints_t
        .iter()
        .zip(joints_t1)
        .map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
        .collect();
    if disp.iter().any(|d| !(d[0].is_finite() && d[1].is_finite())) {
        return Err(Error::invalid("non-finite joint displacement"));
    }
    let bones = topo.bones();
    let one = T::one();
    let flow = FlowField::from_fn(width, height, |x, y| match raster.hit(x, y) {
        Some(BoneHit { bone, frac }) => {
            let (j, k) = bones[bone];
            [
                (one - frac) * disp[j][0] + frac * disp[k][0],
                (one - frac) * disp[j][1] + frac * disp[k][1],
            ]
        }
        None => [T::zero(); 2],
    })?;
    Ok(BoneFlow {
        flow,
        mask: raster.mask(),
    })
}

/// Base flow with bone flow pasted over it.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFlow<T> {
    pub flow: FlowField<T>,
    pub overlay_mask: Mask,
}

pub fn compose_target_flow<T: Scalar>(base: &FlowField<T>, sparse: &BoneFlow<T>) -> Result<TargetFlow<T>> {
    base.ensure_same_dims(&sparse.flow)?;
    if sparse.mask.dims() != base.dims() {
        return Err(Error::invalid("overlay mask does not match flow dimensions"));
    }
    let mut flow = base.clone();
    for (i, (dst, &m)) in flow.data_mut().iter_mut().zip(sparse.mask.bits()).enumerate() {
        if m {
            *dst = sparse.flow.data()[i];
        }
    }
    Ok(TargetFlow {
        flow,
        overlay_mask: sparse.mask.clone(),
    })
}

/// A target that leaves the base untouched.
pub fn identity_target<T: Scalar>(base: &FlowField<T>) -> TargetFlow<T> {
    TargetFlow {
        flow: base.clone(),
        overlay_mask: Mask::empty(base.width(), base.height()).expect("flow dims are positive"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_bone() -> SkeletonTopology {
        SkeletonTopology::chain(2).unwrap()
    }

    #[test]
    fn horizontal_bone_radius_zero() {
        let r = rasterize_skeleton(&[[0.0, 5.0], [10.0, 5.0]], &one_bone(), 16, 11, 0).unwrap();
        assert_eq!(r.mask().count(), 11);
        for x in 0..=10 {
            assert!(r.mask_at(x, 5));
            assert_eq!(r.frac(x, 5), Some(x as f64 / 10.0));
            assert_eq!(r.owner(x, 5), Some(0));
        }
    }

    #[test]
    fn empty_topology_and_offscreen_bone() {
        let topo = SkeletonTopology::new(3, vec![]).unwrap();
        let r = rasterize_skeleton(&[[1.0, 1.0]; 3], &topo, 8, 8, 3).unwrap();
        assert!(r.mask().is_empty());
        let r = rasterize_skeleton(&[[-100.0, -50.0], [-60.0, -80.0]], &one_bone(), 8, 8, 3).unwrap();
        assert!(r.mask().is_empty());
        assert!(rasterize_skeleton(&[[0.0, 0.0], [1.0, 1.0]], &one_bone(), 0, 8, 3).is_err());
    }

    #[test]
    fn cross_dilation_reaches_in_from_outside() {
        // Centerline one row above the image; arm length 2 reaches rows 0 and 1.
        let r = rasterize_skeleton(&[[2.0, -1.0], [5.0, -1.0]], &one_bone(), 8, 8, 2).unwrap();
        let m = r.mask();
        for x in 0..8 {
            let expect = (2..=5).contains(&x);
            assert_eq!(m.get(x, 0), expect);
            assert_eq!(m.get(x, 1), expect);
            assert!(!m.get(x, 2));
        }
    }

    #[test]
    fn deforming_bone_midpoint_flow() {
        let a = [[0.0, 0.0], [10.0, 0.0]];
        let b = [[0.0, 0.0], [10.0, 10.0]];
        let f = bone_flow(&a, &b, &one_bone(), 12, 12, 0).unwrap();
        assert!(f.mask.get(5, 0));
        assert_eq!(f.flow.get(5, 0), [0.0, 5.0]);
    }

    #[test]
    fn static_and_translating_skeleton() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let j = [[3.0f64, 4.0], [9.5, 12.25], [20.0, 6.0]];
        let f = bone_flow(&j, &j, &topo, 32, 32, 2).unwrap();
        assert!(f.flow.data().iter().all(|v| *v == [0.0, 0.0]));
        let moved: Vec<_> = j.iter().map(|p| [p[0] + 1.5, p[1] - 2.0]).collect();
        let f = bone_flow(&j, &moved, &topo, 32, 32, 2).unwrap();
        assert!(f.mask.count() > 0);
        for y in 0..32 {
            for x in 0..32 {
                if f.mask.get(x, y) {
                    let v = f.flow.get(x, y);
                    assert!((v[0] - 1.5).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn compose_empty_and_full_mask() {
        let base = FlowField::from_fn(5, 4, |x, y| [x as f64, y as f64]).unwrap();
        let bone = FlowField::constant(5, 4, [7.0, -1.0]).unwrap();
        let empty = BoneFlow {
            flow: bone.clone(),
            mask: Mask::empty(5, 4).unwrap(),
        };
        assert_eq!(compose_target_flow(&base, &empty).unwrap().flow, base);
        let full = BoneFlow {
            flow: bone.clone(),
            mask: Mask::full(5, 4).unwrap(),
        };
        let t = compose_target_flow(&base, &full).unwrap();
        assert_eq!(t.flow, bone);
        let again = compose_target_flow(&t.flow, &full).unwrap();
        assert_eq!(again.flow, t.flow);
        let small = FlowField::zeros(4, 4).unwrap();
        assert!(compose_target_flow(&small, &full).is_err());
    }

    #[test]
    fn larger_radius_is_superset() {
        let topo = SkeletonTopology::chain(4).unwrap();
        let j = [[3.3, 4.1], [17.5, 12.25], [20.0, 26.0], [8.0, 30.0]];
        let mut prev = rasterize_skeleton(&j, &topo, 40, 40, 0).unwrap().mask();
        for r in 1..6 {
            let cur = rasterize_skeleton(&j, &topo, 40, 40, r).unwrap().mask();
            assert!(prev.bits().iter().zip(cur.bits()).all(|(&a, &b)| !a || b));
            assert!(cur.count() >= prev.count());
            prev = cur;
        }
    }
}
