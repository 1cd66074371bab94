//! Dense optical flow fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-pixel 2D displacement between two consecutive frames, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    data: Vec<[T; 2]>,
}

/// Result of sampling a flow field at a sub-pixel location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample<T> {
    pub value: [T; 2],
    /// `jacobian[c][a]` is the derivative of component `c` w.r.t. axis `a` (0 = x, 1 = y).
    pub jacobian: [[T; 2]; 2],
    /// The location fell outside the image and was clamped to the border.
    pub clamped: bool,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(width: usize, height: usize, data: Vec<[T; 2]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("flow field must have positive dimensions, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "flow field {width}x{height} needs {} vectors, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::invalid(format!("non-finite flow at pixel ({}, {})", i % width, i / width)));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::constant(width, height, [T::zero(), T::zero()])
    }

    pub fn constant(width: usize, height: usize, value: [T; 2]) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 2]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 2] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: [T; 2]) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[[T; 2]] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [[T; 2]] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v[0].is_finite() && v[1].is_finite())
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid(format!(
                "flow dimension mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Bilinear sample at pixel coordinates (pixel centers at integers), with
    /// the location clamped to `[0, w-1] x [0, h-1]`. Derivatives along a
    /// clamped axis are zero.
    pub fn sample(&self, x: T, y: T) -> FlowSample<T> {
        let (x0, x1, fx, dx_ok, cx) = axis_cell(x, self.width);
        let (y0, y1, fy, dy_ok, cy) = axis_cell(y, self.height);
        let f00 = self.get(x0, y0);
        let f10 = self.get(x1, y0);
        let f01 = self.get(x0, y1);
        let f11 = self.get(x1, y1);
        let one = T::one();
        let mut value = [T::zero(); 2];
        let mut jacobian = [[T::zero(); 2]; 2];
        for c in 0..2 {
            let top = f00[c] * (one - fx) + f10[c] * fx;
            let bottom = f01[c] * (one - fx) + f11[c] * fx;
            value[c] = top * (one - fy) + bottom * fy;
            if dx_ok {
                jacobian[c][0] = (f10[c] - f00[c]) * (one - fy) + (f11[c] - f01[c]) * fy;
            }
            if dy_ok {
                jacobian[c][1] = bottom - top;
            }
        }
        FlowSample {
            value,
            jacobian,
            clamped: cx || cy,
        }
    }
}

/// Returns `(i0, i1, frac, differentiable, clamped)` for one sampling axis.
fn axis_cell<T: Scalar>(coord: T, len: usize) -> (usize, usize, T, bool, bool) {
    let max = T::from_usize_lossy(len - 1);
    let clamped = coord < T::zero() || coord > max;
    if len == 1 {
        return (0, 0, T::zero(), false, clamped);
    }
    let c = coord.max(T::zero()).min(max);
    let i0 = c.floor().to_usize().unwrap_or(0).min(len - 2);
    let frac = c - T::from_usize_lossy(i0);
    (i0, i0 + 1, frac, !clamped, clamped)
}

/// Element-wise arithmetic mean of two flow fields.
pub fn average_flows<T: Scalar>(a: &FlowField<T>, b: &FlowField<T>) -> Result<FlowField<T>> {
    a.ensure_same_dims(b)?;
    let half = T::lit(0.5);
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| [(p[0] + q[0]) * half, (p[1] + q[1]) * half])
        .collect();
    FlowField::new(a.width, a.height, data)
}
