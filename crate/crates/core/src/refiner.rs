//! Per-frame-pair flow fine-tuning toward a pose-derived target.
//!
//! The learnable model is a coarse residual grid added to the base flow after
//! Gaussian smoothing (in grid cells) and bilinear upsampling. A zero grid
//! reproduces the base flow exactly. Training runs a fixed, small number of
//! Adam steps on the mean smooth-L1 distance to the target, so the result
//! moves toward the target without reproducing it.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::optim::{AdamState, SmoothL1};
use crate::raster::TargetFlow;
use crate::scalar::Scalar;

pub const DEFAULT_STRIDE: usize = 8;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_LR: f64 = 0.05;

/// Residual flow on a grid of `ceil(h / stride) x ceil(w / stride)` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionGrid<T> {
    image_width: usize,
    image_height: usize,
    grid_width: usize,
    grid_height: usize,
    stride: usize,
    sigma: T,
    values: Vec<[T; 2]>,
}

/// Zero residual grid for an image of the given size.
pub fn init_refiner<T: Scalar>(width: usize, height: usize, stride: usize) -> Result<CorrectionGrid<T>> {
    CorrectionGrid::zeros(width, height, stride, T::lit(DEFAULT_SIGMA))
}

impl<T: Scalar> CorrectionGrid<T> {
    pub fn zeros(width: usize, height: usize, stride: usize, sigma: T) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("grid stride must be at least 1"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !(sigma >= T::zero() && sigma.is_finite()) {
            return Err(Error::invalid("smoothing sigma must be finite and non-negative"));
        }
        let grid_width = width.div_ceil(stride);
        let grid_height = height.div_ceil(stride);
        Ok(Self {
            image_width: width,
            image_height: height,
            grid_width,
            grid_height,
            stride,
            sigma,
            values: vec![[T::zero(); 2]; grid_width * grid_height],
        })
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.grid_width, self.grid_height)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn values(&self) -> &[[T; 2]] {
        &self.values
    }

    pub fn set(&mut self, gx: usize, gy: usize, value: [T; 2]) {
        self.values[gy * self.grid_width + gx] = value;
    }

    pub fn fill(&mut self, value: [T; 2]) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    fn operator(&self) -> Upsampler<T> {
        Upsampler::new(self.image_width, self.image_height, self.grid_width, self.grid_height, self.stride, self.sigma)
    }

    fn check(&self, base: &FlowField<T>) -> Result<()> {
        if base.dims() != (self.image_width, self.image_height) {
            return Err(Error::invalid(format!(
                "grid built for {}x{} images, flow is {}x{}",
                self.image_width,
                self.image_height,
                base.width(),
                base.height()
            )));
        }
        Ok(())
    }

    /// Base flow plus the smoothed, upsampled residual.
    pub fn apply(&self, base: &FlowField<T>) -> Result<FlowField<T>> {
        self.check(base)?;
        let correction = self.operator().forward(&self.values);
        let mut out = base.clone();
        for (o, c) in out.data_mut().iter_mut().zip(&correction) {
            o[0] += c[0];
            o[1] += c[1];
        }
        Ok(out)
    }

    /// Dense image-resolution correction (without the base flow).
    pub fn correction(&self) -> Vec<[T; 2]> {
        self.operator().forward(&self.values)
    }
}

/// `refiner_apply`: base + smoothed, upsampled residual.
pub fn refiner_apply<T: Scalar>(grid: &CorrectionGrid<T>, base: &FlowField<T>) -> Result<FlowField<T>> {
    grid.apply(base)
}

/// Separable linear map grid -> image: `rows * V * cols^T` per component.
struct Upsampler<T> {
    width: usize,
    height: usize,
    gw: usize,
    gh: usize,
    /// `width x gw`
    cols: Vec<T>,
    /// `height x gh`
    rows: Vec<T>,
}

impl<T: Scalar> Upsampler<T> {
    fn new(width: usize, height: usize, gw: usize, gh: usize, stride: usize, sigma: T) -> Self {
        Self {
            width,
            height,
            gw,
            gh,
            cols: axis_matrix(width, gw, stride, sigma),
            rows: axis_matrix(height, gh, stride, sigma),
        }
    }

    fn forward(&self, values: &[[T; 2]]) -> Vec<[T; 2]> {
        let (w, gw, gh) = (self.width, self.gw, self.gh);
        // tmp[gy][x] = sum_gx V[gy][gx] * cols[x][gx]
        let mut tmp = vec![[T::zero(); 2]; gh * w];
        for gy in 0..gh {
            for x in 0..w {
                let mut acc = [T::zero(); 2];
                for gx in 0..gw {
                    let c = self.cols[x * gw + gx];
                    if c != T::zero() {
                        let v = values[gy * gw + gx];
                        acc[0] += c * v[0];
                        acc[1] += c * v[1];
                    }
                }
                tmp[gy * w + x] = acc;
            }
        }
        let mut out = vec![[T::zero(); 2]; self.height * w];
        for y in 0..self.height {
            for gy in 0..gh {
                let r = self.rows[y * gh + gy];
                if r == T::zero() {
                    continue;
                }
                for x in 0..w {
                    let t = tmp[gy * w + x];
                    let o = &mut out[y * w + x];
                    o[0] += r * t[0];
                    o[1] += r * t[1];
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::forward`].
    fn backward(&self, grad: &[[T; 2]]) -> Vec<[T; 2]> {
        let (w, gw, gh) = (self.width, self.gw, self.gh);
        // tmp[gy][x] = sum_y rows[y][gy] * G[y][x]
        let mut tmp = vec![[T::zero(); 2]; gh * w];
        for y in 0..self.height {
            for gy in 0..gh {
                let r = self.rows[y * gh + gy];
                if r == T::zero() {
                    continue;
                }
                for x in 0..w {
                    let g = grad[y * w + x];
                    let t = &mut tmp[gy * w + x];
                    t[0] += r * g[0];
                    t[1] += r * g[1];
                }
            }
        }
        let mut out = vec![[T::zero(); 2]; gh * gw];
        for gy in 0..gh {
            for x in 0..w {
                let t = tmp[gy * w + x];
                for gx in 0..gw {
                    let c = self.cols[x * gw + gx];
                    if c != T::zero() {
                        let o = &mut out[gy * gw + gx];
                        o[0] += c * t[0];
                        o[1] += c * t[1];
                    }
                }
            }
        }
        out
    }
}

/// Bilinear upsampling composed with truncated, renormalized Gaussian
/// smoothing along one axis, as a dense `n x cells` matrix.
fn axis_matrix<T: Scalar>(n: usize, cells: usize, stride: usize, sigma: T) -> Vec<T> {
    let smooth = gaussian_matrix(cells, sigma);
    let mut m = vec![T::zero(); n * cells];
    let scale = T::from_usize_lossy(stride);
    let half = T::lit(0.5);
    let last = T::from_usize_lossy(cells - 1);
    for i in 0..n {
        let g = ((T::from_usize_lossy(i) + half) / scale - half).max(T::zero()).min(last);
        let i0 = g.floor().to_usize().unwrap_or(0).min(cells - 1);
        let i1 = (i0 + 1).min(cells - 1);
        let f = g - T::from_usize_lossy(i0);
        for c in 0..cells {
            let mut w = smooth[i0 * cells + c] * (T::one() - f);
            w += smooth[i1 * cells + c] * f;
            m[i * cells + c] = w;
        }
    }
    m
}

fn gaussian_matrix<T: Scalar>(cells: usize, sigma: T) -> Vec<T> {
    let mut m = vec![T::zero(); cells * cells];
    if sigma <= T::zero() {
        for i in 0..cells {
            m[i * cells + i] = T::one();
        }
        return m;
    }
    let reach = (sigma * T::lit(3.0)).ceil().to_usize().unwrap_or(0);
    let denom = T::lit(2.0) * sigma * sigma;
    for i in 0..cells {
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(cells - 1);
        let mut total = T::zero();
        for c in lo..=hi {
            let d = T::from_usize_lossy(c.abs_diff(i));
            let w = (-(d * d) / denom).exp();
            m[i * cells + c] = w;
            total += w;
        }
        for c in lo..=hi {
            m[i * cells + c] /= total;
        }
    }
    m
}

/// Output of a fine-tuning run.
#[derive(Clone, Debug)]
pub struct RefinedFlow<T> {
    pub flow: FlowField<T>,
    /// Loss before each epoch, followed by the loss after the last one.
    pub losses: Vec<T>,
}

/// Anything that can fine-tune a flow field toward a target under an epoch budget.
pub trait FlowRefiner<T: Scalar>: Send + Sync {
    fn refine(&self, base: &FlowField<T>, target: &TargetFlow<T>, epochs: usize) -> Result<RefinedFlow<T>>;
}

/// Reference refiner backed by a [`CorrectionGrid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRefiner<T> {
    pub stride: usize,
    pub sigma: T,
    pub lr: T,
    pub penalty: SmoothL1<T>,
}

impl<T: Scalar> Default for GridRefiner<T> {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            sigma: T::lit(DEFAULT_SIGMA),
            lr: T::lit(DEFAULT_LR),
            penalty: SmoothL1::default(),
        }
    }
}

impl<T: Scalar> GridRefiner<T> {
    /// Mean smooth-L1 between `grid.apply(base)` and `target`, and its
    /// gradient w.r.t. the grid values.
    pub fn objective(&self, grid: &CorrectionGrid<T>, base: &FlowField<T>, target: &FlowField<T>) -> Result<(T, Vec<[T; 2]>)> {
        grid.check(base)?;
        base.ensure_same_dims(target)?;
        let op = grid.operator();
        let correction = op.forward(&grid.values);
        let n = T::from_usize_lossy(base.data().len());
        let mut value = T::zero();
        let mut grad_px = vec![[T::zero(); 2]; correction.len()];
        for (i, c) in correction.iter().enumerate() {
            let b = base.data()[i];
            let t = target.data()[i];
            let r = [b[0] + c[0] - t[0], b[1] + c[1] - t[1]];
            let mut g = [T::zero(); 2];
            value += self.penalty.accumulate(r, &mut g);
            grad_px[i] = [g[0] / n, g[1] / n];
        }
        Ok((value / n, op.backward(&grad_px)))
    }

    /// Runs `epochs` Adam steps from a zero grid and returns the full trace.
    pub fn fit(&self, base: &FlowField<T>, target: &TargetFlow<T>, epochs: usize) -> Result<(CorrectionGrid<T>, Vec<T>)> {
        base.ensure_same_dims(&target.flow)?;
        let mut grid = CorrectionGrid::zeros(base.width(), base.height(), self.stride, self.sigma)?;
        let mut adam = AdamState::new(grid.values.len() * 2);
        let mut params: Vec<T> = vec![T::zero(); grid.values.len() * 2];
        let mut losses = Vec::with_capacity(epochs + 1);
        for epoch in 0..=epochs {
            let (loss, grad) = self.objective(&grid, base, &target.flow)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("flow refinement loss is non-finite at epoch {epoch}")));
            }
            losses.push(loss);
            if epoch == epochs {
                break;
            }
            let flat: Vec<T> = grad.iter().flatten().copied().collect();
            adam.step(&mut params, &flat, self.lr)?;
            for (v, p) in grid.values.iter_mut().zip(params.chunks_exact(2)) {
                *v = [p[0], p[1]];
            }
        }
        Ok((grid, losses))
    }
}

impl<T: Scalar> FlowRefiner<T> for GridRefiner<T> {
    fn refine(&self, base: &FlowField<T>, target: &TargetFlow<T>, epochs: usize) -> Result<RefinedFlow<T>> {
        if epochs == 0 {
            base.ensure_same_dims(&target.flow)?;
            let (loss, _) = self.objective(&CorrectionGrid::zeros(base.width(), base.height(), self.stride, self.sigma)?, base, &target.flow)?;
            return Ok(RefinedFlow {
                flow: base.clone(),
                losses: vec![loss],
            });
        }
        let (grid, losses) = self.fit(base, target, epochs)?;
        let flow = grid.apply(base)?;
        if !flow.is_finite() {
            return Err(Error::Numerical("refined flow contains non-finite values".into()));
        }
        Ok(RefinedFlow { flow, losses })
    }
}

/// Fine-tunes `base` toward `target` with the default grid refiner at learning rate `lr`.
pub fn refine_flow<T: Scalar>(base: &FlowField<T>, target: &TargetFlow<T>, epochs: usize, lr: T) -> Result<FlowField<T>> {
    let refiner = GridRefiner {
        lr,
        ..GridRefiner::default()
    };
    Ok(refiner.refine(base, target, epochs)?.flow)
}
