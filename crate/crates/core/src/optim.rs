//! Smooth-L1 penalty, Adam, and a central-difference gradient checker.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smooth-L1 (Huber-style) penalty with transition point `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothL1<T> {
    beta: T,
}

impl<T: Scalar> Default for SmoothL1<T> {
    fn default() -> Self {
        Self { beta: T::one() }
    }
}

impl<T: Scalar> SmoothL1<T> {
    pub fn new(beta: T) -> Result<Self> {
        if !(beta > T::zero() && beta.is_finite()) {
            return Err(Error::invalid("smooth-L1 beta must be positive and finite"));
        }
        Ok(Self { beta })
    }

    #[inline]
    pub fn beta(&self) -> T {
        self.beta
    }

    #[inline]
    pub fn value(&self, r: T) -> T {
        let a = r.abs();
        if a < self.beta {
            T::lit(0.5) * r * r / self.beta
        } else {
            a - T::lit(0.5) * self.beta
        }
    }

    #[inline]
    pub fn grad(&self, r: T) -> T {
        if r.abs() < self.beta {
            r / self.beta
        } else {
            r.signum()
        }
    }

    /// Distance of `r` from the quadratic/linear transition.
    #[inline]
    pub fn kink_gap(&self, r: T) -> T {
        (r.abs() - self.beta).abs()
    }

    /// Sum over components, writing `d value / d r` into `grad`.
    #[inline]
    pub fn accumulate<const N: usize>(&self, r: [T; N], grad: &mut [T; N]) -> T {
        let mut v = T::zero();
        for c in 0..N {
            v += self.value(r[c]);
            grad[c] = self.grad(r[c]);
        }
        v
    }
}

/// Value and gradient of the summed smooth-L1 penalty of a residual vector.
pub fn smooth_l1<T: Scalar>(residual: &[T], cfg: SmoothL1<T>) -> Result<(T, Vec<T>)> {
    if let Some(i) = residual.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numerical(format!("non-finite residual component {i}")));
    }
    let value = residual.iter().map(|&r| cfg.value(r)).sum();
    let grad = residual.iter().map(|&r| cfg.grad(r)).collect();
    Ok((value, grad))
}

/// Adam moment accumulators for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<T>,
    v: Vec<T>,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam state holds {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let one = T::one();
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck<T> {
    /// `max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|)`.
    pub max_rel_error: T,
    pub worst_component: usize,
    pub numeric: Vec<T>,
}

/// Checks `analytic` against central differences of `loss` at `params`.
pub fn finite_diff_check<T, F>(mut loss: F, analytic: &[T], params: &[T], step: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if analytic.len() != params.len() {
        return Err(Error::invalid("analytic gradient length does not match parameters"));
    }
    let floor = T::lit(1e-8);
    let two = T::lit(2.0);
    let mut x = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut worst = (T::zero(), 0usize);
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = loss(&x);
        x[i] = orig - step;
        let minus = loss(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!("loss is non-finite when perturbing component {i}")));
        }
        let d = (plus - minus) / (two * step);
        let rel = (analytic[i] - d).abs() / d.abs().max(floor);
        if rel > worst.0 {
            worst = (rel, i);
        }
        numeric.push(d);
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_component: worst.1,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smooth_l1_examples() {
        let h = SmoothL1::<f64>::default();
        assert_eq!(smooth_l1(&[0.0], h).unwrap(), (0.0, vec![0.0]));
        assert_eq!(smooth_l1(&[0.5], h).unwrap().0, 0.125);
        assert_eq!(smooth_l1(&[2.0], h).unwrap(), (1.5, vec![1.0]));
        assert_eq!(smooth_l1(&[-2.0, 0.5], h).unwrap(), (1.625, vec![-1.0, 0.5]));
        assert!(smooth_l1(&[f64::NAN], h).is_err());
        assert!(SmoothL1::new(0.0f64).is_err());
    }

    #[test]
    fn smooth_l1_c1_at_transition() {
        for beta in [0.3f64, 1.0, 2.5] {
            let h = SmoothL1::new(beta).unwrap();
            let e = 1e-12;
            assert!((h.value(beta - e) - h.value(beta + e)).abs() < 1e-9);
            assert!((h.grad(beta - e) - h.grad(beta + e)).abs() < 1e-9);
            assert!((h.grad(-beta - e) - h.grad(-beta + e)).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut s = AdamState::new(3);
        let mut p = [1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(s.steps(), 1);
        assert!(s.step(&mut p, &[0.0; 2], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut s = AdamState::new(1);
        let mut p = [0.0f64];
        s.step(&mut p, &[1.0], 0.001).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-6);
    }

    /// Straight-line scalar Adam used as the reference for the quadratic run.
    fn reference_adam_on_square(mut p: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn adam_minimizes_square() {
        let reference = reference_adam_on_square(1.0, 0.1, 100);
        assert!(reference.abs() < 0.05);
        let mut s = AdamState::new(1);
        let mut p = [1.0f64];
        for _ in 0..100 {
            let g = [2.0 * p[0]];
            s.step(&mut p, &g, 0.1).unwrap();
        }
        assert!(p[0].abs() < 0.05);
        assert!((p[0] - reference).abs() < 1e-12);
    }

    #[test]
    fn grad_check_quadratic_and_smooth_l1() {
        let params = [0.3, -1.7, 2.2];
        let quad = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum::<f64>();
        let analytic: Vec<f64> = params.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect();
        let c = finite_diff_check(quad, &analytic, &params, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-8, "{}", c.max_rel_error);

        let h = SmoothL1::default();
        let r = [0.4, -0.6, 1.8, -3.1];
        let (_, g) = smooth_l1(&r, h).unwrap();
        let c = finite_diff_check(|x: &[f64]| smooth_l1(x, h).unwrap().0, &g, &r, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-5, "{}", c.max_rel_error);
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let err = finite_diff_check(|x: &[f64]| if x[1] > 1.0 { f64::NAN } else { 0.0 }, &[0.0, 0.0], &[0.0, 1.0], 1e-5).unwrap_err();
        assert!(err.to_string().contains("component 1"));
    }

    proptest! {
        #[test]
        fn smooth_l1_is_even(r in -10.0f64..10.0, beta in 0.01f64..5.0) {
            let h = SmoothL1::new(beta).unwrap();
            prop_assert_eq!(h.value(r), h.value(-r));
        }

        #[test]
        fn adam_is_deterministic(g in prop::collection::vec(-5.0f64..5.0, 4), lr in 1e-4f64..1.0) {
            let run = || {
                let mut s = AdamState::new(4);
                let mut p = vec![0.5; 4];
                for _ in 0..3 { s.step(&mut p, &g, lr).unwrap(); }
                (p, s)
            };
            let (a, sa) = run();
            let (b, sb) = run();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(sa, sb);
        }
    }
}
