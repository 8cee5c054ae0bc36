//! MSE loss, Adam, and the finite-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean of squared differences and its gradient `2 (pred - target) / count`.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("mse of an empty batch"));
    }
    let inv = T::one() / T::from_usize_lossy(pred.len());
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            T::c(2.0) * d * inv
        })
        .collect();
    Ok((loss * inv, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Optimizer state for one named parameter tensor. The values themselves stay
/// with the model; the group owns the gradient accumulator and both moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup<T> {
    pub name: String,
    pub grads: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub hyper: AdamHyper,
    /// Number of completed steps.
    pub t: u64,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(name: impl Into<String>, len: usize, hyper: AdamHyper) -> Self {
        Self {
            name: name.into(),
            grads: vec![T::zero(); len],
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            hyper,
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.fill(T::zero());
    }

    /// Bias-corrected Adam update of `values` at learning rate `lr`; gradients
    /// are zeroed afterwards. A non-finite gradient aborts the step untouched.
    pub fn step_with_lr(&mut self, values: &mut [T], lr: f64) -> Result<()> {
        if values.len() != self.grads.len() {
            return Err(Error::shape(format!(
                "group {} has {} gradients for {} values",
                self.name,
                self.grads.len(),
                values.len()
            )));
        }
        if let Some(i) = self.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: self.t,
                detail: format!("non-finite gradient in {}[{i}] = {}", self.name, self.grads[i]),
            });
        }
        self.t += 1;
        let h = self.hyper;
        let (b1, b2) = (T::c(h.beta1), T::c(h.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = 1.0 - h.beta1.powf(self.t as f64);
        let c2 = 1.0 - h.beta2.powf(self.t as f64);
        let step = T::c(lr / c1);
        let inv_c2 = T::c(1.0 / c2);
        let eps = T::c(h.eps);
        for (((x, g), m), v) in values
            .iter_mut()
            .zip(self.grads.iter_mut())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            *x -= step * *m / ((*v * inv_c2).sqrt() + eps);
            *g = T::zero();
        }
        Ok(())
    }

    pub fn step(&mut self, values: &mut [T]) -> Result<()> {
        let lr = self.hyper.lr;
        self.step_with_lr(values, lr)
    }
}

/// Applies one Adam step to `values` using the group's accumulated gradients.
pub fn adam_step<T: Scalar>(group: &mut ParamGroup<T>, values: &mut [T]) -> Result<()> {
    group.step(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error and its analytic / numeric values.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic[i]` with the central difference `(f(θ+h) - f(θ-h)) / 2h`
/// for every `i` in `indices`. `f` must be deterministic.
pub fn grad_check<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    theta: &[T],
    analytic: &[T],
    indices: &[usize],
    h: f64,
) -> GradCheckReport {
    let mut probe = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    let hs = T::c(h);
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + hs;
        let plus = f(&probe);
        probe[i] = orig - hs;
        let minus = f(&probe);
        probe[i] = orig;
        // use the perturbation actually representable in T
        let width = ((orig + hs) - (orig - hs)).to_f64_lossy();
        let numeric = (plus - minus).to_f64_lossy() / width;
        let a = analytic[i].to_f64_lossy();
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_identities() {
        let p = [0.1f64, 0.5, 0.9];
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let q: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        let (l, _) = mse_loss(&q, &p).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert!(mse_loss::<f32>(&[], &[]).is_err());
        assert!(mse_loss(&[1.0f32], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let target: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let (l, g) = mse_loss(&pred, &target).unwrap();
        let diffs: Vec<f64> = pred.iter().zip(&target).map(|(a, b)| a - b).collect();
        let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / 300.0;
        assert!((l - oracle).abs() < 1e-7);
        for (gi, d) in g.iter().zip(&diffs) {
            assert!((gi - 2.0 * d / 300.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_leaves_values() {
        let mut g = ParamGroup::<f32>::new("x", 3, AdamHyper::with_lr(0.1));
        let mut x = vec![1.0, -2.0, 3.0];
        adam_step(&mut g, &mut x).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
        assert_eq!(g.t, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut g = ParamGroup::<f64>::new("x", 3, AdamHyper::with_lr(0.01));
        g.grads = vec![3.0, -0.2, 50.0];
        let mut x = vec![0.0; 3];
        adam_step(&mut g, &mut x).unwrap();
        for (xi, s) in x.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((xi - s * 0.01).abs() < 1e-8);
        }
        assert!(g.grads.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn converges_on_parabola() {
        let mut g = ParamGroup::<f64>::new("x", 1, AdamHyper::with_lr(0.1));
        let mut x = vec![1.0];
        for _ in 0..100 {
            g.grads[0] = 2.0 * x[0];
            adam_step(&mut g, &mut x).unwrap();
        }
        assert!(x[0].abs() < 0.05, "x = {}", x[0]);
    }

    #[test]
    fn sign_flip_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grads: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut a = ParamGroup::<f64>::new("a", 5, AdamHyper::with_lr(0.05));
        let mut b = a.clone();
        let (mut xa, mut xb) = (vec![0.0; 5], vec![0.0; 5]);
        for g in &grads {
            a.grads = g.clone();
            b.grads = g.iter().map(|v| -v).collect();
            adam_step(&mut a, &mut xa).unwrap();
            adam_step(&mut b, &mut xb).unwrap();
        }
        for (p, q) in xa.iter().zip(&xb) {
            assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut g = ParamGroup::<f32>::new("w", 2, AdamHyper::with_lr(0.1));
        g.grads = vec![1.0, f32::NAN];
        let mut x = vec![0.5, 0.5];
        let err = adam_step(&mut g, &mut x).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert_eq!(x, vec![0.5, 0.5]);
        assert_eq!(g.t, 0);
    }

    #[test]
    fn grad_check_linear_and_quadratic() {
        let c = [0.5f64, -2.0, 3.0];
        let theta = [1.0, 2.0, -1.0];
        let lin = grad_check(|t| t.iter().zip(&c).map(|(a, b)| a * b).sum(), &theta, &c, &[0, 1, 2], 1e-3);
        assert!(lin.max_rel_error < 1e-6);

        // cubic term makes the central difference inexact at O(h^2)
        let f = |t: &[f64]| t.iter().map(|v| v * v * v).sum::<f64>();
        let grad: Vec<f64> = theta.iter().map(|v| 3.0 * v * v).collect();
        let coarse = grad_check(f, &theta, &grad, &[0, 1, 2], 1e-1);
        let fine = grad_check(f, &theta, &grad, &[0, 1, 2], 1e-2);
        assert!(fine.max_rel_error < coarse.max_rel_error / 50.0);
        let quad = grad_check(|t| t.iter().map(|v| v * v).sum(), &theta, &[2.0, 4.0, -2.0], &[0, 1, 2], 1e-3);
        assert!(quad.max_rel_error < 1e-6);
    }

    #[test]
    fn grad_check_reports_worst() {
        let r = grad_check(|t: &[f64]| t[0] + t[1], &[0.0, 0.0], &[1.0, 3.0], &[0, 1], 1e-3);
        assert_eq!(r.worst_index, 1);
        assert!((r.max_rel_error - 2.0 / 3.0).abs() < 1e-9);
    }
}
