//! ν-support vector regression solved in the dual by SMO.
//!
//! The dual is written over `2S` variables: `α` (first `S`, sign `+1`) and
//! `α*` (last `S`, sign `−1`), with box `[0, λ/S]` and the per-sign sums
//! `Σα = Σα* = λν/2`. The regression function is
//! `f(a) = Σ_c (α_c − α*_c) k(a_c, a) + bias`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZslError};
use crate::linalg::{rbf_kernel, KernelSpec};
use crate::scalar::Scalar;

/// Kernel on semantic vectors: a single RBF, or a convex mixture of two RBFs
/// over the column blocks `[..split]` and `[split..]` (two semantic types
/// concatenated). The mixture weight is `first.combination_weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvrKernel<T> {
    Rbf(KernelSpec<T>),
    Mixture {
        split: usize,
        first: KernelSpec<T>,
        second: KernelSpec<T>,
    },
}

impl<T: Scalar> SvrKernel<T> {
    pub fn matrix(&self, a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
        match self {
            SvrKernel::Rbf(spec) => rbf_kernel(a, b, spec),
            SvrKernel::Mixture { split, first, second } => {
                let split = *split;
                if split == 0 || split >= a.ncols() || a.ncols() != b.ncols() {
                    return Err(ZslError::dim(format!(
                        "kernel split {split} invalid for {} and {} columns",
                        a.ncols(),
                        b.ncols()
                    )));
                }
                let k1 = rbf_kernel(a.slice(s![.., ..split]), b.slice(s![.., ..split]), first)?;
                let k2 = rbf_kernel(a.slice(s![.., split..]), b.slice(s![.., split..]), second)?;
                crate::linalg::combine_kernels(k1.view(), k2.view(), first.combination_weight)
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            SvrKernel::Rbf(spec) => spec.check(),
            SvrKernel::Mixture { first, second, .. } => {
                first.check()?;
                second.check()
            }
        }
    }
}

/// Trained ν-SVR regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SvrModel<T> {
    /// `α_c − α*_c` per training point.
    #[serde(with = "crate::report::zsfm_b64_vec")]
    pub support_coefficients: Array1<T>,
    pub bias: T,
    /// Half-width of the ε-tube found by the solver.
    pub epsilon: T,
    pub kernel: SvrKernel<T>,
    #[serde(with = "crate::report::zsfm_b64")]
    pub training_inputs: Array2<T>,
    pub lambda: T,
    pub nu: T,
    /// Box bound `λ/S` on each dual variable.
    pub c_box: T,
    pub iterations: usize,
    pub converged: bool,
    /// Identical inputs carry different targets: the regression is unlearnable.
    pub degenerate: bool,
    /// Dual objective `½βᵀKβ − tᵀβ` (minimization form).
    pub dual_objective: f64,
}

/// Maximal KKT violation accepted at convergence.
pub const KKT_TOLERANCE: f64 = 1e-3;

impl<T: Scalar> SvrModel<T> {
    pub fn predict(&self, inputs: ArrayView2<T>) -> Result<Array1<T>> {
        if inputs.ncols() != self.training_inputs.ncols() {
            return Err(ZslError::dim(format!(
                "regressor trained on {} columns, got {}",
                self.training_inputs.ncols(),
                inputs.ncols()
            )));
        }
        let k = self.kernel.matrix(inputs, self.training_inputs.view())?;
        Ok(k.dot(&self.support_coefficients) + self.bias)
    }

    /// Fraction of training points with a non-zero dual coefficient.
    pub fn support_fraction(&self) -> f64 {
        let tiny = self.c_box * T::of(1e-10);
        let n = self.support_coefficients.len();
        self.support_coefficients.iter().filter(|b| b.abs() > tiny).count() as f64 / n as f64
    }

    /// Fraction of training points outside the ε-tube by more than the KKT tolerance.
    pub fn margin_error_fraction(&self, targets: ArrayView1<T>) -> Result<f64> {
        let pred = self.predict(self.training_inputs.view())?;
        let tol = T::of(KKT_TOLERANCE);
        let n = targets.len();
        let outside = pred
            .iter()
            .zip(targets.iter())
            .filter(|(&p, &t)| (p - t).abs() > self.epsilon + tol)
            .count();
        Ok(outside as f64 / n as f64)
    }

    /// Primal objective `½‖q‖² + λ(νε + (1/S)Σ(ξ+ξ'))` at the solver's `(q, bias, ε)`.
    pub fn primal_objective(&self, targets: ArrayView1<T>) -> Result<f64> {
        let k = self
            .kernel
            .matrix(self.training_inputs.view(), self.training_inputs.view())?;
        let beta = &self.support_coefficients;
        let quad = beta.dot(&k.dot(beta)) * T::of(0.5);
        let f = k.dot(beta) + self.bias;
        let slack: T = f
            .iter()
            .zip(targets.iter())
            .map(|(&p, &t)| ((p - t).abs() - self.epsilon).max(T::zero()))
            .sum();
        let s = T::of_usize(targets.len());
        Ok((quad + self.lambda * (self.nu * self.epsilon + slack / s)).as_f64())
    }
}

/// Dual objective `½βᵀKβ − tᵀβ` for a coefficient vector.
pub fn dual_objective<T: Scalar>(kernel: ArrayView2<T>, targets: ArrayView1<T>, beta: ArrayView1<T>) -> T {
    beta.dot(&kernel.dot(&beta)) * T::of(0.5) - targets.dot(&beta)
}

/// Solves the ν-SVR dual for `inputs → targets`.
pub fn train_nu_svr<T: Scalar>(
    inputs: ArrayView2<T>,
    targets: ArrayView1<T>,
    lambda: T,
    nu: T,
    kernel: SvrKernel<T>,
) -> Result<SvrModel<T>> {
    let n = inputs.nrows();
    if n < 2 {
        return Err(ZslError::arg(format!(
            "ν-SVR needs at least 2 training points, got {n}"
        )));
    }
    if targets.len() != n {
        return Err(ZslError::dim(format!("{n} inputs but {} targets", targets.len())));
    }
    if !(nu > T::zero() && nu <= T::one()) {
        return Err(ZslError::arg(format!("nu must lie in (0, 1], got {nu}")));
    }
    if !(lambda > T::zero()) {
        return Err(ZslError::arg(format!("lambda must be positive, got {lambda}")));
    }
    kernel.check()?;
    let k = kernel.matrix(inputs, inputs)?;
    let c_box = lambda / T::of_usize(n);
    let total = lambda * nu / T::of(2.0);

    let l = 2 * n;
    let sign = |t: usize| if t < n { T::one() } else { -T::one() };
    let point = |t: usize| if t < n { t } else { t - n };
    let mut gamma = Array1::<T>::zeros(l);
    for side in 0..2 {
        let mut left = total;
        for i in 0..n {
            let v = left.min(c_box);
            gamma[side * n + i] = v;
            left = left - v;
        }
    }
    // G = Qγ + p with Q_st = y_s y_t K, p_t = −y_t z
    let beta_of = |g: &Array1<T>| -> Array1<T> {
        Array1::from_shape_fn(n, |i| g[i] - g[i + n])
    };
    let kb = k.dot(&beta_of(&gamma));
    let mut grad = Array1::from_shape_fn(l, |t| sign(t) * (kb[point(t)] - targets[point(t)]));

    let upper = c_box * (T::one() - T::of(1e-12));
    let lower = c_box * T::of(1e-12);
    let tol = T::of(KKT_TOLERANCE);
    let cap = 100_000 * n;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cap {
        let mut best: Option<(T, usize, usize)> = None;
        for side in 0..2 {
            let range = side * n..(side + 1) * n;
            let mut i_sel: Option<usize> = None;
            let mut j_sel: Option<usize> = None;
            for t in range {
                if gamma[t] < upper && i_sel.is_none_or(|i| grad[t] < grad[i]) {
                    i_sel = Some(t);
                }
                if gamma[t] > lower && j_sel.is_none_or(|j| grad[t] > grad[j]) {
                    j_sel = Some(t);
                }
            }
            if let (Some(i), Some(j)) = (i_sel, j_sel) {
                let gap = grad[j] - grad[i];
                if best.is_none_or(|(g, _, _)| gap > g) {
                    best = Some((gap, i, j));
                }
            }
        }
        let Some((gap, i, j)) = best else {
            converged = true;
            break;
        };
        if gap < tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (pi, pj) = (point(i), point(j));
        let eta = (k[[pi, pi]] + k[[pj, pj]] - T::of(2.0) * k[[pi, pj]]).max(T::of(1e-12));
        let delta = (gap / eta).min(c_box - gamma[i]).min(gamma[j]);
        if !(delta > T::zero()) {
            // round-off left no room to move
            converged = gap < tol;
            break;
        }
        gamma[i] = gamma[i] + delta;
        gamma[j] = gamma[j] - delta;
        // both variables share the sign y, so Δ(Qγ)_t = y_t y δ (K_{t,pi} − K_{t,pj})
        let y = sign(i);
        for t in 0..l {
            let pt = point(t);
            grad[t] = grad[t] + sign(t) * y * delta * (k[[pt, pi]] - k[[pt, pj]]);
        }
        if iterations % 1024 == 0 {
            // periodic refresh keeps the incremental gradient from drifting
            let kb = k.dot(&beta_of(&gamma));
            for t in 0..l {
                grad[t] = sign(t) * (kb[point(t)] - targets[point(t)]);
            }
        }
    }

    // bias and tube width from the free variables of each sign
    let side_value = |side: usize| -> T {
        let mut free_sum = T::zero();
        let mut free = 0usize;
        let mut ub = T::infinity();
        let mut lb = T::neg_infinity();
        for t in side * n..(side + 1) * n {
            if gamma[t] >= upper {
                lb = lb.max(grad[t]);
            } else if gamma[t] <= lower {
                ub = ub.min(grad[t]);
            } else {
                free += 1;
                free_sum = free_sum + grad[t];
            }
        }
        if free > 0 {
            free_sum / T::of_usize(free)
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / T::of(2.0)
        } else if ub.is_finite() {
            ub
        } else {
            lb
        }
    };
    let r1 = side_value(0);
    let r2 = side_value(1);
    let bias = (r2 - r1) / T::of(2.0);
    let epsilon = -(r1 + r2) / T::of(2.0);

    let mut beta = beta_of(&gamma);
    // exact zeros for points whose α and α* cancel
    for b in beta.iter_mut() {
        if b.abs() <= lower {
            *b = T::zero();
        }
    }
    let dual = dual_objective(k.view(), targets, beta.view());

    let degenerate = {
        let t0 = targets[0];
        let varied = targets.iter().any(|&t| (t - t0).abs() > T::of(1e-12) * (T::one() + t0.abs()));
        let r0 = inputs.row(0);
        let identical = inputs.rows().into_iter().all(|r| r == r0);
        varied && identical
    };
    if !converged {
        log::warn!("ν-SVR reached its iteration cap ({cap}) before meeting the KKT tolerance");
    }
    if degenerate {
        log::warn!("ν-SVR inputs are all identical while targets differ");
    }
    Ok(SvrModel {
        support_coefficients: beta,
        bias,
        epsilon,
        kernel,
        training_inputs: inputs.to_owned(),
        lambda,
        nu,
        c_box,
        iterations,
        converged: converged && !degenerate,
        degenerate,
        dual_objective: dual.as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rbf(bw: f64) -> SvrKernel<f64> {
        SvrKernel::Rbf(KernelSpec::rbf(bw).unwrap())
    }

    #[test]
    fn constant_targets_give_constant_function() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [2.0, 1.0]];
        let t = array![3.5, 3.5, 3.5, 3.5];
        let m = train_nu_svr(x.view(), t.view(), 1.0, 0.5, rbf(1.0)).unwrap();
        assert!(m.converged);
        assert!(m.support_coefficients.iter().all(|&b| b == 0.0));
        let p = m.predict(array![[9.0, -3.0], [0.1, 0.2]].view()).unwrap();
        assert!(p.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = array![[0.0], [1.0]];
        let t = array![0.0, 1.0];
        assert!(train_nu_svr(x.slice(s![..1, ..]), t.slice(s![..1]), 1.0, 0.5, rbf(1.0)).is_err());
        assert!(train_nu_svr(x.view(), t.view(), 1.0, 0.0, rbf(1.0)).is_err());
        assert!(train_nu_svr(x.view(), t.view(), 1.0, 1.5, rbf(1.0)).is_err());
        assert!(train_nu_svr(x.view(), t.view(), 0.0, 0.5, rbf(1.0)).is_err());
    }

    #[test]
    fn identical_inputs_flagged() {
        let x = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let t = array![0.0, 1.0, 2.0];
        let m = train_nu_svr(x.view(), t.view(), 1.0, 0.5, rbf(1.0)).unwrap();
        assert!(m.degenerate);
        assert!(!m.converged);
    }

    #[test]
    fn constraints_hold() {
        let x = array![[0.0], [0.3], [0.9], [1.4], [2.0], [2.2]];
        let t = x.column(0).mapv(|v: f64| v.sin());
        let m = train_nu_svr(x.view(), t.view(), 10.0, 0.4, rbf(0.5)).unwrap();
        assert!(m.converged);
        assert!(m.support_coefficients.sum().abs() < 1e-10);
        for b in m.support_coefficients.iter() {
            assert!(b.abs() <= m.c_box + 1e-8);
        }
        assert!(m.margin_error_fraction(t.view()).unwrap() <= 0.4 + 1.0 / 6.0);
        assert!(m.support_fraction() >= 0.4 - 1.0 / 6.0);
        let primal = m.primal_objective(t.view()).unwrap();
        assert!(primal + m.dual_objective >= -1e-9);
        assert!(primal + m.dual_objective < 1e-2);
    }

    #[test]
    fn mixture_kernel_endpoints() {
        let a = array![[0.0, 1.0, 2.0], [1.0, 0.0, 0.5]];
        let k1 = KernelSpec::new(1.0, 1.0).unwrap();
        let k2 = KernelSpec::rbf(0.7).unwrap();
        let mix = SvrKernel::Mixture { split: 1, first: k1, second: k2 };
        let m = mix.matrix(a.view(), a.view()).unwrap();
        let only_first = rbf_kernel(a.slice(s![.., ..1]), a.slice(s![.., ..1]), &k1).unwrap();
        assert!((&m - &only_first).iter().all(|d: &f64| d.abs() < 1e-15));
        let bad = SvrKernel::Mixture { split: 3, first: k1, second: k2 };
        assert!(bad.matrix(a.view(), a.view()).is_err());
    }
}
