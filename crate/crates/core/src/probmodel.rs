//! Two-part coefficient model: a Bernoulli presence indicator per component
//! plus a Box-Cox-normalized, studentized continuous part on the nonzeros.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{mean_std, Scalar};

/// Value assigned to zero coefficients after standardization.
pub const ZERO_SENTINEL: f64 = -3.0;

/// Fewest nonzero samples for which a continuous model is fitted.
pub const MIN_NONZERO: usize = 10;

/// Search bracket and coarse step for the Box-Cox power parameter.
pub const BETA_RANGE: (f64, f64) = (-3.0, 3.0);
pub const BETA_GRID_STEP: f64 = 0.01;
pub const BETA_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("Box-Cox needs a positive input, got {value} at index {index}")]
    NonPositiveInput { index: usize, value: f64 },
    #[error("need at least {min} samples, got {found}")]
    TooFewSamples { min: usize, found: usize },
    #[error("all samples are equal")]
    DegenerateData,
    #[error("{0} is outside the range of the inverse transform")]
    OutOfRange(f64),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("component {component} has no continuous model but row {row} is nonzero")]
    NullModelNonzero { component: usize, row: usize },
}

/// Box-Cox power transform: `(x^β − 1)/β`, or `ln x` at `β = 0`.
///
/// Near `β·ln x = 0` it is evaluated as `expm1(β·ln x)/β`, which stays
/// accurate as `β → 0`; elsewhere the power form is used directly.
pub fn box_cox<T: Scalar>(x: T, beta: T) -> Result<T, ProbError> {
    if !(x > T::zero()) {
        return Err(ProbError::NonPositiveInput {
            index: 0,
            value: x.as_f64(),
        });
    }
    Ok(box_cox_unchecked(x, beta))
}

#[inline]
fn box_cox_unchecked<T: Scalar>(x: T, beta: T) -> T {
    let ln = x.ln();
    if beta == T::zero() {
        ln
    } else if (beta * ln).abs() < T::one() {
        (beta * ln).exp_m1() / beta
    } else {
        (x.powf(beta) - T::one()) / beta
    }
}

/// Inverse of [`box_cox`] for a fixed `β`.
pub fn inverse_box_cox<T: Scalar>(y: T, beta: T) -> Result<T, ProbError> {
    if beta == T::zero() {
        return Ok(y.exp());
    }
    let by = beta * y;
    if !(by > -T::one()) {
        return Err(ProbError::OutOfRange(y.as_f64()));
    }
    Ok((by.ln_1p() / beta).exp())
}

fn check_samples<T: Scalar>(xs: &[T]) -> Result<(), ProbError> {
    if let Some(index) = xs.iter().position(|&x| !(x > T::zero()) || !x.is_finite()) {
        return Err(ProbError::NonPositiveInput {
            index,
            value: xs[index].as_f64(),
        });
    }
    Ok(())
}

/// Profile log-likelihood of `β`, up to an additive constant:
/// `−(n/2)·ln σ̂²(β) + (β − 1)·Σ ln xᵢ`, with `σ̂²` the population variance
/// of the transformed samples.
pub fn box_cox_log_likelihood<T: Scalar>(xs: &[T], beta: f64) -> Result<f64, ProbError> {
    check_samples(xs)?;
    let logs: Vec<f64> = xs.iter().map(|x| x.as_f64().ln()).collect();
    let n = logs.len() as f64;
    let sum_log: f64 = logs.iter().sum();
    let log_gm = sum_log / n;
    Ok(profile_on_centered_logs(&centered(&logs, log_gm), beta, n, log_gm))
}

fn centered(logs: &[f64], log_gm: f64) -> Vec<f64> {
    logs.iter().map(|l| l - log_gm).collect()
}

/// Variance of the transform of `y = x / gm`, where `ln y` is given.
///
/// Scaling the data by its geometric mean changes `ln σ̂²` by `2β·ln gm` and
/// the Jacobian term by `(β − 1)·n·ln gm`, so the likelihood differs only by
/// `−n·ln gm`; working on `y` keeps the powers near 1 for any `β`.
fn scaled_variance(centered_logs: &[f64], beta: f64) -> f64 {
    let t = |l: f64| if beta == 0.0 { l } else { (beta * l).exp_m1() / beta };
    let n = centered_logs.len() as f64;
    let mean = centered_logs.iter().map(|&l| t(l)).sum::<f64>() / n;
    centered_logs.iter().map(|&l| (t(l) - mean).powi(2)).sum::<f64>() / n
}

fn profile_on_centered_logs(centered_logs: &[f64], beta: f64, n: f64, log_gm: f64) -> f64 {
    -0.5 * n * scaled_variance(centered_logs, beta).ln() - n * log_gm
}

/// Maximum-likelihood Box-Cox power parameter.
///
/// The profile likelihood is scanned on a 0.01 grid over `[−3, 3]` and the
/// best cell is refined by golden-section search to a bracket of `1e-4`.
pub fn box_cox_mle<T: Scalar>(xs: &[T]) -> Result<T, ProbError> {
    if xs.len() < MIN_NONZERO {
        return Err(ProbError::TooFewSamples {
            min: MIN_NONZERO,
            found: xs.len(),
        });
    }
    check_samples(xs)?;
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(ProbError::DegenerateData);
    }
    let logs: Vec<f64> = xs.iter().map(|x| x.as_f64().ln()).collect();
    let log_gm = logs.iter().sum::<f64>() / logs.len() as f64;
    let c = centered(&logs, log_gm);
    // Only the variance depends on β; maximizing −ln σ̂² is enough.
    let objective = |beta: f64| -scaled_variance(&c, beta).ln();

    let (lo, hi) = BETA_RANGE;
    let steps = ((hi - lo) / BETA_GRID_STEP).round() as usize;
    let at = |i: usize| lo + i as f64 * BETA_GRID_STEP;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..=steps {
        let v = objective(at(i));
        if v > best.1 {
            best = (i, v);
        }
    }
    if !best.1.is_finite() {
        return Err(ProbError::DegenerateData);
    }
    let mut a = at(best.0.saturating_sub(1));
    let mut b = at((best.0 + 1).min(steps));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    while b - a > BETA_TOLERANCE {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2);
        }
    }
    let refined = 0.5 * (a + b);
    // Keep the grid point if refinement wandered onto a worse value, which
    // can only happen when the likelihood is flat to rounding.
    let beta = if objective(refined) >= best.1 { refined } else { at(best.0) };
    Ok(T::lit(beta))
}

/// Why a component has no continuous model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullReason {
    TooFewNonzero,
    DegenerateData,
}

/// Box-Cox parameters and moments of a component's nonzero coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel<T> {
    pub beta: T,
    pub mu: T,
    pub sigma: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel<T> {
    /// Presence probability, `n_nonzero / n_total`.
    pub p: T,
    pub n_nonzero: usize,
    pub n_total: usize,
    /// `None` when the continuous part could not be fitted.
    pub continuous: Option<ContinuousModel<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_reason: Option<NullReason>,
}

impl<T: Scalar> ComponentModel<T> {
    /// Fits one coefficient column. "Nonzero" means strictly positive.
    pub fn fit(column: ArrayView1<'_, T>) -> Self {
        let nonzero: Vec<T> = column.iter().copied().filter(|&x| x > T::zero()).collect();
        let n_total = column.len();
        let n_nonzero = nonzero.len();
        let p = if n_total == 0 {
            T::zero()
        } else {
            T::count(n_nonzero) / T::count(n_total)
        };
        let (continuous, null_reason) = if n_nonzero < MIN_NONZERO {
            (None, Some(NullReason::TooFewNonzero))
        } else {
            match box_cox_mle(&nonzero) {
                Ok(beta) => {
                    let (mu, sigma) = mean_std(nonzero.iter().map(|&x| box_cox_unchecked(x, beta)))
                        .expect("nonzero set is not empty");
                    if sigma > T::zero() {
                        (Some(ContinuousModel { beta, mu, sigma }), None)
                    } else {
                        (None, Some(NullReason::DegenerateData))
                    }
                }
                Err(_) => (None, Some(NullReason::DegenerateData)),
            }
        };
        Self {
            p,
            n_nonzero,
            n_total,
            continuous,
            null_reason,
        }
    }
}

/// Fits a [`ComponentModel`] per column of `W`; columns are independent and
/// fitted in parallel.
pub fn fit_component_models<T: Scalar>(w: ArrayView2<'_, T>) -> Vec<ComponentModel<T>> {
    (0..w.ncols())
        .into_par_iter()
        .map(|j| ComponentModel::fit(w.column(j)))
        .collect()
}

/// Standardized coefficients `Z` and support matrix `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedCoefficients<T> {
    pub z: Array2<T>,
    pub m: Array2<bool>,
}

impl<T: Scalar> StandardizedCoefficients<T> {
    pub fn n_components(&self) -> usize {
        self.z.ncols()
    }

    /// Rows restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            z: self.z.select(ndarray::Axis(0), rows),
            m: self.m.select(ndarray::Axis(0), rows),
        }
    }
}

/// Studentizes Box-Cox-transformed nonzero coefficients and maps zeros to
/// [`ZERO_SENTINEL`].
pub fn standardize<T: Scalar>(
    w: ArrayView2<'_, T>,
    models: &[ComponentModel<T>],
) -> Result<StandardizedCoefficients<T>, ProbError> {
    if w.ncols() != models.len() {
        return Err(ProbError::ModelMismatch(format!(
            "{} coefficient columns, {} models",
            w.ncols(),
            models.len()
        )));
    }
    let sentinel = T::lit(ZERO_SENTINEL);
    let mut z = Array2::from_elem(w.dim(), sentinel);
    let m = w.mapv(|x| x > T::zero());
    for (j, model) in models.iter().enumerate() {
        let mut col = z.column_mut(j);
        for (row, (&x, out)) in w.column(j).iter().zip(col.iter_mut()).enumerate() {
            if x < T::zero() || !x.is_finite() {
                return Err(ProbError::NonPositiveInput {
                    index: row,
                    value: x.as_f64(),
                });
            }
            if x == T::zero() {
                continue;
            }
            let Some(c) = &model.continuous else {
                return Err(ProbError::NullModelNonzero { component: j, row });
            };
            *out = (box_cox_unchecked(x, c.beta) - c.mu) / c.sigma;
        }
    }
    Ok(StandardizedCoefficients { z, m })
}

/// Maps standardized values back to coefficients; the exact inverse of
/// [`standardize`] on the support.
pub fn destandardize<T: Scalar>(
    z: ArrayView2<'_, T>,
    m: ArrayView2<'_, bool>,
    models: &[ComponentModel<T>],
) -> Result<Array2<T>, ProbError> {
    if z.ncols() != models.len() || z.dim() != m.dim() {
        return Err(ProbError::ModelMismatch("shape of Z, M and models disagree".into()));
    }
    let mut w = Array2::zeros(z.dim());
    for ((row, j), out) in w.indexed_iter_mut() {
        if !m[(row, j)] {
            continue;
        }
        let c = models[j]
            .continuous
            .as_ref()
            .ok_or(ProbError::NullModelNonzero { component: j, row })?;
        *out = inverse_box_cox(z[(row, j)] * c.sigma + c.mu, c.beta)?;
    }
    Ok(w)
}
