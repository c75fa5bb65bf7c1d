//! Regularized non-negative matrix factorization of pixel spectra.
//!
//! Solves
//!
//! ```text
//! min_{W,H ≥ 0}  ½‖S − WH‖²_F + λ1 (‖W‖₁ + ‖H‖₁) + ½ λF (‖W‖²_F + ‖H‖²_F)
//! ```
//!
//! with `S` the `[N × bands]` spectra, `W` the `[N × k]` coefficients and `H`
//! the `[k × bands]` component spectra. Updates are HALS-style exact
//! coordinate minimizations: the L1 term becomes a soft threshold and the
//! Frobenius term a ridge shrinkage of the denominator, so the objective never
//! increases between iterations.

mod init;
mod kernels;
mod matching;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use init::{nndsvd, symmetric_eigen};
pub use matching::{best_unique_assignment, match_components, ComponentMatch, EntryMatch, MAX_ASSIGNMENT_COMPONENTS};

/// Consecutive iterations compared by the stopping rule.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnmixError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input has a negative entry at ({row}, {col})")]
    NegativeInput { row: usize, col: usize },
    #[error("input has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("invalid unmixing configuration: {0}")]
    InvalidConfig(String),
    #[error("component {0} has a zero spectrum")]
    ZeroComponent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Init {
    #[serde(rename = "random")]
    Random,
    #[default]
    #[serde(rename = "nndsvd-like")]
    NndsvdLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnmixingConfig {
    pub k: usize,
    pub lambda1: f64,
    #[serde(rename = "lambdaF")]
    pub lambda_f: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init: Init,
    pub seed: u64,
    /// Scale every spectrum to unit maximum before fitting.
    pub row_max_normalize: bool,
}

impl Default for UnmixingConfig {
    fn default() -> Self {
        Self {
            k: 9,
            lambda1: 80.0,
            lambda_f: 20.0,
            max_iters: 2000,
            rel_tol: 1e-6,
            init: Init::NndsvdLike,
            seed: 0,
            row_max_normalize: false,
        }
    }
}

impl UnmixingConfig {
    pub fn validate(&self) -> Result<(), UnmixError> {
        let bad = |m: &str| Err(UnmixError::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return bad("lambda1 must be non-negative");
        }
        if !(self.lambda_f.is_finite() && self.lambda_f >= 0.0) {
            return bad("lambdaF must be non-negative");
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingResult<T> {
    /// Coefficients, `[N × k]`.
    pub w: Array2<T>,
    /// Component spectra, `[k × bands]`.
    pub h: Array2<T>,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<T>,
    /// `‖S − WH‖²_F / ‖S‖²_F` on the matrix that was factorized.
    pub relative_error: T,
    pub converged: bool,
    pub iterations: usize,
    /// Components that were reseeded after dying out.
    pub reseeded: Vec<usize>,
}

impl<T: Scalar> UnmixingResult<T> {
    pub fn final_objective(&self) -> T {
        *self.objective_trace.last().expect("trace is never empty")
    }

    /// Fraction of coefficients that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        if self.w.is_empty() {
            return 0.0;
        }
        self.w.iter().filter(|&&x| x == T::zero()).count() as f64 / self.w.len() as f64
    }
}

fn check_nonnegative<T: Scalar>(s: ArrayView2<'_, T>) -> Result<(), UnmixError> {
    for ((row, col), &x) in s.indexed_iter() {
        if !x.is_finite() {
            return Err(UnmixError::NonFinite { row, col });
        }
        if x < T::zero() {
            return Err(UnmixError::NegativeInput { row, col });
        }
    }
    Ok(())
}

fn check_finite<T: Scalar>(m: ArrayView2<'_, T>) -> Result<(), UnmixError> {
    match m.indexed_iter().find(|(_, x)| !x.is_finite()) {
        Some(((row, col), _)) => Err(UnmixError::NonFinite { row, col }),
        None => Ok(()),
    }
}

fn row_max_normalized<T: Scalar>(s: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = s.to_owned();
    for mut row in out.rows_mut() {
        let peak = row.iter().fold(T::zero(), |a, &x| a.max(x));
        if peak > T::zero() {
            row.mapv_inplace(|x| x / peak);
        }
    }
    out
}

fn squared_norm<T: Scalar>(m: ArrayView2<'_, T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

fn objective_unchecked<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: ArrayView2<'_, T>,
    h: ArrayView2<'_, T>,
    lambda1: T,
    lambda_f: T,
) -> T {
    let half = T::lit(0.5);
    let l1 = w.iter().chain(h.iter()).fold(T::zero(), |a, &x| a + x.abs());
    let fro = squared_norm(w) + squared_norm(h);
    half * kernels::residual_norm2(s, w, h) + lambda1 * l1 + half * lambda_f * fro
}

/// `½‖S − WH‖²_F + λ1(‖W‖₁ + ‖H‖₁) + ½λF(‖W‖²_F + ‖H‖²_F)`.
pub fn nmf_objective<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: ArrayView2<'_, T>,
    h: ArrayView2<'_, T>,
    lambda1: T,
    lambda_f: T,
) -> Result<T, UnmixError> {
    if w.nrows() != s.nrows() || h.ncols() != s.ncols() || w.ncols() != h.nrows() {
        return Err(UnmixError::ShapeMismatch(format!(
            "S {:?}, W {:?}, H {:?}",
            s.dim(),
            w.dim(),
            h.dim()
        )));
    }
    check_finite(s)?;
    check_finite(w)?;
    check_finite(h)?;
    let (s, w, h) = (s.as_standard_layout(), w.as_standard_layout(), h.as_standard_layout());
    Ok(objective_unchecked(s.view(), w.view(), h.view(), lambda1, lambda_f))
}

/// A later inner sweep must move the factor by less than this fraction of
/// the first sweep's movement for the inner loop to continue.
const INNER_DECAY: f64 = 0.1;

/// Inner sweep budgets. Forming `S·Hᵀ` or `Wᵀ·S` costs far more than one
/// coordinate sweep, so each product is reused for several sweeps; the
/// budgets follow the cost ratio of product to sweep.
fn inner_budgets(n: usize, bands: usize, k: usize) -> (usize, usize) {
    let rho_w = 1.0 + (bands as f64 + 1.0) / (k as f64 + 1.0);
    let rho_h = 1.0 + (n as f64 * (bands + k) as f64) / (bands as f64 * (k + 1) as f64);
    let inner = |rho: f64| (1.0 + 0.5 * rho).floor().clamp(1.0, 50.0) as usize;
    (inner(rho_w), inner(rho_h))
}

/// Sweeps over every row of `target` with fixed cross products, stopping
/// early once a sweep moves far less than the first one did.
fn inner_sweeps<T: Scalar>(
    target: &mut Array2<T>,
    cross: ArrayView2<'_, T>,
    gram: ArrayView2<'_, T>,
    lambda1: T,
    lambda_f: T,
    budget: usize,
    parallel: bool,
) {
    let mut first = None;
    for _ in 0..budget {
        let total = kernels::sweep_all(target, cross, gram, lambda1, lambda_f, parallel);
        match first {
            None => first = Some(total),
            Some(f) => {
                if total <= T::lit(INNER_DECAY * INNER_DECAY) * f {
                    break;
                }
            }
        }
        if total == T::zero() {
            break;
        }
    }
}

/// Updates `W` with `H` fixed.
fn update_w<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: &mut Array2<T>,
    h: ArrayView2<'_, T>,
    lambda1: T,
    lambda_f: T,
    budget: usize,
) {
    let a = kernels::s_ht(s, h);
    let b = h.dot(&h.t());
    inner_sweeps(w, a.view(), b.view(), lambda1, lambda_f, budget, true);
}

/// Updates `H` with `W` fixed. Each wavelength column of `H` is an
/// independent coordinate problem, handled as a row of `Hᵀ`.
fn update_h<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: ArrayView2<'_, T>,
    h: &mut Array2<T>,
    lambda1: T,
    lambda_f: T,
    budget: usize,
) {
    let c = kernels::st_w(s, w);
    let d = kernels::gram_cols(w);
    let mut ht = h.t().as_standard_layout().into_owned();
    inner_sweeps(&mut ht, c.view(), d.view(), lambda1, lambda_f, budget, false);
    h.assign(&ht.t());
}

/// Solves the coefficient subproblem of one row to convergence.
fn solve_row<T: Scalar>(w: &mut [T], a: &[T], b: &[T], lambda1: T, lambda_f: T, max_sweeps: usize) {
    let tol = T::lit(4.0) * T::epsilon();
    for _ in 0..max_sweeps {
        let change = kernels::sweep_row(w, a, b, lambda1, lambda_f).sqrt();
        let scale = w.iter().fold(T::zero(), |m, &x| m.max(x));
        if change <= tol * scale {
            break;
        }
    }
}

/// Minimum sweeps granted to each row solve; the subproblem is tiny.
const ROW_SOLVE_MIN_SWEEPS: usize = 10_000;

fn solve_all_rows<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: &mut Array2<T>,
    h: ArrayView2<'_, T>,
    lambda1: T,
    lambda_f: T,
    max_sweeps: usize,
) {
    let k = w.ncols();
    if k == 0 || w.nrows() == 0 {
        return;
    }
    let a = kernels::s_ht(s, h);
    let b = h.dot(&h.t());
    let bs = b.as_slice().expect("fresh product is contiguous");
    let ws = w.as_slice_mut().expect("coefficients are in standard layout");
    ws.par_chunks_mut(kernels::ROW_CHUNK * k)
        .zip(a.as_slice().unwrap().par_chunks(kernels::ROW_CHUNK * k))
        .for_each(|(wc, ac)| {
            for (wr, ar) in wc.chunks_mut(k).zip(ac.chunks(k)) {
                solve_row(wr, ar, bs, lambda1, lambda_f, max_sweeps);
            }
        });
}

/// Revives a dead component from the worst-fit pixel's residual. Returns
/// whether the objective did not increase, in which case `w`/`h` keep the
/// new component.
fn try_reseed<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: &mut Array2<T>,
    h: &mut Array2<T>,
    j: usize,
    lambda1: T,
    lambda_f: T,
    current: T,
) -> Option<T> {
    let residual = &s - &w.dot(&*h);
    let norms: Vec<T> = residual
        .rows()
        .into_iter()
        .map(|r| r.iter().fold(T::zero(), |a, &x| a + x.max(T::zero()).powi(2)))
        .collect();
    let (worst, &peak) = norms
        .iter()
        .enumerate()
        .fold((0, &T::zero()), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    if peak == T::zero() {
        return None;
    }
    let root = peak.sqrt().sqrt();
    let candidate_h = residual.row(worst).mapv(|x| x.max(T::zero()) / root);
    let hh = candidate_h.dot(&candidate_h) + lambda_f;
    let proj = residual.dot(&candidate_h);
    let candidate_w: Array1<T> = proj.mapv(|p| ((p - lambda1) / hh).max(T::zero()));

    let (old_w, old_h) = (w.column(j).to_owned(), h.row(j).to_owned());
    w.column_mut(j).assign(&candidate_w);
    h.row_mut(j).assign(&candidate_h);
    let obj = objective_unchecked(s, w.view(), h.view(), lambda1, lambda_f);
    if obj <= current {
        Some(obj)
    } else {
        w.column_mut(j).assign(&old_w);
        h.row_mut(j).assign(&old_h);
        None
    }
}

/// Sorts components by total coefficient mass, largest first; ties go to the
/// component whose spectrum peaks at the shorter wavelength.
fn canonical_order<T: Scalar>(w: &Array2<T>, h: &Array2<T>) -> Vec<usize> {
    let mass: Vec<T> = w.axis_iter(Axis(1)).map(|c| c.sum()).collect();
    let peak: Vec<usize> = h
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect();
    let mut order: Vec<usize> = (0..w.ncols()).collect();
    order.sort_by(|&a, &b| {
        mass[b]
            .partial_cmp(&mass[a])
            .unwrap()
            .then(peak[a].cmp(&peak[b]))
            .then(a.cmp(&b))
    });
    order
}

fn prepare<T: Scalar>(s: ArrayView2<'_, T>, cfg: &UnmixingConfig) -> Result<Option<Array2<T>>, UnmixError> {
    cfg.validate()?;
    check_nonnegative(s)?;
    Ok(cfg.row_max_normalize.then(|| row_max_normalized(s)))
}

/// Factorizes non-negative spectra `s` into `W·H`.
///
/// Stops when the objective has dropped by less than `rel_tol` (relative)
/// over the last [`CONVERGENCE_WINDOW`] iterations or after `max_iters`
/// iterations; the latter is reported through `converged = false`. The
/// coefficients are finally solved to convergence with `H` fixed, so they
/// coincide with [`transform`] of the same spectra.
pub fn fit<T: Scalar>(s: ArrayView2<'_, T>, cfg: &UnmixingConfig) -> Result<UnmixingResult<T>, UnmixError> {
    let normalized = prepare(s, cfg)?;
    let standard = s.as_standard_layout();
    let s = normalized.as_ref().map_or(standard.view(), |m| m.view());
    check_rank(s, cfg)?;
    let (w, h) = match cfg.init {
        Init::NndsvdLike => init::nndsvd(s, cfg.k),
        Init::Random => init::random(s, cfg.k, cfg.seed),
    };
    run(s, w, h, cfg)
}

/// [`fit`] from caller-supplied starting factors; `cfg.init` and
/// `cfg.seed` are ignored.
pub fn fit_with_init<T: Scalar>(
    s: ArrayView2<'_, T>,
    w0: Array2<T>,
    h0: Array2<T>,
    cfg: &UnmixingConfig,
) -> Result<UnmixingResult<T>, UnmixError> {
    let normalized = prepare(s, cfg)?;
    let standard = s.as_standard_layout();
    let s = normalized.as_ref().map_or(standard.view(), |m| m.view());
    check_rank(s, cfg)?;
    if w0.dim() != (s.nrows(), cfg.k) || h0.dim() != (cfg.k, s.ncols()) {
        return Err(UnmixError::ShapeMismatch(format!(
            "start W {:?} and H {:?} do not fit S {:?} with k = {}",
            w0.dim(),
            h0.dim(),
            s.dim(),
            cfg.k
        )));
    }
    check_nonnegative(w0.view())?;
    check_nonnegative(h0.view())?;
    run(s, w0, h0, cfg)
}

fn check_rank<T: Scalar>(s: ArrayView2<'_, T>, cfg: &UnmixingConfig) -> Result<(), UnmixError> {
    if s.nrows() < cfg.k {
        return Err(UnmixError::ShapeMismatch(format!(
            "need at least k = {} spectra, got {}",
            cfg.k,
            s.nrows()
        )));
    }
    Ok(())
}

fn run<T: Scalar>(
    s: ArrayView2<'_, T>,
    w: Array2<T>,
    h: Array2<T>,
    cfg: &UnmixingConfig,
) -> Result<UnmixingResult<T>, UnmixError> {
    let mut w = w.as_standard_layout().into_owned();
    let mut h = h.as_standard_layout().into_owned();
    let lambda1 = T::lit(cfg.lambda1);
    let lambda_f = T::lit(cfg.lambda_f);
    let (budget_w, budget_h) = inner_budgets(s.nrows(), s.ncols(), cfg.k);

    let mut current = objective_unchecked(s, w.view(), h.view(), lambda1, lambda_f);
    let mut trace = vec![current];
    let mut reseed_used = vec![false; cfg.k];
    let mut reseeded = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let (prev_w, prev_h) = (w.clone(), h.clone());
        update_w(s, &mut w, h.view(), lambda1, lambda_f, budget_w);
        update_h(s, w.view(), &mut h, lambda1, lambda_f, budget_h);
        let mut next = objective_unchecked(s, w.view(), h.view(), lambda1, lambda_f);

        if next > current {
            // Exact coordinate steps cannot increase the objective; an
            // increase is rounding noise at a stationary point.
            w = prev_w;
            h = prev_h;
            converged = true;
            break;
        }
        iterations += 1;

        for j in 0..cfg.k {
            let dead = w.column(j).iter().all(|&x| x == T::zero()) || h.row(j).iter().all(|&x| x == T::zero());
            if dead && !reseed_used[j] {
                reseed_used[j] = true;
                if let Some(obj) = try_reseed(s, &mut w, &mut h, j, lambda1, lambda_f, next) {
                    next = obj;
                    reseeded.push(j);
                }
            }
        }

        current = next;
        trace.push(current);
        if trace.len() > CONVERGENCE_WINDOW {
            let before = trace[trace.len() - 1 - CONVERGENCE_WINDOW];
            if before - current <= T::lit(cfg.rel_tol) * before.abs() {
                converged = true;
                break;
            }
        }
    }

    let mut polished = w.clone();
    let sweeps = cfg.max_iters.max(ROW_SOLVE_MIN_SWEEPS);
    solve_all_rows(s, &mut polished, h.view(), lambda1, lambda_f, sweeps);
    let polished_obj = objective_unchecked(s, polished.view(), h.view(), lambda1, lambda_f);
    if polished_obj <= current {
        w = polished;
        if polished_obj < current {
            trace.push(polished_obj);
        }
    }

    let order = canonical_order(&w, &h);
    let w = w.select(Axis(1), &order).as_standard_layout().into_owned();
    let h = h.select(Axis(0), &order).as_standard_layout().into_owned();
    let reseeded = reseeded
        .into_iter()
        .map(|j| order.iter().position(|&o| o == j).unwrap())
        .collect();

    let total = squared_norm(s);
    let relative_error = if total > T::zero() {
        kernels::residual_norm2(s, w.view(), h.view()) / total
    } else {
        T::zero()
    };
    Ok(UnmixingResult {
        w,
        h,
        objective_trace: trace,
        relative_error,
        converged,
        iterations,
        reseeded,
    })
}

/// Coefficients of new spectra against fixed components `h`: the same
/// objective minimized over `W` alone.
///
/// With `H` fixed the problem separates into one small non-negative ridge
/// problem per spectrum, each solved by coordinate descent until a sweep
/// changes no coefficient by more than a few ulps of the largest one.
pub fn transform<T: Scalar>(
    s_new: ArrayView2<'_, T>,
    h: ArrayView2<'_, T>,
    cfg: &UnmixingConfig,
) -> Result<Array2<T>, UnmixError> {
    let normalized = prepare(s_new, cfg)?;
    let standard = s_new.as_standard_layout();
    let s = normalized.as_ref().map_or(standard.view(), |m| m.view());
    if h.ncols() != s.ncols() {
        return Err(UnmixError::ShapeMismatch(format!(
            "spectra have {} bands, components have {}",
            s.ncols(),
            h.ncols()
        )));
    }
    check_finite(h)?;
    let h = h.as_standard_layout();
    let h = h.view();
    let mut w = Array2::zeros((s.nrows(), h.nrows()));
    let sweeps = cfg.max_iters.max(ROW_SOLVE_MIN_SWEEPS);
    solve_all_rows(s, &mut w, h, T::lit(cfg.lambda1), T::lit(cfg.lambda_f), sweeps);
    Ok(w)
}
