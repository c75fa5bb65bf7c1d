//! Pairwise co-occurrence (Sørensen-Dice) and co-variation (Pearson)
//! matrices over components, and their nerve-minus-reference differences.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probmodel::StandardizedCoefficients;
use crate::scalar::Scalar;

/// Fewest jointly supported pixels for which a correlation is reported.
pub const MIN_JOINT_SUPPORT: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Square matrix whose entries may be undefined (`None`, serialized as
/// `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix<T> {
    values: Array2<Option<T>>,
}

impl<T: Scalar> MetricMatrix<T> {
    pub fn undefined(k: usize) -> Self {
        Self {
            values: Array2::from_elem((k, k), None),
        }
    }

    pub fn from_values(values: Array2<Option<T>>) -> Result<Self, MetricError> {
        if values.nrows() != values.ncols() {
            return Err(MetricError::ShapeMismatch(format!("matrix is {:?}, not square", values.dim())));
        }
        Ok(Self { values })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.values[(i, j)]
    }

    /// Undefined entries read as zero.
    pub fn value_or_zero(&self, i: usize, j: usize) -> T {
        self.values[(i, j)].unwrap_or(T::zero())
    }

    pub fn values(&self) -> ArrayView2<'_, Option<T>> {
        self.values.view()
    }

    /// Row-major nested vectors, the layout used in JSON exports.
    pub fn to_rows(&self) -> Vec<Vec<Option<T>>> {
        self.values.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn set_pair(&mut self, i: usize, j: usize, v: Option<T>) {
        self.values[(i, j)] = v;
        self.values[(j, i)] = v;
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.size();
        (0..k).all(|i| (0..i).all(|j| self.values[(i, j)] == self.values[(j, i)]))
    }

    /// Entries restricted to `ids`, in that order.
    pub fn select(&self, ids: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), ids).select(Axis(1), ids),
        }
    }
}

/// Which values enter a Pearson coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PccDomain {
    /// Pixels where both components are present; continuous values only.
    #[default]
    JointSupport,
    /// Every pixel, zeros entering as the standardization sentinel.
    WithSentinels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PearsonOptions {
    pub domain: PccDomain,
    pub min_joint_support: usize,
}

impl Default for PearsonOptions {
    fn default() -> Self {
        Self {
            domain: PccDomain::JointSupport,
            min_joint_support: MIN_JOINT_SUPPORT,
        }
    }
}

/// Dice and Pearson matrices over a set of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrices<T> {
    /// Component ids labelling rows and columns.
    pub components: Vec<usize>,
    pub dsc: MetricMatrix<T>,
    pub pcc: MetricMatrix<T>,
    /// Number of pixels where both components are present.
    pub support_counts: Array2<usize>,
}

impl<T: Scalar> CorrelationMatrices<T> {
    /// Matrices restricted to the given positions (not ids).
    pub fn select(&self, positions: &[usize]) -> Self {
        Self {
            components: positions.iter().map(|&p| self.components[p]).collect(),
            dsc: self.dsc.select(positions),
            pcc: self.pcc.select(positions),
            support_counts: self.support_counts.select(Axis(0), positions).select(Axis(1), positions),
        }
    }
}

fn joint_counts(m: ArrayView2<'_, bool>) -> Array2<usize> {
    let k = m.ncols();
    let mut counts = Array2::zeros((k, k));
    for row in m.rows() {
        for i in 0..k {
            if !row[i] {
                continue;
            }
            for j in i..k {
                if row[j] {
                    counts[(i, j)] += 1;
                }
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            counts[(i, j)] = counts[(j, i)];
        }
    }
    counts
}

fn dice_from_counts<T: Scalar>(counts: &Array2<usize>) -> MetricMatrix<T> {
    let k = counts.nrows();
    let mut out = MetricMatrix::undefined(k);
    for i in 0..k {
        for j in i..k {
            let denom = counts[(i, i)] + counts[(j, j)];
            let v = (denom > 0).then(|| T::count(2 * counts[(i, j)]) / T::count(denom));
            out.set_pair(i, j, v);
        }
    }
    out
}

/// Sørensen-Dice coefficients `2|mⱼ ∧ mₖ| / (|mⱼ| + |mₖ|)` between support
/// columns. Pairs with both supports empty are undefined.
pub fn dice_matrix<T: Scalar>(m: ArrayView2<'_, bool>) -> Result<MetricMatrix<T>, MetricError> {
    if m.nrows() == 0 {
        return Err(MetricError::ShapeMismatch("support matrix has no rows".into()));
    }
    Ok(dice_from_counts(&joint_counts(m)))
}

/// Pearson coefficient of two equally long samples, or `None` when either
/// has zero variance.
fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    let n = T::count(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    let r = sxy / (sxx * syy).sqrt();
    Some(r.max(-T::one()).min(T::one()))
}

fn pair_values<T: Scalar>(
    zj: ArrayView1<'_, T>,
    zk: ArrayView1<'_, T>,
    mj: ArrayView1<'_, bool>,
    mk: ArrayView1<'_, bool>,
    domain: PccDomain,
) -> (Vec<T>, Vec<T>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..zj.len() {
        if domain == PccDomain::WithSentinels || (mj[i] && mk[i]) {
            xs.push(zj[i]);
            ys.push(zk[i]);
        }
    }
    (xs, ys)
}

fn pearson_with_counts<T: Scalar>(
    z: &StandardizedCoefficients<T>,
    counts: &Array2<usize>,
    opts: PearsonOptions,
) -> MetricMatrix<T> {
    let k = z.z.ncols();
    let mut out = MetricMatrix::undefined(k);
    for j in 0..k {
        for l in j..k {
            let n = match opts.domain {
                PccDomain::JointSupport => counts[(j, l)],
                PccDomain::WithSentinels => z.z.nrows(),
            };
            if n < opts.min_joint_support.max(2) {
                continue;
            }
            let (xs, ys) = pair_values(z.z.column(j), z.z.column(l), z.m.column(j), z.m.column(l), opts.domain);
            let r = pearson(&xs, &ys);
            // A defined self-correlation is exactly one.
            let r = if j == l { r.map(|_| T::one()) } else { r };
            out.set_pair(j, l, r);
        }
    }
    out
}

/// Pearson coefficients between standardized components.
///
/// Under the default [`PccDomain::JointSupport`] each pair uses only pixels
/// where both are present. Entries with fewer than `min_joint_support`
/// pixels in the domain or with zero variance are undefined.
pub fn pearson_matrix<T: Scalar>(z: &StandardizedCoefficients<T>, opts: PearsonOptions) -> MetricMatrix<T> {
    pearson_with_counts(z, &joint_counts(z.m.view()), opts)
}

/// Dice, Pearson and joint-support matrices of standardized coefficients.
pub fn correlation_matrices<T: Scalar>(
    z: &StandardizedCoefficients<T>,
    opts: PearsonOptions,
) -> Result<CorrelationMatrices<T>, MetricError> {
    let counts = joint_counts(z.m.view());
    let dsc = if z.m.nrows() == 0 {
        MetricMatrix::undefined(z.m.ncols())
    } else {
        dice_from_counts(&counts)
    };
    let pcc = pearson_with_counts(z, &counts, opts);
    Ok(CorrelationMatrices {
        components: (0..z.z.ncols()).collect(),
        dsc,
        pcc,
        support_counts: counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMatrices<T> {
    pub components: Vec<usize>,
    pub dsc: MetricMatrix<T>,
    pub pcc: MetricMatrix<T>,
}

fn subtract<T: Scalar>(a: &MetricMatrix<T>, b: &MetricMatrix<T>) -> MetricMatrix<T> {
    let values = ndarray::Zip::from(&a.values)
        .and(&b.values)
        .map_collect(|x, y| match (x, y) {
            (Some(x), Some(y)) => Some(*x - *y),
            _ => None,
        });
    MetricMatrix { values }
}

/// Elementwise `a − b`; undefined on either side stays undefined.
pub fn difference_matrices<T: Scalar>(
    a: &CorrelationMatrices<T>,
    b: &CorrelationMatrices<T>,
) -> Result<DifferenceMatrices<T>, MetricError> {
    if a.dsc.size() != b.dsc.size() || a.pcc.size() != b.pcc.size() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} vs {} components",
            a.dsc.size(),
            b.dsc.size()
        )));
    }
    if a.components != b.components {
        return Err(MetricError::ShapeMismatch("matrices describe different components".into()));
    }
    Ok(DifferenceMatrices {
        components: a.components.clone(),
        dsc: subtract(&a.dsc, &b.dsc),
        pcc: subtract(&a.pcc, &b.pcc),
    })
}
