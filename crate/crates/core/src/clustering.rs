//! Mixture classes, their Ward dendrogram, and spectral fingerprints.
//!
//! A pixel's *pattern* is the bit set of components with a nonzero
//! coefficient (bit `j` for component `j`). Pixels sharing a pattern form a
//! mixture class; classes are the leaves of an agglomerative Ward tree built
//! over their mean L2-normalized spectra.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{correlation_matrices, difference_matrices, CorrelationMatrices, DifferenceMatrices, PearsonOptions};
use crate::probmodel::StandardizedCoefficients;
use crate::scalar::Scalar;
use crate::stack::{spectra_stats, SpectrumNormalization};

/// Largest component count whose patterns fit the `u64` encoding.
pub const MAX_COMPONENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0} components exceed the supported maximum of 64")]
    TooManyComponents(usize),
    #[error("need at least two classes to build a tree, got {0}")]
    TooFewClasses(usize),
    #[error("ROI {0:?} has no pixels with a nonzero pattern")]
    EmptyRoi(String),
    #[error("pattern {0:#b} is not a leaf of the tree")]
    UnknownPattern(u64),
    #[error("invalid cut: {0}")]
    InvalidCut(String),
    #[error("cluster has no usable spectra")]
    EmptyCluster,
    #[error("fingerprints are over different leaves")]
    LeafMismatch,
}

/// Support pattern of one row of `M`.
pub fn pattern_of(row: ArrayView1<'_, bool>) -> u64 {
    row.iter()
        .enumerate()
        .fold(0u64, |p, (j, &present)| if present { p | (1 << j) } else { p })
}

/// Patterns of every row of `M`.
pub fn patterns(m: ArrayView2<'_, bool>) -> Result<Vec<u64>, ClusterError> {
    if m.ncols() > MAX_COMPONENTS {
        return Err(ClusterError::TooManyComponents(m.ncols()));
    }
    Ok(m.rows().into_iter().map(pattern_of).collect())
}

/// Component indices set in `pattern`, ascending.
pub fn components_of(pattern: u64) -> Vec<usize> {
    (0..MAX_COMPONENTS).filter(|&j| pattern & (1 << j) != 0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureClass<T> {
    pub pattern: u64,
    /// Member rows of the pixel matrix. Not serialized.
    #[serde(skip)]
    pub pixel_ids: Vec<usize>,
    pub count: usize,
    /// Mean of the members' L2-normalized spectra.
    pub representative: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassEnumeration<T> {
    /// Classes with a nonzero pattern, sorted by pattern.
    pub classes: Vec<MixtureClass<T>>,
    /// Rows whose pattern is empty; excluded from the tree.
    pub empty_pixels: Vec<usize>,
}

/// Groups rows by support pattern and computes class representatives.
pub fn enumerate_classes<T: Scalar>(
    m: ArrayView2<'_, bool>,
    s: ArrayView2<'_, T>,
) -> Result<ClassEnumeration<T>, ClusterError> {
    if m.nrows() != s.nrows() {
        return Err(ClusterError::ShapeMismatch(format!(
            "{} support rows, {} spectra",
            m.nrows(),
            s.nrows()
        )));
    }
    let pats = patterns(m)?;
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (row, &p) in pats.iter().enumerate() {
        groups.entry(p).or_default().push(row);
    }
    let empty_pixels = groups.remove(&0).unwrap_or_default();
    let bands = s.ncols();
    let classes = groups
        .into_iter()
        .map(|(pattern, pixel_ids)| {
            let spectra: Vec<_> = pixel_ids.iter().map(|&r| s.row(r)).collect();
            let representative = spectra_stats(&spectra, bands, SpectrumNormalization::L2)
                .map(|(mean, ..)| mean)
                .unwrap_or_else(|| Array1::zeros(bands));
            MixtureClass {
                pattern,
                count: pixel_ids.len(),
                pixel_ids,
                representative,
            }
        })
        .collect();
    Ok(ClassEnumeration { classes, empty_pixels })
}

/// How class sizes enter the Ward criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WardWeighting {
    /// Each class weighs its pixel count.
    #[default]
    PixelCount,
    /// Every class weighs one.
    Unweighted,
}

/// One agglomeration. Node ids below the leaf count are leaves; merge `i`
/// creates node `leaves + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge<T> {
    /// Child whose subtree holds the smaller minimum pattern.
    pub left: usize,
    pub right: usize,
    /// `sqrt(2·nₐ·n_b/(nₐ + n_b))·‖cₐ − c_b‖`, the Ward distance.
    pub height: T,
    /// Leaves under the new node.
    pub size: usize,
    /// Total Ward weight under the new node.
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTree<T> {
    pub leaves: Vec<MixtureClass<T>>,
    pub merges: Vec<Merge<T>>,
    pub weighting: WardWeighting,
}

/// Pair order for merging: smallest distance, then smallest pair of minimum
/// patterns.
fn better<T: Scalar>(d: T, key: (u64, u64), best: &Option<(T, (u64, u64), usize, usize)>) -> bool {
    match best {
        None => true,
        Some((bd, bkey, ..)) => d < *bd || (d == *bd && key < *bkey),
    }
}

/// Agglomerative Ward clustering of class representatives.
///
/// Distances are maintained by the Lance-Williams recurrence on squared
/// Ward distances, starting from `2·wᵢ·wⱼ/(wᵢ + wⱼ)·‖xᵢ − xⱼ‖²`.
pub fn build_tree<T: Scalar>(
    classes: Vec<MixtureClass<T>>,
    weighting: WardWeighting,
) -> Result<MixtureTree<T>, ClusterError> {
    let n = classes.len();
    if n < 2 {
        return Err(ClusterError::TooFewClasses(n));
    }
    let two = T::lit(2.0);
    let mut weight: Vec<T> = classes
        .iter()
        .map(|c| match weighting {
            WardWeighting::PixelCount => T::count(c.count),
            WardWeighting::Unweighted => T::one(),
        })
        .collect();
    let mut d2 = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &classes[i].representative - &classes[j].representative;
            let sq = diff.dot(&diff);
            let v = two * weight[i] * weight[j] / (weight[i] + weight[j]) * sq;
            d2[i][j] = v;
            d2[j][i] = v;
        }
    }
    // Slot i holds the active cluster first seeded by leaf i.
    let mut active = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut min_pattern: Vec<u64> = classes.iter().map(|c| c.pattern).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..(n - 1) {
        let mut best: Option<(T, (u64, u64), usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                let (a, b) = (min_pattern[i].min(min_pattern[j]), min_pattern[i].max(min_pattern[j]));
                if better(d2[i][j], (a, b), &best) {
                    best = Some((d2[i][j], (a, b), i, j));
                }
            }
        }
        let (dist2, _, i, j) = best.expect("at least two active clusters");
        let (first, second) = if min_pattern[i] < min_pattern[j] { (i, j) } else { (j, i) };
        let mut height = dist2.max(T::zero()).sqrt();
        if let Some(prev) = merges.last().map(|m: &Merge<T>| m.height) {
            // Ward is monotone; anything beyond rounding is a bug.
            assert!(
                height >= prev - T::lit(1e-9) * prev.max(T::one()),
                "Ward heights decreased: {prev} then {height}"
            );
            height = height.max(prev);
        }
        merges.push(Merge {
            left: node[first],
            right: node[second],
            height,
            size: size[i] + size[j],
            weight: weight[i] + weight[j],
        });

        let (wi, wj) = (weight[i], weight[j]);
        for l in 0..n {
            if !active[l] || l == i || l == j {
                continue;
            }
            let wl = weight[l];
            let v = ((wi + wl) * d2[i][l] + (wj + wl) * d2[j][l] - wl * dist2) / (wi + wj + wl);
            d2[i][l] = v;
            d2[l][i] = v;
        }
        active[j] = false;
        weight[i] = wi + wj;
        size[i] += size[j];
        min_pattern[i] = min_pattern[i].min(min_pattern[j]);
        node[i] = n + step;
    }
    Ok(MixtureTree {
        leaves: classes,
        merges,
        weighting,
    })
}

impl<T: Scalar> MixtureTree<T> {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> usize {
        self.leaves.len() + self.merges.len() - 1
    }

    fn children(&self, node: usize) -> Option<(usize, usize)> {
        node.checked_sub(self.leaves.len())
            .map(|i| (self.merges[i].left, self.merges[i].right))
    }

    /// Leaf indices in dendrogram order (left subtree first).
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaves.len());
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            match self.children(node) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(node),
            }
        }
        out
    }

    /// Leaf index of each pattern.
    pub fn leaf_index(&self) -> BTreeMap<u64, usize> {
        self.leaves.iter().enumerate().map(|(i, c)| (c.pattern, i)).collect()
    }

    /// Leaves under `node`, in dendrogram order.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match self.children(n) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(n),
            }
        }
        out
    }
}

/// Distribution of an ROI's pixels over the tree leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFingerprint<T> {
    pub label: String,
    /// Leaf patterns in dendrogram order.
    pub patterns: Vec<u64>,
    /// Relative frequency per leaf, aligned with `patterns`; sums to one.
    pub weights: Vec<T>,
    /// Fraction of all ROI pixels whose pattern is empty.
    pub unexplained: T,
    /// ROI pixels with a nonzero pattern.
    pub n_pixels: usize,
}

impl<T: Scalar> SpectralFingerprint<T> {
    pub fn weight_of(&self, pattern: u64) -> Option<T> {
        self.patterns.iter().position(|&p| p == pattern).map(|i| self.weights[i])
    }
}

/// Fingerprint of the ROI whose pixel patterns are `roi_patterns`.
pub fn fingerprint<T: Scalar>(
    tree: &MixtureTree<T>,
    roi_patterns: &[u64],
    label: &str,
) -> Result<SpectralFingerprint<T>, ClusterError> {
    let order = tree.leaf_order();
    let position: BTreeMap<u64, usize> = order
        .iter()
        .enumerate()
        .map(|(pos, &leaf)| (tree.leaves[leaf].pattern, pos))
        .collect();
    let mut counts = vec![0usize; order.len()];
    let mut empty = 0usize;
    for &p in roi_patterns {
        if p == 0 {
            empty += 1;
            continue;
        }
        let pos = *position.get(&p).ok_or(ClusterError::UnknownPattern(p))?;
        counts[pos] += 1;
    }
    let n_pixels = roi_patterns.len() - empty;
    if n_pixels == 0 {
        return Err(ClusterError::EmptyRoi(label.to_string()));
    }
    let total = T::count(n_pixels);
    Ok(SpectralFingerprint {
        label: label.to_string(),
        patterns: order.iter().map(|&l| tree.leaves[l].pattern).collect(),
        weights: counts.iter().map(|&c| T::count(c) / total).collect(),
        unexplained: T::count(empty) / T::count(roi_patterns.len()),
        n_pixels,
    })
}

/// Total-variation distance `½·Σ|pᵢ − qᵢ|` between two fingerprints.
pub fn total_variation<T: Scalar>(a: &SpectralFingerprint<T>, b: &SpectralFingerprint<T>) -> Result<T, ClusterError> {
    if a.patterns != b.patterns {
        return Err(ClusterError::LeafMismatch);
    }
    let sum = a
        .weights
        .iter()
        .zip(&b.weights)
        .fold(T::zero(), |acc, (&p, &q)| acc + (p - q).abs());
    Ok(T::lit(0.5) * sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutSpec {
    /// Exactly this many clusters.
    Count(usize),
    /// Keep only merges at or below this height.
    Height(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeCut {
    /// Cluster id per leaf index. Ids follow dendrogram order, so each
    /// cluster is a contiguous span of the leaf ordering.
    pub assignment: Vec<usize>,
    pub n_clusters: usize,
    /// Node id of each cluster's subtree root.
    pub roots: Vec<usize>,
}

impl TreeCut {
    /// Leaf indices of cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&l| self.assignment[l] == c).collect()
    }
}

/// Cuts the tree into clusters by count or by height.
pub fn cut_tree<T: Scalar>(tree: &MixtureTree<T>, spec: CutSpec) -> Result<TreeCut, ClusterError> {
    let n = tree.n_leaves();
    let applied = match spec {
        CutSpec::Count(c) => {
            if c == 0 || c > n {
                return Err(ClusterError::InvalidCut(format!("{c} clusters requested from {n} leaves")));
            }
            n - c
        }
        CutSpec::Height(h) => {
            if !h.is_finite() {
                return Err(ClusterError::InvalidCut("height must be finite".into()));
            }
            tree.merges.iter().take_while(|m| m.height.as_f64() <= h).count()
        }
    };
    // Nodes created by applied merges are internal to a cluster; roots are
    // the nodes whose parent merge was not applied.
    let mut roots = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(node) = stack.pop() {
        match node.checked_sub(n) {
            Some(i) if i >= applied => {
                let m = &tree.merges[i];
                stack.push(m.right);
                stack.push(m.left);
            }
            _ => roots.push(node),
        }
    }
    let mut assignment = vec![0usize; n];
    for (c, &r) in roots.iter().enumerate() {
        for leaf in tree.leaves_under(r) {
            assignment[leaf] = c;
        }
    }
    Ok(TreeCut {
        assignment,
        n_clusters: roots.len(),
        roots,
    })
}

/// Pixel rows belonging to the given leaves.
pub fn member_rows<T>(tree: &MixtureTree<T>, leaves: &[usize]) -> Vec<usize> {
    let mut rows: Vec<usize> = leaves
        .iter()
        .flat_map(|&l| tree.leaves[l].pixel_ids.iter().copied())
        .collect();
    rows.sort_unstable();
    rows
}

/// Mean and standard deviation of the L2-normalized spectra of `rows`,
/// weighted per pixel. Returns `(mean, std, used)`.
pub fn cluster_mean_shape<T: Scalar>(
    s: ArrayView2<'_, T>,
    rows: &[usize],
) -> Result<(Array1<T>, Array1<T>, usize), ClusterError> {
    let spectra: Vec<_> = rows.iter().map(|&r| s.row(r)).collect();
    spectra_stats(&spectra, s.ncols(), SpectrumNormalization::L2)
        .map(|(mean, std, used, _)| (mean, std, used))
        .ok_or(ClusterError::EmptyCluster)
}

/// Correlations within a leaf or cluster, for an ROI and its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafCorrelations<T> {
    /// Components present in every pattern of the leaf set.
    pub components: Vec<usize>,
    pub roi: CorrelationMatrices<T>,
    pub reference: CorrelationMatrices<T>,
    pub difference: DifferenceMatrices<T>,
    pub roi_pixels: usize,
    pub reference_pixels: usize,
}

fn restricted<T: Scalar>(
    z: &StandardizedCoefficients<T>,
    rows: &[usize],
    components: &[usize],
    opts: PearsonOptions,
) -> CorrelationMatrices<T> {
    let sub = z.select_rows(rows);
    let mut all = correlation_matrices(&sub, opts).expect("square by construction");
    all = all.select(components);
    all
}

/// Pearson and Dice matrices restricted to pixels whose pattern is one of
/// `leaf_patterns` and to the components those patterns share, computed
/// separately inside `roi_rows` and `reference_rows`.
pub fn leaf_correlations<T: Scalar>(
    leaf_patterns: &[u64],
    z: &StandardizedCoefficients<T>,
    roi_rows: &[usize],
    reference_rows: &[usize],
    opts: PearsonOptions,
) -> Result<LeafCorrelations<T>, ClusterError> {
    let pats = patterns(z.m.view())?;
    let shared = leaf_patterns.iter().fold(u64::MAX, |acc, &p| acc & p);
    let shared = if leaf_patterns.is_empty() { 0 } else { shared };
    let components: Vec<usize> = components_of(shared).into_iter().filter(|&j| j < z.z.ncols()).collect();
    let in_leaf = |r: &&usize| leaf_patterns.contains(&pats[**r]);
    let roi: Vec<usize> = roi_rows.iter().filter(in_leaf).copied().collect();
    let reference: Vec<usize> = reference_rows.iter().filter(in_leaf).copied().collect();
    let roi_m = restricted(z, &roi, &components, opts);
    let ref_m = restricted(z, &reference, &components, opts);
    let difference = difference_matrices(&roi_m, &ref_m).map_err(|e| ClusterError::ShapeMismatch(e.to_string()))?;
    Ok(LeafCorrelations {
        components,
        roi: roi_m,
        reference: ref_m,
        difference,
        roi_pixels: roi.len(),
        reference_pixels: reference.len(),
    })
}
