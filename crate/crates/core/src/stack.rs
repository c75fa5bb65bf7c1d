//! Multispectral image stacks, region-of-interest masks and per-ROI spectral
//! statistics.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectra::{self, Spectrum, SpectrumError, WavelengthGrid};

/// Reconstruction pixel size used when nothing else is specified.
pub const DEFAULT_PIXEL_SPACING_MM: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StackError {
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value at row {row}, column {col}, band {band}")]
    NonFinite { row: usize, col: usize, band: usize },
    #[error("pixel spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("mask '{0}' selects pixels outside the stack's valid region")]
    MaskOutsideValid(String),
    #[error("region of interest '{0}' is empty")]
    EmptyRoi(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Per-pixel spectra of one image, `[height × width × bands]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralStack<T> {
    grid: Arc<WavelengthGrid>,
    pixel_spacing_mm: f64,
    data: Array3<T>,
    valid_mask: Array2<bool>,
}

impl<T: Scalar> MultispectralStack<T> {
    pub fn new(
        grid: Arc<WavelengthGrid>,
        pixel_spacing_mm: f64,
        data: Array3<T>,
        valid_mask: Array2<bool>,
    ) -> Result<Self, StackError> {
        if !(pixel_spacing_mm.is_finite() && pixel_spacing_mm > 0.0) {
            return Err(StackError::InvalidSpacing(pixel_spacing_mm));
        }
        let (h, w, l) = data.dim();
        if l != grid.len() {
            return Err(StackError::DimensionMismatch {
                what: "band count vs grid",
                expected: vec![grid.len()],
                found: vec![l],
            });
        }
        if valid_mask.dim() != (h, w) {
            return Err(StackError::DimensionMismatch {
                what: "valid mask shape",
                expected: vec![h, w],
                found: valid_mask.shape().to_vec(),
            });
        }
        for ((row, col), &valid) in valid_mask.indexed_iter() {
            if !valid {
                continue;
            }
            for band in 0..l {
                if !data[(row, col, band)].is_finite() {
                    return Err(StackError::NonFinite { row, col, band });
                }
            }
        }
        Ok(Self {
            grid,
            pixel_spacing_mm,
            data,
            valid_mask,
        })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn grid(&self) -> &Arc<WavelengthGrid> {
        &self.grid
    }

    pub fn pixel_spacing_mm(&self) -> f64 {
        self.pixel_spacing_mm
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn valid_mask(&self) -> &Array2<bool> {
        &self.valid_mask
    }

    pub fn spectrum_at(&self, row: usize, col: usize) -> ArrayView1<'_, T> {
        self.data.slice(ndarray::s![row, col, ..])
    }

    /// Row-major pixel coordinates selected by `mask`.
    pub fn pixels_in(&self, mask: &Array2<bool>) -> Vec<(usize, usize)> {
        mask.indexed_iter()
            .filter_map(|(rc, &m)| m.then_some(rc))
            .collect()
    }

    /// Spectra of the valid pixels stacked into an `[N × bands]` matrix, in
    /// row-major pixel order, with their coordinates.
    pub fn valid_matrix(&self) -> (Array2<T>, Vec<(usize, usize)>) {
        let coords = self.pixels_in(&self.valid_mask);
        let mut out = Array2::zeros((coords.len(), self.bands()));
        for (i, &(r, c)) in coords.iter().enumerate() {
            out.row_mut(i).assign(&self.spectrum_at(r, c));
        }
        (out, coords)
    }

    /// Converts the payload to another scalar type.
    pub fn cast<U: Scalar>(&self) -> MultispectralStack<U> {
        MultispectralStack {
            grid: Arc::clone(&self.grid),
            pixel_spacing_mm: self.pixel_spacing_mm,
            data: self.data.mapv(|x| U::lit(x.as_f64())),
            valid_mask: self.valid_mask.clone(),
        }
    }
}

/// Labeled pixel mask, e.g. a nerve segmentation or a sampled reference region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiMask {
    pub label: String,
    pub mask: Array2<bool>,
}

impl RoiMask {
    pub fn new(label: impl Into<String>, mask: Array2<bool>) -> Self {
        Self {
            label: label.into(),
            mask,
        }
    }

    /// Mask built from explicit pixel coordinates; duplicates collapse.
    pub fn from_pixels(
        label: impl Into<String>,
        height: usize,
        width: usize,
        pixels: &[(usize, usize)],
    ) -> Self {
        let mut mask = Array2::from_elem((height, width), false);
        for &(r, c) in pixels {
            mask[(r, c)] = true;
        }
        Self::new(label, mask)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.mask
            .indexed_iter()
            .filter_map(|(rc, &m)| m.then_some(rc))
            .collect()
    }

    /// Checks shape agreement and `mask ⊆ valid_mask`.
    pub fn check_against<T: Scalar>(&self, stack: &MultispectralStack<T>) -> Result<(), StackError> {
        if self.mask.dim() != stack.valid_mask().dim() {
            return Err(StackError::DimensionMismatch {
                what: "roi mask shape",
                expected: stack.valid_mask().shape().to_vec(),
                found: self.mask.shape().to_vec(),
            });
        }
        let outside = self
            .mask
            .iter()
            .zip(stack.valid_mask().iter())
            .any(|(&m, &v)| m && !v);
        if outside {
            return Err(StackError::MaskOutsideValid(self.label.clone()));
        }
        Ok(())
    }
}

/// How pixel spectra are scaled before per-ROI statistics are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumNormalization {
    None,
    #[default]
    L2,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStats<T> {
    pub mean: Spectrum<T>,
    /// Population standard deviation per band.
    pub std: Spectrum<T>,
    pub n_used: usize,
    /// Pixels excluded because their spectrum was identically zero.
    pub n_zero_skipped: usize,
}

/// Per-band mean and population standard deviation over the ROI's pixels.
///
/// With a normalization other than `None`, every pixel spectrum is scaled
/// first; zero spectra cannot be scaled and are skipped and counted.
pub fn mean_spectrum<T: Scalar>(
    stack: &MultispectralStack<T>,
    roi: &RoiMask,
    normalization: SpectrumNormalization,
) -> Result<SpectrumStats<T>, StackError> {
    roi.check_against(stack)?;
    let spectra: Vec<ArrayView1<'_, T>> = roi
        .pixels()
        .into_iter()
        .map(|(r, c)| stack.spectrum_at(r, c))
        .collect();
    if spectra.is_empty() {
        return Err(StackError::EmptyRoi(roi.label.clone()));
    }
    let (mean, std, n_used, n_zero_skipped) = spectra_stats(&spectra, stack.bands(), normalization)
        .ok_or_else(|| StackError::EmptyRoi(roi.label.clone()))?;
    Ok(SpectrumStats {
        mean: Spectrum::new(Arc::clone(stack.grid()), mean)?,
        std: Spectrum::new(Arc::clone(stack.grid()), std)?,
        n_used,
        n_zero_skipped,
    })
}

/// Shared kernel of [`mean_spectrum`] and cluster shape statistics: returns
/// `(mean, std, used, skipped)` or `None` when no spectrum was usable.
pub(crate) fn spectra_stats<T: Scalar>(
    spectra: &[ArrayView1<'_, T>],
    bands: usize,
    normalization: SpectrumNormalization,
) -> Option<(Array1<T>, Array1<T>, usize, usize)> {
    let mut rows = Array2::zeros((spectra.len(), bands));
    let mut used = 0usize;
    let mut skipped = 0usize;
    for s in spectra {
        let scaled = match normalization {
            SpectrumNormalization::None => Ok(s.to_owned()),
            SpectrumNormalization::L2 => spectra::l2_normalize(s.view()),
            SpectrumNormalization::Max => spectra::max_normalize(s.view()),
        };
        match scaled {
            Ok(v) => {
                rows.row_mut(used).assign(&v);
                used += 1;
            }
            Err(_) => skipped += 1,
        }
    }
    if used == 0 {
        return None;
    }
    let rows = rows.slice(ndarray::s![..used, ..]);
    let mean = rows.mean_axis(Axis(0))?;
    let mut var = Array1::<T>::zeros(bands);
    for row in rows.rows() {
        for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
            *v += (x - m) * (x - m);
        }
    }
    let n = T::count(used);
    let std = var.mapv(|v| (v / n).sqrt());
    Some((mean, std, used, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tiny_stack(spectra: &[[f64; 3]]) -> MultispectralStack<f64> {
        let grid = Arc::new(WavelengthGrid::new(vec![700.0, 710.0, 720.0]).unwrap());
        let mut data = Array3::zeros((1, spectra.len(), 3));
        for (c, s) in spectra.iter().enumerate() {
            for (b, &v) in s.iter().enumerate() {
                data[(0, c, b)] = v;
            }
        }
        let valid = Array2::from_elem((1, spectra.len()), true);
        MultispectralStack::new(grid, 0.1, data, valid).unwrap()
    }

    fn all_roi(n: usize) -> RoiMask {
        RoiMask::new("roi", Array2::from_elem((1, n), true))
    }

    #[test]
    fn constructor_validates() {
        let grid = Arc::new(WavelengthGrid::new(vec![700.0, 710.0]).unwrap());
        let data = Array3::<f64>::zeros((2, 2, 2));
        let valid = Array2::from_elem((2, 2), true);
        assert!(matches!(
            MultispectralStack::new(grid.clone(), 0.0, data.clone(), valid.clone()),
            Err(StackError::InvalidSpacing(_))
        ));
        assert!(matches!(
            MultispectralStack::new(grid.clone(), 0.1, Array3::<f64>::zeros((2, 2, 3)), valid.clone()),
            Err(StackError::DimensionMismatch { .. })
        ));
        let mut bad = data.clone();
        bad[(1, 0, 1)] = f64::INFINITY;
        assert_eq!(
            MultispectralStack::new(grid.clone(), 0.1, bad.clone(), valid.clone()).unwrap_err(),
            StackError::NonFinite { row: 1, col: 0, band: 1 }
        );
        let mut partial = valid.clone();
        partial[(1, 0)] = false;
        assert!(MultispectralStack::new(grid, 0.1, bad, partial).is_ok());
    }

    #[test]
    fn single_pixel_roi() {
        let s = tiny_stack(&[[1.0, 2.0, 3.0]]);
        let st = mean_spectrum(&s, &all_roi(1), SpectrumNormalization::None).unwrap();
        assert_eq!(st.mean.values().to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(st.std.values().to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn identical_pixels_have_zero_std() {
        let s = tiny_stack(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let st = mean_spectrum(&s, &all_roi(2), SpectrumNormalization::L2).unwrap();
        assert!(st.std.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalized_mean_of_orthogonal_pixels() {
        let s = tiny_stack(&[[2.0, 0.0, 0.0], [0.0, 5.0, 0.0]]);
        let st = mean_spectrum(&s, &all_roi(2), SpectrumNormalization::L2).unwrap();
        assert_eq!(st.mean.values().to_vec(), vec![0.5, 0.5, 0.0]);
        assert_eq!(st.std.values().to_vec(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn zero_pixels_skipped_and_counted() {
        let s = tiny_stack(&[[0.0, 0.0, 0.0], [0.0, 3.0, 4.0]]);
        let st = mean_spectrum(&s, &all_roi(2), SpectrumNormalization::L2).unwrap();
        assert_eq!(st.n_used, 1);
        assert_eq!(st.n_zero_skipped, 1);
        assert_eq!(st.mean.values().to_vec(), vec![0.0, 0.6, 0.8]);

        let only_zero = tiny_stack(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(
            mean_spectrum(&only_zero, &all_roi(1), SpectrumNormalization::L2),
            Err(StackError::EmptyRoi(_))
        ));
    }

    #[test]
    fn empty_and_out_of_valid_rois_rejected() {
        let s = tiny_stack(&[[1.0, 1.0, 1.0]]);
        let empty = RoiMask::new("none", Array2::from_elem((1, 1), false));
        assert_eq!(
            mean_spectrum(&s, &empty, SpectrumNormalization::None).unwrap_err(),
            StackError::EmptyRoi("none".into())
        );
        let grid = Arc::new(WavelengthGrid::new(vec![700.0]).unwrap());
        let st = MultispectralStack::new(
            grid,
            0.1,
            Array3::<f64>::zeros((1, 2, 1)),
            ndarray::array![[true, false]],
        )
        .unwrap();
        let roi = RoiMask::new("x", ndarray::array![[false, true]]);
        assert_eq!(roi.check_against(&st).unwrap_err(), StackError::MaskOutsideValid("x".into()));
    }

    #[test]
    fn valid_matrix_is_row_major() {
        let s = tiny_stack(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let (m, coords) = s.valid_matrix();
        assert_eq!(coords, vec![(0, 0), (0, 1)]);
        assert_eq!(m[(1, 0)], 2.0);
    }
}
