//! Reference ("surrounding tissue") pixels drawn from a bivariate normal
//! over nerve locations.
//!
//! Coordinates follow the image: lateral is the column index, axial the row
//! index, origin at the top-left pixel.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::mean_std;
use crate::stack::RoiMask;

/// Draw budget per requested sample.
pub const ATTEMPTS_PER_SAMPLE: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("ROI {0:?} is empty")]
    EmptyRoi(String),
    #[error("no nerve ROIs given")]
    NoRois,
    #[error("accepted {accepted} of {requested} samples after {attempts} draws")]
    SamplingExhausted {
        accepted: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("invalid sampler: {0}")]
    Invalid(String),
}

/// Axis-aligned bivariate normal over pixel locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSampler {
    pub mu_lat: f64,
    pub mu_ax: f64,
    pub sigma_lat: f64,
    pub sigma_ax: f64,
}

impl ReferenceSampler {
    pub fn new(mu_lat: f64, mu_ax: f64, sigma_lat: f64, sigma_ax: f64) -> Result<Self, ReferenceError> {
        let s = Self {
            mu_lat,
            mu_ax,
            sigma_lat,
            sigma_ax,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        let all_finite = [self.mu_lat, self.mu_ax, self.sigma_lat, self.sigma_ax]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ReferenceError::Invalid("parameters must be finite".into()));
        }
        if self.sigma_lat < 0.0 || self.sigma_ax < 0.0 {
            return Err(ReferenceError::Invalid("standard deviations must be non-negative".into()));
        }
        Ok(())
    }
}

/// Means and population standard deviations of the pooled pixel
/// coordinates of every nerve ROI.
pub fn fit_reference_sampler(nerve_rois: &[&RoiMask]) -> Result<ReferenceSampler, ReferenceError> {
    if nerve_rois.is_empty() {
        return Err(ReferenceError::NoRois);
    }
    let mut pixels = Vec::new();
    for roi in nerve_rois {
        let p = roi.pixels();
        if p.is_empty() {
            return Err(ReferenceError::EmptyRoi(roi.label.clone()));
        }
        pixels.extend(p);
    }
    let (mu_lat, sigma_lat) = mean_std(pixels.iter().map(|&(_, c)| c as f64)).expect("pixels are not empty");
    let (mu_ax, sigma_ax) = mean_std(pixels.iter().map(|&(r, _)| r as f64)).expect("pixels are not empty");
    ReferenceSampler::new(mu_lat, mu_ax, sigma_lat, sigma_ax)
}

/// Draws `n_samples` accepted pixel locations `(row, col)`.
///
/// Each draw is rounded to the nearest pixel and rejected if it falls
/// outside the frame, outside `valid_mask` or inside `nerve`. Repeats are
/// kept, so the result has exactly `n_samples` entries.
pub fn sample_reference_pixels(
    sampler: &ReferenceSampler,
    valid_mask: ArrayView2<'_, bool>,
    nerve: ArrayView2<'_, bool>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, ReferenceError> {
    sampler.validate()?;
    if n_samples == 0 {
        return Err(ReferenceError::Invalid("n_samples must be at least 1".into()));
    }
    if valid_mask.dim() != nerve.dim() {
        return Err(ReferenceError::Invalid(format!(
            "nerve mask is {:?}, frame is {:?}",
            nerve.dim(),
            valid_mask.dim()
        )));
    }
    let (height, width) = valid_mask.dim();
    let budget = ATTEMPTS_PER_SAMPLE * n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    let mut attempts = 0;
    while out.len() < n_samples && attempts < budget {
        attempts += 1;
        let lat: f64 = sampler.mu_lat + sampler.sigma_lat * rng.sample::<f64, _>(StandardNormal);
        let ax: f64 = sampler.mu_ax + sampler.sigma_ax * rng.sample::<f64, _>(StandardNormal);
        let (col, row) = (lat.round(), ax.round());
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            continue;
        }
        let (r, c) = (row as usize, col as usize);
        if valid_mask[(r, c)] && !nerve[(r, c)] {
            out.push((r, c));
        }
    }
    if out.len() < n_samples {
        return Err(ReferenceError::SamplingExhausted {
            accepted: out.len(),
            requested: n_samples,
            attempts,
        });
    }
    Ok(out)
}

/// Reference ROI for one image: the set of accepted sample locations.
pub fn sample_reference_roi(
    sampler: &ReferenceSampler,
    valid_mask: ArrayView2<'_, bool>,
    nerve_roi: &RoiMask,
    n_samples: usize,
    seed: u64,
) -> Result<RoiMask, ReferenceError> {
    let pixels = sample_reference_pixels(sampler, valid_mask, nerve_roi.mask.view(), n_samples, seed)?;
    let mut mask = Array2::from_elem(valid_mask.dim(), false);
    for (r, c) in pixels {
        mask[(r, c)] = true;
    }
    Ok(RoiMask::new("reference", mask))
}
