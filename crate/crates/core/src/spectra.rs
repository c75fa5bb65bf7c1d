//! Wavelength grids, spectra and the vector operations used on them.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Shortest and longest wavelength accepted on any grid, in nm.
pub const MIN_WAVELENGTH_NM: f64 = 600.0;
pub const MAX_WAVELENGTH_NM: f64 = 1100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("spectrum has zero L2 norm")]
    ZeroSpectrum,
    #[error("spectrum length {found} does not match grid length {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("spectrum contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
}

/// Ordered wavelength axis in nanometers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavelengthGrid {
    wavelengths: Vec<f64>,
}

impl WavelengthGrid {
    pub fn new(wavelengths: Vec<f64>) -> Result<Self, SpectrumError> {
        if wavelengths.is_empty() {
            return Err(SpectrumError::InvalidGrid("grid is empty".into()));
        }
        for (i, &w) in wavelengths.iter().enumerate() {
            if !w.is_finite() || !(MIN_WAVELENGTH_NM..=MAX_WAVELENGTH_NM).contains(&w) {
                return Err(SpectrumError::InvalidGrid(format!(
                    "wavelength {w} nm at index {i} outside [{MIN_WAVELENGTH_NM}, {MAX_WAVELENGTH_NM}]"
                )));
            }
            if i > 0 && w <= wavelengths[i - 1] {
                return Err(SpectrumError::InvalidGrid(format!(
                    "wavelengths not strictly increasing at index {i}"
                )));
            }
        }
        Ok(Self { wavelengths })
    }

    /// 700, 710, ..., 970 nm: the 28-point acquisition schedule.
    pub fn default_msot() -> Self {
        Self {
            wavelengths: (0..28).map(|i| 700.0 + 10.0 * i as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths.is_empty()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        Self::default_msot()
    }
}

impl TryFrom<Vec<f64>> for WavelengthGrid {
    type Error = SpectrumError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<WavelengthGrid> for Vec<f64> {
    fn from(g: WavelengthGrid) -> Self {
        g.wavelengths
    }
}

/// A finite signal or absorption curve sampled on a [`WavelengthGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    grid: Arc<WavelengthGrid>,
    values: Array1<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(grid: Arc<WavelengthGrid>, values: Array1<T>) -> Result<Self, SpectrumError> {
        if values.len() != grid.len() {
            return Err(SpectrumError::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectrumError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<WavelengthGrid> {
        &self.grid
    }

    pub fn values(&self) -> ArrayView1<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array1<T> {
        self.values
    }

    pub fn l2_normalize(&self) -> Result<Self, SpectrumError> {
        Ok(Self {
            grid: Arc::clone(&self.grid),
            values: l2_normalize(self.values.view())?,
        })
    }

    pub fn max_normalize(&self) -> Result<Self, SpectrumError> {
        Ok(Self {
            grid: Arc::clone(&self.grid),
            values: max_normalize(self.values.view())?,
        })
    }

    pub fn spectral_angle(&self, other: &Self) -> Result<T, SpectrumError> {
        spectral_angle(self.values.view(), other.values.view())
    }
}

pub fn l2_norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Scales `v` to unit Euclidean length.
pub fn l2_normalize<T: Scalar>(v: ArrayView1<'_, T>) -> Result<Array1<T>, SpectrumError> {
    let norm = l2_norm(v);
    if norm == T::zero() || !norm.is_finite() {
        return Err(SpectrumError::ZeroSpectrum);
    }
    Ok(v.mapv(|x| x / norm))
}

/// Scales `v` so that its largest absolute entry is one.
pub fn max_normalize<T: Scalar>(v: ArrayView1<'_, T>) -> Result<Array1<T>, SpectrumError> {
    let peak = v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    if peak == T::zero() {
        return Err(SpectrumError::ZeroSpectrum);
    }
    Ok(v.mapv(|x| x / peak))
}

/// Angle between two spectra in radians.
///
/// Evaluated as `2·atan2(|â − b̂|, |â + b̂|)` on the unit vectors, which stays
/// accurate for nearly parallel inputs where `acos` of the cosine does not.
pub fn spectral_angle<T: Scalar>(
    a: ArrayView1<'_, T>,
    b: ArrayView1<'_, T>,
) -> Result<T, SpectrumError> {
    if a.len() != b.len() {
        return Err(SpectrumError::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let a = l2_normalize(a)?;
    let b = l2_normalize(b)?;
    let mut diff = T::zero();
    let mut sum = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    Ok(T::lit(2.0) * diff.sqrt().atan2(sum.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn unit(n: usize, i: usize) -> Array1<f64> {
        let mut v = Array1::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn default_grid_is_28_points() {
        let g = WavelengthGrid::default();
        assert_eq!(g.len(), 28);
        assert_eq!(g.wavelengths()[0], 700.0);
        assert_eq!(g.wavelengths()[27], 970.0);
    }

    #[test]
    fn grid_rejects_bad_axes() {
        assert!(WavelengthGrid::new(vec![]).is_err());
        assert!(WavelengthGrid::new(vec![700.0, 700.0]).is_err());
        assert!(WavelengthGrid::new(vec![710.0, 700.0]).is_err());
        assert!(WavelengthGrid::new(vec![500.0, 700.0]).is_err());
        assert!(WavelengthGrid::new(vec![700.0, 1200.0]).is_err());
        assert!(WavelengthGrid::new(vec![650.0, 1100.0]).is_ok());
    }

    #[test]
    fn grid_serde_validates() {
        let g: WavelengthGrid = serde_json::from_str("[700.0, 800.0]").unwrap();
        assert_eq!(g.len(), 2);
        assert!(serde_json::from_str::<WavelengthGrid>("[800.0, 700.0]").is_err());
    }

    #[test]
    fn spectrum_checks_length_and_finiteness() {
        let g = Arc::new(WavelengthGrid::new(vec![700.0, 710.0]).unwrap());
        assert!(matches!(
            Spectrum::new(g.clone(), array![1.0f64]),
            Err(SpectrumError::LengthMismatch { expected: 2, found: 1 })
        ));
        assert_eq!(
            Spectrum::new(g.clone(), array![1.0f64, f64::NAN]).unwrap_err(),
            SpectrumError::NonFinite(1)
        );
        assert!(Spectrum::new(g, array![1.0f64, 2.0]).is_ok());
    }

    #[test]
    fn normalize_examples() {
        let e = unit(28, 0);
        assert_eq!(l2_normalize(e.view()).unwrap(), e);

        let mut v = Array1::zeros(28);
        v[0] = 3.0;
        v[1] = 4.0;
        let n = l2_normalize(v.view()).unwrap();
        assert!((n[0] - 0.6f64).abs() < 1e-15);
        assert!((n[1] - 0.8f64).abs() < 1e-15);
        assert!(n.iter().skip(2).all(|&x| x == 0.0));

        let z = Array1::<f64>::zeros(28);
        assert_eq!(l2_normalize(z.view()), Err(SpectrumError::ZeroSpectrum));
        assert_eq!(max_normalize(z.view()), Err(SpectrumError::ZeroSpectrum));
    }

    #[test]
    fn max_normalize_peak_is_one() {
        let v = array![1.0f64, 4.0, 2.0];
        assert_eq!(max_normalize(v.view()).unwrap(), array![0.25, 1.0, 0.5]);
    }

    #[test]
    fn angle_examples() {
        let a = array![1.0f64, 0.0];
        let b = array![1.0f64, 1.0];
        assert_eq!(spectral_angle(a.view(), a.view()).unwrap(), 0.0);
        assert!((spectral_angle(a.view(), array![0.0, 2.0].view()).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((spectral_angle(a.view(), b.view()).unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(
            spectral_angle(a.view(), array![0.0, 0.0].view()),
            Err(SpectrumError::ZeroSpectrum)
        );
    }

    #[test]
    fn angle_works_in_f32() {
        let a = array![1.0f32, 0.0];
        let b = array![1.0f32, 1.0];
        let t = spectral_angle(a.view(), b.view()).unwrap();
        assert!((t - std::f32::consts::FRAC_PI_4).abs() < 1e-6);
    }

    fn spectrum_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 2..40)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_idempotent(v in spectrum_strategy()) {
            let v = Array1::from(v);
            let n = l2_normalize(v.view()).unwrap();
            prop_assert!((l2_norm(n.view()) - 1.0).abs() <= 1e-12);
            let nn = l2_normalize(n.view()).unwrap();
            for (a, b) in n.iter().zip(nn.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalize_is_scale_invariant(v in spectrum_strategy(), c in 1e-6f64..1e6) {
            let v = Array1::from(v);
            let n = l2_normalize(v.view()).unwrap();
            let scaled = v.mapv(|x| x * c);
            let ns = l2_normalize(scaled.view()).unwrap();
            for (a, b) in n.iter().zip(ns.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn angle_of_nonnegative_is_at_most_right(
            a in prop::collection::vec(0.0f64..10.0, 5),
            b in prop::collection::vec(0.0f64..10.0, 5),
        ) {
            let a = Array1::from(a);
            let b = Array1::from(b);
            if let Ok(t) = spectral_angle(a.view(), b.view()) {
                prop_assert!((0.0..=FRAC_PI_2 + 1e-12).contains(&t));
            }
        }
    }
}
