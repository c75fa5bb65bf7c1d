//! Synthetic multispectral phantoms with known chromophore content.
//!
//! Each pixel's signal is `gain · Φ · μ_a` where `μ_a = Σ_c conc_c · ε_c` and
//! the fluence `Φ` decays exponentially with the absorption accumulated in the
//! column above the pixel. Gaussian noise is added and the result clamped at
//! zero so the stack stays non-negative.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::ChromophoreLibrary;
use crate::scalar::Scalar;
use crate::stack::{MultispectralStack, RoiMask, StackError, DEFAULT_PIXEL_SPACING_MM};

pub use crate::spectra::spectral_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("unknown chromophore '{0}'")]
    UnknownChromophore(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Stack(#[from] StackError),
}

/// Region geometry in pixel units. Rectangles are half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipse {
        center_row: f64,
        center_col: f64,
        radius_rows: f64,
        radius_cols: f64,
    },
    Rectangle {
        row0: usize,
        col0: usize,
        row1: usize,
        col1: usize,
    },
}

impl Shape {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Shape::Ellipse {
                center_row,
                center_col,
                radius_rows,
                radius_cols,
            } => {
                let dr = (row as f64 - center_row) / radius_rows;
                let dc = (col as f64 - center_col) / radius_cols;
                dr * dr + dc * dc <= 1.0
            }
            Shape::Rectangle { row0, col0, row1, col1 } => {
                (row0..row1).contains(&row) && (col0..col1).contains(&col)
            }
        }
    }

    fn check_inside(&self, height: usize, width: usize) -> Result<(), String> {
        match *self {
            Shape::Ellipse {
                center_row,
                center_col,
                radius_rows,
                radius_cols,
            } => {
                let ok = radius_rows > 0.0
                    && radius_cols > 0.0
                    && center_row - radius_rows >= -0.5
                    && center_col - radius_cols >= -0.5
                    && center_row + radius_rows <= height as f64 - 0.5
                    && center_col + radius_cols <= width as f64 - 0.5;
                if ok {
                    Ok(())
                } else {
                    Err("ellipse must have positive radii and lie inside the frame".into())
                }
            }
            Shape::Rectangle { row0, col0, row1, col1 } => {
                if row0 < row1 && col0 < col1 && row1 <= height && col1 <= width {
                    Ok(())
                } else {
                    Err("rectangle must be non-empty and lie inside the frame".into())
                }
            }
        }
    }
}

/// Per-pixel variation of a region's concentrations.
///
/// All factors are uniform draws: the shared factor `1 ± shared` multiplies
/// every chromophore of the pixel (fixed-ratio mixing), the independent
/// factor `1 ± independent` is drawn per chromophore, and each chromophore is
/// absent with probability `dropout`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Texture {
    pub shared: f64,
    pub independent: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub shape: Shape,
    pub concentrations: BTreeMap<String, f64>,
    #[serde(default)]
    pub texture: Texture,
    /// Whether the region's pixels enter the stack's valid mask.
    #[serde(default = "default_true")]
    pub valid: bool,
}

fn default_true() -> bool {
    true
}

fn default_spacing() -> f64 {
    DEFAULT_PIXEL_SPACING_MM
}

fn default_gain() -> f64 {
    1.0
}

/// Scene description. Regions are painted in order; a later region replaces
/// the composition of earlier ones where they overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_spacing")]
    pub pixel_spacing_mm: f64,
    pub regions: Vec<Region>,
    /// Effective attenuation per unit absorption, 1/mm.
    pub background_attenuation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Overall signal scale applied to `Φ · μ_a`.
    #[serde(default = "default_gain")]
    pub signal_gain: f64,
}

/// Known quantities behind a generated stack.
#[derive(Debug, Clone)]
pub struct GroundTruth<T> {
    /// Library names in the order of the last axis of `concentration_maps`.
    pub chromophores: Vec<String>,
    pub concentration_maps: Array3<T>,
    pub fluence_map: Array3<T>,
    pub clean_stack: MultispectralStack<T>,
    /// One mask per distinct region label: the region's geometry within the
    /// valid area, regardless of later regions painted over it.
    pub rois: Vec<RoiMask>,
}

impl<T> GroundTruth<T> {
    pub fn roi(&self, label: &str) -> Option<&RoiMask> {
        self.rois.iter().find(|r| r.label == label)
    }
}

const NOISE_STREAM: u64 = 0;
const TEXTURE_STREAM: u64 = 1;

/// Random stream owned by one pixel, independent of generation order.
fn pixel_rng(seed: u64, pixel: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * pixel as u64 + purpose);
    rng
}

impl PhantomScene {
    pub fn validate<T: Scalar>(&self, library: &ChromophoreLibrary<T>) -> Result<(), PhantomError> {
        let invalid = |m: String| Err(PhantomError::InvalidScene(m));
        if self.height == 0 || self.width == 0 {
            return invalid("frame must be non-empty".into());
        }
        if !(self.pixel_spacing_mm.is_finite() && self.pixel_spacing_mm > 0.0) {
            return invalid("pixel spacing must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return invalid("noise_sigma must be non-negative".into());
        }
        if !(self.background_attenuation.is_finite() && self.background_attenuation >= 0.0) {
            return invalid("background_attenuation must be non-negative".into());
        }
        if !(self.signal_gain.is_finite() && self.signal_gain > 0.0) {
            return invalid("signal_gain must be positive".into());
        }
        for region in &self.regions {
            region
                .shape
                .check_inside(self.height, self.width)
                .map_err(|m| PhantomError::InvalidScene(format!("region '{}': {m}", region.label)))?;
            for (name, &c) in &region.concentrations {
                if library.index_of(name).is_none() {
                    return Err(PhantomError::UnknownChromophore(name.clone()));
                }
                if !(c.is_finite() && c >= 0.0) {
                    return invalid(format!("region '{}': concentration of {name} must be >= 0", region.label));
                }
            }
            let t = region.texture;
            let in_unit = |x: f64| (0.0..=1.0).contains(&x);
            if !(in_unit(t.shared) && in_unit(t.independent) && in_unit(t.dropout)) {
                return invalid(format!("region '{}': texture parameters must lie in [0, 1]", region.label));
            }
        }
        Ok(())
    }

    /// Index of the topmost region covering each pixel.
    fn ownership(&self) -> Array2<Option<usize>> {
        let mut owner = Array2::from_elem((self.height, self.width), None);
        for (i, region) in self.regions.iter().enumerate() {
            for ((r, c), o) in owner.indexed_iter_mut() {
                if region.shape.contains(r, c) {
                    *o = Some(i);
                }
            }
        }
        owner
    }
}

/// Renders the scene against the library's spectra.
pub fn generate<T: Scalar>(
    scene: &PhantomScene,
    library: &ChromophoreLibrary<T>,
) -> Result<(MultispectralStack<T>, GroundTruth<T>), PhantomError> {
    scene.validate(library)?;
    let (h, w) = (scene.height, scene.width);
    let bands = library.grid().len();
    let n_chrom = library.len();
    let owner = scene.ownership();

    let mut conc = Array3::<T>::zeros((h, w, n_chrom));
    let mut valid = Array2::from_elem((h, w), false);
    for ((r, c), o) in owner.indexed_iter() {
        let Some(i) = *o else { continue };
        let region = &scene.regions[i];
        valid[(r, c)] = region.valid;
        let pixel = r * w + c;
        let mut rng = pixel_rng(scene.seed, pixel, TEXTURE_STREAM);
        let shared = 1.0 + region.texture.shared * (2.0 * rng.random::<f64>() - 1.0);
        // One draw pair per library entry keeps streams aligned across regions.
        for (j, name) in library.names().iter().enumerate() {
            let u_ind: f64 = rng.random();
            let u_drop: f64 = rng.random();
            let Some(&base) = region.concentrations.get(name) else { continue };
            if u_drop < region.texture.dropout {
                continue;
            }
            let independent = 1.0 + region.texture.independent * (2.0 * u_ind - 1.0);
            conc[(r, c, j)] = T::lit(base * shared * independent);
        }
    }

    // μ_a per pixel and band.
    let spectra: Vec<_> = library.iter().map(|(_, s)| s.to_owned()).collect();
    let mut absorption = Array3::<T>::zeros((h, w, bands));
    for r in 0..h {
        for c in 0..w {
            for (j, eps) in spectra.iter().enumerate() {
                let k = conc[(r, c, j)];
                if k == T::zero() {
                    continue;
                }
                for b in 0..bands {
                    absorption[(r, c, b)] += k * eps[b];
                }
            }
        }
    }

    // Φ = exp(-Δz · Σ_{rows above} μ_eff), i.e. depth times the column-average attenuation.
    let dz = T::lit(scene.pixel_spacing_mm);
    let kappa = T::lit(scene.background_attenuation);
    let mut fluence = Array3::<T>::zeros((h, w, bands));
    for c in 0..w {
        for b in 0..bands {
            let mut optical_depth = T::zero();
            for r in 0..h {
                fluence[(r, c, b)] = (-optical_depth).exp();
                optical_depth += dz * kappa * absorption[(r, c, b)];
            }
        }
    }

    let gain = T::lit(scene.signal_gain);
    let mut clean = Array3::<T>::zeros((h, w, bands));
    ndarray::Zip::from(&mut clean)
        .and(&fluence)
        .and(&absorption)
        .for_each(|o, &f, &a| *o = gain * f * a);

    let sigma = scene.noise_sigma;
    let mut noisy = clean.clone();
    if sigma > 0.0 {
        for r in 0..h {
            for c in 0..w {
                let mut rng = pixel_rng(scene.seed, r * w + c, NOISE_STREAM);
                for b in 0..bands {
                    let z: f64 = rng.sample(StandardNormal);
                    let v = noisy[(r, c, b)] + T::lit(sigma * z);
                    noisy[(r, c, b)] = v.max(T::zero());
                }
            }
        }
    }

    let grid = Arc::clone(library.grid());
    let stack = MultispectralStack::new(Arc::clone(&grid), scene.pixel_spacing_mm, noisy, valid.clone())?;
    let clean_stack = MultispectralStack::new(grid, scene.pixel_spacing_mm, clean, valid.clone())?;

    let mut labels: Vec<&str> = Vec::new();
    for region in &scene.regions {
        if !labels.contains(&region.label.as_str()) {
            labels.push(&region.label);
        }
    }
    let rois = labels
        .into_iter()
        .map(|label| {
            let mask = Array2::from_shape_fn((h, w), |(r, c)| {
                valid[(r, c)]
                    && scene
                        .regions
                        .iter()
                        .any(|reg| reg.label == label && reg.shape.contains(r, c))
            });
            RoiMask::new(label, mask)
        })
        .collect();

    Ok((
        stack,
        GroundTruth {
            chromophores: library.names().to_vec(),
            concentration_maps: conc,
            fluence_map: fluence,
            clean_stack,
            rois,
        },
    ))
}

fn region(label: &str, shape: Shape, conc: &[(&str, f64)], texture: Texture) -> Region {
    Region {
        label: label.into(),
        shape,
        concentrations: conc.iter().map(|&(n, c)| (n.to_string(), c)).collect(),
        texture,
        valid: true,
    }
}

fn rect(row0: usize, col0: usize, row1: usize, col1: usize) -> Shape {
    Shape::Rectangle { row0, col0, row1, col1 }
}

fn ellipse(center_row: f64, center_col: f64, radius_rows: f64, radius_cols: f64) -> Shape {
    Shape::Ellipse {
        center_row,
        center_col,
        radius_rows,
        radius_cols,
    }
}

impl PhantomScene {
    /// Layered forearm-like scene over four chromophores (`melanin`, `water`,
    /// `lipid`, `HbO2`): epidermis, dermis, subcutaneous fat with a vein,
    /// muscle, and a nerve with intraneural vessels. Rows above the skin are
    /// coupling medium and excluded from the valid mask.
    pub fn layered(size: usize) -> Self {
        let s = size as f64 / 256.0;
        let px = |x: f64| (x * s).round() as usize;
        // Full-width layer at least one row thick at any size.
        let layer = |top: f64, bottom: f64| {
            let row0 = px(top);
            rect(row0, 0, px(bottom).max(row0 + 1), size)
        };
        let tex = |shared, independent, dropout| Texture {
            shared,
            independent,
            dropout,
        };
        let regions = vec![
            region("epidermis", layer(12.0, 16.0), &[("melanin", 0.6)], tex(0.2, 0.0, 0.0)),
            region("dermis", layer(16.0, 34.0), &[("water", 1.0)], tex(0.2, 0.0, 0.0)),
            region(
                "fat",
                layer(34.0, 84.0),
                &[("lipid", 1.0), ("water", 0.15)],
                tex(0.2, 0.6, 0.0),
            ),
            region(
                "muscle",
                layer(84.0, 256.0),
                &[("HbO2", 0.3), ("water", 0.8)],
                tex(0.2, 0.9, 0.1),
            ),
            region("vein", ellipse(56.0 * s, 190.0 * s, 9.0 * s, 14.0 * s), &[("HbO2", 1.0)], tex(0.1, 0.0, 0.0)),
            region(
                "nerve",
                ellipse(150.0 * s, 100.0 * s, 30.0 * s, 45.0 * s),
                &[("HbO2", 0.25), ("lipid", 0.5), ("water", 0.5)],
                tex(0.4, 0.1, 0.0),
            ),
            region("nerve", ellipse(140.0 * s, 85.0 * s, 4.0 * s, 5.0 * s), &[("HbO2", 1.0)], tex(0.1, 0.0, 0.0)),
            region("nerve", ellipse(160.0 * s, 118.0 * s, 4.0 * s, 4.0 * s), &[("HbO2", 1.0)], tex(0.1, 0.0, 0.0)),
        ];
        Self {
            height: size,
            width: size,
            pixel_spacing_mm: DEFAULT_PIXEL_SPACING_MM,
            regions,
            background_attenuation: 0.05,
            noise_sigma: 0.0,
            seed: 1,
            signal_gain: 1000.0,
        }
    }
}

impl Default for PhantomScene {
    fn default() -> Self {
        Self::layered(256)
    }
}
