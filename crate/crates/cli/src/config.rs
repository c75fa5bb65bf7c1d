//! Pipeline configuration. Relative paths are resolved against the
//! directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use snerv_core::clustering::{CutSpec, WardWeighting};
use snerv_core::metrics::PearsonOptions;
use snerv_core::phantom::PhantomScene;
use snerv_core::unmixing::UnmixingConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Chromophore library CSV.
    pub library: PathBuf,
    /// Library entries to use; all when absent.
    #[serde(default)]
    pub chromophores: Option<Vec<String>>,
    #[serde(default)]
    pub phantom: Option<PhantomConfig>,
    /// Input stacks. When empty, the phantom stage's output is used.
    #[serde(default)]
    pub stacks: Vec<StackEntry>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unmixing: UnmixingConfig,
    #[serde(default)]
    pub statmetrics: StatOptions,
    #[serde(default)]
    pub clustering: ClusterOptions,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    #[serde(default = "default_phantom_id")]
    pub id: String,
    /// Scene file or inline scene; the layered scene when absent.
    #[serde(default)]
    pub scene: Option<SceneSource>,
    /// Edge length of the layered scene.
    #[serde(default = "default_layered_size")]
    pub layered_size: usize,
    /// Noise standard deviation as a fraction of the clean peak; replaces
    /// the scene's own `noise_sigma` when set.
    #[serde(default)]
    pub noise_fraction: Option<f64>,
}

fn default_phantom_id() -> String {
    "phantom".into()
}

fn default_layered_size() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Path(PathBuf),
    Inline(Box<PhantomScene>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackEntry {
    pub id: String,
    /// Stack header (`.json`).
    pub stack: PathBuf,
    /// Nerve mask header; stacks without one only contribute to unmixing
    /// and clustering.
    #[serde(default)]
    pub nerve_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatOptions {
    /// Reference pixels drawn per image; the image's nerve pixel count when
    /// absent.
    pub reference_samples: Option<usize>,
    pub pearson: PearsonOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterOptions {
    pub weighting: WardWeighting,
    /// Clamped to the number of leaves.
    pub cut: CutSpec,
    /// Correlations are reported for this many of the largest leaves.
    pub leaf_correlations: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            weighting: WardWeighting::PixelCount,
            cut: CutSpec::Count(6),
            leaf_correlations: 6,
        }
    }
}

impl PipelineConfig {
    /// Reads and validates a configuration, resolving relative paths.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_slice(&text).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok((cfg, base))
    }

    pub fn validate(&self) -> Result<()> {
        self.unmixing.validate()?;
        if self.stacks.is_empty() && self.phantom.is_none() {
            return Err(CliError::ConfigInvalid("neither stacks nor a phantom are configured".into()));
        }
        let mut ids: Vec<&str> = self.stacks.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::ConfigInvalid("stack ids must be unique".into()));
        }
        if self.stacks.iter().any(|s| !valid_id(&s.id)) {
            return Err(CliError::ConfigInvalid(
                "stack ids may only use letters, digits, '-' and '_'".into(),
            ));
        }
        if let Some(p) = &self.phantom {
            if !valid_id(&p.id) {
                return Err(CliError::ConfigInvalid(format!("invalid phantom id {:?}", p.id)));
            }
            if let Some(f) = p.noise_fraction {
                if !(f.is_finite() && f >= 0.0) {
                    return Err(CliError::ConfigInvalid("noise_fraction must be non-negative".into()));
                }
            }
            if p.scene.is_none() && p.layered_size < 16 {
                return Err(CliError::ConfigInvalid("layered_size must be at least 16".into()));
            }
        }
        if self.statmetrics.reference_samples == Some(0) {
            return Err(CliError::ConfigInvalid("reference_samples must be at least 1".into()));
        }
        match self.clustering.cut {
            CutSpec::Count(0) => return Err(CliError::ConfigInvalid("cut count must be at least 1".into())),
            CutSpec::Height(h) if !(h.is_finite() && h >= 0.0) => {
                return Err(CliError::ConfigInvalid("cut height must be non-negative".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
