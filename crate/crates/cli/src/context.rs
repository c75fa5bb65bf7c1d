//! Resolved run settings, stage dependencies and the freshness check.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::json;

use snerv_core::io::{payload_path, valid_mask_path};
use snerv_core::ChromophoreLibrary;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, sha256_json, Manifest, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Phantom,
    Unmix,
    Model,
    Reference,
    Correlate,
    Cluster,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::Unmix => "unmix",
            Stage::Model => "model",
            Stage::Reference => "reference",
            Stage::Correlate => "correlate",
            Stage::Cluster => "cluster",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One input image.
#[derive(Debug, Clone)]
pub struct StackRef {
    pub id: String,
    pub stack: PathBuf,
    pub nerve: Option<PathBuf>,
}

pub struct Context {
    pub cfg: PipelineConfig,
    /// Directory of the configuration file.
    pub base: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub force: bool,
    pub strict: bool,
}

impl Context {
    pub fn new(
        cfg: PipelineConfig,
        base: PathBuf,
        seed: Option<u64>,
        out: Option<PathBuf>,
        force: bool,
        strict: bool,
    ) -> Self {
        let out = out.unwrap_or_else(|| resolve(&base, &cfg.output_dir));
        Self {
            seed: seed.unwrap_or(cfg.seed),
            cfg,
            base,
            out,
            force,
            strict,
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        resolve(&self.base, path)
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    pub fn phantom_dir(&self) -> Option<PathBuf> {
        self.cfg.phantom.as_ref().map(|p| self.dir(Stage::Phantom).join(&p.id))
    }

    /// Stacks from the configuration, or the phantom's when none are listed.
    pub fn stacks(&self) -> Vec<StackRef> {
        if self.cfg.stacks.is_empty() {
            let (Some(dir), Some(p)) = (self.phantom_dir(), &self.cfg.phantom) else {
                return Vec::new();
            };
            return vec![StackRef {
                id: p.id.clone(),
                stack: dir.join("stack.json"),
                nerve: Some(dir.join("roi_nerve.json")),
            }];
        }
        self.cfg
            .stacks
            .iter()
            .map(|s| StackRef {
                id: s.id.clone(),
                stack: self.resolve(&s.stack),
                nerve: s.nerve_mask.as_ref().map(|m| self.resolve(m)),
            })
            .collect()
    }

    pub fn library(&self) -> Result<ChromophoreLibrary> {
        let path = self.resolve(&self.cfg.library);
        let file = std::fs::File::open(&path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
        let lib = ChromophoreLibrary::from_csv(file)?;
        match &self.cfg.chromophores {
            None => Ok(lib),
            Some(names) => {
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                lib.subset(&names).map_err(|e| CliError::ConfigInvalid(e.to_string()))
            }
        }
    }

    /// Stable name for a file: relative to the output directory or the
    /// configuration directory when below either, so manifests do not
    /// depend on where a run was placed.
    fn key(&self, path: &Path) -> String {
        if let Ok(rel) = path.strip_prefix(&self.out) {
            return format!("output:{}", slash(rel));
        }
        if let Ok(rel) = path.strip_prefix(&self.base) {
            return format!("config-dir:{}", slash(rel));
        }
        slash(path)
    }

    pub fn output_key(&self, path: &Path) -> String {
        path.strip_prefix(&self.out).map(slash).unwrap_or_else(|_| slash(path))
    }

    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        let phantom = if self.cfg.stacks.is_empty() { vec![Stage::Phantom] } else { vec![] };
        match stage {
            Stage::Phantom => vec![],
            Stage::Unmix | Stage::Reference => phantom,
            Stage::Model => vec![Stage::Unmix],
            Stage::Correlate => vec![Stage::Model, Stage::Reference],
            Stage::Cluster => [vec![Stage::Model, Stage::Reference], phantom].concat(),
            Stage::Report => vec![Stage::Unmix, Stage::Correlate, Stage::Cluster],
        }
    }

    fn external_files(&self, stage: Stage) -> Vec<PathBuf> {
        let stack_files = |with_payload: bool| -> Vec<PathBuf> {
            self.stacks()
                .into_iter()
                .flat_map(|s| {
                    let mut v = vec![s.stack.clone(), valid_mask_path(&s.stack)];
                    if with_payload {
                        v.push(payload_path(&s.stack));
                    }
                    v
                })
                .collect()
        };
        let library = vec![self.resolve(&self.cfg.library)];
        match stage {
            Stage::Phantom => {
                let mut v = library;
                if let Some(crate::config::SceneSource::Path(p)) = self.cfg.phantom.as_ref().and_then(|p| p.scene.as_ref()) {
                    v.push(self.resolve(p));
                }
                v
            }
            Stage::Unmix | Stage::Cluster => stack_files(true),
            Stage::Reference => {
                let mut v = stack_files(false);
                for s in self.stacks() {
                    if let Some(n) = s.nerve {
                        v.push(payload_path(&n));
                        v.push(n);
                    }
                }
                v
            }
            Stage::Model | Stage::Correlate => vec![],
            Stage::Report => library,
        }
    }

    /// Settings that change a stage's outputs.
    fn settings(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        let mut unmixing = c.unmixing.clone();
        unmixing.seed = self.seed;
        match stage {
            Stage::Phantom => json!({ "phantom": c.phantom, "chromophores": c.chromophores, "seed": self.seed }),
            Stage::Unmix => json!({ "unmixing": unmixing }),
            Stage::Model => json!({}),
            Stage::Reference => json!({ "reference_samples": c.statmetrics.reference_samples, "seed": self.seed }),
            Stage::Correlate => json!({ "pearson": c.statmetrics.pearson }),
            Stage::Cluster => json!({ "clustering": c.clustering, "pearson": c.statmetrics.pearson }),
            Stage::Report => json!({ "chromophores": c.chromophores }),
        }
    }

    fn manifest(&self, stage: Stage) -> Result<Manifest> {
        Manifest::read(&self.dir(stage).join(MANIFEST_FILE))?
            .ok_or_else(|| CliError::MissingInput(format!("no outputs of stage '{stage}'; run `snerv {stage}` first")))
    }

    /// Hashes of everything `stage` reads, as it stands now.
    pub fn current_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for up in self.upstream(stage) {
            for key in self.manifest(up)?.outputs.keys() {
                let path = self.out.join(key);
                inputs.insert(format!("output:{key}"), sha256_file(&path)?);
            }
        }
        for path in self.external_files(stage) {
            inputs.insert(self.key(&path), sha256_file(&path)?);
        }
        inputs.insert("settings".into(), sha256_json(&self.settings(stage)));
        Ok(inputs)
    }

    /// Fails unless every upstream stage has run and is still current.
    pub fn check_upstream(&self, stage: Stage) -> Result<()> {
        for up in self.upstream(stage) {
            let recorded = self.manifest(up)?;
            let mut problems = Vec::new();
            for (key, hash) in &recorded.outputs {
                let path = self.out.join(key);
                if !path.exists() {
                    return Err(CliError::MissingInput(format!("{} (output of '{up}')", path.display())));
                }
                if !self.force && sha256_file(&path)? != *hash {
                    problems.push(format!("{key} was modified"));
                }
            }
            if self.force {
                continue;
            }
            let current = match self.current_inputs(up) {
                Ok(c) => c,
                Err(CliError::MissingInput(m)) => {
                    return Err(CliError::UpstreamStale(format!("'{up}' inputs are gone: {m}")))
                }
                Err(e) => return Err(e),
            };
            problems.extend(Manifest::changed(&recorded.inputs, &current));
            if !problems.is_empty() {
                return Err(CliError::UpstreamStale(format!("'{up}': {}", problems.join("; "))));
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn slash(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
