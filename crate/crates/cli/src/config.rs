//! Run configuration files: TOML with strict keys and a canonical echo.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qvae::samplers::{EmulatorPreset, SamplerSpec};
use qvae::vae::{ModelConfig, TrainConfig};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "QVAE_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Idx,
    BarsStripes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// IDX image file; relative paths are resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Side length of synthetic bars-and-stripes images.
    #[serde(default = "default_side")]
    pub side: usize,
    /// Number of synthetic examples.
    #[serde(default = "default_examples")]
    pub examples: usize,
    /// Caps the training split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default = "default_n_val")]
    pub n_val: usize,
    #[serde(default)]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_side() -> usize {
    4
}
fn default_examples() -> usize {
    2000
}
fn default_n_val() -> usize {
    1000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.images, &mut cfg.data.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if let Ok(abs) = std::fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        Ok(cfg)
    }

    /// Parses and validates; errors name the offending key path.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut value: toml::Value = text.parse::<toml::Table>().map_err(|e| e.to_string())?.into();
        expand_preset(&mut value)?;
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            format!("key '{path}': {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = &self.data;
        match d.source {
            DataSource::Idx if d.images.is_none() => {
                return Err("key 'data.images': required when data.source = \"idx\"".into());
            }
            DataSource::BarsStripes if d.side < 2 => return Err("key 'data.side': must be at least 2".into()),
            DataSource::BarsStripes if self.model.x_dim != d.side * d.side => {
                return Err(format!("key 'model.x_dim': {} does not match data.side² = {}", self.model.x_dim, d.side * d.side));
            }
            _ => {}
        }
        self.train.validate().map_err(|e| format!("section 'train': {e}"))?;
        if let SamplerSpec::Emulator(e) = &self.sampler {
            e.validate().map_err(|e| format!("section 'sampler': {e}"))?;
        }
        if let SamplerSpec::Pa(p) = &self.sampler {
            p.validate().map_err(|e| format!("section 'sampler': {e}"))?;
        }
        self.model.graph.build().map_err(|e| format!("section 'model.graph': {e}"))?;
        Ok(())
    }

    /// Fully expanded TOML, defaults included.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Replaces `sampler.preset` by the preset's full emulator settings; keys
/// written next to it override the preset.
fn expand_preset(value: &mut toml::Value) -> Result<(), String> {
    let Some(sampler) = value.get_mut("sampler").and_then(toml::Value::as_table_mut) else {
        return Ok(());
    };
    let Some(preset) = sampler.remove("preset") else {
        return Ok(());
    };
    let name = preset.as_str().ok_or("key 'sampler.preset': expected a string")?;
    let preset: EmulatorPreset = name.parse().map_err(|e| format!("key 'sampler.preset': {e}"))?;
    match sampler.get("backend").and_then(toml::Value::as_str) {
        None | Some("emulator") => {}
        Some(other) => return Err(format!("key 'sampler.preset': only valid with backend = \"emulator\", not \"{other}\"")),
    }
    let toml::Value::Table(mut merged) = toml::Value::try_from(preset.config()).map_err(|e| e.to_string())? else {
        unreachable!("struct serializes to a table")
    };
    merge(&mut merged, std::mem::take(sampler));
    merged.insert("backend".into(), "emulator".into());
    *sampler = merged;
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Run directory: explicit flag, then the config's `output.dir`, then
/// `$QVAE_OUT_DIR/<config stem>`, then `runs/<config stem>`.
pub fn run_dir(flag: Option<&Path>, cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output.dir {
        return p.clone();
    }
    let stem = config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    default_out_root().join(stem)
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}
