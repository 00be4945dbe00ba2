//! Run configuration: one TOML file, command-line overrides on top, and a
//! digest of the resolved result that every artifact carries.

use std::path::{Path, PathBuf};

use probe_core::dataset::DEFAULT_STRIDE;
use probe_core::model::OrmConfig;
use probe_core::policy::{PolicyVariant, NUM_VARIANTS};
use probe_core::proprio::{GaitConstants, NoiseLevels};
use probe_core::worldsim::Category;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub categories: Vec<Category>,
    /// Episodes rolled per category before curation.
    pub episodes: usize,
    /// Tick spacing of stored steps.
    pub stride: u32,
    pub policies: Vec<PolicyVariant>,
    pub curation: Curation,
    pub noise: NoiseLevels,
    /// Gait constants file, relative to the config file. When absent the
    /// `gait` table (or the built-in constants) is used.
    pub gait_file: Option<PathBuf>,
    pub gait: GaitConstants,
    pub model: ModelSection,
    pub ablation: Ablation,
    /// Output directory for every artifact.
    pub out: PathBuf,
}

/// Per-category balancing. `cap_per_mode` wins when both are given; with
/// neither the rolled pool is kept as is.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Curation {
    /// Episodes kept per category, reached with the smallest sufficient cap.
    pub target: Option<usize>,
    pub cap_per_mode: Option<usize>,
}

/// A model preset with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub embed_dim: Option<usize>,
    pub num_blocks: Option<usize>,
    pub num_heads: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub cosine_decay: Option<bool>,
    pub alphas: Option<[f64; 4]>,
    /// Input channel subset, `A` to `E`.
    pub channels: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub subsets: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            categories: Category::ALL.to_vec(),
            episodes: 3000,
            stride: DEFAULT_STRIDE,
            policies: (1..=NUM_VARIANTS).map(|id| PolicyVariant::builtin(id).expect("builtin id")).collect(),
            curation: Curation { target: Some(2000), cap_per_mode: None },
            noise: NoiseLevels::default(),
            gait_file: None,
            gait: GaitConstants::default(),
            model: ModelSection::default(),
            ablation: Ablation::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "desk".into(),
            embed_dim: None,
            num_blocks: None,
            num_heads: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            cosine_decay: None,
            alphas: None,
            channels: None,
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { subsets: "ABCDE".into() }
    }
}

impl ModelSection {
    pub fn resolve(&self, seed: u64) -> Result<OrmConfig, Error> {
        let mut c = OrmConfig::preset(&self.preset)
            .ok_or_else(|| Error::Config(format!("unknown model preset {:?}", self.preset)))?;
        if let Some(d) = self.embed_dim {
            c.embed_dim = d;
            c.ff_hidden = 4 * d;
            c.mlp_hidden = 2 * d;
        }
        c.num_blocks = self.num_blocks.unwrap_or(c.num_blocks);
        c.num_heads = self.num_heads.unwrap_or(c.num_heads);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = self.learning_rate.unwrap_or(c.learning_rate);
        c.cosine_decay = self.cosine_decay.unwrap_or(c.cosine_decay);
        c.alphas = self.alphas.unwrap_or(c.alphas);
        if let Some(s) = self.channels {
            c.channel_mask = probe_core::model::ChannelMask::subset(s)
                .ok_or_else(|| Error::Config(format!("unknown channel subset {s:?}")))?;
        }
        c.seed = seed;
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }
}

impl RunConfig {
    /// Reads a config file and loads the gait file it points to.
    pub fn load(path: &Path) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(rel) = cfg.gait_file.clone() {
            let gait_path = path.parent().unwrap_or(Path::new(".")).join(rel);
            cfg.gait = load_gait(&gait_path)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy variant is required".into()));
        }
        for p in &self.policies {
            if !(0.0..=1.0).contains(&p.lateral_bias) || p.probe_duration == 0 {
                return Err(Error::Config(format!("policy variant {} is malformed", p.id)));
            }
        }
        for c in self.ablation.subsets.chars() {
            if probe_core::model::ChannelMask::subset(c).is_none() {
                return Err(Error::Config(format!("unknown ablation subset {c:?}")));
            }
        }
        self.model.resolve(self.seed).map(|_| ())
    }

    pub fn orm_config(&self) -> Result<OrmConfig, Error> {
        self.model.resolve(self.seed)
    }

    /// SHA-256 over the canonical JSON of the resolved config. Paths are
    /// left out, so moving the output directory keeps the digest.
    pub fn digest(&self) -> String {
        let canonical = RunConfig { gait_file: None, out: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn load_gait(path: &Path) -> Result<GaitConstants, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
