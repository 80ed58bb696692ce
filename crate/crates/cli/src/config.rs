//! Experiment configuration: one TOML file with an explicit `version` key.

use std::path::{Path, PathBuf};

use cotrain::corruptions::CorruptionKind;
use cotrain::data::synthetic::SyntheticConfig;
use cotrain::model::{ModelConfig, TrunkConfig};
use cotrain::training::TrainConfig;
use cotrain::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Baseline,
    MtlMonkey,
    MtlShuffled,
    Oracle,
    MtlOracle,
    SingleNeural,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Baseline => "baseline",
            Pipeline::MtlMonkey => "mtl_monkey",
            Pipeline::MtlShuffled => "mtl_shuffled",
            Pipeline::Oracle => "oracle",
            Pipeline::MtlOracle => "mtl_oracle",
            Pipeline::SingleNeural => "single_neural",
        }
    }

    pub fn needs_responses(self) -> bool {
        !matches!(self, Pipeline::Baseline | Pipeline::Oracle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Procedurally generated textured shapes.
    Synthetic(SyntheticConfig),
    /// `<root>/<split>/<class>/<files>` with a manifest; a relative root is
    /// resolved against the data-root environment variable when set.
    Directory { root: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    VggMini,
    Vgg19bnFull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: ModelPreset,
    /// Channel widths of the three mini blocks.
    pub widths: Option<[usize; 3]>,
    pub head_widths: Option<[usize; 2]>,
    pub neurons: usize,
    pub dropout: Option<f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            preset: ModelPreset::VggMini,
            widths: None,
            head_widths: None,
            neurons: 64,
            dropout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherSpec {
    /// Energy-model complex cells.
    Gabor {
        #[serde(default)]
        seed: u64,
    },
    /// Recorded responses for the training images (and optionally the
    /// validation images).
    File {
        train: PathBuf,
        val: Option<PathBuf>,
    },
}

impl Default for TeacherSpec {
    fn default() -> Self {
        TeacherSpec::Gabor { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    /// Use an existing Oracle checkpoint instead of training one.
    pub checkpoint: Option<PathBuf>,
    /// Seed of the Oracle trained as teacher.
    pub teacher_seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            checkpoint: None,
            teacher_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub kinds: Vec<CorruptionKind>,
    pub levels: Vec<u8>,
    pub corruption_seed: u64,
    /// Replacement severity table (TOML); the bundled one otherwise.
    pub severity_table: Option<PathBuf>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            kinds: CorruptionKind::ALL.to_vec(),
            levels: vec![1, 2, 3, 4, 5],
            corruption_seed: 0,
            severity_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub pipeline: Pipeline,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub teacher: TeacherSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub evaluation: EvalSpec,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::config("seed list has duplicates"));
        }
        if self.model.neurons == 0 && self.pipeline.needs_responses() {
            return Err(Error::config("pipelines with neural data need at least one neuron"));
        }
        if matches!(self.teacher, TeacherSpec::File { .. }) && self.pipeline == Pipeline::MtlOracle {
            return Err(Error::config(
                "mtl_oracle draws its responses from the Oracle; teacher must be gabor",
            ));
        }
        if self.evaluation.kinds.is_empty() || self.evaluation.levels.is_empty() {
            return Err(Error::config("evaluation kinds and levels must be nonempty"));
        }
        if let Some(l) = self.evaluation.levels.iter().find(|l| !(1..=5).contains(*l)) {
            return Err(Error::config(format!("severity level {l} outside 1..5")));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn model_config(&self, input_size: usize, classes: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let mut cfg = match m.preset {
            ModelPreset::VggMini => ModelConfig::vgg_mini(input_size, classes, m.neurons.max(1)),
            ModelPreset::Vgg19bnFull => ModelConfig::vgg19bn_full(input_size, classes, m.neurons.max(1)),
        };
        if let Some(w) = m.widths {
            if m.preset != ModelPreset::VggMini {
                return Err(Error::config("custom widths apply to the vgg_mini preset only"));
            }
            cfg.trunk = TrunkConfig::vgg_mini_with_widths(w);
        }
        if let Some(h) = m.head_widths {
            cfg.head.widths = h;
        }
        if let Some(d) = m.dropout {
            cfg.head.dropout_rate = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
version = 1
pipeline = "baseline"
seeds = [0, 1]

[dataset]
kind = "synthetic"
classes = 4
image_size = 16
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::parse(SMOKE).unwrap();
        assert_eq!(c.pipeline, Pipeline::Baseline);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.evaluation.kinds.len(), 14);
    }

    #[test]
    fn version_and_unknown_keys_are_checked() {
        assert!(ExperimentConfig::parse(&SMOKE.replace("version = 1", "version = 9")).is_err());
        assert!(ExperimentConfig::parse(&format!("{SMOKE}\nbogus = 3\n")).is_err());
        assert!(ExperimentConfig::parse(&SMOKE.replace("[0, 1]", "[1, 1]")).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::parse(SMOKE).unwrap();
        let b = ExperimentConfig::parse(&SMOKE.replace("[0, 1]", "[0, 2]")).unwrap();
        assert_eq!(a.digest(), ExperimentConfig::parse(SMOKE).unwrap().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
