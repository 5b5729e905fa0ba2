//! Experiment configuration: one TOML file, overridable from the command line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lossearch_core::augment::{AugmentParams, Pipeline, Technique};
use lossearch_core::data::{gaussian_blobs, load_cifar_binary, synthetic_shapes, Dataset};
use lossearch_core::evolution::{default_stages, EvolutionConfig, Stage};
use lossearch_core::losses::Axis;
use lossearch_core::rng::{derive_seed, tag};
use lossearch_core::trainer::{ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Invalid configuration or arguments; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Blocks that carry their own seed. A block without one gets a seed derived
/// from the global seed and the block name.
const SEEDED_BLOCKS: [&str; 4] = ["dataset", "rank_random", "evolution", "eliminate"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub augmentation: AugmentationConfig,
    pub trainer: TrainerConfig,
    pub rank_random: RankRandomConfig,
    pub evolution: EvolutionConfig,
    pub search: SearchConfig,
    pub eliminate: EliminateConfig,
    pub analysis: AnalysisConfig,
    pub phenotype: PhenotypeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            augmentation: AugmentationConfig::default(),
            trainer: TrainerConfig::default(),
            rank_random: RankRandomConfig::default(),
            evolution: EvolutionConfig::default(),
            search: SearchConfig::default(),
            eliminate: EliminateConfig::default(),
            analysis: AnalysisConfig::default(),
            phenotype: PhenotypeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Shapes,
    Cifar,
}

/// Fields not used by the selected kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    pub classes: usize,
    /// Blobs feature dimension.
    pub dim: usize,
    /// Blobs center radius.
    pub separation: f64,
    /// Shapes image side.
    pub side: usize,
    /// Samples moved from train to validation (blobs and shapes).
    pub validation: usize,
    pub train_files: Vec<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Blobs,
            n: 600,
            classes: 3,
            dim: 2,
            separation: 4.0,
            side: 16,
            validation: 100,
            train_files: Vec::new(),
            test_file: None,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> anyhow::Result<Dataset> {
        let ds = match self.kind {
            DatasetKind::Blobs => gaussian_blobs(self.n, self.classes, self.dim, self.separation, self.seed)?
                .holdout(self.validation, self.seed)?,
            DatasetKind::Shapes => {
                synthetic_shapes(self.n, self.classes, self.side, self.seed)?.holdout(self.validation, self.seed)?
            }
            DatasetKind::Cifar => load_cifar_binary(&self.train_files, self.test_file.as_deref(), self.seed)?,
        };
        Ok(ds)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.kind != DatasetKind::Cifar {
            return Ok(());
        }
        if self.train_files.is_empty() {
            return Err(config_error("dataset.train_files is empty"));
        }
        for f in self.train_files.iter().chain(&self.test_file) {
            if !f.is_file() {
                return Err(config_error(format!("dataset file {} does not exist", f.display())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Techniques compared by `rank-random` and `analyze`.
    pub techniques: Vec<Technique>,
    /// Technique used by `search`, `eliminate` and `train`.
    pub technique: Technique,
    pub params: AugmentParams,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { techniques: Technique::ALL.to_vec(), technique: Technique::Base, params: AugmentParams::default() }
    }
}

impl AugmentationConfig {
    pub fn pipeline(&self, technique: Technique) -> Pipeline {
        Pipeline::new(technique, self.params.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Defaults to the convnet for images and the MLP otherwise.
    pub model: Option<ModelKind>,
    /// Independent training runs per (genome, technique) in `rank-random`.
    pub repeats: usize,
    pub settings: TrainConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { model: None, repeats: 1, settings: TrainConfig::default() }
    }
}

impl TrainerConfig {
    pub fn model_for(&self, ds: &Dataset) -> ModelKind {
        self.model.unwrap_or(if ds.is_image() { ModelKind::TinyConvnet } else { ModelKind::Mlp })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankRandomConfig {
    pub pool_size: usize,
    pub genome_length: usize,
    pub seed: u64,
}

impl Default for RankRandomConfig {
    fn default() -> Self {
        Self { pool_size: 50, genome_length: lossearch_core::genome::DEFAULT_LENGTH, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorChoice {
    Training,
    ActiveNodes,
    HashMod100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub evaluator: EvaluatorChoice,
    pub checkpoint_every: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { evaluator: EvaluatorChoice::Training, checkpoint_every: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EliminateConfig {
    pub stages: Vec<Stage>,
    /// Genome list to eliminate from; defaults to the search's final population.
    pub candidates: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EliminateConfig {
    fn default() -> Self {
        Self { stages: default_stages(), candidates: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fitness ledgers to read; defaults to the `rank-random` ledger.
    pub ledgers: Vec<PathBuf>,
    pub best_k: usize,
    pub clusters: usize,
    /// Axes of the clustered scatter plot.
    pub scatter: [Technique; 2],
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { ledgers: Vec::new(), best_k: 50, clusters: 4, scatter: [Technique::Base, Technique::All] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhenotypeConfig {
    pub samples: usize,
    /// Distance of the grid ends from 0 and 1.
    pub delta: f64,
}

impl Default for PhenotypeConfig {
    fn default() -> Self {
        let a = Axis::default();
        Self { samples: a.samples, delta: a.lo }
    }
}

impl PhenotypeConfig {
    pub fn axis(&self) -> Axis {
        Axis::with_margin(self.delta, self.samples)
    }
}

impl ExperimentConfig {
    /// Reads `path` (defaults when absent), applies `key.path=value` overrides,
    /// fills missing block seeds and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| config_error(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| config_error(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let global = match table.get("seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(v) => return Err(config_error(format!("seed must be a non-negative integer, got {v}"))),
        };
        for block in SEEDED_BLOCKS {
            let entry = table.entry(block).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                if !t.contains_key("seed") {
                    let s = derive_seed(global, &[tag(block)]) >> 1;
                    t.insert("seed".into(), toml::Value::Integer(s as i64));
                }
            }
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.dataset.validate()?;
        self.augmentation.params.validate()?;
        if self.augmentation.techniques.is_empty() {
            return Err(config_error("augmentation.techniques is empty"));
        }
        self.trainer.settings.validate()?;
        if self.trainer.repeats == 0 {
            return Err(config_error("trainer.repeats must be at least 1"));
        }
        self.evolution.validate()?;
        if self.search.checkpoint_every == 0 {
            return Err(config_error("search.checkpoint_every must be at least 1"));
        }
        if self.rank_random.pool_size == 0 || self.rank_random.genome_length < 2 {
            return Err(config_error("rank_random needs pool_size >= 1 and genome_length >= 2"));
        }
        if let Some(s) = self.eliminate.stages.iter().find(|s| s.keep == 0 || s.runs == 0) {
            return Err(config_error(format!("elimination stage {s:?} needs keep and runs >= 1")));
        }
        if let Some(c) = &self.eliminate.candidates {
            if !c.is_file() {
                return Err(config_error(format!("candidate file {} does not exist", c.display())));
            }
        }
        self.phenotype.axis().validate()?;
        if self.analysis.best_k == 0 || self.analysis.clusters == 0 {
            return Err(config_error("analysis.best_k and analysis.clusters must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets `a.b.c = value`, where `value` is read as a TOML value when possible and
/// as a bare string otherwise.
fn apply_override(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| config_error(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match next {
            toml::Value::Table(t) => t,
            _ => return Err(config_error(format!("override `{key}`: `{p}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_and_get_distinct_block_seeds() {
        let c = ExperimentConfig::load(None, &[]).unwrap();
        assert_ne!(c.dataset.seed, c.evolution.seed);
        let again = ExperimentConfig::load(None, &[]).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = ExperimentConfig::load(
            None,
            &["trainer.settings.steps=300".into(), "augmentation.technique=cutout".into(), "evolution.seed=9".into()],
        )
        .unwrap();
        assert_eq!(c.trainer.settings.steps, 300);
        assert_eq!(c.augmentation.technique, Technique::Cutout);
        assert_eq!(c.evolution.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::load(None, &["trainer.stepz=3".into()]).unwrap_err();
        assert!(e.downcast_ref::<ConfigError>().is_some());
        assert!(ExperimentConfig::load(None, &["colour=1".into()]).is_err());
    }

    #[test]
    fn missing_cifar_file_is_a_config_error() {
        let e = ExperimentConfig::load(
            None,
            &["dataset.kind=cifar".into(), "dataset.train_files=[\"/no/such/file.bin\"]".into()],
        )
        .unwrap_err();
        assert!(e.to_string().contains("does not exist"));
    }

    #[test]
    fn effective_config_round_trips() {
        let c = ExperimentConfig::load(None, &["seed=4".into()]).unwrap();
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
