//! Surrogate training: fits a small softmax classifier using a genome's gradient
//! as the loss signal and reports the best validation accuracy.

mod model;
mod optim;
mod schedule;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use model::{argmax, softmax_rows, Cache, Model, ModelKind, CONV_CHANNELS, MLP_HIDDEN};
pub use optim::{Optimizer, OptimizerKind};
pub use schedule::lr_at;

use crate::augment::{Pipeline, Technique};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::genome::{GenomeHash, LossGenome};
use crate::rng::{derive_seed, rng_from, tag};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    pub enabled: bool,
    /// Defaults to a quarter of the steps.
    pub check_step: Option<usize>,
    /// Defaults to chance accuracy plus 0.05.
    pub min_val_acc: Option<f64>,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { enabled: true, check_step: None, min_val_acc: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub optimizer: OptimizerKind,
    pub early_stop: EarlyStop,
    pub label_smoothing: f64,
    /// Validation cadence; defaults to a twentieth of the steps.
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            peak_lr: 0.01,
            warmup_steps: 100,
            optimizer: OptimizerKind::default(),
            early_stop: EarlyStop::default(),
            label_smoothing: 0.0,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.warmup_steps >= self.steps {
            return Err(Error::Config(format!(
                "need 0 <= warmup_steps < steps (got {} and {})",
                self.warmup_steps, self.steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label_smoothing {} outside [0, 1]", self.label_smoothing)));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::Config(format!("peak_lr must be positive, got {}", self.peak_lr)));
        }
        Ok(())
    }

    pub fn lr(&self, step: usize) -> f64 {
        lr_at(step, self.steps, self.warmup_steps, self.peak_lr)
    }

    fn eval_every(&self) -> usize {
        self.eval_every.unwrap_or(self.steps / 20).max(1)
    }

    /// Step and threshold of the early-stop check, if enabled.
    pub fn early_stop_rule(&self, classes: usize) -> Option<(usize, f64)> {
        let e = &self.early_stop;
        e.enabled.then(|| {
            (e.check_step.unwrap_or(self.steps / 4), e.min_val_acc.unwrap_or(1.0 / classes as f64 + 0.05))
        })
    }

    /// Stable digest of every field, for cache keys.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// y ← y(1 − α) + α/C on every row.
pub fn smooth_labels(y: &mut Tensor, alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    let c = y.row_len() as f64;
    y.data_mut().iter_mut().for_each(|v| *v = *v * (1.0 - alpha) + alpha / c);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub genome_hash: GenomeHash,
    pub augmentation: Technique,
    pub seed: u64,
    pub best_val_acc: f64,
    pub best_step: usize,
    pub degenerate: bool,
    #[serde(skip)]
    pub early_stopped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub record: FitnessRecord,
    /// Genome loss of every completed training step.
    pub losses: Vec<f64>,
    pub model: Model,
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(model: &Model, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for chunk in idx.chunks(256) {
        let (x, _) = ds.batch(chunk);
        let p = model.predict(&x)?;
        hits += chunk.iter().enumerate().filter(|&(r, &i)| argmax(p.row(r)) == ds.label_of(i)).count();
    }
    Ok(hits as f64 / idx.len() as f64)
}

pub fn train_and_score(
    genome: &LossGenome,
    kind: ModelKind,
    ds: &Dataset,
    pipeline: &Pipeline,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitnessRecord> {
    Ok(train(genome, kind, ds, pipeline, cfg, seed)?.record)
}

/// Full training run. Randomness (initialisation, batch order, augmentation)
/// derives from `seed` and the genome's canonical hash only.
pub fn train(
    genome: &LossGenome,
    kind: ModelKind,
    ds: &Dataset,
    pipeline: &Pipeline,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    ds.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(Error::Config(format!("dataset {} needs non-empty train and validation splits", ds.name)));
    }
    let hash = genome.canonical_hash();
    let stream = |label: &str| derive_seed(seed, &[hash.0, tag(label)]);
    let mut model = Model::new(kind, ds.sample_shape(), ds.classes, &mut rng_from(stream("init")))?;
    let mut opt = Optimizer::new(cfg.optimizer, model.param_count());
    let mut order_rng = rng_from(stream("batches"));
    let early = cfg.early_stop_rule(ds.classes);
    let eval_every = cfg.eval_every();

    let mut record = FitnessRecord {
        genome_hash: hash,
        augmentation: pipeline.technique,
        seed,
        best_val_acc: 0.0,
        best_step: 0,
        degenerate: false,
        early_stopped: false,
    };
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let degenerate = |mut record: FitnessRecord, losses, model| {
        record.degenerate = true;
        record.best_val_acc = 0.0;
        record.best_step = 0;
        Ok(TrainReport { record, losses, model })
    };

    for step in 1..=cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if cursor == order.len() {
                order = ds.train.clone();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let take = (cfg.batch_size - idx.len()).min(order.len() - cursor);
            idx.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }
        let (x, y) = ds.batch(&idx);
        let (x, mut y) = pipeline.apply(&x, &y, derive_seed(stream("augment"), &[step as u64]))?;
        smooth_labels(&mut y, cfg.label_smoothing);
        let cache = model.forward(&x)?;
        let lg = match genome.loss_and_grad(&y, &cache.probs) {
            Ok(lg) => lg,
            Err(Error::DegenerateLoss { .. }) => return degenerate(record, losses, model),
            Err(e) => return Err(e),
        };
        losses.push(lg.loss);
        let grad = model.backward(&cache, &lg.grad)?;
        opt.step(&mut model.params, &grad, cfg.lr(step));
        if !model.params.iter().all(|p| p.is_finite()) {
            return degenerate(record, losses, model);
        }

        let check = early.filter(|&(s, _)| s == step);
        if step % eval_every == 0 || step == cfg.steps || check.is_some() {
            let acc = accuracy(&model, ds, &ds.val)?;
            if acc > record.best_val_acc {
                record.best_val_acc = acc;
                record.best_step = step;
            }
            if let Some((_, threshold)) = check {
                if acc < threshold {
                    record.early_stopped = true;
                    record.best_val_acc = acc;
                    record.best_step = step;
                    break;
                }
            }
        }
    }
    Ok(TrainReport { record, losses, model })
}

pub const LEDGER_HEADER: &str = "genome_hash,augmentation,seed,best_val_acc,best_step,degenerate";

/// Appends records to a fitness CSV, writing the header if the file is new.
pub fn append_ledger(path: &Path, records: &[FitnessRecord]) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    if fresh && records.is_empty() {
        writeln!(file, "{LEDGER_HEADER}")?;
    }
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_ledger(path: &Path) -> Result<Vec<FitnessRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
