use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerState};
use super::{accumulate, init_params, proba_sparse, GradBuffer, ModelParams, SparseRow, Target};
use crate::data::{Split, TaskDataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::{featurize, null_featurize, FeatureVector, FeaturizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Probabilities are clamped to `[prob_floor, 1]` wherever a log is taken.
    pub prob_floor: f64,
    pub init_scale: f64,
    pub hidden: usize,
    /// Keep the epoch with the best mean dev macro-F1 instead of the last one.
    pub select_best_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            prob_floor: 1e-12,
            init_scale: 0.1,
            hidden: 64,
            select_best_dev: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1e-3) {
            return Err(Error::config("probability floor must lie in (0, 1e-3)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Train on the real inputs.
    Conditional,
    /// Replace every input with the null representation.
    Null,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct EncodedSplit {
    pub ids: Vec<String>,
    pub rows: Vec<SparseRow>,
    pub labels: Vec<usize>,
}

/// A dataset with every split featurized once.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTask {
    pub task_id: String,
    pub classes: usize,
    pub dim: usize,
    pub(crate) train: EncodedSplit,
    pub(crate) dev: EncodedSplit,
    pub(crate) test: EncodedSplit,
}

impl EncodedTask {
    pub fn new(dataset: &TaskDataset, cfg: &FeaturizerConfig) -> Self {
        let encode = |split: Split| {
            let instances = dataset.split(split);
            EncodedSplit {
                ids: instances.iter().map(|i| i.id.clone()).collect(),
                rows: instances
                    .iter()
                    .map(|i| SparseRow::from_features(&featurize(&i.text, cfg)))
                    .collect(),
                labels: instances.iter().map(|i| i.label_id).collect(),
            }
        };
        EncodedTask {
            task_id: dataset.task_id().to_string(),
            classes: dataset.num_classes(),
            dim: cfg.dim,
            train: encode(Split::Train),
            dev: encode(Split::Dev),
            test: encode(Split::Test),
        }
    }

    pub(crate) fn split(&self, split: Split) -> &EncodedSplit {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).labels.len()
    }

    pub fn labels(&self, split: Split) -> &[usize] {
        &self.split(split).labels
    }

    pub fn ids(&self, split: Split) -> &[String] {
        &self.split(split).ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub featurizer: FeaturizerConfig,
    pub input_mode: InputMode,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept when dev selection is on.
    pub best_epoch: Option<usize>,
}

impl TrainedModel {
    pub fn predict_proba(&self, task_id: &str, x: &FeatureVector) -> Result<Vec<f64>> {
        super::predict_proba(&self.params, x, task_id)
    }

    /// A null-mode model ignores `text` and scores the null input.
    pub fn predict_text_proba(&self, task_id: &str, text: &str) -> Result<Vec<f64>> {
        let x = match self.input_mode {
            InputMode::Conditional => featurize(text, &self.featurizer),
            InputMode::Null => null_featurize(&self.featurizer),
        };
        self.predict_proba(task_id, &x)
    }

    /// Probability vectors over one split of an encoded task.
    pub fn split_proba(&self, task: &EncodedTask, split: Split) -> Result<Vec<Vec<f64>>> {
        let head = self.params.head_index(&task.task_id)?;
        let empty = SparseRow::default();
        Ok(task
            .split(split)
            .rows
            .iter()
            .map(|row| {
                let row = match self.input_mode {
                    InputMode::Conditional => row,
                    InputMode::Null => &empty,
                };
                proba_sparse(&self.params, row, head)
            })
            .collect())
    }

    pub fn predict_labels(&self, task: &EncodedTask, split: Split) -> Result<Vec<usize>> {
        Ok(self
            .split_proba(task, split)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    /// `(accuracy, macro_f1)` on one split.
    pub fn evaluate(&self, task: &EncodedTask, split: Split) -> Result<(f64, f64)> {
        let pred = self.predict_labels(task, split)?;
        let gold = task.labels(split);
        Ok((
            eval::accuracy(&pred, gold)?,
            eval::macro_f1(&pred, gold, task.classes)?,
        ))
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Featurizes `datasets` and trains one model over all of them.
pub fn train(
    datasets: &[&TaskDataset],
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    mode: InputMode,
) -> Result<TrainedModel> {
    featurizer.validate()?;
    let encoded: Vec<EncodedTask> = datasets.iter().map(|d| EncodedTask::new(d, featurizer)).collect();
    let refs: Vec<&EncodedTask> = encoded.iter().collect();
    train_encoded(&refs, featurizer, cfg, mode)
}

/// Trains one shared encoder with a head per task over the pooled train splits.
pub fn train_encoded(
    tasks: &[&EncodedTask],
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    mode: InputMode,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::config("training needs at least one dataset"));
    }
    if let Some(t) = tasks.iter().find(|t| t.dim != featurizer.dim) {
        return Err(Error::config(format!(
            "task `{}` was featurized with dimension {}, expected {}",
            t.task_id, t.dim, featurizer.dim
        )));
    }
    let registry: Vec<(String, usize)> = tasks.iter().map(|t| (t.task_id.clone(), t.classes)).collect();
    let mut params = init_params(featurizer.dim, cfg.hidden, &registry, cfg.seed, cfg.init_scale)?;

    let null_row = SparseRow::default();
    let mut pool: Vec<(&SparseRow, usize, usize)> = Vec::new();
    for (head, task) in tasks.iter().enumerate() {
        for (row, &label) in task.train.rows.iter().zip(&task.train.labels) {
            let row = match mode {
                InputMode::Conditional => row,
                InputMode::Null => &null_row,
            };
            pool.push((row, head, label));
        }
    }
    if pool.is_empty() {
        return Err(Error::data("combined training pool is empty"));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut optimizer = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut buf = GradBuffer::new(&params);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&SparseRow> = chunk.iter().map(|&i| pool[i].0).collect();
            let targets: Vec<Target> = chunk
                .iter()
                .enumerate()
                .map(|(row, &i)| Target {
                    row,
                    head: pool[i].1,
                    label: pool[i].2,
                })
                .collect();
            let loss = accumulate(&params, &rows, &targets, cfg.prob_floor, &mut buf)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("non-finite loss at step {step}")));
            }
            optimizer.apply(&mut params, &buf);
            buf.clear();
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite parameters after step {}",
                step.saturating_sub(1)
            )));
        }
        loss_trace.push(epoch_loss / pool.len() as f64);

        if cfg.select_best_dev && mode == InputMode::Conditional {
            if let Some(score) = mean_dev_f1(&params, tasks)? {
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, epoch, params.clone()));
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, kept)) => {
            params = kept;
            Some(epoch)
        }
        None => None,
    };
    Ok(TrainedModel {
        params,
        featurizer: featurizer.clone(),
        input_mode: mode,
        loss_trace,
        best_epoch,
    })
}

fn mean_dev_f1(params: &ModelParams, tasks: &[&EncodedTask]) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for (head, task) in tasks.iter().enumerate() {
        if task.dev.labels.is_empty() {
            continue;
        }
        let pred: Vec<usize> = task
            .dev
            .rows
            .iter()
            .map(|r| argmax(&proba_sparse(params, r, head)))
            .collect();
        scores.push(eval::macro_f1(&pred, &task.dev.labels, task.classes)?);
    }
    Ok(if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    })
}
