//! Pointwise V-usable information.
//!
//! Two models of the same family are fit on a task's train split: one on the
//! real inputs and one on the null input only. For a held-out instance
//! `(x, y)` the PVI is `log2 p_cond(y | x) - log2 p_null(y | ∅)` in bits.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Split, TaskDataset};
use crate::error::{Error, Result};
use crate::features::FeaturizerConfig;
use crate::model::{train_encoded, EncodedTask, InputMode, TrainConfig, TrainedModel};
use crate::parallel;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviRecord {
    pub instance_id: String,
    pub task_id: String,
    pub log2_cond: f64,
    pub log2_null: f64,
    pub pvi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviSummary {
    pub task_id: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single record.
    pub std: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl PviSummary {
    pub fn from_records(task_id: &str, records: &[PviRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::data(format!("no PVI records for task `{task_id}`")));
        }
        let values: Vec<f64> = records.iter().map(|r| r.pvi).collect();
        let std = if values.len() > 1 {
            stats::variance(&values).max(0.0).sqrt()
        } else {
            0.0
        };
        Ok(PviSummary {
            task_id: task_id.to_string(),
            n: values.len(),
            mean: stats::mean(&values),
            std,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PviResult {
    pub records: Vec<PviRecord>,
    pub summary: PviSummary,
}

/// PVI of the instances in `split` under an already fitted model pair.
pub fn pvi_from_models(
    cond: &TrainedModel,
    null: &TrainedModel,
    task: &EncodedTask,
    split: Split,
    prob_floor: f64,
) -> Result<PviResult> {
    if task.split_len(split) == 0 {
        return Err(Error::data(format!(
            "task `{}` has an empty {split} split",
            task.task_id
        )));
    }
    let p_cond = cond.split_proba(task, split)?;
    let p_null = null.split_proba(task, split)?;
    let log2 = |p: f64| p.clamp(prob_floor, 1.0).log2();
    let records: Vec<PviRecord> = task
        .ids(split)
        .iter()
        .zip(task.labels(split))
        .zip(p_cond.iter().zip(&p_null))
        .map(|((id, &y), (pc, pn))| {
            let log2_cond = log2(pc[y]);
            let log2_null = log2(pn[y]);
            PviRecord {
                instance_id: id.clone(),
                task_id: task.task_id.clone(),
                log2_cond,
                log2_null,
                pvi: log2_cond - log2_null,
            }
        })
        .collect();
    let summary = PviSummary::from_records(&task.task_id, &records)?;
    Ok(PviResult { records, summary })
}

/// Fits both models on the task's train split (same config and seed) and
/// scores `split`.
pub fn compute_pvi_encoded(
    task: &EncodedTask,
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    split: Split,
) -> Result<PviResult> {
    if split == Split::Train {
        return Err(Error::config("PVI must be evaluated on held-out instances (dev or test)"));
    }
    if task.split_len(split) == 0 {
        return Err(Error::data(format!(
            "task `{}` has an empty {split} split",
            task.task_id
        )));
    }
    // Both models keep their final-epoch parameters.
    let cfg = &TrainConfig {
        select_best_dev: false,
        ..cfg.clone()
    };
    let cond = train_encoded(&[task], featurizer, cfg, InputMode::Conditional)?;
    let null = train_encoded(&[task], featurizer, cfg, InputMode::Null)?;
    pvi_from_models(&cond, &null, task, split, cfg.prob_floor)
}

pub fn compute_pvi(
    dataset: &TaskDataset,
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    split: Split,
) -> Result<PviResult> {
    featurizer.validate()?;
    compute_pvi_encoded(&EncodedTask::new(dataset, featurizer), featurizer, cfg, split)
}

/// Independent PVI computation per task, keyed by task id. `jobs` caps the
/// number of worker threads; the output does not depend on it.
pub fn pvi_sweep(
    datasets: &[&TaskDataset],
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    split: Split,
    jobs: usize,
) -> Result<BTreeMap<String, PviResult>> {
    let mut seen = std::collections::BTreeSet::new();
    for d in datasets {
        if !seen.insert(d.task_id()) {
            return Err(Error::config(format!("duplicate task id `{}`", d.task_id())));
        }
    }
    featurizer.validate()?;
    let results = parallel::map(jobs, datasets, |d| {
        let task = EncodedTask::new(d, featurizer);
        compute_pvi_encoded(&task, featurizer, cfg, split)
    })?;
    Ok(datasets
        .iter()
        .map(|d| d.task_id().to_string())
        .zip(results)
        .collect())
}

pub const CSV_HEADER: &str = "instance_id,task_id,log2_cond,log2_null,pvi";

pub fn write_csv<W: Write>(records: &[PviRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))
        .map_err(|e| Error::data(e.to_string()))?;
    for r in records {
        w.write_record([
            r.instance_id.as_str(),
            r.task_id.as_str(),
            &r.log2_cond.to_string(),
            &r.log2_null.to_string(),
            &r.pvi.to_string(),
        ])
        .map_err(|e| Error::data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<PviRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::data(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::data(format!("PVI CSV header must be `{CSV_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PviRecord>().enumerate() {
        out.push(row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
