//! Classification tasks: instances, train/dev/test splits, and JSONL ingestion.
//!
//! A [`TaskDataset`] can only be built through its validating constructor, so
//! every value in circulation has at least two labels, every label anchored in
//! the train split, and pairwise-disjoint splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub label_id: usize,
    pub task_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    task_id: String,
    label_vocab: Vec<String>,
    train: Vec<Instance>,
    dev: Vec<Instance>,
    test: Vec<Instance>,
}

impl TaskDataset {
    pub fn new(
        task_id: impl Into<String>,
        label_vocab: Vec<String>,
        train: Vec<Instance>,
        dev: Vec<Instance>,
        test: Vec<Instance>,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if label_vocab.len() < 2 {
            return Err(Error::data(format!(
                "task `{task_id}` needs at least 2 labels, found {}",
                label_vocab.len()
            )));
        }
        let distinct: BTreeSet<&String> = label_vocab.iter().collect();
        if distinct.len() != label_vocab.len() {
            return Err(Error::data(format!("task `{task_id}` has duplicate labels")));
        }

        let mut ids = HashSet::new();
        for inst in train.iter().chain(&dev).chain(&test) {
            if inst.label_id >= label_vocab.len() {
                return Err(Error::data(format!(
                    "instance `{}` has label id {} outside vocabulary of size {}",
                    inst.id,
                    inst.label_id,
                    label_vocab.len()
                )));
            }
            if inst.task_id != task_id {
                return Err(Error::data(format!(
                    "instance `{}` belongs to task `{}`, not `{task_id}`",
                    inst.id, inst.task_id
                )));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::data(format!("duplicate instance id `{}`", inst.id)));
            }
        }

        let mut seen = vec![false; label_vocab.len()];
        for inst in &train {
            seen[inst.label_id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::data(format!(
                "label `{}` of task `{task_id}` never appears in train",
                label_vocab[missing]
            )));
        }

        Ok(TaskDataset {
            task_id,
            label_vocab,
            train,
            dev,
            test,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn label_vocab(&self) -> &[String] {
        &self.label_vocab
    }

    pub fn num_classes(&self) -> usize {
        self.label_vocab.len()
    }

    pub fn train(&self) -> &[Instance] {
        &self.train
    }

    pub fn dev(&self) -> &[Instance] {
        &self.dev
    }

    pub fn test(&self) -> &[Instance] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Same instances under a different task id.
    pub fn renamed(&self, task_id: impl Into<String>) -> TaskDataset {
        let task_id = task_id.into();
        let retag = |v: &[Instance]| {
            v.iter()
                .map(|i| Instance {
                    task_id: task_id.clone(),
                    ..i.clone()
                })
                .collect::<Vec<_>>()
        };
        TaskDataset {
            label_vocab: self.label_vocab.clone(),
            train: retag(&self.train),
            dev: retag(&self.dev),
            test: retag(&self.test),
            task_id,
        }
    }

    /// Empirical label distribution of the train split.
    pub fn train_label_marginal(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_classes()];
        for inst in &self.train {
            counts[inst.label_id] += 1.0;
        }
        let n = self.train.len() as f64;
        counts.iter().map(|c| c / n).collect()
    }

    /// Writes the dataset in the JSONL ingestion format (default field names).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for split in [Split::Train, Split::Dev, Split::Test] {
            for inst in self.split(split) {
                let record = serde_json::json!({
                    "id": inst.id,
                    "text": inst.text,
                    "label": self.label_vocab[inst.label_id],
                    "split": split.as_str(),
                });
                writeln!(out, "{record}")?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSONL serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Field names used when reading a JSONL dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct JsonlSchema {
    pub text: String,
    pub label: String,
    pub split: String,
    pub id: String,
}

impl Default for JsonlSchema {
    fn default() -> Self {
        JsonlSchema {
            text: "text".into(),
            label: "label".into(),
            split: "split".into(),
            id: "id".into(),
        }
    }
}

/// Loads a dataset; the task id is the file stem.
pub fn load_jsonl(path: impl AsRef<Path>, schema: &JsonlSchema) -> Result<TaskDataset> {
    let path = path.as_ref();
    let task_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::data(format!("cannot derive a task id from {}", path.display())))?
        .to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), &task_id, schema)
}

pub fn parse_jsonl<R: BufRead>(reader: R, task_id: &str, schema: &JsonlSchema) -> Result<TaskDataset> {
    struct Raw {
        id: String,
        text: String,
        label: String,
        split: Split,
    }

    let mut raws = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("record is not a JSON object".into()))?;
        let field = |name: &str| -> Result<String> {
            match obj.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(parse_err(format!("field `{name}` must be a string"))),
                None => Err(parse_err(format!("missing field `{name}`"))),
            }
        };
        let text = field(&schema.text)?;
        let label = field(&schema.label)?;
        let split_name = field(&schema.split)?;
        let split = Split::parse(&split_name)
            .ok_or_else(|| parse_err(format!("unknown split value `{split_name}`")))?;
        let id = match obj.get(&schema.id) {
            None | Some(serde_json::Value::Null) => format!("line-{line_no}"),
            Some(_) => field(&schema.id)?,
        };
        raws.push(Raw {
            id,
            text,
            label,
            split,
        });
    }

    if raws.is_empty() {
        return Err(Error::data("empty dataset"));
    }

    let train_labels: BTreeSet<&str> = raws
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.label.as_str())
        .collect();
    if let Some(stray) = raws.iter().find(|r| !train_labels.contains(r.label.as_str())) {
        return Err(Error::data(format!(
            "label `{}` (instance `{}`, {} split) does not appear in train",
            stray.label, stray.id, stray.split
        )));
    }
    let label_vocab: Vec<String> = train_labels.iter().map(|s| s.to_string()).collect();
    let index: BTreeMap<&str, usize> = label_vocab
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for raw in &raws {
        let inst = Instance {
            id: raw.id.clone(),
            text: raw.text.clone(),
            label_id: index[raw.label.as_str()],
            task_id: task_id.to_string(),
        };
        match raw.split {
            Split::Train => train.push(inst),
            Split::Dev => dev.push(inst),
            Split::Test => test.push(inst),
        }
    }
    TaskDataset::new(task_id, label_vocab, train, dev, test)
}

/// Deterministic shuffled partition. Dev and test sizes are floored and the
/// remainder goes to train.
pub fn split(
    instances: Vec<Instance>,
    label_vocab: Vec<String>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<TaskDataset> {
    let (r_train, r_dev, r_test) = ratios;
    if !(r_train > 0.0 && r_dev > 0.0 && r_test > 0.0) {
        return Err(Error::config("split ratios must be positive"));
    }
    if (r_train + r_dev + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::config("ratios must sum to 1"));
    }
    if instances.len() < 3 {
        return Err(Error::data(format!(
            "need at least 3 instances to split, got {}",
            instances.len()
        )));
    }
    let task_id = instances[0].task_id.clone();
    let n = instances.len();
    // The epsilon keeps products like 10 * 0.7 from flooring one short.
    let n_dev = (n as f64 * r_dev + 1e-9).floor() as usize;
    let n_test = (n as f64 * r_test + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<Instance>> = instances.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<Instance> {
        order[range]
            .iter()
            .map(|&i| slots[i].take().expect("each index taken once"))
            .collect()
    };
    let dev = take(0..n_dev);
    let test = take(n_dev..n_dev + n_test);
    let train = take(n_dev + n_test..n);
    TaskDataset::new(task_id, label_vocab, train, dev, test)
}
