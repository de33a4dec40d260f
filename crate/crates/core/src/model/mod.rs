//! Shared-encoder classifier with one softmax head per task.
//!
//! The encoder is a single `tanh` layer (`dim -> hidden`) shared by every
//! attached task; each task owns a linear head (`hidden -> classes`). Joint
//! batches mark "not this task's instance" with [`IGNORE_LABEL`].

mod io;
mod optim;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub use io::{FORMAT_TAG, FORMAT_VERSION};
pub use optim::Optimizer;
pub use train::{train, train_encoded, EncodedTask, InputMode, TrainConfig, TrainedModel};

pub const IGNORE_LABEL: i64 = -100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub task_id: String,
    pub classes: usize,
    /// Row-major `hidden x classes`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub hidden: usize,
    /// Row-major `dim x hidden`: row `k` holds the weights fed by input feature `k`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub heads: Vec<Head>,
}

impl ModelParams {
    pub fn head_index(&self, task_id: &str) -> Result<usize> {
        self.heads
            .iter()
            .position(|h| h.task_id == task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    pub fn head(&self, task_id: &str) -> Result<&Head> {
        Ok(&self.heads[self.head_index(task_id)?])
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.heads.iter().map(|h| h.task_id.as_str())
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            dim: self.dim,
            hidden: self.hidden,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    task_id: h.task_id.clone(),
                    classes: h.classes,
                    weight: vec![0.0; h.weight.len()],
                    bias: vec![0.0; h.bias.len()],
                })
                .collect(),
        }
    }

    /// Parameter tensors in canonical order: `w1`, `b1`, then each head's weight and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.w1, &self.b1];
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.w1, &mut self.b1];
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn get_flat(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("flat parameter index out of range")
    }

    fn set_flat(&mut self, mut idx: usize, value: f64) {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = value;
                return;
            }
            idx -= t.len();
        }
        panic!("flat parameter index out of range")
    }
}

/// Uniform `[-init_scale, init_scale]` weights, zero biases.
pub fn init_params(
    dim: usize,
    hidden: usize,
    tasks: &[(String, usize)],
    seed: u64,
    init_scale: f64,
) -> Result<ModelParams> {
    if dim == 0 || hidden == 0 {
        return Err(Error::config("input and hidden dimensions must be positive"));
    }
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::config("init scale must be finite and non-negative"));
    }
    for (i, (id, classes)) in tasks.iter().enumerate() {
        if tasks[..i].iter().any(|(other, _)| other == id) {
            return Err(Error::config(format!("duplicate task id `{id}`")));
        }
        if *classes < 2 {
            return Err(Error::config(format!("task `{id}` needs at least 2 classes")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        if init_scale == 0.0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.random_range(-init_scale..=init_scale)).collect()
        }
    };
    let w1 = draw(dim * hidden);
    let heads = tasks
        .iter()
        .map(|(id, classes)| Head {
            task_id: id.clone(),
            classes: *classes,
            weight: draw(hidden * classes),
            bias: vec![0.0; *classes],
        })
        .collect();
    Ok(ModelParams {
        dim,
        hidden,
        w1,
        b1: vec![0.0; hidden],
        heads,
    })
}

/// Nonzero entries of one input row.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct SparseRow {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn from_features(x: &FeatureVector) -> Self {
        let (idx, val) = x.nonzeros().map(|(i, v)| (i as u32, v)).unzip();
        SparseRow { idx, val }
    }
}

pub(crate) fn encode(params: &ModelParams, row: &SparseRow) -> Vec<f64> {
    let h = params.hidden;
    let mut pre = params.b1.clone();
    for (&k, &v) in row.idx.iter().zip(&row.val) {
        let w = &params.w1[k as usize * h..(k as usize + 1) * h];
        for (p, wj) in pre.iter_mut().zip(w) {
            *p += v * wj;
        }
    }
    pre.iter_mut().for_each(|p| *p = p.tanh());
    pre
}

/// Log-softmax of the head's logits over an encoded input.
pub(crate) fn head_log_probs(head: &Head, hidden: &[f64]) -> Vec<f64> {
    let c = head.classes;
    let mut logits = head.bias.clone();
    for (j, &hj) in hidden.iter().enumerate() {
        let w = &head.weight[j * c..(j + 1) * c];
        for (l, wjc) in logits.iter_mut().zip(w) {
            *l += hj * wjc;
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter_mut().for_each(|l| *l -= lse);
    logits
}

pub(crate) fn proba_sparse(params: &ModelParams, row: &SparseRow, head: usize) -> Vec<f64> {
    let hidden = encode(params, row);
    let logits_lp = head_log_probs(&params.heads[head], &hidden);
    let max = logits_lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits_lp.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `softmax(W_t * tanh(W1 * x + b1) + b_t)`. No clamping happens here.
pub fn predict_proba(params: &ModelParams, x: &FeatureVector, task_id: &str) -> Result<Vec<f64>> {
    let head = params.head_index(task_id)?;
    check_dim(params, x)?;
    Ok(proba_sparse(params, &SparseRow::from_features(x), head))
}

fn check_dim(params: &ModelParams, x: &FeatureVector) -> Result<()> {
    if x.dim() != params.dim {
        return Err(Error::config(format!(
            "feature dimension {} does not match model input dimension {}",
            x.dim(),
            params.dim
        )));
    }
    Ok(())
}

/// Gradient accumulator that remembers which `w1` rows were written.
pub(crate) struct GradBuffer {
    pub grads: ModelParams,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
}

impl GradBuffer {
    pub fn new(params: &ModelParams) -> Self {
        GradBuffer {
            grads: params.zeros_like(),
            touched: vec![false; params.dim],
            touched_rows: Vec::new(),
        }
    }

    pub fn touched_rows(&self) -> &[usize] {
        &self.touched_rows
    }

    pub fn clear(&mut self) {
        let h = self.grads.hidden;
        for &k in &self.touched_rows {
            self.grads.w1[k * h..(k + 1) * h].iter_mut().for_each(|g| *g = 0.0);
            self.touched[k] = false;
        }
        self.touched_rows.clear();
        self.grads.b1.iter_mut().for_each(|g| *g = 0.0);
        for head in &mut self.grads.heads {
            head.weight.iter_mut().for_each(|g| *g = 0.0);
            head.bias.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn touch(&mut self, row: usize) {
        if !self.touched[row] {
            self.touched[row] = true;
            self.touched_rows.push(row);
        }
    }
}

/// One labeled (row, head) pair of a batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Target {
    pub row: usize,
    pub head: usize,
    pub label: usize,
}

/// Mean clamped cross-entropy over `targets`, with exact gradients added into `buf`.
/// `targets` must be grouped by row.
pub(crate) fn accumulate(
    params: &ModelParams,
    rows: &[&SparseRow],
    targets: &[Target],
    prob_floor: f64,
    buf: &mut GradBuffer,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::config("empty effective batch"));
    }
    let n = targets.len() as f64;
    let log_floor = prob_floor.ln();
    let h = params.hidden;
    let mut loss = 0.0;
    let mut dhidden = vec![0.0; h];

    let mut start = 0;
    while start < targets.len() {
        let row_idx = targets[start].row;
        let end = start
            + targets[start..]
                .iter()
                .take_while(|t| t.row == row_idx)
                .count();
        let row = rows[row_idx];
        let hidden = encode(params, row);
        dhidden.iter_mut().for_each(|d| *d = 0.0);
        let mut any_grad = false;

        for t in &targets[start..end] {
            let head = &params.heads[t.head];
            let lp = head_log_probs(head, &hidden);
            if lp[t.label] <= log_floor {
                // Clamped region: constant loss, zero derivative.
                loss -= log_floor;
                continue;
            }
            loss -= lp[t.label];
            any_grad = true;
            let c = head.classes;
            let mut dlogits: Vec<f64> = lp.iter().map(|l| l.exp() / n).collect();
            dlogits[t.label] -= 1.0 / n;

            let g = &mut buf.grads.heads[t.head];
            for (gb, d) in g.bias.iter_mut().zip(&dlogits) {
                *gb += d;
            }
            for j in 0..h {
                let w = &head.weight[j * c..(j + 1) * c];
                let gw = &mut g.weight[j * c..(j + 1) * c];
                let mut acc = 0.0;
                for cc in 0..c {
                    gw[cc] += hidden[j] * dlogits[cc];
                    acc += w[cc] * dlogits[cc];
                }
                dhidden[j] += acc;
            }
        }

        if any_grad {
            let dpre: Vec<f64> = dhidden
                .iter()
                .zip(&hidden)
                .map(|(d, a)| d * (1.0 - a * a))
                .collect();
            for (gb, d) in buf.grads.b1.iter_mut().zip(&dpre) {
                *gb += d;
            }
            for (&k, &v) in row.idx.iter().zip(&row.val) {
                let k = k as usize;
                buf.touch(k);
                let gw = &mut buf.grads.w1[k * h..(k + 1) * h];
                for (g, d) in gw.iter_mut().zip(&dpre) {
                    *g += v * d;
                }
            }
        }
        start = end;
    }
    Ok(loss / n)
}

/// Inputs plus, per task, labels aligned with the inputs (`IGNORE_LABEL` = not this task).
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a FeatureVector>,
    pub labels: BTreeMap<String, Vec<i64>>,
}

impl<'a> Batch<'a> {
    pub fn single_task(task_id: &str, inputs: Vec<&'a FeatureVector>, labels: Vec<i64>) -> Self {
        let mut map = BTreeMap::new();
        map.insert(task_id.to_string(), labels);
        Batch { inputs, labels: map }
    }

    fn resolve(&self, params: &ModelParams) -> Result<(Vec<SparseRow>, Vec<Target>)> {
        if self.inputs.is_empty() {
            return Err(Error::config("empty batch"));
        }
        for x in &self.inputs {
            check_dim(params, x)?;
        }
        let mut targets = Vec::new();
        for (task, labels) in &self.labels {
            let head = params.head_index(task)?;
            if labels.len() != self.inputs.len() {
                return Err(Error::config(format!(
                    "task `{task}` has {} labels for {} inputs",
                    labels.len(),
                    self.inputs.len()
                )));
            }
            let classes = params.heads[head].classes as i64;
            for (row, &label) in labels.iter().enumerate() {
                if label == IGNORE_LABEL {
                    continue;
                }
                if !(0..classes).contains(&label) {
                    return Err(Error::config(format!(
                        "label {label} out of range for task `{task}` with {classes} classes"
                    )));
                }
                targets.push(Target {
                    row,
                    head,
                    label: label as usize,
                });
            }
        }
        targets.sort_by_key(|t| (t.row, t.head));
        let rows = self.inputs.iter().map(|x| SparseRow::from_features(x)).collect();
        Ok((rows, targets))
    }
}

/// Mean masked cross-entropy and its exact gradient (same shape as `params`).
pub fn loss_and_grad(params: &ModelParams, batch: &Batch<'_>, prob_floor: f64) -> Result<(f64, ModelParams)> {
    let (rows, targets) = batch.resolve(params)?;
    let refs: Vec<&SparseRow> = rows.iter().collect();
    let mut buf = GradBuffer::new(params);
    let loss = accumulate(params, &refs, &targets, prob_floor, &mut buf)?;
    Ok((loss, buf.grads))
}

fn batch_loss(params: &ModelParams, rows: &[&SparseRow], targets: &[Target], prob_floor: f64) -> f64 {
    let n = targets.len() as f64;
    let log_floor = prob_floor.ln();
    targets
        .iter()
        .map(|t| {
            let hidden = encode(params, rows[t.row]);
            -head_log_probs(&params.heads[t.head], &hidden)[t.label].max(log_floor)
        })
        .sum::<f64>()
        / n
}

const GRAD_CHECK_FULL_LIMIT: usize = 4096;
const GRAD_CHECK_SAMPLE: usize = 512;

/// Largest relative error between analytic and central-difference gradients,
/// `|a - n| / max(|a|, |n|, 1e-8)`. Models with more than 4096 parameters are
/// checked on a seeded sample of 512 coordinates.
pub fn grad_check(params: &ModelParams, batch: &Batch<'_>, step: f64, prob_floor: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let (_, analytic) = loss_and_grad(params, batch, prob_floor)?;
    let (rows, targets) = batch.resolve(params)?;
    let refs: Vec<&SparseRow> = rows.iter().collect();

    let total = params.num_params();
    let coords: Vec<usize> = if total <= GRAD_CHECK_FULL_LIMIT {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        rand::seq::index::sample(&mut rng, total, GRAD_CHECK_SAMPLE).into_vec()
    };

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for idx in coords {
        let orig = probe.get_flat(idx);
        probe.set_flat(idx, orig + step);
        let up = batch_loss(&probe, &refs, &targets, prob_floor);
        probe.set_flat(idx, orig - step);
        let down = batch_loss(&probe, &refs, &targets, prob_floor);
        probe.set_flat(idx, orig);
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.get_flat(idx);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
