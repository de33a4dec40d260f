//! Synthetic classification tasks with known usable information.
//!
//! Each instance draws a latent class, emits the class's signature phrase
//! (fixed by `concept_seed`) followed by a few distractor words from a pool
//! shared by every task, and then observes a label that is flipped to a
//! uniformly chosen other class with probability `noise_rate`. For a model
//! family that recovers the latent class from the text, the mean PVI is
//! `H(Y) - H_noise`; see [`optimal_mean_pvi`].

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, Instance, TaskDataset};
use crate::error::{Error, Result};

pub const SIGNATURE_TOKENS: usize = 3;
pub const DISTRACTOR_POOL: usize = 8;
pub const DISTRACTORS_PER_INSTANCE: usize = 1;
pub const MIN_INSTANCES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskSpec {
    pub task_id: String,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub noise_rate: f64,
    pub n: usize,
    pub concept_seed: u64,
    pub sample_seed: u64,
    /// Latent class probabilities; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_balance: Option<Vec<f64>>,
    /// Draw observed labels from `class_balance` independently of the text.
    #[serde(default)]
    pub independent_labels: bool,
    #[serde(default = "default_ratios")]
    pub split_ratios: (f64, f64, f64),
}

fn default_classes() -> usize {
    2
}

fn default_ratios() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

impl SynthTaskSpec {
    /// Balanced task with default splits.
    pub fn new(task_id: impl Into<String>, num_classes: usize, noise_rate: f64, n: usize) -> Self {
        SynthTaskSpec {
            task_id: task_id.into(),
            num_classes,
            noise_rate,
            n,
            concept_seed: 0,
            sample_seed: 0,
            class_balance: None,
            independent_labels: false,
            split_ratios: default_ratios(),
        }
    }

    pub fn with_seeds(mut self, concept_seed: u64, sample_seed: u64) -> Self {
        self.concept_seed = concept_seed;
        self.sample_seed = sample_seed;
        self
    }

    pub fn balance(&self) -> Vec<f64> {
        self.class_balance
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.num_classes as f64; self.num_classes])
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::config("synthetic tasks need at least 2 classes"));
        }
        if !(0.0..0.5).contains(&self.noise_rate) || self.noise_rate >= (c - 1) as f64 / c as f64 {
            return Err(Error::config(format!(
                "noise rate {} must lie in [0, 0.5)",
                self.noise_rate
            )));
        }
        let balance = self.balance();
        if balance.len() != c || balance.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::config("class balance must be a probability vector over the classes"));
        }
        if (balance.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("class balance must sum to 1"));
        }
        if self.n < MIN_INSTANCES {
            return Err(Error::config(format!(
                "synthetic tasks need at least {MIN_INSTANCES} instances, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Signature phrase for every class of a concept.
pub fn concept_phrases(concept_seed: u64, num_classes: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(concept_seed ^ 0x636f_6e63_6570_7473);
    (0..num_classes)
        .map(|_| {
            (0..SIGNATURE_TOKENS)
                .map(|_| format!("s{:08x}", rng.next_u32()))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

pub fn generate_task(spec: &SynthTaskSpec) -> Result<TaskDataset> {
    spec.validate()?;
    let c = spec.num_classes;
    let phrases = concept_phrases(spec.concept_seed, c);
    let balance = spec.balance();
    let latent_dist = WeightedIndex::new(&balance).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sample_seed);

    let mut instances = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let latent = latent_dist.sample(&mut rng);
        let mut text = phrases[latent].clone();
        for _ in 0..DISTRACTORS_PER_INSTANCE {
            text.push_str(&format!(" d{:02}", rng.random_range(0..DISTRACTOR_POOL)));
        }
        let label = if spec.independent_labels {
            latent_dist.sample(&mut rng)
        } else if rng.random::<f64>() < spec.noise_rate {
            let other = rng.random_range(0..c - 1);
            if other >= latent {
                other + 1
            } else {
                other
            }
        } else {
            latent
        };
        instances.push(Instance {
            id: format!("{}-{i}", spec.task_id),
            text,
            label_id: label,
            task_id: spec.task_id.clone(),
        });
    }

    let vocab = (0..c).map(|k| format!("class{k}")).collect();
    data::split(
        instances,
        vocab,
        spec.split_ratios,
        spec.sample_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
    )
}

fn entropy_bits(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// Entropy in bits of the observed label given the latent class.
pub fn noise_entropy_bits(noise_rate: f64, num_classes: usize) -> f64 {
    let eta = noise_rate;
    let mut h = 0.0;
    if eta < 1.0 {
        h -= (1.0 - eta) * (1.0 - eta).log2();
    }
    if eta > 0.0 {
        h -= eta * (eta / (num_classes - 1) as f64).log2();
    }
    h
}

/// Observed-label marginal implied by the latent balance and the noise.
pub fn observed_label_marginal(spec: &SynthTaskSpec) -> Vec<f64> {
    let balance = spec.balance();
    if spec.independent_labels {
        return balance;
    }
    let eta = spec.noise_rate;
    let off = eta / (spec.num_classes - 1) as f64;
    balance
        .iter()
        .map(|&pk| (1.0 - eta) * pk + off * (1.0 - pk))
        .collect()
}

/// Mean PVI in bits under a model that predicts the true noisy conditional.
pub fn optimal_mean_pvi(spec: &SynthTaskSpec) -> f64 {
    if spec.independent_labels {
        return 0.0;
    }
    entropy_bits(&observed_label_marginal(spec)) - noise_entropy_bits(spec.noise_rate, spec.num_classes)
}
