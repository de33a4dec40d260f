//! Hashed n-gram featurization.
//!
//! Text is lowercased and split on whitespace. Every configured word and
//! character n-gram is hashed (FNV-1a over the little-endian seed followed by
//! the n-gram key) into one of `dim` buckets; colliding n-grams add up.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    L2,
    /// Divide by the number of n-grams emitted (term frequency).
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub word_ngrams: Vec<usize>,
    pub char_ngrams: Vec<usize>,
    pub normalization: Normalization,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            dim: 4096,
            word_ngrams: vec![1, 2],
            char_ngrams: Vec::new(),
            normalization: Normalization::L2,
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if self.word_ngrams.iter().chain(&self.char_ngrams).any(|&n| n == 0) {
            return Err(Error::config("n-gram orders must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            values: vec![0.0; dim],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("feature vector has non-finite entries"));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
    }
}

fn bucket(seed: u64, key: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(key.as_bytes());
    (h.finish() % dim as u64) as usize
}

pub fn featurize(text: &str, cfg: &FeaturizerConfig) -> FeatureVector {
    let mut values = vec![0.0; cfg.dim];
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let mut emitted = 0usize;

    for &n in &cfg.word_ngrams {
        for gram in words.windows(n) {
            let key = format!("w{n}:{}", gram.join(" "));
            values[bucket(cfg.hash_seed, &key, cfg.dim)] += 1.0;
            emitted += 1;
        }
    }
    if !cfg.char_ngrams.is_empty() {
        let chars: Vec<char> = words.join(" ").chars().collect();
        for &n in &cfg.char_ngrams {
            for gram in chars.windows(n) {
                let key = format!("c{n}:{}", gram.iter().collect::<String>());
                values[bucket(cfg.hash_seed, &key, cfg.dim)] += 1.0;
                emitted += 1;
            }
        }
    }

    if emitted > 0 {
        let scale = match cfg.normalization {
            Normalization::None => 1.0,
            Normalization::Count => 1.0 / emitted as f64,
            Normalization::L2 => 1.0 / values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        if scale != 1.0 {
            values.iter_mut().for_each(|v| *v *= scale);
        }
    }
    FeatureVector { values }
}

/// The representation of the empty input: the zero vector.
pub fn null_featurize(cfg: &FeaturizerConfig) -> FeatureVector {
    FeatureVector::zeros(cfg.dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unigrams(dim: usize, normalization: Normalization, seed: u64) -> FeaturizerConfig {
        FeaturizerConfig {
            dim,
            word_ngrams: vec![1],
            char_ngrams: vec![],
            normalization,
            hash_seed: seed,
        }
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let cfg = FeaturizerConfig::default();
        let v = featurize("", &cfg);
        assert_eq!(v.dim(), 4096);
        assert_eq!(v.norm(), 0.0);
        assert_eq!(featurize("   \t ", &cfg), v);
        assert_eq!(null_featurize(&cfg), v);
    }

    // Bucket indices below were computed with an independent FNV-1a
    // implementation over (seed as u64 LE) ++ "w1:<token>".
    #[test]
    fn two_words_hit_two_known_buckets() {
        let v = featurize("a b", &unigrams(4096, Normalization::None, 0));
        let nz: Vec<_> = v.nonzeros().collect();
        assert_eq!(nz, vec![(1572, 1.0), (2877, 1.0)]);

        let v = featurize("A  B", &unigrams(4096, Normalization::None, 17));
        let nz: Vec<_> = v.nonzeros().collect();
        assert_eq!(nz, vec![(869, 1.0), (3660, 1.0)]);
    }

    #[test]
    fn bigram_bucket_and_collisions_add() {
        let cfg = FeaturizerConfig {
            word_ngrams: vec![2],
            ..unigrams(4096, Normalization::None, 0)
        };
        assert_eq!(featurize("a b", &cfg).nonzeros().collect::<Vec<_>>(), vec![(1083, 1.0)]);

        // "w1:a" and "w1:b" share bucket 0 when dim = 3.
        let v = featurize("a b", &unigrams(3, Normalization::None, 0));
        assert_eq!(v.values(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn normalizations() {
        let text = "x y y z";
        let l2 = featurize(text, &unigrams(4096, Normalization::L2, 3));
        assert!((l2.norm() - 1.0).abs() < 1e-12);
        let count = featurize(text, &unigrams(4096, Normalization::Count, 3));
        assert!((count.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn char_ngrams_are_emitted() {
        let cfg = FeaturizerConfig {
            word_ngrams: vec![],
            char_ngrams: vec![3],
            ..unigrams(4096, Normalization::None, 0)
        };
        let v = featurize("abcd", &cfg);
        assert_eq!(v.values().iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn invalid_configs() {
        assert!(unigrams(0, Normalization::L2, 0).validate().is_err());
        let cfg = FeaturizerConfig {
            word_ngrams: vec![0],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(FeaturizerConfig::default().validate().is_ok());
    }
}
