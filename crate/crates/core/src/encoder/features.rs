//! Signed feature hashing of word unigrams and bigrams.

use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::hashing::hash_bytes;

pub const DEFAULT_FEATURE_DIM: usize = 4096;
const DEFAULT_BUCKET_SEED: u64 = 0x6275_636b_6574;
const DEFAULT_SIGN_SEED: u64 = 0x7369_676e;

/// Sparse vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Hashing featurizer configuration; persisted alongside trained weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    pub bucket_seed: u64,
    pub sign_seed: u64,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self::new(DEFAULT_FEATURE_DIM)
    }
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            bucket_seed: DEFAULT_BUCKET_SEED,
            sign_seed: DEFAULT_SIGN_SEED,
        }
    }

    fn bucket_and_sign(&self, term: &str) -> (u32, f64) {
        let bucket = (hash_bytes(self.bucket_seed, term.as_bytes()) % self.dim as u64) as u32;
        let sign = if hash_bytes(self.sign_seed, term.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    /// Hashed unigram + bigram counts, scaled by `1/sqrt(tokens)` and L2-normalized.
    pub fn featurize(&self, text: &str) -> Result<SparseVector, EncoderError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EncoderError::EmptyText);
        }
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(tokens.len() * 2);
        for tok in &tokens {
            entries.push(self.bucket_and_sign(tok));
        }
        let mut bigram = String::new();
        for pair in tokens.windows(2) {
            bigram.clear();
            bigram.push_str(&pair[0]);
            bigram.push(' ');
            bigram.push_str(&pair[1]);
            entries.push(self.bucket_and_sign(&bigram));
        }
        entries.sort_by_key(|e| e.0);

        let scale = 1.0 / (tokens.len() as f64).sqrt();
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (idx, sign) in entries {
            if indices.last() == Some(&idx) {
                *values.last_mut().expect("paired with index") += sign * scale;
            } else {
                indices.push(idx);
                values.push(sign * scale);
            }
        }
        // Signed collisions can cancel exactly.
        let (indices, mut values): (Vec<u32>, Vec<f64>) =
            indices.into_iter().zip(values).filter(|(_, v)| *v != 0.0).unzip();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EncoderError::EmptyText);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(SparseVector {
            dim: self.dim,
            indices,
            values,
        })
    }
}
