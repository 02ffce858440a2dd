use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{Featurizer, SparseVector};
use super::EncoderError;

/// Embedding produced by the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        super::euclidean(&self.0, &other.0)
    }
}

/// Encoder weights: `z = W2 · tanh(W1 · x + b1) + b2`.
///
/// `w1` is stored feature-major (`F × H`, entry `[f * H + h]` is `W1[h, f]`)
/// so a sparse input touches contiguous columns. `w2` is row-major `E × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub featurizer: Featurizer,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub version: String,
    pub rng_seed: u64,
}

pub const PARAMS_VERSION: &str = "cotsrf-encoder/1";

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    /// `W1[hidden, feature]`
    W1 { hidden: usize, feature: usize },
    B1(usize),
    /// `W2[out, hidden]`
    W2 { out: usize, hidden: usize },
    B2(usize),
}

/// Gradient buffers with the same layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        }
    }

    pub fn get(&self, hidden_dim: usize, at: ParamRef) -> f64 {
        match at {
            ParamRef::W1 { hidden, feature } => self.w1[feature * hidden_dim + hidden],
            ParamRef::B1(h) => self.b1[h],
            ParamRef::W2 { out, hidden } => self.w2[out * hidden_dim + hidden],
            ParamRef::B2(o) => self.b2[o],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            buf.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Hidden and output activations for one input.
#[derive(Debug, Clone)]
pub struct Activations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(featurizer: Featurizer, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        let input_dim = featurizer.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = xavier(&mut rng, input_dim, hidden_dim, input_dim * hidden_dim);
        let w2 = xavier(&mut rng, hidden_dim, output_dim, hidden_dim * output_dim);
        Self {
            featurizer,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
            version: PARAMS_VERSION.to_string(),
            rng_seed: seed,
        }
    }

    pub fn zeros(featurizer: Featurizer, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            featurizer,
            hidden_dim,
            output_dim,
            w1: vec![0.0; featurizer.dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * output_dim],
            b2: vec![0.0; output_dim],
            version: PARAMS_VERSION.to_string(),
            rng_seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.featurizer.dim
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Shape and finiteness check.
    pub fn validate(&self) -> Result<(), EncoderError> {
        let expect = [
            (self.w1.len(), self.input_dim() * self.hidden_dim),
            (self.b1.len(), self.hidden_dim),
            (self.w2.len(), self.hidden_dim * self.output_dim),
            (self.b2.len(), self.output_dim),
        ];
        for (got, expected) in expect {
            if got != expected {
                return Err(EncoderError::DimensionMismatch { expected, got });
            }
        }
        let finite = [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|buf| buf.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(EncoderError::Format("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn get(&self, at: ParamRef) -> f64 {
        match at {
            ParamRef::W1 { hidden, feature } => self.w1[feature * self.hidden_dim + hidden],
            ParamRef::B1(h) => self.b1[h],
            ParamRef::W2 { out, hidden } => self.w2[out * self.hidden_dim + hidden],
            ParamRef::B2(o) => self.b2[o],
        }
    }

    pub fn get_mut(&mut self, at: ParamRef) -> &mut f64 {
        match at {
            ParamRef::W1 { hidden, feature } => &mut self.w1[feature * self.hidden_dim + hidden],
            ParamRef::B1(h) => &mut self.b1[h],
            ParamRef::W2 { out, hidden } => &mut self.w2[out * self.hidden_dim + hidden],
            ParamRef::B2(o) => &mut self.b2[o],
        }
    }

    pub fn forward(&self, x: &SparseVector) -> Result<Activations, EncoderError> {
        if x.dim != self.input_dim() {
            return Err(EncoderError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.dim,
            });
        }
        let h_dim = self.hidden_dim;
        let mut hidden = self.b1.clone();
        for (f, v) in x.iter() {
            let col = &self.w1[f * h_dim..(f + 1) * h_dim];
            for (acc, w) in hidden.iter_mut().zip(col) {
                *acc += w * v;
            }
        }
        hidden.iter_mut().for_each(|u| *u = u.tanh());
        let output = self
            .b2
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.w2[o * h_dim..(o + 1) * h_dim];
                b + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        Ok(Activations { hidden, output })
    }

    /// Accumulate `dL/dθ` for one input given `dL/dz`.
    pub fn backward(&self, x: &SparseVector, act: &Activations, grad_out: &[f64], grads: &mut Gradients) {
        let h_dim = self.hidden_dim;
        let mut grad_hidden = vec![0.0; h_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.b2[o] += g;
            let row = &self.w2[o * h_dim..(o + 1) * h_dim];
            let grow = &mut grads.w2[o * h_dim..(o + 1) * h_dim];
            for h in 0..h_dim {
                grow[h] += g * act.hidden[h];
                grad_hidden[h] += g * row[h];
            }
        }
        // tanh' = 1 - tanh^2
        for (gh, a) in grad_hidden.iter_mut().zip(&act.hidden) {
            *gh *= 1.0 - a * a;
        }
        for (b, gh) in grads.b1.iter_mut().zip(&grad_hidden) {
            *b += gh;
        }
        for (f, v) in x.iter() {
            let col = &mut grads.w1[f * h_dim..(f + 1) * h_dim];
            for (c, gh) in col.iter_mut().zip(&grad_hidden) {
                *c += gh * v;
            }
        }
    }

    pub fn embed_features(&self, x: &SparseVector) -> Result<FeatureVector, EncoderError> {
        Ok(FeatureVector(self.forward(x)?.output))
    }

    /// `E_θ(text)`.
    pub fn embed(&self, text: &str) -> Result<FeatureVector, EncoderError> {
        let x = self.featurizer.featurize(text)?;
        self.embed_features(&x)
    }
}
