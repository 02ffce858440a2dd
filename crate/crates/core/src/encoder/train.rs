use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::features::SparseVector;
use super::loss::triplet_loss_grad;
use super::model::{EncoderParams, Gradients};
use super::triplets::TripletPool;
use super::{EncoderError, Featurizer};
use crate::collect::ResponseCorpus;
use crate::seed;

fn d_margin() -> f64 {
    5.0
}
fn d_epochs() -> usize {
    300
}
fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    32
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_hidden() -> usize {
    256
}
fn d_output() -> usize {
    64
}
fn d_features() -> usize {
    super::DEFAULT_FEATURE_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Triplet margin δ.
    #[serde(default = "d_margin")]
    pub margin: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_features")]
    pub feature_dim: usize,
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_output")]
    pub output_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: d_margin(),
            epochs: d_epochs(),
            learning_rate: d_lr(),
            batch_size: d_batch(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            seed: 0,
            feature_dim: d_features(),
            hidden_dim: d_hidden(),
            output_dim: d_output(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return bad("margin must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("Adam hyperparameters out of range");
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return bad("layer sizes must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean triplet loss of the first epoch's triplets at initialization.
    pub initial_loss: f64,
    /// Mean loss per epoch, accumulated over that epoch's batches.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Input features of one triplet.
pub(crate) struct TripletFeatures<'a> {
    pub anchor: &'a SparseVector,
    pub positive: &'a SparseVector,
    pub negative: &'a SparseVector,
}

/// Mean triplet loss of a batch and its gradient, accumulated in batch order.
pub fn batch_gradient(
    params: &EncoderParams,
    batch: &[(SparseVector, SparseVector, SparseVector)],
    margin: f64,
) -> Result<(f64, Gradients), EncoderError> {
    let feats: Vec<TripletFeatures<'_>> = batch
        .iter()
        .map(|(a, p, n)| TripletFeatures {
            anchor: a,
            positive: p,
            negative: n,
        })
        .collect();
    let mut grads = Gradients::zeros_like(params);
    let loss = accumulate(params, &feats, margin, &mut grads)?;
    Ok((loss, grads))
}

/// Sum of losses into `grads`, scaled to the batch mean. Returns the mean loss.
pub(crate) fn accumulate(
    params: &EncoderParams,
    batch: &[TripletFeatures<'_>],
    margin: f64,
    grads: &mut Gradients,
) -> Result<f64, EncoderError> {
    let mut total = 0.0;
    for t in batch {
        let act_a = params.forward(t.anchor)?;
        let act_p = params.forward(t.positive)?;
        let act_n = params.forward(t.negative)?;
        let (loss, [ga, gp, gn]) = triplet_loss_grad(&act_a.output, &act_p.output, &act_n.output, margin)?;
        total += loss;
        if loss > 0.0 {
            params.backward(t.anchor, &act_a, &ga, grads);
            params.backward(t.positive, &act_p, &gp, grads);
            params.backward(t.negative, &act_n, &gn, grads);
        }
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok(total / n)
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], c: (f64, f64, f64, f64, f64, f64)) {
    let (b1, b2, eps, lr, bc1, bc2) = c;
    for i in 0..p.len() {
        let gi = g[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

impl Adam {
    fn new(params: &EncoderParams, cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            lr: cfg.learning_rate,
            t: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    fn step(&mut self, params: &mut EncoderParams, g: &Gradients) {
        self.t += 1;
        let c = (
            self.beta1,
            self.beta2,
            self.eps,
            self.lr,
            1.0 - self.beta1.powi(self.t),
            1.0 - self.beta2.powi(self.t),
        );
        // Element-wise, so chunked parallelism is order-independent.
        const CHUNK: usize = 1 << 14;
        params
            .w1
            .par_chunks_mut(CHUNK)
            .zip(g.w1.par_chunks(CHUNK))
            .zip(self.m.w1.par_chunks_mut(CHUNK))
            .zip(self.v.w1.par_chunks_mut(CHUNK))
            .for_each(|(((p, g), m), v)| adam_update(p, g, m, v, c));
        adam_update(&mut params.b1, &g.b1, &mut self.m.b1, &mut self.v.b1, c);
        adam_update(&mut params.w2, &g.w2, &mut self.m.w2, &mut self.v.w2, c);
        adam_update(&mut params.b2, &g.b2, &mut self.m.b2, &mut self.v.b2, c);
    }
}

fn zero(g: &mut Gradients) {
    for buf in [&mut g.w1, &mut g.b1, &mut g.w2, &mut g.b2] {
        buf.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Train the encoder with Adam on mean batch triplet loss.
///
/// Each epoch draws one fresh triplet per query, shuffles them, and takes
/// `ceil(I / batch_size)` steps. Gradients are reduced in batch order, so a
/// given seed and data reproduce the same parameters bit for bit.
pub fn train(
    source: &ResponseCorpus,
    benign: &[ResponseCorpus],
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainingLog), EncoderError> {
    cfg.validate()?;
    let pool = TripletPool::new(source, benign)?;
    let featurizer = Featurizer::new(cfg.feature_dim);

    // Features of every usable text, computed once.
    let j_src = source.samples_per_query() as usize;
    let src_feats: Vec<Vec<Option<SparseVector>>> = pool
        .queries
        .iter()
        .map(|q| {
            (1..=j_src as u32)
                .map(|j| source.text(q, j).map(|t| featurizer.featurize(t)).transpose())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let ben_feats: Vec<Vec<Vec<Option<SparseVector>>>> = benign
        .iter()
        .map(|c| {
            pool.queries
                .iter()
                .map(|q| {
                    (1..=c.samples_per_query())
                        .map(|j| c.text(q, j).map(|t| featurizer.featurize(t)).transpose())
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let features_of = |t: &super::triplets::TripletIndex| TripletFeatures {
        anchor: src_feats[t.query][t.anchor as usize - 1].as_ref().expect("valid cell"),
        positive: src_feats[t.query][t.positive as usize - 1].as_ref().expect("valid cell"),
        negative: ben_feats[t.benign][t.query][t.negative as usize - 1].as_ref().expect("valid cell"),
    };

    let mut params = EncoderParams::init(featurizer, cfg.hidden_dim, cfg.output_dim, cfg.seed);
    let mut adam = Adam::new(&params, cfg);
    let mut grads = Gradients::zeros_like(&params);
    let mut log = TrainingLog {
        initial_loss: f64::NAN,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };

    for epoch in 0..cfg.epochs {
        let mut triplets = pool.sample(seed!(cfg.seed, "epoch", epoch));
        if epoch == 0 {
            let feats: Vec<_> = triplets.iter().map(&features_of).collect();
            log.initial_loss = accumulate(&params, &feats, cfg.margin, &mut grads)?;
            zero(&mut grads);
        }
        triplets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed!(cfg.seed, "order", epoch)));
        let mut epoch_total = 0.0;
        for batch in triplets.chunks(cfg.batch_size) {
            let feats: Vec<_> = batch.iter().map(&features_of).collect();
            zero(&mut grads);
            let loss = accumulate(&params, &feats, cfg.margin, &mut grads)?;
            if !loss.is_finite() {
                return Err(EncoderError::NonFinite {
                    epoch,
                    detail: format!("batch loss {loss} after {} steps", log.steps),
                });
            }
            epoch_total += loss * batch.len() as f64;
            adam.step(&mut params, &grads);
            log.steps += 1;
        }
        let mean = epoch_total / triplets.len() as f64;
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            debug!(epoch, loss = mean, "epoch done");
        }
        log.epoch_losses.push(mean);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collect::CorpusRole;
    use crate::corpus::{build_query_set, synthetic_questions, DEFAULT_COT_PROMPT};
    use crate::stylesim::{default_profiles, SimEndpoint};

    fn corpora() -> (ResponseCorpus, Vec<ResponseCorpus>) {
        let qs = build_query_set(&synthetic_questions(20, 4), DEFAULT_COT_PROMPT, 20, 4).unwrap();
        let p = default_profiles();
        let c = |i: usize, role| SimEndpoint::new(p[i].clone(), 1.5).unwrap().simulate_corpus(&qs, role, 4);
        (c(0, CorpusRole::Source), vec![c(1, CorpusRole::Benign), c(2, CorpusRole::Benign)])
    }

    fn small() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            feature_dim: 512,
            hidden_dim: 16,
            output_dim: 8,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let (s, b) = corpora();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..small()
        };
        let (params, log) = train(&s, &b, &cfg).unwrap();
        assert_eq!(params, EncoderParams::init(Featurizer::new(512), 16, 8, 3));
        assert_eq!(log.epoch_losses.len(), 1);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let (s, b) = corpora();
        let (p1, l1) = train(&s, &b, &small()).unwrap();
        let (p2, l2) = train(&s, &b, &small()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
        assert_eq!(l1.steps, 5);
    }

    #[test]
    fn config_validation() {
        let (s, b) = corpora();
        for cfg in [
            TrainConfig { margin: 0.0, ..small() },
            TrainConfig { epochs: 0, ..small() },
            TrainConfig { batch_size: 0, ..small() },
        ] {
            assert!(matches!(train(&s, &b, &cfg), Err(EncoderError::InvalidConfig(_))));
        }
    }

    #[test]
    fn huge_learning_rate_is_caught_or_finite() {
        let (s, b) = corpora();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            ..small()
        };
        match train(&s, &b, &cfg) {
            Err(EncoderError::NonFinite { .. }) => {}
            Ok((p, log)) => {
                assert!(log.epoch_losses.iter().all(|l| l.is_finite()));
                p.validate().unwrap();
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
