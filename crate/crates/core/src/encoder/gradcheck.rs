use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::features::SparseVector;
use super::loss::triplet_loss;
use super::model::{EncoderParams, Gradients, ParamRef};
use super::train::batch_gradient;
use super::{EncoderError, Triplet};

/// Coordinates drawn from each of the four tensors.
const PER_TENSOR: usize = 50;
/// Losses at or below this are treated as sitting on the hinge.
const ACTIVE_FLOOR: f64 = 1e-6;
/// Denominator floor of the relative error. The output-bias gradient is
/// identically zero (the loss is translation invariant), so its central
/// difference is pure rounding noise of order 1e-11.
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub mean_loss: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

type Batch = Vec<(SparseVector, SparseVector, SparseVector)>;

fn featurize(params: &EncoderParams, triplets: &[Triplet]) -> Result<Batch, EncoderError> {
    let f = &params.featurizer;
    triplets
        .iter()
        .map(|t| Ok((f.featurize(&t.anchor)?, f.featurize(&t.positive)?, f.featurize(&t.negative)?)))
        .collect()
}

fn mean_loss(params: &EncoderParams, batch: &Batch, margin: f64) -> Result<f64, EncoderError> {
    let mut total = 0.0;
    for (a, p, n) in batch {
        let za = params.embed_features(a)?;
        let zp = params.embed_features(p)?;
        let zn = params.embed_features(n)?;
        total += triplet_loss(&za.0, &zp.0, &zn.0, margin)?;
    }
    Ok(total / batch.len() as f64)
}

/// Per-triplet losses, for filtering candidates down to hinge-active ones.
pub fn triplet_losses(params: &EncoderParams, triplets: &[Triplet], margin: f64) -> Result<Vec<f64>, EncoderError> {
    let batch = featurize(params, triplets)?;
    batch
        .iter()
        .map(|t| mean_loss(params, &vec![t.clone()], margin))
        .collect()
}

fn coordinates(params: &EncoderParams, batch: &Batch, seed: u64) -> Vec<ParamRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_dim = params.hidden_dim;
    let e_dim = params.output_dim;
    let mut features: Vec<usize> = batch
        .iter()
        .flat_map(|(a, p, n)| a.indices.iter().chain(&p.indices).chain(&n.indices))
        .map(|&i| i as usize)
        .collect();
    features.sort_unstable();
    features.dedup();

    let mut pick = |n: usize| -> Vec<usize> {
        let k = PER_TENSOR.min(n);
        let mut v = sample(&mut rng, n, k).into_vec();
        v.sort_unstable();
        v
    };
    let mut out = Vec::with_capacity(4 * PER_TENSOR);
    // W1 entries outside active feature columns have identically zero gradient.
    for i in pick(features.len() * h_dim) {
        out.push(ParamRef::W1 {
            hidden: i % h_dim,
            feature: features[i / h_dim],
        });
    }
    out.extend(pick(h_dim).into_iter().map(ParamRef::B1));
    for i in pick(e_dim * h_dim) {
        out.push(ParamRef::W2 {
            out: i / h_dim,
            hidden: i % h_dim,
        });
    }
    out.extend(pick(e_dim).into_iter().map(ParamRef::B2));
    out
}

/// Compare analytic and central-difference gradients of the mean batch loss.
///
/// Every triplet must have strictly positive loss. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-5)` over 50 sampled coordinates per tensor.
pub fn grad_check(
    params: &EncoderParams,
    triplets: &[Triplet],
    margin: f64,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, EncoderError> {
    grad_check_with(params, triplets, margin, h, seed, |p, b, m| batch_gradient(p, b, m).map(|r| r.1))
}

/// [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with<G>(
    params: &EncoderParams,
    triplets: &[Triplet],
    margin: f64,
    h: f64,
    seed: u64,
    analytic: G,
) -> Result<GradCheckReport, EncoderError>
where
    G: Fn(&EncoderParams, &Batch, f64) -> Result<Gradients, EncoderError>,
{
    if triplets.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let batch = featurize(params, triplets)?;
    for (index, t) in batch.iter().enumerate() {
        let loss = mean_loss(params, &vec![t.clone()], margin)?;
        if loss <= ACTIVE_FLOOR {
            return Err(EncoderError::HingeInactive { index, loss });
        }
    }
    let grads = analytic(params, &batch, margin)?;
    let coords = coordinates(params, &batch, seed);

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: coords.len(),
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        mean_loss: mean_loss(params, &batch, margin)?,
    };
    for c in coords {
        let orig = params.get(c);
        *probe.get_mut(c) = orig + h;
        let up = mean_loss(&probe, &batch, margin)?;
        *probe.get_mut(c) = orig - h;
        let down = mean_loss(&probe, &batch, margin)?;
        *probe.get_mut(c) = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = grads.get(params.hidden_dim, c);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel;
            report.worst = format!("{c:?}");
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Featurizer;

    fn batch() -> Vec<Triplet> {
        let t = |a: &str, p: &str, n: &str| Triplet {
            query_id: "q".into(),
            anchor: a.into(),
            positive: p.into(),
            negative: n.into(),
        };
        vec![
            t(
                "First, we add 3 and 4 to get 7.",
                "First, we add the apples: 3 plus 4 is 7.",
                "Let us think. The sum of 3 and 4 equals 7.",
            ),
            t(
                "Next, multiply 6 by 2 which gives 12.",
                "Next, we multiply 6 by 2 and obtain 12.",
                "So the product is 12 because 6 times 2.",
            ),
        ]
    }

    fn params() -> EncoderParams {
        EncoderParams::init(Featurizer::new(256), 16, 8, 5)
    }

    #[test]
    fn healthy_gradient_passes() {
        let r = grad_check(&params(), &batch(), 5.0, 1e-5, 1).unwrap();
        assert!(r.passed(1e-4), "{r:?}");
        assert_eq!(r.coordinates, 50 + 16 + 50 + 8);
    }

    #[test]
    fn corrupted_w2_gradient_fails() {
        let r = grad_check_with(&params(), &batch(), 5.0, 1e-5, 1, |p, b, m| {
            let (_, mut g) = batch_gradient(p, b, m)?;
            g.w2.iter_mut().for_each(|v| *v *= 1.5);
            Ok(g)
        })
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
        assert!(r.worst.starts_with("W2"));
    }

    #[test]
    fn inactive_batch_is_rejected() {
        // A tiny margin with collapsed zero weights is still active (loss = margin),
        // so use a negative margin to force every loss to zero.
        let p = EncoderParams::zeros(Featurizer::new(256), 16, 8);
        assert!(matches!(
            grad_check(&p, &batch(), -1.0, 1e-5, 1),
            Err(EncoderError::HingeInactive { index: 0, .. })
        ));
        assert!(matches!(grad_check(&p, &[], 5.0, 1e-5, 1), Err(EncoderError::EmptyBatch)));
    }
}
