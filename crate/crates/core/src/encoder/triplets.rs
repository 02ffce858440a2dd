use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EncoderError;
use crate::collect::ResponseCorpus;

/// Anchor and positive from the source model (distinct samples of one query);
/// negative from a benign model on the same query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub query_id: String,
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TripletIndex {
    pub query: usize,
    pub anchor: u32,
    pub positive: u32,
    pub benign: usize,
    pub negative: u32,
}

/// Usable (non-error) sample indices per query, aligned across corpora.
pub(crate) struct TripletPool<'a> {
    pub source: &'a ResponseCorpus,
    pub benign: &'a [ResponseCorpus],
    pub queries: Vec<String>,
    source_valid: Vec<Vec<u32>>,
    /// `[query][benign model]`
    benign_valid: Vec<Vec<Vec<u32>>>,
}

impl<'a> TripletPool<'a> {
    pub fn new(source: &'a ResponseCorpus, benign: &'a [ResponseCorpus]) -> Result<Self, EncoderError> {
        let j = source.samples_per_query();
        if j < 2 {
            return Err(EncoderError::TooFewSamples(j));
        }
        if benign.is_empty() {
            return Err(EncoderError::NoBenign);
        }
        for b in benign {
            if b.header.query_set_hash != source.header.query_set_hash {
                return Err(EncoderError::CorpusMismatch(format!(
                    "benign corpus `{}` was collected for a different query set",
                    b.model_id()
                )));
            }
        }
        let valid = |c: &ResponseCorpus, q: &str| -> Vec<u32> {
            (1..=c.samples_per_query()).filter(|&j| c.text(q, j).is_some()).collect()
        };
        let mut queries = Vec::new();
        let mut source_valid = Vec::new();
        let mut benign_valid = Vec::new();
        for q in source.query_ids() {
            let s = valid(source, q);
            let b: Vec<Vec<u32>> = benign.iter().map(|c| valid(c, q)).collect();
            if s.len() >= 2 && b.iter().any(|v| !v.is_empty()) {
                queries.push(q.to_string());
                source_valid.push(s);
                benign_valid.push(b);
            }
        }
        if queries.is_empty() {
            return Err(EncoderError::CorpusMismatch("no query has usable source and benign responses".into()));
        }
        Ok(Self {
            source,
            benign,
            queries,
            source_valid,
            benign_valid,
        })
    }

    /// One triplet per usable query, in query order.
    pub fn sample(&self, epoch_seed: u64) -> Vec<TripletIndex> {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        self.queries
            .iter()
            .enumerate()
            .map(|(qi, _)| {
                let s = &self.source_valid[qi];
                let a = rng.random_range(0..s.len());
                let mut p = rng.random_range(0..s.len() - 1);
                if p >= a {
                    p += 1;
                }
                let models: Vec<usize> = self.benign_valid[qi]
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| !v.is_empty())
                    .map(|(k, _)| k)
                    .collect();
                let k = models[rng.random_range(0..models.len())];
                let negs = &self.benign_valid[qi][k];
                let n = negs[rng.random_range(0..negs.len())];
                TripletIndex {
                    query: qi,
                    anchor: s[a],
                    positive: s[p],
                    benign: k,
                    negative: n,
                }
            })
            .collect()
    }

    pub fn source_text(&self, query: usize, j: u32) -> &str {
        self.source.text(&self.queries[query], j).expect("pool holds valid cells only")
    }

    pub fn benign_text(&self, query: usize, k: usize, j: u32) -> &str {
        self.benign[k].text(&self.queries[query], j).expect("pool holds valid cells only")
    }

    pub fn resolve(&self, t: &TripletIndex) -> Triplet {
        Triplet {
            query_id: self.queries[t.query].clone(),
            anchor: self.source_text(t.query, t.anchor).to_string(),
            positive: self.source_text(t.query, t.positive).to_string(),
            negative: self.benign_text(t.query, t.benign, t.negative).to_string(),
        }
    }
}

/// Draw one triplet per query for an epoch, deterministically from `epoch_seed`.
pub fn sample_triplets(
    source: &ResponseCorpus,
    benign: &[ResponseCorpus],
    epoch_seed: u64,
) -> Result<Vec<Triplet>, EncoderError> {
    let pool = TripletPool::new(source, benign)?;
    Ok(pool.sample(epoch_seed).iter().map(|t| pool.resolve(t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collect::CorpusRole;
    use crate::corpus::{build_query_set, synthetic_questions, DEFAULT_COT_PROMPT};
    use crate::stylesim::{default_profiles, SimEndpoint};

    fn corpora(i: usize, j: u32) -> (ResponseCorpus, Vec<ResponseCorpus>) {
        let qs = build_query_set(&synthetic_questions(i, 2), DEFAULT_COT_PROMPT, i, 2).unwrap();
        let profiles = default_profiles();
        let corpus = |p: usize, role| SimEndpoint::new(profiles[p].clone(), 1.5).unwrap().simulate_corpus(&qs, role, j);
        (
            corpus(0, CorpusRole::Source),
            vec![corpus(1, CorpusRole::Benign), corpus(2, CorpusRole::Benign)],
        )
    }

    #[test]
    fn one_triplet_per_query_and_deterministic() {
        let (s, b) = corpora(50, 4);
        let t = sample_triplets(&s, &b, 17).unwrap();
        assert_eq!(t.len(), 50);
        assert_eq!(t, sample_triplets(&s, &b, 17).unwrap());
        assert_ne!(t, sample_triplets(&s, &b, 18).unwrap());
    }

    #[test]
    fn anchor_and_positive_are_distinct_samples() {
        let (s, b) = corpora(20, 4);
        let pool = TripletPool::new(&s, &b).unwrap();
        for seed in 0..50 {
            for t in pool.sample(seed) {
                assert_ne!(t.anchor, t.positive);
                assert!((1..=4).contains(&t.anchor) && (1..=4).contains(&t.positive));
            }
        }
    }

    #[test]
    fn benign_models_supply_negatives_evenly() {
        let (s, b) = corpora(50, 4);
        let pool = TripletPool::new(&s, &b).unwrap();
        let mut first = 0usize;
        let mut total = 0usize;
        for epoch in 0..1000u64 {
            for t in pool.sample(crate::seed!(epoch, "epoch")) {
                total += 1;
                first += (t.benign == 0) as usize;
            }
        }
        let frac = first as f64 / total as f64;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn preconditions() {
        let (s, b) = corpora(5, 4);
        assert!(matches!(sample_triplets(&s, &[], 0), Err(EncoderError::NoBenign)));
        let (one, _) = corpora(5, 1);
        assert!(matches!(sample_triplets(&one, &b, 0), Err(EncoderError::TooFewSamples(1))));
        let (_, other) = corpora(6, 4);
        assert!(matches!(sample_triplets(&s, &other, 0), Err(EncoderError::CorpusMismatch(_))));
    }
}
