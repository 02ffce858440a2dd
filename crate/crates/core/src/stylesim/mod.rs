//! Synthetic language-model families with controllable reasoning styles.
//!
//! A [`StyleProfile`] is a set of weighted vocabularies; [`SimEndpoint`] turns
//! it into multi-step reasoning traces. Every choice is drawn from
//! `softmax(ln w / T)`, so low temperatures sharpen toward the profile's mode
//! and high temperatures flatten toward uniform. At `T = 0` decoding is argmax
//! with ties broken by a per-query stream, which keeps zero-temperature output
//! identical across sample indices.

mod server;
pub mod vocab;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::{CorpusHeader, CorpusRole, ResponseCorpus, ResponseRecord};
use crate::corpus::{CoTQuery, QuerySet, PROMPT_SEPARATOR};
use crate::hashing::hash_bytes;
use crate::seed;

pub use server::{serve, SimServer};
pub use vocab::{default_profile, default_profiles};

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("profile `{family}`: {message}")]
    InvalidProfile { family: String, message: String },
    #[error("drift must lie in [0, 1], got {0}")]
    DriftOutOfRange(f64),
    #[error("temperature must be finite and >= 0, got {0}")]
    BadTemperature(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("failed to bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub item: T,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    pub family_id: String,
    pub connectives: Vec<Weighted<String>>,
    pub step_count_distribution: Vec<Weighted<u32>>,
    pub phrasing_templates: Vec<Weighted<String>>,
    pub lexical_pool: Vec<Weighted<String>>,
    pub base_seed: u64,
}

fn check_weights<T>(family: &str, name: &str, ws: &[Weighted<T>]) -> Result<(), StyleError> {
    let bad = |message: String| StyleError::InvalidProfile {
        family: family.to_string(),
        message,
    };
    if ws.is_empty() {
        return Err(bad(format!("{name} is empty")));
    }
    if let Some(w) = ws.iter().find(|w| !w.weight.is_finite() || w.weight < 0.0) {
        return Err(bad(format!("{name} has invalid weight {}", w.weight)));
    }
    let total: f64 = ws.iter().map(|w| w.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(bad(format!("{name} weights sum to {total}")));
    }
    Ok(())
}

impl StyleProfile {
    pub fn validate(&self) -> Result<(), StyleError> {
        let fam = &self.family_id;
        check_weights(fam, "connectives", &self.connectives)?;
        check_weights(fam, "step_count_distribution", &self.step_count_distribution)?;
        check_weights(fam, "phrasing_templates", &self.phrasing_templates)?;
        check_weights(fam, "lexical_pool", &self.lexical_pool)?;
        let invalid = |message: &str| StyleError::InvalidProfile {
            family: fam.clone(),
            message: message.to_string(),
        };
        if self.phrasing_templates.len() < 2 {
            return Err(invalid("at least 2 phrasing templates are required"));
        }
        if self.connectives.len() < 4 {
            return Err(invalid("at least 4 connectives are required"));
        }
        if self.step_count_distribution.iter().any(|s| s.item == 0) {
            return Err(invalid("step counts must be >= 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StyleError> {
        let raw = fs::read(path).map_err(|source| StyleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let profile: StyleProfile =
            serde_json::from_slice(&raw).map_err(|source| StyleError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn save(&self, path: &Path) -> Result<(), StyleError> {
        let raw = serde_json::to_vec_pretty(self).expect("profile serializes");
        fs::write(path, raw).map_err(|source| StyleError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Copy with a different sampling seed; the style itself is unchanged.
    pub fn reseeded(&self, base_seed: u64) -> Self {
        Self {
            base_seed,
            ..self.clone()
        }
    }
}

/// Sample a Dirichlet(1, ..., 1) vector.
fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

fn drift_weights<T: Clone>(ws: &[Weighted<T>], drift: f64, rng: &mut ChaCha8Rng) -> Vec<Weighted<T>> {
    let random = random_simplex(ws.len(), rng);
    let mixed: Vec<f64> = ws
        .iter()
        .zip(&random)
        .map(|(w, r)| (1.0 - drift) * w.weight + drift * r)
        .collect();
    let total: f64 = mixed.iter().sum();
    ws.iter()
        .zip(mixed)
        .map(|(w, m)| Weighted {
            item: w.item.clone(),
            weight: m / total,
        })
        .collect()
}

/// Mix every weight vector with an independent random reweighting:
/// `(1 - drift) * w + drift * r`, renormalized. `drift = 0` is the identity.
pub fn perturb_profile(profile: &StyleProfile, drift: f64, seed: u64) -> Result<StyleProfile, StyleError> {
    if !(0.0..=1.0).contains(&drift) {
        return Err(StyleError::DriftOutOfRange(drift));
    }
    if drift == 0.0 {
        return Ok(profile.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed!(seed, "perturb"));
    Ok(StyleProfile {
        family_id: format!("{}~drift{drift}@{seed}", profile.family_id),
        connectives: drift_weights(&profile.connectives, drift, &mut rng),
        step_count_distribution: drift_weights(&profile.step_count_distribution, drift, &mut rng),
        phrasing_templates: drift_weights(&profile.phrasing_templates, drift, &mut rng),
        lexical_pool: drift_weights(&profile.lexical_pool, drift, &mut rng),
        base_seed: profile.base_seed,
    })
}

/// A categorical distribution prepared for one temperature.
#[derive(Debug, Clone)]
enum Choice {
    /// Cumulative probabilities.
    Sample(Vec<f64>),
    /// Indices attaining the maximum weight.
    Argmax(Vec<usize>),
}

impl Choice {
    fn new(weights: impl Iterator<Item = f64> + Clone, temperature: f64) -> Self {
        if temperature == 0.0 {
            let max = weights.clone().fold(f64::NEG_INFINITY, f64::max);
            let tol = max * 1e-12;
            return Choice::Argmax(
                weights
                    .enumerate()
                    .filter(|(_, w)| *w > 0.0 && (max - w).abs() <= tol)
                    .map(|(i, _)| i)
                    .collect(),
            );
        }
        let logits: Vec<f64> = weights
            .map(|w| if w > 0.0 { w.ln() / temperature } else { f64::NEG_INFINITY })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut cum: Vec<f64> = logits
            .iter()
            .map(|l| {
                acc += (l - max).exp();
                acc
            })
            .collect();
        for c in &mut cum {
            *c /= acc;
        }
        Choice::Sample(cum)
    }

    fn uniform(n: usize, temperature: f64) -> Self {
        Choice::new(std::iter::repeat_n(1.0, n), temperature)
    }

    fn pick(&self, sample_rng: &mut ChaCha8Rng, tie_rng: &mut ChaCha8Rng) -> usize {
        match self {
            Choice::Sample(cum) => {
                let u: f64 = sample_rng.random();
                cum.partition_point(|&c| c <= u).min(cum.len() - 1)
            }
            Choice::Argmax(ties) => ties[tie_rng.random_range(0..ties.len())],
        }
    }

    /// Probability mass per index (argmax ties share mass equally).
    fn probabilities(&self, n: usize) -> Vec<f64> {
        match self {
            Choice::Sample(cum) => {
                let mut prev = 0.0;
                cum.iter()
                    .map(|&c| {
                        let p = c - prev;
                        prev = c;
                        p
                    })
                    .collect()
            }
            Choice::Argmax(ties) => {
                let mut p = vec![0.0; n];
                for &i in ties {
                    p[i] = 1.0 / ties.len() as f64;
                }
                p
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Tables {
    temperature: f64,
    connectives: Choice,
    steps: Choice,
    templates: Choice,
    lexicon: Choice,
}

impl Tables {
    fn new(p: &StyleProfile, temperature: f64) -> Self {
        Self {
            temperature,
            connectives: Choice::new(p.connectives.iter().map(|w| w.weight), temperature),
            steps: Choice::new(p.step_count_distribution.iter().map(|w| w.weight), temperature),
            templates: Choice::new(p.phrasing_templates.iter().map(|w| w.weight), temperature),
            lexicon: Choice::new(p.lexical_pool.iter().map(|w| w.weight), temperature),
        }
    }
}

const STOPWORDS: [&str; 24] = [
    "have", "many", "much", "does", "each", "with", "them", "they", "more", "than", "that",
    "this", "there", "what", "then", "their", "from", "into", "were", "will", "when", "which",
    "after", "left",
];

struct QuestionTerms {
    keywords: Vec<String>,
    numbers: Vec<String>,
}

impl QuestionTerms {
    fn from_prompt(prompt: &str) -> Self {
        let question = prompt
            .rsplit_once(PROMPT_SEPARATOR)
            .map_or(prompt, |(q, _)| q);
        let mut keywords: Vec<String> = Vec::new();
        let mut numbers: Vec<String> = Vec::new();
        for tok in question
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let tok = tok.to_lowercase();
            if tok.chars().all(|c| c.is_ascii_digit()) {
                if !numbers.contains(&tok) {
                    numbers.push(tok);
                }
            } else if tok.chars().count() >= 4
                && !STOPWORDS.contains(&tok.as_str())
                && !keywords.contains(&tok)
            {
                keywords.push(tok);
            }
        }
        if keywords.is_empty() {
            keywords.push("problem".to_string());
        }
        if numbers.is_empty() {
            numbers.push("1".to_string());
        }
        Self { keywords, numbers }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A simulated model endpoint.
#[derive(Debug, Clone)]
pub struct SimEndpoint {
    profile: StyleProfile,
    temperature: f64,
    /// Fraction of (query, sample) cells that deterministically yield empty text.
    empty_rate: f64,
    tables: Tables,
}

impl SimEndpoint {
    pub fn new(profile: StyleProfile, temperature: f64) -> Result<Self, StyleError> {
        profile.validate()?;
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(StyleError::BadTemperature(temperature));
        }
        let tables = Tables::new(&profile, temperature);
        Ok(Self {
            profile,
            temperature,
            empty_rate: 0.0,
            tables,
        })
    }

    pub fn with_empty_rate(mut self, rate: f64) -> Self {
        self.empty_rate = rate.clamp(0.0, 1.0);
        self
    }

    pub fn profile(&self) -> &StyleProfile {
        &self.profile
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn model_id(&self) -> &str {
        &self.profile.family_id
    }

    pub fn generate(&self, query: &CoTQuery, sample_index: u32) -> String {
        self.generate_with(&self.tables, &query.id, &query.rendered_prompt, sample_index)
    }

    /// Generate for a raw prompt, optionally overriding the temperature.
    pub fn generate_raw(
        &self,
        query_id: &str,
        prompt: &str,
        sample_index: u32,
        temperature: Option<f64>,
    ) -> Result<String, StyleError> {
        match temperature {
            Some(t) if t != self.temperature => {
                if !t.is_finite() || t < 0.0 {
                    return Err(StyleError::BadTemperature(t));
                }
                let tables = Tables::new(&self.profile, t);
                Ok(self.generate_with(&tables, query_id, prompt, sample_index))
            }
            _ => Ok(self.generate_with(&self.tables, query_id, prompt, sample_index)),
        }
    }

    fn emits_empty(&self, query_id: &str, sample_index: u32) -> bool {
        if self.empty_rate <= 0.0 {
            return false;
        }
        let h = seed!(self.profile.base_seed, query_id, sample_index as u64, "empty");
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.empty_rate
    }

    fn generate_with(&self, tables: &Tables, query_id: &str, prompt: &str, sample_index: u32) -> String {
        if self.emits_empty(query_id, sample_index) {
            return String::new();
        }
        let p = &self.profile;
        let mut rng = ChaCha8Rng::seed_from_u64(seed!(p.base_seed, query_id, sample_index as u64));
        let mut ties = ChaCha8Rng::seed_from_u64(seed!(p.base_seed, query_id, "argmax"));
        let terms = QuestionTerms::from_prompt(prompt);
        let keyword = Choice::uniform(terms.keywords.len(), tables.temperature);
        let number = Choice::uniform(terms.numbers.len(), tables.temperature);

        let n_steps = p.step_count_distribution[tables.steps.pick(&mut rng, &mut ties)].item;
        let mut lines = Vec::with_capacity(n_steps as usize);
        for k in 1..=n_steps {
            let template = &p.phrasing_templates[tables.templates.pick(&mut rng, &mut ties)].item;
            let mut line = String::with_capacity(template.len() + 32);
            let mut rest = template.as_str();
            while let Some(start) = rest.find('{') {
                line.push_str(&rest[..start]);
                let Some(len) = rest[start..].find('}') else {
                    break;
                };
                let slot = &rest[start + 1..start + len];
                match slot {
                    "c" => line.push_str(&p.connectives[tables.connectives.pick(&mut rng, &mut ties)].item),
                    "w" => line.push_str(&p.lexical_pool[tables.lexicon.pick(&mut rng, &mut ties)].item),
                    "q" => line.push_str(&terms.keywords[keyword.pick(&mut rng, &mut ties)]),
                    "n" => line.push_str(&terms.numbers[number.pick(&mut rng, &mut ties)]),
                    "k" => line.push_str(&k.to_string()),
                    other => {
                        line.push('{');
                        line.push_str(other);
                        line.push('}');
                    }
                }
                rest = &rest[start + len + 1..];
            }
            line.push_str(rest);
            lines.push(capitalize(&line));
        }
        lines.join("\n")
    }

    /// Connective probabilities actually used at this endpoint's temperature.
    pub fn connective_distribution(&self) -> Vec<f64> {
        self.tables.connectives.probabilities(self.profile.connectives.len())
    }

    /// Generate a complete corpus in-process, mirroring what collection over
    /// the wire would record for this endpoint.
    pub fn simulate_corpus(
        &self,
        queries: &QuerySet,
        role: CorpusRole,
        samples: u32,
    ) -> ResponseCorpus {
        let header = CorpusHeader::new(role, self.model_id(), queries, samples, self.temperature);
        let collected_at = chrono::DateTime::UNIX_EPOCH;
        let mut records = Vec::with_capacity(queries.len() * samples as usize);
        for q in &queries.queries {
            for j in 1..=samples {
                records.push(ResponseRecord::ok(
                    &q.id,
                    self.model_id(),
                    j,
                    self.temperature,
                    self.generate(q, j),
                    collected_at,
                ));
            }
        }
        ResponseCorpus::new(header, records)
    }
}

/// Empirical connective frequencies over `texts`, indexed like `profile.connectives`.
///
/// Each line contributes its earliest word-bounded connective (longest on ties).
pub fn connective_histogram<'a>(profile: &StyleProfile, texts: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
    let needles: Vec<String> = profile.connectives.iter().map(|c| c.item.to_lowercase()).collect();
    let mut counts = vec![0.0; needles.len()];
    for text in texts {
        for line in text.lines() {
            let line = line.to_lowercase();
            let mut best: Option<(usize, usize, usize)> = None;
            for (i, needle) in needles.iter().enumerate() {
                for (pos, _) in line.match_indices(needle.as_str()) {
                    let before_ok = line[..pos].chars().last().is_none_or(|ch| !ch.is_alphanumeric());
                    let after_ok = line[pos + needle.len()..]
                        .chars()
                        .next()
                        .is_none_or(|ch| !ch.is_alphanumeric());
                    if !(before_ok && after_ok) {
                        continue;
                    }
                    let better = best.is_none_or(|(bpos, blen, _)| pos < bpos || (pos == bpos && needle.len() > blen));
                    if better {
                        best = Some((pos, needle.len(), i));
                    }
                    break;
                }
            }
            if let Some((_, _, i)) = best {
                counts[i] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// Stable 64-bit id for a prompt, used when a request carries no query id.
pub fn prompt_key(prompt: &str) -> String {
    format!("p{:016x}", hash_bytes(0, prompt.as_bytes()))
}

impl crate::collect::ChatEndpoint for SimEndpoint {
    fn model_id(&self) -> &str {
        &self.profile.family_id
    }

    fn advertised_temperature(&self) -> f64 {
        self.temperature
    }

    async fn complete(
        &self,
        req: &crate::collect::CellRequest<'_>,
    ) -> Result<String, crate::collect::EndpointError> {
        self.generate_raw(req.query_id, req.prompt, req.sample_index, req.temperature)
            .map_err(|e| crate::collect::EndpointError::Protocol(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_query_set, synthetic_questions, DEFAULT_COT_PROMPT};

    fn queries(n: usize) -> QuerySet {
        build_query_set(&synthetic_questions(n, 5), DEFAULT_COT_PROMPT, n, 5).unwrap()
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    fn entropy(p: &[f64]) -> f64 {
        -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
    }

    #[test]
    fn default_profiles_are_valid_and_distinct() {
        let profiles = default_profiles();
        assert_eq!(profiles.len(), 5);
        for p in &profiles {
            p.validate().unwrap();
        }
        let ids: std::collections::HashSet<_> = profiles.iter().map(|p| &p.family_id).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn validation_rejects_bad_weights() {
        let mut p = default_profiles().remove(0);
        p.connectives[0].weight += 0.1;
        assert!(p.validate().is_err());
        let mut p = default_profiles().remove(0);
        p.phrasing_templates.truncate(1);
        p.phrasing_templates[0].weight = 1.0;
        assert!(p.validate().is_err());
        let mut p = default_profiles().remove(0);
        p.connectives.truncate(3);
        let total: f64 = p.connectives.iter().map(|c| c.weight).sum();
        p.connectives.iter_mut().for_each(|c| c.weight /= total);
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_temperature_is_argmax_decoding() {
        let sim = SimEndpoint::new(default_profiles().remove(1), 0.0).unwrap();
        let qs = queries(5);
        for q in &qs.queries {
            let first = sim.generate(q, 1);
            for j in 2..6 {
                assert_eq!(sim.generate(q, j), first);
            }
        }
        assert_ne!(sim.generate(&qs.queries[0], 1), sim.generate(&qs.queries[1], 1));
    }

    #[test]
    fn generation_is_seeded_and_multi_step() {
        let sim = SimEndpoint::new(default_profiles().remove(0), 1.5).unwrap();
        let qs = queries(3);
        let q = &qs.queries[0];
        assert_eq!(sim.generate(q, 2), sim.generate(q, 2));
        assert_ne!(sim.generate(q, 1), sim.generate(q, 2));
        assert!(sim.generate(q, 1).lines().count() >= 2);
        let raw = sim.generate_raw(&q.id, &q.rendered_prompt, 2, None).unwrap();
        assert_eq!(raw, sim.generate(q, 2));
        let colder = sim.generate_raw(&q.id, &q.rendered_prompt, 2, Some(0.0)).unwrap();
        assert_eq!(colder, SimEndpoint::new(default_profiles().remove(0), 0.0).unwrap().generate(q, 2));
        assert!(sim.generate_raw(&q.id, &q.rendered_prompt, 2, Some(-1.0)).is_err());
    }

    #[test]
    fn distinct_families_have_distinct_connective_histograms() {
        let qs = queries(100);
        let profiles = default_profiles();
        let hist = |p: &StyleProfile| {
            let sim = SimEndpoint::new(p.clone(), 1.0).unwrap();
            let texts: Vec<String> = qs.queries.iter().map(|q| sim.generate(q, 1)).collect();
            connective_histogram(&profiles[0], texts.iter().map(String::as_str))
        };
        let base = hist(&profiles[0]);
        for other in &profiles[1..] {
            let d = tv(&base, &hist(other));
            assert!(d > 0.3, "{} vs {}: tv = {d}", profiles[0].family_id, other.family_id);
        }
    }

    #[test]
    fn connective_entropy_grows_with_temperature() {
        let qs = queries(100);
        for p in default_profiles() {
            let entropies: Vec<f64> = [0.2, 1.0, 1.8]
                .iter()
                .map(|&t| {
                    let sim = SimEndpoint::new(p.clone(), t).unwrap();
                    let texts: Vec<String> = qs
                        .queries
                        .iter()
                        .flat_map(|q| (1..=5).map(|j| sim.generate(q, j)).collect::<Vec<_>>())
                        .collect();
                    assert!(texts.len() >= 500);
                    entropy(&connective_histogram(&p, texts.iter().map(String::as_str)))
                })
                .collect();
            assert!(entropies[0] <= entropies[1] && entropies[1] <= entropies[2], "{}: {entropies:?}", p.family_id);
        }
    }

    #[test]
    fn sampling_distribution_sharpens_and_flattens() {
        let p = default_profiles().remove(2);
        let cold = SimEndpoint::new(p.clone(), 0.2).unwrap().connective_distribution();
        let hot = SimEndpoint::new(p.clone(), 1.8).unwrap().connective_distribution();
        assert!(entropy(&cold) < entropy(&hot));
        let argmax = SimEndpoint::new(p, 0.0).unwrap().connective_distribution();
        assert!((argmax.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_identity_and_bounds() {
        let p = default_profiles().remove(0);
        assert_eq!(perturb_profile(&p, 0.0, 9).unwrap(), p);
        assert!(perturb_profile(&p, 1.5, 9).is_err());
        assert!(perturb_profile(&p, -0.1, 9).is_err());
        let q = perturb_profile(&p, 0.1, 9).unwrap();
        q.validate().unwrap();
        let w = |v: &[Weighted<String>]| v.iter().map(|x| x.weight).collect::<Vec<_>>();
        assert!(tv(&w(&p.connectives), &w(&q.connectives)) < 0.1 + 0.05);
        assert!(tv(&w(&p.lexical_pool), &w(&q.lexical_pool)) < 0.1 + 0.05);
        assert_eq!(perturb_profile(&p, 0.1, 9).unwrap(), q);
    }

    #[test]
    fn full_drift_is_uncorrelated_with_original() {
        let p = default_profiles().remove(0);
        let orig: Vec<f64> = p.connectives.iter().map(|c| c.weight).collect();
        let n = orig.len() as f64;
        let mean_o = orig.iter().sum::<f64>() / n;
        let corrs: Vec<f64> = (0..1000u64)
            .map(|seed| {
                let q = perturb_profile(&p, 1.0, seed).unwrap();
                let new: Vec<f64> = q.connectives.iter().map(|c| c.weight).collect();
                let mean_n = new.iter().sum::<f64>() / n;
                let cov: f64 = orig.iter().zip(&new).map(|(a, b)| (a - mean_o) * (b - mean_n)).sum();
                let va: f64 = orig.iter().map(|a| (a - mean_o).powi(2)).sum();
                let vb: f64 = new.iter().map(|b| (b - mean_n).powi(2)).sum();
                cov / (va * vb).sqrt()
            })
            .collect();
        let mean = corrs.iter().sum::<f64>() / corrs.len() as f64;
        let sd = (corrs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (corrs.len() - 1) as f64).sqrt();
        let se = sd / (corrs.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean corr {mean}, se {se}");
    }

    #[test]
    fn empty_rate_is_deterministic() {
        let sim = SimEndpoint::new(default_profiles().remove(0), 1.0).unwrap().with_empty_rate(0.2);
        let qs = queries(100);
        let empties = qs.queries.iter().filter(|q| sim.generate(q, 1).is_empty()).count();
        assert!((5..=40).contains(&empties), "{empties}");
        let again = qs.queries.iter().filter(|q| sim.generate(q, 1).is_empty()).count();
        assert_eq!(empties, again);
    }

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = default_profiles().remove(3);
        p.save(&path).unwrap();
        assert_eq!(StyleProfile::load(&path).unwrap(), p);
    }

    #[test]
    fn simulated_corpus_is_complete() {
        let qs = queries(7);
        let sim = SimEndpoint::new(default_profiles().remove(0), 1.5).unwrap();
        let c = sim.simulate_corpus(&qs, CorpusRole::Source, 4);
        c.validate().unwrap();
        assert_eq!(c.records.len(), 28);
    }
}
