//! Distance distributions, Gaussian KDE, grid KL and the verdict.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::ResponseCorpus;
use crate::encoder::{EncoderError, EncoderParams, FeatureVector};

pub const GRID_POINTS: usize = 1000;
pub const DENSITY_FLOOR: f64 = 1e-10;
pub const TOOL_VERSION: &str = concat!("cotsrf ", env!("CARGO_PKG_VERSION"));

const DEFAULT_THRESHOLDS: &str = include_str!("../data/thresholds.json");

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} is {value}; distances must be finite and >= 0")]
    InvalidSample { index: usize, value: f64 },
    #[error("all pooled samples equal {0}; the evaluation grid has zero width")]
    ZeroWidthGrid(f64),
    #[error("source corpus has {0} samples per query; at least 3 are required")]
    TooFewSourceSamples(u32),
    #[error("missing cell {query_id} sample {sample_index} in {model_id}")]
    MissingCell {
        model_id: String,
        query_id: String,
        sample_index: u32,
    },
    #[error("query mismatch: {0}")]
    QueryMismatch(String),
    #[error("tau must be finite and > 0, got {0}")]
    InvalidTau(f64),
    #[error("thresholds: {0}")]
    Thresholds(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceRole {
    SourceReference,
    Suspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub samples: Vec<f64>,
    pub role: DistanceRole,
}

impl DistanceDistribution {
    pub fn new(samples: Vec<f64>, role: DistanceRole) -> Result<Self, DivergenceError> {
        let d = Self { samples, role };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DivergenceError> {
        if self.samples.len() < 2 {
            return Err(DivergenceError::TooFewSamples(self.samples.len()));
        }
        for (index, &value) in self.samples.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DivergenceError::InvalidSample { index, value });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

fn embed_all(model: &EncoderParams, texts: &[&str]) -> Result<Vec<FeatureVector>, EncoderError> {
    texts.par_iter().map(|t| model.embed(t)).collect()
}

fn require<'a>(c: &'a ResponseCorpus, q: &str, j: u32) -> Result<&'a str, DivergenceError> {
    c.text(q, j).ok_or_else(|| DivergenceError::MissingCell {
        model_id: c.model_id().to_string(),
        query_id: q.to_string(),
        sample_index: j,
    })
}

/// `d_i = ‖E(r_{i,1}) − E(r_{i,2})‖` over the source corpus, in query order.
pub fn source_reference_distances(
    source: &ResponseCorpus,
    model: &EncoderParams,
) -> Result<DistanceDistribution, DivergenceError> {
    let j = source.samples_per_query();
    if j < 3 {
        return Err(DivergenceError::TooFewSourceSamples(j));
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for q in source.query_ids() {
        first.push(require(source, q, 1)?);
        second.push(require(source, q, 2)?);
    }
    let a = embed_all(model, &first)?;
    let b = embed_all(model, &second)?;
    let samples = a.iter().zip(&b).map(|(x, y)| x.distance(y)).collect();
    DistanceDistribution::new(samples, DistanceRole::SourceReference)
}

/// Suspect distances plus the number of queries dropped because the suspect
/// returned an error row for them.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspectDistances {
    pub distribution: DistanceDistribution,
    pub excluded_rows: usize,
}

/// `d_i = ‖E(r_{i,3}) − E(r^v_i)‖` for each query the suspect answered.
pub fn suspect_distances(
    source: &ResponseCorpus,
    suspect: &ResponseCorpus,
    model: &EncoderParams,
) -> Result<SuspectDistances, DivergenceError> {
    if source.samples_per_query() < 3 {
        return Err(DivergenceError::TooFewSourceSamples(source.samples_per_query()));
    }
    if source.header.query_set_hash != suspect.header.query_set_hash {
        return Err(DivergenceError::QueryMismatch(format!(
            "suspect `{}` answered a different query set",
            suspect.model_id()
        )));
    }
    let source_ids = source.query_ids();
    let suspect_ids = suspect.query_ids();
    if source_ids != suspect_ids {
        let missing: Vec<&str> = source_ids.iter().filter(|q| !suspect_ids.contains(q)).copied().collect();
        let extra: Vec<&str> = suspect_ids.iter().filter(|q| !source_ids.contains(q)).copied().collect();
        return Err(DivergenceError::QueryMismatch(format!(
            "suspect lacks {missing:?}, has unknown {extra:?}"
        )));
    }
    let mut reference = Vec::new();
    let mut answers = Vec::new();
    let mut excluded_rows = 0;
    for q in source_ids {
        let reference_text = require(source, q, 3)?;
        match suspect.cell(q, 1) {
            None => {
                return Err(DivergenceError::MissingCell {
                    model_id: suspect.model_id().to_string(),
                    query_id: q.to_string(),
                    sample_index: 1,
                })
            }
            Some(r) if r.is_error() => excluded_rows += 1,
            Some(r) => {
                reference.push(reference_text);
                answers.push(r.text.as_str());
            }
        }
    }
    let a = embed_all(model, &reference)?;
    let b = embed_all(model, &answers)?;
    let samples = a.iter().zip(&b).map(|(x, y)| x.distance(y)).collect();
    Ok(SuspectDistances {
        distribution: DistanceDistribution::new(samples, DistanceRole::Suspect)?,
        excluded_rows,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 · min(σ̂, IQR/1.34) · n^(−1/5)`, with a small positive fallback when
/// the spread is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, DivergenceError> {
    let n = samples.len();
    if n < 2 {
        return Err(DivergenceError::TooFewSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    if spread > 0.0 {
        Ok(0.9 * spread * (n as f64).powf(-0.2))
    } else {
        Ok((1e-3 * (1.0 + mean.abs())).max(1e-6))
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// Gaussian KDE with an explicit bandwidth.
pub fn kde_with_bandwidth(samples: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| {
                    let u = (x - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Density values on an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

/// Gaussian KDE with Silverman's bandwidth evaluated at `grid`.
pub fn kde_density(samples: &[f64], grid: &[f64]) -> Result<KdeDensity, DivergenceError> {
    let bandwidth = silverman_bandwidth(samples)?;
    Ok(KdeDensity {
        grid: grid.to_vec(),
        density: kde_with_bandwidth(samples, bandwidth, grid),
        bandwidth,
    })
}

/// KL value with everything needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub kl: f64,
    pub bandwidth_source: f64,
    pub bandwidth_suspect: f64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
}

/// Floor at [`DENSITY_FLOOR`] then normalize to unit mass.
pub fn grid_masses(density: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = density.iter().map(|d| d.max(DENSITY_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|d| d / total).collect()
}

/// `Σ p ln(p/q)` over already-normalized masses, clamped at 0.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// KL(source ‖ suspect) between the KDEs of two sample sets on a shared grid.
pub fn kl_from_samples(source: &[f64], suspect: &[f64]) -> Result<KlEstimate, DivergenceError> {
    let lo = source.iter().chain(suspect).copied().fold(f64::INFINITY, f64::min);
    let hi = source.iter().chain(suspect).copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(DivergenceError::ZeroWidthGrid(lo));
    }
    let grid = linspace(lo, hi, GRID_POINTS);
    let p = kde_density(source, &grid)?;
    let q = kde_density(suspect, &grid)?;
    Ok(KlEstimate {
        kl: discrete_kl(&grid_masses(&p.density), &grid_masses(&q.density)),
        bandwidth_source: p.bandwidth,
        bandwidth_suspect: q.bandwidth,
        grid_min: lo,
        grid_max: hi,
        grid_points: GRID_POINTS,
    })
}

pub fn kl_divergence(
    source: &DistanceDistribution,
    suspect: &DistanceDistribution,
) -> Result<KlEstimate, DivergenceError> {
    source.validate()?;
    suspect.validate()?;
    kl_from_samples(&source.samples, &suspect.samples)
}

/// Which side of τ counts as a match with the source model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// `KL < τ` ⇒ infringing: copies of the source have small divergence.
    #[default]
    SmallKlIsMatch,
    /// `KL ≥ τ` ⇒ infringing, taken literally from the threshold statement.
    LargeKlIsMatch,
}

impl DecisionRule {
    pub fn is_match(self, kl: f64, tau: f64) -> bool {
        match self {
            DecisionRule::SmallKlIsMatch => kl < tau,
            DecisionRule::LargeKlIsMatch => kl >= tau,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DecisionRule::SmallKlIsMatch => "small_kl_is_match",
            DecisionRule::LargeKlIsMatch => "large_kl_is_match",
        }
    }
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small_kl_is_match" => Ok(DecisionRule::SmallKlIsMatch),
            "large_kl_is_match" => Ok(DecisionRule::LargeKlIsMatch),
            other => Err(format!("unknown decision rule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Infringing,
    Benign,
}

/// Identifies what was compared.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyContext {
    pub source_model_id: String,
    pub suspect_model_id: String,
    pub source_corpus_hash: String,
    pub suspect_corpus_hash: String,
    pub queries: usize,
    pub excluded_suspect_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tool_version: String,
    pub kl: f64,
    pub tau: f64,
    pub verdict: Verdict,
    pub decision_rule: DecisionRule,
    pub log_base: String,
    #[serde(rename = "I")]
    pub queries: usize,
    pub source_model_id: String,
    pub suspect_model_id: String,
    pub source_corpus_hash: String,
    pub suspect_corpus_hash: String,
    pub bandwidth_source: f64,
    pub bandwidth_suspect: f64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub excluded_suspect_rows: usize,
}

pub fn verify(
    estimate: &KlEstimate,
    tau: f64,
    rule: DecisionRule,
    ctx: &VerifyContext,
) -> Result<VerificationReport, DivergenceError> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(DivergenceError::InvalidTau(tau));
    }
    let verdict = if rule.is_match(estimate.kl, tau) {
        Verdict::Infringing
    } else {
        Verdict::Benign
    };
    Ok(VerificationReport {
        tool_version: TOOL_VERSION.to_string(),
        kl: estimate.kl,
        tau,
        verdict,
        decision_rule: rule,
        log_base: "e".to_string(),
        queries: ctx.queries,
        source_model_id: ctx.source_model_id.clone(),
        suspect_model_id: ctx.suspect_model_id.clone(),
        source_corpus_hash: ctx.source_corpus_hash.clone(),
        suspect_corpus_hash: ctx.suspect_corpus_hash.clone(),
        bandwidth_source: estimate.bandwidth_source,
        bandwidth_suspect: estimate.bandwidth_suspect,
        grid_min: estimate.grid_min,
        grid_max: estimate.grid_max,
        grid_points: estimate.grid_points,
        excluded_suspect_rows: ctx.excluded_suspect_rows,
    })
}

/// Full pipeline on collected corpora.
pub fn verify_corpora(
    source: &ResponseCorpus,
    suspect: &ResponseCorpus,
    model: &EncoderParams,
    tau: f64,
    rule: DecisionRule,
) -> Result<VerificationReport, DivergenceError> {
    let ds = source_reference_distances(source, model)?;
    let dv = suspect_distances(source, suspect, model)?;
    let est = kl_divergence(&ds, &dv.distribution)?;
    let ctx = VerifyContext {
        source_model_id: source.model_id().to_string(),
        suspect_model_id: suspect.model_id().to_string(),
        source_corpus_hash: source.content_hash(),
        suspect_corpus_hash: suspect.content_hash(),
        queries: ds.len(),
        excluded_suspect_rows: dv.excluded_rows,
    };
    verify(&est, tau, rule, &ctx)
}

/// Default τ values keyed by scenario name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub decision_rule: DecisionRule,
    pub thresholds: BTreeMap<String, f64>,
}

impl ThresholdTable {
    pub fn load(path: &Path) -> Result<Self, DivergenceError> {
        let text = std::fs::read_to_string(path).map_err(|e| DivergenceError::Thresholds(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, DivergenceError> {
        let t: Self = serde_json::from_str(text).map_err(|e| DivergenceError::Thresholds(e.to_string()))?;
        for (k, &v) in &t.thresholds {
            if !v.is_finite() || v <= 0.0 {
                return Err(DivergenceError::Thresholds(format!("`{k}` has non-positive tau {v}")));
            }
        }
        Ok(t)
    }

    pub fn get(&self, scenario: &str) -> Option<f64> {
        self.thresholds.get(scenario).copied()
    }
}

impl Default for ThresholdTable {
    fn default() -> Self {
        Self::parse(DEFAULT_THRESHOLDS).expect("bundled thresholds parse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal(n: usize, mu: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mu, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn degenerate_bandwidth_falls_back() {
        let h = silverman_bandwidth(&[2.0; 10]).unwrap();
        assert_eq!(h, 3e-3);
        assert_eq!(silverman_bandwidth(&[0.0, 0.0]).unwrap(), 1e-3);
        assert!(matches!(silverman_bandwidth(&[1.0]), Err(DivergenceError::TooFewSamples(1))));
    }

    #[test]
    fn bandwidth_matches_direct_formula() {
        let x = normal(100, 0.0, 1.0, 7);
        // Independent recomputation: two-pass variance, quantiles by rank.
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut s = x.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let r = p * 99.0;
            let i = r as usize;
            s[i] * (1.0 - (r - i as f64)) + s[i + 1] * (r - i as f64)
        };
        let expected = 0.9 * sd.min((q(0.75) - q(0.25)) / 1.34) * 100f64.powf(-0.2);
        assert!((silverman_bandwidth(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kde_closed_form_at_mode() {
        let samples = [0.0; 5];
        let d = kde_density(&samples, &[0.0]).unwrap();
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((d.density[0] - phi0 / d.bandwidth).abs() < 1e-9);
    }

    #[test]
    fn kde_integrates_to_one() {
        let x = normal(200, 3.0, 0.7, 2);
        let h = silverman_bandwidth(&x).unwrap();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min) - 5.0 * h;
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
        let grid = linspace(lo, hi, 1000);
        let f = kde_density(&x, &grid).unwrap().density;
        assert!(f.iter().all(|&v| v >= 0.0));
        let mass: f64 = grid.windows(2).zip(f.windows(2)).map(|(g, v)| (g[1] - g[0]) * (v[0] + v[1]) / 2.0).sum();
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }

    #[test]
    fn self_divergence_is_zero() {
        let x = normal(100, 1.0, 0.3, 1);
        let d = DistanceDistribution::new(x.iter().map(|v| v.abs()).collect(), DistanceRole::SourceReference).unwrap();
        let e = kl_divergence(&d, &d).unwrap();
        assert!(e.kl < 1e-9);
        assert_eq!(e.grid_points, 1000);
    }

    #[test]
    fn disjoint_supports_stay_finite() {
        let e = kl_from_samples(&[0.0, 0.1, 0.2], &[100.0, 100.1, 100.2]).unwrap();
        assert!(e.kl.is_finite() && e.kl > 10.0);
    }

    #[test]
    fn zero_width_grid_is_an_error() {
        assert!(matches!(kl_from_samples(&[1.0, 1.0], &[1.0, 1.0]), Err(DivergenceError::ZeroWidthGrid(_))));
    }

    #[test]
    fn invalid_distributions() {
        assert!(DistanceDistribution::new(vec![1.0], DistanceRole::Suspect).is_err());
        assert!(DistanceDistribution::new(vec![1.0, -0.5], DistanceRole::Suspect).is_err());
        assert!(DistanceDistribution::new(vec![1.0, f64::NAN], DistanceRole::Suspect).is_err());
    }

    #[test]
    fn decision_rules() {
        let est = |kl| KlEstimate {
            kl,
            bandwidth_source: 1.0,
            bandwidth_suspect: 1.0,
            grid_min: 0.0,
            grid_max: 1.0,
            grid_points: GRID_POINTS,
        };
        let ctx = VerifyContext::default();
        let small = DecisionRule::SmallKlIsMatch;
        assert_eq!(verify(&est(1.5), 8.0, small, &ctx).unwrap().verdict, Verdict::Infringing);
        assert_eq!(verify(&est(303.6), 8.0, small, &ctx).unwrap().verdict, Verdict::Benign);
        assert_eq!(verify(&est(8.0), 8.0, small, &ctx).unwrap().verdict, Verdict::Benign);
        let large = DecisionRule::LargeKlIsMatch;
        assert_eq!(verify(&est(8.0), 8.0, large, &ctx).unwrap().verdict, Verdict::Infringing);
        assert_eq!(verify(&est(1.5), 8.0, large, &ctx).unwrap().verdict, Verdict::Benign);
        assert!(matches!(verify(&est(1.0), 0.0, small, &ctx), Err(DivergenceError::InvalidTau(_))));
    }

    #[test]
    fn report_serializes_rule_and_version() {
        let est = kl_from_samples(&[0.1, 0.4, 0.3], &[0.2, 0.5, 0.9]).unwrap();
        let r = verify(&est, 8.0, DecisionRule::SmallKlIsMatch, &VerifyContext::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["decision_rule"], "small_kl_is_match");
        assert_eq!(v["verdict"], "infringing");
        assert!(v["tool_version"].as_str().unwrap().starts_with("cotsrf "));
        let back: VerificationReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bundled_thresholds() {
        let t = ThresholdTable::default();
        assert_eq!(t.get("guanaco"), Some(8.0));
        assert_eq!(t.get("llama-2"), Some(85.0));
        assert_eq!(t.get("vicuna"), Some(18.0));
        assert_eq!(t.decision_rule, DecisionRule::SmallKlIsMatch);
        assert!(ThresholdTable::parse(r#"{"thresholds":{"x":-1}}"#).is_err());
    }

    proptest! {
        #[test]
        fn bandwidth_is_homogeneous(x in proptest::collection::vec(0.0..10.0f64, 5..40), c in 0.1..20.0f64) {
            let h = silverman_bandwidth(&x).unwrap();
            let mut sorted = x.clone();
            sorted.sort_by(f64::total_cmp);
            // The fallback branch is not homogeneous; skip degenerate spreads.
            prop_assume!(quantile(&sorted, 0.75) > quantile(&sorted, 0.25));
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let hc = silverman_bandwidth(&scaled).unwrap();
            prop_assert!((hc - c * h).abs() <= 1e-9 * c * h);
        }

        #[test]
        fn kl_ignores_sample_order(x in proptest::collection::vec(0.0..5.0f64, 3..30), y in proptest::collection::vec(0.0..5.0f64, 3..30), rot in 0usize..30) {
            let base = match kl_from_samples(&x, &y) { Ok(e) => e.kl, Err(_) => return Ok(()) };
            let mut xr = x.clone();
            xr.rotate_left(rot % x.len());
            let mut yr = y.clone();
            yr.reverse();
            let moved = kl_from_samples(&xr, &yr).unwrap().kl;
            prop_assert!(base >= 0.0);
            prop_assert!((base - moved).abs() <= 1e-9 * (1.0 + base));
        }

        #[test]
        fn grid_covers_samples(x in proptest::collection::vec(0.0..5.0f64, 2..20), y in proptest::collection::vec(0.0..5.0f64, 2..20)) {
            if let Ok(e) = kl_from_samples(&x, &y) {
                prop_assert!(x.iter().chain(&y).all(|&v| v >= e.grid_min && v <= e.grid_max));
            }
        }
    }
}
