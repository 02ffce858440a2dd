//! End-to-end experiments on simulated model populations.
//!
//! An [`Experiment`] builds the reference corpora, trains the encoder and fixes
//! the source distance distribution once. Trials then only resample suspect
//! responses, each from a seed derived from the plan seed, the suspect's
//! condition key and the trial index.

mod metrics;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

pub use metrics::{MetricsRow, MetricsTable, RowKind};

use crate::collect::{CorpusRole, ResponseCorpus};
use crate::corpus::{build_query_sets, synthetic_questions, CorpusError, QuerySet, DEFAULT_COT_PROMPT};
use crate::divergence::{
    kl_divergence, source_reference_distances, suspect_distances, DecisionRule, DistanceDistribution,
    DivergenceError,
};
use crate::encoder::{train, EncoderError, EncoderParams, TrainConfig, TrainingLog};
use crate::seed;
use crate::stylesim::{default_profiles, perturb_profile, SimEndpoint, StyleError, StyleProfile};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error("trial {trial} of `{condition}` failed: {message}")]
    Aborted {
        condition: String,
        trial: usize,
        message: String,
        partial: Box<MetricsTable>,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn d_source() -> String {
    "aurora".into()
}
fn d_benign() -> Vec<String> {
    vec!["basalt".into(), "cobalt".into()]
}
fn d_unseen() -> Vec<String> {
    vec!["dune".into(), "ember".into()]
}
fn d_queries() -> usize {
    50
}
fn d_samples() -> u32 {
    4
}
fn d_t_collect() -> f64 {
    1.5
}
fn d_trials() -> usize {
    100
}
fn d_temperatures() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8]
}
fn d_drifts() -> Vec<f64> {
    vec![0.0, 0.1, 0.25, 0.5, 1.0]
}
fn d_drift_seeds() -> usize {
    10
}
fn d_true() -> bool {
    true
}

/// One experiment, as read from a JSON plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialPlan {
    #[serde(default = "d_source")]
    pub source: String,
    /// Benign models whose responses serve as training negatives.
    #[serde(default = "d_benign")]
    pub benign: Vec<String>,
    /// Benign models never shown to the encoder.
    #[serde(default = "d_unseen")]
    pub unseen_benign: Vec<String>,
    #[serde(default = "d_queries", rename = "I")]
    pub queries: usize,
    #[serde(default = "d_samples", rename = "J")]
    pub samples: u32,
    #[serde(default = "d_t_collect")]
    pub t_collect: f64,
    /// Sampling temperature of benign training corpora; defaults to `t_collect`.
    #[serde(default)]
    pub benign_temperature: Option<f64>,
    #[serde(default = "d_trials")]
    pub n_trials: usize,
    /// Fixed threshold. When absent, τ is calibrated on `calibration_seed`.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub calibration_seed: Option<u64>,
    #[serde(default)]
    pub decision_rule: DecisionRule,
    #[serde(default)]
    pub seed: u64,
    /// Verify on queries disjoint from the encoder's training queries.
    #[serde(default)]
    pub holdout_queries: bool,
    #[serde(default = "d_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "d_drifts")]
    pub drifts: Vec<f64>,
    #[serde(default = "d_drift_seeds")]
    pub drift_seeds: usize,
    #[serde(default = "d_true")]
    pub parallel: bool,
    #[serde(default)]
    pub train: TrainConfig,
    /// Profiles that override or extend the built-in families by id.
    #[serde(default)]
    pub profiles: Vec<StyleProfile>,
}

impl Default for TrialPlan {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all plan fields have defaults")
    }
}

impl TrialPlan {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let io = |message: String| HarnessError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let plan: Self = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidPlan(m));
        if self.n_trials == 0 {
            return bad("n_trials must be >= 1".into());
        }
        if self.queries < 2 {
            return bad("I must be >= 2".into());
        }
        if self.samples < 3 {
            return bad("J must be >= 3".into());
        }
        if self.benign.is_empty() {
            return bad("at least one benign profile is required".into());
        }
        let mut all = vec![self.source.as_str()];
        all.extend(self.benign.iter().map(String::as_str));
        all.extend(self.unseen_benign.iter().map(String::as_str));
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != all.len() {
            return bad("source, benign and unseen profile ids must be disjoint".into());
        }
        for t in std::iter::once(self.t_collect).chain(self.benign_temperature).chain(self.temperatures.iter().copied()) {
            if !t.is_finite() || t < 0.0 {
                return bad(format!("temperature {t} must be finite and >= 0"));
            }
        }
        if let Some(&d) = self.drifts.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return bad(format!("drift {d} outside [0, 1]"));
        }
        if self.drift_seeds == 0 {
            return bad("drift_seeds must be >= 1".into());
        }
        if let Some(t) = self.tau {
            if !t.is_finite() || t <= 0.0 {
                return bad(format!("tau {t} must be > 0"));
            }
        }
        self.train.validate()?;
        for id in all {
            self.profile(id)?;
        }
        Ok(())
    }

    pub fn profile(&self, id: &str) -> Result<StyleProfile, HarnessError> {
        self.profiles
            .iter()
            .find(|p| p.family_id == id)
            .cloned()
            .or_else(|| default_profiles().into_iter().find(|p| p.family_id == id))
            .ok_or_else(|| HarnessError::UnknownProfile(id.to_string()))
    }

    fn calibration_root(&self) -> u64 {
        self.calibration_seed.unwrap_or_else(|| seed!(self.seed, "calibration"))
    }
}

/// Threshold chosen from labelled KL values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub errors: usize,
    pub max_match: f64,
    pub min_non_match: f64,
    pub match_trials: usize,
    pub non_match_trials: usize,
}

fn between(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// Pick τ that misclassifies the fewest labelled values under `rule`.
///
/// Candidates sit between adjacent distinct values (geometric mean when
/// positive); ties go to the widest gap in log space. For separable data under
/// the small-KL rule this is the geometric mean of the largest match KL and
/// the smallest non-match KL.
pub fn calibrate_tau(match_kl: &[f64], non_match_kl: &[f64], rule: DecisionRule) -> Result<Calibration, HarnessError> {
    if match_kl.is_empty() || non_match_kl.is_empty() {
        return Err(HarnessError::InvalidPlan("calibration needs match and non-match values".into()));
    }
    let mut values: Vec<f64> = match_kl.iter().chain(non_match_kl).copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let floor = 1e-12;
    let mut candidates: Vec<(f64, f64)> = vec![((values[0] / 2.0).max(floor), 0.0)];
    for w in values.windows(2) {
        let gap = (w[1].max(floor) / w[0].max(floor)).ln();
        candidates.push((between(w[0], w[1]).max(floor), gap));
    }
    candidates.push((values[values.len() - 1].max(floor) * 2.0, 0.0));

    let errors = |tau: f64| {
        match_kl.iter().filter(|&&k| !rule.is_match(k, tau)).count()
            + non_match_kl.iter().filter(|&&k| rule.is_match(k, tau)).count()
    };
    let mut best = (usize::MAX, f64::NEG_INFINITY, 0.0);
    for (tau, gap) in candidates {
        let e = errors(tau);
        if e < best.0 || (e == best.0 && gap > best.1) {
            best = (e, gap, tau);
        }
    }
    Ok(Calibration {
        tau: best.2,
        errors: best.0,
        max_match: match_kl.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_non_match: non_match_kl.iter().copied().fold(f64::INFINITY, f64::min),
        match_trials: match_kl.len(),
        non_match_trials: non_match_kl.len(),
    })
}

/// A group of suspects evaluated together.
#[derive(Debug, Clone)]
struct Condition {
    label: String,
    /// Seed key; suspects sharing a key and trial index share their sampling seed.
    key: String,
    profile: StyleProfile,
    temperature: f64,
    is_match: bool,
}

/// Fixed state shared by all trials of a plan.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub plan_seed: u64,
    pub tau: f64,
    pub decision_rule: DecisionRule,
    pub calibration: Option<Calibration>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub reference_mean_distance: f64,
    pub query_set_hash: String,
    pub source_corpus_hash: String,
}

pub struct Experiment {
    plan: TrialPlan,
    verify_queries: QuerySet,
    source_reference: ResponseCorpus,
    encoder: EncoderParams,
    training_log: Option<TrainingLog>,
    reference: DistanceDistribution,
    tau: f64,
    calibration: Option<Calibration>,
}

impl Experiment {
    /// Build corpora, train the encoder and settle τ.
    pub fn prepare(plan: TrialPlan) -> Result<Self, HarnessError> {
        Self::build(plan, None)
    }

    /// Like [`Experiment::prepare`] but with an already trained encoder.
    pub fn with_encoder(plan: TrialPlan, encoder: EncoderParams) -> Result<Self, HarnessError> {
        Self::build(plan, Some(encoder))
    }

    fn build(plan: TrialPlan, encoder: Option<EncoderParams>) -> Result<Self, HarnessError> {
        plan.validate()?;
        let holdout = if plan.holdout_queries { plan.queries } else { 0 };
        let questions = synthetic_questions(plan.queries + holdout, seed!(plan.seed, "questions"));
        let (train_queries, held) =
            build_query_sets(&questions, DEFAULT_COT_PROMPT, plan.queries, holdout, seed!(plan.seed, "queries"))?;
        let verify_queries = held.unwrap_or_else(|| train_queries.clone());

        let reference_profile = |id: &str| -> Result<StyleProfile, HarnessError> {
            Ok(plan.profile(id)?.reseeded(seed!(plan.seed, "reference", id)))
        };
        let source_sim = SimEndpoint::new(reference_profile(&plan.source)?, plan.t_collect)?;
        let source_reference = source_sim.simulate_corpus(&verify_queries, CorpusRole::Source, plan.samples);

        let (encoder, training_log) = match encoder {
            Some(e) => (e, None),
            None => {
                let source_train = if plan.holdout_queries {
                    source_sim.simulate_corpus(&train_queries, CorpusRole::Source, plan.samples)
                } else {
                    source_reference.clone()
                };
                let t_benign = plan.benign_temperature.unwrap_or(plan.t_collect);
                let benign = plan
                    .benign
                    .iter()
                    .map(|id| {
                        Ok(SimEndpoint::new(reference_profile(id)?, t_benign)?.simulate_corpus(
                            &train_queries,
                            CorpusRole::Benign,
                            plan.samples,
                        ))
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                info!(epochs = plan.train.epochs, "training encoder");
                let (params, log) = train(&source_train, &benign, &plan.train)?;
                info!(initial = log.initial_loss, last = log.final_loss(), "training done");
                (params, Some(log))
            }
        };
        let reference = source_reference_distances(&source_reference, &encoder)?;

        let mut exp = Self {
            plan,
            verify_queries,
            source_reference,
            encoder,
            training_log,
            reference,
            tau: f64::NAN,
            calibration: None,
        };
        match exp.plan.tau {
            Some(t) => exp.tau = t,
            None => {
                let cal = exp.calibrate()?;
                info!(tau = cal.tau, errors = cal.errors, "calibrated tau");
                exp.tau = cal.tau;
                exp.calibration = Some(cal);
            }
        }
        Ok(exp)
    }

    pub fn plan(&self) -> &TrialPlan {
        &self.plan
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn training_log(&self) -> Option<&TrainingLog> {
        self.training_log.as_ref()
    }

    pub fn reference(&self) -> &DistanceDistribution {
        &self.reference
    }

    pub fn source_reference(&self) -> &ResponseCorpus {
        &self.source_reference
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary {
            plan_seed: self.plan.seed,
            tau: self.tau,
            decision_rule: self.plan.decision_rule,
            calibration: self.calibration.clone(),
            initial_loss: self.training_log.as_ref().map_or(f64::NAN, |l| l.initial_loss),
            final_loss: self.training_log.as_ref().map_or(f64::NAN, |l| l.final_loss()),
            reference_mean_distance: self.reference.mean(),
            query_set_hash: self.verify_queries.content_hash(),
            source_corpus_hash: self.source_reference.content_hash(),
        }
    }

    /// KL of one suspect corpus against the fixed reference distribution.
    pub fn score(&self, suspect: &ResponseCorpus) -> Result<f64, HarnessError> {
        let dv = suspect_distances(&self.source_reference, suspect, &self.encoder)?;
        Ok(kl_divergence(&self.reference, &dv.distribution)?.kl)
    }

    /// Suspect corpus for one trial: a fresh sampling stream of `profile`.
    pub fn suspect_corpus(&self, profile: &StyleProfile, temperature: f64, trial_seed: u64) -> Result<ResponseCorpus, HarnessError> {
        let sim = SimEndpoint::new(profile.reseeded(trial_seed), temperature)?;
        Ok(sim.simulate_corpus(&self.verify_queries, CorpusRole::Suspect, 1))
    }

    fn trial_seed(root: u64, key: &str, trial: usize) -> u64 {
        seed!(root, "trial", key, trial)
    }

    /// KL values per condition, trial-indexed. Trials run in `order`.
    fn run(
        &self,
        conditions: &[Condition],
        root: u64,
        trials: usize,
        order: &[usize],
    ) -> Vec<Vec<Result<f64, String>>> {
        let jobs: Vec<(usize, usize)> = (0..conditions.len())
            .flat_map(|c| order.iter().map(move |&t| (c, t)))
            .collect();
        let eval = |&(c, t): &(usize, usize)| {
            let cond = &conditions[c];
            let res = self
                .suspect_corpus(&cond.profile, cond.temperature, Self::trial_seed(root, &cond.key, t))
                .and_then(|s| self.score(&s))
                .map_err(|e| e.to_string());
            (c, t, res)
        };
        let done: Vec<(usize, usize, Result<f64, String>)> = if self.plan.parallel {
            jobs.par_iter().map(eval).collect()
        } else {
            jobs.iter().map(eval).collect()
        };
        let mut out: Vec<Vec<Result<f64, String>>> =
            (0..conditions.len()).map(|_| (0..trials).map(|_| Err("not run".into())).collect()).collect();
        for (c, t, r) in done {
            out[c][t] = r;
        }
        out
    }

    fn calibrate(&self) -> Result<Calibration, HarnessError> {
        let mut conds = vec![self.copy_condition("calibration:source-copy", self.plan.t_collect)?];
        for id in &self.plan.benign {
            conds.push(self.benign_condition(format!("calibration:{id}"), id, self.plan.t_collect)?);
        }
        let n = self.plan.n_trials;
        let order: Vec<usize> = (0..n).collect();
        let kls = self.run(&conds, self.plan.calibration_root(), n, &order);
        let mut matched = Vec::new();
        let mut other = Vec::new();
        for (cond, vals) in conds.iter().zip(kls) {
            for (trial, v) in vals.into_iter().enumerate() {
                let v = v.map_err(|message| HarnessError::Aborted {
                    condition: cond.label.clone(),
                    trial,
                    message,
                    partial: Box::new(self.empty_table("calibration")),
                })?;
                if cond.is_match {
                    matched.push(v);
                } else {
                    other.push(v);
                }
            }
        }
        calibrate_tau(&matched, &other, self.plan.decision_rule)
    }

    fn copy_condition(&self, label: impl Into<String>, temperature: f64) -> Result<Condition, HarnessError> {
        Ok(Condition {
            label: label.into(),
            key: self.plan.source.clone(),
            profile: self.plan.profile(&self.plan.source)?,
            temperature,
            is_match: true,
        })
    }

    fn benign_condition(&self, label: String, id: &str, temperature: f64) -> Result<Condition, HarnessError> {
        Ok(Condition {
            label,
            key: id.to_string(),
            profile: self.plan.profile(id)?,
            temperature,
            is_match: false,
        })
    }

    fn empty_table(&self, title: &str) -> MetricsTable {
        MetricsTable {
            title: title.to_string(),
            tau: self.tau,
            decision_rule: self.plan.decision_rule,
            rows: Vec::new(),
        }
    }

    fn row(&self, condition: String, kind: RowKind, matched: &[f64], other: &[f64]) -> MetricsRow {
        let rule = self.plan.decision_rule;
        let rate = |v: &[f64]| (!v.is_empty()).then(|| v.iter().filter(|&&k| rule.is_match(k, self.tau)).count() as f64 / v.len() as f64);
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        MetricsRow {
            condition,
            kind,
            trials: matched.len() + other.len(),
            tpr: rate(matched),
            fpr: rate(other),
            mean_kl_match: mean(matched),
            mean_kl_non_match: mean(other),
            tau: self.tau,
        }
    }

    /// Evaluate grouped conditions; each group becomes one row.
    ///
    /// On failure the partial table holds every group completed before the
    /// first failing trial (in condition, then trial, order).
    fn table(
        &self,
        title: &str,
        groups: Vec<(String, RowKind, Vec<Condition>)>,
        order: &[usize],
        trials: usize,
    ) -> Result<MetricsTable, HarnessError> {
        let flat: Vec<Condition> = groups.iter().flat_map(|g| g.2.iter().cloned()).collect();
        let kls = self.run(&flat, self.plan.seed, trials, order);
        let mut table = self.empty_table(title);
        let mut next = 0;
        for (label, kind, conds) in groups {
            let mut matched = Vec::new();
            let mut other = Vec::new();
            for cond in &conds {
                for (trial, v) in kls[next].iter().enumerate() {
                    match v {
                        Ok(k) if cond.is_match => matched.push(*k),
                        Ok(k) => other.push(*k),
                        Err(message) => {
                            return Err(HarnessError::Aborted {
                                condition: cond.label.clone(),
                                trial,
                                message: message.clone(),
                                partial: Box::new(table),
                            })
                        }
                    }
                }
                next += 1;
            }
            table.rows.push(self.row(label, kind, &matched, &other));
        }
        Ok(table)
    }

    fn all_trials(&self) -> Vec<usize> {
        (0..self.plan.n_trials).collect()
    }

    /// TPR on source copies and FPR on every benign model, trained and unseen.
    pub fn run_trials(&self) -> Result<MetricsTable, HarnessError> {
        self.run_trials_in_order(&self.all_trials())
    }

    /// [`Experiment::run_trials`] executing trials in a caller-chosen order.
    pub fn run_trials_in_order(&self, order: &[usize]) -> Result<MetricsTable, HarnessError> {
        let t = self.plan.t_collect;
        let copy = self.copy_condition("source-copy", t)?;
        let benign: Vec<Condition> = self
            .plan
            .benign
            .iter()
            .map(|id| self.benign_condition(format!("benign:{id}"), id, t))
            .collect::<Result<_, _>>()?;
        let unseen: Vec<Condition> = self
            .plan
            .unseen_benign
            .iter()
            .map(|id| self.benign_condition(format!("unseen:{id}"), id, t))
            .collect::<Result<_, _>>()?;

        let mut groups = vec![("source-copy".to_string(), RowKind::Match, vec![copy.clone()])];
        for c in benign.iter().chain(&unseen) {
            groups.push((c.label.clone(), RowKind::NonMatch, vec![c.clone()]));
        }
        groups.push(("benign (trained)".into(), RowKind::NonMatch, benign.clone()));
        if !unseen.is_empty() {
            groups.push(("benign (unseen)".into(), RowKind::NonMatch, unseen.clone()));
        }
        let mut everything = vec![copy];
        everything.extend(benign);
        everything.extend(unseen);
        groups.push(("overall".into(), RowKind::Mixed, everything));
        self.table("trials", groups, order, self.plan.n_trials)
    }

    /// Suspects sampled at each temperature; references stay fixed.
    pub fn temperature_sweep(&self, temperatures: &[f64]) -> Result<MetricsTable, HarnessError> {
        if temperatures.is_empty() {
            return Err(HarnessError::InvalidPlan("temperature list is empty".into()));
        }
        let mut groups = Vec::new();
        for &t in temperatures {
            if !t.is_finite() || t < 0.0 {
                return Err(HarnessError::InvalidPlan(format!("temperature {t} must be >= 0")));
            }
            let label = format!("T={t}");
            let mut conds = vec![self.copy_condition(label.clone(), t)?];
            for id in self.plan.benign.iter().chain(&self.plan.unseen_benign) {
                conds.push(self.benign_condition(format!("{label}:{id}"), id, t)?);
            }
            groups.push((label, RowKind::Mixed, conds));
        }
        self.table("temperature-sweep", groups, &self.all_trials(), self.plan.n_trials)
    }

    /// Source copies whose style has drifted, averaged over perturbation seeds.
    pub fn drift_sweep(&self, drifts: &[f64]) -> Result<MetricsTable, HarnessError> {
        if drifts.is_empty() {
            return Err(HarnessError::InvalidPlan("drift list is empty".into()));
        }
        let source = self.plan.profile(&self.plan.source)?;
        let t = self.plan.t_collect;
        let mut groups = Vec::new();
        for &d in drifts {
            let label = format!("drift={d}");
            let conds = (0..self.plan.drift_seeds)
                .map(|s| {
                    Ok(Condition {
                        label: format!("{label}@{s}"),
                        key: self.plan.source.clone(),
                        profile: perturb_profile(&source, d, seed!(self.plan.seed, "drift", s))?,
                        temperature: t,
                        is_match: true,
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            groups.push((label, RowKind::Match, conds));
        }
        let benign: Vec<Condition> = self
            .plan
            .benign
            .iter()
            .chain(&self.plan.unseen_benign)
            .map(|id| self.benign_condition(format!("benign:{id}"), id, t))
            .collect::<Result<_, _>>()?;
        groups.push(("benign".into(), RowKind::NonMatch, benign));
        self.table("drift-sweep", groups, &self.all_trials(), self.plan.n_trials)
    }

    /// Per-condition KL values of a plain trial run, for diagnostics.
    pub fn trial_kls(&self) -> Result<BTreeMap<String, Vec<f64>>, HarnessError> {
        let t = self.plan.t_collect;
        let mut conds = vec![self.copy_condition("source-copy", t)?];
        for id in self.plan.benign.iter().chain(&self.plan.unseen_benign) {
            conds.push(self.benign_condition(id.clone(), id, t)?);
        }
        let kls = self.run(&conds, self.plan.seed, self.plan.n_trials, &self.all_trials());
        conds
            .iter()
            .zip(kls)
            .map(|(c, v)| {
                let vals = v.into_iter().collect::<Result<Vec<_>, _>>().map_err(|message| HarnessError::Aborted {
                    condition: c.label.clone(),
                    trial: 0,
                    message,
                    partial: Box::new(self.empty_table("trials")),
                })?;
                Ok((c.label.clone(), vals))
            })
            .collect()
    }
}

pub fn run_trials(plan: TrialPlan) -> Result<MetricsTable, HarnessError> {
    Experiment::prepare(plan)?.run_trials()
}

pub fn temperature_sweep(plan: TrialPlan, temperatures: &[f64]) -> Result<MetricsTable, HarnessError> {
    if temperatures.is_empty() {
        return Err(HarnessError::InvalidPlan("temperature list is empty".into()));
    }
    Experiment::prepare(plan)?.temperature_sweep(temperatures)
}

pub fn drift_sweep(plan: TrialPlan, drifts: &[f64]) -> Result<MetricsTable, HarnessError> {
    if drifts.is_empty() {
        return Err(HarnessError::InvalidPlan("drift list is empty".into()));
    }
    Experiment::prepare(plan)?.drift_sweep(drifts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> TrialPlan {
        TrialPlan {
            queries: 12,
            n_trials: 4,
            seed: 9,
            train: TrainConfig {
                epochs: 20,
                feature_dim: 512,
                hidden_dim: 32,
                output_dim: 16,
                ..TrainConfig::default()
            },
            temperatures: vec![0.5, 1.5],
            drifts: vec![0.0, 1.0],
            drift_seeds: 2,
            ..TrialPlan::default()
        }
    }

    #[test]
    fn default_plan_matches_documented_protocol() {
        let p = TrialPlan::default();
        assert_eq!((p.queries, p.samples, p.t_collect, p.n_trials), (50, 4, 1.5, 100));
        assert_eq!(p.train.epochs, 300);
        assert_eq!(p.decision_rule, DecisionRule::SmallKlIsMatch);
        p.validate().unwrap();
    }

    #[test]
    fn plan_validation() {
        let bad = [
            TrialPlan { n_trials: 0, ..TrialPlan::default() },
            TrialPlan { samples: 2, ..TrialPlan::default() },
            TrialPlan { unseen_benign: vec!["basalt".into()], ..TrialPlan::default() },
            TrialPlan { source: "nobody".into(), ..TrialPlan::default() },
            TrialPlan { drifts: vec![1.5], ..TrialPlan::default() },
            TrialPlan { tau: Some(0.0), ..TrialPlan::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(serde_json::from_str::<TrialPlan>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn calibration_picks_geometric_midpoint_when_separable() {
        let c = calibrate_tau(&[0.5, 1.0, 2.0], &[8.0, 20.0], DecisionRule::SmallKlIsMatch).unwrap();
        assert_eq!(c.errors, 0);
        assert!((c.tau - 4.0).abs() < 1e-12);
        let c = calibrate_tau(&[8.0, 20.0], &[0.5, 2.0], DecisionRule::LargeKlIsMatch).unwrap();
        assert_eq!(c.errors, 0);
        assert!((c.tau - 4.0).abs() < 1e-12);
        let c = calibrate_tau(&[1.0, 5.0], &[3.0, 9.0], DecisionRule::SmallKlIsMatch).unwrap();
        assert_eq!(c.errors, 1);
    }

    #[test]
    fn trials_are_reproducible_and_order_independent() {
        let exp = Experiment::prepare(small_plan()).unwrap();
        let a = exp.run_trials().unwrap();
        let b = exp.run_trials_in_order(&[3, 1, 0, 2]).unwrap();
        assert_eq!(a, b);
        let serial = Experiment::prepare(TrialPlan { parallel: false, ..small_plan() }).unwrap();
        assert_eq!(serial.run_trials().unwrap().to_jsonl(), a.to_jsonl());
        for r in &a.rows {
            for v in [r.tpr, r.fpr].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn sweeps_agree_with_trials_on_the_copy_condition() {
        let exp = Experiment::prepare(small_plan()).unwrap();
        let trials = exp.run_trials().unwrap();
        let copy = trials.row("source-copy").unwrap();
        let temp = exp.temperature_sweep(&[1.5]).unwrap();
        let at_collect = temp.row("T=1.5").unwrap();
        assert_eq!(at_collect.tpr, copy.tpr);
        assert_eq!(at_collect.mean_kl_match, copy.mean_kl_match);
        let drift = exp.drift_sweep(&[0.0]).unwrap();
        let zero = drift.row("drift=0").unwrap();
        assert_eq!(zero.tpr, copy.tpr);
        assert_eq!(zero.mean_kl_match, copy.mean_kl_match);
        assert_eq!(temp.rows.len(), 1);
        assert!(exp.temperature_sweep(&[]).is_err());
    }

    #[test]
    fn fixed_tau_skips_calibration() {
        let exp = Experiment::prepare(TrialPlan { tau: Some(3.0), ..small_plan() }).unwrap();
        assert_eq!(exp.tau(), 3.0);
        assert!(exp.calibration().is_none());
    }
}
