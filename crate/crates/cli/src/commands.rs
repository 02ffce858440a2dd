use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cotsrf_core::collect::{collect_to_file, CollectOptions, CorpusRole, EndpointConfig, HttpEndpoint, ResponseCorpus, RetryPolicy};
use cotsrf_core::corpus::{build_query_sets, load_questions, synthetic_questions, QuerySet, DEFAULT_COT_PROMPT};
use cotsrf_core::divergence::{verify_corpora, ThresholdTable, Verdict};
use cotsrf_core::encoder::{self, sample_triplets, train as train_encoder, triplet_losses, EncoderParams, TrainConfig, Triplet};
use cotsrf_core::harness::{Experiment, HarnessError, MetricsTable, TrialPlan};
use cotsrf_core::seed;
use cotsrf_core::stylesim::{default_profile, perturb_profile, serve, SimEndpoint, StyleProfile};

use crate::{BuildQueries, Collect, EvalKind, Evaluate, GradCheck, Stylesim, Train, Verify};

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A built-in family id, or a path to a profile JSON file.
fn load_profile(spec: &str) -> Result<StyleProfile> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(StyleProfile::load(path)?);
    }
    default_profile(spec).with_context(|| format!("`{spec}` is neither a profile file nor a built-in family"))
}

fn read_corpus(path: &Path) -> Result<ResponseCorpus> {
    ResponseCorpus::read(path).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn build_queries(a: BuildQueries) -> Result<()> {
    let questions = match (&a.questions, a.synthetic) {
        (Some(p), _) => load_questions(p)?,
        (None, Some(n)) => synthetic_questions(n, a.seed),
        (None, None) => bail!("pass --questions <file> or --synthetic <n>"),
    };
    let prompt = a.prompt.as_deref().unwrap_or(DEFAULT_COT_PROMPT);
    let (main, held) = build_query_sets(&questions, prompt, a.count, a.holdout, a.seed)?;
    ensure_parent(&a.out)?;
    main.save(&a.out)?;
    println!("wrote {} queries to {}", main.len(), a.out.display());
    if let Some(h) = held {
        let path = a.holdout_out.unwrap_or_else(|| {
            let stem = a.out.file_stem().unwrap_or_default().to_string_lossy();
            a.out.with_file_name(format!("{stem}.holdout.jsonl"))
        });
        h.save(&path)?;
        println!("wrote {} holdout queries to {}", h.len(), path.display());
    }
    Ok(())
}

pub fn collect(a: Collect) -> Result<()> {
    let cfg = EndpointConfig::load(&a.endpoint)?;
    let qs = QuerySet::load(&a.queries)?;
    let role = CorpusRole::from(a.role);
    let opts = CollectOptions {
        parallelism: a.parallelism,
        retry: RetryPolicy::from(&cfg),
        allow_few_samples: a.allow_few_samples,
    };
    let (samples, temperature) = match role {
        CorpusRole::Suspect => (1, None),
        _ => (a.samples, Some(a.temperature)),
    };
    let endpoint = HttpEndpoint::new(cfg)?;
    ensure_parent(&a.out)?;
    let path = runtime()?.block_on(collect_to_file(
        &endpoint,
        &qs,
        role,
        samples,
        temperature,
        &opts,
        &a.out,
        a.resume,
    ))?;
    let corpus = read_corpus(&path)?;
    println!(
        "wrote {} records ({} error rows) to {}",
        corpus.records.len(),
        corpus.error_rows(),
        path.display()
    );
    Ok(())
}

pub fn stylesim(cmd: Stylesim) -> Result<()> {
    match cmd {
        Stylesim::Serve {
            profile,
            temperature,
            bind,
            empty_rate,
        } => {
            let sim = SimEndpoint::new(load_profile(&profile)?, temperature)?.with_empty_rate(empty_rate);
            runtime()?.block_on(async {
                let server = serve(sim, &bind).await?;
                println!("serving {} at {}", profile, server.base_url());
                tokio::select! {
                    _ = server.run_forever() => {}
                    _ = tokio::signal::ctrl_c() => {}
                }
                Ok(())
            })
        }
        Stylesim::Perturb {
            profile,
            drift,
            seed,
            out,
        } => {
            let p = perturb_profile(&load_profile(&profile)?, drift, seed)?;
            ensure_parent(&out)?;
            p.save(&out)?;
            println!("wrote {} to {}", p.family_id, out.display());
            Ok(())
        }
        Stylesim::Export { profile, out } => {
            ensure_parent(&out)?;
            load_profile(&profile)?.save(&out)?;
            Ok(())
        }
        Stylesim::Generate {
            profile,
            queries,
            role,
            samples,
            temperature,
            seed,
            out,
        } => {
            let mut p = load_profile(&profile)?;
            if let Some(s) = seed {
                p = p.reseeded(s);
            }
            let qs = QuerySet::load(&queries)?;
            let role = CorpusRole::from(role);
            let samples = if role == CorpusRole::Suspect { 1 } else { samples };
            let corpus = SimEndpoint::new(p, temperature)?.simulate_corpus(&qs, role, samples);
            ensure_parent(&out)?;
            corpus.write(&out)?;
            println!("wrote {} records to {}", corpus.records.len(), out.display());
            Ok(())
        }
    }
}

pub fn train(a: Train) -> Result<()> {
    let source = read_corpus(&a.source)?;
    let benign = a.benign.iter().map(|p| read_corpus(p)).collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        margin: a.margin,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: a.seed,
        feature_dim: a.features,
        hidden_dim: a.hidden,
        output_dim: a.output,
        ..TrainConfig::default()
    };
    let (params, log) = train_encoder(&source, &benign, &cfg)?;
    ensure_parent(&a.out)?;
    params.save(&a.out, Some(&cfg))?;
    if let Some(path) = &a.log {
        write_json(path, &log)?;
    }
    println!(
        "trained {} epochs: loss {:.4} -> {:.4}; model written to {}",
        cfg.epochs,
        log.initial_loss,
        log.final_loss(),
        a.out.display()
    );
    Ok(())
}

/// Default triplet source when no corpora are given: three built-in families.
fn simulator_corpora() -> Result<(ResponseCorpus, Vec<ResponseCorpus>)> {
    let questions = synthetic_questions(50, 0);
    let (qs, _) = build_query_sets(&questions, DEFAULT_COT_PROMPT, 50, 0, 0)?;
    let make = |id: &str, role| -> Result<ResponseCorpus> {
        let p = default_profile(id).context("built-in family")?;
        Ok(SimEndpoint::new(p, 1.5)?.simulate_corpus(&qs, role, 4))
    };
    Ok((
        make("aurora", CorpusRole::Source)?,
        vec![make("basalt", CorpusRole::Benign)?, make("cobalt", CorpusRole::Benign)?],
    ))
}

/// Hinge-active triplets drawn from successive epochs until `want` are found.
pub fn active_triplets(
    params: &EncoderParams,
    source: &ResponseCorpus,
    benign: &[ResponseCorpus],
    margin: f64,
    want: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let mut found = Vec::new();
    for epoch in 0..200u64 {
        let candidates = sample_triplets(source, benign, seed!(seed, "grad-check", epoch))?;
        let losses = triplet_losses(params, &candidates, margin)?;
        found.extend(candidates.into_iter().zip(losses).filter(|(_, l)| *l > 1e-3).map(|(t, _)| t));
        if found.len() >= want {
            found.truncate(want);
            return Ok(found);
        }
    }
    bail!(
        "only {} hinge-active triplets found under this model (need {want}); \
         a fully trained encoder may satisfy the margin everywhere",
        found.len()
    )
}

pub fn grad_check(a: GradCheck) -> Result<()> {
    let (params, _) = EncoderParams::load(&a.model)?;
    let (source, benign) = match &a.source {
        Some(s) => (
            read_corpus(s)?,
            a.benign.iter().map(|p| read_corpus(p)).collect::<Result<Vec<_>>>()?,
        ),
        None => simulator_corpora()?,
    };
    let triplets = active_triplets(&params, &source, &benign, a.margin, a.batches * a.batch_size, a.seed)?;
    let mut worst: f64 = 0.0;
    for (b, batch) in triplets.chunks(a.batch_size).enumerate() {
        let r = encoder::grad_check(&params, batch, a.margin, a.step, seed!(a.seed, "coords", b as u64))?;
        println!(
            "batch {b}: max relative error {:.3e} over {} coordinates (worst {})",
            r.max_rel_error, r.coordinates, r.worst
        );
        worst = worst.max(r.max_rel_error);
    }
    if worst >= a.tolerance {
        bail!("gradient check failed: max relative error {worst:.3e} >= {:.0e}", a.tolerance);
    }
    println!("gradient check passed: max relative error {worst:.3e} < {:.0e}", a.tolerance);
    Ok(())
}

pub fn verify(a: Verify) -> Result<()> {
    let table = match &a.thresholds {
        Some(p) => ThresholdTable::load(p)?,
        None => ThresholdTable::default(),
    };
    let tau = match (a.tau, &a.scenario) {
        (Some(t), _) => t,
        (None, Some(s)) => table.get(s).with_context(|| format!("no threshold for scenario `{s}`"))?,
        (None, None) => bail!("pass --tau or --scenario"),
    };
    let rule = a.decision_rule.map(Into::into).unwrap_or(table.decision_rule);
    let source = read_corpus(&a.source)?;
    let suspect = read_corpus(&a.suspect)?;
    let (model, _) = EncoderParams::load(&a.model)?;
    let report = verify_corpora(&source, &suspect, &model, tau, rule)?;
    write_json(&a.report, &report)?;
    let verdict = match report.verdict {
        Verdict::Infringing => "INFRINGING",
        Verdict::Benign => "benign",
    };
    println!(
        "{}: KL = {:.4}, tau = {} ({}) -> {verdict}",
        report.suspect_model_id, report.kl, tau, rule
    );
    Ok(())
}

fn write_table(out: &Path, name: &str, table: &MetricsTable) -> Result<()> {
    fs::write(out.join(format!("{name}.jsonl")), table.to_jsonl())?;
    fs::write(out.join(format!("{name}.txt")), table.to_text())?;
    Ok(())
}

pub fn evaluate(a: Evaluate) -> Result<()> {
    let mut plan = TrialPlan::load(&a.plan)?;
    if a.serial {
        plan.parallel = false;
    }
    let exp = match &a.model {
        Some(p) => Experiment::with_encoder(plan, EncoderParams::load(p)?.0)?,
        None => Experiment::prepare(plan)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("experiment.json"), &exp.summary())?;
    let name = match a.kind {
        EvalKind::Trials => "trials",
        EvalKind::TempSweep => "temp-sweep",
        EvalKind::DriftSweep => "drift-sweep",
    };
    let result = match a.kind {
        EvalKind::Trials => exp.run_trials(),
        EvalKind::TempSweep => exp.temperature_sweep(&exp.plan().temperatures),
        EvalKind::DriftSweep => exp.drift_sweep(&exp.plan().drifts),
    };
    match result {
        Ok(table) => {
            write_table(&a.out, name, &table)?;
            print!("{}", table.to_text());
            Ok(())
        }
        Err(HarnessError::Aborted {
            condition,
            trial,
            message,
            partial,
        }) => {
            let path: PathBuf = a.out.join(format!("{name}.partial.jsonl"));
            fs::write(&path, partial.to_jsonl())?;
            bail!("trial {trial} of `{condition}` failed: {message}; partial results in {}", path.display())
        }
        Err(e) => Err(e.into()),
    }
}
