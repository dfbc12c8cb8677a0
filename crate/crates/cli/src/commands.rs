//! The four pipeline commands. Each reads the experiment config, writes its
//! outputs under the output directory and returns what it wrote.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use offeval_core::dataset::{load_log, snapshot_at, InteractionLog, ItemId, Snapshot};
use offeval_core::debias::{
    item_distribution, optimize_weights, write_trace_csv, ItemDistribution, Optimized, StopReason,
    TraceRow, WeightVector,
};
use offeval_core::protocol::{evaluate_exhaustive, evaluate_stochastic, EvaluationResult, SamplingConfig};
use offeval_core::recommend::{ConstantRecommender, CosineCf, NaiveCf, Recommender};
use offeval_core::rng::derive_seed;
use offeval_core::simulate::{
    frequent_unrecommended_items, item_probability_series, most_recommended_items, run_timeline,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ItemRef, Method, PValue, RecommenderKind};

pub const SCORES_SCHEMA: &str = "# offeval scores v1";
pub const DISTRIBUTION_SCHEMA: &str = "# offeval distribution v1";
pub const REPORT_SCHEMA: &str = "offeval report v1";

fn create_out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

/// Runs the simulator and writes `<out>/log.csv`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let sim = cfg.simulation()?;
    let log = run_timeline(sim)?;
    let path = create_out_dir(cfg)?.join("log.csv");
    let mut out = create(&path)?;
    log.write_csv(&mut out)?;
    out.flush()?;
    Ok(path)
}

pub fn read_log(cfg: &ExperimentConfig) -> Result<InteractionLog> {
    let path = cfg.log_path();
    let file = File::open(&path).with_context(|| format!("cannot read log {}", path.display()))?;
    load_log(BufReader::new(file)).with_context(|| format!("invalid log {}", path.display()))
}

/// A configured recommender bound to the items of a log.
pub struct Resolved {
    pub name: String,
    pub recommender: Box<dyn Recommender>,
    /// Item names of constant lists.
    pub items: Option<Vec<String>>,
}

fn resolve_item(log: &InteractionLog, item: &ItemRef) -> Result<ItemId> {
    let name = item.to_string();
    log.item_by_name(&name)
        .with_context(|| format!("item `{name}` does not occur in the log"))
}

fn constant(log: &InteractionLog, name: &str, items: Vec<ItemId>, exclude: bool) -> Result<Resolved> {
    if items.is_empty() {
        bail!("recommender `{name}` resolves to an empty item list");
    }
    let names = items.iter().map(|&i| log.item_name(i).to_string()).collect();
    let g = ConstantRecommender::new(items)?
        .excluding_profile(exclude)
        .named(name);
    Ok(Resolved {
        name: name.to_string(),
        recommender: Box::new(g),
        items: Some(names),
    })
}

pub fn resolve_recommenders(cfg: &ExperimentConfig, log: &InteractionLog) -> Result<Vec<Resolved>> {
    let ev = cfg.evaluation()?;
    ev.recommenders
        .iter()
        .map(|entry| {
            let name = entry.name.as_str();
            match &entry.kind {
                RecommenderKind::Constant {
                    items,
                    exclude_profile,
                } => {
                    let ids = items
                        .iter()
                        .map(|i| resolve_item(log, i))
                        .collect::<Result<Vec<_>>>()?;
                    constant(log, name, ids, *exclude_profile)
                }
                RecommenderKind::MostRecommended { from, to, n } => {
                    constant(log, name, most_recommended_items(log, *from, *to, *n), false)
                }
                RecommenderKind::FrequentUnrecommended { at, from, to, n } => constant(
                    log,
                    name,
                    frequent_unrecommended_items(log, *at, *from, *to, *n),
                    false,
                ),
                RecommenderKind::Cosine { variant } => Ok(Resolved {
                    name: name.to_string(),
                    recommender: Box::new(CosineCf { variant: *variant }),
                    items: None,
                }),
                RecommenderKind::Naive => Ok(Resolved {
                    name: name.to_string(),
                    recommender: Box::new(NaiveCf),
                    items: None,
                }),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Classical,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub t: f64,
    pub recommender: String,
    pub mode: Weighting,
    pub p: Option<PValue>,
    pub score: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Reference marginal at `t0` with unit weights.
pub fn reference_distribution(log: &InteractionLog, t0: f64) -> Result<ItemDistribution> {
    let s0 = snapshot_at(log, t0);
    item_distribution(&s0, &WeightVector::ones(log.n_item_universe()))
        .with_context(|| format!("no interactions at t0 = {t0}"))
}

fn optimize(
    cfg: &ExperimentConfig,
    target: &ItemDistribution,
    s1: &Snapshot,
    p: PValue,
) -> Result<Optimized> {
    let out = optimize_weights(target, s1, &cfg.optimizer.with_p(p))?;
    if !out.converged() {
        eprintln!(
            "warning: optimizer for p={p} at t={} stopped before convergence ({:?})",
            s1.time(),
            out.stop
        );
    }
    Ok(out)
}

fn run_one(
    cfg: &ExperimentConfig,
    g: &dyn Recommender,
    snapshot: &Snapshot,
    weights: Option<&WeightVector>,
    seed_label: &str,
) -> Result<EvaluationResult> {
    let ev = cfg.evaluation()?;
    Ok(match ev.method {
        Method::Exhaustive => evaluate_exhaustive(g, snapshot, weights, ev.k)?,
        Method::Stochastic => {
            let seed = derive_seed(cfg.seed, seed_label);
            let sampling = match weights {
                Some(w) => SamplingConfig::weighted(ev.n_draws, seed, w.clone()),
                None => SamplingConfig::classical(ev.n_draws, seed),
            };
            evaluate_stochastic(g, snapshot, &sampling, ev.k)?
        }
    })
}

/// Scores every recommender at every time, classically and once per `p`.
pub fn evaluate_log(cfg: &ExperimentConfig, log: &InteractionLog) -> Result<Vec<ScoreRow>> {
    let ev = cfg.evaluation()?;
    let recommenders = resolve_recommenders(cfg, log)?;
    let target = if ev.p_values.is_empty() {
        None
    } else {
        Some(reference_distribution(log, ev.t0)?)
    };
    let mut rows = Vec::new();
    for &t in &ev.times {
        let snapshot = snapshot_at(log, t);
        let weights: Vec<(PValue, WeightVector)> = match &target {
            Some(target) => ev
                .p_values
                .iter()
                .map(|&p| Ok((p, optimize(cfg, target, &snapshot, p)?.weights)))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        for r in &recommenders {
            let label = format!("evaluate/{t}/{}/classical", r.name);
            let res = run_one(cfg, r.recommender.as_ref(), &snapshot, None, &label)
                .with_context(|| format!("evaluating `{}` at t = {t}", r.name))?;
            rows.push(row(t, &r.name, Weighting::Classical, None, &res));
            for (p, w) in &weights {
                let label = format!("evaluate/{t}/{}/weighted/{p}", r.name);
                let res = run_one(cfg, r.recommender.as_ref(), &snapshot, Some(w), &label)?;
                rows.push(row(t, &r.name, Weighting::Weighted, Some(*p), &res));
            }
        }
    }
    Ok(rows)
}

fn row(t: f64, name: &str, mode: Weighting, p: Option<PValue>, res: &EvaluationResult) -> ScoreRow {
    ScoreRow {
        t,
        recommender: name.to_string(),
        mode,
        p,
        score: res.score,
        ci_low: res.ci_low,
        ci_high: res.ci_high,
    }
}

/// Runs [`evaluate_log`] on the configured log and writes `<out>/scores.csv`.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<ScoreRow>> {
    let log = read_log(cfg)?;
    let rows = evaluate_log(cfg, &log)?;
    let ev = cfg.evaluation()?;
    let path = create_out_dir(cfg)?.join("scores.csv");
    let mut out = create(&path)?;
    writeln!(
        out,
        "{SCORES_SCHEMA} method={} n_draws={} k={} t0={}",
        ev.method, ev.n_draws, ev.k, ev.t0
    )?;
    let mut w = csv::Writer::from_writer(out);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    reader
        .deserialize()
        .map(|r| r.with_context(|| format!("invalid row in {}", path.display())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasRun {
    pub p: PValue,
    pub t0: f64,
    pub t1: f64,
    pub d_initial: f64,
    pub d_final: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub converged: bool,
    pub floored: usize,
    pub active: Vec<String>,
    pub weights_file: String,
    pub trace_file: String,
    pub distribution_file: String,
}

/// Optimizes the weights at `t1` once per `p` and writes the weights, the
/// optimizer trace and the three item marginals for each.
pub fn debias(cfg: &ExperimentConfig) -> Result<Vec<DebiasRun>> {
    let ev = cfg.evaluation()?;
    let log = read_log(cfg)?;
    let t1 = cfg.t1()?;
    let target = reference_distribution(&log, ev.t0)?;
    let s1 = snapshot_at(&log, t1);
    let n_items = log.n_item_universe();
    let unweighted = item_distribution(&s1, &WeightVector::ones(n_items))
        .with_context(|| format!("no interactions at t1 = {t1}"))?;
    let out_dir = create_out_dir(cfg)?;

    let mut runs = Vec::new();
    for &p in &ev.p_values {
        let opt = optimize(cfg, &target, &s1, p)?;
        let weighted = item_distribution(&s1, &opt.weights)?;
        let weights_file = format!("weights_p{p}.csv");
        let trace_file = format!("trace_p{p}.csv");
        let distribution_file = format!("distribution_p{p}.csv");

        let mut out = create(&out_dir.join(&weights_file))?;
        opt.weights
            .write_csv(&mut out, |i| log.item_name(i).to_string())?;
        out.flush()?;
        let mut out = create(&out_dir.join(&trace_file))?;
        write_trace_csv(&mut out, &opt.trace)?;
        out.flush()?;

        let mut out = create(&out_dir.join(&distribution_file))?;
        writeln!(out, "{DISTRIBUTION_SCHEMA} t0={} t1={t1} p={p}", ev.t0)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item_id", "p_t0", "p_t1", "p_t1_weighted", "active"])?;
        for i in 0..n_items {
            let item = ItemId(i as u32);
            let active = opt.active.items().contains(&item);
            w.write_record([
                log.item_name(item).to_string(),
                target.get(item).to_string(),
                unweighted.get(item).to_string(),
                weighted.get(item).to_string(),
                u8::from(active).to_string(),
            ])?;
        }
        w.flush()?;

        runs.push(DebiasRun {
            p,
            t0: ev.t0,
            t1,
            d_initial: opt.initial_divergence(),
            d_final: opt.final_divergence(),
            iterations: opt.trace.last().map_or(0, |r| r.iter),
            stop: opt.stop,
            converged: opt.converged(),
            floored: opt.floored,
            active: opt
                .active
                .items()
                .iter()
                .map(|&i| log.item_name(i).to_string())
                .collect(),
            weights_file,
            trace_file,
            distribution_file,
        });
    }
    let mut out = create(&out_dir.join("debias.json"))?;
    serde_json::to_writer_pretty(&mut out, &runs)?;
    writeln!(out)?;
    out.flush()?;
    Ok(runs)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    reader
        .deserialize()
        .map(|r| r.with_context(|| format!("invalid row in {}", path.display())))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionRow {
    pub item_id: String,
    pub p_t0: f64,
    pub p_t1: f64,
    pub p_t1_weighted: f64,
    pub active: u8,
}

pub fn read_distribution(path: &Path) -> Result<Vec<DistributionRow>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    reader
        .deserialize()
        .map(|r| r.with_context(|| format!("invalid row in {}", path.display())))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbabilitySeries {
    pub times: Vec<f64>,
    /// Item name to `P_t(i)` at each time.
    pub items: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub seed: u64,
    pub log: String,
    pub n_interactions: usize,
    pub scores: Vec<ScoreRow>,
    pub debias: Vec<DebiasRun>,
    pub traces: BTreeMap<String, Vec<TraceRow>>,
    pub probabilities: ProbabilitySeries,
}

/// Merges the emitted CSVs and the `P_t(i)` series over the evaluation grid
/// into `<out>/report.json`. Missing score or debias outputs are left empty.
pub fn report(cfg: &ExperimentConfig) -> Result<Report> {
    let ev = cfg.evaluation()?;
    let log = read_log(cfg)?;
    let out_dir = create_out_dir(cfg)?;

    let scores_path = out_dir.join("scores.csv");
    let scores = if scores_path.exists() {
        read_scores(&scores_path)?
    } else {
        Vec::new()
    };
    let debias_path = out_dir.join("debias.json");
    let debias: Vec<DebiasRun> = if debias_path.exists() {
        let file = File::open(&debias_path)?;
        serde_json::from_reader(BufReader::new(file))
            .with_context(|| format!("invalid {}", debias_path.display()))?
    } else {
        Vec::new()
    };
    let mut traces = BTreeMap::new();
    for run in &debias {
        traces.insert(run.p.to_string(), read_trace(&out_dir.join(&run.trace_file))?);
    }

    let series = item_probability_series(&log, &ev.times);
    let items = (0..log.n_item_universe())
        .map(|i| {
            let item = ItemId(i as u32);
            (
                log.item_name(item).to_string(),
                series.iter().map(|d| d.get(item)).collect(),
            )
        })
        .collect();

    let report = Report {
        schema: REPORT_SCHEMA.to_string(),
        seed: cfg.seed,
        log: cfg.log_path().display().to_string(),
        n_interactions: log.len(),
        scores,
        debias,
        traces,
        probabilities: ProbabilitySeries {
            times: ev.times.clone(),
            items,
        },
    };
    let mut out = create(&out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(report)
}
