use std::collections::BTreeSet;

use osal_core::io::{json_f64, write_trace};
use osal_core::{
    run_active_learning, AlConfig, AlRun, DatasetSplit, QueryStrategy, SimulatedOracle,
    StrategyKind,
};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::data::{json_bytes, load_split, manifest_comment, Outputs};
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct AlCell {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub manifest: String,
    pub pool_size: usize,
    /// Query count reached at each configured budget.
    pub queries: Vec<usize>,
    pub novel_acc: Vec<f64>,
    pub combined_acc: Vec<f64>,
    pub novel_degenerate: Vec<bool>,
    pub run: AlRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub strategy: StrategyKind,
    pub budget: f64,
    pub novel_acc: f64,
    pub combined_acc: f64,
}

#[derive(Debug, Clone)]
pub struct AlReport {
    pub manifest: String,
    pub budgets: Vec<f64>,
    /// Ordered by strategy (config order), then seed.
    pub cells: Vec<AlCell>,
    /// Seed means, ordered by strategy then budget.
    pub curves: Vec<CurveRow>,
}

pub fn budget_queries(fraction: f64, pool_size: usize) -> usize {
    ((fraction * pool_size as f64).round() as usize).min(pool_size)
}

/// `ids(final C) = ids(initial C) ∪ queried`, no repeats, and the remaining
/// pool is exactly what was not queried.
pub fn check_conservation(
    split: &DatasetSplit,
    run: &AlRun,
    budget: usize,
) -> Result<(), CliError> {
    let fail = |m: &str| Err(CliError::Invariant(m.to_owned()));
    let queried: Vec<&str> = run.trace.queried_ids().collect();
    let unique: BTreeSet<&str> = queried.iter().copied().collect();
    if queried.len() != budget {
        return fail("trace length differs from the budget");
    }
    if unique.len() != queried.len() {
        return fail("a pool member was queried twice");
    }
    let mut expected: BTreeSet<&str> = split.train.ids().collect();
    if unique.iter().any(|id| expected.contains(id)) {
        return fail("a training id was queried");
    }
    expected.extend(&unique);
    let labeled: BTreeSet<&str> = run.labeled.ids().collect();
    if labeled != expected || labeled.len() != run.labeled.len() {
        return fail("final labelled set is not the initial set plus the queries");
    }
    let remaining: BTreeSet<&str> = run
        .remaining
        .iter()
        .map(|&i| split.observed.members()[i].id())
        .collect();
    let pool: BTreeSet<&str> = split.observed.members().iter().map(|e| e.id()).collect();
    let expected_remaining: BTreeSet<&str> = pool.difference(&unique).copied().collect();
    if remaining != expected_remaining {
        return fail("remaining pool is not the initial pool minus the queries");
    }
    Ok(())
}

fn run_cell(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    strategy: StrategyKind,
    seed: u64,
) -> Result<AlCell, CliError> {
    let pool_size = split.observed.len();
    let queries: Vec<usize> = cfg
        .budgets
        .iter()
        .map(|&b| budget_queries(b, pool_size))
        .collect();
    let max = queries.iter().copied().max().unwrap_or(0);
    let mut al = AlConfig::new(
        max,
        QueryStrategy::new(strategy, seed),
        cfg.kernel_params()?,
    );
    al.snapshot_at = queries.clone();
    al.eval_every = cfg.eval_every;
    let mut oracle = SimulatedOracle::new(&split.observed);
    let run = run_active_learning(split, &al, &mut oracle)
        .map_err(|aborted| CliError::from(aborted.error))?;
    check_conservation(split, &run, max)?;
    let mut novel_acc = Vec::new();
    let mut combined_acc = Vec::new();
    let mut novel_degenerate = Vec::new();
    for &q in &queries {
        let snap = run
            .trace
            .snapshots
            .iter()
            .find(|s| s.step == q)
            .ok_or_else(|| CliError::Invariant(format!("no snapshot after {q} queries")))?;
        novel_acc.push(snap.novel_acc);
        combined_acc.push(snap.combined_acc);
        novel_degenerate.push(snap.novel_degenerate);
    }
    Ok(AlCell {
        strategy,
        seed,
        manifest: cfg.manifest_hash(&[seed]),
        pool_size,
        queries,
        novel_acc,
        combined_acc,
        novel_degenerate,
        run,
    })
}

fn trace_file(cell: &AlCell, sigma: f64) -> String {
    let header = json!({
        "manifest": cell.manifest,
        "strategy": cell.strategy.as_str(),
        "seed": cell.seed,
        "pool_size": cell.pool_size,
        "budget": cell.run.trace.steps.len(),
        "sigma": sigma,
    });
    write_trace(&cell.run.trace, Some(&header))
}

fn curves_csv(report: &AlReport) -> String {
    let mut out = String::new();
    for c in manifest_comment(&report.manifest) {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("strategy,budget,novel_acc,combined_acc\n");
    for r in &report.curves {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.strategy, r.budget, r.novel_acc, r.combined_acc
        ));
    }
    out
}

impl AlReport {
    pub fn to_json(&self) -> Value {
        let mut strategies = Map::new();
        let mut kinds: Vec<StrategyKind> = Vec::new();
        for c in &self.cells {
            if !kinds.contains(&c.strategy) {
                kinds.push(c.strategy);
            }
        }
        for kind in kinds {
            let rows: Vec<Value> = self
                .budgets
                .iter()
                .enumerate()
                .map(|(b, &budget)| {
                    let curve = self
                        .curves
                        .iter()
                        .find(|r| r.strategy == kind && r.budget == budget)
                        .expect("curve row per budget");
                    let per_seed: Vec<Value> = self
                        .cells
                        .iter()
                        .filter(|c| c.strategy == kind)
                        .map(|c| {
                            json!({
                                "seed": c.seed,
                                "queries": c.queries[b],
                                "novel_acc": json_f64(c.novel_acc[b]),
                                "combined_acc": json_f64(c.combined_acc[b]),
                                "novel_degenerate": c.novel_degenerate[b],
                            })
                        })
                        .collect();
                    json!({
                        "budget": budget,
                        "novel_acc": json_f64(curve.novel_acc),
                        "combined_acc": json_f64(curve.combined_acc),
                        "per_seed": per_seed,
                    })
                })
                .collect();
            strategies.insert(kind.as_str().into(), Value::Array(rows));
        }
        json!({
            "manifest": self.manifest,
            "budgets": self.budgets,
            "accuracy_on": "test",
            "strategies": strategies,
        })
    }
}

/// One run per (strategy, seed) up to the largest budget, read off at every
/// budget.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<(AlReport, Outputs), CliError> {
    let splits: Vec<(u64, DatasetSplit)> = cfg
        .seeds
        .par_iter()
        .map(|&s| Ok((s, load_split(cfg, s)?)))
        .collect::<Result<_, CliError>>()?;
    let jobs: Vec<(StrategyKind, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&k| (0..splits.len()).map(move |i| (k, i)))
        .collect();
    let cells: Vec<AlCell> = jobs
        .par_iter()
        .map(|&(k, i)| run_cell(cfg, &splits[i].1, k, splits[i].0))
        .collect::<Result<_, CliError>>()?;

    let n = splits.len() as f64;
    let mut curves = Vec::new();
    for &kind in &cfg.strategies {
        let mine: Vec<&AlCell> = cells.iter().filter(|c| c.strategy == kind).collect();
        for (b, &budget) in cfg.budgets.iter().enumerate() {
            curves.push(CurveRow {
                strategy: kind,
                budget,
                novel_acc: mine.iter().map(|c| c.novel_acc[b]).sum::<f64>() / n,
                combined_acc: mine.iter().map(|c| c.combined_acc[b]).sum::<f64>() / n,
            });
        }
    }
    let report = AlReport {
        manifest: cfg.manifest_hash(&cfg.seeds),
        budgets: cfg.budgets.clone(),
        cells,
        curves,
    };
    let mut out = Outputs::default();
    for c in &report.cells {
        out.add(
            format!("traces/{}_seed{}.jsonl", c.strategy, c.seed),
            trace_file(c, cfg.sigma),
        );
    }
    out.add("al_curves.csv", curves_csv(&report));
    out.add("al_report.json", json_bytes(&report.to_json()));
    Ok((report, out))
}
