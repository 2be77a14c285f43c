//! The five experiment commands. Each returns a [`Table`] plus a flag that
//! becomes the process exit status.
//!
//! Independent cells run on the current rayon pool and are collected in
//! cell-key order, so output never depends on the worker count.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use tempgate::attention::{l1_embedding_max_error, AttentionSpec, Method, Model};
use tempgate::autodiff::GradCheckOptions;
use tempgate::csbm::csbm_sample;
use tempgate::graph::LabeledDataset;
use tempgate::io::{load_dataset, DatasetFormat};
use tempgate::noise::{apply_gaussian, apply_missing};
use tempgate::rng::{mix_seed, stream_rng};
use tempgate::theory::verify::run_verification;
use tempgate::training::{model_grad_check, random_dataset, train_prepared, Prepared, RunResult};

use crate::config::{Command, DatasetConfig, ExperimentConfig};
use crate::stats::{descending_ranks, mean, sample_std};
use crate::table::{num, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub table: Table,
    /// Some requested check failed.
    pub failed: bool,
}

impl Outcome {
    fn ok(table: Table) -> Self {
        Self { table, failed: false }
    }
}

pub fn execute(cmd: Command, cfg: &ExperimentConfig, rank_inputs: &[PathBuf]) -> Result<Outcome> {
    cfg.check_command(cmd)?;
    match cmd {
        Command::Train => run_train(cfg),
        Command::CsbmVerify => run_verify(cfg),
        Command::NoiseSweep => run_noise_sweep(cfg),
        Command::GradCheck => run_grad_check(cfg),
        Command::Rank => run_rank(cfg, rank_inputs),
    }
}

/// Loads the configured dataset. CSBM worlds get a seeded random split.
pub fn load(cfg: &DatasetConfig) -> Result<LabeledDataset> {
    let ds = match (&cfg.path, &cfg.csbm) {
        (Some(p), None) => load_dataset(p, DatasetFormat::EdgeText).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(params)) => {
            csbm_sample(params)?.with_random_split(cfg.train_fraction, cfg.val_fraction, mix_seed(params.seed, 0x5EED))?
        }
        _ => bail!("config error: [dataset] needs exactly one of 'path' or 'csbm'"),
    };
    if cfg.normalize {
        let f = ds.features.row_normalized();
        return Ok(ds.with_features(f)?);
    }
    Ok(ds)
}

fn dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let d = cfg.dataset.as_ref().context("config error: missing [dataset]")?;
    load(d)
}

fn spec_for(cfg: &ExperimentConfig, m: Method, ds: &LabeledDataset) -> AttentionSpec {
    cfg.model.spec(m, ds.features.cols(), ds.num_classes)
}

fn run_cells(cfg: &ExperimentConfig, cells: &[(Method, u64)], data: &Prepared, ds: &LabeledDataset) -> Result<Vec<RunResult>> {
    cfg.train.validate()?;
    cells
        .par_iter()
        .map(|&(m, seed)| {
            let spec = spec_for(cfg, m, ds);
            let tc = tempgate::training::TrainConfig { seed, ..cfg.train.clone() };
            train_prepared(&spec, data, &tc).with_context(|| format!("{m}, seed {seed}"))
        })
        .collect()
}

fn layer_cells(values: &[f64], layers: usize) -> Vec<String> {
    (0..layers).map(|l| num(values.get(l).copied())).collect()
}

pub const TRAIN_COLUMNS: [&str; 8] = [
    "row",
    "method",
    "seed",
    "test_metric",
    "test_std",
    "val_metric",
    "train_metric",
    "best_epoch",
];

/// Per-(method, seed) rows followed by one summary row per method holding
/// means over seeds (and the sample std of the test metric).
pub fn run_train(cfg: &ExperimentConfig) -> Result<Outcome> {
    let methods = cfg.methods(false)?;
    let ds = dataset(cfg)?;
    let data = Prepared::new(&ds)?;
    let seeds = cfg.seed_list();
    if seeds.is_empty() {
        bail!("config error: seeds must be at least 1");
    }
    let cells: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let results = run_cells(cfg, &cells, &data, &ds)?;

    let layers = cfg.model.layers;
    let mut cols: Vec<String> = TRAIN_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=layers).map(|l| format!("temperature_{l}")));
    cols.extend((1..=layers).map(|l| format!("gate_mean_{l}")));
    let mut table = Table::new(cols);
    for (mi, m) in methods.iter().enumerate() {
        let runs = &results[mi * seeds.len()..(mi + 1) * seeds.len()];
        for r in runs {
            let mut row = vec![
                "run".into(),
                m.name().into(),
                r.seed.to_string(),
                num(Some(r.test_metric).filter(|x| x.is_finite())),
                String::new(),
                num(Some(r.val_metric)),
                num(Some(r.train_metric)),
                r.best_epoch.to_string(),
            ];
            row.extend(layer_cells(&r.learned_temperatures, layers));
            row.extend(layer_cells(&r.gate_means, layers));
            table.push(row)?;
        }
        let pick = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
        let tests = pick(&|r| r.test_metric);
        let finite = tests.iter().all(|x| x.is_finite());
        let per_layer = |get: &dyn Fn(&RunResult) -> &Vec<f64>| -> Vec<f64> {
            if get(&runs[0]).is_empty() {
                return Vec::new();
            }
            (0..get(&runs[0]).len()).map(|l| mean(&pick(&|r| get(r)[l]))).collect()
        };
        let mut row = vec![
            "summary".into(),
            m.name().into(),
            String::new(),
            num(Some(mean(&tests)).filter(|_| finite)),
            num(Some(sample_std(&tests)).filter(|_| finite)),
            num(Some(mean(&pick(&|r| r.val_metric)))),
            num(Some(mean(&pick(&|r| r.train_metric)))),
            String::new(),
        ];
        row.extend(layer_cells(&per_layer(&|r| &r.learned_temperatures), layers));
        row.extend(layer_cells(&per_layer(&|r| &r.gate_means), layers));
        table.push(row)?;
    }
    Ok(Outcome::ok(table))
}

fn finite(x: f64) -> String {
    num(Some(x).filter(|v| v.is_finite()))
}

pub fn run_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let checks = run_verification(&cfg.verify)?;
    let mut table = Table::new(["check", "status", "estimate", "reference", "std_error", "detail"]);
    for c in &checks {
        let status = serde_json::to_value(c.status)?.as_str().unwrap_or_default().to_string();
        table.push(vec![
            c.name.clone(),
            status,
            finite(c.estimate),
            finite(c.reference),
            finite(c.std_error),
            c.detail.clone(),
        ])?;
    }
    Ok(Outcome {
        table,
        failed: checks.iter().any(|c| c.is_failure()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Noise {
    Gaussian(f64),
    Missing(f64),
}

pub const SWEEP_COLUMNS: [&str; 7] = ["noise", "level", "layer", "quantity", "value", "method", "seed"];

/// Trains every method at every noise level and seed and records the
/// learned per-layer temperatures and mean gate activations. Noise hits
/// the features the model sees (after any normalization) and reuses one
/// draw per seed across levels.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let methods = cfg.methods(false)?;
    let sw = &cfg.sweep;
    if sw.sigma.is_empty() && sw.rho.is_empty() {
        bail!("config error: the sweep grid is empty");
    }
    let ds = dataset(cfg)?;
    let seeds = cfg.seed_list();
    let levels: Vec<Noise> = sw
        .sigma
        .iter()
        .map(|&s| Noise::Gaussian(s))
        .chain(sw.rho.iter().map(|&r| Noise::Missing(r)))
        .collect();
    let mut cells = Vec::new();
    for &lv in &levels {
        for &m in &methods {
            for &s in &seeds {
                cells.push((lv, m, s));
            }
        }
    }
    let results: Vec<RunResult> = cells
        .par_iter()
        .map(|&(lv, m, seed)| -> Result<RunResult> {
            let noise_seed = mix_seed(seed, 0x401_5E);
            let f = match lv {
                Noise::Gaussian(s) => apply_gaussian(&ds.features, s, noise_seed)?,
                Noise::Missing(r) => apply_missing(&ds.features, r, sw.tau, noise_seed)?.0,
            };
            let noisy = ds.with_features(f)?;
            let data = Prepared::new(&noisy)?;
            let tc = tempgate::training::TrainConfig { seed, ..cfg.train.clone() };
            train_prepared(&spec_for(cfg, m, &ds), &data, &tc).with_context(|| format!("{m}, seed {seed}, {lv:?}"))
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new(SWEEP_COLUMNS);
    for (&(lv, m, seed), r) in cells.iter().zip(&results) {
        let (kind, level) = match lv {
            Noise::Gaussian(s) => ("gaussian", s),
            Noise::Missing(r) => ("missing", r),
        };
        for (quantity, values) in [("temperature", &r.learned_temperatures), ("gate_mean", &r.gate_means)] {
            for (l, v) in values.iter().enumerate() {
                table.push(vec![
                    kind.into(),
                    num(Some(level)),
                    (l + 1).to_string(),
                    quantity.into(),
                    num(Some(*v)),
                    m.name().into(),
                    seed.to_string(),
                ])?;
            }
        }
    }
    Ok(Outcome::ok(table))
}

/// Seed-averaged value per level for one (noise, method, quantity, layer)
/// slice of a sweep table, in level order of first appearance.
pub fn sweep_means(t: &Table, noise: &str, method: &str, quantity: &str, layer: usize) -> Result<Vec<(f64, f64)>> {
    let c: Vec<usize> = SWEEP_COLUMNS.iter().map(|n| t.column(n)).collect::<Result<_>>()?;
    let layer = layer.to_string();
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Vec<f64>> = HashMap::new();
    for r in &t.rows {
        if r[c[0]] == noise && r[c[5]] == method && r[c[3]] == quantity && r[c[2]] == layer {
            if !acc.contains_key(&r[c[1]]) {
                order.push(r[c[1]].clone());
            }
            acc.entry(r[c[1]].clone()).or_default().push(r[c[4]].parse()?);
        }
    }
    order
        .into_iter()
        .map(|lv| Ok((lv.parse()?, mean(&acc[&lv]))))
        .collect()
}

pub fn run_grad_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = &cfg.grad_check;
    let methods = cfg.methods(true)?;
    let mut table = Table::new(["check", "method", "max_error", "tolerance", "checked", "status"]);
    let status = |ok: bool| if ok { "pass" } else { "fail" }.to_string();
    let mut failed = false;

    let emb = l1_embedding_max_error(g.embedding_draws, g.seed)?;
    let ok = emb < g.embedding_tolerance;
    failed |= !ok;
    table.push(vec![
        "gatv2_l1_embedding".into(),
        String::new(),
        num(Some(emb)),
        num(Some(g.embedding_tolerance)),
        g.embedding_draws.to_string(),
        status(ok),
    ])?;

    let ds = random_dataset(g.nodes, g.in_dim, g.classes, g.edge_prob, g.seed)?;
    let data = Prepared::new(&ds)?;
    let reports = methods
        .par_iter()
        .enumerate()
        .map(|(k, &m)| {
            let mut spec = AttentionSpec::for_method(m, g.in_dim, g.hidden_dim, g.classes);
            if m != Method::Gcn {
                spec = spec.with_heads(g.heads, g.output_heads);
            }
            let model = Model::new(spec, &mut stream_rng(mix_seed(g.seed, k as u64), 0))?;
            Ok(model_grad_check(&model, &data, g.lambda_gate, GradCheckOptions::default())?)
        })
        .collect::<Result<Vec<_>>>()?;
    for (m, r) in methods.iter().zip(reports) {
        let ok = r.max_rel_error < g.tolerance;
        failed |= !ok;
        table.push(vec![
            "gradient".into(),
            m.name().into(),
            num(Some(r.max_rel_error)),
            num(Some(g.tolerance)),
            r.checked.to_string(),
            status(ok),
        ])?;
    }
    Ok(Outcome { table, failed })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

/// Ranks methods per result table by the mean metric of their summary
/// rows (1 = best, ties share the mean rank) and averages over tables.
pub fn run_rank(cfg: &ExperimentConfig, extra: &[PathBuf]) -> Result<Outcome> {
    let inputs: Vec<PathBuf> = cfg.rank.inputs.iter().chain(extra).cloned().collect();
    if inputs.is_empty() {
        bail!("config error: rank needs at least one result table");
    }
    let tables = inputs
        .iter()
        .map(|p| Ok((dataset_name(p), Table::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    rank_tables(&tables, &cfg.rank.metric)
}

pub fn rank_tables(tables: &[(String, Table)], metric: &str) -> Result<Outcome> {
    let mut methods: Vec<String> = Vec::new();
    let mut per_dataset: Vec<Vec<f64>> = Vec::new();
    for (k, (name, t)) in tables.iter().enumerate() {
        let (row_c, method_c, metric_c) = (t.column("row")?, t.column("method")?, t.column(metric)?);
        let mut scores: Vec<(String, f64)> = Vec::new();
        for r in t.rows.iter().filter(|r| r[row_c] == "summary") {
            let v: f64 = r[metric_c]
                .parse()
                .with_context(|| format!("{name}: no {metric} for {}", r[method_c]))?;
            scores.push((r[method_c].clone(), v));
        }
        let names: Vec<String> = scores.iter().map(|(m, _)| m.clone()).collect();
        if k == 0 {
            methods = names;
            if methods.len() < 2 {
                bail!("rank needs at least two methods, {name} has {}", methods.len());
            }
        } else {
            let (mut a, mut b) = (methods.clone(), names.clone());
            a.sort();
            b.sort();
            if a != b {
                bail!("inconsistent method sets: {name} has {names:?}, expected {methods:?}");
            }
        }
        let lookup: HashMap<&str, f64> = scores.iter().map(|(m, v)| (m.as_str(), *v)).collect();
        let ordered: Vec<f64> = methods.iter().map(|m| lookup[m.as_str()]).collect();
        per_dataset.push(descending_ranks(&ordered));
    }
    let mut cols = vec!["method".to_string()];
    for (n, _) in tables {
        let mut name = format!("rank_{n}");
        let mut k = 2;
        while cols.contains(&name) {
            name = format!("rank_{n}_{k}");
            k += 1;
        }
        cols.push(name);
    }
    cols.push("mean_rank".into());
    let mut table = Table::new(cols);
    for (i, m) in methods.iter().enumerate() {
        let ranks: Vec<f64> = per_dataset.iter().map(|r| r[i]).collect();
        let mut row = vec![m.clone()];
        row.extend(ranks.iter().map(|&r| num(Some(r))));
        row.push(num(Some(mean(&ranks))));
        table.push(row)?;
    }
    Ok(Outcome::ok(table))
}
