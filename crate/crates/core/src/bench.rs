//! Benchmark harness: sweeps methods × models × seeds × budgets, scores each
//! run and writes the result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_method, IterationRecord, Method, RunConfig};
use crate::error::{Error, Result};
use crate::oracle::kde_map_estimate;
use crate::posterior::PosteriorStore;
use crate::ssm::{DynamicsState, GroundTruthRun, ModelKind, Noise, SsmModel};
use crate::transition::{blr_fit, build_training_pairs, TransitionModel};

pub const RAW_SCHEMA: &str = "#schema,ssm-lfi/raw,1";
pub const RAW_HEADER: &str = "method,model,seed,budget,state_rmse,traj_rmse,wall_min";
pub const AGGREGATE_SCHEMA: &str = "#schema,ssm-lfi/aggregate,1";
pub const AGGREGATE_HEADER: &str = "method,model,budget,n,state_rmse_mean,state_rmse_ci,traj_rmse_mean,traj_rmse_ci,wall_min_mean,wall_min_ci";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointEstimate {
    #[default]
    Mean,
    KdeMode,
}

/// Parsed benchmark configuration. Every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Simulations per time-step.
    pub budgets: Vec<usize>,
    pub horizon: usize,
    pub window: usize,
    pub initial_sims: usize,
    pub posterior_samples: usize,
    pub transition_pairs: usize,
    pub lmc_epochs: usize,
    pub lmc_inducing: usize,
    pub bnn_epochs: usize,
    pub bnn_hidden: usize,
    /// Window lengths of the moving-window sweep.
    pub windows: Vec<usize>,
    /// When false every wall time is written as 0, making outputs byte-stable.
    pub timing: bool,
    pub point_estimate: PointEstimate,
    pub n_traj: usize,
    /// Rollout length; `None` means the horizon.
    pub traj_length: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            methods: vec![Method::LmcBnn, Method::LmcBlr, Method::Bolfi],
            models: vec![ModelKind::Lg],
            seeds: vec![1],
            budgets: vec![run.sims_per_step],
            horizon: run.horizon,
            window: run.window,
            initial_sims: run.initial_sims,
            posterior_samples: run.posterior_samples,
            transition_pairs: run.transition_pairs,
            lmc_epochs: run.lmc.epochs,
            lmc_inducing: run.lmc.n_inducing,
            bnn_epochs: run.bnn.epochs,
            bnn_hidden: run.bnn.hidden,
            windows: vec![2, 3, 5],
            timing: true,
            point_estimate: PointEstimate::Mean,
            n_traj: 30,
            traj_length: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RunSection {
    methods: Option<Vec<String>>,
    models: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    budgets: Option<Vec<usize>>,
    horizon: Option<usize>,
    window: Option<usize>,
    initial_sims: Option<usize>,
    posterior_samples: Option<usize>,
    transition_pairs: Option<usize>,
    lmc_epochs: Option<usize>,
    lmc_inducing: Option<usize>,
    bnn_epochs: Option<usize>,
    bnn_hidden: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SweepSection {
    windows: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct OutputSection {
    timing: Option<bool>,
    point_estimate: Option<PointEstimate>,
    n_traj: Option<usize>,
    traj_length: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawConfig {
    run: RunSection,
    sweep: SweepSection,
    output: OutputSection,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "run",
        &[
            "methods",
            "models",
            "seeds",
            "budgets",
            "horizon",
            "window",
            "initial_sims",
            "posterior_samples",
            "transition_pairs",
            "lmc_epochs",
            "lmc_inducing",
            "bnn_epochs",
            "bnn_hidden",
        ],
    ),
    ("sweep", &["windows"]),
    ("output", &["timing", "point_estimate", "n_traj", "traj_length"]),
];

impl BenchConfig {
    /// Parses TOML text with sections `[run]`, `[sweep]` and `[output]`.
    /// All unknown sections and keys are reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut unknown = Vec::new();
        for (section, value) in &table {
            match KNOWN_KEYS.iter().find(|(s, _)| s == section) {
                None => unknown.push(section.clone()),
                Some((_, keys)) => match value.as_table() {
                    Some(t) => unknown.extend(
                        t.keys()
                            .filter(|k| !keys.contains(&k.as_str()))
                            .map(|k| format!("{section}.{k}")),
                    ),
                    None => return Err(Error::Config(format!("`{section}` must be a table"))),
                },
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;

        let mut c = Self::default();
        let r = raw.run;
        if let Some(m) = r.methods {
            c.methods = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if let Some(m) = r.models {
            c.models = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        macro_rules! set {
            ($($src:expr => $dst:ident),*) => { $( if let Some(v) = $src { c.$dst = v; } )* };
        }
        set!(r.seeds => seeds, r.budgets => budgets, r.horizon => horizon, r.window => window,
             r.initial_sims => initial_sims, r.posterior_samples => posterior_samples,
             r.transition_pairs => transition_pairs, r.lmc_epochs => lmc_epochs,
             r.lmc_inducing => lmc_inducing, r.bnn_epochs => bnn_epochs, r.bnn_hidden => bnn_hidden,
             raw.sweep.windows => windows, raw.output.timing => timing,
             raw.output.point_estimate => point_estimate, raw.output.n_traj => n_traj);
        c.traj_length = raw.output.traj_length.or(c.traj_length);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("run.methods", self.methods.is_empty()),
            ("run.models", self.models.is_empty()),
            ("run.seeds", self.seeds.is_empty()),
            ("run.budgets", self.budgets.is_empty()),
            ("sweep.windows", self.windows.is_empty()),
        ];
        if let Some((k, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("`{k}` must not be empty")));
        }
        if self.horizon < 1 || self.window < 1 || self.window > self.horizon {
            return Err(Error::Config(format!(
                "need 1 ≤ window ({}) ≤ horizon ({})",
                self.window, self.horizon
            )));
        }
        if self.initial_sims < 2 || self.posterior_samples < 1 || self.n_traj < 1 {
            return Err(Error::Config(
                "initial_sims ≥ 2, posterior_samples ≥ 1 and n_traj ≥ 1 are required".into(),
            ));
        }
        if self.lmc_inducing < 1 || self.bnn_hidden < 1 || self.traj_length == Some(0) {
            return Err(Error::Config("sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn run_config(&self, method: Method, seed: u64, budget: usize, window: usize) -> RunConfig {
        let mut rc = RunConfig {
            method,
            window,
            initial_sims: self.initial_sims,
            sims_per_step: budget,
            posterior_samples: self.posterior_samples,
            transition_pairs: self.transition_pairs,
            horizon: self.horizon,
            seed,
            ..RunConfig::default()
        };
        rc.lmc.epochs = self.lmc_epochs;
        rc.lmc.n_inducing = self.lmc_inducing;
        rc.bnn.epochs = self.bnn_epochs;
        rc.bnn.hidden = self.bnn_hidden;
        rc
    }
}

/// Root-mean-square error of per-step point estimates against the truth,
/// over all time indices `1..=T` and dimensions.
pub fn evaluate_state_rmse(
    posteriors: &PosteriorStore,
    truth: &GroundTruthRun,
    estimate: PointEstimate,
) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, state) in truth.states.iter().enumerate() {
        let t = i + 1;
        let post = posteriors.get(t).ok_or(Error::MissingPosterior(t))?;
        if post.is_empty() {
            return Err(Error::MissingPosterior(t));
        }
        let est = match estimate {
            PointEstimate::Mean => post.mean(),
            PointEstimate::KdeMode => kde_map_estimate(&post.samples)?,
        };
        for (e, s) in est.iter().zip(state.values()) {
            se += (e - s).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("ground-truth run"));
    }
    Ok((se / n as f64).sqrt())
}

/// Mean of `n_traj` ground-truth rollouts of `length` steps from `start`,
/// whose time index is `start_t`.
pub fn mean_true_trajectory(
    model: &SsmModel,
    start: &[f64],
    start_t: usize,
    length: usize,
    n_traj: usize,
    noise: Noise,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut sum = vec![vec![0.0; start.len()]; length];
    for _ in 0..n_traj {
        let mut state = DynamicsState::from_parameters(model, start.to_vec().into());
        for (k, acc) in sum.iter_mut().enumerate() {
            state = model.step_dynamics(&state, start_t + k + 1, noise, &mut rng)?;
            for (a, v) in acc.iter_mut().zip(state.theta.values()) {
                *a += v;
            }
        }
    }
    Ok(scale_rows(sum, n_traj))
}

/// Mean of `n_traj` autoregressive rollouts of the transition model.
pub fn mean_model_trajectory(
    h: &TransitionModel,
    start: &[f64],
    length: usize,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !h.is_trained() {
        return Err(Error::Untrained);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut sum = vec![vec![0.0; start.len()]; length];
    for _ in 0..n_traj {
        let mut x = start.to_vec();
        for acc in sum.iter_mut() {
            x = h.predict_samples(&x, 1, &mut rng).pop().expect("one draw");
            for (a, v) in acc.iter_mut().zip(&x) {
                *a += v;
            }
        }
    }
    Ok(scale_rows(sum, n_traj))
}

fn scale_rows(rows: Vec<Vec<f64>>, n: usize) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| v / n as f64).collect())
        .collect()
}

/// RMSE between two equally long trajectories over steps and dimensions.
pub fn trajectory_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.iter().zip(y) {
            se += (u - v).powi(2);
            n += 1;
        }
    }
    (se / n.max(1) as f64).sqrt()
}

/// RMSE between the mean model rollout and the mean ground-truth rollout
/// from the same start.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_trajectory_rmse(
    h: &TransitionModel,
    model: &SsmModel,
    start: &[f64],
    start_t: usize,
    length: usize,
    n_traj: usize,
    noise: Noise,
    seed: u64,
) -> Result<f64> {
    if length < 1 {
        return Err(Error::InvalidArgument("trajectory length must be ≥ 1".into()));
    }
    let pred = mean_model_trajectory(h, start, length, n_traj, seed)?;
    let truth = mean_true_trajectory(model, start, start_t, length, n_traj, noise, seed)?;
    Ok(trajectory_distance(&pred, &truth))
}

/// Trajectory RMSE of the constant prediction `value` at every step.
#[allow(clippy::too_many_arguments)]
pub fn constant_trajectory_rmse(
    value: &[f64],
    model: &SsmModel,
    start: &[f64],
    start_t: usize,
    length: usize,
    n_traj: usize,
    noise: Noise,
    seed: u64,
) -> Result<f64> {
    let truth = mean_true_trajectory(model, start, start_t, length, n_traj, noise, seed)?;
    Ok(trajectory_distance(&vec![value.to_vec(); length], &truth))
}

/// Identifies one benchmark run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub method: Method,
    pub model: ModelKind,
    pub seed: u64,
    pub budget: usize,
    pub window: usize,
}

impl CellKey {
    /// Method column: the method name, plus the window length when it is
    /// not the configured default.
    pub fn label(&self, default_window: usize) -> String {
        if self.window == default_window {
            self.method.to_string()
        } else {
            format!("{}({})", self.method, self.window)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub state_rmse: f64,
    pub traj_rmse: f64,
    pub wall_min: f64,
    pub simulator_calls: usize,
    pub iterations: usize,
    pub expected_calls: usize,
    pub log: Vec<IterationRecord>,
    /// Transition model used for the trajectory score.
    pub transition: Option<TransitionModel>,
    /// Rollout start: the posterior mean at the horizon.
    pub traj_start: Vec<f64>,
}

/// Runs and scores one cell.
pub fn run_cell(key: &CellKey, config: &BenchConfig) -> Result<CellResult> {
    let model = SsmModel::new(key.model);
    let truth = model.generate_ground_truth(config.horizon, key.seed)?;
    let rc = config.run_config(key.method, key.seed, key.budget, key.window);
    let started = Instant::now();
    let mut out = run_method(&model, &truth.observations, &rc)?;
    let wall_min = if config.timing {
        started.elapsed().as_secs_f64() / 60.0
    } else {
        out.log.iter_mut().for_each(|r| r.wall_ms = 0.0);
        0.0
    };
    let state_rmse = evaluate_state_rmse(&out.posteriors, &truth, config.point_estimate)?;
    let transition = match out.transition {
        Some(h) => h,
        None => {
            // the baseline has no dynamics model; fit one on its posteriors
            let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
            rng.set_stream(9);
            let pairs = build_training_pairs(&out.posteriors, config.transition_pairs.max(model.dim() + 1), &mut rng)?;
            TransitionModel::Blr(blr_fit(&pairs)?)
        }
    };
    let last = out
        .posteriors
        .get(config.horizon)
        .ok_or(Error::MissingPosterior(config.horizon))?;
    let traj_start = last.mean();
    let traj_rmse = evaluate_trajectory_rmse(
        &transition,
        &model,
        &traj_start,
        config.horizon,
        config.traj_length.unwrap_or(config.horizon),
        config.n_traj,
        Noise::Sampled,
        key.seed,
    )?;
    Ok(CellResult {
        key: key.clone(),
        state_rmse,
        traj_rmse,
        wall_min,
        simulator_calls: out.simulator_calls,
        iterations: out.iterations,
        expected_calls: rc.initial_sims + rc.sims_per_step * out.iterations,
        log: out.log,
        transition: Some(transition),
        traj_start,
    })
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub default_window: usize,
    pub cells: Vec<CellResult>,
    pub failures: Vec<(CellKey, String)>,
}

fn run_cells(keys: Vec<CellKey>, config: &BenchConfig, workers: usize) -> Result<BenchReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(CellKey, Result<CellResult>)> = pool.install(|| {
        keys.into_par_iter()
            .map(|k| {
                info!("running {k:?}");
                let r = run_cell(&k, config);
                (k, r)
            })
            .collect()
    });
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results {
        match r {
            Ok(c) => cells.push(c),
            Err(e) => {
                warn!("cell {k:?} failed: {e}");
                failures.push((k, e.to_string()));
            }
        }
    }
    cells.sort_by(|a, b| a.key.cmp(&b.key));
    failures.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(BenchReport {
        default_window: config.window,
        cells,
        failures,
    })
}

/// Cartesian sweep over the configured methods, models, seeds and budgets.
pub fn run_benchmark(config: &BenchConfig, workers: usize) -> Result<BenchReport> {
    let mut keys = Vec::new();
    for &method in &config.methods {
        for &model in &config.models {
            for &seed in &config.seeds {
                for &budget in &config.budgets {
                    keys.push(CellKey {
                        method,
                        model,
                        seed,
                        budget,
                        window: config.window,
                    });
                }
            }
        }
    }
    run_cells(keys, config, workers)
}

/// Runs the LMC methods of the configuration at every window length of
/// `config.windows`, with the first configured budget.
pub fn moving_window_sweep(config: &BenchConfig, workers: usize) -> Result<BenchReport> {
    if let Some(l) = config.windows.iter().find(|l| **l < 1 || **l > config.horizon) {
        return Err(Error::Config(format!(
            "window length {l} outside [1, {}]",
            config.horizon
        )));
    }
    let methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|m| *m != Method::Bolfi)
        .collect();
    if methods.is_empty() {
        return Err(Error::Config("the window sweep needs an LMC method".into()));
    }
    let mut keys = Vec::new();
    for &method in &methods {
        for &model in &config.models {
            for &seed in &config.seeds {
                for &window in &config.windows {
                    keys.push(CellKey {
                        method,
                        model,
                        seed,
                        budget: config.budgets[0],
                        window,
                    });
                }
            }
        }
    }
    let mut report = run_cells(keys, config, workers)?;
    // labels carry every window length in a sweep
    report.default_window = 0;
    Ok(report)
}

/// One data row of `raw.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub method: String,
    pub model: String,
    pub seed: u64,
    pub budget: usize,
    pub state_rmse: f64,
    pub traj_rmse: f64,
    pub wall_min: f64,
}

/// One row of `aggregate.csv`: mean and 95 % half-width per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub model: String,
    pub budget: usize,
    pub n: usize,
    pub state_rmse: (f64, f64),
    pub traj_rmse: (f64, f64),
    pub wall_min: (f64, f64),
}

impl BenchReport {
    pub fn raw_rows(&self) -> Vec<RawRow> {
        self.cells
            .iter()
            .map(|c| RawRow {
                method: c.key.label(self.default_window),
                model: c.key.model.to_string(),
                seed: c.key.seed,
                budget: c.key.budget,
                state_rmse: c.state_rmse,
                traj_rmse: c.traj_rmse,
                wall_min: c.wall_min,
            })
            .collect()
    }
}

/// Mean and `1.96·sd/√n` with the sample standard deviation; the half-width
/// is 0 for a single value.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Groups raw rows by (method, model, budget) in sorted order.
pub fn aggregate(rows: &[RawRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&RawRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.model.clone(), r.budget))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, model, budget), rs)| {
            let col = |f: fn(&RawRow) -> f64| mean_ci(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                method,
                model,
                budget,
                n: rs.len(),
                state_rmse: col(|r| r.state_rmse),
                traj_rmse: col(|r| r.traj_rmse),
                wall_min: col(|r| r.wall_min),
            }
        })
        .collect()
}

pub fn format_raw_csv(rows: &[RawRow]) -> String {
    let mut s = format!("{RAW_SCHEMA}\n{RAW_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method, r.model, r.seed, r.budget, r.state_rmse, r.traj_rmse, r.wall_min
        );
    }
    s
}

pub fn format_aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = format!("{AGGREGATE_SCHEMA}\n{AGGREGATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.model,
            r.budget,
            r.n,
            r.state_rmse.0,
            r.state_rmse.1,
            r.traj_rmse.0,
            r.traj_rmse.1,
            r.wall_min.0,
            r.wall_min.1
        );
    }
    s
}

fn parse_field<T: std::str::FromStr>(v: &str, name: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: bad {name} `{v}`")))
}

/// Parses `raw.csv` text: schema row, header, then seven fields per row.
pub fn parse_raw_csv(text: &str) -> Result<Vec<RawRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RAW_SCHEMA) {
        return Err(Error::Config("missing or unsupported schema row".into()));
    }
    if lines.next() != Some(RAW_HEADER) {
        return Err(Error::Config("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 3;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Config(format!("line {n}: expected 7 fields, got {}", f.len())));
        }
        if f[0].is_empty() || f[1].is_empty() {
            return Err(Error::Config(format!("line {n}: empty key field")));
        }
        let row = RawRow {
            method: f[0].to_string(),
            model: f[1].to_string(),
            seed: parse_field(f[2], "seed", n)?,
            budget: parse_field(f[3], "budget", n)?,
            state_rmse: parse_field(f[4], "state_rmse", n)?,
            traj_rmse: parse_field(f[5], "traj_rmse", n)?,
            wall_min: parse_field(f[6], "wall_min", n)?,
        };
        if ![row.state_rmse, row.traj_rmse, row.wall_min]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config(format!("line {n}: non-finite metric")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// A gnuplot script with the raw rows inlined: one box-plot panel per model,
/// state RMSE against budget with one box per method.
pub fn plot_script(rows: &[RawRow]) -> String {
    let methods: BTreeSet<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    let models: BTreeSet<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    let budgets: BTreeSet<usize> = rows.iter().map(|r| r.budget).collect();
    let mut s = String::new();
    s.push_str("# state RMSE by simulations per time-step\n");
    for model in &models {
        let _ = writeln!(s, "$data_{model} << EOD");
        s.push_str("# method budget state_rmse traj_rmse wall_min\n");
        for r in rows.iter().filter(|r| r.model == *model) {
            let _ = writeln!(
                s,
                "\"{}\" {} {} {} {}",
                r.method, r.budget, r.state_rmse, r.traj_rmse, r.wall_min
            );
        }
        s.push_str("EOD\n");
    }
    let _ = writeln!(
        s,
        "set terminal pngcairo size {},400\nset output 'state_rmse.png'",
        400 * models.len().max(1)
    );
    let _ = writeln!(s, "set multiplot layout 1,{}", models.len().max(1));
    s.push_str("set style fill solid 0.4 border -1\nset style data boxplot\nset boxwidth 0.5\nset ylabel 'state RMSE'\nset xlabel 'simulations per step'\n");
    let xt: Vec<String> = budgets
        .iter()
        .enumerate()
        .map(|(i, b)| format!("\"{b}\" {}", (i + 1) * (methods.len() + 1)))
        .collect();
    let _ = writeln!(s, "set xtics ({})", xt.join(", "));
    for model in &models {
        let _ = writeln!(s, "set title '{}'", model.to_uppercase());
        let parts: Vec<String> = methods
            .iter()
            .enumerate()
            .map(|(mi, m)| {
                let cases: Vec<String> = budgets
                    .iter()
                    .enumerate()
                    .map(|(bi, b)| format!("$2=={b} ? {}", (bi + 1) * (methods.len() + 1) + mi))
                    .collect();
                format!(
                    "$data_{model} using ({} : NaN):(strcol(1) eq \"{m}\" ? $3 : NaN) title '{m}'",
                    cases.join(" : ")
                )
            })
            .collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    }
    s.push_str("unset multiplot\n");
    s
}

#[derive(Serialize)]
struct CellSummary<'a> {
    kind: &'a str,
    method: String,
    model: String,
    seed: u64,
    budget: usize,
    window: usize,
    simulator_calls: usize,
    expected_calls: usize,
    state_rmse: f64,
    traj_rmse: f64,
}

#[derive(Serialize)]
struct CellFailure<'a> {
    kind: &'a str,
    method: String,
    model: String,
    seed: u64,
    budget: usize,
    window: usize,
    error: &'a str,
}

/// JSON lines: every iteration record, then one summary per cell and one
/// line per failed cell.
pub fn run_log(report: &BenchReport) -> Result<String> {
    let mut s = String::new();
    for c in &report.cells {
        for r in &c.log {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        s.push_str(&serde_json::to_string(&CellSummary {
            kind: "cell",
            method: c.key.label(report.default_window),
            model: c.key.model.to_string(),
            seed: c.key.seed,
            budget: c.key.budget,
            window: c.key.window,
            simulator_calls: c.simulator_calls,
            expected_calls: c.expected_calls,
            state_rmse: c.state_rmse,
            traj_rmse: c.traj_rmse,
        })?);
        s.push('\n');
    }
    for (k, e) in &report.failures {
        s.push_str(&serde_json::to_string(&CellFailure {
            kind: "failure",
            method: k.label(report.default_window),
            model: k.model.to_string(),
            seed: k.seed,
            budget: k.budget,
            window: k.window,
            error: e,
        })?);
        s.push('\n');
    }
    Ok(s)
}

/// Writes `raw.csv`, `aggregate.csv`, `plots.gp` and `run.log` into `dir`.
pub fn write_outputs(report: &BenchReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows = report.raw_rows();
    fs::write(dir.join("raw.csv"), format_raw_csv(&rows))?;
    fs::write(dir.join("aggregate.csv"), format_aggregate_csv(&aggregate(&rows)))?;
    fs::write(dir.join("plots.gp"), plot_script(&rows))?;
    fs::write(dir.join("run.log"), run_log(report)?)?;
    Ok(())
}
