//! The moving-window inference loop with a learned transition proposal, and
//! the per-step BOLFI baseline run on the same simulation budget.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{lcbsc_next, transition_proposals, AcquisitionSource};
use crate::error::{Error, Result};
use crate::gp::{gp_fit, GpConfig};
use crate::lmc::{lmc_fit, LmcConfig, WindowedDiscrepancySet};
use crate::posterior::{extract_posterior, select_threshold, PosteriorSampleSet, PosteriorStore};
use crate::ssm::{discrepancy, summarize, Bounds, Noise, ObservationSet, SsmModel, SummaryStats};
use crate::surrogate::DiscrepancySurrogate;
use crate::transition::{
    blr_fit, build_training_pairs, BnnConfig, BnnModel, TransitionModel,
};

/// Something that turns a parameter vector into a synthetic dataset.
pub trait Simulator {
    fn name(&self) -> &str;
    fn bounds(&self) -> &Bounds;
    fn simulate(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<ObservationSet>;
}

impl Simulator for SsmModel {
    fn name(&self) -> &str {
        SsmModel::name(self)
    }

    fn bounds(&self) -> &Bounds {
        SsmModel::bounds(self)
    }

    fn simulate(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<ObservationSet> {
        if theta.len() != self.dim() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulator {
                theta: theta.to_vec(),
                reason: format!("expected a finite {}-dimensional state", self.dim()),
            });
        }
        Ok(self.simulate_observation(&theta.to_vec().into(), Noise::Sampled, rng))
    }
}

/// Every simulation made during a run, shared by all time-steps.
#[derive(Debug, Clone)]
pub struct SimulationStore {
    inputs: Vec<Vec<f64>>,
    summaries: Vec<SummaryStats>,
    calls: usize,
    rng: ChaCha8Rng,
}

impl SimulationStore {
    pub fn new(seed: u64) -> Self {
        Self {
            inputs: Vec::new(),
            summaries: Vec::new(),
            calls: 0,
            rng: stream(seed, Stream::Simulator),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Number of simulator invocations so far.
    pub fn simulator_calls(&self) -> usize {
        self.calls
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn summaries(&self) -> &[SummaryStats] {
        &self.summaries
    }

    pub fn simulate<S: Simulator + ?Sized>(&mut self, sim: &S, theta: Vec<f64>) -> Result<()> {
        self.calls += 1;
        let obs = sim.simulate(&theta, &mut self.rng)?;
        let stats = summarize(&obs)?;
        self.inputs.push(theta);
        self.summaries.push(stats);
        Ok(())
    }
}

/// Discrepancy of every stored simulation against each observation of the
/// window `(t0, t)`. No simulator is invoked.
pub fn recompute_discrepancies(
    store: &SimulationStore,
    window_observations: &[SummaryStats],
    window: (usize, usize),
) -> Result<WindowedDiscrepancySet> {
    if store.is_empty() {
        return Err(Error::Empty("simulation store"));
    }
    if window.1 < window.0 || window_observations.len() != window.1 - window.0 + 1 {
        return Err(Error::InvalidArgument(format!(
            "window {window:?} does not match {} observations",
            window_observations.len()
        )));
    }
    let targets = store
        .summaries
        .iter()
        .map(|s| {
            window_observations
                .iter()
                .map(|o| discrepancy(o, s))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(WindowedDiscrepancySet {
        inputs: store.inputs.clone(),
        targets,
        window,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    LmcBnn,
    LmcBlr,
    Bolfi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LmcBnn, Method::LmcBlr, Method::Bolfi];

    pub fn name(self) -> &'static str {
        match self {
            Self::LmcBnn => "lmc-bnn",
            Self::LmcBlr => "lmc-blr",
            Self::Bolfi => "bolfi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    /// Moving-window length L.
    pub window: usize,
    pub initial_sims: usize,
    pub sims_per_step: usize,
    pub posterior_samples: usize,
    pub transition_pairs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub lmc: LmcConfig,
    pub bnn: BnnConfig,
    pub gp: GpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::LmcBnn,
            window: 2,
            initial_sims: 20,
            sims_per_step: 2,
            posterior_samples: 1000,
            transition_pairs: 10_000,
            horizon: 20,
            seed: 0,
            lmc: LmcConfig::default(),
            bnn: BnnConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 || self.window > self.horizon {
            return Err(Error::Precondition(format!(
                "window length {} must lie in [1, {}]",
                self.window, self.horizon
            )));
        }
        if self.initial_sims < 2 {
            return Err(Error::Precondition("need at least 2 initial simulations".into()));
        }
        if self.posterior_samples < 1 {
            return Err(Error::Precondition("need at least 1 posterior sample".into()));
        }
        Ok(())
    }

    /// Simulator calls a complete run makes.
    pub fn budget(&self) -> usize {
        self.initial_sims + self.sims_per_step * self.horizon.saturating_sub(self.window)
    }
}

/// One line of the structured run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub method: String,
    pub model: String,
    pub seed: u64,
    pub t0: usize,
    pub t: usize,
    pub epsilon: Vec<f64>,
    pub simulator_calls: usize,
    pub acquisition: Option<String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub posteriors: PosteriorStore,
    pub transition: Option<TransitionModel>,
    pub simulator_calls: usize,
    /// Completed loop iterations, each with one acquisition round.
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
}

#[derive(Clone, Copy)]
enum Stream {
    Simulator = 1,
    Prior = 2,
    Posterior = 3,
    Pairs = 4,
    Transition = 5,
    Proposals = 6,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Deterministic per-use seed derived from the run seed.
fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn observation_summaries(observations: &[ObservationSet]) -> Result<Vec<SummaryStats>> {
    observations.iter().map(summarize).collect()
}

fn argmin_column(data: &WindowedDiscrepancySet, w: usize) -> usize {
    let mut best = 0;
    for (i, row) in data.targets.iter().enumerate() {
        if row[w] < data.targets[best][w] {
            best = i;
        }
    }
    best
}

/// Threshold plus posterior for one objective of a fitted surrogate.
#[allow(clippy::too_many_arguments)]
fn posterior_for<S: DiscrepancySurrogate + ?Sized>(
    surrogate: &S,
    objective: usize,
    data: &WindowedDiscrepancySet,
    column: usize,
    bounds: &Bounds,
    config: &RunConfig,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, PosteriorSampleSet)> {
    let start = &data.inputs[argmin_column(data, column)];
    let threshold = select_threshold(
        surrogate,
        objective,
        bounds,
        start,
        derive_seed(config.seed, 11, t as u64),
    )?;
    let set = extract_posterior(
        surrogate,
        objective,
        &threshold,
        bounds,
        config.posterior_samples,
        t,
        rng,
    )?;
    Ok((threshold.epsilon, set))
}

struct LmcRun<'a, S: Simulator + ?Sized> {
    sim: &'a S,
    config: &'a RunConfig,
    obs: Vec<SummaryStats>,
    store: SimulationStore,
    posteriors: PosteriorStore,
    transition: Option<TransitionModel>,
    post_rng: ChaCha8Rng,
    pair_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
}

impl<S: Simulator + ?Sized> LmcRun<'_, S> {
    /// Fits the window surrogate and refreshes the window's posteriors.
    fn refresh_window(&mut self, t0: usize, t: usize, fit_index: u64) -> Result<Vec<f64>> {
        let data = recompute_discrepancies(&self.store, &self.obs[t0 - 1..t], (t0, t))?;
        let lmc_cfg = LmcConfig {
            seed: derive_seed(self.config.seed, 7, fit_index),
            ..self.config.lmc.clone()
        };
        let surrogate = lmc_fit(&data, self.sim.bounds(), &lmc_cfg)?;
        let mut eps = Vec::with_capacity(t - t0 + 1);
        let mut sets = Vec::with_capacity(t - t0 + 1);
        for w in 0..=t - t0 {
            let (e, set) = posterior_for(
                &surrogate,
                w,
                &data,
                w,
                self.sim.bounds(),
                self.config,
                t0 + w,
                &mut self.post_rng,
            )?;
            eps.push(e);
            sets.push(set);
        }
        self.posteriors.replace_window(sets);
        Ok(eps)
    }

    /// Retrains the transition model on fresh pairs when two consecutive
    /// posteriors exist.
    fn update_transition(&mut self) -> Result<()> {
        if self.posteriors.consecutive_pairs().is_empty() {
            debug!("no consecutive posteriors yet; transition model left untrained");
            return Ok(());
        }
        let pairs =
            build_training_pairs(&self.posteriors, self.config.transition_pairs, &mut self.pair_rng)?;
        if pairs.is_empty() {
            return Ok(());
        }
        match self.config.method {
            Method::LmcBnn => {
                let dim = self.sim.bounds().dim();
                let model = match self.transition.take() {
                    Some(TransitionModel::Bnn(b)) => b,
                    _ => BnnModel::new(dim, self.config.bnn.clone(), &mut self.train_rng)?,
                };
                let mut model = model;
                model.train(&pairs, &mut self.train_rng)?;
                self.transition = Some(TransitionModel::Bnn(model));
            }
            Method::LmcBlr => match blr_fit(&pairs) {
                Ok(m) => self.transition = Some(TransitionModel::Blr(m)),
                Err(e) => warn!("linear transition fit failed ({e}); keeping previous model"),
            },
            Method::Bolfi => unreachable!("not an LMC method"),
        }
        Ok(())
    }
}

/// Moving-window inference with a learned transition proposal.
///
/// Each iteration fits the multi-output surrogate on the window `[t0, t]`,
/// refreshes the window's posteriors, retrains the transition model on pairs
/// of consecutive posterior samples and simulates `sims_per_step` proposals
/// pushed through it from the posterior at `t`. After the last iteration one
/// more fit on `[T − L + 1, T]` (without acquisitions) gives every time index
/// a posterior.
pub fn run_lmc_method<S: Simulator + ?Sized>(
    sim: &S,
    observations: &[ObservationSet],
    config: &RunConfig,
) -> Result<RunOutput> {
    config.validate()?;
    if config.method == Method::Bolfi {
        return Err(Error::InvalidArgument("use run_bolfi_baseline for bolfi".into()));
    }
    if observations.len() != config.horizon {
        return Err(Error::Precondition(format!(
            "expected {} observations, got {}",
            config.horizon,
            observations.len()
        )));
    }
    let horizon = config.horizon;
    let l = config.window;
    let mut run = LmcRun {
        sim,
        config,
        obs: observation_summaries(observations)?,
        store: SimulationStore::new(config.seed),
        posteriors: PosteriorStore::new(),
        transition: None,
        post_rng: stream(config.seed, Stream::Posterior),
        pair_rng: stream(config.seed, Stream::Pairs),
        train_rng: stream(config.seed, Stream::Transition),
    };
    let mut prior_rng = stream(config.seed, Stream::Prior);
    let mut prop_rng = stream(config.seed, Stream::Proposals);
    for _ in 0..config.initial_sims {
        let theta = sim.bounds().sample(&mut prior_rng).0;
        run.store.simulate(sim, theta)?;
    }

    let mut log = Vec::new();
    let (mut t0, mut t) = (1, l);
    let mut iterations = 0;
    while t < horizon {
        let started = Instant::now();
        let eps = run.refresh_window(t0, t, iterations as u64)?;
        run.update_transition()?;
        let current = run.posteriors.get(t).ok_or(Error::MissingPosterior(t))?;
        let batch = transition_proposals(
            run.transition.as_ref(),
            current,
            config.sims_per_step,
            sim.bounds(),
            &mut prop_rng,
        )?;
        if batch.source == AcquisitionSource::Prior {
            debug!("iteration {iterations}: transition model untrained, proposing from the prior");
        }
        for theta in batch.proposals {
            run.store.simulate(sim, theta)?;
        }
        iterations += 1;
        log.push(IterationRecord {
            method: config.method.to_string(),
            model: sim.name().to_string(),
            seed: config.seed,
            t0,
            t,
            epsilon: eps,
            simulator_calls: run.store.simulator_calls(),
            acquisition: Some(batch.source.to_string()),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        t0 += 1;
        t += 1;
    }
    if horizon > l {
        let started = Instant::now();
        let eps = run.refresh_window(t0, t, iterations as u64)?;
        run.update_transition()?;
        log.push(IterationRecord {
            method: config.method.to_string(),
            model: sim.name().to_string(),
            seed: config.seed,
            t0,
            t,
            epsilon: eps,
            simulator_calls: run.store.simulator_calls(),
            acquisition: None,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(RunOutput {
        posteriors: run.posteriors,
        transition: run.transition,
        simulator_calls: run.store.simulator_calls(),
        iterations,
        log,
    })
}

/// Per-step BOLFI: an independent GP on each step's discrepancies, with the
/// stored simulations shared forward. Steps `L + 1, …, T` each acquire
/// `sims_per_step` points by LCBSC, refitting after every acquisition, so the
/// budget matches [`run_lmc_method`].
pub fn run_bolfi_baseline<S: Simulator + ?Sized>(
    sim: &S,
    observations: &[ObservationSet],
    config: &RunConfig,
) -> Result<RunOutput> {
    config.validate()?;
    if observations.len() != config.horizon {
        return Err(Error::Precondition(format!(
            "expected {} observations, got {}",
            config.horizon,
            observations.len()
        )));
    }
    let obs = observation_summaries(observations)?;
    let bounds = sim.bounds();
    let mut store = SimulationStore::new(config.seed);
    let mut prior_rng = stream(config.seed, Stream::Prior);
    let mut post_rng = stream(config.seed, Stream::Posterior);
    for _ in 0..config.initial_sims {
        store.simulate(sim, bounds.sample(&mut prior_rng).0)?;
    }
    let mut posteriors = PosteriorStore::new();
    let mut log = Vec::new();
    let mut acquisitions = 0usize;
    let mut iterations = 0;
    for tau in 1..=config.horizon {
        let started = Instant::now();
        let acquire = tau > config.window;
        if acquire {
            for _ in 0..config.sims_per_step {
                let data = recompute_discrepancies(&store, &obs[tau - 1..tau], (tau, tau))?;
                let gp = fit_step_gp(&data, bounds, config, acquisitions as u64)?;
                acquisitions += 1;
                let next = lcbsc_next(
                    &gp,
                    0,
                    acquisitions,
                    bounds,
                    derive_seed(config.seed, 13, acquisitions as u64),
                )?;
                store.simulate(sim, next.point)?;
            }
            iterations += 1;
        }
        let data = recompute_discrepancies(&store, &obs[tau - 1..tau], (tau, tau))?;
        let gp = fit_step_gp(&data, bounds, config, 1_000_000 + tau as u64)?;
        let (eps, set) = posterior_for(&gp, 0, &data, 0, bounds, config, tau, &mut post_rng)?;
        posteriors.insert(set);
        log.push(IterationRecord {
            method: Method::Bolfi.to_string(),
            model: sim.name().to_string(),
            seed: config.seed,
            t0: tau,
            t: tau,
            epsilon: vec![eps],
            simulator_calls: store.simulator_calls(),
            acquisition: acquire.then(|| AcquisitionSource::Lcbsc.to_string()),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(RunOutput {
        posteriors,
        transition: None,
        simulator_calls: store.simulator_calls(),
        iterations,
        log,
    })
}

fn fit_step_gp(
    data: &WindowedDiscrepancySet,
    bounds: &Bounds,
    config: &RunConfig,
    index: u64,
) -> Result<crate::gp::TrainedGp> {
    let y = data.column(0);
    let gp_cfg = GpConfig {
        seed: derive_seed(config.seed, 17, index),
        ..config.gp.clone()
    };
    gp_fit(&data.inputs, &y, bounds, &gp_cfg)
}

/// Dispatches on `config.method`.
pub fn run_method<S: Simulator + ?Sized>(
    sim: &S,
    observations: &[ObservationSet],
    config: &RunConfig,
) -> Result<RunOutput> {
    match config.method {
        Method::Bolfi => run_bolfi_baseline(sim, observations, config),
        _ => run_lmc_method(sim, observations, config),
    }
}
