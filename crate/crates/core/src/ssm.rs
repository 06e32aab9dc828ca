//! Benchmark state-space models: linear Gaussian (LG), the non-linear
//! Kitagawa model (NN) and a Barndorff-Nielsen–Shephard stochastic
//! volatility model (SV).
//!
//! Each model exposes a uniform prior over its states, an observation
//! simulator producing ten scalar points per time-step, and the ground-truth
//! transition dynamics. The dynamics are only used to generate evaluation
//! trajectories; inference code never sees them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar points in one simulated or observed dataset.
pub const POINTS_PER_OBSERVATION: usize = 10;

/// Lower clamp applied to the Euclidean distance before taking its log.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// SV decay rate λ.
pub const SV_LAMBDA: f64 = 0.01;

/// A point in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn clipped(mut self, bounds: &Bounds) -> Self {
        bounds.clip(&mut self.0);
        self
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Per-dimension closed intervals of the uniform prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl Bounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() {
            return Err(Error::Empty("bounds"));
        }
        if low.len() != high.len() {
            return Err(Error::InvalidArgument(format!(
                "bounds dimension mismatch: {} lows vs {} highs",
                low.len(),
                high.len()
            )));
        }
        for (d, (l, h)) in low.iter().zip(&high).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidArgument(format!(
                    "invalid interval [{l}, {h}] in dimension {d}"
                )));
            }
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn width(&self, d: usize) -> f64 {
        self.high[d] - self.low[d]
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.low.iter().zip(&self.high)) {
            *v = v.clamp(*l, *h);
        }
    }

    /// One draw from the uniform distribution over the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        let values = self
            .low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| {
                let u: f64 = rng.random();
                l + (h - l) * u
            })
            .collect();
        ParameterVector(values)
    }
}

/// One time-step's dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet(pub Vec<f64>);

impl ObservationSet {
    pub fn points(&self) -> &[f64] {
        &self.0
    }
}

/// Mean and population standard deviation of an observation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
}

/// Whether stochastic terms are drawn. `Disabled` exists for tests that pin
/// the deterministic part of the dynamics or the observation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Sampled,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Lg,
    Nn,
    Sv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lg, ModelKind::Nn, ModelKind::Sv];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lg => "lg",
            ModelKind::Nn => "nn",
            ModelKind::Sv => "sv",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lg" => Ok(ModelKind::Lg),
            "nn" => Ok(ModelKind::Nn),
            "sv" => Ok(ModelKind::Sv),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// Descriptor of one benchmark state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmModel {
    kind: ModelKind,
    bounds: Bounds,
}

impl SsmModel {
    pub fn new(kind: ModelKind) -> Self {
        let (low, high) = match kind {
            ModelKind::Lg => (vec![0.0], vec![15.0]),
            ModelKind::Nn => (vec![-30.0], vec![30.0]),
            // (θ_μ, θ_β, θ_v)
            ModelKind::Sv => (vec![-2.0, -5.0, 0.0], vec![2.0, 5.0, 3.0]),
        };
        Self {
            kind,
            bounds: Bounds::new(low, high).expect("static bounds are valid"),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn initial_state(&self) -> ParameterVector {
        match self.kind {
            ModelKind::Lg => ParameterVector(vec![100.0]),
            ModelKind::Nn => ParameterVector(vec![0.0]),
            ModelKind::Sv => ParameterVector(vec![0.0, 0.0, 1.0]),
        }
    }

    pub fn initial_dynamics(&self) -> DynamicsState {
        DynamicsState::from_parameters(self, self.initial_state())
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        self.bounds.sample(rng)
    }

    /// Advances the ground-truth dynamics to the state with time index `t`.
    pub fn step_dynamics<R: Rng + ?Sized>(
        &self,
        state: &DynamicsState,
        t: usize,
        noise: Noise,
        rng: &mut R,
    ) -> Result<DynamicsState> {
        let theta = state.theta.values();
        if theta.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "state has dimension {} but model `{}` expects {}",
                theta.len(),
                self.name(),
                self.dim()
            )));
        }
        let next = match self.kind {
            ModelKind::Lg => {
                let v = match noise {
                    Noise::Sampled => rng.sample::<f64, _>(StandardNormal),
                    Noise::Disabled => 0.0,
                };
                DynamicsState::plain(vec![0.95 * theta[0] + v])
            }
            ModelKind::Nn => {
                let x = theta[0];
                let v = match noise {
                    // variance 10
                    Noise::Sampled => 10f64.sqrt() * rng.sample::<f64, _>(StandardNormal),
                    Noise::Disabled => 0.0,
                };
                let next = x / 2.0 + 25.0 * x / (x * x + 1.0) + 8.0 * (1.2 * t as f64).cos() + v;
                DynamicsState::plain(vec![next])
            }
            ModelKind::Sv => {
                let z = state.z;
                let decay = (-SV_LAMBDA).exp();
                let mut z_next = decay * z;
                let mut jump_total = 0.0;
                if noise == Noise::Sampled {
                    let intensity = 0.5 * SV_LAMBDA * SV_LAMBDA / (0.25 * 0.25);
                    let k = Poisson::new(intensity)
                        .expect("positive intensity")
                        .sample(rng) as usize;
                    let jumps = Exp::new(0.5 / (0.25 * 0.25)).expect("positive rate");
                    let t_new = t as f64;
                    for _ in 0..k {
                        let c = t_new - 1.0 + rng.random::<f64>();
                        let e = jumps.sample(rng);
                        z_next += (-SV_LAMBDA * (t_new - c)).exp() * e;
                        jump_total += e;
                    }
                }
                let vol = z - z_next + jump_total;
                DynamicsState {
                    theta: ParameterVector(vec![theta[0], theta[1], vol]),
                    z: z_next,
                }
            }
        };
        Ok(next)
    }

    /// Draws one dataset of [`POINTS_PER_OBSERVATION`] i.i.d. points given `theta`.
    pub fn simulate_observation<R: Rng + ?Sized>(
        &self,
        theta: &ParameterVector,
        noise: Noise,
        rng: &mut R,
    ) -> ObservationSet {
        let th = theta.values();
        let mut draw = |scale: f64| match noise {
            Noise::Sampled => scale * rng.sample::<f64, _>(StandardNormal),
            Noise::Disabled => 0.0,
        };
        let points = (0..POINTS_PER_OBSERVATION)
            .map(|_| match self.kind {
                ModelKind::Lg => th[0] + draw(10.0),
                ModelKind::Nn => th[0] * th[0] / 20.0 + draw(10f64.sqrt()),
                ModelKind::Sv => {
                    let vol = th[2].max(0.0);
                    th[0] + th[1] * vol + (vol.sqrt() + 1e-5) * draw(1.0)
                }
            })
            .collect();
        ObservationSet(points)
    }

    /// Samples a ground-truth trajectory of `horizon` states starting from
    /// the model's initial state, together with one observation per state.
    pub fn generate_ground_truth(&self, horizon: usize, seed: u64) -> Result<GroundTruthRun> {
        if horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.initial_dynamics();
        let mut states = Vec::with_capacity(horizon);
        let mut observations = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            state = self.step_dynamics(&state, t, Noise::Sampled, &mut rng)?;
            observations.push(self.simulate_observation(&state.theta, Noise::Sampled, &mut rng));
            states.push(state.theta.clone());
        }
        Ok(GroundTruthRun {
            states,
            observations,
            seed,
        })
    }
}

/// Full state of the ground-truth dynamics. For SV this carries the
/// auxiliary process `z`, which is not part of the inferred parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsState {
    pub theta: ParameterVector,
    pub z: f64,
}

impl DynamicsState {
    fn plain(theta: Vec<f64>) -> Self {
        Self {
            theta: ParameterVector(theta),
            z: 0.0,
        }
    }

    /// Builds a dynamics state whose next jump-free SV volatility equals the
    /// volatility in `theta`. Other models need no auxiliary state.
    pub fn from_parameters(model: &SsmModel, theta: ParameterVector) -> Self {
        let z = match model.kind() {
            ModelKind::Sv => theta.values()[2].max(0.0) / (1.0 - (-SV_LAMBDA).exp()),
            _ => 0.0,
        };
        Self { theta, z }
    }
}

/// A sampled trajectory with its observations; index `i` holds time-step `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRun {
    pub states: Vec<ParameterVector>,
    pub observations: Vec<ObservationSet>,
    pub seed: u64,
}

impl GroundTruthRun {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

/// Arithmetic mean and population (divide-by-n) standard deviation.
pub fn summarize(obs: &ObservationSet) -> Result<SummaryStats> {
    let pts = obs.points();
    if pts.is_empty() {
        return Err(Error::Empty("observation set"));
    }
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<f64>() / n;
    let var = pts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(SummaryStats {
        mean,
        std: var.sqrt(),
    })
}

/// Log of the Euclidean distance between two summary vectors, floored at
/// [`DISTANCE_FLOOR`] so that exact matches stay finite.
pub fn discrepancy(observed: &SummaryStats, synthetic: &SummaryStats) -> Result<f64> {
    let parts = [observed.mean, observed.std, synthetic.mean, synthetic.std];
    if parts.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("summary statistics"));
    }
    let dist = (observed.mean - synthetic.mean).hypot(observed.std - synthetic.std);
    Ok(dist.max(DISTANCE_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn prior_samples_stay_inside_bounds() {
        let mut r = rng(1);
        for kind in ModelKind::ALL {
            let model = SsmModel::new(kind);
            for _ in 0..1000 {
                let theta = model.sample_prior(&mut r);
                assert_eq!(theta.dim(), model.dim());
                assert!(model.bounds().contains(theta.values()));
            }
        }
    }

    #[test]
    fn degenerate_bounds_return_the_point() {
        let b = Bounds::new(vec![3.25], vec![3.25]).unwrap();
        let mut r = rng(2);
        for _ in 0..10 {
            assert_eq!(b.sample(&mut r).values(), &[3.25]);
        }
    }

    #[test]
    fn deterministic_steps() {
        let mut r = rng(3);
        let lg = SsmModel::new(ModelKind::Lg);
        let s = lg.initial_dynamics();
        let next = lg.step_dynamics(&s, 1, Noise::Disabled, &mut r).unwrap();
        assert_eq!(next.theta.values(), &[95.0]);

        let nn = SsmModel::new(ModelKind::Nn);
        let next = nn
            .step_dynamics(&nn.initial_dynamics(), 1, Noise::Disabled, &mut r)
            .unwrap();
        assert_abs_diff_eq!(next.theta.values()[0], 8.0 * 1.2f64.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(next.theta.values()[0], 2.8989, epsilon = 1e-4);

        let sv = SsmModel::new(ModelKind::Sv);
        let s = DynamicsState {
            theta: ParameterVector(vec![0.5, -1.0, 0.7]),
            z: 42.0,
        };
        let next = sv.step_dynamics(&s, 4, Noise::Disabled, &mut r).unwrap();
        let z_next = (-0.01f64).exp() * 42.0;
        assert_abs_diff_eq!(next.z, z_next, epsilon = 1e-12);
        assert_abs_diff_eq!(next.theta.values()[2], 42.0 - z_next, epsilon = 1e-12);
        assert_eq!(&next.theta.values()[..2], &[0.5, -1.0]);
    }

    #[test]
    fn lg_contracts_geometrically_without_noise() {
        let lg = SsmModel::new(ModelKind::Lg);
        let mut r = rng(4);
        let mut s = DynamicsState::from_parameters(&lg, ParameterVector(vec![-37.5]));
        for t in 1..50 {
            let next = lg.step_dynamics(&s, t, Noise::Disabled, &mut r).unwrap();
            assert_eq!(next.theta.values()[0].abs(), 0.95 * s.theta.values()[0].abs());
            s = next;
        }
    }

    #[test]
    fn step_rejects_wrong_dimension() {
        let sv = SsmModel::new(ModelKind::Sv);
        let s = DynamicsState {
            theta: ParameterVector(vec![1.0]),
            z: 0.0,
        };
        assert!(sv.step_dynamics(&s, 1, Noise::Sampled, &mut rng(0)).is_err());
        assert!(matches!(
            "ar1".parse::<ModelKind>(),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn noiseless_observations() {
        let mut r = rng(5);
        let lg = SsmModel::new(ModelKind::Lg);
        let obs = lg.simulate_observation(&ParameterVector(vec![5.0]), Noise::Disabled, &mut r);
        assert_eq!(obs.points(), &[5.0; POINTS_PER_OBSERVATION]);

        let nn = SsmModel::new(ModelKind::Nn);
        let obs = nn.simulate_observation(&ParameterVector(vec![20.0]), Noise::Disabled, &mut r);
        assert_eq!(obs.points(), &[20.0; POINTS_PER_OBSERVATION]);

        let sv = SsmModel::new(ModelKind::Sv);
        let obs = sv.simulate_observation(
            &ParameterVector(vec![1.0, 0.0, 0.0]),
            Noise::Sampled,
            &mut r,
        );
        for x in obs.points() {
            assert_abs_diff_eq!(*x, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&ObservationSet(vec![1.0; 4])).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 0.0));
        let s = summarize(&ObservationSet(vec![0.0, 2.0])).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        assert!(matches!(
            summarize(&ObservationSet(vec![])),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn discrepancy_values() {
        let a = SummaryStats { mean: 0.0, std: 0.0 };
        let b = SummaryStats { mean: 3.0, std: 4.0 };
        assert_abs_diff_eq!(discrepancy(&a, &b).unwrap(), 5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(discrepancy(&a, &a).unwrap(), -27.631021, epsilon = 1e-6);
        let nan = SummaryStats {
            mean: f64::NAN,
            std: 1.0,
        };
        assert!(discrepancy(&nan, &a).is_err());
    }

    #[test]
    fn ground_truth_shape_and_determinism() {
        let lg = SsmModel::new(ModelKind::Lg);
        let run = lg.generate_ground_truth(1, 9).unwrap();
        assert_eq!(run.horizon(), 1);
        // one noisy transition away from 100
        assert!((run.states[0].values()[0] - 95.0).abs() < 6.0);

        for kind in ModelKind::ALL {
            let model = SsmModel::new(kind);
            let a = model.generate_ground_truth(50, 11).unwrap();
            let b = model.generate_ground_truth(50, 11).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.states.len(), 50);
            assert_eq!(a.observations.len(), 50);
            assert!(a
                .observations
                .iter()
                .all(|o| o.points().len() == POINTS_PER_OBSERVATION));
        }
        assert!(lg.generate_ground_truth(0, 1).is_err());
    }
}
