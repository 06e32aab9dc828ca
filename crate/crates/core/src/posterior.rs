//! From a fitted discrepancy surrogate to samples of the state posterior.
//!
//! The surrogate defines a synthetic likelihood `Φ((ε − μ(θ)) / √(ν(θ) + σ²))`
//! where `ε` is the minimum of the surrogate mean. Posterior samples are drawn
//! by weighting prior proposals with that likelihood and resampling.

use std::collections::BTreeMap;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::optim::{lbfgs_maximize, Adam};
use crate::ssm::Bounds;
use crate::surrogate::DiscrepancySurrogate;

/// Random probe points screened before the local threshold search.
pub const THRESHOLD_PROBES: usize = 1000;
const THRESHOLD_ADAM_STEPS: usize = 100;
const THRESHOLD_ADAM_LR: f64 = 1e-4;
const THRESHOLD_POLISH_ITERS: usize = 50;

/// Minimum number of importance-sampling proposals.
pub const MIN_PROPOSALS: usize = 10_000;

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub epsilon: f64,
    pub location: Vec<f64>,
}

/// Approximate global minimum of one objective's surrogate mean inside the
/// bounds.
///
/// `start` is the simulated point with the lowest observed discrepancy. The
/// mean is screened at `start` and at [`THRESHOLD_PROBES`] uniform probes; a
/// short Adam descent from `start` (unit-cube coordinates) and a clipped
/// L-BFGS polish from the best screened point refine the candidates. The
/// lowest mean found wins.
pub fn select_threshold<S: DiscrepancySurrogate + ?Sized>(
    surrogate: &S,
    objective: usize,
    bounds: &Bounds,
    start: &[f64],
    seed: u64,
) -> Result<Threshold> {
    surrogate.check_objective(objective)?;
    if start.len() != bounds.dim() {
        return Err(Error::InvalidArgument("start point has wrong dimension".into()));
    }
    let mean_at = |x: &[f64]| surrogate.predict(x, objective).map(|p| p.mean);
    let mut start = start.to_vec();
    bounds.clip(&mut start);

    let mut best = Threshold {
        epsilon: mean_at(&start)?,
        location: start.clone(),
    };
    let consider = |x: Vec<f64>, v: f64, best: &mut Threshold| {
        if v < best.epsilon {
            *best = Threshold {
                epsilon: v,
                location: x,
            };
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..THRESHOLD_PROBES {
        let x = bounds.sample(&mut rng).0;
        let v = mean_at(&x)?;
        consider(x, v, &mut best);
    }

    // Adam on unit-cube coordinates from the best simulated point
    let dim = bounds.dim();
    let width: Vec<f64> = (0..dim).map(|d| bounds.width(d)).collect();
    let to_theta = |u: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = (0..dim).map(|d| bounds.low()[d] + u[d] * width[d]).collect();
        bounds.clip(&mut x);
        x
    };
    let mut u: Vec<f64> = (0..dim)
        .map(|d| {
            if width[d] > 0.0 {
                (start[d] - bounds.low()[d]) / width[d]
            } else {
                0.0
            }
        })
        .collect();
    let mut adam = Adam::new(dim, THRESHOLD_ADAM_LR);
    for _ in 0..THRESHOLD_ADAM_STEPS {
        let g = surrogate.predict_with_grad(&to_theta(&u), objective)?;
        let grad: Vec<f64> = (0..dim).map(|d| g.d_mean[d] * width[d]).collect();
        adam.step(&mut u, &grad);
        u.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let x = to_theta(&u);
    let v = mean_at(&x)?;
    consider(x, v, &mut best);

    // clipped polish: outside the box the objective is flat along the
    // violated coordinates
    let polish = lbfgs_maximize(
        |u: &[f64]| {
            let x = to_theta(u);
            let g = surrogate.predict_with_grad(&x, objective).ok()?;
            let grad = (0..dim)
                .map(|d| {
                    if (0.0..=1.0).contains(&u[d]) {
                        -g.d_mean[d] * width[d]
                    } else {
                        0.0
                    }
                })
                .collect();
            Some((-g.prediction.mean, grad))
        },
        (0..dim)
            .map(|d| {
                if width[d] > 0.0 {
                    (best.location[d] - bounds.low()[d]) / width[d]
                } else {
                    0.0
                }
            })
            .collect(),
        THRESHOLD_POLISH_ITERS,
    );
    if let Some(out) = polish {
        let x = to_theta(&out.x);
        let v = mean_at(&x)?;
        consider(x, v, &mut best);
    }
    if !best.epsilon.is_finite() {
        return Err(Error::NonFinite("surrogate mean"));
    }
    Ok(best)
}

/// Gaussian-CDF synthetic likelihood of a surrogate prediction.
pub fn synthetic_likelihood(mu: f64, nu: f64, sigma2: f64, epsilon: f64) -> Result<f64> {
    let scale = nu + sigma2;
    if nu < 0.0 || sigma2 < 0.0 || !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "predictive variance must be positive (nu={nu}, sigma2={sigma2})"
        )));
    }
    Ok(std_normal_cdf((epsilon - mu) / scale.sqrt()))
}

/// Approximate posterior for one time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSampleSet {
    pub t: usize,
    pub samples: Vec<Vec<f64>>,
    /// Importance weights of the proposals before resampling, when kept.
    pub weights: Option<Vec<f64>>,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let d = self.samples.first().map_or(0, Vec::len);
        (0..d)
            .map(|j| self.samples.iter().map(|s| s[j]).sum::<f64>() / n)
            .collect()
    }
}

/// Multinomial resampling: `n` indices drawn with replacement in proportion
/// to `weights`.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::NonFinite("resampling weights"));
    }
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::InvalidArgument(format!("resampling weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Number of prior proposals used to extract `i` posterior samples.
pub fn proposal_count(i: usize) -> usize {
    (20 * i).max(MIN_PROPOSALS)
}

/// Importance-weighted resampling of prior proposals under the synthetic
/// likelihood of one objective.
pub fn extract_posterior<S: DiscrepancySurrogate + ?Sized, R: Rng + ?Sized>(
    surrogate: &S,
    objective: usize,
    threshold: &Threshold,
    bounds: &Bounds,
    n_samples: usize,
    t: usize,
    rng: &mut R,
) -> Result<PosteriorSampleSet> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one posterior sample".into()));
    }
    surrogate.check_objective(objective)?;
    let sigma2 = surrogate.noise_variance(objective);
    let n_prop = proposal_count(n_samples);
    let proposals: Vec<Vec<f64>> = (0..n_prop).map(|_| bounds.sample(rng).0).collect();
    let mut weights = Vec::with_capacity(n_prop);
    for p in &proposals {
        let pred = surrogate.predict(p, objective)?;
        weights.push(synthetic_likelihood(
            pred.mean,
            pred.variance,
            sigma2,
            threshold.epsilon,
        )?);
    }
    let total: f64 = weights.iter().sum();
    let idx = if total > 0.0 && total.is_finite() {
        resample(&weights, n_samples, rng)?
    } else {
        warn!("all synthetic-likelihood weights vanished at t={t}; using uniform weights");
        weights.iter_mut().for_each(|w| *w = 1.0);
        resample(&weights, n_samples, rng)?
    };
    Ok(PosteriorSampleSet {
        t,
        samples: idx.into_iter().map(|i| proposals[i].clone()).collect(),
        weights: None,
    })
}

/// Checks `mean(Φ(zᵢ)) ≥ Φ(mean(zᵢ))` for `zᵢ = (ε − μᵢ)/√(ν + σ²)`, which
/// holds because Φ is convex on the non-positive half-line.
pub fn jensen_lower_bound_check(mus: &[f64], nu: f64, sigma2: f64, epsilon: f64) -> Result<bool> {
    if mus.is_empty() {
        return Err(Error::Empty("mean samples"));
    }
    let scale = nu + sigma2;
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("ν + σ² must be positive".into()));
    }
    let args: Vec<f64> = mus.iter().map(|m| (epsilon - m) / scale.sqrt()).collect();
    if args.iter().any(|a| *a > 0.0 || !a.is_finite()) {
        return Err(Error::Precondition(
            "kernel arguments must all be non-positive".into(),
        ));
    }
    let n = args.len() as f64;
    let lhs = args.iter().map(|a| std_normal_cdf(*a)).sum::<f64>() / n;
    let rhs = std_normal_cdf(args.iter().sum::<f64>() / n);
    // rounding slack for the equality case
    Ok(lhs >= rhs - 1e-15 * rhs.abs().max(f64::MIN_POSITIVE))
}

/// Posterior sample sets keyed by time index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorStore {
    entries: BTreeMap<usize, PosteriorSampleSet>,
    latest: Vec<usize>,
}

impl PosteriorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<&PosteriorSampleSet> {
        self.entries.get(&t)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &PosteriorSampleSet)> {
        self.entries.iter()
    }

    pub fn last_index(&self) -> Option<usize> {
        self.entries.keys().next_back().copied()
    }

    /// Indices written by the most recent [`PosteriorStore::replace_window`].
    pub fn latest(&self) -> &[usize] {
        &self.latest
    }

    /// Drops the posteriors of the refreshed window and stores the new ones.
    pub fn replace_window(&mut self, sets: Vec<PosteriorSampleSet>) {
        self.latest.clear();
        for s in sets {
            self.latest.push(s.t);
            self.entries.insert(s.t, s);
        }
    }

    pub fn insert(&mut self, set: PosteriorSampleSet) {
        self.latest = vec![set.t];
        self.entries.insert(set.t, set);
    }

    /// Time indices `j` such that both `j` and `j + 1` hold a non-empty posterior.
    pub fn consecutive_pairs(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(t, s)| {
                !s.is_empty() && self.entries.get(&(**t + 1)).is_some_and(|n| !n.is_empty())
            })
            .map(|(t, _)| *t)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::AnalyticSurrogate;
    use approx::assert_abs_diff_eq;

    #[test]
    fn likelihood_boundary_values() {
        assert_eq!(synthetic_likelihood(1.0, 0.5, 0.5, 1.0).unwrap(), 0.5);
        let v = synthetic_likelihood(4.0, 0.6, 0.4, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.001_349_898, epsilon = 1e-8);
        assert!(synthetic_likelihood(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn quadratic_threshold() {
        let s = AnalyticSurrogate::new(1, |x: &[f64]| (x[0] - 3.0).powi(2), 0.0, 1.0);
        let b = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let th = select_threshold(&s, 0, &b, &[9.0], 1).unwrap();
        assert!((th.location[0] - 3.0).abs() < 0.1);
        assert!(th.epsilon.abs() < 0.01);
    }

    #[test]
    fn flat_and_clipped_thresholds() {
        let flat = AnalyticSurrogate::new(2, |_: &[f64]| 1.25, 0.0, 1.0);
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let th = select_threshold(&flat, 0, &b, &[0.5, 0.5], 2).unwrap();
        assert_eq!(th.epsilon, 1.25);

        let slope = AnalyticSurrogate::new(1, |x: &[f64]| (x[0] + 4.0).powi(2), 0.0, 1.0);
        let b = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let th = select_threshold(&slope, 0, &b, &[5.0], 3).unwrap();
        assert!(th.location[0].abs() < 1e-9);
    }

    #[test]
    fn degenerate_weights_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = resample(&[0.0, 0.0, 3.0, 0.0], 500, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i == 2));
    }

    #[test]
    fn zero_weights_fall_back_to_prior() {
        // a mean so far above the threshold that every weight underflows
        let s = AnalyticSurrogate::new(1, |_: &[f64]| 1e6, 0.0, 1e-6);
        let th = Threshold {
            epsilon: 0.0,
            location: vec![0.0],
        };
        let b = Bounds::new(vec![0.0], vec![15.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let post = extract_posterior(&s, 0, &th, &b, 1000, 1, &mut rng).unwrap();
        assert_eq!(post.len(), 1000);
        assert!((post.mean()[0] - 7.5).abs() < 0.6);
    }

    #[test]
    fn jensen_examples() {
        assert!(jensen_lower_bound_check(&[2.0, 2.0, 2.0], 0.5, 0.5, 1.0).unwrap());
        // arguments −1 and −3
        assert!(jensen_lower_bound_check(&[1.0, 3.0], 0.5, 0.5, 0.0).unwrap());
        assert!(matches!(
            jensen_lower_bound_check(&[-1.0, 3.0], 0.5, 0.5, 0.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn store_tracks_consecutive_indices() {
        let mut store = PosteriorStore::new();
        let set = |t| PosteriorSampleSet {
            t,
            samples: vec![vec![t as f64]],
            weights: None,
        };
        store.replace_window(vec![set(1), set(2)]);
        store.replace_window(vec![set(2), set(3)]);
        store.insert(set(5));
        assert_eq!(store.consecutive_pairs(), vec![1, 2]);
        assert_eq!(store.latest(), &[5]);
        assert_eq!(store.last_index(), Some(5));
    }
}
