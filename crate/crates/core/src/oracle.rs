//! Brute-force reference estimators: quantile rejection ABC, a Gaussian-KDE
//! mode and one-dimensional grid quadrature of an exact likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Simulator;
use crate::error::{Error, Result};
use crate::ssm::{discrepancy, summarize, ObservationSet, SummaryStats};

const CHUNK: usize = 1024;
const KDE_STARTS: usize = 5;
const KDE_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcResult {
    /// Accepted parameters, sorted by increasing discrepancy.
    pub accepted: Vec<Vec<f64>>,
    pub discrepancies: Vec<f64>,
    /// Largest accepted discrepancy.
    pub threshold: f64,
    pub n_proposals: usize,
}

impl AbcResult {
    pub fn mean(&self) -> Vec<f64> {
        let n = self.accepted.len() as f64;
        (0..self.accepted[0].len())
            .map(|j| self.accepted.iter().map(|a| a[j]).sum::<f64>() / n)
            .collect()
    }
}

/// Simulates `n` prior draws and keeps the `⌈retain·n⌉` with the lowest
/// discrepancy. Chunks of proposals use independent random streams derived
/// from `seed`, so the result does not depend on the thread count.
pub fn rejection_abc<S: Simulator + Sync + ?Sized>(
    sim: &S,
    observed: &SummaryStats,
    n: usize,
    retain: f64,
    seed: u64,
) -> Result<AbcResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one proposal".into()));
    }
    if !(retain > 0.0 && retain <= 1.0) {
        return Err(Error::InvalidArgument(format!("retain {retain} outside (0, 1]")));
    }
    let keep = ((retain * n as f64).ceil() as usize).clamp(1, n);
    let n_chunks = n.div_ceil(CHUNK);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<(f64, Vec<f64>)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let size = CHUNK.min(n - c * CHUNK);
            (0..size)
                .map(|_| {
                    let theta = sim.bounds().sample(&mut rng).0;
                    let obs = sim.simulate(&theta, &mut rng)?;
                    Ok((discrepancy(observed, &summarize(&obs)?)?, theta))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    // stable order for equal discrepancies
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(keep);
    let threshold = scored.last().expect("keep ≥ 1").0;
    let (discrepancies, accepted) = scored.into_iter().unzip();
    Ok(AbcResult {
        accepted,
        discrepancies,
        threshold,
        n_proposals: n,
    })
}

/// Scott's rule bandwidth `n^{−1/(d+4)}` for standardized data.
pub fn scott_bandwidth(n: usize, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Mode of a Gaussian KDE with Scott bandwidth on standardized samples.
/// Mean-shift ascent starts from the five samples of highest density; the
/// end point of highest density is returned in the original units.
pub fn kde_map_estimate(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument("KDE needs at least 2 samples".into()));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d || s.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("samples must be finite and equally sized".into()));
    }
    let norm = crate::surrogate::InputNormalizer::fit(samples);
    let z: Vec<Vec<f64>> = samples.iter().map(|s| norm.apply(s)).collect();
    let h2 = scott_bandwidth(n, d).powi(2);
    let log_kernel = |a: &[f64], b: &[f64]| -> f64 {
        -0.5 * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / h2
    };
    let density = |x: &[f64]| -> f64 { z.iter().map(|zi| log_kernel(x, zi).exp()).sum() };

    let dens: Vec<f64> = z.par_iter().map(|zi| density(zi)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| dens[*b].total_cmp(&dens[*a]).then(a.cmp(b)));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for &start in order.iter().take(KDE_STARTS) {
        let mut x = z[start].clone();
        for _ in 0..KDE_STEPS {
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for zi in &z {
                let w = log_kernel(&x, zi).exp();
                den += w;
                for j in 0..d {
                    num[j] += w * zi[j];
                }
            }
            if den <= 0.0 {
                break;
            }
            let next: Vec<f64> = num.iter().map(|v| v / den).collect();
            let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = next;
            if moved < 1e-10 {
                break;
            }
        }
        let v = density(&x);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    }
    let (mode, _) = best.expect("at least one start");
    Ok(norm.invert(&mode))
}

/// Posterior mean of a scalar parameter under a uniform prior on
/// `[low, high]`, by midpoint quadrature of `exp(log_lik)` on `n` cells.
pub fn grid_posterior_mean<F: Fn(f64) -> f64>(log_lik: F, low: f64, high: f64, n: usize) -> f64 {
    let step = (high - low) / n as f64;
    let grid: Vec<f64> = (0..n).map(|i| low + (i as f64 + 0.5) * step).collect();
    let ll: Vec<f64> = grid.iter().map(|&t| log_lik(t)).collect();
    let max = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (t, l) in grid.iter().zip(&ll) {
        let w = (l - max).exp();
        num += w * t;
        den += w;
    }
    num / den
}

/// Exact LG log-likelihood of a dataset, up to a constant: `x_i ~ N(θ, 10²)`.
pub fn lg_log_likelihood(theta: f64, obs: &ObservationSet) -> f64 {
    obs.points().iter().map(|x| -0.5 * ((x - theta) / 10.0).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{ModelKind, SsmModel};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn scott_reference() {
        assert_abs_diff_eq!(scott_bandwidth(100, 1), 0.398_107, epsilon = 1e-6);
    }

    #[test]
    fn identical_samples_mode() {
        let s = vec![vec![3.5, -1.0]; 10];
        assert_eq!(kde_map_estimate(&s).unwrap(), vec![3.5, -1.0]);
        assert!(kde_map_estimate(&s[..1]).is_err());
    }

    fn normal_samples(seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| vec![2.0 + rng.sample::<f64, _>(StandardNormal)])
            .collect()
    }

    #[test]
    fn mode_matches_grid_search_of_the_same_density() {
        let s = normal_samples(3, 2000);
        let m = kde_map_estimate(&s).unwrap()[0];
        let mean = s.iter().map(|v| v[0]).sum::<f64>() / 2000.0;
        let sd = (s.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / 2000.0).sqrt();
        let h = scott_bandwidth(2000, 1) * sd;
        let dens = |x: f64| s.iter().map(|v| (-0.5 * ((x - v[0]) / h).powi(2)).exp()).sum::<f64>();
        let (mut arg, mut top) = (0.0, f64::NEG_INFINITY);
        for i in 0..=40_000 {
            let x = -1.0 + i as f64 * 1e-4 * 1.5;
            let v = dens(x);
            if v > top {
                arg = x;
                top = v;
            }
        }
        assert!((m - arg).abs() < 2e-4, "{m} vs {arg}");
    }

    #[test]
    fn normal_mode_on_average() {
        // a single 10⁴-sample mode has sampling sd ≈ 0.09, so average seeds
        let modes: Vec<f64> = (0..8)
            .map(|seed| kde_map_estimate(&normal_samples(seed, 10_000)).unwrap()[0])
            .collect();
        let avg = modes.iter().sum::<f64>() / modes.len() as f64;
        assert!((avg - 2.0).abs() < 0.1, "{modes:?}");
    }

    #[test]
    fn abc_retention_extremes() {
        let model = SsmModel::new(ModelKind::Lg);
        let obs = summarize(&ObservationSet(vec![5.0; 10])).unwrap();
        let all = rejection_abc(&model, &obs, 300, 1.0, 1).unwrap();
        assert_eq!(all.accepted.len(), 300);
        let one = rejection_abc(&model, &obs, 300, 1.0 / 300.0, 1).unwrap();
        assert_eq!(one.accepted.len(), 1);
        assert_eq!(one.threshold, all.discrepancies[0]);
        assert!(all.discrepancies.iter().all(|d| *d <= all.threshold));
    }
}
