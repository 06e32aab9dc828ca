//! Common interface of the discrepancy surrogates, plus input normalization
//! and Cholesky helpers shared by the GP implementations.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictive mean and latent variance of a surrogate at one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// A prediction together with its gradient with respect to the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub prediction: Prediction,
    pub d_mean: Vec<f64>,
    pub d_variance: Vec<f64>,
}

/// A fitted model of one or more discrepancy objectives over the state space.
pub trait DiscrepancySurrogate: Sync {
    fn n_objectives(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn predict(&self, theta: &[f64], objective: usize) -> Result<Prediction>;

    fn predict_with_grad(&self, theta: &[f64], objective: usize) -> Result<PredictionGrad>;

    /// Observation-noise variance σ² of the given objective.
    fn noise_variance(&self, objective: usize) -> f64;

    fn check_objective(&self, objective: usize) -> Result<()> {
        if objective >= self.n_objectives() {
            return Err(Error::ObjectiveOutOfRange {
                objective,
                n_objectives: self.n_objectives(),
            });
        }
        Ok(())
    }
}

/// A single-objective surrogate with a closed-form mean surface and constant
/// latent variance. Useful for exercising the posterior and acquisition code
/// against known answers.
#[derive(Clone)]
pub struct AnalyticSurrogate<F> {
    mean: F,
    dim: usize,
    variance: f64,
    noise: f64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> AnalyticSurrogate<F> {
    pub fn new(dim: usize, mean: F, variance: f64, noise: f64) -> Self {
        Self {
            mean,
            dim,
            variance,
            noise,
        }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> DiscrepancySurrogate for AnalyticSurrogate<F> {
    fn n_objectives(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, theta: &[f64], objective: usize) -> Result<Prediction> {
        self.check_objective(objective)?;
        Ok(Prediction {
            mean: (self.mean)(theta),
            variance: self.variance,
        })
    }

    fn predict_with_grad(&self, theta: &[f64], objective: usize) -> Result<PredictionGrad> {
        let prediction = self.predict(theta, objective)?;
        let mut x = theta.to_vec();
        let d_mean = (0..self.dim)
            .map(|d| {
                let h = 1e-6 * theta[d].abs().max(1.0);
                x[d] = theta[d] + h;
                let up = (self.mean)(&x);
                x[d] = theta[d] - h;
                let down = (self.mean)(&x);
                x[d] = theta[d];
                (up - down) / (2.0 * h)
            })
            .collect();
        Ok(PredictionGrad {
            prediction,
            d_mean,
            d_variance: vec![0.0; self.dim],
        })
    }

    fn noise_variance(&self, _objective: usize) -> f64 {
        self.noise
    }
}

/// Per-dimension centring and scaling of raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalizer {
    /// Centres on the sample mean and scales by the sample standard
    /// deviation; a constant column keeps unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut shift = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            shift[j] = mean;
            let sd = var.sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                scale[j] = sd;
            }
        }
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (v, (s, c))) in out
            .iter_mut()
            .zip(x.iter().zip(self.shift.iter().zip(&self.scale)))
        {
            *o = (v - s) / c;
        }
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| v * c + s)
            .collect()
    }
}

/// Cholesky factorization of `k + jitter·I`, escalating the jitter tenfold
/// from `base` up to `max`.
pub(crate) fn cholesky_with_jitter(
    k: &DMatrix<f64>,
    base: f64,
    max: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = base;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(kj) {
            return Ok((ch, jitter));
        }
        if jitter >= max * (1.0 - 1e-12) {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter = (jitter * 10.0).min(max);
    }
}
