//! Choice of the next simulator inputs.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::posterior::PosteriorSampleSet;
use crate::ssm::Bounds;
use crate::surrogate::DiscrepancySurrogate;
use crate::transition::TransitionModel;

/// Confidence parameter δ of the LCBSC exploration weight.
pub const LCBSC_DELTA: f64 = 0.1;
pub const LCB_RESTARTS: usize = 20;
pub const LCB_STEPS: usize = 200;
const LCB_LR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcquisitionSource {
    Lcbsc,
    TransitionBnn,
    TransitionBlr,
    Prior,
}

impl AcquisitionSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lcbsc => "lcbsc",
            Self::TransitionBnn => "transition-bnn",
            Self::TransitionBlr => "transition-blr",
            Self::Prior => "prior",
        }
    }
}

impl fmt::Display for AcquisitionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionBatch {
    pub proposals: Vec<Vec<f64>>,
    pub source: AcquisitionSource,
}

/// `β_t = 2 ln(t^{2d+2} π² / (3δ))`, evaluated in log space.
pub fn lcbsc_beta(t: usize, d: usize) -> f64 {
    let t = t.max(1) as f64;
    2.0 * ((2 * d + 2) as f64 * t.ln() + 2.0 * std::f64::consts::PI.ln() - (3.0 * LCBSC_DELTA).ln())
}

/// `μ(x) − √β · √(ν(x) + σ²)`.
pub fn lcb_value<S: DiscrepancySurrogate + ?Sized>(
    surrogate: &S,
    objective: usize,
    x: &[f64],
    beta: f64,
) -> Result<f64> {
    let p = surrogate.predict(x, objective)?;
    Ok(p.mean - beta.sqrt() * (p.variance + surrogate.noise_variance(objective)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcbOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    /// LCB at the end point of every restart.
    pub restart_values: Vec<f64>,
}

/// Multi-start projected Adam descent of the LCB over the bounds.
pub fn lcbsc_next<S: DiscrepancySurrogate + ?Sized>(
    surrogate: &S,
    objective: usize,
    t: usize,
    bounds: &Bounds,
    seed: u64,
) -> Result<LcbOutcome> {
    if t == 0 {
        return Err(Error::InvalidArgument("acquisition counter starts at 1".into()));
    }
    surrogate.check_objective(objective)?;
    let d = bounds.dim();
    let beta = lcbsc_beta(t, d);
    let sigma2 = surrogate.noise_variance(objective);
    let width: Vec<f64> = (0..d).map(|j| bounds.width(j)).collect();
    let to_theta = |u: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = (0..d).map(|j| bounds.low()[j] + u[j] * width[j]).collect();
        bounds.clip(&mut x);
        x
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut restart_values = Vec::with_capacity(LCB_RESTARTS);
    for _ in 0..LCB_RESTARTS {
        let mut u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let mut adam = Adam::new(d, LCB_LR);
        for _ in 0..LCB_STEPS {
            let g = surrogate.predict_with_grad(&to_theta(&u), objective)?;
            let sd = (g.prediction.variance + sigma2).sqrt().max(1e-300);
            let grad: Vec<f64> = (0..d)
                .map(|j| (g.d_mean[j] - beta.sqrt() * g.d_variance[j] / (2.0 * sd)) * width[j])
                .collect();
            adam.step(&mut u, &grad);
            u.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        let x = to_theta(&u);
        let v = lcb_value(surrogate, objective, &x, beta)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("lower confidence bound"));
        }
        restart_values.push(v);
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((x, v));
        }
    }
    let (point, value) = best.expect("at least one restart");
    Ok(LcbOutcome {
        point,
        value,
        restart_values,
    })
}

/// Proposals from the transition model's predictive distribution: each one
/// pushes a random draw of the current posterior through one predictive
/// sample, then clips it to the bounds. Without a trained model the prior is
/// used instead.
pub fn transition_proposals<R: Rng + ?Sized>(
    model: Option<&TransitionModel>,
    posterior: &PosteriorSampleSet,
    b_sim: usize,
    bounds: &Bounds,
    rng: &mut R,
) -> Result<AcquisitionBatch> {
    let model = match model {
        Some(m) if m.is_trained() => m,
        _ => {
            return Ok(AcquisitionBatch {
                proposals: (0..b_sim).map(|_| bounds.sample(rng).0).collect(),
                source: AcquisitionSource::Prior,
            })
        }
    };
    if posterior.is_empty() {
        return Err(Error::Empty("current posterior"));
    }
    let source = match model {
        TransitionModel::Bnn(_) => AcquisitionSource::TransitionBnn,
        TransitionModel::Blr(_) => AcquisitionSource::TransitionBlr,
    };
    let proposals = (0..b_sim)
        .map(|_| {
            let from = &posterior.samples[rng.random_range(0..posterior.len())];
            let mut x = model
                .predict_samples(from, 1, rng)
                .pop()
                .expect("one predictive draw");
            bounds.clip(&mut x);
            x
        })
        .collect();
    Ok(AcquisitionBatch { proposals, source })
}
