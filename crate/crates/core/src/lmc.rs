//! Linear model of coregionalization over the objectives of a moving window.
//!
//! Each output is a fixed linear mixture of `Q` latent sparse variational
//! GPs plus its own linear mean function:
//!
//! ```text
//! f_l(x) = k_l·x + b_l + Σ_q a_{l,q} u_q(x)
//! ```
//!
//! The latents use a unit-variance ARD squared-exponential kernel and a
//! whitened variational posterior `u_q(Z_q) = chol(K_zz) v_q`, `v_q ~ N(m_q, S_q S_qᵀ)`.
//! All parameters (mixing weights, inducing locations, variational
//! parameters, mean functions, lengthscales and per-output noise) are fitted
//! jointly by Adam on the full-batch ELBO.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::ssm::Bounds;
use crate::surrogate::{
    cholesky_with_jitter, DiscrepancySurrogate, InputNormalizer, Prediction, PredictionGrad,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER: f64 = 1e-6;
const JITTER_MAX: f64 = 1e-2;

/// Training set for one window: shared inputs, one target column per objective.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDiscrepancySet {
    pub inputs: Vec<Vec<f64>>,
    /// `targets[s][w]` is the discrepancy of input `s` against window objective `w`.
    pub targets: Vec<Vec<f64>>,
    /// First and last (inclusive) time index of the window.
    pub window: (usize, usize),
}

impl WindowedDiscrepancySet {
    pub fn n_objectives(&self) -> usize {
        self.window.1 + 1 - self.window.0
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn column(&self, objective: usize) -> Vec<f64> {
        self.targets.iter().map(|r| r[objective]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Empty("windowed discrepancy set"));
        }
        if self.window.1 < self.window.0 {
            return Err(Error::InvalidArgument("window end precedes start".into()));
        }
        let l = self.n_objectives();
        if self.targets.len() != self.inputs.len() || self.targets.iter().any(|r| r.len() != l) {
            return Err(Error::InvalidArgument(format!(
                "every input needs exactly {l} targets"
            )));
        }
        if self
            .targets
            .iter()
            .flatten()
            .chain(self.inputs.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("windowed discrepancy set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LmcConfig {
    /// Number of latent processes; `None` means one per objective.
    pub n_latents: Option<usize>,
    pub n_inducing: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// When false the mixing matrix stays at its initial value.
    pub train_mixing: bool,
    /// Overrides the default identity-padded mixing initialization.
    pub initial_mixing: Option<Vec<Vec<f64>>>,
}

impl Default for LmcConfig {
    fn default() -> Self {
        Self {
            n_latents: None,
            n_inducing: 50,
            epochs: 1000,
            learning_rate: 0.1,
            seed: 0,
            train_mixing: true,
            initial_mixing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Latent {
    z: DMatrix<f64>,
    log_ls: Vec<f64>,
    m: DVector<f64>,
    /// Lower-triangular factor; the diagonal is stored as its logarithm.
    s: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    mixing: DMatrix<f64>,
    slope: DMatrix<f64>,
    intercept: DVector<f64>,
    log_noise: DVector<f64>,
    latents: Vec<Latent>,
}

impl Params {
    fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.mixing.fill(0.0);
        p.slope.fill(0.0);
        p.intercept.fill(0.0);
        p.log_noise.fill(0.0);
        for lat in &mut p.latents {
            lat.z.fill(0.0);
            lat.log_ls.iter_mut().for_each(|v| *v = 0.0);
            lat.m.fill(0.0);
            lat.s.fill(0.0);
        }
        p
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(self.mixing.iter());
        v.extend(self.slope.iter());
        v.extend(self.intercept.iter());
        v.extend(self.log_noise.iter());
        for lat in &self.latents {
            v.extend(lat.z.iter());
            v.extend(lat.log_ls.iter());
            v.extend(lat.m.iter());
            let m = lat.s.nrows();
            for j in 0..m {
                for i in j..m {
                    v.push(lat.s[(i, j)]);
                }
            }
        }
        v
    }

    fn unflatten(&mut self, v: &[f64]) {
        let mut it = v.iter().copied();
        self.mixing.iter_mut().for_each(|x| *x = it.next().unwrap());
        self.slope.iter_mut().for_each(|x| *x = it.next().unwrap());
        self.intercept.iter_mut().for_each(|x| *x = it.next().unwrap());
        self.log_noise.iter_mut().for_each(|x| *x = it.next().unwrap());
        for lat in &mut self.latents {
            lat.z.iter_mut().for_each(|x| *x = it.next().unwrap());
            lat.log_ls.iter_mut().for_each(|x| *x = it.next().unwrap());
            lat.m.iter_mut().for_each(|x| *x = it.next().unwrap());
            let m = lat.s.nrows();
            for j in 0..m {
                for i in j..m {
                    lat.s[(i, j)] = it.next().unwrap();
                }
            }
        }
    }
}

/// Unit-variance ARD squared-exponential cross-covariance between the rows
/// of `a` (n×d) and `b` (m×d).
fn rbf_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &[f64]) -> DMatrix<f64> {
    let inv: Vec<f64> = ls.iter().map(|l| 1.0 / (l * l)).collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut r2 = 0.0;
        for (d, w) in inv.iter().enumerate() {
            let diff = a[(i, d)] - b[(j, d)];
            r2 += diff * diff * w;
        }
        (-0.5 * r2).exp()
    })
}

fn factor_s(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = raw.lower_triangle();
    for i in 0..s.nrows() {
        s[(i, i)] = raw[(i, i)].exp();
    }
    s
}

/// Evaluation of the latent marginals at the training inputs.
struct LatentEval {
    /// Lz⁻¹ Kzx
    a: DMatrix<f64>,
    /// Sᵀ a
    t: DMatrix<f64>,
    mean: DVector<f64>,
    var: DVector<f64>,
    kzx: DMatrix<f64>,
    lz: DMatrix<f64>,
    s: DMatrix<f64>,
}

fn eval_latent(lat: &Latent, x: &DMatrix<f64>) -> Option<LatentEval> {
    let ls: Vec<f64> = lat.log_ls.iter().map(|v| v.exp()).collect();
    let kzz = rbf_cross(&lat.z, &lat.z, &ls);
    let (chol, _) = cholesky_with_jitter(&kzz, JITTER, JITTER_MAX).ok()?;
    let lz = chol.l();
    let kzx = rbf_cross(&lat.z, x, &ls);
    let a = lz.solve_lower_triangular(&kzx)?;
    let s = factor_s(&lat.s);
    let t = s.tr_mul(&a);
    let mean = a.tr_mul(&lat.m);
    let n = x.nrows();
    let var = DVector::from_fn(n, |j, _| {
        1.0 - a.column(j).norm_squared() + t.column(j).norm_squared()
    });
    Some(LatentEval {
        a,
        t,
        mean,
        var,
        kzx,
        lz,
        s,
    })
}

/// Negative-free ELBO and its gradient with respect to every parameter.
fn elbo(
    p: &Params,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    want_grad: bool,
) -> Option<(f64, Option<Params>)> {
    let n = x.nrows();
    let n_out = y.ncols();
    let n_lat = p.latents.len();
    let evals: Vec<LatentEval> = p
        .latents
        .iter()
        .map(|lat| eval_latent(lat, x))
        .collect::<Option<_>>()?;

    let noise: Vec<f64> = p.log_noise.iter().map(|v| v.exp()).collect();
    // residuals r[n, l] and variances
    let mut value = 0.0;
    let mut resid = DMatrix::zeros(n, n_out);
    for l in 0..n_out {
        for i in 0..n {
            let mut f = p.intercept[l];
            for d in 0..x.ncols() {
                f += p.slope[(l, d)] * x[(i, d)];
            }
            let mut v = 0.0;
            for (q, ev) in evals.iter().enumerate() {
                let a = p.mixing[(l, q)];
                f += a * ev.mean[i];
                v += a * a * ev.var[i];
            }
            let r = y[(i, l)] - f;
            resid[(i, l)] = r;
            value += -0.5 * (LN_2PI + p.log_noise[l]) - (r * r + v) / (2.0 * noise[l]);
        }
    }
    for (lat, ev) in p.latents.iter().zip(&evals) {
        let m = lat.m.len() as f64;
        let log_diag: f64 = (0..lat.s.nrows()).map(|i| lat.s[(i, i)]).sum();
        let kl = 0.5 * (ev.s.norm_squared() + lat.m.norm_squared() - m - 2.0 * log_diag);
        value -= kl;
    }
    if !value.is_finite() {
        return None;
    }
    if !want_grad {
        return Some((value, None));
    }

    let mut g = p.zeros_like();
    // noise, mean function, mixing
    for l in 0..n_out {
        let mut dnoise = 0.0;
        for i in 0..n {
            let r = resid[(i, l)];
            let mut v = 0.0;
            for (q, ev) in evals.iter().enumerate() {
                v += p.mixing[(l, q)].powi(2) * ev.var[i];
            }
            dnoise += -0.5 + (r * r + v) / (2.0 * noise[l]);
            let w = r / noise[l];
            g.intercept[l] += w;
            for d in 0..x.ncols() {
                g.slope[(l, d)] += w * x[(i, d)];
            }
            for (q, ev) in evals.iter().enumerate() {
                g.mixing[(l, q)] +=
                    w * ev.mean[i] - p.mixing[(l, q)] * ev.var[i] / noise[l];
            }
        }
        g.log_noise[l] = dnoise;
    }

    for q in 0..n_lat {
        let lat = &p.latents[q];
        let ev = &evals[q];
        let gl = &mut g.latents[q];
        let mm = lat.m.len();
        // ∂/∂μ_n and the (input-independent) ∂/∂ν
        let gmean = DVector::from_fn(n, |i, _| {
            (0..n_out)
                .map(|l| p.mixing[(l, q)] * resid[(i, l)] / noise[l])
                .sum::<f64>()
        });
        let h: f64 = (0..n_out)
            .map(|l| -p.mixing[(l, q)].powi(2) / (2.0 * noise[l]))
            .sum();

        gl.m = &ev.a * &gmean - &lat.m;

        let mut ds = (&ev.a * ev.t.transpose()) * (2.0 * h) - &ev.s;
        for i in 0..mm {
            ds[(i, i)] += 1.0 / ev.s[(i, i)];
        }
        let mut ds = ds.lower_triangle();
        for i in 0..mm {
            // log-parameterized diagonal
            ds[(i, i)] *= ev.s[(i, i)];
        }
        gl.s = ds;

        // ∂/∂(Lz⁻¹ Kzx)
        let abar = &lat.m * gmean.transpose() + (&ev.s * &ev.t - &ev.a) * (2.0 * h);
        let kzx_bar = ev.lz.tr_solve_lower_triangular(&abar)?;
        let lbar = -(&kzx_bar * ev.a.transpose());
        // Cholesky backward: K̄ = L⁻ᵀ Φ(Lᵀ L̄) L⁻¹ over all entries
        let mut phi = ev.lz.tr_mul(&lbar.lower_triangle()).lower_triangle();
        for i in 0..mm {
            phi[(i, i)] *= 0.5;
        }
        let tmp = ev.lz.tr_solve_lower_triangular(&phi)?;
        let kzz_bar = ev
            .lz
            .tr_solve_lower_triangular(&tmp.transpose())?
            .transpose();

        let ls: Vec<f64> = lat.log_ls.iter().map(|v| v.exp()).collect();
        let dim = x.ncols();
        let mut dz = DMatrix::zeros(mm, dim);
        let mut dls = vec![0.0; dim];
        for i in 0..mm {
            for j in 0..n {
                let w = kzx_bar[(i, j)] * ev.kzx[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for d in 0..dim {
                    let diff = lat.z[(i, d)] - x[(j, d)];
                    let il2 = 1.0 / (ls[d] * ls[d]);
                    dz[(i, d)] -= w * diff * il2;
                    dls[d] += w * diff * diff * il2;
                }
            }
        }
        let kzz = rbf_cross(&lat.z, &lat.z, &ls);
        for i in 0..mm {
            for j in 0..i {
                let w = (kzz_bar[(i, j)] + kzz_bar[(j, i)]) * kzz[(i, j)];
                for d in 0..dim {
                    let diff = lat.z[(i, d)] - lat.z[(j, d)];
                    let il2 = 1.0 / (ls[d] * ls[d]);
                    dz[(i, d)] -= w * diff * il2;
                    dz[(j, d)] += w * diff * il2;
                    dls[d] += w * diff * diff * il2;
                }
            }
        }
        gl.z = dz;
        gl.log_ls = dls;
    }
    Some((value, Some(g)))
}

/// Cached quantities for fast latent prediction.
#[derive(Debug, Clone)]
struct LatentPredictor {
    z: DMatrix<f64>,
    ls: Vec<f64>,
    lz: DMatrix<f64>,
    /// Lz⁻ᵀ m
    c: DVector<f64>,
    /// Lz⁻ᵀ S
    b: DMatrix<f64>,
}

impl LatentPredictor {
    fn new(lat: &Latent) -> Result<Self> {
        let ls: Vec<f64> = lat.log_ls.iter().map(|v| v.exp()).collect();
        let kzz = rbf_cross(&lat.z, &lat.z, &ls);
        let (chol, _) = cholesky_with_jitter(&kzz, JITTER, JITTER_MAX)?;
        let lz = chol.l();
        let c = lz
            .tr_solve_lower_triangular(&lat.m)
            .ok_or(Error::NotPositiveDefinite { jitter: JITTER_MAX })?;
        let b = lz
            .tr_solve_lower_triangular(&factor_s(&lat.s))
            .ok_or(Error::NotPositiveDefinite { jitter: JITTER_MAX })?;
        Ok(Self {
            z: lat.z.clone(),
            ls,
            lz,
            c,
            b,
        })
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.z.nrows(), |i, _| {
            let mut r2 = 0.0;
            for (d, l) in self.ls.iter().enumerate() {
                let diff = (self.z[(i, d)] - x[d]) / l;
                r2 += diff * diff;
            }
            (-0.5 * r2).exp()
        })
    }

    fn predict(&self, x: &[f64]) -> Prediction {
        let k = self.kvec(x);
        let mean = k.dot(&self.c);
        let a = self
            .lz
            .solve_lower_triangular(&k)
            .expect("non-singular factor");
        let bt = self.b.tr_mul(&k);
        Prediction {
            mean,
            variance: (1.0 - a.norm_squared() + bt.norm_squared()).max(0.0),
        }
    }

    /// Prediction and gradients with respect to the normalized input.
    fn predict_with_grad(&self, x: &[f64]) -> (Prediction, Vec<f64>, Vec<f64>) {
        let k = self.kvec(x);
        let mean = k.dot(&self.c);
        let a = self
            .lz
            .solve_lower_triangular(&k)
            .expect("non-singular factor");
        let kinv_k = self
            .lz
            .tr_solve_lower_triangular(&a)
            .expect("non-singular factor");
        let bt = self.b.tr_mul(&k);
        let bbt_k = &self.b * &bt;
        let raw_var = 1.0 - a.norm_squared() + bt.norm_squared();
        let d = x.len();
        let mut dm = vec![0.0; d];
        let mut dv = vec![0.0; d];
        for i in 0..k.len() {
            for dd in 0..d {
                // ∂k_i/∂x_d
                let dk = k[i] * (self.z[(i, dd)] - x[dd]) / (self.ls[dd] * self.ls[dd]);
                dm[dd] += dk * self.c[i];
                dv[dd] += 2.0 * dk * (bbt_k[i] - kinv_k[i]);
            }
        }
        if raw_var <= 0.0 {
            dv.iter_mut().for_each(|v| *v = 0.0);
        }
        (
            Prediction {
                mean,
                variance: raw_var.max(0.0),
            },
            dm,
            dv,
        )
    }
}

/// A fitted multi-output discrepancy surrogate.
#[derive(Debug, Clone)]
pub struct LmcModel {
    params: Params,
    normalizer: InputNormalizer,
    predictors: Vec<LatentPredictor>,
    window: (usize, usize),
    elbo_trace: Vec<f64>,
}

impl LmcModel {
    pub fn n_latents(&self) -> usize {
        self.params.latents.len()
    }

    pub fn n_inducing(&self) -> usize {
        self.params.latents[0].m.len()
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    /// Mixing coefficients `a_{l,q}` as rows per objective.
    pub fn mixing(&self) -> Vec<Vec<f64>> {
        (0..self.params.mixing.nrows())
            .map(|l| self.params.mixing.row(l).iter().copied().collect())
            .collect()
    }

    pub fn elbo_trace(&self) -> &[f64] {
        &self.elbo_trace
    }

    pub fn normalizer(&self) -> &InputNormalizer {
        &self.normalizer
    }

    pub fn inducing_points(&self, latent: usize) -> Vec<Vec<f64>> {
        let z = &self.params.latents[latent].z;
        (0..z.nrows())
            .map(|i| {
                let row: Vec<f64> = z.row(i).iter().copied().collect();
                self.normalizer.invert(&row)
            })
            .collect()
    }

    /// Latent lengthscales in normalized input units.
    pub fn lengthscales(&self, latent: usize) -> Vec<f64> {
        self.params.latents[latent].log_ls.iter().map(|v| v.exp()).collect()
    }

    /// Linear mean function value of an objective at a raw input.
    pub fn mean_function(&self, theta: &[f64], objective: usize) -> f64 {
        let x = self.normalizer.apply(theta);
        let mut v = self.params.intercept[objective];
        for (d, xd) in x.iter().enumerate() {
            v += self.params.slope[(objective, d)] * xd;
        }
        v
    }

    /// Predictions of each zero-mean latent process at a raw input.
    pub fn latent_predictions(&self, theta: &[f64]) -> Vec<Prediction> {
        let x = self.normalizer.apply(theta);
        self.predictors.iter().map(|p| p.predict(&x)).collect()
    }

    /// Predictions for every objective, sharing the latent evaluations.
    pub fn predict_all(&self, theta: &[f64]) -> Vec<Prediction> {
        let latents = self.latent_predictions(theta);
        (0..self.params.mixing.nrows())
            .map(|l| self.combine(theta, l, &latents))
            .collect()
    }

    fn combine(&self, theta: &[f64], objective: usize, latents: &[Prediction]) -> Prediction {
        let mut mean = self.mean_function(theta, objective);
        let mut variance = 0.0;
        for (q, lp) in latents.iter().enumerate() {
            let a = self.params.mixing[(objective, q)];
            mean += a * lp.mean;
            variance += a * a * lp.variance;
        }
        Prediction {
            mean,
            variance: variance.max(0.0),
        }
    }

    /// Replaces the mixing matrix, e.g. to probe the linearity of the mixture.
    pub fn set_mixing(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        let (l, q) = self.params.mixing.shape();
        if rows.len() != l || rows.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidArgument(format!("mixing must be {l}x{q}")));
        }
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                self.params.mixing[(i, j)] = *v;
            }
        }
        Ok(())
    }

    /// Sets the linear mean function of one objective.
    pub fn set_mean_function(&mut self, objective: usize, slope: &[f64], intercept: f64) {
        for (d, v) in slope.iter().enumerate() {
            self.params.slope[(objective, d)] = *v;
        }
        self.params.intercept[objective] = intercept;
    }

    /// ELBO of the current parameters on a training set.
    pub fn elbo(&self, data: &WindowedDiscrepancySet) -> Result<f64> {
        let (x, y) = design(data, &self.normalizer);
        elbo(&self.params, &x, &y, false)
            .map(|(v, _)| v)
            .ok_or(Error::NotPositiveDefinite { jitter: JITTER_MAX })
    }
}

impl DiscrepancySurrogate for LmcModel {
    fn n_objectives(&self) -> usize {
        self.params.mixing.nrows()
    }

    fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn predict(&self, theta: &[f64], objective: usize) -> Result<Prediction> {
        self.check_objective(objective)?;
        let latents = self.latent_predictions(theta);
        Ok(self.combine(theta, objective, &latents))
    }

    fn predict_with_grad(&self, theta: &[f64], objective: usize) -> Result<PredictionGrad> {
        self.check_objective(objective)?;
        let x = self.normalizer.apply(theta);
        let d = x.len();
        let mut mean = self.mean_function(theta, objective);
        let mut variance = 0.0;
        let mut dm: Vec<f64> = (0..d).map(|dd| self.params.slope[(objective, dd)]).collect();
        let mut dv = vec![0.0; d];
        for (q, pred) in self.predictors.iter().enumerate() {
            let a = self.params.mixing[(objective, q)];
            let (p, gm, gv) = pred.predict_with_grad(&x);
            mean += a * p.mean;
            variance += a * a * p.variance;
            for dd in 0..d {
                dm[dd] += a * gm[dd];
                dv[dd] += a * a * gv[dd];
            }
        }
        for dd in 0..d {
            dm[dd] /= self.normalizer.scale[dd];
            dv[dd] /= self.normalizer.scale[dd];
        }
        Ok(PredictionGrad {
            prediction: Prediction {
                mean,
                variance: variance.max(0.0),
            },
            d_mean: dm,
            d_variance: dv,
        })
    }

    fn noise_variance(&self, objective: usize) -> f64 {
        self.params.log_noise[objective].exp()
    }
}

fn design(data: &WindowedDiscrepancySet, norm: &InputNormalizer) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.len();
    let d = data.inputs[0].len();
    let l = data.n_objectives();
    let mut x = DMatrix::zeros(n, d);
    for (i, row) in data.inputs.iter().enumerate() {
        let z = norm.apply(row);
        for (j, v) in z.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let y = DMatrix::from_fn(n, l, |i, j| data.targets[i][j]);
    (x, y)
}

fn initial_params(
    data: &WindowedDiscrepancySet,
    bounds: &Bounds,
    norm: &InputNormalizer,
    config: &LmcConfig,
) -> Result<Params> {
    let n_out = data.n_objectives();
    let n_lat = config.n_latents.unwrap_or(n_out);
    if n_lat == 0 || config.n_inducing == 0 {
        return Err(Error::InvalidArgument(
            "need at least one latent and one inducing point".into(),
        ));
    }
    let d = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lo = norm.apply(bounds.low());
    let hi = norm.apply(bounds.high());
    // one draw of inducing locations shared by every latent at initialization
    let z = DMatrix::from_fn(config.n_inducing, d, |_, j| {
        lo[j] + (hi[j] - lo[j]) * rng.random::<f64>()
    });
    let mixing = match &config.initial_mixing {
        Some(rows) => {
            if rows.len() != n_out || rows.iter().any(|r| r.len() != n_lat) {
                return Err(Error::InvalidArgument(format!(
                    "initial mixing must be {n_out}x{n_lat}"
                )));
            }
            DMatrix::from_fn(n_out, n_lat, |l, q| rows[l][q])
        }
        None => DMatrix::from_fn(n_out, n_lat, |l, q| if l % n_lat == q { 1.0 } else { 0.1 }),
    };
    let log_noise = DVector::from_fn(n_out, |l, _| {
        let col = data.column(l);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        (0.01 * var).max(1e-6).ln()
    });
    let latents = (0..n_lat)
        .map(|_| Latent {
            z: z.clone(),
            log_ls: vec![0.0; d],
            m: DVector::zeros(config.n_inducing),
            s: DMatrix::zeros(config.n_inducing, config.n_inducing),
        })
        .collect();
    Ok(Params {
        mixing,
        slope: DMatrix::zeros(n_out, d),
        intercept: DVector::zeros(n_out),
        log_noise,
        latents,
    })
}

/// Fits the LMC surrogate to one window's discrepancies.
pub fn lmc_fit(
    data: &WindowedDiscrepancySet,
    bounds: &Bounds,
    config: &LmcConfig,
) -> Result<LmcModel> {
    data.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidArgument(
            "LMC fitting needs at least 2 training points".into(),
        ));
    }
    if data.inputs[0].len() != bounds.dim() {
        return Err(Error::InvalidArgument(
            "bounds dimension does not match inputs".into(),
        ));
    }
    let normalizer = InputNormalizer::fit(&data.inputs);
    let (x, y) = design(data, &normalizer);
    let mut params = initial_params(data, bounds, &normalizer, config)?;
    let n_mix = params.mixing.len();

    let mut flat = params.flatten();
    let mut adam = Adam::new(flat.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut last_good = params.clone();
    for _ in 0..config.epochs {
        let Some((value, Some(grad))) = elbo(&params, &x, &y, true) else {
            // numerical breakdown: keep the last parameters that evaluated
            params = last_good.clone();
            break;
        };
        trace.push(value);
        last_good.clone_from(&params);
        let mut g: Vec<f64> = grad.flatten().into_iter().map(|v| -v).collect();
        if !config.train_mixing {
            g[..n_mix].iter_mut().for_each(|v| *v = 0.0);
        }
        adam.step(&mut flat, &g);
        params.unflatten(&flat);
    }
    match elbo(&params, &x, &y, false) {
        Some((v, _)) => trace.push(v),
        None => params = last_good,
    }
    let predictors = params
        .latents
        .iter()
        .map(LatentPredictor::new)
        .collect::<Result<_>>()?;
    Ok(LmcModel {
        params,
        normalizer,
        predictors,
        window: data.window,
        elbo_trace: trace,
    })
}
