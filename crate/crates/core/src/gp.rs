//! Exact single-output GP regression for the BOLFI baseline.
//!
//! The kernel is an ARD squared-exponential plus a constant bias term,
//!
//! ```text
//! k(x, x') = σ_k² exp(-½ Σ_d (x_d - x'_d)² / l_d²) + σ_b²
//! ```
//!
//! with Gaussian observation noise σ² and a zero mean function. Inputs are
//! centred and scaled before fitting; lengthscales live in the normalized
//! space. Hyperparameters are MAP estimates under Gamma(shape, 1) priors,
//! optimized in log space by L-BFGS.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim::lbfgs_maximize;
use crate::ssm::Bounds;
use crate::surrogate::{
    cholesky_with_jitter, DiscrepancySurrogate, InputNormalizer, Prediction, PredictionGrad,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_BASE: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;
const MIN_SHAPE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// ARD lengthscales in normalized input units.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub bias_variance: f64,
    pub noise_variance: f64,
}

impl KernelHyperparams {
    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.bias_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(eta: &[f64]) -> Self {
        let d = eta.len() - 3;
        Self {
            lengthscales: eta[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: eta[d].exp(),
            bias_variance: eta[d + 1].exp(),
            noise_variance: eta[d + 2].exp(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpConfig {
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Gamma(shape, 1) shape parameters of the hyperpriors.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPriors {
    pub lengthscale_shapes: Vec<f64>,
    pub signal_shape: f64,
    pub bias_shape: f64,
}

impl HyperPriors {
    /// Shapes from the normalized prior box and the largest training target:
    /// `(θ_max - θ_min)/3` per lengthscale, `max(δ)²/9` for the signal
    /// variance and `max(δ)²/36` for the bias variance.
    pub fn from_data(bounds: &Bounds, normalizer: &InputNormalizer, y: &[f64]) -> Self {
        let lengthscale_shapes = (0..bounds.dim())
            .map(|d| (bounds.width(d) / normalizer.scale[d] / 3.0).max(MIN_SHAPE))
            .collect();
        let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sq = ymax * ymax;
        Self {
            lengthscale_shapes,
            signal_shape: (sq / 9.0).max(MIN_SHAPE),
            bias_shape: (sq / 36.0).max(MIN_SHAPE),
        }
    }

    fn shapes(&self) -> impl Iterator<Item = f64> + '_ {
        self.lengthscale_shapes
            .iter()
            .copied()
            .chain([self.signal_shape, self.bias_shape])
    }

    /// Log density of `exp(eta)` under Gamma(a, 1) including the log-space
    /// Jacobian, with its gradient.
    fn log_density(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; eta.len()];
        for (i, a) in self.shapes().enumerate() {
            value += a * eta[i] - eta[i].exp() - ln_gamma(a);
            grad[i] = a - eta[i].exp();
        }
        (value, grad)
    }
}

/// Training data after normalization.
#[derive(Debug, Clone)]
struct GpData {
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
}

impl GpData {
    fn n(&self) -> usize {
        self.x.len()
    }

    fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// Squared-exponential part without the signal variance.
    fn rbf(&self, lengthscales: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = rbf_unit(&self.x[i], &self.x[j], lengthscales);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    fn covariance(&self, hyp: &KernelHyperparams) -> (DMatrix<f64>, DMatrix<f64>) {
        let rbf = self.rbf(&hyp.lengthscales);
        let mut k = &rbf * hyp.signal_variance;
        k.add_scalar_mut(hyp.bias_variance);
        for i in 0..self.n() {
            k[(i, i)] += hyp.noise_variance;
        }
        (rbf, k)
    }
}

fn rbf_unit(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    (-0.5 * r2).exp()
}

/// Log marginal likelihood plus log hyperprior and its gradient in log space.
/// Returns `None` when the covariance cannot be factorized.
fn map_objective(data: &GpData, priors: &HyperPriors, eta: &[f64]) -> Option<(f64, Vec<f64>)> {
    if eta.iter().any(|v| !v.is_finite() || v.abs() > 30.0) {
        return None;
    }
    let hyp = KernelHyperparams::from_log(eta);
    let d = data.dim();
    let n = data.n();
    let (rbf, k) = data.covariance(&hyp);
    let (chol, jitter) =
        cholesky_with_jitter(&k, JITTER_BASE * hyp.signal_variance, JITTER_MAX * hyp.signal_variance)
            .ok()?;
    let alpha = chol.solve(&data.y);
    let l = chol.l_dirty();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * data.y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;

    // W = αα^T - K^{-1};  ∂LML/∂η = ½ tr(W ∂K/∂η)
    let kinv = chol.inverse();
    let mut grad = vec![0.0; eta.len()];
    let mut tr_sig = 0.0;
    let mut tr_bias = 0.0;
    let mut tr_diag = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let kr = rbf[(i, j)] * hyp.signal_variance;
            tr_sig += w * kr;
            tr_bias += w;
            if j < i {
                // each unordered pair once; its mirror cancels the ½
                for (dd, g) in grad.iter_mut().enumerate().take(d) {
                    let diff = (data.x[i][dd] - data.x[j][dd]) / hyp.lengthscales[dd];
                    *g += w * kr * diff * diff;
                }
            }
        }
        tr_diag += alpha[i] * alpha[i] - kinv[(i, i)];
    }
    grad[d] = 0.5 * (tr_sig + tr_diag * jitter);
    grad[d + 1] = 0.5 * tr_bias * hyp.bias_variance;
    grad[d + 2] = 0.5 * tr_diag * hyp.noise_variance;

    let (lp, lp_grad) = priors.log_density(eta);
    for (g, p) in grad.iter_mut().zip(lp_grad) {
        *g += p;
    }
    Some((lml + lp, grad))
}

/// A GP conditioned on its training data with cached factorization.
#[derive(Debug, Clone)]
pub struct TrainedGp {
    data: GpData,
    hyp: KernelHyperparams,
    normalizer: InputNormalizer,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    map_value: f64,
    trace: Vec<f64>,
}

impl TrainedGp {
    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyp
    }

    pub fn normalizer(&self) -> &InputNormalizer {
        &self.normalizer
    }

    pub fn n_train(&self) -> usize {
        self.data.n()
    }

    /// MAP objective at the fitted hyperparameters.
    pub fn map_value(&self) -> f64 {
        self.map_value
    }

    /// MAP objective after each accepted optimizer iteration of the winning restart.
    pub fn optimizer_trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Builds a GP with fixed hyperparameters (no optimization).
    pub fn with_hyperparams(
        x: &[Vec<f64>],
        y: &[f64],
        hyp: KernelHyperparams,
    ) -> Result<Self> {
        let (data, normalizer) = prepare(x, y)?;
        if hyp.lengthscales.len() != data.dim() {
            return Err(Error::InvalidArgument(
                "lengthscale count does not match input dimension".into(),
            ));
        }
        Self::condition(data, normalizer, hyp, f64::NAN, Vec::new())
    }

    fn condition(
        data: GpData,
        normalizer: InputNormalizer,
        hyp: KernelHyperparams,
        map_value: f64,
        trace: Vec<f64>,
    ) -> Result<Self> {
        let (_, k) = data.covariance(&hyp);
        let (chol, jitter) = cholesky_with_jitter(
            &k,
            JITTER_BASE * hyp.signal_variance,
            JITTER_MAX * hyp.signal_variance,
        )?;
        let alpha = chol.solve(&data.y);
        Ok(Self {
            data,
            hyp,
            normalizer,
            chol,
            alpha,
            jitter,
            map_value,
            trace,
        })
    }

    fn cross_cov(&self, z: &[f64]) -> DVector<f64> {
        let h = &self.hyp;
        DVector::from_iterator(
            self.data.n(),
            self.data
                .x
                .iter()
                .map(|xi| h.signal_variance * rbf_unit(z, xi, &h.lengthscales) + h.bias_variance),
        )
    }

    pub fn predict_point(&self, theta: &[f64]) -> Prediction {
        let z = self.normalizer.apply(theta);
        let ks = self.cross_cov(&z);
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor is non-singular");
        let prior = self.hyp.signal_variance + self.hyp.bias_variance;
        Prediction {
            mean,
            variance: (prior - v.norm_squared()).max(0.0),
        }
    }

    pub fn predict_point_with_grad(&self, theta: &[f64]) -> PredictionGrad {
        let z = self.normalizer.apply(theta);
        let h = &self.hyp;
        let d = z.len();
        let ks = self.cross_cov(&z);
        let mean = ks.dot(&self.alpha);
        let w = self.chol.solve(&ks);
        let prior = h.signal_variance + h.bias_variance;
        let variance_raw = prior - ks.dot(&w);
        let mut d_mean = vec![0.0; d];
        let mut d_var = vec![0.0; d];
        for (i, xi) in self.data.x.iter().enumerate() {
            let e = h.signal_variance * rbf_unit(&z, xi, &h.lengthscales);
            for dd in 0..d {
                let dk = -e * (z[dd] - xi[dd]) / (h.lengthscales[dd] * h.lengthscales[dd]);
                d_mean[dd] += self.alpha[i] * dk;
                d_var[dd] -= 2.0 * w[i] * dk;
            }
        }
        let clamped = variance_raw <= 0.0;
        for dd in 0..d {
            d_mean[dd] /= self.normalizer.scale[dd];
            d_var[dd] = if clamped {
                0.0
            } else {
                d_var[dd] / self.normalizer.scale[dd]
            };
        }
        PredictionGrad {
            prediction: Prediction {
                mean,
                variance: variance_raw.max(0.0),
            },
            d_mean,
            d_variance: d_var,
        }
    }
}

impl DiscrepancySurrogate for TrainedGp {
    fn n_objectives(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        self.data.dim()
    }

    fn predict(&self, theta: &[f64], objective: usize) -> Result<Prediction> {
        self.check_objective(objective)?;
        Ok(self.predict_point(theta))
    }

    fn predict_with_grad(&self, theta: &[f64], objective: usize) -> Result<PredictionGrad> {
        self.check_objective(objective)?;
        Ok(self.predict_point_with_grad(theta))
    }

    fn noise_variance(&self, _objective: usize) -> f64 {
        self.hyp.noise_variance
    }
}

fn prepare(x: &[Vec<f64>], y: &[f64]) -> Result<(GpData, InputNormalizer)> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "GP fitting needs at least 2 training points".into(),
        ));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged or empty input rows".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data"));
    }
    let normalizer = InputNormalizer::fit(x);
    let xn = x.iter().map(|r| normalizer.apply(r)).collect();
    Ok((
        GpData {
            x: xn,
            y: DVector::from_column_slice(y),
        },
        normalizer,
    ))
}

/// Fits the GP by maximizing the log marginal likelihood plus log hyperprior
/// from several initializations drawn from the priors.
/// Log posterior of the hyperparameters and its gradient, as maximized by
/// [`gp_fit`]. `log_hyper` holds the log lengthscales followed by the log
/// signal, bias and noise variances.
pub fn map_objective_with_grad(
    x: &[Vec<f64>],
    y: &[f64],
    bounds: &Bounds,
    log_hyper: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (data, normalizer) = prepare(x, y)?;
    if log_hyper.len() != data.dim() + 3 || bounds.dim() != data.dim() {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let priors = HyperPriors::from_data(bounds, &normalizer, y);
    map_objective(&data, &priors, log_hyper).ok_or(Error::NotPositiveDefinite { jitter: JITTER_MAX })
}

pub fn gp_fit(x: &[Vec<f64>], y: &[f64], bounds: &Bounds, config: &GpConfig) -> Result<TrainedGp> {
    let (data, normalizer) = prepare(x, y)?;
    if bounds.dim() != data.dim() {
        return Err(Error::InvalidArgument(
            "bounds dimension does not match inputs".into(),
        ));
    }
    let priors = HyperPriors::from_data(bounds, &normalizer, y);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let yvar = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64
    };

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for _ in 0..config.restarts.max(1) {
        let draw = |shape: f64, rng: &mut ChaCha8Rng| {
            Gamma::new(shape, 1.0)
                .map(|g| g.sample(rng))
                .unwrap_or(shape)
                .clamp(1e-4, 1e4)
        };
        let lengthscales = priors
            .lengthscale_shapes
            .iter()
            .map(|a| draw(*a, &mut rng))
            .collect();
        let init = KernelHyperparams {
            lengthscales,
            signal_variance: draw(priors.signal_shape, &mut rng),
            bias_variance: draw(priors.bias_shape, &mut rng),
            noise_variance: (0.1 * yvar).max(1e-4) * (0.5 + rng.random::<f64>()),
        };
        let out = lbfgs_maximize(
            |eta| map_objective(&data, &priors, eta),
            init.to_log(),
            config.max_iter,
        );
        if let Some(out) = out {
            if best.as_ref().is_none_or(|(v, _, _)| out.value > *v) {
                best = Some((out.value, out.x, out.trace));
            }
        }
    }
    let (value, eta, trace) = best.ok_or(Error::NotPositiveDefinite {
        jitter: JITTER_MAX,
    })?;
    TrainedGp::condition(data, normalizer, KernelHyperparams::from_log(&eta), value, trace)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line_data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = x.iter().map(|r| r[0] * r[0]).collect();
        (x, y)
    }

    /// Independent interpolation oracle: the same GP equations written with
    /// an explicit dense solve in raw (unnormalized) input units.
    fn direct_solve_mean(
        x: &[Vec<f64>],
        y: &[f64],
        hyp: &KernelHyperparams,
        scale: f64,
        q: f64,
    ) -> f64 {
        let n = x.len();
        let k = |a: f64, b: f64| {
            let l = hyp.lengthscales[0] * scale;
            hyp.signal_variance * (-0.5 * ((a - b) / l).powi(2)).exp() + hyp.bias_variance
        };
        let mut km = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                km[(i, j)] = k(x[i][0], x[j][0]) + if i == j { hyp.noise_variance } else { 0.0 };
            }
        }
        let coef = km.lu().solve(&DVector::from_column_slice(y)).unwrap();
        (0..n).map(|i| k(q, x[i][0]) * coef[i]).sum()
    }

    #[test]
    fn noiseless_interpolation_matches_direct_solve() {
        let (x, y) = line_data();
        let hyp = KernelHyperparams {
            lengthscales: vec![1.0],
            signal_variance: 4.0,
            bias_variance: 1.0,
            noise_variance: 1e-7,
        };
        let gp = TrainedGp::with_hyperparams(&x, &y, hyp.clone()).unwrap();
        let scale = gp.normalizer().scale[0];
        let oracle = direct_solve_mean(&x, &y, &hyp, scale, 1.0);
        let p = gp.predict_point(&[1.0]);
        assert_abs_diff_eq!(p.mean, oracle, epsilon = 1e-6);
        assert!((p.mean - 1.0).abs() < 0.05);
        for (xi, yi) in x.iter().zip(&y) {
            let p = gp.predict_point(xi);
            assert_abs_diff_eq!(p.mean, *yi, epsilon = 1e-4);
            assert!(p.variance < 1e-5);
        }
    }

    #[test]
    fn fitted_gp_interpolates_quadratic() {
        let (x, y) = line_data();
        let bounds = Bounds::new(vec![0.0], vec![2.0]).unwrap();
        let gp = gp_fit(&x, &y, &bounds, &GpConfig::default()).unwrap();
        let p = gp.predict_point(&[1.0]);
        // with the fitted noise, the mean stays close to the data
        assert!(p.mean.is_finite());
        let hyp = KernelHyperparams {
            noise_variance: 1e-6,
            ..gp.hyperparams().clone()
        };
        let exact = TrainedGp::with_hyperparams(&x, &y, hyp.clone()).unwrap();
        let scale = exact.normalizer().scale[0];
        let oracle = direct_solve_mean(&x, &y, &hyp, scale, 1.0);
        let mean = exact.predict_point(&[1.0]).mean;
        assert_abs_diff_eq!(mean, oracle, epsilon = 1e-6);
        assert!((mean - 1.0).abs() < 0.05);
    }

    pub(crate) fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| r.iter().map(|v| (v - 4.0).powi(2) / 10.0).sum::<f64>().ln_1p() + 0.1 * rng.random::<f64>())
            .collect();
        (x, y)
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (x, y) = random_problem(3, 25, 2);
        let bounds = Bounds::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let (data, norm) = prepare(&x, &y).unwrap();
        let priors = HyperPriors::from_data(&bounds, &norm, &y);
        for _ in 0..10 {
            let eta: Vec<f64> = vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.5),
                rng.random_range(-2.0..0.5),
                rng.random_range(-4.0..-1.0),
            ];
            let (_, g) = map_objective(&data, &priors, &eta).unwrap();
            for i in 0..eta.len() {
                let h = 1e-5;
                let mut ep = eta.clone();
                let mut em = eta.clone();
                ep[i] += h;
                em[i] -= h;
                let fd = (map_objective(&data, &priors, &ep).unwrap().0
                    - map_objective(&data, &priors, &em).unwrap().0)
                    / (2.0 * h);
                let rel = (g[i] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn optimizer_trace_is_monotone() {
        let (x, y) = random_problem(5, 30, 1);
        let bounds = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let gp = gp_fit(&x, &y, &bounds, &GpConfig::default()).unwrap();
        let trace = gp.optimizer_trace();
        assert!(trace.len() >= 2);
        assert!(trace.len() <= 51);
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert_abs_diff_eq!(*trace.last().unwrap(), gp.map_value(), epsilon = 1e-12);
    }

    #[test]
    fn far_field_reverts_to_the_bias_only_prior() {
        let (x, y) = random_problem(8, 15, 1);
        let hyp = KernelHyperparams {
            lengthscales: vec![0.5],
            signal_variance: 2.0,
            bias_variance: 0.3,
            noise_variance: 0.01,
        };
        let gp = TrainedGp::with_hyperparams(&x, &y, hyp.clone()).unwrap();
        let far = [10.0 + 20.0 * 0.5 * gp.normalizer().scale[0] * 10.0];
        let p = gp.predict_point(&far);
        // k(x*, X) reduces to the constant bias, so the posterior is that of a
        // bias-only model
        let n = x.len();
        let ones = DVector::from_element(n, 1.0);
        let (_, k) = gp.data.covariance(&hyp);
        let kinv1 = k.clone().lu().solve(&ones).unwrap();
        let mean_lim = hyp.bias_variance * kinv1.dot(&gp.data.y);
        let var_lim = hyp.signal_variance + hyp.bias_variance
            - hyp.bias_variance.powi(2) * ones.dot(&kinv1);
        assert_abs_diff_eq!(p.mean, mean_lim, epsilon = 1e-6);
        assert_abs_diff_eq!(p.variance, var_lim, epsilon = 1e-6);

        // without a bias term the limit is the zero-mean prior
        let nobias = KernelHyperparams {
            bias_variance: 1e-12,
            ..hyp
        };
        let gp = TrainedGp::with_hyperparams(&x, &y, nobias.clone()).unwrap();
        let p = gp.predict_point(&far);
        assert_abs_diff_eq!(p.mean, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.variance, nobias.signal_variance, epsilon = 1e-6);
    }

    #[test]
    fn variance_is_smallest_near_data() {
        let (x, y) = random_problem(9, 12, 1);
        let bounds = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let gp = gp_fit(&x, &y, &bounds, &GpConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for xi in &x {
            let at = gp.predict_point(xi).variance;
            let dist_far = |q: f64| x.iter().map(|r| (r[0] - q).abs()).fold(f64::INFINITY, f64::min);
            for _ in 0..50 {
                let q = rng.random_range(-30.0..40.0);
                if dist_far(q) > 3.0 {
                    assert!(at <= gp.predict_point(&[q]).variance + 1e-12);
                }
            }
        }
        for _ in 0..1000 {
            let q = rng.random_range(-50.0..60.0);
            assert!(gp.predict_point(&[q]).variance >= 0.0);
        }
    }

    #[test]
    fn duplicate_training_point_leaves_predictions_unchanged() {
        let x = vec![vec![0.0], vec![2.0], vec![4.0], vec![6.0]];
        let y = vec![1.0, 0.5, 0.2, 0.9];
        let hyp = KernelHyperparams {
            lengthscales: vec![1.0],
            signal_variance: 1.0,
            bias_variance: 0.1,
            noise_variance: 1e-10,
        };
        let gp = TrainedGp::with_hyperparams(&x, &y, hyp.clone()).unwrap();
        // duplicating a point changes the normalizer, so rescale lengthscales
        let mut x2 = x.clone();
        x2.push(vec![2.0]);
        let mut y2 = y.clone();
        y2.push(0.5);
        let n2 = InputNormalizer::fit(&x2);
        let hyp2 = KernelHyperparams {
            lengthscales: vec![hyp.lengthscales[0] * gp.normalizer().scale[0] / n2.scale[0]],
            ..hyp
        };
        let gp2 = TrainedGp::with_hyperparams(&x2, &y2, hyp2).unwrap();
        for q in [0.5, 1.7, 3.3, 5.9, 8.0] {
            assert_abs_diff_eq!(gp.predict_point(&[q]).mean, gp2.predict_point(&[q]).mean, epsilon = 1e-6);
        }
    }

    #[test]
    fn affine_rescaling_is_invisible() {
        let (x, y) = random_problem(10, 20, 1);
        let bounds = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let gp = gp_fit(&x, &y, &bounds, &GpConfig::default()).unwrap();
        let xs: Vec<Vec<f64>> = x.iter().map(|r| vec![3.0 * r[0] - 7.0]).collect();
        let bs = Bounds::new(vec![-7.0], vec![23.0]).unwrap();
        let gs = gp_fit(&xs, &y, &bs, &GpConfig::default()).unwrap();
        for q in [0.3, 2.5, 5.0, 9.1] {
            let a = gp.predict_point(&[q]);
            let b = gs.predict_point(&[3.0 * q - 7.0]);
            assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-6);
            assert_abs_diff_eq!(a.variance, b.variance, epsilon = 1e-6);
        }
    }

    #[test]
    fn degenerate_targets_fit() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let bounds = Bounds::new(vec![0.0], vec![7.0]).unwrap();
        let gp = gp_fit(&x, &[0.0; 8], &bounds, &GpConfig::default()).unwrap();
        assert!(gp.hyperparams().signal_variance < 1e-2);
        assert_abs_diff_eq!(gp.predict_point(&[3.5]).mean, 0.0, epsilon = 1e-6);
        let gp = gp_fit(&x, &[1.5; 8], &bounds, &GpConfig::default()).unwrap();
        assert!((gp.predict_point(&[3.5]).mean - 1.5).abs() < 0.05);
    }

    #[test]
    fn prediction_gradient_matches_finite_differences() {
        let (x, y) = random_problem(12, 20, 2);
        let bounds = Bounds::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let gp = gp_fit(&x, &y, &bounds, &GpConfig::default()).unwrap();
        let q = [3.3, 6.1];
        let g = gp.predict_point_with_grad(&q);
        for d in 0..2 {
            let h = 1e-6;
            let mut a = q;
            let mut b = q;
            a[d] += h;
            b[d] -= h;
            let pa = gp.predict_point(&a);
            let pb = gp.predict_point(&b);
            assert_abs_diff_eq!(g.d_mean[d], (pa.mean - pb.mean) / (2.0 * h), epsilon = 1e-5);
            assert_abs_diff_eq!(g.d_variance[d], (pa.variance - pb.variance) / (2.0 * h), epsilon = 1e-5);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        assert!(gp_fit(&[vec![0.0]], &[1.0], &bounds, &GpConfig::default()).is_err());
        assert!(gp_fit(&[vec![0.0], vec![f64::NAN]], &[1.0, 2.0], &bounds, &GpConfig::default()).is_err());
    }
}
