//! Learned surrogates of the state transition `θ_t → θ_{t+1}`.
//!
//! Two models are provided. [`BnnModel`] is a Bayes-by-backprop network with
//! two hidden ReLU layers and a factorized Gaussian over every weight.
//! [`BlrModel`] is a linear map fitted by least squares with isotropic
//! Gaussian noise. Both are trained on pairs of samples drawn from the
//! posteriors of consecutive time indices.

use matrixmultiply::sgemm;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::PosteriorStore;

/// Format tag of serialized transition models.
pub const RECORD_FORMAT: &str = "ssm-lfi/transition";
pub const RECORD_VERSION: u32 = 1;

/// Pairs `(θ_j, θ_{j+1})` drawn from consecutive posteriors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingPairs {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Time index `j` of each pair's input.
    pub from_index: Vec<usize>,
}

impl TrainingPairs {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, j: usize, from: Vec<f64>, to: Vec<f64>) {
        self.from_index.push(j);
        self.inputs.push(from);
        self.targets.push(to);
    }

    fn validate(&self, dim: Option<usize>) -> Result<usize> {
        let m = dim.or_else(|| self.inputs.first().map(Vec::len)).unwrap_or(0);
        if self.inputs.len() != self.targets.len()
            || self
                .inputs
                .iter()
                .chain(&self.targets)
                .any(|r| r.len() != m)
        {
            return Err(Error::InvalidArgument(format!(
                "every pair needs two {m}-dimensional states"
            )));
        }
        if self
            .inputs
            .iter()
            .chain(&self.targets)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("training pairs"));
        }
        Ok(m)
    }
}

/// Draws `k` pairs: a consecutive index pair `(j, j+1)` uniformly among those
/// available, then one sample from each posterior.
pub fn build_training_pairs<R: Rng + ?Sized>(
    store: &PosteriorStore,
    k: usize,
    rng: &mut R,
) -> Result<TrainingPairs> {
    let starts = store.consecutive_pairs();
    if starts.is_empty() {
        return Err(Error::Precondition(
            "need posteriors for two consecutive time indices".into(),
        ));
    }
    let mut pairs = TrainingPairs::default();
    for _ in 0..k {
        let j = starts[rng.random_range(0..starts.len())];
        let a = store.get(j).expect("listed index");
        let b = store.get(j + 1).expect("listed index");
        let from = a.samples[rng.random_range(0..a.len())].clone();
        let to = b.samples[rng.random_range(0..b.len())].clone();
        pairs.push(j, from, to);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Weight draws per gradient estimate.
    pub weight_samples: usize,
    pub batches_per_epoch: usize,
    /// Epochs per training call.
    pub epochs: usize,
    /// Initial spread parameter χ of every weight.
    pub initial_spread: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_samples: 10,
            batches_per_epoch: 100,
            epochs: 1,
            initial_spread: -5.0,
        }
    }
}

/// Per-dimension affine normalization stored in single precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let n = crate::surrogate::InputNormalizer::fit(rows);
        Self {
            shift: n.shift,
            scale: n.scale,
        }
    }

    fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }
}

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `c = op(a)·op(b) + beta·c` with row-major storage; `op(a)` is `m×k`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the m×k, k×n and m×n extents addressed by the strides
    unsafe {
        sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Variational Bayesian network `m → hidden → hidden → m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    dim: usize,
    config: BnnConfig,
    /// Variational means of all weights and biases, layer by layer.
    mu: Vec<f32>,
    /// Spread parameters; weight std is `softplus(χ)`.
    chi: Vec<f32>,
    vel_mu: Vec<f32>,
    vel_chi: Vec<f32>,
    input_scaling: Scaling,
    output_scaling: Scaling,
    trained: bool,
}

struct Workspace {
    w: Vec<f32>,
    eps: Vec<f32>,
    z1: Vec<f32>,
    z2: Vec<f32>,
    out: Vec<f32>,
    d_out: Vec<f32>,
    d2: Vec<f32>,
    d1: Vec<f32>,
    gw: Vec<f32>,
}

impl BnnModel {
    pub fn new<R: Rng + ?Sized>(dim: usize, config: BnnConfig, rng: &mut R) -> Result<Self> {
        if dim == 0 || config.hidden == 0 {
            return Err(Error::InvalidArgument("network sizes must be positive".into()));
        }
        let sizes = layer_sizes(dim, config.hidden);
        let n_params: usize = sizes.iter().map(|(i, o)| i * o + o).sum();
        let mut mu = Vec::with_capacity(n_params);
        for (n_in, n_out) in &sizes {
            let s = (1.0 / *n_in as f32).sqrt();
            for _ in 0..n_in * n_out {
                mu.push(s * rng.sample::<f32, _>(StandardNormal));
            }
            mu.extend(std::iter::repeat_n(0.0, *n_out));
        }
        let chi = vec![config.initial_spread as f32; n_params];
        Ok(Self {
            dim,
            vel_mu: vec![0.0; n_params],
            vel_chi: vec![0.0; n_params],
            config,
            mu,
            chi,
            input_scaling: Scaling::identity(dim),
            output_scaling: Scaling::identity(dim),
            trained: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &BnnConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.mu.len()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Sets every spread parameter χ to `value`.
    pub fn set_spread(&mut self, value: f64) {
        self.chi.iter_mut().for_each(|c| *c = value as f32);
    }

    /// Standard deviation of the first weight, for inspection.
    pub fn weight_std(&self, index: usize) -> f64 {
        softplus(self.chi[index]) as f64
    }

    fn workspace(&self, batch: usize) -> Workspace {
        let h = self.config.hidden;
        let p = self.mu.len();
        Workspace {
            w: vec![0.0; p],
            eps: vec![0.0; p],
            z1: vec![0.0; batch * h],
            z2: vec![0.0; batch * h],
            out: vec![0.0; batch * self.dim],
            d_out: vec![0.0; batch * self.dim],
            d2: vec![0.0; batch * h],
            d1: vec![0.0; batch * h],
            gw: vec![0.0; p],
        }
    }

    fn spreads(&self) -> Vec<f32> {
        self.chi.iter().map(|c| softplus(*c)).collect()
    }

    fn draw_weights<R: Rng + ?Sized>(&self, sd: &[f32], ws: &mut Workspace, rng: &mut R) {
        for i in 0..self.mu.len() {
            let e: f32 = rng.sample(StandardNormal);
            ws.eps[i] = e;
            ws.w[i] = self.mu[i] + sd[i] * e;
        }
    }

    /// Forward pass of `batch` normalized inputs through the weights in
    /// `ws.w`; ReLU activations overwrite `z1` and `z2` in place.
    fn forward(&self, x: &[f32], batch: usize, ws: &mut Workspace) {
        let m = self.dim;
        let h = self.config.hidden;
        let (w1, rest) = ws.w.split_at(m * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h * h);
        let (b2, rest) = rest.split_at(h);
        let (w3, b3) = rest.split_at(h * m);
        for r in 0..batch {
            ws.z1[r * h..(r + 1) * h].copy_from_slice(b1);
            ws.z2[r * h..(r + 1) * h].copy_from_slice(b2);
            ws.out[r * m..(r + 1) * m].copy_from_slice(b3);
        }
        gemm(batch, m, h, x, false, w1, false, 1.0, &mut ws.z1);
        ws.z1.iter_mut().for_each(|v| *v = v.max(0.0));
        gemm(batch, h, h, &ws.z1, false, w2, false, 1.0, &mut ws.z2);
        ws.z2.iter_mut().for_each(|v| *v = v.max(0.0));
        gemm(batch, h, m, &ws.z2, false, w3, false, 1.0, &mut ws.out);
    }

    /// Gradient of the batch mean squared error with respect to the sampled
    /// weights, written to `ws.gw`. Returns the loss.
    fn backward(&self, x: &[f32], y: &[f32], batch: usize, ws: &mut Workspace) -> f32 {
        let m = self.dim;
        let h = self.config.hidden;
        let mut loss = 0.0;
        for i in 0..batch * m {
            let r = ws.out[i] - y[i];
            loss += r * r;
            ws.d_out[i] = 2.0 * r / batch as f32;
        }
        let o1 = m * h;
        let o2 = o1 + h;
        let o3 = o2 + h * h;
        let o4 = o3 + h;
        let o5 = o4 + h * m;
        {
            let (gw1, rest) = ws.gw.split_at_mut(o1);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, rest) = rest.split_at_mut(h * h);
            let (gb2, rest) = rest.split_at_mut(h);
            let (gw3, gb3) = rest.split_at_mut(h * m);
            let w2 = &ws.w[o2..o3];
            let w3 = &ws.w[o4..o5];

            gemm(h, batch, m, &ws.z2, true, &ws.d_out, false, 0.0, gw3);
            col_sums(&ws.d_out, batch, m, gb3);
            gemm(batch, m, h, &ws.d_out, false, w3, true, 0.0, &mut ws.d2);
            for (d, z) in ws.d2.iter_mut().zip(&ws.z2) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            gemm(h, batch, h, &ws.z1, true, &ws.d2, false, 0.0, gw2);
            col_sums(&ws.d2, batch, h, gb2);
            gemm(batch, h, h, &ws.d2, false, w2, true, 0.0, &mut ws.d1);
            for (d, z) in ws.d1.iter_mut().zip(&ws.z1) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            gemm(m, batch, h, x, true, &ws.d1, false, 0.0, gw1);
            col_sums(&ws.d1, batch, h, gb1);
        }
        loss / batch as f32
    }

    fn normalized(&self, pairs: &TrainingPairs) -> (Vec<f32>, Vec<f32>) {
        let x = pairs
            .inputs
            .iter()
            .flat_map(|r| scale_row(r, &self.input_scaling))
            .collect();
        let y = pairs
            .targets
            .iter()
            .flat_map(|r| scale_row(r, &self.output_scaling))
            .collect();
        (x, y)
    }

    /// Monte-Carlo estimate of the per-datapoint negative ELBO on `pairs`
    /// with the current normalization.
    pub fn loss<R: Rng + ?Sized>(&self, pairs: &TrainingPairs, rng: &mut R) -> Result<f64> {
        pairs.validate(Some(self.dim))?;
        if pairs.is_empty() {
            return Err(Error::Empty("training pairs"));
        }
        let (x, y) = self.normalized(pairs);
        let n = pairs.len();
        let mut ws = self.workspace(n);
        let sd = self.spreads();
        let mut total = 0.0;
        for _ in 0..self.config.weight_samples {
            self.draw_weights(&sd, &mut ws, rng);
            self.forward(&x, n, &mut ws);
            let mut l = 0.0;
            for i in 0..n * self.dim {
                let r = ws.out[i] - y[i];
                l += (r * r) as f64;
            }
            total += l / n as f64;
        }
        Ok(total / self.config.weight_samples as f64 + self.kl() / n as f64)
    }

    /// KL divergence from the variational posterior to the N(0, 1) prior.
    pub fn kl(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.chi)
            .map(|(m, c)| {
                let s = softplus(*c) as f64;
                let m = *m as f64;
                -s.ln() + 0.5 * (s * s + m * m) - 0.5
            })
            .sum()
    }

    /// Runs `config.epochs` epochs of SGD on `pairs`, continuing from the
    /// current variational parameters. Normalization is refitted to `pairs`.
    /// Returns the mean batch loss of each epoch.
    pub fn train<R: Rng + ?Sized>(&mut self, pairs: &TrainingPairs, rng: &mut R) -> Result<Vec<f64>> {
        pairs.validate(Some(self.dim))?;
        if pairs.is_empty() {
            return Err(Error::Empty("training pairs"));
        }
        self.input_scaling = Scaling::fit(&pairs.inputs);
        self.output_scaling = Scaling::fit(&pairs.targets);
        let (x, y) = self.normalized(pairs);
        let n = pairs.len();
        let m = self.dim;
        let n_batches = self.config.batches_per_epoch.clamp(1, n);
        let batch_size = n.div_ceil(n_batches);
        let mut ws = self.workspace(batch_size);
        let mut bx = vec![0.0f32; batch_size * m];
        let mut by = vec![0.0f32; batch_size * m];
        let mut g_mu = vec![0.0f32; self.mu.len()];
        let mut g_chi = vec![0.0f32; self.mu.len()];
        let mut order: Vec<usize> = (0..n).collect();
        let s = self.config.weight_samples.max(1);
        let lr = self.config.learning_rate as f32;
        let mom = self.config.momentum as f32;
        let kl_weight = 1.0 / n as f32;
        let mut trace = Vec::with_capacity(self.config.epochs);

        for _ in 0..self.config.epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            let mut n_done = 0;
            for chunk in order.chunks(batch_size) {
                let b = chunk.len();
                for (r, &i) in chunk.iter().enumerate() {
                    bx[r * m..(r + 1) * m].copy_from_slice(&x[i * m..(i + 1) * m]);
                    by[r * m..(r + 1) * m].copy_from_slice(&y[i * m..(i + 1) * m]);
                }
                g_mu.iter_mut().for_each(|v| *v = 0.0);
                g_chi.iter_mut().for_each(|v| *v = 0.0);
                let sd = self.spreads();
                let sig: Vec<f32> = self.chi.iter().map(|c| sigmoid(*c)).collect();
                let mut batch_loss = 0.0;
                for _ in 0..s {
                    self.draw_weights(&sd, &mut ws, rng);
                    self.forward(&bx[..b * m], b, &mut ws);
                    batch_loss += self.backward(&bx[..b * m], &by[..b * m], b, &mut ws) as f64;
                    for i in 0..self.mu.len() {
                        let g = ws.gw[i] / s as f32;
                        g_mu[i] += g;
                        g_chi[i] += g * ws.eps[i] * sig[i];
                    }
                }
                let mut kl = 0.0;
                for i in 0..self.mu.len() {
                    let sdi = sd[i];
                    g_mu[i] += kl_weight * self.mu[i];
                    g_chi[i] += kl_weight * (sdi - 1.0 / sdi) * sig[i];
                    kl += -(sdi as f64).ln() + 0.5 * ((sdi * sdi + self.mu[i] * self.mu[i]) as f64) - 0.5;
                }
                for i in 0..self.mu.len() {
                    self.vel_mu[i] = mom * self.vel_mu[i] + g_mu[i];
                    self.mu[i] -= lr * self.vel_mu[i];
                    self.vel_chi[i] = mom * self.vel_chi[i] + g_chi[i];
                    self.chi[i] -= lr * self.vel_chi[i];
                }
                epoch_loss += batch_loss / s as f64 + kl * kl_weight as f64;
                n_done += 1;
            }
            let mean = epoch_loss / n_done as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite("network loss"));
            }
            trace.push(mean);
        }
        self.trained = true;
        Ok(trace)
    }

    /// `n` predictive draws at `theta`, one independent weight realization each.
    pub fn predict_samples<R: Rng + ?Sized>(&self, theta: &[f64], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let x = scale_row(theta, &self.input_scaling);
        let mut ws = self.workspace(1);
        let sd = self.spreads();
        (0..n)
            .map(|_| {
                self.draw_weights(&sd, &mut ws, rng);
                self.forward(&x, 1, &mut ws);
                unscale_row(&ws.out, &self.output_scaling)
            })
            .collect()
    }

    /// Forward pass with every weight at its variational mean.
    pub fn predict_mean_weights(&self, theta: &[f64]) -> Vec<f64> {
        let x = scale_row(theta, &self.input_scaling);
        let mut ws = self.workspace(1);
        ws.w.copy_from_slice(&self.mu);
        self.forward(&x, 1, &mut ws);
        unscale_row(&ws.out, &self.output_scaling)
    }

    fn validate(&self) -> Result<()> {
        let sizes = layer_sizes(self.dim, self.config.hidden);
        let n_params: usize = sizes
            .iter()
            .try_fold(0usize, |acc, (i, o)| acc.checked_add(i.checked_mul(*o)?.checked_add(*o)?))
            .ok_or_else(|| Error::Config("network too large".into()))?;
        let ok = self.dim > 0
            && self.config.hidden > 0
            && [&self.mu, &self.chi, &self.vel_mu, &self.vel_chi]
                .iter()
                .all(|v| v.len() == n_params && v.iter().all(|x| x.is_finite()))
            && [&self.input_scaling, &self.output_scaling].iter().all(|s| {
                s.shift.len() == self.dim
                    && s.scale.len() == self.dim
                    && s.shift.iter().chain(&s.scale).all(|v| v.is_finite())
                    && s.scale.iter().all(|v| *v > 0.0)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Config("inconsistent network record".into()))
        }
    }
}

fn layer_sizes(dim: usize, hidden: usize) -> [(usize, usize); 3] {
    [(dim, hidden), (hidden, hidden), (hidden, dim)]
}

fn col_sums(a: &[f32], rows: usize, cols: usize, out: &mut [f32]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

fn scale_row(r: &[f64], s: &Scaling) -> Vec<f32> {
    r.iter()
        .zip(s.shift.iter().zip(&s.scale))
        .map(|(v, (a, b))| ((v - a) / b) as f32)
        .collect()
}

fn unscale_row(r: &[f32], s: &Scaling) -> Vec<f64> {
    r.iter()
        .zip(s.shift.iter().zip(&s.scale))
        .map(|(v, (a, b))| *v as f64 * b + a)
        .collect()
}

/// Creates a network and trains it once on `pairs`.
pub fn bnn_train<R: Rng + ?Sized>(pairs: &TrainingPairs, config: BnnConfig, rng: &mut R) -> Result<BnnModel> {
    let dim = pairs.validate(None)?;
    let mut model = BnnModel::new(dim, config, rng)?;
    model.train(pairs, rng)?;
    Ok(model)
}

/// Linear-Gaussian transition `θ_{t+1} = θ_tᵀβ + ε`, `ε ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrModel {
    /// `beta[i][j]` maps input dimension `i` to output dimension `j`.
    pub beta: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl BlrModel {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn predict_mean(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.dim();
        (0..m)
            .map(|j| (0..m).map(|i| theta[i] * self.beta[i][j]).sum())
            .collect()
    }

    pub fn predict_samples<R: Rng + ?Sized>(&self, theta: &[f64], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mean = self.predict_mean(theta);
        (0..n)
            .map(|_| {
                mean.iter()
                    .map(|v| v + self.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let m = self.beta.len();
        if m == 0
            || self.beta.iter().any(|r| r.len() != m || r.iter().any(|v| !v.is_finite()))
            || !self.sigma.is_finite()
            || self.sigma < 0.0
        {
            return Err(Error::Config("inconsistent linear model record".into()));
        }
        Ok(())
    }
}

/// Ordinary least squares without intercept; σ² is the mean squared residual
/// over all output coordinates.
pub fn blr_fit(pairs: &TrainingPairs) -> Result<BlrModel> {
    let m = pairs.validate(None)?;
    let k = pairs.len();
    if m == 0 || k < m + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} pairs, got {k}",
            m + 1
        )));
    }
    let x = DMatrix::from_fn(k, m, |r, c| pairs.inputs[r][c]);
    let y = DMatrix::from_fn(k, m, |r, c| pairs.targets[r][c]);
    let col_norms: Vec<f64> = (0..m).map(|c| x.column(c).norm()).collect();
    let qr = x.clone().qr();
    let r = qr.r();
    for d in 0..m {
        if !(r[(d, d)].abs() > 1e-10 * col_norms[d].max(f64::MIN_POSITIVE)) {
            return Err(Error::RankDeficient { dim: d });
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { dim: m - 1 })?;
    let resid = &y - &x * &beta;
    let sigma = (resid.norm_squared() / (k * m) as f64).sqrt();
    Ok(BlrModel {
        beta: (0..m).map(|i| beta.row(i).iter().copied().collect()).collect(),
        sigma,
    })
}

/// A trained transition surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransitionModel {
    Bnn(BnnModel),
    Blr(BlrModel),
}

#[derive(Serialize, Deserialize)]
struct Record {
    format: String,
    version: u32,
    model: TransitionModel,
}

impl TransitionModel {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Bnn(_) => "bnn",
            Self::Blr(_) => "blr",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Bnn(b) => b.dim(),
            Self::Blr(b) => b.dim(),
        }
    }

    pub fn is_trained(&self) -> bool {
        match self {
            Self::Bnn(b) => b.is_trained(),
            Self::Blr(_) => true,
        }
    }

    pub fn predict_samples<R: Rng + ?Sized>(&self, theta: &[f64], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            Self::Bnn(b) => b.predict_samples(theta, n, rng),
            Self::Blr(b) => b.predict_samples(theta, n, rng),
        }
    }

    /// Serializes to a versioned JSON record.
    pub fn to_record(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            format: &'a str,
            version: u32,
            model: &'a TransitionModel,
        }
        Ok(serde_json::to_string(&Out {
            format: RECORD_FORMAT,
            version: RECORD_VERSION,
            model: self,
        })?)
    }

    /// Parses a record written by [`TransitionModel::to_record`], rejecting
    /// unknown formats, unknown versions and internally inconsistent models.
    pub fn from_record(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if format != RECORD_FORMAT || version != u64::from(RECORD_VERSION) {
            return Err(Error::UnsupportedRecord {
                format: format.to_string(),
                version: u32::try_from(version).unwrap_or(u32::MAX),
            });
        }
        let record: Record = serde_json::from_value(value)?;
        match &record.model {
            Self::Bnn(b) => b.validate()?,
            Self::Blr(b) => b.validate()?,
        }
        Ok(record.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::PosteriorSampleSet;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_pairs(n: usize, slope: f64, seed: u64) -> TrainingPairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TrainingPairs::default();
        for _ in 0..n {
            let x: f64 = rng.random_range(-10.0..10.0);
            p.push(0, vec![x], vec![slope * x]);
        }
        p
    }

    #[test]
    fn dirac_posteriors_give_fixed_pairs() {
        let mut store = PosteriorStore::new();
        for (t, v) in [(1, 2.0), (2, 7.0)] {
            store.insert(PosteriorSampleSet {
                t,
                samples: vec![vec![v]],
                weights: None,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_training_pairs(&store, 20, &mut rng).unwrap();
        assert!(p.inputs.iter().all(|x| x == &vec![2.0]));
        assert!(p.targets.iter().all(|x| x == &vec![7.0]));
        assert!(build_training_pairs(&store, 0, &mut rng).unwrap().is_empty());
        assert!(build_training_pairs(&PosteriorStore::new(), 3, &mut rng).is_err());
    }

    #[test]
    fn blr_examples() {
        let p = linear_pairs(50, 0.95, 2);
        let m = blr_fit(&p).unwrap();
        assert_abs_diff_eq!(m.beta[0][0], 0.95, epsilon = 1e-8);
        assert!(m.sigma < 1e-8);
        let p = linear_pairs(50, 0.0, 3);
        let m = blr_fit(&p).unwrap();
        assert_eq!(m.beta[0][0], 0.0);
        assert_eq!(m.sigma, 0.0);
    }

    #[test]
    fn blr_rank_deficiency_names_dimension() {
        let mut p = TrainingPairs::default();
        for i in 0..10 {
            let x = i as f64;
            p.push(0, vec![x, 2.0 * x], vec![x, x]);
        }
        assert!(matches!(blr_fit(&p), Err(Error::RankDeficient { dim: 1 })));
    }

    #[test]
    fn blr_sampling() {
        let m = BlrModel {
            beta: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = m.predict_samples(&[3.0, -1.0], 5, &mut rng);
        assert!(s.iter().all(|v| v == &vec![3.0, -1.0]));
    }

    #[test]
    fn bnn_learns_linear_map() {
        let p = linear_pairs(10_000, 0.5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = BnnConfig {
            epochs: 5,
            ..Default::default()
        };
        let model = bnn_train(&p, cfg, &mut rng).unwrap();
        let draws = model.predict_samples(&[4.0], 500, &mut rng);
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / 500.0;
        assert!((mean - 2.0).abs() < 0.25, "mean {mean}");
    }

    #[test]
    fn collapsed_spread_is_deterministic() {
        let p = linear_pairs(200, 0.5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = bnn_train(&p, BnnConfig::default(), &mut rng).unwrap();
        model.set_spread(-20.0);
        let draws = model.predict_samples(&[1.0], 100, &mut rng);
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / 100.0;
        let sd = (draws.iter().map(|d| (d[0] - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(sd < 1e-3 * model.output_scaling.scale[0]);
    }

    #[test]
    fn record_roundtrip_and_rejection() {
        let m = TransitionModel::Blr(BlrModel {
            beta: vec![vec![0.9]],
            sigma: 0.3,
        });
        let text = m.to_record().unwrap();
        assert_eq!(TransitionModel::from_record(&text).unwrap(), m);
        let wrong = text.replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            TransitionModel::from_record(&wrong),
            Err(Error::UnsupportedRecord { version: 9, .. })
        ));
        let bad = text.replace("[[0.9]]", "[[0.9, 1.0]]");
        assert!(TransitionModel::from_record(&bad).is_err());
    }
}
