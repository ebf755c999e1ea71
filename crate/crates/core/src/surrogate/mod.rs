//! Deep-kernel Gaussian-process regression from image patches to scalar
//! targets.
//!
//! A two-layer tanh network maps a flattened patch to a low-dimensional
//! latent; an RBF kernel over latents feeds an exact GP. All network weights
//! and the three kernel hyperparameters are trained jointly by gradient
//! ascent on the log marginal likelihood, full batch, with momentum; the
//! returned model is the best-evidence iterate seen during the schedule.
//!
//! Targets are standardized internally (raw below two points); predictions
//! are de-standardized on the way out.

mod linalg;

pub use linalg::Cholesky;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Two-layer tanh feature network: `z = W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet<S> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// `hidden_dim x input_dim`, row-major.
    pub w1: Vec<S>,
    pub b1: Vec<S>,
    /// `latent_dim x hidden_dim`, row-major.
    pub w2: Vec<S>,
    pub b2: Vec<S>,
}

impl<S: Scalar> FeatureNet<S> {
    /// Seeded init: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |count: usize, fan_in: usize| -> Vec<S> {
            let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
            (0..count)
                .map(|_| S::cast(dist.sample(&mut rng)))
                .collect()
        };
        let w1 = sample(hidden_dim * input_dim, input_dim);
        let w2 = sample(latent_dim * hidden_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            latent_dim,
            w1,
            b1: vec![S::zero(); hidden_dim],
            w2,
            b2: vec![S::zero(); latent_dim],
        }
    }

    /// Latent embedding of one input.
    pub fn latent(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                what: "feature-net input",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(self.forward(x).1)
    }

    /// Hidden activations and latent, for backprop.
    fn forward(&self, x: &[S]) -> (Vec<S>, Vec<S>) {
        let (p, h, d) = (self.input_dim, self.hidden_dim, self.latent_dim);
        let mut a = Vec::with_capacity(h);
        for i in 0..h {
            let mut u = self.b1[i];
            let row = &self.w1[i * p..(i + 1) * p];
            for (w, xv) in row.iter().zip(x) {
                u = u + *w * *xv;
            }
            a.push(u.tanh());
        }
        let mut z = Vec::with_capacity(d);
        for i in 0..d {
            let mut acc = self.b2[i];
            let row = &self.w2[i * h..(i + 1) * h];
            for (w, av) in row.iter().zip(&a) {
                acc = acc + *w * *av;
            }
            z.push(acc);
        }
        (a, z)
    }
}

/// GP hyperparameters, stored as unconstrained logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper<S> {
    pub log_lengthscale: S,
    pub log_signal_var: S,
    pub log_noise_var: S,
}

impl<S: Scalar> Default for GpHyper<S> {
    fn default() -> Self {
        Self {
            log_lengthscale: S::zero(),
            log_signal_var: S::zero(),
            log_noise_var: S::cast((0.01f64).ln()),
        }
    }
}

impl<S: Scalar> GpHyper<S> {
    pub fn lengthscale(&self) -> S {
        self.log_lengthscale.exp()
    }

    pub fn signal_var(&self) -> S {
        self.log_signal_var.exp()
    }

    pub fn noise_var(&self) -> S {
        self.log_noise_var.exp()
    }
}

/// RBF kernel over latents: `sigma_f^2 exp(-|z1-z2|^2 / (2 l^2))`.
pub fn kernel<S: Scalar>(z1: &[S], z2: &[S], hyper: &GpHyper<S>) -> S {
    let mut r = S::zero();
    for (a, b) in z1.iter().zip(z2) {
        let diff = *a - *b;
        r = r + diff * diff;
    }
    let ell = hyper.lengthscale();
    hyper.signal_var() * (-r / (S::cast(2.0) * ell * ell)).exp()
}

/// Training schedule for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Diagonal jitter used when the kernel matrix resists factorization;
    /// escalated 10x at most twice.
    pub jitter: f64,
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            jitter: 1e-8,
            hidden_dim: 64,
            latent_dim: 2,
        }
    }
}

/// Global gradient-norm cap for the ascent step. Evidence gradients spike
/// when the noise variance shrinks toward zero; clipping keeps the iterate
/// finite without touching the reported analytic gradient.
const MAX_GRAD_NORM: f64 = 1e3;
/// Bounds on the log hyperparameters during training.
const LOG_LENGTHSCALE_RANGE: (f64, f64) = (-7.0, 7.0);
const LOG_SIGNAL_RANGE: (f64, f64) = (-10.0, 10.0);
const LOG_NOISE_RANGE: (f64, f64) = (-16.1, 10.0);

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::invalid("jitter", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must be in [0, 1)"));
        }
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("net dims", "hidden and latent must be >= 1"));
        }
        Ok(())
    }
}

/// Fitted deep-kernel GP: network, hyperparameters, and the cached training
/// factorization. Immutable once built.
#[derive(Debug, Clone)]
pub struct DklModel<S> {
    pub net: FeatureNet<S>,
    pub hyper: GpHyper<S>,
    n: usize,
    /// `n x latent_dim`, row-major.
    latents: Vec<S>,
    targets_std: Vec<S>,
    alpha: Vec<S>,
    chol: Cholesky<S>,
    y_mean: S,
    y_scale: S,
    jitter_used: f64,
    /// Input scaling recorded for reproducibility (lo, hi of the source
    /// image); purely metadata.
    pub input_range: (S, S),
}

/// Posterior mean/variance per query point, de-standardized. `clamped`
/// counts variances that were truncated at zero.
#[derive(Debug, Clone)]
pub struct Prediction<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub clamped: usize,
}

fn standardize<S: Scalar>(ys: &[S]) -> (Vec<S>, S, S) {
    let n = ys.len();
    if n < 2 {
        return (ys.to_vec(), S::zero(), S::one());
    }
    let inv_n = S::cast(1.0 / n as f64);
    let mut mean = S::zero();
    for &y in ys {
        mean = mean + y;
    }
    mean = mean * inv_n;
    let mut var = S::zero();
    for &y in ys {
        let d = y - mean;
        var = var + d * d;
    }
    var = var * inv_n;
    let scale = if var > S::zero() { var.sqrt() } else { S::one() };
    (ys.iter().map(|&y| (y - mean) / scale).collect(), mean, scale)
}

/// Evidence evaluation shared by the public entry points: forward pass,
/// kernel matrix, factorization, and the log marginal likelihood.
struct Evaluation<S> {
    evidence: S,
    latents: Vec<S>,
    /// hidden activations, `n x hidden`, kept for backprop
    activations: Vec<S>,
    /// squared latent distances, `n x n`
    sq_dists: Vec<S>,
    kernel_mat: Vec<S>,
    chol: Cholesky<S>,
    alpha: Vec<S>,
    jitter_used: f64,
}

fn evaluate<S: Scalar>(
    net: &FeatureNet<S>,
    hyper: &GpHyper<S>,
    xs: &[Vec<S>],
    ys_std: &[S],
    jitter: f64,
) -> Result<Evaluation<S>> {
    let n = xs.len();
    let d = net.latent_dim;
    let h = net.hidden_dim;
    let mut latents = vec![S::zero(); n * d];
    let mut activations = vec![S::zero(); n * h];
    let forwards: Vec<(Vec<S>, Vec<S>)> = xs
        .par_iter()
        .map(|x| net.forward(x))
        .collect();
    for (i, (a, z)) in forwards.into_iter().enumerate() {
        activations[i * h..(i + 1) * h].copy_from_slice(&a);
        latents[i * d..(i + 1) * d].copy_from_slice(&z);
    }

    let ell = hyper.lengthscale();
    let sf2 = hyper.signal_var();
    let sn2 = hyper.noise_var();
    if !(ell.is_finite() && sf2.is_finite() && sn2.is_finite()) || ell <= S::zero() {
        return Err(Error::NonFinite {
            what: "gp hyperparameters".into(),
            index: 0,
        });
    }
    let two_ell2 = S::cast(2.0) * ell * ell;

    let mut sq_dists = vec![S::zero(); n * n];
    let mut kernel_mat = vec![S::zero(); n * n];
    for i in 0..n {
        kernel_mat[i * n + i] = sf2;
        for j in i + 1..n {
            let zi = &latents[i * d..(i + 1) * d];
            let zj = &latents[j * d..(j + 1) * d];
            let mut r = S::zero();
            for (a, b) in zi.iter().zip(zj) {
                let diff = *a - *b;
                r = r + diff * diff;
            }
            let k = sf2 * (-r / two_ell2).exp();
            sq_dists[i * n + j] = r;
            sq_dists[j * n + i] = r;
            kernel_mat[i * n + j] = k;
            kernel_mat[j * n + i] = k;
        }
    }
    if kernel_mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "kernel matrix".into(),
            index: 0,
        });
    }

    let mut ky = kernel_mat.clone();
    for i in 0..n {
        ky[i * n + i] = ky[i * n + i] + sn2;
    }
    let (chol, jitter_used) = Cholesky::factor_with_jitter(&ky, n, jitter)?;
    let alpha = chol.solve(ys_std);
    let mut fit_term = S::zero();
    for (y, a) in ys_std.iter().zip(&alpha) {
        fit_term = fit_term + *y * *a;
    }
    let evidence = -S::cast(0.5) * fit_term
        - chol.half_log_det()
        - S::cast(n as f64 / 2.0 * LN_2PI);
    Ok(Evaluation {
        evidence,
        latents,
        activations,
        sq_dists,
        kernel_mat,
        chol,
        alpha,
        jitter_used,
    })
}

/// Log marginal likelihood of `(xs, ys)` under the given network and
/// hyperparameters. Targets are standardized internally (raw when `n < 2`).
pub fn log_marginal_likelihood<S: Scalar>(
    net: &FeatureNet<S>,
    hyper: &GpHyper<S>,
    xs: &[Vec<S>],
    ys: &[S],
    jitter: f64,
) -> Result<S> {
    check_training_inputs(net, xs, ys, 1)?;
    let (ys_std, _, _) = standardize(ys);
    Ok(evaluate(net, hyper, xs, &ys_std, jitter)?.evidence)
}

/// Flat parameter layout: `[w1, b1, w2, b2, log_l, log_sf2, log_sn2]`.
pub fn pack_params<S: Scalar>(net: &FeatureNet<S>, hyper: &GpHyper<S>) -> Vec<S> {
    let mut flat =
        Vec::with_capacity(net.w1.len() + net.b1.len() + net.w2.len() + net.b2.len() + 3);
    flat.extend_from_slice(&net.w1);
    flat.extend_from_slice(&net.b1);
    flat.extend_from_slice(&net.w2);
    flat.extend_from_slice(&net.b2);
    flat.push(hyper.log_lengthscale);
    flat.push(hyper.log_signal_var);
    flat.push(hyper.log_noise_var);
    flat
}

/// Inverse of [`pack_params`] for a network of the given dimensions.
pub fn unpack_params<S: Scalar>(
    flat: &[S],
    input_dim: usize,
    hidden_dim: usize,
    latent_dim: usize,
) -> (FeatureNet<S>, GpHyper<S>) {
    let mut at = 0usize;
    let mut take = |count: usize| {
        let slice = flat[at..at + count].to_vec();
        at += count;
        slice
    };
    let w1 = take(hidden_dim * input_dim);
    let b1 = take(hidden_dim);
    let w2 = take(latent_dim * hidden_dim);
    let b2 = take(latent_dim);
    let hyper = GpHyper {
        log_lengthscale: flat[at],
        log_signal_var: flat[at + 1],
        log_noise_var: flat[at + 2],
    };
    (
        FeatureNet {
            input_dim,
            hidden_dim,
            latent_dim,
            w1,
            b1,
            w2,
            b2,
        },
        hyper,
    )
}

/// Evidence plus its analytic gradient in [`pack_params`] layout. Targets are
/// standardized internally.
pub fn evidence_and_gradient<S: Scalar>(
    net: &FeatureNet<S>,
    hyper: &GpHyper<S>,
    xs: &[Vec<S>],
    ys: &[S],
    jitter: f64,
) -> Result<(S, Vec<S>)> {
    check_training_inputs(net, xs, ys, 1)?;
    let (ys_std, _, _) = standardize(ys);
    let eval = evaluate(net, hyper, xs, &ys_std, jitter)?;
    let n = xs.len();
    let (p, h, d) = (net.input_dim, net.hidden_dim, net.latent_dim);
    let ell = hyper.lengthscale();
    let ell2 = ell * ell;
    let sn2 = hyper.noise_var();

    // G = d(evidence)/dK = (alpha alpha' - Ky^-1) / 2
    let ky_inv = eval.chol.inverse();
    let mut g = vec![S::zero(); n * n];
    let half = S::cast(0.5);
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = half * (eval.alpha[i] * eval.alpha[j] - ky_inv[i * n + j]);
        }
    }

    // hyperparameter gradients
    let mut d_log_sf2 = S::zero();
    let mut d_log_ell = S::zero();
    let mut d_log_sn2 = S::zero();
    for i in 0..n {
        d_log_sn2 = d_log_sn2 + g[i * n + i] * sn2;
        for j in 0..n {
            let gk = g[i * n + j] * eval.kernel_mat[i * n + j];
            d_log_sf2 = d_log_sf2 + gk;
            d_log_ell = d_log_ell + gk * eval.sq_dists[i * n + j] / ell2;
        }
    }

    // latent gradients: dE/dz_i = (2/l^2) sum_j G_ij K_ij (z_j - z_i)
    let mut dz = vec![S::zero(); n * d];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let coeff = S::cast(2.0) * g[i * n + j] * eval.kernel_mat[i * n + j] / ell2;
            for t in 0..d {
                let diff = eval.latents[j * d + t] - eval.latents[i * d + t];
                dz[i * d + t] = dz[i * d + t] + coeff * diff;
            }
        }
    }

    // backprop through the net, accumulated in index order
    let mut dw1 = vec![S::zero(); h * p];
    let mut db1 = vec![S::zero(); h];
    let mut dw2 = vec![S::zero(); d * h];
    let mut db2 = vec![S::zero(); d];
    for i in 0..n {
        let a = &eval.activations[i * h..(i + 1) * h];
        let dzi = &dz[i * d..(i + 1) * d];
        for t in 0..d {
            db2[t] = db2[t] + dzi[t];
            for k in 0..h {
                dw2[t * h + k] = dw2[t * h + k] + dzi[t] * a[k];
            }
        }
        for k in 0..h {
            let mut da = S::zero();
            for t in 0..d {
                da = da + net.w2[t * h + k] * dzi[t];
            }
            let du = da * (S::one() - a[k] * a[k]);
            db1[k] = db1[k] + du;
            let x = &xs[i];
            for q in 0..p {
                dw1[k * p + q] = dw1[k * p + q] + du * x[q];
            }
        }
    }

    let mut grad = Vec::with_capacity(h * p + h + d * h + d + 3);
    grad.extend_from_slice(&dw1);
    grad.extend_from_slice(&db1);
    grad.extend_from_slice(&dw2);
    grad.extend_from_slice(&db2);
    grad.push(d_log_ell);
    grad.push(d_log_sf2);
    grad.push(d_log_sn2);
    Ok((eval.evidence, grad))
}

fn check_training_inputs<S: Scalar>(
    net: &FeatureNet<S>,
    xs: &[Vec<S>],
    ys: &[S],
    min_points: usize,
) -> Result<()> {
    if xs.len() < min_points {
        return Err(Error::InsufficientPoints {
            what: "gp training",
            required: min_points,
            actual: xs.len(),
        });
    }
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch {
            what: "gp targets",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    for x in xs {
        if x.len() != net.input_dim {
            return Err(Error::DimMismatch {
                what: "gp input",
                expected: net.input_dim,
                actual: x.len(),
            });
        }
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite {
            what: "gp targets".into(),
            index: 0,
        });
    }
    Ok(())
}

/// Trains a fresh model: seeded network init, then [`fit_warm`].
pub fn fit<S: Scalar>(xs: &[Vec<S>], ys: &[S], cfg: &FitConfig) -> Result<DklModel<S>> {
    fit_warm(xs, ys, cfg, None)
}

/// Trains with an optional warm start. Runs `cfg.epochs` momentum ascent
/// steps on the evidence and returns the best iterate encountered, which is
/// never worse than the starting point.
pub fn fit_warm<S: Scalar>(
    xs: &[Vec<S>],
    ys: &[S],
    cfg: &FitConfig,
    warm: Option<(FeatureNet<S>, GpHyper<S>)>,
) -> Result<DklModel<S>> {
    cfg.validate()?;
    let p = xs.first().map(|x| x.len()).unwrap_or(0);
    let (net0, hyper0) = match warm {
        Some((net, hyper)) => (net, hyper),
        None => (
            FeatureNet::init(p, cfg.hidden_dim, cfg.latent_dim, cfg.seed),
            GpHyper::default(),
        ),
    };
    check_training_inputs(&net0, xs, ys, 2)?;
    let (ys_std, y_mean, y_scale) = standardize(ys);
    let (h, d) = (net0.hidden_dim, net0.latent_dim);

    let mut params = pack_params(&net0, &hyper0);
    let mut velocity = vec![S::zero(); params.len()];
    let mut best_evidence = S::neg_infinity();
    let mut best_params = params.clone();
    let eta = S::cast(cfg.learning_rate);
    let beta = S::cast(cfg.momentum);

    for epoch in 0..cfg.epochs {
        let (net, hyper) = unpack_params(&params, p, h, d);
        let (evidence, grad) = evidence_and_gradient(&net, &hyper, xs, ys, cfg.jitter)?;
        if evidence > best_evidence {
            best_evidence = evidence;
            best_params.copy_from_slice(&params);
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                what: "dkl fit",
                epoch,
            });
        }
        let mut norm_sq = S::zero();
        for g in &grad {
            norm_sq = norm_sq + *g * *g;
        }
        let norm = norm_sq.sqrt();
        let clip = if norm > S::cast(MAX_GRAD_NORM) {
            S::cast(MAX_GRAD_NORM) / norm
        } else {
            S::one()
        };
        for ((v, g), theta) in velocity.iter_mut().zip(&grad).zip(params.iter_mut()) {
            *v = beta * *v + eta * clip * *g;
            *theta = *theta + *v;
        }
        let len = params.len();
        let clamp = |value: &mut S, lo: f64, hi: f64| {
            *value = value.max(S::cast(lo)).min(S::cast(hi));
        };
        clamp(&mut params[len - 3], LOG_LENGTHSCALE_RANGE.0, LOG_LENGTHSCALE_RANGE.1);
        clamp(&mut params[len - 2], LOG_SIGNAL_RANGE.0, LOG_SIGNAL_RANGE.1);
        clamp(&mut params[len - 1], LOG_NOISE_RANGE.0, LOG_NOISE_RANGE.1);
    }
    // consider the final iterate too
    {
        let (net, hyper) = unpack_params(&params, p, h, d);
        if let Ok(eval) = evaluate(&net, &hyper, xs, &ys_std, cfg.jitter) {
            if eval.evidence > best_evidence {
                best_params.copy_from_slice(&params);
            }
        }
    }

    let (net, hyper) = unpack_params(&best_params, p, h, d);
    let eval = evaluate(&net, &hyper, xs, &ys_std, cfg.jitter)?;
    Ok(DklModel {
        net,
        hyper,
        n: xs.len(),
        latents: eval.latents,
        targets_std: ys_std,
        alpha: eval.alpha,
        chol: eval.chol,
        y_mean,
        y_scale,
        jitter_used: eval.jitter_used,
        input_range: (S::zero(), S::one()),
    })
}

impl<S: Scalar> DklModel<S> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Builds a model from explicit parts without any training; used for
    /// fixed-feature references and tests.
    pub fn from_parts(
        net: FeatureNet<S>,
        hyper: GpHyper<S>,
        xs: &[Vec<S>],
        ys: &[S],
        jitter: f64,
        standardize_targets: bool,
    ) -> Result<Self> {
        check_training_inputs(&net, xs, ys, 1)?;
        let (ys_std, y_mean, y_scale) = if standardize_targets {
            standardize(ys)
        } else {
            (ys.to_vec(), S::zero(), S::one())
        };
        let eval = evaluate(&net, &hyper, xs, &ys_std, jitter)?;
        Ok(DklModel {
            n: xs.len(),
            latents: eval.latents,
            targets_std: ys_std,
            alpha: eval.alpha,
            chol: eval.chol,
            y_mean,
            y_scale,
            jitter_used: eval.jitter_used,
            net,
            hyper,
            input_range: (S::zero(), S::one()),
        })
    }

    /// Current evidence of the stored factorization.
    pub fn evidence(&self) -> S {
        let mut fit_term = S::zero();
        for (y, a) in self.targets_std.iter().zip(&self.alpha) {
            fit_term = fit_term + *y * *a;
        }
        -S::cast(0.5) * fit_term
            - self.chol.half_log_det()
            - S::cast(self.n as f64 / 2.0 * LN_2PI)
    }

    /// Posterior mean and variance at each query input, de-standardized.
    /// Negative variances (factorization round-off) clamp to zero and are
    /// counted.
    pub fn predict(&self, xs: &[Vec<S>]) -> Result<Prediction<S>> {
        let d = self.net.latent_dim;
        for x in xs {
            if x.len() != self.net.input_dim {
                return Err(Error::DimMismatch {
                    what: "predict input",
                    expected: self.net.input_dim,
                    actual: x.len(),
                });
            }
        }
        let sf2 = self.hyper.signal_var();
        let results: Vec<(S, S, bool)> = xs
            .par_iter()
            .map(|x| {
                let z = self.net.forward(x).1;
                let mut kstar = Vec::with_capacity(self.n);
                for i in 0..self.n {
                    let zi = &self.latents[i * d..(i + 1) * d];
                    let mut r = S::zero();
                    for (a, b) in z.iter().zip(zi) {
                        let diff = *a - *b;
                        r = r + diff * diff;
                    }
                    let ell = self.hyper.lengthscale();
                    kstar.push(sf2 * (-r / (S::cast(2.0) * ell * ell)).exp());
                }
                let mut mean_std = S::zero();
                for (k, a) in kstar.iter().zip(&self.alpha) {
                    mean_std = mean_std + *k * *a;
                }
                let w = self.chol.solve_lower(&kstar);
                let mut quad = S::zero();
                for v in &w {
                    quad = quad + *v * *v;
                }
                let var_std = sf2 - quad;
                let clamped = var_std < S::zero();
                let var_std = if clamped { S::zero() } else { var_std };
                (
                    self.y_mean + self.y_scale * mean_std,
                    self.y_scale * self.y_scale * var_std,
                    clamped,
                )
            })
            .collect();
        let clamped = results.iter().filter(|(_, _, c)| *c).count();
        if clamped > 0 {
            log::debug!("predict clamped {clamped} negative variances to zero");
        }
        Ok(Prediction {
            mean: results.iter().map(|(m, _, _)| *m).collect(),
            var: results.iter().map(|(_, v, _)| *v).collect(),
            clamped,
        })
    }

    /// Serializes the model as a little-endian binary blob (version byte 1,
    /// all floats widened to f64).
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out: Vec<u8> = vec![1u8];
        let push_u64 = |out: &mut Vec<u8>, v: usize| {
            out.extend_from_slice(&(v as u64).to_le_bytes())
        };
        push_u64(&mut out, self.net.input_dim);
        push_u64(&mut out, self.net.hidden_dim);
        push_u64(&mut out, self.net.latent_dim);
        push_u64(&mut out, self.n);
        let push_f64s = |out: &mut Vec<u8>, vs: &[S]| {
            for v in vs {
                out.extend_from_slice(&v.f64().to_le_bytes());
            }
        };
        push_f64s(&mut out, &self.net.w1);
        push_f64s(&mut out, &self.net.b1);
        push_f64s(&mut out, &self.net.w2);
        push_f64s(&mut out, &self.net.b2);
        push_f64s(
            &mut out,
            &[
                self.hyper.log_lengthscale,
                self.hyper.log_signal_var,
                self.hyper.log_noise_var,
                self.y_mean,
                self.y_scale,
                self.input_range.0,
                self.input_range.1,
            ],
        );
        out.extend_from_slice(&self.jitter_used.to_le_bytes());
        push_f64s(&mut out, &self.latents);
        push_f64s(&mut out, &self.targets_std);
        std::fs::write(path, &out).map_err(|e| Error::io(path, e))
    }

    /// Loads a blob written by [`save`] and rebuilds the factorization.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut at = 0usize;
        let take = |bytes: &[u8], at: &mut usize, count: usize| -> Result<Vec<u8>> {
            if *at + count > bytes.len() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    reason: "truncated model blob".into(),
                });
            }
            let s = bytes[*at..*at + count].to_vec();
            *at += count;
            Ok(s)
        };
        let version = take(&bytes, &mut at, 1)?[0];
        if version != 1 {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                reason: format!("unsupported model version {version}"),
            });
        }
        let read_u64 = |at: &mut usize| -> Result<usize> {
            let b = take(&bytes, at, 8)?;
            Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        let p = read_u64(&mut at)?;
        let h = read_u64(&mut at)?;
        let d = read_u64(&mut at)?;
        let n = read_u64(&mut at)?;
        let read_f64s = |at: &mut usize, count: usize| -> Result<Vec<S>> {
            let b = take(&bytes, at, count * 8)?;
            Ok(b.chunks_exact(8)
                .map(|c| S::cast(f64::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        let w1 = read_f64s(&mut at, h * p)?;
        let b1 = read_f64s(&mut at, h)?;
        let w2 = read_f64s(&mut at, d * h)?;
        let b2 = read_f64s(&mut at, d)?;
        let scalars = read_f64s(&mut at, 7)?;
        let jitter_bytes = take(&bytes, &mut at, 8)?;
        let jitter_used = f64::from_le_bytes(jitter_bytes.try_into().unwrap());
        let latents = read_f64s(&mut at, n * d)?;
        let targets_std = read_f64s(&mut at, n)?;

        let net = FeatureNet {
            input_dim: p,
            hidden_dim: h,
            latent_dim: d,
            w1,
            b1,
            w2,
            b2,
        };
        let hyper = GpHyper {
            log_lengthscale: scalars[0],
            log_signal_var: scalars[1],
            log_noise_var: scalars[2],
        };
        // rebuild K(Z,Z) + noise from the stored latents
        let sf2 = hyper.signal_var();
        let sn2 = hyper.noise_var();
        let ell = hyper.lengthscale();
        let two_ell2 = S::cast(2.0) * ell * ell;
        let mut ky = vec![S::zero(); n * n];
        for i in 0..n {
            ky[i * n + i] = sf2 + sn2;
            for j in i + 1..n {
                let mut r = S::zero();
                for t in 0..d {
                    let diff = latents[i * d + t] - latents[j * d + t];
                    r = r + diff * diff;
                }
                let k = sf2 * (-r / two_ell2).exp();
                ky[i * n + j] = k;
                ky[j * n + i] = k;
            }
        }
        let jitter = if jitter_used > 0.0 { jitter_used } else { 1e-8 };
        let mut ky_j = ky.clone();
        if jitter_used > 0.0 {
            for i in 0..n {
                ky_j[i * n + i] = ky_j[i * n + i] + S::cast(jitter_used);
            }
        }
        let chol = match Cholesky::factor(&ky_j, n) {
            Some(c) => c,
            None => Cholesky::factor_with_jitter(&ky, n, jitter)?.0,
        };
        let alpha = chol.solve(&targets_std);
        Ok(DklModel {
            net,
            hyper,
            n,
            latents,
            targets_std,
            alpha,
            chol,
            y_mean: scalars[3],
            y_scale: scalars[4],
            jitter_used,
            input_range: (scalars[5], scalars[6]),
        })
    }
}
