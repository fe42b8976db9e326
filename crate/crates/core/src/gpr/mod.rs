//! Gaussian process regression with a linear mean `Φ(z)ᵀβ`, `Φ(z) = (1, z)`,
//! and an ARD squared-exponential kernel.
//!
//! Inputs are standardized per dimension before anything else; all
//! hyper-parameters live in standardized coordinates. The noise level is
//! parametrized as `σ_n = floor + exp(ρ)` so that it never drops below
//! `floor = 1e-6 · std(y)`.

use faer::linalg::solvers::{DenseSolveCore, Llt};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, BfgsOptions};

pub mod kron;

use kron::TensorLayout;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprHyperparams {
    /// Intercept followed by one slope per input dimension.
    pub beta: Vec<f64>,
    pub kappa1: f64,
    pub length_scales: Vec<f64>,
    pub noise_sigma: f64,
}

impl GprHyperparams {
    /// `κ₁² exp(−½ Σ_d (a_d − b_d)² / ℓ_d²)`.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.kappa1 * self.kappa1 * (-0.5 * s).exp()
    }

    pub fn mean(&self, z: &[f64]) -> f64 {
        self.beta[0] + self.beta[1..].iter().zip(z).map(|(b, x)| b * x).sum::<f64>()
    }
}

pub fn kernel_eval(hp: &GprHyperparams, z1: &[f64], z2: &[f64]) -> f64 {
    hp.kernel(z1, z2)
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x[0].len();
        let m = x.len() as f64;
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for d in 0..p {
            mean[d] = x.iter().map(|r| r[d]).sum::<f64>() / m;
            let var = x.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / m;
            scale[d] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Standardized training data and the noise floor.
#[derive(Debug, Clone, PartialEq)]
pub struct GprData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub noise_floor: f64,
}

impl GprData {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::arg("input and target counts differ"));
        }
        if x.len() < 2 {
            return Err(Error::arg("at least two training points are required"));
        }
        let p = x[0].len();
        if p == 0 || x.iter().any(|r| r.len() != p) {
            return Err(Error::arg("training inputs must share a nonzero dimension"));
        }
        if x.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::arg("training data must be finite"));
        }
        let noise_floor = 1e-6 * target_scale(&y);
        Ok(Self { x, y, noise_floor })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x[0].len()
    }

    /// Number of unconstrained optimization variables.
    pub fn n_theta(&self) -> usize {
        2 * self.p() + 3
    }

    /// Unconstrained vector `(β, log κ₁, log ℓ, ρ)` for the given hyper-parameters.
    pub fn encode(&self, hp: &GprHyperparams) -> Vec<f64> {
        let mut t = hp.beta.clone();
        t.push(hp.kappa1.ln());
        t.extend(hp.length_scales.iter().map(|l| l.ln()));
        t.push((hp.noise_sigma - self.noise_floor).max(1e-300).ln());
        t
    }

    pub fn decode(&self, theta: &[f64]) -> GprHyperparams {
        let p = self.p();
        GprHyperparams {
            beta: theta[..=p].to_vec(),
            kappa1: theta[p + 1].exp(),
            length_scales: theta[p + 2..2 * p + 2].iter().map(|v| v.exp()).collect(),
            noise_sigma: self.noise_floor + theta[2 * p + 2].exp(),
        }
    }
}

/// Standard deviation of the targets, or a positive fallback for constant data.
fn target_scale(y: &[f64]) -> f64 {
    let m = y.len() as f64;
    let mean = y.iter().sum::<f64>() / m;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
    if sd > 1e-12 * mean.abs().max(1e-300) && sd > 0.0 {
        sd
    } else {
        mean.abs().max(1.0) * 1e-3
    }
}

/// Lower Cholesky factor (row-major) of `K + σ_n² I`, escalating a diagonal
/// jitter from `1e-10` to `1e-6` times the mean diagonal on failure.
struct Factor {
    l: Vec<f64>,
    m: usize,
    llt: Llt<f64>,
    kf: Vec<f64>,
}

fn factorize(data: &GprData, hp: &GprHyperparams) -> Result<Factor> {
    let m = data.m();
    let mut kf = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let k = hp.kernel(&data.x[i], &data.x[j]);
            kf[i * m + j] = k;
            kf[j * m + i] = k;
        }
    }
    let s2 = hp.noise_sigma * hp.noise_sigma;
    let mean_diag = (0..m).map(|i| kf[i * m + i]).sum::<f64>() / m as f64 + s2;
    let mut jitters = vec![0.0];
    let mut j = 1e-10;
    while j <= 1e-6 * (1.0 + 1e-9) {
        jitters.push(j * mean_diag);
        j *= 10.0;
    }
    for jitter in jitters {
        let a = Mat::from_fn(m, m, |r, c| kf[r * m + c] + if r == c { s2 + jitter } else { 0.0 });
        if let Ok(llt) = a.llt(Side::Lower) {
            let lref = llt.L();
            let mut l = vec![0.0; m * m];
            for r in 0..m {
                for c in 0..=r {
                    l[r * m + c] = lref[(r, c)];
                }
            }
            if l.iter().all(|v| v.is_finite()) {
                return Ok(Factor {
                    l,
                    m,
                    llt,
                    kf,
                });
            }
        }
    }
    Err(Error::Conditioning(format!(
        "Cholesky failed for m = {m} even with jitter 1e-6 x mean diagonal"
    )))
}

impl Factor {
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut x = b.to_vec();
        for i in 0..m {
            let row = &self.l[i * m..i * m + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.l[i * m + i];
        }
        x
    }

    fn backward(&self, b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut x = b.to_vec();
        for i in (0..m).rev() {
            let mut s = 0.0;
            for k in i + 1..m {
                s += self.l[k * m + i] * x[k];
            }
            x[i] = (x[i] - s) / self.l[i * m + i];
        }
        x
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    fn log_det(&self) -> f64 {
        2.0 * (0..self.m).map(|i| self.l[i * self.m + i].ln()).sum::<f64>()
    }

    fn inverse(&self) -> Vec<f64> {
        let inv = self.llt.inverse();
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] = inv[(r, c)];
            }
        }
        out
    }
}

fn residual(data: &GprData, hp: &GprHyperparams) -> Vec<f64> {
    data.x.iter().zip(&data.y).map(|(x, y)| y - hp.mean(x)).collect()
}

/// Log marginal likelihood at `theta` (see [`GprData::decode`]) and, when
/// requested, its gradient with respect to `theta`.
pub fn log_likelihood(data: &GprData, theta: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
    let hp = data.decode(theta);
    let f = factorize(data, &hp)?;
    let m = data.m();
    let r = residual(data, &hp);
    let alpha = f.solve(&r);
    let quad: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let ll = -0.5 * quad - 0.5 * f.log_det() - 0.5 * m as f64 * LN_2PI;
    if !with_grad {
        return Ok((ll, Vec::new()));
    }
    let p = data.p();
    let mut g = vec![0.0; data.n_theta()];
    // ∂/∂β = Φᵀα
    g[0] = alpha.iter().sum();
    for d in 0..p {
        g[1 + d] = data.x.iter().zip(&alpha).map(|(x, a)| x[d] * a).sum();
    }
    // ½ tr((ααᵀ − K⁻¹) ∂K), W symmetric
    let kinv = f.inverse();
    let ls = &hp.length_scales;
    let (mut gk, mut gl, mut tr_w) = (0.0, vec![0.0; p], 0.0);
    for i in 0..m {
        for j in 0..=i {
            let w = alpha[i] * alpha[j] - kinv[i * m + j];
            let mult = if i == j { 0.5 } else { 1.0 };
            let kf = f.kf[i * m + j];
            gk += mult * w * 2.0 * kf;
            for d in 0..p {
                let dd = (data.x[i][d] - data.x[j][d]) / ls[d];
                gl[d] += mult * w * kf * dd * dd;
            }
            if i == j {
                tr_w += w;
            }
        }
    }
    g[p + 1] = gk;
    g[p + 2..2 * p + 2].copy_from_slice(&gl);
    let e_rho = theta[2 * p + 2].exp();
    g[2 * p + 2] = 0.5 * tr_w * 2.0 * hp.noise_sigma * e_rho;
    Ok((ll, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            max_iter: 200,
            grad_tol: 1e-6,
        }
    }
}

/// Serializable description of a trained model; the factor is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprSpec {
    pub hyperparams: GprHyperparams,
    pub standardizer: Standardizer,
    /// Raw (unstandardized) training inputs.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct GprModel {
    pub spec: GprSpec,
    data: GprData,
    factor_l: Vec<f64>,
    alpha: Vec<f64>,
}

impl GprModel {
    pub fn from_spec(spec: GprSpec) -> Result<Self> {
        let xs: Vec<Vec<f64>> = spec.inputs.iter().map(|z| spec.standardizer.apply(z)).collect();
        let data = GprData::new(xs, spec.targets.clone())?;
        let f = factorize(&data, &spec.hyperparams)?;
        let alpha = f.solve(&residual(&data, &spec.hyperparams));
        Ok(Self {
            spec,
            data,
            factor_l: f.l,
            alpha,
        })
    }

    pub fn hyperparams(&self) -> &GprHyperparams {
        &self.spec.hyperparams
    }

    pub fn n_train(&self) -> usize {
        self.data.m()
    }

    /// Posterior mean and latent variance (clamped at zero) at a raw input.
    pub fn mean_and_variance(&self, z: &[f64]) -> (f64, f64) {
        let x = self.spec.standardizer.apply(z);
        let hp = &self.spec.hyperparams;
        let k: Vec<f64> = self.data.x.iter().map(|xi| hp.kernel(&x, xi)).collect();
        let mean = hp.mean(&x) + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let m = self.data.m();
        let mut v = k;
        for i in 0..m {
            let row = &self.factor_l[i * m..i * m + i];
            let s: f64 = row.iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
            v[i] = (v[i] - s) / self.factor_l[i * m + i];
        }
        let var = hp.kappa1 * hp.kappa1 - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0))
    }

    pub fn predict_mean(&self, z: &[f64]) -> f64 {
        let x = self.spec.standardizer.apply(z);
        let hp = &self.spec.hyperparams;
        hp.mean(&x) + self.data.x.iter().zip(&self.alpha).map(|(xi, a)| hp.kernel(&x, xi) * a).sum::<f64>()
    }

    /// `mean + λ √variance`.
    pub fn predict(&self, z: &[f64], lambda: f64) -> f64 {
        if lambda == 0.0 {
            return self.predict_mean(z);
        }
        let (m, v) = self.mean_and_variance(z);
        m + lambda * v.sqrt()
    }
}

pub fn predict(model: &GprModel, z: &[f64], lambda: f64) -> f64 {
    model.predict(z, lambda)
}

/// Ordinary least squares for the linear mean.
fn ols(data: &GprData) -> Vec<f64> {
    let p1 = data.p() + 1;
    let phi = |x: &[f64], k: usize| if k == 0 { 1.0 } else { x[k - 1] };
    let a = Mat::from_fn(p1, p1, |r, c| data.x.iter().map(|x| phi(x, r) * phi(x, c)).sum::<f64>() + if r == c { 1e-12 } else { 0.0 });
    let b: Vec<f64> = (0..p1).map(|r| data.x.iter().zip(&data.y).map(|(x, y)| phi(x, r) * y).sum()).collect();
    match a.llt(Side::Lower) {
        Ok(llt) => {
            let inv = llt.inverse();
            (0..p1).map(|r| (0..p1).map(|c| inv[(r, c)] * b[c]).sum()).collect()
        }
        Err(_) => {
            let mut beta = vec![0.0; p1];
            beta[0] = data.y.iter().sum::<f64>() / data.m() as f64;
            beta
        }
    }
}

/// Heuristic starting point: `ℓ_d` = half the standardized input range,
/// `κ₁` = target std, `σ_n` = `1e-3` × target std, `β` from least squares.
pub fn heuristic_hyperparams(data: &GprData) -> GprHyperparams {
    let scale = target_scale(&data.y);
    let length_scales = (0..data.p())
        .map(|d| {
            let (lo, hi) = data
                .x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x[d]), b.max(x[d])));
            if hi > lo {
                0.5 * (hi - lo)
            } else {
                1.0
            }
        })
        .collect();
    GprHyperparams {
        beta: ols(data),
        kappa1: scale,
        length_scales,
        noise_sigma: data.noise_floor + 1e-3 * scale,
    }
}

/// Below this size the dense likelihood is cheap enough on any layout.
const KRON_MIN_POINTS: usize = 64;

/// Maximizes the log-likelihood from the heuristic start plus `restarts − 1`
/// seeded perturbations of it and returns the best model.
pub fn train(inputs: &[Vec<f64>], targets: &[f64], opts: &TrainOptions) -> Result<GprModel> {
    if inputs.len() < 2 {
        return Err(Error::arg("GPR training needs at least two points"));
    }
    let standardizer = Standardizer::fit(inputs);
    let xs: Vec<Vec<f64>> = inputs.iter().map(|z| standardizer.apply(z)).collect();
    let data = GprData::new(xs, targets.to_vec())?;
    let h0 = heuristic_hyperparams(&data);
    let theta0 = data.encode(&h0);
    let layout = if data.p() >= 2 && data.m() >= KRON_MIN_POINTS { TensorLayout::detect(&data.x) } else { None };
    let objective = |t: &[f64], g: bool| match &layout {
        Some(l) => kron::log_likelihood(&data, l, t, g),
        None => log_likelihood(&data, t, g),
    };
    let ll0 = objective(&theta0, false).map(|r| r.0).ok();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let p = data.p();
    let bfgs = BfgsOptions {
        grad_tol: opts.grad_tol,
        max_iter: opts.max_iter,
        fd_fallback: false,
        ..Default::default()
    };
    let mut best: Option<(f64, Vec<f64>)> = ll0.map(|ll| (ll, theta0.clone()));
    let mut last_err = None;
    for r in 0..opts.restarts.max(1) {
        let mut start = theta0.clone();
        if r > 0 {
            for v in &mut start[p + 1..] {
                *v += rng.random_range(-1.0..1.0);
            }
        }
        let run = minimize(
            |t: &[f64], g: bool| match objective(t, g) {
                Ok((ll, grad)) => Ok((-ll, grad.into_iter().map(|v| -v).collect())),
                // an unfactorizable trial point is rejected by the line search
                Err(Error::Conditioning(_)) if !g => Ok((f64::INFINITY, Vec::new())),
                Err(e) => Err(e),
            },
            &start,
            &bfgs,
        );
        match run {
            Ok(res) => {
                let ll = -res.value;
                if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                    best = Some((ll, res.x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((ll, theta)) = best else {
        return Err(Error::Training(format!(
            "all {} restarts failed: {}",
            opts.restarts,
            last_err.map_or_else(|| "unknown".to_string(), |e| e.to_string())
        )));
    };
    if let Some(l0) = ll0 {
        debug_assert!(ll >= l0);
    }
    GprModel::from_spec(GprSpec {
        hyperparams: data.decode(&theta),
        standardizer,
        inputs: inputs.to_vec(),
        targets: targets.to_vec(),
        log_likelihood: ll,
    })
}
