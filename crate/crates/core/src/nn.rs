//! Small fully connected networks with hand-written gradients: a one-hidden-layer
//! ReLU MLP, diagonal-Gaussian and categorical policy heads, analytic KL and
//! KL Hessian-vector products (Fisher form at the old parameters), Adam, and a
//! running observation normaliser.
//!
//! Flat parameter layout of an [`Mlp`]: `W1` (hidden x input, row-major), `b1`,
//! `W2` (output x hidden, row-major), `b2`. A [`PolicyNet`] appends its
//! Gaussian standard-deviation parameters (one per action dimension) after the
//! MLP block.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cmg::sample_categorical;
use crate::error::{ensure_finite, ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

/// Hidden pre-activations and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

/// Orthogonal matrix (rows x cols) scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let m = DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    let qr = m.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if tall { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

impl Mlp {
    /// Orthogonal initialisation: gain `sqrt(2)` on the hidden layer, `output_gain`
    /// on the output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, output_gain: f64, rng: &mut R) -> Self {
        let mut params = orthogonal(hidden, input, std::f64::consts::SQRT_2, rng);
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend(orthogonal(output, hidden, output_gain, rng));
        params.extend(std::iter::repeat_n(0.0, output));
        Self {
            input,
            hidden,
            output,
            params,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            params: vec![0.0; Self::param_count(input, hidden, output)],
        }
    }

    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * (input + 1) + output * (hidden + 1)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_len(params.len(), self.params.len(), "mlp parameters")?;
        ensure_finite(params, "mlp parameters")?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    pub fn forward_cache(&self, x: &[f64]) -> MlpCache {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &p[k * self.input..(k + 1) * self.input];
                p[b1 + k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let out = (0..self.output)
            .map(|o| {
                let row = &p[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                p[b2 + o] + row.iter().zip(&pre).map(|(w, z)| w * z.max(0.0)).sum::<f64>()
            })
            .collect();
        MlpCache { pre, out }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cache(x).out
    }

    /// Accumulates `J^T grad_out` into `grad` (length `n_params`).
    pub fn backward(&self, x: &[f64], cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut g_hidden = vec![0.0; self.hidden];
        for (o, &go) in grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = w2 + o * self.hidden;
            for k in 0..self.hidden {
                grad[row + k] += go * cache.pre[k].max(0.0);
                g_hidden[k] += go * p[row + k];
            }
            grad[b2 + o] += go;
        }
        for k in 0..self.hidden {
            if cache.pre[k] <= 0.0 {
                continue;
            }
            let gk = g_hidden[k];
            let row = k * self.input;
            for (d, &xd) in x.iter().enumerate() {
                grad[row + d] += gk * xd;
            }
            grad[b1 + k] += gk;
        }
    }

    /// Directional derivative of the output, `J v`.
    pub fn jvp(&self, x: &[f64], cache: &MlpCache, v: &[f64]) -> Vec<f64> {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let d_hidden: Vec<f64> = (0..self.hidden)
            .map(|k| {
                if cache.pre[k] <= 0.0 {
                    return 0.0;
                }
                let row = &v[k * self.input..(k + 1) * self.input];
                v[b1 + k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        (0..self.output)
            .map(|o| {
                let row = w2 + o * self.hidden;
                let mut acc = v[b2 + o];
                for k in 0..self.hidden {
                    acc += v[row + k] * cache.pre[k].max(0.0) + p[row + k] * d_hidden[k];
                }
                acc
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let lse = top + logits.iter().map(|z| (z - top).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Output head of a policy network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// `std = std_y_coef * sigmoid(p / std_x_coef)` per dimension, state independent.
    Gaussian { std_x_coef: f64, std_y_coef: f64 },
    Categorical,
}

/// Distribution produced for one observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Categorical { log_probs: Vec<f64> },
}

impl ActionDistribution {
    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        match self {
            Self::Gaussian { mean, std } => {
                ensure_len(action.len(), mean.len(), "action dimension")?;
                Ok(mean
                    .iter()
                    .zip(std)
                    .zip(action)
                    .map(|((m, s), a)| {
                        let z = (a - m) / s;
                        -0.5 * z * z - s.ln() - HALF_LN_2PI
                    })
                    .sum())
            }
            Self::Categorical { log_probs } => {
                let idx = categorical_index(action, log_probs.len())?;
                Ok(log_probs[idx])
            }
        }
    }

    /// `D_KL(self || other)`.
    pub fn kl(&self, other: &Self) -> Result<f64> {
        match (self, other) {
            (Self::Gaussian { mean: m0, std: s0 }, Self::Gaussian { mean: m1, std: s1 }) => Ok(m0
                .iter()
                .zip(s0)
                .zip(m1.iter().zip(s1))
                .map(|((a, sa), (b, sb))| (sb / sa).ln() + (sa * sa + (a - b) * (a - b)) / (2.0 * sb * sb) - 0.5)
                .sum()),
            (Self::Categorical { log_probs: p }, Self::Categorical { log_probs: q }) => {
                Ok(p.iter().zip(q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum())
            }
            _ => Err(Error::InvalidInput("KL between different distribution families".into())),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect(),
            Self::Categorical { log_probs } => {
                let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
                vec![sample_categorical(&probs, rng) as f64]
            }
        }
    }

    /// Mean action (Gaussian) or most likely action (categorical).
    pub fn mode(&self) -> Vec<f64> {
        match self {
            Self::Gaussian { mean, .. } => mean.clone(),
            Self::Categorical { log_probs } => {
                let mut best = 0;
                for (i, l) in log_probs.iter().enumerate() {
                    if *l > log_probs[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
        }
    }
}

fn categorical_index(action: &[f64], n: usize) -> Result<usize> {
    if action.len() != 1 || action[0] < 0.0 || action[0].fract() != 0.0 || action[0] as usize >= n {
        return Err(Error::InvalidInput(format!("categorical action {action:?} out of range")));
    }
    Ok(action[0] as usize)
}

/// A policy: MLP trunk producing means or logits, plus the head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    head: Head,
    net: Mlp,
    std_params: Vec<f64>,
}

impl PolicyNet {
    /// Gaussian policy; std parameters start at `std_x_coef`, so the initial
    /// standard deviation is `std_y_coef * sigmoid(1)`.
    pub fn gaussian<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: usize,
        gain: f64,
        std_x_coef: f64,
        std_y_coef: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(std_x_coef > 0.0 && std_y_coef > 0.0) {
            return Err(Error::InvalidInput("std coefficients must be positive".into()));
        }
        Ok(Self {
            head: Head::Gaussian { std_x_coef, std_y_coef },
            net: Mlp::new(obs_dim, hidden, action_dim, gain, rng),
            std_params: vec![std_x_coef; action_dim],
        })
    }

    pub fn categorical<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, hidden: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            head: Head::Categorical,
            net: Mlp::new(obs_dim, hidden, n_actions, gain, rng),
            std_params: Vec::new(),
        }
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Length of an action vector (1 for categorical).
    pub fn action_dim(&self) -> usize {
        match self.head {
            Head::Gaussian { .. } => self.net.output_dim(),
            Head::Categorical => 1,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params() + self.std_params.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = self.net.params().to_vec();
        out.extend_from_slice(&self.std_params);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_len(params.len(), self.n_params(), "policy parameters")?;
        ensure_finite(params, "policy parameters")?;
        let split = self.net.n_params();
        self.net.set_params(&params[..split])?;
        self.std_params.copy_from_slice(&params[split..]);
        Ok(())
    }

    /// Copy with parameters `params + step`.
    pub fn stepped(&self, step: &[f64], scale: f64) -> Result<Self> {
        let mut p = self.params();
        ensure_len(step.len(), p.len(), "parameter step")?;
        for (x, s) in p.iter_mut().zip(step) {
            *x += scale * s;
        }
        let mut out = self.clone();
        out.set_params(&p)?;
        Ok(out)
    }

    pub fn std(&self) -> Vec<f64> {
        match self.head {
            Head::Gaussian { std_x_coef, std_y_coef } => self
                .std_params
                .iter()
                .map(|p| std_y_coef * sigmoid(p / std_x_coef))
                .collect(),
            Head::Categorical => Vec::new(),
        }
    }

    /// `d std / d p` per dimension.
    fn std_derivative(&self) -> Vec<f64> {
        match self.head {
            Head::Gaussian { std_x_coef, std_y_coef } => self
                .std_params
                .iter()
                .map(|p| {
                    let s = sigmoid(p / std_x_coef);
                    std_y_coef * s * (1.0 - s) / std_x_coef
                })
                .collect(),
            Head::Categorical => Vec::new(),
        }
    }

    fn dist_from_output(&self, out: Vec<f64>) -> ActionDistribution {
        match self.head {
            Head::Gaussian { .. } => ActionDistribution::Gaussian {
                mean: out,
                std: self.std(),
            },
            Head::Categorical => ActionDistribution::Categorical {
                log_probs: log_softmax(&out),
            },
        }
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<ActionDistribution> {
        ensure_len(obs.len(), self.obs_dim(), "observation")?;
        Ok(self.dist_from_output(self.net.forward(obs)))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        self.distribution(obs)?.log_prob(action)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.distribution(obs)?.sample(rng))
    }

    pub fn mode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.distribution(obs)?.mode())
    }

    /// Adds `scale * grad log pi(action | obs)` into `grad` and returns `log pi`.
    pub fn accumulate_grad_log_prob(&self, obs: &[f64], action: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64> {
        ensure_len(obs.len(), self.obs_dim(), "observation")?;
        ensure_len(grad.len(), self.n_params(), "gradient buffer")?;
        let cache = self.net.forward_cache(obs);
        let split = self.net.n_params();
        match self.head {
            Head::Gaussian { .. } => {
                ensure_len(action.len(), self.net.output_dim(), "action dimension")?;
                let std = self.std();
                let dstd = self.std_derivative();
                let mut g_mean = vec![0.0; action.len()];
                let mut logp = 0.0;
                for d in 0..action.len() {
                    let z = (action[d] - cache.out[d]) / std[d];
                    logp += -0.5 * z * z - std[d].ln() - HALF_LN_2PI;
                    g_mean[d] = scale * z / std[d];
                    grad[split + d] += scale * (z * z - 1.0) / std[d] * dstd[d];
                }
                self.net.backward(obs, &cache, &g_mean, &mut grad[..split]);
                Ok(logp)
            }
            Head::Categorical => {
                let logp = log_softmax(&cache.out);
                let idx = categorical_index(action, logp.len())?;
                let g: Vec<f64> = logp
                    .iter()
                    .enumerate()
                    .map(|(k, l)| scale * (if k == idx { 1.0 } else { 0.0 } - l.exp()))
                    .collect();
                self.net.backward(obs, &cache, &g, &mut grad[..split]);
                Ok(logp[idx])
            }
        }
    }

    pub fn grad_log_prob(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n_params()];
        self.accumulate_grad_log_prob(obs, action, 1.0, &mut g)?;
        Ok(g)
    }

    fn rows<'a>(&self, obs_batch: &'a [f64]) -> Result<std::slice::ChunksExact<'a, f64>> {
        let d = self.obs_dim();
        if d == 0 || obs_batch.is_empty() || obs_batch.len() % d != 0 {
            return Err(Error::InvalidInput("observation batch shape".into()));
        }
        Ok(obs_batch.chunks_exact(d))
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.head != other.head || self.n_params() != other.n_params() || self.obs_dim() != other.obs_dim() {
            return Err(Error::InvalidInput("policies have different architectures".into()));
        }
        Ok(())
    }

    /// `mean_n D_KL(old(.|o_n) || new(.|o_n))` over a row-major observation batch.
    pub fn mean_kl(old: &Self, new: &Self, obs_batch: &[f64]) -> Result<f64> {
        old.check_same_shape(new)?;
        let rows = old.rows(obs_batch)?;
        let n = rows.len();
        let mut total = 0.0;
        for obs in rows {
            total += old.distribution(obs)?.kl(&new.distribution(obs)?)?;
        }
        Ok(total / n as f64)
    }

    /// Gradient of [`PolicyNet::mean_kl`] with respect to the new parameters.
    pub fn mean_kl_grad(old: &Self, new: &Self, obs_batch: &[f64]) -> Result<Vec<f64>> {
        old.check_same_shape(new)?;
        let rows = old.rows(obs_batch)?;
        let n = rows.len() as f64;
        let split = new.net.n_params();
        let mut grad = vec![0.0; new.n_params()];
        let std_new = new.std();
        let dstd = new.std_derivative();
        for obs in rows {
            let old_out = old.net.forward(obs);
            let cache = new.net.forward_cache(obs);
            match new.head {
                Head::Gaussian { .. } => {
                    let std_old = old.std();
                    let mut g_mean = vec![0.0; old_out.len()];
                    for d in 0..old_out.len() {
                        let (m0, m1, s0, s1) = (old_out[d], cache.out[d], std_old[d], std_new[d]);
                        g_mean[d] = (m1 - m0) / (s1 * s1) / n;
                        let d_s1 = 1.0 / s1 - (s0 * s0 + (m0 - m1) * (m0 - m1)) / (s1 * s1 * s1);
                        grad[split + d] += d_s1 * dstd[d] / n;
                    }
                    new.net.backward(obs, &cache, &g_mean, &mut grad[..split]);
                }
                Head::Categorical => {
                    let p = log_softmax(&old_out);
                    let q = log_softmax(&cache.out);
                    let g: Vec<f64> = p.iter().zip(&q).map(|(lp, lq)| (lq.exp() - lp.exp()) / n).collect();
                    new.net.backward(obs, &cache, &g, &mut grad[..split]);
                }
            }
        }
        Ok(grad)
    }

    /// `(H + damping I) v` where `H` is the Hessian of the mean KL at `new = self`.
    pub fn kl_hessian_vector_product(&self, obs_batch: &[f64], v: &[f64], damping: f64) -> Result<Vec<f64>> {
        ensure_len(v.len(), self.n_params(), "hvp vector")?;
        let rows = self.rows(obs_batch)?;
        let n = rows.len() as f64;
        let split = self.net.n_params();
        let mut out = vec![0.0; self.n_params()];
        let std = self.std();
        for obs in rows {
            let cache = self.net.forward_cache(obs);
            let jv = self.net.jvp(obs, &cache, &v[..split]);
            let weighted: Vec<f64> = match self.head {
                Head::Gaussian { .. } => jv.iter().zip(&std).map(|(x, s)| x / (s * s) / n).collect(),
                Head::Categorical => {
                    let p: Vec<f64> = log_softmax(&cache.out).iter().map(|l| l.exp()).collect();
                    let pjv: f64 = p.iter().zip(&jv).map(|(a, b)| a * b).sum();
                    p.iter().zip(&jv).map(|(pk, x)| pk * (x - pjv) / n).collect()
                }
            };
            self.net.backward(obs, &cache, &weighted, &mut out[..split]);
        }
        if let Head::Gaussian { .. } = self.head {
            let dstd = self.std_derivative();
            for d in 0..std.len() {
                out[split + d] += 2.0 * dstd[d] * dstd[d] / (std[d] * std[d]) * v[split + d];
            }
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += damping * x;
        }
        Ok(out)
    }
}

/// Scalar-output network for reward or cost values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    net: Mlp,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(obs_dim, hidden, 1, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.net.forward(obs)[0]
    }

    /// Adds `scale * d value / d params` into `grad` and returns the value.
    pub fn accumulate_grad(&self, obs: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let cache = self.net.forward_cache(obs);
        self.net.backward(obs, &cache, &[scale], grad);
        cache.out[0]
    }
}

/// Adam with bias correction; `step` descends along `grad`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        ensure_len(params.len(), self.m.len(), "adam parameters")?;
        ensure_len(grad.len(), self.m.len(), "adam gradient")?;
        ensure_finite(grad, "adam gradient")?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Running mean and variance of observations, merged batch by batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: f64,
    clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            clip: 10.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a row-major batch of observations into the running statistics.
    pub fn update(&mut self, batch: &[f64]) -> Result<()> {
        let d = self.dim();
        if d == 0 || batch.len() % d != 0 {
            return Err(Error::InvalidInput("observation batch shape".into()));
        }
        let n = (batch.len() / d) as f64;
        if n == 0.0 {
            return Ok(());
        }
        for k in 0..d {
            let column = batch.iter().skip(k).step_by(d);
            let bmean = column.clone().sum::<f64>() / n;
            let bvar = column.map(|x| (x - bmean) * (x - bmean)).sum::<f64>() / n;
            let total = self.count + n;
            let delta = bmean - self.mean[k];
            let m2 = self.var[k] * self.count + bvar * n + delta * delta * self.count * n / total;
            self.mean[k] += delta * n / total;
            self.var[k] = m2 / total;
        }
        self.count += n;
        Ok(())
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| ((x - m) / (v + 1e-8).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}
