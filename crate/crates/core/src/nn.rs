//! Dense two-layer multi-label classifier with hand-written backpropagation.
//!
//! `probs = sigmoid(W2 . relu(W1 . x + b1) + b2)`, trained with binary
//! cross-entropy averaged over classes (and over the batch for batched
//! calls). Probabilities are clamped to `[EPS, 1 - EPS]` before the logs;
//! the gradient is the exact derivative of that clamped loss, so it is zero
//! for outputs sitting in the clamped region.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, AtlError, Result};
use crate::rng;

pub const EPS: f64 = 1e-7;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_HIDDEN: usize = 1024;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative gradient errors.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `M . x + bias`
    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .zip(bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// `M^T . y`
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.data.chunks_exact(self.cols).zip(y) {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
        out
    }

    /// `M += alpha * a b^T`
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        for (row, &ai) in self.data.chunks_exact_mut(self.cols).zip(a) {
            let s = alpha * ai;
            if s == 0.0 {
                continue;
            }
            for (m, bj) in row.iter_mut().zip(b) {
                *m += s * bj;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl MlpParams {
    pub fn zeros(d_in: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, d_in),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(outputs, hidden),
            b2: vec![0.0; outputs],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w2.rows()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn slices(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("w1", self.w1.as_slice()),
            ("b1", &self.b1),
            ("w2", self.w2.as_slice()),
            ("b2", &self.b2),
        ]
    }

    pub fn slices_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [
            ("w1", self.w1.as_mut_slice()),
            ("b1", &mut self.b1),
            ("w2", self.w2.as_mut_slice()),
            ("b2", &mut self.b2),
        ]
    }

    /// Shape consistency and finiteness; run after deserializing.
    pub fn validate(&self) -> Result<()> {
        check_len("w1 data", self.w1.rows * self.w1.cols, self.w1.data.len())?;
        check_len("w2 data", self.w2.rows * self.w2.cols, self.w2.data.len())?;
        check_len("b1", self.hidden(), self.b1.len())?;
        check_len("w2 columns", self.hidden(), self.w2.cols())?;
        check_len("b2", self.outputs(), self.b2.len())?;
        for (name, s) in self.slices() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(AtlError::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, s) in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &MlpParams) {
        for ((_, dst), (_, src)) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(d_in: usize, hidden: usize, outputs: usize, seed: u64) -> MlpParams {
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let mut p = MlpParams::zeros(d_in, hidden, outputs);
    let a1 = (6.0 / (d_in + hidden) as f64).sqrt();
    for w in p.w1.as_mut_slice() {
        *w = rng.random_range(-a1..=a1);
    }
    let a2 = (6.0 / (hidden + outputs) as f64).sqrt();
    for w in p.w2.as_mut_slice() {
        *w = rng.random_range(-a2..=a2);
    }
    p
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn forward_cache(params: &MlpParams, x: &[f64]) -> Result<ForwardCache> {
    check_len("classifier input", params.input_dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AtlError::NonFinite("classifier input".into()));
    }
    let pre = params.w1.affine(x, &params.b1);
    let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let logits = params.w2.affine(&hidden, &params.b2);
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(ForwardCache {
        pre,
        hidden,
        logits,
        probs,
    })
}

/// Returns `(logits, probs)`.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = forward_cache(params, x)?;
    Ok((c.logits, c.probs))
}

fn check_target(target: &[f64]) -> Result<()> {
    if target.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(AtlError::Data("targets must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy over classes.
///
/// Targets are normally binary; soft targets in `[0, 1]` are accepted.
pub fn bce_loss(probs: &[f64], target: &[f64]) -> Result<f64> {
    check_len("bce target", probs.len(), target.len())?;
    check_target(target)?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Adds `scale * dL/dparams` for one example into `grads`; returns the loss.
pub fn accumulate_gradient(
    params: &MlpParams,
    x: &[f64],
    target: &[f64],
    scale: f64,
    grads: &mut MlpParams,
) -> Result<f64> {
    check_len("classifier target", params.outputs(), target.len())?;
    let cache = forward_cache(params, x)?;
    let loss = bce_loss(&cache.probs, target)?;
    let k = target.len() as f64;
    let dlogits: Vec<f64> = cache
        .probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p <= EPS || p >= 1.0 - EPS {
                0.0
            } else {
                scale * (p - t) / k
            }
        })
        .collect();
    grads.w2.add_outer(1.0, &dlogits, &cache.hidden);
    grads.b2.iter_mut().zip(&dlogits).for_each(|(g, d)| *g += d);
    let mut dpre = params.w2.transpose_mul(&dlogits);
    for (d, &z) in dpre.iter_mut().zip(&cache.pre) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    grads.w1.add_outer(1.0, &dpre, x);
    grads.b1.iter_mut().zip(&dpre).for_each(|(g, d)| *g += d);
    Ok(loss)
}

/// Gradient of `bce_loss(mlp_forward(x), target)` for a single example.
pub fn mlp_backward(params: &MlpParams, x: &[f64], target: &[f64]) -> Result<MlpParams> {
    let mut grads = MlpParams::zeros(params.input_dim(), params.hidden(), params.outputs());
    accumulate_gradient(params, x, target, 1.0, &mut grads)?;
    Ok(grads)
}

/// Mean loss and gradient over a batch.
pub fn batch_gradient(
    params: &MlpParams,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(f64, MlpParams)> {
    check_len("batch targets", inputs.len(), targets.len())?;
    let mut grads = MlpParams::zeros(params.input_dim(), params.hidden(), params.outputs());
    if inputs.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / inputs.len() as f64;
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        loss += accumulate_gradient(params, x, t, scale, &mut grads)?;
    }
    Ok((loss * scale, grads))
}

/// Mean loss over a batch (forward only).
pub fn batch_loss(params: &MlpParams, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_len("batch targets", inputs.len(), targets.len())?;
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let (_, probs) = mlp_forward(params, x)?;
        loss += bce_loss(&probs, t)?;
    }
    Ok(loss / inputs.len() as f64)
}

/// `params -= lr * grads`. Rejects non-finite gradients before touching params.
pub fn sgd_step(params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
    for (name, g) in grads.slices() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(AtlError::NonFinite(format!("gradient {name}")));
        }
    }
    check_len("gradient w1", params.w1.data.len(), grads.w1.data.len())?;
    check_len("gradient w2", params.w2.data.len(), grads.w2.data.len())?;
    check_len("gradient b1", params.b1.len(), grads.b1.len())?;
    check_len("gradient b2", params.b2.len(), grads.b2.len())?;
    if lr == 0.0 {
        return Ok(());
    }
    params.axpy(-lr, grads);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a ReLU kink lies inside the FD stencil.
    pub kinks_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub per_param: Vec<ParamError>,
}

impl GradReport {
    pub fn merge(reports: &[GradReport]) -> GradReport {
        let mut per_param: Vec<ParamError> = Vec::new();
        for r in reports {
            for p in &r.per_param {
                match per_param.iter_mut().find(|q| q.name == p.name) {
                    Some(q) => {
                        q.max_rel_error = q.max_rel_error.max(p.max_rel_error);
                        q.checked += p.checked;
                        q.kinks_skipped += p.kinks_skipped;
                    }
                    None => per_param.push(p.clone()),
                }
            }
        }
        GradReport {
            max_rel_error: per_param
                .iter()
                .map(|p| p.max_rel_error)
                .fold(0.0, f64::max),
            per_param,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `mlp_backward` with central finite differences on every parameter.
pub fn grad_check(params: &MlpParams, x: &[f64], target: &[f64]) -> Result<GradReport> {
    let analytic = mlp_backward(params, x, target)?;
    let base_pre = forward_cache(params, x)?.pre;
    let loss_at = |p: &MlpParams| -> Result<f64> {
        let (_, probs) = mlp_forward(p, x)?;
        bce_loss(&probs, target)
    };
    let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let d_in = params.input_dim();

    let mut probe = params.clone();
    let mut per_param = Vec::with_capacity(4);
    for (slot, (name, grad)) in analytic.slices().into_iter().enumerate() {
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut kinks = 0;
        for (i, &analytic_i) in grad.iter().enumerate() {
            // A W1/b1 perturbation moves one hidden pre-activation by at most
            // FD_STEP * max(|x|, 1); skip it if that can cross zero.
            let unit = match slot {
                0 => Some(i / d_in),
                1 => Some(i),
                _ => None,
            };
            if let Some(j) = unit {
                if base_pre[j].abs() <= 2.0 * FD_STEP * x_max.max(1.0) {
                    kinks += 1;
                    continue;
                }
            }
            let orig = probe.slices()[slot].1[i];
            probe.slices_mut()[slot].1[i] = orig + FD_STEP;
            let up = loss_at(&probe)?;
            probe.slices_mut()[slot].1[i] = orig - FD_STEP;
            let down = loss_at(&probe)?;
            probe.slices_mut()[slot].1[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic_i, numeric));
            checked += 1;
        }
        per_param.push(ParamError {
            name: name.to_string(),
            max_rel_error: worst,
            checked,
            kinks_skipped: kinks,
        });
    }
    Ok(GradReport {
        max_rel_error: per_param
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max),
        per_param,
    })
}
