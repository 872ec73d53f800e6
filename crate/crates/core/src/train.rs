//! Training for the unrolled network: squared-Frobenius loss, full
//! reverse-mode differentiation through the conjugate-gradient
//! data-consistency blocks, Adam updates, and the epoch loop.
//!
//! The CG block chi_{k+1} = (M + lambda I)^{-1} (c + lambda Z_k) has
//! Jacobians d chi/d Z = lambda (M + lambda I)^{-1} and
//! d chi/d lambda = (M + lambda I)^{-1} (Z_k - chi_{k+1}); both are applied
//! with one extra CG solve per unrolled iteration. lambda = exp(rho) is
//! trained through rho, so d L/d rho = lambda * d L/d lambda.

use crate::error::{Error, Result};
use crate::forward::ScatteredData;
use crate::linop::{cg_solve_spd, BornOperator};
use crate::lmn::{denoiser_backward, lmn_unroll, DenoiserGradients, LmnModel};
use crate::scene::{derive_seed, ContrastMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// CG tolerance for the backward (gradient) solves; tighter than the
/// forward pass so gradient checks are not tolerance-limited.
pub const BACKWARD_CG_TOL: f64 = 1e-10;

const BACKWARD_CG_MAX_ITER: usize = 4000;

/// One training/evaluation sample: a contrast label on the inversion grid
/// and the matching scattered-field measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: ContrastMap,
    pub data: ScatteredData,
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.eps > 0.0) {
            return Err(Error::argument("learning rate and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::argument("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Gradients for every trainable quantity of an `LmnModel`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub weights: DenoiserGradients,
    pub rho: f64,
}

impl GradientBundle {
    pub fn zeros_like(model: &LmnModel) -> Self {
        GradientBundle {
            weights: DenoiserGradients::zeros_like(&model.weights),
            rho: 0.0,
        }
    }

    /// Flat layout matching `model_params_flat`: weights then rho.
    pub fn flatten(&self, use_bn: bool) -> Vec<f64> {
        let mut out = self.weights.flatten(use_bn);
        out.push(self.rho);
        out
    }
}

/// Flatten all trainable parameters (denoiser weights, then rho).
pub fn model_params_flat(model: &LmnModel) -> Vec<f64> {
    let mut out = model.weights.flatten();
    out.push(model.rho);
    out
}

/// Inverse of `model_params_flat`.
pub fn set_model_params(model: &mut LmnModel, flat: &[f64]) -> Result<()> {
    if flat.len() != model.weights.param_count() + 1 {
        return Err(Error::argument("parameter vector length mismatch"));
    }
    model.weights.set_flat(&flat[..flat.len() - 1])?;
    model.rho = flat[flat.len() - 1];
    Ok(())
}

/// Sum of squared Frobenius norms of the per-sample errors.
pub fn loss(chi_batch: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    if chi_batch.len() != labels.len() {
        return Err(Error::argument("batch size mismatch"));
    }
    let mut total = 0.0;
    for (chi, label) in chi_batch.iter().zip(labels) {
        if chi.len() != label.len() {
            return Err(Error::argument("image shape mismatch"));
        }
        total += chi
            .iter()
            .zip(label)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total)
}

/// Forward + full reverse sweep for one sample. Running BN statistics in
/// the model are updated as a side effect of the training-mode forward.
pub fn backprop_unrolled(
    model: &mut LmnModel,
    a: &BornOperator,
    data: &ScatteredData,
    label: &ContrastMap,
) -> Result<(f64, GradientBundle)> {
    if label.grid != *a.grid() {
        return Err(Error::argument("label is not on the operator grid"));
    }
    let trace = lmn_unroll(model, a, data, true)?;
    for cache in &trace.caches {
        model.weights.update_running_stats(cache);
    }
    let k = model.unroll_depth;
    let n = a.grid().n();
    let chi_k = &trace.states[k];
    let loss_value: f64 = chi_k
        .iter()
        .zip(&label.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    // Seed gradient dL/d chi_K.
    let mut g: Vec<f64> = chi_k
        .iter()
        .zip(&label.values)
        .map(|(a, b)| 2.0 * (a - b))
        .collect();
    let lambda = model.lambda();
    let mut grads = GradientBundle::zeros_like(model);
    let mut d_lambda = 0.0;
    for step in (0..k).rev() {
        // s = (M + lambda I)^{-1} g, shared by the Z and lambda gradients.
        let (s, report) = cg_solve_spd(a, lambda, &g, BACKWARD_CG_TOL, BACKWARD_CG_MAX_ITER)
            .map_err(|e| Error::numeric(format!("backward CG at iteration {step}: {e}")))?;
        if !report.converged {
            return Err(Error::Solver {
                residual: report.final_residual,
                iterations: report.iterations,
                context: format!("backward CG stalled at unroll iteration {step}"),
            });
        }
        for (si, (z, x)) in s
            .iter()
            .zip(trace.denoised[step].iter().zip(&trace.states[step + 1]))
        {
            d_lambda += si * (z - x);
        }
        let upstream: Vec<f64> = s.iter().map(|v| lambda * v).collect();
        let (d_chi, gw) = denoiser_backward(&model.weights, &trace.caches[step], &upstream)?;
        let _ = n;
        grads.weights.add(&gw);
        g = d_chi;
    }
    grads.rho = lambda * d_lambda;
    Ok((loss_value, grads))
}

/// Adam first/second-moment state over the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }
}

/// Standard Adam with bias correction, applied in place to `params`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::argument("adam_step: shape mismatch"));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Set the model's input scale so the 95th-percentile magnitude of the
/// adjoint-based initial iterates over the given samples is 1.
pub fn calibrate_input_scale(
    model: &mut LmnModel,
    a: &BornOperator,
    samples: &[Sample],
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::argument("cannot calibrate on an empty dataset"));
    }
    let mut mags = Vec::new();
    for s in samples {
        let chi0 = a.adjoint(&s.data.values.data)?;
        mags.extend(chi0.iter().map(|v| v.abs()));
    }
    mags.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let idx = ((mags.len() as f64) * 0.95).floor() as usize;
    let p95 = mags[idx.min(mags.len() - 1)];
    if p95 <= 0.0 {
        return Err(Error::numeric("calibration data is identically zero"));
    }
    model.input_scale = 1.0 / p95;
    Ok(())
}

/// Epoch loop: seeded shuffle, per-batch gradient accumulation in sample
/// order, one Adam step per batch. Returns the per-epoch mean loss
/// history. `checkpoint` is invoked after each epoch at the configured
/// cadence. A model with the default input scale of 1 is calibrated on the
/// dataset first.
pub fn train(
    model: &mut LmnModel,
    a: &BornOperator,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut checkpoint: impl FnMut(usize, &LmnModel, &AdamState) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::argument("training dataset is empty"));
    }
    for s in samples {
        if s.label.grid != *a.grid() {
            return Err(Error::argument("sample label is not on the operator grid"));
        }
        if s.data.values.rows != a.receivers() || s.data.values.cols != a.incidences() {
            return Err(Error::argument("sample data does not match the operator"));
        }
    }
    if model.input_scale == 1.0 {
        calibrate_input_scale(model, a, samples)?;
    }
    let mut params = model_params_flat(model);
    let mut state = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut total = vec![0.0f64; params.len()];
            for &idx in batch {
                let s = &samples[idx];
                let (l, bundle) = backprop_unrolled(model, a, &s.data, &s.label)?;
                epoch_loss += l;
                for (t, g) in total.iter_mut().zip(bundle.flatten(model.weights.use_bn)) {
                    *t += g;
                }
            }
            params = model_params_flat(model);
            adam_step(&mut params, &total, &mut state, cfg)?;
            set_model_params(model, &params)?;
        }
        history.push(epoch_loss / samples.len() as f64);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoint(epoch, model, &state)?;
        }
    }
    Ok(history)
}

/// Maximum discrepancy between analytic and central-finite-difference
/// gradients over all parameters and rho, relative to the largest analytic
/// gradient magnitude. Step 1e-4.
pub fn grad_check(
    model: &LmnModel,
    a: &BornOperator,
    data: &ScatteredData,
    label: &ContrastMap,
) -> Result<f64> {
    let mut work = model.clone();
    let (_, analytic) = backprop_unrolled(&mut work, a, data, label)?;
    let flat_g = analytic.flatten(model.weights.use_bn);
    let g_scale = flat_g.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
    let base = model_params_flat(model);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let eval = |params: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        set_model_params(&mut m, params)?;
        let trace = lmn_unroll(&m, a, data, true)?;
        Ok(trace
            .states
            .last()
            .unwrap()
            .iter()
            .zip(&label.values)
            .map(|(x, t)| (x - t) * (x - t))
            .sum())
    };
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        let lp = eval(&p)?;
        p[i] -= 2.0 * h;
        let lm = eval(&p)?;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (flat_g[i] - fd).abs() / g_scale;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
