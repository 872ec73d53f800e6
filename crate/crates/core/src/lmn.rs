//! Residual convolutional denoiser and the unrolled inference loop that
//! alternates denoising with conjugate-gradient data-consistency solves.
//!
//! The denoiser is DnCNN-style: V_w(x) = x - N_w(x) where N_w is a stack of
//! D zero-padded 3x3 convolutions (first layer Conv+ReLU, middle layers
//! Conv+BN+ReLU, last layer Conv). All arithmetic is 64-bit and every
//! forward quantity needed by the hand-written backward pass is cached.

use crate::error::{Error, Result};
use crate::forward::ScatteredData;
use crate::linop::{cg_solve_normal, BornOperator};
use crate::scene::ContrastMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Numerical floor inside the batch-normalization variance square root.
pub const BN_EPS: f64 = 1e-5;

/// Momentum for the running batch-normalization statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// CG tolerance for the data-consistency solves of the unrolled loop.
pub const LMN_CG_TOL: f64 = 1e-10;

/// CG iteration cap for the data-consistency solves.
pub const LMN_CG_MAX_ITER: usize = 2000;

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

/// One zero-padded 3x3 convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    /// Kernel values, laid out [c_out][c_in][ky][kx].
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        ConvLayer {
            c_in,
            c_out,
            kernel: vec![0.0; c_out * c_in * 9],
            bias: vec![0.0; c_out],
        }
    }
}

/// Batch-normalization parameters and running statistics for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnLayer {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnLayer {
    pub fn identity(channels: usize) -> Self {
        BnLayer {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// The full D-layer denoiser parameter set; middle layers carry BN.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserWeights {
    pub layers: Vec<ConvLayer>,
    pub bn: Vec<BnLayer>,
    pub use_bn: bool,
}

impl DenoiserWeights {
    /// All-zero network: V_w is exactly the identity.
    pub fn zeros(depth: usize, channels: usize, use_bn: bool) -> Result<Self> {
        if depth < 2 {
            return Err(Error::argument("denoiser depth must be at least 2"));
        }
        let mut layers = Vec::with_capacity(depth);
        layers.push(ConvLayer::zeros(1, channels));
        for _ in 0..depth - 2 {
            layers.push(ConvLayer::zeros(channels, channels));
        }
        layers.push(ConvLayer::zeros(channels, 1));
        let bn = (0..depth - 2).map(|_| BnLayer::identity(channels)).collect();
        Ok(DenoiserWeights { layers, bn, use_bn })
    }

    /// He-style random init: kernel entries ~ N(0, 2/(9 c_in)).
    pub fn random(depth: usize, channels: usize, use_bn: bool, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(depth, channels, use_bn)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut w.layers {
            let sd = (2.0 / (9.0 * layer.c_in as f64)).sqrt();
            for k in layer.kernel.iter_mut() {
                *k = sd * randn(&mut rng);
            }
        }
        Ok(w)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Visit every trainable parameter in a fixed order.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in &self.layers {
            n += l.kernel.len() + l.bias.len();
        }
        if self.use_bn {
            for b in &self.bn {
                n += b.scale.len() + b.shift.len();
            }
        }
        n
    }

    /// Flatten trainable parameters (kernels, biases, then BN scale/shift)
    /// into one vector; order matches `set_flat` and gradient flattening.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.bias);
        }
        if self.use_bn {
            for b in &self.bn {
                out.extend_from_slice(&b.scale);
                out.extend_from_slice(&b.shift);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::argument("parameter vector length mismatch"));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let (nk, nb) = (l.kernel.len(), l.bias.len());
            l.kernel.copy_from_slice(&flat[i..i + nk]);
            i += nk;
            l.bias.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        if self.use_bn {
            for b in &mut self.bn {
                let nc = b.scale.len();
                b.scale.copy_from_slice(&flat[i..i + nc]);
                i += nc;
                b.shift.copy_from_slice(&flat[i..i + nc]);
                i += nc;
            }
        }
        Ok(())
    }

    /// Fold the batch statistics recorded in `cache` into the running
    /// statistics (training-time bookkeeping, kept out of the pure forward).
    pub fn update_running_stats(&mut self, cache: &ActivationCache) {
        if !self.use_bn {
            return;
        }
        for (bn, layer) in self.bn.iter_mut().zip(cache.layers[1..].iter()) {
            if let (Some(mean), Some(var)) = (&layer.batch_mean, &layer.batch_var) {
                for c in 0..bn.scale.len() {
                    bn.running_mean[c] = (1.0 - BN_MOMENTUM) * bn.running_mean[c]
                        + BN_MOMENTUM * mean[c];
                    bn.running_var[c] =
                        (1.0 - BN_MOMENTUM) * bn.running_var[c] + BN_MOMENTUM * var[c];
                }
            }
        }
    }
}

/// Gradients mirroring `DenoiserWeights`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserGradients {
    pub kernel: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub bn_scale: Vec<Vec<f64>>,
    pub bn_shift: Vec<Vec<f64>>,
}

impl DenoiserGradients {
    pub fn zeros_like(w: &DenoiserWeights) -> Self {
        DenoiserGradients {
            kernel: w.layers.iter().map(|l| vec![0.0; l.kernel.len()]).collect(),
            bias: w.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            bn_scale: w.bn.iter().map(|b| vec![0.0; b.scale.len()]).collect(),
            bn_shift: w.bn.iter().map(|b| vec![0.0; b.shift.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &DenoiserGradients) {
        let pairs = [
            (&mut self.kernel, &other.kernel),
            (&mut self.bias, &other.bias),
            (&mut self.bn_scale, &other.bn_scale),
            (&mut self.bn_shift, &other.bn_shift),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                for (a, b) in d.iter_mut().zip(s) {
                    *a += b;
                }
            }
        }
    }

    /// Flatten in the same order as `DenoiserWeights::flatten` (BN entries
    /// included only when the weights use BN).
    pub fn flatten(&self, use_bn: bool) -> Vec<f64> {
        let mut out = Vec::new();
        for (k, b) in self.kernel.iter().zip(&self.bias) {
            out.extend_from_slice(k);
            out.extend_from_slice(b);
        }
        if use_bn {
            for (s, h) in self.bn_scale.iter().zip(&self.bn_shift) {
                out.extend_from_slice(s);
                out.extend_from_slice(h);
            }
        }
        out
    }
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms in (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// convolution plumbing
// ---------------------------------------------------------------------------

/// Gather 3x3 zero-padded patches: output is (c_in*9) x (n*n), row-major.
fn im2col(input: &[f64], c_in: usize, n: usize) -> Vec<f64> {
    let hw = n * n;
    let mut cols = vec![0.0f64; c_in * 9 * hw];
    for ci in 0..c_in {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                for y in 0..n as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= n as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((n as isize - dx).min(n as isize)) as usize;
                    let out_base = row + y as usize * n;
                    let in_base = sy as usize * n;
                    for x in x_lo..x_hi {
                        cols[out_base + x] = plane[in_base + (x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the im2col adjoint: cols is (c_in*9) x (n*n).
fn col2im(cols: &[f64], c_in: usize, n: usize) -> Vec<f64> {
    let hw = n * n;
    let mut input = vec![0.0f64; c_in * hw];
    for ci in 0..c_in {
        let plane = &mut input[ci * hw..(ci + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                for y in 0..n as isize {
                    let sy = y + dy;
                    if sy < 0 || sy >= n as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((n as isize - dx).min(n as isize)) as usize;
                    let col_base = row + y as usize * n;
                    let in_base = sy as usize * n;
                    for x in x_lo..x_hi {
                        plane[in_base + (x as isize + dx) as usize] += cols[col_base + x];
                    }
                }
            }
        }
    }
    input
}

#[allow(clippy::too_many_arguments)] // mirrors the BLAS gemm parameter list
fn gemm_rm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    transpose_a: bool,
    b: &[f64],
    transpose_b: bool,
    c: &mut [f64],
) {
    // Row-major C(m x n) = A * B with optional transposes of the stored
    // operands (A stored k x m when transposed, B stored n x k).
    let (rsa, csa) = if transpose_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

/// Per-layer forward record kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    /// Activations entering the convolution, [c_in][n*n].
    pub input: Vec<f64>,
    /// Convolution output plus bias, before BN/ReLU, [c_out][n*n].
    pub pre: Vec<f64>,
    /// Normalized activations (BN layers in training mode).
    pub xhat: Option<Vec<f64>>,
    pub inv_std: Option<Vec<f64>>,
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
    /// Layer output after BN and ReLU (raw `pre` for the last layer).
    pub post: Vec<f64>,
}

/// Everything the backward pass needs from one denoiser application.
#[derive(Clone, Debug)]
pub struct ActivationCache {
    pub n: usize,
    pub depth: usize,
    pub use_bn: bool,
    pub training: bool,
    pub layers: Vec<LayerCache>,
}

/// Apply V_w(x) = x - N_w(x) to one n x n image (flattened row-major).
/// Training mode uses per-call batch statistics in BN and records them in
/// the cache; inference mode uses the stored running statistics.
pub fn denoiser_forward(
    w: &DenoiserWeights,
    chi: &[f64],
    n: usize,
    training: bool,
) -> Result<(Vec<f64>, ActivationCache)> {
    let hw = n * n;
    if chi.len() != hw {
        return Err(Error::argument(format!(
            "denoiser expects a square {n}x{n} image, got {} values",
            chi.len()
        )));
    }
    let depth = w.depth();
    let mut layers = Vec::with_capacity(depth);
    let mut act = chi.to_vec();
    for (li, layer) in w.layers.iter().enumerate() {
        if act.len() != layer.c_in * hw {
            return Err(Error::argument("channel count mismatch between layers"));
        }
        let cols = im2col(&act, layer.c_in, n);
        let mut pre = vec![0.0f64; layer.c_out * hw];
        gemm_rm(layer.c_out, layer.c_in * 9, hw, &layer.kernel, false, &cols, false, &mut pre);
        for co in 0..layer.c_out {
            let b = layer.bias[co];
            for v in pre[co * hw..(co + 1) * hw].iter_mut() {
                *v += b;
            }
        }
        let is_last = li + 1 == depth;
        let is_mid = li > 0 && !is_last;

        let mut xhat = None;
        let mut inv_std = None;
        let mut batch_mean = None;
        let mut batch_var = None;
        let mut out = pre.clone();
        if is_mid && w.use_bn {
            let bn = &w.bn[li - 1];
            let m = hw as f64;
            let mut xh = vec![0.0f64; layer.c_out * hw];
            let mut istd = vec![0.0f64; layer.c_out];
            let mut means = vec![0.0f64; layer.c_out];
            let mut vars = vec![0.0f64; layer.c_out];
            for c in 0..layer.c_out {
                let slice = &pre[c * hw..(c + 1) * hw];
                let (mean, var) = if training {
                    let mean = slice.iter().sum::<f64>() / m;
                    let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                    (mean, var)
                } else {
                    (bn.running_mean[c], bn.running_var[c])
                };
                let is = 1.0 / (var + BN_EPS).sqrt();
                istd[c] = is;
                means[c] = mean;
                vars[c] = var;
                let (g, s) = (bn.scale[c], bn.shift[c]);
                for (xh_v, (&x, o)) in xh[c * hw..(c + 1) * hw]
                    .iter_mut()
                    .zip(slice.iter().zip(out[c * hw..(c + 1) * hw].iter_mut()))
                {
                    let z = (x - mean) * is;
                    *xh_v = z;
                    *o = g * z + s;
                }
            }
            xhat = Some(xh);
            inv_std = Some(istd);
            if training {
                batch_mean = Some(means);
                batch_var = Some(vars);
            }
        }
        if !is_last {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        layers.push(LayerCache {
            input: act,
            pre,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            post: out.clone(),
        });
        act = out;
    }
    let residual: Vec<f64> = chi.iter().zip(&act).map(|(x, nwx)| x - nwx).collect();
    Ok((
        residual,
        ActivationCache {
            n,
            depth,
            use_bn: w.use_bn,
            training,
            layers,
        },
    ))
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse-mode pass through V_w given `upstream` = dL/d(output).
/// Returns (dL/d(input image), parameter gradients).
pub fn denoiser_backward(
    w: &DenoiserWeights,
    cache: &ActivationCache,
    upstream: &[f64],
) -> Result<(Vec<f64>, DenoiserGradients)> {
    let n = cache.n;
    let hw = n * n;
    if upstream.len() != hw {
        return Err(Error::argument("upstream gradient shape mismatch"));
    }
    if cache.depth != w.depth() || cache.use_bn != w.use_bn {
        return Err(Error::argument("activation cache does not match the weights"));
    }
    let mut grads = DenoiserGradients::zeros_like(w);
    // V = x - N(x): dN = -upstream, and the skip path contributes upstream
    // directly to the input gradient.
    let mut d_out: Vec<f64> = upstream.iter().map(|g| -g).collect();
    for li in (0..w.depth()).rev() {
        let layer = &w.layers[li];
        let lc = &cache.layers[li];
        let is_last = li + 1 == w.depth();
        let is_mid = li > 0 && !is_last;
        if !is_last {
            // ReLU: zero gradient where the output was clamped.
            for (g, &p) in d_out.iter_mut().zip(&lc.post) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        if is_mid && w.use_bn {
            let bn = &w.bn[li - 1];
            let xh = lc
                .xhat
                .as_ref()
                .ok_or_else(|| Error::argument("cache missing BN statistics"))?;
            let istd = lc.inv_std.as_ref().unwrap();
            let m = hw as f64;
            let mut d_pre = vec![0.0f64; d_out.len()];
            for c in 0..layer.c_out {
                let dy = &d_out[c * hw..(c + 1) * hw];
                let xhc = &xh[c * hw..(c + 1) * hw];
                let sum_dy: f64 = dy.iter().sum();
                let sum_dy_xh: f64 = dy.iter().zip(xhc).map(|(a, b)| a * b).sum();
                grads.bn_shift[li - 1][c] += sum_dy;
                grads.bn_scale[li - 1][c] += sum_dy_xh;
                let g_is = bn.scale[c] * istd[c];
                if cache.training {
                    for ((d, &dyv), &xhv) in d_pre[c * hw..(c + 1) * hw]
                        .iter_mut()
                        .zip(dy)
                        .zip(xhc)
                    {
                        *d = g_is * (dyv - sum_dy / m - xhv * sum_dy_xh / m);
                    }
                } else {
                    for (d, &dyv) in d_pre[c * hw..(c + 1) * hw].iter_mut().zip(dy) {
                        *d = g_is * dyv;
                    }
                }
            }
            d_out = d_pre;
        }
        for c in 0..layer.c_out {
            grads.bias[li][c] += d_out[c * hw..(c + 1) * hw].iter().sum::<f64>();
        }
        // dKernel = dOut (c_out x hw) * im2col(input)^T (hw x c_in*9)
        let cols = im2col(&lc.input, layer.c_in, n);
        let k_dim = layer.c_in * 9;
        let mut dk = vec![0.0f64; layer.c_out * k_dim];
        gemm_rm(layer.c_out, hw, k_dim, &d_out, false, &cols, true, &mut dk);
        for (g, d) in grads.kernel[li].iter_mut().zip(&dk) {
            *g += d;
        }
        // dInput via the im2col adjoint of Kernel^T * dOut.
        let mut d_cols = vec![0.0f64; k_dim * hw];
        gemm_rm(k_dim, layer.c_out, hw, &layer.kernel, true, &d_out, false, &mut d_cols);
        d_out = col2im(&d_cols, layer.c_in, n);
    }
    // Add the skip-path contribution.
    for (d, &u) in d_out.iter_mut().zip(upstream) {
        *d += u;
    }
    Ok((d_out, grads))
}

// ---------------------------------------------------------------------------
// unrolled model
// ---------------------------------------------------------------------------

/// The unrolled network: shared denoiser weights, trainable regularization
/// strength lambda = exp(rho), unroll depth K, and the fixed input scale
/// applied to the adjoint-based initial guess.
#[derive(Clone, Debug, PartialEq)]
pub struct LmnModel {
    pub weights: DenoiserWeights,
    pub rho: f64,
    pub unroll_depth: usize,
    pub input_scale: f64,
}

impl LmnModel {
    pub fn new(depth: usize, channels: usize, use_bn: bool, unroll_depth: usize, seed: u64) -> Result<Self> {
        if unroll_depth == 0 {
            return Err(Error::argument("unroll depth must be positive"));
        }
        Ok(LmnModel {
            weights: DenoiserWeights::random(depth, channels, use_bn, seed)?,
            rho: 0.05f64.ln(),
            unroll_depth,
            input_scale: 1.0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.rho.exp()
    }
}

/// All intermediate states of one unrolled pass: `states` holds the K+1
/// iterates chi_0..chi_K, `denoised` the K denoiser outputs Z_0..Z_{K-1},
/// and `caches` the matching activation caches.
#[derive(Clone, Debug)]
pub struct UnrollTrace {
    pub states: Vec<Vec<f64>>,
    pub denoised: Vec<Vec<f64>>,
    pub caches: Vec<ActivationCache>,
}

/// Run the unrolled loop and keep everything the backward pass needs.
pub fn lmn_unroll(
    model: &LmnModel,
    a: &BornOperator,
    data: &ScatteredData,
    training: bool,
) -> Result<UnrollTrace> {
    let grid = a.grid();
    let n = grid.n();
    if data.values.rows != a.receivers() || data.values.cols != a.incidences() {
        return Err(Error::argument("scattered data shape does not match the operator"));
    }
    let y = &data.values.data;
    let lambda = model.lambda();
    let mut chi: Vec<f64> = a
        .adjoint(y)?
        .into_iter()
        .map(|v| v * model.input_scale)
        .collect();
    let mut states = Vec::with_capacity(model.unroll_depth + 1);
    let mut denoised = Vec::with_capacity(model.unroll_depth);
    let mut caches = Vec::with_capacity(model.unroll_depth);
    states.push(chi.clone());
    for step in 0..model.unroll_depth {
        let (z, cache) = denoiser_forward(&model.weights, &chi, n, training)?;
        let (next, report) =
            cg_solve_normal(a, lambda, y, &z, LMN_CG_TOL, LMN_CG_MAX_ITER).map_err(|e| {
                Error::numeric(format!("data-consistency solve at iteration {step}: {e}"))
            })?;
        if !report.converged {
            return Err(Error::Solver {
                residual: report.final_residual,
                iterations: report.iterations,
                context: format!("data-consistency CG stalled at unroll iteration {step}"),
            });
        }
        denoised.push(z);
        caches.push(cache);
        chi = next;
        states.push(chi.clone());
    }
    Ok(UnrollTrace {
        states,
        denoised,
        caches,
    })
}

/// Inference entry point: returns the final reconstruction (optionally
/// clamped to the physical range) and the K+1 iterate trace.
pub fn lmn_infer(
    model: &LmnModel,
    a: &BornOperator,
    data: &ScatteredData,
    project: bool,
) -> Result<(ContrastMap, Vec<Vec<f64>>)> {
    let trace = lmn_unroll(model, a, data, false)?;
    let mut chi = trace.states.last().unwrap().clone();
    if project {
        chi = crate::baselines::project_physical(&chi, crate::baselines::CHI_MAX_DEFAULT)?;
    }
    let map = ContrastMap::from_values(a.grid().clone(), chi)?;
    Ok((map, trace.states))
}
