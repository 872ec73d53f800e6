//! Metrics, noise-robustness sweeps, and deterministic map rendering.

use crate::baselines::{ba_tikhonov, ba_tsvd};
use crate::error::{Error, Result};
use crate::forward::add_noise;
use crate::linop::BornOperator;
use crate::lmn::{lmn_infer, LmnModel};
use crate::scene::{derive_seed, ContrastMap};
use crate::train::Sample;
use std::time::Instant;

/// Relative Frobenius error of a reconstructed permittivity image.
pub fn relative_error(eps_rec: &[f64], eps_true: &[f64]) -> Result<f64> {
    if eps_rec.len() != eps_true.len() {
        return Err(Error::argument("relative_error: shape mismatch"));
    }
    let den: f64 = eps_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::argument("relative_error: reference image is all zero"));
    }
    let num: f64 = eps_rec
        .iter()
        .zip(eps_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Relative permittivity error of a contrast reconstruction (eps = chi + 1).
pub fn relative_error_contrast(rec: &ContrastMap, truth: &ContrastMap) -> Result<f64> {
    if rec.grid != truth.grid {
        return Err(Error::argument("relative_error: grids differ"));
    }
    let eps_rec: Vec<f64> = rec.values.iter().map(|v| v + 1.0).collect();
    let eps_true: Vec<f64> = truth.values.iter().map(|v| v + 1.0).collect();
    relative_error(&eps_rec, &eps_true)
}

/// Mean relative error over a batch of (reconstruction, truth) pairs.
pub fn mean_relative_error(pairs: &[(ContrastMap, ContrastMap)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::argument("mean_relative_error: empty batch"));
    }
    let mut total = 0.0;
    for (rec, truth) in pairs {
        total += relative_error_contrast(rec, truth)?;
    }
    Ok(total / pairs.len() as f64)
}

/// A reconstruction method evaluated by `noise_sweep`.
pub enum Method<'a> {
    Tikhonov { lambda: f64 },
    Tsvd { rank: usize },
    Lmn { model: &'a LmnModel },
    /// Passes the label through; used to validate the sweep harness.
    Oracle,
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Tikhonov { .. } => "ba_tikhonov",
            Method::Tsvd { .. } => "ba_tsvd",
            Method::Lmn { .. } => "lmn",
            Method::Oracle => "oracle",
        }
    }

    fn reconstruct(&self, a: &BornOperator, sample: &Sample, noisy: &crate::forward::ScatteredData) -> Result<ContrastMap> {
        match self {
            Method::Tikhonov { lambda } => ba_tikhonov(a, noisy, *lambda),
            Method::Tsvd { rank } => ba_tsvd(a, noisy, *rank),
            Method::Lmn { model } => Ok(lmn_infer(model, a, noisy, true)?.0),
            Method::Oracle => Ok(sample.label.clone()),
        }
    }
}

/// One sweep cell: a method evaluated at one noise level over M_t samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub noise_level: f64,
    pub mean_re: f64,
    pub mean_time_s: f64,
    pub m_t: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Evaluate every method at every noise level on the test set. Noise is
/// regenerated per (sample, level) from seeds derived from `master_seed`,
/// so the sweep is reproducible; wall time covers reconstruction only.
pub fn noise_sweep(
    methods: &[Method],
    a: &BornOperator,
    levels: &[f64],
    samples: &[Sample],
    master_seed: u64,
) -> Result<SweepReport> {
    if samples.is_empty() {
        return Err(Error::argument("noise_sweep: empty test set"));
    }
    if levels.is_empty() {
        return Err(Error::argument("noise_sweep: no noise levels"));
    }
    let mut rows = Vec::new();
    for method in methods {
        for (li, &level) in levels.iter().enumerate() {
            let mut total_re = 0.0;
            let mut total_time = 0.0;
            for (si, sample) in samples.iter().enumerate() {
                let seed = derive_seed(derive_seed(master_seed, li as u64), si as u64);
                let noisy = add_noise(&sample.data, level, seed)?;
                let start = Instant::now();
                let rec = method.reconstruct(a, sample, &noisy)?;
                total_time += start.elapsed().as_secs_f64();
                total_re += relative_error_contrast(&rec, &sample.label)?;
            }
            rows.push(SweepRow {
                method: method.name().to_string(),
                noise_level: level,
                mean_re: total_re / samples.len() as f64,
                mean_time_s: total_time / samples.len() as f64,
                m_t: samples.len(),
            });
        }
    }
    Ok(SweepReport { rows })
}

/// Serialize a report as CSV. With `include_timing` false the timing
/// column is written as 0, which keeps the bytes reproducible across runs.
pub fn sweep_to_csv(report: &SweepReport, include_timing: bool) -> String {
    let mut out = String::from("method,noise_level,mean_re,mean_time_s,m_t\n");
    for r in &report.rows {
        let t = if include_timing { r.mean_time_s } else { 0.0 };
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.method, r.noise_level, r.mean_re, t, r.m_t
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

/// Anchor colors of the rendering palette (dark blue -> green -> yellow).
const PALETTE_ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn palette_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let x = t * (PALETTE_ANCHORS.len() - 1) as f64;
    let i = (x.floor() as usize).min(PALETTE_ANCHORS.len() - 2);
    let f = x - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let v = PALETTE_ANCHORS[i][c] * (1.0 - f) + PALETTE_ANCHORS[i + 1][c] * f;
        rgb[c] = v.round() as u8;
    }
    rgb
}

/// Render a square image as a color-mapped 8-bit PNG. Values at `lo` map
/// to the first palette entry and values at `hi` to the last; the scale
/// bounds are recorded in tEXt metadata. Output bytes are deterministic.
pub fn render_map(values: &[f64], n: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if values.len() != n * n || n == 0 {
        return Err(Error::argument("render_map: image is not n x n"));
    }
    if values.iter().any(|v| !v.is_finite()) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::argument("render_map: values and bounds must be finite"));
    }
    let span = hi - lo;
    let mut pixels = Vec::with_capacity(3 * n * n);
    for &v in values {
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        pixels.extend_from_slice(&palette_color(t));
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, n as u32, n as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder
            .add_text_chunk("scale_min".to_string(), format!("{lo}"))
            .map_err(|e| Error::format(format!("png metadata: {e}")))?;
        encoder
            .add_text_chunk("scale_max".to_string(), format!("{hi}"))
            .map_err(|e| Error::format(format!("png metadata: {e}")))?;
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format(format!("png header: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::format(format!("png data: {e}")))?;
    }
    Ok(bytes)
}
