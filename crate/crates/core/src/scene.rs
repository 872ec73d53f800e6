//! Grids, sensor rings, and scatterer generation: circles, the Austria
//! profile, and glyph-shaped objects, plus label preparation on the
//! inversion grid.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Side length in pixels of the glyph bitmaps (MNIST layout).
pub const GLYPH_SIZE: usize = 28;

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform square lattice of cell centers covering the DOI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    extent: f64,
    n: usize,
}

impl Grid {
    pub fn new(extent: f64, n: usize) -> Result<Self> {
        if !(extent > 0.0) {
            return Err(Error::argument(format!("grid extent must be > 0, got {extent}")));
        }
        if n == 0 {
            return Err(Error::argument("grid must have at least one cell per side"));
        }
        Ok(Grid { extent, n })
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of cells, n^2.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_size(&self) -> f64 {
        self.extent / self.n as f64
    }

    /// Center of cell (ix, iy); ix increases with x, iy with y.
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.cell_size();
        (
            -0.5 * self.extent + (ix as f64 + 0.5) * h,
            -0.5 * self.extent + (iy as f64 + 0.5) * h,
        )
    }

    /// Linear index of cell (ix, iy): iy * n + ix.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    /// Cell centers in linear-index order.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for iy in 0..self.n {
            for ix in 0..self.n {
                out.push(self.center(ix, iy));
            }
        }
        out
    }
}

pub fn make_grid(extent: f64, n: usize) -> Result<Grid> {
    Grid::new(extent, n)
}

// ---------------------------------------------------------------------------
// SensorRing
// ---------------------------------------------------------------------------

/// Sensors equally spaced on a circle centered at the origin, first sensor
/// at angle zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorRing {
    count: usize,
    diameter: f64,
}

impl SensorRing {
    pub fn new(count: usize, diameter: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::argument("sensor ring needs at least one sensor"));
        }
        if !(diameter > 0.0) {
            return Err(Error::argument(format!(
                "sensor ring diameter must be > 0, got {diameter}"
            )));
        }
        Ok(SensorRing { count, diameter })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn position(&self, q: usize) -> (f64, f64) {
        let angle = 2.0 * std::f64::consts::PI * q as f64 / self.count as f64;
        let r = 0.5 * self.diameter;
        (r * angle.cos(), r * angle.sin())
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        (0..self.count).map(|q| self.position(q)).collect()
    }
}

pub fn make_ring(count: usize, diameter: f64) -> Result<SensorRing> {
    SensorRing::new(count, diameter)
}

// ---------------------------------------------------------------------------
// ContrastMap
// ---------------------------------------------------------------------------

/// Real nonnegative contrast chi = eps_r - 1 on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastMap {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ContrastMap {
    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        ContrastMap { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::argument(format!(
                "contrast map needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("contrast map values must be finite"));
        }
        Ok(ContrastMap { grid, values })
    }

    /// Spatial mean of the contrast.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// Full physical configuration of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub frequency: f64,
    pub forward_grid: Grid,
    pub inversion_grid: Grid,
    pub tx_ring: SensorRing,
    pub rx_ring: SensorRing,
    pub noise_level: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0) {
            return Err(Error::argument("frequency must be positive"));
        }
        if self.forward_grid.n() <= self.inversion_grid.n() {
            return Err(Error::argument(
                "forward grid must be finer than the inversion grid (dual-grid protocol)",
            ));
        }
        if (self.forward_grid.extent() - self.inversion_grid.extent()).abs() > 1e-12 {
            return Err(Error::argument("forward and inversion grids must share the DOI extent"));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::argument("noise level must be >= 0"));
        }
        Ok(())
    }

    /// Free-space wavenumber, rad/m.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency / SPEED_OF_LIGHT
    }

    /// The 400 MHz, 2x2 m, 16-source / 32-receiver configuration with a
    /// 12 m transmitter ring and a 6 m receiver ring.
    pub fn reference(forward_n: usize, inversion_n: usize, seed: u64) -> Result<Scenario> {
        let s = Scenario {
            frequency: 400e6,
            forward_grid: Grid::new(2.0, forward_n)?,
            inversion_grid: Grid::new(2.0, inversion_n)?,
            tx_ring: SensorRing::new(16, 12.0)?,
            rx_ring: SensorRing::new(32, 6.0)?,
            noise_level: 0.0,
            seed,
        };
        s.validate()?;
        Ok(s)
    }
}

/// Deterministic per-stream seed derivation (splitmix64 over the master seed
/// and a stream index).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// shape rasterization
// ---------------------------------------------------------------------------

/// Disk with cell-center membership.
pub fn rasterize_circle(
    center: (f64, f64),
    radius: f64,
    eps_r: f64,
    grid: &Grid,
) -> Result<ContrastMap> {
    if !(radius > 0.0) {
        return Err(Error::argument(format!("circle radius must be > 0, got {radius}")));
    }
    if !(eps_r >= 1.0) {
        return Err(Error::argument(format!("relative permittivity must be >= 1, got {eps_r}")));
    }
    let chi = eps_r - 1.0;
    let mut map = ContrastMap::zeros(grid.clone());
    let r2 = radius * radius;
    for iy in 0..grid.n() {
        for ix in 0..grid.n() {
            let (x, y) = grid.center(ix, iy);
            let dx = x - center.0;
            let dy = y - center.1;
            if dx * dx + dy * dy < r2 {
                map.values[grid.index(ix, iy)] = chi;
            }
        }
    }
    Ok(map)
}

/// Annulus (ring) with cell-center membership.
pub fn rasterize_annulus(
    center: (f64, f64),
    outer: f64,
    inner: f64,
    eps_r: f64,
    grid: &Grid,
) -> Result<ContrastMap> {
    if !(outer > inner && inner >= 0.0) {
        return Err(Error::argument(format!(
            "annulus needs outer > inner >= 0, got outer {outer}, inner {inner}"
        )));
    }
    if !(eps_r >= 1.0) {
        return Err(Error::argument(format!("relative permittivity must be >= 1, got {eps_r}")));
    }
    let chi = eps_r - 1.0;
    let mut map = ContrastMap::zeros(grid.clone());
    for iy in 0..grid.n() {
        for ix in 0..grid.n() {
            let (x, y) = grid.center(ix, iy);
            let dx = x - center.0;
            let dy = y - center.1;
            let d2 = dx * dx + dy * dy;
            if d2 < outer * outer && d2 >= inner * inner {
                map.values[grid.index(ix, iy)] = chi;
            }
        }
    }
    Ok(map)
}

/// The classical Austria profile scaled to fit the 2x2 m DOI: two disks of
/// radius 0.2 m centered at (+-0.3, 0.6) m and an annulus with outer radius
/// 0.6 m / inner radius 0.3 m centered at (0, -0.2) m.
pub fn austria_profile(grid: &Grid, eps_r: f64) -> Result<ContrastMap> {
    if !(eps_r >= 1.0) {
        return Err(Error::argument(format!("relative permittivity must be >= 1, got {eps_r}")));
    }
    let mut map = rasterize_annulus((0.0, -0.2), 0.6, 0.3, eps_r, grid)?;
    for cx in [-0.3, 0.3] {
        let disk = rasterize_circle((cx, 0.6), 0.2, eps_r, grid)?;
        for (dst, src) in map.values.iter_mut().zip(&disk.values) {
            *dst = dst.max(*src);
        }
    }
    Ok(map)
}

/// Binarize a glyph bitmap at half its maximum intensity and nearest-neighbor
/// upsample it onto the grid with uniform contrast eps_r - 1 on the
/// foreground. Returns the map and a flag that is true when the bitmap was
/// entirely empty.
pub fn rasterize_glyph(bitmap: &[u8], eps_r: f64, grid: &Grid) -> Result<(ContrastMap, bool)> {
    if bitmap.len() != GLYPH_SIZE * GLYPH_SIZE {
        return Err(Error::argument(format!(
            "glyph bitmap must be {0}x{0}, got {1} bytes",
            GLYPH_SIZE,
            bitmap.len()
        )));
    }
    if !(1.5..=2.4).contains(&eps_r) {
        return Err(Error::argument(format!(
            "glyph relative permittivity must lie in [1.5, 2.4], got {eps_r}"
        )));
    }
    let max = *bitmap.iter().max().unwrap();
    if max == 0 {
        return Ok((ContrastMap::zeros(grid.clone()), true));
    }
    let threshold = max / 2;
    let chi = eps_r - 1.0;
    let n = grid.n();
    let mut map = ContrastMap::zeros(grid.clone());
    for iy in 0..n {
        for ix in 0..n {
            // bitmap row 0 is the top of the image (+y side of the DOI)
            let px = (ix * GLYPH_SIZE) / n;
            let py = ((n - 1 - iy) * GLYPH_SIZE) / n;
            if bitmap[py * GLYPH_SIZE + px] >= threshold.max(1) {
                map.values[grid.index(ix, iy)] = chi;
            }
        }
    }
    Ok((map, false))
}

/// Area-weighted resampling between grids that share the same extent.
pub fn resample_contrast(src: &ContrastMap, dst_grid: &Grid) -> Result<ContrastMap> {
    if (src.grid.extent() - dst_grid.extent()).abs() > 1e-12 {
        return Err(Error::argument(format!(
            "resample requires matching extents: {} vs {}",
            src.grid.extent(),
            dst_grid.extent()
        )));
    }
    if src.grid.n() == dst_grid.n() {
        return Ok(ContrastMap {
            grid: dst_grid.clone(),
            values: src.values.clone(),
        });
    }
    let hs = src.grid.cell_size();
    let hd = dst_grid.cell_size();
    let half = 0.5 * src.grid.extent();
    let ns = src.grid.n();
    let mut out = ContrastMap::zeros(dst_grid.clone());
    for iy in 0..dst_grid.n() {
        let y0 = -half + iy as f64 * hd;
        let y1 = y0 + hd;
        let sy0 = ((y0 + half) / hs).floor().max(0.0) as usize;
        let sy1 = (((y1 + half) / hs).ceil() as usize).min(ns);
        for ix in 0..dst_grid.n() {
            let x0 = -half + ix as f64 * hd;
            let x1 = x0 + hd;
            let sx0 = ((x0 + half) / hs).floor().max(0.0) as usize;
            let sx1 = (((x1 + half) / hs).ceil() as usize).min(ns);
            let mut acc = 0.0;
            for sy in sy0..sy1 {
                let cy0 = -half + sy as f64 * hs;
                let oy = (y1.min(cy0 + hs) - y0.max(cy0)).max(0.0);
                if oy == 0.0 {
                    continue;
                }
                for sx in sx0..sx1 {
                    let cx0 = -half + sx as f64 * hs;
                    let ox = (x1.min(cx0 + hs) - x0.max(cx0)).max(0.0);
                    acc += ox * oy * src.values[sy * ns + sx];
                }
            }
            out.values[dst_grid.index(ix, iy)] = acc / (hd * hd);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// glyph sources
// ---------------------------------------------------------------------------

/// Built-in procedural glyph: a few random quadratic strokes stamped onto a
/// 28x28 bitmap, so the repository does not depend on the MNIST files.
pub fn procedural_glyph(seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bitmap = vec![0u8; GLYPH_SIZE * GLYPH_SIZE];
    let strokes = rng.gen_range(2..=4);
    for _ in 0..strokes {
        let p: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(5.0..23.0), rng.gen_range(5.0..23.0)))
            .collect();
        let thickness = rng.gen_range(1.2..2.4f64);
        for step in 0..=160 {
            let t = step as f64 / 160.0;
            let u = 1.0 - t;
            let x = u * u * p[0].0 + 2.0 * u * t * p[1].0 + t * t * p[2].0;
            let y = u * u * p[0].1 + 2.0 * u * t * p[1].1 + t * t * p[2].1;
            let r = thickness.ceil() as i64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let px = x.round() as i64 + dx;
                    let py = y.round() as i64 + dy;
                    if (0..GLYPH_SIZE as i64).contains(&px)
                        && (0..GLYPH_SIZE as i64).contains(&py)
                    {
                        let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                        if d2 <= thickness * thickness {
                            bitmap[py as usize * GLYPH_SIZE + px as usize] = 255;
                        }
                    }
                }
            }
        }
    }
    bitmap
}

/// Random ring or disk scatterer for the Austria-style training set.
/// Shapes are kept inside the central 1.6x1.6 m of the DOI.
pub fn procedural_ring_or_disk(seed: u64, eps_lo: f64, eps_hi: f64, grid: &Grid) -> ContrastMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = rng.gen_range(eps_lo..=eps_hi);
    let cx = rng.gen_range(-0.35..0.35);
    let cy = rng.gen_range(-0.35..0.35);
    if rng.gen_bool(0.5) {
        let outer = rng.gen_range(0.25..0.55);
        let inner = outer * rng.gen_range(0.35..0.7);
        rasterize_annulus((cx, cy), outer, inner, eps, grid).expect("valid annulus")
    } else {
        let radius = rng.gen_range(0.12..0.4);
        rasterize_circle((cx, cy), radius, eps, grid).expect("valid circle")
    }
}

/// Parse an IDX image file (big-endian magic 0x00000803) into 28x28 bitmaps.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    if bytes.len() < 16 {
        return Err(Error::format("IDX file truncated before header"));
    }
    let read_u32 = |off: usize| -> u32 {
        u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
    };
    let magic = read_u32(0);
    if magic != 0x0000_0803 {
        return Err(Error::format(format!(
            "bad IDX magic 0x{magic:08x}, expected 0x00000803"
        )));
    }
    let count = read_u32(4) as usize;
    let rows = read_u32(8) as usize;
    let cols = read_u32(12) as usize;
    if rows != GLYPH_SIZE || cols != GLYPH_SIZE {
        return Err(Error::format(format!(
            "expected {0}x{0} images, got {rows}x{cols}",
            GLYPH_SIZE
        )));
    }
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::format(format!(
            "IDX payload truncated: need {need} bytes, have {}",
            bytes.len()
        )));
    }
    Ok((0..count)
        .map(|i| bytes[16 + i * rows * cols..16 + (i + 1) * rows * cols].to_vec())
        .collect())
}

pub fn load_idx_images(path: &std::path::Path) -> Result<Vec<Vec<u8>>> {
    parse_idx_images(&std::fs::read(path)?)
}
