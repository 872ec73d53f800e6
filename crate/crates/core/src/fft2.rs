//! Small 2D FFT helper over row-major complex buffers.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft2 {
    rows: usize,
    cols: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            fwd_row: planner.plan_fft_forward(cols),
            inv_row: planner.plan_fft_inverse(cols),
            fwd_col: planner.plan_fft_forward(rows),
            inv_col: planner.plan_fft_inverse(rows),
        }
    }

    #[allow(clippy::len_without_is_empty)] // plans are never empty by construction
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.rows * self.cols);
        let row_fft = if forward { &self.fwd_row } else { &self.inv_row };
        let col_fft = if forward { &self.fwd_col } else { &self.inv_col };
        for row in data.chunks_exact_mut(self.cols) {
            row_fft.process(row);
        }
        let mut column = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[r * self.cols + c];
            }
            col_fft.process(&mut column);
            for r in 0..self.rows {
                data[r * self.cols + c] = column[r];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// Inverse transform including the 1/(rows*cols) normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}
