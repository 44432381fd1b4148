//! Square two-dimensional FFTs built from row passes and in-place transposes.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform of an `n x n` row-major array.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.forward);
    }

    /// Inverse transform, normalized by `1/n²` so that `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    fn apply(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "fft buffer has wrong length");
        self.rows(data, plan);
        transpose(data, n);
        self.rows(data, plan);
        transpose(data, n);
    }

    fn rows(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let scratch_len = plan.get_inplace_scratch_len();
        data.par_chunks_mut(self.n).for_each_init(
            || vec![Complex64::new(0.0, 0.0); scratch_len],
            |scratch, row| plan.process_with_scratch(row, scratch),
        );
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for k in (j + 1)..n {
            data.swap(j * n + k, k * n + j);
        }
    }
}

/// Signed integer frequency of FFT bin `j` for a length-`n` transform.
/// The Nyquist bin maps to `-n/2`.
pub fn signed_frequency(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}
