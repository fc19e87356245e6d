//! Multi-dimensional complex FFT on periodic cubes built from 1D rustfft passes.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward/inverse FFT for an `n^d` row-major grid (last axis contiguous).
#[derive(Clone)]
pub struct FftNd {
    d: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FftNd {{ d: {}, n: {} }}", self.d, self.n)
    }
}

impl FftNd {
    pub fn new(d: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { d, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalised forward transform, `Σ_x f(x) e^{-2πi k·x}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    /// Inverse transform including the `1/n^d` normalisation.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
        let s = 1.0 / self.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        if self.d == 1 {
            return;
        }
        const CHUNK: usize = 32;
        let mut buf = vec![Complex64::new(0.0, 0.0); CHUNK * n];
        for axis in 0..self.d - 1 {
            let inner = n.pow((self.d - 1 - axis) as u32);
            let block = n * inner;
            let outer = self.len() / block;
            for o in 0..outer {
                let base = o * block;
                for c0 in (0..inner).step_by(CHUNK) {
                    let w = CHUNK.min(inner - c0);
                    let lines = &mut buf[..w * n];
                    for r in 0..n {
                        let row = &data[base + r * inner + c0..base + r * inner + c0 + w];
                        for (j, z) in row.iter().enumerate() {
                            lines[j * n + r] = *z;
                        }
                    }
                    plan.process_with_scratch(lines, &mut scratch);
                    for r in 0..n {
                        let row = &mut data[base + r * inner + c0..base + r * inner + c0 + w];
                        for (j, z) in row.iter_mut().enumerate() {
                            *z = lines[j * n + r];
                        }
                    }
                }
            }
        }
    }
}
