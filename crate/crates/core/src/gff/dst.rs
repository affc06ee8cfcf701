//! Type-I discrete sine transform on top of a complex FFT.
//!
//! `y[i] = sum_{k=1}^{m} x[k] sin(pi k i / (m + 1))`, for `i = 1..=m`, with both
//! sequences stored zero-based. Two real transforms share one complex FFT of
//! length `2 (m + 1)` applied to the odd extension.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub struct Dst1 {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Dst1 {
    pub fn new(len: usize) -> Self {
        let n = 2 * (len + 1);
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Dst1 {
            len,
            fft,
            buf: vec![Complex::new(0.0, 0.0); n],
            scratch,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Transforms `a` and `b` in place (both of length `len`).
    pub fn transform_pair(&mut self, a: &mut [f64], b: &mut [f64]) {
        let m = self.len;
        debug_assert!(a.len() == m && b.len() == m);
        let n = 2 * (m + 1);
        self.buf[0] = Complex::new(0.0, 0.0);
        self.buf[m + 1] = Complex::new(0.0, 0.0);
        for k in 0..m {
            let v = Complex::new(a[k], b[k]);
            self.buf[k + 1] = v;
            self.buf[n - 1 - k] = -v;
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        // FFT of the odd extension of x + i x' equals -2i y + 2 y'.
        for i in 0..m {
            let v = self.buf[i + 1];
            a[i] = -0.5 * v.im;
            b[i] = 0.5 * v.re;
        }
    }

    pub fn transform(&mut self, a: &mut [f64]) {
        let mut zeros = vec![0.0; a.len()];
        self.transform_pair(a, &mut zeros);
    }
}
