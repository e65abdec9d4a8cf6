//! Frequency-domain helpers on real sequences.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Multiplies each FFT bin of `signal` by `gain(u)`, where `u = min(k, n - k)`
/// is the bin's symmetric frequency index, and returns the real inverse.
pub fn filter_real(signal: &[f64], gain: impl Fn(usize) -> f64) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        *z *= gain(k.min(n - k));
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|z| z.re * scale).collect()
}

/// Applies `filter_real` to every column of a row-major `rows x cols` grid.
pub fn filter_columns(data: &mut [f64], rows: usize, cols: usize, gain: impl Fn(usize) -> f64) {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(rows);
    let inv = planner.plan_fft_inverse(rows);
    let gains: Vec<f64> = (0..rows).map(|k| gain(k.min(rows - k))).collect();
    let scale = 1.0 / rows as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for (r, z) in buf.iter_mut().enumerate() {
            *z = Complex64::new(data[r * cols + c], 0.0);
        }
        fwd.process(&mut buf);
        for (z, g) in buf.iter_mut().zip(&gains) {
            *z *= *g;
        }
        inv.process(&mut buf);
        for (r, z) in buf.iter().enumerate() {
            data[r * cols + c] = z.re * scale;
        }
    }
}
