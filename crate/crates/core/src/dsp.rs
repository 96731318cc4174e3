//! FFT helpers shared by the simulator, the transforms and the renderers.

use num_complex::Complex64;
use rustfft::FftPlanner;

pub(crate) fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place forward FFT (kernel `exp(-i2πkn/N)`), unnormalized.
pub(crate) fn fft(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// In-place inverse FFT including the `1/N` factor.
pub(crate) fn ifft(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// One-sided spectrum (`size/2 + 1` bins) of a zero-padded real signal.
pub(crate) fn rfft(signal: &[f64], size: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for (b, &s) in buf.iter_mut().zip(signal) {
        b.re = s;
    }
    fft(&mut buf);
    buf.truncate(size / 2 + 1);
    buf
}

/// Real signal of length `size` from a one-sided spectrum, assuming
/// Hermitian symmetry. The DC and Nyquist bins contribute their real parts.
pub(crate) fn irfft(half: &[Complex64], size: usize) -> Vec<f64> {
    debug_assert_eq!(half.len(), size / 2 + 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    buf[0] = Complex64::new(half[0].re, 0.0);
    for b in 1..size / 2 {
        buf[b] = half[b];
        buf[size - b] = half[b].conj();
    }
    if size >= 2 {
        buf[size / 2] = Complex64::new(half[size / 2].re, 0.0);
    }
    ifft(&mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

/// Linear convolution of two real signals, truncated to `len` samples.
pub(crate) fn convolve_real(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; len];
    }
    let size = next_pow2(a.len() + b.len() - 1);
    let fa = rfft(a, size);
    let fb = rfft(b, size);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mut out = irfft(&prod, size);
    out.resize(len, 0.0);
    out
}

/// Linear convolution of a complex signal with a real one, truncated to `len`.
pub(crate) fn convolve_complex_real(a: &[Complex64], b: &[f64], len: usize) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return vec![Complex64::new(0.0, 0.0); len];
    }
    let size = next_pow2(a.len() + b.len() - 1);
    let mut fa = vec![Complex64::new(0.0, 0.0); size];
    fa[..a.len()].copy_from_slice(a);
    let mut fb = vec![Complex64::new(0.0, 0.0); size];
    for (x, &y) in fb.iter_mut().zip(b) {
        x.re = y;
    }
    fft(&mut fa);
    fft(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft(&mut fa);
    fa.resize(len, Complex64::new(0.0, 0.0));
    fa
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.25, 1.0, -1.0];
        let got = convolve_real(&a, &b, 6);
        for n in 0..6 {
            let mut s = 0.0;
            for i in 0..a.len() {
                if n >= i && n - i < b.len() {
                    s += a[i] * b[n - i];
                }
            }
            assert!((got[n] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn rfft_irfft_round_trip() {
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = irfft(&rfft(&x, 16), 16);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
