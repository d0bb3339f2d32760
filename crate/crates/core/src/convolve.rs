//! FFT overlap-add linear convolution.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Smallest FFT size used for a block; keeps tiny kernels from producing
/// absurdly short transforms.
const MIN_FFT_LEN: usize = 64;

/// Full linear convolution (`signal.len() + kernel.len() - 1` samples) via
/// FFT overlap-add. Empty inputs produce an empty output.
pub fn fft_convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return Vec::new();
    }
    let out_len = signal.len() + kernel.len() - 1;
    let fft_len = (2 * kernel.len()).next_power_of_two().max(MIN_FFT_LEN);
    let block = fft_len - kernel.len() + 1;

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);

    let mut kernel_spec: Vec<Complex<f64>> = kernel
        .iter()
        .map(|&k| Complex::new(k, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(fft_len)
        .collect();
    forward.process(&mut kernel_spec);

    let scale = 1.0 / fft_len as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    for (i, chunk) in signal.chunks(block).enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (dst, &s) in buf.iter_mut().zip(chunk) {
            dst.re = s;
        }
        forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kernel_spec) {
            *b *= k;
        }
        inverse.process(&mut buf);
        let start = i * block;
        let valid = (chunk.len() + kernel.len() - 1).min(out_len - start);
        for (o, b) in out[start..start + valid].iter_mut().zip(&buf) {
            *o += b.re * scale;
        }
    }
    out
}
