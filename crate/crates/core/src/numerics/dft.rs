use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Half-spectrum of a real signal: coefficients k = 0..=N/2.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub coefficients: Vec<Complex64>,
    /// Length of the signal the spectrum came from.
    pub signal_len: usize,
}

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Normalised forward DFT, `c_k = (1/N) Σ_n x_n e^{-2πi kn/N}`.
///
/// Direct O(N²) sum over a twiddle table indexed by `kn mod N`, so the phase
/// never loses precision for large products.
pub fn dft_real(signal: &[f64]) -> Result<ComplexSpectrum> {
    let n = signal.len();
    if n < 2 || n % 2 != 0 {
        return invalid(format!("dft needs an even length ≥ 2, got {n}"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return invalid("dft input has non-finite samples");
    }
    let twiddle: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64))
        .collect();
    let coefficients = (0..=n / 2)
        .map(|k| {
            let sum: Complex64 = signal
                .iter()
                .enumerate()
                .map(|(j, &x)| twiddle[(k * j) % n] * x)
                .sum();
            sum / n as f64
        })
        .collect();
    Ok(ComplexSpectrum {
        coefficients,
        signal_len: n,
    })
}

/// Inverse of [`dft_real`] using Hermitian symmetry.
pub fn idft_real(spectrum: &ComplexSpectrum) -> Result<Vec<f64>> {
    let n = spectrum.signal_len;
    if n < 2 || n % 2 != 0 || spectrum.coefficients.len() != n / 2 + 1 {
        return invalid("spectrum does not describe an even-length real signal");
    }
    let c = &spectrum.coefficients;
    Ok((0..n)
        .map(|j| {
            let mut x = c[0].re + c[n / 2].re * if j % 2 == 0 { 1.0 } else { -1.0 };
            for (k, ck) in c.iter().enumerate().take(n / 2).skip(1) {
                let w = Complex64::from_polar(1.0, 2.0 * PI * ((k * j) % n) as f64 / n as f64);
                x += 2.0 * (ck * w).re;
            }
            x
        })
        .collect())
}
