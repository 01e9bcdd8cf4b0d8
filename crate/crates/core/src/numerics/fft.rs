//! Real FFT along the last axis, backed by `rustfft`.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::numerics::{NumericsError, Tensor};

/// Half spectrum of a batch of real signals. The last extent is `n / 2 + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![Complex64::new(0.0, 0.0); shape.iter().product()],
        }
    }

    pub fn bins(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }
}

/// Forward real FFT over the last axis.
pub fn rfft(x: &Tensor) -> Result<Spectrum, NumericsError> {
    let n = *x.shape().last().ok_or(NumericsError::EmptyAxis)?;
    if n == 0 {
        return Err(NumericsError::EmptyAxis);
    }
    let bins = n / 2 + 1;
    let signals = x.len() / n;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut data = Vec::with_capacity(signals * bins);
    for s in 0..signals {
        for (b, &v) in buf.iter_mut().zip(&x.data()[s * n..(s + 1) * n]) {
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = bins;
    Ok(Spectrum { shape, data })
}

/// Inverse real FFT producing signals of length `n`. The imaginary parts of
/// the DC bin (and of the Nyquist bin for even `n`) are ignored.
pub fn irfft(s: &Spectrum, n: usize) -> Result<Tensor, NumericsError> {
    if n == 0 {
        return Err(NumericsError::EmptyAxis);
    }
    let bins = n / 2 + 1;
    if s.bins() != bins {
        return Err(NumericsError::LengthMismatch {
            expected: bins,
            found: s.bins(),
        });
    }
    let signals = s.data.len() / bins;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(signals * n);
    let scale = 1.0 / n as f64;
    for sig in 0..signals {
        let half = &s.data[sig * bins..(sig + 1) * bins];
        buf[0] = Complex64::new(half[0].re, 0.0);
        for k in 1..bins {
            buf[k] = half[k];
            buf[n - k] = half[k].conj();
        }
        if n % 2 == 0 {
            buf[n / 2] = Complex64::new(half[n / 2].re, 0.0);
        }
        ifft.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re * scale));
    }
    let mut shape = s.shape.clone();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_parts(shape, out))
}
