//! Unitary discrete Fourier transforms on the cell-centered cubic lattice.
//!
//! Physical samples live at x_j = −L + (j+0.5)h, h = 2L/M; spectral
//! coefficients live on the frequency lattice ξ_k = (π/L)·k with
//! k ∈ {−M/2, …, M/2−1} per axis. The transform pair is fixed to the
//! unitary convention: the discrete L² norm √(h^N Σ|v|²) of a state
//! equals the plain ℓ² norm of its coefficients, with no stray factors.
//! Multiplying a coefficient by e^{−|ξ_k|² t} therefore realizes the
//! heat convolution whose kernel transform is e^{−|ξ|² t}.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::GridSpec;
use crate::error::{Error, Result};
use crate::field::GridState;

/// Signed lattice index for array position `idx` on an axis of `m` points.
#[inline]
pub(crate) fn signed_index(m: usize, idx: usize) -> i64 {
    if idx < m / 2 {
        idx as i64
    } else {
        idx as i64 - m as i64
    }
}

/// Frequency ξ = π·k/L at array position `idx`.
#[inline]
pub(crate) fn axis_frequency(l: f64, m: usize, idx: usize) -> f64 {
    std::f64::consts::PI * signed_index(m, idx) as f64 / l
}

/// In-place unnormalized FFT along every axis of a cubic row-major array.
pub(crate) fn fft_nd(data: &mut [Complex64], n: usize, m: usize, forward: bool) {
    debug_assert_eq!(data.len(), m.pow(n as u32));
    let mut planner = FftPlanner::new();
    let fft = if forward {
        planner.plan_fft_forward(m)
    } else {
        planner.plan_fft_inverse(m)
    };
    let mut line = vec![Complex64::default(); m];
    let total = data.len();
    for axis in 0..n {
        let stride = m.pow((n - 1 - axis) as u32);
        let blocks = total / (stride * m);
        for b in 0..blocks {
            for s in 0..stride {
                let base = b * stride * m + s;
                for t in 0..m {
                    line[t] = data[base + t * stride];
                }
                fft.process(&mut line);
                for t in 0..m {
                    data[base + t * stride] = line[t];
                }
            }
        }
    }
}

/// Per-axis phase table turning the raw DFT into the cell-centered
/// transform: e^{−iξ_k x_j} = phase(k)·e^{−2πi kj/M} with
/// phase(k) = e^{iπk(M−1)/M}.
pub(crate) fn center_phase_table(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|idx| {
            let k = signed_index(m, idx) as f64;
            Complex64::from_polar(1.0, std::f64::consts::PI * k * (m as f64 - 1.0) / m as f64)
        })
        .collect()
}

/// Applies Π_a table_a(k_a), optionally conjugated, times `scale`.
pub(crate) fn apply_axis_phases(
    data: &mut [Complex64],
    n: usize,
    m: usize,
    table: &[Complex64],
    conjugate: bool,
    scale: f64,
) {
    for (flat, v) in data.iter_mut().enumerate() {
        let mut phase = Complex64::new(scale, 0.0);
        let mut rem = flat;
        for axis in (0..n).rev() {
            let idx = rem % m;
            rem /= m;
            let _ = axis;
            phase *= if conjugate {
                table[idx].conj()
            } else {
                table[idx]
            };
        }
        *v *= phase;
    }
}

/// Forward transform of raw complex samples on an (n, m, l) lattice.
pub(crate) fn forward_complex(data: &mut [Complex64], n: usize, m: usize, l: f64) {
    fft_nd(data, n, m, true);
    let h = 2.0 * l / m as f64;
    let scale = (h / m as f64).powf(n as f64 / 2.0);
    let table = center_phase_table(m);
    apply_axis_phases(data, n, m, &table, false, scale);
}

/// Inverse transform back to physical samples on an (n, m, l) lattice.
pub(crate) fn inverse_complex(data: &mut [Complex64], n: usize, m: usize, l: f64) {
    let h = 2.0 * l / m as f64;
    let scale = 1.0 / (h * m as f64).powf(n as f64 / 2.0);
    let table = center_phase_table(m);
    apply_axis_phases(data, n, m, &table, true, scale);
    fft_nd(data, n, m, false);
}

/// Discrete Fourier coefficients of a [`GridState`] in the unitary
/// convention, stored row-major with per-axis array position `idx`
/// corresponding to the signed frequency index k(idx).
#[derive(Debug, Clone)]
pub struct SpectralState {
    spec: GridSpec,
    coefficients: Vec<Complex64>,
}

impl SpectralState {
    pub(crate) fn from_parts(spec: GridSpec, coefficients: Vec<Complex64>) -> Self {
        debug_assert_eq!(coefficients.len(), spec.len());
        Self { spec, coefficients }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<Complex64> {
        self.coefficients
    }

    /// ℓ² norm of the coefficients; equals the physical L² norm by the
    /// unitary convention.
    pub fn l2_norm(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Frequency vector ξ at a flat coefficient index.
    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        self.spec.frequency(flat)
    }

    /// |ξ|² at a flat coefficient index.
    pub fn frequency_norm_sqr(&self, flat: usize) -> f64 {
        self.spec.frequency_norm_sqr(flat)
    }
}

/// Forward transform: physical samples → spectral coefficients.
pub fn transform(state: &GridState) -> SpectralState {
    let spec = state.spec().clone();
    let mut data: Vec<Complex64> = state
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    forward_complex(&mut data, spec.dim(), spec.points_per_axis(), spec.half_width());
    SpectralState::from_parts(spec, data)
}

/// Inverse transform: spectral coefficients → physical samples. The
/// imaginary residue (rounding level for coefficients of a real state)
/// is discarded.
pub fn inverse_transform(spectral: &SpectralState) -> Result<GridState> {
    let spec = spectral.spec.clone();
    let mut data = spectral.coefficients.clone();
    inverse_complex(&mut data, spec.dim(), spec.points_per_axis(), spec.half_width());
    let values: Vec<f64> = data.iter().map(|c| c.re).collect();
    GridState::new(spec, values)
}

/// Sobolev norm of fractional order σ ≥ 0 with the inhomogeneous
/// Fourier weight (1 + |ξ|²)^σ. At σ = 0 this is the L² norm.
pub fn sobolev_norm(state: &GridState, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("Sobolev order must be >= 0"));
    }
    let spectral = transform(state);
    let mut acc = 0.0;
    for (flat, c) in spectral.coefficients.iter().enumerate() {
        let w = (1.0 + spectral.frequency_norm_sqr(flat)).powf(sigma);
        acc += w * c.norm_sqr();
    }
    Ok(acc.sqrt())
}

/// Homogeneous variant with weight |ξ|^{2σ}; the zero frequency
/// contributes nothing.
pub fn sobolev_norm_homogeneous(state: &GridState, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("Sobolev order must be >= 0"));
    }
    let spectral = transform(state);
    let mut acc = 0.0;
    for (flat, c) in spectral.coefficients.iter().enumerate() {
        let xi2 = spectral.frequency_norm_sqr(flat);
        if xi2 > 0.0 {
            acc += xi2.powf(sigma) * c.norm_sqr();
        }
    }
    Ok(acc.sqrt())
}
