//! Discrete representation of L²(ℝ^N) functions on a truncated,
//! periodized cell-centered grid.
//!
//! ℝ^N is cut to the box [−L, L)^N with M uniform cells per axis and a
//! sample at each cell center. Periodization is valid only for states
//! whose mass has decayed at the boundary, which is enforced by an
//! explicit guard rather than assumed: operations that would alias a
//! wide state report a domain-truncation error instead of silently
//! wrapping it.

mod io;
mod spectral;

pub use io::{load_ougs, read_ougs, save_ougs, write_ougs};
pub use spectral::{
    inverse_transform, sobolev_norm, sobolev_norm_homogeneous, transform, SpectralState,
};

pub(crate) use spectral::{axis_frequency, forward_complex, inverse_complex, signed_index};

use crate::error::{Error, Result};
use crate::linops::DriftMatrix;

/// Fraction of the total squared mass allowed in the outermost 10%
/// shell of the box before a state is considered too wide for the
/// periodized representation.
pub const DEFAULT_DECAY_THRESHOLD: f64 = 1e-6;

/// Geometry of the truncated grid: dimension N ∈ {1, 2, 3}, half-width
/// L (box [−L, L)^N), and an even number M ≥ 16 of points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    n: usize,
    half_width: f64,
    points_per_axis: usize,
}

impl GridSpec {
    pub fn new(n: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        if n == 0 || n > 3 {
            return Err(Error::invalid(format!("dimension must be 1..=3, got {n}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::invalid("half width must be positive and finite"));
        }
        if points_per_axis < 16 || !points_per_axis.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "points per axis must be even and >= 16, got {points_per_axis}"
            )));
        }
        Ok(Self {
            n,
            half_width,
            points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Grid spacing h = 2L/M.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    /// Total number of cells M^N.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight h^N of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    /// Cell-center coordinate on one axis.
    pub fn axis_coordinate(&self, idx: usize) -> f64 {
        -self.half_width + (idx as f64 + 0.5) * self.spacing()
    }

    /// Decodes a flat row-major index into per-axis indices.
    pub fn decode(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let mut out = vec![0usize; self.n];
        for axis in (0..self.n).rev() {
            out[axis] = rem % self.points_per_axis;
            rem /= self.points_per_axis;
        }
        out
    }

    /// Cell-center coordinates of the flat index.
    pub fn coordinate(&self, flat: usize) -> Vec<f64> {
        self.decode(flat)
            .into_iter()
            .map(|i| self.axis_coordinate(i))
            .collect()
    }

    /// Frequency vector ξ_k for the flat coefficient index.
    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        self.decode(flat)
            .into_iter()
            .map(|i| axis_frequency(self.half_width, self.points_per_axis, i))
            .collect()
    }

    /// |ξ_k|² for the flat coefficient index.
    pub fn frequency_norm_sqr(&self, flat: usize) -> f64 {
        self.frequency(flat).iter().map(|x| x * x).sum()
    }
}

/// Real samples of an L² function on the grid, immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct GridState {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridState {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::invalid(format!(
                "expected {} values for the grid, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state values must be finite"));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let values = vec![0.0; spec.len()];
        Self { spec, values }
    }

    /// Samples a function of the cell-center coordinates.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..spec.len()).map(|j| f(&spec.coordinate(j))).collect();
        Self::new(spec, values)
    }

    /// Centered Gaussian e^{−|x−center|²/(4·sigma)}; the workhorse test
    /// state of the laboratory (sigma = 1 gives e^{−|x|²/4}).
    pub fn gaussian(spec: GridSpec, center: &[f64], sigma: f64) -> Result<Self> {
        if center.len() != spec.dim() {
            return Err(Error::invalid("gaussian center dimension mismatch"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("gaussian width must be positive"));
        }
        Self::from_fn(spec, |x| {
            let r2: f64 = x
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-r2 / (4.0 * sigma)).exp()
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Discrete L² norm √(h^N Σ v²).
    pub fn l2_norm(&self) -> f64 {
        let w = self.spec.cell_volume();
        (w * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Pointwise linear combination with another state on the same grid.
    pub fn axpy(&self, alpha: f64, other: &GridState) -> Result<GridState> {
        if self.spec != other.spec {
            return Err(Error::invalid("grid mismatch in state combination"));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a + alpha * b)
            .collect();
        GridState::new(self.spec.clone(), values)
    }

    pub fn scale(&self, alpha: f64) -> GridState {
        let values = self.values.iter().map(|v| alpha * v).collect();
        GridState {
            spec: self.spec.clone(),
            values,
        }
    }

    /// Discrete L² inner product h^N Σ u·v.
    pub fn inner(&self, other: &GridState) -> f64 {
        debug_assert_eq!(self.spec, other.spec);
        self.spec.cell_volume()
            * self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Fraction of the squared mass in the outermost 10% shell.
    pub fn boundary_mass_fraction(&self) -> f64 {
        let m = self.spec.points_per_axis();
        let margin = m / 10;
        let lo = margin;
        let hi = m - margin;
        let mut shell = 0.0;
        let mut total = 0.0;
        for (flat, v) in self.values.iter().enumerate() {
            let sq = v * v;
            total += sq;
            if self
                .spec
                .decode(flat)
                .iter()
                .any(|&i| i < lo || i >= hi)
            {
                shell += sq;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            shell / total
        }
    }

    /// Checks the boundary-decay guard at the given threshold.
    pub fn check_decay(&self, threshold: f64) -> Result<()> {
        let fraction = self.boundary_mass_fraction();
        if fraction > threshold {
            Err(Error::DomainTruncation {
                mass_fraction: fraction,
                threshold,
            })
        } else {
            Ok(())
        }
    }
}

/// Applies the generator A u = Δu + Bx·∇u pseudospectrally: Δ and ∇
/// as Fourier multipliers, then pointwise multiplication by the
/// unperiodized cell-center coordinate Bx.
pub fn apply_generator(state: &GridState, b: &DriftMatrix) -> Result<GridState> {
    if b.dim() != state.spec.dim() {
        return Err(Error::invalid("drift matrix dimension does not match grid"));
    }
    state.check_decay(DEFAULT_DECAY_THRESHOLD)?;

    let spec = state.spec.clone();
    let n = spec.dim();
    let spectral = transform(state);
    let coeffs = spectral.coefficients();

    // Laplacian: multiply by −|ξ|².
    let mut lap_coeffs = coeffs.to_vec();
    for (flat, c) in lap_coeffs.iter_mut().enumerate() {
        *c *= -spec.frequency_norm_sqr(flat);
    }
    let lap = inverse_transform(&SpectralState::from_parts(spec.clone(), lap_coeffs))?;

    // Gradient components: multiply by iξ_a.
    let mut gradients = Vec::with_capacity(n);
    for axis in 0..n {
        let mut g = coeffs.to_vec();
        for (flat, c) in g.iter_mut().enumerate() {
            let xi = spec.frequency(flat)[axis];
            *c *= num_complex::Complex64::new(0.0, xi);
        }
        gradients.push(inverse_transform(&SpectralState::from_parts(
            spec.clone(),
            g,
        ))?);
    }

    let bm = b.entries();
    let mut out = vec![0.0; spec.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let x = spec.coordinate(flat);
        let mut drift = 0.0;
        for (a, grad) in gradients.iter().enumerate() {
            // (Bx)_a = Σ_j B[a, j] x_j
            let bx_a: f64 = (0..n).map(|j| bm[(a, j)] * x[j]).sum();
            drift += bx_a * grad.values()[flat];
        }
        *o = lap.values()[flat] + drift;
    }
    GridState::new(spec, out)
}

/// Graph norm √(‖u‖² + ‖Au‖²) of the generator domain D(A).
pub fn graph_norm(state: &GridState, b: &DriftMatrix) -> Result<f64> {
    let au = apply_generator(state, b)?;
    Ok((state.l2_norm().powi(2) + au.l2_norm().powi(2)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn spec_1d() -> GridSpec {
        GridSpec::new(1, 16.0, 1024).unwrap()
    }

    /// Deterministic pseudo-random decayed state: a bump of random
    /// lattice modes under a Gaussian envelope.
    pub(crate) fn random_decayed_state(spec: &GridSpec, seed: u64) -> GridState {
        let mut s = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(11);
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let n = spec.dim();
        let waves: Vec<(f64, Vec<f64>, f64)> = (0..6)
            .map(|_| {
                let amp = next();
                let freq: Vec<f64> = (0..n).map(|_| next() * 2.0).collect();
                let phase = next() * std::f64::consts::PI;
                (amp, freq, phase)
            })
            .collect();
        GridState::from_fn(spec.clone(), |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let envelope = (-r2 / 6.0).exp();
            let osc: f64 = waves
                .iter()
                .map(|(a, f, p)| {
                    let dot: f64 = f.iter().zip(x.iter()).map(|(fi, xi)| fi * xi).sum();
                    a * (dot + p).cos()
                })
                .sum();
            envelope * osc
        })
        .unwrap()
    }

    #[test]
    fn l2_norm_of_zero_state() {
        assert_eq!(GridState::zeros(spec_1d()).l2_norm(), 0.0);
    }

    #[test]
    fn l2_norm_of_box_indicator() {
        // Indicator of the whole box [−1, 1): ∫ 1 = 2, norm √2.
        let spec = GridSpec::new(1, 1.0, 64).unwrap();
        let one = GridState::from_fn(spec, |_| 1.0).unwrap();
        assert!((one.l2_norm() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn l2_norm_of_gaussian_matches_closed_form() {
        // ∫ e^{−x²/2} dx = √(2π) ⇒ ‖e^{−x²/4}‖ = (2π)^{1/4}.
        let g = GridState::gaussian(spec_1d(), &[0.0], 1.0).unwrap();
        let expect = (2.0 * std::f64::consts::PI).powf(0.25);
        assert!((g.l2_norm() - expect).abs() < 1e-12);
    }

    #[test]
    fn norm_scaling_is_homogeneous() {
        let g = random_decayed_state(&spec_1d(), 3);
        let a = -2.375;
        let lhs = g.scale(a).l2_norm();
        let rhs = a.abs() * g.l2_norm();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn constant_state_transforms_to_dc_mode() {
        let spec = GridSpec::new(1, 2.0, 64).unwrap();
        let one = GridState::from_fn(spec, |_| 1.0).unwrap();
        let hat = transform(&one);
        let mut off_dc = 0.0f64;
        for (flat, c) in hat.coefficients().iter().enumerate() {
            if hat.frequency_norm_sqr(flat) > 0.0 {
                off_dc = off_dc.max(c.norm());
            }
        }
        assert!(off_dc < 1e-12);
        // DC coefficient carries the whole norm: |c_0| = ‖1‖ = √(2·2).
        assert!((hat.coefficients()[0].norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_spectrum_matches_continuous_transform() {
        // For f = e^{−x²/4}: f̂(ξ) = √(4π)·e^{−ξ²} and the lattice
        // coefficient is f̂(ξ_k)/√(2L).
        let spec = spec_1d();
        let g = GridState::gaussian(spec.clone(), &[0.0], 1.0).unwrap();
        let hat = transform(&g);
        let scale = (2.0 * spec.half_width()).sqrt();
        for (flat, c) in hat.coefficients().iter().enumerate() {
            let xi = hat.frequency(flat)[0];
            let expect = (4.0 * std::f64::consts::PI).sqrt() * (-xi * xi).exp() / scale;
            if expect >= 1e-12 {
                let got = c.re;
                // The 1e-17 floor is the FFT rounding level across the
                // twelve-decade dynamic range of the spectrum.
                assert!(
                    (got - expect).abs() <= 1e-6 * expect + 1e-17,
                    "xi = {xi}: coefficient {got} vs continuous {expect}"
                );
                assert!(c.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_round_trip_is_identity() {
        let g = random_decayed_state(&spec_1d(), 7);
        let back = inverse_transform(&transform(&g)).unwrap();
        let norm = g.l2_norm();
        let diff = g.axpy(-1.0, &back).unwrap().l2_norm();
        assert!(diff <= 1e-12 * norm);
    }

    #[test]
    fn parseval_identity() {
        for seed in [1, 2, 9] {
            let g = random_decayed_state(&spec_1d(), seed);
            let hat = transform(&g);
            let lhs = g.l2_norm();
            let rhs = hat.l2_norm();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1e-300));
        }
    }

    #[test]
    fn parseval_identity_2d() {
        let spec = GridSpec::new(2, 8.0, 32).unwrap();
        let g = random_decayed_state(&spec, 4);
        let hat = transform(&g);
        assert!((g.l2_norm() - hat.l2_norm()).abs() <= 1e-10 * g.l2_norm());
        let back = inverse_transform(&hat).unwrap();
        let diff = g.axpy(-1.0, &back).unwrap().l2_norm();
        assert!(diff <= 1e-12 * g.l2_norm());
    }

    #[test]
    fn sobolev_order_zero_is_l2() {
        let g = random_decayed_state(&spec_1d(), 13);
        let s0 = sobolev_norm(&g, 0.0).unwrap();
        let l2 = g.l2_norm();
        assert!((s0 - l2).abs() <= 1e-10 * l2);
    }

    #[test]
    fn sobolev_single_mode_weight() {
        // A unit-norm lattice cosine mode at ξ₀ has H¹ norm (1+ξ₀²)^{1/2}.
        let spec = spec_1d();
        let k = 12i64;
        let xi0 = std::f64::consts::PI * k as f64 / spec.half_width();
        let raw = GridState::from_fn(spec, |x| (xi0 * x[0]).cos()).unwrap();
        let mode = raw.scale(1.0 / raw.l2_norm());
        let s1 = sobolev_norm(&mode, 1.0).unwrap();
        let expect = (1.0 + xi0 * xi0).sqrt();
        assert!((s1 - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn sobolev_gaussian_matches_spectrum_quadrature() {
        // Oracle: dense quadrature of (1+ξ²)|f̂(ξ)|²/(2π) for the
        // closed-form spectrum f̂ = √(4π)e^{−ξ²}.
        let g = GridState::gaussian(spec_1d(), &[0.0], 1.0).unwrap();
        let s1 = sobolev_norm(&g, 1.0).unwrap();
        let n_quad = 200_000;
        let (a, b) = (-60.0, 60.0);
        let dxi = (b - a) / n_quad as f64;
        let mut acc = 0.0;
        for i in 0..=n_quad {
            let xi = a + i as f64 * dxi;
            let w = if i == 0 || i == n_quad { 0.5 } else { 1.0 };
            let fhat2 = 4.0 * std::f64::consts::PI * (-2.0 * xi * xi).exp();
            acc += w * (1.0 + xi * xi) * fhat2 * dxi;
        }
        let oracle = (acc / (2.0 * std::f64::consts::PI)).sqrt();
        assert!(
            (s1 - oracle).abs() <= 1e-8 * oracle,
            "H1 norm {s1} vs oracle {oracle}"
        );
    }

    #[test]
    fn sobolev_rejects_negative_order() {
        let g = GridState::zeros(spec_1d());
        assert!(sobolev_norm(&g, -0.5).is_err());
    }

    #[test]
    fn generator_on_gaussian_without_drift() {
        // Δ e^{−x²/4} = (x²/4 − 1/2)·e^{−x²/4}.
        let g = GridState::gaussian(spec_1d(), &[0.0], 1.0).unwrap();
        let b = DriftMatrix::zero(1).unwrap();
        let au = apply_generator(&g, &b).unwrap();
        for (flat, got) in au.values().iter().enumerate() {
            let x = g.spec().coordinate(flat)[0];
            let expect = (x * x / 4.0 - 0.5) * (-x * x / 4.0).exp();
            assert!(
                (got - expect).abs() < 1e-8,
                "x = {x}: Au = {got}, symbolic {expect}"
            );
        }
    }

    #[test]
    fn generator_on_gaussian_with_scalar_drift() {
        // Δu + x·u′ with u = e^{−x²/4}: (x²/4 − 1/2 − x²/2)·u.
        let g = GridState::gaussian(spec_1d(), &[0.0], 1.0).unwrap();
        let b = DriftMatrix::scalar(1.0).unwrap();
        let au = apply_generator(&g, &b).unwrap();
        for (flat, got) in au.values().iter().enumerate() {
            let x = g.spec().coordinate(flat)[0];
            let expect = (-x * x / 4.0 - 0.5) * (-x * x / 4.0).exp();
            assert!((got - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn generator_diagonalizes_on_lattice_mode() {
        // Δ applied to a decayed-enough... lattice modes are periodic,
        // so the guard is bypassed by windowing: use a pure mode on a
        // periodic-by-construction grid where the indicator trick
        // applies — the mode itself is periodic and passes no decay
        // guard; check the identity through the spectral route instead.
        let spec = GridSpec::new(1, 4.0, 64).unwrap();
        let k = 5i64;
        let xi0 = std::f64::consts::PI * k as f64 / spec.half_width();
        let mode = GridState::from_fn(spec.clone(), |x| (xi0 * x[0]).cos()).unwrap();
        // Pure modes are not decayed; apply the multiplier directly.
        let hat = transform(&mode);
        let mut lap = hat.coefficients().to_vec();
        for (flat, c) in lap.iter_mut().enumerate() {
            *c *= Complex64::new(-hat.frequency_norm_sqr(flat), 0.0);
        }
        let lap_state = inverse_transform(&SpectralState::from_parts(spec, lap)).unwrap();
        for (got, orig) in lap_state.values().iter().zip(mode.values().iter()) {
            let expect = -xi0 * xi0 * orig;
            assert!((got - expect).abs() < 1e-9 * (xi0 * xi0));
        }
    }

    #[test]
    fn generator_rejects_wide_states() {
        let spec = GridSpec::new(1, 2.0, 64).unwrap();
        let wide = GridState::from_fn(spec, |_| 1.0).unwrap();
        let b = DriftMatrix::zero(1).unwrap();
        match apply_generator(&wide, &b) {
            Err(Error::DomainTruncation { .. }) => {}
            other => panic!("expected domain truncation, got {other:?}"),
        }
    }

    #[test]
    fn spectral_laplacian_agrees_with_finite_differences() {
        // Independent check: second-order centered differences on the
        // periodic grid converge at O(h²) to the same operator.
        let spec = spec_1d();
        let g = GridState::gaussian(spec.clone(), &[0.5], 1.3).unwrap();
        let b = DriftMatrix::zero(1).unwrap();
        let au = apply_generator(&g, &b).unwrap();
        let m = spec.points_per_axis();
        let h = spec.spacing();
        let v = g.values();
        let mut max_err = 0.0f64;
        for j in 0..m {
            let fd = (v[(j + 1) % m] - 2.0 * v[j] + v[(j + m - 1) % m]) / (h * h);
            max_err = max_err.max((fd - au.values()[j]).abs());
        }
        // O(h²) with h = 1/32: comfortably below 1e-3 for this state.
        assert!(max_err < 1e-3, "FD vs spectral disagreement {max_err}");
    }

    #[test]
    fn graph_norm_of_zero_state_is_zero() {
        let b = DriftMatrix::zero(1).unwrap();
        assert_eq!(graph_norm(&GridState::zeros(spec_1d()), &b).unwrap(), 0.0);
    }

    #[test]
    fn graph_norm_of_gaussian_matches_symbolic_oracle() {
        // ‖u‖² + ‖Au‖² with Au = (−x²/4 − 1/2)u for B = [1].
        let g = GridState::gaussian(spec_1d(), &[0.0], 1.0).unwrap();
        let b = DriftMatrix::scalar(1.0).unwrap();
        let got = graph_norm(&g, &b).unwrap();
        let spec = g.spec();
        let mut au_sq = 0.0;
        for flat in 0..spec.len() {
            let x = spec.coordinate(flat)[0];
            let au = (-x * x / 4.0 - 0.5) * (-x * x / 4.0).exp();
            au_sq += au * au;
        }
        au_sq *= spec.cell_volume();
        let expect = (g.l2_norm().powi(2) + au_sq).sqrt();
        assert!((got - expect).abs() < 1e-8 * expect);
    }

    #[test]
    fn boundary_guard_passes_for_decayed_states() {
        let g = GridState::gaussian(spec_1d(), &[0.0], 1.0).unwrap();
        assert!(g.check_decay(DEFAULT_DECAY_THRESHOLD).is_ok());
    }
}
