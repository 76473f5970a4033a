//! Dense small-dimension linear algebra around the drift matrix B.
//!
//! Provides the flow matrices e^{tB}, the covariance matrices
//! Q_t = ∫₀ᵗ e^{sB} e^{sB*} ds (computed by two independent routes that
//! are cross-checked in tests: adaptive quadrature of the defining
//! integral and integration of the equivalent Lyapunov matrix ODE
//! Q′ = I + BQ + QB*), and the constants c₁, c₂, c = c₁/c₂, κ_θ entering
//! the logarithmic-convexity estimate
//! ‖T(t)f‖ ≤ κ_θ·‖f‖^{1−ct/θ}·‖T(θ)f‖^{ct/θ}.
//!
//! Everything here is sized for N ≤ 8; no sparse or large-scale paths.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Gauss-Legendre 16-point rule on [-1, 1]: positive abscissae and weights.
const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// A real constant N×N drift matrix with its cached trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix {
    n: usize,
    entries: DMatrix<f64>,
    trace: f64,
}

impl DriftMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::invalid(format!(
                "drift matrix must be square with n >= 1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("drift matrix entries must be finite"));
        }
        let trace = entries.diagonal().sum();
        Ok(Self { n, entries, trace })
    }

    /// Builds from row-major slices, e.g. `&[&[0.0, 1.0], &[-1.0, 0.0]]`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("drift matrix rows must all have length n"));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn scalar(b: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, b))
    }

    pub fn zero(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Self::new(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }
}

/// Computes the flow matrix e^{tB}. `t` may be negative: the drift part
/// generates a group, not just a semigroup.
pub fn matrix_exponential(b: &DriftMatrix, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() {
        return Err(Error::invalid("time must be finite"));
    }
    Ok((&b.entries * t).exp())
}

/// The covariance matrix Q_t, symmetric and positive definite for t > 0
/// (and the zero matrix at t = 0).
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    t: f64,
    q: DMatrix<f64>,
}

impl CovarianceMatrix {
    fn new(t: f64, q: DMatrix<f64>) -> Result<Self> {
        let sym_err = symmetry_defect(&q);
        if sym_err > 1e-12 {
            return Err(Error::invalid(format!(
                "covariance matrix not symmetric: relative defect {sym_err:e}"
            )));
        }
        // Symmetrize exactly so downstream quadratic forms are clean.
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self { t, q })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// The quadratic form ⟨Q_t ξ, ξ⟩.
    pub fn quad_form(&self, xi: &[f64]) -> f64 {
        let n = self.q.nrows();
        assert_eq!(xi.len(), n, "direction dimension mismatch");
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.q[(i, j)] * xi[i] * xi[j];
            }
        }
        acc
    }

    /// True when all eigenvalues are strictly positive.
    pub fn is_positive_definite(&self) -> bool {
        let eig = self.q.clone().symmetric_eigenvalues();
        eig.iter().all(|&l| l > 0.0)
    }
}

fn symmetry_defect(q: &DMatrix<f64>) -> f64 {
    let scale = q.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..q.nrows() {
        for j in (i + 1)..q.ncols() {
            worst = worst.max((q[(i, j)] - q[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Maximal panel-doubling depth for the adaptive quadrature and the
/// Lyapunov ODE before a convergence error is reported.
const MAX_REFINEMENTS: u32 = 18;

/// Q_t by adaptive composite Gauss-Legendre quadrature of ∫₀ᵗ e^{sB}e^{sB*} ds.
///
/// Panels are doubled until two successive composite rules agree to
/// `tol` per entry; the integrand is entire, so convergence is fast.
pub fn covariance_quadrature(b: &DriftMatrix, t: f64, tol: f64) -> Result<CovarianceMatrix> {
    check_covariance_args(t, tol)?;
    let n = b.dim();
    if t == 0.0 {
        return CovarianceMatrix::new(0.0, DMatrix::zeros(n, n));
    }

    let mut panels = 1usize;
    let mut prev = composite_gl16(b, t, panels);
    for _ in 0..MAX_REFINEMENTS {
        panels *= 2;
        let cur = composite_gl16(b, t, panels);
        let diff = max_abs_diff(&cur, &prev);
        if diff <= tol {
            return CovarianceMatrix::new(t, cur);
        }
        prev = cur;
    }
    let cur = composite_gl16(b, t, panels * 2);
    let achieved = max_abs_diff(&cur, &prev);
    Err(Error::Convergence {
        achieved,
        requested: tol,
    })
}

fn composite_gl16(b: &DriftMatrix, t: f64, panels: usize) -> DMatrix<f64> {
    let n = b.dim();
    let mut acc = DMatrix::zeros(n, n);
    let h = t / panels as f64;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for i in 0..8 {
            for sign in [-1.0, 1.0] {
                let s = mid + sign * half * GL16_X[i];
                let e = (&b.entries * s).exp();
                let term = &e * e.transpose();
                acc += term * (GL16_W[i] * half);
            }
        }
    }
    acc
}

/// Q_t by integrating the Lyapunov matrix ODE Q′ = I + BQ + QB*, Q(0) = 0,
/// with classical RK4 and step doubling until two runs agree to `tol`.
///
/// This route is independent of the quadrature path and is used to
/// cross-check it.
pub fn covariance_ode(b: &DriftMatrix, t: f64, tol: f64) -> Result<CovarianceMatrix> {
    check_covariance_args(t, tol)?;
    let n = b.dim();
    if t == 0.0 {
        return CovarianceMatrix::new(0.0, DMatrix::zeros(n, n));
    }

    let bnorm = b.entries.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut steps = (8.0 * (1.0 + t * bnorm)).ceil() as usize;
    let mut prev = rk4_lyapunov(b, t, steps);
    for _ in 0..MAX_REFINEMENTS {
        steps *= 2;
        let cur = rk4_lyapunov(b, t, steps);
        let diff = max_abs_diff(&cur, &prev);
        if diff <= tol {
            return CovarianceMatrix::new(t, cur);
        }
        prev = cur;
    }
    let cur = rk4_lyapunov(b, t, steps * 2);
    let achieved = max_abs_diff(&cur, &prev);
    Err(Error::Convergence {
        achieved,
        requested: tol,
    })
}

fn rk4_lyapunov(b: &DriftMatrix, t: f64, steps: usize) -> DMatrix<f64> {
    let n = b.dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let rhs = |q: &DMatrix<f64>| -> DMatrix<f64> { &eye + &b.entries * q + q * b.entries.transpose() };
    let h = t / steps as f64;
    let mut q = DMatrix::zeros(n, n);
    for _ in 0..steps {
        let k1 = rhs(&q);
        let k2 = rhs(&(&q + &k1 * (0.5 * h)));
        let k3 = rhs(&(&q + &k2 * (0.5 * h)));
        let k4 = rhs(&(&q + &k3 * h));
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    q
}

/// Q_t by the default (quadrature) route.
pub fn covariance(b: &DriftMatrix, t: f64, tol: f64) -> Result<CovarianceMatrix> {
    covariance_quadrature(b, t, tol)
}

/// Q at every time in `times` by a single Lyapunov-ODE sweep, with step
/// doubling until the final matrix is stable to `tol`.
///
/// `times` must be nondecreasing, nonnegative, and finite.
pub fn covariance_profile(
    b: &DriftMatrix,
    times: &[f64],
    tol: f64,
) -> Result<Vec<CovarianceMatrix>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if times.iter().any(|&t| !t.is_finite() || t < 0.0) {
        return Err(Error::invalid("profile times must be finite and >= 0"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("profile times must be nondecreasing"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }

    let t_end = *times.last().unwrap();
    if t_end == 0.0 {
        let zero = DMatrix::zeros(b.dim(), b.dim());
        return times
            .iter()
            .map(|_| CovarianceMatrix::new(0.0, zero.clone()))
            .collect();
    }

    let bnorm = b.entries.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut substeps = ((4.0 * (1.0 + t_end * bnorm)) / times.len() as f64).ceil() as usize + 1;
    let mut prev = sweep_lyapunov(b, times, substeps);
    for _ in 0..MAX_REFINEMENTS {
        substeps *= 2;
        let cur = sweep_lyapunov(b, times, substeps);
        let diff = cur
            .iter()
            .zip(prev.iter())
            .map(|(a, c)| max_abs_diff(a, c))
            .fold(0.0f64, f64::max);
        if diff <= tol {
            return cur
                .into_iter()
                .zip(times.iter())
                .map(|(q, &t)| CovarianceMatrix::new(t, q))
                .collect();
        }
        prev = cur;
    }
    Err(Error::Convergence {
        achieved: f64::NAN,
        requested: tol,
    })
}

fn sweep_lyapunov(b: &DriftMatrix, times: &[f64], substeps: usize) -> Vec<DMatrix<f64>> {
    let n = b.dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let rhs = |q: &DMatrix<f64>| -> DMatrix<f64> { &eye + &b.entries * q + q * b.entries.transpose() };
    let mut out = Vec::with_capacity(times.len());
    let mut q = DMatrix::zeros(n, n);
    let mut t_cur = 0.0;
    for &t_next in times {
        let span = t_next - t_cur;
        if span > 0.0 {
            let h = span / substeps as f64;
            for _ in 0..substeps {
                let k1 = rhs(&q);
                let k2 = rhs(&(&q + &k1 * (0.5 * h)));
                let k3 = rhs(&(&q + &k2 * (0.5 * h)));
                let k4 = rhs(&(&q + &k3 * h));
                q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        t_cur = t_next;
        out.push(q.clone());
    }
    out
}

fn check_covariance_args(t: f64, tol: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid("time must be finite and >= 0"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    Ok(())
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Sampling density for the constants search and the quadratic-form
/// bound verification.
#[derive(Debug, Clone, Copy)]
pub struct SamplingSpec {
    /// Time samples in (0, θ]; at least 64.
    pub time_samples: usize,
    /// Direction samples on the unit sphere; at least 64 (for N = 1 the
    /// sphere is {-1, +1}).
    pub direction_samples: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            time_samples: 128,
            direction_samples: 128,
        }
    }
}

impl SamplingSpec {
    fn validate(&self) -> Result<()> {
        if self.time_samples < 64 || self.direction_samples < 64 {
            return Err(Error::invalid(
                "sampling spec requires >= 64 time and >= 64 direction samples",
            ));
        }
        Ok(())
    }
}

/// Deterministic unit directions on S^{N-1}: the two signs for N = 1, a
/// uniform angular grid for N = 2, and a Fibonacci sphere for N = 3 and
/// above (projected for N > 3 this simply cycles coordinates; only
/// N <= 3 is exercised at desk scale).
pub fn unit_directions(n: usize, m: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..m)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci sphere on the first three coordinates, zero beyond.
            let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            (0..m)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / m as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let a = golden_angle * i as f64;
                    let mut v = vec![0.0; n];
                    v[0] = r * a.cos();
                    v[1] = r * a.sin();
                    v[2] = z;
                    v
                })
                .collect()
        }
    }
}

/// Deterministic directions in a spherical cap of the given radius
/// around `center` (used for local refinement of extremal directions).
fn directions_near(center: &[f64], radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let n = center.len();
    if n == 1 {
        return vec![center.to_vec()];
    }
    let tangents = tangent_basis(center);
    let mut out = Vec::new();
    let steps: Vec<f64> = (0..per_axis)
        .map(|i| -radius + 2.0 * radius * i as f64 / (per_axis - 1).max(1) as f64)
        .collect();
    let mut push = |offsets: &[f64]| {
        let mut v = center.to_vec();
        for (t, &a) in tangents.iter().zip(offsets.iter()) {
            for (vi, ti) in v.iter_mut().zip(t.iter()) {
                *vi += a * ti;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            out.push(v);
        }
    };
    if tangents.len() == 1 {
        for &a in &steps {
            push(&[a]);
        }
    } else {
        for &a in &steps {
            for &b in &steps {
                push(&[a, b]);
            }
        }
    }
    out
}

fn tangent_basis(center: &[f64]) -> Vec<Vec<f64>> {
    let n = center.len();
    // Axis least aligned with the center gives a stable first tangent.
    let k = (0..n)
        .min_by(|&i, &j| {
            center[i]
                .abs()
                .partial_cmp(&center[j].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap();
    let mut t1 = vec![0.0; n];
    t1[k] = 1.0;
    let dot: f64 = t1.iter().zip(center.iter()).map(|(a, b)| a * b).sum();
    for (t, c) in t1.iter_mut().zip(center.iter()) {
        *t -= dot * c;
    }
    let norm = t1.iter().map(|x| x * x).sum::<f64>().sqrt();
    for t in t1.iter_mut() {
        *t /= norm;
    }
    if n == 2 {
        return vec![t1];
    }
    // For n >= 3 use the cross product of center and t1 (first three
    // coordinates dominate all desk-scale uses).
    let mut t2 = vec![0.0; n];
    t2[0] = center[1] * t1[2] - center[2] * t1[1];
    t2[1] = center[2] * t1[0] - center[0] * t1[2];
    t2[2] = center[0] * t1[1] - center[1] * t1[0];
    let norm2 = t2.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm2 > 1e-14 {
        for t in t2.iter_mut() {
            *t /= norm2;
        }
        vec![t1, t2]
    } else {
        vec![t1]
    }
}

/// The constants of the logarithmic-convexity estimate for a fixed
/// horizon θ: c₁ t ≤ ⟨Q_t ξ, ξ⟩ ≤ c₂ t on [0, θ] × S^{N-1}, c = c₁/c₂,
/// and κ_θ = e^{|tr B|/2·(1−c)·θ}. The exponent function is
/// w(t) = c·t/θ.
#[derive(Debug, Clone)]
pub struct ConvexityConstants {
    theta: f64,
    c1: f64,
    c2: f64,
    c: f64,
    kappa: f64,
    /// Provenance copy of the drift matrix the constants were computed
    /// for; guards against mixing constants across systems.
    drift: DriftMatrix,
}

impl ConvexityConstants {
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn c1(&self) -> f64 {
        self.c1
    }
    pub fn c2(&self) -> f64 {
        self.c2
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn drift(&self) -> &DriftMatrix {
        &self.drift
    }

    /// The convexity exponent w(t) = c·t/θ.
    pub fn w(&self, t: f64) -> f64 {
        self.c * (t / self.theta)
    }

    /// Builds constants directly (used by tests that tamper with c to
    /// exercise the failure path of the bound verification).
    pub fn with_overridden_c(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.c = c;
        out
    }
}

/// Relative change below which the local refinement of an extremum of
/// β(t, ξ) = ⟨Q_t ξ, ξ⟩/t is considered converged.
const REFINE_RTOL: f64 = 1e-6;

/// Computes c₁ = min β, c₂ = max β over [0, θ] × S^{N-1} by dense
/// deterministic sampling followed by local refinement around each
/// extremal sample, then assembles c and κ_θ.
pub fn convexity_constants(
    b: &DriftMatrix,
    theta: f64,
    sampling: &SamplingSpec,
) -> Result<ConvexityConstants> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid("theta must be positive and finite"));
    }
    sampling.validate()?;

    let n = b.dim();
    let dirs = unit_directions(n, sampling.direction_samples);
    let m = sampling.time_samples;
    let times: Vec<f64> = (1..=m).map(|i| theta * i as f64 / m as f64).collect();
    let profile = covariance_profile(b, &times, 1e-11)?;

    // β(0, ξ) = |ξ|² = 1 on unit directions: feed the continuous
    // extension in as a sample at t = 0.
    let mut min_sample = (1.0f64, 0.0f64, dirs[0].clone());
    let mut max_sample = (1.0f64, 0.0f64, dirs[0].clone());
    for (q, &t) in profile.iter().zip(times.iter()) {
        for xi in &dirs {
            let beta = q.quad_form(xi) / t;
            if beta < min_sample.0 {
                min_sample = (beta, t, xi.clone());
            }
            if beta > max_sample.0 {
                max_sample = (beta, t, xi.clone());
            }
        }
    }

    let dt0 = theta / m as f64;
    let rad0 = angular_spacing(n, sampling.direction_samples);
    let c1 = refine_extremum(b, theta, &min_sample, dt0, rad0, true)?;
    let c2 = refine_extremum(b, theta, &max_sample, dt0, rad0, false)?;

    let c = c1 / c2;
    let kappa = (b.trace().abs() / 2.0 * (1.0 - c) * theta).exp();
    if !(c > 0.0 && c <= 1.0 + 1e-12) {
        return Err(Error::Degenerate(format!(
            "convexity ratio c = {c} outside (0, 1]"
        )));
    }
    Ok(ConvexityConstants {
        theta,
        c1,
        c2,
        c: c.min(1.0),
        kappa: kappa.max(1.0),
        drift: b.clone(),
    })
}

fn angular_spacing(n: usize, dir_samples: usize) -> f64 {
    match n {
        1 => 0.0,
        2 => 2.0 * std::f64::consts::PI / dir_samples as f64,
        _ => (4.0 * std::f64::consts::PI / dir_samples as f64).sqrt(),
    }
}

fn refine_extremum(
    b: &DriftMatrix,
    theta: f64,
    start: &(f64, f64, Vec<f64>),
    dt0: f64,
    rad0: f64,
    minimize: bool,
) -> Result<f64> {
    let (mut best, mut t_c, mut xi_c) = (start.0, start.1, start.2.clone());
    let mut dt = dt0;
    let mut rad = rad0.max(1e-6);
    for _ in 0..40 {
        let prev = best;
        let lo = (t_c - dt).max(0.0);
        let hi = (t_c + dt).min(theta);
        let local_t: Vec<f64> = (0..9).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect();
        let dirs = directions_near(&xi_c, rad, 5);
        for &t in &local_t {
            let q;
            let betas: Vec<f64> = if t == 0.0 {
                dirs.iter().map(|_| 1.0).collect()
            } else {
                q = covariance_quadrature(b, t, 1e-12)?;
                dirs.iter().map(|xi| q.quad_form(xi) / t).collect()
            };
            for (beta, xi) in betas.iter().zip(dirs.iter()) {
                let better = if minimize { *beta < best } else { *beta > best };
                if better {
                    best = *beta;
                    t_c = t;
                    xi_c = xi.clone();
                }
            }
        }
        dt *= 0.35;
        rad *= 0.35;
        if (best - prev).abs() <= REFINE_RTOL * best.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(best)
}

/// Outcome of checking ⟨Q_t ξ, ξ⟩ ≥ c·(t/θ)·⟨Q_θ ξ, ξ⟩ on a sample grid.
#[derive(Debug, Clone)]
pub struct QtBoundReport {
    /// Minimum of ⟨Q_t ξ, ξ⟩ − c·(t/θ)·⟨Q_θ ξ, ξ⟩ over the samples.
    pub min_slack: f64,
    pub witness_t: f64,
    pub witness_xi: Vec<f64>,
    /// ⟨Q_θ ξ, ξ⟩ at the witness direction.
    pub qtheta_at_witness: f64,
    /// min_slack ≥ −1e−9·max(1, ⟨Q_θ ξ, ξ⟩).
    pub pass: bool,
}

/// Verifies the quadratic-form lower bound underlying the convexity
/// estimate on a deterministic (t, ξ) sample grid.
pub fn verify_qt_lower_bound(
    b: &DriftMatrix,
    theta: f64,
    constants: &ConvexityConstants,
    sampling: &SamplingSpec,
) -> Result<QtBoundReport> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid("theta must be positive and finite"));
    }
    sampling.validate()?;
    if constants.theta != theta || constants.drift.entries() != b.entries() {
        return Err(Error::invalid(
            "constants were computed for a different (B, theta)",
        ));
    }

    let dirs = unit_directions(b.dim(), sampling.direction_samples);
    let m = sampling.time_samples;
    let times: Vec<f64> = (0..=m).map(|i| theta * i as f64 / m as f64).collect();
    let profile = covariance_profile(b, &times, 1e-11)?;
    let qtheta = profile.last().unwrap();

    let mut report = QtBoundReport {
        min_slack: f64::INFINITY,
        witness_t: 0.0,
        witness_xi: dirs[0].clone(),
        qtheta_at_witness: qtheta.quad_form(&dirs[0]),
        pass: false,
    };
    for (q, &t) in profile.iter().zip(times.iter()) {
        for xi in &dirs {
            let qt = q.quad_form(xi);
            let qh = qtheta.quad_form(xi);
            let slack = qt - constants.c * (t / theta) * qh;
            if slack < report.min_slack {
                report.min_slack = slack;
                report.witness_t = t;
                report.witness_xi = xi.clone();
                report.qtheta_at_witness = qh;
            }
        }
    }
    report.pass = report.min_slack >= -1e-9 * report.qtheta_at_witness.max(1.0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference matrix exponential: scaling by powers of two plus a
    /// Taylor series summed to machine precision. Independent of the
    /// implementation path used by `matrix_exponential`.
    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = a.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())) * n as f64;
        let s = if norm > 0.25 {
            (norm / 0.25).log2().ceil() as i32
        } else {
            0
        };
        let scaled = a / 2f64.powi(s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = DMatrix::<f64>::identity(n, n);
        for k in 1..200 {
            term = (&term * &scaled) / k as f64;
            sum += &term;
            if term.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())) < 1e-22 {
                break;
            }
        }
        let mut out = sum;
        for _ in 0..s {
            out = &out * &out;
        }
        out
    }

    fn rot() -> DriftMatrix {
        DriftMatrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap()
    }

    /// Deterministic pseudo-random matrix entries in [-2, 2].
    fn random_drift(n: usize, seed: u64) -> DriftMatrix {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let entries: Vec<f64> = (0..n * n).map(|_| next()).collect();
        DriftMatrix::new(DMatrix::from_row_slice(n, n, &entries)).unwrap()
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let b = DriftMatrix::zero(3).unwrap();
        let e = matrix_exponential(&b, 5.0).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_of_rotation_generator() {
        let b = rot();
        for &t in &[0.3, 1.0, -2.5] {
            let e = matrix_exponential(&b, t).unwrap();
            assert!((e[(0, 0)] - t.cos()).abs() < 1e-14);
            assert!((e[(0, 1)] - t.sin()).abs() < 1e-14);
            assert!((e[(1, 0)] + t.sin()).abs() < 1e-14);
            assert!((e[(1, 1)] - t.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn expm_of_diagonal() {
        let b = DriftMatrix::from_rows(&[&[1.0, 0.0], &[0.0, -2.0]]).unwrap();
        let e = matrix_exponential(&b, 1.0).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() / 1f64.exp() < 1e-14);
        assert!((e[(1, 1)] - (-2f64).exp()).abs() / (-2f64).exp() < 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn expm_matches_taylor_reference() {
        for seed in 0..20 {
            let n = 1 + (seed as usize % 3);
            let b = random_drift(n, seed);
            for &t in &[0.5, 1.0, 1.7] {
                let e = matrix_exponential(&b, t).unwrap();
                let r = expm_taylor(&(b.entries() * t));
                let scale = r.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                for (x, y) in e.iter().zip(r.iter()) {
                    assert!(
                        (x - y).abs() <= 1e-12 * scale.max(1.0),
                        "entry mismatch: {x} vs {y} (B seed {seed}, t {t})"
                    );
                }
            }
        }
    }

    #[test]
    fn expm_group_law() {
        for seed in 0..10 {
            let b = random_drift(2, seed);
            let e1 = matrix_exponential(&b, 0.7).unwrap();
            let e2 = matrix_exponential(&b, 0.4).unwrap();
            let e12 = matrix_exponential(&b, 1.1).unwrap();
            let prod = &e1 * &e2;
            let scale = e12.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
            assert!(max_abs_diff(&prod, &e12) <= 1e-12 * scale);
        }
    }

    #[test]
    fn expm_rejects_non_finite_time() {
        let b = DriftMatrix::zero(1).unwrap();
        assert!(matrix_exponential(&b, f64::NAN).is_err());
    }

    #[test]
    fn drift_matrix_rejects_non_finite_entries() {
        assert!(DriftMatrix::from_rows(&[&[f64::INFINITY]]).is_err());
    }

    #[test]
    fn covariance_of_zero_drift_is_t_identity() {
        let b = DriftMatrix::zero(2).unwrap();
        for &t in &[0.1, 1.0, 3.0] {
            let q = covariance(&b, t, 1e-12).unwrap();
            let expect = DMatrix::<f64>::identity(2, 2) * t;
            assert!(max_abs_diff(q.matrix(), &expect) < 1e-10);
        }
    }

    #[test]
    fn covariance_of_rotation_is_t_identity() {
        let b = rot();
        let q = covariance(&b, 2.0, 1e-12).unwrap();
        let expect = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert!(max_abs_diff(q.matrix(), &expect) < 1e-10);
    }

    #[test]
    fn covariance_scalar_closed_form() {
        // ∫₀¹ e^{2s} ds = (e² − 1)/2.
        let b = DriftMatrix::scalar(1.0).unwrap();
        let q = covariance(&b, 1.0, 1e-12).unwrap();
        let expect = (2f64.exp() - 1.0) / 2.0;
        assert!((q.matrix()[(0, 0)] - expect).abs() < 1e-12);
    }

    #[test]
    fn covariance_rejects_negative_time() {
        let b = DriftMatrix::zero(1).unwrap();
        assert!(matches!(
            covariance(&b, -1.0, 1e-10),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn covariance_zero_time_is_null_matrix() {
        let b = random_drift(3, 1);
        let q = covariance(&b, 0.0, 1e-10).unwrap();
        assert!(q.matrix().iter().all(|&v| v == 0.0));
        assert!(!q.is_positive_definite());
    }

    #[test]
    fn quadrature_and_ode_paths_agree() {
        for seed in 0..25 {
            let n = 1 + (seed as usize % 3);
            let b = random_drift(n, seed + 100);
            for &t in &[0.3, 1.0] {
                let tol = 1e-10;
                let qa = covariance_quadrature(&b, t, tol).unwrap();
                let qb = covariance_ode(&b, t, tol).unwrap();
                assert!(
                    max_abs_diff(qa.matrix(), qb.matrix()) <= 10.0 * tol,
                    "paths disagree for seed {seed}, t {t}"
                );
            }
        }
    }

    #[test]
    fn covariance_positive_definite_and_monotone() {
        for seed in 0..10 {
            let b = random_drift(2, seed + 7);
            let q1 = covariance(&b, 0.4, 1e-11).unwrap();
            let q2 = covariance(&b, 0.9, 1e-11).unwrap();
            assert!(q1.is_positive_definite());
            assert!(q2.is_positive_definite());
            for xi in unit_directions(2, 64) {
                assert!(q2.quad_form(&xi) >= q1.quad_form(&xi) - 1e-10);
            }
        }
    }

    #[test]
    fn profile_matches_pointwise_covariance() {
        let b = random_drift(2, 42);
        let times: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let profile = covariance_profile(&b, &times, 1e-11).unwrap();
        for (q, &t) in profile.iter().zip(times.iter()) {
            let direct = covariance(&b, t, 1e-11).unwrap();
            assert!(max_abs_diff(q.matrix(), direct.matrix()) < 1e-9);
        }
    }

    #[test]
    fn beta_continuous_extension_near_zero() {
        let b = random_drift(2, 5);
        let q = covariance(&b, 1e-6, 1e-14).unwrap();
        for xi in unit_directions(2, 64) {
            let beta = q.quad_form(&xi) / 1e-6;
            assert!(
                (beta - 1.0).abs() < 1e-4,
                "beta(1e-6) = {beta} should be near |xi|^2 = 1"
            );
        }
    }

    #[test]
    fn constants_for_zero_drift() {
        let b = DriftMatrix::zero(2).unwrap();
        let c = convexity_constants(&b, 1.0, &SamplingSpec::default()).unwrap();
        assert!((c.c1() - 1.0).abs() < 1e-9);
        assert!((c.c2() - 1.0).abs() < 1e-9);
        assert!((c.c() - 1.0).abs() < 1e-9);
        assert!((c.kappa() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_for_rotation() {
        let c = convexity_constants(&rot(), 2.0, &SamplingSpec::default()).unwrap();
        assert!((c.c() - 1.0).abs() < 1e-8);
        assert!((c.kappa() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constants_for_scalar_unit_drift() {
        // β(t) = (e^{2t} − 1)/(2t) is increasing: c₁ = 1, c₂ = (e²−1)/2.
        let b = DriftMatrix::scalar(1.0).unwrap();
        let c = convexity_constants(&b, 1.0, &SamplingSpec::default()).unwrap();
        let c2_expect = (2f64.exp() - 1.0) / 2.0;
        let c_expect = 1.0 / c2_expect;
        let kappa_expect = (0.5 * (1.0 - c_expect)).exp();
        assert!((c.c1() - 1.0).abs() < 1e-6, "c1 = {}", c.c1());
        assert!((c.c2() - c2_expect).abs() < 1e-6, "c2 = {}", c.c2());
        assert!((c.c() - c_expect).abs() < 1e-5, "c = {}", c.c());
        assert!((c.kappa() - kappa_expect).abs() < 1e-5);
        assert!((c.w(0.5) - c.c() * 0.5).abs() < 1e-15);
    }

    #[test]
    fn qt_bound_holds_for_zero_drift_with_zero_slack() {
        let b = DriftMatrix::zero(2).unwrap();
        let c = convexity_constants(&b, 1.0, &SamplingSpec::default()).unwrap();
        let report = verify_qt_lower_bound(&b, 1.0, &c, &SamplingSpec::default()).unwrap();
        assert!(report.pass);
        assert!(report.min_slack.abs() < 1e-9);
    }

    #[test]
    fn qt_bound_has_positive_interior_slack_for_scalar_drift() {
        let b = DriftMatrix::scalar(1.0).unwrap();
        let c = convexity_constants(&b, 1.0, &SamplingSpec::default()).unwrap();
        let report = verify_qt_lower_bound(&b, 1.0, &c, &SamplingSpec::default()).unwrap();
        assert!(report.pass, "min slack {}", report.min_slack);
        // Interior times carry strictly positive slack for an increasing β.
        let q = covariance(&b, 0.5, 1e-12).unwrap();
        let qh = covariance(&b, 1.0, 1e-12).unwrap();
        let slack = q.quad_form(&[1.0]) - c.c() * 0.5 * qh.quad_form(&[1.0]);
        assert!(slack > 1e-3);
    }

    #[test]
    fn qt_bound_fails_for_tampered_constant() {
        let b = DriftMatrix::scalar(1.0).unwrap();
        let c = convexity_constants(&b, 1.0, &SamplingSpec::default()).unwrap();
        let bad = c.with_overridden_c(2.0);
        let report = verify_qt_lower_bound(&b, 1.0, &bad, &SamplingSpec::default()).unwrap();
        assert!(!report.pass);
        assert!(report.min_slack < 0.0);
    }

    #[test]
    fn qt_bound_rejects_mismatched_provenance() {
        let b = DriftMatrix::scalar(1.0).unwrap();
        let other = DriftMatrix::scalar(0.5).unwrap();
        let c = convexity_constants(&b, 1.0, &SamplingSpec::default()).unwrap();
        assert!(verify_qt_lower_bound(&other, 1.0, &c, &SamplingSpec::default()).is_err());
        assert!(verify_qt_lower_bound(&b, 2.0, &c, &SamplingSpec::default()).is_err());
    }
}
