//! Evaluation of the heat semigroup U(t), the drift group S(t), the
//! Ornstein-Uhlenbeck semigroup T(t) and its discrete adjoint T(t)*.
//!
//! T(t) is applied through its factorization T(t)f = S(t)(g_t ∗ f): the
//! convolution with the Gaussian kernel g_t is the Fourier multiplier
//! e^{−⟨Q_t ξ, ξ⟩} (never formed in physical space, where it is
//! near-singular for small t), followed by the flow composition
//! f ↦ f(e^{tB}x). The multiplier is applied first so interpolation at
//! off-grid points acts on an already-smoothed state.
//!
//! Trajectories are sampled one-shot from the initial state at every
//! requested time rather than by composed stepping, so interpolation
//! error does not accumulate.

mod drift;

pub(crate) use drift::DriftPlan;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{
    inverse_complex, transform, GridSpec, GridState, SpectralState, DEFAULT_DECAY_THRESHOLD,
};
use crate::linops::{covariance, matrix_exponential, CovarianceMatrix, DriftMatrix};

/// Per-entry tolerance used when assembling Q_t for a step.
const STEP_COVARIANCE_TOL: f64 = 1e-12;

/// A reusable, immutable application of T(t) on one grid: covariance
/// matrix, flow matrix, spectral symbol and drift-evaluation pipeline
/// are all built once and shared across states of the same `GridSpec`.
pub struct SemigroupStep {
    spec: GridSpec,
    drift: DriftMatrix,
    t: f64,
    qt: CovarianceMatrix,
    flow: DMatrix<f64>,
    /// e^{−⟨Q_t ξ_k, ξ_k⟩} per flat coefficient index.
    symbol: Vec<f64>,
    plan: DriftPlan,
}

impl SemigroupStep {
    pub fn new(spec: &GridSpec, b: &DriftMatrix, t: f64) -> Result<Self> {
        if b.dim() != spec.dim() {
            return Err(Error::invalid("drift matrix dimension does not match grid"));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::invalid("semigroup time must be finite and >= 0"));
        }
        let qt = covariance(b, t, STEP_COVARIANCE_TOL)?;
        let flow = matrix_exponential(b, t)?;
        let symbol: Vec<f64> = (0..spec.len())
            .map(|flat| {
                let xi = spec.frequency(flat);
                (-qt.quad_form(&xi)).exp()
            })
            .collect();
        let plan = DriftPlan::build(spec, &flow)?;
        Ok(Self {
            spec: spec.clone(),
            drift: b.clone(),
            t,
            qt,
            flow,
            symbol,
            plan,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn drift(&self) -> &DriftMatrix {
        &self.drift
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.qt
    }

    pub fn flow(&self) -> &DMatrix<f64> {
        &self.flow
    }

    fn check_state(&self, state: &GridState) -> Result<()> {
        if state.spec() != &self.spec {
            return Err(Error::invalid("state grid does not match the step grid"));
        }
        Ok(())
    }
}

/// U(t): multiplies the spectrum by e^{−|ξ|² t}. A contraction; the
/// backward heat flow (t < 0) is rejected.
pub fn heat_apply(state: &GridState, t: f64) -> Result<GridState> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid("heat time must be finite and >= 0"));
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    state.check_decay(DEFAULT_DECAY_THRESHOLD)?;
    Ok(heat_multiplier(state, t))
}

/// The bare heat multiplier, without the decay guard (valid for exactly
/// periodic data such as pure lattice modes).
pub(crate) fn heat_multiplier(state: &GridState, t: f64) -> GridState {
    let hat = transform(state);
    let spec = state.spec().clone();
    let mut coeffs = hat.into_coefficients();
    for (flat, c) in coeffs.iter_mut().enumerate() {
        *c *= (-spec.frequency_norm_sqr(flat) * t).exp();
    }
    crate::field::inverse_transform(&SpectralState::from_parts(spec, coeffs))
        .expect("multiplier output is finite")
}

/// S(t): samples of f(e^{tB}x) by evaluation of the trigonometric
/// interpolant at the mapped cell centers. `t` may be negative (S is a
/// group). The L² norm identity ‖S(t)f‖ = e^{−t·tr(B)/2}‖f‖ holds
/// within discretization tolerance for decayed band-limited states.
pub fn drift_apply(state: &GridState, b: &DriftMatrix, t: f64) -> Result<GridState> {
    if !t.is_finite() {
        return Err(Error::invalid("drift time must be finite"));
    }
    if b.dim() != state.spec().dim() {
        return Err(Error::invalid("drift matrix dimension does not match grid"));
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    state.check_decay(DEFAULT_DECAY_THRESHOLD)?;
    let flow = matrix_exponential(b, t)?;
    let plan = DriftPlan::build(state.spec(), &flow)?;
    if let Some(values) = plan.apply_physical(state.values()) {
        return GridState::new(state.spec().clone(), values);
    }
    let hat = transform(state);
    let out = plan.apply_from_spectral(hat.coefficients());
    let result = GridState::new(state.spec().clone(), out.values)?;
    // A flow that pushes mass to the box edge (e.g. a contracting
    // e^{tB} widening the state) invalidates the truncation.
    result.check_decay(DEFAULT_DECAY_THRESHOLD)?;
    Ok(result)
}

/// T(t): the g_t multiplier followed by the drift flow.
pub fn ou_apply(state: &GridState, step: &SemigroupStep) -> Result<GridState> {
    step.check_state(state)?;
    if step.t == 0.0 {
        return Ok(state.clone());
    }
    state.check_decay(DEFAULT_DECAY_THRESHOLD)?;
    let out = ou_apply_raw(state, step);
    let result = GridState::new(step.spec.clone(), out.0)?;
    result.check_decay(DEFAULT_DECAY_THRESHOLD)?;
    Ok(result)
}

/// Unguarded T(t) application used inside iterative solvers, where
/// intermediate iterates need not satisfy the decay guard. Returns the
/// values and the discarded-mass fraction.
pub(crate) fn ou_apply_raw(state: &GridState, step: &SemigroupStep) -> (Vec<f64>, f64) {
    if step.t == 0.0 {
        return (state.values().to_vec(), 0.0);
    }
    let hat = transform(state);
    let mut coeffs = hat.into_coefficients();
    for (c, s) in coeffs.iter_mut().zip(step.symbol.iter()) {
        *c *= *s;
    }
    let out = step.plan.apply_from_spectral(&coeffs);
    (out.values, out.discarded_fraction)
}

/// T(t)*: the exact discrete adjoint of `ou_apply` with respect to the
/// discrete L² inner product, ⟨T(t)f, g⟩ = ⟨f, T(t)*g⟩.
pub fn ou_adjoint_apply(state: &GridState, step: &SemigroupStep) -> Result<GridState> {
    step.check_state(state)?;
    if step.t == 0.0 {
        return Ok(state.clone());
    }
    let values = ou_adjoint_raw(state, step);
    GridState::new(step.spec.clone(), values)
}

pub(crate) fn ou_adjoint_raw(state: &GridState, step: &SemigroupStep) -> Vec<f64> {
    if step.t == 0.0 {
        return state.values().to_vec();
    }
    let mut coeffs = step.plan.adjoint_to_spectral(state.values());
    for (c, s) in coeffs.iter_mut().zip(step.symbol.iter()) {
        *c *= *s;
    }
    let spec = &step.spec;
    inverse_complex(
        &mut coeffs,
        spec.dim(),
        spec.points_per_axis(),
        spec.half_width(),
    );
    coeffs.iter().map(|c| c.re).collect()
}

/// The trajectory u(t_i) = T(t_i)u₀ at t_i = i·θ/k, i = 0..k, evaluated
/// one-shot from u₀ at every time.
pub fn trajectory(
    u0: &GridState,
    b: &DriftMatrix,
    theta: f64,
    k: usize,
) -> Result<Vec<GridState>> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid("theta must be positive and finite"));
    }
    if k == 0 {
        return Err(Error::invalid("trajectory needs at least one step"));
    }
    let mut out = Vec::with_capacity(k + 1);
    out.push(u0.clone());
    for i in 1..=k {
        let t = theta * i as f64 / k as f64;
        let step = SemigroupStep::new(u0.spec(), b, t)?;
        out.push(ou_apply(u0, &step)?);
    }
    Ok(out)
}
