//! Spectral laboratory for the Ornstein-Uhlenbeck semigroup
//! on L²(ℝ^N), ∂_t u = Δu + Bx·∇u.
//!
//! The semigroup is evaluated through its Kolmogorov representation
//! T(t)f = S(t)(g_t ∗ f): a Fourier multiplier e^{−⟨Q_t ξ, ξ⟩} built
//! from the covariance matrices Q_t = ∫₀ᵗ e^{sB}e^{sB*} ds, followed by
//! the drift flow f ↦ f(e^{tB}x). On top of that sit the laboratory's
//! experiments: logarithmic-convexity verification, thick-set
//! observability, Tikhonov/CG reconstruction of initial data from
//! masked trajectories, and logarithmic stability curves.
//!
//! Module map:
//! - [`linops`]: flow matrices, covariance matrices, convexity constants;
//! - [`field`]: truncated-grid representation of L² states, transforms,
//!   Sobolev norms, the generator A = Δ + Bx·∇;
//! - [`semigroup`]: U(t), S(t), T(t), T(t)* and trajectory sampling;
//! - [`geometry`]: thick observation sets, masks, masked norms;
//! - [`inverse`]: convexity/observability experiments, stability bounds,
//!   reconstruction, stability sweeps.

pub mod error;
pub mod field;
pub mod geometry;
pub mod inverse;
pub mod linops;
pub mod semigroup;

pub use error::{Error, Result};
