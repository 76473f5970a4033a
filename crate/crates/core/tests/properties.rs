//! Property tests for the structural invariants: transform round trips,
//! Parseval, norm homogeneity, and covariance-matrix ordering.

use nalgebra::DMatrix;
use proptest::prelude::*;

use oulab_core::field::{inverse_transform, transform, GridSpec, GridState};
use oulab_core::linops::{covariance, covariance_ode, unit_directions, DriftMatrix};

fn gaussian_mixture_state(params: &[(f64, f64, f64)]) -> GridState {
    let spec = GridSpec::new(1, 12.0, 128).unwrap();
    GridState::from_fn(spec, |x| {
        params
            .iter()
            .map(|(amp, center, sigma)| amp * (-(x[0] - center).powi(2) / (4.0 * sigma)).exp())
            .sum()
    })
    .unwrap()
}

fn mixture_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec(
        (
            -1.0f64..1.0,    // amplitude
            -1.5f64..1.5,    // center
            0.5f64..1.5,     // width
        ),
        1..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transform_round_trip_and_parseval(params in mixture_strategy()) {
        let state = gaussian_mixture_state(&params);
        let hat = transform(&state);
        let norm = state.l2_norm();
        // Parseval under the unitary convention.
        prop_assert!((hat.l2_norm() - norm).abs() <= 1e-10 * norm.max(1e-12));
        // Round trip.
        let back = inverse_transform(&hat).unwrap();
        let diff = state.axpy(-1.0, &back).unwrap().l2_norm();
        prop_assert!(diff <= 1e-12 * norm.max(1e-12));
    }

    #[test]
    fn l2_norm_is_absolutely_homogeneous(
        params in mixture_strategy(),
        alpha in -3.0f64..3.0,
    ) {
        let state = gaussian_mixture_state(&params);
        let lhs = state.scale(alpha).l2_norm();
        let rhs = alpha.abs() * state.l2_norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-12));
    }

    #[test]
    fn covariance_is_symmetric_monotone_and_cross_checked(
        entries in prop::collection::vec(-2.0f64..2.0, 4),
        t1 in 0.1f64..0.7,
        dt in 0.05f64..0.6,
    ) {
        let b = DriftMatrix::new(DMatrix::from_row_slice(2, 2, &entries)).unwrap();
        let t2 = t1 + dt;
        let q1 = covariance(&b, t1, 1e-10).unwrap();
        let q2 = covariance(&b, t2, 1e-10).unwrap();
        prop_assert!(q1.is_positive_definite());
        prop_assert!(q2.is_positive_definite());
        // ⟨Q_t ξ, ξ⟩ is nondecreasing in t.
        for xi in unit_directions(2, 64) {
            prop_assert!(q2.quad_form(&xi) >= q1.quad_form(&xi) - 1e-9);
        }
        // Independent route agrees.
        let q1_ode = covariance_ode(&b, t1, 1e-10).unwrap();
        for (a, c) in q1.matrix().iter().zip(q1_ode.matrix().iter()) {
            prop_assert!((a - c).abs() <= 1e-9);
        }
    }
}
