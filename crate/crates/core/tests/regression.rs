//! Golden regression values, frozen at the first verified run: the
//! α-sweep of the reconstruction error under a thick observation set,
//! and the maximal observability ratio of the standard ensemble on the
//! half-interval pattern.

use oulab_core::field::{GridSpec, GridState};
use oulab_core::geometry::{BoxRegion, SetRepr, ThickSet};
use oulab_core::inverse::{observability_ratio, observe, reconstruct, standard_ensemble};
use oulab_core::linops::DriftMatrix;

fn half_intervals() -> ThickSet {
    ThickSet::new(
        1,
        SetRepr::Periodic {
            periods: vec![1.0],
            base: vec![BoxRegion::new(vec![0.0], vec![0.5]).unwrap()],
        },
        0.5,
        vec![1.0],
    )
    .unwrap()
}

#[test]
fn alpha_sweep_error_decreases_then_stagnates() {
    let spec = GridSpec::new(1, 16.0, 256).unwrap();
    let u0 = GridState::gaussian(spec, &[0.3], 1.0).unwrap();
    let b = DriftMatrix::scalar(1.0).unwrap();
    let record = observe(&u0, &b, &half_intervals(), 0.5, 6).unwrap();

    let alphas = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10];
    let mut errors = Vec::new();
    for alpha in alphas {
        let (estimate, _) = reconstruct(&record, &b, alpha, 200).unwrap();
        errors.push(estimate.axpy(-1.0, &u0).unwrap().l2_norm() / u0.l2_norm());
    }
    println!("alpha sweep errors: {errors:?}");

    // Error decreases with alpha, then stagnates at the solver floor.
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "error increased along the sweep: {errors:?}");
    }
    let drop = errors[0] / errors[2];
    assert!(drop > 10.0, "no decreasing phase: {errors:?}");
    let stagnation = errors[3] / errors[4];
    assert!(
        stagnation < 50.0,
        "no stagnation phase at small alpha: {errors:?}"
    );

    // GOLDEN (first verified run).
    let golden = [
        0.07906745862512572,
        0.004762556289542815,
        0.0006127824979674675,
        0.0003874520719844651,
        0.000381099112882294,
    ];
    for (e, g) in errors.iter().zip(golden.iter()) {
        assert!(
            (e - g).abs() <= 1e-6 * g,
            "drifted from golden values: {errors:?}"
        );
    }
}

#[test]
fn observability_maximum_on_half_intervals_is_stable() {
    let spec = GridSpec::new(1, 16.0, 512).unwrap();
    let ensemble = standard_ensemble(&spec, 9, 808);
    let b = DriftMatrix::zero(1).unwrap();
    let report = observability_ratio(&ensemble, &b, &half_intervals(), 1.0, 64, 1e3).unwrap();
    println!("max observability ratio: {:.17e}", report.max_ratio);
    assert!(report.ratios.iter().all(|r| r.is_finite()));

    // GOLDEN (first verified run).
    let golden = 1.314_037_718_995_34;
    assert!(
        (report.max_ratio - golden).abs() <= 1e-6 * golden,
        "max ratio {} drifted from golden {golden}",
        report.max_ratio
    );
}
