use lettuce_core::fitting::{self, FitSpec, MassKind, SyntheticSpec};
use lettuce_core::model::PlantParams;

const FREE: [&str; 3] = ["k_l", "sigma_c", "psi"];

fn spec_for(truth: &PlantParams) -> FitSpec {
    let mut guess = truth.to_array();
    let spec = FitSpec::default().free_only(&FREE).unwrap();
    for name in FREE {
        let i = PlantParams::index_of(name).unwrap();
        guess[i] *= 1.2;
    }
    // Fixed parameters sit at their true values.
    FitSpec { initial: PlantParams::from_array(guess).unwrap(), ..spec }
}

#[test]
fn noise_free_recovery_of_three_parameters() {
    let data = fitting::generate_synthetic(&SyntheticSpec {
        series_count: 4,
        min_observations: 12,
        max_observations: 12,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for s in &data {
        let spec = spec_for(&s.truth);
        let r = fitting::fit(&spec, &s.series).unwrap();
        let (got, want) = (r.params.to_array(), s.truth.to_array());
        for name in FREE {
            let i = PlantParams::index_of(name).unwrap();
            let rel = (got[i] - want[i]).abs() / want[i];
            assert!(rel < 0.05, "{}: {name} off by {rel:.4} ({} iterations)", s.series.plant_id, r.iterations);
        }
        assert!(r.nrmse < 0.02, "nrmse {}", r.nrmse);
    }
}

#[test]
fn fresh_mass_input_is_converted() {
    let data = fitting::generate_synthetic(&SyntheticSpec {
        series_count: 1,
        min_observations: 8,
        max_observations: 8,
        kind: MassKind::Fresh,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let s = &data[0];
    let spec = FitSpec { initial: s.truth, ..FitSpec::default() };
    let r = fitting::fit(&spec, &s.series).unwrap();
    assert!(r.cost < 1e-12);
    assert!(r.converged);
}
