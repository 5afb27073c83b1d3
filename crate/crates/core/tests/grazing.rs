//! Grazing-collision limit of the linear Boltzmann operator.

use num_complex::Complex64;

use lorentz_core::kinetics::{
    apply_boltzmann, apply_landau, build_scattering_table, landau_coefficient_b, landau_limit, operator_mismatch,
    ScatteringTable,
};
use lorentz_core::potentials::RadialPotential;
use lorentz_core::spectral::SphericalField;
use lorentz_core::stats::log_log_fit;

const ALPHA: f64 = 0.25;
const SPEED: f64 = 2.0;
const SWEEP: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn table(eps: f64) -> ScatteringTable {
    build_scattering_table(&RadialPotential::default_scattering(), SPEED, eps.powf(ALPHA), 128, "quartic-bump").unwrap()
}

fn cos_modes(modes: &[usize]) -> SphericalField {
    let degree = *modes.iter().max().unwrap();
    SphericalField::from_fn(2, degree, SPEED, |v| {
        let phi = v[1].atan2(v[0]);
        Complex64::new(modes.iter().map(|k| (*k as f64 * phi).cos()).sum(), 0.0)
    })
}

#[test]
fn first_mode_converges_to_the_limiting_coefficient() {
    let u = RadialPotential::default_scattering();
    let b_star = landau_limit(&u, SPEED);
    let f = cos_modes(&[1]);
    let mut errors = Vec::new();
    for eps in SWEEP {
        let lf = apply_boltzmann(&f, &table(eps), eps, ALPHA).unwrap();
        let target = apply_landau(&f, b_star);
        errors.push(lf.sub(&target).l2_norm() / target.l2_norm());
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    // theta = kappa theta_1 + kappa^2 theta_2 + ..., so B(eps) - B* is first order in kappa.
    let fit = log_log_fit(&SWEEP, &errors).unwrap();
    assert!((fit.slope / ALPHA - 1.0).abs() < 0.2, "slope {} vs alpha {ALPHA}", fit.slope);
}

#[test]
fn first_mode_is_an_exact_eigenfunction_at_finite_epsilon() {
    for eps in SWEEP {
        let t = table(eps);
        let b = landau_coefficient_b(&t, eps, ALPHA).b;
        let f = cos_modes(&[1]);
        assert!(operator_mismatch(&f, &t, b, eps, ALPHA).unwrap() < 1e-10 * b);
    }
}

#[test]
fn higher_mode_mismatch_decays_at_twice_alpha() {
    for modes in [[2usize, 3], [3, 4]] {
        let f = cos_modes(&modes);
        let mismatch: Vec<f64> = SWEEP
            .iter()
            .map(|eps| {
                let t = table(*eps);
                let b = landau_coefficient_b(&t, *eps, ALPHA).b;
                operator_mismatch(&f, &t, b, *eps, ALPHA).unwrap()
            })
            .collect();
        let fit = log_log_fit(&SWEEP, &mismatch).unwrap();
        assert!((fit.slope / (2.0 * ALPHA) - 1.0).abs() < 0.2, "modes {modes:?}: slope {}", fit.slope);
    }
}
