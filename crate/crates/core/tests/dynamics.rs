//! Deterministic checks of the microscopic flow against independent oracles.

use std::f64::consts::PI;

use rand::Rng;

use lorentz_core::kinetics::{build_scattering_table, deflection_angle, landau_coefficient_b, landau_limit};
use lorentz_core::micro::{evolve, single_obstacle_deflection, step, PhaseState, StepPolicy};
use lorentz_core::obstacles::{neighbors_within, sample_configuration, ObstacleConfiguration, Region, SpatialIndex, Vector};
use lorentz_core::potentials::{total_force, ForceFieldContext, RadialPotential};
use lorentz_core::rng::stream;
use lorentz_core::scaling::{derive_scales, ScalingParams};

fn context(centers: Vec<Vector<2>>, half: f64, mu: f64, mean_field: RadialPotential) -> ForceFieldContext<2> {
    let params = ScalingParams::new(0.1, 0.25, 2, 1.0);
    let mut scales = derive_scales(&params, false).unwrap();
    scales.mu = mu;
    let region = Region::centered_cube(half).unwrap();
    let cfg = ObstacleConfiguration::from_centers(centers, region, mu, 0).unwrap();
    ForceFieldContext::new(cfg, RadialPotential::default_scattering(), mean_field, params, scales).unwrap()
}

fn random_context(seed: u64) -> ForceFieldContext<2> {
    let region = Region::<2>::centered_cube(3.0).unwrap();
    let cfg = sample_configuration(&region, 30.0, seed).unwrap();
    context(cfg.centers().to_vec(), 3.0, 30.0, RadialPotential::default_mean_field(1.0, 0.4))
}

#[test]
fn neighbor_queries_match_a_linear_scan() {
    let region = Region::<2>::centered_cube(5.0).unwrap();
    let cfg = sample_configuration(&region, 100.0, 41).unwrap();
    assert!(cfg.len() > 9000);
    let index = SpatialIndex::build(&cfg, 0.2).unwrap();
    let mut r = stream(41, 1);
    for _ in 0..1000 {
        let x = Vector::<2>::new(r.random_range(-5.5..5.5), r.random_range(-5.5..5.5));
        let rad = r.random_range(0.0..0.2);
        let fast = neighbors_within(&cfg, &index, &x, rad).unwrap();
        let slow: Vec<usize> = (0..cfg.len()).filter(|&i| (x - cfg.centers()[i]).norm() <= rad).collect();
        assert_eq!(fast, slow);
    }
}

/// Classical fourth-order Runge-Kutta for `x' = v, v' = F(x)`.
fn reference_step(s: PhaseState<2>, dt: f64, substeps: usize, ctx: &ForceFieldContext<2>) -> PhaseState<2> {
    let h = dt / substeps as f64;
    let f = |x: &Vector<2>| total_force(x, ctx).unwrap();
    let (mut x, mut v) = (s.x, s.v);
    for _ in 0..substeps {
        let (k1x, k1v) = (v, f(&x));
        let (k2x, k2v) = (v + k1v * (0.5 * h), f(&(x + k1x * (0.5 * h))));
        let (k3x, k3v) = (v + k2v * (0.5 * h), f(&(x + k2x * (0.5 * h))));
        let (k4x, k4v) = (v + k3v * h, f(&(x + k3x * h)));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    }
    PhaseState::new(x, v)
}

fn one_step_deviation(s: &PhaseState<2>, dt: f64, ctx: &ForceFieldContext<2>) -> f64 {
    let next = step(s, dt, ctx).unwrap();
    let reference = reference_step(*s, dt, 1000, ctx);
    (next.x - reference.x).norm().max((next.v - reference.v).norm())
}

#[test]
fn soft_collision_step_matches_a_reference_integration() {
    let ctx = context(vec![Vector::<2>::zeros()], 1.0, 1.0, RadialPotential::Zero { support: 0.1 });
    let dt = 0.1 / 1000.0;
    let mut s = PhaseState::new(Vector::<2>::new(-0.102, 0.03), Vector::<2>::new(1.0, 0.0));
    let mut worst: f64 = 0.0;
    // Whole passage through the support, including both edge crossings.
    while s.x.norm() <= 0.102 {
        worst = worst.max(one_step_deviation(&s, dt, &ctx));
        s = step(&s, dt, &ctx).unwrap();
    }
    assert!(worst <= 1e-8, "largest one-step deviation {worst:e}");
}

#[test]
fn one_step_error_is_third_order() {
    let ctx = context(vec![Vector::<2>::zeros()], 1.0, 1.0, RadialPotential::Zero { support: 0.1 });
    let s = PhaseState::new(Vector::<2>::new(-0.06, 0.03), Vector::<2>::new(1.0, 0.0));
    let ratio = one_step_deviation(&s, 0.002, &ctx) / one_step_deviation(&s, 0.001, &ctx);
    assert!((7.0..=9.0).contains(&ratio), "local error ratio {ratio}");
}

#[test]
fn free_flight_without_obstacles_is_exact() {
    let ctx = context(vec![], 2.0, 1.0, RadialPotential::Zero { support: 0.4 });
    let s0 = PhaseState::new(Vector::<2>::new(0.3, -0.2), Vector::<2>::new(0.6, -0.8));
    let tr = evolve(s0, 1.7, StepPolicy::Fixed(0.01), &ctx).unwrap();
    let end = tr.last();
    assert!((end.x - (s0.x + s0.v * 1.7)).norm() <= 1e-12);
    assert_eq!(end.v, s0.v);
}

#[test]
fn mean_energy_drift_is_second_order() {
    // The bump profile has a jump in U'' at its support edge; averaging over
    // generic starts removes the phase dependence of each crossing's error.
    let ctx = random_context(43);
    let mut r = stream(43, 2);
    let starts: Vec<PhaseState<2>> = (0..256)
        .map(|_| {
            let phi: f64 = r.random_range(0.0..2.0 * PI);
            PhaseState::new(
                Vector::<2>::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)),
                Vector::<2>::new(phi.cos(), phi.sin()),
            )
        })
        .collect();
    let drift = |dt: f64| {
        starts
            .iter()
            .map(|s| evolve(*s, 1.2, StepPolicy::Fixed(dt), &ctx).unwrap().max_relative_energy_drift())
            .sum::<f64>()
            / starts.len() as f64
    };
    let ratio = drift(0.004) / drift(0.002);
    assert!((3.5..=4.5).contains(&ratio), "drift ratio {ratio}");
}

#[test]
fn forward_then_backward_returns_to_the_start() {
    let ctx = random_context(44);
    let s0 = PhaseState::new(Vector::<2>::new(0.05, 0.1), Vector::<2>::new(-0.28, 0.96));
    for policy in [StepPolicy::Fixed(0.003), StepPolicy::default_for(0.1, 1.0)] {
        let fwd = evolve(s0, 1.5, policy, &ctx).unwrap();
        let back = evolve(fwd.last().reversed(), 1.5, policy, &ctx).unwrap();
        let r = back.last().reversed();
        assert!((r.x - s0.x).norm() <= 1e-9 && (r.v - s0.v).norm() <= 1e-9, "{policy:?}");
    }
}

#[test]
fn trajectory_deflection_matches_quadrature() {
    let u = RadialPotential::default_scattering();
    let md = single_obstacle_deflection(0.5, 1.0, 0.1, &u, 800).unwrap();
    let q = deflection_angle(0.5, 1.0, 0.1, &u).unwrap().theta;
    assert!((md - q).abs() <= 1e-6, "trajectory {md} vs quadrature {q}");
}

#[test]
fn landau_coefficient_approaches_the_grazing_limit() {
    let u = RadialPotential::default_scattering();
    let alpha = 0.25;
    let b: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|eps: &f64| {
            let t = build_scattering_table(&u, 1.0, eps.powf(alpha), 128, "quartic-bump").unwrap();
            landau_coefficient_b(&t, *eps, alpha).b
        })
        .collect();
    let limit = landau_limit(&u, 1.0);
    assert!((limit - 4096.0 / 2835.0).abs() <= 1e-10);
    assert!((b[2] - b[1]).abs() < (b[1] - b[0]).abs());
    let gaps: Vec<f64> = b.iter().map(|x| (x - limit).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{b:?} vs {limit}");
    assert!(gaps[2] / limit < 0.1);
}
