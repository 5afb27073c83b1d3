//! Hamiltonian dynamics of the test particle through a quenched obstacle
//! configuration, and Monte Carlo estimates of the annealed particle law.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kinetics::random_on_sphere;
use crate::obstacles::{sample_configuration, ObstacleConfiguration, Region, Vector};
use crate::potentials::{total_force, ForceFieldContext, RadialPotential};
use crate::quadrature::gauss_legendre;
use crate::rng;
use crate::scaling::{sphere_area, sphere_normalization, DerivedScales, ScalingParams};
use crate::spectral::SphereGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState<const D: usize> {
    pub x: Vector<D>,
    pub v: Vector<D>,
}

impl<const D: usize> PhaseState<D> {
    pub fn new(x: Vector<D>, v: Vector<D>) -> Self {
        Self { x, v }
    }

    pub fn reversed(&self) -> Self {
        Self { x: self.x, v: -self.v }
    }
}

/// Largest step allowed within the guard shell around an obstacle.
pub fn collision_dt_limit(epsilon: f64, speed: f64) -> f64 {
    epsilon / (10.0 * speed)
}

/// One velocity-Verlet step (half kick, drift, half kick). `dt` may be negative.
pub fn step<const D: usize>(s: &PhaseState<D>, dt: f64, ctx: &ForceFieldContext<D>) -> Result<PhaseState<D>> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(invalid("dt", "step size must be finite and non-zero"));
    }
    let limit = collision_dt_limit(ctx.params.epsilon, s.v.norm());
    if dt.abs() > limit * (1.0 + 1e-12) && ctx.any_within(&s.x, ctx.guard_radius())? {
        return Err(Error::StepSize { dt: dt.abs(), limit });
    }
    let v_half = s.v + total_force(&s.x, ctx)? * (0.5 * dt);
    let x = s.x + v_half * dt;
    let v = v_half + total_force(&x, ctx)? * (0.5 * dt);
    Ok(PhaseState { x, v })
}

/// Step-size rule for [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// Constant step (shortened at the end to land on `T`).
    Fixed(f64),
    /// `coarse` away from obstacles, `fine` inside the guard shell.
    Adaptive { coarse: f64, fine: f64 },
}

impl StepPolicy {
    /// `eps / (2 |v|)` far from obstacles and `eps / (50 |v|)` near them.
    pub fn default_for(epsilon: f64, speed: f64) -> Self {
        StepPolicy::Adaptive {
            coarse: epsilon / (2.0 * speed),
            fine: epsilon / (50.0 * speed),
        }
    }
}

/// Recorded solution of the equations of motion.
#[derive(Debug, Clone)]
pub struct Trajectory<const D: usize> {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState<D>>,
    pub energy: Vec<f64>,
    pub config_seed: u64,
}

impl<const D: usize> Trajectory<D> {
    pub fn last(&self) -> &PhaseState<D> {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// `max_t |H(t) - H(0)| / |H(0)|`.
    pub fn max_relative_energy_drift(&self) -> f64 {
        let h0 = self.energy[0];
        self.energy.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max) / h0.abs()
    }

    /// CSV `t,x1..xd,v1..vd,H`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let xs: Vec<String> = (1..=D).map(|i| format!("x{i}")).collect();
        let vs: Vec<String> = (1..=D).map(|i| format!("v{i}")).collect();
        writeln!(w, "# config_seed={}", self.config_seed)?;
        writeln!(w, "t,{},{},H", xs.join(","), vs.join(","))?;
        for ((t, s), h) in self.times.iter().zip(&self.states).zip(&self.energy) {
            let row: Vec<String> = s.x.iter().chain(s.v.iter()).map(|c| c.to_string()).collect();
            writeln!(w, "{t},{},{h}", row.join(","))?;
        }
        Ok(())
    }
}

fn energy<const D: usize>(s: &PhaseState<D>, ctx: &ForceFieldContext<D>) -> Result<f64> {
    Ok(0.5 * s.v.norm_squared() + ctx.potential_energy(&s.x)?)
}

fn check_boundary<const D: usize>(s: &PhaseState<D>, t: f64, ctx: &ForceFieldContext<D>) -> Result<()> {
    if ctx.config.region().clearance(&s.x) < ctx.interaction_radius() {
        return Err(Error::BoundaryContact { time: t });
    }
    Ok(())
}

fn next_dt<const D: usize>(s: &PhaseState<D>, policy: StepPolicy, remaining: f64, ctx: &ForceFieldContext<D>) -> Result<f64> {
    let dt = match policy {
        StepPolicy::Fixed(dt) => dt,
        StepPolicy::Adaptive { coarse, fine } => {
            if ctx.any_within(&s.x, ctx.guard_radius())? {
                fine
            } else {
                coarse
            }
        }
    };
    Ok(dt.min(remaining))
}

fn check_policy(policy: StepPolicy, t_end: f64) -> Result<()> {
    let ok = match policy {
        StepPolicy::Fixed(dt) => dt > 0.0,
        StepPolicy::Adaptive { coarse, fine } => coarse > 0.0 && fine > 0.0 && fine <= coarse,
    };
    if !ok || !(t_end >= 0.0) {
        return Err(invalid("dt", "step sizes and horizon must be positive"));
    }
    Ok(())
}

/// Integrates to `t_end`, recording every step.
pub fn evolve<const D: usize>(
    s0: PhaseState<D>,
    t_end: f64,
    policy: StepPolicy,
    ctx: &ForceFieldContext<D>,
) -> Result<Trajectory<D>> {
    check_policy(policy, t_end)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![s0],
        energy: vec![energy(&s0, ctx)?],
        config_seed: ctx.config.seed(),
    };
    check_boundary(&s0, 0.0, ctx)?;
    let fixed_steps = match policy {
        StepPolicy::Fixed(dt) => Some((t_end / dt).ceil().max(1.0) as usize),
        _ => None,
    };
    let mut s = s0;
    let mut t = 0.0;
    let mut k = 0usize;
    while t < t_end {
        let dt = match fixed_steps {
            Some(n) => t_end / n as f64,
            None => next_dt(&s, policy, t_end - t, ctx)?,
        };
        s = step(&s, dt, ctx)?;
        k += 1;
        t = match fixed_steps {
            Some(n) if k == n => t_end,
            Some(n) => t_end * k as f64 / n as f64,
            None if t_end - (t + dt) < 1e-15 * t_end => t_end,
            None => t + dt,
        };
        check_boundary(&s, t, ctx)?;
        traj.times.push(t);
        traj.states.push(s);
        traj.energy.push(energy(&s, ctx)?);
    }
    Ok(traj)
}

/// Final state only; same stepping as [`evolve`].
pub fn evolve_to<const D: usize>(
    s0: PhaseState<D>,
    t_end: f64,
    policy: StepPolicy,
    ctx: &ForceFieldContext<D>,
) -> Result<PhaseState<D>> {
    check_policy(policy, t_end)?;
    check_boundary(&s0, 0.0, ctx)?;
    let mut s = s0;
    let mut t = 0.0;
    while t < t_end {
        let dt = next_dt(&s, policy, t_end - t, ctx)?;
        s = step(&s, dt, ctx)?;
        t = if t_end - (t + dt) < 1e-15 * t_end { t_end } else { t + dt };
        check_boundary(&s, t, ctx)?;
    }
    Ok(s)
}

/// `U^{-t}`: forward evolution of the reversed state, reversed again.
pub fn evolve_backward<const D: usize>(
    s: PhaseState<D>,
    t: f64,
    policy: StepPolicy,
    ctx: &ForceFieldContext<D>,
) -> Result<PhaseState<D>> {
    Ok(evolve_to(s.reversed(), t, policy, ctx)?.reversed())
}

/// Deflection of a particle crossing a single obstacle with impact
/// parameter `rho` (in units of the obstacle radius), from a direct
/// integration of the equations of motion with Richardson extrapolation
/// over the steps `dt` and `dt / 2`.
pub fn single_obstacle_deflection(
    rho: f64,
    speed: f64,
    coupling: f64,
    u: &RadialPotential,
    steps_per_radius: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) || !(coupling > 0.0 && coupling < 1.0) {
        return Err(invalid("rho", "need rho in [0, 1] and coupling in (0, 1)"));
    }
    // eps^alpha = coupling with alpha = 1/4
    let alpha = 0.25;
    let eps = coupling.powf(1.0 / alpha);
    let params = ScalingParams::new(eps, alpha, 2, speed);
    let mut scales = crate::scaling::derive_scales(&params, false)?;
    scales.mu = 1.0;
    let region = Region::centered_cube(10.0 * eps)?;
    let config = ObstacleConfiguration::from_centers(vec![Vector::<2>::zeros()], region, 1.0, 0)?;
    let ctx = ForceFieldContext::new(config, u.clone(), RadialPotential::Zero { support: eps }, params, scales)?;
    let run = |n: usize| -> Result<f64> {
        let dt = eps / (n as f64 * speed);
        let mut s = PhaseState::new(Vector::<2>::new(-1.5 * eps, rho * eps), Vector::<2>::new(speed, 0.0));
        let v0 = s.v;
        let mut steps = 0usize;
        loop {
            s = step(&s, dt, &ctx)?;
            steps += 1;
            if s.x.norm() > 1.5 * eps && s.x.dot(&s.v) > 0.0 {
                break;
            }
            if steps > 1_000_000_000 / n.max(1) {
                return Err(Error::Numeric("particle never left the obstacle".into()));
            }
        }
        Ok(v0.perp(&s.v).abs().atan2(v0.dot(&s.v)))
    };
    let coarse = run(steps_per_radius)?;
    let fine = run(2 * steps_per_radius)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

type DensityFn<const D: usize> = dyn Fn(&Vector<D>, &Vector<D>) -> f64 + Send + Sync;

/// Initial probability density `f0(x, v)` on `R^d x S_{|v|}`.
#[derive(Clone)]
pub struct InitialDensity<const D: usize> {
    eval: Arc<DensityFn<D>>,
    pub support_lower: Vector<D>,
    pub support_upper: Vector<D>,
    /// Upper bound of `f0`, used by rejection sampling.
    pub max_value: f64,
    pub speed: f64,
    /// Whether `f0` has two bounded derivatives.
    pub smooth: bool,
}

impl<const D: usize> std::fmt::Debug for InitialDensity<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InitialDensity")
            .field("support_lower", &self.support_lower)
            .field("support_upper", &self.support_upper)
            .field("max_value", &self.max_value)
            .field("speed", &self.speed)
            .finish()
    }
}

impl<const D: usize> InitialDensity<D> {
    pub fn new<F>(eval: F, support_lower: Vector<D>, support_upper: Vector<D>, max_value: f64, speed: f64, smooth: bool) -> Self
    where
        F: Fn(&Vector<D>, &Vector<D>) -> f64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            support_lower,
            support_upper,
            max_value,
            speed,
            smooth,
        }
    }

    /// `K c (1 - |x - center|^2 / R^2)^3_+ (1 + a v_1 / |v|)`, normalized.
    pub fn bump(center: Vector<D>, radius: f64, speed: f64, anisotropy: f64) -> Result<Self> {
        if !(radius > 0.0) || !(speed > 0.0) || !(anisotropy.abs() < 1.0) {
            return Err(invalid("f0", "need radius, speed > 0 and |anisotropy| < 1"));
        }
        // ∫_{B_R} (1 - r^2/R^2)^3 dx
        let spatial = match D {
            2 => std::f64::consts::PI * radius * radius / 4.0,
            3 => 64.0 * std::f64::consts::PI * radius.powi(3) / 315.0,
            _ => return Err(invalid("dim", "dim must be 2 or 3")),
        };
        let k = sphere_normalization(D, speed);
        let c = k / spatial;
        let eval = move |x: &Vector<D>, v: &Vector<D>| {
            let q = 1.0 - (x - center).norm_squared() / (radius * radius);
            if q <= 0.0 {
                0.0
            } else {
                c * q * q * q * (1.0 + anisotropy * v[0] / speed)
            }
        };
        let pad = Vector::<D>::repeat(radius);
        Ok(Self::new(eval, center - pad, center + pad, c * (1.0 + anisotropy.abs()), speed, true))
    }

    pub fn eval(&self, x: &Vector<D>, v: &Vector<D>) -> f64 {
        let inside = (0..D).all(|i| x[i] >= self.support_lower[i] && x[i] <= self.support_upper[i]);
        if inside {
            (self.eval)(x, v)
        } else {
            0.0
        }
    }

    /// `∫∫ f0 dx dsigma(v)` by composite Gauss-Legendre in `x` and an exact
    /// sphere rule in `v`.
    pub fn total_mass(&self, panels: usize, order: usize, sphere_degree: usize) -> f64 {
        let (gx, gw) = gauss_legendre(order);
        let grid = SphereGrid::exact_for(D, self.speed, sphere_degree);
        let area = sphere_area(D, self.speed);
        let mut nodes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(D);
        for i in 0..D {
            let (a, b) = (self.support_lower[i], self.support_upper[i]);
            let h = (b - a) / panels as f64;
            let mut ax = Vec::with_capacity(panels * order);
            for p in 0..panels {
                let c = a + (p as f64 + 0.5) * h;
                for (x, w) in gx.iter().zip(&gw) {
                    ax.push((c + 0.5 * h * x, 0.5 * h * w));
                }
            }
            nodes.push(ax);
        }
        let vel: Vec<Vector<D>> = (0..grid.len()).map(|j| Vector::<D>::from_iterator(grid.velocity(j))).collect();
        let per_axis = nodes[0].len();
        let total_points = per_axis.pow(D as u32);
        let mut sum = 0.0;
        for idx in 0..total_points {
            let mut x = Vector::<D>::zeros();
            let mut w = 1.0;
            let mut r = idx;
            for axis in nodes.iter().take(D).enumerate() {
                let (xi, wi) = axis.1[r % per_axis];
                x[axis.0] = xi;
                w *= wi;
                r /= per_axis;
            }
            let inner: f64 = vel.iter().zip(&grid.weights).map(|(v, gw)| gw * self.eval(&x, v)).sum();
            sum += w * inner;
        }
        sum * area
    }

    /// Rejection sample from `f0` on its support box times the sphere.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PhaseState<D>> {
        const MAX_PROPOSALS: usize = 1_000_000;
        for _ in 0..MAX_PROPOSALS {
            let mut x = Vector::<D>::zeros();
            for i in 0..D {
                x[i] = rng.random_range(self.support_lower[i]..=self.support_upper[i]);
            }
            let v = random_on_sphere::<D, _>(self.speed, rng);
            if rng.random::<f64>() * self.max_value < self.eval(&x, &v) {
                return Ok(PhaseState::new(x, v));
            }
        }
        Err(Error::Rejection {
            proposals: MAX_PROPOSALS,
        })
    }
}

/// Everything needed to draw a quenched configuration and its force field.
#[derive(Debug, Clone)]
pub struct MicroSetup<const D: usize> {
    pub params: ScalingParams,
    pub scales: DerivedScales,
    pub region: Region<D>,
    pub scattering: RadialPotential,
    pub mean_field: RadialPotential,
    pub policy: StepPolicy,
}

impl<const D: usize> MicroSetup<D> {
    /// Force field of the configuration with stream id `replica`.
    pub fn context(&self, seed: u64, replica: u64) -> Result<ForceFieldContext<D>> {
        let cfg = sample_configuration(&self.region, self.scales.mu, rng::child_seed(seed, replica))?;
        ForceFieldContext::new(cfg, self.scattering.clone(), self.mean_field.clone(), self.params, self.scales)
    }

    /// Configuration seen by particle `i` of [`ensemble_positions`].
    pub fn ensemble_context(&self, seed: u64, i: usize) -> Result<ForceFieldContext<D>> {
        self.context(seed ^ 0x5EED_0B57, i as u64)
    }
}

/// Monte Carlo estimate of `f_eps(x, v, t)`.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_ok: usize,
    pub failures: Vec<(usize, Error)>,
}

/// `E[f0(U^{-t}(x, v))]` over `n_configs` quenched configurations.
pub fn estimate_f<const D: usize>(
    x: Vector<D>,
    v: Vector<D>,
    t: f64,
    f0: &InitialDensity<D>,
    n_configs: usize,
    setup: &MicroSetup<D>,
    seed: u64,
) -> Result<DensityEstimate> {
    if n_configs < 2 || !(t >= 0.0) {
        return Err(invalid("n_configs", "need at least two configurations and t >= 0"));
    }
    let samples: Vec<Result<f64>> = (0..n_configs)
        .into_par_iter()
        .map(|i| {
            if t == 0.0 {
                return Ok(f0.eval(&x, &v));
            }
            let ctx = setup.context(seed, i as u64)?;
            let back = evolve_backward(PhaseState::new(x, v), t, setup.policy, &ctx)?;
            Ok(f0.eval(&back.x, &back.v))
        })
        .collect();
    let mut ok = Vec::with_capacity(n_configs);
    let mut failures = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        match s {
            Ok(val) => ok.push(val),
            Err(e) => failures.push((i, e)),
        }
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let var = ok.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(DensityEstimate {
        mean,
        std_error: (var / n).sqrt(),
        n_ok: ok.len(),
        failures,
    })
}

/// Particle states at requested times; particle `i` moves through its own
/// quenched configuration.
#[derive(Debug, Clone)]
pub struct EnsembleSample<const D: usize> {
    pub times: Vec<f64>,
    /// `states[k][i]` is particle `i` at `times[k]`.
    pub states: Vec<Vec<PhaseState<D>>>,
}

impl<const D: usize> EnsembleSample<D> {
    pub fn positions(&self, k: usize) -> Vec<Vector<D>> {
        self.states[k].iter().map(|s| s.x).collect()
    }

    /// CSV `replica,t,x1..xd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let xs: Vec<String> = (1..=D).map(|i| format!("x{i}")).collect();
        writeln!(w, "replica,t,{}", xs.join(","))?;
        for (t, row) in self.times.iter().zip(&self.states) {
            for (i, s) in row.iter().enumerate() {
                let vals: Vec<String> = s.x.iter().map(|c| c.to_string()).collect();
                writeln!(w, "{i},{t},{}", vals.join(","))?;
            }
        }
        Ok(())
    }
}

/// Pushes `n_particles` samples of `f0` forward to each time in `times`.
pub fn ensemble_positions<const D: usize>(
    f0: &InitialDensity<D>,
    times: &[f64],
    n_particles: usize,
    setup: &MicroSetup<D>,
    seed: u64,
) -> Result<EnsembleSample<D>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| *t < 0.0) {
        return Err(invalid("times", "must be non-negative and increasing"));
    }
    let per_particle: Vec<Result<Vec<PhaseState<D>>>> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut s = f0.sample(&mut r)?;
            let ctx = setup.ensemble_context(seed, i)?;
            let mut out = Vec::with_capacity(times.len());
            let mut t = 0.0;
            for &target in times {
                if target > t {
                    s = evolve_to(s, target - t, setup.policy, &ctx)?;
                    t = target;
                }
                out.push(s);
            }
            Ok(out)
        })
        .collect();
    let mut states = vec![Vec::with_capacity(n_particles); times.len()];
    for p in per_particle {
        for (k, s) in p?.into_iter().enumerate() {
            states[k].push(s);
        }
    }
    Ok(EnsembleSample {
        times: times.to_vec(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::derive_scales;
    use nalgebra::Vector2;

    fn setup(mu: f64, lambda: RadialPotential, half: f64) -> (MicroSetup<2>, ForceFieldContext<2>) {
        let params = ScalingParams::new(0.1, 0.25, 2, 1.0);
        let mut scales = derive_scales(&params, false).unwrap();
        scales.mu = mu;
        let region = Region::centered_cube(half).unwrap();
        let s = MicroSetup {
            params,
            scales,
            region,
            scattering: RadialPotential::default_scattering(),
            mean_field: lambda,
            policy: StepPolicy::default_for(0.1, 1.0),
        };
        let ctx = s.context(3, 0).unwrap();
        (s, ctx)
    }

    #[test]
    fn free_flight_is_exact() {
        let (_, ctx) = setup(0.0, RadialPotential::Zero { support: 0.1 }, 5.0);
        let s0 = PhaseState::new(Vector2::new(0.1, -0.2), Vector2::new(0.6, 0.8));
        let s1 = step(&s0, 0.3, &ctx).unwrap();
        assert_eq!(s1.v, s0.v);
        assert!((s1.x - (s0.x + s0.v * 0.3)).norm() < 1e-16);
        let traj = evolve(s0, 2.0, StepPolicy::Fixed(0.07), &ctx).unwrap();
        assert!((traj.last().x - (s0.x + s0.v * 2.0)).norm() < 1e-13);
        assert_eq!(*traj.times.last().unwrap(), 2.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn step_guard_near_obstacles() {
        let (_, ctx) = setup(30.0, RadialPotential::Zero { support: 0.1 }, 2.0);
        let c = ctx.config.centers()[0];
        let s = PhaseState::new(c + Vector2::new(0.15, 0.0), Vector2::new(-1.0, 0.0));
        assert!(matches!(step(&s, 0.05, &ctx), Err(Error::StepSize { .. })));
        assert!(step(&s, 0.01, &ctx).is_ok());
    }

    #[test]
    fn step_then_reverse_step_is_identity() {
        let (_, ctx) = setup(30.0, RadialPotential::default_mean_field(1.0, 0.4), 2.0);
        let c = ctx.config.centers()[0];
        let s = PhaseState::new(c + Vector2::new(0.03, 0.02), Vector2::new(-1.0, 0.2));
        let back = step(&step(&s, 0.004, &ctx).unwrap(), -0.004, &ctx).unwrap();
        assert!((back.x - s.x).norm() <= 1e-12 * s.x.norm().max(1.0));
        assert!((back.v - s.v).norm() <= 1e-12 * s.v.norm());
    }

    #[test]
    fn head_on_passage_keeps_direction() {
        let u = RadialPotential::default_scattering();
        let th = single_obstacle_deflection(0.0, 2.0, 0.1, &u, 200).unwrap();
        assert!(th.abs() < 1e-12);
    }

    #[test]
    fn boundary_contact_is_reported() {
        let (_, ctx) = setup(0.0, RadialPotential::Zero { support: 0.1 }, 1.0);
        let s0 = PhaseState::new(Vector2::zeros(), Vector2::new(1.0, 0.0));
        assert!(matches!(
            evolve(s0, 2.0, StepPolicy::Fixed(0.01), &ctx),
            Err(Error::BoundaryContact { .. })
        ));
    }

    #[test]
    fn bump_density_is_normalized() {
        let f0 = InitialDensity::bump(Vector2::new(0.2, 0.0), 0.7, 1.3, 0.4).unwrap();
        assert!((f0.total_mass(16, 8, 4) - 1.0).abs() < 1e-6);
        let f3 = InitialDensity::bump(nalgebra::Vector3::new(0.0, 0.1, 0.0), 0.5, 1.0, 0.2).unwrap();
        assert!((f3.total_mass(8, 8, 4) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_estimate_at_time_zero_is_exact() {
        let (s, _) = setup(10.0, RadialPotential::Zero { support: 0.1 }, 3.0);
        let f0 = InitialDensity::bump(Vector2::zeros(), 0.5, 1.0, 0.3).unwrap();
        let x = Vector2::new(0.1, 0.1);
        let v = Vector2::new(0.0, 1.0);
        let e = estimate_f(x, v, 0.0, &f0, 10, &s, 1).unwrap();
        assert_eq!(e.mean, f0.eval(&x, &v));
        assert_eq!(e.std_error, 0.0);
    }
}
