//! Classical scattering by one soft obstacle, the Landau coefficient of the
//! grazing-collision limit, and the two kinetic processes: the linear
//! Boltzmann jump process and spherical Brownian motion.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::obstacles::Vector;
use crate::potentials::RadialPotential;
use crate::quadrature::{barycentric_lobatto, chebyshev_lobatto, clenshaw_curtis_weights, integrate};
use crate::rng;
use crate::spectral::{laplace_beltrami_eigenvalue, SphereGrid, SphericalField};

/// Deflection angle together with the reflection warning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deflection {
    pub theta: f64,
    /// Set when the barrier `coupling * U(0)` reaches the kinetic energy.
    pub reflected: bool,
}

fn closest_approach(rho: f64, speed: f64, coupling: f64, u: &RadialPotential) -> Option<f64> {
    let f = |r: f64| 1.0 - rho * rho / (r * r) - 2.0 * coupling * u.value(r) / (speed * speed);
    let (mut lo, mut hi) = (rho.max(f64::MIN_POSITIVE), 1.0);
    if f(hi) < 0.0 {
        return None;
    }
    if f(lo) >= 0.0 {
        return Some(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = hi;
    (f(r) >= -1e-12).then_some(r)
}

fn deflection_inner(rho: f64, speed: f64, coupling: f64, u: &RadialPotential) -> Option<Deflection> {
    let reflected = 2.0 * coupling * u.value_at_zero() >= speed * speed;
    if rho >= 1.0 || coupling == 0.0 {
        return Some(Deflection { theta: 0.0, reflected });
    }
    if rho == 0.0 {
        let theta = if reflected { PI } else { 0.0 };
        return Some(Deflection { theta, reflected });
    }
    let rmin = closest_approach(rho, speed, coupling, u)?;
    let s2 = speed * speed;
    // With r = rmin + t^2 and F(rmin) = 0 the integrand 2t / (r^2 sqrt F) becomes
    // 2 / (r^2 sqrt G) with G = F / t^2 finite at t = 0.
    let g = |t: f64| {
        let h = t * t;
        let r = rmin + h;
        let du = if h > 1e-6 {
            (u.value(r) - u.value(rmin)) / h
        } else {
            u.d1(rmin + 0.5 * h)
        };
        let gval = rho * rho * (r + rmin) / (r * r * rmin * rmin) - 2.0 * coupling * du / s2;
        2.0 / (r * r * gval.max(f64::MIN_POSITIVE).sqrt())
    };
    let q = integrate(g, 0.0, (1.0 - rmin).max(0.0).sqrt(), 1e-14, 1e-14);
    let theta = PI - 2.0 * rho * q.value - 2.0 * rho.asin();
    Some(Deflection {
        theta: theta.clamp(0.0, PI),
        reflected,
    })
}

/// Deflection angle `theta(rho)` for an obstacle of unit radius.
pub fn deflection_angle(rho: f64, speed: f64, coupling: f64, u: &RadialPotential) -> Result<Deflection> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid("rho", format!("impact parameter {rho} outside [0, 1]")));
    }
    if !(speed > 0.0) || !(coupling >= 0.0) {
        return Err(invalid("speed", "speed must be positive and coupling non-negative"));
    }
    deflection_inner(rho, speed, coupling, u).ok_or(Error::RootFinder { node: 0, rho })
}

const LOOKUP_SIZE: usize = 1 << 16;

/// Deflection angles on Chebyshev-Lobatto nodes of `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ScatteringTable {
    rho: Vec<f64>,
    theta: Vec<f64>,
    weights: Vec<f64>,
    lookup: Vec<f64>,
    pub coupling: f64,
    pub speed: f64,
    pub potential_id: String,
    pub reflected: bool,
}

impl ScatteringTable {
    /// Table from given node values; `rho` must be the Chebyshev-Lobatto nodes.
    pub fn from_values(theta: Vec<f64>, coupling: f64, speed: f64, potential_id: &str) -> Result<Self> {
        if theta.len() < 65 {
            return Err(invalid("n_grid", "scattering tables need at least 64 intervals"));
        }
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > PI) {
            return Err(invalid("theta", "angles must lie in [0, pi]"));
        }
        let n = theta.len() - 1;
        let rho = chebyshev_lobatto(n, 0.0, 1.0);
        let weights = clenshaw_curtis_weights(n, 0.0, 1.0);
        let lookup = (0..=LOOKUP_SIZE)
            .map(|i| barycentric_lobatto(&rho, &theta, i as f64 / LOOKUP_SIZE as f64))
            .collect();
        Ok(Self {
            rho,
            theta,
            weights,
            lookup,
            coupling,
            speed,
            potential_id: potential_id.to_string(),
            reflected: false,
        })
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Clenshaw-Curtis weights on the nodes for integrals over `[0, 1]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Interpolated `theta(|rho|)`; zero outside the support.
    pub fn theta_at(&self, rho: f64) -> f64 {
        let r = rho.abs();
        if r >= 1.0 {
            return 0.0;
        }
        barycentric_lobatto(&self.rho, &self.theta, r).clamp(0.0, PI)
    }

    /// Linear interpolation in a dense uniform lookup; used inside the jump process.
    pub fn theta_fast(&self, rho: f64) -> f64 {
        let r = rho.abs();
        if r >= 1.0 {
            return 0.0;
        }
        let s = r * LOOKUP_SIZE as f64;
        let i = (s as usize).min(LOOKUP_SIZE - 1);
        let w = s - i as f64;
        self.lookup[i] * (1.0 - w) + self.lookup[i + 1] * w
    }

    pub fn max_theta(&self) -> f64 {
        self.theta.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_degenerate(&self) -> bool {
        self.theta.iter().all(|t| *t == 0.0)
    }

    /// No jump between neighbouring nodes exceeds ten times the local slope.
    pub fn is_continuous(&self) -> bool {
        let n = self.theta.len() - 1;
        let slope = |i: usize| (self.theta[i + 1] - self.theta[i]).abs() / (self.rho[i + 1] - self.rho[i]);
        (0..n).all(|i| {
            let neighbours = match (i.checked_sub(1), (i + 1 < n).then_some(i + 1)) {
                (Some(a), Some(b)) => slope(a).max(slope(b)),
                (Some(a), None) => slope(a),
                (None, Some(b)) => slope(b),
                (None, None) => return true,
            };
            let jump = (self.theta[i + 1] - self.theta[i]).abs();
            jump <= 10.0 * neighbours * (self.rho[i + 1] - self.rho[i]) + 1e-10
        })
    }

    /// CSV `rho,theta` with metadata comments.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# coupling={}", self.coupling)?;
        writeln!(w, "# speed={}", self.speed)?;
        writeln!(w, "# potential={}", self.potential_id)?;
        writeln!(w, "rho,theta")?;
        for (r, t) in self.rho.iter().zip(&self.theta) {
            writeln!(w, "{r},{t}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut coupling = None;
        let mut speed = None;
        let mut id = String::from("tabulated");
        let mut body = String::new();
        for line in r.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
                    match k.trim() {
                        "coupling" => coupling = Some(parse(v)?),
                        "speed" => speed = Some(parse(v)?),
                        "potential" => id = v.trim().to_string(),
                        _ => {}
                    }
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let mut theta = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            theta.push(
                rec.get(1)
                    .ok_or_else(|| Error::Parse("missing theta column".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))?,
            );
        }
        let coupling = coupling.ok_or_else(|| Error::Parse("missing coupling metadata".into()))?;
        let speed = speed.ok_or_else(|| Error::Parse("missing speed metadata".into()))?;
        Self::from_values(theta, coupling, speed, &id)
    }
}

/// Tabulates `theta` on `n_grid + 1` Chebyshev-Lobatto nodes of `[0, 1]`.
pub fn build_scattering_table(
    u: &RadialPotential,
    speed: f64,
    coupling: f64,
    n_grid: usize,
    potential_id: &str,
) -> Result<ScatteringTable> {
    if n_grid < 64 {
        return Err(invalid("n_grid", "must be at least 64"));
    }
    if !(speed > 0.0) || !(coupling >= 0.0) {
        return Err(invalid("speed", "speed must be positive and coupling non-negative"));
    }
    let rho = chebyshev_lobatto(n_grid, 0.0, 1.0);
    let mut theta = Vec::with_capacity(rho.len());
    let mut reflected = false;
    for (node, &r) in rho.iter().enumerate() {
        let d = deflection_inner(r.min(1.0), speed, coupling, u).ok_or(Error::RootFinder { node, rho: r })?;
        reflected |= d.reflected;
        theta.push(d.theta);
    }
    let mut t = ScatteringTable::from_values(theta, coupling, speed, potential_id)?;
    t.reflected = reflected;
    Ok(t)
}

/// Landau coefficient with a flag raised when some angle exceeds `pi / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandauCoefficient {
    pub b: f64,
    pub large_angle_warning: bool,
}

/// `B = (speed eps^{-2 alpha} / 2) ∫_{-1}^{1} 4 speed^2 sin^2(theta/2) d rho`.
pub fn landau_coefficient_b(table: &ScatteringTable, epsilon: f64, alpha: f64) -> LandauCoefficient {
    let s = table.speed;
    let integral: f64 = table
        .weights
        .iter()
        .zip(&table.theta)
        .map(|(w, t)| w * (0.5 * t).sin().powi(2))
        .sum();
    LandauCoefficient {
        b: 4.0 * s.powi(3) * epsilon.powf(-2.0 * alpha) * integral,
        large_angle_warning: table.max_theta() > 0.5 * PI,
    }
}

/// Landau coefficient matching the jump process in dimension `dim`.
///
/// For `dim = 2` this is [`landau_coefficient_b`]. For `dim = 3` the impact
/// parameter has density `2 rho` on `[0, 1]` and the coefficient is
/// `speed^2 * rate * E[1 - cos theta] / (dim - 1)`.
pub fn landau_coefficient_dim(table: &ScatteringTable, epsilon: f64, alpha: f64, dim: usize) -> LandauCoefficient {
    if dim == 2 {
        return landau_coefficient_b(table, epsilon, alpha);
    }
    let s = table.speed;
    let mean: f64 = table
        .weights
        .iter()
        .zip(&table.theta)
        .zip(&table.rho)
        .map(|((w, t), r)| w * 2.0 * r * (1.0 - t.cos()))
        .sum();
    let rate = 2.0 * s * epsilon.powf(-2.0 * alpha);
    LandauCoefficient {
        b: s * s * rate * mean / (dim - 1) as f64,
        large_angle_warning: table.max_theta() > 0.5 * PI,
    }
}

/// Small-coupling deflection per unit coupling,
/// `-(2 rho / speed^2) ∫_rho^1 U'(r) / sqrt(r^2 - rho^2) dr`.
pub fn born_deflection(rho: f64, speed: f64, u: &RadialPotential) -> f64 {
    if rho >= 1.0 {
        return 0.0;
    }
    // r = sqrt(rho^2 + w^2) removes the endpoint singularity
    let wmax = (1.0 - rho * rho).sqrt();
    let q = integrate(
        |w: f64| {
            let r = (rho * rho + w * w).sqrt();
            u.d1(r) / r
        },
        0.0,
        wmax,
        1e-15,
        1e-14,
    );
    -2.0 * rho * q.value / (speed * speed)
}

/// Limit `B* = lim_{eps -> 0} B(eps)` from the small-angle expansion of the
/// deflection angle.
pub fn landau_limit(u: &RadialPotential, speed: f64) -> f64 {
    let q = integrate(|r| born_deflection(r, speed, u).powi(2), 0.0, 1.0, 1e-14, 1e-12);
    speed.powi(3) * q.value
}

/// Linear extrapolation in the coupling of two coefficients to zero coupling.
pub fn extrapolate_to_zero_coupling(k1: f64, b1: f64, k2: f64, b2: f64) -> f64 {
    (b2 * k1 - b1 * k2) / (k1 - k2)
}

fn orthonormal_complement<const D: usize>(u: &Vector<D>) -> Vec<Vector<D>> {
    let mut out: Vec<Vector<D>> = Vec::with_capacity(D - 1);
    for i in 0..D {
        let mut e = Vector::<D>::zeros();
        e[i] = 1.0;
        let mut w = e - u * u.dot(&e);
        for b in &out {
            w -= b * b.dot(&w);
        }
        let n = w.norm();
        if n > 1e-8 && out.len() < D - 1 {
            out.push(w / n);
        }
    }
    out
}

/// Rotation by +90 degrees in the plane; identity on other dimensions.
fn quarter_turn<const D: usize>(u: &Vector<D>) -> Vector<D> {
    let mut j = Vector::<D>::zeros();
    j[0] = -u[1];
    j[1] = u[0];
    j
}

/// Unit normal `omega` of the reflection `v' = v - 2 (omega . v) omega`
/// producing deflection `theta`.
///
/// In two dimensions a positive `rho_signed` (particle offset from the
/// obstacle along the left normal of `v`) turns `v` counter-clockwise. In
/// three dimensions the scattering plane has a uniform random azimuth.
pub fn scattering_direction<const D: usize, R: Rng + ?Sized>(
    v: &Vector<D>,
    rho_signed: f64,
    theta: f64,
    rng: &mut R,
) -> Vector<D> {
    let u = v.normalize();
    let perp = if D == 2 {
        let sign = if rho_signed < 0.0 { 1.0 } else { -1.0 };
        quarter_turn(&u) * sign
    } else {
        let basis = orthonormal_complement(&u);
        let psi = rng.random::<f64>() * 2.0 * PI;
        basis[0] * psi.cos() + basis[1] * psi.sin()
    };
    let beta = 0.5 * (PI - theta);
    u * beta.cos() + perp * beta.sin()
}

pub fn reflect<const D: usize>(v: &Vector<D>, omega: &Vector<D>) -> Vector<D> {
    v - omega * (2.0 * omega.dot(v))
}

/// Test particle of a kinetic process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticParticle<const D: usize> {
    pub x: Vector<D>,
    pub v: Vector<D>,
    /// Absolute time of the next collision, if already drawn.
    pub clock: Option<f64>,
}

impl<const D: usize> KineticParticle<D> {
    pub fn new(x: Vector<D>, v: Vector<D>) -> Self {
        Self { x, v, clock: None }
    }
}

/// Scales of the jump process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpScales {
    /// Multiplies the transport `x' = v`.
    pub transport_scale: f64,
    /// Collisions occur at rate `2 * speed * collision_scale`.
    pub collision_scale: f64,
    /// Largest sub-step of the mean-field transport.
    pub mean_field_dt: f64,
}

/// States recorded by [`boltzmann_jump_evolve`].
#[derive(Debug, Clone)]
pub struct JumpPath<const D: usize> {
    pub times: Vec<f64>,
    pub states: Vec<(Vector<D>, Vector<D>)>,
    pub final_particle: KineticParticle<D>,
    pub collisions: usize,
    /// Largest `| |v| - speed |` seen on the path after projection.
    pub max_speed_drift: f64,
    /// Largest speed change removed by projection in mean-field steps.
    pub max_projection: f64,
}

struct Transport<'a, const D: usize> {
    speed: f64,
    scales: JumpScales,
    mean_field: Option<&'a (dyn Fn(&Vector<D>) -> Vector<D> + Sync)>,
    max_projection: f64,
}

impl<const D: usize> Transport<'_, D> {
    fn advance(&mut self, x: &mut Vector<D>, v: &mut Vector<D>, tau: f64) -> Result<()> {
        let ts = self.scales.transport_scale;
        let Some(grad) = self.mean_field else {
            *x += *v * (ts * tau);
            return Ok(());
        };
        let n = (tau / self.scales.mean_field_dt).ceil().max(1.0) as usize;
        let h = tau / n as f64;
        for _ in 0..n {
            *v -= grad(x) * (0.5 * h * ts);
            *x += *v * (h * ts);
            *v -= grad(x) * (0.5 * h * ts);
            let norm = v.norm();
            self.max_projection = self.max_projection.max((norm - self.speed).abs());
            *v *= self.speed / norm;
            let drift = (v.norm() - self.speed).abs();
            if drift > 1e-9 {
                return Err(Error::Numeric(format!("projection left speed drift {drift:e}")));
            }
        }
        Ok(())
    }
}

/// Linear Boltzmann jump process with optional mean-field force `-grad Phi`.
///
/// `sample_times` must be increasing and within `[0, t_end]`; the state at
/// each of them is recorded.
pub fn boltzmann_jump_evolve<const D: usize, R: Rng + ?Sized>(
    p: KineticParticle<D>,
    t_end: f64,
    table: &ScatteringTable,
    scales: JumpScales,
    mean_field: Option<&(dyn Fn(&Vector<D>) -> Vector<D> + Sync)>,
    sample_times: &[f64],
    rng: &mut R,
) -> Result<JumpPath<D>> {
    let speed = table.speed;
    if !(scales.transport_scale > 0.0 && scales.collision_scale > 0.0 && scales.mean_field_dt > 0.0) {
        return Err(invalid("scales", "jump-process scales must be positive"));
    }
    if ((p.v.norm() - speed) / speed).abs() > 1e-9 {
        return Err(invalid("v", "initial velocity must lie on the speed sphere"));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.iter().any(|t| *t < 0.0 || *t > t_end) {
        return Err(invalid("sample_times", "must be increasing within [0, T]"));
    }
    let rate = 2.0 * speed * scales.collision_scale;
    let mut transport = Transport {
        speed,
        scales,
        mean_field,
        max_projection: 0.0,
    };
    let (mut x, mut v) = (p.x, p.v);
    let mut t = 0.0;
    let mut next = p.clock.unwrap_or_else(|| rng.sample::<f64, _>(Exp1) / rate);
    let mut out = JumpPath {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        final_particle: p,
        collisions: 0,
        max_speed_drift: 0.0,
        max_projection: 0.0,
    };
    let mut samples = sample_times.iter().peekable();
    loop {
        let t_sample = samples.peek().map(|s| **s).unwrap_or(f64::INFINITY);
        let target = next.min(t_sample).min(t_end);
        transport.advance(&mut x, &mut v, target - t)?;
        t = target;
        if t == t_sample {
            out.times.push(t);
            out.states.push((x, v));
            samples.next();
            continue;
        }
        if t >= t_end {
            break;
        }
        // collision at t == next
        let rho = if D == 2 {
            2.0 * rng.random::<f64>() - 1.0
        } else {
            rng.random::<f64>().sqrt()
        };
        let theta = table.theta_fast(rho);
        if theta != 0.0 {
            let omega = scattering_direction(&v, rho, theta, rng);
            v = reflect(&v, &omega);
        }
        out.collisions += 1;
        out.max_speed_drift = out.max_speed_drift.max((v.norm() - speed).abs());
        next = t + rng.sample::<f64, _>(Exp1) / rate;
    }
    out.max_speed_drift = out.max_speed_drift.max((v.norm() - speed).abs());
    out.max_projection = transport.max_projection;
    out.final_particle = KineticParticle { x, v, clock: Some(next - t_end) };
    Ok(out)
}

/// Largest admissible step of [`landau_sde_evolve`].
pub fn landau_dt_limit(dim: usize, speed: f64, b: f64) -> f64 {
    0.01 * speed * speed / ((dim - 1) as f64 * b)
}

fn landau_step<const D: usize, R: Rng + ?Sized>(v: &mut Vector<D>, sigma: f64, speed: f64, rng: &mut R) {
    let mut dv = Vector::<D>::zeros();
    if D == 2 {
        let z: f64 = rng.sample(StandardNormal);
        dv = quarter_turn(v) * (sigma * z / speed);
    } else {
        for i in 0..D {
            dv[i] = rng.sample(StandardNormal);
        }
        let along = dv.dot(v) / (speed * speed);
        dv = (dv - *v * along) * sigma;
    }
    *v += dv;
    let n = v.norm();
    *v *= speed / n;
}

/// Spherical Brownian motion with generator `B Delta` on the sphere of radius
/// `|v0|`, sampled at every multiple of `dt` up to `t_end`.
pub fn landau_sde_evolve<const D: usize, R: Rng + ?Sized>(
    v0: Vector<D>,
    b: f64,
    t_end: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<Vector<D>>> {
    let speed = v0.norm();
    check_landau_step(D, speed, b, dt)?;
    let steps = (t_end / dt).round() as usize;
    let sigma = (2.0 * b * dt).sqrt();
    let mut v = v0;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(v);
    for _ in 0..steps {
        if b > 0.0 {
            landau_step(&mut v, sigma, speed, rng);
        }
        path.push(v);
    }
    Ok(path)
}

fn check_landau_step(dim: usize, speed: f64, b: f64, dt: f64) -> Result<()> {
    if !(speed > 0.0) || !(b >= 0.0) || !(dt > 0.0) {
        return Err(invalid("landau", "speed and dt must be positive, B non-negative"));
    }
    if b > 0.0 && dt > landau_dt_limit(dim, speed, b) * (1.0 + 1e-12) {
        return Err(invalid(
            "dt",
            format!("dt = {dt} exceeds {}", landau_dt_limit(dim, speed, b)),
        ));
    }
    Ok(())
}

/// Velocity autocorrelation `E[v(0) . V_t]` estimated from independent paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VacfEstimate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_paths: usize,
    /// Mean and standard error of the per-path trapezoid integral.
    pub path_integral: (f64, f64),
    /// Largest `| |v| - speed |` over every path.
    pub max_speed_drift: f64,
}

/// Settings for [`landau_vacf`].
#[derive(Debug, Clone, Copy)]
pub struct VacfSettings {
    pub dim: usize,
    pub speed: f64,
    pub b: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Record every `sample_every` steps.
    pub sample_every: usize,
    pub n_paths: usize,
    pub seed: u64,
}

const VACF_BLOCK: usize = 256;

#[derive(Clone)]
struct VacfSums {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    integral: f64,
    integral_sq: f64,
    drift: f64,
}

fn vacf_block<const D: usize>(cfg: &VacfSettings, paths: std::ops::Range<usize>, n_samples: usize) -> VacfSums {
    let mut sums = VacfSums {
        sum: vec![0.0; n_samples],
        sum_sq: vec![0.0; n_samples],
        integral: 0.0,
        integral_sq: 0.0,
        drift: 0.0,
    };
    let sigma = (2.0 * cfg.b * cfg.dt).sqrt();
    let h = cfg.dt * cfg.sample_every as f64;
    let mut row = vec![0.0; n_samples];
    for path in paths {
        let mut rng = rng::stream(cfg.seed, path as u64);
        let v0 = random_on_sphere::<D, _>(cfg.speed, &mut rng);
        let mut v = v0;
        row[0] = v0.dot(&v0);
        for r in row.iter_mut().skip(1) {
            for _ in 0..cfg.sample_every {
                landau_step(&mut v, sigma, cfg.speed, &mut rng);
            }
            *r = v0.dot(&v);
        }
        sums.drift = sums.drift.max((v.norm() - cfg.speed).abs());
        let mut integral = 0.0;
        for i in 0..n_samples {
            sums.sum[i] += row[i];
            sums.sum_sq[i] += row[i] * row[i];
            if i > 0 {
                integral += 0.5 * h * (row[i] + row[i - 1]);
            }
        }
        sums.integral += integral;
        sums.integral_sq += integral * integral;
    }
    sums
}

/// Uniform point on the sphere of radius `speed`.
pub fn random_on_sphere<const D: usize, R: Rng + ?Sized>(speed: f64, rng: &mut R) -> Vector<D> {
    loop {
        let mut g = Vector::<D>::zeros();
        for i in 0..D {
            g[i] = rng.sample(StandardNormal);
        }
        let n = g.norm();
        if n > 1e-12 {
            return g * (speed / n);
        }
    }
}

/// VACF of spherical Brownian motion started from the uniform law.
///
/// Paths are processed in fixed-size blocks reduced in order, so the result
/// does not depend on the number of worker threads.
pub fn landau_vacf(cfg: &VacfSettings) -> Result<VacfEstimate> {
    check_landau_step(cfg.dim, cfg.speed, cfg.b, cfg.dt)?;
    if cfg.sample_every == 0 || cfg.n_paths < 2 {
        return Err(invalid("vacf", "need sample_every >= 1 and at least two paths"));
    }
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let n_samples = steps / cfg.sample_every + 1;
    let blocks: Vec<_> = (0..cfg.n_paths)
        .step_by(VACF_BLOCK)
        .map(|s| s..(s + VACF_BLOCK).min(cfg.n_paths))
        .collect();
    let parts: Vec<VacfSums> = blocks
        .into_par_iter()
        .map(|r| match cfg.dim {
            2 => vacf_block::<2>(cfg, r, n_samples),
            _ => vacf_block::<3>(cfg, r, n_samples),
        })
        .collect();
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        for i in 0..n_samples {
            total.sum[i] += p.sum[i];
            total.sum_sq[i] += p.sum_sq[i];
        }
        total.integral += p.integral;
        total.integral_sq += p.integral_sq;
        total.drift = total.drift.max(p.drift);
    }
    let n = cfg.n_paths as f64;
    let mean: Vec<f64> = total.sum.iter().map(|s| s / n).collect();
    let std_error = total
        .sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let im = total.integral / n;
    let ise = ((total.integral_sq / n - im * im).max(0.0) * n / (n - 1.0) / n).sqrt();
    Ok(VacfEstimate {
        times: (0..n_samples).map(|i| (i * cfg.sample_every) as f64 * cfg.dt).collect(),
        mean,
        std_error,
        n_paths: cfg.n_paths,
        path_integral: (im, ise),
        max_speed_drift: total.drift,
    })
}

/// Writes a velocity path as CSV `t,v1..vd` with metadata comments.
pub fn write_velocity_path<const D: usize, W: Write>(
    mut w: W,
    times: &[f64],
    path: &[Vector<D>],
    metadata: &[(&str, String)],
) -> Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}={v}")?;
    }
    let cols: Vec<String> = (1..=D).map(|i| format!("v{i}")).collect();
    writeln!(w, "t,{}", cols.join(","))?;
    for (t, v) in times.iter().zip(path) {
        let vals: Vec<String> = v.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{t},{}", vals.join(","))?;
    }
    Ok(())
}

/// `B Delta f` on the sphere of radius `f.speed()`.
pub fn apply_landau(f: &SphericalField, b: f64) -> SphericalField {
    let (dim, speed) = (f.dim(), f.speed());
    f.map_modes(|n| Complex64::new(b * laplace_beltrami_eigenvalue(dim, n, speed), 0.0))
}

fn check_boltzmann_inputs(f: &SphericalField, table: &ScatteringTable) -> Result<()> {
    if f.dim() != 2 {
        return Err(invalid("dim", "the collision operator is implemented for dim = 2"));
    }
    if ((f.speed() - table.speed) / table.speed).abs() > 1e-12 {
        return Err(invalid("speed", "field and table speeds differ"));
    }
    Ok(())
}

/// Linear collision operator
/// `(L f)(v) = speed eps^{-2 alpha} ∫_{-1}^{1} (f(v'(rho)) - f(v)) d rho`
/// evaluated on synthesis points and re-analysed (two dimensions).
pub fn apply_boltzmann(f: &SphericalField, table: &ScatteringTable, epsilon: f64, alpha: f64) -> Result<SphericalField> {
    check_boltzmann_inputs(f, table)?;
    let grid = SphereGrid::exact_for(2, f.speed(), 2 * f.degree() + 2);
    let pref = table.speed * epsilon.powf(-2.0 * alpha);
    let values: Vec<Complex64> = grid
        .directions
        .iter()
        .map(|d| {
            let phi = d[1].atan2(d[0]);
            let f0 = f.eval(d);
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, th) in table.weights.iter().zip(&table.theta) {
                // rho > 0 turns the velocity by +theta, rho < 0 by -theta
                let plus = f.eval(&[(phi + th).cos(), (phi + th).sin()]);
                let minus = f.eval(&[(phi - th).cos(), (phi - th).sin()]);
                acc += (plus + minus - f0 * 2.0) * *w;
            }
            acc * pref
        })
        .collect();
    Ok(SphericalField::analyze(&grid, &values, f.degree()))
}

/// Eigenvalue of the collision operator on `e^{i k phi}`:
/// `-4 speed eps^{-2 alpha} ∫_0^1 sin^2(k theta / 2) d rho`.
pub fn boltzmann_multiplier(table: &ScatteringTable, k: usize, epsilon: f64, alpha: f64) -> f64 {
    let s: f64 = table
        .weights
        .iter()
        .zip(&table.theta)
        .map(|(w, t)| w * (0.5 * k as f64 * t).sin().powi(2))
        .sum();
    -4.0 * table.speed * epsilon.powf(-2.0 * alpha) * s
}

/// Normalized L2 norm of `(L - B Delta) f`.
pub fn operator_mismatch(f: &SphericalField, table: &ScatteringTable, b: f64, epsilon: f64, alpha: f64) -> Result<f64> {
    let l = apply_boltzmann(f, table, epsilon, alpha)?;
    Ok(l.sub(&apply_landau(f, b)).l2_norm())
}

/// `(K ∫ |d^4 f / d phi^4|^2)^{1/2}` for a two-dimensional field.
pub fn fourth_derivative_norm(f: &SphericalField) -> f64 {
    f.map_modes(|n| Complex64::new((n as f64).powi(4), 0.0)).l2_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    fn bump() -> RadialPotential {
        RadialPotential::default_scattering()
    }

    #[test]
    fn trivial_angles() {
        let u = bump();
        assert_eq!(deflection_angle(1.0, 1.0, 0.3, &u).unwrap().theta, 0.0);
        for rho in [0.0, 0.2, 0.7, 0.99] {
            assert_eq!(deflection_angle(rho, 1.0, 0.0, &u).unwrap().theta, 0.0);
        }
        let above = deflection_angle(0.0, 2.0, 0.5, &u).unwrap();
        assert!(above.theta == 0.0 && !above.reflected);
        let below = deflection_angle(0.0, 1.0, 0.6, &u).unwrap();
        assert!(below.theta == PI && below.reflected);
        assert!(deflection_angle(1.2, 1.0, 0.1, &u).is_err());
    }

    #[test]
    fn small_coupling_matches_born_limit() {
        let u = bump();
        let k = 1e-5;
        for rho in [0.1, 0.4, 0.8] {
            let th = deflection_angle(rho, 1.0, k, &u).unwrap().theta;
            let born = 16.0 / 3.0 * rho * (1.0 - rho * rho).powf(1.5) * k;
            assert!((th - born).abs() < 1e-3 * born, "{rho} {th} {born}");
            assert!((born_deflection(rho, 1.0, &u) * k - born).abs() < 1e-12 * born / k * k);
        }
    }

    #[test]
    fn landau_limit_closed_form_for_bump() {
        for s in [1.0, 2.0] {
            assert!((landau_limit(&bump(), s) - 4096.0 / 2835.0 / s).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_table_gives_constant_formula() {
        let th0 = 0.3;
        let t = ScatteringTable::from_values(vec![th0; 129], 0.1, 1.5, "const").unwrap();
        let b = landau_coefficient_b(&t, 0.01, 0.25).b;
        let expect = 4.0 * 1.5f64.powi(3) * 0.01f64.powf(-0.5) * (0.5 * th0).sin().powi(2);
        assert!((b - expect).abs() < 1e-12 * expect);
        let zero = ScatteringTable::from_values(vec![0.0; 65], 0.0, 1.0, "zero").unwrap();
        assert_eq!(landau_coefficient_b(&zero, 0.1, 0.25).b, 0.0);
        assert!(zero.is_degenerate());
    }

    #[test]
    fn table_interpolation_is_accurate() {
        let u = bump();
        let t = build_scattering_table(&u, 1.0, 0.1, 256, "bump").unwrap();
        assert!(t.is_continuous());
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            let rho = (i as f64 + 0.37) / 100.0;
            let direct = deflection_angle(rho, 1.0, 0.1, &u).unwrap().theta;
            worst = worst.max((t.theta_at(rho) - direct).abs());
            assert!((t.theta_fast(rho) - direct).abs() < 1e-6);
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!(t.theta_at(1.3), 0.0);
    }

    #[test]
    fn table_csv_round_trip() {
        let t = build_scattering_table(&bump(), 2.0, 0.2, 64, "bump").unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ScatteringTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.theta(), t.theta());
        assert_eq!(back.coupling, 0.2);
        assert_eq!(back.potential_id, "bump");
    }

    #[test]
    fn scattering_direction_produces_requested_angle() {
        let mut r = rng::stream(1, 2);
        let v = Vector2::new(0.6, 0.8);
        let th = 0.0;
        let w = scattering_direction(&v, 0.3, th, &mut r);
        assert!(w.dot(&v).abs() < 1e-15);
        assert!((reflect(&v, &w) - v).norm() < 1e-15);
        let back = reflect(&v, &scattering_direction(&v, 0.3, PI, &mut r));
        assert!((back + v).norm() < 1e-12);
        let ccw = reflect(&v, &scattering_direction(&v, 0.5, 0.1, &mut r));
        assert!(v.perp(&ccw) > 0.0);
        let cw = reflect(&v, &scattering_direction(&v, -0.5, 0.1, &mut r));
        assert!(v.perp(&cw) < 0.0);
        let v3 = Vector3::new(0.0, 0.0, 2.0);
        let w3 = reflect(&v3, &scattering_direction(&v3, 0.5, 0.4, &mut r));
        assert!((w3.norm() - 2.0).abs() < 1e-14);
        assert!((w3.dot(&v3) / 4.0 - 0.4f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn jump_process_without_deflection_is_free_transport() {
        let t = ScatteringTable::from_values(vec![0.0; 65], 0.0, 1.0, "zero").unwrap();
        let scales = JumpScales {
            transport_scale: 1.0,
            collision_scale: 3.0,
            mean_field_dt: 0.1,
        };
        let v = Vector2::new(0.0, 1.0);
        let p = KineticParticle::new(Vector2::zeros(), v);
        let mut r = rng::stream(5, 0);
        let path = boltzmann_jump_evolve(p, 4.0, &t, scales, None, &[1.0, 4.0], &mut r).unwrap();
        assert!(path.collisions > 0);
        assert_eq!(path.states[1].1, v);
        assert!((path.states[1].0 - v * 4.0).norm() < 1e-12);
    }

    #[test]
    fn jump_process_with_mean_field_keeps_speed() {
        let t = build_scattering_table(&bump(), 1.0, 0.3, 64, "bump").unwrap();
        let grad = |x: &Vector2<f64>| Vector2::new(x[0].sin(), 0.3 * x[1]);
        let scales = JumpScales {
            transport_scale: 2.0,
            collision_scale: 5.0,
            mean_field_dt: 0.01,
        };
        let p = KineticParticle::new(Vector2::new(0.2, 0.1), Vector2::new(1.0, 0.0));
        let mut r = rng::stream(6, 0);
        let path = boltzmann_jump_evolve(p, 3.0, &t, scales, Some(&grad), &[3.0], &mut r).unwrap();
        assert!(path.max_speed_drift < 1e-9);
        assert!(path.max_projection > 0.0 && path.max_projection < 0.05);
    }

    #[test]
    fn zero_coefficient_sde_path_is_constant() {
        let mut r = rng::stream(1, 1);
        let v = Vector3::new(1.0, 2.0, 2.0);
        let path = landau_sde_evolve(v, 0.0, 1.0, 0.01, &mut r).unwrap();
        assert!(path.iter().all(|p| *p == v));
        assert!(landau_sde_evolve(v, 1.0, 1.0, 0.5, &mut r).is_err());
    }

    #[test]
    fn landau_operator_on_eigenfunctions() {
        let cos = SphericalField::velocity_component(2, 1.0, 0);
        let out = apply_landau(&cos, 1.0);
        assert!((out.mode(1) + cos.mode(1)).norm() < 1e-15);
        let c = SphericalField::constant(3, 2.0, Complex64::new(1.0, 0.0));
        assert_eq!(apply_landau(&c, 3.0).l2_norm(), 0.0);
    }

    #[test]
    fn collision_operator_is_diagonal_and_matches_landau_on_first_mode() {
        let (eps, alpha, s): (f64, f64, f64) = (1e-3, 0.25, 2.0);
        let t = build_scattering_table(&bump(), s, eps.powf(alpha), 128, "bump").unwrap();
        let mut r = rng::stream(4, 4);
        let f = SphericalField::random_real(2, 5, s, &mut r);
        let lf = apply_boltzmann(&f, &t, eps, alpha).unwrap();
        for k in -5i64..=5 {
            let m = boltzmann_multiplier(&t, k.unsigned_abs() as usize, eps, alpha);
            assert!((lf.mode(k) - f.mode(k) * m).norm() < 1e-10 * (1.0 + m.abs()));
        }
        let b = landau_coefficient_b(&t, eps, alpha).b;
        assert!((boltzmann_multiplier(&t, 1, eps, alpha) + b / (s * s)).abs() < 1e-12 * b);
        let cos = SphericalField::velocity_component(2, s, 0);
        assert!(operator_mismatch(&cos, &t, b, eps, alpha).unwrap() < 1e-10);
    }
}
