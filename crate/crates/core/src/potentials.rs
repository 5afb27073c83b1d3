//! Radial scattering and mean-field profiles, the assembled force field, and
//! the limiting mean-field potential `Phi = 1_Sigma * Lambda`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::obstacles::{ObstacleConfiguration, Region, Shape, SpatialIndex, Vector};
use crate::quadrature::integrate;
use crate::scaling::{DerivedScales, ScalingParams};

/// Profile stored as nodes `(r, value, dvalue, d2value)` and interpolated
/// with quintic Hermite pieces so value and derivatives stay consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedProfile {
    r: Vec<f64>,
    value: Vec<f64>,
    dvalue: Vec<f64>,
    d2value: Vec<f64>,
}

impl TabulatedProfile {
    pub fn new(r: Vec<f64>, value: Vec<f64>, dvalue: Vec<f64>, d2value: Vec<f64>) -> Result<Self> {
        let n = r.len();
        if n < 2 || value.len() != n || dvalue.len() != n || d2value.len() != n {
            return Err(invalid("profile", "need at least two rows of equal length"));
        }
        if r[0] != 0.0 {
            return Err(invalid("profile", "table must start at r = 0"));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("profile", "r must be strictly increasing"));
        }
        let all = r.iter().chain(&value).chain(&dvalue).chain(&d2value);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("profile", "non-finite entry"));
        }
        Ok(Self {
            r,
            value,
            dvalue,
            d2value,
        })
    }

    /// Samples a profile on `n + 1` equispaced nodes.
    pub fn sample(p: &RadialPotential, n: usize) -> Result<Self> {
        let s = p.support();
        let r: Vec<f64> = (0..=n).map(|i| s * i as f64 / n as f64).collect();
        let v = r.iter().map(|&x| p.value(x)).collect();
        // one-sided at the support edge
        let d1 = r.iter().map(|&x| p.d1(x.min(s * (1.0 - 1e-15)))).collect();
        let d2 = r.iter().map(|&x| p.d2(x.min(s * (1.0 - 1e-15)))).collect();
        Self::new(r, v, d1, d2)
    }

    pub fn support(&self) -> f64 {
        *self.r.last().expect("non-empty table")
    }

    fn eval(&self, x: f64) -> (f64, f64, f64) {
        if x >= self.support() {
            return (0.0, 0.0, 0.0);
        }
        let x = x.max(0.0);
        let i = match self.r.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(self.r.len() - 2),
            Err(i) => i - 1,
        };
        let h = self.r[i + 1] - self.r[i];
        let t = (x - self.r[i]) / h;
        let (y0, y1) = (self.value[i], self.value[i + 1]);
        let (m0, m1) = (h * self.dvalue[i], h * self.dvalue[i + 1]);
        let (a0, a1) = (h * h * self.d2value[i], h * h * self.d2value[i + 1]);
        let c = [
            y0,
            m0,
            0.5 * a0,
            -10.0 * y0 - 6.0 * m0 - 1.5 * a0 + 10.0 * y1 - 4.0 * m1 + 0.5 * a1,
            15.0 * y0 + 8.0 * m0 + 1.5 * a0 - 15.0 * y1 + 7.0 * m1 - a1,
            -6.0 * y0 - 3.0 * m0 - 0.5 * a0 + 6.0 * y1 - 3.0 * m1 + 0.5 * a1,
        ];
        let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
        let dp = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
        let ddp = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
        (p, dp / h, ddp / (h * h))
    }

    /// CSV with header `r,value,dvalue,d2value`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = reader.headers()?.clone();
        let expected = ["r", "value", "dvalue", "d2value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::Parse(format!(
                "profile header must be r,value,dvalue,d2value (got {headers:?})"
            )));
        }
        let mut cols = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for rec in reader.records() {
            let rec = rec?;
            for (col, field) in cols.iter_mut().zip(rec.iter()) {
                col.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(e.to_string()))?,
                );
            }
        }
        let [r, v, d1, d2] = cols;
        Self::new(r, v, d1, d2)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "r,value,dvalue,d2value")?;
        for i in 0..self.r.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.r[i], self.value[i], self.dvalue[i], self.d2value[i]
            )?;
        }
        Ok(())
    }
}

/// A radially symmetric profile with compact support.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialPotential {
    /// `amplitude * (1 - (r/support)^2)^2`
    QuarticBump { amplitude: f64, support: f64 },
    /// `amplitude * (1 - r/support)`; kinked at the support edge.
    Cone { amplitude: f64, support: f64 },
    Zero { support: f64 },
    Tabulated(TabulatedProfile),
}

impl RadialPotential {
    /// Default scattering profile `(1 - r^2)^2`.
    pub fn default_scattering() -> Self {
        RadialPotential::QuarticBump {
            amplitude: 1.0,
            support: 1.0,
        }
    }

    /// Default mean-field profile `lambda0 (1 - (r/R)^2)^2`.
    pub fn default_mean_field(lambda0: f64, support: f64) -> Self {
        RadialPotential::QuarticBump {
            amplitude: lambda0,
            support,
        }
    }

    pub fn support(&self) -> f64 {
        match self {
            RadialPotential::QuarticBump { support, .. }
            | RadialPotential::Cone { support, .. }
            | RadialPotential::Zero { support } => *support,
            RadialPotential::Tabulated(t) => t.support(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            RadialPotential::Zero { .. } => true,
            RadialPotential::QuarticBump { amplitude, .. } | RadialPotential::Cone { amplitude, .. } => {
                *amplitude == 0.0
            }
            RadialPotential::Tabulated(t) => {
                t.value.iter().chain(&t.dvalue).chain(&t.d2value).all(|v| *v == 0.0)
            }
        }
    }

    /// `(value, first derivative, second derivative)` at radius `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        match self {
            RadialPotential::QuarticBump { amplitude, support } => {
                if r >= *support {
                    return (0.0, 0.0, 0.0);
                }
                let s = r / support;
                let w = 1.0 - s * s;
                (
                    amplitude * w * w,
                    -4.0 * amplitude * s * w / support,
                    amplitude * (12.0 * s * s - 4.0) / (support * support),
                )
            }
            RadialPotential::Cone { amplitude, support } => {
                if r >= *support {
                    (0.0, 0.0, 0.0)
                } else {
                    (amplitude * (1.0 - r / support), -amplitude / support, 0.0)
                }
            }
            RadialPotential::Zero { .. } => (0.0, 0.0, 0.0),
            RadialPotential::Tabulated(t) => t.eval(r),
        }
    }

    /// The same profile with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            RadialPotential::QuarticBump { amplitude, support } => RadialPotential::QuarticBump {
                amplitude: amplitude * factor,
                support: *support,
            },
            RadialPotential::Cone { amplitude, support } => RadialPotential::Cone {
                amplitude: amplitude * factor,
                support: *support,
            },
            RadialPotential::Zero { support } => RadialPotential::Zero { support: *support },
            RadialPotential::Tabulated(t) => {
                let mul = |v: &[f64]| v.iter().map(|x| x * factor).collect::<Vec<_>>();
                RadialPotential::Tabulated(TabulatedProfile {
                    r: t.r.clone(),
                    value: mul(&t.value),
                    dvalue: mul(&t.dvalue),
                    d2value: mul(&t.d2value),
                })
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    pub fn d1(&self, r: f64) -> f64 {
        self.eval(r).1
    }

    pub fn d2(&self, r: f64) -> f64 {
        self.eval(r).2
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value(0.0)
    }

    /// `|Lambda|` integrated over R^d.
    pub fn l1_norm(&self, dim: usize) -> f64 {
        let area = crate::scaling::sphere_area(dim, 1.0);
        integrate(
            |r| self.value(r).abs() * r.powi(dim as i32 - 1),
            0.0,
            self.support(),
            1e-14,
            1e-13,
        )
        .value
            * area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileRole {
    Scattering,
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileViolation {
    NonPositiveAtZero,
    NotMonotone,
    NonVanishingAtSupport,
    NotFlatAtOrigin,
    UnboundedSecondDerivative,
    NonFinite,
}

/// Outcome of [`validate_profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub role: ProfileRole,
    pub violations: Vec<ProfileViolation>,
    /// Largest finite-difference second derivative at the coarse and fine step.
    pub second_derivative_max: (f64, f64),
}

impl ProfileReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

const PROFILE_GRID: usize = 10_000;

/// Checks positivity, monotonicity, support and W^{2,inf} conditions on a grid.
pub fn validate_profile(p: &RadialPotential, role: ProfileRole) -> ProfileReport {
    let mut violations = Vec::new();
    let s = p.support();
    let v0 = p.value_at_zero();
    if role == ProfileRole::Scattering && !(v0 > 0.0) {
        violations.push(ProfileViolation::NonPositiveAtZero);
    }

    let grid: Vec<f64> = (0..=PROFILE_GRID)
        .map(|i| p.value(s * i as f64 / PROFILE_GRID as f64))
        .collect();
    if grid.iter().any(|v| !v.is_finite()) {
        violations.push(ProfileViolation::NonFinite);
    }
    let scale = grid.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let monotone = match role {
        ProfileRole::Scattering => grid.windows(2).all(|w| w[1] < w[0]),
        ProfileRole::MeanField => grid.windows(2).all(|w| w[1] <= w[0] + 1e-14 * scale),
    };
    if !monotone {
        violations.push(ProfileViolation::NotMonotone);
    }
    if p.value(s).abs() > 1e-12 * scale || p.value(s * (1.0 - 1e-12)).abs() > 1e-9 * scale {
        violations.push(ProfileViolation::NonVanishingAtSupport);
    }
    if p.d1(0.0).abs() > 1e-9 * scale / s {
        violations.push(ProfileViolation::NotFlatAtOrigin);
    }

    // even extension through the origin, zero beyond the support
    let ext = |r: f64| p.value(r.abs());
    let fd2_max = |h: f64| {
        let n = (1.1 * s / h).ceil() as i64;
        (-n..=n)
            .map(|k| {
                let r = k as f64 * h;
                ((ext(r + h) - 2.0 * ext(r) + ext(r - h)) / (h * h)).abs()
            })
            .fold(0.0f64, f64::max)
    };
    let coarse = fd2_max(s * 1e-3);
    let fine = fd2_max(s * 1e-5);
    if !coarse.is_finite() || !fine.is_finite() {
        violations.push(ProfileViolation::NonFinite);
    } else if fine > 4.0 * coarse + 1e-6 * scale / (s * s) {
        violations.push(ProfileViolation::UnboundedSecondDerivative);
    }
    ProfileReport {
        role,
        violations,
        second_derivative_max: (coarse, fine),
    }
}

/// `epsilon^alpha U(|x - c| / epsilon)`.
pub fn scattering_energy<const D: usize>(
    x: &Vector<D>,
    c: &Vector<D>,
    params: &ScalingParams,
    u: &RadialPotential,
) -> f64 {
    let r = (x - c).norm();
    if r >= params.epsilon {
        return 0.0;
    }
    params.coupling() * u.value(r / params.epsilon)
}

/// Everything that defines the right-hand side of the equations of motion.
#[derive(Debug, Clone)]
pub struct ForceFieldContext<const D: usize> {
    pub config: ObstacleConfiguration<D>,
    pub index: SpatialIndex<D>,
    pub scattering: RadialPotential,
    pub mean_field: RadialPotential,
    pub params: ScalingParams,
    pub scales: DerivedScales,
}

impl<const D: usize> ForceFieldContext<D> {
    pub fn new(
        config: ObstacleConfiguration<D>,
        scattering: RadialPotential,
        mean_field: RadialPotential,
        params: ScalingParams,
        scales: DerivedScales,
    ) -> Result<Self> {
        if params.dim != D {
            return Err(invalid("dim", format!("params say {} but context is {D}-d", params.dim)));
        }
        let cell = Self::radius_for(&params, &mean_field).max(Self::guard_radius_for(&params));
        let index = SpatialIndex::build(&config, cell)?;
        Ok(Self {
            config,
            index,
            scattering,
            mean_field,
            params,
            scales,
        })
    }

    fn radius_for(params: &ScalingParams, mean_field: &RadialPotential) -> f64 {
        if mean_field.is_zero() {
            params.epsilon
        } else {
            params.epsilon.max(mean_field.support())
        }
    }

    fn guard_radius_for(params: &ScalingParams) -> f64 {
        2.0 * params.epsilon
    }

    /// Radius of the shell around obstacles in which collisions must be resolved.
    pub fn guard_radius(&self) -> f64 {
        Self::guard_radius_for(&self.params)
    }

    /// Largest distance at which an obstacle exerts any force.
    pub fn interaction_radius(&self) -> f64 {
        Self::radius_for(&self.params, &self.mean_field)
    }

    fn has_mean_field(&self) -> bool {
        !self.mean_field.is_zero()
    }

    /// Total potential energy at `x`.
    pub fn potential_energy(&self, x: &Vector<D>) -> Result<f64> {
        let eps = self.params.epsilon;
        let kappa = self.params.coupling();
        let inv_mu = 1.0 / self.scales.mu;
        let mf = self.has_mean_field();
        let mut e = 0.0;
        self.index
            .for_each_within(&self.config, x, self.interaction_radius(), |_, d| {
                let r = d.norm();
                if r < eps {
                    e += kappa * self.scattering.value(r / eps);
                }
                if mf {
                    e += inv_mu * self.mean_field.value(r);
                }
            })?;
        Ok(e)
    }

    /// Whether any obstacle center lies within `r` of `x`.
    pub fn any_within(&self, x: &Vector<D>, r: f64) -> Result<bool> {
        let mut hit = false;
        self.index.for_each_within(&self.config, x, r, |_, _| hit = true)?;
        Ok(hit)
    }
}

/// Acceleration of the unit-mass test particle at `x`.
pub fn total_force<const D: usize>(x: &Vector<D>, ctx: &ForceFieldContext<D>) -> Result<Vector<D>> {
    let eps = ctx.params.epsilon;
    let pref = ctx.params.coupling() / eps;
    let inv_mu = 1.0 / ctx.scales.mu;
    let mf = ctx.has_mean_field();
    let mut f = Vector::<D>::zeros();
    ctx.index
        .for_each_within(&ctx.config, x, ctx.interaction_radius(), |_, d| {
            let r = d.norm();
            if r == 0.0 {
                return;
            }
            let dir = d / r;
            if r < eps {
                f -= dir * (pref * ctx.scattering.d1(r / eps));
            }
            if mf {
                f -= dir * (inv_mu * ctx.mean_field.d1(r));
            }
        })?;
    Ok(f)
}

/// Absolute tolerance used by [`limit_potential`] and [`limit_force`].
pub const LIMIT_TOLERANCE: f64 = 1e-8;

/// Nested integration over `region ∩ B(x, R)` of `g(x - c)`, one axis at a time.
fn integrate_over_support<const D: usize, G: Fn(&Vector<D>) -> f64>(
    x: &Vector<D>,
    region: &Region<D>,
    support: f64,
    g: &G,
    tol: f64,
) -> f64 {
    fn axis<const D: usize, G: Fn(&Vector<D>) -> f64>(
        k: usize,
        c: &mut Vector<D>,
        x: &Vector<D>,
        region: &Region<D>,
        support: f64,
        g: &G,
        tol: f64,
    ) -> f64 {
        let used_sq: f64 = (0..k).map(|j| (c[j] - x[j]).powi(2)).sum();
        let rem = support * support - used_sq;
        if rem <= 0.0 {
            return 0.0;
        }
        let half = rem.sqrt();
        let (mut lo, mut hi) = (x[k] - half, x[k] + half);
        match &region.shape {
            Shape::Box { lower, upper } => {
                lo = lo.max(lower[k]);
                hi = hi.min(upper[k]);
            }
            Shape::Ball { center, radius } => {
                let used_c: f64 = (0..k).map(|j| (c[j] - center[j]).powi(2)).sum();
                let rem_c = radius * radius - used_c;
                if rem_c <= 0.0 {
                    return 0.0;
                }
                let hc = rem_c.sqrt();
                lo = lo.max(center[k] - hc);
                hi = hi.min(center[k] + hc);
            }
        }
        if hi <= lo {
            return 0.0;
        }
        let inner_tol = tol / (hi - lo).max(1.0) * 0.1;
        let mut c_local = *c;
        integrate(
            |t| {
                c_local[k] = t;
                if k + 1 == D {
                    g(&(x - c_local))
                } else {
                    axis(k + 1, &mut c_local, x, region, support, g, inner_tol)
                }
            },
            lo,
            hi,
            tol,
            1e-13,
        )
        .value
    }
    let mut c = Vector::<D>::zeros();
    axis(0, &mut c, x, region, support, g, tol)
}

/// `Phi(x) = ∫_Sigma Lambda(x - c) dc`.
pub fn limit_potential<const D: usize>(x: &Vector<D>, region: &Region<D>, lambda: &RadialPotential) -> f64 {
    limit_potential_tol(x, region, lambda, LIMIT_TOLERANCE)
}

pub fn limit_potential_tol<const D: usize>(
    x: &Vector<D>,
    region: &Region<D>,
    lambda: &RadialPotential,
    tol: f64,
) -> f64 {
    if lambda.is_zero() {
        return 0.0;
    }
    integrate_over_support(x, region, lambda.support(), &|d: &Vector<D>| lambda.value(d.norm()), tol)
}

/// `grad Phi(x) = ∫_Sigma grad Lambda(x - c) dc`.
pub fn limit_force<const D: usize>(x: &Vector<D>, region: &Region<D>, lambda: &RadialPotential) -> Vector<D> {
    limit_force_tol(x, region, lambda, LIMIT_TOLERANCE)
}

pub fn limit_force_tol<const D: usize>(
    x: &Vector<D>,
    region: &Region<D>,
    lambda: &RadialPotential,
    tol: f64,
) -> Vector<D> {
    if lambda.is_zero() {
        return Vector::zeros();
    }
    Vector::from_fn(|i, _| {
        integrate_over_support(
            x,
            region,
            lambda.support(),
            &|d: &Vector<D>| {
                let r = d.norm();
                if r == 0.0 {
                    0.0
                } else {
                    lambda.d1(r) * d[i] / r
                }
            },
            tol,
        )
    })
}
