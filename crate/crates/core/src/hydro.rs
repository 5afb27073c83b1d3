//! Diffusive limit: sphere averages, the pseudo-inverse of the Landau
//! operator, three routes to the diffusion coefficient, the heat equation on
//! a periodic grid, truncated Hilbert-expansion residuals and relaxation
//! rates.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinetics::apply_landau;
use crate::obstacles::Vector;
use crate::spectral::{laplace_beltrami_eigenvalue, SphereGrid, SphericalField};
use crate::stats::linear_fit;

/// `K ∫ f dsigma`.
pub fn sphere_average(f: &SphericalField) -> Complex64 {
    f.average()
}

/// Relative tolerance below which a field counts as mean-zero.
pub const MEAN_ZERO_TOL: f64 = 1e-12;

/// Pseudo-inverse of `B Delta` on mean-zero fields.
pub fn landau_inverse(f: &SphericalField, b: f64) -> Result<SphericalField> {
    if !(b > 0.0) {
        return Err(invalid("B", "must be positive"));
    }
    let avg = f.average();
    if avg.norm() > MEAN_ZERO_TOL * f.l2_norm().max(1.0) {
        return Err(Error::KernelObstruction { average: avg.norm() });
    }
    let (dim, speed) = (f.dim(), f.speed());
    Ok(f.map_modes(|n| {
        if n == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0 / (b * laplace_beltrami_eigenvalue(dim, n, speed)), 0.0)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMethod {
    Spectral,
    GreenKubo,
    Msd,
}

/// A diffusion coefficient with its provenance and error bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub method: DiffusionMethod,
    #[serde(rename = "D")]
    pub value: f64,
    pub std_error: f64,
    #[serde(rename = "d")]
    pub dim: usize,
    pub speed: f64,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    pub notes: Vec<String>,
}

impl DiffusionEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }

    pub fn has_note(&self, prefix: &str) -> bool {
        self.notes.iter().any(|n| n.starts_with(prefix))
    }
}

/// Closed form `speed^4 / (d (d - 1) B)`.
pub fn diffusion_closed_form(dim: usize, speed: f64, b: f64) -> f64 {
    speed.powi(4) / ((dim * (dim - 1)) as f64 * b)
}

/// `D = -K ∫ v_1 L^{-1} v_1 dsigma`, by spectral inversion and sphere quadrature.
pub fn diffusion_spectral(dim: usize, speed: f64, b: f64) -> Result<DiffusionEstimate> {
    let v1 = SphericalField::velocity_component(dim, speed, 0);
    let inv = landau_inverse(&v1, b)?;
    let grid = SphereGrid::exact_for(dim, speed, 4);
    let a = v1.synthesize(&grid);
    let c = inv.synthesize(&grid);
    let prod: Vec<f64> = a.iter().zip(&c).map(|(x, y)| (x * y).re).collect();
    let value = -grid.average(&prod);
    Ok(DiffusionEstimate {
        method: DiffusionMethod::Spectral,
        value,
        std_error: 0.0,
        dim,
        speed,
        b: Some(b),
        notes: vec!["index form D_ij = D delta_ij".into()],
    })
}

/// Weighted log-linear fit of `vacf` on the window `(lo, hi) * vacf(0)`.
/// Returns `(rate, rate_se, amplitude)`.
pub fn exponential_fit(times: &[f64], vacf: &[f64], std_error: &[f64], lo: f64, hi: f64) -> Result<(f64, f64, f64)> {
    let v0 = vacf[0];
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..times.len() {
        let r = vacf[i] / v0;
        if r > lo && r < hi {
            x.push(times[i]);
            y.push(vacf[i].ln());
            let rel = std_error.get(i).copied().unwrap_or(0.0) / vacf[i];
            w.push(if rel > 0.0 { 1.0 / (rel * rel) } else { 1.0 });
        }
    }
    if x.len() < 3 {
        return Err(Error::Fit("fewer than three points in the fit window".into()));
    }
    let weighted = std_error.iter().any(|s| *s > 0.0);
    let fit = linear_fit(&x, &y, weighted.then_some(w.as_slice()))?;
    Ok((-fit.slope, fit.slope_se, fit.intercept.exp()))
}

/// Fitted exponential decay rate of a VACF over `(0.05, 0.95) * vacf(0)`.
pub fn vacf_decay_rate(times: &[f64], vacf: &[f64], std_error: &[f64]) -> Result<(f64, f64)> {
    let (r, se, _) = exponential_fit(times, vacf, std_error, 0.05, 0.95)?;
    Ok((r, se))
}

/// Green-Kubo estimate `D = (1/d) ∫_0^∞ E[v . V_t] dt`.
///
/// The integral is the trapezoid rule over the samples plus an exponential
/// tail fitted where the VACF falls from 10% to 1% of its initial value.
/// `path_integral` carries the mean and standard error of per-path
/// trapezoid integrals; without it the error is the sum of weighted
/// per-point errors (an upper bound under positive correlation).
pub fn green_kubo(
    times: &[f64],
    vacf: &[f64],
    std_error: &[f64],
    dim: usize,
    speed: f64,
    path_integral: Option<(f64, f64)>,
) -> Result<DiffusionEstimate> {
    let n = times.len();
    if n < 2 || vacf.len() != n || (!std_error.is_empty() && std_error.len() != n) {
        return Err(invalid("vacf", "times and values must match"));
    }
    let mut est = DiffusionEstimate {
        method: DiffusionMethod::GreenKubo,
        value: 0.0,
        std_error: 0.0,
        dim,
        speed,
        b: None,
        notes: vec!["prefactor 1/d (index form)".into()],
    };
    let v0 = vacf[0];
    if vacf.iter().all(|v| *v == 0.0) || v0 <= 0.0 {
        est.notes.push("degenerate: vacf identically zero or non-positive at t=0".into());
        return Ok(est);
    }
    let last = vacf[n - 1];
    if last > 0.1 * v0 {
        return Err(Error::Fit(format!(
            "vacf tail {last:.3e} above 10% of initial value {v0:.3e}; longer paths needed"
        )));
    }
    if last > 0.01 * v0 {
        est.notes.push("tail above 1% of initial value".into());
    }
    let mut trap = 0.0;
    let mut err_sum = 0.0;
    for i in 1..n {
        let h = times[i] - times[i - 1];
        trap += 0.5 * h * (vacf[i] + vacf[i - 1]);
        if !std_error.is_empty() {
            err_sum += 0.5 * h * (std_error[i] + std_error[i - 1]);
        }
    }
    let tail = match exponential_fit(times, vacf, std_error, 0.01, 0.1) {
        Ok((rate, _, amp)) if rate > 0.0 => amp * (-rate * times[n - 1]).exp() / rate,
        _ => {
            est.notes.push("no tail extrapolation (window too sparse)".into());
            0.0
        }
    };
    let d = dim as f64;
    est.value = (trap + tail) / d;
    est.std_error = match path_integral {
        Some((_, se)) => se / d,
        None => err_sum / d,
    };
    Ok(est)
}

/// Mean squared displacement fit `E|x(t) - x(0)|^2 = 2 d D t + c`.
///
/// `displacements[k][i]` is particle `i`'s displacement at `times[k]`. The
/// standard error comes from per-particle slopes, so correlations between
/// times are accounted for.
pub fn msd_fit<const D: usize>(times: &[f64], displacements: &[Vec<Vector<D>>]) -> Result<(DiffusionEstimate, f64)> {
    if times.len() < 3 || displacements.len() != times.len() {
        return Err(invalid("times", "need at least three time points"));
    }
    let n_p = displacements[0].len();
    if n_p < 2 || displacements.iter().any(|d| d.len() != n_p) {
        return Err(invalid("displacements", "every time needs the same particles"));
    }
    let msd: Vec<f64> = displacements
        .iter()
        .map(|row| row.iter().map(|d| d.norm_squared()).sum::<f64>() / n_p as f64)
        .collect();
    let fit = linear_fit(times, &msd, None)?;
    // slope is linear in the data: slope = Σ_k c_k msd_k
    let mt = times.iter().sum::<f64>() / times.len() as f64;
    let sxx: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    let c: Vec<f64> = times.iter().map(|t| (t - mt) / sxx).collect();
    let per_particle: Vec<f64> = (0..n_p)
        .map(|i| (0..times.len()).map(|k| c[k] * displacements[k][i].norm_squared()).sum())
        .collect();
    let (_, slope_se) = crate::stats::mean_and_se(&per_particle);
    let d = D as f64;
    let mut notes = vec![format!("R^2 = {:.6}", fit.r_squared)];
    if fit.r_squared < 0.99 {
        notes.push("non-diffusive: R^2 below 0.99".into());
    }
    Ok((
        DiffusionEstimate {
            method: DiffusionMethod::Msd,
            value: fit.slope / (2.0 * d),
            std_error: slope_se / (2.0 * d),
            dim: D,
            speed: f64::NAN,
            b: None,
            notes,
        },
        fit.r_squared,
    ))
}

/// Cell-centred density on a uniform grid over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: Vec<usize>,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != shape.len() || shape.is_empty() {
            return Err(invalid("grid", "bounds and shape must share the dimension"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(b > a)) || shape.iter().any(|n| *n < 2) {
            return Err(invalid("grid", "need upper > lower and at least two cells per axis"));
        }
        let n = shape.iter().product();
        Ok(Self {
            lower,
            upper,
            shape,
            values: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.shape[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Centre of the cell with flat index `idx`.
    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut r = idx;
        for a in (0..self.dim()).rev() {
            let i = r % self.shape[a];
            r /= self.shape[a];
            out[a] = self.lower[a] + (i as f64 + 0.5) * self.spacing(a);
        }
        out
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, f: F) -> Result<Self> {
        let mut g = Self::zeros(lower, upper, shape)?;
        for i in 0..g.values.len() {
            g.values[i] = f(&g.center(i));
        }
        Ok(g)
    }

    /// Isotropic Gaussian of variance `var` per coordinate, sampled at cell centres.
    pub fn gaussian(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, center: &[f64], var: f64) -> Result<Self> {
        let d = shape.len() as f64;
        let norm = (2.0 * std::f64::consts::PI * var).powf(-0.5 * d);
        Self::from_fn(lower, upper, shape, |x| {
            let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
            norm * (-0.5 * r2 / var).exp()
        })
    }

    /// Normalized histogram of positions; points outside the box are wrapped
    /// periodically when `periodic`, otherwise dropped.
    pub fn histogram(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, points: &[Vec<f64>], periodic: bool) -> Result<Self> {
        let mut g = Self::zeros(lower, upper, shape)?;
        let w = 1.0 / (points.len() as f64 * g.cell_volume());
        'points: for p in points {
            let mut idx = 0usize;
            for a in 0..g.dim() {
                let l = g.upper[a] - g.lower[a];
                let mut y = p[a] - g.lower[a];
                if periodic {
                    y = y.rem_euclid(l);
                } else if !(0.0..l).contains(&y) {
                    continue 'points;
                }
                let i = ((y / g.spacing(a)) as usize).min(g.shape[a] - 1);
                idx = idx * g.shape[a] + i;
            }
            g.values[idx] += w;
        }
        Ok(g)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// `(∫ |self - other|^2)^{1/2} / (∫ |other|^2)^{1/2}` on the shared grid.
    pub fn relative_l2_distance(&self, other: &Self) -> f64 {
        let num: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = other.values.iter().map(|b| b * b).sum();
        (num / den).sqrt()
    }

    /// Second moment `∫ |x - c|^2 rho dx / mass` about `center`.
    pub fn second_moment(&self, center: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.values.len() {
            let x = self.center(i);
            s += self.values[i] * x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        s * self.cell_volume() / self.mass()
    }

    /// CSV `x1..xd,density` with bounds and shape in comments.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(":");
        let shape: Vec<String> = self.shape.iter().map(|n| n.to_string()).collect();
        writeln!(w, "# lower={}", join(&self.lower))?;
        writeln!(w, "# upper={}", join(&self.upper))?;
        writeln!(w, "# shape={}", shape.join(":"))?;
        let cols: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},density", cols.join(","))?;
        for i in 0..self.values.len() {
            let c: Vec<String> = self.center(i).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{},{}", c.join(","), self.values[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lower = None;
        let mut upper = None;
        let mut shape = None;
        let mut values = Vec::new();
        let floats = |v: &str| -> Result<Vec<f64>> {
            v.split(':')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect()
        };
        let mut header_seen = false;
        for line in r.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "lower" => lower = Some(floats(v)?),
                        "upper" => upper = Some(floats(v)?),
                        "shape" => shape = Some(floats(v)?.iter().map(|x| *x as usize).collect::<Vec<_>>()),
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let last = line.rsplit(',').next().ok_or_else(|| Error::Parse("empty row".into()))?;
            values.push(last.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
        }
        let missing = || Error::Parse("density CSV needs lower, upper and shape metadata".into());
        let mut g = Self::zeros(lower.ok_or_else(missing)?, upper.ok_or_else(missing)?, shape.ok_or_else(missing)?)?;
        if values.len() != g.values.len() {
            return Err(Error::Parse(format!("expected {} rows, got {}", g.values.len(), values.len())));
        }
        g.values = values;
        Ok(g)
    }
}

fn fft_axes(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let d = shape.len();
    for axis in 0..d {
        let n = shape[axis];
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for j in 0..n {
                    line[j] = data[base + j * stride];
                }
                fft.process(&mut line);
                for j in 0..n {
                    data[base + j * stride] = line[j];
                }
            }
        }
    }
}

/// Evolves `rho0` by the heat equation `d_t rho = D Laplace rho` with periodic
/// boundary conditions, by exact multiplication in Fourier space.
pub fn heat_solve(rho0: &DensityField, d: f64, t: f64) -> Result<DensityField> {
    if !(d > 0.0) || !(t >= 0.0) {
        return Err(invalid("D", "need D > 0 and t >= 0"));
    }
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let width = (2.0 * d * t).sqrt();
    let hmax = (0..rho0.dim()).map(|a| rho0.spacing(a)).fold(0.0, f64::max);
    if width < 2.0 * hmax {
        return Err(Error::Numeric(format!(
            "heat kernel width {width:.3e} below two grid cells ({hmax:.3e})"
        )));
    }
    let mut data: Vec<Complex64> = rho0.values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft_axes(&mut data, &rho0.shape, false);
    let total = data.len();
    let dim = rho0.dim();
    for (idx, c) in data.iter_mut().enumerate() {
        let mut r = idx;
        let mut k2 = 0.0;
        for a in (0..dim).rev() {
            let n = rho0.shape[a];
            let j = r % n;
            r /= n;
            let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let k = 2.0 * std::f64::consts::PI * m / (rho0.upper[a] - rho0.lower[a]);
            k2 += k * k;
        }
        *c *= (-d * k2 * t).exp();
    }
    fft_axes(&mut data, &rho0.shape, true);
    let scale = 1.0 / total as f64;
    let mut out = rho0.clone();
    let peak = rho0.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (o, c) in out.values.iter_mut().zip(&data) {
        let v = c.re * scale;
        *o = if v < 0.0 && v > -1e-14 * peak.max(1.0) { 0.0 } else { v };
    }
    Ok(out)
}

/// First Hilbert corrector `g1 = L^{-1}(i (xi . v) A)` for `g0 = A e^{i xi . x}`.
pub fn hilbert_g1(xi: &[f64], amplitude: Complex64, dim: usize, speed: f64, b: f64) -> Result<SphericalField> {
    if xi.len() != dim {
        return Err(invalid("xi", "wavevector length must equal dim"));
    }
    let source = SphericalField::dot_velocity(dim, speed, xi).scale(Complex64::new(0.0, 1.0) * amplitude);
    Ok(landau_inverse(&source, b)?.with_wavevector(xi.to_vec()))
}

/// Truncated Hilbert expansion for a plane wave `g0 = A(t) e^{i xi . x}`
/// evolved by the heat equation with coefficient `d_heat`.
#[derive(Debug, Clone)]
pub struct HilbertState {
    pub dim: usize,
    pub speed: f64,
    pub b: f64,
    pub d_heat: f64,
    pub xi: Vec<f64>,
    /// `A(t)`.
    pub g0: Complex64,
    /// `d A / dt`.
    pub g0_rate: Complex64,
    pub g1: SphericalField,
    pub g2: SphericalField,
    /// Sphere average of the `g2` source before projection.
    pub g2_source_mean: Complex64,
}

impl HilbertState {
    pub fn new(dim: usize, speed: f64, b: f64, d_heat: f64, xi: &[f64], amplitude: Complex64, t: f64) -> Result<Self> {
        let xi2: f64 = xi.iter().map(|x| x * x).sum();
        let g0 = amplitude * (-d_heat * xi2 * t).exp();
        let g0_rate = g0 * (-d_heat * xi2);
        let g1 = hilbert_g1(xi, g0, dim, speed, b)?;
        // source of the g2 equation: d_t g0 + v . grad_x g1 (no mean field)
        let ixv = SphericalField::dot_velocity(dim, speed, xi).scale(Complex64::new(0.0, 1.0));
        let source = ixv.mul(&g1).add(&SphericalField::constant(dim, speed, g0_rate));
        let mean = source.average();
        let projected = source.sub(&SphericalField::constant(dim, speed, mean));
        let g2 = landau_inverse(&projected, b)?.with_wavevector(xi.to_vec());
        Ok(Self {
            dim,
            speed,
            b,
            d_heat,
            xi: xi.to_vec(),
            g0,
            g0_rate,
            g1,
            g2,
            g2_source_mean: mean,
        })
    }
}

/// The four residuals of the Hilbert hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HilbertResiduals {
    /// `||L g0||`.
    pub landau_g0: f64,
    /// `|<v . grad_x g0>|`.
    pub solvability: f64,
    /// `|d_t g0 + K ∫ v . grad_x g1|`.
    pub compatibility: f64,
    /// `|<source of g2>|`.
    pub g2_source_mean: f64,
}

impl HilbertResiduals {
    pub fn max(&self) -> f64 {
        self.landau_g0
            .max(self.solvability)
            .max(self.compatibility)
            .max(self.g2_source_mean)
    }
}

pub fn hilbert_residuals(state: &HilbertState) -> HilbertResiduals {
    let (dim, speed) = (state.dim, state.speed);
    let g0_field = SphericalField::constant(dim, speed, state.g0);
    let landau_g0 = apply_landau(&g0_field, state.b).l2_norm();
    let ixv = SphericalField::dot_velocity(dim, speed, &state.xi).scale(Complex64::new(0.0, 1.0));
    let solvability = (ixv.scale(state.g0)).average().norm();
    // pointwise quadrature of K ∫ i (xi . v) g1 on a sphere grid
    let grid = SphereGrid::exact_for(dim, speed, state.g1.degree() + 2);
    let flux: Complex64 = (0..grid.len())
        .map(|j| {
            let v = grid.velocity(j);
            let xv: f64 = v.iter().zip(&state.xi).map(|(a, b)| a * b).sum();
            Complex64::new(0.0, xv) * state.g1.eval(&grid.directions[j]) * grid.weights[j]
        })
        .sum();
    HilbertResiduals {
        landau_g0,
        solvability,
        compatibility: (state.g0_rate + flux).norm(),
        g2_source_mean: state.g2_source_mean.norm(),
    }
}

impl HilbertResiduals {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("residuals serialize")
    }
}

/// `exp(t B Delta) f`.
pub fn landau_semigroup(f: &SphericalField, b: f64, t: f64) -> SphericalField {
    let (dim, speed) = (f.dim(), f.speed());
    f.map_modes(|n| Complex64::new((t * b * laplace_beltrami_eigenvalue(dim, n, speed)).exp(), 0.0))
}

/// `||g(t) - <g(t)>||` for `d_t g = time_scale * B Delta g`.
pub fn relaxation_deviation(f0: &SphericalField, b: f64, time_scale: f64, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|t| {
            let g = landau_semigroup(f0, b, time_scale * t);
            g.sub(&SphericalField::constant(g.dim(), g.speed(), g.average())).l2_norm()
        })
        .collect()
}

/// Spectral gap `(d - 1) B / speed^2` of `-B Delta` on mean-zero fields.
pub fn spectral_gap(dim: usize, speed: f64, b: f64) -> f64 {
    (dim - 1) as f64 * b / (speed * speed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    pub rate: f64,
    pub rate_se: f64,
    /// `lambda * eta^{2 delta}`.
    pub predicted: f64,
    pub degenerate: bool,
}

/// Exponential fit of a deviation trajectory against `lambda eta^{2 delta}`.
#[allow(clippy::too_many_arguments)]
pub fn relaxation_fit(
    times: &[f64],
    deviation: &[f64],
    eta: f64,
    delta: f64,
    b: f64,
    speed: f64,
    dim: usize,
) -> Result<RelaxationFit> {
    let predicted = spectral_gap(dim, speed, b) * eta.powf(2.0 * delta);
    if times.len() != deviation.len() || times.len() < 3 {
        return Err(invalid("times", "need at least three matching samples"));
    }
    let d0 = deviation[0];
    if d0 <= 1e-300 || deviation.iter().all(|d| *d <= 1e-14 * d0.max(1e-300)) {
        return Ok(RelaxationFit {
            rate: 0.0,
            rate_se: 0.0,
            predicted,
            degenerate: true,
        });
    }
    let last = *deviation.last().expect("non-empty");
    if !(last > 0.0) || (d0 / last).ln() < 3.0 {
        return Err(Error::Fit("trajectory covers fewer than three e-folds".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(deviation)
        .filter(|(_, d)| **d > 0.0)
        .map(|(t, d)| (*t, d.ln()))
        .unzip();
    let fit = linear_fit(&x, &y, None)?;
    Ok(RelaxationFit {
        rate: -fit.slope,
        rate_se: fit.slope_se,
        predicted,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn averages_of_coordinates() {
        for dim in [2, 3] {
            let one = SphericalField::constant(dim, 1.3, Complex64::new(2.5, 0.0));
            assert_eq!(sphere_average(&one), Complex64::new(2.5, 0.0));
            let v1 = SphericalField::velocity_component(dim, 1.3, 0);
            assert!(sphere_average(&v1).norm() < 1e-15);
            // quadrature oracle for <v1^2> = speed^2 / d
            let g = SphereGrid::exact_for(dim, 1.3, 2);
            let vals: Vec<f64> = (0..g.len()).map(|j| g.velocity(j)[0].powi(2)).collect();
            assert!((g.average(&vals) - 1.69 / dim as f64).abs() < 1e-10);
            assert!((sphere_average(&v1.mul(&v1)).re - 1.69 / dim as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_on_coordinates_and_kernel() {
        for dim in [2, 3] {
            let (s, b) = (1.7, 0.8);
            let vj = SphericalField::velocity_component(dim, s, dim - 1);
            let inv = landau_inverse(&vj, b).unwrap();
            let expect = vj.scale(Complex64::new(-s * s / ((dim - 1) as f64 * b), 0.0));
            assert!(inv.sub(&expect).l2_norm() < 1e-14);
            let c = SphericalField::constant(dim, s, Complex64::new(1.0, 0.0));
            assert!(matches!(landau_inverse(&c, b), Err(Error::KernelObstruction { .. })));
        }
    }

    #[test]
    fn inverse_is_right_inverse_on_mean_zero_fields() {
        let mut r = stream(2, 2);
        for dim in [2, 3] {
            let f = SphericalField::random_real(dim, 6, 1.2, &mut r);
            let f = f.sub(&SphericalField::constant(dim, 1.2, f.average()));
            let back = apply_landau(&landau_inverse(&f, 0.7).unwrap(), 0.7);
            assert!(back.sub(&f).l2_norm() < 1e-12 * f.l2_norm());
        }
    }

    #[test]
    fn spectral_diffusion_values() {
        assert!((diffusion_spectral(2, 1.0, 1.0).unwrap().value - 0.5).abs() < 1e-12);
        assert!((diffusion_spectral(3, 1.0, 1.0).unwrap().value - 1.0 / 6.0).abs() < 1e-12);
        assert!((diffusion_spectral(3, 2.0, 1.0).unwrap().value - 16.0 / 6.0).abs() < 1e-12);
        let j = diffusion_spectral(2, 1.0, 1.0).unwrap().to_json();
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["method"], "spectral");
        assert!(v["D"].as_f64().is_some() && v["B"].as_f64() == Some(1.0));
    }

    #[test]
    fn green_kubo_on_exact_vacf() {
        let times: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.0025).collect();
        let vacf: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        let est = green_kubo(&times, &vacf, &[], 2, 1.0, None).unwrap();
        assert!((est.value - 0.5).abs() < 1e-6, "{}", est.value);
        let zero = green_kubo(&times, &vec![0.0; times.len()], &[], 2, 1.0, None).unwrap();
        assert!(zero.value == 0.0 && zero.has_note("degenerate"));
        let slow: Vec<f64> = times.iter().map(|t| (-0.1 * t).exp()).collect();
        assert!(green_kubo(&times, &slow, &[], 2, 1.0, None).is_err());
        let (rate, _) = vacf_decay_rate(&times, &vacf, &[]).unwrap();
        assert!((rate - 1.0).abs() < 1e-10);
    }

    #[test]
    fn msd_flags_ballistic_motion() {
        let times = [1.0, 2.0, 3.0, 4.0, 5.0];
        let v = nalgebra::Vector2::new(0.6, 0.8);
        let disp: Vec<Vec<nalgebra::Vector2<f64>>> = times.iter().map(|t| vec![v * *t, -v * *t]).collect();
        let (est, r2) = msd_fit(&times, &disp).unwrap();
        assert!(r2 < 0.99 && est.has_note("non-diffusive"));
    }

    #[test]
    fn heat_equation_on_gaussians() {
        let lo = vec![-16.0, -16.0];
        let hi = vec![16.0, 16.0];
        let g = DensityField::gaussian(lo.clone(), hi.clone(), vec![96, 96], &[0.5, 0.0], 1.0).unwrap();
        assert_eq!(heat_solve(&g, 0.3, 0.0).unwrap(), g);
        let out = heat_solve(&g, 0.3, 2.0).unwrap();
        let expect = DensityField::gaussian(lo, hi, vec![96, 96], &[0.5, 0.0], 2.2).unwrap();
        assert!(out.relative_l2_distance(&expect) < 1e-10);
        assert!((out.mass() - g.mass()).abs() < 1e-10);
        let two = heat_solve(&heat_solve(&g, 0.3, 1.0).unwrap(), 0.3, 1.5).unwrap();
        let one = heat_solve(&g, 0.3, 2.5).unwrap();
        assert!(two.values.iter().zip(&one.values).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(heat_solve(&g, 0.3, 1e-4).is_err());
    }

    #[test]
    fn density_csv_round_trip() {
        let g = DensityField::gaussian(vec![0.0, -1.0, 0.0], vec![1.0, 1.0, 2.0], vec![3, 4, 2], &[0.5, 0.0, 1.0], 0.2).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = DensityField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.shape, g.shape);
        assert!(back.values.iter().zip(&g.values).all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs()));
    }

    #[test]
    fn hilbert_corrector_on_unit_wavevector() {
        let g1 = hilbert_g1(&[1.0, 0.0], Complex64::new(1.0, 0.0), 2, 1.0, 1.0).unwrap();
        let expect = SphericalField::velocity_component(2, 1.0, 0).scale(Complex64::new(0.0, -1.0));
        assert!(g1.sub(&expect).l2_norm() < 1e-14);
        assert!(g1.average().norm() < 1e-15);
        let zero = hilbert_g1(&[0.0, 0.0], Complex64::new(1.0, 0.0), 2, 1.0, 1.0).unwrap();
        assert_eq!(zero.l2_norm(), 0.0);
    }

    #[test]
    fn relaxation_of_an_eigenmode() {
        let f = SphericalField::constant(2, 1.0, Complex64::new(1.0, 0.0)).add(&SphericalField::velocity_component(2, 1.0, 0));
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let dev = relaxation_deviation(&f, 1.0, 1.0, &times);
        let fit = relaxation_fit(&times, &dev, 1.0, 1.0, 1.0, 1.0, 2).unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-10 && (fit.predicted - 1.0).abs() < 1e-15);
        let c = SphericalField::constant(2, 1.0, Complex64::new(1.0, 0.0));
        let flat = relaxation_deviation(&c, 1.0, 1.0, &times);
        assert!(relaxation_fit(&times, &flat, 1.0, 1.0, 1.0, 1.0, 2).unwrap().degenerate);
        assert!(relaxation_fit(&times[..5], &dev[..5], 1.0, 1.0, 1.0, 1.0, 2).is_err());
    }
}
