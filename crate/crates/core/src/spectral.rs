//! Functions on the velocity sphere of radius `speed` in spectral form.
//!
//! In two dimensions the basis is `e^{i k phi}`, `|k| <= degree`. In three
//! dimensions it is the complex spherical harmonics `Y_lm` (Condon-Shortley
//! phase) rescaled by `sqrt(4 pi)`. Both bases are orthonormal for the
//! normalized surface measure `K dsigma`, so the constant-mode coefficient is
//! the sphere average and the coefficient 2-norm is the normalized L2 norm.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::quadrature::gauss_legendre;
use crate::scaling::sphere_area;

/// Quadrature nodes on the sphere with weights summing to one.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub dim: usize,
    pub speed: f64,
    /// Unit directions; the third component is zero for `dim = 2`.
    pub directions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereGrid {
    /// Grid integrating every band-limited function of degree `<= n` exactly.
    pub fn exact_for(dim: usize, speed: f64, n: usize) -> Self {
        match dim {
            2 => {
                let m = n + 1;
                let directions = (0..m)
                    .map(|j| {
                        let phi = 2.0 * PI * j as f64 / m as f64;
                        [phi.cos(), phi.sin(), 0.0]
                    })
                    .collect();
                Self {
                    dim,
                    speed,
                    directions,
                    weights: vec![1.0 / m as f64; m],
                }
            }
            3 => {
                let nt = n / 2 + 1;
                let np = n + 1;
                let (x, w) = gauss_legendre(nt);
                let mut directions = Vec::with_capacity(nt * np);
                let mut weights = Vec::with_capacity(nt * np);
                for (zi, wi) in x.iter().zip(&w) {
                    let st = (1.0 - zi * zi).sqrt();
                    for j in 0..np {
                        let phi = 2.0 * PI * j as f64 / np as f64;
                        directions.push([st * phi.cos(), st * phi.sin(), *zi]);
                        weights.push(wi / (2.0 * np as f64));
                    }
                }
                Self {
                    dim,
                    speed,
                    directions,
                    weights,
                }
            }
            _ => panic!("sphere grids exist for dim 2 and 3 only"),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Velocity at node `j`.
    pub fn velocity(&self, j: usize) -> Vec<f64> {
        self.directions[j][..self.dim].iter().map(|c| c * self.speed).collect()
    }

    /// Surface integral over the sphere of radius `speed`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        sphere_area(self.dim, self.speed) * self.average(values)
    }

    pub fn average(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// Number of basis functions of degree `<= degree`.
pub fn mode_count(dim: usize, degree: usize) -> usize {
    if dim == 2 {
        2 * degree + 1
    } else {
        (degree + 1) * (degree + 1)
    }
}

/// Index of `Y_lm` in the three-dimensional coefficient vector.
pub fn harmonic_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Eigenvalue of the Laplace-Beltrami operator on the sphere of radius `speed`
/// for modes of degree `n`.
pub fn laplace_beltrami_eigenvalue(dim: usize, n: usize, speed: f64) -> f64 {
    let n = n as f64;
    if dim == 2 {
        -n * n / (speed * speed)
    } else {
        -n * (n + 1.0) / (speed * speed)
    }
}

/// Normalized associated Legendre values `p[l][m]`, `m >= 0`, scaled so that
/// `p * e^{i m phi}` has unit mean square on the sphere.
fn legendre_table(degree: usize, z: f64) -> Vec<Vec<f64>> {
    let st = (1.0 - z * z).max(0.0).sqrt();
    let mut p = vec![vec![0.0; degree + 1]; degree + 1];
    p[0][0] = 1.0;
    for m in 1..=degree {
        p[m][m] = -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st * p[m - 1][m - 1];
    }
    for m in 0..degree {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * z * p[m][m];
    }
    for m in 0..=degree {
        for l in (m + 2)..=degree {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (z * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    p
}

/// All basis functions of degree `<= degree` at the direction of `v`.
pub fn basis_at(dim: usize, degree: usize, v: &[f64]) -> Vec<Complex64> {
    let phi = v[1].atan2(v[0]);
    match dim {
        2 => (-(degree as i64)..=degree as i64)
            .map(|k| Complex64::from_polar(1.0, k as f64 * phi))
            .collect(),
        3 => {
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let z = if r > 0.0 { (v[2] / r).clamp(-1.0, 1.0) } else { 1.0 };
            let p = legendre_table(degree, z);
            let mut out = vec![Complex64::new(0.0, 0.0); mode_count(3, degree)];
            for l in 0..=degree {
                for m in 0..=l {
                    let y = Complex64::from_polar(p[l][m], m as f64 * phi);
                    out[harmonic_index(l, m as i64)] = y;
                    if m > 0 {
                        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                        out[harmonic_index(l, -(m as i64))] = y.conj() * sign;
                    }
                }
            }
            out
        }
        _ => panic!("basis defined for dim 2 and 3 only"),
    }
}

/// A function on the sphere of radius `speed`, optionally carrying a spatial
/// wavevector `xi` for plane-wave fields `e^{i xi.x} g(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalField {
    dim: usize,
    degree: usize,
    speed: f64,
    coeffs: Vec<Complex64>,
    wavevector: Option<Vec<f64>>,
}

impl SphericalField {
    pub fn new(dim: usize, degree: usize, speed: f64, coeffs: Vec<Complex64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(invalid("dim", "spherical fields exist for dim 2 and 3"));
        }
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(invalid("speed", "must be positive"));
        }
        if coeffs.len() != mode_count(dim, degree) {
            return Err(invalid(
                "coeffs",
                format!("expected {} coefficients, got {}", mode_count(dim, degree), coeffs.len()),
            ));
        }
        Ok(Self {
            dim,
            degree,
            speed,
            coeffs,
            wavevector: None,
        })
    }

    pub fn zeros(dim: usize, degree: usize, speed: f64) -> Self {
        Self::new(dim, degree, speed, vec![Complex64::new(0.0, 0.0); mode_count(dim, degree)])
            .expect("valid dimensions")
    }

    pub fn constant(dim: usize, speed: f64, c: Complex64) -> Self {
        let mut f = Self::zeros(dim, 0, speed);
        f.coeffs[0] = c;
        f
    }

    /// Projection of `f(v)` onto modes of degree `<= degree`.
    pub fn from_fn<F: FnMut(&[f64]) -> Complex64>(dim: usize, degree: usize, speed: f64, mut f: F) -> Self {
        let grid = SphereGrid::exact_for(dim, speed, 2 * degree + 2);
        let values: Vec<Complex64> = (0..grid.len()).map(|j| f(&grid.velocity(j))).collect();
        Self::analyze(&grid, &values, degree)
    }

    /// Velocity component `v_j` (degree one).
    pub fn velocity_component(dim: usize, speed: f64, j: usize) -> Self {
        Self::from_fn(dim, 1, speed, |v| Complex64::new(v[j], 0.0))
    }

    /// The degree-one field `xi . v`.
    pub fn dot_velocity(dim: usize, speed: f64, xi: &[f64]) -> Self {
        Self::from_fn(dim, 1, speed, |v| {
            Complex64::new(v.iter().zip(xi).map(|(a, b)| a * b).sum(), 0.0)
        })
    }

    /// Random real-valued field with Gaussian coefficients.
    pub fn random_real<R: Rng + ?Sized>(dim: usize, degree: usize, speed: f64, rng: &mut R) -> Self {
        let mut f = Self::zeros(dim, degree, speed);
        let mut gauss = || -> f64 { rng.sample(StandardNormal) };
        match dim {
            2 => {
                f.coeffs[degree] = Complex64::new(gauss(), 0.0);
                for k in 1..=degree {
                    let c = Complex64::new(gauss(), gauss()) * std::f64::consts::FRAC_1_SQRT_2;
                    f.coeffs[degree + k] = c;
                    f.coeffs[degree - k] = c.conj();
                }
            }
            _ => {
                for l in 0..=degree {
                    f.coeffs[harmonic_index(l, 0)] = Complex64::new(gauss(), 0.0);
                    for m in 1..=l as i64 {
                        let c = Complex64::new(gauss(), gauss()) * std::f64::consts::FRAC_1_SQRT_2;
                        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                        f.coeffs[harmonic_index(l, m)] = c;
                        f.coeffs[harmonic_index(l, -m)] = c.conj() * sign;
                    }
                }
            }
        }
        f
    }

    /// Analysis of grid values; exact when the grid resolves degree `2 * degree`.
    pub fn analyze(grid: &SphereGrid, values: &[Complex64], degree: usize) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); mode_count(grid.dim, degree)];
        for (j, (val, w)) in values.iter().zip(&grid.weights).enumerate() {
            let b = basis_at(grid.dim, degree, &grid.directions[j]);
            for (c, bj) in coeffs.iter_mut().zip(&b) {
                *c += bj.conj() * val * w;
            }
        }
        Self::new(grid.dim, degree, grid.speed, coeffs).expect("grid has valid dimensions")
    }

    pub fn synthesize(&self, grid: &SphereGrid) -> Vec<Complex64> {
        grid.directions.iter().map(|d| self.eval(d)).collect()
    }

    /// Value at the direction of `v` (only the direction matters).
    pub fn eval(&self, v: &[f64]) -> Complex64 {
        basis_at(self.dim, self.degree, v)
            .iter()
            .zip(&self.coeffs)
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn wavevector(&self) -> Option<&[f64]> {
        self.wavevector.as_deref()
    }

    pub fn with_wavevector(mut self, xi: Vec<f64>) -> Self {
        self.wavevector = Some(xi);
        self
    }

    /// Coefficient of `e^{i k phi}` (two dimensions).
    pub fn mode(&self, k: i64) -> Complex64 {
        assert_eq!(self.dim, 2);
        if k.unsigned_abs() as usize > self.degree {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[(self.degree as i64 + k) as usize]
    }

    /// Coefficient of `Y_lm` (three dimensions).
    pub fn harmonic(&self, l: usize, m: i64) -> Complex64 {
        assert_eq!(self.dim, 3);
        if l > self.degree || m.unsigned_abs() as usize > l {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[harmonic_index(l, m)]
    }

    /// Degree (`|k|` or `l`) of the mode stored at `idx`.
    pub fn mode_degree(&self, idx: usize) -> usize {
        if self.dim == 2 {
            (idx as i64 - self.degree as i64).unsigned_abs() as usize
        } else {
            (idx as f64).sqrt().floor() as usize
        }
    }

    /// `K ∫ f dsigma`: the constant-mode coefficient.
    pub fn average(&self) -> Complex64 {
        self.coeffs[if self.dim == 2 { self.degree } else { 0 }]
    }

    /// Surface integral over the sphere of radius `speed`.
    pub fn integral(&self) -> Complex64 {
        self.average() * sphere_area(self.dim, self.speed)
    }

    pub fn is_mean_zero(&self, tol: f64) -> bool {
        self.average().norm() <= tol
    }

    /// `(K ∫ |f|^2 dsigma)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Multiplies every mode by `m(degree of mode)`.
    pub fn map_modes<M: FnMut(usize) -> Complex64>(&self, mut m: M) -> Self {
        let mut out = self.clone();
        for idx in 0..out.coeffs.len() {
            let n = self.mode_degree(idx);
            out.coeffs[idx] *= m(n);
        }
        out
    }

    /// Same function expressed with modes up to `degree` (truncates if smaller).
    pub fn resized(&self, degree: usize) -> Self {
        let mut out = Self::zeros(self.dim, degree, self.speed);
        out.wavevector = self.wavevector.clone();
        if self.dim == 2 {
            let k = degree.min(self.degree) as i64;
            for j in -k..=k {
                out.coeffs[(degree as i64 + j) as usize] = self.mode(j);
            }
        } else {
            for l in 0..=degree.min(self.degree) {
                for m in -(l as i64)..=l as i64 {
                    out.coeffs[harmonic_index(l, m)] = self.harmonic(l, m);
                }
            }
        }
        out
    }

    pub fn scale(&self, a: Complex64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        assert_eq!(self.dim, other.dim, "fields live on different spheres");
        let deg = self.degree.max(other.degree);
        let mut out = self.resized(deg);
        let b = other.resized(deg);
        for (c, d) in out.coeffs.iter_mut().zip(&b.coeffs) {
            *c += d * sign;
        }
        out
    }

    /// Pointwise product, exact on band-limited inputs.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "fields live on different spheres");
        let deg = self.degree + other.degree;
        let grid = SphereGrid::exact_for(self.dim, self.speed, 2 * deg);
        let a = self.synthesize(&grid);
        let b = other.synthesize(&grid);
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let mut out = Self::analyze(&grid, &prod, deg);
        out.wavevector = self.wavevector.clone().or_else(|| other.wavevector.clone());
        out
    }

    /// Derivative `F . grad_S f` along a constant ambient vector `F`, where
    /// `grad_S` is the tangential gradient on the sphere of radius `speed`.
    ///
    /// Note that `∫ F . grad_S f dsigma = (d-1)/speed^2 ∫ f (F . v) dsigma`,
    /// which vanishes only when `f` has no degree-one content.
    pub fn tangential_derivative(&self, force: &[f64]) -> Self {
        let deg = self.degree + 1;
        let grid = SphereGrid::exact_for(self.dim, self.speed, 2 * deg);
        let values: Vec<Complex64> = grid
            .directions
            .iter()
            .map(|d| self.tangential_derivative_at(d, force))
            .collect();
        let mut out = Self::analyze(&grid, &values, deg);
        out.wavevector = self.wavevector.clone();
        out
    }

    fn tangential_derivative_at(&self, d: &[f64; 3], force: &[f64]) -> Complex64 {
        let phi = d[1].atan2(d[0]);
        let e_phi = [-phi.sin(), phi.cos(), 0.0];
        let f_phi: f64 = (0..self.dim).map(|i| force[i] * e_phi[i]).sum();
        if self.dim == 2 {
            let dphi: Complex64 = (-(self.degree as i64)..=self.degree as i64)
                .map(|k| self.mode(k) * Complex64::new(0.0, k as f64) * Complex64::from_polar(1.0, k as f64 * phi))
                .sum();
            return dphi * f_phi / self.speed;
        }
        let z = d[2].clamp(-1.0, 1.0);
        let st = (1.0 - z * z).sqrt();
        assert!(st > 0.0, "tangential derivative grid must avoid the poles");
        let e_theta = [z * phi.cos(), z * phi.sin(), -st];
        let f_theta: f64 = (0..3).map(|i| force[i] * e_theta[i]).sum();
        let basis = basis_at(3, self.degree + 1, d);
        let cot = z / st;
        let e_minus = Complex64::from_polar(1.0, -phi);
        let mut d_theta = Complex64::new(0.0, 0.0);
        let mut d_phi_over_sin = Complex64::new(0.0, 0.0);
        for l in 0..=self.degree {
            for m in -(l as i64)..=l as i64 {
                let c = self.harmonic(l, m);
                if c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let y = basis[harmonic_index(l, m)];
                let mut dy = y * (m as f64 * cot);
                if m < l as i64 {
                    let raise = (((l as i64 - m) * (l as i64 + m + 1)) as f64).sqrt();
                    dy += e_minus * basis[harmonic_index(l, m + 1)] * raise;
                }
                d_theta += c * dy;
                d_phi_over_sin += c * y * Complex64::new(0.0, m as f64 / st);
            }
        }
        (d_theta * f_theta + d_phi_over_sin * f_phi) / self.speed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::scaling::sphere_normalization;

    fn random_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn normalization_times_quadrature_of_one_is_one() {
        for dim in [2, 3] {
            for speed in [0.5, 1.0, 2.0] {
                let g = SphereGrid::exact_for(dim, speed, 4);
                let total = g.integrate(&vec![1.0; g.len()]);
                assert!((sphere_normalization(dim, speed) * total - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn harmonics_are_orthonormal_on_exact_grid() {
        let deg = 5;
        let g = SphereGrid::exact_for(3, 1.0, 2 * deg);
        let n = mode_count(3, deg);
        let b: Vec<Vec<Complex64>> = g.directions.iter().map(|d| basis_at(3, deg, d)).collect();
        for i in 0..n {
            for j in 0..n {
                let s: Complex64 = (0..g.len()).map(|p| b[p][i] * b[p][j].conj() * g.weights[p]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).norm() < 1e-12, "{i} {j} {s}");
            }
        }
    }

    #[test]
    fn low_degree_harmonics_match_closed_forms() {
        let v = [0.3, -0.5, 0.7];
        let r = (0.83f64).sqrt();
        let b = basis_at(3, 1, &v);
        let z = v[2] / r;
        assert!((b[harmonic_index(1, 0)].re - 3f64.sqrt() * z).abs() < 1e-14);
        // Y_11 ∝ -(x + i y)
        let y11 = b[harmonic_index(1, 1)];
        let expect = Complex64::new(-v[0], -v[1]) / r * (1.5f64).sqrt();
        assert!((y11 - expect).norm() < 1e-14);
    }

    #[test]
    fn synthesis_matches_pointwise_evaluation() {
        let mut rng = stream(7, 1);
        for dim in [2, 3] {
            let f = SphericalField::random_real(dim, 6, 1.5, &mut rng);
            let g = SphereGrid::exact_for(dim, 1.5, 12);
            let back = SphericalField::analyze(&g, &f.synthesize(&g), 6);
            for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
                assert!((a - b).norm() < 1e-12);
            }
            for _ in 0..1000 {
                let d = random_direction(dim, &mut rng);
                let direct = f.eval(&d);
                let by_fn = SphericalField::from_fn(dim, 6, 1.5, |v| f.eval(v)).eval(&d);
                assert!((direct - by_fn).norm() < 1e-10);
                assert!(direct.im.abs() < 1e-10, "real field must stay real");
            }
        }
    }

    #[test]
    fn average_and_norm() {
        for dim in [2, 3] {
            let c = SphericalField::constant(dim, 2.0, Complex64::new(3.0, 0.0));
            assert_eq!(c.average(), Complex64::new(3.0, 0.0));
            let v1 = SphericalField::velocity_component(dim, 2.0, 0);
            assert!(v1.average().norm() < 1e-14);
            let v1sq = v1.mul(&v1);
            assert!((v1sq.average().re - 4.0 / dim as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn product_is_exact_for_band_limited_fields() {
        let mut rng = stream(9, 0);
        for dim in [2, 3] {
            let a = SphericalField::random_real(dim, 3, 1.0, &mut rng);
            let b = SphericalField::random_real(dim, 4, 1.0, &mut rng);
            let p = a.mul(&b);
            for _ in 0..50 {
                let d = random_direction(dim, &mut rng);
                assert!((p.eval(&d) - a.eval(&d) * b.eval(&d)).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn tangential_derivative_matches_finite_differences() {
        let mut rng = stream(10, 0);
        let speed = 1.7;
        for dim in [2, 3] {
            let f = SphericalField::random_real(dim, 4, speed, &mut rng);
            let force: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let df = f.tangential_derivative(&force);
            for _ in 0..20 {
                let u = random_direction(dim, &mut rng);
                // tangential part of F, moved along a great circle
                let fu: f64 = u.iter().zip(&force).map(|(a, b)| a * b).sum();
                let t: Vec<f64> = force.iter().zip(&u).map(|(f, u)| f - fu * u).collect();
                let h = 1e-5;
                let at = |s: f64| {
                    let p: Vec<f64> = u.iter().zip(&t).map(|(u, t)| u + s * t / speed).collect();
                    f.eval(&p)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                assert!((fd - df.eval(&u)).norm() < 1e-6 * (1.0 + fd.norm()), "{dim} {fd} {}", df.eval(&u));
            }
        }
    }

    #[test]
    fn tangential_derivative_integration_identity() {
        let mut rng = stream(11, 0);
        for dim in [2, 3] {
            let speed = 1.3;
            let f = SphericalField::random_real(dim, 5, speed, &mut rng);
            let force: Vec<f64> = (0..dim).map(|i| 0.4 + i as f64).collect();
            let lhs = f.tangential_derivative(&force).average();
            let fv = f.mul(&SphericalField::dot_velocity(dim, speed, &force)).average();
            let rhs = fv * ((dim - 1) as f64 / (speed * speed));
            assert!((lhs - rhs).norm() < 1e-12);
            // without degree-one content the average vanishes
            let g = f.map_modes(|n| Complex64::new(if n == 1 { 0.0 } else { 1.0 }, 0.0));
            assert!(g.tangential_derivative(&force).average().norm() < 1e-12);
        }
    }

    #[test]
    fn laplace_beltrami_spectrum() {
        assert_eq!(laplace_beltrami_eigenvalue(2, 3, 1.0), -9.0);
        assert_eq!(laplace_beltrami_eigenvalue(3, 2, 2.0), -1.5);
    }
}
