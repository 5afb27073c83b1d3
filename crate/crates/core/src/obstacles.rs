//! Quenched Poisson obstacle configurations and the spatial hash used for
//! range queries against them.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::SVector;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub type Vector<const D: usize> = SVector<f64, D>;

/// Largest expected obstacle count we are willing to allocate.
pub const MAX_EXPECTED_OBSTACLES: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape<const D: usize> {
    Box { lower: Vector<D>, upper: Vector<D> },
    Ball { center: Vector<D>, radius: f64 },
}

/// Bounded region holding obstacle centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Region<const D: usize> {
    pub shape: Shape<D>,
    /// Periodic wrap; boxes only.
    pub periodic: bool,
}

fn unit_ball_volume(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0,
        2 => PI,
        3 => 4.0 / 3.0 * PI,
        _ => PI.powf(d as f64 / 2.0) / gamma_int_half(d + 2),
    }
}

// Gamma(n/2) for integer n >= 1
fn gamma_int_half(n: usize) -> f64 {
    if n == 1 {
        std::f64::consts::PI.sqrt()
    } else if n == 2 {
        1.0
    } else {
        (n as f64 / 2.0 - 1.0) * gamma_int_half(n - 2)
    }
}

impl<const D: usize> Region<D> {
    pub fn boxed(lower: Vector<D>, upper: Vector<D>) -> Result<Self> {
        if (0..D).any(|i| !(upper[i] > lower[i])) {
            return Err(invalid("region", "box needs upper > lower in every axis"));
        }
        Ok(Self {
            shape: Shape::Box { lower, upper },
            periodic: false,
        })
    }

    pub fn periodic_box(lower: Vector<D>, upper: Vector<D>) -> Result<Self> {
        let mut r = Self::boxed(lower, upper)?;
        r.periodic = true;
        Ok(r)
    }

    pub fn ball(center: Vector<D>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("region", "ball radius must be positive"));
        }
        Ok(Self {
            shape: Shape::Ball { center, radius },
            periodic: false,
        })
    }

    /// Cube `[-half, half]^D`.
    pub fn centered_cube(half: f64) -> Result<Self> {
        Self::boxed(Vector::from_element(-half), Vector::from_element(half))
    }

    pub fn volume(&self) -> f64 {
        match &self.shape {
            Shape::Box { lower, upper } => (upper - lower).iter().product(),
            Shape::Ball { radius, .. } => unit_ball_volume(D) * radius.powi(D as i32),
        }
    }

    /// Closed-set membership.
    pub fn contains(&self, x: &Vector<D>) -> bool {
        match &self.shape {
            Shape::Box { lower, upper } => (0..D).all(|i| x[i] >= lower[i] && x[i] <= upper[i]),
            Shape::Ball { center, radius } => (x - center).norm() <= *radius,
        }
    }

    /// Distance from an interior point to the boundary (negative outside).
    pub fn clearance(&self, x: &Vector<D>) -> f64 {
        if self.periodic {
            return f64::INFINITY;
        }
        match &self.shape {
            Shape::Box { lower, upper } => (0..D)
                .map(|i| (x[i] - lower[i]).min(upper[i] - x[i]))
                .fold(f64::INFINITY, f64::min),
            Shape::Ball { center, radius } => radius - (x - center).norm(),
        }
    }

    pub fn side_lengths(&self) -> Option<Vector<D>> {
        match &self.shape {
            Shape::Box { lower, upper } => Some(upper - lower),
            Shape::Ball { .. } => None,
        }
    }

    /// Wraps a position into a periodic box; identity otherwise.
    pub fn wrap(&self, x: &Vector<D>) -> Vector<D> {
        match (&self.shape, self.periodic) {
            (Shape::Box { lower, upper }, true) => {
                let mut y = *x;
                for i in 0..D {
                    let l = upper[i] - lower[i];
                    y[i] = lower[i] + (x[i] - lower[i]).rem_euclid(l);
                }
                y
            }
            _ => *x,
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<D> {
        match &self.shape {
            Shape::Box { lower, upper } => {
                Vector::from_fn(|i, _| lower[i] + (upper[i] - lower[i]) * rng.random::<f64>())
            }
            Shape::Ball { center, radius } => loop {
                let u = Vector::<D>::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0);
                if u.norm_squared() <= 1.0 {
                    break center + u * *radius;
                }
            },
        }
    }
}

fn fmt_vec<const D: usize>(v: &Vector<D>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_vec<const D: usize>(s: &str) -> Result<Vector<D>> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("bad vector `{s}`: {e}")))?;
    if parts.len() != D {
        return Err(Error::Parse(format!("expected {D} components in `{s}`")));
    }
    Ok(Vector::from_column_slice(&parts))
}

impl<const D: usize> fmt::Display for Region<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            Shape::Box { lower, upper } => {
                write!(f, "box:{}:{}", fmt_vec(lower), fmt_vec(upper))?;
                if self.periodic {
                    write!(f, ":periodic")?;
                }
                Ok(())
            }
            Shape::Ball { center, radius } => write!(f, "ball:{}:{}", fmt_vec(center), radius),
        }
    }
}

impl<const D: usize> FromStr for Region<D> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["box", lo, hi] => Region::boxed(parse_vec(lo)?, parse_vec(hi)?),
            ["box", lo, hi, "periodic"] => Region::periodic_box(parse_vec(lo)?, parse_vec(hi)?),
            ["ball", c, r] => Region::ball(
                parse_vec(c)?,
                r.parse().map_err(|_| Error::Parse(format!("bad radius `{r}`")))?,
            ),
            _ => Err(Error::Parse(format!("unrecognized region `{s}`"))),
        }
    }
}

/// A frozen sample of obstacle centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleConfiguration<const D: usize> {
    centers: Vec<Vector<D>>,
    region: Region<D>,
    intensity: f64,
    seed: u64,
}

impl<const D: usize> ObstacleConfiguration<D> {
    /// Assembles a configuration from explicit centers (which must lie in the region).
    pub fn from_centers(
        centers: Vec<Vector<D>>,
        region: Region<D>,
        intensity: f64,
        seed: u64,
    ) -> Result<Self> {
        if let Some(c) = centers.iter().find(|c| !region.contains(c)) {
            return Err(invalid("centers", format!("{c:?} outside region")));
        }
        Ok(Self {
            centers,
            region,
            intensity,
            seed,
        })
    }

    pub fn empty(region: Region<D>) -> Self {
        Self {
            centers: Vec::new(),
            region,
            intensity: 0.0,
            seed: 0,
        }
    }

    pub fn centers(&self) -> &[Vector<D>] {
        &self.centers
    }

    pub fn region(&self) -> &Region<D> {
        &self.region
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `x - c`, using the minimum image in periodic boxes.
    pub fn displacement(&self, x: &Vector<D>, c: &Vector<D>) -> Vector<D> {
        let mut d = x - c;
        if let (true, Some(l)) = (self.region.periodic, self.region.side_lengths()) {
            for i in 0..D {
                d[i] -= l[i] * (d[i] / l[i]).round();
            }
        }
        d
    }

    /// CSV with `#` metadata lines for region, intensity and seed.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# region={}", self.region)?;
        writeln!(w, "# mu={}", self.intensity)?;
        writeln!(w, "# seed={}", self.seed)?;
        let header: Vec<String> = (1..=D).map(|i| format!("c{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for c in &self.centers {
            writeln!(w, "{}", fmt_vec(c))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut region = None;
        let mut mu = 0.0;
        let mut seed = 0;
        let mut body = String::new();
        for line in r.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "region" => region = Some(v.trim().parse::<Region<D>>()?),
                        "mu" => {
                            mu = v.trim().parse().map_err(|_| Error::Parse("bad mu".into()))?
                        }
                        "seed" => {
                            seed = v.trim().parse().map_err(|_| Error::Parse("bad seed".into()))?
                        }
                        _ => {}
                    }
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let region = region.ok_or_else(|| Error::Parse("missing region metadata".into()))?;
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let mut centers = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != D {
                return Err(Error::Parse(format!("expected {D} columns, got {}", rec.len())));
            }
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            centers.push(Vector::from_column_slice(&v));
        }
        Self::from_centers(centers, region, mu, seed)
    }
}

/// Poisson(mu |region|) centers, i.i.d. uniform given their number.
pub fn sample_configuration<const D: usize>(
    region: &Region<D>,
    intensity: f64,
    seed: u64,
) -> Result<ObstacleConfiguration<D>> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(invalid("intensity", "must be finite and non-negative"));
    }
    let expected = intensity * region.volume();
    if expected > MAX_EXPECTED_OBSTACLES {
        return Err(Error::Capacity {
            expected,
            limit: MAX_EXPECTED_OBSTACLES,
        });
    }
    let mut rng = rng::stream(seed, 0);
    let n = if expected > 0.0 {
        Poisson::new(expected)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let centers = (0..n).map(|_| region.sample_uniform(&mut rng)).collect();
    Ok(ObstacleConfiguration {
        centers,
        region: region.clone(),
        intensity,
        seed,
    })
}

type CellKey<const D: usize> = [i64; D];

/// Uniform hash grid over the obstacle centers.
#[derive(Debug, Clone)]
pub struct SpatialIndex<const D: usize> {
    cell_size: f64,
    buckets: HashMap<CellKey<D>, Vec<usize>>,
    /// Image shifts to try for periodic boxes.
    period: Option<Vector<D>>,
}

impl<const D: usize> SpatialIndex<D> {
    pub fn build(config: &ObstacleConfiguration<D>, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(invalid("cell_size", "must be positive"));
        }
        let period = if config.region.periodic {
            let l = config.region.side_lengths().expect("periodic region is a box");
            if (0..D).any(|i| l[i] <= 2.0 * cell_size) {
                return Err(invalid(
                    "cell_size",
                    "periodic box sides must exceed twice the cell size",
                ));
            }
            Some(l)
        } else {
            None
        };
        let mut buckets: HashMap<CellKey<D>, Vec<usize>> = HashMap::new();
        for (i, c) in config.centers.iter().enumerate() {
            buckets.entry(Self::key(c, cell_size)).or_default().push(i);
        }
        Ok(Self {
            cell_size,
            buckets,
            period,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    fn key(x: &Vector<D>, cell: f64) -> CellKey<D> {
        let mut k = [0i64; D];
        for i in 0..D {
            k[i] = (x[i] / cell).floor() as i64;
        }
        k
    }

    fn scan_cells<F: FnMut(usize)>(&self, x: &Vector<D>, mut visit: F) {
        let base = Self::key(x, self.cell_size);
        let total = 3usize.pow(D as u32);
        for code in 0..total {
            let mut k = base;
            let mut c = code;
            for ki in k.iter_mut() {
                *ki += (c % 3) as i64 - 1;
                c /= 3;
            }
            if let Some(b) = self.buckets.get(&k) {
                b.iter().for_each(|&i| visit(i));
            }
        }
    }

    /// Calls `visit(index, x - c)` for every center within the closed ball of radius `r`.
    pub fn for_each_within<F: FnMut(usize, Vector<D>)>(
        &self,
        config: &ObstacleConfiguration<D>,
        x: &Vector<D>,
        r: f64,
        mut visit: F,
    ) -> Result<()> {
        if r > self.cell_size {
            return Err(Error::QueryRadius {
                radius: r,
                cell_size: self.cell_size,
            });
        }
        let r2 = r * r;
        let centers = &config.centers;
        match (&self.period, &config.region.shape) {
            (Some(l), Shape::Box { lower, upper }) => {
                let x = config.region.wrap(x);
                let total = 3usize.pow(D as u32);
                for code in 0..total {
                    let mut shift = Vector::<D>::zeros();
                    let mut c = code;
                    let mut needed = true;
                    for i in 0..D {
                        let s = (c % 3) as i64 - 1;
                        c /= 3;
                        if s == 1 && x[i] - r >= lower[i] {
                            needed = false;
                        }
                        if s == -1 && x[i] + r <= upper[i] {
                            needed = false;
                        }
                        shift[i] = s as f64 * l[i];
                    }
                    if !needed {
                        continue;
                    }
                    let xi = x + shift;
                    self.scan_cells(&xi, |i| {
                        let d = xi - centers[i];
                        if d.norm_squared() <= r2 {
                            visit(i, d);
                        }
                    });
                }
            }
            _ => self.scan_cells(x, |i| {
                let d = x - centers[i];
                if d.norm_squared() <= r2 {
                    visit(i, d);
                }
            }),
        }
        Ok(())
    }
}

/// Indices of centers with `|x - c| <= r`, ascending.
pub fn neighbors_within<const D: usize>(
    config: &ObstacleConfiguration<D>,
    index: &SpatialIndex<D>,
    x: &Vector<D>,
    r: f64,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    index.for_each_within(config, x, r, |i, _| out.push(i))?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn zero_intensity_is_empty() {
        let region = Region::<2>::centered_cube(3.0).unwrap();
        let c = sample_configuration(&region, 0.0, 17).unwrap();
        assert!(c.is_empty());
        let idx = SpatialIndex::build(&c, 0.5).unwrap();
        assert!(neighbors_within(&c, &idx, &Vector2::zeros(), 0.5).unwrap().is_empty());
    }

    #[test]
    fn capacity_guard() {
        let region = Region::<2>::centered_cube(1e4).unwrap();
        assert!(matches!(
            sample_configuration(&region, 100.0, 1),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn same_seed_same_configuration() {
        let region = Region::<3>::ball(SVector::zeros(), 2.0).unwrap();
        let a = sample_configuration(&region, 5.0, 99).unwrap();
        let b = sample_configuration(&region, 5.0, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.centers().iter().all(|c| region.contains(c)));
    }

    #[test]
    fn closed_ball_boundary_included() {
        let region = Region::<2>::centered_cube(2.0).unwrap();
        let c = ObstacleConfiguration::from_centers(vec![Vector2::new(0.75, 0.0)], region, 1.0, 0)
            .unwrap();
        let idx = SpatialIndex::build(&c, 1.0).unwrap();
        let x = Vector2::new(0.25, 0.0);
        assert_eq!(neighbors_within(&c, &idx, &x, 0.5).unwrap(), vec![0]);
        assert!(matches!(
            neighbors_within(&c, &idx, &x, 1.5),
            Err(Error::QueryRadius { .. })
        ));
    }

    #[test]
    fn periodic_images_are_found() {
        let region = Region::<2>::periodic_box(Vector2::zeros(), Vector2::new(4.0, 4.0)).unwrap();
        let c = ObstacleConfiguration::from_centers(vec![Vector2::new(3.9, 0.1)], region, 1.0, 0)
            .unwrap();
        let idx = SpatialIndex::build(&c, 0.5).unwrap();
        let x = Vector2::new(0.1, 3.9);
        assert_eq!(neighbors_within(&c, &idx, &x, 0.3).unwrap(), vec![0]);
        let d = c.displacement(&x, &c.centers()[0]);
        assert!((d - Vector2::new(0.2, -0.2)).norm() < 1e-12);
    }

    #[test]
    fn region_string_round_trip() {
        for s in ["box:0,0:1,2", "box:-1,-1:1,1:periodic", "ball:0.5,0.5:3"] {
            let r: Region<2> = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("cone:1".parse::<Region<2>>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let region = Region::<3>::centered_cube(1.0).unwrap();
        let c = sample_configuration(&region, 10.0, 5).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = ObstacleConfiguration::<3>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }
}
