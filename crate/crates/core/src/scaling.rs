//! Scaling parameters of the weak-coupling / diffusive limit and the
//! quantities derived from them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Scaling exponents and physical constants of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Micro/macro length ratio, in `(0, 1]`.
    pub epsilon: f64,
    /// Weak-coupling exponent, in `(0, 1/2)`.
    pub alpha: f64,
    /// Diffusive time exponent.
    pub delta: f64,
    pub dim: usize,
    /// Conserved kinetic speed `|v|`.
    pub speed: f64,
    /// `beta` in `eta = epsilon^(-beta)`.
    pub eta_exponent: f64,
    /// `omega` in `t_eta = eta^(-omega)`.
    pub t_eta_exponent: f64,
}

/// Quantities derived from [`ScalingParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedScales {
    /// Obstacle intensity (centers per unit volume).
    pub mu: f64,
    pub eta: f64,
    /// `epsilon^(-2 alpha)`.
    pub collision_rate_scale: f64,
    /// `epsilon^(d-1-8 alpha) eta^(4 delta)`.
    pub critical_error: f64,
    pub diffusive: bool,
}

/// Outcome of [`check_regime`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// `d - 1 - 8 alpha - 4 delta beta`.
    pub critical_exponent: f64,
    /// Critical error vanishes as epsilon -> 0 (strict inequality).
    pub critical_error_vanishes: bool,
    /// `alpha < (d - 1) / 8`.
    pub alpha_admissible: bool,
}

impl RegimeReport {
    pub fn passes(&self) -> bool {
        self.critical_error_vanishes && self.alpha_admissible
    }
}

impl ScalingParams {
    pub fn new(epsilon: f64, alpha: f64, dim: usize, speed: f64) -> Self {
        Self {
            epsilon,
            alpha,
            delta: 1.0,
            dim,
            speed,
            eta_exponent: 0.0,
            t_eta_exponent: 3.0,
        }
    }

    pub fn with_diffusive(mut self, delta: f64, eta_exponent: f64, t_eta_exponent: f64) -> Self {
        self.delta = delta;
        self.eta_exponent = eta_exponent;
        self.t_eta_exponent = t_eta_exponent;
        self
    }

    /// Coupling strength `epsilon^alpha` multiplying the scattering profile.
    pub fn coupling(&self) -> f64 {
        self.epsilon.powf(self.alpha)
    }

    pub fn eta(&self) -> f64 {
        self.epsilon.powf(-self.eta_exponent)
    }

    /// Time at which the second relaxation claim is evaluated, `eta^(-omega)`.
    pub fn t_eta(&self) -> f64 {
        self.eta().powf(-self.t_eta_exponent)
    }

    fn check_core(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(invalid("epsilon", format!("{} not in (0, 1]", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(invalid("alpha", format!("{} not in (0, 1/2)", self.alpha)));
        }
        if !(2..=3).contains(&self.dim) {
            return Err(invalid("dim", format!("{} unsupported (2 or 3)", self.dim)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(invalid("speed", format!("{} must be positive", self.speed)));
        }
        if !(self.eta_exponent >= 0.0 && self.eta_exponent.is_finite()) {
            return Err(invalid("eta_exponent", "must be non-negative"));
        }
        Ok(())
    }

    /// Checks every invariant, including `omega > 2 delta`.
    pub fn validate(&self) -> Result<()> {
        self.check_core()?;
        if !(self.delta > 0.0) {
            return Err(invalid("delta", format!("{} must be positive", self.delta)));
        }
        if !(self.t_eta_exponent > 2.0 * self.delta) {
            return Err(invalid(
                "t_eta_exponent",
                format!(
                    "omega = {} must exceed 2 delta = {}",
                    self.t_eta_exponent,
                    2.0 * self.delta
                ),
            ));
        }
        Ok(())
    }
}

/// Obstacle intensity and diffusive-regime scales.
pub fn derive_scales(params: &ScalingParams, diffusive: bool) -> Result<DerivedScales> {
    params.check_core()?;
    if diffusive && !(params.delta > 0.0) {
        return Err(invalid("delta", "must be positive in the diffusive regime"));
    }
    let d = params.dim as f64;
    let eps = params.epsilon;
    let eta = params.eta();
    let base = eps.powf(-d + 1.0 - 2.0 * params.alpha);
    let mu = if diffusive {
        base * eta.powf(params.delta)
    } else {
        base
    };
    let out = DerivedScales {
        mu,
        eta,
        collision_rate_scale: eps.powf(-2.0 * params.alpha),
        critical_error: eps.powf(d - 1.0 - 8.0 * params.alpha) * eta.powf(4.0 * params.delta),
        diffusive,
    };
    for (name, v) in [
        ("mu", out.mu),
        ("eta", out.eta),
        ("collision_rate_scale", out.collision_rate_scale),
        ("critical_error", out.critical_error),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Numeric(format!("derived scale {name} = {v}")));
        }
    }
    Ok(out)
}

/// Whether the critical error `epsilon^(d-1-8a) eta^(4 delta)` vanishes as epsilon -> 0.
pub fn check_regime(params: &ScalingParams) -> RegimeReport {
    let d = params.dim as f64;
    let exponent = d - 1.0 - 8.0 * params.alpha - 4.0 * params.delta * params.eta_exponent;
    RegimeReport {
        critical_exponent: exponent,
        critical_error_vanishes: exponent > 0.0,
        alpha_admissible: params.alpha < (d - 1.0) / 8.0,
    }
}

fn gamma_half(dim: usize) -> f64 {
    match dim {
        2 => 1.0,
        3 => 0.5 * PI.sqrt(),
        _ => panic!("sphere normalization only for d = 2, 3"),
    }
}

/// Surface measure of the velocity sphere of radius `speed`.
pub fn sphere_area(dim: usize, speed: f64) -> f64 {
    let d = dim as f64;
    2.0 * PI.powf(d / 2.0) / gamma_half(dim) * speed.powf(d - 1.0)
}

/// `K` such that `K` times the sphere measure is a probability measure.
pub fn sphere_normalization(dim: usize, speed: f64) -> f64 {
    1.0 / sphere_area(dim, speed)
}

/// `key=value` lines with `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Config {
            line: i + 1,
            reason: format!("expected key=value, got `{line}`"),
        })?;
        let key = k.trim().to_string();
        if seen.insert(key.clone(), i + 1).is_some() {
            return Err(Error::Config {
                line: i + 1,
                reason: format!("duplicate key `{key}`"),
            });
        }
        out.push((i + 1, key, v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Config {
        line,
        reason: format!("cannot parse `{value}` for `{key}`"),
    })
}

/// Scaling parameters plus the regime flag, as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub params: ScalingParams,
    pub diffusive: bool,
}

pub const SCALING_KEYS: [&str; 8] = [
    "epsilon",
    "alpha",
    "delta",
    "dim",
    "speed",
    "eta_exponent",
    "t_eta_exponent",
    "diffusive",
];

impl ScalingConfig {
    /// Builds from already-split entries; entries with other keys are an error
    /// unless `allow_other` is set (experiment files carry extra keys).
    pub fn from_entries(entries: &[(usize, String, String)], allow_other: bool) -> Result<Self> {
        let mut p = ScalingParams::new(f64::NAN, f64::NAN, 0, f64::NAN);
        let mut have = [false; 4];
        let mut t_eta = None;
        let mut diffusive = false;
        for (line, key, value) in entries {
            let line = *line;
            match key.as_str() {
                "epsilon" => {
                    p.epsilon = parse_value(line, key, value)?;
                    have[0] = true;
                }
                "alpha" => {
                    p.alpha = parse_value(line, key, value)?;
                    have[1] = true;
                }
                "dim" => {
                    p.dim = parse_value(line, key, value)?;
                    have[2] = true;
                }
                "speed" => {
                    p.speed = parse_value(line, key, value)?;
                    have[3] = true;
                }
                "delta" => p.delta = parse_value(line, key, value)?,
                "eta_exponent" => p.eta_exponent = parse_value(line, key, value)?,
                "t_eta_exponent" => t_eta = Some(parse_value(line, key, value)?),
                "diffusive" => diffusive = parse_value(line, key, value)?,
                other if !allow_other => {
                    return Err(Error::Config {
                        line,
                        reason: format!("unknown key `{other}`"),
                    })
                }
                _ => {}
            }
        }
        for (flag, name) in have.iter().zip(["epsilon", "alpha", "dim", "speed"]) {
            if !flag {
                return Err(Error::Config {
                    line: 0,
                    reason: format!("missing key `{name}`"),
                });
            }
        }
        p.t_eta_exponent = t_eta.unwrap_or(2.0 * p.delta + 1.0);
        p.validate()?;
        Ok(Self {
            params: p,
            diffusive,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&parse_key_values(text)?, false)
    }

    pub fn derive(&self) -> Result<DerivedScales> {
        derive_scales(&self.params, self.diffusive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_epsilon_gives_unit_scales() {
        for d in [2, 3] {
            let p = ScalingParams::new(1.0, 0.3, d, 1.0);
            let s = derive_scales(&p, false).unwrap();
            assert_eq!(s.mu, 1.0);
            assert_eq!(s.collision_rate_scale, 1.0);
            assert_eq!(s.eta, 1.0);
        }
    }

    #[test]
    fn intensity_closed_form() {
        let p = ScalingParams::new(0.1, 0.25, 2, 1.0);
        let s = derive_scales(&p, false).unwrap();
        // 10^1.5
        assert!((s.mu - 31.622_776_601_683_793).abs() < 1e-12);
        let pd = p.with_diffusive(1.0, 0.5, 3.0);
        let sd = derive_scales(&pd, true).unwrap();
        assert!((sd.mu - s.mu * 0.1f64.powf(-0.5)).abs() < 1e-10);
    }

    #[test]
    fn critical_error_exponent_arithmetic() {
        let mk = |eps| ScalingParams::new(eps, 0.1, 3, 1.0).with_diffusive(1.0, 0.01, 3.0);
        let s = derive_scales(&mk(0.5), true).unwrap();
        assert!((s.critical_error - 0.5f64.powf(1.16)).abs() < 1e-14);
        let errs: Vec<f64> = [0.5, 0.25, 0.125]
            .iter()
            .map(|&e| derive_scales(&mk(e), true).unwrap().critical_error)
            .collect();
        assert!(check_regime(&mk(0.5)).passes());
        assert!(errs[1] < errs[0] && errs[2] < errs[1]);
    }

    #[test]
    fn derive_rejects_bad_exponents() {
        assert!(derive_scales(&ScalingParams::new(0.1, 0.5, 2, 1.0), false).is_err());
        assert!(derive_scales(&ScalingParams::new(0.1, 0.0, 2, 1.0), false).is_err());
        let p = ScalingParams::new(0.1, 0.2, 2, 1.0).with_diffusive(0.0, 1.0, 3.0);
        assert!(derive_scales(&p, true).is_err());
        assert!(derive_scales(&p, false).is_ok());
    }

    #[test]
    fn regime_flags() {
        let a = ScalingParams::new(0.1, 0.2, 3, 1.0).with_diffusive(1.0, 0.0, 3.0);
        let r = check_regime(&a);
        assert!(r.critical_error_vanishes && (r.critical_exponent - 0.4).abs() < 1e-12);
        let b = ScalingParams::new(0.1, 0.2, 2, 1.0).with_diffusive(1.0, 1.0, 3.0);
        let r = check_regime(&b);
        assert!(!r.critical_error_vanishes);
        assert!((r.critical_exponent - (1.0 - 1.6 - 4.0)).abs() < 1e-12);
        let c = ScalingParams::new(0.1, 0.125, 2, 1.0).with_diffusive(1.0, 0.0, 3.0);
        let r = check_regime(&c);
        assert_eq!(r.critical_exponent, 0.0);
        assert!(!r.critical_error_vanishes && !r.alpha_admissible);
    }

    #[test]
    fn normalization_constants() {
        assert!((sphere_normalization(2, 1.0) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((sphere_normalization(3, 1.0) - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((sphere_normalization(3, 2.0) - 1.0 / (16.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn config_file_round_trip_and_typos() {
        let text = "# run\nepsilon = 0.1\nalpha=0.25\ndim=2\nspeed=1\ndelta=0.5\neta_exponent=0.5\nt_eta_exponent=2\ndiffusive=true\n";
        let c = ScalingConfig::parse(text).unwrap();
        assert!(c.diffusive);
        assert_eq!(c.params.t_eta_exponent, 2.0);
        let bad = "epsilon=0.1\nalpah=0.25\ndim=2\nspeed=1\n";
        assert!(matches!(ScalingConfig::parse(bad), Err(Error::Config { line: 2, .. })));
        let omega = "epsilon=0.1\nalpha=0.25\ndim=2\nspeed=1\ndelta=1\nt_eta_exponent=2\n";
        assert!(ScalingConfig::parse(omega).is_err());
    }

    #[test]
    fn derive_is_bitwise_deterministic() {
        let p = ScalingParams::new(0.037, 0.31, 3, 1.7).with_diffusive(0.7, 0.3, 5.0);
        let a = derive_scales(&p, true).unwrap();
        let b = derive_scales(&p, true).unwrap();
        assert_eq!(a.mu.to_bits(), b.mu.to_bits());
        assert_eq!(a.critical_error.to_bits(), b.critical_error.to_bits());
    }
}
