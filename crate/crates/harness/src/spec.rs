//! Experiment description files: `key=value` lines with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lorentz_core::potentials::{RadialPotential, TabulatedProfile};
use lorentz_core::scaling::{parse_key_values, ScalingParams};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    ScatterTable,
    Diffusion,
    ConvergeTheta,
    ConvergeOperator,
    ConvergeHeat,
    RelaxToAverage,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::ScatterTable,
        Subcommand::Diffusion,
        Subcommand::ConvergeTheta,
        Subcommand::ConvergeOperator,
        Subcommand::ConvergeHeat,
        Subcommand::RelaxToAverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::ScatterTable => "scatter-table",
            Subcommand::Diffusion => "diffusion",
            Subcommand::ConvergeTheta => "converge-theta",
            Subcommand::ConvergeOperator => "converge-operator",
            Subcommand::ConvergeHeat => "converge-heat",
            Subcommand::RelaxToAverage => "relax-to-average",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::Spec(format!("unknown subcommand `{s}`")))
    }
}

/// Routes to the diffusion coefficient requested by `methods=`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Spectral,
    GreenKubo,
    Msd,
}

/// A resolved potential identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub id: String,
    pub profile: RadialPotential,
}

/// Resolves `quartic-bump`, `cone`, `zero` or `file:<csv>`.
pub fn resolve_potential(id: &str) -> Result<PotentialSpec, HarnessError> {
    let profile = match id {
        "quartic-bump" => RadialPotential::default_scattering(),
        "cone" => RadialPotential::Cone {
            amplitude: 1.0,
            support: 1.0,
        },
        "zero" => RadialPotential::Zero { support: 1.0 },
        other => {
            let Some(path) = other.strip_prefix("file:") else {
                return Err(HarnessError::Spec(format!("unresolvable potential id `{other}`")));
            };
            let f = std::fs::File::open(path)
                .map_err(|e| HarnessError::Spec(format!("potential file `{path}`: {e}")))?;
            let t = TabulatedProfile::read_csv(std::io::BufReader::new(f))
                .map_err(|e| HarnessError::Spec(format!("potential file `{path}`: {e}")))?;
            RadialPotential::Tabulated(t)
        }
    };
    Ok(PotentialSpec {
        id: id.to_string(),
        profile,
    })
}

/// Everything one run needs. Defaults are filled in for absent keys.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub subcommand: Subcommand,
    pub params: ScalingParams,
    pub potential: PotentialSpec,
    /// Overrides `epsilon^alpha` as the scattering coupling.
    pub coupling: Option<f64>,
    /// Landau coefficient; jump-process routes rescale the potential so the
    /// small-coupling limit of their coefficient equals it.
    pub b: Option<f64>,
    pub n_grid: usize,
    pub methods: Vec<Method>,
    pub n_paths: usize,
    pub n_particles: usize,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: usize,
    /// Start of the MSD fit window.
    pub fit_start: f64,
    pub n_times: usize,
    pub epsilon_sweep: Vec<f64>,
    pub eta_sweep: Vec<f64>,
    /// Mode sets of band-limited test fields, `sum_k cos(k phi)` in two
    /// dimensions and `sum_k P_k(v_3 / speed)` in three.
    pub test_fields: Option<Vec<Vec<usize>>>,
    pub initial_variance: f64,
    pub grid_cells: usize,
    pub box_half: f64,
    /// e-folds covered by relaxation trajectories.
    pub efolds: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// The experiment file as given.
    pub text: String,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| HarnessError::Spec(format!("line {line}: cannot parse `{v}` for `{key}`"))),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>, HarnessError> {
        match self.map.remove(key) {
            None => Ok(Vec::new()),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|_| HarnessError::Spec(format!("line {line}: bad list item `{s}` for `{key}`")))
                })
                .collect(),
        }
    }
}

impl ExperimentSpec {
    /// Parses experiment text for `subcommand`. A `subcommand=` key, if present,
    /// must agree.
    pub fn parse(subcommand: Subcommand, text: &str) -> Result<Self, HarnessError> {
        let raw = parse_key_values(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        let mut e = Entries {
            map: raw.into_iter().map(|(l, k, v)| (k, (l, v))).collect(),
        };
        if let Some(s) = e.take::<String>("subcommand")? {
            if s.parse::<Subcommand>()? != subcommand {
                return Err(HarnessError::Spec(format!(
                    "spec is for `{s}` but `{subcommand}` was requested"
                )));
            }
        }
        let epsilon_sweep: Vec<f64> = e.list("epsilon_sweep")?;
        let eps_default = epsilon_sweep.first().copied().unwrap_or(0.1);
        let mut params = ScalingParams::new(
            e.get("epsilon", eps_default)?,
            e.get("alpha", 0.25)?,
            e.get("dim", 2)?,
            e.get("speed", 1.0)?,
        );
        let delta = e.get("delta", 1.0)?;
        params = params.with_diffusive(delta, e.get("eta_exponent", 0.0)?, e.get("t_eta_exponent", 2.0 * delta + 1.0)?);
        params.validate().map_err(|e| HarnessError::Spec(e.to_string()))?;
        let potential = resolve_potential(&e.get("potential", "quartic-bump".to_string())?)?;
        let methods = e
            .list::<String>("methods")?
            .iter()
            .map(|m| match m.as_str() {
                "spectral" => Ok(Method::Spectral),
                "green-kubo" => Ok(Method::GreenKubo),
                "msd" => Ok(Method::Msd),
                other => Err(HarnessError::Spec(format!("unknown method `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let test_fields = match e.take::<String>("test_fields")? {
            None => None,
            Some(v) => Some(v
                .split(';')
                .map(|set| {
                    set.split(',')
                        .map(|k| k.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| HarnessError::Spec(format!("bad test field `{set}`")))
                })
                .collect::<Result<Vec<_>, _>>()?),
        };
        let spec = Self {
            subcommand,
            params,
            potential,
            coupling: e.take("coupling")?,
            b: e.take("B")?,
            n_grid: e.get("n_grid", 256)?,
            methods: if methods.is_empty() { vec![Method::Spectral] } else { methods },
            n_paths: e.get("n_paths", 10_000)?,
            n_particles: e.get("n_particles", 10_000)?,
            dt: e.get("dt", 1e-3)?,
            t_end: e.get("t_end", 10.0)?,
            sample_every: e.get("sample_every", 10)?,
            fit_start: e.get("fit_start", 5.0)?,
            n_times: e.get("n_times", 16)?,
            epsilon_sweep,
            eta_sweep: e.list("eta_sweep")?,
            test_fields,
            initial_variance: e.get("initial_variance", 0.25)?,
            grid_cells: e.get("grid_cells", 32)?,
            box_half: e.get("box_half", 4.0)?,
            efolds: e.get("efolds", 6.0)?,
            out_dir: PathBuf::from(e.get("out", "out".to_string())?),
            seed: e.get("seed", 1)?,
            text: text.to_string(),
        };
        if let Some((key, (line, _))) = e.map.into_iter().next() {
            return Err(HarnessError::Spec(format!("line {line}: unknown key `{key}`")));
        }
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        if self.epsilon_sweep.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("epsilon_sweep must be strictly decreasing".into());
        }
        if self.epsilon_sweep.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return bad("epsilon_sweep entries must lie in (0, 1]".into());
        }
        if self.eta_sweep.windows(2).any(|w| !(w[1] > w[0])) || self.eta_sweep.iter().any(|e| !(*e >= 1.0)) {
            return bad("eta_sweep must be strictly increasing with entries >= 1".into());
        }
        if self.n_grid < 64 {
            return bad("n_grid must be at least 64".into());
        }
        if let Some(b) = self.b {
            if !(b > 0.0) {
                return bad("B must be positive".into());
            }
        }
        if let Some(k) = self.coupling {
            if !(k >= 0.0 && k.is_finite()) {
                return bad("coupling must be non-negative".into());
            }
        }
        if !(self.dt > 0.0 && self.t_end >= 0.0 && self.sample_every >= 1) {
            return bad("need dt > 0, t_end >= 0 and sample_every >= 1".into());
        }
        if !(self.initial_variance > 0.0 && self.box_half > 0.0 && self.grid_cells >= 4 && self.efolds > 0.0) {
            return bad("initial_variance, box_half, efolds must be positive and grid_cells >= 4".into());
        }
        let needs_sweep = matches!(
            self.subcommand,
            Subcommand::ConvergeTheta | Subcommand::ConvergeOperator | Subcommand::ConvergeHeat
        );
        if needs_sweep && self.epsilon_sweep.is_empty() {
            return bad(format!("{} needs epsilon_sweep", self.subcommand));
        }
        if self.subcommand == Subcommand::RelaxToAverage && self.eta_sweep.is_empty() && self.epsilon_sweep.is_empty() {
            return bad("relax-to-average needs eta_sweep or epsilon_sweep".into());
        }
        if self.test_fields.iter().flatten().any(|f| f.is_empty()) {
            return bad("test fields need at least one mode".into());
        }
        Ok(())
    }

    /// Coupling `epsilon^alpha` unless overridden.
    pub fn coupling_at(&self, epsilon: f64) -> f64 {
        self.coupling.unwrap_or_else(|| epsilon.powf(self.params.alpha))
    }

    pub fn test_fields_or(&self, default: &[&[usize]]) -> Vec<Vec<usize>> {
        self.test_fields
            .clone()
            .unwrap_or_else(|| default.iter().map(|f| f.to_vec()).collect())
    }

    /// Scaling parameters with `epsilon` replaced.
    pub fn params_at(&self, epsilon: f64) -> ScalingParams {
        ScalingParams { epsilon, ..self.params }
    }
}
