//! The six experiments. Each returns its table, a JSON report body and the
//! list of pass/fail checks it evaluated.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use lorentz_core::hydro::{
    diffusion_closed_form, diffusion_spectral, green_kubo, heat_solve, landau_semigroup, msd_fit,
    relaxation_deviation, relaxation_fit, spectral_gap, vacf_decay_rate, DensityField, DiffusionEstimate,
};
use lorentz_core::kinetics::{
    apply_landau, boltzmann_jump_evolve, born_deflection, build_scattering_table, landau_coefficient_b,
    landau_coefficient_dim, landau_limit, landau_vacf, operator_mismatch, random_on_sphere, JumpScales,
    KineticParticle, ScatteringTable, VacfSettings,
};
use lorentz_core::obstacles::Vector;
use lorentz_core::potentials::RadialPotential;
use lorentz_core::quadrature::integrate;
use lorentz_core::rng::{child_seed, stream};
use lorentz_core::spectral::SphericalField;

use crate::spec::{ExperimentSpec, Method, Subcommand};
use crate::table::ConvergenceTable;
use crate::HarnessError;

/// A named pass/fail statement evaluated by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Option<ConvergenceTable>,
    /// Body of `table.csv` without the run metadata lines.
    pub table_csv: String,
    pub report: Map<String, Value>,
    pub checks: Vec<Check>,
    /// Further CSV artifacts as `(file name, body)`.
    pub extra: Vec<(String, String)>,
}

impl Outcome {
    fn from_table(table: ConvergenceTable, report: Map<String, Value>, checks: Vec<Check>) -> Self {
        let mut buf = Vec::new();
        table.write_csv(&mut buf, &[]).expect("writing to memory");
        Self {
            table: Some(table),
            table_csv: String::from_utf8(buf).expect("utf8"),
            report,
            checks,
            extra: Vec::new(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn execute(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    match spec.subcommand {
        Subcommand::ScatterTable => scatter_table(spec),
        Subcommand::Diffusion => diffusion(spec),
        Subcommand::ConvergeTheta => converge_theta(spec),
        Subcommand::ConvergeOperator => converge_operator(spec),
        Subcommand::ConvergeHeat => converge_heat(spec),
        Subcommand::RelaxToAverage => relax_to_average(spec),
    }
}

fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("report bodies are objects"),
    }
}

/// Scattering profile and its small-coupling Landau coefficient. With `B=`
/// set, the profile is rescaled so that the coefficient equals `B`.
fn matched_potential(spec: &ExperimentSpec) -> Result<(RadialPotential, f64), HarnessError> {
    let u = spec.potential.profile.clone();
    let s = spec.params.speed;
    let unit = landau_limit(&u, s);
    match spec.b {
        None => Ok((u, unit)),
        Some(b) => {
            if !(unit > 0.0) {
                return Err(HarnessError::Spec(format!(
                    "potential `{}` has no Landau coefficient to match B = {b}",
                    spec.potential.id
                )));
            }
            Ok((u.scaled((b / unit).sqrt()), b))
        }
    }
}

fn table_at(spec: &ExperimentSpec, u: &RadialPotential, epsilon: f64) -> Result<ScatteringTable, HarnessError> {
    let t = build_scattering_table(u, spec.params.speed, spec.coupling_at(epsilon), spec.n_grid, &spec.potential.id)?;
    if t.reflected {
        return Err(HarnessError::Numeric(format!(
            "head-on reflection at epsilon = {epsilon}: coupling too strong for speed {}",
            spec.params.speed
        )));
    }
    Ok(t)
}

fn scatter_table(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let (u, b_star) = matched_potential(spec)?;
    let p = spec.params;
    let kappa = spec.coupling_at(p.epsilon);
    let table = build_scattering_table(&u, p.speed, kappa, spec.n_grid, &spec.potential.id)?;
    let b = landau_coefficient_dim(&table, p.epsilon, p.alpha, p.dim);
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    let report = obj(json!({
        "potential": spec.potential.id,
        "coupling": kappa,
        "speed": p.speed,
        "n_grid": spec.n_grid,
        "max_theta": table.max_theta(),
        "reflected": table.reflected,
        "degenerate": table.is_degenerate(),
        "continuous": table.is_continuous(),
        "B": b.b,
        "B_limit": b_star,
        "large_angle_warning": b.large_angle_warning,
    }));
    Ok(Outcome {
        table: None,
        table_csv: String::from_utf8(buf).expect("utf8"),
        report,
        checks: Vec::new(),
        extra: Vec::new(),
    })
}

struct MsdRun {
    estimate: DiffusionEstimate,
    r_squared: f64,
    max_speed_drift: f64,
    collisions: usize,
}

/// Jump-process ensemble started at the origin with uniform velocities.
fn jump_msd<const D: usize>(
    table: &ScatteringTable,
    scales: JumpScales,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Result<MsdRun, HarnessError> {
    let speed = table.speed;
    let t_end = *times.last().expect("non-empty times");
    let paths: Vec<Result<_, HarnessError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = stream(seed, i as u64);
            let v = random_on_sphere::<D, _>(speed, &mut r);
            let p = KineticParticle::new(Vector::<D>::zeros(), v);
            Ok(boltzmann_jump_evolve(p, t_end, table, scales, None, times, &mut r)?)
        })
        .collect();
    let mut disp = vec![Vec::with_capacity(n); times.len()];
    let mut drift = 0.0f64;
    let mut collisions = 0;
    for path in paths {
        let path = path?;
        drift = drift.max(path.max_speed_drift);
        collisions += path.collisions;
        for (k, (x, _)) in path.states.iter().enumerate() {
            disp[k].push(*x);
        }
    }
    let (mut estimate, r_squared) = msd_fit(times, &disp)?;
    estimate.speed = speed;
    Ok(MsdRun {
        estimate,
        r_squared,
        max_speed_drift: drift,
        collisions,
    })
}

fn fit_times(spec: &ExperimentSpec) -> Result<Vec<f64>, HarnessError> {
    if !(spec.fit_start > 0.0 && spec.fit_start < spec.t_end) || spec.n_times < 3 {
        return Err(HarnessError::Spec("need 0 < fit_start < t_end and n_times >= 3".into()));
    }
    let n = spec.n_times;
    Ok((0..n)
        .map(|k| spec.fit_start + (spec.t_end - spec.fit_start) * k as f64 / (n - 1) as f64)
        .collect())
}

fn diffusion(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let p = spec.params;
    let b = spec.b.unwrap_or(1.0);
    let closed = diffusion_closed_form(p.dim, p.speed, b);
    let spectral = diffusion_spectral(p.dim, p.speed, b)?;
    let mut table = ConvergenceTable::new("B");
    let mut checks = vec![Check::new(
        "spectral_closed_form",
        (spectral.value - closed).abs() <= 1e-10,
        format!("D = {:.12e}, closed form {:.12e}", spectral.value, closed),
    )];
    let mut estimates = vec![spectral.clone()];
    let mut report = Map::new();
    let mut extra = Vec::new();
    table.push(b, "D_spectral", closed, spectral.value, 0.0);
    if spec.methods.contains(&Method::GreenKubo) {
        let vacf = landau_vacf(&VacfSettings {
            dim: p.dim,
            speed: p.speed,
            b,
            t_end: spec.t_end,
            dt: spec.dt,
            sample_every: spec.sample_every,
            n_paths: spec.n_paths,
            seed: child_seed(spec.seed, 1),
        })?;
        let mut gk = green_kubo(&vacf.times, &vacf.mean, &vacf.std_error, p.dim, p.speed, Some(vacf.path_integral))?;
        gk.b = Some(b);
        let (rate, rate_se) = vacf_decay_rate(&vacf.times, &vacf.mean, &vacf.std_error)?;
        let gap = spectral_gap(p.dim, p.speed, b);
        checks.push(Check::new(
            "green_kubo_within_3se",
            (gk.value - spectral.value).abs() <= 3.0 * gk.std_error,
            format!("D_gk = {:.6e} +- {:.2e}, spectral {:.6e}", gk.value, gk.std_error, spectral.value),
        ));
        checks.push(Check::new(
            "vacf_rate_within_2pct",
            ((rate - gap) / gap).abs() <= 0.02,
            format!("fitted rate {rate:.6e} +- {rate_se:.1e}, gap {gap:.6e}"),
        ));
        checks.push(Check::new(
            "sde_speed_conserved",
            vacf.max_speed_drift <= 1e-9,
            format!("max ||v| - speed| = {:.2e}", vacf.max_speed_drift),
        ));
        report.insert("vacf_decay_rate".into(), json!({"rate": rate, "std_error": rate_se, "predicted": gap}));
        report.insert("sde_max_speed_drift".into(), vacf.max_speed_drift.into());
        table.push(b, "D_green_kubo", closed, gk.value, gk.std_error);
        table.push(b, "vacf_rate", gap, rate, rate_se);
        let mut body = String::from("t,vacf,std_error\n");
        for i in 0..vacf.times.len() {
            body.push_str(&format!("{:e},{:e},{:e}\n", vacf.times[i], vacf.mean[i], vacf.std_error[i]));
        }
        extra.push(("vacf.csv".to_string(), body));
        estimates.push(gk);
    }
    if spec.methods.contains(&Method::Msd) {
        let (u, b_star) = matched_potential(&ExperimentSpec {
            b: Some(b),
            ..spec.clone()
        })?;
        let table_k = table_at(spec, &u, p.epsilon)?;
        let b_eps = landau_coefficient_dim(&table_k, p.epsilon, p.alpha, p.dim).b;
        let scales = JumpScales {
            transport_scale: 1.0,
            collision_scale: p.epsilon.powf(-2.0 * p.alpha),
            mean_field_dt: 1.0,
        };
        let times = fit_times(spec)?;
        let seed = child_seed(spec.seed, 2);
        let run = match p.dim {
            2 => jump_msd::<2>(&table_k, scales, &times, spec.n_particles, seed)?,
            _ => jump_msd::<3>(&table_k, scales, &times, spec.n_particles, seed)?,
        };
        let mut est = run.estimate;
        est.b = Some(b_star);
        let target = diffusion_closed_form(p.dim, p.speed, b_star);
        checks.push(Check::new(
            "msd_within_10pct",
            ((est.value - target) / target).abs() <= 0.1,
            format!("D_msd = {:.6e} +- {:.2e}, spectral(B*) {:.6e}", est.value, est.std_error, target),
        ));
        checks.push(Check::new(
            "msd_r_squared",
            run.r_squared >= 0.99,
            format!("R^2 = {:.6}", run.r_squared),
        ));
        checks.push(Check::new(
            "jump_speed_conserved",
            run.max_speed_drift <= 1e-9,
            format!("max ||v| - speed| = {:.2e}", run.max_speed_drift),
        ));
        report.insert(
            "jump_process".into(),
            json!({
                "coupling": table_k.coupling,
                "B_limit": b_star,
                "B_table": b_eps,
                "D_from_B_table": diffusion_closed_form(p.dim, p.speed, b_eps),
                "collisions": run.collisions,
                "r_squared": run.r_squared,
            }),
        );
        table.push(b, "D_msd", target, est.value, est.std_error);
        estimates.push(est);
    }
    if estimates.len() > 1 {
        let mut ok = true;
        let mut detail = Vec::new();
        for a in 0..estimates.len() {
            for c in a + 1..estimates.len() {
                let (x, y) = (&estimates[a], &estimates[c]);
                let allowed = (x.std_error.powi(2) + y.std_error.powi(2)).sqrt() + 0.1 * spectral.value;
                let diff = (x.value - y.value).abs();
                ok &= diff <= allowed;
                detail.push(format!("|{:?} - {:?}| = {diff:.3e} (allowed {allowed:.3e})", x.method, y.method));
            }
        }
        checks.push(Check::new("route_consistency", ok, detail.join("; ")));
    }
    report.insert("estimates".into(), serde_json::to_value(&estimates).expect("estimates serialize"));
    let mut out = Outcome::from_table(table, report, checks);
    out.extra = extra;
    Ok(out)
}

fn converge_theta(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let (u, _) = matched_potential(spec)?;
    let s = spec.params.speed;
    let mut table = ConvergenceTable::new("epsilon");
    for &eps in &spec.epsilon_sweep {
        let t = table_at(spec, &u, eps)?;
        let born = t.rho().iter().map(|r| born_deflection(*r, s, &u).abs()).fold(0.0, f64::max);
        table.push(eps, "max_theta", spec.coupling_at(eps) * born, t.max_theta(), 0.0);
    }
    let alpha = spec.params.alpha;
    let mut checks = Vec::new();
    table.degenerate = table.rows.iter().all(|r| r.measured == 0.0);
    let slope = if table.degenerate { None } else { table.fit_slope("max_theta") };
    match slope {
        Some(sl) => checks.push(Check::new(
            "theta_slope_within_20pct",
            (sl.slope - alpha).abs() <= 0.2 * alpha,
            format!("slope {:.4} (CI [{:.4}, {:.4}]) vs alpha {alpha}", sl.slope, sl.ci_low, sl.ci_high),
        )),
        None if !table.degenerate => checks.push(Check::new(
            "theta_slope_within_20pct",
            false,
            "fewer than three non-zero rows".into(),
        )),
        None => {}
    }
    let report = obj(json!({
        "alpha": alpha,
        "speed": s,
        "degenerate": table.degenerate,
        "slope": slope,
    }));
    Ok(Outcome::from_table(table, report, checks))
}

/// `sum_k cos(k phi)` in two dimensions or `sum_k P_k(v_3 / speed)` in three.
pub fn test_field(dim: usize, speed: f64, modes: &[usize]) -> SphericalField {
    let degree = *modes.iter().max().expect("non-empty mode set");
    SphericalField::from_fn(dim, degree, speed, |v| {
        let val: f64 = if dim == 2 {
            let phi = v[1].atan2(v[0]);
            modes.iter().map(|k| (*k as f64 * phi).cos()).sum()
        } else {
            let z = v[2] / speed;
            modes.iter().map(|k| legendre(*k, z)).sum()
        };
        Complex64::new(val, 0.0)
    })
}

fn legendre(n: usize, z: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return 1.0;
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn field_name(modes: &[usize]) -> String {
    let m: Vec<String> = modes.iter().map(|k| k.to_string()).collect();
    format!("mismatch[{}]", m.join("+"))
}

/// Leading small-angle term of `(L - B Delta) f` for `f = sum_k cos(k phi)`:
/// `speed kappa^2 (k^4 - k^2) / 12 * ∫_0^1 theta_1^4` per mode.
fn predicted_mismatch(modes: &[usize], kappa: f64, speed: f64, born_fourth: f64) -> f64 {
    modes
        .iter()
        .map(|k| {
            let k2 = (*k * *k) as f64;
            let m = speed * kappa * kappa * (k2 * k2 - k2) / 12.0 * born_fourth;
            // cos(k phi) carries 1/2 on each of the modes +-k, total norm^2 1/2
            let w = if *k == 0 { 1.0 } else { 0.5 };
            m * m * w
        })
        .sum::<f64>()
        .sqrt()
}

fn converge_operator(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    if spec.params.dim != 2 {
        return Err(HarnessError::Spec("converge-operator runs in dim = 2".into()));
    }
    let (u, _) = matched_potential(spec)?;
    let (s, alpha) = (spec.params.speed, spec.params.alpha);
    let fields = spec.test_fields_or(&[&[2, 3], &[3, 4]]);
    let born_fourth = integrate(|r| born_deflection(r, s, &u).powi(4), 0.0, 1.0, 1e-16, 1e-12).value;
    let mut table = ConvergenceTable::new("epsilon");
    for &eps in &spec.epsilon_sweep {
        let t = table_at(spec, &u, eps)?;
        let b = landau_coefficient_b(&t, eps, alpha).b;
        for modes in &fields {
            let f = test_field(2, s, modes);
            let m = operator_mismatch(&f, &t, b, eps, alpha)?;
            let pred = predicted_mismatch(modes, spec.coupling_at(eps), s, born_fourth);
            table.push(eps, &field_name(modes), pred, m, 0.0);
        }
    }
    let mut checks = Vec::new();
    let mut slopes = Vec::new();
    let mut flags = Vec::new();
    for modes in &fields {
        let name = field_name(modes);
        let (_, m) = table.column(&name);
        let degenerate = m.iter().all(|x| x.abs() <= 1e-14);
        flags.push(json!({"field": name, "degenerate": degenerate}));
        if degenerate {
            continue;
        }
        match table.fit_slope(&name) {
            Some(sl) => {
                checks.push(Check::new(
                    &format!("operator_slope_within_20pct[{name}]"),
                    (sl.slope - 2.0 * alpha).abs() <= 0.4 * alpha,
                    format!("slope {:.4} (CI [{:.4}, {:.4}]) vs 2 alpha {}", sl.slope, sl.ci_low, sl.ci_high, 2.0 * alpha),
                ));
                slopes.push(sl);
            }
            None => checks.push(Check::new(
                &format!("operator_slope_within_20pct[{name}]"),
                false,
                "fewer than three rows".into(),
            )),
        }
    }
    table.degenerate = flags.iter().all(|f| f["degenerate"] == true);
    if slopes.len() > 1 {
        let ok = slopes.windows(2).all(|w| w[0].overlaps(&w[1]));
        checks.push(Check::new(
            "operator_slope_stability",
            ok,
            format!("{} slopes with pairwise overlapping CIs: {ok}", slopes.len()),
        ));
    }
    let report = obj(json!({
        "alpha": alpha,
        "speed": s,
        "fields": flags,
        "coefficient": "B(epsilon) of each table",
        "degenerate": table.degenerate,
    }));
    Ok(Outcome::from_table(table, report, checks))
}

struct HeatPoint {
    distance: f64,
    noise_floor: f64,
    msd: Option<(DiffusionEstimate, f64)>,
    max_speed_drift: f64,
    collisions: usize,
    kinetic: DensityField,
    predicted: DensityField,
}

fn heat_point<const D: usize>(
    spec: &ExperimentSpec,
    table: &ScatteringTable,
    scales: JumpScales,
    d_heat: f64,
    seed: u64,
) -> Result<HeatPoint, HarnessError> {
    let speed = table.speed;
    let t_end = spec.t_end;
    let times: Vec<f64> = if t_end > 0.0 { fit_times(spec)? } else { vec![0.0] };
    let sd = spec.initial_variance.sqrt();
    let n = spec.n_particles;
    let paths: Vec<Result<_, HarnessError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = stream(seed, i as u64);
            let mut x0 = Vector::<D>::zeros();
            for c in x0.iter_mut() {
                *c = sd * r.sample::<f64, _>(StandardNormal);
            }
            let v = random_on_sphere::<D, _>(speed, &mut r);
            let path = boltzmann_jump_evolve(KineticParticle::new(x0, v), t_end, table, scales, None, &times, &mut r)?;
            Ok((x0, path))
        })
        .collect();
    let mut start = Vec::with_capacity(n);
    let mut end = Vec::with_capacity(n);
    let mut disp = vec![Vec::with_capacity(n); times.len()];
    let mut drift = 0.0f64;
    let mut collisions = 0;
    for p in paths {
        let (x0, path) = p?;
        drift = drift.max(path.max_speed_drift);
        collisions += path.collisions;
        for (k, (x, _)) in path.states.iter().enumerate() {
            disp[k].push(x - x0);
        }
        start.push(x0.iter().copied().collect::<Vec<f64>>());
        end.push(path.final_particle.x.iter().copied().collect::<Vec<f64>>());
    }
    let (lo, hi, shape) = (vec![-spec.box_half; D], vec![spec.box_half; D], vec![spec.grid_cells; D]);
    let initial = DensityField::histogram(lo.clone(), hi.clone(), shape.clone(), &start, true)?;
    let kinetic = DensityField::histogram(lo, hi, shape, &end, true)?;
    let predicted = heat_solve(&initial, d_heat, t_end)?;
    let distance = kinetic.relative_l2_distance(&predicted);
    let vol = predicted.cell_volume();
    let var: f64 = predicted.values.iter().map(|p| p.max(0.0) / (n as f64 * vol)).sum();
    let norm: f64 = predicted.values.iter().map(|p| p * p).sum::<f64>().sqrt();
    let msd = if t_end > 0.0 {
        let (mut est, r2) = msd_fit(&times, &disp)?;
        est.speed = speed;
        Some((est, r2))
    } else {
        None
    };
    Ok(HeatPoint {
        distance,
        noise_floor: var.sqrt() / norm,
        msd,
        max_speed_drift: drift,
        collisions,
        kinetic,
        predicted,
    })
}

fn converge_heat(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let p = spec.params;
    let (u, b_star) = matched_potential(spec)?;
    let d_heat = diffusion_spectral(p.dim, p.speed, b_star)?.value;
    let mut table = ConvergenceTable::new("epsilon");
    let mut points = Vec::new();
    let mut last = None;
    for (j, &eps) in spec.epsilon_sweep.iter().enumerate() {
        let t = table_at(spec, &u, eps)?;
        let q = spec.params_at(eps);
        let eta = q.eta();
        let scales = JumpScales {
            transport_scale: eta.powf(q.delta),
            collision_scale: eta.powf(2.0 * q.delta) * eps.powf(-2.0 * q.alpha),
            mean_field_dt: 1.0,
        };
        let seed = child_seed(spec.seed, j as u64);
        let hp = match p.dim {
            2 => heat_point::<2>(spec, &t, scales, d_heat, seed)?,
            _ => heat_point::<3>(spec, &t, scales, d_heat, seed)?,
        };
        table.push(eps, "l2_distance", hp.noise_floor, hp.distance, hp.noise_floor);
        if let Some((est, _)) = &hp.msd {
            table.push(eps, "D_msd", d_heat, est.value, est.std_error);
        }
        points.push(json!({
            "epsilon": eps,
            "coupling": t.coupling,
            "eta": eta,
            "B_table": landau_coefficient_dim(&t, eps, q.alpha, q.dim).b,
            "distance": hp.distance,
            "noise_floor": hp.noise_floor,
            "D_msd": hp.msd.as_ref().map(|m| m.0.value),
            "D_msd_std_error": hp.msd.as_ref().map(|m| m.0.std_error),
            "r_squared": hp.msd.as_ref().map(|m| m.1),
            "collisions": hp.collisions,
            "max_speed_drift": hp.max_speed_drift,
        }));
        last = Some(hp);
    }
    let (_, dist) = table.column("l2_distance");
    let last = last.expect("non-empty sweep");
    let mut checks = vec![
        Check::new(
            "distance_decreasing",
            dist.windows(2).all(|w| w[1] < w[0]),
            format!("distances {dist:.4?}"),
        ),
        Check::new(
            "final_distance_below_5pct",
            last.distance < 0.05,
            format!("final distance {:.4} (noise floor {:.4})", last.distance, last.noise_floor),
        ),
        Check::new(
            "jump_speed_conserved",
            points.iter().all(|p| p["max_speed_drift"].as_f64().unwrap_or(0.0) <= 1e-9),
            "max ||v| - speed| over all sweep points".into(),
        ),
    ];
    if let Some((est, _)) = &last.msd {
        checks.push(Check::new(
            "msd_within_10pct",
            ((est.value - d_heat) / d_heat).abs() <= 0.1,
            format!("D_msd = {:.5e} +- {:.1e} vs D_spectral {:.5e}", est.value, est.std_error, d_heat),
        ));
    }
    let report = obj(json!({
        "B_limit": b_star,
        "D_spectral": d_heat,
        "t_end": spec.t_end,
        "initial_variance": spec.initial_variance,
        "points": points,
    }));
    let mut out = Outcome::from_table(table, report, checks);
    let mut k = Vec::new();
    last.kinetic.write_csv(&mut k)?;
    let mut h = Vec::new();
    last.predicted.write_csv(&mut h)?;
    out.extra = vec![
        ("kinetic_density.csv".into(), String::from_utf8(k).expect("utf8")),
        ("heat_density.csv".into(), String::from_utf8(h).expect("utf8")),
    ];
    Ok(out)
}

fn relax_to_average(spec: &ExperimentSpec) -> Result<Outcome, HarnessError> {
    let p = spec.params;
    let b = spec.b.unwrap_or(1.0);
    let etas: Vec<f64> = if spec.eta_sweep.is_empty() {
        spec.epsilon_sweep.iter().map(|e| spec.params_at(*e).eta()).collect()
    } else {
        spec.eta_sweep.clone()
    };
    if etas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(HarnessError::Spec("eta must increase along the sweep".into()));
    }
    let modes = spec.test_fields_or(&[&[0, 1]]).remove(0);
    let f0 = test_field(p.dim, p.speed, &modes);
    let avg0 = SphericalField::constant(p.dim, p.speed, f0.average());
    let dev0 = f0.sub(&avg0).l2_norm();
    let lf0 = apply_landau(&f0, b).l2_norm();
    let gap = spectral_gap(p.dim, p.speed, b);
    let mut table = ConvergenceTable::new("eta");
    let mut rates = Vec::new();
    let mut bound_ok = true;
    let mut worst_bound = 0.0f64;
    let mut degenerate = false;
    let mut to_avg = Vec::new();
    let mut to_init = Vec::new();
    for &eta in &etas {
        let scale = eta.powf(2.0 * p.delta);
        let horizon = spec.efolds / (gap * scale);
        let times: Vec<f64> = (0..=spec.n_times).map(|k| horizon * k as f64 / spec.n_times as f64).collect();
        let dev = relaxation_deviation(&f0, b, scale, &times);
        let fit = relaxation_fit(&times, &dev, eta, p.delta, b, p.speed, p.dim)?;
        degenerate |= fit.degenerate;
        for (t, d) in times.iter().zip(&dev) {
            let bound = (-gap * scale * t).exp() * dev0 * (1.0 + 1e-6);
            worst_bound = worst_bound.max(d - bound);
            bound_ok &= *d <= bound;
        }
        table.push(eta, "rate", fit.predicted, fit.rate, fit.rate_se);
        rates.push((scale, fit.rate));
        let t_eta = eta.powf(-p.t_eta_exponent);
        let g = landau_semigroup(&f0, b, scale * t_eta);
        let d_avg = g.sub(&avg0).l2_norm();
        let d_init = g.sub(&f0).l2_norm();
        table.push(eta, "dist_to_average_at_t_eta", (-gap * scale * t_eta).exp() * dev0, d_avg, 0.0);
        table.push(eta, "dist_to_initial_at_t_eta", t_eta * scale * lf0, d_init, 0.0);
        to_avg.push(d_avg);
        to_init.push(d_init);
    }
    table.degenerate = degenerate;
    let mut checks = Vec::new();
    if !degenerate {
        let (s0, r0) = rates[0];
        let worst = rates
            .iter()
            .map(|(s, r)| ((r / r0) / (s / s0) - 1.0).abs())
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "rate_ratio_within_5pct",
            worst <= 0.05,
            format!("largest relative deviation of rate ratios {worst:.2e}"),
        ));
        let worst_pred = rates
            .iter()
            .map(|(s, r)| (r / (gap * s) - 1.0).abs())
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "rate_matches_gap",
            worst_pred <= 0.02,
            format!("largest relative deviation from lambda eta^(2 delta): {worst_pred:.2e}"),
        ));
    }
    checks.push(Check::new(
        "homogeneous_bound",
        bound_ok,
        format!("largest excess over the bound {worst_bound:.2e}"),
    ));
    if etas.len() > 1 && dev0 > 0.0 {
        checks.push(Check::new(
            "close_to_initial_decreasing",
            to_init.windows(2).all(|w| w[1] < w[0]),
            format!("||g(t_eta) - f0|| along the sweep: {to_init:.3?}"),
        ));
    }
    // Reported, not checked: with t_eta -> 0 the solution at t_eta tends to
    // f0, not to its average.
    let avg_decreasing = to_avg.windows(2).all(|w| w[1] < w[0]);
    let report = obj(json!({
        "B": b,
        "lambda": gap,
        "omega": p.t_eta_exponent,
        "delta": p.delta,
        "initial_modes": modes,
        "degenerate": degenerate,
        "dist_to_average_at_t_eta": to_avg,
        "dist_to_initial_at_t_eta": to_init,
        "dist_to_average_decreasing": avg_decreasing,
        "note": "t_eta = eta^-omega with omega > 2 delta gives eta^(2 delta) t_eta -> 0, so g(t_eta) approaches f0; its distance to the sphere average tends to ||f0 - <f0>||",
    }));
    Ok(Outcome::from_table(table, report, checks))
}
