//! Convergence tables and their CSV form.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use lorentz_core::stats::log_log_fit;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    /// Value of the sweep variable (epsilon or eta).
    pub sweep: f64,
    pub observable: String,
    pub predicted: f64,
    pub measured: f64,
    pub error_bar: f64,
}

/// Fitted log-log slope with a 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slope {
    pub slope: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Slope {
    pub fn overlaps(&self, other: &Slope) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub sweep_variable: String,
    pub rows: Vec<Row>,
    /// Slope per fitted observable.
    pub slopes: Vec<(String, Slope)>,
    pub degenerate: bool,
}

impl ConvergenceTable {
    pub fn new(sweep_variable: &str) -> Self {
        Self {
            sweep_variable: sweep_variable.to_string(),
            rows: Vec::new(),
            slopes: Vec::new(),
            degenerate: false,
        }
    }

    pub fn push(&mut self, sweep: f64, observable: &str, predicted: f64, measured: f64, error_bar: f64) {
        self.rows.push(Row {
            sweep,
            observable: observable.to_string(),
            predicted,
            measured,
            error_bar,
        });
    }

    pub fn column(&self, observable: &str) -> (Vec<f64>, Vec<f64>) {
        self.rows
            .iter()
            .filter(|r| r.observable == observable)
            .map(|r| (r.sweep, r.measured))
            .unzip()
    }

    /// Fits `log measured` against `log sweep` for one observable. Returns
    /// `None` when fewer than three positive rows exist.
    pub fn fit_slope(&mut self, observable: &str) -> Option<Slope> {
        let (x, y) = self.column(observable);
        let keep: Vec<(f64, f64)> = x.into_iter().zip(y).filter(|(_, m)| *m > 0.0).collect();
        if keep.len() < 3 {
            return None;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = keep.into_iter().unzip();
        let fit = log_log_fit(&x, &y).ok()?;
        let dof = (fit.n - 2) as f64;
        let t = StudentsT::new(0.0, 1.0, dof).ok()?.inverse_cdf(0.975);
        let s = Slope {
            slope: fit.slope,
            std_error: fit.slope_se,
            ci_low: fit.slope - t * fit.slope_se,
            ci_high: fit.slope + t * fit.slope_se,
        };
        self.slopes.push((observable.to_string(), s));
        Some(s)
    }

    pub fn slope(&self, observable: &str) -> Option<Slope> {
        self.slopes.iter().find(|(o, _)| o == observable).map(|(_, s)| *s)
    }

    /// Whether rows appear in monotone order of the sweep variable.
    pub fn is_sorted(&self) -> bool {
        let v: Vec<f64> = self.rows.iter().map(|r| r.sweep).collect();
        v.windows(2).all(|w| w[1] <= w[0]) || v.windows(2).all(|w| w[1] >= w[0])
    }

    /// CSV `sweep,observable,predicted,measured,error_bar` preceded by
    /// `# key=value` metadata lines.
    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[(String, String)]) -> std::io::Result<()> {
        for (k, v) in metadata {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "# sweep_variable={}", self.sweep_variable)?;
        writeln!(w, "# degenerate={}", self.degenerate)?;
        for (o, s) in &self.slopes {
            writeln!(w, "# slope[{o}]={:e} ci=[{:e},{:e}]", s.slope, s.ci_low, s.ci_high)?;
        }
        writeln!(w, "{},observable,predicted,measured,error_bar", self.sweep_variable)?;
        for r in &self.rows {
            writeln!(w, "{:e},{},{:e},{:e},{:e}", r.sweep, r.observable, r.predicted, r.measured, r.error_bar)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let mut t = ConvergenceTable::new("epsilon");
        for e in [1e-1, 1e-2, 1e-3, 1e-4] {
            t.push(e, "y", 0.0, 3.0 * f64::powf(e, 0.4), 0.0);
        }
        let s = t.fit_slope("y").unwrap();
        assert!((s.slope - 0.4).abs() < 1e-12 && s.ci_low <= s.slope && s.slope <= s.ci_high);
        assert!(t.is_sorted());
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &[("seed".into(), "3".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed=3\n") && text.contains("epsilon,observable,predicted"));
    }
}
