//! The report every subcommand assembles, and its three renderings.
//!
//! All three formats draw from the same struct, so cross-format
//! consistency is a matter of formatting, not of recomputation. JSON keeps
//! full float precision (round-trip exact), tables round to nine
//! significant digits for reading, CSV prints the shortest decimal that
//! parses back to the same float.

use std::fmt::Write as _;

use qnf::{BoundKind, Check};
use serde::Serialize;

/// One echoed model-construction parameter.
#[derive(Debug, Clone, Serialize)]
pub struct Param {
    pub key: String,
    pub value: f64,
}

/// What the report was computed from.
#[derive(Debug, Clone, Serialize)]
pub struct ModelMeta {
    pub name: String,
    pub dim: usize,
    pub levels: usize,
    pub hbar: f64,
    pub parameters: Vec<Param>,
}

/// eps-polynomial E^N(eps) = sum_p c_p eps^p of one nondegenerate level.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRow {
    pub level: usize,
    pub energy0: f64,
    pub coefficients: Vec<f64>,
}

/// One approximate eigenvalue at one evaluation point.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRow {
    pub epsilon: f64,
    pub level: usize,
    /// Index within the level, ascending eigenvalue.
    pub state: usize,
    pub value: f64,
    /// || H(eps) v - value v || for the transported eigenvector.
    pub residual: f64,
}

/// One convergence fit from the compare command.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeRow {
    pub order: usize,
    /// "fit" when enough points sat above the noise floor, else "at_floor".
    pub outcome: String,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub points_used: usize,
    pub band_lo: f64,
    pub band_hi: f64,
    /// Largest eigenvalue error seen on the grid.
    pub max_error: f64,
    pub passed: bool,
}

/// Everything a subcommand reports. Sections it does not produce stay
/// empty and are omitted from the output.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub model: ModelMeta,
    pub order: usize,
    /// Set by expand: true when every perturbation order is zero, making
    /// the normal form exact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
    pub epsilons: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<CoefficientRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub spectra: Vec<SpectrumRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<SlopeRow>,
    pub passed: bool,
}

impl Report {
    pub fn new(command: &str, model: ModelMeta, order: usize) -> Report {
        Report {
            command: command.to_string(),
            model,
            order,
            exact: None,
            epsilons: Vec::new(),
            coefficients: Vec::new(),
            spectra: Vec::new(),
            checks: Vec::new(),
            slopes: Vec::new(),
            passed: true,
        }
    }

    /// Recomputes the verdict from the recorded rows.
    pub fn finish(mut self) -> Report {
        self.passed =
            self.checks.iter().all(|c| c.passed) && self.slopes.iter().all(|s| s.passed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

fn kind_str(kind: BoundKind) -> &'static str {
    match kind {
        BoundKind::UpperBound => "upper_bound",
        BoundKind::LowerBound => "lower_bound",
        BoundKind::AtFloor => "at_floor",
    }
}

/// Shortest decimal that parses back to the same float.
fn csv_f64(x: f64) -> String {
    format!("{x}")
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(csv_f64).unwrap_or_default()
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut text =
                serde_json::to_string_pretty(report).expect("report serializes infallibly");
            text.push('\n');
            text
        }
        Format::Csv => render_csv(report),
        Format::Table => render_table(report),
    }
}

/// Sectioned CSV: every row starts with its section tag, each section is
/// preceded by its own header row. Rows vary in width across sections.
fn render_csv(report: &Report) -> String {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());

    let rec = |fields: &[String]| fields.to_vec();
    w.write_record(rec(&[
        "report".into(),
        "command".into(),
        "order".into(),
        "exact".into(),
        "passed".into(),
    ]))
    .unwrap();
    w.write_record(rec(&[
        "report".into(),
        report.command.clone(),
        report.order.to_string(),
        report.exact.map(|b| b.to_string()).unwrap_or_default(),
        report.passed.to_string(),
    ]))
    .unwrap();

    w.write_record(rec(&[
        "model".into(),
        "name".into(),
        "dim".into(),
        "levels".into(),
        "hbar".into(),
    ]))
    .unwrap();
    w.write_record(rec(&[
        "model".into(),
        report.model.name.clone(),
        report.model.dim.to_string(),
        report.model.levels.to_string(),
        csv_f64(report.model.hbar),
    ]))
    .unwrap();

    if !report.model.parameters.is_empty() {
        w.write_record(rec(&["param".into(), "key".into(), "value".into()]))
            .unwrap();
        for p in &report.model.parameters {
            w.write_record(rec(&["param".into(), p.key.clone(), csv_f64(p.value)]))
                .unwrap();
        }
    }

    if !report.epsilons.is_empty() {
        w.write_record(rec(&["epsilon".into(), "value".into()])).unwrap();
        for &e in &report.epsilons {
            w.write_record(rec(&["epsilon".into(), csv_f64(e)])).unwrap();
        }
    }

    if !report.coefficients.is_empty() {
        let mut header = vec!["coefficient".to_string(), "level".into(), "energy0".into()];
        let n = report
            .coefficients
            .iter()
            .map(|r| r.coefficients.len())
            .max()
            .unwrap_or(0);
        for p in 0..n {
            header.push(format!("c{p}"));
        }
        w.write_record(&header).unwrap();
        for row in &report.coefficients {
            let mut fields = vec![
                "coefficient".to_string(),
                row.level.to_string(),
                csv_f64(row.energy0),
            ];
            fields.extend(row.coefficients.iter().map(|&c| csv_f64(c)));
            w.write_record(&fields).unwrap();
        }
    }

    if !report.spectra.is_empty() {
        w.write_record(rec(&[
            "spectrum".into(),
            "epsilon".into(),
            "level".into(),
            "state".into(),
            "value".into(),
            "residual".into(),
        ]))
        .unwrap();
        for row in &report.spectra {
            w.write_record(rec(&[
                "spectrum".into(),
                csv_f64(row.epsilon),
                row.level.to_string(),
                row.state.to_string(),
                csv_f64(row.value),
                csv_f64(row.residual),
            ]))
            .unwrap();
        }
    }

    if !report.checks.is_empty() {
        w.write_record(rec(&[
            "check".into(),
            "name".into(),
            "kind".into(),
            "value".into(),
            "bound".into(),
            "passed".into(),
            "detail".into(),
        ]))
        .unwrap();
        for c in &report.checks {
            w.write_record(rec(&[
                "check".into(),
                c.name.clone(),
                kind_str(c.kind).into(),
                csv_f64(c.value),
                csv_f64(c.bound),
                c.passed.to_string(),
                c.detail.clone(),
            ]))
            .unwrap();
        }
    }

    if !report.slopes.is_empty() {
        w.write_record(rec(&[
            "slope".into(),
            "order".into(),
            "outcome".into(),
            "slope".into(),
            "r_squared".into(),
            "points_used".into(),
            "band_lo".into(),
            "band_hi".into(),
            "max_error".into(),
            "passed".into(),
        ]))
        .unwrap();
        for s in &report.slopes {
            w.write_record(rec(&[
                "slope".into(),
                s.order.to_string(),
                s.outcome.clone(),
                csv_opt(s.slope),
                csv_opt(s.r_squared),
                s.points_used.to_string(),
                csv_f64(s.band_lo),
                csv_f64(s.band_hi),
                csv_f64(s.max_error),
                s.passed.to_string(),
            ]))
            .unwrap();
        }
    }

    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf8")
}

/// Nine significant digits, aligned for reading.
fn tbl(x: f64) -> String {
    format!("{x:>16.8e}")
}

fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let m = &report.model;
    let _ = writeln!(
        out,
        "qnf {}: {} (dim {}, {} levels, hbar {})",
        report.command, m.name, m.dim, m.levels, m.hbar
    );
    if !m.parameters.is_empty() {
        let params: Vec<String> = m
            .parameters
            .iter()
            .map(|p| format!("{} = {}", p.key, p.value))
            .collect();
        let _ = writeln!(out, "parameters: {}", params.join(", "));
    }
    let _ = writeln!(out, "order {}", report.order);
    if let Some(exact) = report.exact {
        let _ = writeln!(
            out,
            "exact: {}",
            if exact {
                "yes (no perturbation terms)"
            } else {
                "no"
            }
        );
    }
    if !report.epsilons.is_empty() {
        let eps: Vec<String> = report.epsilons.iter().map(|e| format!("{e:.3e}")).collect();
        let _ = writeln!(out, "epsilon grid: [{}]", eps.join(", "));
    }

    if !report.coefficients.is_empty() {
        let _ = writeln!(out, "\neigenvalue polynomials E^N_j(eps) = sum_p c_p eps^p");
        let n = report
            .coefficients
            .iter()
            .map(|r| r.coefficients.len())
            .max()
            .unwrap_or(0);
        let mut header = format!("{:>6} {:>16}", "level", "energy0");
        for p in 0..n {
            let _ = write!(header, " {:>16}", format!("c{p}"));
        }
        let _ = writeln!(out, "{header}");
        for row in &report.coefficients {
            let mut line = format!("{:>6} {}", row.level, tbl(row.energy0));
            for &c in &row.coefficients {
                let _ = write!(line, " {}", tbl(c));
            }
            let _ = writeln!(out, "{line}");
        }
    }

    if !report.spectra.is_empty() {
        let _ = writeln!(out, "\nspectrum");
        let _ = writeln!(
            out,
            "{:>12} {:>6} {:>6} {:>16} {:>12}",
            "epsilon", "level", "state", "value", "residual"
        );
        for row in &report.spectra {
            let _ = writeln!(
                out,
                "{:>12.4e} {:>6} {:>6} {} {:>12.3e}",
                row.epsilon,
                row.level,
                row.state,
                tbl(row.value),
                row.residual
            );
        }
    }

    if !report.checks.is_empty() {
        let _ = writeln!(out, "\nchecks");
        let _ = writeln!(
            out,
            "{:<26} {:>12} {:>12} {:>12} {:>7}",
            "name", "kind", "value", "bound", "verdict"
        );
        for c in &report.checks {
            let _ = writeln!(
                out,
                "{:<26} {:>12} {:>12.3e} {:>12.3e} {:>7}  {}",
                c.name,
                kind_str(c.kind),
                c.value,
                c.bound,
                if c.passed { "pass" } else { "FAIL" },
                c.detail
            );
        }
    }

    if !report.slopes.is_empty() {
        let _ = writeln!(out, "\nconvergence slopes");
        let _ = writeln!(
            out,
            "{:>6} {:>9} {:>12} {:>10} {:>7} {:>16} {:>12} {:>7}",
            "order", "outcome", "slope", "r^2", "points", "band", "max_err", "verdict"
        );
        for s in &report.slopes {
            let slope = s
                .slope
                .map(|v| format!("{v:>12.6}"))
                .unwrap_or_else(|| format!("{:>12}", "-"));
            let r2 = s
                .r_squared
                .map(|v| format!("{v:>10.6}"))
                .unwrap_or_else(|| format!("{:>10}", "-"));
            let _ = writeln!(
                out,
                "{:>6} {:>9} {slope} {r2} {:>7} [{:>6.2}, {:>6.2}] {:>12.3e} {:>7}",
                s.order,
                s.outcome,
                s.points_used,
                s.band_lo,
                s.band_hi,
                s.max_error,
                if s.passed { "pass" } else { "FAIL" },
            );
        }
    }

    let n_items = report.checks.len() + report.slopes.len();
    let _ = writeln!(
        out,
        "\nverdict: {} ({} recorded {})",
        if report.passed { "PASS" } else { "FAIL" },
        n_items,
        if n_items == 1 { "item" } else { "items" }
    );
    out
}
