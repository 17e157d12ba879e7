//! JSON scenarios: load and validate a config, run the chart, write reports.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::darboux::{darboux_chart, ChartOptions, DarbouxReport, DomainSpec};
use crate::error::{Error, Result};
use crate::linalg::{canonical_form, to_row_major};
use crate::moser::JacobianMode;
use crate::projective::DEFAULT_H_FD;
use crate::symplectic::{FieldSpec, FormSpec, SymplecticField, DEFAULT_SIGMA_MIN_TOL};
use crate::tower::{Tower, TowerSpec};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Exit codes of a scenario run.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tower: TowerSpec,
    pub field: FieldSpec,
    pub domain: DomainSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "OutputSpec::is_empty")]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub step: f64,
    pub quad_n: usize,
    pub h_fd: f64,
    pub sigma_min_tol: f64,
    pub jacobian: JacobianMode,
    pub pullback_tol: f64,
    pub drift_tol: f64,
    pub consistency_tol: f64,
    pub hypothesis_t_points: usize,
    pub drift_checkpoints: usize,
    pub kappa_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub refine: bool,
    pub h4_points: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let c = ChartOptions::default();
        SolverSpec {
            step: c.step,
            quad_n: c.quad_n,
            h_fd: DEFAULT_H_FD,
            sigma_min_tol: DEFAULT_SIGMA_MIN_TOL,
            jacobian: c.jacobian,
            pullback_tol: c.pullback_tol,
            drift_tol: c.drift_tol,
            consistency_tol: c.consistency_tol,
            hypothesis_t_points: c.hypothesis_t_points,
            drift_checkpoints: c.drift_checkpoints,
            kappa_max: c.kappa_max,
            bound: c.bound,
            refine: c.refine,
            h4_points: c.h4_points,
        }
    }
}

impl SolverSpec {
    pub fn chart_options(&self) -> ChartOptions {
        ChartOptions {
            step: self.step,
            quad_n: self.quad_n,
            jacobian: self.jacobian,
            pullback_tol: self.pullback_tol,
            drift_tol: self.drift_tol,
            consistency_tol: self.consistency_tol,
            hypothesis_t_points: self.hypothesis_t_points,
            drift_checkpoints: self.drift_checkpoints,
            kappa_max: self.kappa_max,
            bound: self.bound,
            refine: self.refine,
            h4_points: self.h4_points,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

impl OutputSpec {
    pub fn is_empty(&self) -> bool {
        self.report.is_none() && self.csv.is_none()
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// JSON pointer of a deserialization error; a missing field is appended to the path.
fn pointer_of(path: &serde_path_to_error::Path, message: &str) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            out.push('/');
            out.push_str(field);
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().to_string();
            config_error(&pointer_of(e.path(), &message), message)
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    /// Checks the value-level constraints that the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(config_error(
                "/schema_version",
                format!("unsupported schema version {}, expected {SCENARIO_SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.tower.levels.is_empty() {
            return Err(config_error("/tower/levels", "a tower needs at least one level"));
        }
        if !(self.domain.radius > 0.0) || !self.domain.radius.is_finite() {
            return Err(config_error("/domain/radius", "must be positive"));
        }
        let s = &self.solver;
        let positive = [
            ("step", s.step),
            ("h_fd", s.h_fd),
            ("sigma_min_tol", s.sigma_min_tol),
            ("pullback_tol", s.pullback_tol),
            ("drift_tol", s.drift_tol),
            ("consistency_tol", s.consistency_tol),
            ("kappa_max", s.kappa_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_error(&format!("/solver/{name}"), format!("must be positive, got {v}")));
            }
        }
        if let Some(m) = s.bound {
            if !(m > 0.0) {
                return Err(config_error("/solver/bound", format!("must be positive, got {m}")));
            }
        }
        if let Some(t) = self.tower.tol_thread {
            if !(t > 0.0) {
                return Err(config_error("/tower/tol_thread", format!("must be positive, got {t}")));
            }
        }
        let counts = [
            ("quad_n", s.quad_n, 1),
            ("hypothesis_t_points", s.hypothesis_t_points, 2),
            ("drift_checkpoints", s.drift_checkpoints, 2),
        ];
        for (name, v, min) in counts {
            if v < min {
                return Err(config_error(&format!("/solver/{name}"), format!("must be at least {min}, got {v}")));
            }
        }
        Ok(())
    }

    /// Builds the tower and field and runs the chart.
    pub fn run(&self) -> Result<DarbouxReport> {
        let tower = Arc::new(Tower::build(&self.tower)?);
        let field = SymplecticField::from_spec(tower.clone(), &self.field)?
            .with_h_fd(self.solver.h_fd)
            .with_sigma_min_tol(self.solver.sigma_min_tol);
        darboux_chart(&tower, &Arc::new(field), &self.domain, &self.solver.chart_options())
    }
}

/// Result of [`run_scenario`]: the report and the exit code it maps to.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: DarbouxReport,
    pub exit_code: i32,
}

/// Report destinations; command-line paths take precedence over the config.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// Loads, runs and writes the reports of one scenario. The exit code is
/// [`EXIT_PASS`] or [`EXIT_FAIL`]; errors map to [`EXIT_ERROR`] via [`exit_code`].
pub fn run_scenario(config_path: &Path, outputs: &RunOutputs) -> Result<ScenarioOutcome> {
    let scenario = Scenario::load(config_path)?;
    let report = scenario.run()?;
    let report_path = outputs.report.clone().or_else(|| scenario.output.report.clone());
    let csv_path = outputs.csv.clone().or_else(|| scenario.output.csv.clone());
    if let Some(p) = report_path {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(&p, json + "\n").map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = csv_path {
        let file = std::fs::File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        report.write_csv(std::io::BufWriter::new(file))?;
    }
    let exit_code = if report.passed() { EXIT_PASS } else { EXIT_FAIL };
    Ok(ScenarioOutcome { report, exit_code })
}

pub fn exit_code(result: &Result<ScenarioOutcome>) -> i32 {
    match result {
        Ok(o) => o.exit_code,
        Err(_) => EXIT_ERROR,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Trivial,
    LinearPerturbation,
    Degenerate,
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trivial" => Ok(CaseKind::Trivial),
            "linear_perturbation" => Ok(CaseKind::LinearPerturbation),
            "degenerate" => Ok(CaseKind::Degenerate),
            other => Err(Error::DomainError(format!(
                "unknown case kind {other:?}; expected trivial, linear_perturbation or degenerate"
            ))),
        }
    }
}

pub const DEFAULT_PERTURBATION: f64 = 0.3;

/// Reproducible scenario on an identity-gram inclusion tower with the canonical form.
///
/// `linear_perturbation` multiplies the first canonical block by `1 + eps x1`.
/// `degenerate` uses the same shape with `eps` (default `-1`) and adds the
/// point `x1 = -1/eps`, where the form vanishes on that block.
pub fn generate_case(kind: CaseKind, dim: usize, depth: usize, epsilon: Option<f64>, seed: u64) -> Result<Scenario> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::DomainError(format!(
            "the canonical form needs an even dimension >= 2, got {dim}"
        )));
    }
    if depth == 0 {
        return Err(Error::DomainError("depth must be at least 1".into()));
    }
    let base = to_row_major(&canonical_form(dim)?);
    let mut solver = SolverSpec::default();
    let mut domain = DomainSpec {
        radius: 0.5,
        samples: 10,
        seed,
        points: Vec::new(),
    };
    let form = match kind {
        CaseKind::Trivial => {
            solver.step = 1e-2;
            solver.pullback_tol = 1e-12;
            solver.drift_tol = 1e-12;
            FormSpec::Constant { matrix: base }
        }
        CaseKind::LinearPerturbation => {
            let eps = epsilon.unwrap_or(DEFAULT_PERTURBATION);
            if !eps.is_finite() {
                return Err(Error::DomainError(format!("epsilon must be finite, got {eps}")));
            }
            domain.samples = 20;
            solver.pullback_tol = 1e-5;
            solver.drift_tol = 1e-5;
            FormSpec::LinearPerturbation { base, coordinate: 1, epsilon: eps, pair: None }
        }
        CaseKind::Degenerate => {
            let eps = match epsilon {
                Some(e) if e != 0.0 && e.is_finite() => e,
                Some(e) if e == 0.0 || !e.is_finite() => {
                    return Err(Error::DomainError(format!(
                        "a degenerate case needs a nonzero finite epsilon, got {e}"
                    )))
                }
                _ => -1.0,
            };
            let mut singular = vec![0.0; dim];
            singular[0] = -1.0 / eps;
            domain.points.push(singular);
            solver.step = 1e-2;
            FormSpec::LinearPerturbation { base, coordinate: 1, epsilon: eps, pair: None }
        }
    };
    let name = match kind {
        CaseKind::Trivial => "trivial",
        CaseKind::LinearPerturbation => "linear_perturbation",
        CaseKind::Degenerate => "degenerate",
    };
    Ok(Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: Some(format!("{name}_{dim}d_depth{depth}")),
        tower: TowerSpec::inclusion(depth, dim, |_| 1.0),
        field: FieldSpec { form, base_point: None },
        domain,
        solver,
        output: OutputSpec::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Text,
    Csv,
}

impl std::str::FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(RenderFormat::Text),
            "csv" => Ok(RenderFormat::Csv),
            other => Err(Error::DomainError(format!("unknown format {other:?}; expected text or csv"))),
        }
    }
}

pub fn parse_report(text: &str) -> Result<DarbouxReport> {
    if text.trim().is_empty() {
        return Err(Error::Parse("report is empty".into()));
    }
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Summary table of a report file.
pub fn render_report(path: &Path, format: RenderFormat) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let report = parse_report(&text)?;
    Ok(render(&report, format))
}

struct Row {
    name: &'static str,
    value: String,
    tolerance: String,
    pass: bool,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.3e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_value).unwrap_or_else(|| "undefined".into())
}

fn rows(r: &DarbouxReport) -> Vec<Row> {
    let h = &r.hypotheses;
    vec![
        Row {
            name: "H1 min singular value",
            value: fmt_value(h.h1.min_singular_value),
            tolerance: format!(">= {}", fmt_value(h.h1.sigma_min_tol)),
            pass: h.h1.min_singular_value >= h.h1.sigma_min_tol,
        },
        Row {
            name: "H1 max condition number",
            value: fmt_opt(h.h1.max_condition),
            tolerance: format!("<= {}", fmt_value(h.h1.kappa_max)),
            pass: h.h1.max_condition.is_some_and(|k| k <= h.h1.kappa_max),
        },
        Row {
            name: "H2 primitive residual",
            value: fmt_value(h.h2.primitive_residual),
            tolerance: format!("<= {}", fmt_value(h.h2.tolerance)),
            pass: h.h2.primitive_residual <= h.h2.tolerance,
        },
        Row {
            name: "H2 closedness residual",
            value: fmt_value(h.h2.closed_residual),
            tolerance: format!("<= {}", fmt_value(h.h2.tolerance)),
            pass: h.h2.closed_residual <= h.h2.tolerance,
        },
        Row {
            name: "H3 implied M",
            value: fmt_opt(h.h3.implied_m),
            tolerance: h.h3.bound.map(|b| format!("<= {}", fmt_value(b))).unwrap_or_else(|| "finite".into()),
            pass: h.h3.pass,
        },
        Row {
            name: "H4 inverse modulus (sampled)",
            value: fmt_opt(h.h4.modulus),
            tolerance: "finite".into(),
            pass: h.h4.pass,
        },
        Row {
            name: "compatibility psi relation",
            value: fmt_value(r.compatibility.psi_relation_residual),
            tolerance: "thread tol".into(),
            pass: r.compatibility.pass,
        },
        Row {
            name: "compatibility restriction",
            value: fmt_value(r.compatibility.restriction_residual),
            tolerance: "thread tol".into(),
            pass: r.compatibility.pass,
        },
        Row {
            name: "pullback residual",
            value: fmt_value(r.pullback.max),
            tolerance: format!("<= {}", fmt_value(r.pullback.tolerance)),
            pass: r.pullback.pass,
        },
        Row {
            name: "Moser invariant drift",
            value: fmt_value(r.drift.max),
            tolerance: format!("<= {}", fmt_value(r.drift.tolerance)),
            pass: r.drift.pass,
        },
        Row {
            name: "level-flow consistency",
            value: fmt_value(r.consistency.max),
            tolerance: format!("<= {}", fmt_value(r.consistency.tolerance)),
            pass: r.consistency.pass,
        },
    ]
}

fn status(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn render(report: &DarbouxReport, format: RenderFormat) -> String {
    let table = rows(report);
    match format {
        RenderFormat::Text => {
            let errors = report.samples.iter().filter(|s| s.error.is_some()).count();
            let dims: Vec<String> = report.dims.iter().map(|d| d.to_string()).collect();
            let mut out = String::new();
            out.push_str(&format!("verdict: {}\n", report.verdict));
            out.push_str(&format!("schema_version: {}\n", report.schema_version));
            out.push_str(&format!("levels: {} (dims {})\n", report.depth, dims.join(", ")));
            out.push_str(&format!("samples: {} ({} with errors)\n\n", report.samples.len(), errors));
            out.push_str(&format!("{:<30} {:>12}  {:<14} {}\n", "check", "value", "tolerance", "status"));
            for row in &table {
                out.push_str(&format!(
                    "{:<30} {:>12}  {:<14} {}\n",
                    row.name,
                    row.value,
                    row.tolerance,
                    status(row.pass)
                ));
            }
            if !report.failures.is_empty() {
                out.push_str("\nfailures:\n");
                for f in &report.failures {
                    out.push_str(&format!("  - {f}\n"));
                }
            }
            out
        }
        RenderFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["check", "value", "tolerance", "status"]).expect("in-memory write");
            w.write_record(["verdict", &report.verdict.to_string(), "", status(report.passed())])
                .expect("in-memory write");
            for row in &table {
                w.write_record([row.name, &row.value, &row.tolerance, status(row.pass)])
                    .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
    }
}
