//! End-to-end Darboux chart on a sampled ball: hypothesis margins, the
//! isotopy from every sample, and the pullback certificate `Phi^* sigma = sigma_p`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_extremes, Matrix, Vector};
use crate::moser::{
    integrate_isotopy, pullback_residuals, uniform_grid, IsotopyOptions, JacobianMode, MoserField,
};
use crate::sampling::Sampler;
use crate::symplectic::{check_closed, check_compatibility, sharp_level, MoserDeformation, SymplecticField};
use crate::tower::{make_thread, ThreadVector, Tower};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Ball around the base point, measured in the deepest-level norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub radius: f64,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Extra deepest-level points, checked before the random ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartOptions {
    pub step: f64,
    pub quad_n: usize,
    pub jacobian: JacobianMode,
    pub pullback_tol: f64,
    pub drift_tol: f64,
    pub consistency_tol: f64,
    /// Points of the `t` grid on `[-1, 1]` used for H1 and H3.
    pub hypothesis_t_points: usize,
    pub drift_checkpoints: usize,
    pub kappa_max: f64,
    /// Bound `M` to hold the implied constant of H3 against; none means report only.
    pub bound: Option<f64>,
    /// Repeat every isotopy at half the step and report the change.
    pub refine: bool,
    /// Cap on the number of samples entering pairwise H4 quotients.
    pub h4_points: usize,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions {
            step: 1e-3,
            quad_n: crate::moser::DEFAULT_QUAD_N,
            jacobian: JacobianMode::Analytic,
            pullback_tol: 1e-6,
            drift_tol: 1e-6,
            consistency_tol: 1e-9,
            hypothesis_t_points: 21,
            drift_checkpoints: 11,
            kappa_max: 1e3,
            bound: None,
            refine: false,
            h4_points: 50,
        }
    }
}

impl ChartOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step", self.step),
            ("pullback_tol", self.pullback_tol),
            ("drift_tol", self.drift_tol),
            ("consistency_tol", self.consistency_tol),
            ("kappa_max", self.kappa_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::DomainError(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.quad_n == 0 || self.hypothesis_t_points < 2 || self.drift_checkpoints < 2 {
            return Err(Error::DomainError(
                "quad_n must be >= 1, hypothesis_t_points and drift_checkpoints >= 2".into(),
            ));
        }
        if let Some(m) = self.bound {
            if !(m > 0.0) {
                return Err(Error::DomainError(format!("bound must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Margin {
    /// Smallest weighted singular value of `S^t` over samples, `t` grid and levels.
    pub min_singular_value: f64,
    pub max_condition: Option<f64>,
    pub sigma_min_tol: f64,
    pub kappa_max: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Margin {
    /// Max of `|d alpha - (sigma - sigma_p)|` with `d alpha` by central differences.
    pub primitive_residual: f64,
    pub closed_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Margin {
    /// Max of `|X_i(x_i)|_i * |((sigma^t)^b)^-1|_op`.
    pub implied_m: Option<f64>,
    pub bound: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Margin {
    /// Max difference quotient of `x -> (sigma_x^b)^-1` over sample pairs.
    pub modulus: Option<f64>,
    pub pairs: usize,
    pub label: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub h1: H1Margin,
    pub h2: H2Margin,
    pub h3: H3Margin,
    pub h4: H4Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub max: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityMargin {
    pub psi_relation_residual: f64,
    pub restriction_residual: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// Deepest-level coordinates.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pullback_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<f64>,
    /// Pullback residual at half the step, when refinement is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_pullback_residual: Option<f64>,
    /// `|Phi_h(x) - Phi_{h/2}(x)|`, when refinement is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement_change: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarbouxReport {
    pub schema_version: u32,
    pub verdict: Verdict,
    /// Reasons for a failing verdict, in check order.
    pub failures: Vec<String>,
    pub depth: usize,
    pub dims: Vec<usize>,
    pub hypotheses: Hypotheses,
    pub compatibility: CompatibilityMargin,
    pub pullback: Check,
    pub drift: Check,
    pub consistency: Check,
    pub options: ChartOptions,
    pub samples: Vec<SampleReport>,
}

impl DarbouxReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn max_pullback_residual(&self) -> f64 {
        self.pullback.max
    }

    /// One row per sample: `index, x1..xD, pullback_residual, drift, consistency, error`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let width = self.dims.last().copied().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        header.extend((1..=width).map(|k| format!("x{k}")));
        header.extend(
            ["pullback_residual", "drift", "consistency", "ode_residual", "error"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for s in &self.samples {
            let mut row = vec![s.index.to_string()];
            for k in 0..width {
                row.push(s.point.get(k).map(|v| format!("{v:e}")).unwrap_or_default());
            }
            row.push(opt(s.pullback_residual));
            row.push(opt(s.drift));
            row.push(opt(s.consistency));
            row.push(opt(s.ode_residual));
            row.push(s.error.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Deepest-level sample points: the explicit ones, then `samples` uniform draws
/// from the ball `|x - p| <= radius`.
pub fn sample_domain(tower: &Tower, base: &Vector, domain: &DomainSpec) -> Result<Vec<Vector>> {
    if !(domain.radius > 0.0) || !domain.radius.is_finite() {
        return Err(Error::DomainError(format!("radius must be positive, got {}", domain.radius)));
    }
    let deepest = tower.deepest();
    let dim = tower.dim(deepest);
    let mut out = Vec::with_capacity(domain.points.len() + domain.samples);
    for p in &domain.points {
        let v = Vector::from_column_slice(p);
        tower.check_dim(deepest, &v, "domain point")?;
        out.push(v);
    }
    // |x|_G = |C^T x|, so x = C^-T b maps the unit ball onto the unit G-ball.
    let chol_t = tower.level(deepest).chol().transpose();
    let mut sampler = Sampler::new(domain.seed);
    for _ in 0..domain.samples {
        let b = sampler.in_unit_ball(dim) * domain.radius;
        let x = chol_t
            .solve_upper_triangular(&b)
            .expect("cholesky factor is invertible");
        out.push(base + x);
    }
    Ok(out)
}

struct SampleOutcome {
    report: SampleReport,
    h1_min: f64,
    kappa: Option<f64>,
    h2: f64,
    closed: f64,
    h3: Option<f64>,
}

/// Builds the chart on the sampled domain. Numerical failures at individual
/// samples are recorded and fail the verdict; they are not returned as errors.
pub fn darboux_chart(
    tower: &Arc<Tower>,
    field: &Arc<SymplecticField>,
    domain: &DomainSpec,
    opts: &ChartOptions,
) -> Result<DarbouxReport> {
    opts.validate()?;
    if !Arc::ptr_eq(tower, field.tower()) && tower.spec() != field.tower().spec() {
        return Err(Error::ShapeMismatch("field is defined on a different tower".into()));
    }
    let base = field.base_point().level(tower.deepest()).clone();
    let points = sample_domain(tower, &base, domain)?;
    let moser = MoserField::new(MoserDeformation::new(field.clone()), opts.quad_n)?.with_jacobian_mode(opts.jacobian);
    let h2_tol = (10.0 * field.h_fd()).max(1e-6);

    let outcomes: Vec<SampleOutcome> = points
        .par_iter()
        .enumerate()
        .map(|(index, top)| process_sample(&moser, index, top, opts))
        .collect();

    let mut failures = Vec::new();
    let mut h1_min = f64::INFINITY;
    let mut kappa = Some(0.0_f64);
    let (mut h2, mut closed) = (0.0_f64, 0.0_f64);
    let mut implied_m = Some(0.0_f64);
    let (mut pull, mut drift, mut cons) = (0.0_f64, 0.0_f64, 0.0_f64);
    for o in &outcomes {
        h1_min = h1_min.min(o.h1_min);
        kappa = match (kappa, o.kappa) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        h2 = h2.max(o.h2);
        closed = closed.max(o.closed);
        implied_m = match (implied_m, o.h3) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        pull = pull.max(o.report.pullback_residual.unwrap_or(0.0));
        drift = drift.max(o.report.drift.unwrap_or(0.0));
        cons = cons.max(o.report.consistency.unwrap_or(0.0));
        if let Some(e) = &o.report.error {
            failures.push(format!("sample {}: {e}", o.report.index));
        }
    }
    if outcomes.is_empty() {
        h1_min = 0.0;
        failures.push("domain has no samples".into());
    }

    let h1 = H1Margin {
        min_singular_value: h1_min,
        max_condition: kappa,
        sigma_min_tol: field.sigma_min_tol(),
        kappa_max: opts.kappa_max,
        pass: h1_min >= field.sigma_min_tol() && kappa.is_some_and(|k| k <= opts.kappa_max),
    };
    let h2m = H2Margin {
        primitive_residual: h2,
        closed_residual: closed,
        tolerance: h2_tol,
        pass: h2 <= h2_tol && closed <= h2_tol,
    };
    let h3 = H3Margin {
        implied_m,
        bound: opts.bound,
        pass: match (implied_m, opts.bound) {
            (Some(m), Some(b)) => m <= b,
            (Some(m), None) => m.is_finite(),
            (None, _) => false,
        },
    };
    let (modulus, pairs) = h4_modulus(field, &points, opts.h4_points);
    let h4 = H4Margin {
        modulus,
        pairs,
        label: "sampled".into(),
        pass: modulus.is_some_and(f64::is_finite),
    };

    let threads: Vec<ThreadVector> = points
        .iter()
        .filter_map(|p| make_thread(tower, p).ok())
        .collect();
    let compatibility = match check_compatibility(field, &threads) {
        Ok(c) => CompatibilityMargin {
            psi_relation_residual: c.psi_relation_residual,
            restriction_residual: c.restriction_residual,
            pass: c.pass,
            error: None,
        },
        Err(e) => CompatibilityMargin {
            psi_relation_residual: f64::NAN,
            restriction_residual: f64::NAN,
            pass: false,
            error: Some(e.to_string()),
        },
    };

    let pullback = Check { max: pull, tolerance: opts.pullback_tol, pass: pull <= opts.pullback_tol };
    let drift = Check { max: drift, tolerance: opts.drift_tol, pass: drift <= opts.drift_tol };
    let consistency = Check { max: cons, tolerance: opts.consistency_tol, pass: cons <= opts.consistency_tol };

    let mut named = vec![
        ("H1 invertibility margin", h1.pass),
        ("H2 primitive residual", h2m.pass),
        ("H3 implied bound", h3.pass),
        ("H4 inverse modulus", h4.pass),
        ("compatibility", compatibility.pass),
        ("pullback residual", pullback.pass),
        ("Moser invariant drift", drift.pass),
        ("level-flow consistency", consistency.pass),
    ];
    named.retain(|(_, ok)| !ok);
    let mut reasons: Vec<String> = named.into_iter().map(|(n, _)| format!("{n} out of tolerance")).collect();
    reasons.extend(failures);
    let verdict = if reasons.is_empty() { Verdict::Pass } else { Verdict::Fail };

    Ok(DarbouxReport {
        schema_version: REPORT_SCHEMA_VERSION,
        verdict,
        failures: reasons,
        depth: tower.depth(),
        dims: (0..tower.depth()).map(|i| tower.dim(i)).collect(),
        hypotheses: Hypotheses { h1, h2: h2m, h3, h4 },
        compatibility,
        pullback,
        drift,
        consistency,
        options: opts.clone(),
        samples: outcomes.into_iter().map(|o| o.report).collect(),
    })
}

fn t_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64)
        .collect()
}

fn process_sample(moser: &MoserField, index: usize, top: &Vector, opts: &ChartOptions) -> SampleOutcome {
    let mut report = SampleReport {
        index,
        point: top.as_slice().to_vec(),
        pullback_residual: None,
        drift: None,
        consistency: None,
        ode_residual: None,
        max_speed: None,
        refined_pullback_residual: None,
        refinement_change: None,
        trajectory: Vec::new(),
        error: None,
    };
    let mut outcome = SampleOutcome {
        report: report.clone(),
        h1_min: 0.0,
        kappa: None,
        h2: f64::INFINITY,
        closed: f64::INFINITY,
        h3: None,
    };
    let x = match make_thread(moser.tower(), top) {
        Ok(x) => x,
        Err(e) => {
            outcome.report.error = Some(e.to_string());
            return outcome;
        }
    };
    let (h1_min, kappa) = h1_at(moser.field(), &x, opts.hypothesis_t_points);
    outcome.h1_min = h1_min;
    outcome.kappa = kappa;
    match h2_at(moser, &x) {
        Ok((r, c)) => {
            outcome.h2 = r;
            outcome.closed = c;
        }
        Err(e) => report.error = Some(format!("primitive check: {e}")),
    }
    outcome.h3 = h3_at(moser, &x, opts.hypothesis_t_points).ok();

    let isotopy = IsotopyOptions {
        step: opts.step,
        checkpoints: uniform_grid(opts.drift_checkpoints),
        ..Default::default()
    };
    let run = integrate_isotopy(moser, &x, &isotopy).and_then(|traj| {
        let residuals = pullback_residuals(moser, &traj)?;
        Ok((traj, residuals))
    });
    match run {
        Ok((traj, residuals)) => {
            let deepest = moser.tower().deepest();
            report.pullback_residual = residuals.last().copied();
            report.drift = Some(residuals.iter().cloned().fold(0.0, f64::max));
            report.consistency = Some(traj.max_consistency());
            report.ode_residual = Some(traj.ode_residual);
            report.max_speed = Some(traj.max_speed);
            report.trajectory = traj
                .times
                .iter()
                .zip(&traj.states)
                .map(|(t, s)| TrajectoryPoint { t: *t, x: s.level(deepest).as_slice().to_vec() })
                .collect();
            if opts.refine {
                let half = IsotopyOptions { step: opts.step / 2.0, ..isotopy };
                match integrate_isotopy(moser, &x, &half).and_then(|t2| {
                    let r2 = pullback_residuals(moser, &t2)?;
                    Ok((t2, r2))
                }) {
                    Ok((t2, r2)) => {
                        report.refined_pullback_residual = r2.last().copied();
                        report.refinement_change = Some(t2.endpoint().distance(traj.endpoint(), moser.tower()));
                    }
                    Err(e) => report.error = Some(format!("refined isotopy: {e}")),
                }
            }
        }
        Err(e) => {
            report.error = Some(match report.error.take() {
                Some(prev) => format!("{prev}; isotopy: {e}"),
                None => format!("isotopy: {e}"),
            })
        }
    }
    outcome.report = report;
    outcome
}

fn h1_at(field: &SymplecticField, x: &ThreadVector, t_points: usize) -> (f64, Option<f64>) {
    let mut min = f64::INFINITY;
    let mut kappa = Some(0.0_f64);
    for t in t_grid(t_points) {
        for i in 0..field.depth() {
            match field.form_t(i, x.level(i), t) {
                Ok(st) => {
                    let (hi, lo) = singular_extremes(&field.weighted(i, &st));
                    let lo = if lo.is_nan() { 0.0 } else { lo };
                    min = min.min(lo);
                    kappa = kappa.and_then(|k| (lo > 0.0).then(|| k.max(hi / lo)));
                }
                Err(_) => {
                    min = 0.0;
                    kappa = None;
                }
            }
        }
    }
    (min, kappa)
}

/// Central-difference exterior derivative of the primitive against `S - S_p`,
/// plus closedness of `sigma`.
fn h2_at(moser: &MoserField, x: &ThreadVector) -> Result<(f64, f64)> {
    let field = moser.field();
    let mut worst = 0.0_f64;
    let mut closed = 0.0_f64;
    for i in 0..field.depth() {
        let xi = x.level(i);
        let n = xi.len();
        let mut jac = Matrix::zeros(n, n);
        for k in 0..n {
            let h = field.h_fd() * xi[k].abs().max(1.0);
            let mut xp = xi.clone();
            let mut xm = xi.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (moser.alpha_level(i, &xp)? - moser.alpha_level(i, &xm)?) / (2.0 * h);
            jac.set_column(k, &col);
        }
        let d_alpha = jac.transpose() - &jac;
        let bar = moser.deformation().deviation(i, xi)?;
        worst = worst.max((d_alpha - bar).amax());
        closed = closed.max(check_closed(field, i, xi, f64::INFINITY)?.residual);
    }
    Ok((worst, closed))
}

/// `max_{t, i} |X_i(x_i)|_i * |((sigma^t_i)^b)^-1|_op` with `X = (sigma^b)^-1 alpha`.
fn h3_at(moser: &MoserField, x: &ThreadVector, t_points: usize) -> Result<f64> {
    let field = moser.field();
    let tower = field.tower();
    let mut worst = 0.0_f64;
    for i in 0..field.depth() {
        let alpha = moser.alpha_level(i, x.level(i))?;
        let big_x = sharp_level(field, i, x.level(i), &alpha, 1.0)?;
        let norm_x = tower.norm(i, &big_x);
        for t in t_grid(t_points) {
            let st = field.form_t(i, x.level(i), t)?;
            field.ensure_invertible(i, &st)?;
            let (_, lo) = singular_extremes(&field.weighted(i, &st));
            worst = worst.max(norm_x / lo);
        }
    }
    Ok(worst)
}

/// Max over pairs of `|W(x)^-1 - W(y)^-1|_op / |x - y|` with `W` the weighted
/// flat matrix of `sigma`. `None` when the map is undefined at some sample.
fn h4_modulus(field: &SymplecticField, points: &[Vector], cap: usize) -> (Option<f64>, usize) {
    let tower = field.tower();
    let used = &points[..points.len().min(cap)];
    let mut inverses = Vec::with_capacity(used.len());
    for p in used {
        let Ok(x) = make_thread(tower, p) else {
            return (None, 0);
        };
        let mut per_level = Vec::with_capacity(field.depth());
        for i in 0..field.depth() {
            let Ok(s) = field.form(i, x.level(i)) else {
                return (None, 0);
            };
            if field.ensure_invertible(i, &s).is_err() {
                return (None, 0);
            }
            match field.weighted(i, &s).try_inverse() {
                Some(inv) => per_level.push(inv),
                None => return (None, 0),
            }
        }
        inverses.push((x, per_level));
    }
    let mut modulus = 0.0_f64;
    let mut pairs = 0;
    for a in 0..inverses.len() {
        for b in a + 1..inverses.len() {
            for i in 0..field.depth() {
                let dx = tower.norm(i, &(inverses[a].0.level(i) - inverses[b].0.level(i)));
                if dx == 0.0 {
                    continue;
                }
                let diff = &inverses[a].1[i] - &inverses[b].1[i];
                modulus = modulus.max(singular_extremes(&diff).0 / dx);
            }
            pairs += 1;
        }
    }
    (Some(modulus), pairs)
}
