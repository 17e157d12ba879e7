//! Levelwise ODE solvers for projective right-hand sides.
//!
//! Each level `x_i' = phi_i(t, x_i)` is integrated on its own; the results are
//! then checked to form a thread at every grid node. [`solve_picard`] realises
//! the fixed-point construction on the certified interval
//! `a = min(tau, 1 / (M1 + mu))`; [`solve_rk4`] is a fixed-step cross-check.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::projective::{ensure_projective, ProjectiveMapFamily};
use crate::sampling::Sampler;
use crate::tower::{check_thread, ThreadVector, Tower};

/// Picard grid density, nodes per unit time.
pub const DEFAULT_NODES_PER_UNIT_TIME: f64 = 256.0;

/// Length `a = min(tau, 1 / (M1 + mu))` of the half-interval on which the
/// levelwise Picard iteration is guaranteed to converge.
pub fn solution_interval(tau: f64, mu: f64, m1: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::DomainError(format!("tau must be positive, got {tau}")));
    }
    if !(mu >= 0.0) || !(m1 >= 0.0) {
        return Err(Error::DomainError(format!(
            "mu and M1 must be nonnegative, got mu={mu}, M1={m1}"
        )));
    }
    // M1 + mu = 0 gives 1/0 = inf and the tau branch.
    Ok(tau.min(1.0 / (m1 + mu)))
}

#[derive(Debug, Clone)]
pub struct PicardProblem {
    pub rhs: ProjectiveMapFamily,
    pub t0: f64,
    pub x0: ThreadVector,
    pub tau: f64,
    pub mu: f64,
    pub m1: f64,
}

impl PicardProblem {
    pub fn interval(&self) -> Result<f64> {
        solution_interval(self.tau, self.mu, self.m1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    Picard,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub times: Vec<f64>,
    pub states: Vec<ThreadVector>,
    /// Thread residual at each node.
    pub consistency: Vec<f64>,
    pub method: FlowMethod,
    pub iterations: usize,
    /// Sup-grid change per Picard iteration.
    pub sup_changes: Vec<f64>,
    /// Distance between the fixed points reached from two initial iterates.
    pub uniqueness_gap: Option<f64>,
    /// Max over levels and intervals of `|x' - phi(t, x)|` at interval midpoints.
    pub ode_residual: f64,
    pub warnings: Vec<String>,
}

impl FlowResult {
    pub fn max_consistency(&self) -> f64 {
        self.consistency.iter().cloned().fold(0.0, f64::max)
    }

    pub fn final_state(&self) -> &ThreadVector {
        self.states.last().expect("flows have at least one node")
    }

    /// State at a grid node, `None` when `t` is not a node.
    pub fn state_at(&self, t: f64) -> Option<&ThreadVector> {
        let scale = self.times.iter().fold(1.0_f64, |a, s| a.max(s.abs()));
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-12 * scale)
            .map(|k| &self.states[k])
    }

    /// Rows `t, level, x1, ..., xD` (shorter levels leave trailing cells empty).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let width = self
            .states
            .first()
            .map(|s| s.components().iter().map(|c| c.len()).max().unwrap_or(0))
            .unwrap_or(0);
        let mut w = csv::WriterBuilder::new().from_writer(out);
        let mut header = vec!["t".to_string(), "level".to_string()];
        header.extend((1..=width).map(|k| format!("x{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for (level, c) in s.components().iter().enumerate() {
                let mut row = vec![format!("{t:e}"), level.to_string()];
                for k in 0..width {
                    row.push(c.get(k).map(|v| format!("{v:e}")).unwrap_or_default());
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Smallest even interval count giving about 256 nodes per unit time on `[t0 - a, t0 + a]`.
pub fn default_grid_n(a: f64) -> usize {
    let n = (2.0 * a * DEFAULT_NODES_PER_UNIT_TIME).ceil() as usize;
    (n.max(2) + 1) & !1
}

/// `sup_i sup_t p_i(phi(t, x0))` over `samples + 1` uniformly spaced times in `[t0 - tau, t0 + tau]`.
pub fn sample_m1(
    tower: &Tower,
    rhs: &ProjectiveMapFamily,
    t0: f64,
    x0: &ThreadVector,
    tau: f64,
    samples: usize,
) -> Result<f64> {
    let samples = samples.max(1);
    let mut sup = 0.0_f64;
    for k in 0..=samples {
        let t = t0 - tau + 2.0 * tau * k as f64 / samples as f64;
        for i in 0..tower.depth() {
            sup = sup.max(tower.norm(i, &rhs.eval(i, t, x0.level(i))?));
        }
    }
    Ok(sup)
}

/// Levelwise Picard iteration `x <- x0 + int_{t0}^t phi(s, x(s)) ds` on
/// `[t0 - a, t0 + a]` with composite-trapezoid quadrature on `grid_n` intervals
/// (rounded up to even so that `t0` is a node).
pub fn solve_picard(
    tower: &Tower,
    problem: &PicardProblem,
    grid_n: usize,
    max_iter: usize,
    tol: f64,
) -> Result<FlowResult> {
    let a = problem.interval()?;
    if problem.rhs.levels() != tower.depth() || problem.x0.depth() != tower.depth() {
        return Err(Error::ShapeMismatch("problem depth differs from tower depth".into()));
    }
    ensure_projective(tower, &problem.rhs, problem.t0, &problem.x0)?;
    let n = (grid_n.max(2) + 1) & !1;
    let h = 2.0 * a / n as f64;
    let times: Vec<f64> = (0..=n).map(|m| problem.t0 - a + m as f64 * h).collect();

    let observed = sample_m1(tower, &problem.rhs, problem.t0, &problem.x0, problem.tau, n)?;
    if observed > problem.m1 * (1.0 + 1e-9) + 1e-12 {
        let mut result = rk4_on_symmetric_grid(tower, problem, a, n)?;
        result.warnings.push(format!(
            "declared M1 = {:e} is below the sampled sup {observed:e}; ran RK4 only",
            problem.m1
        ));
        return Ok(result);
    }

    let initial: Vec<Vec<Vector>> = (0..tower.depth())
        .map(|i| vec![problem.x0.level(i).clone(); n + 1])
        .collect();
    let (fixed, iterations, sup_changes) = picard_fixed_point(tower, problem, &times, initial, max_iter, tol)?;

    let perturbed: Vec<Vec<Vector>> = (0..tower.depth())
        .map(|i| {
            let x0 = problem.x0.level(i);
            let delta = 0.1 * (1.0 + x0.amax());
            vec![x0.add_scalar(delta); n + 1]
        })
        .collect();
    let (other, _, _) = picard_fixed_point(tower, problem, &times, perturbed, max_iter, tol)?;
    let mut gap = 0.0_f64;
    for i in 0..tower.depth() {
        for (p, q) in fixed[i].iter().zip(&other[i]) {
            gap = gap.max(tower.norm(i, &(p - q)));
        }
    }

    let mut warnings = Vec::new();
    if gap > 10.0 * tol {
        warnings.push(format!(
            "fixed points from two initial iterates differ by {gap:e} (> 10 tol)"
        ));
    }
    let states = to_threads(fixed, n + 1);
    let ode_residual = midpoint_residual(tower, &problem.rhs, &times, &states)?;
    let consistency = consistency_profile(tower, &states)?;
    Ok(FlowResult {
        times,
        states,
        consistency,
        method: FlowMethod::Picard,
        iterations,
        sup_changes,
        uniqueness_gap: Some(gap),
        ode_residual,
        warnings,
    })
}

type LevelTrajectories = Vec<Vec<Vector>>;

fn picard_fixed_point(
    tower: &Tower,
    problem: &PicardProblem,
    times: &[f64],
    mut current: LevelTrajectories,
    max_iter: usize,
    tol: f64,
) -> Result<(LevelTrajectories, usize, Vec<f64>)> {
    let n = times.len() - 1;
    let c = n / 2;
    let h = times[1] - times[0];
    let mut changes = Vec::new();
    for iter in 1..=max_iter {
        let mut change = 0.0_f64;
        let mut next = Vec::with_capacity(current.len());
        for (i, traj) in current.iter().enumerate() {
            let f = times
                .iter()
                .zip(traj)
                .map(|(t, x)| problem.rhs.eval(i, *t, x))
                .collect::<Result<Vec<_>>>()?;
            let x0 = problem.x0.level(i);
            let mut new = vec![x0.clone(); n + 1];
            let mut acc = Vector::zeros(x0.len());
            for m in c + 1..=n {
                acc += (&f[m - 1] + &f[m]) * (0.5 * h);
                new[m] = x0 + &acc;
            }
            acc.fill(0.0);
            for m in (0..c).rev() {
                acc -= (&f[m] + &f[m + 1]) * (0.5 * h);
                new[m] = x0 + &acc;
            }
            for (p, q) in new.iter().zip(traj) {
                change = change.max(tower.norm(i, &(p - q)));
            }
            next.push(new);
        }
        current = next;
        changes.push(change);
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            return Ok((current, iter, changes));
        }
    }
    let last = changes.last().cloned().unwrap_or(f64::NAN);
    let contraction = if changes.len() >= 2 {
        last / changes[changes.len() - 2]
    } else {
        f64::NAN
    };
    Err(Error::NoConvergence {
        iterations: changes.len(),
        last_change: last,
        contraction,
    })
}

fn to_threads(levels: LevelTrajectories, nodes: usize) -> Vec<ThreadVector> {
    (0..nodes)
        .map(|m| ThreadVector::from_components(levels.iter().map(|l| l[m].clone()).collect()))
        .collect()
}

fn consistency_profile(tower: &Tower, states: &[ThreadVector]) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| check_thread(tower, s.components()).map(|c| c.max_residual))
        .collect()
}

fn midpoint_residual(
    tower: &Tower,
    rhs: &ProjectiveMapFamily,
    times: &[f64],
    states: &[ThreadVector],
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for m in 0..times.len().saturating_sub(1) {
        let dt = times[m + 1] - times[m];
        let tm = 0.5 * (times[m] + times[m + 1]);
        for i in 0..tower.depth() {
            let a = states[m].level(i);
            let b = states[m + 1].level(i);
            let slope = (b - a) / dt;
            let mid = (a + b) * 0.5;
            let f = rhs.eval(i, tm, &mid)?;
            worst = worst.max(tower.norm(i, &(slope - f)));
        }
    }
    Ok(worst)
}

fn rk4_on_symmetric_grid(tower: &Tower, problem: &PicardProblem, a: f64, n: usize) -> Result<FlowResult> {
    let step = 2.0 * a / n as f64;
    let back = solve_rk4(tower, &problem.rhs, &problem.x0, (problem.t0, problem.t0 - a), step)?;
    let fwd = solve_rk4(tower, &problem.rhs, &problem.x0, (problem.t0, problem.t0 + a), step)?;
    let mut times: Vec<f64> = back.times.iter().rev().cloned().collect();
    let mut states: Vec<ThreadVector> = back.states.iter().rev().cloned().collect();
    let mut consistency: Vec<f64> = back.consistency.iter().rev().cloned().collect();
    times.extend(fwd.times.iter().skip(1));
    states.extend(fwd.states.iter().skip(1).cloned());
    consistency.extend(fwd.consistency.iter().skip(1));
    Ok(FlowResult {
        times,
        states,
        consistency,
        method: FlowMethod::Rk4,
        iterations: 0,
        sup_changes: Vec::new(),
        uniqueness_gap: None,
        ode_residual: back.ode_residual.max(fwd.ode_residual),
        warnings: Vec::new(),
    })
}

/// Number of fixed steps of size at most `step` covering `span`.
pub(crate) fn step_count(span: f64, step: f64) -> usize {
    ((span.abs() / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Classical fixed-step RK4 on every level from `t_span.0` to `t_span.1`
/// (which may run backwards).
pub fn solve_rk4(
    tower: &Tower,
    rhs: &ProjectiveMapFamily,
    x0: &ThreadVector,
    t_span: (f64, f64),
    step: f64,
) -> Result<FlowResult> {
    if !(step > 0.0) {
        return Err(Error::DomainError(format!("step must be positive, got {step}")));
    }
    if rhs.levels() != tower.depth() || x0.depth() != tower.depth() {
        return Err(Error::ShapeMismatch("rhs or initial thread depth differs from tower depth".into()));
    }
    let (start, end) = t_span;
    let n = step_count(end - start, step);
    let h = (end - start) / n as f64;
    let times: Vec<f64> = (0..=n)
        .map(|k| if k == n { end } else { start + k as f64 * h })
        .collect();
    let mut levels: LevelTrajectories = Vec::with_capacity(tower.depth());
    for i in 0..tower.depth() {
        let f = |t: f64, x: &Vector| rhs.eval(i, t, x).map_err(Error::during_evaluation);
        let mut traj = Vec::with_capacity(n + 1);
        let mut x = x0.level(i).clone();
        traj.push(x.clone());
        for k in 0..n {
            let t = times[k];
            let k1 = f(t, &x)?;
            let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
            let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
            let k4 = f(t + h, &(&x + &k3 * h))?;
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            traj.push(x.clone());
        }
        levels.push(traj);
    }
    let states = to_threads(levels, n + 1);
    let ode_residual = midpoint_residual(tower, rhs, &times, &states).map_err(Error::during_evaluation)?;
    let consistency = consistency_profile(tower, &states)?;
    Ok(FlowResult {
        times,
        states,
        consistency,
        method: FlowMethod::Rk4,
        iterations: 0,
        sup_changes: Vec::new(),
        uniqueness_gap: None,
        ode_residual,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub sampled_max: f64,
    pub bound: f64,
    pub samples: usize,
    /// Always "sampled bound": the bound is checked on samples, not proved.
    pub label: &'static str,
}

/// Flow `F(t, p)` of an autonomous bounded projective field, defined for
/// `|t| <= eps = 1 / (M + mu)`.
#[derive(Debug, Clone)]
pub struct FlowMap {
    tower: Arc<Tower>,
    field: ProjectiveMapFamily,
    eps: f64,
    step: f64,
    certificate: BoundCertificate,
}

impl FlowMap {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn certificate(&self) -> &BoundCertificate {
        &self.certificate
    }

    pub fn trajectory(&self, t: f64, p: &ThreadVector) -> Result<FlowResult> {
        if t.abs() > self.eps * (1.0 + 1e-12) {
            return Err(Error::DomainError(format!(
                "|t| = {} exceeds the flow interval {}",
                t.abs(),
                self.eps
            )));
        }
        solve_rk4(&self.tower, &self.field, p, (0.0, t), self.step)
    }

    pub fn eval(&self, t: f64, p: &ThreadVector) -> Result<ThreadVector> {
        if t == 0.0 {
            return Ok(p.clone());
        }
        Ok(self.trajectory(t, p)?.final_state().clone())
    }
}

/// Builds the flow map after checking `|X_i(x_i)|_i <= M` on the given samples.
pub fn flow_map(
    tower: Arc<Tower>,
    field: ProjectiveMapFamily,
    mu: f64,
    m: f64,
    samples: &[ThreadVector],
    step: f64,
) -> Result<FlowMap> {
    if !(m > 0.0) || !(mu >= 0.0) {
        return Err(Error::DomainError(format!("need M > 0 and mu >= 0, got M={m}, mu={mu}")));
    }
    if !(step > 0.0) {
        return Err(Error::DomainError(format!("step must be positive, got {step}")));
    }
    let mut sampled_max = 0.0_f64;
    for p in samples {
        for i in 0..tower.depth() {
            sampled_max = sampled_max.max(tower.norm(i, &field.eval(i, 0.0, p.level(i))?));
        }
    }
    if sampled_max > m {
        return Err(Error::BoundViolation {
            observed: sampled_max,
            bound: m,
        });
    }
    Ok(FlowMap {
        tower,
        field,
        eps: 1.0 / (m + mu),
        step,
        certificate: BoundCertificate {
            sampled_max,
            bound: m,
            samples: samples.len(),
            label: "sampled bound",
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub per_level: Vec<f64>,
    /// One constant for all levels: the max of `per_level`.
    pub overall: f64,
}

/// Empirical Lipschitz constant: max over `samples` random pairs in the box
/// `[lo, hi]^dim_i` of `|f(x) - f(y)|_i / |x - y|_i`, per level.
pub fn estimate_lipschitz(
    tower: &Tower,
    family: &ProjectiveMapFamily,
    lo: f64,
    hi: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if samples < 2 {
        return Err(Error::DomainError("need at least two samples".into()));
    }
    let mut sampler = Sampler::new(seed);
    let mut per_level = Vec::with_capacity(tower.depth());
    for i in 0..tower.depth() {
        let dim = tower.dim(i);
        let mut best = 0.0_f64;
        for _ in 0..samples {
            let x = sampler.in_box(dim, lo, hi);
            let y = sampler.in_box(dim, lo, hi);
            let d = tower.norm(i, &(&x - &y));
            if d == 0.0 {
                continue;
            }
            let df = tower.norm(i, &(family.eval(i, 0.0, &x)? - family.eval(i, 0.0, &y)?));
            best = best.max(df / d);
        }
        per_level.push(best);
    }
    let overall = per_level.iter().cloned().fold(0.0, f64::max);
    Ok(LipschitzEstimate { per_level, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::tower::{make_thread, TowerSpec};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn scalar_tower(depth: usize) -> Tower {
        Tower::build(&TowerSpec::inclusion(depth, 1, |_| 1.0)).unwrap()
    }

    #[test]
    fn interval_examples() {
        assert_eq!(solution_interval(1.0, 1.0, 3.0).unwrap(), 0.25);
        assert_eq!(solution_interval(0.1, 1.0, 0.0).unwrap(), 0.1);
        assert_eq!(solution_interval(10.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(solution_interval(2.0, 0.0, 0.0).unwrap(), 2.0);
        assert!(matches!(solution_interval(0.0, 1.0, 1.0), Err(Error::DomainError(_))));
        assert!(matches!(solution_interval(-1.0, 1.0, 1.0), Err(Error::DomainError(_))));
        assert!(solution_interval(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn picard_zero_rhs_is_constant() {
        let tower = scalar_tower(2);
        let x0 = make_thread(&tower, &v(&[0.7])).unwrap();
        let problem = PicardProblem {
            rhs: ProjectiveMapFamily::autonomous(2, |x| x * 0.0),
            t0: 0.0,
            x0: x0.clone(),
            tau: 1.0,
            mu: 0.0,
            m1: 0.0,
        };
        let r = solve_picard(&tower, &problem, 16, 50, 1e-14).unwrap();
        assert!(r.states.iter().all(|s| *s == x0));
        assert_eq!(r.method, FlowMethod::Picard);
    }

    #[test]
    fn picard_constant_rhs_is_exact() {
        let tower = scalar_tower(1);
        let problem = PicardProblem {
            rhs: ProjectiveMapFamily::autonomous(1, |_| v(&[1.0])),
            t0: 0.0,
            x0: make_thread(&tower, &v(&[0.0])).unwrap(),
            tau: 0.5,
            mu: 0.0,
            m1: 1.0,
        };
        let r = solve_picard(&tower, &problem, 64, 50, 1e-14).unwrap();
        for (t, s) in r.times.iter().zip(&r.states) {
            assert!((s.level(0)[0] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn picard_decay_matches_exponential() {
        let tower = scalar_tower(1);
        let problem = PicardProblem {
            rhs: ProjectiveMapFamily::autonomous(1, |x| -x),
            t0: 0.0,
            x0: make_thread(&tower, &v(&[1.0])).unwrap(),
            tau: 1.0,
            mu: 1.0,
            m1: 1.0,
        };
        assert_eq!(problem.interval().unwrap(), 0.5);
        let r = solve_picard(&tower, &problem, 1024, 200, 1e-13).unwrap();
        assert!((r.times[0] + 0.5).abs() < 1e-15);
        assert!((r.times.last().unwrap() - 0.5).abs() < 1e-15);
        for (t, s) in r.times.iter().zip(&r.states) {
            assert!((s.level(0)[0] - (-t).exp()).abs() < 1e-6, "t={t}");
        }
        assert!(r.uniqueness_gap.unwrap() <= 1e-12);
        assert!(r.ode_residual < 1e-6);
    }

    #[test]
    fn picard_changes_contract() {
        let tower = scalar_tower(1);
        let problem = PicardProblem {
            rhs: ProjectiveMapFamily::autonomous(1, |x| -x),
            t0: 0.0,
            x0: make_thread(&tower, &v(&[1.0])).unwrap(),
            tau: 1.0,
            mu: 1.0,
            m1: 1.0,
        };
        let r = solve_picard(&tower, &problem, 256, 200, 1e-13).unwrap();
        let a = 0.5;
        for w in r.sup_changes.windows(2) {
            if w[1] > 1e-14 {
                assert!(w[1] / w[0] <= a * problem.mu + 1e-3, "{w:?}");
            }
        }
    }

    #[test]
    fn picard_reports_no_convergence() {
        let tower = scalar_tower(1);
        let problem = PicardProblem {
            rhs: ProjectiveMapFamily::autonomous(1, |x| -x),
            t0: 0.0,
            x0: make_thread(&tower, &v(&[1.0])).unwrap(),
            tau: 1.0,
            mu: 1.0,
            m1: 1.0,
        };
        match solve_picard(&tower, &problem, 64, 3, 1e-15) {
            Err(Error::NoConvergence { iterations, contraction, .. }) => {
                assert_eq!(iterations, 3);
                assert!(contraction < 1.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn understated_m1_downgrades_to_rk4() {
        let tower = scalar_tower(1);
        let problem = PicardProblem {
            rhs: ProjectiveMapFamily::autonomous(1, |x| -x),
            t0: 0.0,
            x0: make_thread(&tower, &v(&[1.0])).unwrap(),
            tau: 1.0,
            mu: 1.0,
            m1: 0.5,
        };
        let r = solve_picard(&tower, &problem, 64, 100, 1e-13).unwrap();
        assert_eq!(r.method, FlowMethod::Rk4);
        assert_eq!(r.warnings.len(), 1);
        // a = min(1, 1/1.5)
        assert!((r.times[0] + 2.0 / 3.0).abs() < 1e-14);
        for (t, s) in r.times.iter().zip(&r.states) {
            assert!((s.level(0)[0] - (-t).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn picard_rejects_non_projective_rhs() {
        let tower = scalar_tower(2);
        let rhs = ProjectiveMapFamily::per_level(vec![
            Box::new(|x: &Vector| x.clone()) as Box<dyn Fn(&Vector) -> Vector + Send + Sync>,
            Box::new(|x: &Vector| x * 2.0),
        ]);
        let problem = PicardProblem {
            rhs,
            t0: 0.0,
            x0: make_thread(&tower, &v(&[1.0])).unwrap(),
            tau: 1.0,
            mu: 2.0,
            m1: 2.0,
        };
        assert!(matches!(
            solve_picard(&tower, &problem, 16, 10, 1e-10),
            Err(Error::DiagramViolation { .. })
        ));
    }

    #[test]
    fn rk4_decay_closed_form() {
        let tower = scalar_tower(1);
        let x0 = make_thread(&tower, &v(&[1.0])).unwrap();
        let rhs = ProjectiveMapFamily::autonomous(1, |x| -x);
        let r = solve_rk4(&tower, &rhs, &x0, (0.0, 0.25), 1e-3).unwrap();
        assert!((r.final_state().level(0)[0] - 0.778_800_783_071_404_9).abs() < 1e-8);
        assert_eq!(*r.times.last().unwrap(), 0.25);
        let zero = ProjectiveMapFamily::autonomous(1, |x| x * 0.0);
        let r = solve_rk4(&tower, &zero, &x0, (0.0, 1.0), 0.1).unwrap();
        assert!(r.states.iter().all(|s| *s == x0));
        assert!(solve_rk4(&tower, &rhs, &x0, (0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn rk4_wraps_rhs_failures() {
        let tower = scalar_tower(1);
        let x0 = make_thread(&tower, &v(&[1.0])).unwrap();
        let f: crate::projective::LevelMapFn = Arc::new(|t, x| {
            if t > 0.5 {
                Err(Error::SingularForm { level: 0, min_singular_value: 0.0 })
            } else {
                Ok(x.clone())
            }
        });
        let rhs = ProjectiveMapFamily::new(vec![f]);
        assert!(matches!(
            solve_rk4(&tower, &rhs, &x0, (0.0, 1.0), 0.1),
            Err(Error::EvaluationFailure(_))
        ));
    }

    #[test]
    fn rk4_backwards() {
        let tower = scalar_tower(1);
        let x0 = make_thread(&tower, &v(&[1.0])).unwrap();
        let rhs = ProjectiveMapFamily::autonomous(1, |x| -x);
        let r = solve_rk4(&tower, &rhs, &x0, (0.0, -0.5), 1e-2).unwrap();
        assert!((r.final_state().level(0)[0] - 0.5f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn identical_levels_integrate_identically() {
        let tower = Tower::build(&TowerSpec::inclusion(3, 2, |i| (i + 1) as f64)).unwrap();
        let rot = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.1]);
        let rhs = ProjectiveMapFamily::linear(3, rot);
        let x0 = make_thread(&tower, &v(&[1.0, 0.5])).unwrap();
        let r = solve_rk4(&tower, &rhs, &x0, (0.0, 1.0), 1e-2).unwrap();
        assert!(r.max_consistency() <= 1e-12);
        let problem = PicardProblem {
            rhs,
            t0: 0.0,
            x0,
            tau: 1.0,
            mu: 1.01,
            m1: 2.0,
        };
        let p = solve_picard(&tower, &problem, 256, 200, 1e-13).unwrap();
        assert!(p.max_consistency() <= 1e-12);
    }

    #[test]
    fn flow_map_examples() {
        let tower = Arc::new(scalar_tower(2));
        let p = make_thread(&tower, &v(&[0.3])).unwrap();
        let zero = flow_map(tower.clone(), ProjectiveMapFamily::autonomous(2, |x| x * 0.0), 0.0, 1.0, &[p.clone()], 1e-2).unwrap();
        assert_eq!(zero.eval(0.5, &p).unwrap(), p);

        let c = flow_map(tower.clone(), ProjectiveMapFamily::autonomous(2, |_| v(&[2.0])), 0.0, 2.5, &[p.clone()], 1e-2).unwrap();
        assert_eq!(c.eps(), 0.4);
        assert_eq!(c.eval(0.0, &p).unwrap(), p);
        let y = c.eval(0.3, &p).unwrap();
        assert!((y.level(0)[0] - 0.9).abs() < 1e-13);
        assert!(matches!(c.eval(0.5, &p), Err(Error::DomainError(_))));
        assert_eq!(c.certificate().label, "sampled bound");

        let too_big = flow_map(tower, ProjectiveMapFamily::autonomous(2, |_| v(&[2.0])), 0.0, 1.0, &[p], 1e-2);
        assert!(matches!(too_big, Err(Error::BoundViolation { .. })));
    }

    #[test]
    fn flow_map_group_property() {
        let tower = Arc::new(Tower::build(&TowerSpec::inclusion(2, 2, |_| 1.0)).unwrap());
        // bounded smooth autonomous field
        let field = ProjectiveMapFamily::autonomous(2, |x| v(&[x[1].sin(), -x[0].sin()]));
        let p = make_thread(&tower, &v(&[0.4, -0.2])).unwrap();
        let f = flow_map(tower, field, 1.0, 2.0_f64.sqrt(), &[p.clone()], 1e-3).unwrap();
        let eps = f.eps();
        let (s, t) = (0.4 * eps, 0.5 * eps);
        let two = f.eval(s, &f.eval(t, &p).unwrap()).unwrap();
        let one = f.eval(s + t, &p).unwrap();
        assert!((two.level(1) - one.level(1)).norm() < 1e-6);
    }

    #[test]
    fn lipschitz_examples() {
        let tower = Tower::build(&TowerSpec::inclusion(2, 2, |_| 1.0)).unwrap();
        let two = ProjectiveMapFamily::linear(2, Matrix::identity(2, 2) * 2.0);
        let est = estimate_lipschitz(&tower, &two, -1.0, 1.0, 50, 3).unwrap();
        assert!((est.overall - 2.0).abs() < 1e-12);
        assert_eq!(est.per_level.len(), 2);

        let constant = ProjectiveMapFamily::autonomous(2, |_| v(&[1.0, 1.0]));
        assert_eq!(estimate_lipschitz(&tower, &constant, -1.0, 1.0, 50, 3).unwrap().overall, 0.0);

        let scalar = scalar_tower(1);
        let cubic = ProjectiveMapFamily::autonomous(1, |x| x + x.map(|c| c * c * c));
        let coarse = estimate_lipschitz(&scalar, &cubic, -0.5, 0.5, 20, 5).unwrap().overall;
        let dense = estimate_lipschitz(&scalar, &cubic, -0.5, 0.5, 20000, 5).unwrap().overall;
        assert!((1.0..=1.75).contains(&coarse));
        assert!((1.0..=1.75).contains(&dense));
        assert!(dense >= coarse - 1e-12);
        assert!(dense > 1.7);
        assert!(estimate_lipschitz(&scalar, &cubic, -0.5, 0.5, 1, 5).is_err());
    }

    #[test]
    fn flow_csv_export() {
        let tower = scalar_tower(2);
        let x0 = make_thread(&tower, &v(&[1.0])).unwrap();
        let rhs = ProjectiveMapFamily::autonomous(2, |x| -x);
        let r = solve_rk4(&tower, &rhs, &x0, (0.0, 0.2), 0.1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,level,x1");
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(r.state_at(0.1).is_some());
        assert!(r.state_at(0.15).is_none());
    }
}
