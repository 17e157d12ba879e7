//! Radial primitive, Moser vector field and the isotopy it generates.
//!
//! With `S^t = S_p + t (S - S_p)` and `d alpha = S - S_p`, the field
//! `Y_t = -((S^t)^T)^-1 alpha` satisfies `i_{Y_t} sigma^t = -alpha`, and its
//! flow `phi_t` obeys `phi_t^* sigma^t = sigma_p`. Jacobians of the flow are
//! integrated alongside it from the variational equation `J' = DY_t J`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_extremes, Matrix, Vector};
use crate::ode::{solve_picard, step_count, PicardProblem};
use crate::projective::{LevelMapFn, ProjectiveMapFamily};
use crate::quadrature::GaussLegendre;
use crate::symplectic::{sharp, MoserDeformation, OneFormThread, SymplecticField};
use crate::tower::{check_thread, ThreadVector, Tower};

pub const DEFAULT_QUAD_N: usize = 16;

/// How `DY_t` is obtained for the variational equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Differentiates `(S^t)^T Y = -alpha` using form partials.
    #[default]
    Analytic,
    /// Central differences of `Y_t`.
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct MoserField {
    deformation: MoserDeformation,
    quad: GaussLegendre,
    bound: Option<f64>,
    mu: Option<f64>,
    jacobian: JacobianMode,
}

impl MoserField {
    pub fn new(deformation: MoserDeformation, quad_n: usize) -> Result<Self> {
        if quad_n == 0 {
            return Err(Error::DomainError("quad_n must be at least 1".into()));
        }
        Ok(MoserField {
            deformation,
            quad: GaussLegendre::new(quad_n),
            bound: None,
            mu: None,
            jacobian: JacobianMode::Analytic,
        })
    }

    pub fn from_field(field: Arc<SymplecticField>) -> Self {
        MoserField::new(MoserDeformation::new(field), DEFAULT_QUAD_N).expect("default quadrature is valid")
    }

    /// Bound `M` enforced on `|Y_t|_i` along trajectories.
    pub fn with_bound(mut self, m: f64) -> Self {
        self.bound = Some(m);
        self
    }

    pub fn with_lipschitz(mut self, mu: f64) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian = mode;
        self
    }

    pub fn deformation(&self) -> &MoserDeformation {
        &self.deformation
    }

    pub fn field(&self) -> &Arc<SymplecticField> {
        self.deformation.field()
    }

    pub fn tower(&self) -> &Arc<Tower> {
        self.deformation.tower()
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.mu
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian
    }

    /// `alpha_i(x) = int_0^1 s (S - S_p)(p + s d)^T d ds` with `d = x - p`.
    pub fn alpha_level(&self, level: usize, x: &Vector) -> Result<Vector> {
        let field = self.field();
        field.tower().check_dim(level, x, "point")?;
        let p = field.base_point().level(level);
        let d = x - p;
        let mut acc = Vector::zeros(x.len());
        if d.iter().all(|v| *v == 0.0) {
            return Ok(acc);
        }
        for (s, w) in self.quad.nodes.iter().zip(&self.quad.weights) {
            let z = p + &d * *s;
            let bar = self.deformation.deviation(level, &z)?;
            acc += bar.transpose() * &d * (w * s);
        }
        Ok(acc)
    }

    /// Column `k` is `d alpha / d x_k`.
    pub fn alpha_jacobian(&self, level: usize, x: &Vector) -> Result<Matrix> {
        let field = self.field();
        field.tower().check_dim(level, x, "point")?;
        let n = x.len();
        let p = field.base_point().level(level);
        let d = x - p;
        let mut jac = Matrix::zeros(n, n);
        for (s, w) in self.quad.nodes.iter().zip(&self.quad.weights) {
            let z = p + &d * *s;
            let bar_t = self.deformation.deviation(level, &z)?.transpose();
            for k in 0..n {
                let dk = field.partial(level, &z, k)?.transpose() * &d;
                let col = bar_t.column(k) + dk * *s;
                jac.column_mut(k).axpy(w * s, &col, 1.0);
            }
        }
        Ok(jac)
    }

    /// `Y_t` on one level.
    pub fn velocity(&self, level: usize, t: f64, x: &Vector) -> Result<Vector> {
        let st = self.deformation.form_t(level, x, t)?;
        let alpha = self.alpha_level(level, x)?;
        solve_transposed(self.field(), level, &st, &(-alpha))
    }

    /// `Y_t` and its Jacobian `DY_t` on one level.
    pub fn velocity_and_jacobian(&self, level: usize, t: f64, x: &Vector) -> Result<(Vector, Matrix)> {
        let field = self.field();
        let st = self.deformation.form_t(level, x, t)?;
        field.ensure_invertible(level, &st)?;
        let lu = st.transpose().lu();
        let alpha = self.alpha_level(level, x)?;
        let y = lu.solve(&(-alpha)).ok_or(Error::SingularForm {
            level,
            min_singular_value: 0.0,
        })?;
        let n = x.len();
        let dy = match self.jacobian {
            JacobianMode::Analytic => {
                let ja = self.alpha_jacobian(level, x)?;
                let mut rhs = Matrix::zeros(n, n);
                for k in 0..n {
                    let col = ja.column(k) + field.partial(level, x, k)?.transpose() * &y * t;
                    rhs.set_column(k, &col);
                }
                -lu.solve(&rhs).ok_or(Error::SingularForm {
                    level,
                    min_singular_value: 0.0,
                })?
            }
            JacobianMode::FiniteDifference => {
                let mut m = Matrix::zeros(n, n);
                for k in 0..n {
                    let h = field.h_fd() * x[k].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let col = (self.velocity(level, t, &xp)? - self.velocity(level, t, &xm)?) / (2.0 * h);
                    m.set_column(k, &col);
                }
                m
            }
        };
        Ok((y, dy))
    }

    /// The Moser field as a projective family, for the generic solvers.
    pub fn as_family(self: &Arc<Self>) -> ProjectiveMapFamily {
        let maps = (0..self.tower().depth())
            .map(|i| {
                let me = Arc::clone(self);
                Arc::new(move |t: f64, x: &Vector| me.velocity(i, t, x)) as LevelMapFn
            })
            .collect();
        let family = ProjectiveMapFamily::new(maps);
        match self.mu {
            Some(mu) => family.with_lipschitz(mu),
            None => family,
        }
    }
}

fn solve_transposed(field: &SymplecticField, level: usize, st: &Matrix, rhs: &Vector) -> Result<Vector> {
    field.ensure_invertible(level, st)?;
    st.transpose().lu().solve(rhs).ok_or(Error::SingularForm {
        level,
        min_singular_value: 0.0,
    })
}

/// Radial primitive of `sigma - sigma_p` at `x`, on every level.
pub fn poincare_primitive(deformation: &MoserDeformation, x: &ThreadVector, quad_n: usize) -> Result<OneFormThread> {
    let moser = MoserField::new(deformation.clone(), quad_n)?;
    primitive_with(&moser, x)
}

fn primitive_with(moser: &MoserField, x: &ThreadVector) -> Result<OneFormThread> {
    let depth = moser.tower().depth();
    if x.depth() != depth {
        return Err(Error::ShapeMismatch("point depth differs from tower depth".into()));
    }
    let components = (0..depth)
        .map(|i| moser.alpha_level(i, x.level(i)))
        .collect::<Result<Vec<_>>>()
        .map_err(evaluation)?;
    Ok(OneFormThread::new(components, x.clone()))
}

fn evaluation(e: Error) -> Error {
    match e {
        e @ (Error::EvaluationFailure(_) | Error::ShapeMismatch(_)) => e,
        other => Error::EvaluationFailure(other.to_string()),
    }
}

/// `Y_t(x) = sharp(sigma^t, -alpha_x)`, certified to be a thread.
pub fn moser_vector_field(moser: &MoserField, t: f64, x: &ThreadVector) -> Result<ThreadVector> {
    let alpha = primitive_with(moser, x)?;
    sharp(moser.field(), x, &alpha.negated(), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IsotopyMethod {
    #[default]
    Rk4,
    /// Chained Picard windows; states only, no Jacobians.
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotopyOptions {
    pub method: IsotopyMethod,
    pub step: f64,
    /// Times in `[0, 1]` at which states (and Jacobians) are recorded; 0 and 1 are always added.
    pub checkpoints: Vec<f64>,
    pub variational: bool,
}

impl Default for IsotopyOptions {
    fn default() -> Self {
        IsotopyOptions {
            method: IsotopyMethod::Rk4,
            step: 1e-3,
            checkpoints: uniform_grid(11),
            variational: true,
        }
    }
}

/// `n` equally spaced points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ThreadVector>,
    /// Per recorded time, per level `D phi_t`.
    pub jacobians: Option<Vec<Vec<Matrix>>>,
    /// Thread residual of each recorded state.
    pub consistency: Vec<f64>,
    /// Max over steps and levels of the midpoint defect `|dx/dt - Y_t(x)|`.
    pub ode_residual: f64,
    /// Max of `|Y_t|_i` seen at the RK4 stages.
    pub max_speed: f64,
}

impl Trajectory {
    pub fn endpoint(&self) -> &ThreadVector {
        self.states.last().expect("trajectories have at least one state")
    }

    pub fn max_consistency(&self) -> f64 {
        self.consistency.iter().cloned().fold(0.0, f64::max)
    }
}

fn normalized_checkpoints(ts: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0, 1.0];
    for &t in ts {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::DomainError(format!("checkpoint {t} lies outside [0, 1]")));
        }
        out.push(t);
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Flow `phi_t(x0)` of the Moser field on `[0, 1]`.
pub fn integrate_isotopy(moser: &MoserField, x0: &ThreadVector, opts: &IsotopyOptions) -> Result<Trajectory> {
    if !(opts.step > 0.0) {
        return Err(Error::DomainError(format!("step must be positive, got {}", opts.step)));
    }
    let tower = moser.tower();
    if x0.depth() != tower.depth() {
        return Err(Error::ShapeMismatch("initial point depth differs from tower depth".into()));
    }
    let check = check_thread(tower, x0.components())?;
    if !check.pass {
        return Err(Error::CompatibilityViolation {
            residual: check.max_residual,
            tolerance: tower.tol_thread(),
        });
    }
    let checkpoints = normalized_checkpoints(&opts.checkpoints)?;
    match opts.method {
        IsotopyMethod::Rk4 => rk4_isotopy(moser, x0, &checkpoints, opts.step, opts.variational),
        IsotopyMethod::Picard => picard_isotopy(moser, x0, opts.step),
    }
}

fn check_speed(moser: &MoserField, tower: &Tower, level: usize, y: &Vector, max_speed: &mut f64) -> Result<()> {
    let speed = tower.norm(level, y);
    *max_speed = max_speed.max(speed);
    if let Some(m) = moser.bound {
        if speed > m {
            return Err(Error::BoundViolation { observed: speed, bound: m });
        }
    }
    Ok(())
}

fn rk4_isotopy(
    moser: &MoserField,
    x0: &ThreadVector,
    checkpoints: &[f64],
    step: f64,
    variational: bool,
) -> Result<Trajectory> {
    let tower = moser.tower();
    let depth = tower.depth();
    let mut states_by_level: Vec<Vec<Vector>> = vec![Vec::with_capacity(checkpoints.len()); depth];
    let mut jac_by_level: Vec<Vec<Matrix>> = vec![Vec::with_capacity(checkpoints.len()); depth];
    let mut ode_residual = 0.0_f64;
    let mut max_speed = 0.0_f64;

    for i in 0..depth {
        let n = tower.dim(i);
        let mut x = x0.level(i).clone();
        let mut j = Matrix::identity(n, n);
        states_by_level[i].push(x.clone());
        jac_by_level[i].push(j.clone());
        for w in checkpoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            let steps = step_count(b - a, step);
            let h = (b - a) / steps as f64;
            for k in 0..steps {
                let t = a + k as f64 * h;
                if variational {
                    let stage = |tt: f64, xx: &Vector, jj: &Matrix, speed: &mut f64| -> Result<(Vector, Matrix)> {
                        let (y, dy) = moser.velocity_and_jacobian(i, tt, xx)?;
                        check_speed(moser, tower, i, &y, speed)?;
                        Ok((y, dy * jj))
                    };
                    let (k1, l1) = stage(t, &x, &j, &mut max_speed)?;
                    let (k2, l2) = stage(t + 0.5 * h, &(&x + &k1 * (0.5 * h)), &(&j + &l1 * (0.5 * h)), &mut max_speed)?;
                    let (k3, l3) = stage(t + 0.5 * h, &(&x + &k2 * (0.5 * h)), &(&j + &l2 * (0.5 * h)), &mut max_speed)?;
                    let (k4, l4) = stage(t + h, &(&x + &k3 * h), &(&j + &l3 * h), &mut max_speed)?;
                    let x_next = &x + (&k1 + (&k2 + &k3) * 2.0 + &k4) * (h / 6.0);
                    j += (l1 + (l2 + l3) * 2.0 + l4) * (h / 6.0);
                    ode_residual = ode_residual.max(midpoint_defect(moser, tower, i, t, h, &x, &x_next)?);
                    x = x_next;
                } else {
                    let stage = |tt: f64, xx: &Vector, speed: &mut f64| -> Result<Vector> {
                        let y = moser.velocity(i, tt, xx)?;
                        check_speed(moser, tower, i, &y, speed)?;
                        Ok(y)
                    };
                    let k1 = stage(t, &x, &mut max_speed)?;
                    let k2 = stage(t + 0.5 * h, &(&x + &k1 * (0.5 * h)), &mut max_speed)?;
                    let k3 = stage(t + 0.5 * h, &(&x + &k2 * (0.5 * h)), &mut max_speed)?;
                    let k4 = stage(t + h, &(&x + &k3 * h), &mut max_speed)?;
                    let x_next = &x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
                    ode_residual = ode_residual.max(midpoint_defect(moser, tower, i, t, h, &x, &x_next)?);
                    x = x_next;
                }
            }
            states_by_level[i].push(x.clone());
            jac_by_level[i].push(j.clone());
        }
    }

    let states: Vec<ThreadVector> = (0..checkpoints.len())
        .map(|m| ThreadVector::from_components(states_by_level.iter().map(|l| l[m].clone()).collect()))
        .collect();
    let consistency = states
        .iter()
        .map(|s| check_thread(tower, s.components()).map(|c| c.max_residual))
        .collect::<Result<Vec<_>>>()?;
    let jacobians = variational.then(|| {
        (0..checkpoints.len())
            .map(|m| jac_by_level.iter().map(|l| l[m].clone()).collect())
            .collect()
    });
    Ok(Trajectory {
        times: checkpoints.to_vec(),
        states,
        jacobians,
        consistency,
        ode_residual,
        max_speed,
    })
}

fn midpoint_defect(
    moser: &MoserField,
    tower: &Tower,
    level: usize,
    t: f64,
    h: f64,
    x: &Vector,
    x_next: &Vector,
) -> Result<f64> {
    let slope = (x_next - x) / h;
    let mid = (x + x_next) * 0.5;
    let y = moser.velocity(level, t + 0.5 * h, &mid)?;
    Ok(tower.norm(level, &(slope - y)))
}

/// Chains forward halves of Picard windows `[c, c + a]` across `[0, 1]`.
fn picard_isotopy(moser: &MoserField, x0: &ThreadVector, step: f64) -> Result<Trajectory> {
    let tower = moser.tower();
    let m = moser.bound.ok_or_else(|| {
        Error::DomainError("the Picard isotopy needs the bound M on the Moser field".into())
    })?;
    let mu = moser.mu.ok_or_else(|| {
        Error::DomainError("the Picard isotopy needs the Lipschitz constant mu".into())
    })?;
    let shared = Arc::new(moser.clone());
    let family = shared.as_family();
    let window = if m + mu > 0.0 { (1.0 / (m + mu)).min(1.0) } else { 1.0 };
    let windows = (1.0 / window).ceil() as usize;
    let tau = 1.0 / windows as f64;
    let half_steps = step_count(tau, step);

    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut ode_residual = 0.0_f64;
    let mut max_speed = 0.0_f64;
    for w in 0..windows {
        let c = w as f64 * tau;
        let problem = PicardProblem {
            rhs: family.clone(),
            t0: c,
            x0: states.last().expect("nonempty").clone(),
            tau,
            mu,
            m1: m,
        };
        let flow = solve_picard(tower, &problem, 2 * half_steps, 500, 1e-13)?;
        ode_residual = ode_residual.max(flow.ode_residual);
        for s in &flow.states {
            for i in 0..tower.depth() {
                let y = moser.velocity(i, c, s.level(i))?;
                max_speed = max_speed.max(tower.norm(i, &y));
            }
        }
        let mid = flow.times.len() / 2;
        for k in mid + 1..flow.times.len() {
            times.push(if w + 1 == windows && k + 1 == flow.times.len() { 1.0 } else { flow.times[k] });
            states.push(flow.states[k].clone());
        }
    }
    let consistency = states
        .iter()
        .map(|s| check_thread(tower, s.components()).map(|c| c.max_residual))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        times,
        states,
        jacobians: None,
        consistency,
        ode_residual,
        max_speed,
    })
}

/// `sup_{|u| = |v| = 1} |u^T D v|` for `D` on `level`.
pub fn weighted_bilinear_norm(field: &SymplecticField, level: usize, d: &Matrix) -> f64 {
    singular_extremes(&field.weighted(level, d)).0
}

/// `max_i sup |(phi_t^* sigma^t)(u, v) - sigma_p(u, v)|` over unit `u, v`, at
/// each recorded time of a variational trajectory.
pub fn pullback_residuals(moser: &MoserField, traj: &Trajectory) -> Result<Vec<f64>> {
    let jacobians = traj
        .jacobians
        .as_ref()
        .ok_or_else(|| Error::DomainError("trajectory carries no Jacobians".into()))?;
    let field = moser.field();
    traj.times
        .iter()
        .zip(&traj.states)
        .zip(jacobians)
        .map(|((t, x), js)| {
            let mut worst = 0.0_f64;
            for (i, j) in js.iter().enumerate() {
                let st = field.form_t(i, x.level(i), *t)?;
                let pulled = j.transpose() * st * j;
                let d = pulled - field.base_form(i);
                worst = worst.max(weighted_bilinear_norm(field, i, &d));
            }
            Ok(worst)
        })
        .collect()
}

/// Max over `t_grid` of the deviation of `phi_t^* sigma^t` from `sigma_p`.
pub fn moser_invariant_drift(moser: &MoserField, x0: &ThreadVector, t_grid: &[f64], step: f64) -> Result<f64> {
    let opts = IsotopyOptions {
        method: IsotopyMethod::Rk4,
        step,
        checkpoints: t_grid.to_vec(),
        variational: true,
    };
    let traj = integrate_isotopy(moser, x0, &opts)?;
    let residuals = pullback_residuals(moser, &traj)?;
    let mut drift = 0.0_f64;
    for (t, r) in traj.times.iter().zip(residuals) {
        if t_grid.contains(t) {
            drift = drift.max(r);
        }
    }
    Ok(drift)
}
