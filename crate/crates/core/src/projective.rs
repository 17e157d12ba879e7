//! Projective systems of maps: one map per level, commuting with the connectors.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::tower::{check_thread, ThreadVector, Tower};

pub const DEFAULT_H_FD: f64 = 1e-5;

pub type LevelMapFn = Arc<dyn Fn(f64, &Vector) -> Result<Vector> + Send + Sync>;
pub type LevelJacobianFn = Arc<dyn Fn(f64, &Vector) -> Result<Matrix> + Send + Sync>;

/// Per-level maps `f_i(t, x_i)`. Autonomous families ignore `t`.
#[derive(Clone)]
pub struct ProjectiveMapFamily {
    maps: Vec<LevelMapFn>,
    jacobians: Option<Vec<LevelJacobianFn>>,
    lipschitz: Option<f64>,
}

impl std::fmt::Debug for ProjectiveMapFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectiveMapFamily")
            .field("levels", &self.maps.len())
            .field("exact_jacobians", &self.jacobians.is_some())
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl ProjectiveMapFamily {
    pub fn new(maps: Vec<LevelMapFn>) -> Self {
        ProjectiveMapFamily {
            maps,
            jacobians: None,
            lipschitz: None,
        }
    }

    /// The same time-dependent map on every level.
    pub fn uniform<F>(levels: usize, f: F) -> Self
    where
        F: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    {
        let f: LevelMapFn = Arc::new(move |t, x| Ok(f(t, x)));
        Self::new(vec![f; levels])
    }

    /// The same autonomous map on every level.
    pub fn autonomous<F>(levels: usize, f: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::uniform(levels, move |_, x| f(x))
    }

    /// A (possibly different) autonomous map per level.
    pub fn per_level<F>(maps: Vec<F>) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::new(
            maps.into_iter()
                .map(|f| Arc::new(move |_: f64, x: &Vector| Ok(f(x))) as LevelMapFn)
                .collect(),
        )
    }

    /// The linear map `x -> A x` on every level.
    pub fn linear(levels: usize, a: Matrix) -> Self {
        let jac = a.clone();
        Self::autonomous(levels, move |x| &a * x)
            .with_jacobians(vec![Arc::new(move |_: f64, _: &Vector| Ok(jac.clone())) as LevelJacobianFn; levels])
    }

    pub fn with_jacobians(mut self, jacobians: Vec<LevelJacobianFn>) -> Self {
        assert_eq!(jacobians.len(), self.maps.len());
        self.jacobians = Some(jacobians);
        self
    }

    pub fn with_lipschitz(mut self, mu: f64) -> Self {
        self.lipschitz = Some(mu);
        self
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn levels(&self) -> usize {
        self.maps.len()
    }

    pub fn eval(&self, level: usize, t: f64, x: &Vector) -> Result<Vector> {
        (self.maps[level])(t, x)
    }

    pub fn has_exact_jacobians(&self) -> bool {
        self.jacobians.is_some()
    }

    /// Exact Jacobian if supplied, else central differences with relative step `h_fd`.
    pub fn jacobian(&self, level: usize, t: f64, x: &Vector, h_fd: f64) -> Result<Matrix> {
        if let Some(j) = &self.jacobians {
            return (j[level])(t, x);
        }
        let n = x.len();
        let f0 = self.eval(level, t, x)?;
        let mut jac = Matrix::zeros(f0.len(), n);
        for k in 0..n {
            let h = h_fd * x[k].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let d = (self.eval(level, t, &xp)? - self.eval(level, t, &xm)?) / (2.0 * h);
            jac.set_column(k, &d);
        }
        Ok(jac)
    }

    fn check_levels(&self, tower: &Tower) -> Result<()> {
        if self.maps.len() != tower.depth() {
            return Err(Error::ShapeMismatch(format!(
                "family has {} level maps, tower has {} levels",
                self.maps.len(),
                tower.depth()
            )));
        }
        Ok(())
    }
}

/// Max over `j > i` of `|L_ji f_j(x_j) - f_i(L_ji x_j)|_i`, together with the
/// magnitude of the pushed images used to scale the tolerance.
pub fn diagram_residual(
    tower: &Tower,
    family: &ProjectiveMapFamily,
    t: f64,
    x: &ThreadVector,
) -> Result<(f64, f64)> {
    family.check_levels(tower)?;
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for j in 1..tower.depth() {
        let fj = family.eval(j, t, x.level(j))?;
        for i in 0..j {
            let l = tower.composite(j, i);
            let lhs = l * &fj;
            let rhs = family.eval(i, t, &(l * x.level(j)))?;
            worst = worst.max(tower.norm(i, &(&lhs - &rhs)));
            scale = scale.max(tower.norm(i, &lhs));
        }
    }
    Ok((worst, scale))
}

pub(crate) fn ensure_projective(
    tower: &Tower,
    family: &ProjectiveMapFamily,
    t: f64,
    x: &ThreadVector,
) -> Result<()> {
    let (residual, scale) = diagram_residual(tower, family, t, x)?;
    if !tower.within_tol(residual, scale) {
        return Err(Error::DiagramViolation {
            residual,
            tolerance: tower.tol_thread() * scale.max(1.0),
        });
    }
    Ok(())
}

/// `(f_i(x_i))`, after checking that the family commutes with the connectors at `x`.
pub fn apply_projective_map(
    tower: &Tower,
    family: &ProjectiveMapFamily,
    x: &ThreadVector,
) -> Result<ThreadVector> {
    apply_projective_map_at(tower, family, 0.0, x)
}

pub fn apply_projective_map_at(
    tower: &Tower,
    family: &ProjectiveMapFamily,
    t: f64,
    x: &ThreadVector,
) -> Result<ThreadVector> {
    ensure_projective(tower, family, t, x)?;
    let out = (0..tower.depth())
        .map(|i| family.eval(i, t, x.level(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ThreadVector::from_components(out))
}

/// Levelwise differential `(df_i(x_i)[v_i])`.
pub fn limit_differential(
    tower: &Tower,
    family: &ProjectiveMapFamily,
    x: &ThreadVector,
    direction: &ThreadVector,
    h_fd: f64,
) -> Result<ThreadVector> {
    ensure_projective(tower, family, 0.0, x)?;
    check_thread(tower, direction.components())?;
    let mut out = Vec::with_capacity(tower.depth());
    for i in 0..tower.depth() {
        let xi = x.level(i);
        let vi = direction.level(i);
        let d = if family.has_exact_jacobians() {
            family.jacobian(i, 0.0, xi, h_fd)? * vi
        } else {
            directional_difference(family, i, xi, vi, h_fd)?
        };
        out.push(d);
    }
    Ok(ThreadVector::from_components(out))
}

fn directional_difference(
    family: &ProjectiveMapFamily,
    level: usize,
    x: &Vector,
    v: &Vector,
    h_fd: f64,
) -> Result<Vector> {
    let vn = v.norm();
    if vn == 0.0 {
        return Ok(Vector::zeros(family.eval(level, 0.0, x)?.len()));
    }
    let h = h_fd * x.norm().max(1.0) / vn;
    let fp = family.eval(level, 0.0, &(x + v * h))?;
    let fm = family.eval(level, 0.0, &(x - v * h))?;
    Ok((fp - fm) / (2.0 * h))
}
