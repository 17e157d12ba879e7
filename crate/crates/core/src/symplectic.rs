//! Position-dependent antisymmetric forms on a tower.
//!
//! On level `i` the form is a matrix field `S_i(x)` with `sigma(u, v) = u^T S_i(x) v`.
//! The flat map sends `X` to the covector `S_i(x)^T X`. A field freezes its
//! base-point matrices `S_i(p_i)`; the Moser deformation interpolates
//! `S^t = (1 - t) S(p) + t S(x)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{from_row_major, is_finite, max_abs, singular_extremes, Matrix, Vector};
use crate::projective::DEFAULT_H_FD;
use crate::tower::{check_thread, make_thread, ThreadVector, Tower};

pub const DEFAULT_SIGMA_MIN_TOL: f64 = 1e-10;
const ANTISYMMETRY_TOL: f64 = 1e-12;

/// JSON description of a field. Coordinates in `coordinate`, `pair` and
/// expressions are 1-based; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldSpec {
    #[serde(flatten)]
    pub form: FormSpec,
    /// Deepest-level base point `p`; the origin when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormSpec {
    Constant {
        matrix: Vec<f64>,
    },
    /// `S(x) = base + epsilon * x_k * P` with `P` the `pair` block of `base`.
    LinearPerturbation {
        base: Vec<f64>,
        coordinate: usize,
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pair: Option<[usize; 2]>,
    },
    Expression {
        entries: Vec<String>,
    },
    PerLevel {
        levels: Vec<FormSpec>,
    },
}

pub type FormFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
pub type PartialFn = Arc<dyn Fn(&Vector, usize) -> Matrix + Send + Sync>;

/// The matrix field of a single level.
#[derive(Clone)]
pub enum LevelForm {
    Constant(Matrix),
    LinearPerturbation {
        base: Matrix,
        coordinate: usize,
        epsilon: f64,
        perturbation: Matrix,
    },
    Expression {
        dim: usize,
        entries: Vec<Expr>,
    },
    Custom {
        dim: usize,
        eval: FormFn,
        partial: Option<PartialFn>,
    },
}

impl std::fmt::Debug for LevelForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LevelForm::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            LevelForm::LinearPerturbation {
                coordinate,
                epsilon,
                ..
            } => f
                .debug_struct("LinearPerturbation")
                .field("coordinate", coordinate)
                .field("epsilon", epsilon)
                .finish(),
            LevelForm::Expression { dim, .. } => {
                f.debug_struct("Expression").field("dim", dim).finish()
            }
            LevelForm::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl LevelForm {
    pub fn custom<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        LevelForm::Custom {
            dim,
            eval: Arc::new(eval),
            partial: None,
        }
    }

    /// `base + epsilon * x_k * P`, where `P` keeps only the `(a, b)` and `(b, a)`
    /// entries of `base` (0-based indices).
    pub fn linear_perturbation(base: Matrix, coordinate: usize, epsilon: f64, pair: (usize, usize)) -> Self {
        let mut perturbation = Matrix::zeros(base.nrows(), base.ncols());
        let (a, b) = pair;
        perturbation[(a, b)] = base[(a, b)];
        perturbation[(b, a)] = base[(b, a)];
        LevelForm::LinearPerturbation {
            base,
            coordinate,
            epsilon,
            perturbation,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LevelForm::Constant(m) => m.nrows(),
            LevelForm::LinearPerturbation { base, .. } => base.nrows(),
            LevelForm::Expression { dim, .. } | LevelForm::Custom { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &Vector) -> Matrix {
        match self {
            LevelForm::Constant(m) => m.clone(),
            LevelForm::LinearPerturbation {
                base,
                coordinate,
                epsilon,
                perturbation,
            } => base + perturbation * (epsilon * x[*coordinate]),
            LevelForm::Expression { dim, entries } => {
                let xs = x.as_slice();
                Matrix::from_fn(*dim, *dim, |r, c| entries[r * dim + c].eval(xs))
            }
            LevelForm::Custom { eval, .. } => eval(x),
        }
    }

    /// Exact `dS/dx_k` when the form provides it.
    pub fn exact_partial(&self, x: &Vector, k: usize) -> Option<Matrix> {
        match self {
            LevelForm::Constant(m) => Some(Matrix::zeros(m.nrows(), m.ncols())),
            LevelForm::LinearPerturbation {
                coordinate,
                epsilon,
                perturbation,
                ..
            } => Some(if k == *coordinate {
                perturbation * *epsilon
            } else {
                Matrix::zeros(perturbation.nrows(), perturbation.ncols())
            }),
            LevelForm::Expression { .. } => None,
            LevelForm::Custom { partial, .. } => partial.as_ref().map(|p| p(x, k)),
        }
    }

    fn from_spec(spec: &FormSpec, dim: usize) -> Result<LevelForm> {
        match spec {
            FormSpec::Constant { matrix } => Ok(LevelForm::Constant(from_row_major(dim, dim, matrix)?)),
            FormSpec::LinearPerturbation {
                base,
                coordinate,
                epsilon,
                pair,
            } => {
                let base = from_row_major(dim, dim, base)?;
                if *coordinate == 0 || *coordinate > dim {
                    return Err(Error::ShapeMismatch(format!(
                        "coordinate {coordinate} out of range 1..={dim}"
                    )));
                }
                let k = coordinate - 1;
                let (a, b) = match pair {
                    Some([a, b]) => {
                        if *a == 0 || *b == 0 || *a > dim || *b > dim || a == b {
                            return Err(Error::ShapeMismatch(format!(
                                "pair [{a}, {b}] is not a valid index pair for dim {dim}"
                            )));
                        }
                        (a - 1, b - 1)
                    }
                    None => {
                        let a = k - k % 2;
                        if a + 1 >= dim {
                            return Err(Error::ShapeMismatch(format!(
                                "no canonical pair contains coordinate {coordinate} in dim {dim}"
                            )));
                        }
                        (a, a + 1)
                    }
                };
                Ok(LevelForm::linear_perturbation(base, k, *epsilon, (a, b)))
            }
            FormSpec::Expression { entries } => {
                if entries.len() != dim * dim {
                    return Err(Error::ShapeMismatch(format!(
                        "expected {} expression entries, got {}",
                        dim * dim,
                        entries.len()
                    )));
                }
                let parsed = entries
                    .iter()
                    .map(|s| Expr::parse(s))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(k) = parsed.iter().filter_map(Expr::max_var).max() {
                    if k >= dim {
                        return Err(Error::Expression(format!(
                            "x{} referenced but the level has dim {dim}",
                            k + 1
                        )));
                    }
                }
                Ok(LevelForm::Expression {
                    dim,
                    entries: parsed,
                })
            }
            FormSpec::PerLevel { .. } => Err(Error::ShapeMismatch(
                "per_level specs cannot be nested".into(),
            )),
        }
    }
}

/// A weak symplectic field on every level of a tower.
#[derive(Debug, Clone)]
pub struct SymplecticField {
    tower: Arc<Tower>,
    forms: Vec<LevelForm>,
    base_point: ThreadVector,
    base: Vec<Matrix>,
    h_fd: f64,
    sigma_min_tol: f64,
}

impl SymplecticField {
    pub fn new(tower: Arc<Tower>, forms: Vec<LevelForm>, base_point: Option<ThreadVector>) -> Result<Self> {
        if forms.len() != tower.depth() {
            return Err(Error::ShapeMismatch(format!(
                "{} level forms for a tower of depth {}",
                forms.len(),
                tower.depth()
            )));
        }
        for (i, f) in forms.iter().enumerate() {
            if f.dim() != tower.dim(i) {
                return Err(Error::ShapeMismatch(format!(
                    "form on level {i} has dim {}, level has dim {}",
                    f.dim(),
                    tower.dim(i)
                )));
            }
        }
        let base_point = match base_point {
            Some(p) => {
                let check = check_thread(&tower, p.components())?;
                if !check.pass {
                    return Err(Error::ShapeMismatch(format!(
                        "base point is not a thread (residual {:e})",
                        check.max_residual
                    )));
                }
                p
            }
            None => ThreadVector::zeros(&tower),
        };
        let mut field = SymplecticField {
            tower,
            forms,
            base_point,
            base: Vec::new(),
            h_fd: DEFAULT_H_FD,
            sigma_min_tol: DEFAULT_SIGMA_MIN_TOL,
        };
        let base = (0..field.depth())
            .map(|i| field.form(i, field.base_point.level(i)))
            .collect::<Result<Vec<_>>>()?;
        field.base = base;
        for i in 0..field.depth() {
            let w = field.weighted(i, &field.base[i]);
            let (_, min) = singular_extremes(&w);
            if min < field.sigma_min_tol {
                return Err(Error::SingularForm {
                    level: i,
                    min_singular_value: min,
                });
            }
        }
        Ok(field)
    }

    pub fn from_spec(tower: Arc<Tower>, spec: &FieldSpec) -> Result<Self> {
        let forms = match &spec.form {
            FormSpec::PerLevel { levels } => {
                if levels.len() != tower.depth() {
                    return Err(Error::ShapeMismatch(format!(
                        "per_level field lists {} levels, tower has {}",
                        levels.len(),
                        tower.depth()
                    )));
                }
                levels
                    .iter()
                    .enumerate()
                    .map(|(i, s)| LevelForm::from_spec(s, tower.dim(i)))
                    .collect::<Result<Vec<_>>>()?
            }
            other => (0..tower.depth())
                .map(|i| LevelForm::from_spec(other, tower.dim(i)))
                .collect::<Result<Vec<_>>>()?,
        };
        let base_point = match &spec.base_point {
            Some(p) => Some(make_thread(&tower, &Vector::from_column_slice(p))?),
            None => None,
        };
        SymplecticField::new(tower, forms, base_point)
    }

    /// The same form on every level (levels must share a dimension).
    pub fn uniform(tower: Arc<Tower>, form: LevelForm) -> Result<Self> {
        let forms = vec![form; tower.depth()];
        SymplecticField::new(tower, forms, None)
    }

    pub fn with_h_fd(mut self, h_fd: f64) -> Self {
        self.h_fd = h_fd;
        self
    }

    pub fn with_sigma_min_tol(mut self, tol: f64) -> Self {
        self.sigma_min_tol = tol;
        self
    }

    pub fn tower(&self) -> &Arc<Tower> {
        &self.tower
    }

    pub fn depth(&self) -> usize {
        self.forms.len()
    }

    pub fn level_form(&self, level: usize) -> &LevelForm {
        &self.forms[level]
    }

    pub fn base_point(&self) -> &ThreadVector {
        &self.base_point
    }

    pub fn h_fd(&self) -> f64 {
        self.h_fd
    }

    pub fn sigma_min_tol(&self) -> f64 {
        self.sigma_min_tol
    }

    /// Frozen `S_i(p_i)`.
    pub fn base_form(&self, level: usize) -> &Matrix {
        &self.base[level]
    }

    /// `S_i(x)`, checked for finiteness and antisymmetry.
    pub fn form(&self, level: usize, x: &Vector) -> Result<Matrix> {
        self.tower.check_dim(level, x, "point")?;
        let s = self.forms[level].eval(x);
        if !is_finite(&s) {
            return Err(Error::EvaluationFailure(format!(
                "form on level {level} is not finite at {:?}",
                x.as_slice()
            )));
        }
        let residual = max_abs(&(&s + s.transpose()));
        if residual > ANTISYMMETRY_TOL * max_abs(&s).max(1.0) {
            return Err(Error::NotAntisymmetric { level, residual });
        }
        Ok(s)
    }

    /// `S^t_i(x) = (1 - t) S_i(p_i) + t S_i(x)`; exact at `t = 0` and `t = 1`.
    pub fn form_t(&self, level: usize, x: &Vector, t: f64) -> Result<Matrix> {
        let s = self.form(level, x)?;
        Ok(&self.base[level] * (1.0 - t) + s * t)
    }

    /// `dS_i/dx_k` at `x`: exact when available, else central differences.
    pub fn partial(&self, level: usize, x: &Vector, k: usize) -> Result<Matrix> {
        if let Some(p) = self.forms[level].exact_partial(x, k) {
            return Ok(p);
        }
        let h = self.h_fd * x[k].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        Ok((self.form(level, &xp)? - self.form(level, &xm)?) / (2.0 * h))
    }

    /// Flat map of `m` in gram-normalized coordinates: `C^-1 m^T C^-T` with
    /// `G = C C^T`. Its singular values are the operator norms of the flat
    /// map `(E, |.|) -> (E*, |.|_*)`.
    pub fn weighted(&self, level: usize, m: &Matrix) -> Matrix {
        let c = self.tower.level(level).chol();
        let left = c
            .solve_lower_triangular(&m.transpose())
            .expect("cholesky factor is invertible");
        c.solve_lower_triangular(&left.transpose())
            .expect("cholesky factor is invertible")
            .transpose()
    }

    /// Smallest weighted singular value of `S^t_i(x)`.
    pub fn min_singular(&self, level: usize, x: &Vector, t: f64) -> Result<f64> {
        let st = self.form_t(level, x, t)?;
        Ok(singular_extremes(&self.weighted(level, &st)).1)
    }

    pub(crate) fn ensure_invertible(&self, level: usize, st: &Matrix) -> Result<()> {
        let (_, min) = singular_extremes(&self.weighted(level, st));
        if !(min >= self.sigma_min_tol) {
            return Err(Error::SingularForm {
                level,
                min_singular_value: if min.is_nan() { 0.0 } else { min },
            });
        }
        Ok(())
    }
}

/// Covector `S^t(x)^T X`, i.e. `v -> sigma^t_x(X, v)`.
pub fn flat(field: &SymplecticField, level: usize, x: &Vector, vector: &Vector, t: f64) -> Result<Vector> {
    field.tower.check_dim(level, vector, "vector")?;
    Ok(field.form_t(level, x, t)?.transpose() * vector)
}

/// `sup_{|Y| = 1} |sigma_x(X, Y)|`, computed as the dual norm of `S(x)^T X`.
pub fn f_norm(field: &SymplecticField, level: usize, x: &Vector, vector: &Vector) -> Result<f64> {
    let c = flat(field, level, x, vector, 1.0)?;
    Ok(field.tower.dual_norm(level, &c))
}

/// Norm of a covector as an element of the dual of the completion in the
/// `f_norm`: `|S(x)^-1 c|`.
pub fn f_dual_norm(field: &SymplecticField, level: usize, x: &Vector, covector: &Vector) -> Result<f64> {
    field.tower.check_dim(level, covector, "covector")?;
    let s = field.form(level, x)?;
    field.ensure_invertible(level, &s)?;
    let y = s
        .lu()
        .solve(covector)
        .ok_or(Error::SingularForm {
            level,
            min_singular_value: 0.0,
        })?;
    Ok(field.tower.norm(level, &y))
}

/// Operator norm of the flat map from `(E_i, |.|_i)` into the dual of the
/// `f_norm` completion. At most one.
pub fn op_norm_flat(field: &SymplecticField, level: usize, x: &Vector) -> Result<f64> {
    let s = field.form(level, x)?;
    field.ensure_invertible(level, &s)?;
    let w = field.weighted(level, &s);
    // |S^-1 S^T X| in normalized coordinates is W^-T W.
    let wt_inv = w
        .transpose()
        .try_inverse()
        .ok_or(Error::SingularForm {
            level,
            min_singular_value: 0.0,
        })?;
    Ok(singular_extremes(&(wt_inv * w)).0)
}

/// Operator norm of `((sigma^t)^b)^-1 : (E*, |.|_*) -> (E, |.|)`.
pub fn op_norm_sharp_inverse(field: &SymplecticField, level: usize, x: &Vector, t: f64) -> Result<f64> {
    let st = field.form_t(level, x, t)?;
    field.ensure_invertible(level, &st)?;
    let (_, min) = singular_extremes(&field.weighted(level, &st));
    Ok(1.0 / min)
}

/// Per-level covectors attached to a point.
#[derive(Debug, Clone, PartialEq)]
pub struct OneFormThread {
    components: Vec<Vector>,
    point: ThreadVector,
}

impl OneFormThread {
    pub fn new(components: Vec<Vector>, point: ThreadVector) -> Self {
        OneFormThread { components, point }
    }

    pub fn components(&self) -> &[Vector] {
        &self.components
    }

    pub fn level(&self, i: usize) -> &Vector {
        &self.components[i]
    }

    pub fn point(&self) -> &ThreadVector {
        &self.point
    }

    pub fn negated(&self) -> OneFormThread {
        OneFormThread {
            components: self.components.iter().map(|c| -c).collect(),
            point: self.point.clone(),
        }
    }

    /// Max over `j > i` of `|psi_ji(alpha_j) - alpha_i|_*`.
    pub fn psi_residual(&self, field: &SymplecticField, t: f64) -> Result<f64> {
        let tower = field.tower();
        let mut worst = 0.0_f64;
        for j in 1..tower.depth() {
            for i in 0..j {
                let mapped = psi_ji_at(field, &self.point, j, i, &self.components[j], t)?;
                worst = worst.max(tower.dual_norm(i, &(mapped - &self.components[i])));
            }
        }
        Ok(worst)
    }
}

/// Solves `S^t_i(x_i)^T X_i = alpha_i` on every level and certifies that the
/// solutions form a thread.
pub fn sharp(field: &SymplecticField, x: &ThreadVector, alpha: &OneFormThread, t: f64) -> Result<ThreadVector> {
    let tower = field.tower();
    if alpha.components.len() != tower.depth() || x.depth() != tower.depth() {
        return Err(Error::ShapeMismatch("thread depth differs from tower depth".into()));
    }
    let mut out = Vec::with_capacity(tower.depth());
    for i in 0..tower.depth() {
        tower.check_dim(i, &alpha.components[i], "covector")?;
        out.push(sharp_level(field, i, x.level(i), &alpha.components[i], t)?);
    }
    let check = check_thread(tower, &out)?;
    if !check.pass {
        let scale = out
            .iter()
            .enumerate()
            .map(|(i, c)| tower.norm(i, c))
            .fold(0.0, f64::max);
        return Err(Error::CompatibilityViolation {
            residual: check.max_residual,
            tolerance: tower.tol_thread() * scale.max(1.0),
        });
    }
    Ok(ThreadVector::from_components(out))
}

pub fn sharp_level(field: &SymplecticField, level: usize, x: &Vector, covector: &Vector, t: f64) -> Result<Vector> {
    let st = field.form_t(level, x, t)?;
    field.ensure_invertible(level, &st)?;
    st.transpose().lu().solve(covector).ok_or(Error::SingularForm {
        level,
        min_singular_value: 0.0,
    })
}

/// `psi_ji = S_i(x_i)^T L_ji (S_j(x_j)^T)^-1`, applied to a level-`j` covector.
pub fn psi_ji(field: &SymplecticField, x: &ThreadVector, j: usize, i: usize, alpha_j: &Vector) -> Result<Vector> {
    psi_ji_at(field, x, j, i, alpha_j, 1.0)
}

pub fn psi_ji_at(
    field: &SymplecticField,
    x: &ThreadVector,
    j: usize,
    i: usize,
    alpha_j: &Vector,
    t: f64,
) -> Result<Vector> {
    if j < i {
        return Err(Error::ShapeMismatch(format!("psi_ji needs j >= i, got j={j}, i={i}")));
    }
    let tower = field.tower();
    tower.check_dim(j, alpha_j, "covector")?;
    if j == i {
        return Ok(alpha_j.clone());
    }
    let vj = sharp_level(field, j, x.level(j), alpha_j, t)?;
    let vi = tower.composite(j, i) * vj;
    flat(field, i, x.level(i), &vi, t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedCheck {
    pub residual: f64,
    pub pass: bool,
}

/// Max over coordinate triples of `|d sigma(e_a, e_b, e_c)|`, using
/// `d sigma(e_a, e_b, e_c) = d_a S_bc + d_b S_ca + d_c S_ab`.
pub fn check_closed(field: &SymplecticField, level: usize, x: &Vector, tol: f64) -> Result<ClosedCheck> {
    field.tower.check_dim(level, x, "point")?;
    let n = x.len();
    if n < 3 {
        return Ok(ClosedCheck {
            residual: 0.0,
            pass: true,
        });
    }
    let partials = (0..n)
        .map(|k| field.partial(level, x, k))
        .collect::<Result<Vec<_>>>()?;
    let mut residual = 0.0_f64;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let d = partials[a][(b, c)] + partials[b][(c, a)] + partials[c][(a, b)];
                residual = residual.max(d.abs());
            }
        }
    }
    Ok(ClosedCheck {
        residual,
        pass: residual <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityReport {
    /// Residual of `psi_ji o (sigma^j)^b = (sigma^i)^b o L_ji`.
    pub psi_relation_residual: f64,
    /// Residual of `sigma^j(u, v) = sigma^i(L_ji u, L_ji v)`, i.e. the levels
    /// describe one form on the limit.
    pub restriction_residual: f64,
    pub max_residual: f64,
    pub pass: bool,
}

/// Checks, at each sample point, that the levelwise forms fit together along
/// the connectors. Residuals are weighted operator norms over all vectors.
pub fn check_compatibility(field: &SymplecticField, samples: &[ThreadVector]) -> Result<CompatibilityReport> {
    let tower = field.tower();
    let mut psi_rel = 0.0_f64;
    let mut restriction = 0.0_f64;
    let mut pass = true;
    for x in samples {
        let forms = (0..tower.depth())
            .map(|i| field.form(i, x.level(i)))
            .collect::<Result<Vec<_>>>()?;
        for j in 1..tower.depth() {
            field.ensure_invertible(j, &forms[j])?;
            let sj_t_inv = forms[j]
                .transpose()
                .try_inverse()
                .ok_or(Error::SingularForm {
                    level: j,
                    min_singular_value: 0.0,
                })?;
            for i in 0..j {
                let l = tower.composite(j, i);
                let direct = forms[i].transpose() * l;
                let via_psi = &direct * &sj_t_inv * forms[j].transpose();
                let r_psi = weighted_between(tower, j, i, &(via_psi - &direct));
                // covector on level j: S_j^T u - L^T S_i^T L u
                let d = forms[j].transpose() - l.transpose() * forms[i].transpose() * l;
                let r_res = weighted_between(tower, j, j, &d);
                let scale = max_abs(&forms[j]).max(max_abs(&forms[i]));
                pass &= tower.within_tol(r_psi, scale) && tower.within_tol(r_res, scale);
                psi_rel = psi_rel.max(r_psi);
                restriction = restriction.max(r_res);
            }
        }
    }
    Ok(CompatibilityReport {
        psi_relation_residual: psi_rel,
        restriction_residual: restriction,
        max_residual: psi_rel.max(restriction),
        pass,
    })
}

/// Operator norm of `m : (E_from, |.|) -> (E_to*, |.|_*)`.
fn weighted_between(tower: &Tower, from: usize, to: usize, m: &Matrix) -> f64 {
    let c_to = tower.level(to).chol();
    let c_from = tower.level(from).chol();
    let left = c_to.solve_lower_triangular(m).expect("invertible");
    let c_from_inv_t = c_from.clone().try_inverse().expect("invertible").transpose();
    singular_extremes(&(left * c_from_inv_t)).0
}

/// The affine path `sigma^t = sigma_p + t (sigma - sigma_p)`.
#[derive(Debug, Clone)]
pub struct MoserDeformation {
    field: Arc<SymplecticField>,
}

impl MoserDeformation {
    pub fn new(field: Arc<SymplecticField>) -> Self {
        MoserDeformation { field }
    }

    pub fn field(&self) -> &Arc<SymplecticField> {
        &self.field
    }

    pub fn tower(&self) -> &Arc<Tower> {
        self.field.tower()
    }

    pub fn form_t(&self, level: usize, x: &Vector, t: f64) -> Result<Matrix> {
        self.field.form_t(level, x, t)
    }

    /// `S_i(x) - S_i(p_i)`.
    pub fn deviation(&self, level: usize, x: &Vector) -> Result<Matrix> {
        Ok(self.field.form(level, x)? - self.field.base_form(level))
    }

    pub fn base_form(&self, level: usize) -> &Matrix {
        self.field.base_form(level)
    }
}
