//! Finite towers of normed spaces and their threads.
//!
//! A tower is a chain of levels `0..N`, level `0` being the coarsest and level
//! `N-1` the deepest. Each level carries a gram matrix `G` defining
//! `|x| = sqrt(x^T G x)`, and each non-deepest level `i` carries a connector
//! mapping level `i+1` into level `i`. A thread is a tuple of components, one per
//! level, that is fixed by the connectors; it represents a point (or a tangent
//! vector) of the limit space, which is carried by the deepest level.

use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_row_major, max_abs, singular_extremes, to_row_major, Matrix, Vector};

pub const DEFAULT_TOL_THREAD: f64 = 1e-12;

/// JSON description of a tower. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TowerSpec {
    pub levels: Vec<LevelSpec>,
    /// Optional user-supplied composite maps; they are checked against the
    /// product of connectors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub composites: Vec<CompositeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_thread: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub dim: usize,
    /// Row-major `dim x dim`; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<Vec<f64>>,
    /// Row-major `dim x dim_next` map from the next (deeper) level into this one.
    /// Identity when omitted and the dimensions agree. Must be absent on the
    /// deepest level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connect: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    pub from: usize,
    pub to: usize,
    pub matrix: Vec<f64>,
}

impl TowerSpec {
    /// `depth` levels of dimension `dim`, identity connectors, gram `scale(i) * I`.
    pub fn inclusion(depth: usize, dim: usize, gram_scale: impl Fn(usize) -> f64) -> Self {
        let levels = (0..depth)
            .map(|i| {
                let s = gram_scale(i);
                let mut g = vec![0.0; dim * dim];
                for k in 0..dim {
                    g[k * dim + k] = s;
                }
                LevelSpec {
                    dim,
                    gram: Some(g),
                    connect: None,
                }
            })
            .collect();
        TowerSpec {
            levels,
            composites: Vec::new(),
            tol_thread: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    dim: usize,
    gram: Matrix,
    /// Lower Cholesky factor, `gram = chol * chol^T`.
    chol: Matrix,
    connect: Option<Matrix>,
}

impl Level {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn connect(&self) -> Option<&Matrix> {
        self.connect.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct Tower {
    levels: Vec<Level>,
    /// `composites[j][i]` maps level `j` into level `i`, for `j >= i`.
    composites: Vec<Vec<Matrix>>,
    /// `continuity[j][i]` bounds `|L_ji x|_i <= C |x|_j`.
    continuity: Vec<Vec<f64>>,
    tol_thread: f64,
}

impl Tower {
    pub fn build(spec: &TowerSpec) -> Result<Tower> {
        if spec.levels.is_empty() {
            return Err(Error::ShapeMismatch("tower needs at least one level".into()));
        }
        let n = spec.levels.len();
        let mut levels = Vec::with_capacity(n);
        for (idx, ls) in spec.levels.iter().enumerate() {
            if ls.dim == 0 {
                return Err(Error::ShapeMismatch(format!("level {idx} has dimension 0")));
            }
            let gram = match &ls.gram {
                Some(g) => from_row_major(ls.dim, ls.dim, g)
                    .map_err(|e| Error::ShapeMismatch(format!("level {idx} gram: {e}")))?,
                None => Matrix::identity(ls.dim, ls.dim),
            };
            let chol = factor_gram(idx, &gram)?;
            let connect = if idx + 1 < n {
                let next = spec.levels[idx + 1].dim;
                match &ls.connect {
                    Some(c) => Some(from_row_major(ls.dim, next, c).map_err(|e| {
                        Error::ShapeMismatch(format!("level {idx} connector: {e}"))
                    })?),
                    None if next == ls.dim => Some(Matrix::identity(ls.dim, ls.dim)),
                    None => {
                        return Err(Error::ShapeMismatch(format!(
                            "level {idx} has dim {} but level {} has dim {next}; a connector is required",
                            ls.dim,
                            idx + 1
                        )))
                    }
                }
            } else {
                if ls.connect.is_some() {
                    return Err(Error::ShapeMismatch(
                        "the deepest level cannot carry a connector".into(),
                    ));
                }
                None
            };
            levels.push(Level {
                dim: ls.dim,
                gram,
                chol,
                connect,
            });
        }

        let mut composites: Vec<Vec<Matrix>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut row: Vec<Matrix> = vec![Matrix::zeros(0, 0); j + 1];
            row[j] = Matrix::identity(levels[j].dim, levels[j].dim);
            for i in (0..j).rev() {
                let step = levels[i].connect.as_ref().expect("non-deepest level has a connector");
                row[i] = step * &row[i + 1];
            }
            composites.push(row);
        }

        for c in &spec.composites {
            if c.to > c.from || c.from >= n {
                return Err(Error::ShapeMismatch(format!(
                    "composite {}->{} is not a valid level pair",
                    c.from, c.to
                )));
            }
            let derived = &composites[c.from][c.to];
            let given = from_row_major(derived.nrows(), derived.ncols(), &c.matrix)?;
            let residual = max_abs(&(&given - derived));
            let scale = max_abs(derived).max(1.0);
            if residual > 1e-12 * scale {
                return Err(Error::CompositionViolation {
                    from: c.from,
                    to: c.to,
                    residual,
                });
            }
        }

        let mut continuity = Vec::with_capacity(n);
        for j in 0..n {
            let lj_inv_t = levels[j]
                .chol
                .clone()
                .try_inverse()
                .expect("cholesky factor is invertible")
                .transpose();
            let row: Vec<f64> = (0..=j)
                .map(|i| {
                    let weighted = levels[i].chol.transpose() * &composites[j][i] * &lj_inv_t;
                    singular_extremes(&weighted).0
                })
                .collect();
            continuity.push(row);
        }

        Ok(Tower {
            levels,
            composites,
            continuity,
            tol_thread: spec.tol_thread.unwrap_or(DEFAULT_TOL_THREAD),
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn deepest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, i: usize) -> &Level {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn dim(&self, i: usize) -> usize {
        self.levels[i].dim
    }

    pub fn tol_thread(&self) -> f64 {
        self.tol_thread
    }

    /// Composite connector from level `from` into level `to` (`from >= to`).
    pub fn composite(&self, from: usize, to: usize) -> &Matrix {
        assert!(from >= to, "composite maps go from deeper to coarser levels");
        &self.composites[from][to]
    }

    pub fn continuity(&self, from: usize, to: usize) -> f64 {
        assert!(from >= to);
        self.continuity[from][to]
    }

    pub fn max_continuity(&self) -> f64 {
        self.continuity
            .iter()
            .flatten()
            .cloned()
            .fold(0.0_f64, f64::max)
    }

    /// All dims equal and every connector the identity.
    pub fn is_inclusion(&self) -> bool {
        self.levels.iter().all(|l| match &l.connect {
            None => true,
            Some(c) => c.nrows() == c.ncols() && *c == Matrix::identity(c.nrows(), c.ncols()),
        })
    }

    pub fn norm(&self, level: usize, x: &Vector) -> f64 {
        (self.levels[level].chol.transpose() * x).norm()
    }

    /// Dual norm `sqrt(c^T G^-1 c)` of a covector.
    pub fn dual_norm(&self, level: usize, c: &Vector) -> f64 {
        self.levels[level]
            .chol
            .solve_lower_triangular(c)
            .map(|y| y.norm())
            .unwrap_or(f64::INFINITY)
    }

    /// Seminorm `p_i(x) = |L_{N,i} x|_i` of a deepest-level vector.
    pub fn seminorm(&self, level: usize, top: &Vector) -> f64 {
        self.norm(level, &(self.composite(self.deepest(), level) * top))
    }

    pub fn check_dim(&self, level: usize, v: &Vector, what: &str) -> Result<()> {
        if level >= self.depth() {
            return Err(Error::ShapeMismatch(format!(
                "level {level} out of range (tower depth {})",
                self.depth()
            )));
        }
        if v.len() != self.levels[level].dim {
            return Err(Error::ShapeMismatch(format!(
                "{what} on level {level} has length {}, expected {}",
                v.len(),
                self.levels[level].dim
            )));
        }
        Ok(())
    }

    pub fn within_tol(&self, residual: f64, scale: f64) -> bool {
        residual <= self.tol_thread * scale.max(1.0)
    }

    pub fn spec(&self) -> TowerSpec {
        TowerSpec {
            levels: self
                .levels
                .iter()
                .map(|l| LevelSpec {
                    dim: l.dim,
                    gram: Some(to_row_major(&l.gram)),
                    connect: l.connect.as_ref().map(to_row_major),
                })
                .collect(),
            composites: Vec::new(),
            tol_thread: Some(self.tol_thread),
        }
    }
}

fn factor_gram(level: usize, gram: &Matrix) -> Result<Matrix> {
    let asym = max_abs(&(gram - gram.transpose()));
    let eig = SymmetricEigen::new((gram + gram.transpose()) * 0.5);
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if asym > 1e-12 * max_abs(gram).max(1.0) || !(min_eigenvalue > 0.0) {
        return Err(Error::NonSpdGram {
            level,
            min_eigenvalue,
        });
    }
    Cholesky::new(gram.clone())
        .map(|c| c.l())
        .ok_or(Error::NonSpdGram {
            level,
            min_eigenvalue,
        })
}

/// One component per level, fixed by the connectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreadVector {
    components: Vec<Vector>,
}

impl ThreadVector {
    /// Wraps components without checking consistency; see [`check_thread`].
    pub fn from_components(components: Vec<Vector>) -> Self {
        ThreadVector { components }
    }

    pub fn zeros(tower: &Tower) -> Self {
        ThreadVector {
            components: tower.levels.iter().map(|l| Vector::zeros(l.dim)).collect(),
        }
    }

    pub fn components(&self) -> &[Vector] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Vector> {
        self.components
    }

    pub fn level(&self, i: usize) -> &Vector {
        &self.components[i]
    }

    pub fn top(&self) -> &Vector {
        self.components.last().expect("threads are non-empty")
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    pub fn scale(&self, s: f64) -> ThreadVector {
        ThreadVector {
            components: self.components.iter().map(|c| c * s).collect(),
        }
    }

    /// Max over levels of `|self_i - other_i|_i`.
    pub fn distance(&self, other: &ThreadVector, tower: &Tower) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .enumerate()
            .map(|(i, (a, b))| tower.norm(i, &(a - b)))
            .fold(0.0, f64::max)
    }
}

/// Builds the thread generated by a deepest-level vector.
pub fn make_thread(tower: &Tower, top: &Vector) -> Result<ThreadVector> {
    tower.check_dim(tower.deepest(), top, "top component")?;
    let n = tower.deepest();
    let components = (0..tower.depth())
        .map(|i| tower.composite(n, i) * top)
        .collect();
    Ok(ThreadVector { components })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResidual {
    pub from: usize,
    pub to: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreadCheck {
    pub max_residual: f64,
    pub pairs: Vec<PairResidual>,
    pub pass: bool,
}

/// Max over `j > i` of `|L_ji x_j - x_i|_i`.
pub fn check_thread(tower: &Tower, components: &[Vector]) -> Result<ThreadCheck> {
    if components.len() != tower.depth() {
        return Err(Error::ShapeMismatch(format!(
            "thread has {} components, tower has {} levels",
            components.len(),
            tower.depth()
        )));
    }
    for (i, c) in components.iter().enumerate() {
        tower.check_dim(i, c, "thread component")?;
    }
    let mut pairs = Vec::new();
    let mut max_residual = 0.0_f64;
    let mut pass = true;
    for j in 1..tower.depth() {
        for i in 0..j {
            let pushed = tower.composite(j, i) * &components[j];
            let residual = tower.norm(i, &(&pushed - &components[i]));
            let scale = tower.norm(i, &components[i]);
            pass &= tower.within_tol(residual, scale);
            max_residual = max_residual.max(residual);
            pairs.push(PairResidual {
                from: j,
                to: i,
                residual,
            });
        }
    }
    Ok(ThreadCheck {
        max_residual,
        pairs,
        pass,
    })
}
