//! Dense conic solver for programs of the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  b − A x ∈ K
//! ```
//!
//! where `K` is an ordered product of zero cones, nonnegative orthants and
//! second-order cones `{(t, z) : ‖z‖ ≤ t}`. The solver is a homogeneous
//! self-dual interior-point method with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector, so it returns either an optimal primal-dual pair or a
//! certificate of primal or dual infeasibility.

mod builder;
pub(crate) mod cones;
mod ipm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

pub use builder::{embed_rotated_soc, Affine, ProgramBuilder, Var};
pub use ipm::ConeSolver;

/// One block of the cone product, `k` rows long.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "dim", rename_all = "UPPERCASE")]
pub enum Cone {
    Zero(usize),
    #[serde(rename = "NONNEG")]
    NonNeg(usize),
    /// Second-order cone; the first row of the block is the scalar bound.
    Soc(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(k) | Cone::NonNeg(k) | Cone::Soc(k) => k,
        }
    }
}

/// `minimize cᵀx  s.t.  b − A x ∈ K`.
#[derive(Clone, Debug)]
pub struct ConeProgram<T> {
    pub c: Vec<T>,
    pub a: Mat<T>,
    pub b: Vec<T>,
    pub cones: Vec<Cone>,
}

impl<T: Real> ConeProgram<T> {
    pub fn new(c: Vec<T>, a: Mat<T>, b: Vec<T>, cones: Vec<Cone>) -> Result<Self> {
        let p = Self { c, a, b, cones };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.c.len(), self.b.len());
        if n == 0 {
            return Err(Error::InvalidArgument("program has no variables".into()));
        }
        if self.a.rows() != m || self.a.cols() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, expected {m}x{n}",
                self.a.rows(),
                self.a.cols()
            )));
        }
        let total: usize = self.cones.iter().map(Cone::dim).sum();
        if total != m {
            return Err(Error::Dimension(format!(
                "cone sizes sum to {total}, program has {m} rows"
            )));
        }
        for cone in &self.cones {
            match *cone {
                Cone::Soc(k) if k < 2 => {
                    return Err(Error::InvalidArgument(format!(
                        "second-order cone of dimension {k} (need at least 2)"
                    )))
                }
                Cone::Zero(0) | Cone::NonNeg(0) => return Err(Error::InvalidArgument("empty cone block".into())),
                _ => {}
            }
        }
        let finite = self.c.iter().chain(&self.b).all(|v| v.is_finite()) && self.a.is_finite();
        if !finite {
            return Err(Error::InvalidArgument("non-finite program data".into()));
        }
        Ok(())
    }

    /// Debug representation with a dense constraint matrix, for offline
    /// cross-checking against other solvers.
    pub fn to_json(&self) -> serde_json::Value {
        let conv = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        serde_json::json!({
            "c": conv(&self.c),
            "A": self.a.to_rows().iter().map(|r| conv(r)).collect::<Vec<_>>(),
            "b": conv(&self.b),
            "cones": self.cones,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Dump {
            c: Vec<f64>,
            #[serde(rename = "A")]
            a: Vec<Vec<f64>>,
            b: Vec<f64>,
            cones: Vec<Cone>,
        }
        let d: Dump = serde_json::from_value(v.clone())?;
        let lift = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let rows: Vec<Vec<T>> = d.a.iter().map(|r| lift(r)).collect();
        if rows.iter().any(|r| r.len() != d.c.len()) {
            return Err(Error::Dimension("ragged A in program dump".into()));
        }
        let a = if rows.is_empty() {
            Mat::zeros(0, d.c.len())
        } else {
            Mat::from_rows(&rows)
        };
        Self::new(lift(&d.c), a, lift(&d.b), d.cones)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConeStatus {
    Optimal,
    /// Primal infeasible; `y` holds a dual improving ray with `bᵀy = −1`.
    Infeasible,
    /// Dual infeasible; `x` holds a primal improving ray with `cᵀx = −1`.
    Unbounded,
    /// Iteration cap (or numerical breakdown); fields hold the best iterate.
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct ConeSolution<T> {
    pub status: ConeStatus,
    pub x: Vec<T>,
    /// Dual multipliers, one per row, in `K*`.
    pub y: Vec<T>,
    /// Primal slack `b − A x`.
    pub s: Vec<T>,
    pub objective: T,
    /// `‖A x + s − b‖ / max(1, ‖b‖)`
    pub primal_residual: T,
    /// `‖Aᵀ y + c‖ / max(1, ‖c‖)`
    pub dual_residual: T,
    /// `(cᵀx + bᵀy) / max(1, |cᵀx|)`
    pub gap: T,
    /// Residual of the infeasibility certificate, when one was returned.
    pub certificate_residual: Option<T>,
    pub iterations: usize,
    /// Set when the KKT factorization broke down before convergence.
    pub numerical_issue: bool,
}

impl<T: Real> ConeSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == ConeStatus::Optimal
    }

    /// Optimal, or stopped early with every KKT residual below `tol`.
    pub fn is_near_optimal(&self, tol: T) -> bool {
        self.is_optimal()
            || (self.status == ConeStatus::MaxIter
                && self.primal_residual <= tol
                && self.dual_residual <= tol
                && self.gap.abs() <= tol)
    }
}

/// Solver tolerances and limits.
#[derive(Clone, Debug)]
pub struct Settings<T> {
    pub tol_feas: T,
    pub tol_gap: T,
    /// Acceptance threshold for infeasibility certificates.
    pub tol_infeas: T,
    pub max_iter: usize,
    /// Fraction of the maximum step taken toward the cone boundary.
    pub step_fraction: T,
    pub static_reg: T,
    pub refine_steps: usize,
}

impl<T: Real> Default for Settings<T> {
    fn default() -> Self {
        let tol = T::default_tol();
        Self {
            tol_feas: tol,
            tol_gap: tol,
            tol_infeas: T::lit(1e-7).max(tol),
            max_iter: 200,
            step_fraction: T::lit(0.99),
            static_reg: T::epsilon().sqrt() * T::lit(1e-3),
            refine_steps: 3,
        }
    }
}

/// Solves `prog` with a fresh solver instance.
pub fn solve<T: Real>(prog: &ConeProgram<T>, settings: &Settings<T>) -> Result<ConeSolution<T>> {
    ConeSolver::new(settings.clone()).solve(prog)
}
