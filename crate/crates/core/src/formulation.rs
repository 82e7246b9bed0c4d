//! Conic building blocks shared by both precoders.

use crate::conic::{Affine, ConeSolution, ConeSolver, ConeStatus, ProgramBuilder, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Splitting ratios are kept in `[RHO_MIN, 1 − RHO_MIN]`.
pub const RHO_MIN: f64 = 1e-6;

pub fn rho_lo<T: Real>() -> T {
    T::lit(RHO_MIN)
}

pub fn rho_hi<T: Real>() -> T {
    T::one() - T::lit(RHO_MIN)
}

pub fn clamp_rho<T: Real>(rho: T) -> T {
    rho.max(rho_lo()).min(rho_hi())
}

/// Variables `ρ` and `u` with `u²ρ ≥ NC`, so `N0 + u² ≥ N0 + NC/ρ`.
pub(crate) struct SplitVars {
    pub rho: Var,
    pub u: Var,
}

pub(crate) fn split_epigraph<T: Real>(pb: &mut ProgramBuilder<T>, nc: T) -> SplitVars {
    let rho = pb.var();
    let u = pb.var();
    let z1 = pb.var();
    let z2 = pb.var();
    let t0 = nc.cbrt();
    let half = T::lit(0.5);
    pb.nonneg(Affine::var(rho).plus(-rho_lo::<T>()));
    pb.nonneg(Affine::term(rho, -T::one()).plus(rho_hi()));
    pb.nonneg(Affine::var(u) - Affine::var(z1));
    // z2² ≤ ρ·t0 and t0² ≤ z1·z2 give t0³ ≤ z1²ρ ≤ u²ρ
    pb.rotated_soc(
        Affine::term(rho, t0 * half),
        Affine::constant(T::one()),
        vec![Affine::var(z2)],
    );
    pb.rotated_soc(Affine::term(z1, half), Affine::var(z2), vec![Affine::constant(t0)]);
    SplitVars { rho, u }
}

/// Variable `q` with `q(1 − ρ) ≥ energy`.
pub(crate) fn harvest_epigraph<T: Real>(pb: &mut ProgramBuilder<T>, rho: Var, energy: T) -> Var {
    let q = pb.var();
    pb.rotated_soc(
        Affine::term(q, T::lit(0.5)),
        Affine::term(rho, -T::one()).plus(T::one()),
        vec![Affine::constant(energy.sqrt())],
    );
    q
}

/// Runs the solver and maps non-optimal outcomes to errors.
pub(crate) fn solve_checked<T: Real>(
    solver: &mut ConeSolver<T>,
    pb: &ProgramBuilder<T>,
    what: &str,
) -> Result<ConeSolution<T>> {
    let prog = pb.build()?;
    let sol = solver.solve(&prog)?;
    if sol.is_near_optimal(T::lit(1e-6)) {
        return Ok(sol);
    }
    match sol.status {
        ConeStatus::Infeasible => Err(Error::Infeasible(format!("{what} is infeasible"))),
        ConeStatus::Unbounded => Err(Error::Internal(format!("{what} reported unbounded"))),
        _ => Err(Error::Internal(format!(
            "{what}: solver stopped after {} iterations (primal {:e}, dual {:e}, gap {:e})",
            sol.iterations,
            sol.primal_residual.to_f64_lossy(),
            sol.dual_residual.to_f64_lossy(),
            sol.gap.to_f64_lossy()
        ))),
    }
}

/// Smallest factor `≥ 1` pushed just past rounding.
pub(crate) fn amplification<T: Real>(beta: T) -> T {
    if beta > T::one() {
        beta * (T::one() + T::lit(16.0) * T::epsilon())
    } else {
        T::one()
    }
}
