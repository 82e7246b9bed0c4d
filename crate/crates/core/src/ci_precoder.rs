//! Constructive-interference precoding over the common precoded vector `w`.
//!
//! Three solvers share the data-rotated channel model: a reduced problem with
//! the received symbol pinned to the constellation axis and a closed-form
//! splitting ratio ([`solve_suboptimal`]), a feasible-point bootstrap
//! ([`find_feasible_start`]), and a successive convexification of the full
//! nonconvex problem ([`solve_dc`]).

use serde::Serialize;
use serde_json::json;

use crate::conic::{Affine, ConeSolver, ProgramBuilder, Settings, Var};
use crate::error::{Error, Result};
use crate::formulation::{amplification, clamp_rho, harvest_epigraph, rho_hi, solve_checked, split_epigraph};
use crate::model::{
    from_real, pairs_out, product_functionals, CiSolution, Constellation, NoiseModel, RotatedChannels, UserRequirement,
};
use crate::scalar::{Cx, Real};

#[derive(Clone, Debug)]
pub struct CiOptions<T> {
    pub settings: Settings<T>,
    /// Relative change of `‖w‖²` that ends the outer loop.
    pub tol: T,
    pub max_outer: usize,
}

impl<T: Real> Default for CiOptions<T> {
    fn default() -> Self {
        Self {
            settings: Settings::default(),
            tol: T::lit(1e-5),
            max_outer: 50,
        }
    }
}

/// Quadratic `Aρ² + Bρ + C = 0` whose root balances the decoding and
/// harvesting thresholds, `Γ(N0 + NC/ρ) = E/(1 − ρ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RhoStarBreakdown<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub discriminant: T,
    pub rho_star: T,
}

pub fn rho_star<T: Real>(req: &UserRequirement<T>, noise: &NoiseModel<T>) -> RhoStarBreakdown<T> {
    let (g, e) = (req.gamma, req.energy);
    let a = -g * noise.n0;
    let b = g * noise.n0 - e - g * noise.nc;
    let c = g * noise.nc;
    let four = T::lit(4.0);
    let discriminant = b * b - four * a * c;
    assert!(discriminant > T::zero(), "discriminant must be positive");
    let root = discriminant.sqrt();
    let rho_star = if e == T::zero() {
        T::one()
    } else if b <= T::zero() {
        // same root as (−B − √D)/(2A), without cancellation
        (c + c) / (root - b)
    } else {
        (-b - root) / (a + a)
    };
    RhoStarBreakdown {
        a,
        b,
        c,
        discriminant,
        rho_star,
    }
}

/// `ρ*` clamped into the representable interval.
pub fn operating_rho<T: Real>(req: &UserRequirement<T>, noise: &NoiseModel<T>) -> T {
    clamp_rho(rho_star(req, noise).rho_star)
}

fn check_dims<T: Real>(rot: &RotatedChannels<T>, reqs: &[UserRequirement<T>]) -> Result<()> {
    if reqs.len() != rot.users() {
        return Err(Error::Dimension(format!(
            "{} requirements for {} users",
            reqs.len(),
            rot.users()
        )));
    }
    Ok(())
}

struct Layout {
    x: usize,
    n: usize,
}

fn norm_objective<T: Real>(pb: &mut ProgramBuilder<T>, n: usize) -> Layout {
    let t = pb.var();
    let x = pb.vars(2 * n);
    pb.minimize_term(t, T::one());
    let mut rows = vec![Affine::var(t)];
    rows.extend((0..2 * n).map(|j| Affine::var(Var(x + j))));
    pb.soc(rows);
    Layout { x, n }
}

impl Layout {
    fn w<T: Real>(&self, x: &[T]) -> Vec<Cx<T>> {
        from_real(&x[self.x..self.x + 2 * self.n])
    }
}

/// `(Re − thr)·sinθ ∓ Im·cosθ ≥ 0`, the sector written without `tanθ`.
fn wedge_rows<T: Real>(
    pb: &mut ProgramBuilder<T>,
    re: &Affine<T>,
    im: &Affine<T>,
    thr: Affine<T>,
    cons: &Constellation<T>,
) {
    let (s, c) = cons.half_angle().sin_cos();
    let base = (re.clone() - thr).scaled(s);
    pb.nonneg(base.clone() - im.clone().scaled(c));
    pb.nonneg(base + im.clone().scaled(c));
}

/// Scales `w` by the least `β ≥ 1` that makes every sector (and, with
/// `with_eh`, every harvesting) constraint hold at the stored `ρ`.
fn polish<T: Real>(
    sol: CiSolution<T>,
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    with_eh: bool,
) -> Result<CiSolution<T>> {
    let (s, c) = cons.half_angle().sin_cos();
    let mut beta = T::one();
    for ((v, req), &rho) in rot.received(&sol.w).iter().zip(reqs).zip(&sol.rho) {
        let gamma = (req.gamma * noise.effective(rho)).sqrt();
        let depth = v.re * s - v.im.abs() * c;
        if !(depth > T::zero()) {
            return Err(Error::Internal(
                "received symbol outside the constructive sector".into(),
            ));
        }
        beta = beta.max(gamma * s / depth);
        if with_eh && req.energy > T::zero() {
            beta = beta.max((req.energy / ((T::one() - rho) * v.norm_sqr())).sqrt());
        }
    }
    Ok(sol.scaled(amplification(beta)))
}

/// Minimum-power `w` with the received symbols on the constellation axis and
/// every user at its balanced ratio `ρ*`.
pub fn solve_suboptimal<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    opts: &CiOptions<T>,
) -> Result<CiSolution<T>> {
    check_dims(rot, reqs)?;
    let rho: Vec<T> = reqs.iter().map(|r| operating_rho(r, noise)).collect();
    let mut pb = ProgramBuilder::new();
    let lay = norm_objective(&mut pb, rot.antennas());
    for (h, (req, &r)) in rot.rows().iter().zip(reqs.iter().zip(&rho)) {
        let (a, b) = product_functionals(h);
        let thr = (req.gamma * noise.effective(r)).sqrt();
        pb.zero(Affine::linear(lay.x, &b));
        pb.nonneg(Affine::linear(lay.x, &a).plus(-thr));
    }
    let sol = solve_checked(&mut ConeSolver::new(opts.settings.clone()), &pb, "reduced CI problem")?;
    let out = CiSolution { w: lay.w(&sol.x), rho };
    polish(out, rot, reqs, noise, cons, true)
}

/// Minimum-power `w` meeting only the sector constraints at fixed ratios.
pub fn solve_sinr_only<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    rho: &[T],
    opts: &CiOptions<T>,
) -> Result<CiSolution<T>> {
    check_dims(rot, reqs)?;
    if rho.len() != reqs.len() {
        return Err(Error::Dimension(format!(
            "{} ratios for {} users",
            rho.len(),
            reqs.len()
        )));
    }
    if let Some(r) = rho.iter().find(|&&r| !(r > T::zero() && r < T::one())) {
        return Err(Error::Domain(format!("splitting ratio {r} outside (0, 1)")));
    }
    let mut pb = ProgramBuilder::new();
    let lay = norm_objective(&mut pb, rot.antennas());
    for (h, (req, &r)) in rot.rows().iter().zip(reqs.iter().zip(rho)) {
        let (a, b) = product_functionals(h);
        let thr = (req.gamma * noise.effective(r)).sqrt();
        wedge_rows(
            &mut pb,
            &Affine::linear(lay.x, &a),
            &Affine::linear(lay.x, &b),
            Affine::constant(thr),
            cons,
        );
    }
    let sol = solve_checked(&mut ConeSolver::new(opts.settings.clone()), &pb, "CI sector problem")?;
    let out = CiSolution {
        w: lay.w(&sol.x),
        rho: rho.to_vec(),
    };
    polish(out, rot, reqs, noise, cons, false)
}

/// Solves the sector-only problem at `rho_init`, then amplifies `w` until
/// every harvesting constraint holds.
pub fn find_feasible_start<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    rho_init: &[T],
    opts: &CiOptions<T>,
) -> Result<CiSolution<T>> {
    let sol = solve_sinr_only(rot, reqs, noise, cons, rho_init, opts)?;
    polish(sol, rot, reqs, noise, cons, true)
}

/// Starting point for [`solve_dc`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DcInit {
    /// Sector-only solution at `ρ*`, amplified to meet harvesting targets.
    #[default]
    FeasibleStart,
    /// The reduced-problem solution.
    Suboptimal,
}

/// Trace of the successive convexification.
#[derive(Clone, Debug, PartialEq)]
pub struct DcState<T> {
    /// `[Re(h̃_iᵀw), Im(h̃_iᵀw)]` at the current iterate.
    pub expansion_points: Vec<[T; 2]>,
    pub w: Vec<Cx<T>>,
    pub rho: Vec<T>,
    /// `‖w‖²` of every accepted iterate, starting with the initial point.
    pub history: Vec<T>,
    pub u: Vec<T>,
    pub g: Vec<T>,
    pub iterates: Vec<CiSolution<T>>,
}

impl<T: Real> DcState<T> {
    pub fn to_json(&self) -> serde_json::Value {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        json!({
            "expansion_points": self.expansion_points.iter().map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()]).collect::<Vec<_>>(),
            "w": pairs_out(&self.w),
            "rho": f(&self.rho),
            "history": f(&self.history),
            "u": f(&self.u),
            "g": f(&self.g),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DcOutcome<T> {
    pub solution: CiSolution<T>,
    pub state: DcState<T>,
    pub converged: bool,
    /// Set when a subproblem could not be solved to tolerance.
    pub stalled: bool,
}

impl<T: Real> DcOutcome<T> {
    pub fn iterations(&self) -> usize {
        self.state.history.len() - 1
    }
}

fn feasibility_gap<T: Real>(
    sol: &CiSolution<T>,
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
) -> Result<T> {
    let ev = crate::model::evaluate_ci(sol, rot, reqs, noise, cons)?;
    Ok(ev
        .margins
        .iter()
        .zip(reqs)
        .map(|(m, r)| m.slack.min(m.harvested - r.energy))
        .fold(T::infinity(), T::min))
}

struct UserDc {
    split: Option<crate::formulation::SplitVars>,
    g: Option<Var>,
}

fn dc_subproblem<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    points: &[[T; 2]],
) -> (ProgramBuilder<T>, Layout, Vec<UserDc>) {
    let mut pb = ProgramBuilder::new();
    let lay = norm_objective(&mut pb, rot.antennas());
    let two = T::lit(2.0);
    let mut users = Vec::with_capacity(reqs.len());
    for ((h, req), p) in rot.rows().iter().zip(reqs).zip(points) {
        let (a, b) = product_functionals(h);
        let re = Affine::linear(lay.x, &a);
        let im = Affine::linear(lay.x, &b);
        if req.energy == T::zero() {
            let thr = (req.gamma * noise.effective(rho_hi())).sqrt();
            wedge_rows(&mut pb, &re, &im, Affine::constant(thr), cons);
            users.push(UserDc { split: None, g: None });
            continue;
        }
        let split = split_epigraph(&mut pb, noise.nc);
        let g = pb.var();
        pb.soc(vec![
            Affine::var(g),
            Affine::constant(noise.n0.sqrt()),
            Affine::var(split.u),
        ]);
        wedge_rows(&mut pb, &re, &im, Affine::term(g, req.gamma.sqrt()), cons);
        let q = harvest_epigraph(&mut pb, split.rho, req.energy);
        // |v|² ≥ 2pᵀv − |p|² ≥ q
        let lin = re.scaled(two * p[0]) + im.scaled(two * p[1]);
        pb.nonneg(lin - Affine::var(q).plus(p[0] * p[0] + p[1] * p[1]));
        users.push(UserDc {
            split: Some(split),
            g: Some(g),
        });
    }
    (pb, lay, users)
}

/// Successive convexification of the full problem from a feasible `init`.
///
/// Each step linearizes `|h̃_iᵀw|²` at the current iterate and re-optimizes
/// `w` and `ρ` jointly. A step is accepted only if it does not increase the
/// transmit power.
pub fn solve_dc<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    init: &CiSolution<T>,
    opts: &CiOptions<T>,
) -> Result<DcOutcome<T>> {
    check_dims(rot, reqs)?;
    let slop = T::lit(-1e-6);
    if feasibility_gap(init, rot, reqs, noise, cons)? < slop {
        return Err(Error::InvalidArgument("initial point violates the constraints".into()));
    }
    let mut solver = ConeSolver::new(opts.settings.clone());
    let mut cur = init.clone();
    let aux = |sol: &CiSolution<T>| -> (Vec<T>, Vec<T>) {
        sol.rho
            .iter()
            .map(|&r| {
                let u = (noise.nc / r).sqrt();
                (u, (noise.n0 + u * u).sqrt())
            })
            .unzip()
    };
    let (mut u, mut g) = aux(&cur);
    let mut history = vec![cur.power()];
    let mut iterates = vec![cur.clone()];
    let mut converged = false;
    let mut stalled = false;
    for k in 0..opts.max_outer {
        let points: Vec<[T; 2]> = rot.received(&cur.w).iter().map(|v| [v.re, v.im]).collect();
        let (pb, lay, users) = dc_subproblem(rot, reqs, noise, cons, &points);
        let sol = match solve_checked(&mut solver, &pb, "convexified CI problem") {
            Ok(s) => s,
            Err(Error::Infeasible(_)) if k == 0 => {
                return Err(Error::Internal(
                    "first convexified problem infeasible at a feasible start".into(),
                ));
            }
            Err(_) => {
                stalled = true;
                break;
            }
        };
        let rho: Vec<T> = users
            .iter()
            .map(|ud| ud.split.as_ref().map_or(rho_hi(), |s| clamp_rho(sol.x[s.rho.0])))
            .collect();
        let cand = CiSolution { w: lay.w(&sol.x), rho };
        let cand = match polish(cand, rot, reqs, noise, cons, true) {
            Ok(c) => c,
            Err(_) => {
                stalled = true;
                break;
            }
        };
        let (p_old, p_new) = (cur.power(), cand.power());
        if p_new > p_old {
            converged = true;
            break;
        }
        let (cu, cg) = aux(&cand);
        u = users
            .iter()
            .zip(&cu)
            .map(|(ud, &d)| ud.split.as_ref().map_or(d, |s| sol.x[s.u.0]))
            .collect();
        g = users
            .iter()
            .zip(&cg)
            .map(|(ud, &d)| ud.g.map_or(d, |gv| sol.x[gv.0]))
            .collect();
        cur = cand;
        history.push(p_new);
        iterates.push(cur.clone());
        if p_old - p_new <= opts.tol * p_new.max(T::one()) {
            converged = true;
            break;
        }
    }
    let expansion_points = rot.received(&cur.w).iter().map(|v| [v.re, v.im]).collect();
    Ok(DcOutcome {
        state: DcState {
            expansion_points,
            w: cur.w.clone(),
            rho: cur.rho.clone(),
            history,
            u,
            g,
            iterates,
        },
        solution: cur,
        converged,
        stalled,
    })
}

/// [`solve_dc`] from the chosen starting point.
pub fn solve_dc_from<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    init: DcInit,
    opts: &CiOptions<T>,
) -> Result<DcOutcome<T>> {
    let start = match init {
        DcInit::FeasibleStart => {
            let rho: Vec<T> = reqs.iter().map(|r| operating_rho(r, noise)).collect();
            find_feasible_start(rot, reqs, noise, cons, &rho, opts)?
        }
        DcInit::Suboptimal => solve_suboptimal(rot, reqs, noise, cons, opts)?,
    };
    solve_dc(rot, reqs, noise, cons, &start, opts)
}
