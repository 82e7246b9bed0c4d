//! Conventional per-user beamforming that treats interference as noise.
//!
//! The sector-free baseline: [`solve_sinr_only`] is the classic SINR-constrained
//! power minimization (exact as a second-order cone program) and
//! [`solve_with_eh_sca`] adds harvesting constraints through successive convex
//! approximation. [`solve_conventional`] runs the latter from several
//! splitting-ratio starts and keeps the best.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ci_precoder::operating_rho;
use crate::conic::{Affine, ConeSolver, ProgramBuilder, Settings, Var};
use crate::error::{Error, Result};
use crate::formulation::{
    amplification, clamp_rho, harvest_epigraph, rho_hi, solve_checked, split_epigraph, SplitVars,
};
use crate::model::{
    bilinear, from_real, product_functionals, ChannelInstance, ConventionalSolution, NoiseModel, UserRequirement,
};
use crate::scalar::{Cx, Real};

#[derive(Clone, Debug)]
pub struct ConvOptions<T> {
    pub settings: Settings<T>,
    pub tol: T,
    pub max_outer: usize,
    /// Number of splitting-ratio starts tried by [`solve_conventional`].
    pub starts: usize,
    pub seed: u64,
}

impl<T: Real> Default for ConvOptions<T> {
    fn default() -> Self {
        Self {
            settings: Settings::default(),
            tol: T::lit(1e-5),
            max_outer: 50,
            starts: 5,
            seed: 0x5eed,
        }
    }
}

fn check_dims<T: Real>(ch: &ChannelInstance<T>, reqs: &[UserRequirement<T>]) -> Result<()> {
    if reqs.len() != ch.users() {
        return Err(Error::Dimension(format!(
            "{} requirements for {} users",
            reqs.len(),
            ch.users()
        )));
    }
    Ok(())
}

struct Layout {
    x: usize,
    n: usize,
    k: usize,
}

impl Layout {
    fn new<T: Real>(pb: &mut ProgramBuilder<T>, n: usize, k: usize) -> Self {
        let t = pb.var();
        let x = pb.vars(2 * n * k);
        pb.minimize_term(t, T::one());
        let mut rows = vec![Affine::var(t)];
        rows.extend((0..2 * n * k).map(|j| Affine::var(Var(x + j))));
        pb.soc(rows);
        Self { x, n, k }
    }

    fn block(&self, k: usize) -> usize {
        self.x + 2 * self.n * k
    }

    /// Real and imaginary parts of `hᵀt_k` as affine expressions.
    fn product<T: Real>(&self, h: &[Cx<T>], k: usize) -> (Affine<T>, Affine<T>) {
        let (a, b) = product_functionals(h);
        (Affine::linear(self.block(k), &a), Affine::linear(self.block(k), &b))
    }

    fn beams<T: Real>(&self, x: &[T]) -> Vec<Vec<Cx<T>>> {
        (0..self.k)
            .map(|k| from_real(&x[self.block(k)..self.block(k) + 2 * self.n]))
            .collect()
    }
}

/// Adds `‖(hᵢᵀt_1, …, hᵢᵀt_K, noise…)‖ ≤ √(1 + 1/Γ)·Re(hᵢᵀtᵢ)` with
/// `Im(hᵢᵀtᵢ) = 0`.
fn sinr_rows<T: Real>(
    pb: &mut ProgramBuilder<T>,
    lay: &Layout,
    h: &[Cx<T>],
    i: usize,
    gamma: T,
    noise: Vec<Affine<T>>,
) {
    let (re_i, im_i) = lay.product(h, i);
    pb.zero(im_i);
    let mut rows = vec![re_i.scaled((T::one() + T::one() / gamma).sqrt())];
    for k in 0..lay.k {
        let (re, im) = lay.product(h, k);
        rows.push(re);
        if k != i {
            rows.push(im);
        }
    }
    rows.extend(noise);
    pb.soc(rows);
}

/// Gains `|hᵢᵀt_k|²` for every user `i` (rows) and beam `k` (columns).
fn gains<T: Real>(ch: &ChannelInstance<T>, t: &[Vec<Cx<T>>]) -> Vec<Vec<T>> {
    ch.rows()
        .iter()
        .map(|h| t.iter().map(|tk| bilinear(h, tk).norm_sqr()).collect())
        .collect()
}

/// Scales every beam by the least common `β ≥ 1` that restores the SINR
/// (and, with `with_eh`, harvesting) constraints at the stored ratios.
fn polish<T: Real>(
    sol: ConventionalSolution<T>,
    ch: &ChannelInstance<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    with_eh: bool,
) -> Result<ConventionalSolution<T>> {
    let g = gains(ch, &sol.t);
    let mut beta2 = T::one();
    for (i, (req, &rho)) in reqs.iter().zip(&sol.rho).enumerate() {
        let total: T = g[i].iter().copied().sum();
        let sig = g[i][i];
        let excess = sig - req.gamma * (total - sig);
        if !(excess > T::zero()) {
            return Err(Error::Internal("interference exceeds the SINR budget".into()));
        }
        beta2 = beta2.max(req.gamma * noise.effective(rho) / excess);
        if with_eh && req.energy > T::zero() {
            beta2 = beta2.max((req.energy / (T::one() - rho) - noise.n0) / total);
        }
    }
    Ok(sol.scaled(amplification(beta2.sqrt())))
}

/// Rotates each beam so that `hᵢᵀtᵢ` is real and nonnegative.
fn align_phases<T: Real>(sol: &mut ConventionalSolution<T>, ch: &ChannelInstance<T>) {
    for (ti, h) in sol.t.iter_mut().zip(ch.rows()) {
        let v = bilinear(h, ti);
        let r = v.norm();
        if r > T::zero() {
            let rot = v.conj() / r;
            for e in ti.iter_mut() {
                *e *= rot;
            }
        }
    }
}

/// Minimum-power beamformers meeting only the SINR targets at fixed ratios.
pub fn solve_sinr_only<T: Real>(
    ch: &ChannelInstance<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    rho: &[T],
    opts: &ConvOptions<T>,
) -> Result<ConventionalSolution<T>> {
    check_dims(ch, reqs)?;
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
    let lay = Layout::new(&mut pb, ch.antennas(), ch.users());
    for (i, (h, (req, &r))) in ch.rows().iter().zip(reqs.iter().zip(rho)).enumerate() {
        let sigma = noise.effective(r).sqrt();
        sinr_rows(&mut pb, &lay, h, i, req.gamma, vec![Affine::constant(sigma)]);
    }
    let sol = solve_checked(
        &mut ConeSolver::new(opts.settings.clone()),
        &pb,
        "conventional SINR problem",
    )?;
    let out = ConventionalSolution {
        t: lay.beams(&sol.x),
        rho: rho.to_vec(),
    };
    polish(out, ch, reqs, noise, false)
}

/// SINR-only solution amplified until every harvesting constraint holds.
pub fn feasible_start<T: Real>(
    ch: &ChannelInstance<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    rho: &[T],
    opts: &ConvOptions<T>,
) -> Result<ConventionalSolution<T>> {
    let sol = solve_sinr_only(ch, reqs, noise, rho, opts)?;
    polish(sol, ch, reqs, noise, true)
}

#[derive(Clone, Debug)]
pub struct ScaOutcome<T> {
    pub solution: ConventionalSolution<T>,
    /// Transmit power of every accepted iterate, starting with the initial point.
    pub history: Vec<T>,
    pub converged: bool,
    pub stalled: bool,
}

impl<T: Real> ScaOutcome<T> {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

fn violation<T: Real>(
    sol: &ConventionalSolution<T>,
    ch: &ChannelInstance<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
) -> Result<T> {
    let ev = crate::model::evaluate_conventional(sol, ch, noise)?;
    Ok(reqs
        .iter()
        .enumerate()
        .map(|(i, r)| (ev.sinr[i] - r.gamma).min(ev.harvested[i] - r.energy))
        .fold(T::infinity(), T::min))
}

/// Successive convex approximation of the joint beamforming and splitting
/// problem from a feasible `init`.
pub fn solve_with_eh_sca<T: Real>(
    ch: &ChannelInstance<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    init: &ConventionalSolution<T>,
    opts: &ConvOptions<T>,
) -> Result<ScaOutcome<T>> {
    check_dims(ch, reqs)?;
    if violation(init, ch, reqs, noise)? < T::lit(-1e-6) {
        return Err(Error::InvalidArgument("initial point violates the constraints".into()));
    }
    let mut solver = ConeSolver::new(opts.settings.clone());
    let mut cur = init.clone();
    align_phases(&mut cur, ch);
    let mut history = vec![cur.power()];
    let mut converged = false;
    let mut stalled = false;
    let two = T::lit(2.0);
    for k in 0..opts.max_outer {
        let mut pb = ProgramBuilder::new();
        let lay = Layout::new(&mut pb, ch.antennas(), ch.users());
        let mut splits: Vec<Option<SplitVars>> = Vec::with_capacity(reqs.len());
        for (i, (h, req)) in ch.rows().iter().zip(reqs).enumerate() {
            if req.energy == T::zero() {
                let sigma = noise.effective(rho_hi()).sqrt();
                sinr_rows(&mut pb, &lay, h, i, req.gamma, vec![Affine::constant(sigma)]);
                splits.push(None);
                continue;
            }
            let split = split_epigraph(&mut pb, noise.nc);
            sinr_rows(
                &mut pb,
                &lay,
                h,
                i,
                req.gamma,
                vec![Affine::constant(noise.n0.sqrt()), Affine::var(split.u)],
            );
            let q = harvest_epigraph(&mut pb, split.rho, req.energy);
            // Σ_k |hᵢᵀt_k|² ≥ Σ_k (2pᵀv − |p|²) and (1 − ρ)(· + N0) ≥ E
            let mut lin = Affine::constant(noise.n0) - Affine::var(q);
            for tk in 0..ch.users() {
                let p = bilinear(h, &cur.t[tk]);
                let (re, im) = lay.product(h, tk);
                lin = lin + re.scaled(two * p.re) + im.scaled(two * p.im);
                lin = lin.plus(-p.norm_sqr());
            }
            pb.nonneg(lin);
            splits.push(Some(split));
        }
        let sol = match solve_checked(&mut solver, &pb, "convexified conventional problem") {
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
        let rho = splits
            .iter()
            .map(|s| s.as_ref().map_or(rho_hi(), |s| clamp_rho(sol.x[s.rho.0])))
            .collect();
        let cand = ConventionalSolution {
            t: lay.beams(&sol.x),
            rho,
        };
        let mut cand = match polish(cand, ch, reqs, noise, true) {
            Ok(c) => c,
            Err(_) => {
                stalled = true;
                break;
            }
        };
        align_phases(&mut cand, ch);
        let (p_old, p_new) = (cur.power(), cand.power());
        if p_new > p_old {
            converged = true;
            break;
        }
        cur = cand;
        history.push(p_new);
        if p_old - p_new <= opts.tol * p_new.max(T::one()) {
            converged = true;
            break;
        }
    }
    Ok(ScaOutcome {
        solution: cur,
        history,
        converged,
        stalled,
    })
}

/// Multi-start [`solve_with_eh_sca`]: the balanced ratios `ρ*` plus
/// `starts − 1` seeded uniform draws in `[0.1, 0.9]`, best result kept.
pub fn solve_conventional<T: Real>(
    ch: &ChannelInstance<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    opts: &ConvOptions<T>,
) -> Result<ScaOutcome<T>> {
    check_dims(ch, reqs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<ScaOutcome<T>> = None;
    let mut first_err = None;
    for s in 0..opts.starts.max(1) {
        let rho: Vec<T> = reqs
            .iter()
            .map(|r| {
                let draw = T::lit(rng.gen_range(0.1..0.9));
                if s == 0 || r.energy == T::zero() {
                    operating_rho(r, noise)
                } else {
                    draw
                }
            })
            .collect();
        let run = feasible_start(ch, reqs, noise, &rho, opts)
            .and_then(|init| solve_with_eh_sca(ch, reqs, noise, &init, opts));
        match run {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.solution.power() < b.solution.power()) {
                    best = Some(out);
                }
            }
            // infeasibility does not depend on the splitting ratios
            Err(e @ Error::Infeasible(_)) => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start ran"))
}
