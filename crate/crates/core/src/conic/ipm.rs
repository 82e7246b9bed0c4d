//! Homogeneous self-dual interior-point method.
//!
//! Internally the rows of `b − A x ∈ K` are split into equalities
//! `A_eq x = b_eq` (zero cones) and conic rows `G x + s = h`, `s ∈ K'`.
//! The embedding variables `(x, y, z, s, τ, κ)` satisfy
//!
//! ```text
//! A_eqᵀ y + Gᵀ z + c τ = 0
//! A_eq x − b_eq τ      = 0
//! G x + s − h τ        = 0
//! cᵀx + b_eqᵀy + hᵀz + κ = 0
//! ```
//!
//! and the Newton systems are reduced to `Gᵀ W⁻² G` plus a Schur complement
//! on the equality rows, both factored by Cholesky with static regularization
//! and cleaned up by iterative refinement on the unregularized system.

use super::cones::{self, Block, InvSqPart, Scaling};
use super::{Cone, ConeProgram, ConeSolution, ConeStatus, Settings};
use crate::error::Result;
use crate::linalg::{axpy, cholesky, dot, norm2, Cholesky, Mat};
use crate::scalar::Real;

/// Row-sparse matrix.
#[derive(Clone, Debug)]
struct SpRows<T> {
    rows: Vec<Vec<(usize, T)>>,
    ncols: usize,
}

impl<T: Real> SpRows<T> {
    fn mul(&self, x: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| r.iter().fold(T::zero(), |a, &(j, v)| a + v * x[j]))
            .collect()
    }

    fn tmul_add(&self, y: &[T], out: &mut [T]) {
        for (r, &yi) in self.rows.iter().zip(y) {
            if yi != T::zero() {
                for &(j, v) in r {
                    out[j] += v * yi;
                }
            }
        }
    }

    fn tmul(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        self.tmul_add(y, &mut out);
        out
    }
}

/// Column pattern and Gram matrix `G_bᵀ G_b` of one second-order block.
#[derive(Clone, Debug)]
struct SocPattern<T> {
    cols: Vec<usize>,
    /// dense `cols × cols`
    gram: Vec<T>,
}

struct Problem<'a, T> {
    n: usize,
    c: &'a [T],
    a: SpRows<T>,
    b: Vec<T>,
    g: SpRows<T>,
    h: Vec<T>,
    blocks: Vec<Block>,
    soc_patterns: Vec<Option<SocPattern<T>>>,
    degree: usize,
    eq_rows: Vec<usize>,
    cone_rows: Vec<usize>,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(prog: &'a ConeProgram<T>) -> Self {
        let n = prog.num_vars();
        let (mut a_rows, mut g_rows) = (Vec::new(), Vec::new());
        let (mut b, mut h) = (Vec::new(), Vec::new());
        let (mut eq_rows, mut cone_rows) = (Vec::new(), Vec::new());
        let mut blocks = Vec::new();
        let sparse_row = |i: usize| -> Vec<(usize, T)> {
            prog.a
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != T::zero())
                .map(|(j, &v)| (j, v))
                .collect()
        };
        let mut row = 0;
        for cone in &prog.cones {
            let k = cone.dim();
            match cone {
                Cone::Zero(_) => {
                    for i in row..row + k {
                        a_rows.push(sparse_row(i));
                        b.push(prog.b[i]);
                        eq_rows.push(i);
                    }
                }
                Cone::NonNeg(_) | Cone::Soc(_) => {
                    let start = g_rows.len();
                    blocks.push(match cone {
                        Cone::NonNeg(_) => Block::NonNeg { start, len: k },
                        _ => Block::Soc { start, len: k },
                    });
                    for i in row..row + k {
                        g_rows.push(sparse_row(i));
                        h.push(prog.b[i]);
                        cone_rows.push(i);
                    }
                }
            }
            row += k;
        }
        let g = SpRows { rows: g_rows, ncols: n };
        let soc_patterns = blocks
            .iter()
            .map(|blk| match *blk {
                Block::Soc { start, len } => Some(soc_pattern(&g.rows[start..start + len])),
                Block::NonNeg { .. } => None,
            })
            .collect();
        let degree = blocks.iter().map(Block::degree).sum();
        Self {
            n,
            c: &prog.c,
            a: SpRows { rows: a_rows, ncols: n },
            b,
            g,
            h,
            blocks,
            soc_patterns,
            degree,
            eq_rows,
            cone_rows,
        }
    }

    fn p(&self) -> usize {
        self.b.len()
    }

    fn m(&self) -> usize {
        self.h.len()
    }
}

fn soc_pattern<T: Real>(rows: &[Vec<(usize, T)>]) -> SocPattern<T> {
    let mut cols: Vec<usize> = rows.iter().flat_map(|r| r.iter().map(|t| t.0)).collect();
    cols.sort_unstable();
    cols.dedup();
    let k = cols.len();
    let mut gram = vec![T::zero(); k * k];
    for r in rows {
        let local: Vec<(usize, T)> = r.iter().map(|&(j, v)| (cols.binary_search(&j).unwrap(), v)).collect();
        for &(a, va) in &local {
            for &(bcol, vb) in &local {
                gram[a * k + bcol] += va * vb;
            }
        }
    }
    SocPattern { cols, gram }
}

/// Factored reduced KKT system for one scaling.
struct Kkt<'s, T> {
    scaling: &'s Scaling<T>,
    h_chol: Cholesky<T>,
    s_chol: Option<Cholesky<T>>,
    refine_steps: usize,
}

impl<'s, T: Real> Kkt<'s, T> {
    fn factor(prob: &Problem<'_, T>, scaling: &'s Scaling<T>, reg: T, refine_steps: usize) -> Option<Self> {
        let n = prob.n;
        let mut hm = Mat::zeros(n, n);
        for (part, pattern) in scaling.inv_sq_parts().into_iter().zip(&prob.soc_patterns) {
            match part {
                InvSqPart::Diag { start, weights } => {
                    for (i, &w) in weights.iter().enumerate() {
                        let r = &prob.g.rows[start + i];
                        for &(ja, va) in r {
                            let wa = w * va;
                            for &(jb, vb) in r {
                                if jb > ja {
                                    break;
                                }
                                hm[(ja, jb)] += wa * vb;
                            }
                        }
                    }
                }
                InvSqPart::Soc {
                    start,
                    scale,
                    rank1,
                    u,
                    vt,
                } => {
                    let pat = pattern.as_ref().expect("soc pattern");
                    let k = pat.cols.len();
                    let rows = &prob.g.rows[start..start + u.len()];
                    // a = G_bᵀ u, bb = G_bᵀ ṽ on the block's columns
                    let mut av = vec![T::zero(); k];
                    let mut bv = vec![T::zero(); k];
                    for (r, (&ui, &vi)) in rows.iter().zip(u.iter().zip(&vt)) {
                        for &(j, v) in r {
                            let l = pat.cols.binary_search(&j).unwrap();
                            av[l] += v * ui;
                            bv[l] += v * vi;
                        }
                    }
                    let two = T::lit(2.0);
                    for ia in 0..k {
                        let ca = pat.cols[ia];
                        for ib in 0..k {
                            let cb = pat.cols[ib];
                            if cb > ca {
                                break;
                            }
                            let val = pat.gram[ia * k + ib] + rank1 * av[ia] * av[ib]
                                - two * (av[ia] * bv[ib] + bv[ia] * av[ib]);
                            hm[(ca, cb)] += scale * val;
                        }
                    }
                }
            }
        }
        for i in 0..n {
            hm[(i, i)] += reg;
        }
        let h_chol = cholesky(hm)?;
        let p = prob.p();
        let s_chol = if p > 0 {
            let cols: Vec<Vec<T>> = prob
                .a
                .rows
                .iter()
                .map(|r| {
                    let mut v = vec![T::zero(); n];
                    for &(j, x) in r {
                        v[j] = x;
                    }
                    h_chol.solve(&v)
                })
                .collect();
            let mut sm = Mat::zeros(p, p);
            for k in 0..p {
                for l in 0..=k {
                    let v = prob.a.rows[k]
                        .iter()
                        .fold(T::zero(), |acc, &(j, x)| acc + x * cols[l][j]);
                    sm[(k, l)] = v;
                }
                sm[(k, k)] += reg;
            }
            Some(cholesky(sm)?)
        } else {
            None
        };
        Some(Self {
            scaling,
            h_chol,
            s_chol,
            refine_steps,
        })
    }

    fn w_inv_sq(&self, v: &[T]) -> Vec<T> {
        self.scaling.apply_inv(&self.scaling.apply_inv(v))
    }

    fn w_sq(&self, v: &[T]) -> Vec<T> {
        self.scaling.apply(&self.scaling.apply(v))
    }

    fn base_solve(&self, prob: &Problem<'_, T>, r1: &[T], r2: &[T], r3: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut r1p = r1.to_vec();
        prob.g.tmul_add(&self.w_inv_sq(r3), &mut r1p);
        let (dx, dy) = match &self.s_chol {
            None => (self.h_chol.solve(&r1p), Vec::new()),
            Some(sc) => {
                let t = self.h_chol.solve(&r1p);
                let mut rhs = prob.a.mul(&t);
                for (ri, &r2i) in rhs.iter_mut().zip(r2) {
                    *ri -= r2i;
                }
                let dy = sc.solve(&rhs);
                let mut r = r1p;
                let aty = prob.a.tmul(&dy);
                for (ri, a) in r.iter_mut().zip(&aty) {
                    *ri -= *a;
                }
                (self.h_chol.solve(&r), dy)
            }
        };
        let mut gdx = prob.g.mul(&dx);
        for (gi, &r3i) in gdx.iter_mut().zip(r3) {
            *gi -= r3i;
        }
        let dz = self.w_inv_sq(&gdx);
        (dx, dy, dz)
    }

    /// Solves `[[0, Aᵀ, Gᵀ], [A, 0, 0], [G, 0, −W²]] (dx, dy, dz) = (r1, r2, r3)`.
    fn solve(&self, prob: &Problem<'_, T>, r1: &[T], r2: &[T], r3: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (mut dx, mut dy, mut dz) = self.base_solve(prob, r1, r2, r3);
        for _ in 0..self.refine_steps {
            let mut e1 = r1.to_vec();
            let mut t = prob.a.tmul(&dy);
            prob.g.tmul_add(&dz, &mut t);
            for (e, ti) in e1.iter_mut().zip(&t) {
                *e -= *ti;
            }
            let adx = prob.a.mul(&dx);
            let e2: Vec<T> = r2.iter().zip(&adx).map(|(&r, &v)| r - v).collect();
            let gdx = prob.g.mul(&dx);
            let w2dz = self.w_sq(&dz);
            let e3: Vec<T> = r3
                .iter()
                .zip(gdx.iter().zip(&w2dz))
                .map(|(&r, (&g, &w))| r - g + w)
                .collect();
            let scale = T::one().max(norm2(r1)).max(norm2(r2)).max(norm2(r3));
            let err = norm2(&e1).max(norm2(&e2)).max(norm2(&e3));
            if err <= scale * T::epsilon() * T::lit(10.0) {
                break;
            }
            let (cx, cy, cz) = self.base_solve(prob, &e1, &e2, &e3);
            axpy(T::one(), &cx, &mut dx);
            axpy(T::one(), &cy, &mut dy);
            axpy(T::one(), &cz, &mut dz);
        }
        (dx, dy, dz)
    }
}

struct Direction<T> {
    dx: Vec<T>,
    dy: Vec<T>,
    dz: Vec<T>,
    ds: Vec<T>,
    dtau: T,
    dkappa: T,
}

impl<T: Real> Direction<T> {
    fn is_finite(&self) -> bool {
        self.dtau.is_finite()
            && self.dkappa.is_finite()
            && [&self.dx, &self.dy, &self.dz, &self.ds]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone)]
struct Iterate<T> {
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
    tau: T,
    kappa: T,
}

/// Interior-point solver; owns its settings and scratch state.
#[derive(Clone, Debug)]
pub struct ConeSolver<T> {
    settings: Settings<T>,
}

impl<T: Real> Default for ConeSolver<T> {
    fn default() -> Self {
        Self::new(Settings::default())
    }
}

impl<T: Real> ConeSolver<T> {
    pub fn new(settings: Settings<T>) -> Self {
        Self { settings }
    }

    pub fn settings(&self) -> &Settings<T> {
        &self.settings
    }

    pub fn solve(&mut self, prog: &ConeProgram<T>) -> Result<ConeSolution<T>> {
        prog.validate()?;
        let prob = Problem::new(prog);
        let st = &self.settings;
        let (n, p, m) = (prob.n, prob.p(), prob.m());
        let e = cones::identity::<T>(&prob.blocks, m);

        let bh_norm = T::one().max((dot(&prob.b, &prob.b) + dot(&prob.h, &prob.h)).sqrt());
        let c_norm = T::one().max(norm2(prob.c));

        let mut it = match initial_point(&prob, st) {
            Some(it) => it,
            None => return Ok(breakdown(&prob, prog, None, 0)),
        };

        let mut best: Option<(T, Iterate<T>)> = None;
        let mut reg = st.static_reg;
        for iter in 0..=st.max_iter {
            let Iterate { x, y, z, s, tau, kappa } = &it;
            let (tau, kappa) = (*tau, *kappa);

            // residuals of the embedding
            let mut f1 = prob.a.tmul(y);
            prob.g.tmul_add(z, &mut f1);
            axpy(tau, prob.c, &mut f1);
            let mut f2 = prob.a.mul(x);
            axpy(-tau, &prob.b, &mut f2);
            let mut f3 = prob.g.mul(x);
            axpy(T::one(), s, &mut f3);
            axpy(-tau, &prob.h, &mut f3);
            let ctx = dot(prob.c, x);
            let bty = dot(&prob.b, y) + dot(&prob.h, z);
            let f4 = ctx + bty + kappa;

            let pres = (dot(&f2, &f2) + dot(&f3, &f3)).sqrt() / (tau * bh_norm);
            let dres = norm2(&f1) / (tau * c_norm);
            let pcost = ctx / tau;
            let rel = T::one().max(pcost.abs());
            let gap = (ctx + bty) / tau / rel;
            let compl = dot(s, z) / (tau * tau) / rel;

            if pres <= st.tol_feas && dres <= st.tol_feas && gap.abs() <= st.tol_gap && compl <= st.tol_gap {
                return Ok(finish(&prob, prog, &it, ConeStatus::Optimal, None, iter, false));
            }
            if bty < T::zero() && kappa > tau {
                let mut r = prob.a.tmul(y);
                prob.g.tmul_add(z, &mut r);
                let cert = norm2(&r) / (-bty);
                if cert <= st.tol_infeas {
                    return Ok(finish(
                        &prob,
                        prog,
                        &it,
                        ConeStatus::Infeasible,
                        Some(cert),
                        iter,
                        false,
                    ));
                }
            }
            if ctx < T::zero() && kappa > tau {
                let r2 = prob.a.mul(x);
                let mut r3 = prob.g.mul(x);
                axpy(T::one(), s, &mut r3);
                let cert = (dot(&r2, &r2) + dot(&r3, &r3)).sqrt() / (-ctx);
                if cert <= st.tol_infeas {
                    return Ok(finish(&prob, prog, &it, ConeStatus::Unbounded, Some(cert), iter, false));
                }
            }
            let score = pres.max(dres).max(gap.abs()).max(compl);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, it.clone()));
            }
            if iter == st.max_iter {
                break;
            }

            let Some(scaling) = Scaling::new(&prob.blocks, s, z) else {
                return Ok(breakdown(&prob, prog, best.map(|b| b.1), iter));
            };
            let mu = (dot(s, z) + tau * kappa) / T::from_usize(prob.degree + 1).unwrap();

            let mut kkt = None;
            for _ in 0..4 {
                kkt = Kkt::factor(&prob, &scaling, reg, st.refine_steps);
                if kkt.is_some() {
                    break;
                }
                reg *= T::lit(100.0);
            }
            let Some(kkt) = kkt else {
                return Ok(breakdown(&prob, prog, best.map(|b| b.1), iter));
            };

            let neg_c: Vec<T> = prob.c.iter().map(|&v| -v).collect();
            let (u1x, u1y, u1z) = kkt.solve(&prob, &neg_c, &prob.b, &prob.h);
            let den = dot(prob.c, &u1x) + dot(&prob.b, &u1y) + dot(&prob.h, &u1z) - kappa / tau;
            let lambda = &scaling.lambda;

            let direction = |eta: T, rc: &[T], rk: T| -> Direction<T> {
                let lir = cones::inv_circ(&prob.blocks, lambda, rc);
                let wl = scaling.apply(&lir);
                let r1: Vec<T> = f1.iter().map(|&v| -eta * v).collect();
                let r2: Vec<T> = f2.iter().map(|&v| -eta * v).collect();
                let r3: Vec<T> = f3.iter().zip(&wl).map(|(&v, &w)| -eta * v - w).collect();
                let (u0x, u0y, u0z) = kkt.solve(&prob, &r1, &r2, &r3);
                let num = -eta * f4 - dot(prob.c, &u0x) - dot(&prob.b, &u0y) - dot(&prob.h, &u0z) - rk / tau;
                let dtau = num / den;
                let mut dx = u0x;
                axpy(dtau, &u1x, &mut dx);
                let mut dy = u0y;
                axpy(dtau, &u1y, &mut dy);
                let mut dz = u0z;
                axpy(dtau, &u1z, &mut dz);
                let wdz = scaling.apply(&dz);
                let diff: Vec<T> = lir.iter().zip(&wdz).map(|(&a, &b)| a - b).collect();
                let ds = scaling.apply(&diff);
                let dkappa = (rk - kappa * dtau) / tau;
                Direction {
                    dx,
                    dy,
                    dz,
                    ds,
                    dtau,
                    dkappa,
                }
            };

            let max_step = |d: &Direction<T>| -> T {
                let mut a = cones::max_step(&prob.blocks, s, &d.ds).min(cones::max_step(&prob.blocks, z, &d.dz));
                if d.dtau < T::zero() {
                    a = a.min(-tau / d.dtau);
                }
                if d.dkappa < T::zero() {
                    a = a.min(-kappa / d.dkappa);
                }
                a
            };

            // predictor
            let ll = cones::circ(&prob.blocks, lambda, lambda);
            let rc_aff: Vec<T> = ll.iter().map(|&v| -v).collect();
            let aff = direction(T::one(), &rc_aff, -tau * kappa);
            if !aff.is_finite() {
                return Ok(breakdown(&prob, prog, best.map(|b| b.1), iter));
            }
            let alpha_aff = max_step(&aff).min(T::one());
            let sigma = (T::one() - alpha_aff).powi(3).max(T::zero()).min(T::one());

            // corrector
            let ws = scaling.apply_inv(&aff.ds);
            let wz = scaling.apply(&aff.dz);
            let corr = cones::circ(&prob.blocks, &ws, &wz);
            let rc: Vec<T> = (0..m).map(|i| sigma * mu * e[i] - ll[i] - corr[i]).collect();
            let rk = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
            let dir = direction(T::one() - sigma, &rc, rk);
            if !dir.is_finite() {
                return Ok(breakdown(&prob, prog, best.map(|b| b.1), iter));
            }
            let alpha = (st.step_fraction * max_step(&dir)).min(T::one());

            let mut next = it.clone();
            axpy(alpha, &dir.dx, &mut next.x);
            axpy(alpha, &dir.dy, &mut next.y);
            axpy(alpha, &dir.dz, &mut next.z);
            axpy(alpha, &dir.ds, &mut next.s);
            next.tau = tau + alpha * dir.dtau;
            next.kappa = kappa + alpha * dir.dkappa;
            debug_assert_eq!(next.x.len(), n);
            debug_assert_eq!(next.y.len(), p);
            it = next;
        }
        let best = best.map(|b| b.1).unwrap_or(it);
        Ok(finish(
            &prob,
            prog,
            &best,
            ConeStatus::MaxIter,
            None,
            st.max_iter,
            false,
        ))
    }
}

/// Strictly interior starting point from two least-squares solves.
fn initial_point<T: Real>(prob: &Problem<'_, T>, st: &Settings<T>) -> Option<Iterate<T>> {
    let m = prob.m();
    let e = cones::identity::<T>(&prob.blocks, m);
    let ident = Scaling::new(&prob.blocks, &e, &e)?;
    let kkt = Kkt::factor(prob, &ident, st.static_reg.max(T::epsilon().sqrt()), st.refine_steps)?;

    let zeros_n = vec![T::zero(); prob.n];
    let (x, _, zp) = kkt.solve(prob, &zeros_n, &prob.b, &prob.h);
    let mut s: Vec<T> = zp.iter().map(|&v| -v).collect();
    let neg_c: Vec<T> = prob.c.iter().map(|&v| -v).collect();
    let (_, y, mut z) = kkt.solve(prob, &neg_c, &vec![T::zero(); prob.p()], &vec![T::zero(); m]);

    let shift = |v: &mut Vec<T>| {
        if m == 0 {
            return;
        }
        let alpha = -cones::min_eig(&prob.blocks, v);
        if alpha >= -T::lit(1e-8) {
            axpy(T::one() + alpha, &e, v);
        }
    };
    shift(&mut s);
    shift(&mut z);
    let ok = x.iter().chain(&y).chain(&z).chain(&s).all(|v| v.is_finite());
    ok.then_some(Iterate {
        x,
        y,
        z,
        s,
        tau: T::one(),
        kappa: T::one(),
    })
}

fn breakdown<T: Real>(
    prob: &Problem<'_, T>,
    prog: &ConeProgram<T>,
    best: Option<Iterate<T>>,
    iter: usize,
) -> ConeSolution<T> {
    match best {
        Some(it) => finish(prob, prog, &it, ConeStatus::MaxIter, None, iter, true),
        None => {
            let nan = T::nan();
            ConeSolution {
                status: ConeStatus::MaxIter,
                x: vec![nan; prob.n],
                y: vec![nan; prog.num_rows()],
                s: vec![nan; prog.num_rows()],
                objective: nan,
                primal_residual: nan,
                dual_residual: nan,
                gap: nan,
                certificate_residual: None,
                iterations: iter,
                numerical_issue: true,
            }
        }
    }
}

fn finish<T: Real>(
    prob: &Problem<'_, T>,
    prog: &ConeProgram<T>,
    it: &Iterate<T>,
    status: ConeStatus,
    cert: Option<T>,
    iterations: usize,
    numerical_issue: bool,
) -> ConeSolution<T> {
    let mrows = prog.num_rows();
    // certificates are normalized, solutions are de-homogenized
    let (px, dy) = match status {
        ConeStatus::Infeasible => {
            let k = -(dot(&prob.b, &it.y) + dot(&prob.h, &it.z));
            (T::one() / k, T::one() / k)
        }
        ConeStatus::Unbounded => {
            let k = -dot(prob.c, &it.x);
            (T::one() / k, T::one() / k)
        }
        _ => (T::one() / it.tau, T::one() / it.tau),
    };
    let x: Vec<T> = it.x.iter().map(|&v| v * px).collect();
    let mut y = vec![T::zero(); mrows];
    let mut s = vec![T::zero(); mrows];
    for (k, &r) in prob.eq_rows.iter().enumerate() {
        y[r] = it.y[k] * dy;
    }
    for (k, &r) in prob.cone_rows.iter().enumerate() {
        y[r] = it.z[k] * dy;
        s[r] = it.s[k] * px;
    }
    let objective = dot(&prog.c, &x);
    let mut pr = prog.a.mul_vec(&x);
    for i in 0..mrows {
        pr[i] += s[i] - prog.b[i];
    }
    let mut dr = prog.a.tr_mul_vec(&y);
    for (d, &c) in dr.iter_mut().zip(&prog.c) {
        *d += c;
    }
    let primal_residual = norm2(&pr) / T::one().max(norm2(&prog.b));
    let dual_residual = norm2(&dr) / T::one().max(norm2(&prog.c));
    let gap = (objective + dot(&prog.b, &y)) / T::one().max(objective.abs());
    ConeSolution {
        status,
        x,
        y,
        s,
        objective,
        primal_residual,
        dual_residual,
        gap,
        certificate_residual: cert,
        iterations,
        numerical_issue,
    }
}
