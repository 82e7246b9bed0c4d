//! Cone algebra for the nonnegative orthant and the second-order cone:
//! Jordan products, Nesterov–Todd scalings and maximum step lengths.

use crate::linalg::dot;
use crate::scalar::Real;

/// A contiguous block of inequality rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Block {
    NonNeg { start: usize, len: usize },
    Soc { start: usize, len: usize },
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        match *self {
            Block::NonNeg { start, len } | Block::Soc { start, len } => start..start + len,
        }
    }

    /// Contribution to the barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            Block::NonNeg { len, .. } => len,
            Block::Soc { .. } => 1,
        }
    }
}

/// `e`, the identity of the Jordan algebra of the product cone.
pub(crate) fn identity<T: Real>(blocks: &[Block], m: usize) -> Vec<T> {
    let mut e = vec![T::zero(); m];
    for b in blocks {
        match *b {
            Block::NonNeg { start, len } => e[start..start + len].fill(T::one()),
            Block::Soc { start, .. } => e[start] = T::one(),
        }
    }
    e
}

/// Largest `a` such that `v - a e` stays in the cone (the minimum "eigenvalue").
pub(crate) fn min_eig<T: Real>(blocks: &[Block], v: &[T]) -> T {
    let mut m = T::infinity();
    for b in blocks {
        let r = b.range();
        let x = &v[r];
        let e = match b {
            Block::NonNeg { .. } => x.iter().fold(T::infinity(), |a, &t| a.min(t)),
            Block::Soc { .. } => x[0] - dot(&x[1..], &x[1..]).sqrt(),
        };
        m = m.min(e);
    }
    m
}

/// Jordan product `u ∘ v`.
pub(crate) fn circ<T: Real>(blocks: &[Block], u: &[T], v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); u.len()];
    for b in blocks {
        let r = b.range();
        let (u, v, o) = (&u[r.clone()], &v[r.clone()], &mut out[r]);
        match b {
            Block::NonNeg { .. } => {
                for i in 0..u.len() {
                    o[i] = u[i] * v[i];
                }
            }
            Block::Soc { .. } => {
                o[0] = dot(u, v);
                for i in 1..u.len() {
                    o[i] = u[0] * v[i] + v[0] * u[i];
                }
            }
        }
    }
    out
}

/// Solves `lambda ∘ x = r` for `x`, with `lambda` in the cone interior.
pub(crate) fn inv_circ<T: Real>(blocks: &[Block], lambda: &[T], r: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); r.len()];
    for b in blocks {
        let rg = b.range();
        let (l, r, o) = (&lambda[rg.clone()], &r[rg.clone()], &mut out[rg]);
        match b {
            Block::NonNeg { .. } => {
                for i in 0..l.len() {
                    o[i] = r[i] / l[i];
                }
            }
            Block::Soc { .. } => {
                let det = soc_residual(l);
                let l1r1 = dot(&l[1..], &r[1..]);
                let x0 = (l[0] * r[0] - l1r1) / det;
                o[0] = x0;
                for i in 1..l.len() {
                    o[i] = (r[i] - x0 * l[i]) / l[0];
                }
            }
        }
    }
    out
}

/// `x0² − ‖x1‖²` computed as a product to limit cancellation.
#[inline]
pub(crate) fn soc_residual<T: Real>(x: &[T]) -> T {
    let n1 = dot(&x[1..], &x[1..]).sqrt();
    (x[0] - n1) * (x[0] + n1)
}

/// Largest step `a ∈ (0, ∞]` keeping `v + a d` in the cone. `v` must be interior.
pub(crate) fn max_step<T: Real>(blocks: &[Block], v: &[T], d: &[T]) -> T {
    let mut amax = T::infinity();
    for b in blocks {
        let r = b.range();
        let (v, d) = (&v[r.clone()], &d[r]);
        match b {
            Block::NonNeg { .. } => {
                for i in 0..v.len() {
                    if d[i] < T::zero() {
                        amax = amax.min(-v[i] / d[i]);
                    }
                }
            }
            Block::Soc { .. } => amax = amax.min(soc_step(v, d)),
        }
    }
    amax
}

fn soc_step<T: Real>(v: &[T], d: &[T]) -> T {
    // f(a) = a_q a² + 2 b_q a + c_q is the J-norm of v + a d; find its first positive root.
    let c_q = soc_residual(v);
    if c_q <= T::zero() {
        return T::zero();
    }
    let b_q = v[0] * d[0] - dot(&v[1..], &d[1..]);
    let a_q = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let two = T::lit(2.0);
    let mut best = T::infinity();
    if a_q == T::zero() {
        if b_q < T::zero() {
            best = -c_q / (two * b_q);
        }
    } else {
        let disc = b_q * b_q - a_q * c_q;
        if disc >= T::zero() {
            let sq = disc.sqrt();
            let q = -(b_q + b_q.signum() * sq);
            for root in [q / a_q, c_q / q] {
                if root.is_finite() && root > T::zero() {
                    best = best.min(root);
                }
            }
        }
    }
    // the scalar part must also stay nonnegative
    if d[0] < T::zero() {
        best = best.min(-v[0] / d[0]);
    }
    best
}

/// Per-block Nesterov–Todd scaling `W` with `W z = W⁻¹ s = λ`.
#[derive(Clone, Debug)]
pub(crate) struct Scaling<T> {
    blocks: Vec<BlockScaling<T>>,
    pub lambda: Vec<T>,
}

#[derive(Clone, Debug)]
enum BlockScaling<T> {
    /// `w_i = sqrt(s_i / z_i)`
    NonNeg { start: usize, w: Vec<T> },
    /// `W = eta [[wb0, wb1ᵀ], [wb1, I + wb1 wb1ᵀ / (1 + wb0)]]`
    Soc { start: usize, eta: T, wbar: Vec<T> },
}

impl<T: Real> Scaling<T> {
    /// Computes the scaling at a strictly interior primal-dual pair.
    pub fn new(blocks: &[Block], s: &[T], z: &[T]) -> Option<Self> {
        let half = T::lit(0.5);
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            let r = b.range();
            let (sb, zb) = (&s[r.clone()], &z[r]);
            match *b {
                Block::NonNeg { start, .. } => {
                    let mut w = Vec::with_capacity(sb.len());
                    for (&si, &zi) in sb.iter().zip(zb) {
                        if !(si > T::zero() && zi > T::zero()) {
                            return None;
                        }
                        w.push((si / zi).sqrt());
                    }
                    out.push(BlockScaling::NonNeg { start, w });
                }
                Block::Soc { start, len } => {
                    let sr = soc_residual(sb);
                    let zr = soc_residual(zb);
                    if !(sr > T::zero() && zr > T::zero()) {
                        return None;
                    }
                    let (ss, zs) = (sr.sqrt(), zr.sqrt());
                    let sbar: Vec<T> = sb.iter().map(|&v| v / ss).collect();
                    let zbar: Vec<T> = zb.iter().map(|&v| v / zs).collect();
                    let gamma = ((T::one() + dot(&sbar, &zbar)) * half).sqrt();
                    let two_g = gamma + gamma;
                    let mut wbar = vec![T::zero(); len];
                    wbar[0] = (sbar[0] + zbar[0]) / two_g;
                    for i in 1..len {
                        wbar[i] = (sbar[i] - zbar[i]) / two_g;
                    }
                    let eta = (sr / zr).sqrt().sqrt();
                    out.push(BlockScaling::Soc { start, eta, wbar });
                }
            }
        }
        let mut sc = Self {
            blocks: out,
            lambda: Vec::new(),
        };
        sc.lambda = sc.apply(z);
        Some(sc)
    }

    /// `W v`
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.apply_impl(v, false)
    }

    /// `W⁻¹ v`
    pub fn apply_inv(&self, v: &[T]) -> Vec<T> {
        self.apply_impl(v, true)
    }

    fn apply_impl(&self, v: &[T], inverse: bool) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        for b in &self.blocks {
            match b {
                BlockScaling::NonNeg { start, w } => {
                    for (i, &wi) in w.iter().enumerate() {
                        let k = start + i;
                        out[k] = if inverse { v[k] / wi } else { v[k] * wi };
                    }
                }
                BlockScaling::Soc { start, eta, wbar } => {
                    let len = wbar.len();
                    let vb = &v[*start..start + len];
                    let sign = if inverse { -T::one() } else { T::one() };
                    let w1v1 = dot(&wbar[1..], &vb[1..]);
                    let scale = if inverse { T::one() / *eta } else { *eta };
                    let o = &mut out[*start..start + len];
                    o[0] = scale * (wbar[0] * vb[0] + sign * w1v1);
                    let coef = sign * vb[0] + w1v1 / (T::one() + wbar[0]);
                    for i in 1..len {
                        o[i] = scale * (vb[i] + coef * wbar[i]);
                    }
                }
            }
        }
        out
    }

    /// Visits the blocks of `W⁻²`: nonnegative rows as diagonal weights and
    /// second-order blocks as `c (I + p u uᵀ − 2 u ṽᵀ − 2 ṽ uᵀ)`.
    pub(crate) fn inv_sq_parts(&self) -> Vec<InvSqPart<T>> {
        self.blocks
            .iter()
            .map(|b| match b {
                BlockScaling::NonNeg { start, w } => InvSqPart::Diag {
                    start: *start,
                    weights: w.iter().map(|&wi| T::one() / (wi * wi)).collect(),
                },
                BlockScaling::Soc { start, eta, wbar } => {
                    let len = wbar.len();
                    let one = T::one();
                    let f = ((one + wbar[0]) * T::lit(0.5)).sqrt();
                    let mut vt = vec![T::zero(); len];
                    vt[0] = f;
                    for i in 1..len {
                        vt[i] = f * wbar[i] / (one + wbar[0]);
                    }
                    let mut u = vt.clone();
                    for ui in u.iter_mut().skip(1) {
                        *ui = -*ui;
                    }
                    let uu = dot(&u, &u);
                    InvSqPart::Soc {
                        start: *start,
                        scale: one / (*eta * *eta),
                        rank1: T::lit(4.0) * uu,
                        u,
                        vt,
                    }
                }
            })
            .collect()
    }
}

pub(crate) enum InvSqPart<T> {
    Diag {
        start: usize,
        weights: Vec<T>,
    },
    Soc {
        start: usize,
        scale: T,
        rank1: T,
        u: Vec<T>,
        vt: Vec<T>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks() -> Vec<Block> {
        vec![
            Block::NonNeg { start: 0, len: 2 },
            Block::Soc { start: 2, len: 3 },
            Block::Soc { start: 5, len: 2 },
        ]
    }

    fn dense_w(sc: &Scaling<f64>, m: usize, inverse: bool) -> Vec<Vec<f64>> {
        (0..m)
            .map(|j| {
                let mut e = vec![0.0; m];
                e[j] = 1.0;
                if inverse {
                    sc.apply_inv(&e)
                } else {
                    sc.apply(&e)
                }
            })
            .collect() // columns
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_lambda() {
        let s: Vec<f64> = vec![1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 1.5];
        let z = vec![0.5, 4.0, 2.0, -0.3, 1.2, 1.0, -0.2];
        let sc = Scaling::new(&blocks(), &s, &z).unwrap();
        let lz = sc.apply(&z);
        let ls = sc.apply_inv(&s);
        for (a, b) in lz.iter().zip(&ls) {
            assert!((a - b).abs() < 1e-12, "{lz:?} vs {ls:?}");
        }
        // W W⁻¹ = I
        let v = vec![0.3, -1.0, 2.0, 0.1, 0.7, -0.4, 0.9];
        let back = sc.apply(&sc.apply_inv(&v));
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_square_low_rank_form_matches_dense() {
        let s: Vec<f64> = vec![1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 1.5];
        let z = vec![0.5, 4.0, 2.0, -0.3, 1.2, 1.0, -0.2];
        let bl = blocks();
        let sc = Scaling::new(&bl, &s, &z).unwrap();
        let m = s.len();
        let winv = dense_w(&sc, m, true); // column j = W⁻¹ e_j
                                          // dense W⁻² = W⁻¹ W⁻¹ (W symmetric)
        let mut dense = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                dense[i][j] = (0..m).map(|k| winv[k][i] * winv[j][k]).sum();
            }
        }
        let mut lr = vec![vec![0.0; m]; m];
        for part in sc.inv_sq_parts() {
            match part {
                InvSqPart::Diag { start, weights } => {
                    for (i, w) in weights.iter().enumerate() {
                        lr[start + i][start + i] = *w;
                    }
                }
                InvSqPart::Soc {
                    start,
                    scale,
                    rank1,
                    u,
                    vt,
                } => {
                    for i in 0..u.len() {
                        for j in 0..u.len() {
                            let id = if i == j { 1.0 } else { 0.0 };
                            lr[start + i][start + j] =
                                scale * (id + rank1 * u[i] * u[j] - 2.0 * u[i] * vt[j] - 2.0 * vt[i] * u[j]);
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                assert!(
                    (dense[i][j] - lr[i][j]).abs() < 1e-10,
                    "({i},{j}) {} {}",
                    dense[i][j],
                    lr[i][j]
                );
            }
        }
    }

    #[test]
    fn inverse_jordan_product() {
        let bl = blocks();
        let l: Vec<f64> = vec![1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 1.5];
        let r = vec![0.4, -1.0, 2.0, 0.5, 0.1, -0.3, 0.8];
        let x = inv_circ(&bl, &l, &r);
        let back = circ(&bl, &l, &x);
        for (a, b) in back.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_length_hits_boundary() {
        let bl = vec![Block::Soc { start: 0, len: 3 }];
        let v: Vec<f64> = vec![2.0, 0.0, 0.0];
        let d = vec![-1.0, 1.0, 0.0];
        // (2 - a)² = a²  →  a = 1
        let a = max_step(&bl, &v, &d);
        assert!((a - 1.0).abs() < 1e-14);
        // direction into the cone never leaves it
        assert!(max_step(&bl, &v, &[1.0f64, 0.5, 0.0]).is_infinite());
        let nn = vec![Block::NonNeg { start: 0, len: 2 }];
        assert_eq!(max_step(&nn, &[1.0f64, 2.0], &[-0.5, -4.0]), 0.5);
    }

    #[test]
    fn min_eigenvalue() {
        let bl = blocks();
        let v: Vec<f64> = vec![1.0, 2.0, 3.0, 1.0, -0.5, 2.0, 1.5];
        let e = min_eig(&bl, &v);
        assert!((e - 0.5).abs() < 1e-12);
    }
}
