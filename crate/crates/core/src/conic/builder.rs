use std::ops::{Add, Mul, Neg, Sub};

use super::{Cone, ConeProgram};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Index of a decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Affine expression `constant + Σ coef·x[var]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub terms: Vec<(usize, T)>,
    pub constant: T,
}

impl<T: Real> Affine<T> {
    pub fn constant(c: T) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Self::term(v, T::one())
    }

    pub fn term(v: Var, coef: T) -> Self {
        Self {
            terms: vec![(v.0, coef)],
            constant: T::zero(),
        }
    }

    /// `Σ coefs[i]·x[first + i]`
    pub fn linear(first: usize, coefs: &[T]) -> Self {
        Self {
            terms: coefs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != T::zero())
                .map(|(i, &c)| (first + i, c))
                .collect(),
            constant: T::zero(),
        }
    }

    pub fn plus(mut self, c: T) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, k: T) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().fold(self.constant, |acc, &(i, c)| acc + c * x[i])
    }

    fn merged(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, T)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != T::zero());
        self.terms = out;
        self
    }
}

impl<T: Real> Add for Affine<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl<T: Real> Sub for Affine<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<T: Real> Neg for Affine<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scaled(-T::one())
    }
}

impl<T: Real> Mul<T> for Affine<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        self.scaled(k)
    }
}

/// Rows encoding `2·x_u·x_v ≥ ‖x_z‖²`, `x_u, x_v ≥ 0` as one second-order cone:
/// `‖(√2·z, u − v)‖ ≤ u + v`.
pub fn embed_rotated_soc<T: Real>(u: Var, v: Var, z: &[Var]) -> Vec<Affine<T>> {
    rotated_rows(
        Affine::var(u),
        Affine::var(v),
        z.iter().map(|&zi| Affine::var(zi)).collect(),
    )
}

fn rotated_rows<T: Real>(u: Affine<T>, v: Affine<T>, z: Vec<Affine<T>>) -> Vec<Affine<T>> {
    let sqrt2 = T::lit(2.0).sqrt();
    let mut rows = Vec::with_capacity(z.len() + 2);
    rows.push(u.clone() + v.clone());
    rows.extend(z.into_iter().map(|zi| zi.scaled(sqrt2)));
    rows.push(u - v);
    rows
}

/// Incrementally assembles a [`ConeProgram`] from affine expressions.
#[derive(Clone, Debug, Default)]
pub struct ProgramBuilder<T> {
    num_vars: usize,
    objective: Vec<(usize, T)>,
    rows: Vec<Affine<T>>,
    cones: Vec<Cone>,
}

impl<T: Real> ProgramBuilder<T> {
    pub fn new() -> Self {
        Self {
            num_vars: 0,
            objective: Vec::new(),
            rows: Vec::new(),
            cones: Vec::new(),
        }
    }

    pub fn var(&mut self) -> Var {
        self.num_vars += 1;
        Var(self.num_vars - 1)
    }

    /// `k` consecutive variables; returns the first index.
    pub fn vars(&mut self, k: usize) -> usize {
        let first = self.num_vars;
        self.num_vars += k;
        first
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds `coef·x[v]` to the objective.
    pub fn minimize_term(&mut self, v: Var, coef: T) {
        self.objective.push((v.0, coef));
    }

    pub fn zero(&mut self, e: Affine<T>) {
        self.push(Cone::Zero(1), vec![e]);
    }

    /// `e ≥ 0`
    pub fn nonneg(&mut self, e: Affine<T>) {
        self.push(Cone::NonNeg(1), vec![e]);
    }

    /// `‖rows[1..]‖ ≤ rows[0]`
    pub fn soc(&mut self, rows: Vec<Affine<T>>) {
        let k = rows.len();
        self.push(Cone::Soc(k), rows);
    }

    /// `2·u·v ≥ ‖z‖²`, `u, v ≥ 0`, for affine `u`, `v`, `z`.
    pub fn rotated_soc(&mut self, u: Affine<T>, v: Affine<T>, z: Vec<Affine<T>>) {
        self.soc(rotated_rows(u, v, z));
    }

    fn push(&mut self, cone: Cone, rows: Vec<Affine<T>>) {
        for r in &rows {
            debug_assert!(r.terms.iter().all(|t| t.0 < self.num_vars), "unknown variable");
        }
        // adjacent scalar blocks of the same kind are merged
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Zero(k)), Cone::Zero(1)) | (Some(Cone::NonNeg(k)), Cone::NonNeg(1)) => *k += 1,
            _ => self.cones.push(cone),
        }
        self.rows.extend(rows.into_iter().map(Affine::merged));
    }

    pub fn build(&self) -> Result<ConeProgram<T>> {
        let n = self.num_vars;
        let mut c = vec![T::zero(); n];
        for &(i, v) in &self.objective {
            if i >= n {
                return Err(Error::InvalidArgument(format!("objective uses unknown variable {i}")));
            }
            c[i] += v;
        }
        let m = self.rows.len();
        let mut a = Mat::zeros(m, n);
        let mut b = vec![T::zero(); m];
        for (r, row) in self.rows.iter().enumerate() {
            b[r] = row.constant;
            for &(j, coef) in &row.terms {
                if j >= n {
                    return Err(Error::InvalidArgument(format!("row {r} uses unknown variable {j}")));
                }
                a[(r, j)] -= coef;
            }
        }
        ConeProgram::new(c, a, b, self.cones.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_rotated(u: f64, v: f64, z: &[f64]) -> bool {
        let rows = embed_rotated_soc::<f64>(Var(0), Var(1), &[Var(2)]);
        let mut x = vec![u, v];
        x.extend_from_slice(z);
        let vals: Vec<f64> = rows.iter().map(|r| r.eval(&x)).collect();
        let tail: f64 = vals[1..].iter().map(|t| t * t).sum::<f64>().sqrt();
        vals[0] >= tail - 1e-12
    }

    #[test]
    fn rotated_embedding_boundary_points() {
        // 2·1·1 = 2 = (√2)²
        let rows = embed_rotated_soc::<f64>(Var(0), Var(1), &[Var(2)]);
        let x = [1.0, 1.0, 2f64.sqrt()];
        let vals: Vec<f64> = rows.iter().map(|r| r.eval(&x)).collect();
        let tail = (vals[1] * vals[1] + vals[2] * vals[2]).sqrt();
        assert!((vals[0] - tail).abs() < 1e-12);
        // 2·2·2.25 = 9 = 3²
        let x = [2.0, 2.25, 3.0];
        let vals: Vec<f64> = rows.iter().map(|r| r.eval(&x)).collect();
        let tail = (vals[1] * vals[1] + vals[2] * vals[2]).sqrt();
        assert!((vals[0] - tail).abs() < 1e-12);
    }

    #[test]
    fn rotated_membership_matches_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let u: f64 = rng.gen_range(-1.0..3.0);
            let v: f64 = rng.gen_range(-1.0..3.0);
            let z: f64 = rng.gen_range(-3.0..3.0);
            let direct = u >= 0.0 && v >= 0.0 && 2.0 * u * v >= z * z;
            let margin = (2.0 * u * v - z * z).abs();
            if margin < 1e-9 || u.abs() < 1e-9 || v.abs() < 1e-9 {
                continue;
            }
            assert_eq!(in_rotated(u, v, &[z]), direct, "u={u} v={v} z={z}");
        }
    }

    #[test]
    fn builder_merges_scalar_blocks() {
        let mut pb = ProgramBuilder::<f64>::new();
        let x = pb.var();
        let y = pb.var();
        pb.nonneg(Affine::var(x));
        pb.nonneg(Affine::var(y).plus(-1.0));
        pb.soc(vec![Affine::var(x), Affine::var(y)]);
        pb.nonneg(Affine::var(x) + Affine::var(x));
        let p = pb.build().unwrap();
        assert_eq!(p.cones, vec![Cone::NonNeg(2), Cone::Soc(2), Cone::NonNeg(1)]);
        assert_eq!(p.a.row(4), &[-2.0, 0.0]);
        assert_eq!(p.b[1], -1.0);
    }
}
