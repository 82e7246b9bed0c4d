//! Independent checks and reference oracles.
//!
//! The audit recomputes every constraint from raw channel entries with its own
//! arithmetic so that a bug in the solvers' shared helpers cannot hide itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::ci_precoder::rho_star;
use crate::error::{Error, Result};
use crate::formulation::{clamp_rho, rho_hi};
use crate::linalg::solve_complex;
use crate::model::{
    ChannelInstance, CiSolution, Constellation, ConventionalSolution, NoiseModel, RotatedChannels, SymbolFrame,
    UserRequirement,
};
use crate::scalar::{Cx, Real};

/// Slack below which a constraint counts as violated.
pub const AUDIT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum SolutionRef<'a, T> {
    Ci(&'a CiSolution<T>),
    Conventional(&'a ConventionalSolution<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Sinr,
    Harvest,
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Slack {
    pub user: usize,
    pub constraint: ConstraintKind,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub scheme: &'static str,
    pub power: f64,
    pub slacks: Vec<Slack>,
    pub min_slack: f64,
    pub pass: bool,
}

impl AuditReport {
    fn new(scheme: &'static str, power: f64, slacks: Vec<Slack>) -> Self {
        let min_slack = slacks.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min);
        Self {
            scheme,
            power,
            pass: min_slack >= -AUDIT_TOL,
            slacks,
            min_slack,
        }
    }
}

fn split_slack(rho: f64) -> f64 {
    rho.min(1.0 - rho)
}

/// `Σ_n h_n w_n` as `(re, im)` from raw parts.
fn raw_product(h: &[(f64, f64)], w: &[(f64, f64)]) -> (f64, f64) {
    let mut re = 0.0;
    let mut im = 0.0;
    for (&(hr, hi), &(wr, wi)) in h.iter().zip(w) {
        re += hr * wr - hi * wi;
        im += hr * wi + hi * wr;
    }
    (re, im)
}

fn raw<T: Real>(v: &[Cx<T>]) -> Vec<(f64, f64)> {
    v.iter().map(|c| (c.re.to_f64_lossy(), c.im.to_f64_lossy())).collect()
}

/// Recomputes every SINR, harvesting and splitting-ratio slack of `sol`.
///
/// Sector slacks are `(α_r − γ)·tanθ − |α_i|`, conventional SINR slacks are
/// `SINR − Γ`, harvesting slacks are `P − E`.
pub fn check_solution<T: Real>(
    sol: SolutionRef<'_, T>,
    channels: &ChannelInstance<T>,
    frame: &SymbolFrame<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
) -> Result<AuditReport> {
    let k = channels.users();
    let n = channels.antennas();
    if reqs.len() != k || frame.len() != k {
        return Err(Error::Dimension(format!(
            "{k} users, {} requirements, {} symbols",
            reqs.len(),
            frame.len()
        )));
    }
    let n0 = noise.n0.to_f64_lossy();
    let nc = noise.nc.to_f64_lossy();
    let rows: Vec<Vec<(f64, f64)>> = channels.rows().iter().map(|r| raw(r)).collect();
    let mut slacks = Vec::with_capacity(3 * k);
    match sol {
        SolutionRef::Ci(s) => {
            if s.w.len() != n || s.rho.len() != k {
                return Err(Error::Dimension("solution shape differs from channel".into()));
            }
            let w = raw(&s.w);
            let theta = std::f64::consts::PI / cons.order() as f64;
            let phases: Vec<f64> = frame.indices().iter().map(|&m| theta * (1 + 2 * m) as f64).collect();
            let mut power = 0.0;
            for &(a, b) in &w {
                power += a * a + b * b;
            }
            for i in 0..k {
                let rho = s.rho[i].to_f64_lossy();
                let gamma = reqs[i].gamma.to_f64_lossy();
                let energy = reqs[i].energy.to_f64_lossy();
                let (cr, ci) = ((phases[0] - phases[i]).cos(), (phases[0] - phases[i]).sin());
                let rotated: Vec<(f64, f64)> = rows[i]
                    .iter()
                    .map(|&(a, b)| (a * cr - b * ci, a * ci + b * cr))
                    .collect();
                let (ar, ai) = raw_product(&rotated, &w);
                slacks.push(Slack {
                    user: i,
                    constraint: ConstraintKind::Split,
                    slack: split_slack(rho),
                });
                let (sinr, eh) = if rho > 0.0 && rho < 1.0 {
                    let g = (gamma * (n0 + nc / rho)).sqrt();
                    (
                        (ar - g) * theta.tan() - ai.abs(),
                        (1.0 - rho) * (ar * ar + ai * ai) - energy,
                    )
                } else {
                    (f64::NEG_INFINITY, f64::NEG_INFINITY)
                };
                slacks.push(Slack {
                    user: i,
                    constraint: ConstraintKind::Sinr,
                    slack: sinr,
                });
                slacks.push(Slack {
                    user: i,
                    constraint: ConstraintKind::Harvest,
                    slack: eh,
                });
            }
            Ok(AuditReport::new("ci", power, slacks))
        }
        SolutionRef::Conventional(s) => {
            if s.t.len() != k || s.t.iter().any(|t| t.len() != n) || s.rho.len() != k {
                return Err(Error::Dimension("solution shape differs from channel".into()));
            }
            let beams: Vec<Vec<(f64, f64)>> = s.t.iter().map(|t| raw(t)).collect();
            let power: f64 = beams.iter().flatten().map(|&(a, b)| a * a + b * b).sum();
            for i in 0..k {
                let rho = s.rho[i].to_f64_lossy();
                let gamma = reqs[i].gamma.to_f64_lossy();
                let energy = reqs[i].energy.to_f64_lossy();
                let mut signal = 0.0;
                let mut interference = 0.0;
                for (j, t) in beams.iter().enumerate() {
                    let (a, b) = raw_product(&rows[i], t);
                    if j == i {
                        signal = a * a + b * b;
                    } else {
                        interference += a * a + b * b;
                    }
                }
                slacks.push(Slack {
                    user: i,
                    constraint: ConstraintKind::Split,
                    slack: split_slack(rho),
                });
                let (sinr, eh) = if rho > 0.0 && rho < 1.0 {
                    (
                        signal / (interference + n0 + nc / rho) - gamma,
                        (1.0 - rho) * (signal + interference + n0) - energy,
                    )
                } else {
                    (f64::NEG_INFINITY, f64::NEG_INFINITY)
                };
                slacks.push(Slack {
                    user: i,
                    constraint: ConstraintKind::Sinr,
                    slack: sinr,
                });
                slacks.push(Slack {
                    user: i,
                    constraint: ConstraintKind::Harvest,
                    slack: eh,
                });
            }
            Ok(AuditReport::new("conventional", power, slacks))
        }
    }
}

/// Noise powers used by the link simulation; zero is allowed here.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimNoise {
    pub n0: f64,
    pub nc: f64,
}

impl<T: Real> From<&NoiseModel<T>> for SimNoise {
    fn from(n: &NoiseModel<T>) -> Self {
        Self {
            n0: n.n0.to_f64_lossy(),
            nc: n.nc.to_f64_lossy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SerReport {
    pub symbols: u64,
    pub errors: Vec<u64>,
    pub ser: Vec<f64>,
    /// Binomial standard error of each estimate.
    pub std_error: Vec<f64>,
}

impl SerReport {
    fn from_errors(errors: Vec<u64>, symbols: u64) -> Self {
        let ser: Vec<f64> = errors.iter().map(|&e| e as f64 / symbols as f64).collect();
        let std_error = ser.iter().map(|&p| (p * (1.0 - p) / symbols as f64).sqrt()).collect();
        Self {
            symbols,
            errors,
            ser,
            std_error,
        }
    }
}

const CHUNK: u64 = 8192;

fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> (f64, f64) {
    if var == 0.0 {
        return (0.0, 0.0);
    }
    let d = Normal::new(0.0, (var / 2.0).sqrt()).expect("finite variance");
    (d.sample(rng), d.sample(rng))
}

/// Noiseless received values `ρ`-weighted per user, for one transmit vector.
struct Link {
    rho: Vec<f64>,
    /// `hᵢᵀx` for the transmitted vector
    clean: Vec<(f64, f64)>,
    intended: Vec<usize>,
}

fn simulate(link: &Link, noise: SimNoise, cons_order: usize, rng: &mut ChaCha8Rng, errors: &mut [u64]) {
    let theta = std::f64::consts::PI / cons_order as f64;
    for (i, &(yr, yi)) in link.clean.iter().enumerate() {
        let rho = link.rho[i];
        let (nr, ni) = complex_normal(rng, noise.n0);
        let (cr, ci) = complex_normal(rng, noise.nc);
        let s = rho.sqrt();
        let (zr, zi) = (s * (yr + nr) + cr, s * (yi + ni) + ci);
        // nearest phase: sector index of arg(z) relative to the offset
        let mut phase = zi.atan2(zr) - theta;
        phase = phase.rem_euclid(2.0 * std::f64::consts::PI);
        let detected = ((phase / (2.0 * theta)).round() as usize) % cons_order;
        if detected != link.intended[i] {
            errors[i] += 1;
        }
    }
}

fn build_link<T: Real>(
    sol: &CiSolution<T>,
    channels: &ChannelInstance<T>,
    frame: &SymbolFrame<T>,
    cons: &Constellation<T>,
) -> Link {
    // transmitted vector x = w·e^{jφ1}
    let phi1 = cons.phase(frame.indices()[0]).to_f64_lossy();
    let (c1, s1) = (phi1.cos(), phi1.sin());
    let x: Vec<(f64, f64)> = raw(&sol.w)
        .into_iter()
        .map(|(a, b)| (a * c1 - b * s1, a * s1 + b * c1))
        .collect();
    Link {
        rho: sol.rho.iter().map(|r| r.to_f64_lossy()).collect(),
        clean: channels.rows().iter().map(|h| raw_product(&raw(h), &x)).collect(),
        intended: frame.indices().to_vec(),
    }
}

fn run_chunks(
    n_symbols: u64,
    seed: u64,
    users: usize,
    work: impl Fn(usize, &mut ChaCha8Rng, &mut [u64]) + Sync,
) -> Vec<u64> {
    let chunks = n_symbols.div_ceil(CHUNK);
    let partial: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c + 1);
            let mut errs = vec![0u64; users];
            let count = CHUNK.min(n_symbols - c * CHUNK);
            for j in 0..count {
                work((c * CHUNK + j) as usize, &mut rng, &mut errs);
            }
            errs
        })
        .collect();
    partial.into_iter().fold(vec![0; users], |mut acc, e| {
        for (a, b) in acc.iter_mut().zip(e) {
            *a += b;
        }
        acc
    })
}

/// Symbol error rate of a fixed design transmitted repeatedly with fresh noise.
pub fn symbol_mc_ser_fixed<T: Real>(
    sol: &CiSolution<T>,
    channels: &ChannelInstance<T>,
    frame: &SymbolFrame<T>,
    noise: SimNoise,
    cons: &Constellation<T>,
    n_symbols: u64,
    seed: u64,
) -> Result<SerReport> {
    if n_symbols == 0 {
        return Err(Error::InvalidArgument("need at least one symbol".into()));
    }
    if frame.len() != channels.users() || sol.rho.len() != channels.users() || sol.w.len() != channels.antennas() {
        return Err(Error::Dimension("solution, frame and channel disagree".into()));
    }
    let link = build_link(sol, channels, frame, cons);
    let m = cons.order();
    let errors = run_chunks(n_symbols, seed, channels.users(), |_, rng, errs| {
        simulate(&link, noise, m, rng, errs)
    });
    Ok(SerReport::from_errors(errors, n_symbols))
}

/// Symbol error rate with a fresh uniform symbol frame per slot and the
/// precoder re-designed for every frame by `design`.
///
/// Designs depend only on phase differences, so one solve per distinct
/// difference pattern is cached and reused.
pub fn symbol_mc_ser<T, F>(
    design: F,
    channels: &ChannelInstance<T>,
    noise: SimNoise,
    cons: &Constellation<T>,
    n_symbols: u64,
    seed: u64,
) -> Result<SerReport>
where
    T: Real,
    F: Fn(&SymbolFrame<T>) -> Result<CiSolution<T>> + Sync,
{
    if n_symbols == 0 {
        return Err(Error::InvalidArgument("need at least one symbol".into()));
    }
    let k = channels.users();
    let m = cons.order();
    let mut frame_rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Vec<usize>> = (0..n_symbols)
        .map(|_| (0..k).map(|_| frame_rng.gen_range(0..m)).collect())
        .collect();
    let key = |f: &[usize]| -> Vec<usize> { f.iter().map(|&x| (x + m - f[0]) % m).collect() };
    let mut patterns: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for f in &frames {
        let len = patterns.len();
        patterns.entry(key(f)).or_insert(len);
    }
    let ordered: Vec<(Vec<usize>, usize)> = patterns.iter().map(|(p, &i)| (p.clone(), i)).collect();
    let mut designs: Vec<Option<CiSolution<T>>> = vec![None; ordered.len()];
    let solved: Vec<(usize, Result<CiSolution<T>>)> = ordered
        .par_iter()
        .map(|(p, i)| (*i, SymbolFrame::new(cons, p.clone()).and_then(|f| design(&f))))
        .collect();
    for (i, s) in solved {
        designs[i] = Some(s?);
    }
    let links: Vec<Vec<Link>> = (0..m)
        .map(|first| {
            ordered
                .iter()
                .map(|(p, i)| {
                    let f =
                        SymbolFrame::new(cons, p.iter().map(|&d| (d + first) % m).collect()).expect("valid indices");
                    build_link(designs[*i].as_ref().expect("solved"), channels, &f, cons)
                })
                .collect()
        })
        .collect();
    let assign: Vec<(usize, usize)> = frames.iter().map(|f| (f[0], patterns[&key(f)])).collect();
    let errors = run_chunks(n_symbols, seed, k, |idx, rng, errs| {
        let (first, pat) = assign[idx];
        simulate(&links[first][pat], noise, m, rng, errs)
    });
    Ok(SerReport::from_errors(errors, n_symbols))
}

/// Gaussian tail probability `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// QPSK symbol error rate at per-symbol SNR `s`: `2Q(√s) − Q(√s)²`.
pub fn qpsk_ser(snr: f64) -> f64 {
    let q = q_function(snr.sqrt());
    2.0 * q - q * q
}

/// Single-user CI optimum `Γ(N0 + NC/ρ*)/‖h‖²`.
pub fn single_user_ci_power<T: Real>(h: &[Cx<T>], req: &UserRequirement<T>, noise: &NoiseModel<T>) -> T {
    let rho = clamp_rho(rho_star(req, noise).rho_star);
    let h2: T = h.iter().map(|v| v.norm_sqr()).sum();
    (req.gamma * noise.effective(rho)).max(req.energy / (T::one() - rho)) / h2
}

/// Single-user conventional optimum
/// `min_ρ max(Γ(N0 + NC/ρ), E/(1 − ρ) − N0)/‖h‖²`, by golden-section search.
pub fn single_user_conventional_power(h2: f64, gamma: f64, energy: f64, n0: f64, nc: f64) -> f64 {
    let f = |r: f64| (gamma * (n0 + nc / r)).max(energy / (1.0 - r) - n0) / h2;
    if energy == 0.0 {
        return f(rho_hi());
    }
    let (mut a, mut b) = (1e-12, rho_hi::<f64>());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if f(x1) < f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    f(0.5 * (a + b))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub power: f64,
    /// Received phases relative to each user's symbol.
    pub phases: Vec<f64>,
    pub rho: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

/// Phase-indexed magnitude problem for square invertible rotated channels:
/// received values `v = r ∘ e^{jψ}` and `P = vᴴ G v` with `G = H̃⁻ᴴ H̃⁻¹`.
struct PhaseProblem {
    /// `G` as complex entries `(re, im)`
    g: Vec<Vec<(f64, f64)>>,
    gamma: Vec<f64>,
    energy: Vec<f64>,
    n0: f64,
    nc: f64,
    theta: f64,
}

impl PhaseProblem {
    fn new<T: Real>(
        rot: &RotatedChannels<T>,
        reqs: &[UserRequirement<T>],
        noise: &NoiseModel<T>,
        cons: &Constellation<T>,
    ) -> Result<Self> {
        let k = rot.users();
        if rot.antennas() != k {
            return Err(Error::InvalidArgument(format!(
                "phase oracle needs as many antennas as users, got {k} users and {} antennas",
                rot.antennas()
            )));
        }
        if reqs.len() != k {
            return Err(Error::Dimension(format!("{} requirements for {k} users", reqs.len())));
        }
        let h: Vec<Vec<Cx<f64>>> = rot
            .rows()
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| Cx::new(c.re.to_f64_lossy(), c.im.to_f64_lossy()))
                    .collect()
            })
            .collect();
        // columns of H̃⁻¹
        let mut inv_cols = Vec::with_capacity(k);
        for j in 0..k {
            let mut e = vec![Cx::new(0.0, 0.0); k];
            e[j] = Cx::new(1.0, 0.0);
            inv_cols.push(
                solve_complex(&h, &e)
                    .ok_or_else(|| Error::InvalidArgument("singular rotated channel matrix".into()))?,
            );
        }
        let g = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let v: Cx<f64> = inv_cols[i].iter().zip(&inv_cols[j]).map(|(a, b)| a.conj() * b).sum();
                        (v.re, v.im)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            g,
            gamma: reqs.iter().map(|r| r.gamma.to_f64_lossy()).collect(),
            energy: reqs.iter().map(|r| r.energy.to_f64_lossy()).collect(),
            n0: noise.n0.to_f64_lossy(),
            nc: noise.nc.to_f64_lossy(),
            theta: cons.half_angle().to_f64_lossy(),
        })
    }

    fn k(&self) -> usize {
        self.gamma.len()
    }

    /// Least magnitude at phase `psi` and the ratio achieving it.
    fn floor(&self, i: usize, psi: f64) -> (f64, f64) {
        let a = self.theta.sin() / (self.theta - psi.abs()).sin();
        let (g, e) = (self.gamma[i], self.energy[i]);
        if e == 0.0 {
            let rho = rho_hi::<f64>();
            return (a * (g * (self.n0 + self.nc / rho)).sqrt(), rho);
        }
        // the sector scales the decoding threshold by a², so the balance point
        // is ρ* for the target a²Γ
        let req = UserRequirement::new(a * a * g, e).expect("valid");
        let noise = NoiseModel::new(self.n0, self.nc).expect("valid");
        let rho = clamp_rho(rho_star(&req, &noise).rho_star);
        let r = (a * a * g * (self.n0 + self.nc / rho))
            .sqrt()
            .max((e / (1.0 - rho)).sqrt());
        (r, rho)
    }

    /// `min rᵀQr` over `r ≥ lo` by enumerating active sets.
    fn magnitudes(&self, psi: &[f64], lo: &[f64]) -> (f64, Vec<f64>) {
        let k = self.k();
        let q: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let (gr, gi) = self.g[i][j];
                        let d = psi[j] - psi[i];
                        gr * d.cos() - gi * d.sin()
                    })
                    .collect()
            })
            .collect();
        let value = |r: &[f64]| -> f64 { (0..k).map(|i| (0..k).map(|j| r[i] * q[i][j] * r[j]).sum::<f64>()).sum() };
        let mut best = (value(lo), lo.to_vec());
        for mask in 1u32..(1 << k) {
            let free: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
            let m = free.len();
            // Q_FF r_F = −Q_FA lo_A
            let mut a = vec![vec![0.0; m + 1]; m];
            for (p, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[p][s] = q[i][j];
                }
                a[p][m] = -(0..k)
                    .filter(|j| mask >> j & 1 == 0)
                    .map(|j| q[i][j] * lo[j])
                    .sum::<f64>();
            }
            let Some(sol) = solve_real(a) else { continue };
            let mut r = lo.to_vec();
            let mut ok = true;
            for (p, &i) in free.iter().enumerate() {
                if sol[p] < lo[i] {
                    ok = false;
                    break;
                }
                r[i] = sol[p];
            }
            if ok {
                let v = value(&r);
                if v < best.0 {
                    best = (v, r);
                }
            }
        }
        best
    }

    fn evaluate(&self, psi: &[f64]) -> OracleResult {
        let (lo, rho): (Vec<f64>, Vec<f64>) = psi.iter().enumerate().map(|(i, &p)| self.floor(i, p)).unzip();
        let (power, magnitudes) = self.magnitudes(psi, &lo);
        OracleResult {
            power,
            phases: psi.to_vec(),
            rho,
            magnitudes,
        }
    }

    fn grid(&self, density: usize) -> Vec<f64> {
        let d = density as f64;
        (1..density).map(|k| self.theta * (2.0 * k as f64 / d - 1.0)).collect()
    }
}

/// Gaussian elimination on an augmented `m × (m+1)` system.
fn solve_real(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - s) / a[r][r];
    }
    Some(x)
}

fn odometer(grid: &[f64], k: usize, mut f: impl FnMut(&[f64])) {
    let mut idx = vec![0usize; k];
    let mut psi = vec![grid[0]; k];
    loop {
        f(&psi);
        let mut pos = 0;
        loop {
            if pos == k {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                psi[pos] = grid[idx[pos]];
                break;
            }
            idx[pos] = 0;
            psi[pos] = grid[0];
            pos += 1;
        }
    }
}

/// Global reference for square channels: grids each user's received phase
/// over `density − 1` interior points of its sector and, per grid point,
/// solves the splitting ratios exactly and the magnitudes as a bound-constrained
/// QP. Grids for `d` and `2d` are nested, so doubling never raises the result.
pub fn oracle_phase_grid<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    density: usize,
) -> Result<OracleResult> {
    if density < 2 {
        return Err(Error::InvalidArgument("grid density must be at least 2".into()));
    }
    let prob = PhaseProblem::new(rot, reqs, noise, cons)?;
    let grid = prob.grid(density);
    let mut best: Option<OracleResult> = None;
    odometer(&grid, prob.k(), |psi| {
        let r = prob.evaluate(psi);
        if best.as_ref().is_none_or(|b| r.power < b.power) {
            best = Some(r);
        }
    });
    Ok(best.expect("grid is nonempty"))
}

/// [`oracle_phase_grid`] followed by cyclic golden-section refinement of each
/// phase within one grid cell of the best point.
pub fn oracle_phase_refined<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    density: usize,
) -> Result<OracleResult> {
    let coarse = oracle_phase_grid(rot, reqs, noise, cons, density)?;
    let prob = PhaseProblem::new(rot, reqs, noise, cons)?;
    let step = 2.0 * prob.theta / density as f64;
    let edge = prob.theta * (1.0 - 1e-9);
    let mut best = coarse;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..30 {
        let before = best.power;
        for i in 0..prob.k() {
            let mut psi = best.phases.clone();
            let centre = psi[i];
            let (mut a, mut b) = ((centre - step).max(-edge), (centre + step).min(edge));
            let mut at = |x: f64| {
                psi[i] = x;
                prob.evaluate(&psi)
            };
            for _ in 0..60 {
                let x1 = b - phi * (b - a);
                let x2 = a + phi * (b - a);
                if at(x1).power < at(x2).power {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let cand = at(0.5 * (a + b));
            if cand.power < best.power {
                best = cand;
            }
        }
        if before - best.power <= 1e-13 * before {
            break;
        }
    }
    Ok(best)
}

/// Certified bracket on the global optimum from [`oracle_lower_bound`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleBound {
    /// No feasible design has lower power.
    pub lower: f64,
    /// Best feasible point visited.
    pub best: OracleResult,
    pub boxes: usize,
    /// Whether the gap closed to the requested tolerance within the box budget.
    pub converged: bool,
}

/// Per-user search cell: received phase in `[psi.0, psi.1]` and splitting
/// ratio in `[rho.0, rho.1]`.
#[derive(Clone, Debug)]
struct Cell {
    psi: Vec<(f64, f64)>,
    rho: Vec<(f64, f64)>,
    bound: f64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    // reversed so that `BinaryHeap` pops the smallest bound
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.bound.total_cmp(&self.bound)
    }
}

impl PhaseProblem {
    /// Convex relaxation of the design problem restricted to `cell`, solved
    /// exactly. Over the cell the decoding wedge is widest at the largest ratio,
    /// the harvesting radius is smallest at the smallest ratio, and the part of
    /// the disc exterior inside the phase sector is relaxed to the half-plane
    /// beyond its chord. Every constraint is then linear in `v = (Re, Im)`.
    ///
    /// Returns the bound and the phases of its minimizer.
    fn relaxation(&self, cell: &Cell) -> (f64, Vec<f64>) {
        let k = self.k();
        let (st, ct) = (self.theta.sin(), self.theta.cos());
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(5 * k);
        let row = |i: usize, a_re: f64, a_im: f64| {
            let mut r = vec![0.0; 2 * k];
            r[i] = a_re;
            r[k + i] = a_im;
            r
        };
        for i in 0..k {
            let thr = (self.gamma[i] * (self.n0 + self.nc / cell.rho[i].1)).sqrt();
            rows.push((row(i, st, -ct), thr * st));
            rows.push((row(i, st, ct), thr * st));
            if self.energy[i] > 0.0 {
                let (l, u) = cell.psi[i];
                rows.push((row(i, -l.sin(), l.cos()), 0.0));
                rows.push((row(i, u.sin(), -u.cos()), 0.0));
                let (m, d) = (0.5 * (l + u), 0.5 * (u - l));
                let radius = (self.energy[i] / (1.0 - cell.rho[i].0)).sqrt();
                rows.push((row(i, m.cos(), m.sin()), radius * d.cos()));
            }
        }
        // real form of vᴴGv
        let n = 2 * k;
        let mut q = vec![vec![0.0; n]; n];
        for i in 0..k {
            for j in 0..k {
                let (gr, gi) = self.g[i][j];
                q[i][j] = gr;
                q[k + i][k + j] = gr;
                q[i][k + j] = -gi;
                q[k + i][j] = gi;
            }
        }
        let value = |x: &[f64]| -> f64 { (0..n).map(|a| (0..n).map(|b| x[a] * q[a][b] * x[b]).sum::<f64>()).sum() };
        let scale = rows.iter().map(|r| r.1.abs()).fold(1.0, f64::max);
        let feasible = |x: &[f64]| {
            rows.iter()
                .all(|(a, b)| a.iter().zip(x).map(|(p, v)| p * v).sum::<f64>() >= b - 1e-12 * scale)
        };
        // Each feasible stationary point of an equality-restricted problem is a
        // feasible point, so the minimum over them is the exact optimum.
        let mut best = (f64::INFINITY, vec![0.0; k]);
        let m = rows.len();
        let mut active: Vec<usize> = Vec::new();
        subsets(m, n, &mut active, &mut |act| {
            let s = n + act.len();
            let mut a = vec![vec![0.0; s + 1]; s];
            for r in 0..n {
                for c in 0..n {
                    a[r][c] = 2.0 * q[r][c];
                }
            }
            for (p, &ri) in act.iter().enumerate() {
                for c in 0..n {
                    a[n + p][c] = rows[ri].0[c];
                    a[c][n + p] = -rows[ri].0[c];
                }
                a[n + p][s] = rows[ri].1;
            }
            if let Some(sol) = solve_real(a) {
                let x = &sol[..n];
                if x.iter().all(|v| v.is_finite()) && feasible(x) {
                    let v = value(x);
                    if v < best.0 {
                        best = (v, (0..k).map(|i| x[k + i].atan2(x[i])).collect());
                    }
                }
            }
        });
        best
    }

    fn user_floor_ratio(&self, i: usize) -> (f64, f64) {
        if self.energy[i] == 0.0 {
            (rho_hi(), rho_hi())
        } else {
            (crate::formulation::rho_lo(), rho_hi())
        }
    }
}

/// Calls `f` on every subset of `0..m` with at most `cap` elements.
fn subsets(m: usize, cap: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    f(cur);
    if cur.len() == cap {
        return;
    }
    let start = cur.last().map_or(0, |&l| l + 1);
    for i in start..m {
        cur.push(i);
        subsets(m, cap, cur, f);
        cur.pop();
    }
}

/// Branch-and-bound bracket on the global optimum for square invertible
/// channels. Cells over received phases and splitting ratios are bounded by
/// an exact convex relaxation and split along their relatively widest side;
/// cell centres supply feasible points. Stops when the relative gap reaches
/// `rel_gap` or after `max_cells` cells, in which case the reported lower
/// bound is still valid. The relaxation enumerates active sets, so the cost
/// grows combinatorially with the number of users.
pub fn oracle_lower_bound<T: Real>(
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
    rel_gap: f64,
    max_cells: usize,
) -> Result<OracleBound> {
    if !(rel_gap > 0.0) {
        return Err(Error::InvalidArgument("relative gap must be positive".into()));
    }
    let prob = PhaseProblem::new(rot, reqs, noise, cons)?;
    let k = prob.k();
    let edge = prob.theta;
    let mut root = Cell {
        psi: vec![(-edge, edge); k],
        rho: (0..k).map(|i| prob.user_floor_ratio(i)).collect(),
        bound: 0.0,
    };
    let inside = |psi: &[f64]| -> Vec<f64> { psi.iter().map(|p| p.clamp(-edge, edge) * (1.0 - 1e-12)).collect() };
    let (bound, at) = prob.relaxation(&root);
    root.bound = bound;
    if !bound.is_finite() {
        return Err(Error::Infeasible(
            "relaxation of the design problem is infeasible".into(),
        ));
    }
    let centre = |c: &Cell| -> Vec<f64> { c.psi.iter().map(|&(l, u)| 0.5 * (l + u)).collect() };
    let mut best = prob.evaluate(&centre(&root));
    let cand = prob.evaluate(&inside(&at));
    if cand.power < best.power {
        best = cand;
    }
    let mut heap = std::collections::BinaryHeap::new();
    heap.push(root);
    let mut cells = 1;
    let cutoff = |upper: f64| upper * (1.0 - rel_gap);
    while let Some(cell) = heap.pop() {
        if cell.bound >= cutoff(best.power) {
            heap.clear();
            break;
        }
        if cells >= max_cells {
            heap.push(cell);
            break;
        }
        // widest side relative to its initial extent; only harvesting users branch
        let mut pick = None;
        let mut widest = 0.0;
        for i in (0..k).filter(|&i| prob.energy[i] > 0.0) {
            let (l, u) = cell.psi[i];
            let wp = (u - l) / (2.0 * edge);
            if wp > widest {
                widest = wp;
                pick = Some((i, false));
            }
            let (a, b) = cell.rho[i];
            let wr = (b - a) / (rho_hi::<f64>() - crate::formulation::rho_lo::<f64>());
            if wr > widest {
                widest = wr;
                pick = Some((i, true));
            }
        }
        let Some((i, on_rho)) = pick else {
            // nothing to branch on: the relaxation is exact
            return Ok(OracleBound {
                lower: cell.bound,
                best,
                boxes: cells,
                converged: true,
            });
        };
        for half in 0..2 {
            let mut child = cell.clone();
            let side = if on_rho { &mut child.rho[i] } else { &mut child.psi[i] };
            let mid = 0.5 * (side.0 + side.1);
            if half == 0 {
                side.1 = mid;
            } else {
                side.0 = mid;
            }
            let (bound, at) = prob.relaxation(&child);
            child.bound = bound.max(cell.bound);
            cells += 1;
            for psi in [centre(&child), inside(&at)] {
                let cand = prob.evaluate(&psi);
                if cand.power < best.power {
                    best = cand;
                }
            }
            if child.bound < cutoff(best.power) {
                heap.push(child);
            }
        }
    }
    let open = heap.peek().map_or(f64::INFINITY, |c| c.bound);
    let lower = open.min(cutoff(best.power));
    Ok(OracleBound {
        lower,
        converged: open >= cutoff(best.power),
        best,
        boxes: cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci_precoder::{solve_dc_from, solve_suboptimal, CiOptions, DcInit};
    use crate::conventional::{solve_conventional, ConvOptions};
    use crate::model::{db_to_linear, rotate_channels};

    fn c(re: f64, im: f64) -> Cx<f64> {
        Cx::new(re, im)
    }

    fn unit_noise() -> NoiseModel<f64> {
        NoiseModel::new(1.0, 1.0).unwrap()
    }

    fn random_channel(k: usize, n: usize, seed: u64) -> ChannelInstance<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ChannelInstance::new(
            (0..k)
                .map(|_| {
                    (0..n)
                        .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn audit_passes_solver_output_and_fails_when_shrunk() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        let ch = random_channel(3, 3, 4);
        let frame = SymbolFrame::new(&q, vec![0, 3, 1]).unwrap();
        let rot = rotate_channels(&ch, &frame).unwrap();
        let req = UserRequirement::uniform(3, 10.0, 2.0).unwrap();
        let dc = solve_dc_from(&rot, &req, &noise, &q, DcInit::FeasibleStart, &CiOptions::default()).unwrap();
        let rep = check_solution(SolutionRef::Ci(&dc.solution), &ch, &frame, &req, &noise, &q).unwrap();
        assert!(rep.pass, "{rep:?}");
        let half = dc.solution.scaled(0.5);
        let rep = check_solution(SolutionRef::Ci(&half), &ch, &frame, &req, &noise, &q).unwrap();
        assert!(!rep.pass);
        assert!(rep
            .slacks
            .iter()
            .any(|s| s.constraint == ConstraintKind::Sinr && s.slack < 0.0));

        let conv = solve_conventional(&ch, &req, &noise, &ConvOptions::default()).unwrap();
        let rep = check_solution(SolutionRef::Conventional(&conv.solution), &ch, &frame, &req, &noise, &q).unwrap();
        assert!(rep.pass, "{rep:?}");
        let shrunk = conv.solution.scaled(0.5);
        assert!(
            !check_solution(SolutionRef::Conventional(&shrunk), &ch, &frame, &req, &noise, &q)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn audit_of_closed_form_point_is_tight() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        let ch = ChannelInstance::new(vec![vec![c(1.0, 0.0)]]).unwrap();
        let frame = SymbolFrame::constant(&q, 1);
        let req = [UserRequirement::new(10.0, 15.0).unwrap()];
        let sol = CiSolution {
            w: vec![c(30f64.sqrt(), 0.0)],
            rho: vec![0.5],
        };
        let rep = check_solution(SolutionRef::Ci(&sol), &ch, &frame, &req, &noise, &q).unwrap();
        for s in rep.slacks.iter().filter(|s| s.constraint != ConstraintKind::Split) {
            assert!(s.slack.abs() <= 1e-9, "{s:?}");
        }
        assert!(rep.pass);
        let bad = CiSolution {
            w: sol.w.clone(),
            rho: vec![1.0],
        };
        assert!(
            !check_solution(SolutionRef::Ci(&bad), &ch, &frame, &req, &noise, &q)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn noiseless_feasible_design_never_errs() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        let ch = random_channel(3, 3, 12);
        let req = UserRequirement::uniform(3, 10.0, 1.0).unwrap();
        let opts = CiOptions::default();
        let design = |f: &SymbolFrame<f64>| {
            let rot = rotate_channels(&ch, f)?;
            solve_suboptimal(&rot, &req, &noise, &q, &opts)
        };
        let rep = symbol_mc_ser(design, &ch, SimNoise { n0: 0.0, nc: 0.0 }, &q, 5000, 1).unwrap();
        assert_eq!(rep.errors, vec![0, 0, 0]);
    }

    #[test]
    fn overwhelming_noise_approaches_uniform_guessing() {
        let q = Constellation::qpsk();
        let ch = ChannelInstance::new(vec![vec![c(1.0, 0.0)]]).unwrap();
        let frame = SymbolFrame::constant(&q, 1);
        let sol = CiSolution {
            w: vec![c(1.0, 0.0)],
            rho: vec![0.5],
        };
        let rep = symbol_mc_ser_fixed(&sol, &ch, &frame, SimNoise { n0: 1e12, nc: 1e12 }, &q, 100_000, 3).unwrap();
        assert!((rep.ser[0] - 0.75).abs() < 5.0 * rep.std_error[0].max(1e-3));
    }

    #[test]
    fn ser_is_reproducible() {
        let q = Constellation::qpsk();
        let ch = ChannelInstance::new(vec![vec![c(0.5, 0.5)]]).unwrap();
        let frame = SymbolFrame::constant(&q, 1);
        let sol = CiSolution {
            w: vec![c(2.0, 0.0)],
            rho: vec![0.5],
        };
        let a = symbol_mc_ser_fixed(&sol, &ch, &frame, SimNoise { n0: 1.0, nc: 1.0 }, &q, 20_000, 9).unwrap();
        let b = symbol_mc_ser_fixed(&sol, &ch, &frame, SimNoise { n0: 1.0, nc: 1.0 }, &q, 20_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn q_function_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(1.0) - 0.158_655_253_931_457).abs() < 1e-12);
        assert!((qpsk_ser(0.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_user_oracles() {
        let noise = unit_noise();
        let req = UserRequirement::new(10.0, 15.0).unwrap();
        assert!((single_user_ci_power(&[c(1.0, 0.0)], &req, &noise) - 30.0).abs() < 1e-12);
        assert!((single_user_ci_power(&[c(1.0, 0.0), c(0.0, 1.0)], &req, &noise) - 15.0).abs() < 1e-12);
        let p = single_user_conventional_power(2.0, 10.0, 0.5, 1.0, 1.0);
        let brute = (1..1_000_000)
            .map(|i| i as f64 * 1e-6)
            .map(|r| (10.0 * (1.0 + 1.0 / r)).max(0.5 / (1.0 - r) - 1.0) / 2.0)
            .fold(f64::INFINITY, f64::min);
        assert!(p <= brute + 1e-9 && p >= brute - 1e-4, "{p} vs {brute}");
        let p = single_user_conventional_power(1.0, 10.0, 0.0, 1.0, 1.0);
        assert!((p - 10.0 * (1.0 + 1.0 / rho_hi::<f64>())).abs() < 1e-12);
    }

    #[test]
    fn phase_grid_single_user_reproduces_closed_form() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        let rot = RotatedChannels::from_rows(vec![vec![c(1.0, 0.0)]]).unwrap();
        let req = [UserRequirement::new(10.0, 15.0).unwrap()];
        // the even density puts a grid point on the axis
        let r = oracle_phase_grid(&rot, &req, &noise, &q, 64).unwrap();
        assert!((r.power - 30.0).abs() < 1e-9, "{}", r.power);
    }

    #[test]
    fn phase_grid_refinement_is_monotone() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        let ch = random_channel(2, 2, 33);
        let frame = SymbolFrame::new(&q, vec![0, 1]).unwrap();
        let rot = rotate_channels(&ch, &frame).unwrap();
        let req = UserRequirement::uniform(2, db_to_linear(15.0), db_to_linear(5.0)).unwrap();
        let mut last = f64::INFINITY;
        for d in [4, 8, 16, 32, 64] {
            let r = oracle_phase_grid(&rot, &req, &noise, &q, d).unwrap();
            assert!(r.power <= last + 1e-12);
            last = r.power;
        }
        let refined = oracle_phase_refined(&rot, &req, &noise, &q, 64).unwrap();
        assert!(refined.power <= last);
        let singular =
            RotatedChannels::from_rows(vec![vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(2.0, 0.0), c(4.0, 0.0)]]).unwrap();
        assert!(oracle_phase_grid(&singular, &req, &noise, &q, 8).is_err());
    }

    #[test]
    fn lower_bound_brackets_known_optima() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        let h = vec![c(1.0, 0.0)];
        let rot = RotatedChannels::from_rows(vec![h.clone()]).unwrap();
        let req = UserRequirement::new(10.0, 15.0).unwrap();
        let exact = single_user_ci_power(&h, &req, &noise);
        let b = oracle_lower_bound(&rot, &[req], &noise, &q, 1e-7, 10_000).unwrap();
        assert!(b.converged);
        assert!(b.lower <= exact * (1.0 + 1e-12) && exact <= b.best.power * (1.0 + 1e-12));
        assert!(
            (b.best.power - exact).abs() <= 1e-6 * exact,
            "{} vs {exact}",
            b.best.power
        );

        // no harvesting: the relaxation is the problem itself
        let ch = random_channel(2, 2, 8);
        let frame = SymbolFrame::new(&q, vec![0, 2]).unwrap();
        let rot = rotate_channels(&ch, &frame).unwrap();
        let req = UserRequirement::uniform(2, 10.0, 0.0).unwrap();
        let sinr =
            crate::ci_precoder::solve_sinr_only(&rot, &req, &noise, &q, &[rho_hi(); 2], &CiOptions::default()).unwrap();
        let b = oracle_lower_bound(&rot, &req, &noise, &q, 1e-7, 10).unwrap();
        assert!((b.lower - sinr.power()).abs() <= 1e-6 * sinr.power());
    }

    #[test]
    fn lower_bound_sits_below_every_feasible_design() {
        let noise = unit_noise();
        let q = Constellation::qpsk();
        for seed in 0..4 {
            let ch = random_channel(2, 2, 40 + seed);
            let frame = SymbolFrame::new(&q, vec![0, seed as usize % 4]).unwrap();
            let rot = rotate_channels(&ch, &frame).unwrap();
            let req = UserRequirement::uniform(2, db_to_linear(15.0), db_to_linear(8.0)).unwrap();
            let dc = solve_dc_from(&rot, &req, &noise, &q, DcInit::FeasibleStart, &CiOptions::default()).unwrap();
            let grid = oracle_phase_grid(&rot, &req, &noise, &q, 32).unwrap();
            let b = oracle_lower_bound(&rot, &req, &noise, &q, 1e-4, 50_000).unwrap();
            assert!(b.converged, "seed {seed}: {} cells", b.boxes);
            assert!(b.lower <= dc.solution.power() && b.lower <= grid.power);
            assert!(b.best.power <= grid.power + 1e-9);
            assert!(b.lower >= b.best.power * (1.0 - 1e-4) * (1.0 - 1e-12));
        }
    }
}
