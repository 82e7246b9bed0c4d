//! Domain types for the multi-user MISO downlink with power-splitting
//! receivers, the data-rotation algebra, and exact constraint evaluators.
//!
//! Complex vectors enter the real-valued solvers through one fixed embedding:
//! a length-`N` complex vector `w` maps to `[Re w; Im w]` (length `2N`), and
//! the real and imaginary parts of `hᵀw` (no conjugation) are the linear
//! functionals returned by [`product_functionals`].

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

pub fn db_to_linear<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

pub fn linear_to_db<T: Real>(x: T) -> T {
    T::lit(10.0) * x.log10()
}

/// `Σ_n h_n w_n`
#[inline]
pub fn bilinear<T: Real>(h: &[Cx<T>], w: &[Cx<T>]) -> Cx<T> {
    h.iter()
        .zip(w)
        .fold(Cx::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b)
}

pub fn norm_sqr<T: Real>(w: &[Cx<T>]) -> T {
    w.iter().map(|v| v.norm_sqr()).sum()
}

/// `[Re w; Im w]`
pub fn to_real<T: Real>(w: &[Cx<T>]) -> Vec<T> {
    w.iter().map(|v| v.re).chain(w.iter().map(|v| v.im)).collect()
}

/// Inverse of [`to_real`].
pub fn from_real<T: Real>(x: &[T]) -> Vec<Cx<T>> {
    let n = x.len() / 2;
    (0..n).map(|i| Cx::new(x[i], x[n + i])).collect()
}

/// Coefficients `(a, b)` over `[Re w; Im w]` with `Re(hᵀw) = aᵀx`, `Im(hᵀw) = bᵀx`.
pub fn product_functionals<T: Real>(h: &[Cx<T>]) -> (Vec<T>, Vec<T>) {
    let n = h.len();
    let mut re = vec![T::zero(); 2 * n];
    let mut im = vec![T::zero(); 2 * n];
    for (i, hi) in h.iter().enumerate() {
        re[i] = hi.re;
        re[n + i] = -hi.im;
        im[i] = hi.im;
        im[n + i] = hi.re;
    }
    (re, im)
}

/// Unit-amplitude M-PSK alphabet with constellation offset `π/M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constellation<T> {
    order: usize,
    half_angle: T,
}

impl<T: Real> Constellation<T> {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidArgument(format!("PSK order {order} < 2")));
        }
        Ok(Self {
            order,
            half_angle: T::PI() / T::from_usize(order).unwrap(),
        })
    }

    pub fn qpsk() -> Self {
        Self::new(4).expect("valid order")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn amplitude(&self) -> T {
        T::one()
    }

    /// Half-width `θ = π/M` of the constructive-interference sector.
    pub fn half_angle(&self) -> T {
        self.half_angle
    }

    pub fn phase(&self, m: usize) -> T {
        let two = T::lit(2.0);
        self.half_angle * (T::one() + two * T::from_usize(m % self.order).unwrap())
    }

    pub fn symbol(&self, m: usize) -> Cx<T> {
        Cx::from_polar(T::one(), self.phase(m))
    }

    /// Nearest constellation index to the phase of `y` (ML detection for PSK).
    pub fn detect(&self, y: Cx<T>) -> usize {
        let mut best = 0;
        let mut best_val = T::neg_infinity();
        for m in 0..self.order {
            let v = (y * self.symbol(m).conj()).re;
            if v > best_val {
                best_val = v;
                best = m;
            }
        }
        best
    }
}

/// Antenna noise `n0` and RF-to-baseband conversion noise `nc` (linear watts).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel<T> {
    pub n0: T,
    pub nc: T,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(n0: T, nc: T) -> Result<Self> {
        if !(n0 > T::zero() && nc > T::zero() && n0.is_finite() && nc.is_finite()) {
            return Err(Error::Domain(format!(
                "noise powers must be positive, got N0={n0}, NC={nc}"
            )));
        }
        Ok(Self { n0, nc })
    }

    /// Decoder noise `N0 + NC/ρ` seen after splitting.
    pub fn effective(&self, rho: T) -> T {
        self.n0 + self.nc / rho
    }
}

/// Per-user SINR target `gamma` (linear) and harvesting target `energy` (watts).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRequirement<T> {
    pub gamma: T,
    pub energy: T,
}

impl<T: Real> UserRequirement<T> {
    pub fn new(gamma: T, energy: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(Error::Domain(format!("SINR target must be positive, got {gamma}")));
        }
        if !(energy >= T::zero() && energy.is_finite()) {
            return Err(Error::Domain(format!(
                "harvesting target must be nonnegative, got {energy}"
            )));
        }
        Ok(Self { gamma, energy })
    }

    /// Targets given in dB; `-inf` dB energy means no harvesting requirement.
    pub fn from_db(gamma_db: T, energy_db: T) -> Result<Self> {
        let e = if energy_db == T::neg_infinity() {
            T::zero()
        } else {
            db_to_linear(energy_db)
        };
        Self::new(db_to_linear(gamma_db), e)
    }

    /// `K` identical requirements.
    pub fn uniform(k: usize, gamma: T, energy: T) -> Result<Vec<Self>> {
        let r = Self::new(gamma, energy)?;
        Ok(vec![r; k])
    }
}

/// Channel rows `h_1..h_K`, each of length `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelInstance<T> {
    rows: Vec<Vec<Cx<T>>>,
}

impl<T: Real> ChannelInstance<T> {
    pub fn new(rows: Vec<Vec<Cx<T>>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidArgument("channel needs at least one user".into()));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::InvalidArgument("channel needs at least one antenna".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("channel rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite channel entry".into()));
        }
        Ok(Self { rows })
    }

    pub fn users(&self) -> usize {
        self.rows.len()
    }

    pub fn antennas(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<Cx<T>>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cx<T>] {
        &self.rows[i]
    }

    /// Every row multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            rows: self.rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect(),
        }
    }

    /// Channel for users `users` only.
    pub fn subset(&self, users: &[usize]) -> Self {
        Self {
            rows: users.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

impl<T: Real> Serialize for ChannelInstance<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw: Vec<Vec<[f64; 2]>> = self.rows.iter().map(|r| pairs_out(r)).collect();
        raw.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for ChannelInstance<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        Self::new(raw.iter().map(|r| pairs_in(r)).collect()).map_err(D::Error::custom)
    }
}

pub(crate) fn pairs_out<T: Real>(v: &[Cx<T>]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re.to_f64_lossy(), c.im.to_f64_lossy()]).collect()
}

pub(crate) fn pairs_in<T: Real>(v: &[[f64; 2]]) -> Vec<Cx<T>> {
    v.iter().map(|p| Cx::new(T::lit(p[0]), T::lit(p[1]))).collect()
}

/// Data symbols of one slot, as constellation indices and phases.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrame<T> {
    indices: Vec<usize>,
    phases: Vec<T>,
}

impl<T: Real> SymbolFrame<T> {
    pub fn new(cons: &Constellation<T>, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&m| m >= cons.order()) {
            return Err(Error::Domain(format!(
                "symbol index {bad} outside {}-PSK",
                cons.order()
            )));
        }
        let phases = indices.iter().map(|&m| cons.phase(m)).collect();
        Ok(Self { indices, phases })
    }

    /// All users send symbol 0.
    pub fn constant(cons: &Constellation<T>, k: usize) -> Self {
        Self::new(cons, vec![0; k]).expect("index 0 valid")
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn phases(&self) -> &[T] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Every symbol advanced by `steps` constellation points.
    pub fn shifted(&self, cons: &Constellation<T>, steps: usize) -> Self {
        Self::new(cons, self.indices.iter().map(|&m| (m + steps) % cons.order()).collect())
            .expect("indices stay in range")
    }
}

/// Data-rotated channel rows `h̃_i = h_i e^{j(φ_1 − φ_i)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedChannels<T> {
    rows: Vec<Vec<Cx<T>>>,
}

impl<T: Real> RotatedChannels<T> {
    pub fn rows(&self) -> &[Vec<Cx<T>>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cx<T>] {
        &self.rows[i]
    }

    pub fn users(&self) -> usize {
        self.rows.len()
    }

    pub fn antennas(&self) -> usize {
        self.rows[0].len()
    }

    /// `h̃_iᵀ w` for every user.
    pub fn received(&self, w: &[Cx<T>]) -> Vec<Cx<T>> {
        self.rows.iter().map(|h| bilinear(h, w)).collect()
    }

    /// Treats raw rows as already rotated (e.g. for single-user problems).
    pub fn from_rows(rows: Vec<Vec<Cx<T>>>) -> Result<Self> {
        Ok(Self {
            rows: ChannelInstance::new(rows)?.rows,
        })
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            rows: self.rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect(),
        }
    }
}

pub fn rotate_channels<T: Real>(channels: &ChannelInstance<T>, frame: &SymbolFrame<T>) -> Result<RotatedChannels<T>> {
    if frame.len() != channels.users() {
        return Err(Error::Dimension(format!(
            "{} symbols for {} users",
            frame.len(),
            channels.users()
        )));
    }
    let phi1 = frame.phases()[0];
    let rows = channels
        .rows()
        .iter()
        .zip(frame.phases())
        .map(|(h, &phi)| {
            let rot = Cx::from_polar(T::one(), phi1 - phi);
            h.iter().map(|v| v * rot).collect()
        })
        .collect();
    Ok(RotatedChannels { rows })
}

/// Common precoded vector `w` and splitting ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct CiSolution<T> {
    pub w: Vec<Cx<T>>,
    pub rho: Vec<T>,
}

impl<T: Real> CiSolution<T> {
    /// `P_T = ‖w‖²`
    pub fn power(&self) -> T {
        norm_sqr(&self.w)
    }

    pub fn scaled(&self, beta: T) -> Self {
        Self {
            w: self.w.iter().map(|v| v * beta).collect(),
            rho: self.rho.clone(),
        }
    }
}

/// Per-user beamformers `t_i` and splitting ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct ConventionalSolution<T> {
    pub t: Vec<Vec<Cx<T>>>,
    pub rho: Vec<T>,
}

impl<T: Real> ConventionalSolution<T> {
    /// `P_T = Σ_i ‖t_i‖²`
    pub fn power(&self) -> T {
        self.t.iter().map(|ti| norm_sqr(ti)).sum()
    }

    pub fn scaled(&self, beta: T) -> Self {
        Self {
            t: self.t.iter().map(|ti| ti.iter().map(|v| v * beta).collect()).collect(),
            rho: self.rho.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawCi {
    w: Vec<[f64; 2]>,
    rho: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawConv {
    t: Vec<Vec<[f64; 2]>>,
    rho: Vec<f64>,
}

impl<T: Real> Serialize for CiSolution<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawCi {
            w: pairs_out(&self.w),
            rho: self.rho.iter().map(|r| r.to_f64_lossy()).collect(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for CiSolution<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawCi::deserialize(d)?;
        Ok(Self {
            w: pairs_in(&raw.w),
            rho: raw.rho.iter().map(|&r| T::lit(r)).collect(),
        })
    }
}

impl<T: Real> Serialize for ConventionalSolution<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawConv {
            t: self.t.iter().map(|ti| pairs_out(ti)).collect(),
            rho: self.rho.iter().map(|r| r.to_f64_lossy()).collect(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for ConventionalSolution<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawConv::deserialize(d)?;
        Ok(Self {
            t: raw.t.iter().map(|ti| pairs_in(ti)).collect(),
            rho: raw.rho.iter().map(|&r| T::lit(r)).collect(),
        })
    }
}

/// Constructive-interference margins of one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CiMargins<T> {
    /// `Re(h̃ᵀw)`, amplification along the desired symbol
    pub alpha_r: T,
    /// `Im(h̃ᵀw)`, angular deviation from the desired symbol
    pub alpha_i: T,
    /// `√(Γ (N0 + NC/ρ))`
    pub gamma_thresh: T,
    /// `(α_r − γ) tan θ − |α_i|`; nonnegative iff the SINR constraint holds
    pub slack: T,
    /// `(1 − ρ) |h̃ᵀw|²`
    pub harvested: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CiEvaluation<T> {
    pub margins: Vec<CiMargins<T>>,
    pub total_power: T,
}

fn check_rho<T: Real>(rho: &[T], k: usize) -> Result<()> {
    if rho.len() != k {
        return Err(Error::Dimension(format!(
            "{} splitting ratios for {k} users",
            rho.len()
        )));
    }
    if let Some(r) = rho.iter().find(|&&r| !(r > T::zero() && r < T::one())) {
        return Err(Error::Domain(format!("splitting ratio {r} outside (0, 1)")));
    }
    Ok(())
}

pub fn evaluate_ci<T: Real>(
    sol: &CiSolution<T>,
    rot: &RotatedChannels<T>,
    reqs: &[UserRequirement<T>],
    noise: &NoiseModel<T>,
    cons: &Constellation<T>,
) -> Result<CiEvaluation<T>> {
    let k = rot.users();
    if reqs.len() != k {
        return Err(Error::Dimension(format!("{} requirements for {k} users", reqs.len())));
    }
    if sol.w.len() != rot.antennas() {
        return Err(Error::Dimension(format!(
            "precoder has {} entries for {} antennas",
            sol.w.len(),
            rot.antennas()
        )));
    }
    check_rho(&sol.rho, k)?;
    let tan = cons.half_angle().tan();
    let margins = rot
        .received(&sol.w)
        .into_iter()
        .zip(reqs.iter().zip(&sol.rho))
        .map(|(v, (req, &rho))| {
            let gamma_thresh = (req.gamma * noise.effective(rho)).sqrt();
            CiMargins {
                alpha_r: v.re,
                alpha_i: v.im,
                gamma_thresh,
                slack: (v.re - gamma_thresh) * tan - v.im.abs(),
                harvested: (T::one() - rho) * v.norm_sqr(),
            }
        })
        .collect();
    Ok(CiEvaluation {
        margins,
        total_power: sol.power(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConventionalEvaluation<T> {
    pub sinr: Vec<T>,
    pub harvested: Vec<T>,
    pub total_power: T,
}

pub fn evaluate_conventional<T: Real>(
    sol: &ConventionalSolution<T>,
    channels: &ChannelInstance<T>,
    noise: &NoiseModel<T>,
) -> Result<ConventionalEvaluation<T>> {
    let k = channels.users();
    if sol.t.len() != k {
        return Err(Error::Dimension(format!("{} beamformers for {k} users", sol.t.len())));
    }
    if sol.t.iter().any(|t| t.len() != channels.antennas()) {
        return Err(Error::Dimension("beamformer length differs from antenna count".into()));
    }
    check_rho(&sol.rho, k)?;
    let mut sinr = Vec::with_capacity(k);
    let mut harvested = Vec::with_capacity(k);
    for (i, h) in channels.rows().iter().enumerate() {
        let gains: Vec<T> = sol.t.iter().map(|t| bilinear(h, t).norm_sqr()).collect();
        let total: T = gains.iter().copied().sum();
        let rho = sol.rho[i];
        sinr.push(gains[i] / (total - gains[i] + noise.effective(rho)));
        harvested.push((T::one() - rho) * (total + noise.n0));
    }
    Ok(ConventionalEvaluation {
        sinr,
        harvested,
        total_power: sol.power(),
    })
}
