//! Seeded Monte Carlo sweeps over SINR targets, harvesting targets or
//! antenna counts, with per-instance audits and CSV output.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci_precoder::{self, CiOptions, DcInit};
use crate::conic::Settings;
use crate::conventional::{self, ConvOptions};
use crate::error::{Error, Result};
use crate::formulation::rho_hi;
use crate::model::{
    db_to_linear, linear_to_db, rotate_channels, ChannelInstance, CiSolution, Constellation, ConventionalSolution,
    NoiseModel, SymbolFrame, UserRequirement,
};
use crate::scalar::{Cx, Real};
use crate::verify::{check_solution, SolutionRef};

/// `K × N` channel with i.i.d. `CN(0, 1)` entries.
pub fn gen_channels<T: Real>(k: usize, n: usize, seed: u64) -> Result<ChannelInstance<T>> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("need at least one user and one antenna".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid");
    ChannelInstance::new(
        (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let re = d.sample(&mut rng);
                        Cx::new(T::lit(re), T::lit(d.sample(&mut rng)))
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Uniform symbol frame drawn from its own stream of `seed`.
pub fn gen_frame<T: Real>(cons: &Constellation<T>, k: usize, seed: u64) -> SymbolFrame<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    SymbolFrame::new(cons, (0..k).map(|_| rng.gen_range(0..cons.order())).collect()).expect("indices in range")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    CiDc,
    CiSubopt,
    ConvSca,
    ConvSinrOnly,
    CiSinrOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::CiDc,
        Scheme::CiSubopt,
        Scheme::ConvSca,
        Scheme::ConvSinrOnly,
        Scheme::CiSinrOnly,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::CiDc => "CI_DC",
            Scheme::CiSubopt => "CI_SUBOPT",
            Scheme::ConvSca => "CONV_SCA",
            Scheme::ConvSinrOnly => "CONV_SINR_ONLY",
            Scheme::CiSinrOnly => "CI_SINR_ONLY",
        }
    }

    /// Schemes that ignore the harvesting targets.
    pub fn sinr_only(self) -> bool {
        matches!(self, Scheme::ConvSinrOnly | Scheme::CiSinrOnly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Axis {
    SinrDb,
    EhDb,
    Antennas,
}

impl Axis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::SinrDb => (0..=8).map(|i| 5.0 * i as f64).collect(),
            Axis::EhDb => (0..=5).map(|i| 4.0 * i as f64).collect(),
            Axis::Antennas => vec![4.0, 6.0, 8.0, 10.0, 12.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// `10·log10(mean of linear powers)`
    #[default]
    DbOfMean,
    /// `mean of 10·log10(power)`
    MeanOfDb,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Feasible,
    Suboptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k: usize,
    pub n: usize,
    pub modulation: usize,
    pub n0: f64,
    pub nc: f64,
    pub axis: Axis,
    /// Axis values; empty selects the axis defaults.
    pub values: Vec<f64>,
    /// SINR target when it is not the swept axis.
    pub sinr_db: f64,
    /// Harvesting target when it is not the swept axis.
    pub eh_db: f64,
    pub instances: usize,
    pub base_seed: u64,
    pub schemes: Vec<Scheme>,
    pub tol: f64,
    pub max_outer: usize,
    pub dc_init: InitMode,
    pub averaging: Averaging,
    /// Record wall time; disable for byte-identical output.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k: 4,
            n: 4,
            modulation: 4,
            n0: 1.0,
            nc: 1.0,
            axis: Axis::SinrDb,
            values: Vec::new(),
            sinr_db: 20.0,
            eh_db: 10.0,
            instances: 100,
            base_seed: 0,
            schemes: Scheme::ALL.to_vec(),
            tol: 1e-5,
            max_outer: 50,
            dc_init: InitMode::Feasible,
            averaging: Averaging::DbOfMean,
            timing: true,
        }
    }
}

impl SweepConfig {
    pub fn axis_values(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.axis.default_values()
        } else {
            self.values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::InvalidArgument("instances must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("scheme list is empty".into()));
        }
        if self.k == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("need at least one user and one antenna".into()));
        }
        Constellation::<f64>::new(self.modulation)?;
        NoiseModel::new(self.n0, self.nc)?;
        if !(self.tol > 0.0) || self.max_outer == 0 {
            return Err(Error::InvalidArgument(
                "tolerance and outer iteration cap must be positive".into(),
            ));
        }
        for v in self.axis_values() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("axis value {v} is not finite")));
            }
            if self.axis == Axis::Antennas && (v < 1.0 || v.fract() != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "antenna count {v} is not a positive integer"
                )));
            }
        }
        Ok(())
    }

    /// `(K, N, Γ, E)` at one axis value.
    fn point(&self, value: f64) -> (usize, usize, f64, f64) {
        match self.axis {
            Axis::SinrDb => (self.k, self.n, db_to_linear(value), db_to_linear(self.eh_db)),
            Axis::EhDb => (self.k, self.n, db_to_linear(self.sinr_db), db_to_linear(value)),
            Axis::Antennas => (
                self.k,
                value as usize,
                db_to_linear(self.sinr_db),
                db_to_linear(self.eh_db),
            ),
        }
    }
}

/// Outcome of one scheme on one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceResult {
    /// `None` when the instance is infeasible for the scheme.
    pub power: Option<f64>,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub scheme: Scheme,
    pub mean_power_db: f64,
    pub std_db: f64,
    pub feasible: usize,
    pub iters: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// `[axis index][instance][scheme index]`
    pub instances: Vec<Vec<Vec<InstanceResult>>>,
}

/// `10·log10` of the arithmetic mean of linear powers.
pub fn aggregate(powers: &[f64]) -> Result<f64> {
    if powers.is_empty() {
        return Err(Error::InvalidArgument("cannot average an empty list".into()));
    }
    Ok(linear_to_db(powers.iter().sum::<f64>() / powers.len() as f64))
}

/// Arithmetic mean of per-instance dB values.
pub fn aggregate_mean_of_db(powers: &[f64]) -> Result<f64> {
    if powers.is_empty() {
        return Err(Error::InvalidArgument("cannot average an empty list".into()));
    }
    Ok(powers.iter().map(|&p| linear_to_db(p)).sum::<f64>() / powers.len() as f64)
}

fn std_of_db(powers: &[f64]) -> f64 {
    if powers.len() < 2 {
        return 0.0;
    }
    let db: Vec<f64> = powers.iter().map(|&p| linear_to_db(p)).collect();
    let m = db.iter().sum::<f64>() / db.len() as f64;
    (db.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (db.len() - 1) as f64).sqrt()
}

/// Everything one scheme needs to run on one instance.
pub struct Instance<'a> {
    pub channels: &'a ChannelInstance<f64>,
    pub frame: &'a SymbolFrame<f64>,
    pub reqs: &'a [UserRequirement<f64>],
    pub noise: &'a NoiseModel<f64>,
    pub cons: &'a Constellation<f64>,
}

#[derive(Clone, Debug)]
pub enum Design {
    Ci(CiSolution<f64>),
    Conventional(ConventionalSolution<f64>),
}

impl Design {
    pub fn power(&self) -> f64 {
        match self {
            Design::Ci(s) => s.power(),
            Design::Conventional(s) => s.power(),
        }
    }

    pub fn as_ref(&self) -> SolutionRef<'_, f64> {
        match self {
            Design::Ci(s) => SolutionRef::Ci(s),
            Design::Conventional(s) => SolutionRef::Conventional(s),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchemeOptions {
    pub settings: Settings<f64>,
    pub tol: f64,
    pub max_outer: usize,
    pub dc_init: InitMode,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            settings: Settings::default(),
            tol: 1e-5,
            max_outer: 50,
            dc_init: InitMode::Feasible,
        }
    }
}

/// Runs one scheme; returns the design and its outer iteration count.
pub fn run_scheme(scheme: Scheme, inst: &Instance<'_>, opts: &SchemeOptions) -> Result<(Design, usize)> {
    let ci = CiOptions {
        settings: opts.settings.clone(),
        tol: opts.tol,
        max_outer: opts.max_outer,
    };
    let conv = ConvOptions {
        settings: opts.settings.clone(),
        tol: opts.tol,
        max_outer: opts.max_outer,
        ..ConvOptions::default()
    };
    let k = inst.channels.users();
    let sinr_reqs: Vec<UserRequirement<f64>> = inst
        .reqs
        .iter()
        .map(|r| UserRequirement { energy: 0.0, ..*r })
        .collect();
    match scheme {
        Scheme::CiDc | Scheme::CiSubopt | Scheme::CiSinrOnly => {
            let rot = rotate_channels(inst.channels, inst.frame)?;
            match scheme {
                Scheme::CiDc => {
                    let init = match opts.dc_init {
                        InitMode::Feasible => DcInit::FeasibleStart,
                        InitMode::Suboptimal => DcInit::Suboptimal,
                    };
                    let out = ci_precoder::solve_dc_from(&rot, inst.reqs, inst.noise, inst.cons, init, &ci)?;
                    let it = out.iterations();
                    Ok((Design::Ci(out.solution), it))
                }
                Scheme::CiSubopt => Ok((
                    Design::Ci(ci_precoder::solve_suboptimal(
                        &rot, inst.reqs, inst.noise, inst.cons, &ci,
                    )?),
                    0,
                )),
                _ => Ok((
                    Design::Ci(ci_precoder::solve_sinr_only(
                        &rot,
                        &sinr_reqs,
                        inst.noise,
                        inst.cons,
                        &vec![rho_hi(); k],
                        &ci,
                    )?),
                    0,
                )),
            }
        }
        Scheme::ConvSca => {
            let out = conventional::solve_conventional(inst.channels, inst.reqs, inst.noise, &conv)?;
            let it = out.iterations();
            Ok((Design::Conventional(out.solution), it))
        }
        Scheme::ConvSinrOnly => Ok((
            Design::Conventional(conventional::solve_sinr_only(
                inst.channels,
                &sinr_reqs,
                inst.noise,
                &vec![rho_hi(); k],
                &conv,
            )?),
            0,
        )),
    }
}

/// Requirements a scheme's output is audited against.
pub fn audit_requirements(scheme: Scheme, reqs: &[UserRequirement<f64>]) -> Vec<UserRequirement<f64>> {
    if scheme.sinr_only() {
        reqs.iter().map(|r| UserRequirement { energy: 0.0, ..*r }).collect()
    } else {
        reqs.to_vec()
    }
}

/// Seed of instance `i`; matched across axis values.
pub fn instance_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

fn run_instance(cfg: &SweepConfig, value: f64, idx: usize, opts: &SchemeOptions) -> Result<Vec<InstanceResult>> {
    let (k, n, gamma, energy) = cfg.point(value);
    let seed = instance_seed(cfg.base_seed, idx);
    let channels = gen_channels::<f64>(k, n, seed)?;
    let cons = Constellation::new(cfg.modulation)?;
    let frame = gen_frame(&cons, k, seed);
    let noise = NoiseModel::new(cfg.n0, cfg.nc)?;
    let reqs = UserRequirement::uniform(k, gamma, energy)?;
    let inst = Instance {
        channels: &channels,
        frame: &frame,
        reqs: &reqs,
        noise: &noise,
        cons: &cons,
    };
    cfg.schemes
        .iter()
        .map(|&scheme| {
            let start = Instant::now();
            let run = run_scheme(scheme, &inst, opts);
            let seconds = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            match run {
                Ok((design, iterations)) => {
                    let audit_reqs = audit_requirements(scheme, &reqs);
                    let report = check_solution(design.as_ref(), &channels, &frame, &audit_reqs, &noise, &cons)?;
                    if !report.pass {
                        let dump = serde_json::json!({
                            "scheme": scheme,
                            "axis_value": value,
                            "instance": idx,
                            "seed": seed,
                            "channels": channels,
                            "symbols": frame.indices(),
                            "report": report,
                        });
                        return Err(Error::AuditFailed(dump.to_string()));
                    }
                    Ok(InstanceResult {
                        power: Some(design.power()),
                        iterations,
                        seconds,
                    })
                }
                Err(Error::Infeasible(_)) => Ok(InstanceResult {
                    power: None,
                    iterations: 0,
                    seconds,
                }),
                Err(e) => Err(Error::Internal(format!(
                    "{} failed on instance {idx} (seed {seed}) at axis value {value}: {e}",
                    scheme.label()
                ))),
            }
        })
        .collect()
}

/// Runs every scheme on every (axis value, instance) pair and aggregates.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let opts = SchemeOptions {
        tol: cfg.tol,
        max_outer: cfg.max_outer,
        dc_init: cfg.dc_init,
        ..SchemeOptions::default()
    };
    let values = cfg.axis_values();
    let mut rows = Vec::new();
    let mut all = Vec::with_capacity(values.len());
    for &value in &values {
        let per_instance: Vec<Vec<InstanceResult>> = (0..cfg.instances)
            .into_par_iter()
            .map(|i| run_instance(cfg, value, i, &opts))
            .collect::<Result<_>>()?;
        for (s, &scheme) in cfg.schemes.iter().enumerate() {
            let results: Vec<&InstanceResult> = per_instance.iter().map(|r| &r[s]).collect();
            rows.push(summarize(value, scheme, &results, cfg.averaging));
        }
        all.push(per_instance);
    }
    Ok(SweepOutput { rows, instances: all })
}

fn summarize(value: f64, scheme: Scheme, results: &[&InstanceResult], averaging: Averaging) -> SweepRow {
    let powers: Vec<f64> = results.iter().filter_map(|r| r.power).collect();
    let mean = match averaging {
        Averaging::DbOfMean => aggregate(&powers),
        Averaging::MeanOfDb => aggregate_mean_of_db(&powers),
    }
    .unwrap_or(f64::NAN);
    let iters = if powers.is_empty() {
        0.0
    } else {
        results
            .iter()
            .filter(|r| r.power.is_some())
            .map(|r| r.iterations as f64)
            .sum::<f64>()
            / powers.len() as f64
    };
    SweepRow {
        axis_value: value,
        scheme,
        mean_power_db: mean,
        std_db: std_of_db(&powers),
        feasible: powers.len(),
        iters,
        seconds: results.iter().map(|r| r.seconds).sum(),
    }
}

pub const CSV_HEADER: &str = "axis,scheme,mean_power_db,std_db,feasible,iters,seconds";

pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{},{:.3},{:.6}",
            r.axis_value,
            r.scheme.label(),
            r.mean_power_db,
            r.std_db,
            r.feasible,
            r.iters,
            r.seconds
        );
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// Sidecar description of a sweep's conventions.
pub fn metadata(cfg: &SweepConfig) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "axis_values": cfg.axis_values(),
        "averaging": match cfg.averaging {
            Averaging::DbOfMean => "10*log10(mean of linear powers over feasible instances)",
            Averaging::MeanOfDb => "mean of per-instance 10*log10(power) over feasible instances",
        },
        "std_db": "sample standard deviation of per-instance dB powers",
        "seconds": "summed wall time over instances (0 when timing is disabled)",
        "channel_seed": "base_seed + instance index",
        "noise": "n0 is antenna noise, nc is conversion noise",
    })
}
