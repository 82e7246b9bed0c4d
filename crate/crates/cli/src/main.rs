use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ci_swipt::bench::{
    audit_requirements, gen_channels, gen_frame, metadata, run_scheme, run_sweep, write_csv, Design, InitMode,
    Instance, Scheme, SchemeOptions, SweepConfig,
};
use ci_swipt::model::{
    ChannelInstance, CiSolution, Constellation, ConventionalSolution, NoiseModel, SymbolFrame, UserRequirement,
};
use ci_swipt::verify::{check_solution, symbol_mc_ser, symbol_mc_ser_fixed, SimNoise};
use ci_swipt::Error;

#[derive(Parser)]
#[command(
    name = "ci-swipt",
    version,
    about = "Constructive-interference precoding with power-splitting receivers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a seeded Rayleigh channel.
    Gen {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Design a precoder for one channel and one symbol frame.
    Solve(SolveArgs),
    /// Audit a stored solution against its channel.
    Check {
        #[arg(long)]
        channels: PathBuf,
        #[arg(long)]
        solution: PathBuf,
    },
    /// Run a Monte Carlo sweep and write CSV plus a `.meta.json` sidecar.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the symbol error rate of a CI solution.
    Ser {
        #[arg(long)]
        channels: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Number of transmitted symbol slots.
        #[arg(long, default_value_t = 100_000)]
        symbols: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Redraw the frame every slot and redesign the precoder for it.
        #[arg(long)]
        redesign: bool,
        /// Override the antenna noise power of the simulation.
        #[arg(long)]
        sim_n0: Option<f64>,
        /// Override the conversion noise power of the simulation.
        #[arg(long)]
        sim_nc: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    CiDc,
    CiSub,
    CiSinr,
    ConvSca,
    ConvSinr,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::CiDc => Scheme::CiDc,
            SchemeArg::CiSub => Scheme::CiSubopt,
            SchemeArg::CiSinr => Scheme::CiSinrOnly,
            SchemeArg::ConvSca => Scheme::ConvSca,
            SchemeArg::ConvSinr => Scheme::ConvSinrOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Feasible,
    Suboptimal,
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    scheme: SchemeArg,
    #[arg(long)]
    channels: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    sinr_db: f64,
    /// Harvesting target in dB; `-inf` disables harvesting.
    #[arg(long, allow_hyphen_values = true)]
    eh_db: f64,
    #[arg(long, default_value_t = 1.0)]
    n0: f64,
    #[arg(long, default_value_t = 1.0)]
    nc: f64,
    #[arg(long = "mod", default_value_t = 4)]
    modulation: usize,
    /// Comma-separated symbol indices, one per user.
    #[arg(long, value_delimiter = ',', conflicts_with = "frame_seed")]
    frame: Option<Vec<usize>>,
    /// Draw the symbol frame from this seed instead.
    #[arg(long)]
    frame_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "feasible")]
    init: InitArg,
    #[arg(long)]
    out: PathBuf,
}

/// Failure kinds mapped to exit codes.
enum Failure {
    /// Infeasible design or failed audit.
    Rejected(String),
    Error(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Infeasible(msg)) => Failure::Rejected(format!("infeasible: {msg}")),
            _ => Failure::Error(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rejected(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen { k, n, seed, out } => {
            let ch = gen_channels::<f64>(k, n, seed)?;
            write_json(&out, &serde_json::to_value(&ch).map_err(anyhow::Error::from)?)?;
        }
        Command::Solve(args) => solve(args)?,
        Command::Check { channels, solution } => {
            let ch = read_channels(&channels)?;
            let stored = StoredSolution::read(&solution)?;
            let problem = stored.problem(&ch)?;
            let design = stored.design()?;
            let reqs = audit_requirements(stored.scheme, &problem.reqs);
            let report = check_solution(
                design.as_ref(),
                &ch,
                &problem.frame,
                &reqs,
                &problem.noise,
                &problem.cons,
            )?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?
            );
            if !report.pass {
                return Err(Failure::Rejected(format!("FAIL: minimum slack {:e}", report.min_slack)));
            }
            println!("PASS");
        }
        Command::Sweep { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: SweepConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            let result = run_sweep(&cfg)?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_csv(&result.rows, std::io::BufWriter::new(file))?;
            let mut meta = out.clone().into_os_string();
            meta.push(".meta.json");
            write_json(Path::new(&meta), &metadata(&cfg))?;
        }
        Command::Ser {
            channels,
            solution,
            symbols,
            seed,
            redesign,
            sim_n0,
            sim_nc,
        } => {
            let ch = read_channels(&channels)?;
            let stored = StoredSolution::read(&solution)?;
            let problem = stored.problem(&ch)?;
            let Design::Ci(sol) = stored.design()? else {
                return Err(Failure::Error(anyhow!("symbol error simulation needs a CI solution")));
            };
            let noise = SimNoise {
                n0: sim_n0.unwrap_or(problem.noise.n0),
                nc: sim_nc.unwrap_or(problem.noise.nc),
            };
            if !(noise.n0 >= 0.0 && noise.nc >= 0.0) {
                return Err(Failure::Error(anyhow!("simulation noise powers must be nonnegative")));
            }
            let report = if redesign {
                let opts = SchemeOptions::default();
                let design = |frame: &SymbolFrame<f64>| {
                    let inst = Instance {
                        channels: &ch,
                        frame,
                        reqs: &problem.reqs,
                        noise: &problem.noise,
                        cons: &problem.cons,
                    };
                    match run_scheme(stored.scheme, &inst, &opts)?.0 {
                        Design::Ci(s) => Ok(s),
                        Design::Conventional(_) => unreachable!("CI scheme returned a conventional design"),
                    }
                };
                symbol_mc_ser(design, &ch, noise, &problem.cons, symbols, seed)?
            } else {
                symbol_mc_ser_fixed(&sol, &ch, &problem.frame, noise, &problem.cons, symbols, seed)?
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?
            );
        }
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let ch = read_channels(&args.channels)?;
    let k = ch.users();
    let cons = Constellation::<f64>::new(args.modulation)?;
    let frame = match (&args.frame, args.frame_seed) {
        (Some(idx), _) => {
            if idx.len() != k {
                return Err(Failure::Error(anyhow!("frame has {} symbols for {k} users", idx.len())));
            }
            SymbolFrame::new(&cons, idx.clone())?
        }
        (None, Some(seed)) => gen_frame(&cons, k, seed),
        (None, None) => SymbolFrame::constant(&cons, k),
    };
    let noise = NoiseModel::new(args.n0, args.nc)?;
    let reqs = vec![UserRequirement::from_db(args.sinr_db, args.eh_db)?; k];
    let scheme = Scheme::from(args.scheme);
    let opts = SchemeOptions {
        dc_init: match args.init {
            InitArg::Feasible => InitMode::Feasible,
            InitArg::Suboptimal => InitMode::Suboptimal,
        },
        ..SchemeOptions::default()
    };
    let inst = Instance {
        channels: &ch,
        frame: &frame,
        reqs: &reqs,
        noise: &noise,
        cons: &cons,
    };
    let (design, iterations) = run_scheme(scheme, &inst, &opts)?;
    let mut out = match &design {
        Design::Ci(s) => serde_json::to_value(s),
        Design::Conventional(s) => serde_json::to_value(s),
    }
    .map_err(anyhow::Error::from)?;
    let obj = out.as_object_mut().expect("solutions serialize as objects");
    obj.insert("scheme".into(), json!(scheme));
    obj.insert("power".into(), json!(design.power()));
    obj.insert("iterations".into(), json!(iterations));
    obj.insert("symbols".into(), json!(frame.indices()));
    obj.insert("modulation".into(), json!(args.modulation));
    obj.insert("sinr_db".into(), json!(args.sinr_db));
    obj.insert(
        "eh_db".into(),
        if args.eh_db.is_finite() {
            json!(args.eh_db)
        } else {
            Value::Null
        },
    );
    obj.insert("n0".into(), json!(args.n0));
    obj.insert("nc".into(), json!(args.nc));
    write_json(&args.out, &out)?;
    println!(
        "{} power {:.6} ({:.3} dB)",
        scheme.label(),
        design.power(),
        10.0 * design.power().log10()
    );
    Ok(())
}

/// A solution file: the design plus the problem data it was solved for.
struct StoredSolution {
    scheme: Scheme,
    raw: Value,
    symbols: Vec<usize>,
    modulation: usize,
    sinr_db: f64,
    eh_db: f64,
    n0: f64,
    nc: f64,
}

struct Problem {
    cons: Constellation<f64>,
    frame: SymbolFrame<f64>,
    reqs: Vec<UserRequirement<f64>>,
    noise: NoiseModel<f64>,
}

impl StoredSolution {
    fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let raw: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let field = |name: &str| raw.get(name).ok_or_else(|| anyhow!("solution file lacks `{name}`"));
        let num = |name: &str| -> anyhow::Result<f64> {
            field(name)?.as_f64().ok_or_else(|| anyhow!("`{name}` is not a number"))
        };
        Ok(Self {
            scheme: serde_json::from_value(field("scheme")?.clone()).context("unknown scheme")?,
            symbols: serde_json::from_value(field("symbols")?.clone()).context("bad symbol list")?,
            modulation: serde_json::from_value(field("modulation")?.clone()).context("bad modulation order")?,
            sinr_db: num("sinr_db")?,
            eh_db: match raw.get("eh_db") {
                None | Some(Value::Null) => f64::NEG_INFINITY,
                Some(v) => v.as_f64().ok_or_else(|| anyhow!("`eh_db` is not a number"))?,
            },
            n0: num("n0")?,
            nc: num("nc")?,
            raw,
        })
    }

    fn problem(&self, ch: &ChannelInstance<f64>) -> anyhow::Result<Problem> {
        if self.symbols.len() != ch.users() {
            bail!(
                "solution has {} symbols but the channel has {} users",
                self.symbols.len(),
                ch.users()
            );
        }
        let cons = Constellation::new(self.modulation)?;
        Ok(Problem {
            frame: SymbolFrame::new(&cons, self.symbols.clone())?,
            reqs: vec![UserRequirement::from_db(self.sinr_db, self.eh_db)?; ch.users()],
            noise: NoiseModel::new(self.n0, self.nc)?,
            cons,
        })
    }

    fn design(&self) -> anyhow::Result<Design> {
        Ok(match self.scheme {
            Scheme::CiDc | Scheme::CiSubopt | Scheme::CiSinrOnly => {
                Design::Ci(serde_json::from_value::<CiSolution<f64>>(self.raw.clone()).context("bad CI solution")?)
            }
            Scheme::ConvSca | Scheme::ConvSinrOnly => Design::Conventional(
                serde_json::from_value::<ConventionalSolution<f64>>(self.raw.clone())
                    .context("bad conventional solution")?,
            ),
        })
    }
}

fn read_channels(path: &Path) -> anyhow::Result<ChannelInstance<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
