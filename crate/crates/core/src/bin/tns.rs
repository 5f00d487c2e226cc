use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tns::cli::{self, parse_temps, Manifest, RunConfig};
use tns::lattice::Variant;
use tns::models::CouplingDistribution;
use tns::selftest::{self, SelftestOptions};
use tns::skeleton::BoundaryMode;
use tns::TnsError;

#[derive(Parser)]
#[command(name = "tns", version, about = "Ising partition functions by tensor network skeletonization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free energy per site, checked against enumeration or Onsager when possible.
    FreeEnergy(Common),
    /// Internal energy and magnetization.
    Observables(Common),
    /// Edwards–Anderson couplings: log Z and overlap q per realization.
    Disorder(DisorderArgs),
    /// Run the built-in checks.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Modified,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Pm1,
    Gaussian,
}

#[derive(Args)]
struct Common {
    /// Lattice dimension (2 or 3).
    #[arg(long)]
    dim: Option<usize>,
    /// Lattice side is 2^L.
    #[arg(long = "L", short = 'L')]
    l: Option<u32>,
    #[arg(long)]
    chi: Option<usize>,
    /// `a,b,c`, `start:stop:step` (inclusive) or `tc`.
    #[arg(long, allow_hyphen_values = true)]
    temps: Option<String>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// `exact` or a rank.
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long, visible_alias = "B", allow_hyphen_values = true)]
    field: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with a run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct DisorderArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, value_enum)]
    distribution: Option<DistArg>,
    /// All couplings +1, for checking against the pure model.
    #[arg(long)]
    ferro: bool,
    /// Realization JSON files to run instead of sampling.
    #[arg(long = "realization", num_args = 1..)]
    realization_files: Vec<PathBuf>,
    /// Skip the per-site magnetizations and q.
    #[arg(long)]
    no_per_site: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Run only checks whose name contains this.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    list: bool,
    /// Deliberately break one check.
    #[arg(long, hide = true)]
    inject_fault: bool,
    #[arg(long, short)]
    verbose: bool,
}

fn usage(msg: impl Into<String>) -> TnsError {
    TnsError::Argument(msg.into())
}

fn resolve(c: &Common) -> Result<RunConfig, TnsError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = c.dim {
        cfg.dim = d;
    }
    if let Some(l) = c.l {
        cfg.l = l;
    }
    if let Some(chi) = c.chi {
        cfg.tns.chi = chi;
    }
    if let Some(t) = &c.temps {
        cfg.temps = parse_temps(t)?;
    }
    if let Some(v) = c.variant {
        cfg.tns.variant = match v {
            VariantArg::Standard => Variant::Standard,
            VariantArg::Modified => Variant::Modified,
        };
    }
    if let Some(b) = &c.boundary {
        cfg.tns.boundary = Some(if b.eq_ignore_ascii_case("exact") {
            BoundaryMode::Exact
        } else {
            BoundaryMode::Rank(b.parse().map_err(|_| usage(format!("boundary must be 'exact' or a rank, got '{b}'")))?)
        });
    }
    if c.field.is_some() {
        cfg.field = c.field;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.tns.als.rng_seed = s;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setup(verbose: bool, threads: Option<usize>) {
    let level = if verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn emit<R: Serialize>(m: &Manifest<R>, out: &Option<PathBuf>, command: &str) -> Result<(), TnsError> {
    let base = out.clone().unwrap_or_else(|| PathBuf::from(format!("tns-{command}")));
    let csv = cli::write_outputs(m, &base)?;
    print!("{csv}");
    if let Some(s) = &m.summary {
        eprintln!("q over {} runs: {:.6e} ± {:.2e}", s.count, s.mean_q, s.stderr_q);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, TnsError> {
    match cli.command {
        Command::FreeEnergy(c) => {
            let cfg = resolve(&c)?;
            setup(c.verbose, cfg.threads);
            emit(&cli::cmd_free_energy(&cfg)?, &c.out, "free-energy")?;
        }
        Command::Observables(c) => {
            let cfg = resolve(&c)?;
            setup(c.verbose, cfg.threads);
            emit(&cli::cmd_observables(&cfg)?, &c.out, "observables")?;
        }
        Command::Disorder(d) => {
            let mut cfg = resolve(&d.common)?;
            if let Some(r) = d.realizations {
                cfg.realizations = r;
            }
            if let Some(dist) = d.distribution {
                cfg.distribution = match dist {
                    DistArg::Pm1 => CouplingDistribution::PlusMinusOne,
                    DistArg::Gaussian => CouplingDistribution::Gaussian,
                };
            }
            cfg.ferro |= d.ferro;
            if !d.realization_files.is_empty() {
                cfg.realization_files = d.realization_files.clone();
            }
            if d.no_per_site {
                cfg.per_site = false;
            }
            setup(d.common.verbose, cfg.threads);
            let base = d.common.out.clone().unwrap_or_else(|| PathBuf::from("tns-disorder"));
            emit(&cli::cmd_disorder(&cfg, Some(&base))?, &Some(base), "disorder")?;
        }
        Command::Selftest(s) => {
            setup(s.verbose, None);
            if s.list {
                selftest::check_names().iter().for_each(|n| println!("{n}"));
                return Ok(true);
            }
            let out = selftest::run(&SelftestOptions { filter: s.filter, inject_fault: s.inject_fault });
            if out.is_empty() {
                return Err(usage("no check matches the filter"));
            }
            let width = out.iter().map(|o| o.name.len()).max().unwrap_or(0);
            for o in &out {
                let tag = if o.passed { "PASS" } else { "FAIL" };
                println!("{tag}  {:width$}  {:7.2}s  {}", o.name, o.seconds, o.detail);
            }
            let failed = out.iter().filter(|o| !o.passed).count();
            println!("{} passed, {} failed", out.len() - failed, failed);
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("tns: {e}");
            match e {
                TnsError::Argument(_) | TnsError::Shape(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
