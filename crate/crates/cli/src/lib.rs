//! Command-line front end. [`run`] parses arguments, does the work, and
//! returns the process exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rtmdid_core::analysis::{analyze, AnalysisConfig};
use rtmdid_core::panel_io::{load_panel_with, read_long_csv, wide_to_long, Config, CsvSchema};
use rtmdid_core::sensitivity::write_sensitivity;
use rtmdid_core::simulate::{
    mu1_grid, power_thetas, rho_grid, robustness_grid, run_power_experiment, run_robustness_experiment,
    run_type1_experiment, write_report, EffectShape, ScenarioConfig,
};
use rtmdid_core::{Error, Exec, Panel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const SEED_ENV: &str = "RTMDID_SEED";
const DEFAULT_SEED: u64 = 20_190_101;

#[derive(Debug, Parser)]
#[command(name = "rtmdid", version, about = "Matched DID with regression-to-the-mean correction")]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    /// Type I error of the four estimators for treated mean 1..5.
    Table1Mu,
    /// Type I error of the four estimators across autocorrelations.
    Table1Rho,
    /// Rejection rates over effect sizes 0, -0.25, ..., -1.5.
    Power,
    /// Adjusted synthetic control under normal and t errors.
    Table2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write its report CSV.
    Simulate {
        experiment: Experiment,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flat key = value file with `seed`, `reps`, `alpha`, `t_rescale`, `effect`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scale t errors to unit marginal variance.
        #[arg(long)]
        t_rescale: bool,
    },
    /// Run the observational pipeline and write the report directory.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// The data file is wide: one row per unit, one column per time.
        #[arg(long)]
        wide: bool,
    },
    /// Sweep the treated unit's mean shift and write the sensitivity CSV.
    Sensitivity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        wide: bool,
    },
    /// Check a panel CSV against the schema.
    Validate {
        data: PathBuf,
        /// Also check the treated unit and treatment time named in a config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        wide: bool,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match dispatch(cli.command, exec) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cmd: Command, exec: Exec) -> Result<(), Error> {
    match cmd {
        Command::Simulate {
            experiment,
            reps,
            seed,
            out,
            config,
            t_rescale,
        } => simulate(experiment, reps, seed, out, config, t_rescale, exec),
        Command::Analyze {
            data,
            config,
            out,
            wide,
        } => {
            let (panel, cfg) = load(&data, &config, wide)?;
            let report = analyze(&panel, &cfg, exec)?;
            report.write_dir(&out)?;
            eprintln!(
                "theta_obs {} (p = {}/{}), theta_adj {} (p = {}/{})",
                report.att.theta_obs,
                report.placebo_unadjusted.exceed_count(),
                report.placebo_unadjusted.n(),
                report.att.theta_adj,
                report.placebo_adjusted.exceed_count(),
                report.placebo_adjusted.n(),
            );
            Ok(())
        }
        Command::Sensitivity {
            data,
            config,
            out,
            wide,
        } => {
            let (panel, cfg) = load(&data, &config, wide)?;
            let report = analyze(&panel, &cfg, exec)?;
            with_output(out.as_deref(), |w| write_sensitivity(&report.sensitivity, w))?;
            match report.robustness_threshold {
                Some(d) => eprintln!("significance flips at delta = {d}"),
                None => eprintln!("significance does not flip on this grid"),
            }
            Ok(())
        }
        Command::Validate { data, config, wide } => {
            let schema = match &config {
                Some(c) => CsvSchema::from_config(&Config::from_path(c)?),
                None => CsvSchema::default(),
            };
            let text = read_data(&data, &schema, wide)?;
            let raw = read_long_csv(text.as_bytes(), &schema)?;
            let (n, t) = (raw.unit_ids.len(), raw.times.len());
            if let Some(c) = config {
                let cfg = Config::from_path(&c)?;
                let treated = cfg.require("treated")?;
                let tau0: i64 = cfg
                    .parse("tau0")?
                    .ok_or_else(|| Error::Config("missing key `tau0`".into()))?;
                raw.into_panel(treated, tau0)?;
            }
            println!("ok: {n} units x {t} periods");
            Ok(())
        }
    }
}

fn read_data(path: &Path, schema: &CsvSchema, wide: bool) -> Result<String, Error> {
    if wide {
        let mut buf = Vec::new();
        wide_to_long(File::open(path)?, schema, &mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    } else {
        Ok(std::fs::read_to_string(path)?)
    }
}

fn load(data: &Path, config: &Path, wide: bool) -> Result<(Panel, AnalysisConfig), Error> {
    let cfg = Config::from_path(config)?;
    let analysis = AnalysisConfig::from_config(&cfg)?;
    let panel = if wide {
        let schema = CsvSchema::from_config(&cfg);
        let text = read_data(data, &schema, true)?;
        let raw = read_long_csv(text.as_bytes(), &schema)?;
        let treated = cfg.require("treated")?;
        let tau0: i64 = cfg
            .parse("tau0")?
            .ok_or_else(|| Error::Config("missing key `tau0`".into()))?;
        raw.into_panel(treated, tau0)?
    } else {
        load_panel_with(data, &cfg)?
    };
    Ok((panel, analysis))
}

fn with_output(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> Result<(), Error>,
) -> Result<(), Error> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}

/// Seed precedence: flag, then environment, then config, then the default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")));
    }
    Ok(config.unwrap_or(DEFAULT_SEED))
}

const SIMULATE_KEYS: &[&str] = &["seed", "reps", "alpha", "t_rescale", "effect"];

fn simulate(
    experiment: Experiment,
    reps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
    t_rescale: bool,
    exec: Exec,
) -> Result<(), Error> {
    let cfg = match &config {
        Some(p) => Config::from_path(p)?,
        None => Config::default(),
    };
    cfg.check_keys(SIMULATE_KEYS)?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(seed, env.as_deref(), cfg.parse("seed")?)?;
    let reps = match reps {
        Some(r) => r,
        None => cfg.parse_or("reps", 2000usize)?,
    };
    let alpha: f64 = cfg.parse_or("alpha", 0.05)?;
    let rescale = t_rescale
        || match cfg.get("t_rescale") {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => return Err(Error::Config(format!("key `t_rescale`: expected true or false, got `{v}`"))),
        };
    let effect = match cfg.get("effect") {
        None | Some("cumulative") => EffectShape::Cumulative,
        Some("constant") => EffectShape::Constant,
        Some(v) => return Err(Error::Config(format!("unknown effect `{v}`"))),
    };
    let tweak = |c: ScenarioConfig| ScenarioConfig { alpha, effect, ..c };

    let rows = match experiment {
        Experiment::Table1Mu => {
            let configs: Vec<_> = mu1_grid(seed, reps).into_iter().map(tweak).collect();
            run_type1_experiment(&configs, exec)?
        }
        Experiment::Table1Rho => {
            let configs: Vec<_> = rho_grid(seed, reps).into_iter().map(tweak).collect();
            run_type1_experiment(&configs, exec)?
        }
        Experiment::Power => {
            let base = tweak(ScenarioConfig {
                n_reps: reps,
                ..ScenarioConfig::new(5.0, seed)
            });
            run_power_experiment(&base, &power_thetas(), exec)?
        }
        Experiment::Table2 => {
            let configs: Vec<_> = robustness_grid(seed, reps, rescale).into_iter().map(tweak).collect();
            run_robustness_experiment(&configs, exec)?
        }
    };
    with_output(out.as_deref(), |w| write_report(&rows, w))
}
