//! Command-line front end for the benchmark harness.
//!
//! Exit codes: 0 on success, 1 for configuration problems (bad flags, bad
//! config keys, invalid parameter combinations), 2 for runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use streampca::harness::{self, ExperimentConfig};
use streampca::Error;

/// Print a line to stdout, ignoring write errors so that piping into a
/// truncating consumer (`streampca run | head`) exits cleanly instead of
/// panicking on the closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// `say!` for stderr.
macro_rules! complain {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stderr(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "streampca",
    version,
    about = "Streaming k-PCA benchmark harness",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment: seeded trials, CSV data, quantile summary.
    Run(CommonArgs),
    /// Repeat an experiment once per value of a single config key.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Config key to vary.
        #[arg(long)]
        key: String,
        /// Comma-separated values for that key.
        #[arg(long)]
        values: String,
    },
    /// Average the hard stream's top-space residual across a horizon grid.
    Lowerbound {
        /// Number of planted directions (the stream lives in dimension 2k).
        #[arg(long)]
        k: usize,
        /// Nominal top eigenvalue λ (needs λ ≤ 1/(4k)).
        #[arg(long)]
        lambda: f64,
        /// Eigengap budget δ (needs 0 < δ ≤ λ/2).
        #[arg(long)]
        delta: f64,
        /// Comma-separated horizons, e.g. 2000,8000,32000.
        #[arg(long, value_name = "T1,T2,...")]
        t_grid: String,
        /// Trials per horizon.
        #[arg(long, default_value_t = 64)]
        trials: u64,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run the streaming estimator at each horizon.
        #[arg(long)]
        with_oja: bool,
        /// Max concurrent trials (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default runs/lowerbound).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample initialization diagnostics against their probability bounds.
    Diagnose(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; omit to build the config purely from --set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count override (for diagnose: number of sampled seeds).
    #[arg(long)]
    trials: Option<u64>,
    /// Max concurrent trials (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// KEY=VALUE config override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Failures tagged by phase, so the process exit code is honest about
/// whether the config or the run went wrong.
enum CliError {
    Config(Error),
    Runtime(Error),
}

type CliResult<T> = Result<T, CliError>;

trait Phase<T> {
    fn config_phase(self) -> CliResult<T>;
    fn runtime_phase(self) -> CliResult<T>;
}

impl<T> Phase<T> for Result<T, Error> {
    fn config_phase(self) -> CliResult<T> {
        self.map_err(CliError::Config)
    }
    fn runtime_phase(self) -> CliResult<T> {
        self.map_err(CliError::Runtime)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            complain!("streampca: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            complain!("streampca: {e}");
            ExitCode::from(2)
        }
    }
}

fn install_pool(jobs: Option<usize>) -> CliResult<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config(Error::Config(
                "--jobs must be at least 1".into(),
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(Error::Config(format!("thread pool setup: {e}"))))?;
    }
    Ok(())
}

/// Build the raw config table from an optional file plus `--set` overrides.
fn load_table(common: &CommonArgs) -> Result<toml::Table, Error> {
    let mut table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("TOML parse failure in {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for kv in &common.set {
        ExperimentConfig::apply_set(&mut table, kv)?;
    }
    Ok(table)
}

fn finish_config(mut cfg: ExperimentConfig, common: &CommonArgs) -> ExperimentConfig {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let cfg = ExperimentConfig::from_table(load_table(common)?)?;
    Ok(finish_config(cfg, common))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Run(common) => {
            install_pool(common.jobs)?;
            let cfg = load_config(&common).config_phase()?;
            let resolved = harness::resolve(cfg).config_phase()?;
            announce(&resolved);
            let out = harness::run_resolved(resolved).runtime_phase()?;
            say!("wrote {}", out.csv_path.display());
            say!("wrote {}", out.summary_path.display());
            Ok(())
        }
        Cmd::Sweep {
            common,
            key,
            values,
        } => {
            install_pool(common.jobs)?;
            run_sweep(&common, &key, &values)
        }
        Cmd::Lowerbound {
            k,
            lambda,
            delta,
            t_grid,
            trials,
            seed,
            with_oja,
            jobs,
            out,
        } => {
            install_pool(jobs)?;
            let grid = parse_grid(&t_grid).config_phase()?;
            // Validate the instance parameters against the smallest horizon
            // before any work happens.
            let t_min = *grid.iter().min().expect("nonempty grid");
            streampca::spectra::lower_bound_source(k, lambda, delta, t_min, &vec![false; k], 0)
                .config_phase()?;
            if trials == 0 {
                return Err(CliError::Config(Error::Config(
                    "--trials must be at least 1".into(),
                )));
            }
            let rows = harness::lower_bound_sweep(k, lambda, delta, &grid, trials, seed, with_oja)
                .runtime_phase()?;
            for row in &rows {
                match (row.oja_mean_error, row.oja_error_times_t) {
                    (Some(me), Some(met)) => say!(
                        "T = {:>8}  offline error = {:.6}  error·T = {:.4}  \
                         oja error = {:.6}  oja error·T = {:.4}",
                        row.t, row.mean_error, row.error_times_t, me, met
                    ),
                    _ => say!(
                        "T = {:>8}  offline error = {:.6}  error·T = {:.4}",
                        row.t, row.mean_error, row.error_times_t
                    ),
                }
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("runs/lowerbound"));
            std::fs::create_dir_all(&dir)
                .map_err(Error::from)
                .runtime_phase()?;
            let path = dir.join("lowerbound.csv");
            std::fs::write(&path, harness::lower_bound_csv(&rows))
                .map_err(Error::from)
                .runtime_phase()?;
            say!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Diagnose(common) => {
            install_pool(common.jobs)?;
            let cfg = load_config(&common).config_phase()?;
            let report = harness::diagnose(&cfg).config_phase()?;
            {
                use std::io::Write as _;
                let _ = std::io::stdout().write_all(report.render().as_bytes());
            }
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)
                    .map_err(Error::from)
                    .runtime_phase()?;
                let path = dir.join("diagnose.txt");
                std::fs::write(&path, report.render())
                    .map_err(Error::from)
                    .runtime_phase()?;
                say!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn announce(res: &harness::Resolved) {
    say!(
        "{}: {} on {} (d = {}, k = {}), {} schedule, T0 = {}, T1 = {}, T = {}, {} trial(s)",
        res.cfg.name,
        res.cfg.algorithm.as_str(),
        res.cfg.spectrum.as_str(),
        res.cfg.d,
        res.cfg.k,
        res.sched_kind.as_str(),
        res.schedule.t0(),
        res.schedule.t1(),
        res.total,
        res.cfg.trials
    );
}

fn parse_grid(text: &str) -> Result<Vec<u64>, Error> {
    let mut grid = Vec::new();
    for tok in text.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        grid.push(tok.parse::<u64>().map_err(|_| {
            Error::Config(format!("bad horizon {tok:?} in --t-grid (want integers)"))
        })?);
    }
    if grid.is_empty() {
        return Err(Error::Config("--t-grid needs at least one horizon".into()));
    }
    Ok(grid)
}

/// Directory-name-safe rendering of a swept value.
fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run_sweep(common: &CommonArgs, key: &str, values: &str) -> CliResult<()> {
    let value_list: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if value_list.is_empty() {
        return Err(CliError::Config(Error::Config(
            "--values needs at least one value".into(),
        )));
    }
    let base_table = load_table(common).config_phase()?;

    // Resolve every point before running any: a typo in one value should not
    // cost the runtime of the others.
    let mut resolved_points = Vec::with_capacity(value_list.len());
    let mut base_out: Option<PathBuf> = None;
    for value in &value_list {
        let mut table = base_table.clone();
        ExperimentConfig::apply_set(&mut table, &format!("{key}={value}")).config_phase()?;
        let cfg = finish_config(
            ExperimentConfig::from_table(table).config_phase()?,
            common,
        );
        let root = cfg.out_dir();
        let mut cfg = cfg;
        cfg.out = Some(root.join(format!("{key}-{}", sanitize(value))));
        base_out.get_or_insert(root);
        resolved_points.push((value.to_string(), harness::resolve(cfg).config_phase()?));
    }

    let mut summary = String::from("key,value,metric,t,q10,q50,q90\n");
    for (value, res) in resolved_points {
        announce(&res);
        let out = harness::run_resolved(res).runtime_phase()?;
        for (metric, t, q10, q50, q90) in out.final_quantiles() {
            summary.push_str(&format!("{key},{value},{metric},{t},{q10},{q50},{q90}\n"));
        }
        say!("wrote {}", out.csv_path.display());
    }
    let dir = base_out.expect("at least one sweep point");
    std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .runtime_phase()?;
    let path = dir.join("sweep_summary.csv");
    std::fs::write(&path, summary)
        .map_err(Error::from)
        .runtime_phase()?;
    say!("wrote {}", path.display());
    Ok(())
}
