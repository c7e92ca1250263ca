use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridobs::integrator::Mode;
use gridobs::Result;
use gridobs_cli::commands::{
    cmd_convert, cmd_estimate, cmd_place, cmd_simulate, cmd_sweep, cmd_validate_mu, exit_code,
};
use gridobs_cli::config::RunConfig;

/// Power-grid NDAE simulation, moving-horizon estimation and PMU placement.
///
/// Exit codes: 0 success, 2 numerical failure (Newton divergence, singular
/// solve), 3 input or configuration error.
#[derive(Parser)]
#[command(name = "gridobs", version)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MATPOWER case to canonical JSON.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Generator constants; built-in names (case9, case39) need none.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Simulate the disturbed case and write the trajectory.
    ///
    /// CSV columns: t, then the blocks delta_g, omega_g, Ep_g, TM_g, PG_g,
    /// QG_g (each over generators g = 1..G), then v_i and theta_i (each over
    /// buses i = 1..N). One row per step, full double precision.
    Simulate(Common),
    /// Compare the relaxed model against the exact NDAE for each mu.
    ///
    /// CSV columns: mu, converged, rmse, accumulated (root sum of squared
    /// deviations), bound (10·mu·sqrt(t_end)).
    ValidateMu {
        #[command(flatten)]
        common: Common,
        /// Comma-separated relaxation parameters.
        #[arg(long, value_delimiter = ',')]
        mus: Option<Vec<f64>>,
    },
    /// Estimate the initial state from noisy PMU readings.
    ///
    /// JSON: buses, x0_hat, iterations, residual_norms, epsilon, converged,
    /// regularized. A capped Gauss-Newton run still exits 0.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated measured buses (default: all).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        buses: Option<Vec<usize>>,
    },
    /// Optimal PMU placement for one or more sensor counts.
    ///
    /// JSON: p, Z_star, objective, condition_flag, method, min_eig, max_eig,
    /// and verified/verified_by with --brute-force. Several counts give an array.
    Place {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        counts: Counts,
        /// Check the optimum by enumeration (branch-and-bound above 10^6 subsets).
        #[arg(long)]
        brute_force: bool,
    },
    /// Placement and estimation error across sensor counts.
    ///
    /// CSV columns: p, bus_1..bus_N (1 when selected), objective, epsilon,
    /// nested (whether each placement contains the previous one).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        counts: Counts,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in case name or case file.
    #[arg(long)]
    case: Option<String>,
    /// Generator constants for MATPOWER case files.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// be, bdf2..bdf5 or ti.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Load increase in percent.
    #[arg(long)]
    alpha_l: Option<f64>,
    /// Renewable increase in percent.
    #[arg(long)]
    alpha_r: Option<f64>,
    /// Measurement noise in percent of each reading.
    #[arg(long)]
    noise: Option<f64>,
    /// Estimation window length.
    #[arg(long)]
    n_o: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: standard output).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Counts {
    /// Comma-separated sensor counts.
    #[arg(long, value_delimiter = ',', conflicts_with = "fractions")]
    p: Option<Vec<usize>>,
    /// Comma-separated fractions of the bus count, rounded half up.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "ndae" => Ok(Mode::Ndae),
        "mu" => Ok(Mode::Mu),
        _ => Err(format!("unknown mode '{s}' (expected ndae or mu)")),
    }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let s = &mut c.study;
        if let Some(v) = &self.case {
            c.case = v.clone();
        }
        if let Some(v) = &self.sidecar {
            c.sidecar = Some(v.clone());
        }
        if let Some(v) = &self.scheme {
            s.scheme = v.clone();
        }
        if let Some(v) = self.mode {
            s.sim.mode = v;
        }
        if let Some(v) = self.mu {
            s.sim.mu = v;
        }
        if let Some(v) = self.h {
            s.h = v;
        }
        if let Some(v) = self.t_end {
            s.sim.t_end = v;
        }
        if let Some(v) = self.alpha_l {
            s.disturbance.alpha_l = v;
        }
        if let Some(v) = self.alpha_r {
            s.disturbance.alpha_r = v;
        }
        if let Some(v) = self.noise {
            s.noise_pct = v;
        }
        if let Some(v) = self.n_o {
            s.n_o = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = &self.output {
            c.output = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

impl Counts {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(p) = &self.p {
            c.p = p.clone();
        }
        if let Some(f) = &self.fractions {
            c.fractions = f.clone();
            c.p.clear();
        }
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    let io = |path: &Path, source| gridobs::Error::Io {
        path: path.to_path_buf(),
        source,
    };
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| io(p, e)),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| io(Path::new("<stdout>"), e)),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| gridobs::Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Convert { input, output, sidecar } => {
            let conv = cmd_convert(&input, sidecar.as_deref())?;
            if !conv.dropped_fields.is_empty() {
                eprintln!(
                    "warning: dropped unsupported fields: {}",
                    conv.dropped_fields.join(", ")
                );
            }
            emit(&conv.json, Some(&output))
        }
        Command::Simulate(common) => {
            let c = common.resolve()?;
            emit(&cmd_simulate(&c)?, c.output.as_deref())
        }
        Command::ValidateMu { common, mus } => {
            let mut c = common.resolve()?;
            if let Some(m) = mus {
                c.mus = m;
            }
            emit(&cmd_validate_mu(&c)?, c.output.as_deref())
        }
        Command::Estimate { common, buses } => {
            let mut c = common.resolve()?;
            if buses.is_some() {
                c.buses = buses;
            }
            emit(&json(&cmd_estimate(&c)?), c.output.as_deref())
        }
        Command::Place {
            common,
            counts,
            brute_force,
        } => {
            let mut c = common.resolve()?;
            counts.apply(&mut c);
            let out = cmd_place(&c, brute_force)?;
            let text = match out.as_slice() {
                [one] => json(one),
                many => json(&many),
            };
            emit(&text, c.output.as_deref())
        }
        Command::Sweep { common, counts } => {
            let mut c = common.resolve()?;
            counts.apply(&mut c);
            emit(&cmd_sweep(&c)?, c.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(3);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
