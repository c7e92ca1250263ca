//! The subcommands as library functions. Each returns its machine-readable
//! output as a string so that callers decide where it goes.

use std::fmt::Write as _;
use std::path::Path;

use gridobs::dynamics::StateLayout;
use gridobs::integrator::{mu_sweep, simulate, Scheme};
use gridobs::mhe::GnReport;
use gridobs::netmodel::{init_steady_state_with, parse_matpower_str, CaseFile};
use gridobs::observability::SensorSelection;
use gridobs::placement::{
    binomial, evaluate_placement, run_placement, solve_branch_and_bound, solve_bruteforce, PlacementMethod,
    PlacementProblem, PlacementResult, Study, ENUMERATION_CAP,
};
use gridobs::{Error, Result};
use serde::Serialize;

use crate::config::{load_case_file, RunConfig};

/// Result of `convert`: the canonical JSON and the MATPOWER fields it left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub json: String,
    pub dropped_fields: Vec<String>,
}

pub fn cmd_convert(input: &Path, sidecar: Option<&Path>) -> Result<Converted> {
    let case = load_case_file(input, sidecar)?;
    let is_json = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let dropped_fields = if is_json {
        Vec::new()
    } else {
        let text = std::fs::read_to_string(input).map_err(|source| Error::Io {
            path: input.to_path_buf(),
            source,
        })?;
        if text.trim_start().starts_with('{') {
            Vec::new()
        } else {
            parse_matpower_str(&text)?.dropped_fields
        }
    };
    Ok(Converted {
        json: CaseFile::from_case(&case).to_json(),
        dropped_fields,
    })
}

/// Trajectory CSV: `t` then every state by label, one row per step.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let s = &cfg.study;
    let base = s.disturbance.base_case(&cfg.load_case()?)?;
    let (x0, u) = init_steady_state_with(&base, s.sim.governor)?;
    let scheme = Scheme::parse(&s.scheme, s.h)?;
    let tr = simulate(&x0, &u, &base, &scheme, &s.sim, &s.disturbance)?;
    let mut out = Vec::new();
    tr.write_csv(&mut out, &StateLayout::of(&base))
        .expect("writing to memory cannot fail");
    Ok(String::from_utf8(out).expect("CSV is ASCII"))
}

/// Relaxation sweep CSV: `mu,converged,rmse,accumulated,bound`.
pub fn cmd_validate_mu(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let s = &cfg.study;
    let base = s.disturbance.base_case(&cfg.load_case()?)?;
    let (x0, u) = init_steady_state_with(&base, s.sim.governor)?;
    let scheme = Scheme::parse(&s.scheme, s.h)?;
    let rows = mu_sweep(&x0, &u, &base, &scheme, &s.sim, &s.disturbance, &cfg.mus)?;
    let mut out = String::from("mu,converged,rmse,accumulated,bound\n");
    for r in rows {
        writeln!(
            out,
            "{:e},{},{:e},{:e},{:e}",
            r.mu, r.converged, r.rmse, r.accumulated, r.bound
        )
        .unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateOutput {
    pub buses: Vec<usize>,
    pub x0_hat: Vec<f64>,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub epsilon: Option<f64>,
    pub converged: bool,
    pub regularized: bool,
}

impl EstimateOutput {
    fn new(buses: &[usize], rep: GnReport) -> Self {
        EstimateOutput {
            buses: buses.to_vec(),
            x0_hat: rep.x0_hat.iter().copied().collect(),
            iterations: rep.iterations,
            residual_norms: rep.residual_norms,
            epsilon: rep.epsilon,
            converged: rep.converged,
            regularized: rep.regularized,
        }
    }
}

/// Initial-state estimate with the configured buses (all by default).
pub fn cmd_estimate(cfg: &RunConfig) -> Result<EstimateOutput> {
    cfg.validate()?;
    let raw = cfg.load_case()?;
    let n = raw.n_bus();
    let selection = match &cfg.buses {
        Some(b) => SensorSelection::new(b.iter().copied(), n)?,
        None => SensorSelection::all(n),
    };
    let study = Study::prepare(&raw, &cfg.study)?;
    let rep = study.estimate(&selection)?;
    Ok(EstimateOutput::new(selection.buses(), rep))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementOutput {
    pub p: usize,
    #[serde(rename = "Z_star")]
    pub z_star: Vec<usize>,
    pub objective: f64,
    pub condition_flag: bool,
    pub method: PlacementMethod,
    pub min_eig: f64,
    pub max_eig: f64,
    /// Present when the optimum was checked by enumeration or branch-and-bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified_by: Option<PlacementMethod>,
}

impl PlacementOutput {
    fn new(r: &PlacementResult) -> Self {
        PlacementOutput {
            p: r.p,
            z_star: r.z_star.clone(),
            objective: r.objective,
            condition_flag: r.condition_flag,
            method: r.method,
            min_eig: r.conditioning.min_eig,
            max_eig: r.conditioning.max_eig,
            verified: None,
            verified_by: None,
        }
    }
}

/// Exhaustive check when the subset count allows it, branch-and-bound beyond.
fn verify(problem: &PlacementProblem, found: &PlacementResult) -> Result<(bool, PlacementMethod)> {
    let other = if binomial(problem.n_candidates(), problem.p()) <= ENUMERATION_CAP {
        solve_bruteforce(problem)?
    } else {
        solve_branch_and_bound(problem)?
    };
    Ok((
        other.z_star == found.z_star && other.objective_exact == found.objective_exact,
        other.method,
    ))
}

/// Optimal placement for each configured count. The Gramian is built along
/// the window simulated from the all-bus estimate.
pub fn cmd_place(cfg: &RunConfig, check: bool) -> Result<Vec<PlacementOutput>> {
    cfg.validate()?;
    let raw = cfg.load_case()?;
    let counts = cfg.counts(raw.n_bus())?;
    let study = Study::prepare(&raw, &cfg.study)?;
    let run = run_placement(&study, &counts)?;
    let base = PlacementProblem::new(run.contributions.clone(), 0)?;
    run.results
        .iter()
        .map(|r| {
            let mut out = PlacementOutput::new(r);
            if check {
                let (ok, by) = verify(&base.with_p(r.p)?, r)?;
                out.verified = Some(ok);
                out.verified_by = Some(by);
            }
            Ok(out)
        })
        .collect()
}

/// One line per count: `p,bus_1,…,bus_N,objective,epsilon,nested`, where
/// `bus_i` is 1 when bus `i` is selected and `nested` is the subset check
/// over the whole sweep.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let raw = cfg.load_case()?;
    let n = raw.n_bus();
    let counts = cfg.counts(n)?;
    let study = Study::prepare(&raw, &cfg.study)?;
    let run = run_placement(&study, &counts)?;
    let mut out = String::from("p");
    for b in 1..=n {
        write!(out, ",bus_{b}").unwrap();
    }
    out.push_str(",objective,epsilon,nested\n");
    for r in &run.results {
        let epsilon = if r.p == 0 {
            f64::INFINITY
        } else {
            evaluate_placement(&SensorSelection::new(r.z_star.iter().copied(), n)?, &study)?.epsilon
        };
        write!(out, "{}", r.p).unwrap();
        for b in 1..=n {
            write!(out, ",{}", u8::from(r.z_star.contains(&b))).unwrap();
        }
        writeln!(out, ",{:e},{:e},{}", r.objective, epsilon, run.nested).unwrap();
    }
    Ok(out)
}

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        3
    }
}
