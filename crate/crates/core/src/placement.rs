//! Trace-optimal PMU placement.
//!
//! The objective `trace(Σ_{i∈Z} W_i)` is modular, so the best `p`-subset is
//! the `p` buses with the largest single-bus traces. [`solve_apriori`] sorts;
//! [`solve_bruteforce`] and [`solve_branch_and_bound`] search the subset space
//! and serve as independent checks. Objectives are compared as exact
//! fixed-point integers so that ties and additivity are decided without
//! rounding.

use std::cmp::Ordering;
use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{InputVector, StateLayout};
use crate::error::{Error, Result};
use crate::exact::FixedScale;
use crate::integrator::{simulate_steps, LoadSchedule, Scheme, SimConfig};
use crate::mhe::{gauss_newton_estimate, noisy_states, GnJacobian, GnReport, MeasurementSeries, MheConfig};
use crate::netmodel::{apply_disturbance, init_steady_state_with, Disturbance, NetworkCase};
use crate::observability::{
    gramian_of_selection, per_sensor_contributions, propagate_chain, GramianContribution, ObservabilityReport,
    Recursion, SensorSelection,
};

/// Default limit on the number of subsets [`solve_bruteforce`] enumerates.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// A placement is flagged when `min_eig < CONDITION_RATIO · max_eig`.
pub const CONDITION_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Among equal traces the lower bus index wins.
    #[default]
    LowestBus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementMethod {
    Apriori,
    Bruteforce,
    BranchAndBound,
}

/// Per-bus traces as exact integers on one common scale.
#[derive(Debug, Clone)]
struct ExactTraces {
    scale: FixedScale,
    /// Indexed like the contributions.
    values: Vec<i128>,
}

impl ExactTraces {
    fn of(contributions: &[GramianContribution]) -> Result<Self> {
        let traces: Vec<f64> = contributions.iter().map(|c| c.trace).collect();
        let scale = FixedScale::covering(&traces)?;
        let values = traces
            .iter()
            .map(|&t| scale.encode(t).expect("covering scale represents its values"))
            .collect();
        Ok(ExactTraces { scale, values })
    }
}

#[derive(Debug, Clone)]
pub struct PlacementProblem {
    contributions: Vec<GramianContribution>,
    p: usize,
    tie_break: TieBreak,
    fingerprint: u64,
    exact: ExactTraces,
}

impl PlacementProblem {
    pub fn new(contributions: Vec<GramianContribution>, p: usize) -> Result<Self> {
        Self::with_tie_break(contributions, p, TieBreak::LowestBus)
    }

    pub fn with_tie_break(mut contributions: Vec<GramianContribution>, p: usize, tie_break: TieBreak) -> Result<Self> {
        contributions.sort_by_key(|c| c.bus);
        if let Some(w) = contributions.windows(2).find(|w| w[0].bus == w[1].bus) {
            return Err(Error::Validation(format!("bus {} has two contributions", w[0].bus)));
        }
        if let Some(c) = contributions.iter().find(|c| c.bus == 0) {
            return Err(Error::Validation(format!("bus index {} is not 1-based", c.bus)));
        }
        if p > contributions.len() {
            return Err(Error::Domain(format!(
                "cannot place {p} sensors on {} candidate buses",
                contributions.len()
            )));
        }
        if let Some(c) = contributions.iter().find(|c| !c.trace.is_finite() || c.trace < 0.0) {
            return Err(Error::Validation(format!("bus {} has trace {}", c.bus, c.trace)));
        }
        let exact = ExactTraces::of(&contributions)?;
        let fingerprint = fingerprint(&contributions, tie_break);
        Ok(PlacementProblem {
            contributions,
            p,
            tie_break,
            fingerprint,
            exact,
        })
    }

    /// The same contributions with another sensor count.
    pub fn with_p(&self, p: usize) -> Result<Self> {
        if p > self.contributions.len() {
            return Err(Error::Domain(format!(
                "cannot place {p} sensors on {} candidate buses",
                self.contributions.len()
            )));
        }
        Ok(PlacementProblem { p, ..self.clone() })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_candidates(&self) -> usize {
        self.contributions.len()
    }

    pub fn contributions(&self) -> &[GramianContribution] {
        &self.contributions
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    /// Hash of the contributions and tie-break rule; results from different
    /// problems cannot be compared for nesting.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn n_bus(&self) -> usize {
        self.contributions.iter().map(|c| c.bus).max().unwrap_or(0)
    }

    /// Exact objective of the contributions at `indices`.
    fn objective(&self, indices: &[usize]) -> i128 {
        indices.iter().map(|&i| self.exact.values[i]).sum()
    }

    fn result(&self, mut indices: Vec<usize>, method: PlacementMethod) -> Result<PlacementResult> {
        indices.sort_unstable();
        let objective_exact = self.objective(&indices);
        let z_star: Vec<usize> = indices.iter().map(|&i| self.contributions[i].bus).collect();
        let selection = SensorSelection::new(z_star.iter().copied(), self.n_bus())?;
        let w = gramian_of_selection(&self.contributions, &selection)?;
        let conditioning = ObservabilityReport::from_gramian(w);
        let condition_flag =
            !(conditioning.max_eig > 0.0) || conditioning.min_eig < CONDITION_RATIO * conditioning.max_eig;
        Ok(PlacementResult {
            p: self.p,
            z_star,
            objective: self.exact.scale.decode(objective_exact),
            objective_exact,
            conditioning,
            condition_flag,
            method,
            fingerprint: self.fingerprint,
        })
    }
}

fn fingerprint(contributions: &[GramianContribution], tie_break: TieBreak) -> u64 {
    let mut h = DefaultHasher::new();
    tie_break.hash(&mut h);
    for c in contributions {
        c.bus.hash(&mut h);
        c.trace.to_bits().hash(&mut h);
        for v in c.w.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[derive(Debug, Clone)]
pub struct PlacementResult {
    pub p: usize,
    /// Selected buses, ascending, 1-based.
    pub z_star: Vec<usize>,
    /// `Σ_{i∈Z} trace_i`, rounded once from the exact sum.
    pub objective: f64,
    /// The exact sum in the problem's fixed-point scale.
    pub objective_exact: i128,
    pub conditioning: ObservabilityReport,
    pub condition_flag: bool,
    pub method: PlacementMethod,
    pub fingerprint: u64,
}

/// Bus order by trace, largest first, lower bus first among equals.
fn ranking(problem: &PlacementProblem) -> Vec<usize> {
    let mut order: Vec<usize> = (0..problem.n_candidates()).collect();
    let v = &problem.exact.values;
    let bus = |i: usize| problem.contributions[i].bus;
    order.sort_by(|&a, &b| match v[b].cmp(&v[a]) {
        Ordering::Equal => match problem.tie_break {
            TieBreak::LowestBus => bus(a).cmp(&bus(b)),
        },
        o => o,
    });
    order
}

/// Top-`p` buses by trace. Exact for a modular objective.
pub fn solve_apriori(problem: &PlacementProblem) -> Result<PlacementResult> {
    let order = ranking(problem);
    problem.result(order[..problem.p].to_vec(), PlacementMethod::Apriori)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Best of two candidates: larger objective, then lexicographically smaller
/// bus set.
fn better(a: (i128, Vec<usize>), b: (i128, Vec<usize>)) -> (i128, Vec<usize>) {
    match a.0.cmp(&b.0) {
        Ordering::Greater => a,
        Ordering::Less => b,
        Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

/// Advances `c` to the next `k`-combination of `0..n` in lexicographic
/// order; false when exhausted.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else {
        return false;
    };
    c[i] += 1;
    for j in i + 1..k {
        c[j] = c[j - 1] + 1;
    }
    true
}

/// Exhaustive search over all `p`-subsets, split across threads by first
/// element.
pub fn solve_bruteforce(problem: &PlacementProblem) -> Result<PlacementResult> {
    solve_bruteforce_capped(problem, ENUMERATION_CAP)
}

pub fn solve_bruteforce_capped(problem: &PlacementProblem, cap: u128) -> Result<PlacementResult> {
    let (n, p) = (problem.n_candidates(), problem.p);
    let count = binomial(n, p);
    if count > cap {
        return Err(Error::Domain(format!(
            "brute force over C({n}, {p}) = {count} subsets exceeds the cap of {cap}"
        )));
    }
    if p == 0 {
        return problem.result(Vec::new(), PlacementMethod::Bruteforce);
    }
    // Indices are in ascending bus order, so index order is bus order.
    let best = (0..=n - p)
        .into_par_iter()
        .map(|first| {
            // Lexicographic enumeration: keeping only strict improvements
            // leaves the smallest set among equal objectives.
            let mut set: Vec<usize> = (first..first + p).collect();
            let mut best = (problem.objective(&set), set.clone());
            while p > 1 && next_combination_from(&mut set[1..], first + 1, n) {
                let obj = problem.objective(&set);
                if obj > best.0 {
                    best.0 = obj;
                    best.1.copy_from_slice(&set);
                }
            }
            best
        })
        .reduce_with(better)
        .expect("n ≥ p ≥ 1 gives at least one subset");
    problem.result(best.1, PlacementMethod::Bruteforce)
}

/// Lexicographic successor of a combination drawn from `lo..n`.
fn next_combination_from(c: &mut [usize], lo: usize, n: usize) -> bool {
    for v in c.iter_mut() {
        *v -= lo;
    }
    let more = next_combination(c, n - lo);
    for v in c.iter_mut() {
        *v += lo;
    }
    more
}

/// Depth-first search over subsets in bus order with the bound
/// "current + the best traces still available". Explores every subset that
/// could beat the incumbent, so the result is exact regardless of `C(n, p)`.
pub fn solve_branch_and_bound(problem: &PlacementProblem) -> Result<PlacementResult> {
    let (n, p) = (problem.n_candidates(), problem.p);
    let v = &problem.exact.values;
    // top[i][m]: sum of the m largest traces among indices i..n.
    let top: Vec<Vec<i128>> = (0..=n)
        .map(|i| {
            let mut tail: Vec<i128> = v[i..].to_vec();
            tail.sort_unstable_by(|a, b| b.cmp(a));
            let mut acc = vec![0i128];
            for t in tail {
                acc.push(acc.last().unwrap() + t);
            }
            acc
        })
        .collect();

    struct Search<'a> {
        v: &'a [i128],
        top: &'a [Vec<i128>],
        n: usize,
        p: usize,
        chosen: Vec<usize>,
        best: Option<(i128, Vec<usize>)>,
    }
    impl Search<'_> {
        fn run(&mut self, next: usize, value: i128) {
            let need = self.p - self.chosen.len();
            if need == 0 {
                // Subsets are reached in lexicographic order, so only a strict
                // improvement replaces the incumbent.
                if self.best.as_ref().is_none_or(|b| value > b.0) {
                    self.best = Some((value, self.chosen.clone()));
                }
                return;
            }
            if self.n - next < need {
                return;
            }
            if let Some(b) = &self.best {
                if value + self.top[next][need] <= b.0 {
                    return;
                }
            }
            self.chosen.push(next);
            self.run(next + 1, value + self.v[next]);
            self.chosen.pop();
            self.run(next + 1, value);
        }
    }
    let mut s = Search {
        v,
        top: &top,
        n,
        p,
        chosen: Vec::with_capacity(p),
        best: None,
    };
    s.run(0, 0);
    let (_, set) = s.best.expect("n ≥ p gives at least one subset");
    problem.result(set, PlacementMethod::BranchAndBound)
}

/// True iff each selection contains the previous one. Results must come from
/// the same problem and be ordered by `p`.
pub fn nesting_check(results: &[PlacementResult]) -> Result<bool> {
    if let Some(w) = results.windows(2).find(|w| w[0].fingerprint != w[1].fingerprint) {
        return Err(Error::Validation(format!(
            "placements for p = {} and p = {} come from different problems",
            w[0].p, w[1].p
        )));
    }
    if let Some(w) = results.windows(2).find(|w| w[0].p > w[1].p) {
        return Err(Error::Validation(format!(
            "placements are not ordered by p ({} before {})",
            w[0].p, w[1].p
        )));
    }
    Ok(results
        .windows(2)
        .all(|w| w[0].z_star.iter().all(|b| w[1].z_star.binary_search(b).is_ok())))
}

/// Sensor count for a fraction of `n` candidates, rounded half up.
pub fn count_for_fraction(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("sensor fraction {fraction} outside [0, 1]")));
    }
    Ok((fraction * n as f64 + 0.5).floor() as usize)
}

/// Knobs of the estimation and placement experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub scheme: String,
    pub h: f64,
    pub sim: SimConfig,
    pub disturbance: Disturbance,
    pub noise_pct: f64,
    pub seed: u64,
    pub n_o: usize,
    pub h_g: f64,
    pub gn_tol: f64,
    pub gn_max_iter: usize,
    pub newton_tol: f64,
    pub jacobian: GnJacobian,
    pub recursion: Recursion,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scheme: "bdf3".into(),
            h: 0.1,
            sim: SimConfig::default(),
            disturbance: Disturbance::uniform(4.0),
            noise_pct: 2.0,
            seed: 42,
            n_o: 10,
            h_g: 0.1,
            gn_tol: 1e-4,
            gn_max_iter: 200,
            newton_tol: 1e-10,
            jacobian: GnJacobian::Exact,
            recursion: Recursion::Exact,
        }
    }
}

/// Truth, assumed initial state and noisy readings of one experiment.
///
/// The true initial state is the steady state of the base case. The load and
/// renewable disturbance acts from the first step on, and the estimator
/// starts from the steady state of the disturbed case.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub scheme: Scheme,
    pub layout: StateLayout,
    pub schedule: LoadSchedule,
    pub u: InputVector,
    pub x0: DVector<f64>,
    pub guess: DVector<f64>,
    /// Every state of the true window with noise on all `(v, θ)` channels.
    pub noisy: Vec<DVector<f64>>,
    pub mhe: MheConfig,
}

impl Study {
    /// `raw` is the case as loaded; renewables are installed here.
    pub fn prepare(raw: &NetworkCase, config: &StudyConfig) -> Result<Self> {
        config.sim.validate()?;
        if !(config.noise_pct >= 0.0) {
            return Err(Error::Config(format!(
                "noise {}% must be nonnegative",
                config.noise_pct
            )));
        }
        let scheme = Scheme::parse(&config.scheme, config.h)?;
        let base = config.disturbance.base_case(raw)?;
        let (x0, u) = init_steady_state_with(&base, config.sim.governor)?;
        let (guess, _) = init_steady_state_with(&apply_disturbance(&base, &config.disturbance), config.sim.governor)?;
        let layout = StateLayout::of(&base);
        let schedule = LoadSchedule::new(&base, &config.disturbance);
        let mut mhe = MheConfig::new(guess.clone(), &layout);
        mhe.n_o = config.n_o;
        mhe.h_g = config.h_g;
        mhe.gn_tol = config.gn_tol;
        mhe.gn_max_iter = config.gn_max_iter;
        mhe.newton_tol = config.newton_tol;
        mhe.jacobian = config.jacobian;
        mhe.validate()?;
        let truth = simulate_steps(
            &x0,
            &u,
            &schedule,
            &scheme,
            &mhe.simulation_config(&config.sim),
            mhe.n_o - 1,
        )?;
        let noisy = noisy_states(&truth, &layout, config.noise_pct, config.seed);
        Ok(Study {
            config: config.clone(),
            scheme,
            layout,
            schedule,
            u,
            x0,
            guess,
            noisy,
            mhe,
        })
    }

    pub fn n_bus(&self) -> usize {
        self.layout.n_bus
    }

    pub fn measurements(&self, selection: &SensorSelection) -> MeasurementSeries {
        let rows = selection.channels(&self.layout);
        MeasurementSeries {
            y: self
                .noisy
                .iter()
                .map(|x| DVector::from_fn(rows.len(), |i, _| x[rows[i]]))
                .collect(),
            noise_pct: self.config.noise_pct,
            seed: self.config.seed,
            selection: selection.clone(),
        }
    }

    /// Gauss-Newton estimate with `selection`, scored against the truth.
    pub fn estimate(&self, selection: &SensorSelection) -> Result<GnReport> {
        let meas = self.measurements(selection);
        let mut rep = gauss_newton_estimate(
            &meas,
            &self.u,
            &self.schedule,
            &self.scheme,
            &self.config.sim,
            &self.mhe,
        )?;
        rep.score(&self.x0)?;
        Ok(rep)
    }

    /// Per-bus Gramians along the window simulated from `x0`.
    pub fn contributions_at(&self, x0: &DVector<f64>) -> Result<Vec<GramianContribution>> {
        let sim = self.mhe.simulation_config(&self.config.sim);
        let window = simulate_steps(x0, &self.u, &self.schedule, &self.scheme, &sim, self.mhe.n_o - 1)?;
        let chain = propagate_chain(
            &window.states,
            &self.u,
            &self.schedule,
            &self.scheme,
            &sim,
            self.mhe.n_o,
            self.config.recursion,
        )?;
        Ok(per_sensor_contributions(&chain, &self.layout))
    }
}

/// Estimation error of a placement; `epsilon` is infinite when the
/// estimator breaks down numerically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub buses: Vec<usize>,
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    pub regularized: bool,
}

pub fn evaluate_placement(selection: &SensorSelection, study: &Study) -> Result<Evaluation> {
    match study.estimate(selection) {
        Ok(rep) => Ok(Evaluation {
            buses: selection.buses().to_vec(),
            epsilon: rep.epsilon.unwrap_or(f64::INFINITY),
            converged: rep.converged,
            iterations: rep.iterations,
            regularized: rep.regularized,
        }),
        Err(e) if e.is_numerical() => Ok(Evaluation {
            buses: selection.buses().to_vec(),
            epsilon: f64::INFINITY,
            converged: false,
            iterations: 0,
            regularized: false,
        }),
        Err(e) => Err(e),
    }
}

/// Outcome of estimating with every bus, building the Gramian at the
/// estimate and placing `p` sensors for each requested count.
#[derive(Debug, Clone)]
pub struct PlacementRun {
    pub full_estimate: GnReport,
    pub contributions: Vec<GramianContribution>,
    pub results: Vec<PlacementResult>,
    pub nested: bool,
}

pub fn run_placement(study: &Study, counts: &[usize]) -> Result<PlacementRun> {
    let full_estimate = study.estimate(&SensorSelection::all(study.n_bus()))?;
    let contributions = study.contributions_at(&full_estimate.x0_hat)?;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let base = PlacementProblem::new(contributions.clone(), 0)?;
    let results = sorted
        .iter()
        .map(|&p| solve_apriori(&base.with_p(p)?))
        .collect::<Result<Vec<_>>>()?;
    let nested = nesting_check(&results)?;
    Ok(PlacementRun {
        full_estimate,
        contributions,
        results,
        nested,
    })
}
