//! Implicit time stepping of the NDAE model (`ẋ_d = f`, `0 = g`) or its
//! relaxation (`ẋ_d = f`, `μ ẋ_a = g`) with backward Euler, BDF(k) or the
//! trapezoidal rule, each step solved by Newton-Raphson.
//!
//! With `E_μ = diag(I, μI)` a BE/BDF step solves
//!
//! ```text
//! φ(x_k) = E_μ (x_k − Σ_s α_s x_{k−s}) − h̃ [f; g](x_k) = 0,      h̃ = βh
//! ```
//!
//! and a trapezoidal step solves
//! `E_μ (x_k − x_{k−1}) − h̃ ([f; g](x_k) + [f; g](x_{k−1})) = 0` with `h̃ = h/2`.
//! In NDAE mode the algebraic rows are replaced by `g(x_k) = 0`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, GovernorSign, InputVector, StateLayout};
use crate::error::{Error, Result};
use crate::netmodel::{apply_disturbance, Disturbance, NetworkCase};

pub const MAX_BDF_ORDER: usize = 5;

/// BDF coefficients: `β = (Σ_{s=1..k} 1/s)⁻¹` and
/// `α_s = (−1)^{s−1} β Σ_{j=s..k} C(j, s)/j`.
pub fn bdf_coefficients(k: usize) -> Result<(f64, Vec<f64>)> {
    if !(1..=MAX_BDF_ORDER).contains(&k) {
        return Err(Error::Domain(format!("BDF order {k} outside 1..={MAX_BDF_ORDER}")));
    }
    let beta = 1.0 / (1..=k).map(|s| 1.0 / s as f64).sum::<f64>();
    let alpha = (1..=k)
        .map(|s| {
            let sum: f64 = (s..=k).map(|j| binomial(j, s) / j as f64).sum();
            let sign = if s % 2 == 1 { 1.0 } else { -1.0 };
            sign * beta * sum
        })
        .collect();
    Ok((beta, alpha))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    BackwardEuler,
    Bdf(usize),
    Trapezoidal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scheme {
    method: Method,
    h: f64,
    beta: f64,
    alpha: Vec<f64>,
}

impl Scheme {
    pub fn backward_euler(h: f64) -> Self {
        Scheme {
            method: Method::BackwardEuler,
            h,
            beta: 1.0,
            alpha: vec![1.0],
        }
    }

    pub fn bdf(k: usize, h: f64) -> Result<Self> {
        let (beta, alpha) = bdf_coefficients(k)?;
        Ok(Scheme {
            method: Method::Bdf(k),
            h,
            beta,
            alpha,
        })
    }

    pub fn trapezoidal(h: f64) -> Self {
        Scheme {
            method: Method::Trapezoidal,
            h,
            beta: 0.5,
            alpha: vec![1.0],
        }
    }

    /// Parses `be`, `bdf1` … `bdf5` or `ti`.
    pub fn parse(spec: &str, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("step size must be positive, got {h}")));
        }
        match spec.to_ascii_lowercase().as_str() {
            "be" => Ok(Self::backward_euler(h)),
            "ti" | "trap" => Ok(Self::trapezoidal(h)),
            s => match s.strip_prefix("bdf").and_then(|k| k.parse().ok()) {
                Some(k) => Self::bdf(k, h),
                None => Err(Error::Config(format!("unknown scheme '{spec}' (be, bdf1..bdf5, ti)"))),
            },
        }
    }

    pub fn name(&self) -> String {
        match self.method {
            Method::BackwardEuler => "be".into(),
            Method::Bdf(k) => format!("bdf{k}"),
            Method::Trapezoidal => "ti".into(),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Effective step multiplying the right-hand side.
    pub fn h_tilde(&self) -> f64 {
        self.beta * self.h
    }

    /// Number of past states a step consumes.
    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_trapezoidal(&self) -> bool {
        self.method == Method::Trapezoidal
    }

    /// The scheme used at step `k ≥ 1`: BDF(k_g) ramps its order as
    /// `min(k, k_g)` so the first steps only need the history they have.
    pub fn at_step(&self, k: usize) -> Scheme {
        match self.method {
            Method::Bdf(kg) if k < kg => Scheme::bdf(k.max(1), self.h).expect("order in range"),
            _ => self.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Algebraic rows imposed exactly: `0 = g(x_k)`.
    Ndae,
    /// Algebraic rows relaxed to `μ ẋ_a = g`.
    Mu,
}

/// Newton matrix used for trapezoidal steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiJacobian {
    /// `∂φ/∂x_k`, i.e. `E_μ − h̃ J(x_k)`.
    #[default]
    Exact,
    /// `E_μ − h̃ (J(x_k) + J(x_{k−1}))`, a modified-Newton matrix.
    Summed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    pub mu: f64,
    pub t_end: f64,
    pub nr_tol: f64,
    pub nr_max_iter: usize,
    pub governor: GovernorSign,
    pub ti_jacobian: TiJacobian,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Mu,
            mu: 1e-6,
            t_end: 30.0,
            nr_tol: 1e-2,
            nr_max_iter: 10,
            governor: GovernorSign::Stable,
            ti_jacobian: TiJacobian::Exact,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Mu && !(self.mu > 0.0) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if self.nr_max_iter == 0 {
            return Err(Error::Config("nr_max_iter must be at least 1".into()));
        }
        if !(self.nr_tol > 0.0) {
            return Err(Error::Config(format!("nr_tol must be positive, got {}", self.nr_tol)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::Config(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        Ok(())
    }

    /// Diagonal of `E_μ`; the NDAE mass matrix has zeros on algebraic rows.
    pub fn mass_diagonal(&self, layout: &StateLayout) -> DVector<f64> {
        let a = match self.mode {
            Mode::Mu => self.mu,
            Mode::Ndae => 0.0,
        };
        DVector::from_fn(layout.n(), |k, _| if k < layout.n_d() { 1.0 } else { a })
    }
}

/// Loads in force at each step: the base case at `t = 0`, the disturbed case
/// from the first step on.
#[derive(Debug, Clone)]
pub struct LoadSchedule {
    pub base: NetworkCase,
    pub disturbed: NetworkCase,
}

impl LoadSchedule {
    pub fn new(base: &NetworkCase, d: &Disturbance) -> Self {
        LoadSchedule {
            base: base.clone(),
            disturbed: apply_disturbance(base, d),
        }
    }

    pub fn constant(case: &NetworkCase) -> Self {
        LoadSchedule {
            base: case.clone(),
            disturbed: case.clone(),
        }
    }

    pub fn at(&self, k: usize) -> &NetworkCase {
        if k == 0 {
            &self.base
        } else {
            &self.disturbed
        }
    }
}

/// One implicit step: the scheme in force, the loads at `t_k` and `t_{k−1}`,
/// and the inputs.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub now: Dynamics<'a>,
    pub prev: Dynamics<'a>,
    pub input: &'a InputVector,
    pub scheme: Scheme,
    pub cfg: &'a SimConfig,
}

impl<'a> StepContext<'a> {
    pub fn new(case: &'a NetworkCase, input: &'a InputVector, scheme: &Scheme, cfg: &'a SimConfig) -> Self {
        Self::with_cases(case, case, input, scheme, cfg)
    }

    pub fn with_cases(
        now: &'a NetworkCase,
        prev: &'a NetworkCase,
        input: &'a InputVector,
        scheme: &Scheme,
        cfg: &'a SimConfig,
    ) -> Self {
        StepContext {
            now: Dynamics::new(now, cfg.governor),
            prev: Dynamics::new(prev, cfg.governor),
            input,
            scheme: scheme.clone(),
            cfg,
        }
    }

    pub fn layout(&self) -> StateLayout {
        self.now.layout()
    }

    fn check_history(&self, history: &[&DVector<f64>]) -> Result<()> {
        if history.len() < self.scheme.order() {
            return Err(Error::Dimension(format!(
                "{} needs {} past states, got {}",
                self.scheme.name(),
                self.scheme.order(),
                history.len()
            )));
        }
        Ok(())
    }

    /// `φ(x_k)`; `history[0]` is `x_{k−1}`, `history[1]` is `x_{k−2}`, ….
    pub fn residual(&self, x: &DVector<f64>, history: &[&DVector<f64>]) -> Result<DVector<f64>> {
        self.check_history(history)?;
        let l = self.layout();
        let nd = l.n_d();
        let ht = self.scheme.h_tilde();
        let mut rhs = self.now.rhs(x, self.input);
        let algebraic = rhs.rows(nd, l.n_a()).into_owned();

        let mut memory = x.clone();
        if self.scheme.is_trapezoidal() {
            memory -= history[0];
            rhs += self.prev.rhs(history[0], self.input);
        } else {
            for (a, past) in self.scheme.alpha().iter().zip(history) {
                memory.axpy(-a, past, 1.0);
            }
        }

        let e = self.cfg.mass_diagonal(&l);
        let mut phi = memory.component_mul(&e) - rhs * ht;
        if self.cfg.mode == Mode::Ndae {
            phi.rows_mut(nd, l.n_a()).copy_from(&algebraic);
        }
        Ok(phi)
    }

    /// `∂φ/∂x_k` (or the summed trapezoidal matrix when configured).
    pub fn jacobian(&self, x: &DVector<f64>, history: &[&DVector<f64>]) -> Result<DMatrix<f64>> {
        self.check_history(history)?;
        let summed = self.scheme.is_trapezoidal() && self.cfg.ti_jacobian == TiJacobian::Summed;
        let mut j = self.now.jacobian(x);
        if summed {
            j += self.prev.jacobian(history[0]);
        }
        Ok(self.step_matrix(j))
    }

    /// Exact `∂φ/∂x_k` regardless of the Newton-matrix setting.
    pub fn exact_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.step_matrix(self.now.jacobian(x))
    }

    fn step_matrix(&self, j: DMatrix<f64>) -> DMatrix<f64> {
        let l = self.layout();
        let nd = l.n_d();
        let ht = self.scheme.h_tilde();
        let algebraic = j.rows(nd, l.n_a()).into_owned();
        let mut a = j * (-ht);
        let e = self.cfg.mass_diagonal(&l);
        for k in 0..l.n() {
            a[(k, k)] += e[k];
        }
        if self.cfg.mode == Mode::Ndae {
            a.rows_mut(nd, l.n_a()).copy_from(&algebraic);
        }
        a
    }

    /// `R_s = −∂φ/∂x_{k−s}` for `s = 1..order`.
    pub fn history_jacobians(&self, history: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        self.check_history(history)?;
        let l = self.layout();
        let e = DMatrix::from_diagonal(&self.cfg.mass_diagonal(&l));
        if !self.scheme.is_trapezoidal() {
            return Ok(self.scheme.alpha().iter().map(|a| &e * *a).collect());
        }
        let mut r = self.prev.jacobian(history[0]) * self.scheme.h_tilde();
        if self.cfg.mode == Mode::Ndae {
            r.rows_mut(l.n_d(), l.n_a()).fill(0.0);
        }
        Ok(vec![e + r])
    }

    /// Newton-Raphson from `guess`: `x ← x − A⁻¹ φ(x)` until the increment's
    /// 2-norm drops below `nr_tol`. Returns the state and the number of
    /// linear solves.
    pub fn newton(&self, guess: DVector<f64>, history: &[&DVector<f64>]) -> Result<(DVector<f64>, usize)> {
        let mut x = guess;
        for it in 1..=self.cfg.nr_max_iter {
            let phi = self.residual(&x, history)?;
            let a = self.jacobian(&x, history)?;
            let dx = a
                .lu()
                .solve(&phi)
                .filter(|d| d.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::LinearSolve("singular step Jacobian".into()))?;
            x -= &dx;
            if dx.norm() < self.cfg.nr_tol {
                return Ok((x, it));
            }
        }
        let residual = self.residual(&x, history)?.norm();
        Err(Error::Convergence {
            iterations: self.cfg.nr_max_iter,
            last_norm: residual,
        })
    }

    /// One-step sensitivities `S_s = ∂x_k/∂x_{k−s}` from `A S_s = R_s`.
    pub fn sensitivities(&self, x: &DVector<f64>, history: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let r = self.history_jacobians(history)?;
        let lu = self.exact_jacobian(x).lu();
        r.iter()
            .map(|rs| {
                lu.solve(rs)
                    .filter(|s| s.iter().all(|v| v.is_finite()))
                    .ok_or_else(|| Error::LinearSolve("singular step Jacobian in sensitivity solve".into()))
            })
            .collect()
    }
}

/// Free-function form of [`StepContext::residual`] on a single case.
pub fn implicit_residual_phi(
    x_k: &DVector<f64>,
    history: &[&DVector<f64>],
    u: &InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
) -> Result<DVector<f64>> {
    StepContext::new(case, u, scheme, cfg).residual(x_k, history)
}

pub fn assemble_step_jacobian(
    x_k: &DVector<f64>,
    history: &[&DVector<f64>],
    u: &InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
) -> Result<DMatrix<f64>> {
    StepContext::new(case, u, scheme, cfg).jacobian(x_k, history)
}

pub fn newton_step(
    guess: DVector<f64>,
    history: &[&DVector<f64>],
    u: &InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
) -> Result<(DVector<f64>, usize)> {
    StepContext::new(case, u, scheme, cfg).newton(guess, history)
}

/// Sensitivities of one step in the relaxed model; see
/// [`StepContext::sensitivities`].
pub fn step_sensitivity(
    x_k: &DVector<f64>,
    history: &[&DVector<f64>],
    u: &InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
) -> Result<Vec<DMatrix<f64>>> {
    if cfg.mode != Mode::Mu {
        return Err(Error::Domain(
            "step sensitivities are defined for the relaxed (mu) model".into(),
        ));
    }
    StepContext::new(case, u, scheme, cfg).sensitivities(x_k, history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Newton iterations per step; entry 0 (the initial state) is 0.
    pub newton_iters: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Every `stride`-th sample, starting at `t = 0`.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        let keep = |k: &usize| k.is_multiple_of(stride);
        Trajectory {
            h: self.h * stride as f64,
            times: (0..self.len()).filter(keep).map(|k| self.times[k]).collect(),
            states: (0..self.len()).filter(keep).map(|k| self.states[k].clone()).collect(),
            newton_iters: (0..self.len()).filter(keep).map(|k| self.newton_iters[k]).collect(),
        }
    }

    /// CSV with header `t,delta_1,…,theta_N`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W, layout: &StateLayout) -> std::io::Result<()> {
        writeln!(out, "t,{}", layout.labels().join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.16e}")?;
            for v in x.iter() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Advances `x0` for `steps` steps under a load schedule. Each Newton solve
/// is warm-started from the previous state.
pub fn simulate_steps(
    x0: &DVector<f64>,
    u: &InputVector,
    schedule: &LoadSchedule,
    scheme: &Scheme,
    cfg: &SimConfig,
    steps: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    let l = StateLayout::of(&schedule.base);
    if x0.len() != l.n() || u.e_fd.len() != l.n_gen || u.t_r.len() != l.n_gen {
        return Err(Error::Dimension(format!(
            "state of length {} and input of length {} do not fit a case with n = {}",
            x0.len(),
            u.len(),
            l.n()
        )));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut iters = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    iters.push(0);
    for k in 1..=steps {
        let sch = scheme.at_step(k);
        let ctx = StepContext::with_cases(schedule.at(k), schedule.at(k - 1), u, &sch, cfg);
        let history: Vec<&DVector<f64>> = (1..=sch.order()).map(|s| &states[k - s]).collect();
        let (x, it) = ctx.newton(states[k - 1].clone(), &history).map_err(|e| e.at_step(k))?;
        states.push(x);
        iters.push(it);
    }
    Ok(Trajectory {
        h: scheme.h(),
        times: (0..=steps).map(|k| k as f64 * scheme.h()).collect(),
        states,
        newton_iters: iters,
    })
}

/// Simulates to `cfg.t_end` with the disturbance applied from `t = h` on.
pub fn simulate(
    x0: &DVector<f64>,
    u: &InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
    disturbance: &Disturbance,
) -> Result<Trajectory> {
    let steps = (cfg.t_end / scheme.h()).round() as usize;
    simulate_steps(x0, u, &LoadSchedule::new(case, disturbance), scheme, cfg, steps)
}

fn check_aligned(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "trajectories have {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    let tol = 1e-9 * a.h.max(b.h);
    if let Some(k) = (0..a.len()).find(|&k| (a.times[k] - b.times[k]).abs() > tol) {
        return Err(Error::Dimension(format!(
            "time grids differ at sample {k}: {} vs {}",
            a.times[k], b.times[k]
        )));
    }
    Ok(())
}

/// `sqrt(Σ_{k=1..T} ‖a_k − b_k‖² / T)` over the stepped samples.
pub fn rmse(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_aligned(a, b)?;
    let t = a.len().saturating_sub(1);
    if t == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (1..a.len()).map(|k| (&a.states[k] - &b.states[k]).norm_squared()).sum();
    Ok((sum / t as f64).sqrt())
}

/// `sqrt(Σ_{k=1..T} ‖a_k − b_k‖²)`, the accumulated deviation.
pub fn accumulated_error(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_aligned(a, b)?;
    Ok((1..a.len())
        .map(|k| (&a.states[k] - &b.states[k]).norm_squared())
        .sum::<f64>()
        .sqrt())
}

/// The reference against which schemes are ranked: BDF(3) on the exact NDAE
/// with `h = 1e-3` and a tight Newton tolerance, sampled on the `h_out` grid.
pub fn reference_trajectory(
    x0: &DVector<f64>,
    u: &InputVector,
    case: &NetworkCase,
    disturbance: &Disturbance,
    t_end: f64,
    h_out: f64,
) -> Result<Trajectory> {
    const H_REF: f64 = 1e-3;
    let stride = (h_out / H_REF).round() as usize;
    if stride == 0 || ((stride as f64) * H_REF - h_out).abs() > 1e-12 {
        return Err(Error::Domain(format!(
            "output step {h_out} is not a multiple of {H_REF}"
        )));
    }
    let cfg = SimConfig {
        mode: Mode::Ndae,
        t_end,
        nr_tol: 1e-8,
        ..SimConfig::default()
    };
    let scheme = Scheme::bdf(3, H_REF)?;
    let steps = (t_end / H_REF).round() as usize;
    let fine = simulate_steps(x0, u, &LoadSchedule::new(case, disturbance), &scheme, &cfg, steps)?;
    let mut out = fine.subsample(stride);
    out.times = (0..out.len()).map(|k| k as f64 * h_out).collect();
    out.h = h_out;
    Ok(out)
}

/// One row of a relaxation sweep: the relaxed run against the exact NDAE
/// run with the same scheme and step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuSweepPoint {
    pub mu: f64,
    /// `false` when the relaxed run broke down; the errors are then infinite.
    pub converged: bool,
    pub rmse: f64,
    /// `sqrt(Σ_k ‖e_k‖²)`.
    pub accumulated: f64,
    /// `10 μ √t_end`.
    pub bound: f64,
}

/// Compares the relaxed model at each `mu` with the NDAE model. A failing
/// NDAE run is an error; a failing relaxed run is reported in its row.
pub fn mu_sweep(
    x0: &DVector<f64>,
    u: &InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
    disturbance: &Disturbance,
    mus: &[f64],
) -> Result<Vec<MuSweepPoint>> {
    let exact = SimConfig {
        mode: Mode::Ndae,
        ..cfg.clone()
    };
    let reference = simulate(x0, u, case, scheme, &exact, disturbance)?;
    mus.iter()
        .map(|&mu| {
            let relaxed = SimConfig {
                mode: Mode::Mu,
                mu,
                ..cfg.clone()
            };
            relaxed.validate()?;
            let bound = 10.0 * mu * cfg.t_end.sqrt();
            match simulate(x0, u, case, scheme, &relaxed, disturbance) {
                Ok(tr) => Ok(MuSweepPoint {
                    mu,
                    converged: true,
                    rmse: rmse(&tr, &reference)?,
                    accumulated: accumulated_error(&tr, &reference)?,
                    bound,
                }),
                Err(e) if e.is_numerical() => Ok(MuSweepPoint {
                    mu,
                    converged: false,
                    rmse: f64::INFINITY,
                    accumulated: f64::INFINITY,
                    bound,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}
