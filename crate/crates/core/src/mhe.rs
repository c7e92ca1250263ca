//! Moving-horizon estimation of the initial state by Gauss-Newton.
//!
//! The unknown is the stacked window `q = [x_0; …; x_{N_o−1}]` and the
//! residual stacks the measurement misfit and the discretized dynamics:
//!
//! ```text
//! r_y,k = y_k − C̃ x_k
//! r_x,0 = [0; −h̃ g(x_0)]             (algebraic consistency of x_0)
//! r_x,k = φ_k(x_k; x_{k−1}, …)        (the integrator's step residual)
//! ```
//!
//! Each iteration re-simulates the window from the current `x̂_0`, takes one
//! damped Gauss-Newton step `q ← q − h_g (JᵀJ)⁻¹ Jᵀ r` and keeps its first
//! block, projected onto the box bounds.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, InputVector, StateLayout};
use crate::error::{Error, Result};
use crate::integrator::{simulate_steps, LoadSchedule, Mode, Scheme, SimConfig, StepContext, Trajectory};
use crate::observability::SensorSelection;

/// Ridge added to the scaled normal equations when they are not positive
/// definite.
pub const RIDGE: f64 = 1e-10;

/// Which Jacobian of the dynamics residual Gauss-Newton uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GnJacobian {
    /// Diagonal step Jacobians plus the couplings `∂r_x,k/∂x_{k−s}`.
    #[default]
    Exact,
    /// Block-diagonal step Jacobians only.
    BlockDiagonal,
}

/// Box `[lower, upper]` on the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl StateBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "bounds of lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Config(format!(
                "bound {i} is not ordered: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(StateBounds { lower, upper })
    }

    /// Algebraic states within `±max(20 %, 0.1)` of `guess`, differential
    /// states within `±max(|x|, 1)`.
    pub fn around(guess: &DVector<f64>, layout: &StateLayout) -> Self {
        let width = DVector::from_fn(guess.len(), |i, _| {
            let x = guess[i].abs();
            if i < layout.n_d() {
                x.max(1.0)
            } else {
                (0.2 * x).max(0.1)
            }
        });
        StateBounds {
            lower: guess - &width,
            upper: guess + &width,
        }
    }

    pub fn unbounded(n: usize) -> Self {
        StateBounds {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .enumerate()
                .all(|(i, v)| self.lower[i] <= *v && *v <= self.upper[i])
    }

    pub fn project(&self, x: &mut DVector<f64>) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MheConfig {
    pub n_o: usize,
    pub h_g: f64,
    pub gn_tol: f64,
    pub gn_max_iter: usize,
    pub bounds: StateBounds,
    pub initial_guess: DVector<f64>,
    /// Newton tolerance of the window simulations inside each iteration.
    pub newton_tol: f64,
    pub jacobian: GnJacobian,
}

impl MheConfig {
    /// Defaults around an assumed initial state.
    pub fn new(initial_guess: DVector<f64>, layout: &StateLayout) -> Self {
        MheConfig {
            n_o: 10,
            h_g: 0.1,
            gn_tol: 1e-4,
            gn_max_iter: 200,
            bounds: StateBounds::around(&initial_guess, layout),
            initial_guess,
            newton_tol: 1e-10,
            jacobian: GnJacobian::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_o < 2 {
            return Err(Error::Config(format!("horizon N_o = {} must be at least 2", self.n_o)));
        }
        if !(self.h_g > 0.0 && self.h_g <= 1.0) {
            return Err(Error::Config(format!("GN step h_g = {} outside (0, 1]", self.h_g)));
        }
        if !(self.gn_tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.bounds.lower.len() != self.initial_guess.len() {
            return Err(Error::Dimension(format!(
                "bounds of length {} for a state of length {}",
                self.bounds.lower.len(),
                self.initial_guess.len()
            )));
        }
        if !self.bounds.contains(&self.initial_guess) {
            return Err(Error::Config("initial guess lies outside the bounds".into()));
        }
        Ok(())
    }

    /// `cfg` with the Newton tolerance used for window simulations.
    pub fn simulation_config(&self, cfg: &SimConfig) -> SimConfig {
        SimConfig {
            nr_tol: self.newton_tol,
            nr_max_iter: cfg.nr_max_iter.max(30),
            ..cfg.clone()
        }
    }
}

/// Noisy PMU readings `y_k = C̃ x_k + η_k`, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub y: Vec<DVector<f64>>,
    pub noise_pct: f64,
    pub seed: u64,
    pub selection: SensorSelection,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The same noise realization restricted to the buses of `selection`.
    pub fn restrict(&self, full: &[DVector<f64>], selection: &SensorSelection, layout: &StateLayout) -> Self {
        let rows = selection.channels(layout);
        MeasurementSeries {
            y: full
                .iter()
                .map(|x| DVector::from_fn(rows.len(), |i, _| x[rows[i]]))
                .collect(),
            noise_pct: self.noise_pct,
            seed: self.seed,
            selection: selection.clone(),
        }
    }
}

/// Every `(v, θ)` channel of every state with Gaussian noise of standard
/// deviation `noise_pct/100 · |value|`, returned as full state vectors whose
/// non-measurement entries are left untouched. Draws follow a fixed order
/// (step, bus, v before θ) so a bus sees the same noise under any selection.
pub fn noisy_states(traj: &Trajectory, layout: &StateLayout, noise_pct: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = noise_pct / 100.0;
    traj.states
        .iter()
        .map(|x| {
            let mut y = x.clone();
            for b in 0..layout.n_bus {
                for idx in [layout.v(b), layout.theta(b)] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    y[idx] += scale * x[idx].abs() * z;
                }
            }
            y
        })
        .collect()
}

pub fn synthesize_measurements(
    traj: &Trajectory,
    selection: &SensorSelection,
    layout: &StateLayout,
    noise_pct: f64,
    seed: u64,
) -> MeasurementSeries {
    let noisy = noisy_states(traj, layout, noise_pct, seed);
    let rows = selection.channels(layout);
    MeasurementSeries {
        y: noisy
            .iter()
            .map(|x| DVector::from_fn(rows.len(), |i, _| x[rows[i]]))
            .collect(),
        noise_pct,
        seed,
        selection: selection.clone(),
    }
}

/// The window `[x_0; …; x_{N_o−1}]` as one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedStates {
    pub q: DVector<f64>,
    n: usize,
}

impl StackedStates {
    pub fn from_states(states: &[DVector<f64>]) -> Result<Self> {
        let n = states.first().map_or(0, |x| x.len());
        if n == 0 || states.iter().any(|x| x.len() != n) {
            return Err(Error::Dimension(
                "stacked states must be non-empty and of equal length".into(),
            ));
        }
        let mut q = DVector::zeros(n * states.len());
        for (k, x) in states.iter().enumerate() {
            q.rows_mut(k * n, n).copy_from(x);
        }
        Ok(StackedStates { q, n })
    }

    pub fn from_vector(q: DVector<f64>, n: usize) -> Result<Self> {
        if n == 0 || !q.len().is_multiple_of(n) {
            return Err(Error::Dimension(format!("length {} is not a multiple of {n}", q.len())));
        }
        Ok(StackedStates { q, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_o(&self) -> usize {
        self.q.len() / self.n
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.q.rows(k * self.n, self.n).into_owned()
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        (0..self.n_o()).map(|k| self.state(k)).collect()
    }
}

fn check_window(q: &StackedStates, meas: &MeasurementSeries, layout: &StateLayout) -> Result<()> {
    if q.n() != layout.n() {
        return Err(Error::Dimension(format!(
            "state length {} for a case with n = {}",
            q.n(),
            layout.n()
        )));
    }
    if meas.len() < q.n_o() {
        return Err(Error::Dimension(format!(
            "{} measurement rows for a horizon of {}",
            meas.len(),
            q.n_o()
        )));
    }
    if meas.selection.n_bus() != layout.n_bus {
        return Err(Error::Dimension(format!(
            "selection over {} buses for a case with {}",
            meas.selection.n_bus(),
            layout.n_bus
        )));
    }
    Ok(())
}

fn step_context<'a>(
    k: usize,
    u: &'a InputVector,
    schedule: &'a LoadSchedule,
    scheme: &Scheme,
    cfg: &'a SimConfig,
) -> StepContext<'a> {
    StepContext::with_cases(schedule.at(k), schedule.at(k - 1), u, &scheme.at_step(k), cfg)
}

/// Weight of the algebraic rows of `r_x,0`, matching the step residual's
/// convention: `−h̃` in the relaxed model, `1` in the exact one.
fn initial_weight(scheme: &Scheme, cfg: &SimConfig) -> f64 {
    match cfg.mode {
        Mode::Mu => -scheme.at_step(1).h_tilde(),
        Mode::Ndae => 1.0,
    }
}

/// `r = [r_y; r_x]` of length `N_o · n_p + N_o · n`.
pub fn build_residual(
    q: &StackedStates,
    meas: &MeasurementSeries,
    u: &InputVector,
    schedule: &LoadSchedule,
    scheme: &Scheme,
    cfg: &SimConfig,
) -> Result<DVector<f64>> {
    let layout = StateLayout::of(&schedule.base);
    check_window(q, meas, &layout)?;
    let (n, n_o) = (q.n(), q.n_o());
    let rows = meas.selection.channels(&layout);
    let np = rows.len();
    let xs = q.states();
    let mut r = DVector::zeros(n_o * (np + n));

    for (k, x) in xs.iter().enumerate() {
        for (i, &row) in rows.iter().enumerate() {
            r[k * np + i] = meas.y[k][i] - x[row];
        }
    }
    let off = n_o * np;
    let g0 = Dynamics::new(schedule.at(0), cfg.governor).g(&xs[0]) * initial_weight(scheme, cfg);
    r.rows_mut(off + layout.n_d(), layout.n_a()).copy_from(&g0);
    for k in 1..n_o {
        let ctx = step_context(k, u, schedule, scheme, cfg);
        let history: Vec<&DVector<f64>> = (1..=ctx.scheme.order()).map(|s| &xs[k - s]).collect();
        let phi = ctx.residual(&xs[k], &history)?;
        r.rows_mut(off + k * n, n).copy_from(&phi);
    }
    Ok(r)
}

/// Gauss-Newton Jacobian in block form. `diag[k] = ∂r_x,k/∂x_k` and
/// `coupling[k][s−1] = ∂r_x,k/∂x_{k−s}`; the measurement block is `−C̃` on
/// `channels`.
#[derive(Debug, Clone)]
pub struct BlockJacobian {
    pub channels: Vec<usize>,
    pub diag: Vec<DMatrix<f64>>,
    pub coupling: Vec<Vec<DMatrix<f64>>>,
}

impl BlockJacobian {
    pub fn n(&self) -> usize {
        self.diag.first().map_or(0, |d| d.ncols())
    }

    pub fn n_o(&self) -> usize {
        self.diag.len()
    }

    /// Largest lag with a coupling block.
    pub fn bandwidth(&self) -> usize {
        self.coupling.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, n_o, np) = (self.n(), self.n_o(), self.channels.len());
        let off = n_o * np;
        let mut j = DMatrix::zeros(n_o * (np + n), n_o * n);
        for k in 0..n_o {
            for (i, &c) in self.channels.iter().enumerate() {
                j[(k * np + i, k * n + c)] = -1.0;
            }
            j.view_mut((off + k * n, k * n), (n, n)).copy_from(&self.diag[k]);
            for (s0, b) in self.coupling[k].iter().enumerate() {
                let col = (k - s0 - 1) * n;
                j.view_mut((off + k * n, col), (n, n)).copy_from(b);
            }
        }
        j
    }

    /// `JᵀJ` as lower blocks `h[i][i−j]` for `0 ≤ i − j ≤ bandwidth`, and
    /// `Jᵀ r`.
    fn normal_equations(&self, r: &DVector<f64>) -> (Vec<Vec<DMatrix<f64>>>, DVector<f64>) {
        let (n, n_o, np) = (self.n(), self.n_o(), self.channels.len());
        let w = self.bandwidth();
        let off = n_o * np;
        let mut h: Vec<Vec<DMatrix<f64>>> = (0..n_o)
            .map(|i| (0..=w.min(i)).map(|_| DMatrix::zeros(n, n)).collect())
            .collect();
        let mut g = DVector::zeros(n_o * n);
        for k in 0..n_o {
            for (i, &c) in self.channels.iter().enumerate() {
                h[k][0][(c, c)] += 1.0;
                g[k * n + c] -= r[k * np + i];
            }
            // Row block k touches columns k (diag) and k − s (coupling).
            let mut blocks: Vec<(usize, &DMatrix<f64>)> = vec![(k, &self.diag[k])];
            blocks.extend(self.coupling[k].iter().enumerate().map(|(s0, b)| (k - s0 - 1, b)));
            let rk = r.rows(off + k * n, n);
            for &(ci, bi) in &blocks {
                let mut gi = g.rows_mut(ci * n, n);
                gi.gemv_tr(1.0, bi, &rk, 1.0);
                for &(cj, bj) in &blocks {
                    if cj <= ci {
                        h[ci][ci - cj].gemm_tr(1.0, bi, bj, 1.0);
                    }
                }
            }
        }
        (h, g)
    }
}

/// `[M; N]` with `M = blkdiag(−C̃)` and `N` the dynamics-residual Jacobian.
pub fn build_block_jacobian(
    q: &StackedStates,
    meas: &MeasurementSeries,
    u: &InputVector,
    schedule: &LoadSchedule,
    scheme: &Scheme,
    cfg: &SimConfig,
    kind: GnJacobian,
) -> Result<BlockJacobian> {
    let layout = StateLayout::of(&schedule.base);
    check_window(q, meas, &layout)?;
    let (n, n_o) = (q.n(), q.n_o());
    let nd = layout.n_d();
    let xs = q.states();

    let mut diag = Vec::with_capacity(n_o);
    let mut coupling = Vec::with_capacity(n_o);
    let jac0 = Dynamics::new(schedule.at(0), cfg.governor).jacobian(&xs[0]);
    let mut d0 = DMatrix::zeros(n, n);
    d0.rows_mut(nd, layout.n_a())
        .copy_from(&(jac0.rows(nd, layout.n_a()) * initial_weight(scheme, cfg)));
    diag.push(d0);
    coupling.push(Vec::new());
    for k in 1..n_o {
        let ctx = step_context(k, u, schedule, scheme, cfg);
        let history: Vec<&DVector<f64>> = (1..=ctx.scheme.order()).map(|s| &xs[k - s]).collect();
        diag.push(ctx.exact_jacobian(&xs[k]));
        coupling.push(match kind {
            GnJacobian::Exact => ctx.history_jacobians(&history)?.into_iter().map(|rs| -rs).collect(),
            GnJacobian::BlockDiagonal => Vec::new(),
        });
    }
    Ok(BlockJacobian {
        channels: meas.selection.channels(&layout),
        diag,
        coupling,
    })
}

/// Dense form of [`build_block_jacobian`].
pub fn build_gn_jacobian(
    q: &StackedStates,
    meas: &MeasurementSeries,
    u: &InputVector,
    schedule: &LoadSchedule,
    scheme: &Scheme,
    cfg: &SimConfig,
    kind: GnJacobian,
) -> Result<DMatrix<f64>> {
    Ok(build_block_jacobian(q, meas, u, schedule, scheme, cfg, kind)?.to_dense())
}

/// Cholesky factor of a symmetric block-banded matrix given by its lower
/// blocks `h[i][d] = H_{i, i−d}`.
struct BandedCholesky {
    l: Vec<Vec<DMatrix<f64>>>,
}

impl BandedCholesky {
    /// `None` when a pivot block is not numerically positive definite.
    fn factor(h: &[Vec<DMatrix<f64>>], pivot_floor: f64) -> Option<Self> {
        let mut l: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(h.len());
        for i in 0..h.len() {
            let w = h[i].len() - 1;
            let mut row: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); w + 1];
            for d in (1..=w).rev() {
                let j = i - d;
                let mut s = h[i][d].clone();
                // Σ over shared columns m < j within both bands.
                for m in i - w..j {
                    let (li, lj) = (&row[i - m], &l[j][j - m]);
                    if j - m < l[j].len() {
                        s.gemm(-1.0, li, &lj.transpose(), 1.0);
                    }
                }
                let ljj = &l[j][0];
                let x = ljj.solve_lower_triangular(&s.transpose())?;
                row[d] = x.transpose();
            }
            let mut s = h[i][0].clone();
            for blk in &row[1..] {
                s.gemm(-1.0, blk, &blk.transpose(), 1.0);
            }
            let chol = s.cholesky()?;
            let lii = chol.l();
            if lii.diagonal().iter().any(|p| !(p * p > pivot_floor)) {
                return None;
            }
            row[0] = lii;
            l.push(row);
        }
        Some(BandedCholesky { l })
    }

    fn solve(&self, g: &DVector<f64>) -> Option<DVector<f64>> {
        let m = self.l.len();
        let n = self.l.first().map_or(0, |r| r[0].nrows());
        let mut z = g.clone();
        for i in 0..m {
            let mut zi = z.rows(i * n, n).into_owned();
            for d in 1..self.l[i].len() {
                let j = i - d;
                zi.gemv(-1.0, &self.l[i][d], &z.rows(j * n, n), 1.0);
            }
            let zi = self.l[i][0].solve_lower_triangular(&zi)?;
            z.rows_mut(i * n, n).copy_from(&zi);
        }
        for i in (0..m).rev() {
            let mut xi = z.rows(i * n, n).into_owned();
            for k in i + 1..m {
                let d = k - i;
                if d < self.l[k].len() {
                    xi.gemv_tr(-1.0, &self.l[k][d], &z.rows(k * n, n), 1.0);
                }
            }
            let xi = self.l[i][0].tr_solve_lower_triangular(&xi)?;
            z.rows_mut(i * n, n).copy_from(&xi);
        }
        Some(z)
    }
}

/// Least-squares step `(JᵀJ)⁻¹ Jᵀ r` through Jacobi-scaled normal equations
/// and a block-banded Cholesky. Falls back to a ridge when the scaled matrix
/// is not positive definite; the flag reports it.
fn gauss_newton_step(jac: &BlockJacobian, r: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let (mut h, g) = jac.normal_equations(r);
    let n = jac.n();
    let dim = n * jac.n_o();
    let scale = DVector::from_fn(dim, |c, _| {
        let d = h[c / n][0][(c % n, c % n)];
        if d > 0.0 {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    for (i, row) in h.iter_mut().enumerate() {
        for (d, blk) in row.iter_mut().enumerate() {
            let j = i - d;
            for c in 0..n {
                for rr in 0..n {
                    blk[(rr, c)] *= scale[i * n + rr] * scale[j * n + c];
                }
            }
        }
    }
    let gs = g.component_mul(&scale);
    let floor = f64::EPSILON * dim as f64;
    let mut regularized = false;
    let chol = match BandedCholesky::factor(&h, floor) {
        Some(c) => c,
        None => {
            regularized = true;
            for row in h.iter_mut() {
                for c in 0..n {
                    row[0][(c, c)] += RIDGE;
                }
            }
            BandedCholesky::factor(&h, 0.0)
                .ok_or_else(|| Error::LinearSolve("normal equations singular even with ridge".into()))?
        }
    };
    let z = chol
        .solve(&gs)
        .filter(|z| z.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::LinearSolve("Gauss-Newton step is not finite".into()))?;
    Ok((z.component_mul(&scale), regularized))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnReport {
    pub x0_hat: DVector<f64>,
    /// Gauss-Newton updates performed.
    pub iterations: usize,
    /// `‖r‖₂` before each update and after the last one.
    pub residual_norms: Vec<f64>,
    pub epsilon: Option<f64>,
    pub converged: bool,
    /// True when any step needed the ridge fallback.
    pub regularized: bool,
}

impl GnReport {
    /// Fills in `epsilon` against the true initial state.
    pub fn score(&mut self, truth: &DVector<f64>) -> Result<f64> {
        let eps = estimation_error(&self.x0_hat, truth)?;
        self.epsilon = Some(eps);
        Ok(eps)
    }
}

/// Algorithm: simulate the window from `x̂_0`, build `r` and `J`, step, keep
/// and project the first block, repeat until `‖r‖ < gn_tol` or the cap.
pub fn gauss_newton_estimate(
    meas: &MeasurementSeries,
    u: &InputVector,
    schedule: &LoadSchedule,
    scheme: &Scheme,
    cfg: &SimConfig,
    mhe: &MheConfig,
) -> Result<GnReport> {
    mhe.validate()?;
    let layout = StateLayout::of(&schedule.base);
    if meas.selection.is_empty() {
        return Err(Error::NotObservable(
            "no sensors selected: the measurement rows are empty".into(),
        ));
    }
    if mhe.initial_guess.len() != layout.n() {
        return Err(Error::Dimension(format!(
            "initial guess of length {} for n = {}",
            mhe.initial_guess.len(),
            layout.n()
        )));
    }
    if meas.len() < mhe.n_o {
        return Err(Error::Dimension(format!(
            "{} measurement rows for a horizon of {}",
            meas.len(),
            mhe.n_o
        )));
    }
    let sim = mhe.simulation_config(cfg);
    let n = layout.n();
    let mut x0 = mhe.initial_guess.clone();
    let mut norms = Vec::new();
    let mut regularized = false;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let traj = simulate_steps(&x0, u, schedule, scheme, &sim, mhe.n_o - 1)?;
        let q = StackedStates::from_states(&traj.states)?;
        let r = build_residual(&q, meas, u, schedule, scheme, &sim)?;
        let norm = r.norm();
        norms.push(norm);
        if norm < mhe.gn_tol {
            converged = true;
            break;
        }
        if iterations == mhe.gn_max_iter {
            break;
        }
        let jac = build_block_jacobian(&q, meas, u, schedule, scheme, &sim, mhe.jacobian)?;
        let (delta, ridge) = gauss_newton_step(&jac, &r)?;
        regularized |= ridge;
        x0.axpy(-mhe.h_g, &delta.rows(0, n), 1.0);
        mhe.bounds.project(&mut x0);
        iterations += 1;
    }
    Ok(GnReport {
        x0_hat: x0,
        iterations,
        residual_norms: norms,
        epsilon: None,
        converged,
        regularized,
    })
}

/// `‖x̂_0 − x_0‖₂ / ‖x_0‖₂`.
pub fn estimation_error(x0_hat: &DVector<f64>, x0_true: &DVector<f64>) -> Result<f64> {
    if x0_hat.len() != x0_true.len() {
        return Err(Error::Dimension(format!(
            "estimate of length {} vs truth of length {}",
            x0_hat.len(),
            x0_true.len()
        )));
    }
    let denom = x0_true.norm();
    if denom == 0.0 {
        return Err(Error::Domain("relative error against a zero state".into()));
    }
    Ok((x0_hat - x0_true).norm() / denom)
}
