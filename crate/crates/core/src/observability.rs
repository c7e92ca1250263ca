//! Observability of the initial state through a window of PMU samples.
//!
//! Along a trajectory `x_0 … x_{N_o−1}` of the relaxed model, the chain
//! `D_j = ∂x_j/∂x_0` comes from implicit differentiation of each step. The
//! observation Jacobian stacks `C̃ D_j`, and the Gramian is `W_o = JᵀJ`.
//! Since every PMU contributes its own rows, `W_o` is the sum of per-bus
//! Gramians `W_i`. That modularity makes trace-optimal placement a sort.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::StateLayout;
use crate::error::{Error, Result};
use crate::integrator::{LoadSchedule, Method, Mode, Scheme, SimConfig, StepContext};
use crate::netmodel::NetworkCase;

/// Buses carrying a PMU, 1-based and ascending. Each PMU measures `v` and
/// `θ` of its bus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorSelection {
    buses: Vec<usize>,
    n_bus: usize,
}

impl SensorSelection {
    pub fn new(buses: impl IntoIterator<Item = usize>, n_bus: usize) -> Result<Self> {
        let mut buses: Vec<usize> = buses.into_iter().collect();
        if let Some(&b) = buses.iter().find(|&&b| b == 0 || b > n_bus) {
            return Err(Error::Validation(format!("bus {b} outside 1..={n_bus}")));
        }
        buses.sort_unstable();
        if let Some(w) = buses.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("bus {} selected twice", w[0])));
        }
        Ok(SensorSelection { buses, n_bus })
    }

    pub fn all(n_bus: usize) -> Self {
        SensorSelection {
            buses: (1..=n_bus).collect(),
            n_bus,
        }
    }

    pub fn empty(n_bus: usize) -> Self {
        SensorSelection {
            buses: Vec::new(),
            n_bus,
        }
    }

    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    pub fn n_bus(&self) -> usize {
        self.n_bus
    }

    pub fn contains(&self, bus: usize) -> bool {
        self.buses.binary_search(&bus).is_ok()
    }

    /// Measured channels `n_p = 2p`.
    pub fn n_channels(&self) -> usize {
        2 * self.buses.len()
    }

    /// State indices read by `C̃`, as `[v_b, θ_b]` for each selected bus.
    pub fn channels(&self, layout: &StateLayout) -> Vec<usize> {
        self.buses
            .iter()
            .flat_map(|&b| [layout.v(b - 1), layout.theta(b - 1)])
            .collect()
    }

    /// The `2p × n` selection matrix `C̃`.
    pub fn c_tilde(&self, layout: &StateLayout) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n_channels(), layout.n());
        for (r, k) in self.channels(layout).into_iter().enumerate() {
            c[(r, k)] = 1.0;
        }
        c
    }
}

/// `∂x_j/∂x_0` for `j = 0 … N_o−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityChain {
    pub steps: Vec<DMatrix<f64>>,
}

impl SensitivityChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// How multistep sensitivities are composed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recursion {
    /// `D_j = Σ_s S_s(j) D_{j−s}` with every BDF coupling kept.
    #[default]
    Exact,
    /// Explicit 2×2 block formulas for BE and TI steps, and a `k_g`-stride
    /// composition for BDF(k_g).
    Blockwise,
}

fn require_mu(cfg: &SimConfig) -> Result<()> {
    if cfg.mode != Mode::Mu {
        return Err(Error::Domain(
            "sensitivities are defined for the relaxed (mu) model".into(),
        ));
    }
    Ok(())
}

fn inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::LinearSolve(format!("singular {what}")))
}

/// One-step sensitivity from the explicit block formulas. For BE, with
/// `A_d = I − h̃F_d`, `A_a = μI − h̃G_a`:
///
/// ```text
/// [ A_d⁻¹              h̃ F_a A_a⁻¹ μ ]
/// [ h̃ G_d A_d⁻¹ / μ    A_a⁻¹ μ       ]
/// ```
///
/// For TI the blocks pair `(I − h̃F_d(x_j))⁻¹` with `I + h̃F_d(x_{j−1})` and add
/// the previous-step Jacobian to the coupling blocks. The off-diagonal blocks
/// are not the implicit derivative; [`StepContext::sensitivities`] is.
pub fn blockwise_sensitivity(ctx: &StepContext, x: &DVector<f64>, prev: &DVector<f64>) -> Result<DMatrix<f64>> {
    require_mu(ctx.cfg)?;
    let l = ctx.layout();
    let (nd, na) = (l.n_d(), l.n_a());
    let ht = ctx.scheme.h_tilde();
    let mu = ctx.cfg.mu;
    let now = ctx.now.jacobian_blocks(x);
    let eye_d = DMatrix::<f64>::identity(nd, nd);
    let eye_a = DMatrix::<f64>::identity(na, na);
    let a_d_inv = inverse(&eye_d - &now.f_xd * ht, "differential block I − h̃F_xd")?;
    let a_a_inv = inverse(&eye_a * mu - &now.g_xa * ht, "algebraic block μI − h̃G_xa")?;

    let (dd, da, ad, aa) = match ctx.scheme.method() {
        Method::BackwardEuler => {
            let dd = a_d_inv.clone();
            let aa = &a_a_inv * mu;
            let da = &now.f_xa * &aa * ht;
            let ad = &now.g_xd * &a_d_inv * (ht / mu);
            (dd, da, ad, aa)
        }
        Method::Trapezoidal => {
            let old = ctx.prev.jacobian_blocks(prev);
            let dd = &a_d_inv * (&eye_d + &old.f_xd * ht);
            let aa = &a_a_inv * (&eye_a * mu + &old.g_xa * ht);
            let da = (&now.f_xa * &aa + &old.f_xa) * ht;
            let ad = (&now.g_xd * &dd + &old.g_xd) * (ht / mu);
            (dd, da, ad, aa)
        }
        Method::Bdf(_) => {
            return Err(Error::Domain(
                "block formulas exist for backward Euler and trapezoidal steps only".into(),
            ));
        }
    };
    let mut s = DMatrix::zeros(l.n(), l.n());
    s.view_mut((0, 0), (nd, nd)).copy_from(&dd);
    s.view_mut((0, nd), (nd, na)).copy_from(&da);
    s.view_mut((nd, 0), (na, nd)).copy_from(&ad);
    s.view_mut((nd, nd), (na, na)).copy_from(&aa);
    Ok(s)
}

/// Free-function form of [`blockwise_sensitivity`] on a single case.
pub fn step_sensitivity_blockwise(
    x_j: &DVector<f64>,
    prev: &DVector<f64>,
    u: &crate::dynamics::InputVector,
    case: &NetworkCase,
    scheme: &Scheme,
    cfg: &SimConfig,
) -> Result<DMatrix<f64>> {
    blockwise_sensitivity(&StepContext::new(case, u, scheme, cfg), x_j, prev)
}

/// Chain `∂x_j/∂x_0` along `window[0..n_o]`, with step `j` taken by
/// `scheme.at_step(j)` under `schedule.at(j)`.
pub fn propagate_chain(
    window: &[DVector<f64>],
    u: &crate::dynamics::InputVector,
    schedule: &LoadSchedule,
    scheme: &Scheme,
    cfg: &SimConfig,
    n_o: usize,
    recursion: Recursion,
) -> Result<SensitivityChain> {
    require_mu(cfg)?;
    if n_o == 0 {
        return Err(Error::Domain("observation horizon must be at least 1".into()));
    }
    if window.len() < n_o {
        return Err(Error::Dimension(format!(
            "window has {} states, horizon needs {n_o}",
            window.len()
        )));
    }
    let n = window[0].len();
    let ctx = |j: usize| {
        let sch = scheme.at_step(j);
        StepContext::with_cases(schedule.at(j), schedule.at(j - 1), u, &sch, cfg)
    };
    let history = |j: usize, order: usize| -> Vec<&DVector<f64>> { (1..=order).map(|s| &window[j - s]).collect() };

    let mut steps = vec![DMatrix::identity(n, n)];
    match (recursion, scheme.method()) {
        (Recursion::Exact, _) => {
            for j in 1..n_o {
                let c = ctx(j);
                let sens = c
                    .sensitivities(&window[j], &history(j, c.scheme.order()))
                    .map_err(|e| e.at_step(j))?;
                let mut d = DMatrix::zeros(n, n);
                for (s, sj) in sens.iter().enumerate() {
                    d += sj * &steps[j - 1 - s];
                }
                steps.push(d);
            }
        }
        (Recursion::Blockwise, Method::BackwardEuler | Method::Trapezoidal) => {
            for j in 1..n_o {
                let s = blockwise_sensitivity(&ctx(j), &window[j], &window[j - 1]).map_err(|e| e.at_step(j))?;
                let d = s * &steps[j - 1];
                steps.push(d);
            }
        }
        (Recursion::Blockwise, Method::Bdf(kg)) => {
            // One-step factors keep only the α_1 term: A_i⁻¹ α_1 E_μ.
            let mut one_step: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
            for j in 1..n_o {
                let c = ctx(j);
                let a = c.exact_jacobian(&window[j]);
                let e = DMatrix::from_diagonal(&cfg.mass_diagonal(&c.layout()));
                let lu = a.lu();
                let solve = |rhs: &DMatrix<f64>| {
                    lu.solve(rhs)
                        .filter(|m| m.iter().all(|v| v.is_finite()))
                        .ok_or_else(|| Error::LinearSolve("singular step Jacobian".into()).at_step(j))
                };
                one_step.push(solve(&(&e * c.scheme.alpha()[0]))?);
                if j < kg {
                    let d = &one_step[j] * &steps[j - 1];
                    steps.push(d);
                    continue;
                }
                // ∂x_j/∂x_{j−k_g} = A_j⁻¹ E_μ Σ_s α_s ∂x_{j−s}/∂x_{j−k_g}, where
                // ∂x_{j−s}/∂x_{j−k_g} is a product of one-step factors.
                let mut sum = DMatrix::zeros(n, n);
                for (s0, alpha) in c.scheme.alpha().iter().enumerate() {
                    let s = s0 + 1;
                    let mut q = DMatrix::identity(n, n);
                    for i in (j - kg + 1..=j - s).rev() {
                        q *= &one_step[i];
                    }
                    sum += q * *alpha;
                }
                let stride = solve(&(&e * sum))?;
                let d = stride * &steps[j - kg];
                steps.push(d);
            }
        }
    }
    Ok(SensitivityChain { steps })
}

/// Stacked `C̃ D_j`, `(N_o · 2p) × n`.
pub fn build_observation_jacobian(
    chain: &SensitivityChain,
    selection: &SensorSelection,
    layout: &StateLayout,
) -> DMatrix<f64> {
    let rows = selection.channels(layout);
    let np = rows.len();
    let n = layout.n();
    let mut j = DMatrix::zeros(chain.len() * np, n);
    for (k, d) in chain.steps.iter().enumerate() {
        for (r, &idx) in rows.iter().enumerate() {
            j.row_mut(k * np + r).copy_from(&d.row(idx));
        }
    }
    j
}

/// Rank threshold as a multiple of `n · ε_machine` times the largest
/// singular value.
const RANK_FACTOR: f64 = 1e3;
const CONDITION_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub w_o: DMatrix<f64>,
    pub trace: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
    pub condition_number: f64,
    pub numerical_rank: usize,
}

impl ObservabilityReport {
    pub fn from_gramian(w_o: DMatrix<f64>) -> Self {
        let n = w_o.nrows();
        let trace = w_o.trace();
        let mut eigenvalues: Vec<f64> = if n == 0 {
            Vec::new()
        } else {
            SymmetricEigen::new(w_o.clone()).eigenvalues.iter().copied().collect()
        };
        eigenvalues.sort_by(f64::total_cmp);
        let min_eig = eigenvalues.first().copied().unwrap_or(0.0);
        let max_eig = eigenvalues.last().copied().unwrap_or(0.0);
        let threshold = max_eig.max(0.0) * n as f64 * f64::EPSILON * RANK_FACTOR;
        let numerical_rank = if max_eig > 0.0 {
            eigenvalues.iter().filter(|&&e| e > threshold).count()
        } else {
            0
        };
        ObservabilityReport {
            w_o,
            trace,
            condition_number: max_eig / min_eig.max(CONDITION_FLOOR),
            eigenvalues,
            min_eig,
            max_eig,
            numerical_rank,
        }
    }

    pub fn n(&self) -> usize {
        self.w_o.nrows()
    }
}

/// `W_o = JᵀJ` and its spectrum. The numerical rank is counted on the
/// singular values of `J` itself: eigenvalues of `W_o` below `ε λ_max` are
/// rounding noise, while `σ(J)` resolves directions down to `ε σ_max`.
pub fn gramian(j: &DMatrix<f64>) -> ObservabilityReport {
    let w = j.tr_mul(j);
    // Symmetrize away rounding so the eigen-solver sees an exact mirror.
    let w = (&w + w.transpose()) * 0.5;
    let mut report = ObservabilityReport::from_gramian(w);
    if j.nrows() > 0 && j.ncols() > 0 {
        let sv = j.clone().svd(false, false).singular_values;
        let s_max = sv.max();
        let threshold = s_max * j.ncols() as f64 * f64::EPSILON * RANK_FACTOR;
        report.numerical_rank = if s_max > 0.0 {
            sv.iter().filter(|&&s| s > threshold).count()
        } else {
            0
        };
    }
    report
}

/// `W_i = J_iᵀ J_i` for the single-bus selection `{bus}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianContribution {
    pub bus: usize,
    pub w: DMatrix<f64>,
    pub trace: f64,
}

/// One contribution per bus, in ascending bus order.
pub fn per_sensor_contributions(chain: &SensitivityChain, layout: &StateLayout) -> Vec<GramianContribution> {
    (1..=layout.n_bus)
        .into_par_iter()
        .map(|bus| {
            let single = SensorSelection {
                buses: vec![bus],
                n_bus: layout.n_bus,
            };
            let j = build_observation_jacobian(chain, &single, layout);
            let w = j.tr_mul(&j);
            let w = (&w + w.transpose()) * 0.5;
            GramianContribution {
                bus,
                trace: w.trace(),
                w,
            }
        })
        .collect()
}

/// `Σ_{i ∈ selection} W_i`, summed in ascending bus order.
pub fn gramian_of_selection(
    contributions: &[GramianContribution],
    selection: &SensorSelection,
) -> Result<DMatrix<f64>> {
    let n = contributions.first().map(|c| c.w.nrows()).unwrap_or(0);
    let mut w = DMatrix::zeros(n, n);
    for &bus in selection.buses() {
        let c = contributions
            .iter()
            .find(|c| c.bus == bus)
            .ok_or_else(|| Error::Validation(format!("no contribution for bus {bus}")))?;
        w += &c.w;
    }
    Ok(w)
}
