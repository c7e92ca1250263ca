//! Newton-Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};

use super::{BusKind, NetworkCase};
use crate::error::{Error, Result};

const MAX_ITER: usize = 30;
const TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Real and reactive output of each generator, pu.
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub iterations: usize,
    /// Largest specified-injection mismatch at the solution, pu.
    pub max_mismatch: f64,
}

/// Net injections `P_i = Σ_j v_i v_j (G_ij cos θ_ij + B_ij sin θ_ij)` and
/// `Q_i = Σ_j v_i v_j (G_ij sin θ_ij − B_ij cos θ_ij)`.
pub fn power_injections(case: &NetworkCase, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let y = case.admittance();
    let n = case.n_bus();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for &j in &y.neighbors[i] {
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            p[i] += v[i] * v[j] * (g * c + b * s);
            q[i] += v[i] * v[j] * (g * s - b * c);
        }
    }
    (p, q)
}

/// Specified net injection (generation − load + renewables) at each bus, with
/// generator output taken from the dispatch set-points.
fn scheduled(case: &NetworkCase) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = case.buses().iter().map(|b| b.p_ren - b.p_load).collect();
    let mut q: Vec<f64> = case.buses().iter().map(|b| b.q_ren - b.q_load).collect();
    for gen in case.gens() {
        p[gen.bus - 1] += gen.p_set;
        q[gen.bus - 1] += gen.q_set;
    }
    (p, q)
}

/// Mismatch over the equations whose injection is fixed: P at PV and PQ
/// buses, Q at PQ buses. Returns (worst bus, worst absolute mismatch).
fn worst_mismatch(case: &NetworkCase, v: &[f64], theta: &[f64]) -> (usize, f64) {
    let (ps, qs) = scheduled(case);
    let (p, q) = power_injections(case, v, theta);
    let mut worst = (0, 0.0);
    for (i, bus) in case.buses().iter().enumerate() {
        let mut m: f64 = 0.0;
        if bus.kind != BusKind::Slack {
            m = m.max((ps[i] - p[i]).abs());
        }
        if bus.kind == BusKind::PQ {
            m = m.max((qs[i] - q[i]).abs());
        }
        if m > worst.1 {
            worst = (i, m);
        }
    }
    worst
}

/// Solves the power flow starting from the voltages stored in `case`
/// (generator buses start from their set-points).
pub fn solve_power_flow(case: &NetworkCase) -> Result<PowerFlowSolution> {
    let n = case.n_bus();
    let buses = case.buses();
    let mut v: Vec<f64> = buses.iter().map(|b| b.v).collect();
    let mut theta: Vec<f64> = buses.iter().map(|b| b.theta).collect();
    for gen in case.gens() {
        v[gen.bus - 1] = gen.v_set;
    }

    let ang: Vec<usize> = (0..n).filter(|&i| buses[i].kind != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| buses[i].kind == BusKind::PQ).collect();
    let na = ang.len();
    let dim = na + mag.len();
    let (ps, qs) = scheduled(case);
    let y = case.admittance();

    let mut iterations = 0;
    loop {
        let (p, q) = power_injections(case, &v, &theta);
        let mut f = DVector::zeros(dim);
        for (r, &i) in ang.iter().enumerate() {
            f[r] = p[i] - ps[i];
        }
        for (r, &i) in mag.iter().enumerate() {
            f[na + r] = q[i] - qs[i];
        }
        let norm = f.amax();
        if !norm.is_finite() {
            let (bus, mismatch) = worst_mismatch(case, &v, &theta);
            return Err(Error::Initialization {
                bus: buses[bus].original_id as usize,
                mismatch,
                reason: "power flow diverged".into(),
            });
        }
        if norm < TOL {
            break;
        }
        if iterations == MAX_ITER {
            let (bus, mismatch) = worst_mismatch(case, &v, &theta);
            return Err(Error::Initialization {
                bus: buses[bus].original_id as usize,
                mismatch,
                reason: format!("power flow not converged in {MAX_ITER} iterations"),
            });
        }

        // Column lookup for the unknowns.
        let mut col_ang = vec![usize::MAX; n];
        let mut col_mag = vec![usize::MAX; n];
        for (c, &i) in ang.iter().enumerate() {
            col_ang[i] = c;
        }
        for (c, &i) in mag.iter().enumerate() {
            col_mag[i] = na + c;
        }
        let mut jac = DMatrix::zeros(dim, dim);
        let rows = ang.iter().map(|&i| (i, false)).chain(mag.iter().map(|&i| (i, true)));
        for (r, (i, is_q)) in rows.enumerate() {
            for &j in &y.neighbors[i] {
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
                let (dth_j, dv_j) = if !is_q {
                    (v[i] * v[j] * (g * s - b * c), v[i] * (g * c + b * s))
                } else {
                    (-v[i] * v[j] * (g * c + b * s), v[i] * (g * s - b * c))
                };
                if j != i {
                    if col_ang[j] != usize::MAX {
                        jac[(r, col_ang[j])] += dth_j;
                    }
                    if col_mag[j] != usize::MAX {
                        jac[(r, col_mag[j])] += dv_j;
                    }
                    if col_ang[i] != usize::MAX {
                        jac[(r, col_ang[i])] -= dth_j;
                    }
                    if col_mag[i] != usize::MAX {
                        // ∂/∂v_i of the off-diagonal term v_i v_j (...)
                        jac[(r, col_mag[i])] += dv_j * v[j] / v[i];
                    }
                } else if col_mag[i] != usize::MAX {
                    let self_term = if !is_q { 2.0 * v[i] * g } else { -2.0 * v[i] * b };
                    jac[(r, col_mag[i])] += self_term;
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::LinearSolve("singular power-flow Jacobian".into()))?;
        for (c, &i) in ang.iter().enumerate() {
            theta[i] -= dx[c];
        }
        for (c, &i) in mag.iter().enumerate() {
            v[i] -= dx[na + c];
        }
        iterations += 1;
    }

    let (p, q) = power_injections(case, &v, &theta);
    let mut p_gen = Vec::with_capacity(case.n_gen());
    let mut q_gen = Vec::with_capacity(case.n_gen());
    for gen in case.gens() {
        let i = gen.bus - 1;
        let bus = &buses[i];
        p_gen.push(p[i] + bus.p_load - bus.p_ren);
        q_gen.push(q[i] + bus.q_load - bus.q_ren);
    }
    let (_, max_mismatch) = worst_mismatch(case, &v, &theta);
    Ok(PowerFlowSolution {
        v,
        theta,
        p_gen,
        q_gen,
        iterations,
        max_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::builtin_case;

    #[test]
    fn case9_generation_covers_load_and_branch_losses() {
        type C = nalgebra::Complex<f64>;
        let case = builtin_case("case9").unwrap();
        let sol = solve_power_flow(&case).unwrap();
        assert!(sol.max_mismatch < 1e-10);
        // Slack output of the standard 9-bus flow is 71.95 MW.
        assert!((sol.p_gen[0] - 0.7195).abs() < 1e-4, "{}", sol.p_gen[0]);

        // Losses from the individual branch flows.
        let volt: Vec<C> = (0..9).map(|b| C::from_polar(sol.v[b], sol.theta[b])).collect();
        let mut losses = 0.0;
        for br in case.branches() {
            let (vf, vt) = (volt[br.from - 1], volt[br.to - 1]);
            let ys = C::new(1.0, 0.0) / C::new(br.r, br.x);
            let i_ft = (vf - vt) * ys + vf * C::new(0.0, br.b / 2.0);
            let i_tf = (vt - vf) * ys + vt * C::new(0.0, br.b / 2.0);
            losses += (vf * i_ft.conj() + vt * i_tf.conj()).re;
        }
        let (p_load, _) = case.total_load();
        let p_gen: f64 = sol.p_gen.iter().sum();
        assert!((p_gen - p_load - losses).abs() < 1e-9);
    }

    #[test]
    fn case39_stored_voltages_are_a_solution() {
        let case = builtin_case("case39").unwrap();
        let v: Vec<f64> = case.buses().iter().map(|b| b.v).collect();
        let th: Vec<f64> = case.buses().iter().map(|b| b.theta).collect();
        let (_, stored) = worst_mismatch(&case, &v, &th);
        // The file stores 8 significant digits.
        assert!(stored < 1e-4, "stored mismatch {stored}");
        let sol = solve_power_flow(&case).unwrap();
        assert!(sol.iterations <= 3);
        let dv = v.iter().zip(&sol.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dv < 1e-6, "{dv}");
    }

    #[test]
    fn renewables_reduce_slack_only_through_losses() {
        let case = builtin_case("case9").unwrap();
        let raw = solve_power_flow(&case).unwrap();
        let with = solve_power_flow(&case.with_renewable_share(0.2).unwrap()).unwrap();
        assert!((with.p_gen[1] - 0.8 * raw.p_gen[1]).abs() < 1e-12);
        assert!(with.p_gen[0] > 0.5 && with.p_gen[0] < raw.p_gen[0] + 0.05);
    }
}
