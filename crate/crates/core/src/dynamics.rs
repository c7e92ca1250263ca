//! Right-hand sides of the two-axis generator model with a first-order
//! governor, the stator algebraic equations and the AC power balance, plus
//! their analytic Jacobians.
//!
//! Differential equations for generator `i` at bus `b`, with Δ = δ − θ_b:
//!
//! ```text
//! δ̇   = ω − ω0
//! M ω̇ = T_M − P_G − D (ω − ω0)
//! T'_d0 Ė' = −(x_d/x'_d) E' + ((x_d − x'_d)/x'_d) v cos Δ + E_fd
//! T_CH Ṫ_M = ∓T_M − (ω − ω0)/R_D + T_r          (− for the stable sign)
//! ```
//!
//! Algebraic residuals, each written so that `∂/∂P_G = −1` (stator) or
//! `+1` (balance):
//!
//! ```text
//! 0 = E' v sin Δ / x'_d − v² sin 2Δ (x_q − x'_d)/(2 x'_d x_q) − P_G
//! 0 = E' v cos Δ / x'_d − v² (cos² Δ / x'_d + sin² Δ / x_q) − Q_G
//! 0 = P_G − P_L + P_R − Σ_j v_i v_j (G_ij cos θ_ij + B_ij sin θ_ij)
//! 0 = Q_G − Q_L + Q_R − Σ_j v_i v_j (G_ij sin θ_ij − B_ij cos θ_ij)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::netmodel::NetworkCase;

/// Flat index map of the state vector
/// `x = [δ; ω; E'; T_M | P_G; Q_G; v; θ]`, i.e. the differential block
/// `x_d` of length `4G` followed by the algebraic block `x_a` of length
/// `2G + 2N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_gen: usize,
    pub n_bus: usize,
}

impl StateLayout {
    pub fn of(case: &NetworkCase) -> Self {
        StateLayout {
            n_gen: case.n_gen(),
            n_bus: case.n_bus(),
        }
    }

    pub fn n_d(&self) -> usize {
        4 * self.n_gen
    }

    pub fn n_a(&self) -> usize {
        2 * self.n_gen + 2 * self.n_bus
    }

    pub fn n(&self) -> usize {
        self.n_d() + self.n_a()
    }

    pub fn delta(&self, g: usize) -> usize {
        g
    }

    pub fn omega(&self, g: usize) -> usize {
        self.n_gen + g
    }

    pub fn e_p(&self, g: usize) -> usize {
        2 * self.n_gen + g
    }

    pub fn t_m(&self, g: usize) -> usize {
        3 * self.n_gen + g
    }

    pub fn p_g(&self, g: usize) -> usize {
        4 * self.n_gen + g
    }

    pub fn q_g(&self, g: usize) -> usize {
        5 * self.n_gen + g
    }

    /// 0-based bus position.
    pub fn v(&self, bus: usize) -> usize {
        6 * self.n_gen + bus
    }

    pub fn theta(&self, bus: usize) -> usize {
        6 * self.n_gen + self.n_bus + bus
    }

    /// Column labels for trajectory output: `delta_1 … theta_N`.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n());
        for name in ["delta", "omega", "Ep", "TM", "PG", "QG"] {
            out.extend((1..=self.n_gen).map(|i| format!("{name}_{i}")));
        }
        for name in ["v", "theta"] {
            out.extend((1..=self.n_bus).map(|i| format!("{name}_{i}")));
        }
        out
    }
}

/// Field voltages and governor references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    pub e_fd: Vec<f64>,
    pub t_r: Vec<f64>,
}

impl InputVector {
    pub fn len(&self) -> usize {
        self.e_fd.len() + self.t_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sign of `T_M` in the governor equation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GovernorSign {
    /// `T_CH Ṫ_M = −T_M − (ω − ω0)/R_D + T_r`: a stable first-order lag.
    #[default]
    Stable,
    /// `T_CH Ṫ_M = +T_M − (ω − ω0)/R_D + T_r`: an unstable pole, kept for
    /// comparison runs only.
    Printed,
}

impl GovernorSign {
    fn coefficient(self) -> f64 {
        match self {
            GovernorSign::Stable => -1.0,
            GovernorSign::Printed => 1.0,
        }
    }
}

/// Jacobian of `[f; g]` split by differential and algebraic states.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub f_xd: DMatrix<f64>,
    pub f_xa: DMatrix<f64>,
    pub g_xd: DMatrix<f64>,
    pub g_xa: DMatrix<f64>,
}

impl JacobianBlocks {
    /// Reassembles the full `n × n` Jacobian.
    pub fn full(&self) -> DMatrix<f64> {
        let nd = self.f_xd.nrows();
        let na = self.g_xa.nrows();
        let mut j = DMatrix::zeros(nd + na, nd + na);
        j.view_mut((0, 0), (nd, nd)).copy_from(&self.f_xd);
        j.view_mut((0, nd), (nd, na)).copy_from(&self.f_xa);
        j.view_mut((nd, 0), (na, nd)).copy_from(&self.g_xd);
        j.view_mut((nd, nd), (na, na)).copy_from(&self.g_xa);
        j
    }

    pub fn from_full(j: &DMatrix<f64>, n_d: usize) -> Self {
        let n = j.nrows();
        let na = n - n_d;
        JacobianBlocks {
            f_xd: j.view((0, 0), (n_d, n_d)).into_owned(),
            f_xa: j.view((0, n_d), (n_d, na)).into_owned(),
            g_xd: j.view((n_d, 0), (na, n_d)).into_owned(),
            g_xa: j.view((n_d, n_d), (na, na)).into_owned(),
        }
    }
}

/// The model bound to a case and a governor sign.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics<'a> {
    pub case: &'a NetworkCase,
    pub governor: GovernorSign,
}

impl<'a> Dynamics<'a> {
    pub fn new(case: &'a NetworkCase, governor: GovernorSign) -> Self {
        Dynamics { case, governor }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::of(self.case)
    }

    pub fn f(&self, x: &DVector<f64>, u: &InputVector) -> DVector<f64> {
        let l = self.layout();
        let w0 = self.case.omega0();
        let sign = self.governor.coefficient();
        let mut out = DVector::zeros(l.n_d());
        for (i, gen) in self.case.gens().iter().enumerate() {
            let b = gen.bus - 1;
            let (delta, omega, ep, tm) = (x[l.delta(i)], x[l.omega(i)], x[l.e_p(i)], x[l.t_m(i)]);
            let (v, theta, pg) = (x[l.v(b)], x[l.theta(b)], x[l.p_g(i)]);
            let dw = omega - w0;
            out[l.delta(i)] = dw;
            out[l.omega(i)] = (tm - pg - gen.d * dw) / gen.m;
            out[l.e_p(i)] = (-(gen.x_d / gen.x_d_p) * ep
                + ((gen.x_d - gen.x_d_p) / gen.x_d_p) * v * (delta - theta).cos()
                + u.e_fd[i])
                / gen.t_d0_p;
            out[l.t_m(i)] = (sign * tm - dw / gen.r_d + u.t_r[i]) / gen.t_ch;
        }
        out
    }

    pub fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = self.layout();
        let (ng, nb) = (l.n_gen, l.n_bus);
        let mut out = DVector::zeros(l.n_a());
        let y = self.case.admittance();

        for (i, gen) in self.case.gens().iter().enumerate() {
            let b = gen.bus - 1;
            let (ep, v, pg, qg) = (x[l.e_p(i)], x[l.v(b)], x[l.p_g(i)], x[l.q_g(i)]);
            let (s, c) = (x[l.delta(i)] - x[l.theta(b)]).sin_cos();
            let xp = gen.x_d_p;
            let k = (gen.x_q - xp) / (2.0 * xp * gen.x_q);
            out[i] = ep * v * s / xp - v * v * 2.0 * s * c * k - pg;
            out[ng + i] = ep * v * c / xp - v * v * (c * c / xp + s * s / gen.x_q) - qg;
            out[2 * ng + b] += pg;
            out[2 * ng + nb + b] += qg;
        }
        for (b, bus) in self.case.buses().iter().enumerate() {
            let (vi, ti) = (x[l.v(b)], x[l.theta(b)]);
            let (mut p, mut q) = (0.0, 0.0);
            for &j in &y.neighbors[b] {
                let (s, c) = (ti - x[l.theta(j)]).sin_cos();
                let (gij, bij) = (y.g[(b, j)], y.b[(b, j)]);
                let vv = vi * x[l.v(j)];
                p += vv * (gij * c + bij * s);
                q += vv * (gij * s - bij * c);
            }
            out[2 * ng + b] += -bus.p_load + bus.p_ren - p;
            out[2 * ng + nb + b] += -bus.q_load + bus.q_ren - q;
        }
        out
    }

    /// `[f; g]` stacked.
    pub fn rhs(&self, x: &DVector<f64>, u: &InputVector) -> DVector<f64> {
        let f = self.f(x, u);
        let g = self.g(x);
        let mut out = DVector::zeros(f.len() + g.len());
        out.rows_mut(0, f.len()).copy_from(&f);
        out.rows_mut(f.len(), g.len()).copy_from(&g);
        out
    }

    /// Full `n × n` Jacobian of `[f; g]` with respect to `x`. The inputs enter
    /// `f` additively, so the Jacobian does not depend on them.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout();
        let nd = l.n_d();
        let (ng, nb) = (l.n_gen, l.n_bus);
        let sign = self.governor.coefficient();
        let mut j = DMatrix::zeros(l.n(), l.n());
        let y = self.case.admittance();

        for (i, gen) in self.case.gens().iter().enumerate() {
            let b = gen.bus - 1;
            let (ep, v) = (x[l.e_p(i)], x[l.v(b)]);
            let (s, c) = (x[l.delta(i)] - x[l.theta(b)]).sin_cos();
            let (s2, c2) = (2.0 * s * c, c * c - s * s);
            let xp = gen.x_d_p;

            j[(l.delta(i), l.omega(i))] = 1.0;

            let r = l.omega(i);
            j[(r, l.omega(i))] = -gen.d / gen.m;
            j[(r, l.t_m(i))] = 1.0 / gen.m;
            j[(r, l.p_g(i))] = -1.0 / gen.m;

            let r = l.e_p(i);
            let kx = (gen.x_d - xp) / xp / gen.t_d0_p;
            j[(r, l.e_p(i))] = -(gen.x_d / xp) / gen.t_d0_p;
            j[(r, l.delta(i))] = -kx * v * s;
            j[(r, l.theta(b))] = kx * v * s;
            j[(r, l.v(b))] = kx * c;

            let r = l.t_m(i);
            j[(r, l.t_m(i))] = sign / gen.t_ch;
            j[(r, l.omega(i))] = -1.0 / (gen.r_d * gen.t_ch);

            // Stator P row.
            let k = (gen.x_q - xp) / (2.0 * xp * gen.x_q);
            let r = nd + i;
            let dd = ep * v * c / xp - 2.0 * k * v * v * c2;
            j[(r, l.e_p(i))] = v * s / xp;
            j[(r, l.v(b))] = ep * s / xp - 2.0 * k * v * s2;
            j[(r, l.delta(i))] = dd;
            j[(r, l.theta(b))] = -dd;
            j[(r, l.p_g(i))] = -1.0;

            // Stator Q row.
            let r = nd + ng + i;
            let dd = -ep * v * s / xp + v * v * s2 * (1.0 / xp - 1.0 / gen.x_q);
            j[(r, l.e_p(i))] = v * c / xp;
            j[(r, l.v(b))] = ep * c / xp - 2.0 * v * (c * c / xp + s * s / gen.x_q);
            j[(r, l.delta(i))] = dd;
            j[(r, l.theta(b))] = -dd;
            j[(r, l.q_g(i))] = -1.0;

            j[(nd + 2 * ng + b, l.p_g(i))] = 1.0;
            j[(nd + 2 * ng + nb + b, l.q_g(i))] = 1.0;
        }

        for b in 0..nb {
            let rp = nd + 2 * ng + b;
            let rq = rp + nb;
            let (vi, ti) = (x[l.v(b)], x[l.theta(b)]);
            for &k in &y.neighbors[b] {
                let (gij, bij) = (y.g[(b, k)], y.b[(b, k)]);
                let vk = x[l.v(k)];
                if k == b {
                    j[(rp, l.v(b))] -= 2.0 * vi * gij;
                    j[(rq, l.v(b))] += 2.0 * vi * bij;
                    continue;
                }
                let (s, c) = (ti - x[l.theta(k)]).sin_cos();
                let pc = gij * c + bij * s;
                let ps = gij * s - bij * c;
                // P_b = Σ v_b v_k pc, Q_b = Σ v_b v_k ps; residuals carry −P_b, −Q_b.
                j[(rp, l.v(b))] -= vk * pc;
                j[(rp, l.v(k))] -= vi * pc;
                j[(rp, l.theta(b))] -= -vi * vk * ps;
                j[(rp, l.theta(k))] -= vi * vk * ps;
                j[(rq, l.v(b))] -= vk * ps;
                j[(rq, l.v(k))] -= vi * ps;
                j[(rq, l.theta(b))] -= vi * vk * pc;
                j[(rq, l.theta(k))] -= -vi * vk * pc;
            }
        }
        j
    }

    pub fn jacobian_blocks(&self, x: &DVector<f64>) -> JacobianBlocks {
        JacobianBlocks::from_full(&self.jacobian(x), self.layout().n_d())
    }

    /// Structural nonzeros of the algebraic block `G_xa`, as (row, col) pairs
    /// local to the block, derived from the generator-bus incidence and the
    /// admittance graph.
    pub fn g_xa_pattern(&self) -> Vec<(usize, usize)> {
        let l = self.layout();
        let nd = l.n_d();
        let (ng, nb) = (l.n_gen, l.n_bus);
        let y = self.case.admittance();
        let mut out = Vec::new();
        for (i, gen) in self.case.gens().iter().enumerate() {
            let b = gen.bus - 1;
            for (row, own) in [(i, l.p_g(i)), (ng + i, l.q_g(i))] {
                out.push((row, own - nd));
                out.push((row, l.v(b) - nd));
                out.push((row, l.theta(b) - nd));
            }
            out.push((2 * ng + b, l.p_g(i) - nd));
            out.push((2 * ng + nb + b, l.q_g(i) - nd));
        }
        for b in 0..nb {
            for &k in &y.neighbors[b] {
                for row in [2 * ng + b, 2 * ng + nb + b] {
                    out.push((row, l.v(k) - nd));
                    out.push((row, l.theta(k) - nd));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// `f(x, u)` with the stable governor sign.
pub fn eval_f(x: &DVector<f64>, u: &InputVector, case: &NetworkCase) -> DVector<f64> {
    Dynamics::new(case, GovernorSign::Stable).f(x, u)
}

/// `g(x)`: stator rows then power-balance rows.
pub fn eval_g(x: &DVector<f64>, case: &NetworkCase) -> DVector<f64> {
    Dynamics::new(case, GovernorSign::Stable).g(x)
}

pub fn eval_jacobian_blocks(x: &DVector<f64>, _u: &InputVector, case: &NetworkCase) -> JacobianBlocks {
    Dynamics::new(case, GovernorSign::Stable).jacobian_blocks(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{builtin_case, init_steady_state, Disturbance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base(name: &str) -> NetworkCase {
        Disturbance::default().base_case(&builtin_case(name).unwrap()).unwrap()
    }

    fn perturbed(x: &DVector<f64>, l: &StateLayout, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut y = x.clone();
        for k in 0..y.len() {
            let scale = if k >= l.omega(0) && k < l.omega(0) + l.n_gen {
                0.5
            } else {
                0.05
            };
            y[k] += scale * rng.random_range(-1.0..1.0);
        }
        y
    }

    /// Generator equations transcribed term by term, one machine at a time.
    fn f_oracle(x: &DVector<f64>, u: &InputVector, case: &NetworkCase) -> Vec<f64> {
        let g = case.n_gen();
        let n = case.n_bus();
        let mut out = vec![0.0; 4 * g];
        for (i, p) in case.gens().iter().enumerate() {
            let delta = x[i];
            let omega = x[g + i];
            let ep = x[2 * g + i];
            let tm = x[3 * g + i];
            let pg = x[4 * g + i];
            let v = x[6 * g + p.bus - 1];
            let th = x[6 * g + n + p.bus - 1];
            out[i] = omega - case.omega0();
            out[g + i] = (tm - pg - p.d * (omega - case.omega0())) / p.m;
            out[2 * g + i] =
                (-p.x_d / p.x_d_p * ep + (p.x_d - p.x_d_p) / p.x_d_p * v * (delta - th).cos() + u.e_fd[i]) / p.t_d0_p;
            out[3 * g + i] = (-tm - (omega - case.omega0()) / p.r_d + u.t_r[i]) / p.t_ch;
        }
        out
    }

    /// Stator equations in the grouped form and the balance via complex power
    /// `S = V conj(Y V)`.
    fn g_oracle(x: &DVector<f64>, case: &NetworkCase) -> Vec<f64> {
        type C = nalgebra::Complex<f64>;
        let g = case.n_gen();
        let n = case.n_bus();
        let mut out = vec![0.0; 2 * g + 2 * n];
        let volt: Vec<C> = (0..n).map(|b| C::from_polar(x[6 * g + b], x[6 * g + n + b])).collect();
        let y = case.admittance();
        for b in 0..n {
            let mut i_inj = C::new(0.0, 0.0);
            for (k, vk) in volt.iter().enumerate() {
                i_inj += C::new(y.g[(b, k)], y.b[(b, k)]) * vk;
            }
            let s = volt[b] * i_inj.conj();
            let bus = &case.buses()[b];
            out[2 * g + b] = -bus.p_load + bus.p_ren - s.re;
            out[2 * g + n + b] = -bus.q_load + bus.q_ren - s.im;
        }
        for (i, p) in case.gens().iter().enumerate() {
            let ep = x[2 * g + i];
            let (pg, qg) = (x[4 * g + i], x[5 * g + i]);
            let v = x[6 * g + p.bus - 1];
            let d = x[i] - x[6 * g + n + p.bus - 1];
            out[i] = ep * v / p.x_d_p * d.sin() - v * v / 2.0 * (1.0 / p.x_d_p - 1.0 / p.x_q) * (2.0 * d).sin() - pg;
            out[g + i] = ep * v / p.x_d_p * d.cos()
                - v * v / 2.0 * ((1.0 / p.x_d_p + 1.0 / p.x_q) + (1.0 / p.x_d_p - 1.0 / p.x_q) * (2.0 * d).cos())
                - qg;
            out[2 * g + p.bus - 1] += pg;
            out[2 * g + n + p.bus - 1] += qg;
        }
        out
    }

    #[test]
    fn omega_offset_drives_angles() {
        let case = base("case9");
        let (mut x, u) = init_steady_state(&case).unwrap();
        let l = StateLayout::of(&case);
        for i in 0..l.n_gen {
            x[l.omega(i)] += 1.0;
        }
        let f = eval_f(&x, &u, &case);
        for i in 0..l.n_gen {
            assert!((f[l.delta(i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_oracles_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for name in ["case9", "case39"] {
            let case = base(name);
            let (x0, u) = init_steady_state(&case).unwrap();
            let l = StateLayout::of(&case);
            for _ in 0..10 {
                let x = perturbed(&x0, &l, &mut rng);
                let f = eval_f(&x, &u, &case);
                let g = eval_g(&x, &case);
                for (a, b) in f.iter().zip(f_oracle(&x, &u, &case)) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{name}: f {a} vs {b}");
                }
                for (a, b) in g.iter().zip(g_oracle(&x, &case)) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{name}: g {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn single_machine_at_zero_angle() {
        // One machine, one bus, δ = θ and x_q = x'_d: the real-power stator
        // residual reduces to −P_G.
        use crate::netmodel::{BusKind, BusRecord, GeneratorParams, OMEGA0_60HZ};
        let bus = BusRecord {
            id: 1,
            original_id: 1,
            kind: BusKind::Slack,
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v: 1.0,
            theta: 0.0,
            p_ren: 0.0,
            q_ren: 0.0,
        };
        let gen = GeneratorParams {
            bus: 1,
            p_set: 0.0,
            q_set: 0.0,
            v_set: 1.0,
            m: 0.1,
            d: 0.1,
            x_d: 1.0,
            x_q: 0.3,
            x_d_p: 0.3,
            t_d0_p: 5.0,
            t_ch: 0.2,
            r_d: 0.2,
        };
        let case = NetworkCase::new("toy", 100.0, OMEGA0_60HZ, vec![bus], vec![], vec![gen]).unwrap();
        let x = DVector::from_vec(vec![0.2, OMEGA0_60HZ, 1.1, 0.0, 0.0, 0.0, 1.05, 0.2]);
        assert_eq!(eval_g(&x, &case)[0], 0.0);
    }

    fn central_difference(fun: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, eps: f64) -> DMatrix<f64> {
        let m = fun(x).len();
        let mut out = DMatrix::zeros(m, x.len());
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += eps;
            xm[k] -= eps;
            out.set_column(k, &((fun(&xp) - fun(&xm)) / (2.0 * eps)));
        }
        out
    }

    #[test]
    fn jacobian_blocks_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let case = base("case9");
        let (x0, u) = init_steady_state(&case).unwrap();
        let l = StateLayout::of(&case);
        let dynamics = Dynamics::new(&case, GovernorSign::Stable);
        for _ in 0..10 {
            let x = perturbed(&x0, &l, &mut rng);
            let fd = central_difference(|z| dynamics.rhs(z, &u), &x, 1e-6);
            let jb = eval_jacobian_blocks(&x, &u, &case);
            let an = jb.full();
            let fdb = JacobianBlocks::from_full(&fd, l.n_d());
            for (a, b) in [
                (&jb.f_xd, &fdb.f_xd),
                (&jb.f_xa, &fdb.f_xa),
                (&jb.g_xd, &fdb.g_xd),
                (&jb.g_xa, &fdb.g_xa),
            ] {
                let err = (a - b).abs().max() / b.abs().max().max(1.0);
                assert!(err < 1e-6, "block error {err}");
            }
            assert_eq!(an.nrows(), l.n());
        }
    }

    #[test]
    fn delta_rows_are_identity_in_omega() {
        let case = base("case9");
        let (x, u) = init_steady_state(&case).unwrap();
        let jb = eval_jacobian_blocks(&x, &u, &case);
        let g = case.n_gen();
        for i in 0..g {
            for k in 0..jb.f_xd.ncols() {
                let expect = if k == g + i { 1.0 } else { 0.0 };
                assert_eq!(jb.f_xd[(i, k)], expect);
            }
            assert!(jb.f_xa.row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stator_rows_are_minus_identity_in_generator_powers() {
        let case = base("case39");
        let (x, u) = init_steady_state(&case).unwrap();
        let jb = eval_jacobian_blocks(&x, &u, &case);
        let g = case.n_gen();
        let block = jb.g_xa.view((0, 0), (2 * g, 2 * g));
        assert_eq!(block.into_owned(), -DMatrix::<f64>::identity(2 * g, 2 * g));
    }

    #[test]
    fn g_xa_fills_only_its_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for name in ["case9", "case39"] {
            let case = base(name);
            let (x0, u) = init_steady_state(&case).unwrap();
            let l = StateLayout::of(&case);
            let dynamics = Dynamics::new(&case, GovernorSign::Stable);
            let pattern = dynamics.g_xa_pattern();
            let expected = 2 * (3 * l.n_gen) + 2 * l.n_gen + 4 * case.admittance().nnz();
            assert_eq!(pattern.len(), expected);
            let x = perturbed(&x0, &l, &mut rng);
            let gxa = eval_jacobian_blocks(&x, &u, &case).g_xa;
            let mut nonzero = 0;
            for r in 0..gxa.nrows() {
                for c in 0..gxa.ncols() {
                    if gxa[(r, c)] != 0.0 {
                        nonzero += 1;
                        assert!(pattern.binary_search(&(r, c)).is_ok(), "{name}: fill at {r},{c}");
                    }
                }
            }
            assert_eq!(nonzero, pattern.len());
        }
    }

    #[test]
    fn balance_rows_are_rotation_invariant() {
        let case = base("case9");
        let (x, _) = init_steady_state(&case).unwrap();
        let l = StateLayout::of(&case);
        let mut y = x.clone();
        for i in 0..l.n_gen {
            y[l.delta(i)] += 0.7;
        }
        for b in 0..l.n_bus {
            y[l.theta(b)] += 0.7;
        }
        let (gx, gy) = (eval_g(&x, &case), eval_g(&y, &case));
        assert!((gx - gy).amax() < 1e-12);
    }

    #[test]
    fn labels_follow_layout() {
        let l = StateLayout { n_gen: 2, n_bus: 3 };
        let labels = l.labels();
        assert_eq!(labels.len(), l.n());
        assert_eq!(labels[l.omega(1)], "omega_2");
        assert_eq!(labels[l.theta(2)], "theta_3");
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn directional_derivative_consistent(seed in any::<u64>()) {
                let case = base("case9");
                let (x0, u) = init_steady_state(&case).unwrap();
                let l = StateLayout::of(&case);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = perturbed(&x0, &l, &mut rng);
                let d = DVector::from_fn(l.n(), |_, _| rng.random_range(-1.0..1.0));
                let dynamics = Dynamics::new(&case, GovernorSign::Stable);
                let eps = 1e-6;
                let fd = (dynamics.rhs(&(&x + &d * eps), &u) - dynamics.rhs(&(&x - &d * eps), &u)) / (2.0 * eps);
                let an = dynamics.jacobian(&x) * &d;
                let rel = (&fd - &an).norm() / an.norm().max(1e-12);
                prop_assert!(rel < 1e-5, "relative error {}", rel);
            }
        }
    }
}
