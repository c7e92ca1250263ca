//! Back-solve of generator internal states and inputs from a power-flow
//! solution so that the model sits exactly at equilibrium.

use nalgebra::{Complex, DVector};

use super::{solve_power_flow, NetworkCase};
use crate::dynamics::{Dynamics, GovernorSign, InputVector, StateLayout};
use crate::error::{Error, Result};

/// Largest |f| or |g| accepted at the back-solved steady state.
pub const STEADY_STATE_TOL: f64 = 1e-8;

pub fn init_steady_state(case: &NetworkCase) -> Result<(DVector<f64>, InputVector)> {
    init_steady_state_with(case, GovernorSign::Stable)
}

/// Refines the power flow from the stored voltages, then for each machine:
/// terminal current `I = conj(S/V)`, rotor angle `δ = arg(V + j x_q I)`,
/// `E' = V_q + x'_d I_d`, `T_M = P_G`, and the inputs `E_fd`, `T_r` that null
/// the field and governor equations.
pub fn init_steady_state_with(case: &NetworkCase, governor: GovernorSign) -> Result<(DVector<f64>, InputVector)> {
    let pf = solve_power_flow(case)?;
    let l = StateLayout::of(case);
    let w0 = case.omega0();
    let mut x = DVector::zeros(l.n());
    let mut u = InputVector {
        e_fd: vec![0.0; l.n_gen],
        t_r: vec![0.0; l.n_gen],
    };

    for b in 0..l.n_bus {
        x[l.v(b)] = pf.v[b];
        x[l.theta(b)] = pf.theta[b];
    }
    for (i, gen) in case.gens().iter().enumerate() {
        let b = gen.bus - 1;
        let (v, theta) = (pf.v[b], pf.theta[b]);
        let (pg, qg) = (pf.p_gen[i], pf.q_gen[i]);
        let volt = Complex::from_polar(v, theta);
        let current = (Complex::new(pg, qg) / volt).conj();
        let delta = (volt + Complex::new(0.0, gen.x_q) * current).arg();
        // Park rotation into the machine frame: (d + jq) = (·) e^{-j(δ - π/2)}.
        let rot = Complex::from_polar(1.0, std::f64::consts::FRAC_PI_2 - delta);
        let i_dq = current * rot;
        let v_dq = volt * rot;
        let e_p = v_dq.im + gen.x_d_p * i_dq.re;
        let cos_d = (delta - theta).cos();

        x[l.delta(i)] = delta;
        x[l.omega(i)] = w0;
        x[l.e_p(i)] = e_p;
        x[l.t_m(i)] = pg;
        x[l.p_g(i)] = pg;
        x[l.q_g(i)] = qg;
        u.e_fd[i] = (gen.x_d / gen.x_d_p) * e_p - ((gen.x_d - gen.x_d_p) / gen.x_d_p) * v * cos_d;
        u.t_r[i] = match governor {
            GovernorSign::Stable => pg,
            GovernorSign::Printed => -pg,
        };
    }

    let model = Dynamics::new(case, governor);
    let f = model.f(&x, &u);
    let g = model.g(&x);
    let (worst, mismatch) = g
        .iter()
        .chain(f.iter())
        .map(|r| r.abs())
        .enumerate()
        .fold((0, 0.0), |acc, (k, r)| if r > acc.1 { (k, r) } else { acc });
    if !(mismatch <= STEADY_STATE_TOL) {
        let bus = if worst >= 2 * l.n_gen && worst < l.n_a() {
            (worst - 2 * l.n_gen) % l.n_bus
        } else {
            case.gens()[worst % l.n_gen.max(1)].bus - 1
        };
        return Err(Error::Initialization {
            bus: case.buses()[bus].original_id as usize,
            mismatch,
            reason: "equilibrium residual above tolerance".into(),
        });
    }
    Ok((x, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{eval_f, eval_g};
    use crate::netmodel::{builtin_case, Disturbance};

    #[test]
    fn equilibrium_for_builtin_cases() {
        for name in ["case9", "case39"] {
            for share in [0.0, 0.2] {
                let case = builtin_case(name).unwrap().with_renewable_share(share).unwrap();
                let (x, u) = init_steady_state(&case).unwrap();
                let l = StateLayout::of(&case);
                assert!(eval_f(&x, &u, &case).amax() <= 1e-8, "{name}");
                assert!(eval_g(&x, &case).amax() <= 1e-8, "{name}");
                for i in 0..l.n_gen {
                    assert_eq!(x[l.omega(i)], 120.0 * std::f64::consts::PI);
                }
            }
        }
    }

    #[test]
    fn printed_governor_sign_has_matching_reference() {
        let case = Disturbance::default()
            .base_case(&builtin_case("case9").unwrap())
            .unwrap();
        let (x, u) = init_steady_state_with(&case, GovernorSign::Printed).unwrap();
        let f = Dynamics::new(&case, GovernorSign::Printed).f(&x, &u);
        assert!(f.amax() <= 1e-8);
    }
}
