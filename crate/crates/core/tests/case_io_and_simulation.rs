use std::path::Path;

use gridobs::dynamics::{Dynamics, GovernorSign};
use gridobs::integrator::{simulate, Scheme, SimConfig};
use gridobs::netmodel::{builtin_case, init_steady_state, CaseFile, Disturbance, NetworkCase};

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[test]
fn files_on_disk_match_builtin_cases() {
    for name in ["case9", "case39"] {
        let loaded = NetworkCase::load(&data(&format!("{name}.m")), Some(&data(&format!("{name}_gen.json")))).unwrap();
        let builtin = builtin_case(name).unwrap();
        assert_eq!(loaded, builtin);
        let text = CaseFile::from_case(&builtin).to_json();
        assert_eq!(CaseFile::from_json(&text).unwrap().into_case().unwrap(), builtin);
    }
    assert!(NetworkCase::load(&data("case9.m"), None).is_err());
}

#[test]
fn case39_steady_state_is_an_equilibrium() {
    let case = Disturbance::default()
        .base_case(&builtin_case("case39").unwrap())
        .unwrap();
    let (x0, u) = init_steady_state(&case).unwrap();
    let dyn_ = Dynamics::new(&case, GovernorSign::Stable);
    assert_eq!(x0.len(), 4 * 10 + 2 * 10 + 2 * 39);
    assert!(dyn_.f(&x0, &u).amax() < 1e-8);
    assert!(dyn_.g(&x0).amax() < 1e-8);

    let cfg = SimConfig {
        t_end: 3.0,
        ..SimConfig::default()
    };
    let tr = simulate(
        &x0,
        &u,
        &case,
        &Scheme::bdf(3, 0.1).unwrap(),
        &cfg,
        &Disturbance::uniform(0.0),
    )
    .unwrap();
    assert!(tr.states.iter().all(|x| (x - &x0).amax() < 1e-6));

    let moved = simulate(
        &x0,
        &u,
        &case,
        &Scheme::bdf(3, 0.1).unwrap(),
        &cfg,
        &Disturbance::uniform(3.0),
    )
    .unwrap();
    let drift = (moved.states.last().unwrap() - &x0).amax();
    assert!(drift > 1e-4 && drift.is_finite());
}
