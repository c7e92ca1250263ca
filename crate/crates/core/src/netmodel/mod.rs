//! Network cases: buses, branches, generators, the bus admittance matrix,
//! AC power flow, steady-state initialization and load disturbances.
//!
//! All quantities are stored in per-unit on `base_mva`, angles in radians.
//! Buses are numbered contiguously `1..=N` in file order; the identifier used
//! in the source file is kept as `original_id`.

mod admittance;
mod builtin;
mod canonical;
mod matpower;
mod powerflow;
mod steady;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use builtin::{builtin_case, builtin_sidecar, BUILTIN_CASES};
pub use canonical::{CaseFile, GeneratorSidecar, SidecarEntry};
pub use matpower::{parse_matpower_str, MatpowerCase};
pub use powerflow::{power_injections, solve_power_flow, PowerFlowSolution};
pub use steady::{init_steady_state, init_steady_state_with};

/// Synchronous speed of a 60 Hz system, rad/s.
pub const OMEGA0_60HZ: f64 = 120.0 * std::f64::consts::PI;

/// Power-flow mismatch accepted as "solved", pu.
pub const POWER_FLOW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "pv")]
    PV,
    #[serde(rename = "pq")]
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    /// Contiguous 1-based index.
    pub id: usize,
    pub original_id: u64,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    /// Shunt conductance and susceptance at 1 pu voltage.
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v: f64,
    pub theta: f64,
    pub p_ren: f64,
    pub q_ren: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// 1-based bus indices.
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b: f64,
    /// Off-nominal turns ratio at the `from` end; 1 for lines.
    pub tap: f64,
    /// Phase shift, rad.
    pub shift: f64,
}

/// Dispatch and two-axis machine constants of one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// 1-based bus index.
    pub bus: usize,
    /// Scheduled real and reactive output, pu.
    pub p_set: f64,
    pub q_set: f64,
    /// Voltage set-point, pu.
    pub v_set: f64,
    /// Inertia M = 2H/ω0, pu·s².
    pub m: f64,
    /// Damping, pu·s.
    pub d: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_p: f64,
    pub t_d0_p: f64,
    pub t_ch: f64,
    pub r_d: f64,
}

impl GeneratorParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("d", self.d),
            ("x_d", self.x_d),
            ("x_q", self.x_q),
            ("x_d_p", self.x_d_p),
            ("t_d0_p", self.t_d0_p),
            ("t_ch", self.t_ch),
            ("r_d", self.r_d),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Validation(format!(
                    "generator at bus {}: {name} must be positive, got {value}",
                    self.bus
                )));
            }
        }
        if self.x_d < self.x_d_p || self.x_q < self.x_d_p {
            return Err(Error::Validation(format!(
                "generator at bus {}: need x_d >= x_d' and x_q >= x_d'",
                self.bus
            )));
        }
        Ok(())
    }
}

/// Load and renewable perturbation, in percent of the base values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Disturbance {
    pub alpha_l: f64,
    pub alpha_r: f64,
    /// Renewable injection installed in the base case as a share of load.
    pub renewable_fraction: f64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Disturbance {
            alpha_l: 0.0,
            alpha_r: 0.0,
            renewable_fraction: 0.2,
        }
    }
}

impl Disturbance {
    /// Equal load and renewable perturbation of `alpha` percent.
    pub fn uniform(alpha: f64) -> Self {
        Disturbance {
            alpha_l: alpha,
            alpha_r: alpha,
            ..Default::default()
        }
    }

    /// The undisturbed operating point: renewables installed at
    /// `renewable_fraction` of each load and the power flow re-solved.
    pub fn base_case(&self, raw: &NetworkCase) -> Result<NetworkCase> {
        raw.with_renewable_share(self.renewable_fraction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    name: String,
    base_mva: f64,
    omega0: f64,
    buses: Vec<BusRecord>,
    branches: Vec<Branch>,
    gens: Vec<GeneratorParams>,
    y: AdmittanceMatrix,
    gen_at_bus: Vec<Option<usize>>,
}

impl NetworkCase {
    /// Validates the records and assembles the admittance matrix.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        omega0: f64,
        buses: Vec<BusRecord>,
        branches: Vec<Branch>,
        gens: Vec<GeneratorParams>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!("base MVA must be positive, got {base_mva}")));
        }
        if !(omega0 > 0.0) {
            return Err(Error::Validation(format!("omega0 must be positive, got {omega0}")));
        }
        if buses.is_empty() {
            return Err(Error::Validation("case has no buses".into()));
        }
        let n = buses.len();
        let mut seen = std::collections::HashSet::new();
        for (k, bus) in buses.iter().enumerate() {
            if bus.id != k + 1 {
                return Err(Error::Validation(format!(
                    "bus at position {} has index {}; indices must be contiguous from 1",
                    k + 1,
                    bus.id
                )));
            }
            if !seen.insert(bus.original_id) {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.original_id)));
            }
            if !(bus.v > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {}: voltage must be positive",
                    bus.original_id
                )));
            }
            if bus.p_ren < 0.0 || bus.q_ren < 0.0 {
                return Err(Error::Validation(format!(
                    "bus {}: renewable injection must be nonnegative",
                    bus.original_id
                )));
            }
        }
        let slack = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {slack}"
            )));
        }
        for br in &branches {
            if br.from == 0 || br.from > n || br.to == 0 || br.to > n {
                return Err(Error::Validation(format!(
                    "branch {}-{} references a bus outside 1..={n}",
                    br.from, br.to
                )));
            }
        }
        let mut gen_at_bus = vec![None; n];
        for (g, gen) in gens.iter().enumerate() {
            if gen.bus == 0 || gen.bus > n {
                return Err(Error::Validation(format!(
                    "generator {} at unknown bus {}",
                    g + 1,
                    gen.bus
                )));
            }
            if gen_at_bus[gen.bus - 1].replace(g).is_some() {
                return Err(Error::Validation(format!(
                    "more than one generator at bus {}",
                    buses[gen.bus - 1].original_id
                )));
            }
            gen.validate()?;
        }
        for bus in &buses {
            if bus.kind != BusKind::PQ && gen_at_bus[bus.id - 1].is_none() {
                return Err(Error::Validation(format!(
                    "bus {} is {:?} but has no generator",
                    bus.original_id, bus.kind
                )));
            }
        }
        let y = build_admittance(n, &branches, &buses)?;
        Ok(NetworkCase {
            name: name.into(),
            base_mva,
            omega0,
            buses,
            branches,
            gens,
            y,
            gen_at_bus,
        })
    }

    /// Reads a MATPOWER `.m` file or a canonical JSON case. MATPOWER input
    /// needs the generator sidecar for machine constants.
    pub fn load(path: &Path, sidecar: Option<&Path>) -> Result<Self> {
        let text = read_file(path)?;
        let is_json =
            path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
        if is_json {
            return CaseFile::from_json(&text)?.into_case();
        }
        let sidecar = sidecar.ok_or_else(|| {
            Error::Config(format!(
                "{}: MATPOWER input needs a generator parameter sidecar",
                path.display()
            ))
        })?;
        let sidecar = GeneratorSidecar::from_json(&read_file(sidecar)?)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        parse_matpower_str(&text)?.into_case(&name, &sidecar)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn buses(&self) -> &[BusRecord] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn gens(&self) -> &[GeneratorParams] {
        &self.gens
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.gens.len()
    }

    /// 0-based generator position at a 0-based bus position.
    pub fn gen_at(&self, bus: usize) -> Option<usize> {
        self.gen_at_bus[bus]
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated")
    }

    pub fn to_case_file(&self) -> CaseFile {
        CaseFile::from_case(self)
    }

    /// Copy with new bus voltages (e.g. a power-flow solution).
    pub fn with_voltages(&self, v: &[f64], theta: &[f64]) -> NetworkCase {
        let mut out = self.clone();
        for (bus, (&vm, &va)) in out.buses.iter_mut().zip(v.iter().zip(theta)) {
            bus.v = vm;
            bus.theta = va;
        }
        out
    }

    /// Installs renewable injection at `fraction` of each (positive) bus load,
    /// scales non-slack real-power dispatch by the same share so the slack
    /// keeps its nominal output, and re-solves the power flow.
    pub fn with_renewable_share(&self, fraction: f64) -> Result<NetworkCase> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Domain(format!("renewable fraction {fraction} outside [0, 1]")));
        }
        let mut out = self.clone();
        for bus in &mut out.buses {
            bus.p_ren = fraction * bus.p_load.max(0.0);
            bus.q_ren = fraction * bus.q_load.max(0.0);
        }
        let slack = out.slack();
        for gen in &mut out.gens {
            if gen.bus - 1 != slack {
                gen.p_set *= 1.0 - fraction;
            }
        }
        let pf = solve_power_flow(&out)?;
        Ok(out.with_voltages(&pf.v, &pf.theta))
    }

    /// Total real and reactive load.
    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }

    /// Total real and reactive renewable injection.
    pub fn total_renewable(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_ren, q + b.q_ren))
    }
}

/// Scales loads by `1 + α_L/100` and renewables by `1 + α_R/100`.
pub fn apply_disturbance(case: &NetworkCase, d: &Disturbance) -> NetworkCase {
    let kl = 1.0 + d.alpha_l / 100.0;
    let kr = 1.0 + d.alpha_r / 100.0;
    let mut out = case.clone();
    for bus in &mut out.buses {
        bus.p_load *= kl;
        bus.q_load *= kl;
        bus.p_ren *= kr;
        bus.q_ren *= kr;
    }
    out
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
