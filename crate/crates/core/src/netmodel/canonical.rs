//! Canonical JSON case format and the generator-parameter sidecar.
//!
//! Case schema (all powers and impedances in pu, angles in rad):
//!
//! ```json
//! {
//!   "format": "gridobs-case/1",
//!   "name": "case9", "base_mva": 100.0, "omega0": 376.99,
//!   "buses": [{"id": 1, "original_id": 1, "kind": "slack", "p_load": 0.0, "q_load": 0.0,
//!              "g_shunt": 0.0, "b_shunt": 0.0, "v": 1.04, "theta": 0.0,
//!              "p_ren": 0.0, "q_ren": 0.0}],
//!   "branches": [{"from": 1, "to": 4, "r": 0.0, "x": 0.0576, "b": 0.0, "tap": 1.0, "shift": 0.0}],
//!   "generators": [{"bus": 1, "p_set": 0.723, "q_set": 0.27, "v_set": 1.04, "m": 0.125,
//!                   "d": 0.05, "x_d": 0.146, "x_q": 0.0969, "x_d_p": 0.0608,
//!                   "t_d0_p": 8.96, "t_ch": 0.2, "r_d": 0.2}]
//! }
//! ```
//!
//! Sidecar schema, keyed by the bus id used in the source file. Each machine
//! gives either `m` or `h` (M = 2H/ω0); `t_ch` and `r_d` fall back to the
//! top-level defaults.
//!
//! ```json
//! {"omega0": 376.99, "t_ch": 0.2, "r_d": 0.2,
//!  "generators": {"1": {"h": 23.64, "d": 0.05, "x_d": 0.146, "x_q": 0.0969,
//!                       "x_d_p": 0.0608, "t_d0_p": 8.96}}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Branch, BusRecord, GeneratorParams, NetworkCase, OMEGA0_60HZ};
use crate::error::{Error, Result};

pub const CASE_FORMAT: &str = "gridobs-case/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub format: String,
    pub name: String,
    pub base_mva: f64,
    pub omega0: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<Branch>,
    pub generators: Vec<GeneratorParams>,
}

impl CaseFile {
    pub fn from_case(case: &NetworkCase) -> Self {
        CaseFile {
            format: CASE_FORMAT.into(),
            name: case.name().into(),
            base_mva: case.base_mva(),
            omega0: case.omega0(),
            buses: case.buses().to_vec(),
            branches: case.branches().to_vec(),
            generators: case.gens().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text)?;
        if file.format != CASE_FORMAT {
            return Err(Error::Config(format!(
                "unsupported case format '{}', expected '{CASE_FORMAT}'",
                file.format
            )));
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn into_case(self) -> Result<NetworkCase> {
        NetworkCase::new(
            self.name,
            self.base_mva,
            self.omega0,
            self.buses,
            self.branches,
            self.generators,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
    pub d: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_p: f64,
    pub t_d0_p: f64,
    #[serde(default)]
    pub t_ch: Option<f64>,
    #[serde(default)]
    pub r_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSidecar {
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    #[serde(default = "default_t_ch")]
    pub t_ch: f64,
    #[serde(default = "default_r_d")]
    pub r_d: f64,
    pub generators: BTreeMap<String, SidecarEntry>,
}

fn default_omega0() -> f64 {
    OMEGA0_60HZ
}

fn default_t_ch() -> f64 {
    0.2
}

fn default_r_d() -> f64 {
    0.2
}

/// Machine constants resolved from a sidecar entry.
pub(crate) struct ResolvedParams {
    pub m: f64,
    pub d: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_p: f64,
    pub t_d0_p: f64,
    pub t_ch: f64,
    pub r_d: f64,
}

impl GeneratorSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("generator sidecar: {e}")))
    }

    pub(crate) fn params_for(&self, original_bus: u64) -> Result<ResolvedParams> {
        let entry = self
            .generators
            .get(&original_bus.to_string())
            .ok_or_else(|| Error::Config(format!("no generator parameters for bus {original_bus}")))?;
        let m = match (entry.m, entry.h) {
            (Some(m), _) => m,
            (None, Some(h)) => 2.0 * h / self.omega0,
            (None, None) => {
                return Err(Error::Config(format!(
                    "generator at bus {original_bus}: give either m or h"
                )));
            }
        };
        Ok(ResolvedParams {
            m,
            d: entry.d,
            x_d: entry.x_d,
            x_q: entry.x_q,
            x_d_p: entry.x_d_p,
            t_d0_p: entry.t_d0_p,
            t_ch: entry.t_ch.unwrap_or(self.t_ch),
            r_d: entry.r_d.unwrap_or(self.r_d),
        })
    }
}
