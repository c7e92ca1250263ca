use super::{parse_matpower_str, GeneratorSidecar, NetworkCase};
use crate::error::{Error, Result};

/// Cases shipped with the library: the WSCC 9-bus and New England 39-bus
/// systems with published two-axis machine constants.
pub const BUILTIN_CASES: [&str; 2] = ["case9", "case39"];

const CASE9_M: &str = include_str!("../../data/case9.m");
const CASE9_GEN: &str = include_str!("../../data/case9_gen.json");
const CASE39_M: &str = include_str!("../../data/case39.m");
const CASE39_GEN: &str = include_str!("../../data/case39_gen.json");

fn sources(name: &str) -> Result<(&'static str, &'static str)> {
    match name {
        "case9" => Ok((CASE9_M, CASE9_GEN)),
        "case39" => Ok((CASE39_M, CASE39_GEN)),
        other => Err(Error::Config(format!(
            "unknown built-in case '{other}' (available: {})",
            BUILTIN_CASES.join(", ")
        ))),
    }
}

/// Raw (renewable-free) built-in case by name.
pub fn builtin_case(name: &str) -> Result<NetworkCase> {
    let (text, _) = sources(name)?;
    parse_matpower_str(text)?.into_case(name, &builtin_sidecar(name)?)
}

/// Machine constants of a built-in case, usable with its MATPOWER file.
pub fn builtin_sidecar(name: &str) -> Result<GeneratorSidecar> {
    GeneratorSidecar::from_json(sources(name)?.1)
}
