//! Run configuration: a JSON file mirroring [`RunConfig`], overridden by
//! command-line flags, validated before any computation starts.

use std::path::{Path, PathBuf};

use gridobs::integrator::Scheme;
use gridobs::netmodel::{builtin_case, builtin_sidecar, parse_matpower_str, NetworkCase, BUILTIN_CASES};
use gridobs::placement::{count_for_fraction, StudyConfig};
use gridobs::{Error, Result};
use serde::{Deserialize, Serialize};

/// Relaxation parameters swept by `validate-mu` unless configured.
pub const DEFAULT_MUS: [f64; 8] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];

/// Sensor fractions swept by `sweep` unless configured.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A built-in case name or a path to a MATPOWER `.m` or canonical JSON file.
    pub case: String,
    /// Machine constants for MATPOWER input. Built-in names supply their own.
    pub sidecar: Option<PathBuf>,
    pub study: StudyConfig,
    pub mus: Vec<f64>,
    /// Sensor counts. When empty, `fractions` of the bus count are used.
    pub p: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Buses measured by `estimate`; all buses when absent.
    pub buses: Option<Vec<usize>>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: "case9".into(),
            sidecar: None,
            study: StudyConfig::default(),
            mus: DEFAULT_MUS.to_vec(),
            p: Vec::new(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
            buses: None,
            output: None,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read(path)?)?)
    }

    /// Checks every knob against the preconditions of the modules it feeds.
    pub fn validate(&self) -> Result<()> {
        let s = &self.study;
        s.sim.validate()?;
        if !(s.h > 0.0) {
            return Err(Error::Config(format!("step h must be positive, got {}", s.h)));
        }
        Scheme::parse(&s.scheme, s.h)?;
        if !(s.noise_pct >= 0.0) {
            return Err(Error::Config(format!("noise {}% must be nonnegative", s.noise_pct)));
        }
        if s.n_o < 2 {
            return Err(Error::Config(format!("window N_o = {} must be at least 2", s.n_o)));
        }
        if !(s.h_g > 0.0 && s.h_g <= 1.0) {
            return Err(Error::Config(format!("Gauss-Newton step {} outside (0, 1]", s.h_g)));
        }
        if !(s.gn_tol > 0.0) {
            return Err(Error::Config(format!("gn_tol must be positive, got {}", s.gn_tol)));
        }
        let d = &s.disturbance;
        for (name, v) in [("alpha_l", d.alpha_l), ("alpha_r", d.alpha_r)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(0.0..=1.0).contains(&d.renewable_fraction) {
            return Err(Error::Config(format!(
                "renewable fraction {} outside [0, 1]",
                d.renewable_fraction
            )));
        }
        if let Some(&mu) = self.mus.iter().find(|&&m| !(m > 0.0)) {
            return Err(Error::Config(format!("swept mu must be positive, got {mu}")));
        }
        for &f in &self.fractions {
            count_for_fraction(f, 1)?;
        }
        Ok(())
    }

    /// The raw case, without renewables.
    pub fn load_case(&self) -> Result<NetworkCase> {
        let path = Path::new(&self.case);
        if path.exists() {
            return load_case_file(path, self.sidecar.as_deref());
        }
        if BUILTIN_CASES.contains(&self.case.as_str()) {
            return builtin_case(&self.case);
        }
        Err(Error::Config(format!(
            "case '{}' is neither a file nor a built-in case ({})",
            self.case,
            BUILTIN_CASES.join(", ")
        )))
    }

    /// Sensor counts for `n` buses, ascending and distinct.
    pub fn counts(&self, n: usize) -> Result<Vec<usize>> {
        let mut counts = if self.p.is_empty() {
            self.fractions
                .iter()
                .map(|&f| count_for_fraction(f, n))
                .collect::<Result<Vec<_>>>()?
        } else {
            self.p.clone()
        };
        if let Some(&p) = counts.iter().find(|&&p| p > n) {
            return Err(Error::Domain(format!("cannot place {p} sensors on {n} buses")));
        }
        counts.sort_unstable();
        counts.dedup();
        Ok(counts)
    }
}

/// Loads a case file. MATPOWER input takes machine constants from `sidecar`
/// or, when the file is named after a built-in case, from that case.
pub fn load_case_file(path: &Path, sidecar: Option<&Path>) -> Result<NetworkCase> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json || sidecar.is_some() {
        return NetworkCase::load(path, sidecar);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = read(path)?;
    if text.trim_start().starts_with('{') {
        return NetworkCase::load(path, None);
    }
    if !BUILTIN_CASES.contains(&stem.as_str()) {
        return Err(Error::Config(format!(
            "{}: MATPOWER input needs a generator parameter sidecar (--sidecar)",
            path.display()
        )));
    }
    parse_matpower_str(&text)?.into_case(&stem, &builtin_sidecar(&stem)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"case": "case39", "study": {"noise_pct": 1.0}}"#).unwrap();
        assert_eq!(c.case, "case39");
        assert_eq!(c.study.noise_pct, 1.0);
        assert_eq!(c.study.n_o, 10);
        assert!(serde_json::from_str::<RunConfig>(r#"{"cas": "x"}"#).is_err());
    }

    #[test]
    fn rejects_bad_knobs() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.study.scheme = "rk4".into()));
        assert!(bad(|c| c.study.h = 0.0));
        assert!(bad(|c| c.study.noise_pct = -1.0));
        assert!(bad(|c| c.study.n_o = 1));
        assert!(bad(|c| c.study.sim.mu = 0.0));
        assert!(bad(|c| c.mus = vec![1e-3, -1.0]));
        assert!(bad(|c| c.fractions = vec![1.5]));
    }

    #[test]
    fn counts_from_fractions_or_list() {
        let mut c = RunConfig::default();
        assert_eq!(c.counts(9).unwrap(), vec![2, 4, 5, 7]);
        assert_eq!(c.counts(39).unwrap(), vec![8, 16, 23, 31]);
        c.p = vec![4, 2, 4];
        assert_eq!(c.counts(9).unwrap(), vec![2, 4]);
        c.p = vec![10];
        assert!(c.counts(9).is_err());
    }

    #[test]
    fn case_resolution() {
        let c = RunConfig::default();
        assert_eq!(c.load_case().unwrap().n_bus(), 9);
        let missing = RunConfig {
            case: "no-such-case".into(),
            ..RunConfig::default()
        };
        assert!(matches!(missing.load_case(), Err(Error::Config(_))));
    }
}
