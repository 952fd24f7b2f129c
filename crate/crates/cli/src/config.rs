use std::path::{Path, PathBuf};

use proctomo::probe::{Provenance, DEFAULT_FAMILY_CAP};
use proctomo::process::Preset;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub provenance: Provenance,
    pub cap: u64,
    /// Number of Weyl-index tuples to keep (seeded); all when absent.
    pub subsample: Option<usize>,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            provenance: Provenance::Theorem2Weyl,
            cap: DEFAULT_FAMILY_CAP as u64,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative singular-value threshold for span ranks.
    pub rank: f64,
    /// PSD, comb and identity checks.
    pub check: f64,
    /// Frobenius error allowed for exact-data reconstruction.
    pub reconstruction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: 1e-8,
            check: 1e-10,
            reconstruction: 1e-7,
        }
    }
}

/// Everything a run needs; read from the config file, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d_sys: usize,
    pub n_labs: usize,
    pub preset: String,
    pub seed: u64,
    pub family: FamilyConfig,
    pub shots: u64,
    pub tolerances: Tolerances,
    pub out: PathBuf,
    pub psd_projection: bool,
    pub tikhonov: f64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_sys: 2,
            n_labs: 1,
            preset: "HaarEnv(2)".into(),
            seed: 0,
            family: FamilyConfig::default(),
            shots: 0,
            tolerances: Tolerances::default(),
            out: PathBuf::from("proctomo-out"),
            psd_projection: false,
            tikhonov: 0.0,
            threads: None,
        }
    }
}

fn bad(field: &'static str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field,
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| bad("config", format!("{}: {e}", path.display())))
    }

    pub fn preset(&self) -> Result<Preset, CliError> {
        self.preset
            .parse()
            .map_err(|e: proctomo::Error| bad("preset", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(2..=5).contains(&self.d_sys) {
            return Err(bad("d_sys", format!("{} outside 2..=5", self.d_sys)));
        }
        if !(1..=4).contains(&self.n_labs) {
            return Err(bad("n_labs", format!("{} outside 1..=4", self.n_labs)));
        }
        if self.shots > 10_000_000_000 {
            return Err(bad("shots", "at most 1e10 per setting"));
        }
        if let Preset::HaarEnv { d_env } = self.preset()? {
            if !(1..=4).contains(&d_env) {
                return Err(bad("preset", format!("environment dimension {d_env} outside 1..=4")));
            }
        }
        if let Preset::MarkovDepolarizing { p } = self.preset()? {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad("preset", format!("depolarizing strength {p} outside [0, 1]")));
            }
        }
        for (field, v) in [
            ("tolerances.rank", self.tolerances.rank),
            ("tolerances.check", self.tolerances.check),
            ("tolerances.reconstruction", self.tolerances.reconstruction),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(field, format!("{v} must be positive")));
            }
        }
        if !(self.tikhonov.is_finite() && self.tikhonov >= 0.0) {
            return Err(bad("tikhonov", "must be a non-negative number"));
        }
        match self.family.provenance {
            Provenance::Qubit16 | Provenance::UnitaryOnly if self.d_sys != 2 => {
                return Err(bad("family.provenance", "qubit families need d_sys = 2"));
            }
            Provenance::Custom => {
                return Err(bad("family.provenance", "Custom families cannot be generated"));
            }
            _ => {}
        }
        if self.family.subsample == Some(0) {
            return Err(bad("family.subsample", "must keep at least one tuple"));
        }
        if self.threads == Some(0) {
            return Err(bad("threads", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"n_labs": 2, "family": {"provenance": "Qubit16"}}"#).unwrap();
        assert_eq!(c.n_labs, 2);
        assert_eq!(c.d_sys, 2);
        assert_eq!(c.family.provenance, Provenance::Qubit16);
        assert_eq!(c.family.cap, DEFAULT_FAMILY_CAP as u64);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"labs": 2}"#).is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let c = RunConfig {
            n_labs: 9,
            ..RunConfig::default()
        };
        match c.validate() {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "n_labs"),
            other => panic!("{other:?}"),
        }
        let c = RunConfig {
            preset: "Warp".into(),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config { field: "preset", .. })));
        let c = RunConfig {
            d_sys: 3,
            family: FamilyConfig {
                provenance: Provenance::Qubit16,
                ..FamilyConfig::default()
            },
            ..RunConfig::default()
        };
        assert!(matches!(
            c.validate(),
            Err(CliError::Config {
                field: "family.provenance",
                ..
            })
        ));
    }
}
