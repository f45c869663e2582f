//! Experiment description, read from a TOML file with `[system]`,
//! `[algorithm]`, `[perturbation]` and `[run]` sections.

use std::path::Path;

use cfdetect::covbase::CovOptions;
use cfdetect::simkit::{PerturbationSpec, SystemConfig};
use cfdetect::{PriorHyper, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ghvi,
    Map,
    Cov,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ghvi, Algorithm::Map, Algorithm::Cov];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ghvi => "ghvi",
            Algorithm::Map => "map",
            Algorithm::Cov => "cov",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: Algorithm,
    /// Options for the MAP and variational solvers.
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub cov: CovOptions,
    /// Prior hyperparameters; the vague defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<PriorHyper>,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        Self {
            name: Algorithm::Ghvi,
            solver: SolverOptions::default(),
            cov: CovOptions::default(),
            hyper: None,
        }
    }
}

impl AlgorithmSpec {
    pub fn hyper(&self) -> PriorHyper {
        self.hyper.unwrap_or_default()
    }
}

/// Knowledge errors plus the per-trial draws of the activity rate and the
/// line-of-sight share.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSettings {
    pub pathloss_error_db: f64,
    pub noise_error_std_dbm: f64,
    /// Replaces `system.rician_fraction` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rician_fraction: Option<f64>,
    /// When set, each trial draws its activity rate from `U(lo, hi)`
    /// instead of using `system.epsilon`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_range: Option<[f64; 2]>,
}

impl PerturbationSettings {
    pub fn knowledge(&self) -> PerturbationSpec {
        PerturbationSpec {
            pathloss_error_db: self.pathloss_error_db,
            noise_error_std_dbm: self.noise_error_std_dbm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    /// Name of the swept key; see [`ExperimentSpec::with_param`].
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub trials: usize,
    pub threshold_count: usize,
    /// Defaults to `system.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSettings>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            trials: 300,
            threshold_count: 200,
            master_seed: None,
            workers: None,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub perturbation: PerturbationSettings,
    #[serde(default)]
    pub run: RunSettings,
}

/// Keys accepted by [`ExperimentSpec::with_param`].
pub const SWEEP_PARAMS: [&str; 9] = [
    "K",
    "M",
    "N",
    "L",
    "epsilon",
    "snr_target_db",
    "rician_fraction",
    "pathloss_error_db",
    "noise_error_std_dbm",
];

impl ExperimentSpec {
    /// The shipped desk-scale setting: 4 APs, 4 antennas, 50 users, pilots
    /// of length 20, 300 trials.
    pub fn desk(algorithm: Algorithm) -> Self {
        Self {
            system: SystemConfig::desk(),
            algorithm: AlgorithmSpec {
                name: algorithm,
                ..AlgorithmSpec::default()
            },
            perturbation: PerturbationSettings::default(),
            run: RunSettings::default(),
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment specs always serialize")
    }

    pub fn master_seed(&self) -> u64 {
        self.run.master_seed.unwrap_or(self.system.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.perturbation.knowledge().validate()?;
        self.algorithm.solver.validate()?;
        self.algorithm.hyper().validate()?;
        let usage = |msg: String| Err(HarnessError::Usage(msg));
        if self.algorithm.cov.max_sweeps == 0 || !(self.algorithm.cov.rel_tol > 0.0) {
            return usage("cov max_sweeps and rel_tol must be positive".into());
        }
        if self.run.trials == 0 {
            return usage("run.trials must be at least 1".into());
        }
        if self.run.threshold_count < 2 {
            return usage("run.threshold_count must be at least 2".into());
        }
        if self.run.workers == Some(0) {
            return usage("run.workers must be at least 1".into());
        }
        if let Some(f) = self.perturbation.rician_fraction {
            if !(0.0..=1.0).contains(&f) {
                return usage(format!("perturbation.rician_fraction = {f} outside [0, 1]"));
            }
        }
        if let Some([lo, hi]) = self.perturbation.epsilon_range {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return usage(format!(
                    "perturbation.epsilon_range = [{lo}, {hi}] is not a sub-interval of [0, 1]"
                ));
            }
        }
        if let Some(sweep) = &self.run.sweep {
            if sweep.values.is_empty() {
                return usage("run.sweep.values is empty".into());
            }
            for &v in &sweep.values {
                self.with_param(&sweep.param, v)?;
            }
        }
        Ok(())
    }

    /// Copy with one parameter replaced. Count parameters must be
    /// non-negative integers.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(HarnessError::Usage(format!("{param} = {value} is not a count")))
            }
        };
        match param {
            "K" => out.system.aps = count()?,
            "M" => out.system.antennas = count()?,
            "N" => out.system.users = count()?,
            "L" => out.system.pilot_len = count()?,
            "epsilon" => out.system.epsilon = value,
            "snr_target_db" => out.system.snr_target_db = value,
            "rician_fraction" => out.system.rician_fraction = value,
            "pathloss_error_db" => out.perturbation.pathloss_error_db = value,
            "noise_error_std_dbm" => out.perturbation.noise_error_std_dbm = value,
            _ => {
                return Err(HarnessError::Usage(format!(
                    "cannot sweep `{param}`; expected one of {}",
                    SWEEP_PARAMS.join(", ")
                )))
            }
        }
        out.run.sweep = None;
        out.system.validate()?;
        out.perturbation.knowledge().validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let text = r#"
[system]
K = 4
M = 4
N = 50
L = 20
epsilon = 0.1
snr_target_db = 6.0
max_tx_power_dbm = 23.0
noise_power_dbm = -109.0
area_km = 1.7320508075688772
rician_fraction = 0.0
rician_factor_max = 0.6
seed = 3

[algorithm]
name = "map"
"#;
        let spec = ExperimentSpec::from_toml(text, Path::new("inline")).unwrap();
        assert_eq!(spec.algorithm.name, Algorithm::Map);
        assert_eq!(spec.run, RunSettings::default());
        assert_eq!(spec.master_seed(), 3);
        assert_eq!(
            spec.system,
            SystemConfig {
                seed: 3,
                ..SystemConfig::desk()
            }
        );
    }

    #[test]
    fn round_trips_through_toml() {
        let mut spec = ExperimentSpec::desk(Algorithm::Cov);
        spec.perturbation.pathloss_error_db = 3.0;
        spec.perturbation.epsilon_range = Some([0.1, 0.2]);
        spec.run.sweep = Some(SweepSettings {
            param: "L".into(),
            values: vec![10.0, 20.0],
        });
        spec.algorithm.hyper = Some(PriorHyper::default());
        let back = ExperimentSpec::from_toml(&spec.to_toml(), Path::new("inline")).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_bad_values() {
        let spec = ExperimentSpec::desk(Algorithm::Ghvi);
        let mut bad = spec.clone();
        bad.run.threshold_count = 1;
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.run.trials = 0;
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.perturbation.epsilon_range = Some([0.3, 0.2]);
        assert!(bad.validate().is_err());
        assert!(spec.with_param("L", 10.5).is_err());
        assert!(spec.with_param("area", 1.0).is_err());
        assert_eq!(spec.with_param("L", 30.0).unwrap().system.pilot_len, 30);
        let text = "[system]\nK = 1\n";
        assert!(ExperimentSpec::from_toml(text, Path::new("inline")).is_err());
        let text = spec.to_toml() + "\n[extra]\nx = 1\n";
        assert!(ExperimentSpec::from_toml(&text, Path::new("inline")).is_err());
    }
}
