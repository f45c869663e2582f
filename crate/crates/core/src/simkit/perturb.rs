use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LinkMatrix;
use crate::scalar::Real;

use super::config::db_to_linear;
use super::scenario::Scenario;

/// Size of the errors injected into the knowledge handed to detectors that
/// rely on known gains and noise power.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Every link's path loss is shifted by `U(0, pathloss_error_db)` dB.
    pub pathloss_error_db: f64,
    /// The assumed noise power is shifted by `N(0, noise_error_std_dbm²)` dB.
    pub noise_error_std_dbm: f64,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_error_db >= 0.0) || !(self.noise_error_std_dbm >= 0.0) {
            return Err(Error::Config(format!(
                "perturbation sizes must be >= 0 (got {}, {})",
                self.pathloss_error_db, self.noise_error_std_dbm
            )));
        }
        Ok(())
    }
}

/// Copy of `scenario` whose `beta`, `effective_beta` and
/// `assumed_noise_power` carry knowledge errors. The true `noise_power`
/// and geometry are left alone.
pub fn perturb_knowledge<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<Scenario<T>> {
    spec.validate()?;
    let mut out = scenario.clone();
    if spec.pathloss_error_db > 0.0 {
        let shift = LinkMatrix::from_fn(scenario.aps(), scenario.users(), |_, _| {
            T::lit(db_to_linear(rng.random::<f64>() * spec.pathloss_error_db))
        });
        for ((b, e), s) in out
            .beta
            .as_mut_slice()
            .iter_mut()
            .zip(out.effective_beta.as_mut_slice())
            .zip(shift.as_slice())
        {
            *b *= *s;
            *e *= *s;
        }
    }
    if spec.noise_error_std_dbm > 0.0 {
        let shift: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_error_std_dbm;
        out.assumed_noise_power *= T::lit(db_to_linear(shift));
    }
    Ok(out)
}
