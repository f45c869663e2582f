use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions and radio constants of one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of access points.
    #[serde(rename = "K")]
    pub aps: usize,
    /// Antennas per access point.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Number of potential users.
    #[serde(rename = "N")]
    pub users: usize,
    /// Pilot length in symbols.
    #[serde(rename = "L")]
    pub pilot_len: usize,
    /// Per-user activity probability.
    pub epsilon: f64,
    pub snr_target_db: f64,
    pub max_tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    /// Side of the square deployment area.
    pub area_km: f64,
    /// Share of users whose links carry a line-of-sight component.
    pub rician_fraction: f64,
    pub rician_factor_max: f64,
    pub seed: u64,
}

impl SystemConfig {
    /// 12 APs with 8 antennas, 200 users, pilots of length 30 over 3 km × 3 km.
    pub fn full_scale() -> Self {
        Self {
            aps: 12,
            antennas: 8,
            users: 200,
            pilot_len: 30,
            epsilon: 0.1,
            snr_target_db: 6.0,
            max_tx_power_dbm: 23.0,
            noise_power_dbm: -109.0,
            area_km: 3.0,
            rician_fraction: 0.0,
            rician_factor_max: 0.6,
            seed: 0,
        }
    }

    /// Reduced setting used for quick experiments: 4 APs with 4 antennas,
    /// 50 users, pilots of length 20. The area keeps the AP density of
    /// [`SystemConfig::full_scale`].
    pub fn desk() -> Self {
        Self {
            aps: 4,
            antennas: 4,
            users: 50,
            pilot_len: 20,
            area_km: 3.0_f64.sqrt(),
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.aps == 0 || self.antennas == 0 || self.users == 0 || self.pilot_len == 0 {
            return bad(format!(
                "K, M, N, L must be positive (got {}, {}, {}, {})",
                self.aps, self.antennas, self.users, self.pilot_len
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon = {} outside [0, 1]", self.epsilon));
        }
        if !(self.area_km > 0.0) || !self.area_km.is_finite() {
            return bad(format!("area_km = {} must be positive", self.area_km));
        }
        if !(0.0..=1.0).contains(&self.rician_fraction) {
            return bad(format!("rician_fraction = {} outside [0, 1]", self.rician_fraction));
        }
        if !(self.rician_factor_max >= 0.0) || !self.rician_factor_max.is_finite() {
            return bad(format!("rician_factor_max = {} must be >= 0", self.rician_factor_max));
        }
        for (name, v) in [
            ("snr_target_db", self.snr_target_db),
            ("max_tx_power_dbm", self.max_tx_power_dbm),
            ("noise_power_dbm", self.noise_power_dbm),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} = {v} is not finite"));
            }
        }
        Ok(())
    }

    /// Noise power in watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    pub fn max_tx_power_w(&self) -> f64 {
        dbm_to_watts(self.max_tx_power_dbm)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
