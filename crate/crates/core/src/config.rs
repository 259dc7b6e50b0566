//! Simulation configuration and validation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which network architecture a run models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkMode {
    /// Distributed APs jointly serving all users, P-MMSE combining,
    /// compute offered by serving APs plus the cloud CPU.
    Cellfree,
    /// One serving base station per user, L-MMSE combining, compute offered
    /// by the serving BS only.
    Cellular,
    /// Cell-free topology with all users at maximum power and no
    /// optimization; transmit-power / SE reference.
    Fullpower,
}

impl std::fmt::Display for NetworkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NetworkMode::Cellfree => "cellfree",
            NetworkMode::Cellular => "cellular",
            NetworkMode::Fullpower => "fullpower",
        };
        f.write_str(s)
    }
}

/// Physical and frame-structure parameters of one network.
///
/// Defaults describe the cell-free reference deployment: 100 four-antenna
/// APs on a square kilometre, 20 users, 20 MHz at 2 GHz, 200-sample
/// coherence blocks split 10/190/0 between training, uplink and downlink.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Side of the square coverage area, meters.
    pub coverage_side: f64,
    /// Number of APs (BSs in cellular mode); must be a perfect square.
    pub num_aps: usize,
    /// Antennas per AP.
    pub antennas_per_ap: usize,
    /// Number of single-antenna users.
    pub num_users: usize,
    /// Transmission bandwidth, Hz.
    pub bandwidth: f64,
    /// Receiver noise power, W.
    pub noise_power: f64,
    /// Carrier frequency, Hz.
    pub carrier_freq: f64,
    /// Coherence block length, samples.
    pub tau_c: usize,
    /// Uplink training duration, samples.
    pub tau_p: usize,
    /// Uplink data duration, samples.
    pub tau_u: usize,
    /// Downlink data duration, samples.
    pub tau_d: usize,
    /// Maximum uplink transmit power per user, W.
    pub p_max: f64,
    /// Pilot transmit power per user, W.
    pub pilot_power: f64,
    /// Shadow-fading standard deviation, dB.
    pub shadow_sigma_db: f64,
    /// Angular standard deviation of the local scattering model, degrees.
    pub asd_deg: f64,
    /// Base seed; combined with the snapshot id for every random stream.
    pub seed: u64,
    /// Network architecture.
    pub mode: NetworkMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            coverage_side: 1000.0,
            num_aps: 100,
            antennas_per_ap: 4,
            num_users: 20,
            bandwidth: 20e6,
            noise_power: 10f64.powf((-94.0 - 30.0) / 10.0), // -94 dBm
            carrier_freq: 2e9,
            tau_c: 200,
            tau_p: 10,
            tau_u: 190,
            tau_d: 0,
            p_max: 0.1,
            pilot_power: 0.1,
            shadow_sigma_db: 4.0,
            asd_deg: 15.0,
            seed: 1,
            mode: NetworkMode::Cellfree,
        }
    }
}

impl SimConfig {
    /// Check every structural invariant. Call before using the config.
    pub fn validate(&self) -> Result<()> {
        if self.tau_p + self.tau_u + self.tau_d != self.tau_c {
            return Err(Error::Config(format!(
                "coherence block split {} + {} + {} != tau_c = {}",
                self.tau_p, self.tau_u, self.tau_d, self.tau_c
            )));
        }
        if self.num_aps == 0 || self.antennas_per_ap == 0 || self.num_users == 0 {
            return Err(Error::Config("num_aps, antennas_per_ap, num_users must be positive".into()));
        }
        let side = (self.num_aps as f64).sqrt().round() as usize;
        if side * side != self.num_aps {
            return Err(Error::Config(format!(
                "num_aps = {} is not a perfect square; the AP grid is undefined",
                self.num_aps
            )));
        }
        if self.tau_p == 0 {
            return Err(Error::Config("tau_p must be at least 1".into()));
        }
        if self.num_users > 2 * self.tau_p {
            return Err(Error::Config(format!(
                "num_users = {} exceeds 2 * tau_p = {}; pilot reuse too aggressive",
                self.num_users,
                2 * self.tau_p
            )));
        }
        // Every user needs a master AP slot: at most one served user per
        // pilot per AP caps the network at num_aps * tau_p users.
        if self.num_users > self.num_aps * self.tau_p {
            return Err(Error::Config(format!(
                "num_users = {} exceeds num_aps * tau_p = {}; not every user can be served",
                self.num_users,
                self.num_aps * self.tau_p
            )));
        }
        for (name, v) in [
            ("coverage_side", self.coverage_side),
            ("bandwidth", self.bandwidth),
            ("noise_power", self.noise_power),
            ("carrier_freq", self.carrier_freq),
            ("p_max", self.p_max),
            ("pilot_power", self.pilot_power),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if self.shadow_sigma_db < 0.0 || !self.shadow_sigma_db.is_finite() {
            return Err(Error::Config("shadow_sigma_db must be non-negative".into()));
        }
        if self.asd_deg < 0.0 || !self.asd_deg.is_finite() {
            return Err(Error::Config("asd_deg must be non-negative".into()));
        }
        Ok(())
    }

    /// SE prefactor: fraction of the coherence block spent on uplink data.
    pub fn se_prefactor(&self) -> f64 {
        self.tau_u as f64 / self.tau_c as f64
    }

    /// Side length of the AP grid.
    pub fn grid_side(&self) -> usize {
        (self.num_aps as f64).sqrt().round() as usize
    }
}
