//! Per-AP MMSE channel estimation from shared uplink pilots.
//!
//! All users on pilot `t` superimpose at every AP, so the received pilot
//! signal is `y_lt = sqrt(tau_p p_p) sum_{i in P_t} h_li + noise`. The MMSE
//! estimate and its error covariance follow in closed form from the
//! correlation matrices:
//!
//! ```text
//! Psi_lt = sum_{i in P_t} tau_p p_p R_li + sigma^2 I
//! h_hat_lk = sqrt(tau_p p_p) R_lk Psi_lt^{-1} y_lt
//! C_lk     = R_lk - tau_p p_p R_lk Psi_lt^{-1} R_lk
//! ```
//!
//! Pilot sharing inflates `C_lk` (contamination); a pilot alone with
//! vanishing noise estimates the channel exactly.

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::cluster::ClusterAssignment;
use crate::geometry::NetworkSnapshot;
use crate::linalg::{hermitize, solve_hpd, solve_hpd_mat, standard_complex_gaussian, CMatrix, CVector};
use crate::rng::{stream, StreamKind};
use crate::Result;

/// MMSE estimates and error covariances for every AP-user pair.
#[derive(Debug, Clone)]
pub struct ChannelEstimates {
    /// `h_hat[l][k]`: M-dim estimate of the channel from user `k` to AP `l`.
    pub h_hat: Vec<Vec<CVector>>,
    /// `c[l][k]`: M x M Hermitian PSD estimation-error covariance.
    pub c: Vec<Vec<CMatrix>>,
}

/// Run MMSE estimation for one channel realization.
///
/// Pilot noise is drawn from a stream keyed by the realization id, so the
/// estimates are a pure function of `(snapshot, assignment, realization)`.
pub fn mmse_estimate(
    realization: &ChannelRealization,
    snapshot: &NetworkSnapshot,
    assignment: &ClusterAssignment,
    pilot_power: f64,
    noise_power: f64,
) -> Result<ChannelEstimates> {
    assert!(pilot_power > 0.0, "pilot power must be positive");
    assert!(noise_power > 0.0, "noise power must be positive");
    let num_aps = snapshot.num_aps();
    let num_users = snapshot.num_users();
    let m = snapshot.antennas_per_ap();
    let tau_p = assignment.num_pilots;
    let energy = tau_p as f64 * pilot_power;
    let amp = Complex64::new(energy.sqrt(), 0.0);

    let mut users_on_pilot: Vec<Vec<usize>> = vec![Vec::new(); tau_p];
    for (k, &t) in assignment.pilot_of.iter().enumerate() {
        users_on_pilot[t].push(k);
    }

    // One noise vector per (AP, pilot), drawn in a fixed order so the
    // estimates do not depend on which pilots happen to be in use.
    let mut noise_rng = stream(
        snapshot.seed,
        snapshot.snapshot_id,
        StreamKind::PilotNoise(realization.realization_id),
    );
    let noise_std = Complex64::new(noise_power.sqrt(), 0.0);
    let mut noise: Vec<Vec<CVector>> = Vec::with_capacity(num_aps);
    for _ in 0..num_aps {
        let row = (0..tau_p)
            .map(|_| standard_complex_gaussian(m, &mut noise_rng) * noise_std)
            .collect();
        noise.push(row);
    }

    let mut h_hat: Vec<Vec<CVector>> = vec![vec![CVector::zeros(m); num_users]; num_aps];
    let mut c: Vec<Vec<CMatrix>> = vec![vec![CMatrix::zeros(m, m); num_users]; num_aps];

    for l in 0..num_aps {
        for (t, users) in users_on_pilot.iter().enumerate() {
            if users.is_empty() {
                continue;
            }
            let mut psi = CMatrix::identity(m, m) * Complex64::new(noise_power, 0.0);
            let mut y = noise[l][t].clone();
            for &i in users {
                psi += &snapshot.corr[l][i] * Complex64::new(energy, 0.0);
                y += &realization.h[l][i] * amp;
            }
            let psi_inv_y = solve_hpd(&psi, &y)?;
            for &k in users {
                let r = &snapshot.corr[l][k];
                h_hat[l][k] = (r * &psi_inv_y) * amp;
                let psi_inv_r = solve_hpd_mat(&psi, r)?;
                c[l][k] = hermitize(&(r - (r * psi_inv_r) * Complex64::new(energy, 0.0)));
            }
        }
    }

    Ok(ChannelEstimates { h_hat, c })
}
