//! Correlated Rayleigh channel realizations.
//!
//! Per AP-user pair the channel is `h_lk = R_lk^{1/2} z` with `z` standard
//! complex Gaussian, independent across pairs and across realizations.
//! Realizations are keyed by index so any single draw can be reproduced
//! without replaying the ones before it.

use crate::geometry::NetworkSnapshot;
use crate::linalg::{covariance_factor, standard_complex_gaussian, CVector};
use crate::rng::{stream, StreamKind};

/// One small-scale fading draw: `h[l][k]` is the M-dim channel from user
/// `k` to AP `l`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: Vec<Vec<CVector>>,
    pub realization_id: u64,
}

/// Draw realization `realization_id` for the snapshot. Deterministic in
/// `(snapshot.seed, snapshot.snapshot_id, realization_id)`.
pub fn realize_channels(snapshot: &NetworkSnapshot, realization_id: u64) -> ChannelRealization {
    let mut rng = stream(
        snapshot.seed,
        snapshot.snapshot_id,
        StreamKind::Channel(realization_id),
    );
    let m = snapshot.antennas_per_ap();
    let mut h = Vec::with_capacity(snapshot.num_aps());
    for l in 0..snapshot.num_aps() {
        let mut row = Vec::with_capacity(snapshot.num_users());
        for k in 0..snapshot.num_users() {
            let factor = covariance_factor(&snapshot.corr[l][k]);
            let z = standard_complex_gaussian(m, &mut rng);
            row.push(&factor * z);
        }
        h.push(row);
    }
    ChannelRealization { h, realization_id }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::geometry::{drop_network, spatial_correlation, Point};
    use crate::linalg::CMatrix;
    use num_complex::Complex64;

    fn snapshot_with_corr(corr: CMatrix, beta: f64, seed: u64) -> NetworkSnapshot {
        NetworkSnapshot {
            ap_positions: vec![Point { x: 0.0, y: 0.0 }],
            user_positions: vec![Point { x: 0.0, y: 0.0 }],
            beta: vec![vec![beta]],
            corr: vec![vec![corr]],
            seed,
            snapshot_id: 0,
            psd_repairs: 0,
        }
    }

    fn sample_covariance(snapshot: &NetworkSnapshot, draws: u64) -> CMatrix {
        let m = snapshot.antennas_per_ap();
        let mut acc = CMatrix::zeros(m, m);
        for r in 0..draws {
            let real = realize_channels(snapshot, r);
            let h = &real.h[0][0];
            acc += h * h.adjoint();
        }
        acc / Complex64::new(draws as f64, 0.0)
    }

    #[test]
    fn white_correlation_gives_iid_variance() {
        let beta = 2.5e-10;
        let corr = CMatrix::identity(3, 3) * Complex64::new(beta, 0.0);
        let snap = snapshot_with_corr(corr, beta, 42);
        let cov = sample_covariance(&snap, 10_000);
        for i in 0..3 {
            let rel = (cov[(i, i)].re - beta).abs() / beta;
            assert!(rel < 0.05, "diagonal variance off by {rel}");
            for j in 0..3 {
                if i != j {
                    assert!(cov[(i, j)].norm() < 0.05 * beta);
                }
            }
        }
    }

    #[test]
    fn sample_covariance_matches_model() {
        let beta = 1e-10;
        let (corr, _) = spatial_correlation(beta, 0.6, 15f64.to_radians(), 4);
        let snap = snapshot_with_corr(corr.clone(), beta, 7);
        let cov = sample_covariance(&snap, 10_000);
        let err = (&cov - &corr).norm() / corr.norm();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn rank_one_correlation_gives_collinear_draws() {
        let beta = 1e-9;
        let (corr, _) = spatial_correlation(beta, 0.3, 0.0, 4);
        let snap = snapshot_with_corr(corr, beta, 9);
        let reference = realize_channels(&snap, 0).h[0][0].clone();
        for r in 1..20 {
            let h = realize_channels(&snap, r).h[0][0].clone();
            let cos = h.dotc(&reference).norm() / (h.norm() * reference.norm());
            assert!((cos - 1.0).abs() < 1e-9, "draw {r} not collinear: {cos}");
        }
    }

    #[test]
    fn realizations_are_keyed_and_deterministic() {
        let cfg = SimConfig { num_aps: 4, num_users: 3, tau_p: 2, tau_u: 198, ..Default::default() };
        let snap = drop_network(&cfg, 0).unwrap();
        let a = realize_channels(&snap, 5);
        let b = realize_channels(&snap, 5);
        let c = realize_channels(&snap, 6);
        assert_eq!(a.h[2][1], b.h[2][1]);
        assert_ne!(a.h[2][1], c.h[2][1]);
    }
}
