//! Receive combining and the affine SINR decomposition.
//!
//! A combiner only touches the antennas of a user's serving cluster, so
//! every vector here lives on the compressed subspace: `v[k][j]` is the
//! M-dim block at serving AP `aps_of_user[k][j]`. With the combiner held
//! fixed, the uplink SINR of user `k` is a ratio of affine functions of
//! the power vector,
//!
//! ```text
//! SINR_k(p) = p_k g_k / (a_k' p + c_k)
//! ```
//!
//! where `g_k = |v_k^H h_hat_k|^2`, `a_ki` collects the interference of
//! user `i` (estimate beam-crossing plus estimation-error leakage) and
//! `c_k` is the combiner-weighted noise. The optimizer consumes only
//! `(g, a, c)`; everything channel-shaped stays in this module.

use num_complex::Complex64;

use crate::cluster::ClusterAssignment;
use crate::estimation::ChannelEstimates;
use crate::linalg::{hermitize, solve_hpd, CMatrix, CVector};
use crate::Result;

/// Which combiner built a [`CombinerSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerScheme {
    /// Partial MMSE: suppresses interference from the partial set only.
    Pmmse,
    /// Local MMSE at the single serving station (cellular mode).
    Lmmse,
    /// Maximum ratio: the masked channel estimate itself.
    Mrc,
}

/// Per-user combining vectors on the compressed serving subspace.
///
/// `v[k][j]` pairs with `assignment.aps_of_user[k][j]`.
#[derive(Debug, Clone)]
pub struct CombinerSet {
    pub v: Vec<Vec<CVector>>,
    pub scheme: CombinerScheme,
}

/// The affine SINR decomposition at a fixed combiner set.
#[derive(Debug, Clone)]
pub struct SinrCoefficients {
    /// Useful-signal gain `g_k` per user.
    pub g: Vec<f64>,
    /// Interference matrix; `a[k][i]` multiplies `p_i` in user `k`'s
    /// denominator, `a[k][k]` carries only the estimation-error leakage.
    pub a: Vec<Vec<f64>>,
    /// Combiner-weighted noise power `c_k`.
    pub c: Vec<f64>,
}

impl SinrCoefficients {
    pub fn num_users(&self) -> usize {
        self.g.len()
    }

    /// `SINR_k(p) = p_k g_k / (a_k' p + c_k)`.
    pub fn sinr(&self, k: usize, p: &[f64]) -> f64 {
        let den: f64 = self.a[k].iter().zip(p).map(|(a, pi)| a * pi).sum::<f64>() + self.c[k];
        p[k] * self.g[k] / den
    }
}

/// Stack the blocks of user `i`'s estimate seen by user `k`'s cluster.
fn stacked_estimate(
    estimates: &ChannelEstimates,
    cluster: &[usize],
    i: usize,
    m: usize,
) -> CVector {
    let mut out = CVector::zeros(cluster.len() * m);
    for (j, &l) in cluster.iter().enumerate() {
        out.rows_mut(j * m, m).copy_from(&estimates.h_hat[l][i]);
    }
    out
}

/// P-MMSE combiners: per user, solve on the cluster subspace with the
/// partial set's estimates and error covariances as interference.
///
/// `v_k = p_k (sum_{i in S_k} p_i (h_i h_i^H + C_i) + noise I)^{-1} h_k`;
/// a user with zero power keeps the unscaled direction so the combiner
/// stays usable (the SINR is invariant to the scale anyway), and with all
/// powers zero that direction degenerates to MRC.
pub fn pmmse_combiner(
    estimates: &ChannelEstimates,
    assignment: &ClusterAssignment,
    p: &[f64],
    noise_power: f64,
) -> Result<CombinerSet> {
    assert!(noise_power > 0.0);
    let m = estimates.h_hat[0][0].len();
    let mut v = Vec::with_capacity(assignment.num_users());
    for k in 0..assignment.num_users() {
        let cluster = &assignment.aps_of_user[k];
        let dim = cluster.len() * m;
        let mut a = CMatrix::identity(dim, dim) * Complex64::new(noise_power, 0.0);
        for &i in &assignment.partial_sets[k] {
            if p[i] == 0.0 {
                continue;
            }
            let pi = Complex64::new(p[i], 0.0);
            let hi = stacked_estimate(estimates, cluster, i, m);
            a += (&hi * hi.adjoint()) * pi;
            for (j, &l) in cluster.iter().enumerate() {
                let mut block = a.view_mut((j * m, j * m), (m, m));
                block += &estimates.c[l][i] * pi;
            }
        }
        let hk = stacked_estimate(estimates, cluster, k, m);
        let mut vk = solve_hpd(&hermitize(&a), &hk)?;
        if p[k] > 0.0 {
            vk *= Complex64::new(p[k], 0.0);
        }
        v.push(split_blocks(&vk, cluster.len(), m));
    }
    Ok(CombinerSet { v, scheme: CombinerScheme::Pmmse })
}

/// L-MMSE combiners for cellular mode: each station suppresses all users
/// it can see locally, `v_lk = p_k (sum_i p_i (h_li h_li^H + C_li) +
/// noise I_M)^{-1} h_lk` with station-`l` quantities only.
pub fn lmmse_combiner(
    estimates: &ChannelEstimates,
    assignment: &ClusterAssignment,
    p: &[f64],
    noise_power: f64,
) -> Result<CombinerSet> {
    assert!(noise_power > 0.0);
    let m = estimates.h_hat[0][0].len();
    let num_users = assignment.num_users();
    // one Gram matrix per station, shared by all its users
    let mut station_inv_ready: Vec<Option<CMatrix>> = vec![None; assignment.num_aps()];
    let mut v = Vec::with_capacity(num_users);
    for k in 0..num_users {
        assert_eq!(
            assignment.aps_of_user[k].len(),
            1,
            "cellular combining expects a single serving station"
        );
        let l = assignment.aps_of_user[k][0];
        if station_inv_ready[l].is_none() {
            let mut a = CMatrix::identity(m, m) * Complex64::new(noise_power, 0.0);
            for i in 0..num_users {
                if p[i] == 0.0 {
                    continue;
                }
                let pi = Complex64::new(p[i], 0.0);
                let hi = &estimates.h_hat[l][i];
                a += (hi * hi.adjoint()) * pi;
                a += &estimates.c[l][i] * pi;
            }
            station_inv_ready[l] = Some(hermitize(&a));
        }
        let a = station_inv_ready[l].as_ref().unwrap();
        let mut vk = solve_hpd(a, &estimates.h_hat[l][k])?;
        if p[k] > 0.0 {
            vk *= Complex64::new(p[k], 0.0);
        }
        v.push(vec![vk]);
    }
    Ok(CombinerSet { v, scheme: CombinerScheme::Lmmse })
}

/// Maximum-ratio combiners: the masked estimates themselves.
pub fn mrc_combiner(estimates: &ChannelEstimates, assignment: &ClusterAssignment) -> CombinerSet {
    let v = (0..assignment.num_users())
        .map(|k| {
            assignment.aps_of_user[k]
                .iter()
                .map(|&l| estimates.h_hat[l][k].clone())
                .collect()
        })
        .collect();
    CombinerSet { v, scheme: CombinerScheme::Mrc }
}

fn split_blocks(stacked: &CVector, blocks: usize, m: usize) -> Vec<CVector> {
    (0..blocks).map(|j| stacked.rows(j * m, m).into_owned()).collect()
}

/// Evaluate the affine SINR decomposition at the given combiners.
pub fn sinr_coefficients(
    estimates: &ChannelEstimates,
    combiners: &CombinerSet,
    assignment: &ClusterAssignment,
    noise_power: f64,
) -> SinrCoefficients {
    let num_users = assignment.num_users();
    let mut g = vec![0.0; num_users];
    let mut a = vec![vec![0.0; num_users]; num_users];
    let mut c = vec![0.0; num_users];
    for k in 0..num_users {
        let cluster = &assignment.aps_of_user[k];
        let vk = &combiners.v[k];
        for i in 0..num_users {
            let mut dot = Complex64::new(0.0, 0.0);
            let mut quad = 0.0;
            for (j, &l) in cluster.iter().enumerate() {
                dot += vk[j].dotc(&estimates.h_hat[l][i]);
                quad += (&estimates.c[l][i] * &vk[j]).dotc(&vk[j]).re;
            }
            let cross = dot.norm_sqr();
            if i == k {
                g[k] = cross;
                a[k][i] = quad.max(0.0);
            } else {
                a[k][i] = cross + quad.max(0.0);
            }
        }
        c[k] = noise_power * vk.iter().map(|b| b.norm_squared()).sum::<f64>();
    }
    SinrCoefficients { g, a, c }
}

/// Instantaneous per-user SE in bit/s/Hz: `(tau_u/tau_c) log2(1+SINR_k)`.
pub fn instantaneous_se(coeffs: &SinrCoefficients, p: &[f64], tau_u: usize, tau_c: usize) -> Vec<f64> {
    let prefactor = tau_u as f64 / tau_c as f64;
    (0..coeffs.num_users())
        .map(|k| prefactor * (1.0 + coeffs.sinr(k, p)).log2())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::realize_channels;
    use crate::cluster::assign_pilots_and_clusters;
    use crate::config::SimConfig;
    use crate::estimation::mmse_estimate;
    use crate::geometry::{drop_network, NetworkSnapshot};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NOISE: f64 = 3.9810717055349695e-13; // -94 dBm

    fn desk_setup(
        num_aps: usize,
        num_users: usize,
        tau_p: usize,
        seed: u64,
    ) -> (NetworkSnapshot, ClusterAssignment, ChannelEstimates) {
        let cfg = SimConfig {
            num_aps,
            antennas_per_ap: 2,
            num_users,
            tau_p,
            tau_u: 200 - tau_p,
            seed,
            ..Default::default()
        };
        let snap = drop_network(&cfg, 0).unwrap();
        let assignment = assign_pilots_and_clusters(&snap, tau_p).unwrap();
        let real = realize_channels(&snap, 0);
        let est = mmse_estimate(&real, &snap, &assignment, cfg.pilot_power, NOISE).unwrap();
        (snap, assignment, est)
    }

    fn all_serving_assignment(num_aps: usize, num_users: usize) -> ClusterAssignment {
        ClusterAssignment {
            pilot_of: (0..num_users).collect(),
            master_ap: vec![0; num_users],
            serving: vec![vec![true; num_users]; num_aps],
            aps_of_user: vec![(0..num_aps).collect(); num_users],
            users_of_ap: vec![(0..num_users).collect(); num_aps],
            partial_sets: vec![(0..num_users).collect(); num_users],
            num_pilots: num_users,
        }
    }

    /// Direct evaluation of the SINR from its definition, on the full
    /// masked space, to cross-check the decomposition.
    fn direct_sinr(
        estimates: &ChannelEstimates,
        combiners: &CombinerSet,
        assignment: &ClusterAssignment,
        p: &[f64],
        k: usize,
    ) -> f64 {
        let cluster = &assignment.aps_of_user[k];
        let vk = &combiners.v[k];
        let num_users = assignment.num_users();
        let dot = |i: usize| -> Complex64 {
            cluster
                .iter()
                .enumerate()
                .map(|(j, &l)| vk[j].dotc(&estimates.h_hat[l][i]))
                .sum()
        };
        let numerator = p[k] * dot(k).norm_sqr();
        let mut den = 0.0;
        for i in 0..num_users {
            if i != k {
                den += p[i] * dot(i).norm_sqr();
            }
            let quad: f64 = cluster
                .iter()
                .enumerate()
                .map(|(j, &l)| (&estimates.c[l][i] * &vk[j]).dotc(&vk[j]).re)
                .sum();
            den += p[i] * quad;
        }
        den += NOISE * vk.iter().map(|b| b.norm_squared()).sum::<f64>();
        numerator / den
    }

    #[test]
    fn decomposition_matches_direct_formula() {
        let (_, assignment, est) = desk_setup(9, 4, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let p0: Vec<f64> = (0..4).map(|_| rng.gen_range(1e-3..0.1)).collect();
        let combiners = pmmse_combiner(&est, &assignment, &p0, NOISE).unwrap();
        let coeffs = sinr_coefficients(&est, &combiners, &assignment, NOISE);
        for _ in 0..100 {
            let p: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..0.1)).collect();
            for k in 0..4 {
                let direct = direct_sinr(&est, &combiners, &assignment, &p, k);
                let decomposed = coeffs.sinr(k, &p);
                if direct == 0.0 {
                    assert_eq!(decomposed, 0.0);
                } else {
                    let rel = (direct - decomposed).abs() / direct.abs();
                    assert!(rel < 1e-10, "user {k}: direct {direct} vs {decomposed}");
                }
            }
        }
    }

    #[test]
    fn lone_user_gets_matched_filter() {
        let (_, assignment, est) = desk_setup(4, 1, 1, 3);
        let combiners = pmmse_combiner(&est, &assignment, &[0.1], NOISE).unwrap();
        // single user, estimation error only: v is (sum_l C_l + noise I)^{-1} h;
        // with white-ish C the direction stays close to the estimate
        let coeffs = sinr_coefficients(&est, &combiners, &assignment, NOISE);
        let mrc = mrc_combiner(&est, &assignment);
        let mrc_coeffs = sinr_coefficients(&est, &mrc, &assignment, NOISE);
        let p = [0.1];
        assert!(coeffs.sinr(0, &p) >= mrc_coeffs.sinr(0, &p) * (1.0 - 1e-9));
    }

    #[test]
    fn pmmse_beats_mrc_on_all_serving_clusters() {
        let cfg = SimConfig {
            num_aps: 4,
            antennas_per_ap: 2,
            num_users: 4,
            tau_p: 4,
            tau_u: 196,
            seed: 21,
            ..Default::default()
        };
        let snap = drop_network(&cfg, 0).unwrap();
        let assignment = all_serving_assignment(4, 4);
        let real = realize_channels(&snap, 0);
        let est = mmse_estimate(&real, &snap, &assignment, cfg.pilot_power, NOISE).unwrap();
        let p = vec![0.1; 4];
        let pm = pmmse_combiner(&est, &assignment, &p, NOISE).unwrap();
        let mr = mrc_combiner(&est, &assignment);
        let pm_c = sinr_coefficients(&est, &pm, &assignment, NOISE);
        let mr_c = sinr_coefficients(&est, &mr, &assignment, NOISE);
        for k in 0..4 {
            let gain = pm_c.sinr(k, &p) / mr_c.sinr(k, &p);
            assert!(gain >= 1.0 - 1e-9, "user {k}: P-MMSE lost to MRC ({gain})");
        }
    }

    #[test]
    fn combiner_scale_leaves_sinr_unchanged() {
        let (_, assignment, est) = desk_setup(9, 3, 3, 17);
        let p = vec![0.05, 0.1, 0.02];
        let combiners = pmmse_combiner(&est, &assignment, &p, NOISE).unwrap();
        let mut scaled = combiners.clone();
        let alpha = Complex64::new(-2.5, 1.25);
        for blocks in &mut scaled.v {
            for b in blocks {
                *b *= alpha;
            }
        }
        let c0 = sinr_coefficients(&est, &combiners, &assignment, NOISE);
        let c1 = sinr_coefficients(&est, &scaled, &assignment, NOISE);
        for k in 0..3 {
            let s0 = c0.sinr(k, &p);
            let s1 = c1.sinr(k, &p);
            assert!((s0 - s1).abs() / s0 < 1e-12);
        }
    }

    #[test]
    fn own_power_raise_never_hurts() {
        let (_, assignment, est) = desk_setup(9, 4, 2, 29);
        let p = vec![0.03; 4];
        let combiners = pmmse_combiner(&est, &assignment, &p, NOISE).unwrap();
        let coeffs = sinr_coefficients(&est, &combiners, &assignment, NOISE);
        for k in 0..4 {
            let mut p_hi = p.clone();
            p_hi[k] *= 2.0;
            assert!(coeffs.sinr(k, &p_hi) > coeffs.sinr(k, &p));
        }
    }

    #[test]
    fn zero_power_keeps_combiners_usable() {
        let (_, assignment, est) = desk_setup(4, 3, 3, 31);
        let p = vec![0.0; 3];
        let combiners = pmmse_combiner(&est, &assignment, &p, NOISE).unwrap();
        // with all powers zero the system is noise-only, so the direction
        // must match MRC
        let mrc = mrc_combiner(&est, &assignment);
        for k in 0..3 {
            let stack = |set: &CombinerSet| -> CVector {
                let blocks = &set.v[k];
                let m = blocks[0].len();
                let mut out = CVector::zeros(blocks.len() * m);
                for (j, b) in blocks.iter().enumerate() {
                    out.rows_mut(j * m, m).copy_from(b);
                }
                out
            };
            let a = stack(&combiners);
            let b = stack(&mrc);
            let cos = a.dotc(&b).norm() / (a.norm() * b.norm());
            assert!((cos - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lmmse_single_user_reduces_to_matched_filter() {
        let cfg = SimConfig {
            num_aps: 4,
            antennas_per_ap: 3,
            num_users: 1,
            tau_p: 1,
            tau_u: 199,
            seed: 5,
            ..Default::default()
        };
        let snap = drop_network(&cfg, 0).unwrap();
        let assignment = crate::cluster::assign_cellular(&snap, 1).unwrap();
        let real = realize_channels(&snap, 0);
        let est = mmse_estimate(&real, &snap, &assignment, cfg.pilot_power, NOISE).unwrap();
        // C = 0 surrogate: jam pilot power high so the error vanishes
        let est_clean = mmse_estimate(&real, &snap, &assignment, 1e9, NOISE).unwrap();
        let combiners = lmmse_combiner(&est_clean, &assignment, &[0.1], NOISE).unwrap();
        let l = assignment.aps_of_user[0][0];
        let v = &combiners.v[0][0];
        let h = &est_clean.h_hat[l][0];
        let cos = v.dotc(h).norm() / (v.norm() * h.norm());
        assert!((cos - 1.0).abs() < 1e-9, "no interference: L-MMSE is matched filtering");
        let _ = est;
    }

    #[test]
    fn lmmse_beats_mrc_in_cells() {
        let cfg = SimConfig {
            num_aps: 4,
            antennas_per_ap: 8,
            num_users: 6,
            tau_p: 3,
            tau_u: 197,
            seed: 13,
            ..Default::default()
        };
        let snap = drop_network(&cfg, 0).unwrap();
        let assignment = crate::cluster::assign_cellular(&snap, cfg.tau_p).unwrap();
        let real = realize_channels(&snap, 0);
        let est = mmse_estimate(&real, &snap, &assignment, cfg.pilot_power, NOISE).unwrap();
        let p = vec![0.1; 6];
        let lm = lmmse_combiner(&est, &assignment, &p, NOISE).unwrap();
        let mr = mrc_combiner(&est, &assignment);
        let lm_c = sinr_coefficients(&est, &lm, &assignment, NOISE);
        let mr_c = sinr_coefficients(&est, &mr, &assignment, NOISE);
        for k in 0..6 {
            assert!(lm_c.sinr(k, &p) >= mr_c.sinr(k, &p) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn se_arithmetic_checks() {
        let coeffs = SinrCoefficients {
            g: vec![2.0],
            a: vec![vec![0.0]],
            c: vec![1.0],
        };
        // p g / c = 1 => SE = prefactor
        let se = instantaneous_se(&coeffs, &[0.5], 190, 200);
        assert!((se[0] - 0.95).abs() < 1e-12);
        let se0 = instantaneous_se(&coeffs, &[0.0], 190, 200);
        assert_eq!(se0[0], 0.0);
    }
}
