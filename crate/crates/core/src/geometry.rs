//! Network geometry and large-scale propagation.
//!
//! APs sit on a regular square grid; users are dropped uniformly at random.
//! Distances use a wrap-around (toroidal) metric so the nominal coverage
//! area has no edge. Large-scale gain follows an urban-microcell power law
//! with log-normal shadowing, and each AP-user pair gets a Hermitian PSD
//! spatial correlation matrix from a Gaussian local scattering model over a
//! half-wavelength ULA.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::SimConfig;
use crate::linalg::{clip_psd, hermitian_eigenvalues, CMatrix};
use crate::rng::{stream, StreamKind};
use crate::{Error, Result};

/// Urban-microcell pathloss at 2 GHz: `-30.5 - 36.7 log10(d)` dB.
pub const PATHLOSS_CONST_DB: f64 = -30.5;
pub const PATHLOSS_SLOPE_DB: f64 = -36.7;
/// Distances are clamped below at 1 m to avoid the power-law singularity.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// A 2-D point in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// One user drop: positions, large-scale gains, correlation matrices.
///
/// Immutable once built; generation is a pure function of
/// `(config, snapshot_id)`.
#[derive(Debug, Clone)]
pub struct NetworkSnapshot {
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    /// Large-scale gains, linear scale; `beta[l][k]` for AP `l`, user `k`.
    pub beta: Vec<Vec<f64>>,
    /// Spatial correlation matrices; `corr[l][k]` is `M x M` Hermitian PSD
    /// with `tr(corr[l][k]) = M * beta[l][k]`.
    pub corr: Vec<Vec<CMatrix>>,
    /// Master seed the snapshot was generated from; downstream stages key
    /// their own random streams off `(seed, snapshot_id)`.
    pub seed: u64,
    pub snapshot_id: u64,
    /// Number of correlation matrices that needed eigenvalue clipping.
    pub psd_repairs: usize,
}

/// Wrapped signed displacement on a ring of circumference `side`.
///
/// Minimum-image convention: the result lies in `[-side/2, side/2]`.
pub fn wrap_delta(a: f64, b: f64, side: f64) -> f64 {
    let d = b - a;
    d - side * (d / side).round()
}

/// Toroidal distance between two points.
pub fn wrap_distance(a: Point, b: Point, side: f64) -> f64 {
    let dx = wrap_delta(a.x, b.x, side);
    let dy = wrap_delta(a.y, b.y, side);
    dx.hypot(dy)
}

/// Plain Euclidean distance, for comparison against the wrapped metric.
pub fn naive_distance(a: Point, b: Point) -> f64 {
    (b.x - a.x).hypot(b.y - a.y)
}

/// Large-scale gain over `distance_m` meters with an explicit shadowing
/// draw in dB. Returns linear scale.
pub fn pathloss_linear(distance_m: f64, shadow_db: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    let db = PATHLOSS_CONST_DB + PATHLOSS_SLOPE_DB * d.log10() + shadow_db;
    10f64.powf(db / 10.0)
}

/// Gaussian local-scattering spatial correlation for a half-wavelength ULA.
///
/// Entry `(m, n)` is
/// `beta * exp(j pi (m-n) sin(phi)) * exp(-(asd^2/2) (pi (m-n) cos(phi))^2)`,
/// Hermitian by construction with `tr = M * beta`. The closed form can go
/// slightly indefinite for small angular spreads; negative eigenvalues are
/// clipped at zero and the repair is reported in the second return value.
pub fn spatial_correlation(
    beta: f64,
    nominal_angle_rad: f64,
    asd_rad: f64,
    num_antennas: usize,
) -> (CMatrix, bool) {
    assert!(beta > 0.0, "beta must be positive");
    assert!(num_antennas >= 1);
    let m = num_antennas;
    let (sin_phi, cos_phi) = nominal_angle_rad.sin_cos();
    let mut r = CMatrix::zeros(m, m);
    for row in 0..m {
        for col in 0..m {
            let k = row as f64 - col as f64;
            let phase = std::f64::consts::PI * k * sin_phi;
            let spread = std::f64::consts::PI * k * cos_phi * asd_rad;
            let mag = beta * (-0.5 * spread * spread).exp();
            r[(row, col)] = Complex64::from_polar(mag, phase);
        }
    }
    let min_ev = hermitian_eigenvalues(&r)[0];
    if min_ev < -1e-12 * beta {
        let (repaired, _) = clip_psd(&r);
        (repaired, true)
    } else {
        (r, false)
    }
}

/// Positions of the `sqrt(L) x sqrt(L)` AP grid, cell-centered.
pub fn ap_grid(config: &SimConfig) -> Vec<Point> {
    let side = config.grid_side();
    let spacing = config.coverage_side / side as f64;
    let mut pts = Vec::with_capacity(config.num_aps);
    for row in 0..side {
        for col in 0..side {
            pts.push(Point {
                x: (col as f64 + 0.5) * spacing,
                y: (row as f64 + 0.5) * spacing,
            });
        }
    }
    pts
}

/// Generate the snapshot for `(config.seed, snapshot_id)`: grid, uniform
/// user drop, pathloss with shadowing, correlation matrices.
pub fn drop_network(config: &SimConfig, snapshot_id: u64) -> Result<NetworkSnapshot> {
    config.validate()?;
    let side = config.grid_side();
    if side * side != config.num_aps {
        return Err(Error::Config("AP count must be a perfect square".into()));
    }
    let ap_positions = ap_grid(config);

    let mut pos_rng = stream(config.seed, snapshot_id, StreamKind::UserPositions);
    let user_positions: Vec<Point> = (0..config.num_users)
        .map(|_| Point {
            x: pos_rng.gen::<f64>() * config.coverage_side,
            y: pos_rng.gen::<f64>() * config.coverage_side,
        })
        .collect();

    let mut shadow_rng = stream(config.seed, snapshot_id, StreamKind::Shadowing);
    let asd_rad = config.asd_deg.to_radians();
    let mut beta = vec![vec![0.0; config.num_users]; config.num_aps];
    let mut corr = Vec::with_capacity(config.num_aps);
    let mut psd_repairs = 0usize;
    for (l, ap) in ap_positions.iter().enumerate() {
        let mut row = Vec::with_capacity(config.num_users);
        for (k, user) in user_positions.iter().enumerate() {
            let shadow_db: f64 =
                config.shadow_sigma_db * shadow_rng.sample::<f64, _>(StandardNormal);
            let d = wrap_distance(*ap, *user, config.coverage_side);
            let gain = pathloss_linear(d, shadow_db);
            beta[l][k] = gain;

            let dx = wrap_delta(ap.x, user.x, config.coverage_side);
            let dy = wrap_delta(ap.y, user.y, config.coverage_side);
            let angle = dy.atan2(dx);
            let (r, repaired) = spatial_correlation(gain, angle, asd_rad, config.antennas_per_ap);
            if repaired {
                psd_repairs += 1;
            }
            row.push(r);
        }
        corr.push(row);
        let _ = l;
    }
    if psd_repairs > 0 {
        log::debug!("snapshot {snapshot_id}: clipped {psd_repairs} correlation matrices to PSD");
    }

    Ok(NetworkSnapshot {
        ap_positions,
        user_positions,
        beta,
        corr,
        seed: config.seed,
        snapshot_id,
        psd_repairs,
    })
}

impl NetworkSnapshot {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn antennas_per_ap(&self) -> usize {
        self.corr[0][0].nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_spacing_100m_for_reference_layout() {
        let cfg = SimConfig::default();
        let grid = ap_grid(&cfg);
        assert_eq!(grid.len(), 100);
        assert_relative_eq!(grid[0].x, 50.0);
        assert_relative_eq!(grid[0].y, 50.0);
        assert_relative_eq!(grid[1].x - grid[0].x, 100.0);
        assert_relative_eq!(grid[10].y - grid[0].y, 100.0);
    }

    #[test]
    fn pathloss_reference_values() {
        // -30.5 - 36.7 * 2 = -103.9 dB at 100 m
        let g = pathloss_linear(100.0, 0.0);
        assert_relative_eq!(10.0 * g.log10(), -103.9, epsilon = 1e-12);
        // log10(1) = 0
        let g1 = pathloss_linear(1.0, 0.0);
        assert_relative_eq!(10.0 * g1.log10(), -30.5, epsilon = 1e-12);
        // additive shadowing shift
        let gs = pathloss_linear(100.0, 4.0);
        assert_relative_eq!(10.0 * gs.log10(), -99.9, epsilon = 1e-12);
        // clamp below 1 m
        assert_relative_eq!(pathloss_linear(0.01, 0.0), pathloss_linear(1.0, 0.0));
    }

    #[test]
    fn wrap_distance_never_exceeds_naive() {
        let side = 1000.0;
        let a = Point { x: 10.0, y: 990.0 };
        let b = Point { x: 995.0, y: 5.0 };
        let wrapped = wrap_distance(a, b, side);
        let naive = naive_distance(a, b);
        assert!(wrapped < naive);
        assert!(wrapped <= side / 2.0 * 2f64.sqrt() + 1e-9);

        // interior pair: metrics agree
        let c = Point { x: 400.0, y: 420.0 };
        let d = Point { x: 480.0, y: 390.0 };
        assert_relative_eq!(wrap_distance(c, d, side), naive_distance(c, d), epsilon = 1e-12);
    }

    #[test]
    fn correlation_trace_equals_m_beta() {
        let beta = 3.7e-11;
        let (r, _) = spatial_correlation(beta, 30f64.to_radians(), 15f64.to_radians(), 4);
        let trace = r.trace().re;
        assert_relative_eq!(trace / 4.0, beta, max_relative = 1e-12);
        // Hermitian
        for i in 0..4 {
            for j in 0..4 {
                let d = (r[(i, j)] - r[(j, i)].conj()).norm();
                assert!(d < 1e-18);
            }
        }
    }

    #[test]
    fn zero_spread_gives_rank_one_steering() {
        let beta = 2.0e-10;
        let (r, _) = spatial_correlation(beta, 0.4, 0.0, 6);
        let ev = hermitian_eigenvalues(&r);
        assert_relative_eq!(ev[5], 6.0 * beta, max_relative = 1e-9);
        for &e in &ev[..5] {
            assert!(e.abs() < 1e-9 * beta);
        }
    }

    #[test]
    fn single_antenna_correlation_is_beta() {
        let (r, _) = spatial_correlation(5e-12, 1.0, 0.3, 1);
        assert_eq!(r.nrows(), 1);
        assert_relative_eq!(r[(0, 0)].re, 5e-12);
        assert_eq!(r[(0, 0)].im, 0.0);
    }

    #[test]
    fn drops_are_deterministic() {
        let cfg = SimConfig { num_aps: 25, num_users: 8, tau_p: 4, tau_u: 196, ..Default::default() };
        let a = drop_network(&cfg, 3).unwrap();
        let b = drop_network(&cfg, 3).unwrap();
        assert_eq!(a.user_positions, b.user_positions);
        assert_eq!(a.beta, b.beta);
        let c = drop_network(&cfg, 4).unwrap();
        assert_ne!(a.user_positions, c.user_positions);
    }

    #[test]
    fn snapshot_invariants_hold() {
        let cfg = SimConfig { num_aps: 16, num_users: 6, tau_p: 3, tau_u: 197, ..Default::default() };
        let snap = drop_network(&cfg, 0).unwrap();
        for l in 0..snap.num_aps() {
            for k in 0..snap.num_users() {
                let tr = snap.corr[l][k].trace().re;
                assert_relative_eq!(
                    tr / cfg.antennas_per_ap as f64,
                    snap.beta[l][k],
                    max_relative = 1e-9
                );
                let ev = hermitian_eigenvalues(&snap.corr[l][k]);
                assert!(ev[0] >= -1e-12 * snap.beta[l][k]);
            }
        }
    }

    #[test]
    fn users_fall_inside_the_area() {
        let cfg = SimConfig::default();
        let snap = drop_network(&cfg, 11).unwrap();
        for u in &snap.user_positions {
            assert!(u.x >= 0.0 && u.x < cfg.coverage_side);
            assert!(u.y >= 0.0 && u.y < cfg.coverage_side);
        }
    }
}
