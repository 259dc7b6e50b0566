//! Pilot assignment and user-centric serving clusters.
//!
//! With more users than pilots the assignment must reuse pilots, and the
//! serving clusters decide which reuse collisions actually hurt. Users are
//! processed in a seeded random order; each appoints the strongest AP that
//! still has a free pilot slot as its master, and the master hands out the
//! pilot it observes the least interference on. Every AP then serves, per
//! pilot, the strongest user on that pilot, with master claims taking
//! precedence, so each AP serves at most one user per pilot and every user
//! keeps its master.
//!
//! Cellular mode reuses the same machinery with a single serving station
//! per user.

use rand::seq::SliceRandom;

use crate::geometry::NetworkSnapshot;
use crate::rng::{stream, StreamKind};
use crate::{Error, Result};

/// Pilot map plus serving topology for one snapshot.
///
/// The serving relation is stored three ways because every consumer wants
/// a different view: a dense `serving[l][k]` matrix for masking, the
/// per-user AP sets `aps_of_user[k]` (the cluster M_k), and the per-AP
/// user sets `users_of_ap[l]` (the load K_l).
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    /// Pilot index in `[0, num_pilots)` per user.
    pub pilot_of: Vec<usize>,
    /// Master AP per user; always a member of `aps_of_user[k]`.
    pub master_ap: Vec<usize>,
    /// `serving[l][k]` is true iff AP `l` serves user `k`.
    pub serving: Vec<Vec<bool>>,
    /// Serving-AP index set per user, ascending.
    pub aps_of_user: Vec<Vec<usize>>,
    /// Served-user index set per AP, ascending.
    pub users_of_ap: Vec<Vec<usize>>,
    /// Partial interference sets: `partial_sets[k]` holds every user whose
    /// cluster overlaps user `k`'s, including `k` itself; ascending.
    pub partial_sets: Vec<Vec<usize>>,
    pub num_pilots: usize,
}

impl ClusterAssignment {
    pub fn num_users(&self) -> usize {
        self.pilot_of.len()
    }

    pub fn num_aps(&self) -> usize {
        self.serving.len()
    }

    /// Length of the compute vector in its uncompressed layout:
    /// `K` CPU shares followed by `K * L` per-AP shares.
    pub fn selector_len(&self) -> usize {
        let k = self.num_users();
        k + k * self.num_aps()
    }

    /// Per-user compute selector: entry `k` picks the user's CPU share and
    /// entry `K + k*L + l` picks its share of AP `l` for each serving AP.
    /// For any compute vector `f`, the inner product with this selector is
    /// the user's total compute rate.
    pub fn selector_b(&self, k: usize) -> Vec<bool> {
        let num_users = self.num_users();
        let num_aps = self.num_aps();
        let mut b = vec![false; self.selector_len()];
        b[k] = true;
        for &l in &self.aps_of_user[k] {
            b[num_users + k * num_aps + l] = true;
        }
        b
    }

    /// Per-AP budget selector: entry `K + k*L + l` is set for every user
    /// `k` served by AP `l`; the first `K` slots are zero.
    pub fn selector_c(&self, l: usize) -> Vec<bool> {
        let num_users = self.num_users();
        let num_aps = self.num_aps();
        let mut c = vec![false; self.selector_len()];
        for &k in &self.users_of_ap[l] {
            c[num_users + k * num_aps + l] = true;
        }
        c
    }
}

/// Shared state while users claim masters and pilots one by one.
struct Claims {
    /// `claimed[l][t]` = user that master-claimed pilot `t` at AP `l`.
    claimed: Vec<Vec<Option<usize>>>,
    pilot_of: Vec<Option<usize>>,
}

impl Claims {
    fn new(num_aps: usize, num_pilots: usize, num_users: usize) -> Self {
        Self {
            claimed: vec![vec![None; num_pilots]; num_aps],
            pilot_of: vec![None; num_users],
        }
    }

    fn has_free_slot(&self, l: usize) -> bool {
        self.claimed[l].iter().any(|c| c.is_none())
    }

    /// Strongest AP for user `k` that still has a free pilot slot;
    /// ties break toward the lowest AP index.
    fn pick_master(&self, snapshot: &NetworkSnapshot, k: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for l in 0..snapshot.num_aps() {
            if !self.has_free_slot(l) {
                continue;
            }
            let gain = snapshot.beta[l][k];
            match best {
                Some((_, b)) if gain <= b => {}
                _ => best = Some((l, gain)),
            }
        }
        best.map(|(l, _)| l)
    }

    /// Least-interfered free pilot at AP `l`: minimizes the summed gain of
    /// already-assigned users on each candidate pilot; ties break toward
    /// the lowest pilot index.
    fn pick_pilot(&self, snapshot: &NetworkSnapshot, l: usize) -> usize {
        let num_pilots = self.claimed[l].len();
        let mut interference = vec![0.0f64; num_pilots];
        for (i, pilot) in self.pilot_of.iter().enumerate() {
            if let Some(t) = pilot {
                interference[*t] += snapshot.beta[l][i];
            }
        }
        let mut best = None;
        for t in 0..num_pilots {
            if self.claimed[l][t].is_some() {
                continue;
            }
            match best {
                Some((_, b)) if interference[t] >= b => {}
                _ => best = Some((t, interference[t])),
            }
        }
        best.expect("caller guarantees a free slot").0
    }

    fn claim(&mut self, l: usize, t: usize, k: usize) {
        debug_assert!(self.claimed[l][t].is_none());
        self.claimed[l][t] = Some(k);
        self.pilot_of[k] = Some(t);
    }
}

fn shuffled_user_order(snapshot: &NetworkSnapshot) -> Vec<usize> {
    let mut order: Vec<usize> = (0..snapshot.num_users()).collect();
    let mut rng = stream(snapshot.seed, snapshot.snapshot_id, StreamKind::ClusterOrder);
    order.shuffle(&mut rng);
    order
}

fn check_capacity(snapshot: &NetworkSnapshot, num_pilots: usize) -> Result<()> {
    if num_pilots == 0 {
        return Err(Error::Config("need at least one pilot".into()));
    }
    let capacity = snapshot.num_aps() * num_pilots;
    if snapshot.num_users() > capacity {
        return Err(Error::Config(format!(
            "{} users exceed the {} master slots ({} APs x {} pilots)",
            snapshot.num_users(),
            capacity,
            snapshot.num_aps(),
            num_pilots
        )));
    }
    Ok(())
}

/// Build serving sets, partial sets and the dense serving matrix from the
/// master claims: per AP and pilot, the master-claimed user wins, otherwise
/// the strongest user on that pilot is served.
fn finalize(
    snapshot: &NetworkSnapshot,
    claims: &Claims,
    num_pilots: usize,
    masters_only: bool,
) -> ClusterAssignment {
    let num_aps = snapshot.num_aps();
    let num_users = snapshot.num_users();
    let pilot_of: Vec<usize> = claims
        .pilot_of
        .iter()
        .map(|p| p.expect("every user was assigned"))
        .collect();

    let mut master_ap = vec![usize::MAX; num_users];
    for l in 0..num_aps {
        for t in 0..num_pilots {
            if let Some(k) = claims.claimed[l][t] {
                master_ap[k] = l;
            }
        }
    }

    let mut users_on_pilot: Vec<Vec<usize>> = vec![Vec::new(); num_pilots];
    for (k, &t) in pilot_of.iter().enumerate() {
        users_on_pilot[t].push(k);
    }

    let mut serving = vec![vec![false; num_users]; num_aps];
    for l in 0..num_aps {
        for t in 0..num_pilots {
            if let Some(k) = claims.claimed[l][t] {
                serving[l][k] = true;
                continue;
            }
            if masters_only || users_on_pilot[t].is_empty() {
                continue;
            }
            let mut best = users_on_pilot[t][0];
            for &k in &users_on_pilot[t][1..] {
                if snapshot.beta[l][k] > snapshot.beta[l][best] {
                    best = k;
                }
            }
            serving[l][best] = true;
        }
    }

    let mut aps_of_user = vec![Vec::new(); num_users];
    let mut users_of_ap = vec![Vec::new(); num_aps];
    for (l, row) in serving.iter().enumerate() {
        for (k, &s) in row.iter().enumerate() {
            if s {
                aps_of_user[k].push(l);
                users_of_ap[l].push(k);
            }
        }
    }

    let mut partial_sets = vec![Vec::new(); num_users];
    for k in 0..num_users {
        for i in 0..num_users {
            let overlaps = aps_of_user[k].iter().any(|l| serving[*l][i]);
            if overlaps {
                partial_sets[k].push(i);
            }
        }
    }

    ClusterAssignment {
        pilot_of,
        master_ap,
        serving,
        aps_of_user,
        users_of_ap,
        partial_sets,
        num_pilots,
    }
}

/// Assign pilots and form user-centric clusters for a cell-free snapshot.
///
/// Requires `K <= L * num_pilots` so every user can find a master with a
/// free pilot slot. See the module docs for the assignment rules.
pub fn assign_pilots_and_clusters(
    snapshot: &NetworkSnapshot,
    num_pilots: usize,
) -> Result<ClusterAssignment> {
    check_capacity(snapshot, num_pilots)?;
    let mut claims = Claims::new(snapshot.num_aps(), num_pilots, snapshot.num_users());
    for k in shuffled_user_order(snapshot) {
        let l = claims
            .pick_master(snapshot, k)
            .ok_or_else(|| Error::Config("no AP with a free pilot slot".into()))?;
        let t = claims.pick_pilot(snapshot, l);
        claims.claim(l, t, k);
    }
    Ok(finalize(snapshot, &claims, num_pilots, false))
}

/// Cellular association: one serving station per user (the strongest with
/// a free pilot slot), same least-interference pilot rule within the cell.
pub fn assign_cellular(snapshot: &NetworkSnapshot, num_pilots: usize) -> Result<ClusterAssignment> {
    check_capacity(snapshot, num_pilots)?;
    let mut claims = Claims::new(snapshot.num_aps(), num_pilots, snapshot.num_users());
    for k in shuffled_user_order(snapshot) {
        let l = claims
            .pick_master(snapshot, k)
            .ok_or_else(|| Error::Config("no station with a free pilot slot".into()))?;
        let t = claims.pick_pilot(snapshot, l);
        claims.claim(l, t, k);
    }
    Ok(finalize(snapshot, &claims, num_pilots, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::geometry::{drop_network, Point};
    use crate::linalg::CMatrix;
    use num_complex::Complex64;

    fn toy_snapshot(beta: Vec<Vec<f64>>, seed: u64) -> NetworkSnapshot {
        let num_aps = beta.len();
        let num_users = beta[0].len();
        let corr: Vec<Vec<CMatrix>> = beta
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&b| CMatrix::identity(2, 2) * Complex64::new(b, 0.0))
                    .collect()
            })
            .collect();
        NetworkSnapshot {
            ap_positions: vec![Point { x: 0.0, y: 0.0 }; num_aps],
            user_positions: vec![Point { x: 0.0, y: 0.0 }; num_users],
            beta,
            corr,
            seed,
            snapshot_id: 0,
            psd_repairs: 0,
        }
    }

    fn check_invariants(snapshot: &NetworkSnapshot, a: &ClusterAssignment) {
        // a master always serves its user
        for k in 0..a.num_users() {
            assert!(a.serving[a.master_ap[k]][k], "master must serve user {k}");
            assert!(!a.aps_of_user[k].is_empty());
        }
        // at most one served user per pilot per AP
        for l in 0..a.num_aps() {
            let mut seen = vec![false; a.num_pilots];
            for &k in &a.users_of_ap[l] {
                let t = a.pilot_of[k];
                assert!(!seen[t], "AP {l} serves two users on pilot {t}");
                seen[t] = true;
            }
        }
        // partial sets: reflexive, symmetric, consistent with overlap
        for k in 0..a.num_users() {
            assert!(a.partial_sets[k].contains(&k));
            for &i in &a.partial_sets[k] {
                assert!(a.partial_sets[i].contains(&k));
                let overlap = a.aps_of_user[k]
                    .iter()
                    .any(|l| a.aps_of_user[i].contains(l));
                assert!(overlap);
            }
        }
        let _ = snapshot;
    }

    #[test]
    fn few_users_get_distinct_pilots() {
        let cfg = SimConfig { num_aps: 16, num_users: 5, tau_p: 8, tau_u: 192, ..Default::default() };
        let snap = drop_network(&cfg, 0).unwrap();
        let a = assign_pilots_and_clusters(&snap, cfg.tau_p).unwrap();
        let mut pilots = a.pilot_of.clone();
        pilots.sort_unstable();
        pilots.dedup();
        assert_eq!(pilots.len(), 5, "no reuse needed when K <= tau_p");
        check_invariants(&snap, &a);
    }

    #[test]
    fn reference_layout_respects_pilot_budget() {
        let cfg = SimConfig::default();
        let snap = drop_network(&cfg, 1).unwrap();
        let a = assign_pilots_and_clusters(&snap, cfg.tau_p).unwrap();
        let mut pilots = a.pilot_of.clone();
        pilots.sort_unstable();
        pilots.dedup();
        assert!(pilots.len() <= 10);
        for l in 0..a.num_aps() {
            assert!(a.users_of_ap[l].len() <= 10);
        }
        check_invariants(&snap, &a);
    }

    #[test]
    fn colocated_users_receive_different_pilots() {
        // one dominant AP for both users; interference-aware assignment
        // must separate them in the pilot domain
        let beta = vec![
            vec![1e-6, 1e-6],
            vec![1e-12, 1e-12],
            vec![1e-12, 1e-12],
        ];
        let snap = toy_snapshot(beta, 7);
        let a = assign_pilots_and_clusters(&snap, 4).unwrap();
        assert_eq!(a.master_ap, vec![0, 0]);
        assert_ne!(a.pilot_of[0], a.pilot_of[1]);
        check_invariants(&snap, &a);
    }

    #[test]
    fn master_overflow_spills_to_next_ap() {
        // three users, one pilot: the dominant AP can master only one of
        // them, the rest fall back to weaker APs
        let beta = vec![
            vec![1e-6, 9e-7, 8e-7],
            vec![1e-9, 1e-9, 1e-9],
            vec![1e-10, 1e-10, 1e-10],
        ];
        let snap = toy_snapshot(beta, 3);
        let a = assign_pilots_and_clusters(&snap, 1).unwrap();
        let mut masters = a.master_ap.clone();
        masters.sort_unstable();
        assert_eq!(masters, vec![0, 1, 2]);
        check_invariants(&snap, &a);
    }

    #[test]
    fn capacity_overflow_is_rejected() {
        let beta = vec![vec![1e-9; 4]; 1];
        let snap = toy_snapshot(beta, 0);
        assert!(assign_pilots_and_clusters(&snap, 3).is_err());
        assert!(assign_pilots_and_clusters(&snap, 0).is_err());
    }

    #[test]
    fn selector_identity_matches_direct_sum() {
        let cfg = SimConfig { num_aps: 9, num_users: 6, tau_p: 3, tau_u: 197, ..Default::default() };
        let snap = drop_network(&cfg, 2).unwrap();
        let a = assign_pilots_and_clusters(&snap, cfg.tau_p).unwrap();
        // deterministic pseudo-random compute vector
        let f: Vec<f64> = (0..a.selector_len())
            .map(|i| ((i * 2654435761 % 1000) as f64) / 10.0 + 1.0)
            .collect();
        for k in 0..a.num_users() {
            let via_selector: f64 = a
                .selector_b(k)
                .iter()
                .zip(&f)
                .filter(|(s, _)| **s)
                .map(|(_, x)| x)
                .sum();
            let direct: f64 = f[k]
                + a.aps_of_user[k]
                    .iter()
                    .map(|&l| f[a.num_users() + k * a.num_aps() + l])
                    .sum::<f64>();
            assert!((via_selector - direct).abs() < 1e-12);
        }
        for l in 0..a.num_aps() {
            let c = a.selector_c(l);
            for i in 0..a.num_users() {
                assert!(!c[i], "CPU slots must stay clear in the AP selector");
            }
            let picked: f64 = c.iter().zip(&f).filter(|(s, _)| **s).map(|(_, x)| x).sum();
            let direct: f64 = a.users_of_ap[l]
                .iter()
                .map(|&k| f[a.num_users() + k * a.num_aps() + l])
                .sum();
            assert!((picked - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn cellular_serves_each_user_once() {
        let cfg = SimConfig {
            num_aps: 4,
            antennas_per_ap: 100,
            num_users: 20,
            ..Default::default()
        };
        let snap = drop_network(&cfg, 5).unwrap();
        let a = assign_cellular(&snap, cfg.tau_p).unwrap();
        for k in 0..a.num_users() {
            assert_eq!(a.aps_of_user[k].len(), 1);
            assert_eq!(a.aps_of_user[k][0], a.master_ap[k]);
        }
        check_invariants(&snap, &a);
        // partial sets are exactly the same-cell users
        for k in 0..a.num_users() {
            let cell = a.master_ap[k];
            let mut expected: Vec<usize> = (0..a.num_users())
                .filter(|&i| a.master_ap[i] == cell)
                .collect();
            expected.sort_unstable();
            assert_eq!(a.partial_sets[k], expected);
        }
    }

    #[test]
    fn assignment_is_deterministic() {
        let cfg = SimConfig { num_aps: 25, num_users: 12, tau_p: 6, tau_u: 194, ..Default::default() };
        let snap = drop_network(&cfg, 9).unwrap();
        let a = assign_pilots_and_clusters(&snap, cfg.tau_p).unwrap();
        let b = assign_pilots_and_clusters(&snap, cfg.tau_p).unwrap();
        assert_eq!(a.pilot_of, b.pilot_of);
        assert_eq!(a.serving, b.serving);
    }
}
