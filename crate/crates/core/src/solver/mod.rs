//! The inner convex subproblem and its barrier solver.
//!
//! Each outer allocation iteration freezes the combiners, which makes the
//! SINR an affine ratio in the power vector, and replaces the spectral
//! efficiency by its concave first-order lower bound around the previous
//! power vector `p0`:
//!
//! ```text
//! SE~_k(p) = pre * [log2(g_k p_k + a_k'p + c_k) - log2(a_k'p0 + c_k)
//!                   - a_k'(p - p0) / (ln2 * (a_k'p0 + c_k))]
//! ```
//!
//! The subproblem then minimizes total transmit power minus the weighted
//! minimum-SE variables, subject to per-user offloading deadlines, shared
//! compute budgets, and box constraints. Everything in it is convex; the
//! solver in [`barrier`] is a feasible-start log-barrier Newton method.

mod barrier;

pub use barrier::{barrier_solve, kkt_residual, phase1_init};

use crate::{Error, Result};

/// Compute rates are handled in GHz inside the solver; public inputs and
/// outputs stay in cycles/s.
pub const COMPUTE_UNIT: f64 = 1e9;

/// Tiny per-GHz price on allocated compute. It never changes the optimal
/// powers measurably, but it makes the reported compute allocation the
/// least one meeting the deadlines instead of an arbitrary feasible split.
pub const F_TIEBREAK: f64 = 1e-9;

/// One shared compute budget: a capacity in cycles/s and the compressed
/// `f` coordinates drawing from it.
#[derive(Debug, Clone)]
pub struct BudgetGroup {
    pub limit: f64,
    pub members: Vec<usize>,
}

/// The convex subproblem solved at each outer iteration.
///
/// Power variables `p` (length `num_users`, W) and compressed compute
/// variables `f` (length `f_dim`, cycles/s): entry `k < num_users` is user
/// `k`'s cloud share, the rest are per serving-pair shares. `compute_sel[k]`
/// lists the `f` coordinates summing to user `k`'s total compute rate, and
/// each coordinate appears in exactly one selector and one budget group.
/// Min-SE variables are per group (`num_groups` is 1 in cell-free mode, one
/// per nonempty cell in cellular mode).
#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub num_users: usize,
    pub f_dim: usize,
    pub num_groups: usize,
    /// Min-SE group of each user.
    pub group_of: Vec<usize>,
    /// Useful-signal gains `g_k`, 1/W.
    pub gain: Vec<f64>,
    /// Interference rows `a_k`; `interference[k][i]` multiplies `p_i` in
    /// user `k`'s SINR denominator.
    pub interference: Vec<Vec<f64>>,
    /// Noise constants `c_k` of the SINR denominators.
    pub noise_c: Vec<f64>,
    /// Expansion point `p0` of the SE lower bound, W.
    pub expansion: Vec<f64>,
    /// SE prefactor (uplink fraction of the coherence block).
    pub prefactor: f64,
    /// Effective latency budgets `L~_k` in seconds (deadline minus any
    /// fixed fronthaul delay).
    pub lat_budget: Vec<f64>,
    /// Offloaded bits per user.
    pub task_bits: Vec<f64>,
    /// CPU cycles per user.
    pub task_cycles: Vec<f64>,
    /// Uplink bandwidth, Hz.
    pub bandwidth: f64,
    /// Per-user compute selectors (indices into `f`).
    pub compute_sel: Vec<Vec<usize>>,
    pub budget_groups: Vec<BudgetGroup>,
    /// Per-user transmit power cap, W.
    pub p_max: f64,
    /// Objective weight on the minimum-SE variables, W per bit/s/Hz.
    pub weight: f64,
}

impl ConvexSubproblem {
    /// Check the structural invariants. Latency budgets that are already
    /// exhausted by fixed delays make the instance infeasible outright.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_users;
        if k == 0 {
            return Err(Error::Config("subproblem needs at least one user".into()));
        }
        let lens = [
            self.group_of.len(),
            self.gain.len(),
            self.interference.len(),
            self.noise_c.len(),
            self.expansion.len(),
            self.lat_budget.len(),
            self.task_bits.len(),
            self.task_cycles.len(),
            self.compute_sel.len(),
        ];
        if lens.iter().any(|&l| l != k) {
            return Err(Error::Config("per-user field lengths disagree".into()));
        }
        if self.num_groups == 0 || self.group_of.iter().any(|&g| g >= self.num_groups) {
            return Err(Error::Config("bad min-SE group map".into()));
        }
        if self.interference.iter().any(|row| row.len() != k) {
            return Err(Error::Config("interference rows must have K entries".into()));
        }
        if self.gain.iter().any(|&g| !(g >= 0.0))
            || self.interference.iter().flatten().any(|&a| !(a >= 0.0))
            || self.noise_c.iter().any(|&c| !(c > 0.0))
        {
            return Err(Error::Config("SINR coefficients out of range".into()));
        }
        if !(self.p_max > 0.0) || !(self.bandwidth > 0.0) {
            return Err(Error::Config("p_max and bandwidth must be positive".into()));
        }
        if !(self.prefactor > 0.0 && self.prefactor <= 1.0) {
            return Err(Error::Config("SE prefactor must lie in (0, 1]".into()));
        }
        if self.weight < 0.0 {
            return Err(Error::Config("objective weight must be nonnegative".into()));
        }
        if self
            .expansion
            .iter()
            .any(|&p| !(p >= 0.0) || p > self.p_max * (1.0 + 1e-9))
        {
            return Err(Error::Config("expansion point outside the power box".into()));
        }
        if self.task_bits.iter().any(|&b| !(b > 0.0))
            || self.task_cycles.iter().any(|&w| !(w > 0.0))
        {
            return Err(Error::Config("task sizes must be positive".into()));
        }
        for (k, &lb) in self.lat_budget.iter().enumerate() {
            if !(lb > 0.0) {
                return Err(Error::Infeasible(format!(
                    "user {k}: fixed delays already exceed the deadline"
                )));
            }
        }
        if self.budget_groups.is_empty()
            || self.budget_groups.iter().any(|g| !(g.limit > 0.0))
        {
            return Err(Error::Config("compute budgets must be positive".into()));
        }
        // every f coordinate sits in exactly one selector and one group
        let mut sel_owner = vec![usize::MAX; self.f_dim];
        for (k, sel) in self.compute_sel.iter().enumerate() {
            if sel.is_empty() {
                return Err(Error::Config(format!("user {k} has no compute path")));
            }
            for &i in sel {
                if i >= self.f_dim || sel_owner[i] != usize::MAX {
                    return Err(Error::Config("compute selectors must partition f".into()));
                }
                sel_owner[i] = k;
            }
        }
        let mut grp_owner = vec![usize::MAX; self.f_dim];
        for (j, grp) in self.budget_groups.iter().enumerate() {
            for &i in &grp.members {
                if i >= self.f_dim || grp_owner[i] != usize::MAX {
                    return Err(Error::Config("budget groups must partition f".into()));
                }
                grp_owner[i] = j;
            }
        }
        if sel_owner.iter().any(|&o| o == usize::MAX) || grp_owner.iter().any(|&o| o == usize::MAX)
        {
            return Err(Error::Config("every f coordinate needs a selector and a budget".into()));
        }
        Ok(())
    }

    /// Denominator constant of the bound at the expansion point.
    pub(crate) fn v0(&self, k: usize) -> f64 {
        dot(&self.interference[k], &self.expansion) + self.noise_c[k]
    }

    /// The affine argument of the bound's log: `g_k p_k + a_k'p + c_k`.
    pub(crate) fn u_of(&self, p: &[f64], k: usize) -> f64 {
        self.gain[k] * p[k] + dot(&self.interference[k], p) + self.noise_c[k]
    }

    /// Concave lower bound on the SE of user `k` at power vector `p`,
    /// expanded around `self.expansion`.
    pub fn se_lower_bound(&self, p: &[f64], k: usize) -> f64 {
        let u = self.u_of(p, k);
        let v0 = self.v0(k);
        let drift: f64 = self.interference[k]
            .iter()
            .zip(p.iter().zip(&self.expansion))
            .map(|(a, (pi, p0i))| a * (pi - p0i))
            .sum();
        self.prefactor * (u.log2() - v0.log2() - drift / (std::f64::consts::LN_2 * v0))
    }

    /// True SE of user `k` at `p` for the frozen combiners.
    pub fn se_true(&self, p: &[f64], k: usize) -> f64 {
        let den = dot(&self.interference[k], p) + self.noise_c[k];
        self.prefactor * (1.0 + self.gain[k] * p[k] / den).log2()
    }

    /// Gradient of the lower bound with respect to `p`.
    pub fn se_bound_gradient(&self, p: &[f64], k: usize) -> Vec<f64> {
        let u = self.u_of(p, k);
        let v0 = self.v0(k);
        let scale = self.prefactor / std::f64::consts::LN_2;
        (0..self.num_users)
            .map(|i| {
                let r = self.interference[k][i] + if i == k { self.gain[k] } else { 0.0 };
                scale * (r / u - self.interference[k][i] / v0)
            })
            .collect()
    }

    /// Objective as reported: total power minus weighted min-SE sum.
    pub fn objective(&self, p: &[f64], nu: &[f64]) -> f64 {
        p.iter().sum::<f64>() - self.weight * nu.iter().sum::<f64>()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of an inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// strictly feasible point, not optimized (phase-1 output)
    Feasible,
    Optimal,
    Infeasible,
    /// Newton budget exhausted; best iterate returned
    MaxIter,
}

/// A primal point for the subproblem, with solver diagnostics.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// Transmit powers, W.
    pub p: Vec<f64>,
    /// Compressed compute rates, cycles/s.
    pub f: Vec<f64>,
    /// Min-SE variables per group, bit/s/Hz.
    pub nu: Vec<f64>,
    /// Reported objective `1'p - weight * 1'nu` (the compute tie-break
    /// price is excluded).
    pub objective: f64,
    pub kkt_residual: f64,
    pub newton_iters: usize,
    pub status: SolveStatus,
}

#[cfg(test)]
pub(crate) mod test_instances {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// A random dense well-scaled instance for property tests.
    pub fn random_instance(rng: &mut ChaCha8Rng, num_users: usize) -> ConvexSubproblem {
        let k = num_users;
        let p_max = 0.1;
        let gain: Vec<f64> = (0..k).map(|_| rng.gen_range(200.0..2000.0)).collect();
        let interference: Vec<Vec<f64>> = (0..k)
            .map(|ku| {
                (0..k)
                    .map(|i| {
                        let base = rng.gen_range(0.0..50.0);
                        if i == ku {
                            base * 0.02
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect();
        let noise_c: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..2.0)).collect();
        let expansion: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0) * p_max).collect();
        // one cloud coordinate and one node coordinate per user
        let compute_sel: Vec<Vec<usize>> = (0..k).map(|ku| vec![ku, k + ku]).collect();
        let budget_groups = vec![
            BudgetGroup { limit: 1e11, members: (0..k).collect() },
            BudgetGroup { limit: 5e10, members: (k..2 * k).collect() },
        ];
        ConvexSubproblem {
            num_users: k,
            f_dim: 2 * k,
            num_groups: 1,
            group_of: vec![0; k],
            gain,
            interference,
            noise_c,
            expansion,
            prefactor: 0.95,
            lat_budget: vec![0.5; k],
            task_bits: vec![2e6; k],
            task_cycles: vec![2.5e8; k],
            bandwidth: 20e6,
            compute_sel,
            budget_groups,
            p_max,
            weight: 1.0,
        }
    }
}
