//! Outer successive-convex-approximation loop.
//!
//! Each iteration freezes the combining vectors at the previous power
//! vector, rebuilds the affine SINR decomposition, and hands the resulting
//! convex subproblem to the barrier solver. The SE lower bound is tight at
//! the expansion point, so every new optimum is feasible for the next
//! subproblem and the objective can only descend; the loop additionally
//! discards any iterate that would raise the objective (which the finite
//! duality gap of the inner solver permits in the last digits) and stops.
//!
//! Compute rates are optimized continuously and floored to integer
//! cycles/s at the end; the lost fraction of a cycle per coordinate is far
//! below every latency tolerance, but a repair pass tops rates back up
//! from budget slack if the recheck ever disagrees.

use crate::cluster::ClusterAssignment;
use crate::combining::{
    instantaneous_se, lmmse_combiner, pmmse_combiner, sinr_coefficients, SinrCoefficients,
};
use crate::config::{NetworkMode, SimConfig};
use crate::estimation::{mmse_estimate, ChannelEstimates};
use crate::channel::ChannelRealization;
use crate::geometry::NetworkSnapshot;
use crate::solver::{
    barrier_solve, phase1_init, BudgetGroup, ConvexSubproblem, InnerSolution, SolveStatus,
};
use crate::{Error, Result};

const MAX_SCA_ITERS: usize = 30;
const SCA_REL_TOL: f64 = 1e-5;
/// Safety margin kept when repairing a rounded compute rate, seconds.
const ROUND_REPAIR_MARGIN: f64 = 1e-9;

/// One user's offloading job.
#[derive(Debug, Clone)]
pub struct OffloadTask {
    /// Bits to offload.
    pub bits: f64,
    /// CPU cycles the job needs.
    pub cycles: f64,
    /// End-to-end deadline in the distributed architecture, s.
    pub deadline: f64,
    /// Deadline in the cellular architecture, s.
    pub deadline_cell: f64,
}

/// MEC-side parameters shared by all users of a run.
#[derive(Debug, Clone)]
pub struct MecParams {
    /// Cloud CPU budget, cycles/s (ignored in cellular mode).
    pub cpu_budget: f64,
    /// Per-node compute budgets, cycles/s: one per AP in distributed mode,
    /// one per BS in cellular mode.
    pub ap_budgets: Vec<f64>,
    /// Fronthaul capacity, bit/s.
    pub fronthaul_rate: f64,
    /// Quantization bits per fronthaul sample.
    pub quant_bits: f64,
    /// Objective weight on the minimum SE, W per bit/s/Hz.
    pub weight: f64,
}

impl MecParams {
    /// Per-BS budget that equalizes the total compute of the two
    /// architectures: `ceil((sum of AP budgets + cloud budget) / num_bs)`.
    pub fn equalized_bs_budgets(&self, num_bs: usize) -> Vec<f64> {
        let total: f64 = self.ap_budgets.iter().sum::<f64>() + self.cpu_budget;
        vec![(total / num_bs as f64).ceil(); num_bs]
    }
}

/// Final outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub mode: NetworkMode,
    /// Transmit powers, W.
    pub p: Vec<f64>,
    /// Cloud compute per user, cycles/s (zero in cellular mode).
    pub f_cpu: Vec<u64>,
    /// Node compute per user: `(node index, cycles/s)` per serving node.
    pub f_ap: Vec<Vec<(usize, u64)>>,
    /// Min-SE variables: one entry in distributed mode, one per nonempty
    /// cell in cellular mode.
    pub nu: Vec<f64>,
    /// True per-user SE at the final powers and combiners, bit/s/Hz.
    pub se: Vec<f64>,
    /// Total per-user latency (transmission + computation + fronthaul), s.
    pub latency: Vec<f64>,
    /// Objective after the initial point and after each accepted SCA
    /// iteration.
    pub objective_trace: Vec<f64>,
    pub sca_iters: usize,
    /// KKT residual of the last inner solution.
    pub kkt_residual: f64,
    /// Newton steps summed over all inner solves.
    pub newton_iters: usize,
    pub status: SolveStatus,
}

impl Allocation {
    fn infeasible(mode: NetworkMode, num_users: usize) -> Self {
        Allocation {
            mode,
            p: Vec::new(),
            f_cpu: Vec::new(),
            f_ap: vec![Vec::new(); num_users],
            nu: Vec::new(),
            se: Vec::new(),
            latency: Vec::new(),
            objective_trace: Vec::new(),
            sca_iters: 0,
            kkt_residual: f64::INFINITY,
            newton_iters: 0,
            status: SolveStatus::Infeasible,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status != SolveStatus::Infeasible
    }

    /// Total transmit power, W.
    pub fn total_power(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Total allocated compute, cycles/s.
    pub fn total_compute(&self) -> u64 {
        let cloud: u64 = self.f_cpu.iter().sum();
        let nodes: u64 = self
            .f_ap
            .iter()
            .flat_map(|pairs| pairs.iter().map(|&(_, f)| f))
            .sum();
        cloud + nodes
    }

    /// Per-user total compute rate, cycles/s.
    pub fn user_compute(&self, k: usize) -> u64 {
        self.f_cpu.get(k).copied().unwrap_or(0)
            + self.f_ap[k].iter().map(|&(_, f)| f).sum::<u64>()
    }
}

/// Fixed delay of shipping one user's samples over the fronthaul, s.
/// Zero in cellular mode, where the serving BS computes locally.
pub fn fronthaul_delay(task: &OffloadTask, sim: &SimConfig, mec: &MecParams, mode: NetworkMode) -> f64 {
    match mode {
        NetworkMode::Cellular => 0.0,
        _ => 2.0 * task.bits * sim.antennas_per_ap as f64 * mec.quant_bits / mec.fronthaul_rate,
    }
}

/// The three latency components per user: transmission, computation,
/// fronthaul. A vanishing SE or compute rate reports infinity.
pub fn latency_breakdown(
    alloc: &Allocation,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
) -> Vec<(f64, f64, f64)> {
    tasks
        .iter()
        .enumerate()
        .map(|(k, task)| {
            let trans = if alloc.se[k] > 0.0 {
                task.bits / (sim.bandwidth * alloc.se[k])
            } else {
                f64::INFINITY
            };
            let s = alloc.user_compute(k);
            let comp = if s > 0 { task.cycles / s as f64 } else { f64::INFINITY };
            (trans, comp, fronthaul_delay(task, sim, mec, alloc.mode))
        })
        .collect()
}

/// Floor compressed compute rates to integer cycles/s.
pub fn round_compute(f_real: &[f64]) -> Vec<u64> {
    f_real.iter().map(|&v| v.max(0.0).floor() as u64).collect()
}

struct SubproblemLayout {
    sub: ConvexSubproblem,
    /// node index of each pair coordinate (offset `num_users`), distributed
    /// mode only
    pair_ap: Vec<usize>,
    /// serving node of each user, cellular mode only
    cell_of: Vec<usize>,
}

fn build_cellfree_subproblem(
    assignment: &ClusterAssignment,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
    coeffs: &SinrCoefficients,
    expansion: Vec<f64>,
) -> Result<SubproblemLayout> {
    let kk = sim.num_users;
    if mec.ap_budgets.len() != assignment.num_aps() {
        return Err(Error::Config("one compute budget per AP required".into()));
    }
    let mut compute_sel = Vec::with_capacity(kk);
    let mut pair_ap = Vec::new();
    let mut next = kk;
    for k in 0..kk {
        let mut sel = vec![k];
        for &l in &assignment.aps_of_user[k] {
            sel.push(next);
            pair_ap.push(l);
            next += 1;
        }
        compute_sel.push(sel);
    }
    let mut ap_members: Vec<Vec<usize>> = vec![Vec::new(); assignment.num_aps()];
    for (i, &l) in pair_ap.iter().enumerate() {
        ap_members[l].push(kk + i);
    }
    let mut budget_groups = vec![BudgetGroup {
        limit: mec.cpu_budget,
        members: (0..kk).collect(),
    }];
    for (l, members) in ap_members.into_iter().enumerate() {
        if !members.is_empty() {
            budget_groups.push(BudgetGroup { limit: mec.ap_budgets[l], members });
        }
    }
    let lat_budget: Vec<f64> = tasks
        .iter()
        .map(|t| t.deadline - fronthaul_delay(t, sim, mec, NetworkMode::Cellfree))
        .collect();
    let sub = ConvexSubproblem {
        num_users: kk,
        f_dim: next,
        num_groups: 1,
        group_of: vec![0; kk],
        gain: coeffs.g.clone(),
        interference: coeffs.a.clone(),
        noise_c: coeffs.c.clone(),
        expansion,
        prefactor: sim.se_prefactor(),
        lat_budget,
        task_bits: tasks.iter().map(|t| t.bits).collect(),
        task_cycles: tasks.iter().map(|t| t.cycles).collect(),
        bandwidth: sim.bandwidth,
        compute_sel,
        budget_groups,
        p_max: sim.p_max,
        weight: mec.weight,
    };
    sub.validate()?;
    Ok(SubproblemLayout { sub, pair_ap, cell_of: Vec::new() })
}

fn build_cellular_subproblem(
    assignment: &ClusterAssignment,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
    coeffs: &SinrCoefficients,
    expansion: Vec<f64>,
) -> Result<SubproblemLayout> {
    let kk = sim.num_users;
    if mec.ap_budgets.len() != assignment.num_aps() {
        return Err(Error::Config("one compute budget per BS required".into()));
    }
    let mut cell_of = Vec::with_capacity(kk);
    for k in 0..kk {
        match assignment.aps_of_user[k].as_slice() {
            &[bs] => cell_of.push(bs),
            _ => return Err(Error::Config("cellular users need exactly one serving BS".into())),
        }
    }
    // min-SE variables exist only for cells that serve someone
    let mut group_index = vec![usize::MAX; assignment.num_aps()];
    let mut num_groups = 0;
    for &bs in &cell_of {
        if group_index[bs] == usize::MAX {
            group_index[bs] = num_groups;
            num_groups += 1;
        }
    }
    let group_of: Vec<usize> = cell_of.iter().map(|&bs| group_index[bs]).collect();
    let mut budget_groups: Vec<BudgetGroup> = Vec::new();
    for bs in 0..assignment.num_aps() {
        let members: Vec<usize> = (0..kk).filter(|&k| cell_of[k] == bs).collect();
        if !members.is_empty() {
            budget_groups.push(BudgetGroup { limit: mec.ap_budgets[bs], members });
        }
    }
    let sub = ConvexSubproblem {
        num_users: kk,
        f_dim: kk,
        num_groups,
        group_of,
        gain: coeffs.g.clone(),
        interference: coeffs.a.clone(),
        noise_c: coeffs.c.clone(),
        expansion,
        prefactor: sim.se_prefactor(),
        lat_budget: tasks.iter().map(|t| t.deadline_cell).collect(),
        task_bits: tasks.iter().map(|t| t.bits).collect(),
        task_cycles: tasks.iter().map(|t| t.cycles).collect(),
        bandwidth: sim.bandwidth,
        compute_sel: (0..kk).map(|k| vec![k]).collect(),
        budget_groups,
        p_max: sim.p_max,
        weight: mec.weight,
    };
    sub.validate()?;
    Ok(SubproblemLayout { sub, pair_ap: Vec::new(), cell_of })
}

/// Joint power and compute allocation for the distributed architecture.
pub fn sca_solve_cellfree(
    snapshot: &NetworkSnapshot,
    realization: &ChannelRealization,
    assignment: &ClusterAssignment,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
) -> Result<Allocation> {
    sca_run(snapshot, realization, assignment, tasks, sim, mec, NetworkMode::Cellfree)
}

/// Joint power and compute allocation for the cellular benchmark.
pub fn sca_solve_cellular(
    snapshot: &NetworkSnapshot,
    realization: &ChannelRealization,
    assignment: &ClusterAssignment,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
) -> Result<Allocation> {
    sca_run(snapshot, realization, assignment, tasks, sim, mec, NetworkMode::Cellular)
}

fn sca_run(
    snapshot: &NetworkSnapshot,
    realization: &ChannelRealization,
    assignment: &ClusterAssignment,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
    mode: NetworkMode,
) -> Result<Allocation> {
    let kk = sim.num_users;
    if tasks.len() != kk || assignment.num_users() != kk {
        return Err(Error::Config("tasks and assignment must cover every user".into()));
    }
    let estimates = mmse_estimate(realization, snapshot, assignment, sim.pilot_power, sim.noise_power)?;

    let mut p_prev = vec![sim.p_max; kk];
    let mut nu_hint: Option<Vec<f64>> = None;
    let mut accepted: Option<(InnerSolution, SinrCoefficients, SubproblemLayout)> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut newton_total = 0;
    let mut exhausted = false;

    for n in 0..MAX_SCA_ITERS {
        let combiners = match mode {
            NetworkMode::Cellular => lmmse_combiner(&estimates, assignment, &p_prev, sim.noise_power)?,
            _ => pmmse_combiner(&estimates, assignment, &p_prev, sim.noise_power)?,
        };
        let coeffs = sinr_coefficients(&estimates, &combiners, assignment, sim.noise_power);
        let layout = match mode {
            NetworkMode::Cellular => {
                build_cellular_subproblem(assignment, tasks, sim, mec, &coeffs, p_prev.clone())
            }
            _ => build_cellfree_subproblem(assignment, tasks, sim, mec, &coeffs, p_prev.clone()),
        };
        let layout = match layout {
            Ok(l) => l,
            Err(Error::Infeasible(msg)) => {
                if n == 0 {
                    log::info!("snapshot structurally infeasible: {msg}");
                    return Ok(Allocation::infeasible(mode, kk));
                }
                log::warn!("subproblem turned infeasible at iteration {n}: {msg}");
                break;
            }
            Err(e) => return Err(e),
        };
        let init = match phase1_init(&layout.sub, nu_hint.as_deref()) {
            Ok(init) => init,
            Err(Error::Infeasible(msg)) => {
                if n == 0 {
                    log::info!("no feasible starting point: {msg}");
                    return Ok(Allocation::infeasible(mode, kk));
                }
                log::warn!("phase 1 failed at iteration {n}: {msg}; keeping previous iterate");
                break;
            }
            Err(e) => return Err(e),
        };
        if n == 0 {
            trace.push(init.objective);
        }
        let sol = barrier_solve(&layout.sub, &init)?;
        newton_total += sol.newton_iters;
        let prev_obj = *trace.last().expect("trace seeded at n = 0");
        if sol.objective > prev_obj {
            // the inner duality gap can leave the new optimum a hair above
            // the previous objective once the outer loop has converged
            log::debug!(
                "iteration {n} would raise the objective ({prev_obj} -> {}); stopping",
                sol.objective
            );
            if n == 0 {
                accepted = Some((init, coeffs, layout));
            }
            break;
        }
        let delta = prev_obj - sol.objective;
        trace.push(sol.objective);
        p_prev = sol.p.clone();
        nu_hint = Some(sol.nu.clone());
        if sol.status == SolveStatus::MaxIter {
            exhausted = true;
        }
        let converged = n > 0 && delta <= SCA_REL_TOL * prev_obj.abs();
        accepted = Some((sol, coeffs, layout));
        if converged {
            break;
        }
    }

    let Some((sol, coeffs, layout)) = accepted else {
        return Ok(Allocation::infeasible(mode, kk));
    };
    finalize(sol, &coeffs, &layout, tasks, sim, mec, mode, trace, newton_total, exhausted)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    sol: InnerSolution,
    coeffs: &SinrCoefficients,
    layout: &SubproblemLayout,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
    mode: NetworkMode,
    trace: Vec<f64>,
    newton_total: usize,
    exhausted: bool,
) -> Result<Allocation> {
    let kk = sim.num_users;
    let sub = &layout.sub;
    let mut f_int = round_compute(&sol.f);
    let se = instantaneous_se(coeffs, &sol.p, sim.tau_u, sim.tau_c);

    // recheck every deadline against the true SE and the integer rates;
    // rounding costs less than a cycle per coordinate, so the repair pass
    // is expected to be dead code
    for k in 0..kk {
        let fh = fronthaul_delay(&tasks[k], sim, mec, mode);
        let trans = tasks[k].bits / (sim.bandwidth * se[k]);
        let deadline = match mode {
            NetworkMode::Cellular => tasks[k].deadline_cell,
            _ => tasks[k].deadline,
        };
        let s: u64 = sub.compute_sel[k].iter().map(|&i| f_int[i]).sum();
        let comp = tasks[k].cycles / s as f64;
        if trans + comp + fh <= deadline + 1e-6 {
            continue;
        }
        let slack_t = deadline - trans - fh - ROUND_REPAIR_MARGIN;
        if slack_t <= 0.0 {
            return Err(Error::Numerical(format!(
                "user {k}: deadline violated after rounding with no compute slack"
            )));
        }
        let s_needed = (tasks[k].cycles / slack_t).ceil() as u64;
        let mut deficit = s_needed.saturating_sub(s);
        for &i in &sub.compute_sel[k] {
            if deficit == 0 {
                break;
            }
            let group = sub
                .budget_groups
                .iter()
                .find(|g| g.members.contains(&i))
                .expect("validated partition");
            let used: u64 = group.members.iter().map(|&j| f_int[j]).sum();
            let room = (group.limit.floor() as u64).saturating_sub(used);
            let add = room.min(deficit);
            f_int[i] += add;
            deficit -= add;
        }
        if deficit > 0 {
            return Err(Error::Numerical(format!(
                "user {k}: compute budgets exhausted during rounding repair"
            )));
        }
    }

    let mut f_cpu = vec![0u64; kk];
    let mut f_ap: Vec<Vec<(usize, u64)>> = vec![Vec::new(); kk];
    match mode {
        NetworkMode::Cellular => {
            for k in 0..kk {
                f_ap[k].push((layout.cell_of[k], f_int[k]));
            }
        }
        _ => {
            f_cpu.copy_from_slice(&f_int[..kk]);
            for k in 0..kk {
                for (j, &i) in sub.compute_sel[k].iter().skip(1).enumerate() {
                    let _ = j;
                    f_ap[k].push((layout.pair_ap[i - kk], f_int[i]));
                }
            }
        }
    }

    let status = if exhausted { SolveStatus::MaxIter } else { sol.status };
    let mut alloc = Allocation {
        mode,
        p: sol.p,
        f_cpu,
        f_ap,
        nu: sol.nu,
        se,
        latency: vec![0.0; kk],
        objective_trace: trace,
        sca_iters: 0,
        kkt_residual: sol.kkt_residual,
        newton_iters: newton_total,
        status,
    };
    alloc.sca_iters = alloc.objective_trace.len().saturating_sub(1);
    let parts = latency_breakdown(&alloc, tasks, sim, mec);
    for k in 0..kk {
        alloc.latency[k] = parts[k].0 + parts[k].1 + parts[k].2;
    }
    Ok(alloc)
}

/// Reference allocation with every user at maximum power and no
/// optimization; compute budgets are split equally so the latency report
/// stays finite.
pub fn fullpower_allocation(
    snapshot: &NetworkSnapshot,
    realization: &ChannelRealization,
    assignment: &ClusterAssignment,
    tasks: &[OffloadTask],
    sim: &SimConfig,
    mec: &MecParams,
) -> Result<Allocation> {
    let kk = sim.num_users;
    let estimates: ChannelEstimates =
        mmse_estimate(realization, snapshot, assignment, sim.pilot_power, sim.noise_power)?;
    let p = vec![sim.p_max; kk];
    let combiners = pmmse_combiner(&estimates, assignment, &p, sim.noise_power)?;
    let coeffs = sinr_coefficients(&estimates, &combiners, assignment, sim.noise_power);
    let se = instantaneous_se(&coeffs, &p, sim.tau_u, sim.tau_c);

    let mut f_cpu = vec![0u64; kk];
    let mut f_ap: Vec<Vec<(usize, u64)>> = vec![Vec::new(); kk];
    if kk > 0 {
        let cloud_share = (mec.cpu_budget / kk as f64).floor() as u64;
        for k in 0..kk {
            f_cpu[k] = cloud_share;
            for &l in &assignment.aps_of_user[k] {
                let served = assignment.users_of_ap[l].len().max(1);
                let share = (mec.ap_budgets[l] / served as f64).floor() as u64;
                f_ap[k].push((l, share));
            }
        }
    }

    let mut alloc = Allocation {
        mode: NetworkMode::Fullpower,
        p,
        f_cpu,
        f_ap,
        nu: vec![se.iter().copied().fold(f64::INFINITY, f64::min)],
        se,
        latency: vec![0.0; kk],
        objective_trace: Vec::new(),
        sca_iters: 0,
        kkt_residual: f64::INFINITY,
        newton_iters: 0,
        status: SolveStatus::Feasible,
    };
    let parts = latency_breakdown(&alloc, tasks, sim, mec);
    for k in 0..kk {
        alloc.latency[k] = parts[k].0 + parts[k].1 + parts[k].2;
    }
    Ok(alloc)
}
