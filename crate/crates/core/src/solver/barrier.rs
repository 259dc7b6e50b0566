//! Feasible-start log-barrier solver for [`ConvexSubproblem`].
//!
//! The internal variable is `x = [p (W) | nu | f (GHz)]`. The solver
//! minimizes the scaled centering objective
//!
//! ```text
//! psi_t(x) = c0'x + (1/t) * sum_j -ln(-phi_j(x))
//! ```
//!
//! with damped Newton steps at each barrier level `t`, multiplying `t` by
//! 10 until the duality-gap estimate `m/t` falls below `1e-8` times the
//! objective scale. Working on `psi/t` instead of the textbook `t*obj + Phi`
//! keeps the function at unit scale for every `t`, so Armijo comparisons
//! stay meaningful in f64 all the way down the ladder.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{ConvexSubproblem, InnerSolution, SolveStatus, COMPUTE_UNIT, F_TIEBREAK};
use crate::{Error, Result};

const T0: f64 = 1.0;
const MU: f64 = 10.0;
const GAP_TOL_REL: f64 = 1e-8;
const NEWTON_TOL: f64 = 1e-9;
const ARMIJO_SLOPE: f64 = 0.25;
const BACKTRACK: f64 = 0.5;
const MAX_NEWTON_TOTAL: usize = 500;
const MAX_INNER: usize = 100;
const MAX_OUTER: usize = 40;
const MAX_BACKTRACKS: usize = 60;

/// Precomputed per-instance data in solver units (compute in GHz).
struct Kernel<'a> {
    sub: &'a ConvexSubproblem,
    nk: usize,
    ng: usize,
    nf: usize,
    /// offset of the f block; the nu block starts at `nk`
    nf0: usize,
    n: usize,
    /// total constraint count
    m: usize,
    /// task cycles in Gcycles
    wt: Vec<f64>,
    /// task bits over bandwidth, s * (bit/s/Hz)
    tb: Vec<f64>,
    /// budget limits in GHz
    caps: Vec<f64>,
    /// bound-log slope vectors `r_k = a_k + g_k e_k`
    r: Vec<Vec<f64>>,
    c0: DVector<f64>,
}

/// Constraint values and intermediates at one strictly feasible point.
struct EvalState {
    psi: f64,
    obj_rep: f64,
    u: Vec<f64>,
    e: Vec<f64>,
    s: Vec<f64>,
    phi_lat: Vec<f64>,
    phi_se: Vec<f64>,
    phi_bud: Vec<f64>,
}

impl<'a> Kernel<'a> {
    fn new(sub: &'a ConvexSubproblem) -> Self {
        let nk = sub.num_users;
        let ng = sub.num_groups;
        let nf = sub.f_dim;
        let nb = sub.budget_groups.len();
        let nf0 = nk + ng;
        let n = nf0 + nf;
        let m = 4 * nk + nb + nf + ng;
        let wt: Vec<f64> = sub.task_cycles.iter().map(|w| w / COMPUTE_UNIT).collect();
        let tb: Vec<f64> = sub.task_bits.iter().map(|b| b / sub.bandwidth).collect();
        let caps: Vec<f64> = sub
            .budget_groups
            .iter()
            .map(|g| g.limit / COMPUTE_UNIT)
            .collect();
        let r: Vec<Vec<f64>> = (0..nk)
            .map(|k| {
                (0..nk)
                    .map(|i| sub.interference[k][i] + if i == k { sub.gain[k] } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut c0 = DVector::zeros(n);
        for i in 0..nk {
            c0[i] = 1.0;
        }
        for g in 0..ng {
            c0[nk + g] = -sub.weight;
        }
        for i in 0..nf {
            c0[nf0 + i] = F_TIEBREAK;
        }
        Kernel { sub, nk, ng, nf, nf0, n, m, wt, tb, caps, r, c0 }
    }

    fn pack(&self, p: &[f64], nu: &[f64], f_ghz: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.n);
        x.as_mut_slice()[..self.nk].copy_from_slice(p);
        x.as_mut_slice()[self.nk..self.nf0].copy_from_slice(nu);
        x.as_mut_slice()[self.nf0..].copy_from_slice(f_ghz);
        x
    }

    /// Evaluate the centering objective; `None` off the strictly feasible
    /// domain.
    fn eval(&self, x: &DVector<f64>, inv_t: f64) -> Option<EvalState> {
        let sub = self.sub;
        let (nk, ng) = (self.nk, self.ng);
        let xs = x.as_slice();
        let p = &xs[..nk];
        let nu = &xs[nk..self.nf0];
        let f = &xs[self.nf0..];

        if p.iter().any(|&v| v <= 0.0 || v >= sub.p_max)
            || nu.iter().any(|&v| v <= 0.0)
            || f.iter().any(|&v| v <= 0.0)
        {
            return None;
        }

        let mut barrier = 0.0;
        let mut u = Vec::with_capacity(nk);
        let mut e = Vec::with_capacity(nk);
        let mut s = Vec::with_capacity(nk);
        let mut phi_lat = Vec::with_capacity(nk);
        let mut phi_se = Vec::with_capacity(nk);
        for k in 0..nk {
            let uk = sub.u_of(p, k);
            if uk <= 0.0 {
                return None;
            }
            let ek = sub.se_lower_bound(p, k);
            if ek <= 0.0 {
                return None;
            }
            let sk: f64 = sub.compute_sel[k].iter().map(|&i| f[i]).sum();
            let pl = self.tb[k] / ek + self.wt[k] / sk - sub.lat_budget[k];
            let ps = nu[sub.group_of[k]] - ek;
            if pl >= 0.0 || ps >= 0.0 {
                return None;
            }
            barrier -= (-pl).ln() + (-ps).ln();
            u.push(uk);
            e.push(ek);
            s.push(sk);
            phi_lat.push(pl);
            phi_se.push(ps);
        }
        let mut phi_bud = Vec::with_capacity(sub.budget_groups.len());
        for (j, grp) in sub.budget_groups.iter().enumerate() {
            let used: f64 = grp.members.iter().map(|&i| f[i]).sum();
            let pb = used - self.caps[j];
            if pb >= 0.0 {
                return None;
            }
            barrier -= (-pb).ln();
            phi_bud.push(pb);
        }
        for &v in p {
            barrier -= v.ln() + (sub.p_max - v).ln();
        }
        for &v in f {
            barrier -= v.ln();
        }
        for &v in nu {
            barrier -= v.ln();
        }

        let psum: f64 = p.iter().sum();
        let fsum: f64 = f.iter().sum();
        let nusum: f64 = nu.iter().sum();
        let obj_rep = psum - sub.weight * nusum;
        let psi = psum + F_TIEBREAK * fsum - sub.weight * nusum + inv_t * barrier;
        if !psi.is_finite() {
            return None;
        }
        let _ = ng;
        Some(EvalState { psi, obj_rep, u, e, s, phi_lat, phi_se, phi_bud })
    }

    /// Gradient and Hessian of the scaled centering objective.
    fn derivatives(
        &self,
        x: &DVector<f64>,
        ev: &EvalState,
        inv_t: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let sub = self.sub;
        let (nk, nf0) = (self.nk, self.nf0);
        let xs = x.as_slice();
        let p = &xs[..nk];
        let nu = &xs[nk..nf0];
        let f = &xs[nf0..];
        let ln2 = std::f64::consts::LN_2;

        let mut g = self.c0.clone();
        let mut h = DMatrix::zeros(self.n, self.n);

        for k in 0..nk {
            let q = sub.se_bound_gradient(p, k);
            let r = &self.r[k];
            let ek = ev.e[k];
            let sk = ev.s[k];
            // curvature scale of the bound: -hess(SE~) = c_r * r r'
            let c_r = sub.prefactor / (ln2 * ev.u[k] * ev.u[k]);

            // latency constraint
            let il = inv_t / (-ev.phi_lat[k]);
            let il2 = il / (-ev.phi_lat[k]);
            let ce = -self.tb[k] / (ek * ek);
            let cf = -self.wt[k] / (sk * sk);
            for i in 0..nk {
                g[i] += il * ce * q[i];
            }
            for &fi in &sub.compute_sel[k] {
                g[nf0 + fi] += il * cf;
            }
            let cqq = il2 * ce * ce + il * 2.0 * self.tb[k] / (ek * ek * ek);
            let crr = il * (self.tb[k] / (ek * ek)) * c_r;
            for i in 0..nk {
                for j in 0..nk {
                    h[(i, j)] += cqq * q[i] * q[j] + crr * r[i] * r[j];
                }
            }
            let cff = il2 * cf * cf + il * 2.0 * self.wt[k] / (sk * sk * sk);
            for &fi in &sub.compute_sel[k] {
                for &fj in &sub.compute_sel[k] {
                    h[(nf0 + fi, nf0 + fj)] += cff;
                }
            }
            let cpf = il2 * ce * cf;
            for i in 0..nk {
                let v = cpf * q[i];
                for &fj in &sub.compute_sel[k] {
                    h[(i, nf0 + fj)] += v;
                    h[(nf0 + fj, i)] += v;
                }
            }

            // min-SE constraint
            let gidx = nk + sub.group_of[k];
            let is = inv_t / (-ev.phi_se[k]);
            let is2 = is / (-ev.phi_se[k]);
            for i in 0..nk {
                g[i] -= is * q[i];
            }
            g[gidx] += is;
            for i in 0..nk {
                for j in 0..nk {
                    h[(i, j)] += is2 * q[i] * q[j] + is * c_r * r[i] * r[j];
                }
            }
            for i in 0..nk {
                let v = -is2 * q[i];
                h[(i, gidx)] += v;
                h[(gidx, i)] += v;
            }
            h[(gidx, gidx)] += is2;
        }

        for (j, grp) in sub.budget_groups.iter().enumerate() {
            let ib = inv_t / (-ev.phi_bud[j]);
            let ib2 = ib / (-ev.phi_bud[j]);
            for &fi in &grp.members {
                g[nf0 + fi] += ib;
            }
            for &fi in &grp.members {
                for &fj in &grp.members {
                    h[(nf0 + fi, nf0 + fj)] += ib2;
                }
            }
        }

        for i in 0..nk {
            let lo = p[i];
            let hi = sub.p_max - p[i];
            g[i] += inv_t * (1.0 / hi - 1.0 / lo);
            h[(i, i)] += inv_t * (1.0 / (hi * hi) + 1.0 / (lo * lo));
        }
        for gg in 0..self.ng {
            g[nk + gg] -= inv_t / nu[gg];
            h[(nk + gg, nk + gg)] += inv_t / (nu[gg] * nu[gg]);
        }
        for i in 0..self.nf {
            g[nf0 + i] -= inv_t / f[i];
            h[(nf0 + i, nf0 + i)] += inv_t / (f[i] * f[i]);
        }

        (g, h)
    }

    /// Gradient of one constraint, written into `out` (zeroed first).
    /// Constraint index order: latency, min-SE, budgets, p lower, p upper,
    /// f lower, nu lower.
    fn constraint_grad(&self, j: usize, x: &DVector<f64>, ev: &EvalState, out: &mut DVector<f64>) {
        let sub = self.sub;
        let (nk, nf0) = (self.nk, self.nf0);
        let nb = sub.budget_groups.len();
        out.fill(0.0);
        let xs = x.as_slice();
        let p = &xs[..nk];
        if j < nk {
            let k = j;
            let q = sub.se_bound_gradient(p, k);
            let ce = -self.tb[k] / (ev.e[k] * ev.e[k]);
            for i in 0..nk {
                out[i] = ce * q[i];
            }
            let cf = -self.wt[k] / (ev.s[k] * ev.s[k]);
            for &fi in &sub.compute_sel[k] {
                out[nf0 + fi] = cf;
            }
        } else if j < 2 * nk {
            let k = j - nk;
            let q = sub.se_bound_gradient(p, k);
            for i in 0..nk {
                out[i] = -q[i];
            }
            out[nk + sub.group_of[k]] = 1.0;
        } else if j < 2 * nk + nb {
            let grp = &sub.budget_groups[j - 2 * nk];
            for &fi in &grp.members {
                out[nf0 + fi] = 1.0;
            }
        } else if j < 3 * nk + nb {
            out[j - 2 * nk - nb] = -1.0;
        } else if j < 4 * nk + nb {
            out[j - 3 * nk - nb] = 1.0;
        } else if j < 4 * nk + nb + self.nf {
            out[nf0 + (j - 4 * nk - nb)] = -1.0;
        } else {
            out[nk + (j - 4 * nk - nb - self.nf)] = -1.0;
        }
    }

    /// Value and normalization scale of one constraint, same order as
    /// [`Kernel::constraint_grad`].
    fn constraint_value(&self, j: usize, x: &DVector<f64>, ev: &EvalState) -> (f64, f64) {
        let sub = self.sub;
        let nk = self.nk;
        let nb = sub.budget_groups.len();
        let xs = x.as_slice();
        if j < nk {
            (ev.phi_lat[j], sub.lat_budget[j])
        } else if j < 2 * nk {
            (ev.phi_se[j - nk], 1.0)
        } else if j < 2 * nk + nb {
            let b = j - 2 * nk;
            (ev.phi_bud[b], self.caps[b])
        } else if j < 3 * nk + nb {
            (-xs[j - 2 * nk - nb], sub.p_max)
        } else if j < 4 * nk + nb {
            (xs[j - 3 * nk - nb] - sub.p_max, sub.p_max)
        } else if j < 4 * nk + nb + self.nf {
            (-xs[self.nf0 + (j - 4 * nk - nb)], 1.0)
        } else {
            (-xs[nk + (j - 4 * nk - nb - self.nf)], 1.0)
        }
    }
}

fn solve_newton_system(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let diag_max = h
        .diagonal()
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()))
        .max(1e-300);
    for &ridge in &[0.0, 1e-12, 1e-9, 1e-6] {
        let mut ht = h.clone();
        if ridge > 0.0 {
            let bump = ridge * diag_max;
            for i in 0..ht.nrows() {
                ht[(i, i)] += bump;
            }
        }
        if let Some(ch) = Cholesky::new(ht) {
            let d = ch.solve(&(-g));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
    }
    None
}

enum RunOutcome {
    Done { x: DVector<f64>, iters: usize, centered: bool },
    NonFinite,
}

fn run_ladder(kern: &Kernel, x0: DVector<f64>, t0: f64) -> RunOutcome {
    let mut x = x0;
    let mut t = t0;
    let mut total = 0usize;
    let mut centered = false;

    for _ in 0..MAX_OUTER {
        let inv_t = 1.0 / t;
        let mut ev = match kern.eval(&x, inv_t) {
            Some(ev) => ev,
            None => return RunOutcome::NonFinite,
        };
        let mut lambda2 = f64::INFINITY;
        for _ in 0..MAX_INNER {
            if total >= MAX_NEWTON_TOTAL {
                return RunOutcome::Done { x, iters: total, centered: false };
            }
            let (g, h) = kern.derivatives(&x, &ev, inv_t);
            if g.iter().any(|v| !v.is_finite()) {
                return RunOutcome::NonFinite;
            }
            let delta = match solve_newton_system(&h, &g) {
                Some(d) => d,
                None => break,
            };
            lambda2 = (-g.dot(&delta)).max(0.0);
            if !lambda2.is_finite() {
                return RunOutcome::NonFinite;
            }
            if lambda2 / 2.0 <= NEWTON_TOL {
                break;
            }
            total += 1;
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let xn = &x + &delta * alpha;
                if let Some(evn) = kern.eval(&xn, inv_t) {
                    if evn.psi <= ev.psi - ARMIJO_SLOPE * alpha * lambda2 {
                        accepted = Some((xn, evn));
                        break;
                    }
                }
                alpha *= BACKTRACK;
            }
            match accepted {
                Some((xn, evn)) => {
                    let progress = ev.psi - evn.psi;
                    x = xn;
                    ev = evn;
                    if progress <= 1e-15 * (1.0 + ev.psi.abs()) {
                        break;
                    }
                }
                None => break,
            }
        }
        centered = lambda2 / 2.0 <= 1e-6;
        if std::env::var_os("CFMEC_TRACE_BARRIER").is_some() {
            eprintln!(
                "t={t:.3e} total={total} lambda2={lambda2:.3e} obj={:.8e} psi={:.8e}",
                ev.obj_rep, ev.psi
            );
        }
        let scale = ev.obj_rep.abs().max(1.0);
        if kern.m as f64 / t <= GAP_TOL_REL * scale {
            break;
        }
        t *= MU;
    }
    RunOutcome::Done { x, iters: total, centered }
}

fn solution_from_x(
    sub: &ConvexSubproblem,
    kern: &Kernel,
    x: &DVector<f64>,
    iters: usize,
    status: SolveStatus,
) -> InnerSolution {
    let xs = x.as_slice();
    let p = xs[..kern.nk].to_vec();
    let nu = xs[kern.nk..kern.nf0].to_vec();
    let f: Vec<f64> = xs[kern.nf0..].iter().map(|v| v * COMPUTE_UNIT).collect();
    let objective = sub.objective(&p, &nu);
    let mut sol = InnerSolution {
        p,
        f,
        nu,
        objective,
        kkt_residual: f64::INFINITY,
        newton_iters: iters,
        status,
    };
    sol.kkt_residual = kkt_residual(sub, &sol);
    sol
}

/// Minimize the subproblem from a strictly feasible starting point
/// (normally the output of [`phase1_init`]).
pub fn barrier_solve(sub: &ConvexSubproblem, init: &InnerSolution) -> Result<InnerSolution> {
    sub.validate()?;
    let kern = Kernel::new(sub);
    if init.p.len() != kern.nk || init.nu.len() != kern.ng || init.f.len() != kern.nf {
        return Err(Error::Config("initial point has wrong dimensions".into()));
    }
    let f_ghz: Vec<f64> = init.f.iter().map(|v| v / COMPUTE_UNIT).collect();
    let x0 = kern.pack(&init.p, &init.nu, &f_ghz);
    if kern.eval(&x0, 1.0).is_none() {
        return Err(Error::Config("initial point is not strictly feasible".into()));
    }

    match run_ladder(&kern, x0.clone(), T0) {
        RunOutcome::Done { x, iters, centered } => {
            let status = if centered && iters < MAX_NEWTON_TOTAL {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            };
            Ok(solution_from_x(sub, &kern, &x, iters, status))
        }
        RunOutcome::NonFinite => match run_ladder(&kern, x0, T0 * 0.1) {
            RunOutcome::Done { x, iters, centered } => {
                let status = if centered && iters < MAX_NEWTON_TOTAL {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::MaxIter
                };
                Ok(solution_from_x(sub, &kern, &x, iters, status))
            }
            RunOutcome::NonFinite => Err(Error::Numerical(
                "barrier iteration produced non-finite values twice".into(),
            )),
        },
    }
}

/// Build a strictly feasible starting point: powers near the cap (falling
/// back to the expansion point when the bound turns negative at full
/// power), equal compute splits re-balanced proportionally to need when
/// the equal split misses a deadline, and min-SE variables just under the
/// group minima (optionally capped by `nu_hint` from a previous solve).
pub fn phase1_init(sub: &ConvexSubproblem, nu_hint: Option<&[f64]>) -> Result<InnerSolution> {
    sub.validate()?;
    let kern = Kernel::new(sub);
    if let Some(hint) = nu_hint {
        if hint.len() != kern.ng {
            return Err(Error::Config("nu hint has wrong length".into()));
        }
    }

    let full: Vec<f64> = vec![(1.0 - 1e-6) * sub.p_max; kern.nk];
    let warm: Vec<f64> = sub
        .expansion
        .iter()
        .map(|&v| v.clamp(1e-12 * sub.p_max, (1.0 - 1e-12) * sub.p_max))
        .collect();

    let mut last_err = Error::Infeasible("no feasible phase-1 point".into());
    for p in [warm, full] {
        match try_phase1(sub, &kern, &p, nu_hint) {
            Ok(sol) => return Ok(sol),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

fn try_phase1(
    sub: &ConvexSubproblem,
    kern: &Kernel,
    p: &[f64],
    nu_hint: Option<&[f64]>,
) -> Result<InnerSolution> {
    let nk = kern.nk;
    let e: Vec<f64> = (0..nk).map(|k| sub.se_lower_bound(p, k)).collect();
    if e.iter().any(|&v| !(v > 1e-12)) {
        return Err(Error::Infeasible(
            "SE bound vanishes at the starting powers".into(),
        ));
    }

    // equal split of every budget group, slightly inside the cap
    let mut f_ghz = vec![0.0; kern.nf];
    for (j, grp) in sub.budget_groups.iter().enumerate() {
        let share = 0.99 * kern.caps[j] / grp.members.len() as f64;
        for &i in &grp.members {
            f_ghz[i] = share;
        }
    }

    let latency_ok = |f: &[f64]| -> bool {
        (0..nk).all(|k| {
            let s: f64 = sub.compute_sel[k].iter().map(|&i| f[i]).sum();
            let phi = kern.tb[k] / e[k] + kern.wt[k] / s - sub.lat_budget[k];
            phi < -1e-9 * sub.lat_budget[k]
        })
    };

    if !latency_ok(&f_ghz) {
        // re-split each budget proportionally to the compute rate each
        // user needs to meet its deadline at these powers
        let mut req = vec![0.0; nk];
        for k in 0..nk {
            let slack = sub.lat_budget[k] - kern.tb[k] / e[k];
            if slack <= 1e-12 {
                return Err(Error::Infeasible(format!(
                    "user {k}: transmission alone exceeds the deadline"
                )));
            }
            req[k] = kern.wt[k] / slack;
        }
        let mut owner = vec![0usize; kern.nf];
        for (k, sel) in sub.compute_sel.iter().enumerate() {
            for &i in sel {
                owner[i] = k;
            }
        }
        for (j, grp) in sub.budget_groups.iter().enumerate() {
            let total: f64 = grp.members.iter().map(|&i| req[owner[i]]).sum();
            for &i in &grp.members {
                f_ghz[i] = 0.99 * kern.caps[j] * req[owner[i]] / total;
            }
        }
        if !latency_ok(&f_ghz) {
            return Err(Error::Infeasible(
                "deadlines unreachable within the compute budgets".into(),
            ));
        }
    }

    let mut nu = vec![0.0; kern.ng];
    for g in 0..kern.ng {
        let mn = (0..nk)
            .filter(|&k| sub.group_of[k] == g)
            .map(|k| e[k])
            .fold(f64::INFINITY, f64::min);
        if !mn.is_finite() || mn <= 0.0 {
            return Err(Error::Infeasible("empty or degenerate min-SE group".into()));
        }
        let mut v = if mn > 1e-3 { mn - 1e-6 } else { mn * 0.999 };
        if let Some(hint) = nu_hint {
            if hint[g] > 0.0 {
                v = v.min(hint[g]);
            }
        }
        nu[g] = v;
    }

    let x = kern.pack(p, &nu, &f_ghz);
    if kern.eval(&x, 1.0).is_none() {
        return Err(Error::Infeasible("phase-1 point is not strictly feasible".into()));
    }
    Ok(solution_from_x(sub, kern, &x, 0, SolveStatus::Feasible))
}

/// KKT residual of a primal point: the best nonnegative multipliers on the
/// near-active constraints are fitted by least squares, and the residual is
/// the worst of stationarity, complementarity, and primal violation. Points
/// outside the feasible domain report infinity.
pub fn kkt_residual(sub: &ConvexSubproblem, sol: &InnerSolution) -> f64 {
    let kern = Kernel::new(sub);
    if sol.p.len() != kern.nk || sol.nu.len() != kern.ng || sol.f.len() != kern.nf {
        return f64::INFINITY;
    }
    let f_ghz: Vec<f64> = sol.f.iter().map(|v| v / COMPUTE_UNIT).collect();
    let x = kern.pack(&sol.p, &sol.nu, &f_ghz);
    let ev = match kern.eval(&x, 1.0) {
        Some(ev) => ev,
        None => return f64::INFINITY,
    };

    let mut active: Vec<usize> = Vec::new();
    let mut primal = 0.0_f64;
    for j in 0..kern.m {
        let (phi, scale) = kern.constraint_value(j, &x, &ev);
        primal = primal.max(phi / scale);
        if -phi / scale <= 1e-4 {
            active.push(j);
        }
    }

    let c0_norm = kern.c0.amax().max(1.0);
    if active.is_empty() {
        return (kern.c0.amax() / c0_norm).max(primal);
    }

    // fit multipliers, dropping any that come out negative
    let mut cols = active;
    let mut grad = DVector::zeros(kern.n);
    let mut resid_inf = f64::INFINITY;
    let mut comp = 0.0_f64;
    for _ in 0..50 {
        let mut jt = DMatrix::zeros(kern.n, cols.len());
        for (c, &j) in cols.iter().enumerate() {
            kern.constraint_grad(j, &x, &ev, &mut grad);
            jt.set_column(c, &grad);
        }
        let gram = jt.transpose() * &jt;
        let rhs = jt.transpose() * (-&kern.c0);
        let mut reg = gram;
        let bump = 1e-12 * reg.diagonal().amax().max(1e-30);
        for i in 0..reg.nrows() {
            reg[(i, i)] += bump;
        }
        let lambda = match Cholesky::new(reg) {
            Some(ch) => ch.solve(&rhs),
            None => return 1.0,
        };
        let negatives: Vec<usize> = (0..cols.len()).filter(|&c| lambda[c] < 0.0).collect();
        if negatives.is_empty() || cols.len() == negatives.len() {
            let r = &kern.c0 + &jt * &lambda;
            resid_inf = r.amax();
            comp = cols
                .iter()
                .enumerate()
                .map(|(c, &j)| {
                    let (phi, scale) = kern.constraint_value(j, &x, &ev);
                    (lambda[c].max(0.0) * phi.abs() / scale).abs()
                })
                .fold(0.0, f64::max);
            break;
        }
        let keep: Vec<usize> = cols
            .iter()
            .enumerate()
            .filter(|(c, _)| !negatives.contains(c))
            .map(|(_, &j)| j)
            .collect();
        if keep.is_empty() {
            return (kern.c0.amax() / c0_norm).max(primal);
        }
        cols = keep;
    }
    (resid_inf / c0_norm).max(comp).max(primal.max(0.0))
}
