use cfmec_core::solver::{
    barrier_solve, phase1_init, BudgetGroup, ConvexSubproblem, COMPUTE_UNIT,
};

fn main() {
    let gains = [500.0, 1500.0];
    let noise = [0.3, 0.8];
    let sub = ConvexSubproblem {
        num_users: 2,
        f_dim: 4,
        num_groups: 1,
        group_of: vec![0, 0],
        gain: gains.to_vec(),
        interference: vec![vec![0.0; 2]; 2],
        noise_c: noise.to_vec(),
        expansion: vec![0.1; 2],
        prefactor: 0.95,
        lat_budget: vec![0.35, 0.25],
        task_bits: vec![4e6, 2e6],
        task_cycles: vec![2e8, 1e8],
        bandwidth: 20e6,
        compute_sel: vec![vec![0, 2], vec![1, 3]],
        budget_groups: vec![
            BudgetGroup { limit: 3e10, members: vec![0] },
            BudgetGroup { limit: 2e10, members: vec![1] },
            BudgetGroup { limit: 4e9, members: vec![2] },
            BudgetGroup { limit: 6e9, members: vec![3] },
        ],
        p_max: 0.1,
        weight: 0.0,
    };
    let init = phase1_init(&sub, None).unwrap();
    println!("init p={:?} f={:?} nu={:?} obj={}", init.p, init.f, init.nu, init.objective);
    let sol = barrier_solve(&sub, &init).unwrap();
    println!(
        "sol status={:?} iters={} obj={} kkt={}",
        sol.status, sol.newton_iters, sol.objective, sol.kkt_residual
    );
    println!("p={:?}", sol.p);
    println!("f(GHz)={:?}", sol.f.iter().map(|v| v / COMPUTE_UNIT).collect::<Vec<_>>());
    println!("nu={:?}", sol.nu);
    for k in 0..2 {
        let se = sub.se_lower_bound(&sol.p, k);
        let s: f64 = sub.compute_sel[k].iter().map(|&i| sol.f[i]).sum();
        let lat = sub.task_bits[k] / sub.bandwidth / se + sub.task_cycles[k] / s;
        println!("user {k}: se={se} lat={lat} budget={}", sub.lat_budget[k]);
    }
}
