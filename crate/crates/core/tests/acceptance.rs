//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::fs;
use std::process::Command;
use std::time::Instant;

use common::*;
use loadbal::delay::{check_model_admissibility, CommDelayModel};
use loadbal::flows::{eliminate_relays, synthesize_flows};
use loadbal::kkt::{solve, verify_optimality, OptimalSolution, SolverConfig, KKT_TOL};
use loadbal::network::{
    aggregate_objective, comm_term, relay_count, FlowMatrix, Network, NodeRole,
};
use loadbal::oracle::{brute_force_optimum, compare_solutions, OracleConfig, OracleResult};
use loadbal::sim::{
    simulate_baseline, simulate_dynamic, simulate_static, Policy, SimConfig, SimReport, Thresholds,
};
use rand::Rng;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn oracle_config(n: usize) -> OracleConfig {
    match n {
        0..=2 => OracleConfig {
            grid: 2001,
            refine_rounds: 12,
        },
        3 => OracleConfig {
            grid: 201,
            refine_rounds: 12,
        },
        _ => OracleConfig {
            grid: 41,
            refine_rounds: 16,
        },
    }
}

struct Solved {
    network: Network,
    solution: Option<OptimalSolution>,
    oracle: OracleResult,
}

fn oracle_equivalence(instances: &[Solved]) -> Outcome {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut agree = 0;
    let mut unsolved = 0;
    for inst in instances {
        let Some(sol) = &inst.solution else {
            unsolved += 1;
            continue;
        };
        let objective = aggregate_objective(&inst.network, &sol.allocation).unwrap();
        let gap = objective - inst.oracle.objective;
        worst_gap = worst_gap.max(gap);
        if gap > 1e-5 {
            failures += 1;
        }
        if compare_solutions(sol, &inst.oracle, &inst.network).roles_agree {
            agree += 1;
        }
    }
    let share = agree as f64 / instances.len() as f64;
    Outcome {
        pass: failures == 0 && unsolved == 0 && share >= 0.95 && instances.len() >= 200,
        detail: format!(
            "{} instances, {unsolved} unsolved, {failures} with gap > 1e-5, worst gap {worst_gap:.3e}, roles agree {:.1}%",
            instances.len(),
            100.0 * share
        ),
    }
}

fn optimality_conditions(instances: &[Solved]) -> Outcome {
    let mut worst_kkt: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut failures = 0;
    let mut checked = 0;
    for inst in instances {
        let Some(sol) = &inst.solution else { continue };
        checked += 1;
        let net = &inst.network;
        let report = verify_optimality(net, sol, KKT_TOL);
        worst_kkt = worst_kkt.max(report.worst());
        let phi = net.total_arrival();
        let beta = &sol.allocation.beta;
        let conservation = (beta.iter().sum::<f64>() - phi).abs();
        let mut surplus = 0.0;
        let mut deficit = 0.0;
        for ((node, &b), role) in net.nodes().iter().zip(beta).zip(&sol.partition.roles) {
            match role {
                NodeRole::Sink => surplus += b - node.arrival_rate,
                NodeRole::IdleSource | NodeRole::ActiveSource => deficit += node.arrival_rate - b,
                _ => {}
            }
        }
        let lambda = sol.allocation.lambda;
        let identity = conservation
            .max((lambda - surplus).abs())
            .max((lambda - deficit).abs())
            / phi.max(f64::MIN_POSITIVE);
        worst_identity = worst_identity.max(identity);
        if !(report.worst() < 1e-8 && report.holds()) || identity > 1e-8 {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0 && checked > 0,
        detail: format!(
            "{checked} converged solves, {failures} failing, worst residual {worst_kkt:.3e}, worst flow identity {worst_identity:.3e} (relative to total arrivals)"
        ),
    }
}

fn random_comm(rng: &mut impl Rng, kind: CommKind, lambda: f64) -> CommDelayModel {
    let t = if rng.random_bool(0.2) {
        0.0
    } else {
        rng.random_range(0.0..0.3)
    };
    match kind {
        CommKind::Constant => CommDelayModel::constant(t).unwrap(),
        CommKind::Channel => {
            CommDelayModel::mm1_channel(t, lambda * rng.random_range(1.2..4.0) + 0.1).unwrap()
        }
        CommKind::Polynomial => CommDelayModel::polynomial(vec![
            0.0,
            rng.random_range(0.0..0.2),
            rng.random_range(0.0..0.05),
        ])
        .unwrap(),
    }
}

fn relay_elimination() -> Outcome {
    let mut rng = seeded(3);
    let mut cases = 0;
    let mut flows_covered = 0;
    let mut failures = 0;
    let mut max_net_error: f64 = 0.0;
    let mut rewrites = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let density = rng.random_range(0.2..0.9);
        let mut flow = FlowMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(density) {
                    flow.set(i, j, rng.random_range(0.0..1.0));
                }
            }
        }
        let lambda = flow.total();
        // Arrivals make the flow feasible: every node keeps a positive share.
        let specs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let phi = flow.outflow(i) + rng.random_range(0.0..0.5);
                let beta = phi - flow.outflow(i) + flow.inflow(i);
                (phi, beta + 1.0 + rng.random_range(0.0..2.0))
            })
            .collect();
        let mut covered = false;
        for kind in COMM_KINDS {
            let comm = random_comm(&mut rng, kind, lambda);
            let net = network(&specs, comm);
            let report = check_model_admissibility(&net, lambda.max(1.0), 200);
            if !report.admissible() {
                continue;
            }
            cases += 1;
            covered = true;
            let r = eliminate_relays(&flow, net.comm());
            rewrites += r.rewrites;
            let mut ok = relay_count(&r.flow) == 0
                && r.lambda_after <= r.lambda_before
                && r.comm_cost_after <= r.comm_cost_before
                && r.lambda_after * comm_term(net.comm(), r.lambda_after)
                    <= r.lambda_before * comm_term(net.comm(), r.lambda_before);
            for i in 0..n {
                let before = flow.inflow(i) - flow.outflow(i);
                let after = r.flow.inflow(i) - r.flow.outflow(i);
                let err = (before - after).abs();
                max_net_error = max_net_error.max(err);
                ok &= err <= 1e-12 * lambda.max(1.0);
            }
            if !ok {
                failures += 1;
            }
        }
        flows_covered += usize::from(covered);
    }
    Outcome {
        pass: failures == 0 && flows_covered == 1000,
        detail: format!(
            "1000 flows ({flows_covered} with an admissible model), {cases} (flow, model) cases, {failures} failing, {rewrites} rewrites, max net-flow error {max_net_error:.1e}"
        ),
    }
}

fn no_transfer_switch() -> Outcome {
    let crossover = 0.4 - 1.0 / 3.25;
    let mut ts: Vec<f64> = (0..=60).map(|k| 0.005 * k as f64).collect();
    ts.extend([
        crossover - 1e-4,
        crossover - 1e-6,
        crossover + 1e-6,
        crossover + 1e-4,
    ]);
    ts.sort_by(f64::total_cmp);
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut wrong_side = 0;
    let mut oracle_disagree = 0;
    let mut last_transfer = 0.0;
    let mut first_local = f64::NAN;
    for &t in &ts {
        let net = asymmetric(t);
        let sol = solve(&net, &SolverConfig::default()).unwrap();
        let lambda = sol.allocation.lambda;
        if lambda > prev + 1e-12 {
            monotone = false;
        }
        prev = lambda;
        if lambda > 0.0 {
            last_transfer = t;
        } else if first_local.is_nan() {
            first_local = t;
        }
        let expected = if t < crossover { 0.75 } else { 0.0 };
        if (lambda - expected).abs() > 1e-9 {
            wrong_side += 1;
        }
        let oracle = brute_force_optimum(&net, &oracle_config(2)).unwrap();
        let cmp = compare_solutions(&sol, &oracle, &net);
        let oracle_lambda: f64 = oracle.net_transfer.iter().map(|d| d.max(0.0)).sum();
        if !cmp.pass || !cmp.roles_agree || (oracle_lambda - lambda).abs() > 1e-4 {
            oracle_disagree += 1;
        }
    }
    Outcome {
        pass: monotone && wrong_side == 0 && oracle_disagree == 0,
        detail: format!(
            "{} values of t, monotone {monotone}, switch between t = {last_transfer:.6} and {first_local:.6} (expected {crossover:.6}), {wrong_side} off-branch, {oracle_disagree} oracle disagreements",
            ts.len()
        ),
    }
}

fn sim_cfg(policy: Policy, seed: u64) -> SimConfig {
    // 10% warm-up leaves at least 100 000 measured jobs.
    SimConfig {
        total_jobs: 111_112,
        seed,
        warmup_fraction: 0.1,
        policy,
    }
}

fn static_run(net: &Network, seed: u64) -> (OptimalSolution, SimReport) {
    let sol = solve(net, &SolverConfig::default()).unwrap();
    let flow = synthesize_flows(net, &sol.partition, &sol.allocation.beta).unwrap();
    let report = simulate_static(net, &flow, &sim_cfg(Policy::StaticOptimal, seed)).unwrap();
    (sol, report)
}

fn ci(r: &SimReport) -> f64 {
    r.ci_halfwidth.unwrap_or(0.0)
}

fn simulator_fidelity() -> Outcome {
    let single = network(&[(1.0, 2.0)], CommDelayModel::constant(0.1).unwrap());
    let mm1 = simulate_baseline(&single, &sim_cfg(Policy::NoBalancing, 42)).unwrap();
    let mm1_ok = mm1.measured_jobs >= 100_000 && (mm1.mean_response_time - 1.0).abs() <= 0.05;

    let net = asymmetric(0.05);
    let analytic = 1.0 / 3.25 + 0.05;
    let (_, asym) = static_run(&net, 42);
    let asym_ok = (asym.mean_response_time - analytic).abs() <= 0.05 * analytic;

    let mut instances = vec![net];
    let mut rng = seeded(55);
    while instances.len() < 6 {
        let kind = COMM_KINDS[instances.len() % 3];
        let candidate = random_network(&mut rng, 3, kind);
        // Keeping load local must itself be stable for the comparison to exist.
        let locally_stable = candidate
            .nodes()
            .iter()
            .all(|n| n.arrival_rate < n.delay.service_rate());
        if locally_stable
            && solve(&candidate, &SolverConfig::default())
                .unwrap()
                .allocation
                .lambda
                > 0.0
        {
            instances.push(candidate);
        }
    }
    let mut beaten = 0;
    let mut strictly = 0;
    for (k, inst) in instances.iter().enumerate() {
        let seed = 1000 + k as u64;
        let (_, st) = static_run(inst, seed);
        let nb = simulate_baseline(inst, &sim_cfg(Policy::NoBalancing, seed)).unwrap();
        if st.mean_response_time <= nb.mean_response_time + ci(&st) + ci(&nb) {
            beaten += 1;
        }
        if st.mean_response_time < nb.mean_response_time {
            strictly += 1;
        }
    }
    Outcome {
        pass: mm1_ok && asym_ok && beaten == instances.len(),
        detail: format!(
            "single M/M/1 {:.4} (target 1.0), asymmetric static {:.5} (target {analytic:.5}), static <= no-balancing on {beaten}/{} transferring instances ({strictly} strictly)",
            mm1.mean_response_time,
            asym.mean_response_time,
            instances.len()
        ),
    }
}

fn dynamic_thresholds() -> Outcome {
    let net = asymmetric(0.05);
    let sol = solve(&net, &SolverConfig::default()).unwrap();
    let th = Thresholds {
        low: sol.alpha,
        high: sol.alpha + sol.comm_price,
    };
    let mut below = 0;
    let mut identical = 0;
    let seeds = [42, 43, 44];
    let mut detail = Vec::new();
    for seed in seeds {
        let dynamic = simulate_dynamic(&net, th, &sim_cfg(Policy::DynamicThreshold, seed)).unwrap();
        let nobal = simulate_baseline(&net, &sim_cfg(Policy::NoBalancing, seed)).unwrap();
        if dynamic.mean_response_time <= nobal.mean_response_time + ci(&dynamic) + ci(&nobal) {
            below += 1;
        }
        detail.push(format!(
            "{:.4}/{:.4}",
            dynamic.mean_response_time, nobal.mean_response_time
        ));
        let open = Thresholds {
            low: sol.alpha,
            high: f64::INFINITY,
        };
        let mut unbounded =
            simulate_dynamic(&net, open, &sim_cfg(Policy::DynamicThreshold, seed)).unwrap();
        unbounded.policy = Policy::NoBalancing;
        if unbounded == nobal {
            identical += 1;
        }
    }
    Outcome {
        pass: below == seeds.len() && identical == seeds.len(),
        detail: format!(
            "dynamic/no-balancing mean response {}, dynamic <= no-balancing on {below}/{} seeds, high = inf identical on {identical}/{} seeds",
            detail.join(", "),
            seeds.len(),
            seeds.len()
        ),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("asym.json");
    fs::write(&cfg, ASYMMETRIC).unwrap();
    let cfg = cfg.to_str().unwrap().to_owned();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("solve-json", vec!["solve", &cfg]),
        ("solve-csv", vec!["solve", &cfg, "--format", "csv"]),
        ("oracle", vec!["oracle", &cfg]),
        ("check", vec!["check", &cfg]),
        (
            "simulate-static",
            vec![
                "simulate",
                &cfg,
                "--policy",
                "static_optimal",
                "--seed",
                "42",
                "--jobs",
                "20000",
            ],
        ),
        (
            "simulate-nobal",
            vec![
                "simulate",
                &cfg,
                "--policy",
                "no_balancing",
                "--seed",
                "42",
                "--jobs",
                "20000",
            ],
        ),
        (
            "simulate-sq",
            vec![
                "simulate", &cfg, "--policy", "sq", "--seed", "42", "--jobs", "20000",
            ],
        ),
        (
            "simulate-med",
            vec![
                "simulate", &cfg, "--policy", "med", "--seed", "42", "--jobs", "20000",
            ],
        ),
        (
            "simulate-dynamic",
            vec![
                "simulate",
                &cfg,
                "--policy",
                "dynamic_threshold",
                "--seed",
                "42",
                "--jobs",
                "20000",
                "--replications",
                "3",
                "--parallel",
                "2",
            ],
        ),
        (
            "sweep",
            vec![
                "sweep",
                &cfg,
                "--param",
                "comm.params.t",
                "--from",
                "0",
                "--to",
                "0.3",
                "--steps",
                "7",
            ],
        ),
        (
            "sweep-parallel",
            vec![
                "sweep",
                &cfg,
                "--param",
                "nodes[0].arrival_rate",
                "--from",
                "0",
                "--to",
                "9",
                "--steps",
                "10",
                "--parallel",
                "3",
            ],
        ),
    ];
    let mut differing = Vec::new();
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}-{rep}.out"));
            let status = Command::new(env!("CARGO_BIN_EXE_loadbal"))
                .args(args)
                .arg("--out")
                .arg(&out)
                .output()
                .expect("binary runs")
                .status;
            outputs.push((status.code(), fs::read(&out).unwrap_or_default()));
        }
        let same = outputs[0] == outputs[1] && outputs[0].0 == Some(0) && !outputs[0].1.is_empty();
        if !same {
            differing.push(*name);
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!(
            "{} command variants run twice, differing: [{}]",
            runs.len(),
            differing.join(", ")
        ),
    }
}

fn main() {
    let started = Instant::now();
    let mut rng = seeded(1);
    let mut instances = Vec::new();
    for k in 0..210 {
        let n = 2 + k % 3;
        let kind = COMM_KINDS[(k / 3) % 3];
        let network = random_network(&mut rng, n, kind);
        let solution = solve(&network, &SolverConfig::default()).ok();
        let oracle = brute_force_optimum(&network, &oracle_config(n)).unwrap();
        instances.push(Solved {
            network,
            solution,
            oracle,
        });
    }

    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "1 oracle equivalence",
            Box::new(|| oracle_equivalence(&instances)),
        ),
        (
            "2 optimality conditions",
            Box::new(|| optimality_conditions(&instances)),
        ),
        ("3 relay elimination", Box::new(relay_elimination)),
        ("4 no-transfer switch", Box::new(no_transfer_switch)),
        ("5 simulator fidelity", Box::new(simulator_fidelity)),
        ("6 dynamic thresholds", Box::new(dynamic_thresholds)),
        ("7 determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let t = Instant::now();
        let outcome = run();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
