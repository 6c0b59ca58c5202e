//! Acceptance checks. Runs without the test harness so every criterion
//! prints one PASS/FAIL line; exits nonzero when any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cluster_games::experiment::{
    execute, leg_dir_name, run_leg, ExperimentConfig, Problem, ABLATION_GAMMAS,
};
use cluster_games::game::{build_quadratic_game, QuadraticAgentSpec, QuadraticGameSpec};
use cluster_games::graph::{
    perron_left, perron_right, sigma_c, sigma_r, weighted_norm, DirectedGraph, StochasticKind,
    WeightMatrix,
};
use cluster_games::oracle::{best_response_check, fixed_point_ne};
use cluster_games::sets::{ConvexSet, ConvexSetSpec};
use cluster_games::solver::{
    conservation_residual, run, Initialization, Network, Solver, SolverConfig,
};
use common::{
    brute_force_projection, centralized_minimizer, config_path, random_game, random_network,
    Instance,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tracking_conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for g in 0..20 {
        let boxed = (g % 2 == 0).then_some(1.0);
        let q = random_game(&mut rng, 3, 12, 2, boxed);
        let layout = q.game.layout();
        ensure(layout.agent_count() <= 12 && layout.cluster_count() <= 3, || {
            format!("game {g} too large")
        })?;
        let network = random_network(&mut rng, layout.cluster_sizes());
        let config = SolverConfig {
            alpha: 0.02,
            seed: g,
            ..SolverConfig::default()
        };
        let init = Initialization::Random { half_width: 3.0 };
        let mut solver = Solver::new(&q.game, &network, config, &init).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            solver.step().map_err(|e| e.to_string())?;
            let r = conservation_residual(&solver.state().y, solver.cached_gradients());
            worst = worst.max(r);
            ensure(r <= 1e-9, || {
                format!("game {g}, round {}: residual {r:e}", solver.state().round)
            })?;
        }
    }
    Ok(format!("20 games x 1000 rounds, worst relative residual {worst:.2e}"))
}

fn contraction_lemmas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut min_slack = f64::INFINITY;
    for _ in 0..10 {
        let n = rng.random_range(2..=12);
        let g = DirectedGraph::random_strongly_connected(n, 0.25, &mut rng).unwrap();
        let r = WeightMatrix::random(&g, StochasticKind::RowStochastic, &mut rng).unwrap();
        let c = WeightMatrix::random(&g, StochasticKind::ColumnStochastic, &mut rng).unwrap();
        let phi = perron_left(&r).unwrap();
        let pi = perron_right(&c).unwrap();
        let sr = sigma_r(&r, &phi, &g).unwrap().sigma;
        let sc = sigma_c([(&c, &pi, &g)]).unwrap();
        ensure(sr > 0.0 && sr < 1.0 && sc > 0.0 && sc < 1.0, || {
            format!("sigma_R {sr}, sigma_C {sc} outside (0, 1)")
        })?;
        let inv = pi.map(|v| 1.0 / v);
        for _ in 0..1000 {
            let p = rng.random_range(1..=3);
            let u = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            let mean = DMatrix::from_fn(n, p, |_, k| phi.dot(&u.column(k)));
            let lhs = weighted_norm(&(r.entries() * &u - &mean), &phi).unwrap();
            let rhs = sr * weighted_norm(&(&u - &mean), &phi).unwrap();
            min_slack = min_slack.min(rhs - lhs);
            let total = DMatrix::from_fn(n, p, |i, k| pi[i] * u.column(k).sum());
            let lhs = weighted_norm(&(c.entries() * &u - &total), &inv).unwrap();
            let rhs = sc * weighted_norm(&(&u - &total), &inv).unwrap();
            min_slack = min_slack.min(rhs - lhs);
        }
    }
    ensure(min_slack >= -1e-12, || format!("slack {min_slack:e}"))?;
    Ok(format!("10 graphs x 1000 vectors, smallest slack {min_slack:.2e}"))
}

fn fixture_config() -> ExperimentConfig {
    ExperimentConfig::load(&config_path("quadratic_small.toml")).unwrap()
}

fn linear_convergence() -> Check {
    let mut cfg = fixture_config();
    let spec = cfg.game.clone().unwrap();
    ensure(
        spec.cluster_sizes == [4, 4, 4] && spec.block_dims == [2, 2, 2] && spec.action_sets.is_some(),
        || "bundled fixture is not H=3, N_h=4, p_h=2 with boxes".into(),
    )?;
    cfg.solver.record_every = 1;
    cfg.solver.max_rounds = 20_000;
    let problem = Problem::build(&cfg).map_err(|e| e.to_string())?;
    let x0 = DVector::zeros(problem.game.layout().dim());
    let eq = fixed_point_ne(&problem.game, 0.1, 1e-13, 1_000_000, &x0).map_err(|e| e.to_string())?;
    let leg = run_leg(&cfg, &cfg.solver, &eq.x).map_err(|e| e.to_string())?;
    let gaps: Vec<(usize, f64)> = leg
        .metrics
        .iter()
        .map(|m| (m.round, m.optimality_gap.unwrap()))
        .collect();
    let hit = gaps.iter().find(|g| g.1 < 1e-8).map(|g| g.0);
    let Some(hit) = hit else {
        return Err(format!("gap {:e} after 20000 rounds", gaps.last().unwrap().1));
    };
    let mut worst = 0.0f64;
    for k in 0..gaps.len().saturating_sub(500) {
        if gaps[k].1 < 1e-10 {
            break;
        }
        let ratio = gaps[k + 500].1 / gaps[k].1;
        worst = worst.max(ratio);
        ensure(ratio <= 0.9, || format!("gap(k+500)/gap(k) = {ratio} at k = {k}"))?;
    }
    Ok(format!("gap < 1e-8 at round {hit}, worst 500-round ratio {worst:.2e}"))
}

fn oracle_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut games = Vec::new();
    for k in 0..7 {
        let half_width = if k % 2 == 0 { None } else { Some(50.0) };
        games.push((random_game(&mut rng, 3, 10, 3, half_width).game, false));
    }
    let fixture = fixture_config();
    games.push((build_quadratic_game(fixture.game.as_ref().unwrap()).unwrap().game, true));
    while games.len() < 10 {
        games.push((random_game(&mut rng, 3, 10, 3, Some(0.3)).game, true));
    }
    let mut worst = 0.0f64;
    for (k, (game, needs_active)) in games.iter().enumerate() {
        let x0 = DVector::zeros(game.layout().dim());
        let fp = fixed_point_ne(game, 0.1, 1e-10, 1_000_000, &x0).map_err(|e| e.to_string())?;
        if *needs_active {
            // an active box moves the equilibrium away from the free one
            let free = fixed_point_ne(&game.unconstrained(), 0.1, 1e-10, 1_000_000, &x0)
                .map_err(|e| e.to_string())?;
            ensure((&free.x - &fp.x).amax() > 1e-6, || format!("game {k} has no active bound"))?;
        }
        let report = best_response_check(game, &fp.x, 1e-6, k as u64).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_improvement());
        ensure(report.passed, || {
            format!("game {k}: improvement {:e}", report.max_improvement())
        })?;
    }
    Ok(format!("10 games (3 with active boxes), largest improvement {worst:.2e}"))
}

fn random_agent(rng: &mut ChaCha8Rng, p: usize, own: std::ops::Range<usize>) -> QuadraticAgentSpec {
    let mut q = vec![vec![0.0; p]; p];
    for r in 0..p {
        for c in r..p {
            q[r][c] = rng.random_range(-0.3..0.3);
            q[c][r] = q[r][c];
        }
    }
    for k in own {
        q[k][k] += 2.0;
    }
    QuadraticAgentSpec {
        q,
        c: (0..p).map(|_| rng.random_range(-3.0..3.0)).collect(),
        constant: 0.0,
    }
}

fn reductions() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = SolverConfig {
        alpha: 0.05,
        max_rounds: 50_000,
        gap_tolerance: 1e-13,
        ..SolverConfig::default()
    };
    let mut worst_single = 0.0f64;
    for n in [2, 4, 6] {
        let p = 3;
        let agents: Vec<_> = (0..n).map(|_| random_agent(&mut rng, p, 0..p)).collect();
        let set = ConvexSetSpec::Box {
            lower: vec![-0.5; p],
            upper: vec![0.5; p],
        };
        let q = build_quadratic_game(&QuadraticGameSpec {
            cluster_sizes: vec![n],
            block_dims: vec![p],
            agents: Some(agents.clone()),
            random: None,
            action_sets: Some(vec![set.clone()]),
        })
        .map_err(|e| e.to_string())?;
        let qs: Vec<_> = agents
            .iter()
            .map(|a| DMatrix::from_fn(p, p, |r, c| a.q[r][c]))
            .collect();
        let cs: Vec<_> = agents.iter().map(|a| DVector::from_column_slice(&a.c)).collect();
        let x_min = centralized_minimizer(&qs, &cs, &set.build().unwrap(), 0.1, 20_000);
        let network = random_network(&mut rng, &[n]);
        let out = run(&q.game, &network, &config, &Initialization::Zero, None)
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            let d = (out.state.z.row(i).transpose() - &x_min).amax();
            worst_single = worst_single.max(d);
        }
    }
    ensure(worst_single <= 1e-6, || format!("H=1 deviation {worst_single:e}"))?;

    let mut worst_singleton = 0.0f64;
    for h in [2, 3, 4] {
        let dims: Vec<usize> = (0..h).map(|_| rng.random_range(1..=2)).collect();
        let p: usize = dims.iter().sum();
        let mut offset = 0;
        let agents: Vec<_> = dims
            .iter()
            .map(|&d| {
                offset += d;
                random_agent(&mut rng, p, offset - d..offset)
            })
            .collect();
        let q = build_quadratic_game(&QuadraticGameSpec {
            cluster_sizes: vec![1; h],
            block_dims: dims.clone(),
            agents: Some(agents),
            random: None,
            action_sets: Some(
                dims.iter()
                    .map(|&d| ConvexSetSpec::Box {
                        lower: vec![-0.4; d],
                        upper: vec![0.4; d],
                    })
                    .collect(),
            ),
        })
        .map_err(|e| e.to_string())?;
        let eq = fixed_point_ne(&q.game, 0.1, 1e-12, 1_000_000, &DVector::zeros(p))
            .map_err(|e| e.to_string())?;
        let network = Network::cycles(q.game.layout()).map_err(|e| e.to_string())?;
        let out = run(&q.game, &network, &config, &Initialization::Zero, None)
            .map_err(|e| e.to_string())?;
        for i in 0..h {
            let d = (out.state.z.row(i).transpose() - &eq.x).amax();
            worst_singleton = worst_singleton.max(d);
        }
    }
    ensure(worst_singleton <= 1e-6, || format!("N_h=1 deviation {worst_singleton:e}"))?;
    Ok(format!(
        "H=1 deviation {worst_single:.2e}, N_h=1 deviation {worst_singleton:.2e}"
    ))
}

fn microgrid_desk() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&config_path("microgrid_desk.toml")).map_err(|e| e.to_string())?;
    cfg.output.dir = tmp.path().to_path_buf();
    let problem = Problem::build(&cfg).map_err(|e| e.to_string())?;
    let s = problem.scenario.as_ref().unwrap();
    let seed = cfg.scenario.as_ref().unwrap().seed;
    ensure(s.cluster_count() == 3 && s.horizon == 8 && seed == 42, || {
        "desk config is not H=3, T=8, seed 42".into()
    })?;
    let report = execute(&cfg).map_err(|e| e.to_string())?;
    let rel = report.relative_gap.unwrap();
    let balance = report.balance_residual.unwrap();
    let terminal = report.terminal_violation.unwrap();
    ensure(report.converged(), || format!("solver outcome {:?}", report.leg.outcome))?;
    ensure(rel <= 1e-4, || format!("relative gap {rel:e}"))?;
    ensure(balance <= 1e-6, || format!("balance residual {balance:e}"))?;
    // |PC(T) - PC_des| - eps, allowing roundoff on an active band
    ensure(terminal <= 1e-9, || format!("terminal band exceeded by {terminal:e}"))?;
    Ok(format!(
        "{} units, {} rounds, relative gap {rel:.2e}, balance {balance:.2e}, terminal {terminal:.2e}",
        s.unit_count(),
        report.leg.rounds
    ))
}

fn projection_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let inst = Instance::random(&mut rng);
        let set = ConvexSet::intersection(inst.members()).map_err(|e| e.to_string())?;
        let y = DVector::from_fn(inst.dim, |_, _| rng.random_range(-4.0..4.0));
        let expected = brute_force_projection(&inst, &y).ok_or("empty instance")?;
        let got = set.project(&y).map_err(|e| format!("instance {k}: {e}"))?;
        let d = (&got - &expected).amax();
        worst = worst.max(d);
        ensure(d <= 1e-6, || format!("instance {k}: deviation {d:e}"))?;
    }
    Ok(format!("50 instances, largest deviation {worst:.2e}"))
}

fn gamma_ablation() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_path("quadratic_small.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_cluster-games"))
        .args(["ablate-gamma", cfg.to_str().unwrap(), "--outdir", tmp.path().to_str().unwrap()])
        .env("CLUSTER_GAMES_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    // exit 0 means every gamma < 1 leg converged
    ensure(out.status.code() == Some(0), || {
        format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    let summary = fs::read_to_string(tmp.path().join("ablation_summary.csv")).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut seen = Vec::new();
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let gamma: f64 = f[0].parse().map_err(|_| format!("bad row {line}"))?;
        let csv = tmp.path().join(leg_dir_name(gamma)).join("metrics.csv");
        ensure(csv.exists(), || format!("missing {}", csv.display()))?;
        match (f[1], gamma < 1.0) {
            ("converged", _) => parts.push(format!("{gamma}: converged in {}", f[2])),
            ("non_finite_iterate", false) => parts.push(format!("{gamma}: non-finite in round {}", f[4])),
            (o, _) => return Err(format!("gamma {gamma}: {o}")),
        }
        seen.push(gamma);
    }
    ensure(seen == ABLATION_GAMMAS, || format!("legs {seen:?}"))?;
    Ok(parts.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<u64>, fn() -> Check); 8] = [
        ("tracking conservation", Some(30), tracking_conservation),
        ("contraction lemmas", Some(10), contraction_lemmas),
        ("linear convergence", Some(60), linear_convergence),
        ("oracle agreement", Some(30), oracle_agreement),
        ("reductions", Some(30), reductions),
        ("microgrid desk scale", Some(300), microgrid_desk),
        ("projection oracle equivalence", Some(10), projection_oracle),
        ("gamma ablation artifact", None, gamma_ablation),
    ];
    let mut failed = 0;
    for (k, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            match limit {
                Some(l) if elapsed > Duration::from_secs(*l) => {
                    Err(format!("{msg}; took {elapsed:.1?}, limit {l} s"))
                }
                _ => Ok(msg),
            }
        });
        match result {
            Ok(msg) => println!("PASS {} {name}: {msg} ({elapsed:.1?})", k + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} ({elapsed:.1?})", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
