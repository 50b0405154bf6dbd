//! Acceptance suite. Runs as a plain binary so every criterion prints its
//! PASS/FAIL line even when the test harness would capture output.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bandit_compress::action_space::{
    build_epsilon_net_on_pool, candidate_pool, covering_log_bound, MetricActionSpace, Partition,
};
use bandit_compress::bandit::{Action, Environment, GridMeans, GridSpec, OneToOne, RewardKind};
use bandit_compress::bounds::{final_corollary_bound, linear_bandit_bound, optimal_epsilon, theorem1_bound};
use bandit_compress::harness::{csv_string, run_experiment, ExperimentConfig};
use bandit_compress::information::{disintegrated_mi_step, episode_info_accounting, McOptions, MiMethod};
use bandit_compress::rng::{analysis_rng, replication_rng};
use bandit_compress::thompson::{
    pair_mix_search, run_episode, run_episode_observed, verify_compression_requirements, AnalysisOptions, Mode,
};
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn grid_env(table: Vec<Vec<f64>>, prior: Vec<f64>) -> Environment {
    let n = table.len();
    Environment::grid(GridSpec {
        actions: (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect(),
        params: vec![],
        prior: Some(prior),
        means: GridMeans::Table(table),
        reward: RewardKind::Bernoulli,
        clip: false,
        lipschitz: None,
        one_to_one: OneToOne::Reject,
    })
    .unwrap()
}

/// Bernoulli grid where parameter `j` favours action `j`.
fn random_grid(n: usize, rng: &mut impl Rng) -> Environment {
    let table = (0..n)
        .map(|a| {
            (0..n)
                .map(|t| if a == t { rng.random_range(0.65..0.95) } else { rng.random_range(0.05..0.6) })
                .collect()
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let z: f64 = raw.iter().sum();
    grid_env(table, raw.iter().map(|x| x / z).collect())
}

/// Two cells on four evenly spaced actions: {0, 1/3} and {2/3, 1}.
fn two_cells(env: &Environment) -> Partition {
    let space = env.action_space();
    let p = Partition::new(build_epsilon_net_on_pool(space, 0.5, &[0.0], space.points().unwrap()).unwrap());
    assert_eq!(p.num_cells(), 2);
    p
}

fn grid_suite() -> Vec<Environment> {
    let mut rng = replication_rng(2024, 0);
    (0..24).map(|_| random_grid(4, &mut rng)).collect()
}

fn acc1_pair_mix_fuzz() -> Outcome {
    let failures: Vec<String> = (0..10_000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = replication_rng(1, i);
            let n = rng.random_range(1..=20);
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let z: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let support: Vec<usize> = (0..n).collect();
            let check = || -> Result<(), String> {
                let m = pair_mix_search(&support, &w, &f, &g).map_err(|e| e.to_string())?;
                let fbar: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
                let gbar: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
                let fm = m.q * f[m.a1] + (1.0 - m.q) * f[m.a2];
                let gm = m.q * g[m.a1] + (1.0 - m.q) * g[m.a2];
                if !(0.0..=1.0).contains(&m.q) || fm > fbar + 1e-9 || gm > gbar + 1e-9 {
                    return Err(format!("q={} f {fm} > {fbar} or g {gm} > {gbar}", m.q));
                }
                Ok(())
            };
            check().err().map(|e| format!("instance {i}: {e}"))
        })
        .collect();
    if failures.is_empty() {
        Ok("10000/10000 instances".into())
    } else {
        Err(format!("{} failures, first: {}", failures.len(), failures[0]))
    }
}

fn acc2_compression_requirements() -> Outcome {
    let suite = grid_suite();
    let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, env) in suite.iter().enumerate() {
        let p = two_cells(env);
        let r = verify_compression_requirements(env, &p, 10, 5, 100 + i as u64, 1e-9).map_err(|e| e.to_string())?;
        worst.0 = worst.0.max(r.item1_worst_gap);
        worst.1 = worst.1.max(r.item2_worst_gap);
        worst.2 = worst.2.max(r.entropy_check.worst_gap);
        if !r.passed {
            return Err(format!(
                "instance {i}: item1 {:e} item2 {:e} entropy {:e}",
                r.item1_worst_gap, r.item2_worst_gap, r.entropy_check.worst_gap
            ));
        }
    }
    Ok(format!(
        "{} instances x 5 seeds x 10 rounds; worst item1 {:.3e}, item2 {:.3e}, H(A*_eps)-H(A*) {:.3e}",
        suite.len(),
        worst.0,
        worst.1,
        worst.2
    ))
}

fn acc3_information_chain() -> Outcome {
    let suite = grid_suite();
    let gaps: Vec<Result<f64, String>> = suite
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, env)| {
            let p = two_cells(env);
            [Mode::Plain, Mode::Compressed].into_iter().map(move |mode| {
                let mut rng = replication_rng(300 + i as u64, 0);
                let ep = run_episode(env, 10, mode, Some(&p), &mut rng).map_err(|e| e.to_string())?;
                let info = episode_info_accounting(&ep.records, env, &p).map_err(|e| e.to_string())?;
                Ok(info.chain_gap())
            })
        })
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for (k, g) in gaps.into_iter().enumerate() {
        let g = g?;
        if g > 1e-9 {
            return Err(format!("episode {k}: chain gap {g:e}"));
        }
        worst = worst.max(g);
    }
    Ok(format!("{} episodes (plain and compressed); worst gap {worst:.3e}", suite.len() * 2))
}

fn acc4_mi_oracle() -> Outcome {
    let env = grid_env(
        vec![vec![0.7, 0.3, 0.2], vec![0.4, 0.6, 0.3], vec![0.3, 0.2, 0.8]],
        vec![0.4, 0.35, 0.25],
    );
    let p = Partition::singletons(Arc::clone(env.optimal_support())).unwrap();
    let options = McOptions {
        samples: 100_000,
        ..McOptions::default()
    };
    let per_seed: Vec<Result<f64, String>> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = replication_rng(400, seed);
            let mut mc_rng = analysis_rng(400, seed);
            let mut worst: f64 = 0.0;
            run_episode_observed(&env, 10, Mode::Plain, Some(&p), &AnalysisOptions::default(), &mut rng, None, |view| {
                let policy: Vec<(Action, f64)> = view
                    .state
                    .optimal_action_dist(&env)?
                    .into_iter()
                    .enumerate()
                    .map(|(a, q)| (Action::Index(a), q))
                    .collect();
                let exact = disintegrated_mi_step(view.state, &env, &p, &policy, MiMethod::Exact)?;
                let mc = disintegrated_mi_step(view.state, &env, &p, &policy, MiMethod::MonteCarlo { options, rng: &mut mc_rng })?;
                worst = worst.max((exact.value - mc.value).abs());
                Ok(())
            })
            .map_err(|e| e.to_string())?;
            Ok(worst)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for w in per_seed {
        worst = worst.max(w?);
    }
    if worst <= 0.01 {
        Ok(format!("5 seeds x 10 rounds; worst |exact - mc| {worst:.5} nats"))
    } else {
        Err(format!("worst |exact - mc| {worst:.5} nats > 0.01"))
    }
}

fn write_json(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn acc5_information_ratio() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        dir.path(),
        "env.json",
        r#"{"type":"linear_gaussian","actions":{"circle":64},"prior":{"mean":[0,0],"std":0.2},
            "reward":{"kind":"gaussian","sigma":0.1},"clip":true}"#,
    );
    let cfg = write_json(
        dir.path(),
        "cfg.json",
        r#"{"env":"env.json","T":100,"seeds":100,"ratio_seeds":100,"base_seed":5,"scale":0.1,"mc_samples":1000}"#,
    );
    let config = ExperimentConfig::from_file(&cfg).map_err(|e| e.to_string())?;
    let r = run_experiment(&config).map_err(|e| e.to_string())?;
    let s = &r.primary().compressed_ratio;
    let (Some(mean), Some(se)) = (s.mean, s.std_error) else {
        return Err("no ratios measured".into());
    };
    // the mean ratio's spread across rounds and seeds already contains the MC noise
    let limit = 4.0 + 2.0 * se;
    let msg = format!(
        "mean ratio {mean:.4} ± {se:.4} over {} rounds ({} cells, {} inconsistencies), limit {limit:.4}",
        s.samples, r.bounds.cells, s.inconsistencies
    );
    if mean <= limit && s.samples == 100 * 100 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn acc6_regret_vs_bound() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        dir.path(),
        "env.json",
        r#"{"type":"linear_gaussian","actions":"ball","prior":{"mean":[0,0],"std":0.2},
            "reward":{"kind":"gaussian","sigma":0.1},"clip":true}"#,
    );
    let cfg = write_json(
        dir.path(),
        "cfg.json",
        r#"{"env":"env.json","T":200,"seeds":200,"ratio_seeds":20,"base_seed":6,"mc_samples":1000}"#,
    );
    let config = ExperimentConfig::from_file(&cfg).map_err(|e| e.to_string())?;
    let r = run_experiment(&config).map_err(|e| e.to_string())?;
    let m = r.primary();
    let regret = m.mean[199];
    let se = m.std_error[199];
    let clip = m.clip_rate();
    let fin = final_corollary_bound(2, 200).unwrap();
    let gamma = r.bounds.gamma_measured.ok_or("no measured ratio")?;
    let h = (r.bounds.cells as f64).ln();
    let thm1 = theorem1_bound(gamma, 200, h, r.bounds.epsilon).unwrap();
    let learns = m.sublinearity.as_ref().is_some_and(|s| s.learns);
    let msg = format!(
        "regret {regret:.3} ± {se:.3}; final {fin:.2}; thm1 {thm1:.2} (ratio {gamma:.4}, log K {h:.3}, eps {:.4}); clip {:.5}%; learns {learns}",
        r.bounds.epsilon,
        clip * 100.0
    );
    if clip < 1e-3 && regret <= fin && regret - 2.0 * se <= thm1 && learns {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn acc7_bound_chain() -> Outcome {
    for d in 1..=5 {
        for t in [10, 100, 1000, 10_000] {
            let eps = optimal_epsilon(d, t);
            let lb = linear_bandit_bound(d, t, covering_log_bound(d, eps).unwrap(), eps).unwrap();
            let fb = final_corollary_bound(d, t).unwrap();
            if lb > fb + 1e-9 {
                return Err(format!("d={d} T={t}: {lb} > {fb}"));
            }
        }
    }
    Ok("20/20 (d, T) pairs".into())
}

fn acc8_covering() -> Outcome {
    let mut cases: Vec<(Arc<MetricActionSpace>, Vec<f64>, f64, bool)> = Vec::new();
    for d in 1..=3 {
        for &s in &[0.9, 0.5, 0.3, 0.2] {
            cases.push((Arc::new(MetricActionSpace::unit_ball(d).unwrap()), vec![0.0; d], s, true));
            let mut e1 = vec![0.0; d];
            e1[0] = 1.0;
            cases.push((Arc::new(MetricActionSpace::unit_sphere(d).unwrap()), e1, s, false));
            cases.push((Arc::new(MetricActionSpace::unit_cube(d).unwrap()), vec![0.0; d], s, false));
        }
    }
    let mut rng = replication_rng(800, 0);
    for _ in 0..20 {
        let n = rng.random_range(1..200);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let seed = pts[0].clone();
        cases.push((Arc::new(MetricActionSpace::finite(pts).unwrap()), seed, rng.random_range(0.01..0.5), false));
    }
    cases.push((Arc::new(MetricActionSpace::circle(64).unwrap()), vec![1.0, 0.0], 0.1, false));
    let total = cases.len();
    for (i, (space, seed, s, ball)) in cases.into_iter().enumerate() {
        let mut rng = analysis_rng(800, i as u64);
        let pool = candidate_pool(&space, &seed, 2000, &mut rng);
        let net = build_epsilon_net_on_pool(&space, s, &seed, &pool).map_err(|e| e.to_string())?;
        let radius = net.covering_radius(&pool);
        if radius > s {
            return Err(format!("case {i}: covering radius {radius} > scale {s}"));
        }
        if ball {
            let d = space.dimension();
            let lk = (net.len() as f64).ln();
            let b = covering_log_bound(d, s).unwrap() + 0.7;
            if lk > b {
                return Err(format!("case {i}: log K {lk} > {b} in dimension {d}"));
            }
        }
    }
    Ok(format!("{total}/{total} nets cover their pools; ball nets within d·log(1+2/ε)+0.7"))
}

fn acc9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        dir.path(),
        "grid.json",
        r#"{"type":"grid","actions":[[0],[1],[2]],
            "reward":{"kind":"bernoulli","table":[[0.7,0.3,0.2],[0.4,0.6,0.3],[0.3,0.2,0.8]]}}"#,
    );
    write_json(
        dir.path(),
        "lin.json",
        r#"{"type":"linear_gaussian","actions":"ball","prior":{"mean":[0,0],"std":0.2},
            "reward":{"kind":"gaussian","sigma":0.1},"clip":true}"#,
    );
    let mut checked = 0;
    for (env, extra) in [("grid.json", r#""mode":"both","scale":1.5"#), ("lin.json", r#""mode":"both","ratio_seeds":2,"mc_samples":200"#)] {
        let runs: Vec<Vec<Vec<u8>>> = ["a", "b"]
            .iter()
            .map(|out| {
                let cfg = write_json(
                    dir.path(),
                    "cfg.json",
                    &format!(r#"{{"env":"{env}","T":20,"seeds":6,"base_seed":9,"out":"{out}",{extra}}}"#),
                );
                let config = ExperimentConfig::from_file(&cfg).unwrap();
                let r = run_experiment(&config).unwrap();
                assert_eq!(csv_string(&r, r.primary()).lines().count(), 21);
                ["regret.csv", "regret_compressed.csv", "report.json", "regret.svg"]
                    .iter()
                    .map(|f| std::fs::read(dir.path().join(out).join(f)).unwrap())
                    .collect()
            })
            .collect();
        if runs[0] != runs[1] {
            return Err(format!("{env}: outputs differ between runs"));
        }
        checked += runs[0].len();
    }
    Ok(format!("{checked} output files byte-identical across two runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 pair-mixture fuzz", acc1_pair_mix_fuzz, Duration::from_secs(10)),
        ("2 compression requirements", acc2_compression_requirements, Duration::from_secs(60)),
        ("3 information chain", acc3_information_chain, Duration::from_secs(60)),
        ("4 MI estimator oracle", acc4_mi_oracle, Duration::from_secs(120)),
        ("5 information-ratio constant", acc5_information_ratio, Duration::from_secs(300)),
        ("6 regret vs bound", acc6_regret_vs_bound, Duration::from_secs(600)),
        ("7 bound-chain sweep", acc7_bound_chain, Duration::from_secs(1)),
        ("8 covering suite", acc8_covering, Duration::from_secs(60)),
        ("9 determinism", acc9_determinism, Duration::from_secs(60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(m) if elapsed > budget => Err(format!("{m}; took {elapsed:.1?}, budget {budget:?}")),
            o => o,
        };
        match outcome {
            Ok(m) => println!("PASS acceptance {name}: {m} [{elapsed:.1?}]"),
            Err(m) => {
                failed += 1;
                println!("FAIL acceptance {name}: {m} [{elapsed:.1?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
