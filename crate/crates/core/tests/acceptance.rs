//! Acceptance suite: criteria 1–14 on the shipped default configuration, run
//! in order so that the runtime bounds are measured without contention.
//! Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

use std::time::Instant;

use mkv_lab::config::{ExperimentConfig, DEFAULT_CONFIG};
use mkv_lab::error::Result;
use mkv_lab::lq::QuadraticValue;
use mkv_lab::mkvsde::gaussian_cloud;
use mkv_lab::riccati::solve_riccati;
use mkv_lab::verify::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    reports: Vec<CheckReport>,
    note: String,
}

fn outcome(reports: Vec<CheckReport>) -> Outcome {
    Outcome {
        passed: reports.iter().all(|r| r.passed),
        reports,
        note: String::new(),
    }
}

fn timed(reports: Vec<CheckReport>, secs: f64, limit: f64) -> Outcome {
    let mut o = outcome(reports);
    o.passed &= secs < limit;
    o.note = format!("runtime {secs:.2}s (limit {limit}s)");
    o
}

type Criterion<'a> = (&'a str, Box<dyn Fn() -> Result<Outcome> + 'a>);

fn main() {
    let cfg = ExperimentConfig::from_str_with(DEFAULT_CONFIG, &[]).expect("default config parses");
    let suite = cfg.suite();
    let model = &cfg.model;
    let ric = solve_riccati(model, cfg.grids.riccati_steps).expect("riccati");
    let qv = QuadraticValue::new(model, &ric).expect("value");
    let seed = cfg.seed;
    let sizes = cfg.grids.sizes();
    let initial = gaussian_cloud(sizes.particles, &cfg.initial_mean, cfg.initial_std, derive_seed(seed, 100)).expect("cloud");
    let pool = random_pool(derive_seed(seed, 200), 20);

    let criteria: Vec<Criterion> = vec![
        ("terminal exactness", Box::new(|| Ok(outcome(vec![terminal_exactness_check(model, &ric)])))),
        (
            "classical reduction",
            Box::new(|| {
                let r = classical_reduction_check(seed, 20_000)?;
                let secs = r.elapsed_s;
                Ok(timed(vec![r], secs, 1.0))
            }),
        ),
        (
            "HJB residual on 20 random models",
            Box::new(|| {
                let start = Instant::now();
                let r = hjb_residual_check(&pool, 10, 5, sizes.riccati_steps, seed)?;
                Ok(timed(vec![r], start.elapsed().as_secs_f64(), 5.0))
            }),
        ),
        ("stationarity of u*", Box::new(|| Ok(outcome(vec![stationarity_check(&pool, sizes.riccati_steps, seed)?])))),
        (
            "value-cost agreement",
            Box::new(|| {
                let start = Instant::now();
                let r = value_cost_check(&qv, &initial, sizes, derive_seed(seed, 300))?;
                Ok(timed(vec![r], start.elapsed().as_secs_f64(), 60.0))
            }),
        ),
        (
            "optimality gap",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 400));
                let gains = random_gains(&mut rng, model.k(), model.n(), suite.gains);
                let small = gaussian_cloud(
                    suite.optimality_sizes.particles,
                    &cfg.initial_mean,
                    cfg.initial_std,
                    derive_seed(seed, 401),
                )?;
                let r = optimality_gap_check(&qv, &small, &gains, &suite.eps_levels, suite.optimality_sizes, derive_seed(seed, 402))?;
                Ok(outcome(vec![r]))
            }),
        ),
        (
            "DPP residual at T/10 and T/4",
            Box::new(|| {
                let reports = [0.1, 0.25]
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| {
                        let s = derive_seed(seed, 500 + i as u64);
                        dpp_residual_check(&qv, 0.0, f * model.horizon(), &initial, sizes, 0.0, s)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(outcome(reports))
            }),
        ),
        (
            "law invariance",
            Box::new(|| {
                let other = gaussian_cloud(sizes.particles, &cfg.initial_mean, cfg.initial_std, derive_seed(seed, 600))?;
                Ok(outcome(vec![
                    law_invariance_check(&qv, &initial, &other, sizes, derive_seed(seed, 601))?,
                    permutation_invariance_check(&qv, &initial, 10, derive_seed(seed, 602))?,
                ]))
            }),
        ),
        (
            "g-expectation",
            Box::new(|| {
                let (a, b) = g_expectation_check(model.beta(), model.horizon(), 100_000, derive_seed(seed, 700))?;
                Ok(outcome(vec![a, b]))
            }),
        ),
        ("comparison theorem", Box::new(|| Ok(outcome(vec![comparison_check(100, 500, 10, derive_seed(seed, 800))?])))),
        (
            "determinism of Y0",
            Box::new(|| {
                let small = gaussian_cloud(32, &cfg.initial_mean, cfg.initial_std, derive_seed(seed, 900))?;
                Ok(outcome(vec![determinism_check(&qv, &small, &[100, 1000, 10_000], 50, 20, derive_seed(seed, 901))?]))
            }),
        ),
        (
            "W2 oracle equivalence",
            Box::new(|| {
                Ok(outcome(vec![
                    w2_oracle_check(derive_seed(seed, 1000), 200)?,
                    w2_translation_check(derive_seed(seed, 1001), 30)?,
                ]))
            }),
        ),
        (
            "stability suite",
            Box::new(|| {
                Ok(outcome(vec![
                    forward_stability_check(&qv, 200, 16, 50, derive_seed(seed, 1100))?,
                    bsde_stability_check(&qv, 100, 200, 20, derive_seed(seed, 1101))?,
                    value_time_regularity_check(&qv, derive_seed(seed, 1102))?,
                ]))
            }),
        ),
        (
            "RK4 order probe",
            Box::new(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1200));
                let smooth = random_model(&mut rng, 2, 1);
                Ok(outcome(vec![rk4_order_check(&smooth, 8)?]))
            }),
        ),
    ];

    let mut failed = 0;
    let mut lines = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (passed, detail) = match result {
            Ok(o) => {
                let mut d: Vec<String> = o.reports.iter().map(|r| format!("    {}", r.line())).collect();
                if !o.note.is_empty() {
                    d.push(format!("    {}", o.note));
                }
                (o.passed, d.join("\n"))
            }
            Err(e) => (false, format!("    error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        let line = format!("{} criterion {:>2}: {name} ({secs:.1}s)", if passed { "PASS" } else { "FAIL" }, i + 1);
        println!("{line}\n{detail}");
        lines.push(line);
    }
    println!("\nsummary:");
    for l in &lines {
        println!("{l}");
    }
    println!("{}/{} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
