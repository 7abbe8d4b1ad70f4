//! Runs selected checks across random models (n ≤ 3, k ≤ 2).
//! `cargo run --release --example model_pool -- 20 value_cost,dpp`

use mkv_lab::verify::{random_pool, run_suite, SuiteConfig};

fn main() -> mkv_lab::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let only: Vec<String> = args
        .next()
        .map(|s| s.split(',').map(str::to_string).collect())
        .unwrap_or_else(|| vec!["terminal".into(), "value_cost".into(), "dpp".into(), "law".into(), "optimality".into()]);

    let mut failures = 0;
    for (i, model) in random_pool(77, count).iter().enumerate() {
        let mut cfg = SuiteConfig::for_model(model);
        cfg.only = only.clone();
        cfg.seed = 1000 + i as u64;
        cfg.initial_mean = vec![0.5; model.n()];
        for r in run_suite(model, &cfg)? {
            if !r.passed {
                failures += 1;
            }
            println!("model {i} (n={}, k={}): {}", model.n(), model.k(), r.line());
        }
    }
    println!("{failures} failing checks");
    Ok(())
}
