//! The check suite on the reference model. Pass comma-separated name prefixes
//! to run a subset, e.g. `cargo run --release --example verify_suite -- w2,dpp`.

use mkv_lab::riccati::LqModel;
use mkv_lab::verify::{run_suite, summary_text, SuiteConfig};

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let mut cfg = SuiteConfig::for_model(&model);
    if let Some(only) = std::env::args().nth(1) {
        cfg.only = only.split(',').map(str::to_string).collect();
    }
    let reports = run_suite(&model, &cfg)?;
    print!("{}", summary_text(&reports));
    if reports.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
    Ok(())
}
