//! J_g(u*) by Monte Carlo over common-noise paths against V(0, μ)/2, plain
//! and with the value-function control variate.

use mkv_lab::bsde::{lq_cost_from_paths, lq_cost_with_control_variate};
use mkv_lab::lq::QuadraticValue;
use mkv_lab::mkvsde::{gaussian_cloud, FeedbackSchedule};
use mkv_lab::riccati::{solve_riccati, LqModel};
use mkv_lab::verify::noise_paths;

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 2000)?;
    let qv = QuadraticValue::new(&model, &ric)?;
    let mu = gaussian_cloud(500, &[1.0], 0.5, 11)?;
    let half_v = 0.5 * qv.value_function(0.0, &mu)?;

    for steps in [25, 50, 100, 200] {
        let paths = noise_paths(0.0, 1.0, steps, 100, 42)?;
        let u = FeedbackSchedule::optimal(&qv, &paths[0].times())?;
        let plain = lq_cost_from_paths(&model, &u, &mu, &paths)?;
        let cv = lq_cost_with_control_variate(&qv, &u, &mu, &paths)?;
        println!(
            "steps={steps:>3}: plain {:.5} ± {:.1e}  cv {:.5} ± {:.1e}  V/2 {half_v:.5}",
            plain.j_g, plain.stderr, cv.j_g, cv.stderr
        );
    }
    Ok(())
}
