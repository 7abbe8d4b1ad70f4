//! Perturbing the optimal feedback costs more, quadratically in ε.

use mkv_lab::bsde::lq_cost_with_control_variate;
use mkv_lab::lq::QuadraticValue;
use mkv_lab::mkvsde::{gaussian_cloud, FeedbackSchedule};
use mkv_lab::riccati::{solve_riccati, LqModel};
use mkv_lab::verify::noise_paths;
use nalgebra::DMatrix;

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 2000)?;
    let qv = QuadraticValue::new(&model, &ric)?;
    let mu = gaussian_cloud(200, &[1.0], 0.5, 1)?;
    let paths = noise_paths(0.0, 1.0, 200, 100, 2)?;
    let u = FeedbackSchedule::optimal(&qv, &paths[0].times())?;
    let base = lq_cost_with_control_variate(&qv, &u, &mu, &paths)?;
    println!("J(u*) = {:.6} ± {:.1e}", base.j_g, base.stderr);

    let gain = DMatrix::from_element(1, 1, 1.0);
    for eps in [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2] {
        let j = lq_cost_with_control_variate(&qv, &u.perturbed(&gain, eps), &mu, &paths)?;
        let d = j.paired_difference(&base)?;
        println!("eps={eps:+.2}: dJ = {:+.3e} ± {:.1e}", d.j_g, d.stderr);
    }
    Ok(())
}
