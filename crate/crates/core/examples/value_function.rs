//! V(t, μ), the optimal feedback and the HJB residual on a few clouds.

use mkv_lab::lq::QuadraticValue;
use mkv_lab::mkvsde::gaussian_cloud;
use mkv_lab::riccati::{solve_riccati, LqModel};

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 2000)?;
    let qv = QuadraticValue::new(&model, &ric)?;

    for (mean, std) in [(0.0, 1.0), (1.0, 0.5), (-2.0, 0.1)] {
        let mu = gaussian_cloud(1000, &[mean], std, 7)?;
        let v = qv.value_function(0.0, &mu)?;
        let se = qv.value_sampling_stderr(0.0, &mu)?;
        println!("mu ~ N({mean}, {std}^2): V(0, mu) = {v:.5} (law sampling error {se:.1e})");
        for t in [0.0, 0.5, 0.9] {
            println!("  t={t:.1} residual {:+.2e}", qv.hjb_residual(t, &mu)?);
        }
    }

    let fb = qv.optimal_feedback(0.0)?;
    println!("u*(0, x) = K_dev (x - mean) + K_mean mean + c");
    println!("  K_dev = {:.5}  K_mean = {:.5}  c = {:.5}", fb.k_dev[(0, 0)], fb.k_mean[(0, 0)], fb.offset[0]);

    // Ψ at u* is below Ψ at any other control
    let mu = gaussian_cloud(500, &[1.0], 0.5, 3)?;
    let mean = mu.mean();
    let star = qv.psi_functional(0.0, &mu, |x| fb.eval(x, mean.as_slice()))?;
    let other = qv.psi_functional(0.0, &mu, |x| vec![-x[0]])?;
    println!("Psi(u*) = {star:.5} <= Psi(-x) = {other:.5}");
    Ok(())
}
