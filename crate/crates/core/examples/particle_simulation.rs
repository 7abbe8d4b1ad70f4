//! Closed-loop particle system under u* on one common-noise path, and the
//! conditional mean from its own ODE.

use mkv_lab::mkvsde::{conditional_mean_path, gaussian_cloud, generate_common_path, simulate_lq_closed_loop};
use mkv_lab::riccati::{solve_riccati, LqModel};

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 2000)?;
    let mu0 = gaussian_cloud(2000, &[1.0], 0.5, 11)?;
    let path = generate_common_path(0.0, 1.0, 100, 5)?;
    let ens = simulate_lq_closed_loop(&model, &ric, &mu0, &path)?;
    let mean = conditional_mean_path(&model, &ric, mu0.mean().as_slice(), &path)?;
    let ens_mean = ens.mean_path();

    println!("{:>5} {:>10} {:>10} {:>10}", "t", "W_t", "mean", "ODE mean");
    let w = path.brownian();
    for m in (0..=path.steps()).step_by(20) {
        println!("{:>5.2} {:>10.5} {:>10.5} {:>10.5}", path.time(m), w[m], ens_mean[m][0], mean[m][0]);
    }
    let last = ens.empirical_flow(path.steps())?;
    let var = last.variance_functional(&nalgebra::DMatrix::identity(1, 1))?;
    println!("terminal cloud: {} particles, variance {var:.4}", last.len());
    Ok(())
}
