//! A nonlinear mean-field SDE: mean-reverting drift towards the cloud mean,
//! bounded diffusion, and a saturating control.

use mkv_lab::mkvsde::{gaussian_cloud, generate_common_path, simulate_forward, CoefficientSet, FnPolicy, NoControl};

fn main() -> mkv_lab::error::Result<()> {
    let coeffs = CoefficientSet::new(
        1,
        1,
        |_, x, law, u, out| out[0] = 0.8 * (law.mean[0] - x[0]) - 0.1 * x[0].sin() + u[0],
        |_, x, _, _, out| out[0] = 0.3 + 0.1 * x[0].cos(),
        1.0,
        0.1,
    )?;
    let mu0 = gaussian_cloud(1000, &[0.0], 1.0, 1)?;
    let path = generate_common_path(0.0, 2.0, 200, 2)?;

    let free = simulate_forward(&coeffs, &NoControl { control_dim: 1 }, &mu0, &path)?;
    let push = FnPolicy::new(1, |_, x: &[f64], _: &_, out: &mut [f64]| out[0] = (1.0 - x[0]).tanh());
    let pushed = simulate_forward(&coeffs, &push, &mu0, &path)?;

    for (label, ens) in [("uncontrolled", &free), ("tanh(1 - x)", &pushed)] {
        let end = ens.empirical_flow(ens.steps())?;
        println!("{label:>13}: terminal mean {:+.4}", end.mean()[0]);
    }
    Ok(())
}
