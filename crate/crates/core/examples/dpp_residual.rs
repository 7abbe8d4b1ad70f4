//! Dynamic programming: the backward semigroup of V(t+δ, ρ_{t+δ}) on [t, t+δ]
//! recovers V(t, μ).

use mkv_lab::lq::QuadraticValue;
use mkv_lab::mkvsde::gaussian_cloud;
use mkv_lab::riccati::{solve_riccati, LqModel};
use mkv_lab::verify::{dpp_residual_check, Sizes};

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 2000)?;
    let qv = QuadraticValue::new(&model, &ric)?;
    let mu = gaussian_cloud(1000, &[1.0], 0.5, 3)?;
    let sizes = Sizes { particles: 1000, paths: 200, steps: 100, riccati_steps: 2000 };
    for (t, delta) in [(0.0, 0.1), (0.0, 0.25), (0.5, 0.25), (0.0, 1.0)] {
        println!("{}", dpp_residual_check(&qv, t, delta, &mu, sizes, 0.0, 17)?.line());
    }
    Ok(())
}
