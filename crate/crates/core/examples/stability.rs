//! Stability of the forward flow, of Y₀ and of V in time.

use mkv_lab::lq::QuadraticValue;
use mkv_lab::riccati::{solve_riccati, LqModel};
use mkv_lab::verify::{bsde_stability_check, forward_stability_check, value_time_regularity_check};

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 2000)?;
    let qv = QuadraticValue::new(&model, &ric)?;
    println!("{}", forward_stability_check(&qv, 200, 16, 50, 1)?.line());
    println!("{}", bsde_stability_check(&qv, 100, 200, 20, 2)?.line());
    println!("{}", value_time_regularity_check(&qv, 3)?.line());
    Ok(())
}
