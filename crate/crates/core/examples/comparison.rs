//! Ordered terminal values and drivers give ordered BSDE solutions.

use mkv_lab::bsde::{solve_bsde_lsmc, BsdePaths, DriverContext, FnDriver};
use mkv_lab::verify::{comparison_check, noise_paths};

fn main() -> mkv_lab::error::Result<()> {
    let paths = BsdePaths::from_noise_paths(&noise_paths(0.0, 1.0, 10, 2000, 4)?)?;
    let wt = paths.brownian_terminals();
    let low: Vec<f64> = wt.iter().map(|w| w.sin()).collect();
    let high: Vec<f64> = wt.iter().map(|w| w.sin() + 0.2 * w.abs()).collect();
    let f2 = FnDriver::new(|_: &DriverContext<'_>, y: f64, z: f64| -0.5 * y + 0.3 * z, 0.8);
    let f1 = FnDriver::new(|_: &DriverContext<'_>, y: f64, z: f64| -0.5 * y + 0.3 * z + 0.1, 0.8);
    let y1 = solve_bsde_lsmc(&f1, &high, &paths)?;
    let y2 = solve_bsde_lsmc(&f2, &low, &paths)?;
    println!("Y1 = {:.4} ± {:.4} >= Y2 = {:.4} ± {:.4}", y1.y0(), y1.y0_stderr(), y2.y0(), y2.y0_stderr());

    println!("{}", comparison_check(100, 500, 10, 8)?.line());
    Ok(())
}
