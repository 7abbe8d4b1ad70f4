//! g-expectations with g(z) = βz: Girsanov reweighting against the
//! regression BSDE solver, plus a nonlinear driver.

use mkv_lab::bsde::{g_expectation_girsanov, solve_bsde_lsmc, BsdePaths, GDriver, LinearG};
use mkv_lab::verify::noise_paths;

fn main() -> mkv_lab::error::Result<()> {
    let beta = 0.35;
    let paths = BsdePaths::from_noise_paths(&noise_paths(0.0, 1.0, 20, 20_000, 9)?)?;
    let wt = paths.brownian_terminals();

    let (g, se) = g_expectation_girsanov(beta, &wt, &wt, 1.0)?;
    let sol = solve_bsde_lsmc(&LinearG { beta }, &wt, &paths)?;
    println!("E_g[W_T]: exact {beta:.4}, girsanov {g:.4} ± {se:.4}, lsmc {:.4} ± {:.4}", sol.y0(), sol.y0_stderr());

    // g = β|z| is sublinear: W_T and -W_T both have g-expectation βT
    let abs_g = GDriver::new(move |z: f64| beta * z.abs(), beta)?;
    let up = solve_bsde_lsmc(&abs_g, &wt, &paths)?;
    let neg: Vec<f64> = wt.iter().map(|w| -w).collect();
    let down = solve_bsde_lsmc(&abs_g, &neg, &paths)?;
    println!("g = β|z|: E_g[W_T] = {:.4}, E_g[-W_T] = {:.4} (both ≈ {beta})", up.y0(), down.y0());

    let sq: Vec<f64> = wt.iter().map(|w| w * w).collect();
    let (g2, se2) = g_expectation_girsanov(beta, &sq, &wt, 1.0)?;
    println!("E_g[W_T^2] = {g2:.4} ± {se2:.4} (exact {:.4})", 1.0 + beta * beta);
    Ok(())
}
