//! Exact W₂ between empirical clouds.

use mkv_lab::measures::{wasserstein2, EmpiricalMeasure};
use mkv_lab::mkvsde::gaussian_cloud;
use mkv_lab::verify::brute_force_w2;

fn main() -> mkv_lab::error::Result<()> {
    let mu = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]])?;
    let nu = EmpiricalMeasure::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0], vec![3.0, 0.0]])?;
    println!("W2 = {:.6} (exhaustive {:.6})", wasserstein2(&mu, &nu)?, brute_force_w2(&mu, &nu)?);

    let a = gaussian_cloud(300, &[0.0, 0.0], 1.0, 1)?;
    let b = gaussian_cloud(300, &[0.0, 0.0], 1.0, 2)?;
    println!("two N(0, I) draws, N = 300: W2 = {:.4}", wasserstein2(&a, &b)?);
    let shifted = a.translated(&[3.0, 4.0])?;
    println!("translation by (3, 4): W2 = {:.12}", wasserstein2(&a, &shifted)?);

    let line = gaussian_cloud(5000, &[0.0], 1.0, 3)?;
    let wider = gaussian_cloud(5000, &[0.0], 2.0, 4)?;
    println!("1D, sorted coupling: W2(N(0,1), N(0,4)) ≈ {:.4} (exact 1)", wasserstein2(&line, &wider)?);
    Ok(())
}
