//! Solve the Riccati system for the reference model and compare a classical
//! scalar case with its closed form.

use mkv_lab::riccati::{solve_riccati, LqModel};
use mkv_lab::verify::scalar_riccati_closed_form;
use nalgebra::DMatrix;

fn main() -> mkv_lab::error::Result<()> {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 200)?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "t", "P1", "P2", "phi", "psi");
    for m in (0..=ric.steps()).step_by(40) {
        let s = &ric.nodes()[m];
        println!(
            "{:>6.2} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            ric.grid()[m],
            s.p1[(0, 0)],
            s.p2[(0, 0)],
            s.phi[0],
            s.psi
        );
    }

    // no mean-field terms, no control in the noise, β = 0
    let m1 = |v: f64| DMatrix::from_element(1, 1, v);
    let (a, b, q, r, g) = (0.3, 1.0, 1.0, 0.8, 1.2);
    let classical = LqModel::builder(1, 1).a(m1(a)).b(m1(b)).q(m1(q)).r(m1(r)).g(m1(g)).build()?;
    let sol = solve_riccati(&classical, 1000)?;
    let err = sol
        .grid()
        .iter()
        .zip(sol.nodes())
        .map(|(&t, s)| (s.p1[(0, 0)] - scalar_riccati_closed_form(a, b, q, r, g, 1.0, t)).abs())
        .fold(0.0, f64::max);
    println!("classical case: max |P - closed form| = {err:.2e}");

    let mut buf = Vec::new();
    ric.write_csv(&mut buf)?;
    let text = String::from_utf8_lossy(&buf);
    println!("csv head:");
    for line in text.lines().take(3) {
        println!("  {line}");
    }
    Ok(())
}
