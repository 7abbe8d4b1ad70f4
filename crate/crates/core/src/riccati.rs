//! Coefficients of the linear-quadratic mean-field problem and backward
//! integration of its Riccati system.
//!
//! State dynamics, with x̄ the conditional mean given the common noise:
//!
//! ```text
//! dX = (A X + Ā x̄ + B u) dt + (C X + C̄ x̄ + D u) dW
//! ```
//!
//! Running cost XᵀQX + x̄ᵀQ̄x̄ + uᵀRu, terminal cost XᵀGX + x̄ᵀḠx̄, and the
//! recursive driver g(z) = βz. The value function is sought in the form
//!
//! ```text
//! V(t, μ) = Var(μ)(P₁(t)) + μ̄ᵀP₂(t)μ̄ + μ̄ᵀφ(t) + ψ(t)
//! ```
//!
//! and the Riccati right-hand sides below are what the generator produces for
//! this ansatz once the control term has been minimised by completing the
//! square (see `docs/derivation.md`):
//!
//! ```text
//! −P₁' = P₁A + AᵀP₁ + CᵀP₁C + β(P₁C + CᵀP₁) + Q − Π₃Π₁⁻¹Π₃ᵀ
//! −P₂' = P₂Â + ÂᵀP₂ + ĈᵀP₂Ĉ + β(P₂Ĉ + ĈᵀP₂) + Q + Q̄ − Π₄Π₂⁻¹Π₄ᵀ
//! −φ'  = (Â + βĈ)ᵀφ − Π₄Π₂⁻¹Π₅
//! −ψ'  = −¼ Π₅ᵀΠ₂⁻¹Π₅
//! ```
//!
//! with Â = A + Ā, Ĉ = C + C̄ and terminal data (G, G + Ḡ, 0, 0).

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, is_finite, min_eigenvalue, spd_inverse, symmetrize_in_place};

/// Default positivity margin δ in R ⪰ δI.
pub const DEFAULT_DELTA_PD: f64 = 1e-8;

/// Symmetric inputs must agree with their transpose to this tolerance.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Validated coefficient bundle of the LQ problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LqModel {
    a: DMatrix<f64>,
    abar: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    cbar: DMatrix<f64>,
    d: DMatrix<f64>,
    q: DMatrix<f64>,
    qbar: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    gbar: DMatrix<f64>,
    beta: f64,
    horizon: f64,
    delta_pd: f64,
}

/// Unvalidated coefficients; every matrix defaults to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LqModelBuilder {
    pub n: usize,
    pub k: usize,
    pub a: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub cbar: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub qbar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub gbar: DMatrix<f64>,
    pub beta: f64,
    pub horizon: f64,
    pub delta_pd: f64,
}

macro_rules! setter {
    ($name:ident) => {
        pub fn $name(mut self, m: DMatrix<f64>) -> Self {
            self.$name = m;
            self
        }
    };
}

impl LqModelBuilder {
    pub fn new(n: usize, k: usize) -> Self {
        let zn = DMatrix::zeros(n, n);
        let zb = DMatrix::zeros(n, k);
        Self {
            n,
            k,
            a: zn.clone(),
            abar: zn.clone(),
            b: zb.clone(),
            c: zn.clone(),
            cbar: zn.clone(),
            d: zb,
            q: zn.clone(),
            qbar: zn.clone(),
            r: DMatrix::zeros(k, k),
            g: zn.clone(),
            gbar: zn,
            beta: 0.0,
            horizon: 1.0,
            delta_pd: DEFAULT_DELTA_PD,
        }
    }

    setter!(a);
    setter!(abar);
    setter!(b);
    setter!(c);
    setter!(cbar);
    setter!(d);
    setter!(q);
    setter!(qbar);
    setter!(r);
    setter!(g);
    setter!(gbar);

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    pub fn delta_pd(mut self, delta: f64) -> Self {
        self.delta_pd = delta;
        self
    }

    /// Checks shapes, symmetry and the positivity assumptions
    /// Q ⪰ 0, Q+Q̄ ⪰ 0, G ⪰ 0, G+Ḡ ⪰ 0, R ⪰ δI.
    pub fn build(self) -> Result<LqModel> {
        let (n, k) = (self.n, self.k);
        if n == 0 || k == 0 {
            return Err(Error::invalid("state and control dimensions must be positive"));
        }
        let shapes: [(&'static str, &DMatrix<f64>, usize, usize); 11] = [
            ("A", &self.a, n, n),
            ("Abar", &self.abar, n, n),
            ("B", &self.b, n, k),
            ("C", &self.c, n, n),
            ("Cbar", &self.cbar, n, n),
            ("D", &self.d, n, k),
            ("Q", &self.q, n, n),
            ("Qbar", &self.qbar, n, n),
            ("R", &self.r, k, k),
            ("G", &self.g, n, n),
            ("Gbar", &self.gbar, n, n),
        ];
        for (name, m, rows, cols) in shapes {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::Assumption(format!(
                    "{name} must be {rows}×{cols}, got {}×{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !is_finite(m) {
                return Err(Error::Assumption(format!("{name} has non-finite entries")));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Assumption(format!("horizon T = {} must be positive", self.horizon)));
        }
        if !(self.delta_pd > 0.0 && self.delta_pd.is_finite()) {
            return Err(Error::Assumption("delta_pd must be positive".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::Assumption("beta must be finite".into()));
        }
        let sym = |name: &str, m: DMatrix<f64>| -> Result<DMatrix<f64>> {
            if !linalg::is_symmetric(&m, SYMMETRY_TOLERANCE) {
                return Err(Error::Assumption(format!("{name} is not symmetric")));
            }
            Ok(linalg::symmetrize(&m))
        };
        let q = sym("Q", self.q)?;
        let qbar = sym("Qbar", self.qbar)?;
        let r = sym("R", self.r)?;
        let g = sym("G", self.g)?;
        let gbar = sym("Gbar", self.gbar)?;

        let psd = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            let e = min_eigenvalue(m);
            if e < linalg::PSD_TOLERANCE {
                return Err(Error::Assumption(format!(
                    "{name} must be positive semidefinite (smallest eigenvalue {e:e})"
                )));
            }
            Ok(())
        };
        psd("Q", &q)?;
        psd("Q+Qbar", &(&q + &qbar))?;
        psd("G", &g)?;
        psd("G+Gbar", &(&g + &gbar))?;
        let r_min = min_eigenvalue(&r);
        if r_min < self.delta_pd {
            return Err(Error::Assumption(format!(
                "R must satisfy R ≥ δI with δ = {:e} (smallest eigenvalue {r_min:e})",
                self.delta_pd
            )));
        }

        Ok(LqModel {
            a: self.a,
            abar: self.abar,
            b: self.b,
            c: self.c,
            cbar: self.cbar,
            d: self.d,
            q,
            qbar,
            r,
            g,
            gbar,
            beta: self.beta,
            horizon: self.horizon,
            delta_pd: self.delta_pd,
        })
    }
}

impl LqModel {
    pub fn builder(n: usize, k: usize) -> LqModelBuilder {
        LqModelBuilder::new(n, k)
    }

    /// All data zero except R = I.
    pub fn zero(n: usize, k: usize, horizon: f64) -> Result<Self> {
        Self::builder(n, k)
            .r(DMatrix::identity(k, k))
            .horizon(horizon)
            .build()
    }

    /// The scalar reference model used by the default configuration.
    pub fn reference_scalar() -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self::builder(1, 1)
            .a(m(0.3))
            .abar(m(-0.2))
            .b(m(1.0))
            .c(m(0.25))
            .cbar(m(0.1))
            .d(m(0.4))
            .q(m(1.0))
            .qbar(m(0.5))
            .r(m(0.8))
            .g(m(1.2))
            .gbar(m(0.3))
            .beta(0.35)
            .build()
            .expect("reference model is valid")
    }

    /// Reopens the model for modification.
    pub fn to_builder(&self) -> LqModelBuilder {
        LqModelBuilder {
            n: self.n(),
            k: self.k(),
            a: self.a.clone(),
            abar: self.abar.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            cbar: self.cbar.clone(),
            d: self.d.clone(),
            q: self.q.clone(),
            qbar: self.qbar.clone(),
            r: self.r.clone(),
            g: self.g.clone(),
            gbar: self.gbar.clone(),
            beta: self.beta,
            horizon: self.horizon,
            delta_pd: self.delta_pd,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn k(&self) -> usize {
        self.b.ncols()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn abar(&self) -> &DMatrix<f64> {
        &self.abar
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn cbar(&self) -> &DMatrix<f64> {
        &self.cbar
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn qbar(&self) -> &DMatrix<f64> {
        &self.qbar
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn gbar(&self) -> &DMatrix<f64> {
        &self.gbar
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn delta_pd(&self) -> f64 {
        self.delta_pd
    }
}

/// The five coefficient maps Π₁…Π₅ evaluated at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PiCoefficients {
    /// DᵀP₁D + R (k×k)
    pub pi1: DMatrix<f64>,
    /// DᵀP₂D + R (k×k)
    pub pi2: DMatrix<f64>,
    /// CᵀP₁D + P₁(B + βD) (n×k)
    pub pi3: DMatrix<f64>,
    /// (C + C̄)ᵀP₂D + P₂(B + βD) (n×k)
    pub pi4: DMatrix<f64>,
    /// (B + βD)ᵀφ (k)
    pub pi5: DVector<f64>,
}

pub fn pi_coefficients(
    model: &LqModel,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    phi: &DVector<f64>,
) -> Result<PiCoefficients> {
    let n = model.n();
    for (what, m) in [("P1", p1), ("P2", p2)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                found: if m.nrows() != n { m.nrows() } else { m.ncols() },
            });
        }
    }
    if phi.len() != n {
        return Err(Error::DimensionMismatch {
            what: "phi",
            expected: n,
            found: phi.len(),
        });
    }
    let d = &model.d;
    let b_eff = &model.b + &model.d * model.beta;
    let c_hat = &model.c + &model.cbar;
    Ok(PiCoefficients {
        pi1: d.transpose() * p1 * d + &model.r,
        pi2: d.transpose() * p2 * d + &model.r,
        pi3: model.c.transpose() * p1 * d + p1 * &b_eff,
        pi4: c_hat.transpose() * p2 * d + p2 * &b_eff,
        pi5: b_eff.transpose() * phi,
    })
}

/// One value of the quadruple (P₁, P₂, φ, ψ), or of its time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiState {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub psi: f64,
}

impl RiccatiState {
    /// Terminal data (G, G+Ḡ, 0, 0).
    pub fn terminal(model: &LqModel) -> Self {
        Self {
            p1: model.g.clone(),
            p2: &model.g + &model.gbar,
            phi: DVector::zeros(model.n()),
            psi: 0.0,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            p1: DMatrix::zeros(n, n),
            p2: DMatrix::zeros(n, n),
            phi: DVector::zeros(n),
            psi: 0.0,
        }
    }

    /// self + s·other
    pub fn axpy(&self, s: f64, other: &RiccatiState) -> RiccatiState {
        RiccatiState {
            p1: &self.p1 + &other.p1 * s,
            p2: &self.p2 + &other.p2 * s,
            phi: &self.phi + &other.phi * s,
            psi: self.psi + other.psi * s,
        }
    }

    /// (1−w)·self + w·other
    pub fn lerp(&self, other: &RiccatiState, w: f64) -> RiccatiState {
        RiccatiState {
            p1: &self.p1 * (1.0 - w) + &other.p1 * w,
            p2: &self.p2 * (1.0 - w) + &other.p2 * w,
            phi: &self.phi * (1.0 - w) + &other.phi * w,
            psi: self.psi * (1.0 - w) + other.psi * w,
        }
    }

    fn symmetrize(&mut self) {
        symmetrize_in_place(&mut self.p1);
        symmetrize_in_place(&mut self.p2);
    }

    pub fn is_finite(&self) -> bool {
        is_finite(&self.p1) && is_finite(&self.p2) && self.phi.iter().all(|v| v.is_finite()) && self.psi.is_finite()
    }

    /// Largest absolute entry across all components.
    pub fn max_abs(&self) -> f64 {
        linalg::frobenius_max_abs(&self.p1)
            .max(linalg::frobenius_max_abs(&self.p2))
            .max(self.phi.amax())
            .max(self.psi.abs())
    }
}

/// Time derivative (d/dt) of the Riccati quadruple at the given state.
///
/// Fails if Π₁ or Π₂ is not positive definite at the state; `t` is only used
/// for the error report.
pub fn riccati_rhs(model: &LqModel, state: &RiccatiState, t: f64) -> Result<RiccatiState> {
    let pis = pi_coefficients(model, &state.p1, &state.p2, &state.phi)?;
    let pi1_inv = spd_inverse(&pis.pi1).ok_or(Error::NotPositiveDefinite {
        which: "Pi1",
        t,
        min_eig: min_eigenvalue(&pis.pi1),
    })?;
    let pi2_inv = spd_inverse(&pis.pi2).ok_or(Error::NotPositiveDefinite {
        which: "Pi2",
        t,
        min_eig: min_eigenvalue(&pis.pi2),
    })?;
    Ok(rhs_with_inverses(model, state, &pis, &pi1_inv, &pi2_inv))
}

pub(crate) fn rhs_with_inverses(
    model: &LqModel,
    state: &RiccatiState,
    pis: &PiCoefficients,
    pi1_inv: &DMatrix<f64>,
    pi2_inv: &DMatrix<f64>,
) -> RiccatiState {
    let beta = model.beta;
    let (p1, p2, phi) = (&state.p1, &state.p2, &state.phi);
    let a = &model.a;
    let c = &model.c;
    let a_hat = &model.a + &model.abar;
    let c_hat = &model.c + &model.cbar;

    let g1 = p1 * a + a.transpose() * p1
        + c.transpose() * p1 * c
        + (p1 * c + c.transpose() * p1) * beta
        + &model.q
        - &pis.pi3 * pi1_inv * pis.pi3.transpose();
    let g2 = p2 * &a_hat + a_hat.transpose() * p2
        + c_hat.transpose() * p2 * &c_hat
        + (p2 * &c_hat + c_hat.transpose() * p2) * beta
        + &model.q
        + &model.qbar
        - &pis.pi4 * pi2_inv * pis.pi4.transpose();
    let gphi = (&a_hat + &c_hat * beta).transpose() * phi - &pis.pi4 * pi2_inv * &pis.pi5;
    let gpsi = -0.25 * pis.pi5.dot(&(pi2_inv * &pis.pi5));

    let mut out = RiccatiState {
        p1: -g1,
        p2: -g2,
        phi: -gphi,
        psi: -gpsi,
    };
    out.symmetrize();
    out
}

/// Gridded solution of the Riccati system on [0, T].
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: Vec<f64>,
    nodes: Vec<RiccatiState>,
    derivatives: Vec<RiccatiState>,
}

/// Integrates the Riccati system backward from T with `steps` classical RK4
/// steps on a uniform grid.
pub fn solve_riccati(model: &LqModel, steps: usize) -> Result<RiccatiSolution> {
    if steps == 0 {
        return Err(Error::invalid("riccati steps must be at least 1"));
    }
    let big_t = model.horizon;
    let h = big_t / steps as f64;
    let grid: Vec<f64> = (0..=steps)
        .map(|j| if j == steps { big_t } else { j as f64 * h })
        .collect();

    let mut nodes = vec![RiccatiState::zeros(model.n()); steps + 1];
    let mut derivatives = nodes.clone();

    let mut y = RiccatiState::terminal(model);
    let mut dy = riccati_rhs(model, &y, big_t)?;
    for j in (0..steps).rev() {
        let t = grid[j + 1];
        nodes[j + 1] = y.clone();
        derivatives[j + 1] = dy.clone();

        // Stepping backward: dt = −h.
        let stage = |base: &RiccatiState, slope: &RiccatiState, s: f64, tt: f64| {
            let mut z = base.axpy(s, slope);
            z.symmetrize();
            riccati_rhs(model, &z, tt)
        };
        let k1 = &dy;
        let k2 = stage(&y, k1, -0.5 * h, t - 0.5 * h)?;
        let k3 = stage(&y, &k2, -0.5 * h, t - 0.5 * h)?;
        let k4 = stage(&y, &k3, -h, t - h)?;
        let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
        y = y.axpy(-h / 6.0, &incr);
        y.symmetrize();
        if !y.is_finite() {
            return Err(Error::NonFinite {
                what: "riccati solution",
                step: j,
            });
        }
        dy = riccati_rhs(model, &y, grid[j])?;
    }
    nodes[0] = y;
    derivatives[0] = dy;

    Ok(RiccatiSolution {
        grid,
        nodes,
        derivatives,
    })
}

impl RiccatiSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn nodes(&self) -> &[RiccatiState] {
        &self.nodes
    }

    /// Right-hand side evaluated at each stored node.
    pub fn derivatives(&self) -> &[RiccatiState] {
        &self.derivatives
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let big_t = self.horizon();
        if !(0.0..=big_t).contains(&t) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: big_t,
            });
        }
        let m = self.steps();
        let h = big_t / m as f64;
        let j = ((t / h).floor() as usize).min(m - 1);
        let w = ((t - self.grid[j]) / (self.grid[j + 1] - self.grid[j])).clamp(0.0, 1.0);
        Ok((j, w))
    }

    /// Linearly interpolated (P₁, P₂, φ, ψ) at t.
    pub fn state_at(&self, t: f64) -> Result<RiccatiState> {
        let (j, w) = self.locate(t)?;
        Ok(interpolate(&self.nodes, j, w))
    }

    /// Linearly interpolated stored right-hand side at t.
    pub fn derivative_at(&self, t: f64) -> Result<RiccatiState> {
        let (j, w) = self.locate(t)?;
        Ok(interpolate(&self.derivatives, j, w))
    }

    /// CSV with columns t, P1_ij (row-major), P2_ij, phi_i, psi.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.nodes[0].phi.len();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        for name in ["P1", "P2"] {
            for i in 1..=n {
                for j in 1..=n {
                    header.push(format!("{name}_{i}{j}"));
                }
            }
        }
        header.extend((1..=n).map(|i| format!("phi_{i}")));
        header.push("psi".into());
        w.write_record(&header)?;
        for (t, s) in self.grid.iter().zip(&self.nodes) {
            let mut row = vec![t.to_string()];
            for m in [&s.p1, &s.p2] {
                for i in 0..n {
                    for j in 0..n {
                        row.push(m[(i, j)].to_string());
                    }
                }
            }
            row.extend(s.phi.iter().map(|v| v.to_string()));
            row.push(s.psi.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn interpolate(values: &[RiccatiState], j: usize, w: f64) -> RiccatiState {
    if w == 0.0 {
        values[j].clone()
    } else if w == 1.0 {
        values[j + 1].clone()
    } else {
        values[j].lerp(&values[j + 1], w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn pi_coefficients_at_zero_state() {
        let model = LqModel::builder(2, 1)
            .b(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]))
            .d(DMatrix::from_row_slice(2, 1, &[0.5, 0.0]))
            .r(m1(3.0))
            .build()
            .unwrap();
        let z = DMatrix::zeros(2, 2);
        let p = pi_coefficients(&model, &z, &z, &DVector::zeros(2)).unwrap();
        assert_eq!(p.pi1, m1(3.0));
        assert_eq!(p.pi2, m1(3.0));
        assert_eq!(p.pi3, DMatrix::zeros(2, 1));
        assert_eq!(p.pi4, DMatrix::zeros(2, 1));
        assert_eq!(p.pi5, DVector::zeros(1));
    }

    #[test]
    fn pi_coefficients_scalar_substitution() {
        let model = LqModel::builder(1, 1).b(m1(1.0)).r(m1(1.0)).build().unwrap();
        let p = pi_coefficients(&model, &m1(0.7), &m1(0.2), &DVector::zeros(1)).unwrap();
        assert_eq!(p.pi1, m1(1.0));
        assert_eq!(p.pi3, m1(0.7));
        assert_eq!(p.pi4, m1(0.2));
    }

    #[test]
    fn pi_with_zero_d_collapses_to_r() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let model = LqModel::builder(2, 2)
            .b(DMatrix::identity(2, 2))
            .r(r.clone())
            .build()
            .unwrap();
        let p1 = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 4.0]);
        let p = pi_coefficients(&model, &p1, &(p1.clone() * 2.0), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(p.pi1, r);
        assert_eq!(p.pi2, r);
    }

    #[test]
    fn pi_shape_mismatch() {
        let model = LqModel::zero(2, 1, 1.0).unwrap();
        assert!(pi_coefficients(&model, &m1(1.0), &m1(1.0), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn a8_violations_rejected() {
        assert!(LqModel::builder(1, 1).build().is_err(), "R = 0");
        assert!(LqModel::builder(1, 1).r(m1(1.0)).q(m1(-1.0)).build().is_err());
        assert!(LqModel::builder(1, 1).r(m1(1.0)).g(m1(1.0)).gbar(m1(-2.0)).build().is_err());
        assert!(LqModel::builder(1, 1).r(m1(1.0)).horizon(0.0).build().is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(LqModel::builder(2, 1).r(m1(1.0)).q(asym).build().is_err());
        // Q̄ may be indefinite as long as Q + Q̄ ⪰ 0.
        assert!(LqModel::builder(1, 1).r(m1(1.0)).q(m1(1.0)).qbar(m1(-0.5)).build().is_ok());
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let model = LqModel::zero(2, 1, 1.0).unwrap();
        let sol = solve_riccati(&model, 50).unwrap();
        for s in sol.nodes() {
            assert_eq!(s.max_abs(), 0.0);
        }
    }

    #[test]
    fn terminal_node_is_exact() {
        let model = LqModel::builder(2, 1)
            .a(DMatrix::from_row_slice(2, 2, &[0.1, 0.3, -0.2, 0.0]))
            .b(DMatrix::from_row_slice(2, 1, &[1.0, 0.5]))
            .q(DMatrix::identity(2, 2))
            .r(m1(1.0))
            .g(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]))
            .gbar(DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.1]))
            .beta(0.4)
            .build()
            .unwrap();
        let sol = solve_riccati(&model, 10).unwrap();
        let last = sol.nodes().last().unwrap();
        assert_eq!(last.p1, *model.g());
        assert_eq!(last.p2, model.g() + model.gbar());
        assert_eq!(last.phi, DVector::zeros(2));
        assert_eq!(last.psi, 0.0);
        assert_eq!(*sol.grid().last().unwrap(), model.horizon());
    }

    #[test]
    fn no_mean_field_means_p1_equals_p2() {
        let model = LqModel::builder(2, 1)
            .a(DMatrix::from_row_slice(2, 2, &[0.1, 0.3, -0.2, 0.0]))
            .b(DMatrix::from_row_slice(2, 1, &[1.0, 0.5]))
            .c(DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.3]))
            .d(DMatrix::from_row_slice(2, 1, &[0.1, 0.2]))
            .q(DMatrix::identity(2, 2))
            .r(m1(1.0))
            .g(DMatrix::identity(2, 2))
            .build()
            .unwrap();
        let sol = solve_riccati(&model, 100).unwrap();
        for s in sol.nodes() {
            assert!((&s.p1 - &s.p2).amax() < 1e-13);
            assert_eq!(s.phi.amax(), 0.0);
            assert_eq!(s.psi, 0.0);
        }
    }

    #[test]
    fn interpolation_and_range() {
        let model = LqModel::builder(1, 1).b(m1(1.0)).q(m1(1.0)).r(m1(1.0)).build().unwrap();
        let sol = solve_riccati(&model, 4).unwrap();
        let mid = sol.state_at(0.125).unwrap();
        let expected = 0.5 * (sol.nodes()[0].p1[(0, 0)] + sol.nodes()[1].p1[(0, 0)]);
        assert!((mid.p1[(0, 0)] - expected).abs() < 1e-15);
        assert_eq!(sol.state_at(1.0).unwrap(), sol.nodes()[4]);
        assert!(sol.state_at(1.5).is_err());
        assert!(sol.state_at(-0.1).is_err());
    }

    #[test]
    fn loss_of_definiteness_reported() {
        // Π₁ = DᵀP₁D + R = −1 for this P₁.
        let model = LqModel::builder(1, 1).d(m1(1.0)).r(m1(1.0)).build().unwrap();
        let mut s = RiccatiState::zeros(1);
        s.p1 = m1(-2.0);
        match riccati_rhs(&model, &s, 0.3) {
            Err(Error::NotPositiveDefinite { which, t, .. }) => {
                assert_eq!(which, "Pi1");
                assert_eq!(t, 0.3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header() {
        let model = LqModel::zero(2, 1, 1.0).unwrap();
        let sol = solve_riccati(&model, 2).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,P1_11,P1_12,P1_21,P1_22,P2_11,P2_12,P2_21,P2_22,phi_1,phi_2,psi"
        );
        assert_eq!(text.lines().count(), 4);
    }
}
