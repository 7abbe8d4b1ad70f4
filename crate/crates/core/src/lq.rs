//! Closed-form value function, optimal semi-feedback control, the control
//! functional Ψ and the HJB residual of the quadratic ansatz.
//!
//! For a measure μ with mean μ̄ and a control map u with image mean ū,
//!
//! ```text
//! Ψ(u) = Var(u_#μ)(Π₁) + ūᵀΠ₂ū + 2·E[(x − μ̄)ᵀΠ₃u(x)] + ⟨2Π₄ᵀμ̄ + Π₅, ū⟩
//! ```
//!
//! Completing the square separately on the deviation ũ = u − ū and on ū
//! gives the minimiser
//!
//! ```text
//! u*(x) = −Π₁⁻¹Π₃ᵀ(x − μ̄) − Π₂⁻¹Π₄ᵀμ̄ − ½Π₂⁻¹Π₅
//! ```
//!
//! and the completed-square form implemented in [`QuadraticValue::psi_completed_square`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, spd_inverse};
use crate::measures::EmpiricalMeasure;
use crate::riccati::{pi_coefficients, LqModel, PiCoefficients, RiccatiSolution, RiccatiState};

/// The quadratic value function backed by a Riccati solution.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticValue<'a> {
    model: &'a LqModel,
    ric: &'a RiccatiSolution,
}

/// u(x) = K_dev (x − μ̄) + K_mean μ̄ + c at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedback {
    pub t: f64,
    pub k_dev: DMatrix<f64>,
    pub k_mean: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearFeedback {
    pub fn zero(t: f64, n: usize, k: usize) -> Self {
        Self {
            t,
            k_dev: DMatrix::zeros(k, n),
            k_mean: DMatrix::zeros(k, n),
            offset: DVector::zeros(k),
        }
    }

    pub fn control_dim(&self) -> usize {
        self.offset.len()
    }

    /// Writes u(x) into `out` given the current mean.
    #[inline]
    pub fn apply(&self, x: &[f64], mean: &[f64], out: &mut [f64]) {
        let (k, n) = self.k_dev.shape();
        for i in 0..k {
            let mut acc = self.offset[i];
            for j in 0..n {
                acc += self.k_dev[(i, j)] * (x[j] - mean[j]) + self.k_mean[(i, j)] * mean[j];
            }
            out[i] = acc;
        }
    }

    pub fn eval(&self, x: &[f64], mean: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.control_dim()];
        self.apply(x, mean, &mut out);
        out
    }

    /// The feedback u + ε·K x, with K acting on the full state.
    pub fn perturbed(&self, gain: &DMatrix<f64>, eps: f64) -> Self {
        Self {
            t: self.t,
            k_dev: &self.k_dev + gain * eps,
            k_mean: &self.k_mean + gain * eps,
            offset: self.offset.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.k_dev.iter().chain(self.k_mean.iter()).chain(self.offset.iter()).all(|v| v.is_finite())
    }
}

/// Optimal gains for a given Riccati state.
pub fn feedback_from_state(model: &LqModel, state: &RiccatiState, t: f64) -> Result<LinearFeedback> {
    let pis = pi_coefficients(model, &state.p1, &state.p2, &state.phi)?;
    let (pi1_inv, pi2_inv) = pi_inverses(&pis, t)?;
    let fb = LinearFeedback {
        t,
        k_dev: -(&pi1_inv * pis.pi3.transpose()),
        k_mean: -(&pi2_inv * pis.pi4.transpose()),
        offset: -(&pi2_inv * &pis.pi5) * 0.5,
    };
    if !fb.is_finite() {
        return Err(Error::NonFinite { what: "feedback gains", step: 0 });
    }
    Ok(fb)
}

fn pi_inverses(pis: &PiCoefficients, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
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
    Ok((pi1_inv, pi2_inv))
}

/// V = Var(μ)(P₁) + μ̄ᵀP₂μ̄ + μ̄ᵀφ + ψ for an explicit state.
pub fn value_from_state(state: &RiccatiState, mu: &EmpiricalMeasure) -> Result<f64> {
    let m = mu.mean();
    Ok(mu.variance_functional(&state.p1)? + m.dot(&(&state.p2 * &m)) + m.dot(&state.phi) + state.psi)
}

/// Ψ for explicit coefficients; `image` holds u(xᵢ) row by row.
fn psi_from_coefficients(pis: &PiCoefficients, mu: &EmpiricalMeasure, image: &EmpiricalMeasure) -> Result<f64> {
    let m = mu.mean();
    let ubar = image.mean();
    let n_samples = mu.len() as f64;
    let mut cross = 0.0;
    for (x, u) in mu.samples().zip(image.samples()) {
        let dev = DVector::from_iterator(x.len(), x.iter().zip(m.iter()).map(|(a, b)| a - b));
        let u = DVector::from_column_slice(u);
        cross += dev.dot(&(&pis.pi3 * u));
    }
    cross /= n_samples;
    let linear = &pis.pi4.transpose() * &m * 2.0 + &pis.pi5;
    Ok(image.variance_functional(&pis.pi1)? + ubar.dot(&(&pis.pi2 * &ubar)) + 2.0 * cross + linear.dot(&ubar))
}

/// Residual of the HJB equation at an explicit state and time derivative.
///
/// Evaluates Ψ(u*) sample-wise together with the Var(μ)(·), μ̄ᵀ(·)μ̄, μ̄ᵀ(·) and
/// ψ' blocks. Vanishes when `deriv` is the Riccati right-hand side at `state`.
pub fn hjb_residual_from(
    model: &LqModel,
    state: &RiccatiState,
    deriv: &RiccatiState,
    mu: &EmpiricalMeasure,
) -> Result<f64> {
    if mu.dim() != model.n() {
        return Err(Error::DimensionMismatch {
            what: "measure dimension",
            expected: model.n(),
            found: mu.dim(),
        });
    }
    let beta = model.beta();
    let (p1, p2, phi) = (&state.p1, &state.p2, &state.phi);
    let a = model.a();
    let c = model.c();
    let a_hat = model.a() + model.abar();
    let c_hat = model.c() + model.cbar();

    let pis = pi_coefficients(model, p1, p2, phi)?;
    let fb = feedback_from_state(model, state, f64::NAN)?;
    let m = mu.mean();
    let image = mu.pushforward(model.k(), |x| fb.eval(x, m.as_slice()))?;
    let psi_min = psi_from_coefficients(&pis, mu, &image)?;

    let var_block = &deriv.p1 + model.q() + c.transpose() * p1 * c + p1 * a + a.transpose() * p1
        + (p1 * c + c.transpose() * p1) * beta;
    let mean_block = &deriv.p2 + model.q() + model.qbar()
        + c_hat.transpose() * p2 * &c_hat
        + p2 * &a_hat
        + a_hat.transpose() * p2
        + (p2 * &c_hat + c_hat.transpose() * p2) * beta;
    let lin_block = &deriv.phi + (&a_hat + &c_hat * beta).transpose() * phi;

    Ok(psi_min
        + mu.variance_functional(&var_block)?
        + m.dot(&(&mean_block * &m))
        + m.dot(&lin_block)
        + deriv.psi)
}

impl<'a> QuadraticValue<'a> {
    pub fn new(model: &'a LqModel, ric: &'a RiccatiSolution) -> Result<Self> {
        let n = ric.nodes()[0].phi.len();
        if n != model.n() {
            return Err(Error::DimensionMismatch {
                what: "riccati solution dimension",
                expected: model.n(),
                found: n,
            });
        }
        if (ric.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
            return Err(Error::invalid("riccati solution horizon differs from model horizon"));
        }
        Ok(Self { model, ric })
    }

    pub fn model(&self) -> &'a LqModel {
        self.model
    }

    pub fn riccati(&self) -> &'a RiccatiSolution {
        self.ric
    }

    fn check_measure(&self, mu: &EmpiricalMeasure) -> Result<()> {
        if mu.dim() != self.model.n() {
            return Err(Error::DimensionMismatch {
                what: "measure dimension",
                expected: self.model.n(),
                found: mu.dim(),
            });
        }
        Ok(())
    }

    pub fn value_function(&self, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
        self.check_measure(mu)?;
        value_from_state(&self.ric.state_at(t)?, mu)
    }

    /// Standard error of V(t, μ_N) as an estimate of V(t, μ) when the cloud
    /// is an i.i.d. draw from μ, from the influence function
    /// (x−μ̄)ᵀP₁(x−μ̄) + (2P₂μ̄ + φ)ᵀ(x−μ̄).
    pub fn value_sampling_stderr(&self, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
        self.check_measure(mu)?;
        let s = self.ric.state_at(t)?;
        let m = mu.mean();
        let slope = &s.p2 * &m * 2.0 + &s.phi;
        let infl: Vec<f64> = mu
            .samples()
            .map(|x| {
                let dev = DVector::from_iterator(x.len(), x.iter().zip(m.iter()).map(|(a, b)| a - b));
                dev.dot(&(&s.p1 * &dev)) + slope.dot(&dev)
            })
            .collect();
        let n = infl.len();
        if n < 2 {
            return Ok(0.0);
        }
        let mean = infl.iter().sum::<f64>() / n as f64;
        let var = infl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok((var / n as f64).sqrt())
    }

    pub fn optimal_feedback(&self, t: f64) -> Result<LinearFeedback> {
        feedback_from_state(self.model, &self.ric.state_at(t)?, t)
    }

    pub fn pi_coefficients(&self, t: f64) -> Result<PiCoefficients> {
        let s = self.ric.state_at(t)?;
        pi_coefficients(self.model, &s.p1, &s.p2, &s.phi)
    }

    /// Ψ_t^μ(u) for a control map u: ℝⁿ → ℝᵏ.
    pub fn psi_functional<F>(&self, t: f64, mu: &EmpiricalMeasure, u: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        self.check_measure(mu)?;
        let pis = self.pi_coefficients(t)?;
        let image = mu.pushforward(self.model.k(), u)?;
        psi_from_coefficients(&pis, mu, &image)
    }

    /// Ψ_t^μ for a control given sample by sample: row i of `image` is u(xᵢ).
    pub fn psi_on_image(&self, t: f64, mu: &EmpiricalMeasure, image: &EmpiricalMeasure) -> Result<f64> {
        self.check_measure(mu)?;
        if image.dim() != self.model.k() {
            return Err(Error::DimensionMismatch {
                what: "control image dimension",
                expected: self.model.k(),
                found: image.dim(),
            });
        }
        if image.len() != mu.len() {
            return Err(Error::UnequalSampleCount {
                left: mu.len(),
                right: image.len(),
            });
        }
        psi_from_coefficients(&self.pi_coefficients(t)?, mu, image)
    }

    /// Ψ_t^μ(u) in completed-square form: the Π₁/Π₂-weighted distance of u
    /// from u* minus the minimised remainder.
    pub fn psi_completed_square<F>(&self, t: f64, mu: &EmpiricalMeasure, u: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        self.check_measure(mu)?;
        let pis = self.pi_coefficients(t)?;
        let (pi1_inv, pi2_inv) = pi_inverses(&pis, t)?;
        let fb = self.optimal_feedback(t)?;
        let m = mu.mean();
        let gap = mu.pushforward(self.model.k(), |x| {
            let ux = u(x);
            let us = fb.eval(x, m.as_slice());
            ux.iter().zip(&us).map(|(a, b)| a - b).collect()
        })?;
        let gbar = gap.mean();
        let h3 = &pis.pi3 * &pi1_inv * pis.pi3.transpose();
        let h4 = &pis.pi4 * &pi2_inv * pis.pi4.transpose();
        Ok(gap.variance_functional(&pis.pi1)? + gbar.dot(&(&pis.pi2 * &gbar))
            - mu.variance_functional(&h3)?
            - m.dot(&(&h4 * &m))
            - pis.pi5.dot(&(&pi2_inv * pis.pi4.transpose() * &m))
            - 0.25 * pis.pi5.dot(&(&pi2_inv * &pis.pi5)))
    }

    /// HJB residual at (t, μ) using the stored Riccati right-hand side for the
    /// time derivatives.
    pub fn hjb_residual(&self, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
        let big_t = self.model.horizon();
        if !(0.0..big_t).contains(&t) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: big_t,
            });
        }
        let state = self.ric.state_at(t)?;
        let deriv = self.ric.derivative_at(t)?;
        hjb_residual_from(self.model, &state, &deriv, mu)
    }
}

/// One row of a value/residual sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSweepRow {
    pub t: f64,
    pub value: f64,
    pub residual: f64,
    pub n_samples: usize,
}

/// CSV with columns t, V, residual, n_samples.
pub fn write_value_sweep<W: Write>(writer: W, rows: &[ValueSweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "V", "residual", "n_samples"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.value.to_string(),
            r.residual.to_string(),
            r.n_samples.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
