//! Interacting-particle simulation of controlled McKean–Vlasov dynamics
//! driven by a single common Brownian motion.
//!
//! All particles share one noise path, so the only idiosyncratic randomness
//! sits in the initial draws. The conditional law of the state given the
//! common noise is then approximated by the ensemble cloud at each step, and
//! the explicit Euler–Maruyama recursion
//!
//! ```text
//! Xᵢ(m+1) = Xᵢ(m) + b(Xᵢ(m), μ̂(m), uᵢ(m)) h + σ(Xᵢ(m), μ̂(m), uᵢ(m)) ΔW(m)
//! ```
//!
//! couples the particles only through the pre-step empirical measure μ̂(m).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lq::{LinearFeedback, QuadraticValue};
use crate::measures::EmpiricalMeasure;
use crate::riccati::{LqModel, RiccatiSolution};

/// Particles per rayon task in the stepping loop.
const PARTICLE_CHUNK: usize = 256;

/// One realisation of the common Brownian motion on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonNoisePath {
    t0: f64,
    horizon: f64,
    increments: Vec<f64>,
    seed: u64,
}

pub fn generate_common_path(t0: f64, horizon: f64, steps: usize, seed: u64) -> Result<CommonNoisePath> {
    if steps == 0 {
        return Err(Error::invalid("a noise path needs at least one step"));
    }
    if !(horizon > t0) || !t0.is_finite() || !horizon.is_finite() {
        return Err(Error::invalid(format!("need t0 < T, got t0 = {t0}, T = {horizon}")));
    }
    let h = (horizon - t0) / steps as f64;
    let sd = h.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let increments = (0..steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();
    Ok(CommonNoisePath {
        t0,
        horizon,
        increments,
        seed,
    })
}

impl CommonNoisePath {
    /// A path with explicitly given increments.
    pub fn from_increments(t0: f64, horizon: f64, increments: Vec<f64>, seed: u64) -> Result<Self> {
        if increments.is_empty() {
            return Err(Error::invalid("a noise path needs at least one step"));
        }
        if !(horizon > t0) {
            return Err(Error::invalid("need t0 < T"));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "noise increment", step: 0 });
        }
        Ok(Self {
            t0,
            horizon,
            increments,
            seed,
        })
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn h(&self) -> f64 {
        (self.horizon - self.t0) / self.steps() as f64
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps() {
            self.horizon
        } else {
            self.t0 + m as f64 * self.h()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|m| self.time(m)).collect()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// W(t_m) − W(t₀) for m = 0..=M.
    pub fn brownian(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.steps() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }

    /// The same path restricted to [t_m, T].
    pub fn tail(&self, m: usize) -> Result<CommonNoisePath> {
        if m >= self.steps() {
            return Err(Error::IndexOutOfRange {
                what: "path tail start",
                index: m,
                len: self.steps(),
            });
        }
        Ok(CommonNoisePath {
            t0: self.time(m),
            horizon: self.horizon,
            increments: self.increments[m..].to_vec(),
            seed: self.seed,
        })
    }

    /// The same path restricted to [t₀, t_m].
    pub fn head(&self, m: usize) -> Result<CommonNoisePath> {
        if m == 0 || m > self.steps() {
            return Err(Error::IndexOutOfRange {
                what: "path head end",
                index: m,
                len: self.steps(),
            });
        }
        Ok(CommonNoisePath {
            t0: self.t0,
            horizon: self.time(m),
            increments: self.increments[..m].to_vec(),
            seed: self.seed,
        })
    }

    /// CSV with columns t, dW (one row per increment, t the left endpoint).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "dW"])?;
        for (m, dw) in self.increments.iter().enumerate() {
            w.write_record([self.time(m).to_string(), dw.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// N i.i.d. draws from N(mean, std²·I).
pub fn gaussian_cloud(n_particles: usize, mean: &[f64], std: f64, seed: u64) -> Result<EmpiricalMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = mean.len();
    let samples = (0..n_particles * dim)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean[i % dim] + std * z
        })
        .collect();
    EmpiricalMeasure::new(samples, dim)
}

/// The ensemble law seen by every particle during one step.
#[derive(Debug, Clone, Copy)]
pub struct LawSnapshot<'a> {
    pub measure: &'a EmpiricalMeasure,
    pub mean: &'a [f64],
}

/// Signature of drift and diffusion: (t, x, law, u, out).
pub type CoefficientFn = dyn Fn(f64, &[f64], &LawSnapshot<'_>, &[f64], &mut [f64]) + Send + Sync;

/// Drift b(x, μ, u) and diffusion σ(x, μ, u) (one noise dimension) with
/// declared Lipschitz constants.
pub struct CoefficientSet {
    dim: usize,
    control_dim: usize,
    drift: Box<CoefficientFn>,
    diffusion: Box<CoefficientFn>,
    lipschitz_drift: f64,
    lipschitz_diffusion: f64,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("control_dim", &self.control_dim)
            .field("lipschitz_drift", &self.lipschitz_drift)
            .field("lipschitz_diffusion", &self.lipschitz_diffusion)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn new<B, S>(
        dim: usize,
        control_dim: usize,
        drift: B,
        diffusion: S,
        lipschitz_drift: f64,
        lipschitz_diffusion: f64,
    ) -> Result<Self>
    where
        B: Fn(f64, &[f64], &LawSnapshot<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &LawSnapshot<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        for (name, l) in [("drift", lipschitz_drift), ("diffusion", lipschitz_diffusion)] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("{name} Lipschitz constant must be positive and finite")));
            }
        }
        if dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        Ok(Self {
            dim,
            control_dim,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            lipschitz_drift,
            lipschitz_diffusion,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn lipschitz(&self) -> (f64, f64) {
        (self.lipschitz_drift, self.lipschitz_diffusion)
    }
}

/// Linear mean-field coefficients of the LQ model:
/// b = Ax + Āx̄ + Bu, σ = Cx + C̄x̄ + Du.
pub fn lq_coefficients(model: &LqModel) -> CoefficientSet {
    fn affine(
        x_gain: DMatrix<f64>,
        mean_gain: DMatrix<f64>,
        u_gain: DMatrix<f64>,
    ) -> impl Fn(f64, &[f64], &LawSnapshot<'_>, &[f64], &mut [f64]) + Send + Sync {
        move |_t, x, law, u, out| {
            let (n, k) = u_gain.shape();
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += x_gain[(i, j)] * x[j] + mean_gain[(i, j)] * law.mean[j];
                }
                for l in 0..k {
                    acc += u_gain[(i, l)] * u[l];
                }
                out[i] = acc;
            }
        }
    }
    let lip = |m: &[&DMatrix<f64>]| 1.0 + m.iter().map(|x| x.norm()).sum::<f64>();
    let lb = lip(&[model.a(), model.abar(), model.b()]);
    let ls = lip(&[model.c(), model.cbar(), model.d()]);
    CoefficientSet::new(
        model.n(),
        model.k(),
        affine(model.a().clone(), model.abar().clone(), model.b().clone()),
        affine(model.c().clone(), model.cbar().clone(), model.d().clone()),
        lb,
        ls,
    )
    .expect("declared constants are ≥ 1")
}

/// A control law u(t, x, μ).
pub trait Policy: Sync {
    fn control_dim(&self) -> usize;

    fn control(&self, step: usize, t: f64, x: &[f64], law: &LawSnapshot<'_>, out: &mut [f64]);

    /// Checked once before a simulation on `path` starts.
    fn validate(&self, _path: &CommonNoisePath) -> Result<()> {
        Ok(())
    }

    fn describe(&self) -> String {
        "custom".into()
    }
}

/// u ≡ 0.
#[derive(Debug, Clone, Copy)]
pub struct NoControl {
    pub control_dim: usize,
}

impl Policy for NoControl {
    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn control(&self, _: usize, _: f64, _: &[f64], _: &LawSnapshot<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn describe(&self) -> String {
        "zero".into()
    }
}

/// Wraps a closure (t, x, law, out) as a policy.
pub struct FnPolicy<F> {
    control_dim: usize,
    f: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(f64, &[f64], &LawSnapshot<'_>, &mut [f64]) + Sync,
{
    pub fn new(control_dim: usize, f: F) -> Self {
        Self { control_dim, f }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(f64, &[f64], &LawSnapshot<'_>, &mut [f64]) + Sync,
{
    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn control(&self, _step: usize, t: f64, x: &[f64], law: &LawSnapshot<'_>, out: &mut [f64]) {
        (self.f)(t, x, law, out)
    }
}

/// Linear feedback gains tabulated on the time grid of a noise path.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSchedule {
    gains: Vec<LinearFeedback>,
    label: String,
}

impl FeedbackSchedule {
    pub fn new(gains: Vec<LinearFeedback>, label: impl Into<String>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::invalid("empty feedback schedule"));
        }
        Ok(Self {
            gains,
            label: label.into(),
        })
    }

    /// u* from the Riccati solution, at each node of `times`.
    pub fn optimal(qv: &QuadraticValue<'_>, times: &[f64]) -> Result<Self> {
        let gains = times
            .iter()
            .map(|&t| qv.optimal_feedback(t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(gains, "optimal")
    }

    /// Same schedule with u + ε·Kx at every node.
    pub fn perturbed(&self, gain: &DMatrix<f64>, eps: f64) -> Self {
        Self {
            gains: self.gains.iter().map(|g| g.perturbed(gain, eps)).collect(),
            label: format!("{}+{eps}K", self.label),
        }
    }

    pub fn gains(&self) -> &[LinearFeedback] {
        &self.gains
    }

    /// The schedule restricted to nodes m.. (for restarting mid-path).
    pub fn tail(&self, m: usize) -> Self {
        Self {
            gains: self.gains[m..].to_vec(),
            label: self.label.clone(),
        }
    }
}

impl Policy for FeedbackSchedule {
    fn control_dim(&self) -> usize {
        self.gains[0].control_dim()
    }

    #[inline]
    fn control(&self, step: usize, _t: f64, x: &[f64], law: &LawSnapshot<'_>, out: &mut [f64]) {
        self.gains[step].apply(x, law.mean, out)
    }

    fn validate(&self, path: &CommonNoisePath) -> Result<()> {
        if self.gains.len() < path.steps() {
            return Err(Error::DimensionMismatch {
                what: "feedback schedule length",
                expected: path.steps(),
                found: self.gains.len(),
            });
        }
        let tol = 1e-9 * (1.0 + path.horizon().abs());
        for m in 0..path.steps() {
            if (self.gains[m].t - path.time(m)).abs() > tol {
                return Err(Error::invalid(format!(
                    "feedback node {m} is at t = {}, path node at {}",
                    self.gains[m].t,
                    path.time(m)
                )));
            }
        }
        Ok(())
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Particle trajectories sharing one common-noise path.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    n_particles: usize,
    dim: usize,
    control_dim: usize,
    /// [(m·N + i)·n + j]
    states: Vec<f64>,
    /// [(m·N + i)·k + l], m < M
    controls: Vec<f64>,
    path: CommonNoisePath,
    policy: String,
}

impl ParticleEnsemble {
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn steps(&self) -> usize {
        self.path.steps()
    }

    pub fn path(&self) -> &CommonNoisePath {
        &self.path
    }

    pub fn policy_description(&self) -> &str {
        &self.policy
    }

    /// Flat N×n block of states at node m.
    pub fn states_at(&self, m: usize) -> &[f64] {
        let block = self.n_particles * self.dim;
        &self.states[m * block..(m + 1) * block]
    }

    /// Flat N×k block of the controls applied during step m (m < M).
    pub fn controls_at(&self, m: usize) -> &[f64] {
        let block = self.n_particles * self.control_dim;
        &self.controls[m * block..(m + 1) * block]
    }

    /// The N-point cloud of particle states at node m.
    pub fn empirical_flow(&self, m: usize) -> Result<EmpiricalMeasure> {
        if m > self.steps() {
            return Err(Error::IndexOutOfRange {
                what: "ensemble step",
                index: m,
                len: self.steps() + 1,
            });
        }
        EmpiricalMeasure::new(self.states_at(m).to_vec(), self.dim)
    }

    /// Image cloud of the controls applied during step m.
    pub fn control_cloud(&self, m: usize) -> Result<EmpiricalMeasure> {
        if m >= self.steps() {
            return Err(Error::IndexOutOfRange {
                what: "control step",
                index: m,
                len: self.steps(),
            });
        }
        EmpiricalMeasure::new(self.controls_at(m).to_vec(), self.control_dim)
    }

    /// Ensemble average at every node, (M+1)×n.
    pub fn mean_path(&self) -> Vec<DVector<f64>> {
        (0..=self.steps())
            .map(|m| DVector::from_vec(plain_mean(self.states_at(m), self.dim)))
            .collect()
    }

    /// CSV with columns t, particle_id, x1..xn.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "particle_id".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for m in 0..=self.steps() {
            let t = self.path.time(m).to_string();
            for (i, x) in self.states_at(m).chunks_exact(self.dim).enumerate() {
                let mut row = vec![t.clone(), i.to_string()];
                row.extend(x.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn plain_mean(block: &[f64], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let n = block.len() / dim;
    for x in block.chunks_exact(dim) {
        for (acc, v) in m.iter_mut().zip(x) {
            *acc += v;
        }
    }
    for v in &mut m {
        *v /= n as f64;
    }
    m
}

/// Explicit Euler–Maruyama particle simulation on the grid of `path`.
pub fn simulate_forward(
    coeffs: &CoefficientSet,
    policy: &dyn Policy,
    initial: &EmpiricalMeasure,
    path: &CommonNoisePath,
) -> Result<ParticleEnsemble> {
    let n_particles = initial.len();
    let dim = coeffs.dim;
    let k = coeffs.control_dim;
    if n_particles < 2 {
        return Err(Error::invalid("mean-field simulation needs at least 2 particles"));
    }
    if initial.dim() != dim {
        return Err(Error::DimensionMismatch {
            what: "initial cloud dimension",
            expected: dim,
            found: initial.dim(),
        });
    }
    if policy.control_dim() != k {
        return Err(Error::DimensionMismatch {
            what: "policy control dimension",
            expected: k,
            found: policy.control_dim(),
        });
    }
    policy.validate(path)?;

    let steps = path.steps();
    let h = path.h();
    let block = n_particles * dim;
    let cblock = n_particles * k;
    let mut states = vec![0.0; (steps + 1) * block];
    let mut controls = vec![0.0; steps * cblock];
    states[..block].copy_from_slice(initial.as_slice());

    for m in 0..steps {
        let t = path.time(m);
        let dw = path.increments()[m];
        let (done, rest) = states.split_at_mut((m + 1) * block);
        let current = &done[m * block..];
        let next = &mut rest[..block];
        let ctrl = &mut controls[m * cblock..(m + 1) * cblock];

        let measure = EmpiricalMeasure::new(current.to_vec(), dim).map_err(|_| Error::NonFinite {
            what: "particle state",
            step: m,
        })?;
        let mean = plain_mean(current, dim);
        let law = LawSnapshot {
            measure: &measure,
            mean: &mean,
        };

        let chunk_controls: Vec<Vec<f64>> = next
            .par_chunks_mut(dim * PARTICLE_CHUNK)
            .enumerate()
            .map(|(chunk, next_chunk)| {
                let mut b = vec![0.0; dim];
                let mut s = vec![0.0; dim];
                let mut us = vec![0.0; next_chunk.len() / dim * k];
                let first = chunk * PARTICLE_CHUNK;
                for (local, x_next) in next_chunk.chunks_exact_mut(dim).enumerate() {
                    let i = first + local;
                    let x = &current[i * dim..(i + 1) * dim];
                    let u = &mut us[local * k..(local + 1) * k];
                    policy.control(m, t, x, &law, u);
                    (coeffs.drift)(t, x, &law, u, &mut b);
                    (coeffs.diffusion)(t, x, &law, u, &mut s);
                    for j in 0..dim {
                        x_next[j] = x[j] + b[j] * h + s[j] * dw;
                    }
                }
                us
            })
            .collect();
        let mut offset = 0;
        for us in chunk_controls {
            ctrl[offset..offset + us.len()].copy_from_slice(&us);
            offset += us.len();
        }

        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "particle state",
                step: m + 1,
            });
        }
    }

    Ok(ParticleEnsemble {
        n_particles,
        dim,
        control_dim: k,
        states,
        controls,
        path: path.clone(),
        policy: policy.describe(),
    })
}

/// The LQ dynamics under an arbitrary policy.
pub fn simulate_lq(
    model: &LqModel,
    policy: &dyn Policy,
    initial: &EmpiricalMeasure,
    path: &CommonNoisePath,
) -> Result<ParticleEnsemble> {
    simulate_forward(&lq_coefficients(model), policy, initial, path)
}

/// The closed-loop LQ system under the optimal feedback u*.
pub fn simulate_lq_closed_loop(
    model: &LqModel,
    ric: &RiccatiSolution,
    initial: &EmpiricalMeasure,
    path: &CommonNoisePath,
) -> Result<ParticleEnsemble> {
    let qv = QuadraticValue::new(model, ric)?;
    let schedule = FeedbackSchedule::optimal(&qv, &path.times())?;
    simulate_lq(model, &schedule, initial, path)
}

/// Euler–Maruyama for the conditional mean
/// dx̄ = [(A+Ā)x̄ + Bū*]dt + [(C+C̄)x̄ + Dū*]dW with ū* = K_mean x̄ + c.
pub fn conditional_mean_path(
    model: &LqModel,
    ric: &RiccatiSolution,
    xbar0: &[f64],
    path: &CommonNoisePath,
) -> Result<Vec<DVector<f64>>> {
    let n = model.n();
    if xbar0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial mean",
            expected: n,
            found: xbar0.len(),
        });
    }
    let qv = QuadraticValue::new(model, ric)?;
    let a_hat = model.a() + model.abar();
    let c_hat = model.c() + model.cbar();
    let h = path.h();
    let mut x = DVector::from_column_slice(xbar0);
    let mut out = Vec::with_capacity(path.steps() + 1);
    out.push(x.clone());
    for m in 0..path.steps() {
        let fb = qv.optimal_feedback(path.time(m))?;
        let u = &fb.k_mean * &x + &fb.offset;
        let drift = &a_hat * &x + model.b() * &u;
        let diffusion = &c_hat * &x + model.d() * &u;
        x = &x + drift * h + diffusion * path.increments()[m];
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "conditional mean",
                step: m + 1,
            });
        }
        out.push(x.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_riccati;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn zero_coeffs(dim: usize) -> CoefficientSet {
        CoefficientSet::new(dim, 1, |_, _, _, _, out| out.fill(0.0), |_, _, _, _, out| out.fill(0.0), 1.0, 1.0)
            .unwrap()
    }

    #[test]
    fn path_is_seed_deterministic() {
        let a = generate_common_path(0.0, 1.0, 64, 42).unwrap();
        let b = generate_common_path(0.0, 1.0, 64, 42).unwrap();
        let c = generate_common_path(0.0, 1.0, 64, 43).unwrap();
        assert_eq!(a.increments(), b.increments());
        assert_ne!(a.increments(), c.increments());
        assert!(generate_common_path(0.0, 1.0, 0, 1).is_err());
        assert!(generate_common_path(1.0, 1.0, 4, 1).is_err());
    }

    #[test]
    fn brownian_terminal_is_increment_sum() {
        let p = generate_common_path(0.5, 2.0, 100, 7).unwrap();
        let w = p.brownian();
        let sum: f64 = p.increments().iter().sum();
        assert_eq!(*w.last().unwrap(), p.increments().iter().fold(0.0, |a, b| a + b));
        assert!((w.last().unwrap() - sum).abs() < 1e-15);
        assert_eq!(p.time(100), 2.0);
        assert_eq!(p.time(0), 0.5);
    }

    #[test]
    fn increment_mean_within_clt_bound() {
        let m = 100_000;
        let p = generate_common_path(0.0, 1.0, m, 2024).unwrap();
        let h = p.h();
        let mean = p.increments().iter().sum::<f64>() / m as f64;
        // 4 standard errors of the mean of m draws of N(0, h).
        assert!(mean.abs() <= 4.0 * (h / m as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn zero_coefficients_freeze_particles() {
        let init = gaussian_cloud(20, &[0.0, 1.0], 1.0, 3).unwrap();
        let path = generate_common_path(0.0, 1.0, 10, 1).unwrap();
        let ens = simulate_forward(&zero_coeffs(2), &NoControl { control_dim: 1 }, &init, &path).unwrap();
        for m in 0..=10 {
            assert_eq!(ens.empirical_flow(m).unwrap(), init);
        }
        assert!(ens.empirical_flow(11).is_err());
    }

    #[test]
    fn mean_field_drift_follows_exponential() {
        let coeffs = CoefficientSet::new(
            1,
            0,
            |_, _, law, _, out| out[0] = law.mean[0],
            |_, _, _, _, out| out[0] = 0.0,
            1.0,
            1.0,
        )
        .unwrap();
        let init = EmpiricalMeasure::new(vec![0.7; 5], 1).unwrap();
        let steps = 2000;
        let path = generate_common_path(0.0, 1.0, steps, 9).unwrap();
        let ens = simulate_forward(&coeffs, &NoControl { control_dim: 0 }, &init, &path).unwrap();
        let h = path.h();
        for m in [0, 500, 1000, 2000] {
            let exact = 0.7 * (m as f64 * h).exp();
            let got = ens.states_at(m)[3];
            // global Euler error ≈ x₀ e^t · t h / 2
            assert!((got - exact).abs() <= 0.7 * std::f64::consts::E * h, "m={m}");
        }
    }

    #[test]
    fn restart_reproduces_trajectories() {
        let model = LqModel::builder(1, 1)
            .a(m1(0.2))
            .abar(m1(0.3))
            .b(m1(1.0))
            .c(m1(0.4))
            .cbar(m1(-0.1))
            .d(m1(0.3))
            .q(m1(1.0))
            .r(m1(1.0))
            .g(m1(1.0))
            .build()
            .unwrap();
        let ric = solve_riccati(&model, 200).unwrap();
        let qv = QuadraticValue::new(&model, &ric).unwrap();
        let path = generate_common_path(0.0, 1.0, 50, 5).unwrap();
        let schedule = FeedbackSchedule::optimal(&qv, &path.times()).unwrap();
        let init = gaussian_cloud(30, &[0.5], 0.8, 1).unwrap();
        let full = simulate_lq(&model, &schedule, &init, &path).unwrap();
        let s = 20;
        let restart = simulate_lq(
            &model,
            &schedule.tail(s),
            &full.empirical_flow(s).unwrap(),
            &path.tail(s).unwrap(),
        )
        .unwrap();
        for m in 0..=30 {
            assert_eq!(restart.states_at(m), full.states_at(s + m));
        }
    }

    #[test]
    fn schedule_must_match_path() {
        let model = LqModel::zero(1, 1, 1.0).unwrap();
        let ric = solve_riccati(&model, 10).unwrap();
        let qv = QuadraticValue::new(&model, &ric).unwrap();
        let path = generate_common_path(0.0, 1.0, 10, 5).unwrap();
        let other = generate_common_path(0.0, 1.0, 20, 5).unwrap();
        let schedule = FeedbackSchedule::optimal(&qv, &path.times()).unwrap();
        let init = gaussian_cloud(4, &[0.0], 1.0, 1).unwrap();
        assert!(simulate_lq(&model, &schedule, &init, &other).is_err());
        assert!(simulate_lq(&model, &schedule, &EmpiricalMeasure::point_mass(&[0.0]).unwrap(), &path).is_err());
    }

    #[test]
    fn zero_model_closed_loop_matches_uncontrolled() {
        let model = LqModel::builder(1, 1)
            .a(m1(0.5))
            .abar(m1(-0.2))
            .c(m1(0.3))
            .cbar(m1(0.1))
            .r(m1(1.0))
            .build()
            .unwrap();
        let ric = solve_riccati(&model, 100).unwrap();
        let path = generate_common_path(0.0, 1.0, 100, 8).unwrap();
        let init = gaussian_cloud(50, &[1.0], 0.5, 2).unwrap();
        let closed = simulate_lq_closed_loop(&model, &ric, &init, &path).unwrap();
        let free = simulate_lq(&model, &NoControl { control_dim: 1 }, &init, &path).unwrap();
        assert_eq!(closed.states_at(100), free.states_at(100));
        assert!(closed.controls_at(40).iter().all(|&u| u == 0.0));
    }

    #[test]
    fn inert_model_keeps_particles_fixed() {
        let model = LqModel::builder(2, 1).q(DMatrix::identity(2, 2)).r(m1(1.0)).build().unwrap();
        let ric = solve_riccati(&model, 10).unwrap();
        let path = generate_common_path(0.0, 1.0, 10, 8).unwrap();
        let init = gaussian_cloud(10, &[1.0, -1.0], 0.5, 2).unwrap();
        let ens = simulate_lq_closed_loop(&model, &ric, &init, &path).unwrap();
        assert_eq!(ens.states_at(10), init.as_slice());
    }

    #[test]
    fn blow_up_is_reported() {
        let coeffs = CoefficientSet::new(1, 0, |_, x, _, _, out| out[0] = x[0] * 1e200, |_, _, _, _, out| out[0] = 0.0, 1.0, 1.0)
            .unwrap();
        let init = EmpiricalMeasure::new(vec![1e200, 1e200], 1).unwrap();
        let path = generate_common_path(0.0, 1.0, 5, 1).unwrap();
        assert!(matches!(
            simulate_forward(&coeffs, &NoControl { control_dim: 0 }, &init, &path),
            Err(Error::NonFinite { step: 1, .. })
        ));
    }

    #[test]
    fn csv_layouts() {
        let init = EmpiricalMeasure::new(vec![0.0, 1.0], 1).unwrap();
        let path = generate_common_path(0.0, 1.0, 2, 1).unwrap();
        let ens = simulate_forward(&zero_coeffs(1), &NoControl { control_dim: 1 }, &init, &path).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,particle_id,x1");
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().next().unwrap(), "t,dW");
    }
}
