//! Backward SDEs: g-expectations, least-squares Monte-Carlo backward
//! induction, backward semigroups and the recursive LQ cost.
//!
//! All solvers work on the equation
//!
//! ```text
//! −dY = f(t, ·, Y, Z) dt − Z dW,   Y_T = ζ,
//! ```
//!
//! discretised explicitly on the grid of the forward simulation:
//!
//! ```text
//! Ỹ_m = E[Y_{m+1} | F_m],   Z_m = E[(Y_{m+1} − Ỹ_m) ΔW_m | F_m] / h,
//! Y_m = Ỹ_m + h f(t_m, ·, Ỹ_m, Z_m),
//! ```
//!
//! with the conditional expectations replaced by regressions on a polynomial
//! basis in per-path features.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::mkvsde::{simulate_lq, CommonNoisePath, ParticleEnsemble, Policy};
use crate::lq::QuadraticValue;
use crate::riccati::{LqModel, RiccatiState};

/// Ridge added to the regression Gram matrix when it is (numerically) singular.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Relative eigenvalue floor below which a Gram matrix counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Cross-path statistics of Ỹ at the current backward step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YLaw {
    pub mean: f64,
    pub std: f64,
}

/// Everything a driver may look at on one path at one node.
#[derive(Debug, Clone, Copy)]
pub struct DriverContext<'a> {
    /// Absolute node index (offset-corrected for sub-windows).
    pub node: usize,
    pub t: f64,
    pub path: usize,
    pub features: &'a [f64],
    pub y_law: YLaw,
}

/// A BSDE driver f(t, ·, y, z).
pub trait Driver: Sync {
    fn eval(&self, ctx: &DriverContext<'_>, y: f64, z: f64) -> f64;

    fn lipschitz(&self) -> f64;

    /// Some(β) when the driver is exactly g(z) = βz.
    fn linear_beta(&self) -> Option<f64> {
        None
    }
}

/// A g-expectation driver g(z) with g(0) = 0.
pub struct GDriver<F> {
    g: F,
    lipschitz: f64,
}

impl<F: Fn(f64) -> f64 + Sync> GDriver<F> {
    pub fn new(g: F, lipschitz: f64) -> Result<Self> {
        if g(0.0) != 0.0 {
            return Err(Error::Assumption(format!("g(0) = {} but g-expectations need g(0) = 0", g(0.0))));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::invalid("driver Lipschitz constant must be finite and non-negative"));
        }
        Ok(Self { g, lipschitz })
    }
}

impl<F: Fn(f64) -> f64 + Sync> Driver for GDriver<F> {
    fn eval(&self, _: &DriverContext<'_>, _y: f64, z: f64) -> f64 {
        (self.g)(z)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// g(z) = βz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearG {
    pub beta: f64,
}

impl Driver for LinearG {
    fn eval(&self, _: &DriverContext<'_>, _y: f64, z: f64) -> f64 {
        self.beta * z
    }

    fn lipschitz(&self) -> f64 {
        self.beta.abs()
    }

    fn linear_beta(&self) -> Option<f64> {
        Some(self.beta)
    }
}

/// f = c(path, node) + βz with a tabulated running cost, indexed by absolute node.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCostDriver {
    /// [path · nodes + node]
    costs: Vec<f64>,
    nodes: usize,
    beta: f64,
}

impl RunningCostDriver {
    pub fn new(costs: Vec<f64>, nodes: usize, beta: f64) -> Result<Self> {
        if nodes == 0 || costs.len() % nodes != 0 {
            return Err(Error::invalid("running cost table is not path × node shaped"));
        }
        Ok(Self { costs, nodes, beta })
    }

    pub fn cost(&self, path: usize, node: usize) -> f64 {
        self.costs[path * self.nodes + node]
    }

    pub fn n_paths(&self) -> usize {
        self.costs.len() / self.nodes
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Driver for RunningCostDriver {
    fn eval(&self, ctx: &DriverContext<'_>, _y: f64, z: f64) -> f64 {
        self.cost(ctx.path, ctx.node) + self.beta * z
    }

    fn lipschitz(&self) -> f64 {
        self.beta.abs()
    }
}

/// A general driver from a closure.
pub struct FnDriver<F> {
    f: F,
    lipschitz: f64,
}

impl<F> FnDriver<F>
where
    F: Fn(&DriverContext<'_>, f64, f64) -> f64 + Sync,
{
    pub fn new(f: F, lipschitz: f64) -> Self {
        Self { f, lipschitz }
    }
}

impl<F> Driver for FnDriver<F>
where
    F: Fn(&DriverContext<'_>, f64, f64) -> f64 + Sync,
{
    fn eval(&self, ctx: &DriverContext<'_>, y: f64, z: f64) -> f64 {
        (self.f)(ctx, y, z)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Forward inputs of a backward solve: grid, Brownian increments and
/// regression features for P paths.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdePaths {
    times: Vec<f64>,
    /// [p · M + m]
    dw: Vec<f64>,
    /// [(p · (M+1) + m) · F + f]
    features: Vec<f64>,
    n_features: usize,
    node_offset: usize,
}

impl BsdePaths {
    pub fn new(times: Vec<f64>, dw: Vec<f64>, features: Vec<f64>, n_features: usize) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("a backward grid needs at least two nodes"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid times must increase"));
        }
        let steps = times.len() - 1;
        if dw.is_empty() || dw.len() % steps != 0 {
            return Err(Error::invalid("increments are not path × step shaped"));
        }
        let n_paths = dw.len() / steps;
        if features.len() != n_paths * (steps + 1) * n_features {
            return Err(Error::DimensionMismatch {
                what: "feature table",
                expected: n_paths * (steps + 1) * n_features,
                found: features.len(),
            });
        }
        if features.iter().chain(dw.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "forward features", step: 0 });
        }
        Ok(Self {
            times,
            dw,
            features,
            n_features,
            node_offset: 0,
        })
    }

    /// Paths whose only feature is the Brownian motion itself.
    pub fn from_noise_paths(paths: &[CommonNoisePath]) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::invalid("no paths"))?;
        check_same_grid(paths)?;
        let mut dw = Vec::with_capacity(paths.len() * first.steps());
        let mut features = Vec::with_capacity(paths.len() * (first.steps() + 1));
        for p in paths {
            dw.extend_from_slice(p.increments());
            features.extend(p.brownian());
        }
        Self::new(first.times(), dw, features, 1)
    }

    /// Declares that local node 0 is node `offset` of an enclosing grid.
    pub fn with_node_offset(mut self, offset: usize) -> Self {
        self.node_offset = offset;
        self
    }

    pub fn n_paths(&self) -> usize {
        self.dw.len() / self.steps()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn node_offset(&self) -> usize {
        self.node_offset
    }

    pub fn dw(&self, path: usize, m: usize) -> f64 {
        self.dw[path * self.steps() + m]
    }

    pub fn features(&self, path: usize, m: usize) -> &[f64] {
        let base = (path * (self.steps() + 1) + m) * self.n_features;
        &self.features[base..base + self.n_features]
    }

    /// W(t_M) − W(t_0) on each path.
    pub fn brownian_terminals(&self) -> Vec<f64> {
        self.dw.chunks_exact(self.steps()).map(|c| c.iter().sum()).collect()
    }

    /// Local nodes from..=to as a standalone window with the right offset.
    pub fn window(&self, from: usize, to: usize) -> Result<BsdePaths> {
        if !(from < to && to <= self.steps()) {
            return Err(Error::invalid(format!("invalid window [{from}, {to}] on {} steps", self.steps())));
        }
        let m = self.steps();
        let f = self.n_features;
        let mut dw = Vec::with_capacity(self.n_paths() * (to - from));
        let mut features = Vec::with_capacity(self.n_paths() * (to - from + 1) * f);
        for p in 0..self.n_paths() {
            dw.extend_from_slice(&self.dw[p * m + from..p * m + to]);
            let base = p * (m + 1) * f;
            features.extend_from_slice(&self.features[base + from * f..base + (to + 1) * f]);
        }
        Ok(BsdePaths {
            times: self.times[from..=to].to_vec(),
            dw,
            features,
            n_features: f,
            node_offset: self.node_offset + from,
        })
    }
}

fn check_same_grid(paths: &[CommonNoisePath]) -> Result<()> {
    let first = &paths[0];
    for p in paths {
        if p.steps() != first.steps() || p.t0() != first.t0() || p.horizon() != first.horizon() {
            return Err(Error::invalid("all paths must share one time grid"));
        }
    }
    Ok(())
}

/// Regression basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Basis {
    Linear,
    #[default]
    Quadratic,
}

impl Basis {
    /// Number of basis functions including the intercept.
    pub fn size(self, n_features: usize) -> usize {
        match self {
            Basis::Linear => 1 + n_features,
            Basis::Quadratic => 1 + n_features + n_features * (n_features + 1) / 2,
        }
    }
}

/// Least-squares projection onto the basis at one node.
struct Projector {
    /// Centred basis columns, P × B.
    design: DMatrix<f64>,
    /// Inverse of the (possibly ridged) Gram matrix / P.
    gram_inv: DMatrix<f64>,
    ridged: bool,
}

impl Projector {
    fn new(rows: &[&[f64]], basis: Basis) -> Result<Self> {
        let n_paths = rows.len();
        let nf = rows.first().map_or(0, |r| r.len());
        // standardise, dropping constant columns
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..nf {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n_paths as f64;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n_paths as f64;
            let sd = var.sqrt();
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                continue;
            }
            cols.push(rows.iter().map(|r| (r[j] - mean) / sd).collect());
        }
        let mut funcs = cols.clone();
        if basis == Basis::Quadratic {
            for a in 0..cols.len() {
                for b in a..cols.len() {
                    funcs.push(cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).collect());
                }
            }
        }
        for f in &mut funcs {
            let mean = f.iter().sum::<f64>() / n_paths as f64;
            for v in f.iter_mut() {
                *v -= mean;
            }
        }
        let b = funcs.len();
        let design = DMatrix::from_fn(n_paths, b, |i, j| funcs[j][i]);
        if b == 0 {
            return Ok(Self {
                design,
                gram_inv: DMatrix::zeros(0, 0),
                ridged: false,
            });
        }
        let mut gram = design.transpose() * &design / n_paths as f64;
        let eig = gram.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let ridged = !(min > RANK_TOLERANCE * max);
        if ridged {
            for i in 0..b {
                gram[(i, i)] += RIDGE_LAMBDA;
            }
        }
        let gram_inv = gram
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::NonFinite { what: "regression Gram matrix", step: 0 })?;
        Ok(Self {
            design,
            gram_inv,
            ridged,
        })
    }

    /// Fitted values; the intercept is handled separately so the sample
    /// mean of the response is preserved.
    fn project(&self, y: &[f64]) -> Vec<f64> {
        let n_paths = y.len();
        let mean = y.iter().sum::<f64>() / n_paths as f64;
        if self.design.ncols() == 0 {
            return vec![mean; n_paths];
        }
        let yc = DVector::from_iterator(n_paths, y.iter().map(|v| v - mean));
        let rhs = self.design.tr_mul(&yc) / n_paths as f64;
        let coef = &self.gram_inv * rhs;
        let fitted = &self.design * coef;
        fitted.iter().map(|v| mean + v).collect()
    }
}

/// Output of a backward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    times: Vec<f64>,
    /// [m · P + p]
    y: Vec<f64>,
    /// [m · P + p], m < M
    z: Vec<f64>,
    /// sd of ζ + Σ_{j ≥ m} h f_j across paths / √P, per node
    stderr: Vec<f64>,
    n_paths: usize,
    ridge_nodes: Vec<usize>,
}

impl BsdeSolution {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Cross-path average of Y at the first node.
    pub fn y0(&self) -> f64 {
        mean(self.y_at(0))
    }

    pub fn y0_stderr(&self) -> f64 {
        self.stderr[0]
    }

    pub fn y_at(&self, m: usize) -> &[f64] {
        &self.y[m * self.n_paths..(m + 1) * self.n_paths]
    }

    pub fn z_at(&self, m: usize) -> &[f64] {
        &self.z[m * self.n_paths..(m + 1) * self.n_paths]
    }

    /// Nodes (absolute) where the regression fell back to the ridge.
    pub fn ridge_nodes(&self) -> &[usize] {
        &self.ridge_nodes
    }

    /// CSV with columns t, Y_mean, Y_stderr, Z_mean.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "Y_mean", "Y_stderr", "Z_mean"])?;
        for m in 0..=self.steps() {
            let z = if m < self.steps() { mean(self.z_at(m)) } else { f64::NAN };
            w.write_record([
                self.times[m].to_string(),
                mean(self.y_at(m)).to_string(),
                self.stderr[m].to_string(),
                if z.is_nan() { String::new() } else { z.to_string() },
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// (mean, sample standard deviation).
pub fn mean_and_sd(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

/// Importance-weighted estimate of 𝓔_g(χ) for g(z) = βz:
/// mean of χ·exp(βW_T − β²T/2) with its standard error.
pub fn g_expectation_girsanov(beta: f64, terminal: &[f64], brownian_terminals: &[f64], horizon: f64) -> Result<(f64, f64)> {
    if terminal.len() != brownian_terminals.len() {
        return Err(Error::UnequalSampleCount {
            left: terminal.len(),
            right: brownian_terminals.len(),
        });
    }
    if terminal.len() < 2 {
        return Err(Error::invalid("g-expectation needs at least two samples"));
    }
    let weighted: Vec<f64> = terminal
        .iter()
        .zip(brownian_terminals)
        .map(|(x, w)| x * (beta * w - 0.5 * beta * beta * horizon).exp())
        .collect();
    let (m, sd) = mean_and_sd(&weighted);
    Ok((m, sd / (weighted.len() as f64).sqrt()))
}

/// LSMC backward induction with the default quadratic basis.
pub fn solve_bsde_lsmc(driver: &dyn Driver, terminal: &[f64], paths: &BsdePaths) -> Result<BsdeSolution> {
    solve_bsde_lsmc_with(driver, terminal, paths, Basis::default())
}

pub fn solve_bsde_lsmc_with(driver: &dyn Driver, terminal: &[f64], paths: &BsdePaths, basis: Basis) -> Result<BsdeSolution> {
    let n_paths = paths.n_paths();
    if terminal.len() != n_paths {
        return Err(Error::UnequalSampleCount {
            left: terminal.len(),
            right: n_paths,
        });
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "terminal value", step: paths.steps() });
    }
    let needed = 10 * basis.size(paths.n_features());
    if n_paths < needed {
        return Err(Error::invalid(format!(
            "{n_paths} paths is fewer than 10× the basis size ({needed})"
        )));
    }
    let steps = paths.steps();
    let mut y = vec![0.0; (steps + 1) * n_paths];
    let mut z = vec![0.0; steps * n_paths];
    let mut stderr = vec![0.0; steps + 1];
    y[steps * n_paths..].copy_from_slice(terminal);
    let mut accumulated = terminal.to_vec();
    stderr[steps] = mean_and_sd(&accumulated).1 / (n_paths as f64).sqrt();
    let mut ridge_nodes = Vec::new();

    for m in (0..steps).rev() {
        let h = paths.times[m + 1] - paths.times[m];
        let t = paths.times[m];
        let rows: Vec<&[f64]> = (0..n_paths).map(|p| paths.features(p, m)).collect();
        let proj = Projector::new(&rows, basis)?;
        if proj.ridged {
            ridge_nodes.push(paths.node_offset + m);
        }
        let next = &y[(m + 1) * n_paths..(m + 2) * n_paths];
        let y_tilde = proj.project(next);
        let scaled: Vec<f64> = (0..n_paths)
            .map(|p| (next[p] - y_tilde[p]) * paths.dw(p, m) / h)
            .collect();
        let z_m = proj.project(&scaled);
        let (law_mean, law_sd) = mean_and_sd(&y_tilde);
        let y_law = YLaw {
            mean: law_mean,
            std: law_sd,
        };
        let f: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let ctx = DriverContext {
                    node: paths.node_offset + m,
                    t,
                    path: p,
                    features: paths.features(p, m),
                    y_law,
                };
                driver.eval(&ctx, y_tilde[p], z_m[p])
            })
            .collect();
        let current = &mut y[m * n_paths..(m + 1) * n_paths];
        for p in 0..n_paths {
            current[p] = y_tilde[p] + h * f[p];
            accumulated[p] += h * f[p];
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "BSDE value", step: paths.node_offset + m });
        }
        z[m * n_paths..(m + 1) * n_paths].copy_from_slice(&z_m);
        stderr[m] = mean_and_sd(&accumulated).1 / (n_paths as f64).sqrt();
    }
    ridge_nodes.reverse();
    Ok(BsdeSolution {
        times: paths.times.clone(),
        y,
        z,
        stderr,
        n_paths,
        ridge_nodes,
    })
}

/// 𝓖_{t,t+δ}[η]: the backward solve on the window's grid, returning (Y_t, stderr).
pub fn backward_semigroup(driver: &dyn Driver, eta: &[f64], window: &BsdePaths) -> Result<(f64, f64)> {
    let sol = solve_bsde_lsmc(driver, eta, window)?;
    Ok((sol.y0(), sol.y0_stderr()))
}

/// Monte-Carlo mean with standard error across common-noise paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub j_g: f64,
    pub stderr: f64,
    /// One entry per common-noise path.
    pub samples: Vec<f64>,
}

impl CostEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("a cost estimate needs at least two paths"));
        }
        let (m, sd) = mean_and_sd(&samples);
        Ok(Self {
            j_g: m,
            stderr: sd / (samples.len() as f64).sqrt(),
            samples,
        })
    }

    /// Paired difference self − other on common random numbers.
    pub fn paired_difference(&self, other: &CostEstimate) -> Result<CostEstimate> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::UnequalSampleCount {
                left: self.samples.len(),
                right: other.samples.len(),
            });
        }
        Self::from_samples(self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect())
    }
}

/// f⁰(μ, u) = Var(μ)(Q) + μ̄ᵀ(Q+Q̄)μ̄ + (1/N) Σ uᵢᵀRuᵢ on flat particle blocks.
pub fn lq_running_cost(model: &LqModel, states: &[f64], controls: &[f64]) -> f64 {
    let n = model.n();
    let k = model.k();
    let q_hat = model.q() + model.qbar();
    let mut value = lq_quadratic_cloud(model.q(), &q_hat, states, n);
    if k > 0 {
        let n_particles = states.len() / n;
        let r = model.r();
        let mut acc = 0.0;
        for u in controls.chunks_exact(k) {
            for i in 0..k {
                for j in 0..k {
                    acc += u[i] * r[(i, j)] * u[j];
                }
            }
        }
        value += acc / n_particles as f64;
    }
    value
}

/// Φ⁰(μ) = Var(μ)(G) + μ̄ᵀ(G+Ḡ)μ̄ on a flat particle block.
pub fn lq_terminal_cost(model: &LqModel, states: &[f64]) -> f64 {
    lq_quadratic_cloud(model.g(), &(model.g() + model.gbar()), states, model.n())
}

fn lq_quadratic_cloud(dev: &DMatrix<f64>, full: &DMatrix<f64>, states: &[f64], n: usize) -> f64 {
    let n_particles = states.len() / n;
    let mut m = vec![0.0; n];
    for x in states.chunks_exact(n) {
        for j in 0..n {
            m[j] += x[j];
        }
    }
    for v in &mut m {
        *v /= n_particles as f64;
    }
    let mut var = 0.0;
    let mut d = vec![0.0; n];
    for x in states.chunks_exact(n) {
        for j in 0..n {
            d[j] = x[j] - m[j];
        }
        for i in 0..n {
            for j in 0..n {
                var += d[i] * dev[(i, j)] * d[j];
            }
        }
    }
    var /= n_particles as f64;
    let mut mean_part = 0.0;
    for i in 0..n {
        for j in 0..n {
            mean_part += m[i] * full[(i, j)] * m[j];
        }
    }
    var + mean_part
}

/// Ψ_m = exp(β(W_m − W_0) − β²(t_m − t_0)/2) along a path.
pub fn girsanov_weights(beta: f64, path: &CommonNoisePath) -> Vec<f64> {
    path.brownian()
        .iter()
        .enumerate()
        .map(|(m, w)| (beta * w - 0.5 * beta * beta * (path.time(m) - path.t0())).exp())
        .collect()
}

/// ½[Ψ_T Φ⁰(ρ_T) + Σ_m Ψ_m f⁰(ρ_m, u_m) h] for one ensemble.
pub fn pathwise_lq_cost(model: &LqModel, ens: &ParticleEnsemble) -> Result<f64> {
    if ens.dim() != model.n() || ens.control_dim() != model.k() {
        return Err(Error::DimensionMismatch {
            what: "ensemble vs model dimension",
            expected: model.n(),
            found: ens.dim(),
        });
    }
    let path = ens.path();
    let psi = girsanov_weights(model.beta(), path);
    let h = path.h();
    let steps = ens.steps();
    let mut total = psi[steps] * lq_terminal_cost(model, ens.states_at(steps));
    for m in 0..steps {
        total += psi[m] * lq_running_cost(model, ens.states_at(m), ens.controls_at(m)) * h;
    }
    Ok(0.5 * total)
}

/// J_g from already simulated ensembles, one per common-noise path.
pub fn lq_cost_estimate(model: &LqModel, ensembles: &[ParticleEnsemble]) -> Result<CostEstimate> {
    let first = ensembles.first().ok_or_else(|| Error::invalid("no ensembles"))?;
    for e in ensembles {
        if e.steps() != first.steps() || e.path().t0() != first.path().t0() || e.path().horizon() != first.path().horizon() {
            return Err(Error::invalid("ensembles are on mismatched grids"));
        }
    }
    let samples = ensembles
        .iter()
        .map(|e| pathwise_lq_cost(model, e))
        .collect::<Result<Vec<_>>>()?;
    CostEstimate::from_samples(samples)
}

/// J_g under `policy`, simulating and discarding one ensemble per path.
pub fn lq_cost_from_paths(
    model: &LqModel,
    policy: &dyn Policy,
    initial: &EmpiricalMeasure,
    paths: &[CommonNoisePath],
) -> Result<CostEstimate> {
    if paths.is_empty() {
        return Err(Error::invalid("no paths"));
    }
    check_same_grid(paths)?;
    let samples = paths
        .par_iter()
        .map(|p| pathwise_lq_cost(model, &simulate_lq(model, policy, initial, p)?))
        .collect::<Result<Vec<_>>>()?;
    CostEstimate::from_samples(samples)
}

/// J_g under `policy` with the value-function martingale as control variate.
///
/// Along each path, Ψ_{m+1}V(t_{m+1}, ρ_{m+1}) − E_m[Ψ_{m+1}V(t_{m+1}, ρ_{m+1})]
/// has conditional mean exactly zero under the Euler scheme (each particle is
/// affine in ΔW_m, so the expectation is a Gaussian moment), and half their
/// sum is subtracted from the pathwise cost. The estimator stays unbiased.
pub fn lq_cost_with_control_variate(
    qv: &QuadraticValue<'_>,
    policy: &dyn Policy,
    initial: &EmpiricalMeasure,
    paths: &[CommonNoisePath],
) -> Result<CostEstimate> {
    if paths.is_empty() {
        return Err(Error::invalid("no paths"));
    }
    check_same_grid(paths)?;
    let model = qv.model();
    let samples = paths
        .par_iter()
        .map(|p| {
            let ens = simulate_lq(model, policy, initial, p)?;
            let raw = pathwise_lq_cost(model, &ens)?;
            Ok(raw - 0.5 * value_martingale(qv, &ens)?)
        })
        .collect::<Result<Vec<_>>>()?;
    CostEstimate::from_samples(samples)
}

/// Σ_m Ψ_{m+1}V_{m+1} − E_m[Ψ_{m+1}V_{m+1}] along one ensemble.
fn value_martingale(qv: &QuadraticValue<'_>, ens: &ParticleEnsemble) -> Result<f64> {
    let model = qv.model();
    let (n, k) = (model.n(), model.k());
    let path = ens.path();
    let psi = girsanov_weights(model.beta(), path);
    let h = path.h();
    let beta = model.beta();
    let n_particles = ens.n_particles();
    let mut total = 0.0;
    let mut alpha = vec![0.0; n_particles * n];
    let mut sigma = vec![0.0; n_particles * n];
    for m in 0..ens.steps() {
        let x = ens.states_at(m);
        let u = ens.controls_at(m);
        let xbar = DVector::from_vec(cloud_mean(x, n));
        let mean_drift = model.abar() * &xbar;
        let mean_diff = model.cbar() * &xbar;
        for i in 0..n_particles {
            let xi = DVector::from_column_slice(&x[i * n..(i + 1) * n]);
            let ui = DVector::from_column_slice(&u[i * k..(i + 1) * k]);
            let b = model.a() * &xi + &mean_drift + model.b() * &ui;
            let s = model.c() * &xi + &mean_diff + model.d() * &ui;
            for j in 0..n {
                alpha[i * n + j] = xi[j] + b[j] * h;
                sigma[i * n + j] = s[j];
            }
        }
        let state = qv.riccati().state_at(path.time(m + 1))?;
        let (c0, c1, c2) = value_quadratic_in_noise(&state, &alpha, &sigma, n);
        let w = path.increments()[m];
        let realised = psi[m + 1] * (c0 + c1 * w + c2 * w * w);
        // E[e^{βw − β²h/2}(c0 + c1 w + c2 w²)] for w ~ N(0, h)
        let expected = psi[m] * (c0 + c1 * beta * h + c2 * (h + beta * beta * h * h));
        total += realised - expected;
    }
    Ok(total)
}

/// V(t, ρ(w)) = c0 + c1 w + c2 w² for the cloud xᵢ = αᵢ + σᵢ w.
fn value_quadratic_in_noise(state: &RiccatiState, alpha: &[f64], sigma: &[f64], n: usize) -> (f64, f64, f64) {
    let n_particles = alpha.len() / n;
    let abar = DVector::from_vec(cloud_mean(alpha, n));
    let sbar = DVector::from_vec(cloud_mean(sigma, n));
    let (mut v0, mut v1, mut v2) = (0.0, 0.0, 0.0);
    for i in 0..n_particles {
        let da = DVector::from_iterator(n, (0..n).map(|j| alpha[i * n + j] - abar[j]));
        let ds = DVector::from_iterator(n, (0..n).map(|j| sigma[i * n + j] - sbar[j]));
        let p1_ds = &state.p1 * &ds;
        v0 += da.dot(&(&state.p1 * &da));
        v1 += 2.0 * da.dot(&p1_ds);
        v2 += ds.dot(&p1_ds);
    }
    let np = n_particles as f64;
    let p2_a = &state.p2 * &abar;
    let p2_s = &state.p2 * &sbar;
    (
        v0 / np + abar.dot(&p2_a) + state.phi.dot(&abar) + state.psi,
        v1 / np + 2.0 * sbar.dot(&p2_a) + state.phi.dot(&sbar),
        v2 / np + sbar.dot(&p2_s),
    )
}

fn cloud_mean(states: &[f64], n: usize) -> Vec<f64> {
    let n_particles = states.len() / n;
    let mut m = vec![0.0; n];
    for x in states.chunks_exact(n) {
        for j in 0..n {
            m[j] += x[j];
        }
    }
    for v in &mut m {
        *v /= n_particles as f64;
    }
    m
}

/// Regression features of an ensemble cloud: the mean and the trace of the covariance.
pub fn cloud_features(states: &[f64], n: usize) -> Vec<f64> {
    let n_particles = states.len() / n;
    let mut m = vec![0.0; n];
    for x in states.chunks_exact(n) {
        for j in 0..n {
            m[j] += x[j];
        }
    }
    for v in &mut m {
        *v /= n_particles as f64;
    }
    let mut tr = 0.0;
    for x in states.chunks_exact(n) {
        for j in 0..n {
            tr += (x[j] - m[j]).powi(2);
        }
    }
    m.push(tr / n_particles as f64);
    m
}

/// Backward-solve inputs for the LQ recursive cost on unhalved scale:
/// features, f⁰ table with β, and a caller-chosen terminal value per path.
#[derive(Debug, Clone)]
pub struct LqBsdeBatch {
    pub paths: BsdePaths,
    pub driver: RunningCostDriver,
    pub terminal: Vec<f64>,
}

pub fn lq_bsde_batch<T>(
    model: &LqModel,
    policy: &dyn Policy,
    initial: &EmpiricalMeasure,
    noise: &[CommonNoisePath],
    terminal: T,
) -> Result<LqBsdeBatch>
where
    T: Fn(f64, &EmpiricalMeasure) -> Result<f64> + Sync,
{
    let first = noise.first().ok_or_else(|| Error::invalid("no paths"))?;
    check_same_grid(noise)?;
    let n = model.n();
    let steps = first.steps();
    let per_path = noise
        .par_iter()
        .map(|p| {
            let ens = simulate_lq(model, policy, initial, p)?;
            let mut feats = Vec::with_capacity((steps + 1) * (n + 1));
            let mut costs = Vec::with_capacity(steps + 1);
            for m in 0..=steps {
                feats.extend(cloud_features(ens.states_at(m), n));
                costs.push(if m < steps {
                    lq_running_cost(model, ens.states_at(m), ens.controls_at(m))
                } else {
                    0.0
                });
            }
            let eta = terminal(p.horizon(), &ens.empirical_flow(steps)?)?;
            Ok((p.increments().to_vec(), feats, costs, eta))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dw = Vec::new();
    let mut features = Vec::new();
    let mut costs = Vec::new();
    let mut eta = Vec::new();
    for (d, f, c, e) in per_path {
        dw.extend(d);
        features.extend(f);
        costs.extend(c);
        eta.push(e);
    }
    Ok(LqBsdeBatch {
        paths: BsdePaths::new(first.times(), dw, features, n + 1)?,
        driver: RunningCostDriver::new(costs, steps + 1, model.beta())?,
        terminal: eta,
    })
}
