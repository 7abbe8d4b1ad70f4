//! Equal-weight empirical measures on ℝⁿ and the functionals built on them.
//!
//! Every law handled by the crate is a finite sample cloud: initial draws,
//! particle ensembles at a fixed time, or the image of a cloud under a
//! control map. The quadratic functionals here are the building blocks of the
//! value function and of the lifted running and terminal costs:
//!
//! ```text
//! μ̄          = (1/N) Σ xᵢ
//! μ̄²(Π)      = (1/N) Σ xᵢᵀ Π xᵢ
//! Var(μ)(Π)  = μ̄²(Π) − μ̄ᵀ Π μ̄
//! ```
//!
//! The Wasserstein-2 distance is computed exactly: by the quantile coupling in
//! one dimension and by an optimal assignment otherwise.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest cloud accepted by the exact assignment solver (n ≥ 2).
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;

/// A probability measure given by N equally weighted points in ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
    dim: usize,
}

/// Mean, quadratic moment and variance functional of a pushforward cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PushforwardStats {
    pub mean: DVector<f64>,
    pub quad: f64,
    pub variance: f64,
}

impl EmpiricalMeasure {
    /// Builds a measure from row-major samples (`N·dim` entries).
    pub fn new(samples: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be at least 1".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidMeasure("at least one sample is required".into()));
        }
        if samples.len() % dim != 0 {
            return Err(Error::InvalidMeasure(format!(
                "{} entries do not split into samples of length {dim}",
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "non-finite entry in sample {}",
                pos / dim
            )));
        }
        Ok(Self { samples, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "sample row",
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(rows.concat(), dim)
    }

    /// The Dirac mass δ_x.
    pub fn point_mass(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.len())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    /// Flat row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.samples
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        self.check_dim("translation", shift.len())?;
        let samples = self
            .samples()
            .flat_map(|x| x.iter().zip(shift).map(|(a, c)| a + c))
            .collect();
        Self::new(samples, self.dim)
    }

    /// Reorders samples; `order[i]` is the source index of the new i-th sample.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "permutation",
                expected: self.len(),
                found: order.len(),
            });
        }
        let mut seen = vec![false; order.len()];
        for &i in order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("order is not a permutation"));
            }
        }
        let samples = order.iter().flat_map(|&i| self.sample(i).iter().copied()).collect();
        Self::new(samples, self.dim)
    }

    /// Arithmetic mean of the samples. Like the quadratic functionals it is
    /// invariant, bit for bit, under reordering of the samples.
    pub fn mean(&self) -> DVector<f64> {
        let mut column = Vec::with_capacity(self.len());
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|j| {
                column.clear();
                column.extend(self.samples().map(|x| x[j]));
                order_free_sum(&mut column) / self.len() as f64
            }),
        )
    }

    /// (1/N) Σ xᵢᵀ Π xᵢ.
    pub fn quad_moment(&self, pi: &DMatrix<f64>) -> Result<f64> {
        self.check_square(pi)?;
        let mut terms: Vec<f64> = self.samples().map(|x| quad_slice(pi, x)).collect();
        Ok(order_free_sum(&mut terms) / self.len() as f64)
    }

    /// Var(μ)(Π) = μ̄²(Π) − μ̄ᵀΠμ̄, accumulated on centred samples.
    pub fn variance_functional(&self, pi: &DMatrix<f64>) -> Result<f64> {
        self.check_square(pi)?;
        let m = self.mean();
        let mut centred = vec![0.0; self.dim];
        let mut terms = Vec::with_capacity(self.len());
        for x in self.samples() {
            for (c, (a, b)) in centred.iter_mut().zip(x.iter().zip(m.iter())) {
                *c = a - b;
            }
            terms.push(quad_slice(pi, &centred));
        }
        Ok(order_free_sum(&mut terms) / self.len() as f64)
    }

    /// Image cloud {u(xᵢ)} of the measure under a map into ℝᵏ.
    pub fn pushforward<F>(&self, k: usize, u: F) -> Result<EmpiricalMeasure>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut out = Vec::with_capacity(self.len() * k);
        for x in self.samples() {
            let y = u(x);
            if y.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "control map output",
                    expected: k,
                    found: y.len(),
                });
            }
            out.extend(y);
        }
        EmpiricalMeasure::new(out, k)
    }

    /// Statistics of u_#μ: its mean, its quadratic moment under `r`, and
    /// Var(u_#μ)(R).
    pub fn pushforward_stats<F>(&self, u: F, r: &DMatrix<f64>) -> Result<PushforwardStats>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        if !r.is_square() {
            return Err(Error::invalid("pushforward weight matrix must be square"));
        }
        let image = self.pushforward(r.nrows(), u)?;
        Ok(PushforwardStats {
            mean: image.mean(),
            quad: image.quad_moment(r)?,
            variance: image.variance_functional(r)?,
        })
    }

    /// Writes the cloud as CSV with header `x1,…,xn`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.dim).map(|j| format!("x{j}")))?;
        for x in self.samples() {
            w.write_record(x.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a cloud written by [`EmpiricalMeasure::write_csv`]. The header
    /// row is mandatory and must name the columns `x1..xn` in order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        let dim = header.len();
        for (j, name) in header.iter().enumerate() {
            if name.trim() != format!("x{}", j + 1) {
                return Err(Error::InvalidMeasure(format!(
                    "header column {} is `{name}`, expected `x{}`",
                    j + 1,
                    j + 1
                )));
            }
        }
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidMeasure(format!("cannot parse `{field}` as a number"))
                })?;
                samples.push(v);
            }
        }
        Self::new(samples, dim)
    }

    fn check_dim(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    fn check_square(&self, pi: &DMatrix<f64>) -> Result<()> {
        self.check_dim("weight matrix rows", pi.nrows())?;
        self.check_dim("weight matrix cols", pi.ncols())
    }
}

/// Sums after sorting, so the result does not depend on input order.
pub(crate) fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

fn quad_slice(pi: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += pi[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact W₂ between two equal-size empirical measures, with the default
/// assignment cap.
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    wasserstein2_with_cap(mu, nu, DEFAULT_ASSIGNMENT_CAP)
}

pub fn wasserstein2_with_cap(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cap: usize,
) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            what: "wasserstein2 dimension",
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    if mu.len() != nu.len() {
        return Err(Error::UnequalSampleCount {
            left: mu.len(),
            right: nu.len(),
        });
    }
    let n = mu.len();
    let mean_cost = if mu.dim() == 1 {
        let mut a = mu.as_slice().to_vec();
        let mut b = nu.as_slice().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let mut terms: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
        order_free_sum(&mut terms) / n as f64
    } else {
        if n > cap {
            return Err(Error::AssignmentCap { n, cap });
        }
        let cost: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| squared_distance(mu.sample(i), nu.sample(j))))
            .collect();
        let assignment = min_cost_assignment(&cost, n);
        let mut terms: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
        order_free_sum(&mut terms) / n as f64
    };
    Ok(mean_cost.max(0.0).sqrt())
}

/// Minimum-cost perfect matching on a dense n×n cost matrix (row-major).
/// Returns `assignment[row] = column`.
///
/// Shortest augmenting path with row/column potentials, O(n³).
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud1(v: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(v.to_vec(), 1).unwrap()
    }

    /// Exhaustive minimum over all pairings; test-only oracle.
    fn brute_force_w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        fn permute(k: usize, perm: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
            if k == perm.len() {
                f(perm);
                return;
            }
            for i in k..perm.len() {
                perm.swap(k, i);
                permute(k + 1, perm, f);
                perm.swap(k, i);
            }
        }
        let n = mu.len();
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permute(0, &mut perm, &mut |p| {
            let c: f64 = p
                .iter()
                .enumerate()
                .map(|(i, &j)| squared_distance(mu.sample(i), nu.sample(j)))
                .sum();
            best = best.min(c);
        });
        (best / n as f64).sqrt()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(EmpiricalMeasure::point_mass(&[2.0, -1.0]).unwrap().mean().as_slice(), &[2.0, -1.0]);
        assert_eq!(cloud1(&[-1.0, 1.0]).mean()[0], 0.0);
        assert_eq!(cloud1(&[1.0, 2.0, 3.0, 6.0]).mean()[0], 3.0);
    }

    #[test]
    fn quad_and_variance_examples() {
        let mu = cloud1(&[1.0, -1.0]);
        assert_eq!(mu.quad_moment(&DMatrix::zeros(1, 1)).unwrap(), 0.0);
        assert_eq!(mu.quad_moment(&DMatrix::from_element(1, 1, 2.0)).unwrap(), 2.0);
        assert_eq!(mu.variance_functional(&DMatrix::identity(1, 1)).unwrap(), 1.0);

        let a = EmpiricalMeasure::point_mass(&[3.0, 4.0]).unwrap();
        assert_eq!(a.quad_moment(&DMatrix::identity(2, 2)).unwrap(), 25.0);
        let pi = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert_eq!(a.variance_functional(&pi).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mu = cloud1(&[1.0, 2.0]);
        assert!(matches!(
            mu.quad_moment(&DMatrix::identity(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(EmpiricalMeasure::new(vec![1.0, f64::NAN], 1).is_err());
        assert!(EmpiricalMeasure::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(EmpiricalMeasure::new(vec![], 1).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let mu = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = DMatrix::identity(2, 2);
        let zero = mu.pushforward_stats(|_| vec![0.0, 0.0], &r).unwrap();
        assert_eq!(zero.mean.as_slice(), &[0.0, 0.0]);
        assert_eq!((zero.quad, zero.variance), (0.0, 0.0));

        let pi = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let id = mu.pushforward_stats(|x| x.to_vec(), &pi).unwrap();
        assert_eq!(id.mean, mu.mean());
        assert_eq!(id.quad, mu.quad_moment(&pi).unwrap());
        assert_eq!(id.variance, mu.variance_functional(&pi).unwrap());

        // K = [[1, 2], [3, 4]], samples e1, e2 -> images (1,3) and (2,4).
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = mu
            .pushforward_stats(|x| (&k * DVector::from_column_slice(x)).as_slice().to_vec(), &r)
            .unwrap();
        assert_eq!(s.mean.as_slice(), &[1.5, 3.5]);
        assert_eq!(s.quad, (1.0 + 9.0 + 4.0 + 16.0) / 2.0);
        assert_eq!(s.variance, 15.0 - (1.5 * 1.5 + 3.5 * 3.5));

        assert!(mu.pushforward_stats(|_| vec![0.0], &r).is_err());
    }

    #[test]
    fn w2_examples() {
        let a = EmpiricalMeasure::point_mass(&[1.0, 2.0]).unwrap();
        let b = EmpiricalMeasure::point_mass(&[4.0, 6.0]).unwrap();
        assert!((wasserstein2(&a, &b).unwrap() - 5.0).abs() < 1e-15);

        let mu = cloud1(&[0.3, -1.2, 2.5, 0.0]);
        let nu = cloud1(&[1.0, 1.1, -0.7, 3.3]);
        let exact = brute_force_w2(&mu, &nu);
        assert!((wasserstein2(&mu, &nu).unwrap() - exact).abs() < 1e-14);
    }

    #[test]
    fn w2_rejects_bad_inputs() {
        let mu = cloud1(&[0.0, 1.0]);
        let nu = cloud1(&[0.0, 1.0, 2.0]);
        assert!(matches!(wasserstein2(&mu, &nu), Err(Error::UnequalSampleCount { .. })));
        let planar = EmpiricalMeasure::new(vec![0.0; 4], 2).unwrap();
        assert!(matches!(wasserstein2(&mu, &planar), Err(Error::DimensionMismatch { .. })));
        let big = EmpiricalMeasure::new(vec![0.0; 20], 2).unwrap();
        assert!(matches!(
            wasserstein2_with_cap(&big, &big, 5),
            Err(Error::AssignmentCap { n: 10, cap: 5 })
        ));
    }

    #[test]
    fn csv_roundtrip_and_header_check() {
        let mu = EmpiricalMeasure::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x1,x2\n"));
        assert_eq!(EmpiricalMeasure::read_csv(buf.as_slice()).unwrap(), mu);
        assert!(EmpiricalMeasure::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    fn cloud_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        (1usize..=7).prop_flat_map(move |n| prop::collection::vec(-5.0f64..5.0, n * dim))
    }

    proptest! {
        #[test]
        fn assignment_matches_permutation_oracle(
            dim in 1usize..=3,
            seed in prop::collection::vec(-5.0f64..5.0, 3 * 3 * 7),
            n in 1usize..=7,
        ) {
            let a = EmpiricalMeasure::new(seed[..n * dim].to_vec(), dim).unwrap();
            let b = EmpiricalMeasure::new(seed[3 * 7..3 * 7 + n * dim].to_vec(), dim).unwrap();
            let exact = brute_force_w2(&a, &b);
            prop_assert!((wasserstein2(&a, &b).unwrap() - exact).abs() <= 1e-12 * (1.0 + exact));
        }

        #[test]
        fn quantile_formula_equals_assignment(
            v in prop::collection::vec(-5.0f64..5.0, 2..=16),
        ) {
            let n = v.len() / 2;
            let a = cloud1(&v[..n]);
            let b = cloud1(&v[n..2 * n]);
            let cost: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).map({
                    let a = &a; let b = &b;
                    move |j| squared_distance(a.sample(i), b.sample(j))
                }))
                .collect();
            let assign = min_cost_assignment(&cost, n);
            let via_assignment =
                (assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64).sqrt();
            prop_assert!((wasserstein2(&a, &b).unwrap() - via_assignment).abs() <= 1e-12);
        }

        #[test]
        fn metric_axioms(
            dim in 1usize..=2,
            v in prop::collection::vec(-3.0f64..3.0, 3 * 2 * 6),
            n in 1usize..=6,
        ) {
            let take = |k: usize| EmpiricalMeasure::new(v[k * 12..k * 12 + n * dim].to_vec(), dim).unwrap();
            let (a, b, c) = (take(0), take(1), take(2));
            prop_assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
            let ab = wasserstein2(&a, &b).unwrap();
            prop_assert!((ab - wasserstein2(&b, &a).unwrap()).abs() <= 1e-12);
            let ac = wasserstein2(&a, &c).unwrap();
            let bc = wasserstein2(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn functionals_permutation_invariant(v in cloud_strategy(2), shift in 0usize..7) {
            let mu = EmpiricalMeasure::new(v, 2).unwrap();
            let n = mu.len();
            let order: Vec<usize> = (0..n).map(|i| (i * 5 + shift) % n).collect();
            prop_assume!({ let mut o = order.clone(); o.sort(); o == (0..n).collect::<Vec<_>>() });
            let p = mu.permuted(&order).unwrap();
            let pi = DMatrix::from_row_slice(2, 2, &[1.3, -0.4, -0.4, 0.7]);
            prop_assert_eq!(mu.mean(), p.mean());
            prop_assert_eq!(mu.quad_moment(&pi).unwrap(), p.quad_moment(&pi).unwrap());
            prop_assert_eq!(mu.variance_functional(&pi).unwrap(), p.variance_functional(&pi).unwrap());
        }

        #[test]
        fn translation_identity(v in cloud_strategy(2), c0 in -4.0f64..4.0, c1 in -4.0f64..4.0) {
            let mu = EmpiricalMeasure::new(v, 2).unwrap();
            let shifted = mu.translated(&[c0, c1]).unwrap();
            let d = wasserstein2(&mu, &shifted).unwrap();
            prop_assert!((d - (c0 * c0 + c1 * c1).sqrt()).abs() <= 1e-12 * (1.0 + d));
        }

        #[test]
        fn variance_nonnegative_for_psd(v in cloud_strategy(2), l in prop::collection::vec(-2.0f64..2.0, 4)) {
            let mu = EmpiricalMeasure::new(v, 2).unwrap();
            let factor = DMatrix::from_row_slice(2, 2, &l);
            let pi = &factor * factor.transpose();
            prop_assert!(mu.variance_functional(&pi).unwrap() >= -1e-12);
        }

        #[test]
        fn variance_translation_invariant(v in cloud_strategy(1), c in -10.0f64..10.0) {
            let mu = EmpiricalMeasure::new(v, 1).unwrap();
            let pi = DMatrix::from_element(1, 1, 1.7);
            let a = mu.variance_functional(&pi).unwrap();
            let b = mu.translated(&[c]).unwrap().variance_functional(&pi).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn affine_pushforward_mean(v in cloud_strategy(2), k in prop::collection::vec(-2.0f64..2.0, 4), c in prop::collection::vec(-2.0f64..2.0, 2)) {
            let mu = EmpiricalMeasure::new(v, 2).unwrap();
            let kmat = DMatrix::from_row_slice(2, 2, &k);
            let cvec = DVector::from_vec(c);
            let s = mu
                .pushforward_stats(|x| (&kmat * DVector::from_column_slice(x) + &cvec).as_slice().to_vec(), &DMatrix::identity(2, 2))
                .unwrap();
            let expected = &kmat * mu.mean() + &cvec;
            prop_assert!((s.mean - expected).amax() <= 1e-12);
        }
    }
}
