//! Gaussian kernel density estimation with per-dimension Silverman bandwidths.
//!
//! All evaluation happens in log space. [`KdeModel::logpdf_augmented`] gives
//! the density of the model refitted on `support ∪ {extra}` with the same
//! bandwidth, in O(d) extra work per query instead of a refit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("dimension {0} has zero spread; Silverman bandwidth is degenerate")]
    DegenerateDimension(usize),
    #[error("need at least {needed} support points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("dimension mismatch: model has {expected} columns, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bandwidths must be positive and finite")]
    InvalidBandwidth,
}

/// Per-dimension kernel widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth(Vec<f64>);

impl Bandwidth {
    pub fn new(widths: Vec<f64>) -> Result<Self, DensityError> {
        if widths.is_empty() || widths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(DensityError::InvalidBandwidth);
        }
        Ok(Self(widths))
    }

    pub fn widths(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Silverman's rule, `h_j = σ_j (4 / ((d + 2) n))^(1 / (d + 4))`, with the
/// population standard deviation of each column.
pub fn silverman_bandwidth(data: &Matrix) -> Result<Bandwidth, DensityError> {
    let n = data.nrows();
    if n < 2 {
        return Err(DensityError::TooFewPoints { needed: 2, got: n });
    }
    let d = data.ncols() as f64;
    let factor = (4.0 / ((d + 2.0) * n as f64)).powf(1.0 / (d + 4.0));
    let widths = (0..data.ncols())
        .map(|j| {
            let (_, sigma) = data.column_moments(j);
            if sigma > 0.0 {
                Ok(sigma * factor)
            } else {
                Err(DensityError::DegenerateDimension(j))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Bandwidth::new(widths)
}

/// Which bandwidth the augmented model `support ∪ {x}` uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentedBandwidth {
    /// Keep the bandwidth fitted on the original support.
    #[default]
    Shared,
    /// Recompute Silverman's rule on the augmented support.
    Refit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    support: Matrix,
    bandwidth: Bandwidth,
    inv_h: Vec<f64>,
    /// `(d/2) log 2π + Σ log h_j`: log normalizer of one kernel.
    log_kernel_norm: f64,
    /// `log n + log_kernel_norm`.
    log_norm: f64,
}

/// `log(e^a + e^b)` without overflow. Either argument may be `-inf`.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

impl KdeModel {
    /// Fits on `data`; with no bandwidth given, Silverman's rule is used.
    pub fn fit(data: &Matrix, bandwidth: Option<Bandwidth>) -> Result<Self, DensityError> {
        if data.nrows() == 0 {
            return Err(DensityError::TooFewPoints { needed: 1, got: 0 });
        }
        let bandwidth = match bandwidth {
            Some(b) => b,
            None => silverman_bandwidth(data)?,
        };
        if bandwidth.dim() != data.ncols() {
            return Err(DensityError::DimensionMismatch {
                expected: data.ncols(),
                found: bandwidth.dim(),
            });
        }
        let d = data.ncols() as f64;
        let log_kernel_norm =
            0.5 * d * (2.0 * PI).ln() + bandwidth.widths().iter().map(|h| h.ln()).sum::<f64>();
        Ok(Self {
            support: data.clone(),
            inv_h: bandwidth.widths().iter().map(|h| 1.0 / h).collect(),
            log_norm: (data.nrows() as f64).ln() + log_kernel_norm,
            log_kernel_norm,
            bandwidth,
        })
    }

    pub fn support(&self) -> &Matrix {
        &self.support
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.bandwidth
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn n(&self) -> usize {
        self.support.nrows()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    /// Unnormalized log kernel `-½ Σ_j ((q_j - p_j) / h_j)²`.
    #[inline]
    fn exponent(&self, q: &[f64], p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((a, b), ih) in q.iter().zip(p).zip(&self.inv_h) {
            let z = (a - b) * ih;
            acc += z * z;
        }
        -0.5 * acc
    }

    /// `log Σ_k exp(exponent(q, s_k))`, floored at the largest term.
    fn log_sum_kernels(&self, q: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut buf = Vec::with_capacity(self.n());
        for s in self.support.rows_iter() {
            let e = self.exponent(q, s);
            max = max.max(e);
            buf.push(e);
        }
        let sum: f64 = buf.iter().map(|e| (e - max).exp()).sum();
        max + sum.ln()
    }

    fn check_dim(&self, found: usize) -> Result<(), DensityError> {
        if found != self.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    /// Log density at one point.
    pub fn logpdf_one(&self, q: &[f64]) -> Result<f64, DensityError> {
        self.check_dim(q.len())?;
        Ok(self.log_sum_kernels(q) - self.log_norm)
    }

    /// Log density at each query row.
    pub fn logpdf(&self, queries: &Matrix) -> Result<Vec<f64>, DensityError> {
        self.check_dim(queries.ncols())?;
        Ok(queries
            .rows_iter()
            .map(|q| self.log_sum_kernels(q) - self.log_norm)
            .collect())
    }

    /// Log density at each query row under the model fitted on
    /// `support ∪ {extra}` with this model's bandwidth:
    /// `log((n p(q) + K_h(q, extra)) / (n + 1))`.
    pub fn logpdf_augmented(
        &self,
        extra: &[f64],
        queries: &Matrix,
    ) -> Result<Vec<f64>, DensityError> {
        self.check_dim(extra.len())?;
        self.check_dim(queries.ncols())?;
        let log_n1 = ((self.n() + 1) as f64).ln();
        Ok(queries
            .rows_iter()
            .map(|q| {
                let base = self.log_sum_kernels(q);
                log_add_exp(base, self.exponent(q, extra)) - self.log_kernel_norm - log_n1
            })
            .collect())
    }

    /// Same as [`KdeModel::logpdf_augmented`] but reusing already computed
    /// base log densities for the queries.
    pub(crate) fn augment_from_base(&self, extra: &[f64], query: &[f64], base_logpdf: f64) -> f64 {
        let log_n1 = ((self.n() + 1) as f64).ln();
        let base_sum = base_logpdf + self.log_norm;
        log_add_exp(base_sum, self.exponent(query, extra)) - self.log_kernel_norm - log_n1
    }
}

pub fn kde_fit(data: &Matrix, bandwidth: Option<Bandwidth>) -> Result<KdeModel, DensityError> {
    KdeModel::fit(data, bandwidth)
}

pub fn kde_logpdf(model: &KdeModel, queries: &Matrix) -> Result<Vec<f64>, DensityError> {
    model.logpdf(queries)
}

pub fn kde_logpdf_augmented(
    model: &KdeModel,
    extra: &[f64],
    queries: &Matrix,
) -> Result<Vec<f64>, DensityError> {
    model.logpdf_augmented(extra, queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LOG_PHI_0: f64 = -0.918_938_533_204_672_7;
    const LOG_PHI_1: f64 = -1.418_938_533_204_672_7;

    /// Direct linear-space double loop.
    fn naive_logpdf(support: &Matrix, h: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for s in support.rows_iter() {
            let mut k = 1.0;
            for j in 0..q.len() {
                let z = (q[j] - s[j]) / h[j];
                k *= (-0.5 * z * z).exp() / (2.0 * PI * h[j] * h[j]).sqrt();
            }
            total += k;
        }
        (total / support.nrows() as f64).ln()
    }

    #[test]
    fn silverman_reference_values() {
        // n = 100, σ = 1: alternating ±1 has population σ exactly 1
        let data = Matrix::column(&(0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>());
        let h = silverman_bandwidth(&data).unwrap();
        assert!((h.widths()[0] - 0.421_684_606_342_749_96).abs() < 1e-12);

        let two = Matrix::column(&[0.0, 10.0]);
        let h = silverman_bandwidth(&two).unwrap();
        assert!((h.widths()[0] - 4.610_539_557_408_638_8).abs() < 1e-12);
    }

    #[test]
    fn silverman_scales_with_data() {
        let data = Matrix::from_rows(&[[0.0, 1.0], [2.0, -1.0], [5.0, 4.0], [1.0, 0.5]]).unwrap();
        let scaled = Matrix::from_vec(4, 2, data.as_slice().iter().map(|x| 3.0 * x).collect()).unwrap();
        let (a, b) = (silverman_bandwidth(&data).unwrap(), silverman_bandwidth(&scaled).unwrap());
        for (x, y) in a.widths().iter().zip(b.widths()) {
            assert!((3.0 * x - y).abs() < 1e-12 * y);
        }
    }

    #[test]
    fn silverman_rejects_constant_dimension() {
        let data = Matrix::from_rows(&[[0.0, 1.0], [2.0, 1.0]]).unwrap();
        assert_eq!(
            silverman_bandwidth(&data).unwrap_err(),
            DensityError::DegenerateDimension(1)
        );
    }

    #[test]
    fn fit_edge_cases() {
        let one = Matrix::column(&[0.0]);
        let m = KdeModel::fit(&one, Some(Bandwidth::new(vec![1.0]).unwrap())).unwrap();
        assert_eq!(m.n(), 1);
        assert!(KdeModel::fit(&one, None).is_err());
        assert!(KdeModel::fit(&Matrix::zeros(0, 1), Some(Bandwidth::new(vec![1.0]).unwrap())).is_err());
        let data = Matrix::column(&[0.0, 1.0, 3.0]);
        assert_eq!(
            KdeModel::fit(&data, None).unwrap().log_norm(),
            KdeModel::fit(&data, None).unwrap().log_norm()
        );
    }

    #[test]
    fn standard_normal_at_mode() {
        let m = KdeModel::fit(&Matrix::column(&[0.0]), Some(Bandwidth::new(vec![1.0]).unwrap())).unwrap();
        assert!((m.logpdf_one(&[0.0]).unwrap() - LOG_PHI_0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_midpoint() {
        let m = KdeModel::fit(&Matrix::column(&[-1.0, 1.0]), Some(Bandwidth::new(vec![1.0]).unwrap())).unwrap();
        assert!((m.logpdf_one(&[0.0]).unwrap() - LOG_PHI_1).abs() < 1e-12);
    }

    #[test]
    fn far_queries_stay_finite() {
        let m = KdeModel::fit(&Matrix::column(&[0.0]), Some(Bandwidth::new(vec![1e-3]).unwrap())).unwrap();
        assert!(m.logpdf_one(&[1e6]).unwrap().is_finite());
    }

    #[test]
    fn dimension_mismatch() {
        let m = KdeModel::fit(&Matrix::column(&[0.0, 1.0]), None).unwrap();
        assert!(matches!(
            m.logpdf(&Matrix::zeros(1, 2)),
            Err(DensityError::DimensionMismatch { .. })
        ));
        assert!(m.logpdf_augmented(&[0.0, 0.0], &Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn integrates_to_one() {
        let pts = [-2.0, -0.5, 0.3, 1.1, 4.0];
        let m = KdeModel::fit(&Matrix::column(&pts), None).unwrap();
        let h = m.bandwidth().widths()[0];
        let (lo, hi) = (-2.0 - 8.0 * h, 4.0 + 8.0 * h);
        let steps = 20_000;
        let dx = (hi - lo) / steps as f64;
        let grid = Matrix::column(&(0..=steps).map(|i| lo + i as f64 * dx).collect::<Vec<_>>());
        let dens: Vec<f64> = m.logpdf(&grid).unwrap().iter().map(|l| l.exp()).collect();
        let integral = dx * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[steps]));
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn far_extra_shifts_by_count_ratio() {
        let m = KdeModel::fit(&Matrix::column(&[0.0, 0.5, 1.5]), None).unwrap();
        let q = Matrix::column(&[0.2, 1.0]);
        let base = m.logpdf(&q).unwrap();
        let aug = m.logpdf_augmented(&[1e9], &q).unwrap();
        let shift = (3.0f64 / 4.0).ln();
        for (a, b) in aug.iter().zip(&base) {
            assert!((a - (b + shift)).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_a_support_point_raises_its_density() {
        let m = KdeModel::fit(&Matrix::column(&[0.0, 0.5, 1.5, 3.0]), None).unwrap();
        let q = Matrix::column(&[1.5]);
        assert!(m.logpdf_augmented(&[1.5], &q).unwrap()[0] > m.logpdf(&q).unwrap()[0]);
    }

    fn matrix_strategy(max_n: usize, d: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), 1..=max_n)
            .prop_map(|rows| Matrix::from_rows(&rows).unwrap())
    }

    fn instance(max_n: usize) -> impl Strategy<Value = (Matrix, Matrix, Vec<f64>)> {
        (1usize..=4).prop_flat_map(move |d| {
            (
                matrix_strategy(max_n, d),
                matrix_strategy(max_n, d),
                proptest::collection::vec(0.5f64..2.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_naive_summation((support, queries, h) in instance(50)) {
            let m = KdeModel::fit(&support, Some(Bandwidth::new(h.clone()).unwrap())).unwrap();
            let got = m.logpdf(&queries).unwrap();
            for (q, g) in queries.rows_iter().zip(&got) {
                let want = naive_logpdf(&support, &h, q);
                prop_assert!((g - want).abs() < 1e-12, "{} vs {}", g, want);
            }
        }

        #[test]
        fn augmented_matches_refit((support, queries, h) in instance(100), pick in 0usize..100) {
            let bw = Bandwidth::new(h).unwrap();
            let m = KdeModel::fit(&support, Some(bw.clone())).unwrap();
            let extra = queries.row(pick % queries.nrows()).to_vec();
            let refit = KdeModel::fit(&support.vstack(&Matrix::from_rows(&[extra.clone()]).unwrap()).unwrap(), Some(bw)).unwrap();
            let fast = m.logpdf_augmented(&extra, &queries).unwrap();
            let slow = refit.logpdf(&queries).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn adding_mass_at_sparse_query_raises_density((support, queries, h) in instance(30)) {
            let m = KdeModel::fit(&support, Some(Bandwidth::new(h).unwrap())).unwrap();
            let peak = -m.log_kernel_norm;
            for q in queries.rows_iter() {
                let base = m.logpdf_one(q).unwrap();
                if base < peak {
                    let aug = m.logpdf_augmented(q, &Matrix::from_rows(&[q.to_vec()]).unwrap()).unwrap()[0];
                    prop_assert!(aug > base);
                }
            }
        }

        #[test]
        fn support_order_is_irrelevant((support, queries, h) in instance(40), seed: u64) {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..support.nrows()).collect();
            idx.shuffle(&mut crate::rng::seeded(seed));
            let bw = Bandwidth::new(h).unwrap();
            let a = KdeModel::fit(&support, Some(bw.clone())).unwrap().logpdf(&queries).unwrap();
            let b = KdeModel::fit(&support.select_rows(&idx), Some(bw)).unwrap().logpdf(&queries).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
