//! Exact k-nearest-neighbor search by full scan and partial selection.
//!
//! Ties in distance go to the lower row index, so results are fully
//! deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NeighborError {
    #[error("cannot search an empty matrix")]
    EmptyData,
    #[error("query has {found} dimensions, data has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    /// A monotone proxy of the distance that is cheaper to compare.
    #[inline]
    fn key(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }

    #[inline]
    fn to_distance(self, key: f64) -> f64 {
        match self {
            Metric::Euclidean => key.sqrt(),
            Metric::Manhattan => key,
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        self.to_distance(self.key(a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub indices: Vec<usize>,
    /// Ascending.
    pub distances: Vec<f64>,
}

fn by_key_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn check(query: &[f64], data: &Matrix) -> Result<(), NeighborError> {
    if data.nrows() == 0 {
        return Err(NeighborError::EmptyData);
    }
    if query.len() != data.ncols() {
        return Err(NeighborError::DimensionMismatch {
            expected: data.ncols(),
            found: query.len(),
        });
    }
    Ok(())
}

/// The `min(k, n)` rows of `data` closest to `query` under `metric`.
pub fn knn_with(
    query: &[f64],
    data: &Matrix,
    k: usize,
    metric: Metric,
) -> Result<NeighborResult, NeighborError> {
    check(query, data)?;
    if k == 0 {
        return Err(NeighborError::ZeroK);
    }
    let mut keyed: Vec<(f64, usize)> = data
        .rows_iter()
        .enumerate()
        .map(|(i, row)| (metric.key(query, row), i))
        .collect();
    let k = k.min(keyed.len());
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, by_key_then_index);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(by_key_then_index);
    Ok(NeighborResult {
        indices: keyed.iter().map(|&(_, i)| i).collect(),
        distances: keyed.iter().map(|&(d, _)| metric.to_distance(d)).collect(),
    })
}

/// Euclidean k-nearest neighbors.
pub fn knn(query: &[f64], data: &Matrix, k: usize) -> Result<NeighborResult, NeighborError> {
    knn_with(query, data, k, Metric::Euclidean)
}

pub fn nearest_distance_with(
    query: &[f64],
    data: &Matrix,
    metric: Metric,
) -> Result<f64, NeighborError> {
    check(query, data)?;
    let best = data
        .rows_iter()
        .map(|row| metric.key(query, row))
        .fold(f64::INFINITY, f64::min);
    Ok(metric.to_distance(best))
}

/// Euclidean distance from `query` to its nearest row of `data`.
pub fn nearest_distance(query: &[f64], data: &Matrix) -> Result<f64, NeighborError> {
    nearest_distance_with(query, data, Metric::Euclidean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_scan(query: &[f64], data: &Matrix, k: usize) -> NeighborResult {
        let mut all: Vec<(f64, usize)> = data
            .rows_iter()
            .enumerate()
            .map(|(i, r)| (Metric::Euclidean.distance(query, r), i))
            .collect();
        // stable sort keeps lower indices first among equal distances
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        all.truncate(k.min(all.len()));
        NeighborResult {
            indices: all.iter().map(|p| p.1).collect(),
            distances: all.iter().map(|p| p.0).collect(),
        }
    }

    #[test]
    fn one_dimensional_example() {
        let data = Matrix::column(&[-3.0, -1.0, 2.0]);
        let r = knn(&[0.0], &data, 2).unwrap();
        assert_eq!(r.indices, vec![1, 2]);
        assert_eq!(r.distances, vec![1.0, 2.0]);
    }

    #[test]
    fn k_at_least_n_returns_everything_sorted() {
        let data = Matrix::column(&[5.0, -1.0, 2.0]);
        let r = knn(&[0.0], &data, 10).unwrap();
        assert_eq!(r.indices, vec![1, 2, 0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let mut vals = vec![10.0; 8];
        vals[3] = 1.0;
        vals[7] = -1.0;
        let r = knn(&[0.0], &Matrix::column(&vals), 1).unwrap();
        assert_eq!(r.indices, vec![3]);
    }

    #[test]
    fn errors() {
        assert_eq!(knn(&[0.0], &Matrix::zeros(0, 1), 1), Err(NeighborError::EmptyData));
        assert!(matches!(
            knn(&[0.0, 1.0], &Matrix::zeros(2, 1), 1),
            Err(NeighborError::DimensionMismatch { .. })
        ));
        assert_eq!(knn(&[0.0], &Matrix::zeros(2, 1), 0), Err(NeighborError::ZeroK));
    }

    #[test]
    fn nearest_distance_examples() {
        let data = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(nearest_distance(&[3.0, 4.0], &data).unwrap(), 0.0);
        assert_eq!(nearest_distance(&[5.0], &Matrix::column(&[0.0])).unwrap(), 5.0);
        assert_eq!(
            nearest_distance_with(&[1.0, 1.0], &Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), Metric::Manhattan).unwrap(),
            2.0
        );
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Matrix, usize)> {
        (1usize..4).prop_flat_map(|d| {
            (
                proptest::collection::vec(-3i32..3, d).prop_map(|v| v.into_iter().map(f64::from).collect()),
                // small integer grid forces plenty of exact ties
                proptest::collection::vec(proptest::collection::vec(-3i32..3, d), 1..40)
                    .prop_map(|rows| {
                        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                        Matrix::from_rows(&rows).unwrap()
                    }),
                1usize..50,
            )
        })
    }

    proptest! {
        #[test]
        fn matches_full_scan((q, data, k) in instance()) {
            prop_assert_eq!(knn(&q, &data, k).unwrap(), reference_scan(&q, &data, k));
        }

        #[test]
        fn nearest_is_first_neighbor((q, data, _k) in instance()) {
            prop_assert_eq!(nearest_distance(&q, &data).unwrap(), knn(&q, &data, 1).unwrap().distances[0]);
        }

        #[test]
        fn translation_keeps_indices((q, data, k) in instance(), t in proptest::collection::vec(-4i32..4, 3)) {
            let d = q.len();
            let shift = |r: &[f64]| -> Vec<f64> { r.iter().zip(&t).map(|(x, s)| x + f64::from(*s)).collect() };
            let rows: Vec<Vec<f64>> = data.rows_iter().map(shift).collect();
            let moved = Matrix::from_rows(&rows).unwrap();
            prop_assert_eq!(moved.ncols(), d);
            prop_assert_eq!(knn(&shift(&q), &moved, k).unwrap().indices, knn(&q, &data, k).unwrap().indices);
        }
    }
}
