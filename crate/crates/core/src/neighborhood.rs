//! Exact k-nearest neighbors on unit vectors and neighbor-propagated uncertainty.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring;
use crate::store::{ClassHead, EmbeddingPool};

/// Neighbor counts searched over by the hyper-parameter grid.
pub const K_GRID: [usize; 3] = [10, 20, 50];
/// Kernel widths searched over by the hyper-parameter grid.
pub const ALPHA_GRID: [f64; 3] = [0.05, 0.1, 1.0];
pub const DEFAULT_K: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.1;

const BLOCK_ROWS: usize = 256;
const UNIT_NORM_TOL: f64 = 1e-3;

/// `k` nearest other samples of every sample, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph<T> {
    neighbor_ids: Array2<usize>,
    sq_dists: Array2<T>,
}

impl<T: Scalar> NeighborGraph<T> {
    /// A graph from explicit neighbor lists; both matrices are `n x k` and
    /// distances must be finite and nonnegative.
    pub fn new(neighbor_ids: Array2<usize>, sq_dists: Array2<T>) -> Result<Self> {
        if neighbor_ids.dim() != sq_dists.dim() {
            return Err(Error::InvalidInput(format!(
                "neighbor ids are {:?} but distances are {:?}",
                neighbor_ids.dim(),
                sq_dists.dim()
            )));
        }
        if sq_dists.iter().any(|d| !(d.is_finite() && *d >= T::zero())) {
            return Err(Error::InvalidInput("squared distances must be finite and nonnegative".into()));
        }
        Ok(Self { neighbor_ids, sq_dists })
    }

    pub fn k(&self) -> usize {
        self.neighbor_ids.ncols()
    }

    pub fn len(&self) -> usize {
        self.neighbor_ids.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.nrows() == 0
    }

    pub fn neighbor_ids(&self) -> ArrayView2<'_, usize> {
        self.neighbor_ids.view()
    }

    pub fn sq_dists(&self) -> ArrayView2<'_, T> {
        self.sq_dists.view()
    }
}

fn check_unit_rows<T: Scalar>(points: ArrayView2<'_, T>) -> Result<()> {
    for (i, row) in points.outer_iter().enumerate() {
        let norm2 = row.dot(&row).as_f64();
        if (norm2 - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "row {i} is not unit-norm (squared norm {norm2})"
            )));
        }
    }
    Ok(())
}

fn by_dist_then_id<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Exact neighbors by squared L2 distance (`2 - 2 z.z'` on unit rows), self
/// excluded, ties to the lower id.
pub fn knn_rows<T: Scalar>(points: ArrayView2<'_, T>, k: usize) -> Result<NeighborGraph<T>> {
    let all: Vec<usize> = (0..points.nrows()).collect();
    knn_of(points, &all, k)
}

/// Neighbors of the given query rows only, searched over all of `points`.
/// Row `i` of the result belongs to `queries[i]`.
pub fn knn_of<T: Scalar>(points: ArrayView2<'_, T>, queries: &[usize], k: usize) -> Result<NeighborGraph<T>> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::NeighborCount { k, n });
    }
    if let Some(&bad) = queries.iter().find(|&&q| q >= n) {
        return Err(Error::InvalidInput(format!("query row {bad} out of range")));
    }
    check_unit_rows(points)?;
    let two = T::lit(2.0);
    let four = T::lit(4.0);

    let blocks: Vec<Vec<(Vec<usize>, Vec<T>)>> = queries
        .par_chunks(BLOCK_ROWS)
        .map(|block| {
            let gram = points.select(Axis(0), block).dot(&points.t());
            let mut candidates: Vec<(T, usize)> = Vec::with_capacity(n - 1);
            gram.outer_iter()
                .zip(block)
                .map(|(dots, &row)| {
                    candidates.clear();
                    candidates.extend(
                        dots.iter()
                            .enumerate()
                            .filter(|&(j, _)| j != row)
                            .map(|(j, &dot)| ((two - two * dot).max(T::zero()).min(four), j)),
                    );
                    candidates.select_nth_unstable_by(k - 1, by_dist_then_id);
                    let top = &mut candidates[..k];
                    top.sort_unstable_by(by_dist_then_id);
                    (top.iter().map(|c| c.1).collect(), top.iter().map(|c| c.0).collect())
                })
                .collect()
        })
        .collect();

    let mut neighbor_ids = Array2::zeros((queries.len(), k));
    let mut sq_dists = Array2::zeros((queries.len(), k));
    for (row, (ids, dists)) in blocks.into_iter().flatten().enumerate() {
        for j in 0..k {
            neighbor_ids[[row, j]] = ids[j];
            sq_dists[[row, j]] = dists[j];
        }
    }
    Ok(NeighborGraph { neighbor_ids, sq_dists })
}

/// [`knn_rows`] over a pool whose rows are already unit-norm.
pub fn knn<T: Scalar>(pool: &EmbeddingPool<T>, k: usize) -> Result<NeighborGraph<T>> {
    knn_rows(pool.vectors(), k)
}

/// Kernel-weighted mean of the neighbors' entropies:
/// `(1/k) * sum_j exp(-alpha * d_j^2) * H(x_j)`.
pub fn neighbor_uncertainty<T: Scalar>(graph: &NeighborGraph<T>, self_entropy: &[T], alpha: T) -> Result<Vec<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if self_entropy.len() != graph.len() {
        return Err(Error::LengthMismatch {
            what: "entropy vector",
            expected: graph.len(),
            found: self_entropy.len(),
        });
    }
    Ok(kernel_average(graph, self_entropy, alpha))
}

fn kernel_average<T: Scalar>(graph: &NeighborGraph<T>, self_entropy: &[T], alpha: T) -> Vec<T> {
    let k = T::from_usize_lossy(graph.k());
    graph
        .neighbor_ids
        .outer_iter()
        .zip(graph.sq_dists.outer_iter())
        .map(|(ids, dists)| {
            ids.iter()
                .zip(dists.iter())
                .map(|(&j, &d2)| (-alpha * d2).exp() * self_entropy[j])
                .sum::<T>()
                / k
        })
        .collect()
}

/// Per-sample self entropy, neighbor uncertainty, and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport<T> {
    pub self_entropy: Vec<T>,
    pub neighbor_uncertainty: Vec<T>,
    pub combined: Vec<T>,
    pub k: usize,
    pub alpha: T,
}

pub fn combined_uncertainty<T: Scalar>(
    self_entropy: Vec<T>,
    neighbor_uncertainty: Vec<T>,
    k: usize,
    alpha: T,
) -> Result<UncertaintyReport<T>> {
    if self_entropy.len() != neighbor_uncertainty.len() {
        return Err(Error::LengthMismatch {
            what: "neighbor uncertainty",
            expected: self_entropy.len(),
            found: neighbor_uncertainty.len(),
        });
    }
    let combined = self_entropy
        .iter()
        .zip(&neighbor_uncertainty)
        .map(|(&h, &nn)| h + nn)
        .collect();
    Ok(UncertaintyReport {
        self_entropy,
        neighbor_uncertainty,
        combined,
        k,
        alpha,
    })
}

/// Full scoring pipeline on a unit-norm pool: calibrated entropy, neighbor
/// uncertainty, combined score. `top_n` and `k` are clamped to the pool; a
/// single-sample pool has no neighbors and gets zero neighbor uncertainty.
pub fn uncertainty_report<T: Scalar>(
    unit_pool: &EmbeddingPool<T>,
    head: &ClassHead<T>,
    top_n: usize,
    k: usize,
    alpha: T,
) -> Result<UncertaintyReport<T>> {
    let n = unit_pool.len();
    let self_entropy = scoring::calibrated_entropy(unit_pool, head, top_n.clamp(1, n))?;
    let k = k.min(n - 1);
    let neighbor = if k == 0 {
        vec![T::zero(); n]
    } else {
        let graph = knn(unit_pool, k)?;
        neighbor_uncertainty(&graph, &self_entropy, alpha)?
    };
    combined_uncertainty(self_entropy, neighbor, k, alpha)
}

/// Combined uncertainty of selected rows of a unit-norm pool; only their
/// neighbor lists are computed.
pub fn uncertainty_of<T: Scalar>(
    unit_pool: &EmbeddingPool<T>,
    head: &ClassHead<T>,
    top_n: usize,
    k: usize,
    alpha: T,
    rows: &[usize],
) -> Result<Vec<T>> {
    let n = unit_pool.len();
    let self_entropy = scoring::calibrated_entropy(unit_pool, head, top_n.clamp(1, n))?;
    let k = k.min(n - 1);
    if k == 0 {
        return Ok(rows.iter().map(|&r| self_entropy[r]).collect());
    }
    let graph = knn_of(unit_pool.vectors(), rows, k)?;
    let neighbor = kernel_average(&graph, &self_entropy, alpha);
    Ok(rows.iter().zip(neighbor).map(|(&r, nn)| self_entropy[r] + nn).collect())
}
