//! Weighted k-means with weighted k-means++ seeding, and per-cluster selection.
//!
//! A point's weight acts like a multiplicity: centroids are weighted means and
//! seeding draws points with probability proportional to `w * D^2`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once `||C_new - C_old||_F / ||C_old||_F` drops below this.
    pub tol: f64,
    /// Zero weights are raised to this so every point stays assignable.
    pub weight_floor: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            weight_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T> {
    pub centroids: Array2<T>,
    pub assignment: Vec<usize>,
    pub weights_used: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted within-cluster objective after each iteration.
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> ClusterResult<T> {
    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    /// Member ids of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Validates weights and applies the floor.
pub fn prepare_weights<T: Scalar>(weights: &[T], floor: f64) -> Result<Vec<T>> {
    if let Some(index) = weights.iter().position(|w| !(w.is_finite() && *w >= T::zero())) {
        return Err(Error::InvalidWeight { index });
    }
    if weights.iter().all(|w| w.is_zero()) {
        return Err(Error::AllWeightsZero);
    }
    let floor = T::lit(floor);
    Ok(weights.iter().map(|&w| w.max(floor)).collect())
}

/// Draws an index with probability proportional to `mass`; `None` when all mass is zero.
pub(crate) fn sample_proportional(mass: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = Some(i);
            if acc > target {
                return Some(i);
            }
        }
    }
    last_positive
}

/// Weighted k-means++: first centroid drawn `∝ w`, each next one `∝ w * D^2`.
/// When every remaining point coincides with a chosen centroid, the lowest
/// unchosen index is taken.
pub fn weighted_kmeans_pp_init<T: Scalar>(
    points: ArrayView2<'_, T>,
    weights: &[T],
    b: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = points.nrows();
    let w: Vec<f64> = weights.iter().map(|v| v.as_f64()).collect();
    let mut chosen = Vec::with_capacity(b);
    let mut taken = vec![false; n];
    let first = sample_proportional(&w, rng).unwrap_or(0);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .outer_iter()
        .map(|x| sq_dist(x, points.row(first)).as_f64())
        .collect();
    while chosen.len() < b {
        let mass: Vec<f64> = (0..n).map(|i| if taken[i] { 0.0 } else { w[i] * d2[i] }).collect();
        let next = sample_proportional(&mass, rng)
            .unwrap_or_else(|| (0..n).find(|&i| !taken[i]).expect("b <= n"));
        chosen.push(next);
        taken[next] = true;
        let c = points.row(next);
        d2.par_iter_mut()
            .zip(points.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(d, x)| *d = d.min(sq_dist(x, c).as_f64()));
    }
    chosen
}

fn assign<T: Scalar>(points: ArrayView2<'_, T>, centroids: &Array2<T>) -> Vec<usize> {
    points
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| {
            let mut best = 0;
            let mut best_d = sq_dist(x, centroids.row(0));
            for c in 1..centroids.nrows() {
                let d = sq_dist(x, centroids.row(c));
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Weighted means in point order; clusters without members keep a zero row
/// and are reported in the returned counts.
fn weighted_means<T: Scalar>(
    points: ArrayView2<'_, T>,
    weights: &[T],
    assignment: &[usize],
    b: usize,
) -> (Array2<T>, Vec<usize>) {
    let mut sums = Array2::<T>::zeros((b, points.ncols()));
    let mut mass = vec![T::zero(); b];
    let mut counts = vec![0usize; b];
    for ((x, &c), &w) in points.outer_iter().zip(assignment).zip(weights) {
        sums.row_mut(c).scaled_add(w, &x);
        mass[c] += w;
        counts[c] += 1;
    }
    for (c, mut row) in sums.outer_iter_mut().enumerate() {
        if counts[c] > 0 {
            let m = mass[c];
            row.mapv_inplace(|v| v / m);
        }
    }
    (sums, counts)
}

fn objective<T: Scalar>(points: ArrayView2<'_, T>, weights: &[T], assignment: &[usize], centroids: &Array2<T>) -> T {
    points
        .outer_iter()
        .zip(assignment)
        .zip(weights)
        .map(|((x, &c), &w)| w * sq_dist(x, centroids.row(c)))
        .sum()
}

/// Moves, for each empty cluster, the point with the largest `w * d^2` to its
/// own centroid into that cluster.
fn repair_empty<T: Scalar>(
    points: ArrayView2<'_, T>,
    weights: &[T],
    assignment: &mut [usize],
    centroids: &mut Array2<T>,
    counts: &mut [usize],
) {
    let b = centroids.nrows();
    while let Some(empty) = (0..b).find(|&c| counts[c] == 0) {
        let mut best: Option<(usize, T)> = None;
        for (i, x) in points.outer_iter().enumerate() {
            let c = assignment[i];
            if counts[c] < 2 {
                continue;
            }
            let cost = weights[i] * sq_dist(x, centroids.row(c));
            if best.is_none_or(|(_, v)| cost > v) {
                best = Some((i, cost));
            }
        }
        let (far, _) = best.expect("b <= n leaves a cluster with two members");
        let donor = assignment[far];
        assignment[far] = empty;
        counts[donor] -= 1;
        counts[empty] = 1;
        centroids.row_mut(empty).assign(&points.row(far));
        let (means, _) = weighted_means(points, weights, assignment, b);
        centroids.row_mut(donor).assign(&means.row(donor));
    }
}

/// Weighted Lloyd iterations from explicit initial centroids.
pub fn weighted_lloyd<T: Scalar>(
    points: ArrayView2<'_, T>,
    weights: &[T],
    init: Array2<T>,
    opts: &KMeansOptions,
) -> Result<ClusterResult<T>> {
    let n = points.nrows();
    let b = init.nrows();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: n,
            found: weights.len(),
        });
    }
    if b == 0 || b > n {
        return Err(Error::Budget { budget: b, available: n });
    }
    if init.ncols() != points.ncols() {
        return Err(Error::DimensionMismatch {
            expected: points.ncols(),
            found: init.ncols(),
        });
    }
    let weights = prepare_weights(weights, opts.weight_floor)?;
    let tol = T::lit(opts.tol);

    let mut centroids = init;
    let mut assignment = vec![0; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        assignment = assign(points, &centroids);
        let (mut next, mut counts) = weighted_means(points, &weights, &assignment, b);
        repair_empty(points, &weights, &mut assignment, &mut next, &mut counts);
        trace.push(objective(points, &weights, &assignment, &next));

        let shift = (&next - &centroids).mapv(|v| v * v).sum().sqrt();
        let scale = centroids.mapv(|v| v * v).sum().sqrt().max(T::min_positive_value());
        centroids = next;
        if shift / scale < tol {
            converged = true;
            break;
        }
    }
    Ok(ClusterResult {
        centroids,
        assignment,
        weights_used: weights,
        iterations,
        converged,
        objective_trace: trace,
    })
}

pub fn weighted_kmeans_with<T: Scalar>(
    points: ArrayView2<'_, T>,
    weights: &[T],
    b: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterResult<T>> {
    let n = points.nrows();
    if b == 0 || b > n {
        return Err(Error::Budget { budget: b, available: n });
    }
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: n,
            found: weights.len(),
        });
    }
    let floored = prepare_weights(weights, opts.weight_floor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = weighted_kmeans_pp_init(points, &floored, b, &mut rng);
    let init = points.select(Axis(0), &seeds);
    weighted_lloyd(points, &floored, init, opts)
}

/// Weighted k-means with default options (100 iterations, tolerance `1e-4`).
pub fn weighted_kmeans<T: Scalar>(points: ArrayView2<'_, T>, weights: &[T], b: usize, seed: u64) -> Result<ClusterResult<T>> {
    weighted_kmeans_with(points, weights, b, seed, &KMeansOptions::default())
}

/// The member closest to each centroid, in cluster order; ties to the lower id.
pub fn select_cluster_representatives<T: Scalar>(result: &ClusterResult<T>, points: ArrayView2<'_, T>) -> Vec<usize> {
    result
        .members()
        .iter()
        .enumerate()
        .filter_map(|(c, members)| {
            let centroid = result.centroids.row(c);
            members.iter().copied().fold(None, |best: Option<(usize, T)>, i| {
                let d = sq_dist(points.row(i), centroid);
                match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((i, d)),
                }
            })
        })
        .map(|(i, _)| i)
        .collect()
}

/// The highest-scoring member of each cluster, in cluster order; ties to the lower id.
pub fn select_cluster_most_uncertain<T: Scalar>(result: &ClusterResult<T>, scores: &[T]) -> Vec<usize> {
    result
        .members()
        .iter()
        .filter_map(|members| {
            members.iter().copied().fold(None, |best: Option<usize>, i| match best {
                Some(b) if scores[b] >= scores[i] => best,
                _ => Some(i),
            })
        })
        .collect()
}
