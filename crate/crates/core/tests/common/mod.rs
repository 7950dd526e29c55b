#![allow(dead_code)]

use cec_core::store::{ClassHead, EmbeddingPool, Labels};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

pub fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    m
}

pub fn unit_pool(n: usize, d: usize, seed: u64) -> EmbeddingPool<f64> {
    EmbeddingPool::new(unit_rows(gaussian(n, d, seed)), None).unwrap()
}

pub fn labeled_pool(vectors: Array2<f64>, labels: Vec<usize>, k: usize) -> EmbeddingPool<f64> {
    EmbeddingPool::new(vectors, Some(Labels::new(labels, k).unwrap())).unwrap()
}

pub fn head(rows: Array2<f64>) -> ClassHead<f64> {
    ClassHead::new(rows, 0.01).unwrap()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// All-pairs scan: for each row, the `k` nearest other rows as `(id, d^2)`,
/// sorted by distance then id.
pub fn brute_knn(points: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let rows: Vec<Vec<f64>> = points.outer_iter().map(|r| r.to_vec()).collect();
    rows.iter()
        .enumerate()
        .map(|(i, x)| {
            let mut all: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, y)| (j, sq_dist(x, y)))
                .collect();
            all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

/// Plain Lloyd on an explicit multiset, same stopping rule as the library.
/// Returns `None` if a cluster ever empties.
pub fn plain_lloyd(points: &[Vec<f64>], init: &[Vec<f64>], max_iters: usize, tol: f64) -> Option<Vec<Vec<f64>>> {
    let d = points[0].len();
    let mut centroids = init.to_vec();
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for x in points {
            let mut best = 0;
            for c in 1..centroids.len() {
                if sq_dist(x, &centroids[c]) < sq_dist(x, &centroids[best]) {
                    best = c;
                }
            }
            counts[best] += 1;
            for (s, v) in sums[best].iter_mut().zip(x) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        let next: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
            .collect();
        let shift: f64 = next.iter().zip(&centroids).map(|(a, b)| sq_dist(a, b)).sum::<f64>().sqrt();
        let scale: f64 = centroids.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        centroids = next;
        if shift / scale < tol {
            break;
        }
    }
    Some(centroids)
}

/// Mean cross-entropy of the zero-shot softmax, evaluated directly.
pub fn reference_loss(rows: &Array2<f64>, temperature: f64, samples: &Array2<f64>, labels: &[usize]) -> f64 {
    let unit = unit_rows(rows.clone());
    let mut total = 0.0;
    for (x, &y) in samples.outer_iter().zip(labels) {
        let logits: Vec<f64> = unit.outer_iter().map(|t| t.dot(&x) / temperature).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

/// Exact binomial mean and standard deviation.
pub fn binomial(n: usize, p: f64) -> (f64, f64) {
    (n as f64 * p, (n as f64 * p * (1.0 - p)).sqrt())
}

/// Calibrated entropy and combined uncertainty computed term by term:
/// softmax of cosines, column top-N prior, calibration, entropy, then the
/// kernel-weighted neighbor average over an all-pairs neighbor scan.
pub fn reference_uncertainty(
    samples: &Array2<f64>,
    classes: &Array2<f64>,
    temperature: f64,
    top_n: usize,
    k: usize,
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let z = unit_rows(samples.clone());
    let t = unit_rows(classes.clone());
    let probs: Vec<Vec<f64>> = z
        .outer_iter()
        .map(|x| {
            let logits: Vec<f64> = t.outer_iter().map(|c| c.dot(&x) / temperature).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect();
    let prior: Vec<f64> = (0..t.nrows())
        .map(|c| {
            let mut col: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            (col[..top_n].iter().sum::<f64>() / top_n as f64).max(1e-8)
        })
        .collect();
    let h: Vec<f64> = probs
        .iter()
        .map(|p| {
            let r: Vec<f64> = p.iter().zip(&prior).map(|(a, q)| a / q).collect();
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).filter(|&v| v > 0.0).map(|v| -v * v.ln()).sum()
        })
        .collect();
    let u = brute_knn(&z, k)
        .iter()
        .zip(&h)
        .map(|(nbrs, hx)| hx + nbrs.iter().map(|&(j, d2)| (-alpha * d2).exp() * h[j]).sum::<f64>() / k as f64)
        .collect();
    (h, u)
}

/// Two classes along the first two axes; four points in a confused cluster
/// near the diagonal and one maximally confused point far from them.
pub fn outlier_fixture() -> (Array2<f64>, Array2<f64>) {
    let samples = ndarray::array![
        [1.0, 0.9, 0.1],
        [0.9, 1.0, 0.12],
        [1.0, 0.85, 0.08],
        [0.88, 1.0, 0.1],
        [0.3, 0.3, -0.9],
    ];
    let classes = ndarray::array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    (samples, classes)
}

pub struct DuplicationOutcome {
    pub max_centroid_gap: f64,
    pub objective_nonincreasing: bool,
    pub n: usize,
    pub b: usize,
}

/// One random instance with integer weights in 1..=5: weighted Lloyd against
/// plain Lloyd on the duplicated multiset, both started from the same
/// centroids. `None` when the plain run empties a cluster, which the two
/// algorithms repair differently.
pub fn duplication_instance(seed: u64) -> Option<DuplicationOutcome> {
    use cec_core::clustering::{weighted_lloyd, KMeansOptions};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..=100);
    let d = rng.random_range(2..=5);
    let b = rng.random_range(2..=8);
    let points = gaussian(n, d, seed.wrapping_mul(7919));
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(1..=5) as f64).collect();
    let init_ids = rand::seq::index::sample(&mut rng, n, b).into_vec();
    let init = points.select(ndarray::Axis(0), &init_ids);

    let opts = KMeansOptions::default();
    let weighted = weighted_lloyd(points.view(), &weights, init.clone(), &opts).unwrap();

    let multiset: Vec<Vec<f64>> = points
        .outer_iter()
        .zip(&weights)
        .flat_map(|(x, &w)| std::iter::repeat_n(x.to_vec(), w as usize))
        .collect();
    let init_rows: Vec<Vec<f64>> = init.outer_iter().map(|r| r.to_vec()).collect();
    let plain = plain_lloyd(&multiset, &init_rows, opts.max_iters, opts.tol)?;

    let max_centroid_gap = plain
        .iter()
        .zip(weighted.centroids.outer_iter())
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let objective_nonincreasing = weighted
        .objective_trace
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Some(DuplicationOutcome {
        max_centroid_gap,
        objective_nonincreasing,
        n,
        b,
    })
}

/// Relative error `|a - f| / max(|a|, |f|)` between the analytic gradient and
/// central differences of [`reference_loss`] on one random instance with
/// `K <= 5`, `d <= 8`.
pub fn gradient_check_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=5);
    let d = rng.random_range(2..=8);
    let m = rng.random_range(3..=12);
    let temperature = 0.01;
    let rows = gaussian(k, d, seed ^ 0x5eed) * 0.7;
    let samples = unit_rows(gaussian(m, d, seed ^ 0xda7a));
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();

    let (_, analytic) = cec_core::trainer::loss_and_gradient(rows.view(), temperature, samples.view(), &labels);
    let h = 1e-6;
    let mut numeric = Array2::zeros((k, d));
    for i in 0..k {
        for j in 0..d {
            let mut up = rows.clone();
            up[[i, j]] += h;
            let mut down = rows.clone();
            down[[i, j]] -= h;
            numeric[[i, j]] = (reference_loss(&up, temperature, &samples, &labels)
                - reference_loss(&down, temperature, &samples, &labels))
                / (2.0 * h);
        }
    }
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        return 0.0;
    }
    norm(&(&analytic - &numeric)) / scale
}

/// Two 25-point blobs in the plane around directions 20 degrees apart on
/// either side of the x axis, with a head that starts out pointing the wrong
/// way for both.
pub fn separable_fixture() -> (EmbeddingPool<f64>, ClassHead<f64>) {
    let noise = gaussian(50, 2, 77) * 0.03;
    let mut rows = Array2::zeros((50, 2));
    let mut labels = Vec::new();
    for i in 0..50 {
        let class = i % 2;
        let angle: f64 = if class == 0 { 0.35 } else { -0.35 };
        rows[[i, 0]] = angle.cos() + noise[[i, 0]];
        rows[[i, 1]] = angle.sin() + noise[[i, 1]];
        labels.push(class);
    }
    let pool = labeled_pool(unit_rows(rows), labels, 2);
    let init = ClassHead::new(ndarray::array![[0.3, -1.0], [0.3, 1.0]], 0.01).unwrap();
    (pool, init)
}
