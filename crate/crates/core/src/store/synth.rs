use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::pool::{normalize_matrix_rows, ClassHead, EmbeddingPool, Labels};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_ANCHOR_DOT: f64 = 0.9;
const MAX_ANCHOR_ATTEMPTS: usize = 10_000;

/// Parameters of the seeded Gaussian-mixture test bed.
///
/// Each sample is `anchor[c] + cluster_spread * g` with `g` standard normal in
/// `d` dimensions, so `cluster_spread` is the per-coordinate standard deviation.
/// The returned head is the anchors, each perturbed by `head_noise` the same way
/// and re-normalized (zero noise gives the anchors themselves).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n: usize,
    pub class_weights: Vec<f64>,
    pub cluster_spread: f64,
    pub outlier_fraction: f64,
    pub head_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Balanced classes, no outliers, exact anchors as head.
    pub fn balanced(num_classes: usize, dim: usize, n: usize, cluster_spread: f64, seed: u64) -> Self {
        Self {
            num_classes,
            dim,
            n,
            class_weights: vec![1.0 / num_classes as f64; num_classes],
            cluster_spread,
            outlier_fraction: 0.0,
            head_noise: 0.0,
            seed,
        }
    }

    /// Normalizes arbitrary nonnegative relative weights to sum to one.
    pub fn with_relative_weights(mut self, weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        self.num_classes = weights.len();
        self.class_weights = weights.iter().map(|w| w / total).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.dim < 2 {
            return bad(format!("dimension {} < 2", self.dim));
        }
        if self.n < self.num_classes {
            return bad(format!("pool size {} < class count {}", self.n, self.num_classes));
        }
        if self.class_weights.len() != self.num_classes {
            return Err(Error::LengthMismatch {
                what: "class_weights",
                expected: self.num_classes,
                found: self.class_weights.len(),
            });
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("class weights must be finite and nonnegative".into());
        }
        let total: f64 = self.class_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("class weights sum to {total}, not 1"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad(format!("cluster_spread must be positive, got {}", self.cluster_spread));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad(format!("outlier_fraction {} not in [0, 1)", self.outlier_fraction));
        }
        if !(self.head_noise >= 0.0 && self.head_noise.is_finite()) {
            return bad(format!("head_noise must be nonnegative, got {}", self.head_noise));
        }
        Ok(())
    }
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || rng.sample::<f64, _>(StandardNormal))
}

fn draw_anchors(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Result<Array2<f64>> {
    for _ in 0..MAX_ANCHOR_ATTEMPTS {
        let anchors = normalize_matrix_rows(gaussian_rows(rng, k, d).view())?;
        let gram = anchors.dot(&anchors.t());
        let separated = (0..k).all(|i| (i + 1..k).all(|j| gram[[i, j]] <= MAX_ANCHOR_DOT));
        if separated {
            return Ok(anchors);
        }
    }
    Err(Error::InvalidInput(format!(
        "could not place {k} anchors in dimension {d} with pairwise dot <= {MAX_ANCHOR_DOT}"
    )))
}

/// Draws a labelled pool and the matching class head. Deterministic in `spec.seed`.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<(EmbeddingPool<T>, ClassHead<T>)> {
    spec.validate()?;
    let (k, d, n) = (spec.num_classes, spec.dim, spec.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anchors = draw_anchors(&mut rng, k, d)?;

    let class_dist = WeightedIndex::new(&spec.class_weights)
        .map_err(|e| Error::InvalidInput(format!("class weights: {e}")))?;
    let scale = spec.cluster_spread;
    let mut vectors = Array2::<f64>::zeros((n, d));
    let mut classes = Vec::with_capacity(n);
    for mut row in vectors.outer_iter_mut() {
        let class = class_dist.sample(&mut rng);
        let outlier = rng.random::<f64>() < spec.outlier_fraction;
        let noise: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if outlier {
            let norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            row.iter_mut().zip(&noise).for_each(|(r, g)| *r = g / norm);
        } else {
            row.iter_mut()
                .zip(anchors.row(class))
                .zip(&noise)
                .for_each(|((r, a), g)| *r = a + scale * g);
        }
        classes.push(class);
    }

    let head_rows = if spec.head_noise > 0.0 {
        let noise = gaussian_rows(&mut rng, k, d);
        normalize_matrix_rows((&anchors + &(noise * spec.head_noise)).view())?
    } else {
        anchors
    };

    let pool = EmbeddingPool::new(vectors.mapv(T::lit), Some(Labels::new(classes, k)?))?;
    let head = ClassHead::new(head_rows.mapv(T::lit), T::lit(super::DEFAULT_TEMPERATURE))?;
    Ok((pool, head))
}
