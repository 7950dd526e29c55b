//! Zero-shot probabilities, predictive entropy, and prior calibration.
//!
//! The contextualized prior of class `i` is the mean of the `top_n` largest
//! probabilities in column `i`. Dividing each probability by its class prior
//! and re-normalizing removes the head's bias toward frequently predicted
//! classes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{normalize_matrix_rows, ClassHead, EmbeddingPool};

/// Default size of the per-class top set.
pub const DEFAULT_TOP_N: usize = 10;
/// Smallest prior allowed; classes that never receive mass are floored here.
pub const PRIOR_FLOOR: f64 = 1e-8;

/// Per-sample class probabilities, `n x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable<T> {
    probs: Array2<T>,
    calibrated: bool,
}

impl<T: Scalar> ProbabilityTable<T> {
    /// Checks every entry is in `[0, 1]` and every row sums to one.
    pub fn new(probs: Array2<T>, calibrated: bool) -> Result<Self> {
        let tol = T::sum_tolerance(probs.ncols());
        for row in probs.outer_iter() {
            if row.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
                return Err(Error::InvalidInput("probability outside [0, 1]".into()));
            }
            let s: T = row.sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::NotNormalized { sum: s.as_f64() });
            }
        }
        Ok(Self { probs, calibrated })
    }

    pub fn probs(&self) -> ArrayView2<'_, T> {
        self.probs.view()
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Row-wise entropy.
    pub fn entropies(&self) -> Vec<T> {
        self.probs.outer_iter().map(row_entropy).collect()
    }

    /// Row-wise argmax, ties to the lower class id.
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.outer_iter().map(argmax).collect()
    }
}

/// Per-class prior estimated from the top of each probability column.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPrior<T> {
    q: Array1<T>,
    top_n: usize,
}

impl<T: Scalar> ContextPrior<T> {
    pub fn new(q: Array1<T>, top_n: usize) -> Self {
        Self { q, top_n }
    }

    pub fn uniform(num_classes: usize) -> Self {
        let v = T::one() / T::from_usize_lossy(num_classes);
        Self {
            q: Array1::from_elem(num_classes, v),
            top_n: 0,
        }
    }

    pub fn values(&self) -> ArrayView1<'_, T> {
        self.q.view()
    }

    pub fn top_n(&self) -> usize {
        self.top_n
    }
}

pub(crate) fn argmax<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place<T: Scalar>(logits: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// Cosine similarities between every sample and every class row, `n x K`.
pub fn cosine_similarities<T: Scalar>(samples: ArrayView2<'_, T>, classes: ArrayView2<'_, T>) -> Result<Array2<T>> {
    if samples.ncols() != classes.ncols() {
        return Err(Error::DimensionMismatch {
            expected: classes.ncols(),
            found: samples.ncols(),
        });
    }
    let z = normalize_matrix_rows(samples)?;
    let t = normalize_matrix_rows(classes)?;
    Ok(z.dot(&t.t()))
}

/// Temperature softmax over cosine similarities to the class rows.
pub fn zero_shot_probs<T: Scalar>(pool: &EmbeddingPool<T>, head: &ClassHead<T>) -> Result<ProbabilityTable<T>> {
    let mut sims = cosine_similarities(pool.vectors(), head.class_embeddings())?;
    let inv_t = T::one() / head.temperature();
    sims.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
        row.mapv_inplace(|s| s * inv_t);
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    });
    Ok(ProbabilityTable {
        probs: sims,
        calibrated: false,
    })
}

pub(crate) fn row_entropy<T: Scalar>(p: ArrayView1<'_, T>) -> T {
    p.iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| -v * v.ln())
        .sum::<T>()
        .max(T::zero())
}

/// Shannon entropy in nats; `0 log 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> Result<T> {
    if p.iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::InvalidInput("negative or NaN probability".into()));
    }
    let s: T = p.iter().copied().sum();
    if (s - T::one()).abs() > T::sum_tolerance(p.len()) {
        return Err(Error::NotNormalized { sum: s.as_f64() });
    }
    Ok(row_entropy(ArrayView1::from(p)))
}

/// Mean of the `top_n` largest entries of every column, floored at
/// [`PRIOR_FLOOR`]. Ties in the ranking go to the lower sample index.
pub fn contextualized_prior<T: Scalar>(table: &ProbabilityTable<T>, top_n: usize) -> Result<ContextPrior<T>> {
    if table.calibrated {
        return Err(Error::AlreadyCalibrated);
    }
    let n = table.len();
    if top_n == 0 || top_n > n {
        return Err(Error::TopN { top_n, n });
    }
    let floor = T::lit(PRIOR_FLOOR);
    let q: Vec<T> = table
        .probs
        .axis_iter(Axis(1))
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            let by_value_desc = |&a: &usize, &b: &usize| col[b].partial_cmp(&col[a]).unwrap().then(a.cmp(&b));
            if top_n < n {
                idx.select_nth_unstable_by(top_n - 1, by_value_desc);
            }
            let mut top: Vec<usize> = idx[..top_n].to_vec();
            top.sort_unstable_by(by_value_desc);
            let mean = top.iter().map(|&i| col[i]).sum::<T>() / T::from_usize_lossy(top_n);
            mean.max(floor)
        })
        .collect();
    Ok(ContextPrior {
        q: Array1::from(q),
        top_n,
    })
}

/// Divides each probability by its class prior and re-normalizes each row.
pub fn calibrate<T: Scalar>(table: &ProbabilityTable<T>, prior: &ContextPrior<T>) -> Result<ProbabilityTable<T>> {
    if table.calibrated {
        return Err(Error::AlreadyCalibrated);
    }
    if prior.q.len() != table.num_classes() {
        return Err(Error::LengthMismatch {
            what: "prior",
            expected: table.num_classes(),
            found: prior.q.len(),
        });
    }
    if let Some((class, &value)) = prior.q.iter().enumerate().find(|(_, &v)| !(v > T::zero())) {
        return Err(Error::NonPositivePrior {
            class,
            value: value.as_f64(),
        });
    }
    let mut out = table.probs.clone();
    out.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
        row.iter_mut().zip(prior.q.iter()).for_each(|(p, &q)| *p /= q);
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    });
    Ok(ProbabilityTable {
        probs: out,
        calibrated: true,
    })
}

/// Entropy of the prior-corrected zero-shot probabilities, one per sample.
pub fn calibrated_entropy<T: Scalar>(pool: &EmbeddingPool<T>, head: &ClassHead<T>, top_n: usize) -> Result<Vec<T>> {
    let raw = zero_shot_probs(pool, head)?;
    let prior = contextualized_prior(&raw, top_n)?;
    Ok(calibrate(&raw, &prior)?.entropies())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn table(rows: Array2<f64>) -> ProbabilityTable<f64> {
        ProbabilityTable::new(rows, false).unwrap()
    }

    #[test]
    fn identical_classes_give_half() {
        let pool = EmbeddingPool::new(array![[1.0, 0.3], [-0.2, 0.9], [0.5, 0.5]], None).unwrap();
        let head = ClassHead::new(array![[1.0, 1.0], [1.0, 1.0]], 0.01).unwrap();
        let p = zero_shot_probs(&pool, &head).unwrap();
        for &v in p.probs().iter() {
            assert!((v - 0.5f64).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_twenty_vs_ten() {
        // Unit sample along x; class rows at cosine 0.2 and 0.1.
        let c1 = [0.2, (1.0f64 - 0.04).sqrt()];
        let c2 = [0.1, -(1.0f64 - 0.01).sqrt()];
        let pool = EmbeddingPool::new(array![[1.0, 0.0]], None).unwrap();
        let head = ClassHead::new(array![[c1[0], c1[1]], [c2[0], c2[1]]], 0.01).unwrap();
        let p = zero_shot_probs(&pool, &head).unwrap();
        // 1 / (1 + e^-10)
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p.probs()[[0, 0]] - expected).abs() < 1e-12);
        assert!((p.probs()[[0, 0]] - 0.9999546).abs() < 1e-7);
        assert!((p.probs()[[0, 1]] - 0.0000454).abs() < 1e-7);
    }

    #[test]
    fn zero_shot_dimension_mismatch() {
        let pool = EmbeddingPool::new(array![[1.0, 0.0, 0.0]], None).unwrap();
        let head = ClassHead::new(array![[1.0, 0.0], [0.0, 1.0]], 0.01).unwrap();
        assert!(matches!(zero_shot_probs(&pool, &head), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let pool = EmbeddingPool::new(array![[1.0f32, 0.0]], None).unwrap();
        let head = ClassHead::new(array![[1.0f32, 0.0], [-1.0, 0.0]], 1e-4).unwrap();
        let p = zero_shot_probs(&pool, &head).unwrap();
        assert_eq!(p.probs()[[0, 0]], 1.0);
        assert_eq!(p.probs()[[0, 1]], 0.0);
    }

    #[test]
    fn entropy_cases() {
        assert!((entropy(&[0.25f64; 4]).unwrap() - 4.0f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.25f64; 4]).unwrap() - 1.386294).abs() < 1e-6);
        assert_eq!(entropy(&[0.0f64, 1.0, 0.0]).unwrap(), 0.0);
        let h = entropy(&[0.7f64, 0.2, 0.1]).unwrap();
        let by_terms = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!((h - by_terms).abs() < 1e-15);
        assert!((h - 0.801819).abs() < 1e-6);
        assert!(matches!(entropy(&[0.5f64, 0.6]), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn prior_top_two_mean() {
        let t = table(array![[0.9, 0.1], [0.7, 0.3], [0.3, 0.7], [0.1, 0.9]]);
        let prior = contextualized_prior(&t, 2).unwrap();
        assert!((prior.values()[0] - 0.8).abs() < 1e-12);
        assert!((prior.values()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn prior_constant_column_and_full_column() {
        let t = table(array![[0.6, 0.4], [0.6, 0.4], [0.6, 0.4]]);
        for n in 1..=3 {
            let q = contextualized_prior(&t, n).unwrap();
            assert!((q.values()[0] - 0.6).abs() < 1e-12 && (q.values()[1] - 0.4).abs() < 1e-12);
        }
        let t = table(array![[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]);
        let q = contextualized_prior(&t, 3).unwrap();
        assert!((q.values()[0] - 1.6 / 3.0).abs() < 1e-12);
        assert!(matches!(contextualized_prior(&t, 4), Err(Error::TopN { .. })));
        assert!(matches!(contextualized_prior(&t, 0), Err(Error::TopN { .. })));
    }

    #[test]
    fn prior_is_floored() {
        let t = table(array![[1.0, 0.0], [1.0, 0.0]]);
        let q = contextualized_prior(&t, 1).unwrap();
        assert_eq!(q.values()[1], PRIOR_FLOOR);
    }

    #[test]
    fn calibration_examples() {
        let t = table(array![[0.8, 0.2]]);
        let c = calibrate(&t, &ContextPrior::new(array![0.8, 0.2], 1)).unwrap();
        assert!((c.probs()[[0, 0]] - 0.5).abs() < 1e-12);
        assert!(c.is_calibrated());

        let one_hot = table(array![[0.0, 1.0, 0.0]]);
        let c = calibrate(&one_hot, &ContextPrior::new(array![0.1, 0.7, 0.2], 1)).unwrap();
        assert_eq!(c.probs().row(0).to_vec(), vec![0.0, 1.0, 0.0]);

        assert!(matches!(
            calibrate(&t, &ContextPrior::new(array![0.8, 0.0], 1)),
            Err(Error::NonPositivePrior { class: 1, .. })
        ));
        assert!(matches!(contextualized_prior(&c, 1), Err(Error::AlreadyCalibrated)));
        assert!(matches!(calibrate(&c, &ContextPrior::uniform(3)), Err(Error::AlreadyCalibrated)));
    }

    #[test]
    fn calibrated_entropy_symmetric_head() {
        let pool = EmbeddingPool::new(array![[1.0, 0.2, 0.0], [0.1, 1.0, 0.3], [0.0, 0.4, 1.0]], None).unwrap();
        let head = ClassHead::new(array![[0.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]], 0.01).unwrap();
        for h in calibrated_entropy(&pool, &head, 2).unwrap() {
            assert!((h - 3.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_calibrates_to_uniform() {
        let pool = EmbeddingPool::new(array![[0.9, 0.3]], None).unwrap();
        let head = ClassHead::new(array![[1.0, 0.0], [0.0, 1.0]], 0.1).unwrap();
        let raw = zero_shot_probs(&pool, &head).unwrap();
        let row = raw.probs().row(0).to_owned();
        // Substituting q_i = P(i|x) directly: every ratio is 1.
        let manual: Vec<f64> = row.iter().map(|&p| p / p).collect();
        let total: f64 = manual.iter().sum();
        let expected = -manual.iter().map(|v| (v / total) * (v / total).ln()).sum::<f64>();
        let h = calibrated_entropy(&pool, &head, 1).unwrap();
        assert!((h[0] - expected).abs() < 1e-12);
        assert!((h[0] - 2.0f64.ln()).abs() < 1e-12);
    }

    fn prob_row(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn calibration_keeps_rows_stochastic_and_is_prior_scale_invariant(
            raw in prop::collection::vec(prop::collection::vec(0.001f64..1.0, 5), 1..10),
            q in prop::collection::vec(0.01f64..1.0, 5),
            c in 0.01f64..100.0,
        ) {
            let rows: Vec<f64> = raw.iter().flat_map(|r| prob_row(r)).collect();
            let t = table(Array2::from_shape_vec((raw.len(), 5), rows).unwrap());
            let a = calibrate(&t, &ContextPrior::new(Array1::from(q.clone()), 1)).unwrap();
            let b = calibrate(&t, &ContextPrior::new(Array1::from(q).mapv(|v| v * c), 1)).unwrap();
            for row in a.probs().outer_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
            for (x, y) in a.probs().iter().zip(b.probs().iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn entropy_bounded_by_ln_k_and_permutation_invariant(
            raw in prop::collection::vec(0.0f64..1.0, 2..8),
            rot in 0usize..8,
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-3);
            let p = prob_row(&raw);
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
            let mut q = p.clone();
            q.rotate_left(rot % p.len());
            q.reverse();
            prop_assert!((entropy(&q).unwrap() - h).abs() < 1e-12);
        }

        #[test]
        fn softmax_preserves_cosine_argmax(
            xs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
            ts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3),
        ) {
            prop_assume!(xs.iter().chain(ts.iter()).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-2));
            let pool = EmbeddingPool::new(Array2::from_shape_vec((xs.len(), 4), xs.concat()).unwrap(), None).unwrap();
            let head = ClassHead::new(Array2::from_shape_vec((3, 4), ts.concat()).unwrap(), 0.01).unwrap();
            let sims = cosine_similarities(pool.vectors(), head.class_embeddings()).unwrap();
            let p = zero_shot_probs(&pool, &head).unwrap();
            for (s, pr) in sims.outer_iter().zip(p.probs().outer_iter()) {
                let mut sorted = s.to_vec();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                prop_assume!(sorted[0] - sorted[1] > 1e-9);
                prop_assert_eq!(argmax(s), argmax(pr));
            }
        }
    }
}
