//! Query strategies behind one request/response interface.
//!
//! `cec` scores the unlabeled pool by calibrated entropy plus neighbor
//! uncertainty, clusters it into `b` groups with those scores as k-means
//! weights, and queries the member closest to each centroid. The baselines are
//! random sampling, raw-entropy top-b, k-center greedy (CoreSet), and k-means++
//! over gradient embeddings (BADGE).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    sample_proportional, select_cluster_most_uncertain, select_cluster_representatives, weighted_kmeans,
};
use crate::error::{Error, Result};
use crate::neighborhood::{self, uncertainty_of, uncertainty_report, UncertaintyReport};
use crate::scalar::Scalar;
use crate::scoring::{self, zero_shot_probs};
use crate::store::{normalize_rows, ClassHead, EmbeddingPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    Entropy,
    #[serde(rename = "coreset")]
    CoreSet,
    Badge,
    Cec,
    CecGreedy,
    CecUnweighted,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::CoreSet,
        StrategyKind::Badge,
        StrategyKind::Cec,
        StrategyKind::CecGreedy,
        StrategyKind::CecUnweighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::CoreSet => "coreset",
            StrategyKind::Badge => "badge",
            StrategyKind::Cec => "cec",
            StrategyKind::CecGreedy => "cec-greedy",
            StrategyKind::CecUnweighted => "cec-unweighted",
        }
    }

    /// Strategies that cannot run without labeled samples.
    pub fn needs_labels(self) -> bool {
        matches!(self, StrategyKind::CoreSet)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Hyper-parameters of the uncertainty score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CecParams {
    pub top_n: usize,
    pub k: usize,
    pub alpha: f64,
}

impl Default for CecParams {
    fn default() -> Self {
        Self {
            top_n: scoring::DEFAULT_TOP_N,
            k: neighborhood::DEFAULT_K,
            alpha: neighborhood::DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QueryRequest<'a, T> {
    pub pool: &'a EmbeddingPool<T>,
    pub head: &'a ClassHead<T>,
    pub labeled: &'a [usize],
    pub unlabeled: &'a [usize],
    pub budget: usize,
    pub params: CecParams,
    pub seed: u64,
}

impl<T: Scalar> QueryRequest<'_, T> {
    /// Labeled and unlabeled ids must partition the pool and the budget must fit.
    pub fn validate(&self) -> Result<()> {
        let n = self.pool.len();
        let mut seen = vec![false; n];
        for &id in self.labeled.iter().chain(self.unlabeled) {
            if id >= n {
                return Err(Error::InvalidInput(format!("sample id {id} out of range for pool of {n}")));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::InvalidInput(format!("sample id {id} listed twice")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "sample id {missing} is neither labeled nor unlabeled"
            )));
        }
        if self.budget == 0 || self.budget > self.unlabeled.len() {
            return Err(Error::Budget {
                budget: self.budget,
                available: self.unlabeled.len(),
            });
        }
        Ok(())
    }

    fn unit_unlabeled(&self) -> Result<EmbeddingPool<T>> {
        normalize_rows(&self.pool.subset(self.unlabeled)?)
    }
}

/// Selected sample ids (ascending) plus optional per-selection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet<T> {
    pub selected: Vec<usize>,
    pub scores: Option<Vec<T>>,
}

impl<T: Scalar> QuerySet<T> {
    fn from_local(unlabeled: &[usize], local: Vec<usize>, scores: Option<&[T]>) -> Self {
        let mut pairs: Vec<(usize, usize)> = local.into_iter().map(|i| (unlabeled[i], i)).collect();
        pairs.sort_unstable();
        let scores = scores.map(|s| pairs.iter().map(|&(_, i)| s[i]).collect());
        Self {
            selected: pairs.into_iter().map(|(g, _)| g).collect(),
            scores,
        }
    }

    fn everything(unlabeled: &[usize]) -> Self {
        let mut selected = unlabeled.to_vec();
        selected.sort_unstable();
        Self { selected, scores: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClusterPick {
    WeightedClosest,
    UnweightedClosest,
    UnweightedMostUncertain,
}

fn cluster_query<T: Scalar>(req: &QueryRequest<'_, T>, pick: ClusterPick) -> Result<QuerySet<T>> {
    req.validate()?;
    if req.budget == req.unlabeled.len() {
        return Ok(QuerySet::everything(req.unlabeled));
    }
    // Seeding walks the points in storage order, so cluster them in an order
    // fixed by their content to make the selection independent of pool layout.
    let ordered = content_order(req.pool, req.unlabeled);
    let sub = normalize_rows(&req.pool.subset(&ordered)?)?;
    let report = uncertainty_report(&sub, req.head, req.params.top_n, req.params.k, T::lit(req.params.alpha))?;
    let u = &report.combined;
    let weights = match pick {
        ClusterPick::WeightedClosest if u.iter().any(|v| *v > T::zero()) => u.clone(),
        _ => vec![T::one(); u.len()],
    };
    let clusters = weighted_kmeans(sub.vectors(), &weights, req.budget, req.seed)?;
    let local = match pick {
        ClusterPick::UnweightedMostUncertain => select_cluster_most_uncertain(&clusters, u),
        _ => select_cluster_representatives(&clusters, sub.vectors()),
    };
    Ok(QuerySet::from_local(&ordered, local, Some(u)))
}

fn content_order<T: Scalar>(pool: &EmbeddingPool<T>, ids: &[usize]) -> Vec<usize> {
    let rows = pool.vectors();
    let mut ordered = ids.to_vec();
    ordered.sort_by(|&a, &b| {
        rows.row(a)
            .iter()
            .zip(rows.row(b).iter())
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    ordered
}

/// Uncertainty-weighted clustering, one query per cluster (closest to centroid).
pub fn cec_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    cluster_query(req, ClusterPick::WeightedClosest)
}

/// Unweighted k-means, then the most uncertain member of each cluster.
pub fn cec_greedy_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    cluster_query(req, ClusterPick::UnweightedMostUncertain)
}

/// Unweighted k-means, then the member closest to each centroid.
pub fn cec_unweighted_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    cluster_query(req, ClusterPick::UnweightedClosest)
}

/// Uniform sample without replacement.
pub fn random_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    req.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let local = rand::seq::index::sample(&mut rng, req.unlabeled.len(), req.budget).into_vec();
    Ok(QuerySet::from_local(req.unlabeled, local, None))
}

/// Top-b by raw zero-shot entropy; ties to the lower sample id.
pub fn entropy_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    req.validate()?;
    let sub = req.pool.subset(req.unlabeled)?;
    let h = zero_shot_probs(&sub, req.head)?.entropies();
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| {
        h[b].partial_cmp(&h[a])
            .unwrap()
            .then(req.unlabeled[a].cmp(&req.unlabeled[b]))
    });
    order.truncate(req.budget);
    Ok(QuerySet::from_local(req.unlabeled, order, Some(&h)))
}

/// k-center greedy: repeatedly take the unlabeled point farthest from
/// everything labeled or already taken. Ties to the lower sample id.
pub fn coreset_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    req.validate()?;
    if req.labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let mut ids = req.unlabeled.to_vec();
    ids.sort_unstable();
    let cand = normalize_rows(&req.pool.subset(&ids)?)?;
    let covered = normalize_rows(&req.pool.subset(req.labeled)?)?;
    let two = T::lit(2.0);
    let to_d2 = |dot: T| (two - two * dot).max(T::zero());

    let dots = cand.vectors().dot(&covered.vectors().t());
    let mut min_d2: Vec<T> = dots
        .outer_iter()
        .map(|row| row.iter().map(|&d| to_d2(d)).fold(T::infinity(), T::min))
        .collect();
    let mut picked = vec![false; ids.len()];
    let mut local = Vec::with_capacity(req.budget);
    for _ in 0..req.budget {
        let mut best: Option<usize> = None;
        for i in (0..ids.len()).filter(|&i| !picked[i]) {
            if best.is_none_or(|b| min_d2[i] > min_d2[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("budget <= unlabeled");
        picked[next] = true;
        local.push(next);
        let dots = cand.vectors().dot(&cand.vectors().row(next));
        for (m, &d) in min_d2.iter_mut().zip(dots.iter()) {
            *m = m.min(to_d2(d));
        }
    }
    Ok(QuerySet::from_local(&ids, local, Some(&min_d2)))
}

/// `(p - onehot(argmax p)) ⊗ z`, flattened class-major.
pub fn gradient_embedding<T: Scalar>(p: &[T], z: &[T]) -> Vec<T> {
    let top = scoring::argmax(ndarray::ArrayView1::from(p));
    p.iter()
        .enumerate()
        .flat_map(|(i, &pi)| {
            let a = if i == top { pi - T::one() } else { pi };
            z.iter().map(move |&zj| a * zj)
        })
        .collect()
}

/// k-means++ seeding over gradient embeddings. The first pick is drawn
/// proportional to `||g||^2`, later picks to the squared distance to the
/// nearest pick. Distances use `||g_x - g_y||^2 = |a_x|^2|z_x|^2 + |a_y|^2|z_y|^2
/// - 2 (a_x.a_y)(z_x.z_y)` so the `K*d` embeddings are never materialized.
pub fn badge_query<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    req.validate()?;
    let sub = req.pool.subset(req.unlabeled)?;
    let probs = zero_shot_probs(&sub, req.head)?;
    let z = normalize_rows(&sub)?;
    let z = z.vectors();
    let mut a: Array2<T> = probs.probs().to_owned();
    for (mut row, top) in a.axis_iter_mut(Axis(0)).zip(probs.predictions()) {
        row[top] -= T::one();
    }
    let n = a.nrows();
    let a_sq: Vec<f64> = a.outer_iter().map(|r| r.dot(&r).as_f64()).collect();
    let z_sq: Vec<f64> = z.outer_iter().map(|r| r.dot(&r).as_f64()).collect();
    let g_sq: Vec<f64> = a_sq.iter().zip(&z_sq).map(|(x, y)| x * y).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut taken = vec![false; n];
    let mut local = Vec::with_capacity(req.budget);
    let first = sample_proportional(&g_sq, &mut rng)
        .unwrap_or_else(|| rand::seq::index::sample(&mut rng, n, 1).index(0));
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        taken[current] = true;
        local.push(current);
        if local.len() == req.budget {
            break;
        }
        let a_dots = a.dot(&a.row(current));
        let z_dots = z.dot(&z.row(current));
        for i in 0..n {
            let d2 = g_sq[i] + g_sq[current] - 2.0 * a_dots[i].as_f64() * z_dots[i].as_f64();
            min_d2[i] = min_d2[i].min(d2.max(0.0));
        }
        let mass: Vec<f64> = (0..n).map(|i| if taken[i] { 0.0 } else { min_d2[i] }).collect();
        current = sample_proportional(&mass, &mut rng)
            .unwrap_or_else(|| (0..n).find(|&i| !taken[i]).expect("budget <= unlabeled"));
    }
    let norms: Vec<T> = g_sq.iter().map(|&v| T::lit(v.sqrt())).collect();
    Ok(QuerySet::from_local(req.unlabeled, local, Some(&norms)))
}

/// Runs `kind` natively.
pub fn query<T: Scalar>(kind: StrategyKind, req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    match kind {
        StrategyKind::Random => random_query(req),
        StrategyKind::Entropy => entropy_query(req),
        StrategyKind::CoreSet => coreset_query(req),
        StrategyKind::Badge => badge_query(req),
        StrategyKind::Cec => cec_query(req),
        StrategyKind::CecGreedy => cec_greedy_query(req),
        StrategyKind::CecUnweighted => cec_unweighted_query(req),
    }
}

/// The strategy actually run for a request: label-hungry strategies fall back
/// to random sampling while nothing is labeled.
pub fn effective_strategy(kind: StrategyKind, labeled_count: usize) -> StrategyKind {
    if labeled_count == 0 && kind.needs_labels() {
        StrategyKind::Random
    } else {
        kind
    }
}

/// [`query`] with the first-round fallback applied.
pub fn round_one_policy<T: Scalar>(kind: StrategyKind, req: &QueryRequest<'_, T>) -> Result<QuerySet<T>> {
    query(effective_strategy(kind, req.labeled.len()), req)
}

/// Uncertainty scores of the unlabeled pool, in `req.unlabeled` order.
pub fn score_unlabeled<T: Scalar>(req: &QueryRequest<'_, T>) -> Result<UncertaintyReport<T>> {
    let sub = req.unit_unlabeled()?;
    uncertainty_report(&sub, req.head, req.params.top_n, req.params.k, T::lit(req.params.alpha))
}

/// Combined uncertainty of the given unlabeled ids, scored against the whole
/// unlabeled pool of the request.
pub fn score_selected<T: Scalar>(req: &QueryRequest<'_, T>, ids: &[usize]) -> Result<Vec<T>> {
    let position: std::collections::HashMap<usize, usize> =
        req.unlabeled.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let rows = ids
        .iter()
        .map(|id| {
            position
                .get(id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("sample {id} is not unlabeled")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sub = req.unit_unlabeled()?;
    uncertainty_of(&sub, req.head, req.params.top_n, req.params.k, T::lit(req.params.alpha), &rows)
}
