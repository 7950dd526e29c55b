//! The multi-round loop: query, label, retrain from the zero-shot head, evaluate.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{AlConfig, DataSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{generate_synthetic, load_class_head, load_pool, normalize_rows, ClassHead, EmbeddingPool, PoolFormat};
use crate::strategies::{effective_strategy, query, score_selected, QueryRequest, QuerySet, StrategyKind};
use crate::trainer::{evaluate, train_head, TrainConfig};

/// Unit-norm train and test pools plus the zero-shot head.
#[derive(Debug, Clone)]
pub struct ExperimentData<T> {
    pub train: EmbeddingPool<T>,
    pub test: EmbeddingPool<T>,
    pub zero_shot: ClassHead<T>,
}

impl<T: Scalar> ExperimentData<T> {
    pub fn new(train: EmbeddingPool<T>, test: EmbeddingPool<T>, zero_shot: ClassHead<T>) -> Result<Self> {
        for (name, pool) in [("train", &train), ("test", &test)] {
            if pool.dim() != zero_shot.dim() {
                return Err(Error::DimensionMismatch {
                    expected: zero_shot.dim(),
                    found: pool.dim(),
                });
            }
            let labels = pool
                .labels()
                .ok_or_else(|| Error::InvalidInput(format!("{name} pool has no labels")))?;
            if let Some(&c) = labels.classes().iter().find(|&&c| c >= zero_shot.num_classes()) {
                return Err(Error::InvalidInput(format!(
                    "{name} label {c} out of range for a head with {} classes",
                    zero_shot.num_classes()
                )));
            }
        }
        Ok(Self {
            train: normalize_rows(&train)?,
            test: normalize_rows(&test)?,
            zero_shot: zero_shot.normalized(),
        })
    }

    pub fn load(cfg: &AlConfig) -> Result<Self> {
        match cfg.data_source()? {
            DataSource::Synthetic(s) => {
                let (pool, head) = generate_synthetic::<T>(&s.spec()?)?;
                let train_ids: Vec<usize> = (0..s.n_train).collect();
                let test_ids: Vec<usize> = (s.n_train..s.n_train + s.n_test).collect();
                let head = ClassHead::new(head.class_embeddings().to_owned(), T::lit(cfg.temperature))?;
                Self::new(pool.subset(&train_ids)?, pool.subset(&test_ids)?, head)
            }
            DataSource::Files(f) => {
                let train = load_pool(&f.train, PoolFormat::from_path(&f.train))?;
                let test = load_pool(&f.test, PoolFormat::from_path(&f.test))?;
                let head = load_class_head(&f.class_head, T::lit(cfg.temperature))?;
                Self::new(train, test, head)
            }
        }
    }

    fn test_ids(&self) -> Vec<usize> {
        (0..self.test.len()).collect()
    }
}

/// Ground-truth label lookup over the train pool.
#[derive(Debug, Clone, Copy)]
pub struct Oracle<'a, T> {
    pool: &'a EmbeddingPool<T>,
}

impl<'a, T: Scalar> Oracle<'a, T> {
    pub fn new(pool: &'a EmbeddingPool<T>) -> Self {
        Self { pool }
    }

    pub fn label(&self, id: usize) -> Result<usize> {
        self.pool.label(id).ok_or(Error::MissingLabel { id })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// Strategy that actually ran (label-hungry ones fall back in round 1).
    pub strategy_used: StrategyKind,
    pub selected: Vec<usize>,
    pub selected_labels: Vec<usize>,
    pub budget: usize,
    pub labeled: usize,
    pub accuracy: f64,
    /// Distinct classes among all labeled samples after this round.
    pub coverage: usize,
    /// Mean combined uncertainty of the selected samples at query time.
    pub mean_uncertainty: f64,
}

/// Labeled/unlabeled partition of the train pool and the per-round history.
#[derive(Debug, Clone)]
pub struct AlState {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub round: usize,
    pub history: Vec<RoundRecord>,
}

impl AlState {
    pub fn new(n_train: usize) -> Self {
        Self {
            labeled: Vec::new(),
            unlabeled: (0..n_train).collect(),
            round: 0,
            history: Vec::new(),
        }
    }

    /// Moves `selected` from unlabeled to labeled; each must currently be unlabeled.
    pub fn label(&mut self, selected: &[usize]) -> Result<()> {
        let pick: BTreeSet<usize> = selected.iter().copied().collect();
        if pick.len() != selected.len() {
            return Err(Error::InvalidInput("query contains repeated ids".into()));
        }
        let before = self.unlabeled.len();
        self.unlabeled.retain(|id| !pick.contains(id));
        if before - self.unlabeled.len() != pick.len() {
            return Err(Error::InvalidInput("query contains ids that are not unlabeled".into()));
        }
        self.labeled.extend_from_slice(selected);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunHistory {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub rounds: Vec<RoundRecord>,
    /// Set when the pool ran out before the requested budget was spent.
    pub truncated: bool,
}

/// One seeded run of `strategy`.
pub fn run_single<T: Scalar>(
    cfg: &AlConfig,
    data: &ExperimentData<T>,
    strategy: StrategyKind,
    seed: u64,
) -> Result<RunHistory> {
    let n_train = data.train.len();
    let budget = cfg.budget(n_train);
    let oracle = Oracle::new(&data.train);
    let test_ids = data.test_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AlState::new(n_train);
    let mut head = data.zero_shot.clone();
    let mut truncated = false;
    let mut classes_seen = BTreeSet::new();

    for round in 1..=cfg.rounds {
        let query_seed = rng.next_u64();
        let train_seed = rng.next_u64();
        let b = budget.min(state.unlabeled.len());
        if b < budget {
            truncated = true;
        }
        if b == 0 {
            break;
        }
        let req = QueryRequest {
            pool: &data.train,
            head: &head,
            labeled: &state.labeled,
            unlabeled: &state.unlabeled,
            budget: b,
            params: cfg.params,
            seed: query_seed,
        };
        let used = effective_strategy(strategy, state.labeled.len());
        let set = query(used, &req)?;
        let mean_uncertainty = mean_selected_uncertainty(&req, &set, used)?;

        let selected_labels = set
            .selected
            .iter()
            .map(|&id| oracle.label(id))
            .collect::<Result<Vec<_>>>()?;
        classes_seen.extend(selected_labels.iter().copied());
        state.label(&set.selected)?;
        state.round = round;

        let train_cfg = TrainConfig {
            seed: train_seed,
            ..cfg.train
        };
        head = train_head(&data.train, &state.labeled, &data.zero_shot, &train_cfg)?.head;
        let accuracy = evaluate(&head, &data.test, &test_ids)?;
        state.history.push(RoundRecord {
            round,
            strategy_used: used,
            selected: set.selected,
            selected_labels,
            budget: b,
            labeled: state.labeled.len(),
            accuracy,
            coverage: classes_seen.len(),
            mean_uncertainty,
        });
    }
    Ok(RunHistory {
        seed,
        strategy,
        rounds: state.history,
        truncated,
    })
}

fn mean_selected_uncertainty<T: Scalar>(req: &QueryRequest<'_, T>, set: &QuerySet<T>, kind: StrategyKind) -> Result<f64> {
    let scores = match (&set.scores, kind) {
        (Some(u), StrategyKind::Cec | StrategyKind::CecGreedy | StrategyKind::CecUnweighted) => u.clone(),
        _ => score_selected(req, &set.selected)?,
    };
    Ok(scores.iter().map(|u| u.as_f64()).sum::<f64>() / scores.len() as f64)
}

/// All seeds of one strategy; seeds run in parallel, results in seed order.
pub fn run_strategy<T: Scalar>(cfg: &AlConfig, data: &ExperimentData<T>, strategy: StrategyKind) -> Result<Vec<RunHistory>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| run_single(cfg, data, strategy, seed))
        .collect()
}

/// Accuracy of the untrained head on the test split.
pub fn zero_shot_accuracy<T: Scalar>(data: &ExperimentData<T>) -> Result<f64> {
    evaluate(&data.zero_shot, &data.test, &data.test_ids())
}
