use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ground-truth class ids for every sample of a pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    classes: Vec<usize>,
    num_classes: usize,
}

impl Labels {
    pub fn new(classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 1 {
            return Err(Error::InvalidInput("label set needs at least one class".into()));
        }
        if let Some((row, &c)) = classes.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {c} at row {row} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { classes, num_classes })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// An `n x d` matrix of sample embeddings. Sample ids are row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool<T> {
    vectors: Array2<T>,
    labels: Option<Labels>,
}

impl<T: Scalar> EmbeddingPool<T> {
    /// Validates `n >= 1`, `d >= 2`, finiteness and label count.
    pub fn new(vectors: Array2<T>, labels: Option<Labels>) -> Result<Self> {
        let (n, d) = vectors.dim();
        if n == 0 {
            return Err(Error::InvalidInput("pool must contain at least one sample".into()));
        }
        if d < 2 {
            return Err(Error::InvalidInput(format!("embedding dimension {d} < 2")));
        }
        if let Some((idx, _)) = vectors.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::LengthMismatch {
                    what: "labels",
                    expected: n,
                    found: l.len(),
                });
            }
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn label(&self, id: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.classes.get(id).copied())
    }

    pub fn with_labels(self, labels: Option<Labels>) -> Result<Self> {
        Self::new(self.vectors, labels)
    }

    /// Rows `ids` in the given order, labels carried along.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!("sample id {bad} out of range")));
        }
        let vectors = self.vectors.select(Axis(0), ids);
        let labels = self.labels.as_ref().map(|l| Labels {
            classes: ids.iter().map(|&i| l.classes[i]).collect(),
            num_classes: l.num_classes,
        });
        Self::new(vectors, labels)
    }

    pub fn into_parts(self) -> (Array2<T>, Option<Labels>) {
        (self.vectors, self.labels)
    }
}

/// Class embeddings `t_i` (one per row) with the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead<T> {
    class_embeddings: Array2<T>,
    temperature: T,
}

impl<T: Scalar> ClassHead<T> {
    pub fn new(class_embeddings: Array2<T>, temperature: T) -> Result<Self> {
        let k = class_embeddings.nrows();
        if k < 2 {
            return Err(Error::InvalidInput(format!("class head needs K >= 2, got {k}")));
        }
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        for (i, row) in class_embeddings.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("class row {i} is not finite")));
            }
            if row.iter().all(|v| v.is_zero()) {
                return Err(Error::ZeroNorm { row: i });
            }
        }
        Ok(Self {
            class_embeddings,
            temperature,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.class_embeddings.ncols()
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn class_embeddings(&self) -> ArrayView2<'_, T> {
        self.class_embeddings.view()
    }

    /// Same head with every class row scaled to unit length.
    pub fn normalized(&self) -> Self {
        let rows = normalize_matrix_rows(self.class_embeddings.view())
            .expect("class rows are nonzero by construction");
        Self {
            class_embeddings: rows,
            temperature: self.temperature,
        }
    }
}

/// Unit-L2 copy of `m`; fails on the first zero row.
pub fn normalize_matrix_rows<T: Scalar>(m: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let mut out = m.to_owned();
    for (row_idx, mut row) in out.outer_iter_mut().enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm > T::zero()) {
            return Err(Error::ZeroNorm { row: row_idx });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// Scales every sample to unit L2 norm.
pub fn normalize_rows<T: Scalar>(pool: &EmbeddingPool<T>) -> Result<EmbeddingPool<T>> {
    let vectors = normalize_matrix_rows(pool.vectors())?;
    EmbeddingPool::new(vectors, pool.labels.clone())
}
