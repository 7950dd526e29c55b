//! Embedding pools, class heads, their file formats, and the synthetic generator.

mod io;
mod pool;
mod synth;

pub use io::{
    label_path_for, load_class_head, load_labels, load_pool, save_class_head, save_labels,
    save_pool, save_pool_binary, save_pool_csv, PoolFormat, LABEL_MAGIC, MATRIX_MAGIC,
};
pub use pool::{normalize_matrix_rows, normalize_rows, ClassHead, EmbeddingPool, Labels};
pub use synth::{generate_synthetic, SyntheticSpec};

/// Temperature of the zero-shot softmax.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;
