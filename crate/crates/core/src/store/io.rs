//! Binary and CSV readers/writers.
//!
//! Binary matrix: `EMB1`, little-endian `u32 n`, `u32 d`, then `n*d` `f32`
//! row-major. Label file: `LBL1`, `u32 n`, `u32 K`, then `n` `u32` ids. A
//! pool's labels live next to it with the `.lbl` extension.
//!
//! CSV: one sample per line. An optional first line `has_labels=1` (optionally
//! `,num_classes=K`) marks a trailing integer label column.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use super::pool::{ClassHead, EmbeddingPool, Labels};
use crate::error::{DataError, Error, Result};
use crate::scalar::Scalar;

pub const MATRIX_MAGIC: &[u8; 4] = b"EMB1";
pub const LABEL_MAGIC: &[u8; 4] = b"LBL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolFormat {
    Binary,
    Csv,
}

impl PoolFormat {
    /// `.csv` means CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PoolFormat::Csv,
            _ => PoolFormat::Binary,
        }
    }
}

impl FromStr for PoolFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(PoolFormat::Binary),
            "csv" => Ok(PoolFormat::Csv),
            other => Err(Error::Config(format!("unknown pool format {other:?}"))),
        }
    }
}

pub fn label_path_for(path: &Path) -> PathBuf {
    path.with_extension("lbl")
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Read {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], DataError> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < len {
            return Err(DataError::Truncated {
                path: self.path.to_owned(),
                offset: self.bytes.len(),
                needed: len - remaining,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), DataError> {
        let found = self.take(4).map_err(|_| DataError::BadMagic {
            path: self.path.to_owned(),
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(self.bytes).into_owned(),
        })?;
        if found != expected {
            return Err(DataError::BadMagic {
                path: self.path.to_owned(),
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), DataError> {
        if self.pos != self.bytes.len() {
            return Err(DataError::TrailingBytes {
                path: self.path.to_owned(),
                offset: self.pos,
                extra: self.bytes.len() - self.pos,
            });
        }
        Ok(())
    }
}

fn read_matrix<T: Scalar>(path: &Path) -> Result<Array2<T>, DataError> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(MATRIX_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    if n == 0 || d < 2 {
        return Err(DataError::MalformedHeader {
            path: path.to_owned(),
            reason: format!("need n >= 1 and d >= 2, header says n={n}, d={d}"),
        });
    }
    let body = r.take(n * d * 4)?;
    r.finish()?;
    let mut values = Vec::with_capacity(n * d);
    for (idx, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(DataError::NonFinite {
                path: path.to_owned(),
                row: idx / d,
                col: idx % d,
            });
        }
        values.push(T::from_f32(v).expect("f32 fits"));
    }
    Ok(Array2::from_shape_vec((n, d), values).expect("shape matches length"))
}

fn matrix_bytes<T: Scalar>(m: ArrayView2<'_, T>) -> Vec<u8> {
    let (n, d) = m.dim();
    let mut out = Vec::with_capacity(12 + n * d * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

/// Reads a label file; `expected_len` is the pool size it must match.
pub fn load_labels(path: &Path, expected_len: Option<usize>) -> Result<Labels> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(LABEL_MAGIC)?;
    let n = r.u32()? as usize;
    let k = r.u32()? as usize;
    if k == 0 {
        return Err(DataError::MalformedHeader {
            path: path.to_owned(),
            reason: "label file declares K = 0".into(),
        }
        .into());
    }
    if let Some(expected) = expected_len {
        if expected != n {
            return Err(DataError::LabelCountMismatch {
                path: path.to_owned(),
                labels: n,
                samples: expected,
            }
            .into());
        }
    }
    let mut classes = Vec::with_capacity(n);
    for row in 0..n {
        let label = r.u32()?;
        if label as usize >= k {
            return Err(DataError::LabelOutOfRange {
                path: path.to_owned(),
                row,
                label: label as u64,
                num_classes: k,
            }
            .into());
        }
        classes.push(label as usize);
    }
    r.finish()?;
    Labels::new(classes, k)
}

pub fn save_labels(labels: &Labels, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + labels.len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(labels.num_classes() as u32).to_le_bytes());
    for &c in labels.classes() {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    write_file(path, &out)
}

fn parse_csv<T: Scalar>(path: &Path) -> Result<(Array2<T>, Option<Labels>)> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| DataError::MalformedHeader {
        path: path.to_owned(),
        reason: format!("not UTF-8 at byte {}", e.utf8_error().valid_up_to()),
    })?;
    let mut lines = text.lines().peekable();
    let mut has_labels = false;
    let mut declared_k: Option<usize> = None;
    if let Some(first) = lines.peek() {
        if first.trim_start().starts_with("has_labels") {
            for field in first.split(',') {
                let (key, value) = field.split_once('=').ok_or_else(|| DataError::MalformedHeader {
                    path: path.to_owned(),
                    reason: format!("header field {field:?} is not key=value"),
                })?;
                let bad = || DataError::MalformedHeader {
                    path: path.to_owned(),
                    reason: format!("bad value for {}", key.trim()),
                };
                match key.trim() {
                    "has_labels" => match value.trim() {
                        "1" => has_labels = true,
                        "0" => has_labels = false,
                        _ => return Err(bad().into()),
                    },
                    "num_classes" => {
                        declared_k = Some(value.trim().parse().map_err(|_| bad())?);
                    }
                    other => {
                        return Err(DataError::MalformedHeader {
                            path: path.to_owned(),
                            reason: format!("unknown header key {other:?}"),
                        }
                        .into())
                    }
                }
            }
            lines.next();
        }
    }

    let mut width: Option<usize> = None;
    let mut values: Vec<T> = Vec::new();
    let mut classes: Vec<usize> = Vec::new();
    let mut row = 0usize;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(DataError::DimensionMismatch {
                path: path.to_owned(),
                row,
                expected,
                found: fields.len(),
            }
            .into());
        }
        let feature_cols = if has_labels { fields.len() - 1 } else { fields.len() };
        for (col, field) in fields[..feature_cols].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| DataError::Parse {
                path: path.to_owned(),
                row,
                col,
                text: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    path: path.to_owned(),
                    row,
                    col,
                }
                .into());
            }
            values.push(T::lit(v));
        }
        if has_labels {
            let field = fields[feature_cols];
            let label: u64 = field.parse().map_err(|_| DataError::Parse {
                path: path.to_owned(),
                row,
                col: feature_cols,
                text: field.to_string(),
            })?;
            if let Some(k) = declared_k {
                if label >= k as u64 {
                    return Err(DataError::LabelOutOfRange {
                        path: path.to_owned(),
                        row,
                        label,
                        num_classes: k,
                    }
                    .into());
                }
            }
            classes.push(label as usize);
        }
        row += 1;
    }

    let d = width.map(|w| if has_labels { w - 1 } else { w }).unwrap_or(0);
    if row == 0 || d < 2 {
        return Err(DataError::MalformedHeader {
            path: path.to_owned(),
            reason: format!("need at least one row and two feature columns, found {row} rows x {d}"),
        }
        .into());
    }
    let matrix = Array2::from_shape_vec((row, d), values).expect("rows have equal width");
    let labels = if has_labels {
        let k = declared_k.unwrap_or_else(|| classes.iter().max().map_or(1, |m| m + 1));
        Some(Labels::new(classes, k)?)
    } else {
        None
    };
    Ok((matrix, labels))
}

/// Loads and validates a pool; a sibling `.lbl` file supplies labels when the
/// data file does not carry them inline.
pub fn load_pool<T: Scalar>(path: &Path, format: PoolFormat) -> Result<EmbeddingPool<T>> {
    let (vectors, inline_labels) = match format {
        PoolFormat::Binary => (read_matrix::<T>(path)?, None),
        PoolFormat::Csv => parse_csv::<T>(path)?,
    };
    let labels = match inline_labels {
        Some(l) => Some(l),
        None => {
            let lbl = label_path_for(path);
            if lbl.is_file() {
                Some(load_labels(&lbl, Some(vectors.nrows()))?)
            } else {
                None
            }
        }
    };
    EmbeddingPool::new(vectors, labels)
}

/// Writes the pool as a binary matrix plus a sibling `.lbl` when labelled.
pub fn save_pool_binary<T: Scalar>(pool: &EmbeddingPool<T>, path: &Path) -> Result<()> {
    write_file(path, &matrix_bytes(pool.vectors()))?;
    if let Some(labels) = pool.labels() {
        save_labels(labels, &label_path_for(path))?;
    }
    Ok(())
}

pub fn save_pool_csv<T: Scalar>(pool: &EmbeddingPool<T>, path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some(l) = pool.labels() {
        out.push_str(&format!("has_labels=1,num_classes={}\n", l.num_classes()));
    }
    for (i, row) in pool.vectors().outer_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
        if let Some(c) = pool.label(i) {
            fields.push(c.to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn save_pool<T: Scalar>(pool: &EmbeddingPool<T>, path: &Path, format: PoolFormat) -> Result<()> {
    match format {
        PoolFormat::Binary => save_pool_binary(pool, path),
        PoolFormat::Csv => save_pool_csv(pool, path),
    }
}

/// A `K x d` class matrix in either pool format; a CSV label column is dropped.
pub fn load_class_head<T: Scalar>(path: &Path, temperature: T) -> Result<ClassHead<T>> {
    let m = match PoolFormat::from_path(path) {
        PoolFormat::Binary => read_matrix::<T>(path)?,
        PoolFormat::Csv => parse_csv::<T>(path)?.0,
    };
    ClassHead::new(m, temperature)
}

pub fn save_class_head<T: Scalar>(head: &ClassHead<T>, path: &Path) -> Result<()> {
    write_file(path, &matrix_bytes(head.class_embeddings()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn csv_three_by_two() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"1,0\n0,1\n1,1");
        let pool: EmbeddingPool<f64> = load_pool(&p, PoolFormat::Csv).unwrap();
        assert_eq!((pool.len(), pool.dim()), (3, 2));
        assert!(pool.labels().is_none());
    }

    #[test]
    fn csv_nan_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"1,0\n0,NaN\n");
        let err = load_pool::<f64>(&p, PoolFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Data(DataError::NonFinite { row: 1, col: 1, .. })), "{err}");
    }

    #[test]
    fn csv_errors_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"1,0\n0,1,2\n");
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Csv).unwrap_err(),
            Error::Data(DataError::DimensionMismatch { row: 1, expected: 2, found: 3, .. })
        ));
        let p = write(dir.path(), "b.csv", b"1,0\n0,x\n");
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Csv).unwrap_err(),
            Error::Data(DataError::Parse { row: 1, col: 1, .. })
        ));
        let p = write(dir.path(), "c.csv", b"has_labels=1,num_classes=2\n1,0,0\n0,1,2\n");
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Csv).unwrap_err(),
            Error::Data(DataError::LabelOutOfRange { row: 1, label: 2, .. })
        ));
        let p = write(dir.path(), "d.csv", b"has_labels=yes\n1,0,0\n");
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Csv).unwrap_err(),
            Error::Data(DataError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn csv_inline_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"has_labels=1\n1,0,0\n0,1,1\n0.5,0.5,1\n");
        let pool: EmbeddingPool<f64> = load_pool(&p, PoolFormat::Csv).unwrap();
        assert_eq!(pool.dim(), 2);
        let labels = pool.labels().unwrap();
        assert_eq!(labels.classes(), &[0, 1, 1]);
        assert_eq!(labels.num_classes(), 2);
    }

    #[test]
    fn binary_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.emb", b"EMB2\x01\0\0\0\x02\0\0\0\0\0\0\0\0\0\0\0");
        let err = load_pool::<f32>(&p, PoolFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn binary_truncation_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.emb", b"EMB1\x02\0\0\0\x02\0\0\0\0\0\0\0");
        assert!(matches!(
            load_pool::<f32>(&p, PoolFormat::Binary).unwrap_err(),
            Error::Data(DataError::Truncated { offset: 16, needed: 12, .. })
        ));
        let p = write(dir.path(), "b.emb", b"EMB1\x01\0\0\0\x01\0\0\0\0\0\0\0");
        assert!(matches!(
            load_pool::<f32>(&p, PoolFormat::Binary).unwrap_err(),
            Error::Data(DataError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn binary_nonfinite_and_label_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"EMB1\x02\0\0\0\x02\0\0\0".to_vec();
        for v in [1.0f32, 0.0, f32::INFINITY, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = write(dir.path(), "a.emb", &bytes);
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Binary).unwrap_err(),
            Error::Data(DataError::NonFinite { row: 1, col: 0, .. })
        ));

        let mut bytes = b"EMB1\x02\0\0\0\x02\0\0\0".to_vec();
        for v in [1.0f32, 0.0, 0.0, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = write(dir.path(), "b.emb", &bytes);
        write(dir.path(), "b.lbl", b"LBL1\x02\0\0\0\x02\0\0\0\x01\0\0\0\x05\0\0\0");
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Binary).unwrap_err(),
            Error::Data(DataError::LabelOutOfRange { row: 1, label: 5, .. })
        ));
        write(dir.path(), "b.lbl", b"LBL1\x03\0\0\0\x02\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0");
        assert!(matches!(
            load_pool::<f64>(&p, PoolFormat::Binary).unwrap_err(),
            Error::Data(DataError::LabelCountMismatch { .. })
        ));
    }

    #[test]
    fn head_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let head = ClassHead::new(array![[1.0f32, 0.0, 0.5], [0.0, 1.0, -0.5]], 0.01).unwrap();
        let p = dir.path().join("head.emb");
        save_class_head(&head, &p).unwrap();
        let back = load_class_head::<f32>(&p, 0.01).unwrap();
        assert_eq!(back, head);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_round_trip(
            n in 1usize..12, d in 2usize..6, k in 2usize..5,
            seed in prop::collection::vec(-1e3f32..1e3, 72),
            label_seed in prop::collection::vec(0usize..100, 12),
        ) {
            let vals: Vec<f32> = (0..n * d).map(|i| seed[i % seed.len()] * (1.0 + i as f32 * 1e-3)).collect();
            let labels = Labels::new(label_seed[..n].iter().map(|&c| c % k).collect(), k).unwrap();
            let pool = EmbeddingPool::new(Array2::from_shape_vec((n, d), vals).unwrap(), Some(labels)).unwrap();
            let dir = tempfile::tempdir().unwrap();

            let bin = dir.path().join("p.emb");
            save_pool_binary(&pool, &bin).unwrap();
            let back: EmbeddingPool<f32> = load_pool(&bin, PoolFormat::Binary).unwrap();
            prop_assert_eq!(&back, &pool);

            let csv = dir.path().join("p.csv");
            save_pool_csv(&pool, &csv).unwrap();
            let back: EmbeddingPool<f32> = load_pool(&csv, PoolFormat::Csv).unwrap();
            prop_assert_eq!(back.labels(), pool.labels());
            for (a, b) in back.vectors().iter().zip(pool.vectors().iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }
}
