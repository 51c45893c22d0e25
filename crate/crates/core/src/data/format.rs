//! On-disk dataset format.
//!
//! A dataset is a JSON manifest next to three matrix blobs. Each blob is the
//! magic `ASGMAT01`, `u32` rows, `u32` cols (both little-endian) and then
//! `rows * cols` little-endian `f64` values in row-major order. Labels are
//! stored as a `t x 1` matrix of integral values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SplitSpec};
use crate::error::DataError;
use crate::tensor::Tensor;

pub const MATRIX_MAGIC: &[u8; 8] = b"ASGMAT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub num_samples: usize,
    pub d_x: usize,
    pub d_c: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub feature_file: String,
    pub embedding_file: String,
    pub label_file: String,
    pub seen_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub splits: SplitSpec,
    pub dims: Dims,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn matrix_to_bytes(m: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8], path: &Path) -> Result<Tensor, DataError> {
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            detail: format!(
                "{rows}x{cols} needs {} bytes of values, found {}",
                rows * cols * 8,
                body.len()
            ),
        });
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(vec![rows, cols], data).map_err(|e| DataError::Format(e.to_string()))
}

pub fn write_matrix(path: &Path, m: &Tensor) -> Result<(), DataError> {
    fs::write(path, matrix_to_bytes(m)).map_err(io_err(path))
}

pub fn read_matrix(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    matrix_from_bytes(&bytes, path)
}

fn expect_dims(what: &str, m: &Tensor, rows: usize, cols: usize) -> Result<(), DataError> {
    if m.rows() != rows || m.cols() != cols {
        return Err(DataError::DimMismatch {
            what: what.to_string(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok(())
}

/// Loads, validates and rescales a dataset described by a manifest. Blob
/// paths are resolved relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let features = read_matrix(&dir.join(&manifest.feature_file))?;
    let embeddings = read_matrix(&dir.join(&manifest.embedding_file))?;
    let label_matrix = read_matrix(&dir.join(&manifest.label_file))?;
    let d = manifest.dims;
    expect_dims("feature matrix", &features, d.num_samples, d.d_x)?;
    expect_dims("embedding matrix", &embeddings, d.num_classes, d.d_c)?;
    expect_dims("label matrix", &label_matrix, d.num_samples, 1)?;
    let mut labels = Vec::with_capacity(d.num_samples);
    for (row, &v) in label_matrix.data().iter().enumerate() {
        if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < d.num_classes) {
            return Err(DataError::LabelOutOfRange {
                row,
                label: v,
                num_classes: d.num_classes,
            });
        }
        labels.push(v as usize);
    }
    Dataset::new(
        features,
        labels,
        embeddings,
        manifest.seen_classes,
        manifest.novel_classes,
        manifest.splits,
    )?
    .rescaled()
}

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            feature_file: "features.bin".into(),
            embedding_file: "embeddings.bin".into(),
            label_file: "labels.bin".into(),
            seen_classes: self.seen_classes().to_vec(),
            novel_classes: self.novel_classes().to_vec(),
            splits: self.splits().clone(),
            dims: Dims {
                num_samples: self.num_rows(),
                d_x: self.d_x(),
                d_c: self.d_c(),
                num_classes: self.num_classes(),
            },
        }
    }

    /// Writes `manifest.json` and its blobs into `dir` and returns the
    /// manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = self.manifest();
        write_matrix(&dir.join(&manifest.feature_file), self.raw_features())?;
        write_matrix(&dir.join(&manifest.embedding_file), self.class_embeddings())?;
        let labels = Tensor::new(
            vec![self.num_rows(), 1],
            self.raw_labels().iter().map(|&l| l as f64).collect(),
        )
        .expect("label column");
        write_matrix(&dir.join(&manifest.label_file), &labels)?;
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Reads a headerless numeric CSV into a matrix.
pub fn read_csv_matrix(path: &Path) -> Result<Tensor, DataError> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(DataError::Format(format!(
                "{}: row {rows} has {} fields, expected {}",
                path.display(),
                record.len(),
                cols.unwrap_or(0)
            )));
        }
        for field in &record {
            let v: f64 = field.parse().map_err(|_| {
                DataError::Format(format!(
                    "{}: row {rows}: {field:?} is not a number",
                    path.display()
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor::new(vec![rows, cols.unwrap_or(0)], data).map_err(|e| DataError::Format(e.to_string()))
}

/// Converts a CSV matrix into an `ASGMAT01` blob and returns its shape.
pub fn convert_csv(input: &Path, output: &Path) -> Result<(usize, usize), DataError> {
    let m = read_csv_matrix(input)?;
    write_matrix(output, &m)?;
    Ok((m.rows(), m.cols()))
}
