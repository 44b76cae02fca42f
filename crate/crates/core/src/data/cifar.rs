use std::path::PathBuf;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One label byte followed by 32×32 red, green and blue planes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Load and concatenate CIFAR-10 binary batch files into `[N, 3, 32, 32]`.
pub fn load_cifar10(bin_paths: &[PathBuf]) -> Result<Dataset> {
    if bin_paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in bin_paths {
        let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
        if bytes.is_empty() {
            return Err(Error::load(path, "empty file"));
        }
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::load(
                path,
                format!("{} bytes is not a multiple of {CIFAR_RECORD_LEN}", bytes.len()),
            ));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = record[0] as usize;
            if label >= 10 {
                return Err(Error::load(path, format!("label byte {label} out of range")));
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10)
}
