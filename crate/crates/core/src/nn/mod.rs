//! Small dense neural-network engine: MLPs and LeNet-style CNNs with a
//! softmax cross-entropy head, reverse-mode gradients and SGD.

mod engine;
mod optim;
mod spec;

pub(crate) use engine::accumulate_squared_grads;
pub use engine::{forward, loss_and_grad, per_sample_grads, Batch};
pub use optim::{sgd_step, SgdConfig};
pub use spec::{build_network, Layer, NetworkSpec};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

const EVAL_CHUNK: usize = 256;

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(spec: &NetworkSpec, params: &ParamSet, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let batch = dataset.batch(start..end)?;
        let (_, logits) = forward(spec, params, &batch)?;
        let c = logits.shape()[1];
        correct += logits
            .data()
            .chunks_exact(c)
            .zip(batch.labels())
            .filter(|(row, y)| argmax(row) == **y)
            .count();
        start = end;
    }
    Ok(correct as f64 / dataset.len() as f64)
}
