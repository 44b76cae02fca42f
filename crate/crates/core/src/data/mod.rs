//! Labelled datasets, file loaders, synthetic blobs and the non-IID partitioner.

mod cifar;
mod idx;
mod partition;
mod synthetic;

pub use cifar::{load_cifar10, CIFAR_RECORD_LEN};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition_major_minor, ClassShare, PartitionConfig, PartitionPlan};
pub use synthetic::{synthesize, synthesize_split, SyntheticSpec};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.shape()[0] != labels.len() || inputs.shape().len() < 2 {
            return Err(Error::Shape {
                layer: "dataset".into(),
                expected: vec![labels.len()],
                got: inputs.shape().to_vec(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample, without the leading batch dimension.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    fn gather(&self, indices: impl ExactSizeIterator<Item = usize>) -> Result<(Tensor, Vec<usize>)> {
        let d = self.sample_len();
        let n = indices.len();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for i in indices {
            if i >= self.len() {
                return Err(Error::Alignment(format!("sample index {i} out of {}", self.len())));
            }
            data.extend_from_slice(&self.inputs.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// Contiguous rows as a mini-batch.
    pub fn batch(&self, range: Range<usize>) -> Result<Batch> {
        let (inputs, labels) = self.gather(range)?;
        Batch::new(inputs, labels)
    }

    pub fn batch_of(&self, indices: &[usize]) -> Result<Batch> {
        let (inputs, labels) = self.gather(indices.iter().copied())?;
        Batch::new(inputs, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (inputs, labels) = self.gather(indices.iter().copied())?;
        Dataset::new(inputs, labels, self.classes)
    }

    /// Per-class sample counts.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation_and_subset() {
        let inputs = Tensor::new(vec![3, 2], vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1]).unwrap();
        assert!(Dataset::new(inputs.clone(), vec![0, 1], 2).is_err());
        assert!(Dataset::new(inputs.clone(), vec![0, 1, 2], 2).is_err());
        let ds = Dataset::new(inputs, vec![0, 1, 1], 2).unwrap();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.labels(), &[1, 0]);
        assert_eq!(sub.inputs().data(), &[2.0, 2.1, 0.0, 0.1]);
        assert_eq!(ds.histogram(), vec![1, 2]);
        assert!(ds.subset(&[3]).is_err());
        assert_eq!(ds.batch(1..3).unwrap().labels(), &[1, 1]);
    }
}
