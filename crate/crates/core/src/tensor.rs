//! Dense row-major tensors and named parameter collections.
//!
//! A [`ParamSet`] is the unit every other module works with: weights, gradients,
//! momentum buffers, curvatures and variances are all `ParamSet`s sharing the
//! same entry order, so element `j` of one always refers to element `j` of the
//! others.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(Error::TensorLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Which half of the network a parameter belongs to, for layer-level
/// personalization baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerTag {
    FeatureExtractor,
    Classifier,
}

impl std::str::FromStr for LayerTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_extractor" => Ok(LayerTag::FeatureExtractor),
            "classifier" => Ok(LayerTag::Classifier),
            other => Err(Error::config("tag", format!("unknown layer tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub tag: Option<LayerTag>,
    pub tensor: Tensor,
}

/// Names and shapes of a [`ParamSet`], without the values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    entries: Vec<(String, Vec<usize>)>,
}

impl Layout {
    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn check_same(&self, other: &Layout) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Alignment(format!(
                "{} entries vs {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, sa), (nb, sb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || sa != sb {
                return Err(Error::Alignment(format!("entry `{na}` {sa:?} vs `{nb}` {sb:?}")));
            }
        }
        Ok(())
    }
}

/// Ordered, named collection of tensors for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Alignment(format!("duplicate entry name `{}`", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count `n_W`.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn layout(&self) -> Layout {
        Layout {
            entries: self
                .entries
                .iter()
                .map(|e| (e.name.clone(), e.tensor.shape.clone()))
                .collect(),
        }
    }

    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Alignment(format!(
                "{} entries vs {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape != b.tensor.shape {
                return Err(Error::Alignment(format!(
                    "entry `{}` {:?} vs `{}` {:?}",
                    a.name, a.tensor.shape, b.name, b.tensor.shape
                )));
            }
        }
        Ok(())
    }

    /// Same names, tags and shapes, every element set to `value`.
    pub fn filled_like(&self, value: f64) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tag: e.tag,
                    tensor: Tensor {
                        shape: e.tensor.shape.clone(),
                        data: vec![value; e.tensor.len()],
                    },
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.filled_like(0.0)
    }

    /// Elementwise map producing a new set with the same structure.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ParamSet {
        let mut out = self.clone();
        out.values_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Iterate over all scalars in global element order.
    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.entries.iter().flat_map(|e| e.tensor.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.entries.iter_mut().flat_map(|e| e.tensor.data.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Rebuild a set shaped like `self` from values in global element order.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_elements() {
            return Err(Error::Alignment(format!(
                "flat vector of {} elements for a set of {}",
                flat.len(),
                self.num_elements()
            )));
        }
        let mut out = self.clone();
        out.values_mut().zip(flat).for_each(|(d, s)| *d = *s);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.check_aligned(other).is_ok()
            && self
                .values()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamEntry {
        ParamEntry {
            name: name.into(),
            tag: Some(LayerTag::Classifier),
            tensor: Tensor::new(shape, data).unwrap(),
        }
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = entry("a", vec![1], vec![1.0]);
        assert!(ParamSet::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn flat_round_trip_and_alignment() {
        let p = ParamSet::new(vec![
            entry("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
            entry("b", vec![2], vec![5.0, 6.0]),
        ])
        .unwrap();
        assert_eq!(p.num_elements(), 6);
        let flat = p.to_flat();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(p.with_flat(&flat).unwrap().bit_eq(&p));
        assert!(p.with_flat(&flat[..5]).is_err());

        let q = ParamSet::new(vec![
            entry("w", vec![4], vec![0.0; 4]),
            entry("b", vec![2], vec![0.0; 2]),
        ])
        .unwrap();
        assert!(p.check_aligned(&q).is_err());
        assert!(p.layout().check_same(&q.layout()).is_err());
        assert!(p.check_aligned(&p.zeros_like()).is_ok());
    }
}
