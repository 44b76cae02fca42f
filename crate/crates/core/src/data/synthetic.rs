use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dims: usize,
    /// Distance of every class mean from the origin, in noise standard deviations.
    pub separation: f64,
    pub seed: u64,
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<Dataset> {
    synthesize_split(spec, 0)
}

/// Draw split `split` of the blob family: every split shares the class means
/// fixed by `spec.seed` and has independent noise. Rows cycle through the
/// classes, so sample `i` has label `i % classes`.
pub fn synthesize_split(spec: &SyntheticSpec, split: u64) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::config("classes", "synthetic data needs at least 2 classes"));
    }
    if spec.per_class == 0 || spec.dims == 0 {
        return Err(Error::config(
            "per_class",
            "synthetic data needs samples and dimensions",
        ));
    }
    let mut mean_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let dir: Vec<f64> = (0..spec.dims).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter().map(|v| spec.separation * v / norm).collect()
        })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(split + 1);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.classes;
        labels.push(c);
        for mu in &means[c] {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            data.push(mu + z);
        }
    }
    Dataset::new(Tensor::new(vec![n, spec.dims], data)?, labels, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, evaluate, loss_and_grad, sgd_step, NetworkSpec, SgdConfig};

    fn spec(separation: f64) -> SyntheticSpec {
        SyntheticSpec {
            classes: 2,
            per_class: 200,
            dims: 5,
            separation,
            seed: 11,
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = synthesize(&spec(3.0)).unwrap();
        assert_eq!(a, synthesize(&spec(3.0)).unwrap());
        assert_eq!(a.histogram(), vec![200, 200]);
        let other = synthesize_split(&spec(3.0), 1).unwrap();
        assert_ne!(a.inputs(), other.inputs());
        assert!(synthesize(&SyntheticSpec {
            classes: 1,
            ..spec(1.0)
        })
        .is_err());
    }

    #[test]
    fn zero_separation_is_chance_for_a_fixed_classifier() {
        let s = SyntheticSpec {
            classes: 4,
            per_class: 1000,
            dims: 6,
            separation: 0.0,
            seed: 3,
        };
        let ds = synthesize(&s).unwrap();
        let net = NetworkSpec::mlp(&[6, 4]);
        let params = build_network(&net, 5).unwrap();
        let acc = evaluate(&net, &params, &ds).unwrap();
        assert!((acc - 0.25).abs() < 0.04, "accuracy {acc}");
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        let train = synthesize(&spec(10.0)).unwrap();
        let test = synthesize_split(&spec(10.0), 1).unwrap();
        let net = NetworkSpec::mlp(&[5, 2]);
        let mut params = build_network(&net, 0).unwrap();
        let mut buf = params.zeros_like();
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        for _ in 0..50 {
            let (_, g) = loss_and_grad(&net, &params, &train.batch(0..train.len()).unwrap()).unwrap();
            sgd_step(&mut params, &g, &mut buf, &cfg).unwrap();
        }
        assert!(evaluate(&net, &params, &test).unwrap() > 0.99);
    }
}
