//! Fixtures shared by the criterion benches.

use fedbps::data::Dataset;
use fedbps::nn::build_network;
use fedbps::{aggregate, default_weights, ClientWeight, DiagGaussian, NetworkSpec, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The desk-scale network, 784-128-10.
pub fn desk_mlp() -> NetworkSpec {
    NetworkSpec::mlp(&[784, 128, 10])
}

/// LeNet-5 on 28×28 single-channel images.
pub fn lenet() -> NetworkSpec {
    NetworkSpec::lenet(1, 28, 10, 1.0)
}

pub fn params(spec: &NetworkSpec) -> ParamSet {
    build_network(spec, 0).expect("spec builds")
}

/// Uniform noise inputs with uniform labels, shaped for `spec`.
pub fn dataset(spec: &NetworkSpec, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.classes().expect("spec has classes");
    let mut shape = vec![n];
    shape.extend(&spec.input_shape);
    let data = (0..n * spec.input_len()).map(|_| rng.random::<f64>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(Tensor::new(shape, data).expect("shape matches"), labels, classes).expect("valid dataset")
}

/// `clients` posteriors around `template`, with equal weights.
pub fn posteriors(template: &ParamSet, clients: usize, seed: u64) -> (Vec<DiagGaussian>, Vec<ClientWeight>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let posts = (0..clients)
        .map(|_| {
            let mu = template.map(|v| v + rng.random_range(-0.1..0.1));
            let sigma = template.map(|_| rng.random_range(1e-3..10.0));
            DiagGaussian::new(mu, sigma).expect("positive variances")
        })
        .collect();
    (posts, default_weights(&vec![1; clients]).expect("positive counts"))
}

/// Aggregated variances of the desk network for mask selection.
pub fn global_variance(template: &ParamSet, clients: usize) -> ParamSet {
    let (posts, weights) = posteriors(template, clients, 1);
    aggregate(&posts, &weights).expect("aligned posteriors").into_parts().1
}
