//! Moment-matched aggregation of client posteriors.
//!
//! The global Gaussian has the exact mean and variance of the mixture
//! `Σ π_i N(μ_i, σ_i)`:
//!
//! ```text
//! μ_g = Σ π_i μ_i
//! σ_g = Σ π_i σ_i + Σ π_i (μ_i − μ_g)²
//! ```

use crate::error::{Error, Result};
use crate::laplace::DiagGaussian;
use crate::tensor::ParamSet;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Mixture weight of one client, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ClientWeight(f64);

impl ClientWeight {
    pub fn new(pi: f64) -> Result<Self> {
        if pi > 0.0 && pi <= 1.0 {
            Ok(Self(pi))
        } else {
            Err(Error::config("weights", format!("client weight {pi} outside (0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Data-size weights `π_i = n_i / Σ n_j`.
pub fn default_weights(client_sample_counts: &[usize]) -> Result<Vec<ClientWeight>> {
    if client_sample_counts.is_empty() {
        return Err(Error::config("weights", "no clients"));
    }
    if client_sample_counts.contains(&0) {
        return Err(Error::config("weights", "client sample counts must be positive"));
    }
    let total: usize = client_sample_counts.iter().sum();
    client_sample_counts
        .iter()
        .map(|&n| ClientWeight::new(n as f64 / total as f64))
        .collect()
}

fn check_weights(n: usize, weights: &[ClientWeight]) -> Result<()> {
    if n == 0 {
        return Err(Error::config("weights", "nothing to aggregate"));
    }
    if weights.len() != n {
        return Err(Error::Alignment(format!("{} weights for {n} clients", weights.len())));
    }
    let sum: f64 = weights.iter().map(|w| w.0).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::config("weights", format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Elementwise `Σ π_i x_i`. Also the FedAvg server average, so the two
/// routes produce bit-identical means.
pub fn weighted_mean(sets: &[&ParamSet], weights: &[ClientWeight]) -> Result<ParamSet> {
    check_weights(sets.len(), weights)?;
    for s in &sets[1..] {
        sets[0].check_aligned(s)?;
    }
    let mut out = sets[0].zeros_like();
    for (set, w) in sets.iter().zip(weights) {
        for (o, v) in out.values_mut().zip(set.values()) {
            *o += w.0 * v;
        }
    }
    Ok(out)
}

/// Collapse the weighted mixture of client posteriors into one Gaussian.
pub fn aggregate(posteriors: &[DiagGaussian], weights: &[ClientWeight]) -> Result<DiagGaussian> {
    check_weights(posteriors.len(), weights)?;
    let first = posteriors[0].mu();
    for p in &posteriors[1..] {
        first.check_aligned(p.mu())?;
    }
    let mus: Vec<&ParamSet> = posteriors.iter().map(|p| p.mu()).collect();
    let mu_g = weighted_mean(&mus, weights)?;

    let mu_flat = mu_g.to_flat();
    let mut sigma = vec![0.0; mu_flat.len()];
    for (post, w) in posteriors.iter().zip(weights) {
        let pi = w.0;
        for ((s, (m, v)), mg) in sigma
            .iter_mut()
            .zip(post.mu().values().zip(post.sigma().values()))
            .zip(&mu_flat)
        {
            let d = m - mg;
            *s += pi * v + pi * d * d;
        }
    }
    let sigma_g = mu_g.with_flat(&sigma)?;
    DiagGaussian::new(mu_g, sigma_g)
}
