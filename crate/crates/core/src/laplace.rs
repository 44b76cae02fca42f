//! Diagonal Laplace posterior around a trained point.
//!
//! Curvature is the diagonal empirical Fisher, `h_j = (1/N) Σ_n g_{n,j}²` over
//! per-sample loss gradients. It is nonnegative by construction, so the
//! posterior variance `1 / (h_j + damping)` is always positive and strictly
//! decreasing in `h_j`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{accumulate_squared_grads, NetworkSpec};
use crate::tensor::ParamSet;

pub const DEFAULT_DAMPING: f64 = 1e-6;

/// Per-element curvature aligned with a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagCurvature {
    h: ParamSet,
}

impl DiagCurvature {
    /// Wrap externally computed curvature, e.g. an analytic Hessian diagonal.
    pub fn new(h: ParamSet) -> Result<Self> {
        if h.values().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("curvature must be finite and nonnegative".into()));
        }
        Ok(Self { h })
    }

    pub fn values(&self) -> &ParamSet {
        &self.h
    }
}

/// Diagonal Gaussian: per-element mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mu: ParamSet,
    sigma: ParamSet,
}

impl DiagGaussian {
    pub fn new(mu: ParamSet, sigma: ParamSet) -> Result<Self> {
        mu.check_aligned(&sigma)?;
        if !mu.is_finite() {
            return Err(Error::NonFinite("posterior mean".into()));
        }
        if sigma.values().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::NonFinite(
                "posterior variance must be finite and positive".into(),
            ));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &ParamSet {
        &self.mu
    }

    pub fn sigma(&self) -> &ParamSet {
        &self.sigma
    }

    pub fn into_parts(self) -> (ParamSet, ParamSet) {
        (self.mu, self.sigma)
    }
}

/// Diagonal empirical Fisher of `params` on `dataset`, processed in chunks of
/// `batch_size`; the result does not depend on the chunking.
pub fn estimate_curvature(
    spec: &NetworkSpec,
    params: &ParamSet,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<DiagCurvature> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut acc = params.zeros_like();
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + batch_size).min(dataset.len());
        accumulate_squared_grads(spec, params, &dataset.batch(start..end)?, &mut acc)?;
        start = end;
    }
    let inv_n = 1.0 / dataset.len() as f64;
    acc.values_mut().for_each(|v| *v *= inv_n);
    DiagCurvature::new(acc)
}

/// `mu = params`, `sigma_j = 1 / (h_j + damping)`.
pub fn posterior_from_curvature(params: &ParamSet, curvature: &DiagCurvature, damping: f64) -> Result<DiagGaussian> {
    if !(damping > 0.0 && damping.is_finite()) {
        return Err(Error::config("damping", format!("must be positive, got {damping}")));
    }
    params.check_aligned(&curvature.h)?;
    let sigma = curvature.h.map(|h| 1.0 / (h + damping));
    DiagGaussian::new(params.clone(), sigma)
}
