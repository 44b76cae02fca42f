use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{build_network, forward, loss_and_grad, Batch, Layer, NetworkSpec};
use crate::tensor::{ParamSet, Tensor};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
const MAGNITUDE_FLOOR: f64 = 1e-6;
const GRADCHECK_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSelector {
    Mlp,
    Cnn,
}

impl std::str::FromStr for GradSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(GradSelector::Mlp),
            "cnn" => Ok(GradSelector::Cnn),
            other => Err(Error::config("spec", format!("unknown gradcheck network `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_entry: String,
    pub params_checked: usize,
    pub passed: bool,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max relative error {:.3e} over {} parameters (worst in {}, tolerance {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.params_checked,
            self.worst_entry,
            GRADCHECK_TOLERANCE
        )
    }
}

/// MLP 4-16-3, or a small CNN exercising padding, stride and pooling.
pub fn gradcheck_spec(selector: GradSelector) -> NetworkSpec {
    match selector {
        GradSelector::Mlp => NetworkSpec::mlp(&[4, 16, 3]),
        GradSelector::Cnn => NetworkSpec {
            input_shape: vec![1, 8, 8],
            layers: vec![
                Layer::Conv {
                    in_channels: 1,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool { window: 2 },
                Layer::Conv {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 2,
                    stride: 2,
                    padding: 0,
                },
                Layer::Relu,
                Layer::Dense { inputs: 16, outputs: 6 },
                Layer::Relu,
                Layer::Dense { inputs: 6, outputs: 3 },
            ],
            classifier_start: None,
        },
    }
}

/// Compare `analytic` against central finite differences of the mean batch loss.
pub fn gradcheck(spec: &NetworkSpec, params: &ParamSet, batch: &Batch, analytic: &ParamSet) -> Result<GradcheckReport> {
    params.check_aligned(analytic)?;
    let mut probe = params.clone();
    let mut worst = (0.0_f64, String::new());
    let mut checked = 0;
    for e in 0..params.len() {
        let name = params.entries()[e].name.clone();
        for j in 0..params.entries()[e].tensor.len() {
            let orig = params.entries()[e].tensor.data()[j];
            probe.entries_mut()[e].tensor.data_mut()[j] = orig + GRADCHECK_STEP;
            let (plus, _) = forward(spec, &probe, batch)?;
            probe.entries_mut()[e].tensor.data_mut()[j] = orig - GRADCHECK_STEP;
            let (minus, _) = forward(spec, &probe, batch)?;
            probe.entries_mut()[e].tensor.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            let a = analytic.entries()[e].tensor.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel, format!("{name}[{j}]"));
            }
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_error: worst.0,
        worst_entry: worst.1,
        params_checked: checked,
        passed: worst.0 < GRADCHECK_TOLERANCE,
    })
}

fn random_batch(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let classes = spec.classes()?;
    let len = GRADCHECK_BATCH * spec.input_len();
    let data = (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let mut shape = vec![GRADCHECK_BATCH];
    shape.extend(&spec.input_shape);
    let labels = (0..GRADCHECK_BATCH).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(Tensor::new(shape, data)?, labels)
}

/// Seeded network and batch, analytic vs finite-difference gradients.
/// `corrupt` perturbs one analytic component as a negative control.
pub fn cmd_gradcheck(selector: GradSelector, seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    let spec = gradcheck_spec(selector);
    let params = build_network(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = random_batch(&spec, &mut rng)?;
    let (_, mut grads) = loss_and_grad(&spec, &params, &batch)?;
    if corrupt {
        let first = grads.entries_mut()[0].tensor.data_mut();
        first[0] = first[0] * 1.01 + 1e-3;
    }
    gradcheck(&spec, &params, &batch, &grads)
}
