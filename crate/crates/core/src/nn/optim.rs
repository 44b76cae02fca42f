use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Heavy-ball SGD with weight decay added to the gradient before it enters
/// the momentum buffer:
///
/// ```text
/// buffer ← momentum·buffer + grad + weight_decay·param
/// param  ← param − lr·buffer
/// ```
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, buffers: &mut ParamSet, cfg: &SgdConfig) -> Result<()> {
    params.check_aligned(grads)?;
    params.check_aligned(buffers)?;
    for ((p, g), b) in params
        .entries_mut()
        .iter_mut()
        .zip(grads.entries())
        .zip(buffers.entries_mut().iter_mut())
    {
        let p = p.tensor.data_mut();
        let g = g.tensor.data();
        let b = b.tensor.data_mut();
        for j in 0..p.len() {
            b[j] = cfg.momentum * b[j] + g[j] + cfg.weight_decay * p[j];
            p[j] -= cfg.lr * b[j];
        }
    }
    Ok(())
}
