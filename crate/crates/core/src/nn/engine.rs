//! Forward and reverse passes over the fixed layer vocabulary.
//!
//! The reverse pass first propagates per-sample deltas (the gradient of each
//! sample's own loss with respect to every layer output). Parameter gradients
//! are then a reduction over those deltas, which is what lets the same pass
//! serve batch gradients, per-sample gradients and squared-gradient sums.

use crate::error::{Error, Result};
use crate::nn::spec::{param_names, Layer, LayerPlan, NetworkSpec};
use crate::tensor::{ParamSet, Tensor};

/// Mini-batch of inputs `[B, ...]` with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        let rows = inputs.shape()[0];
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows != labels.len() {
            return Err(Error::Shape {
                layer: "batch".into(),
                expected: vec![labels.len()],
                got: vec![rows],
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of size m×k
/// and `op(b)` of size k×n. A transposed operand is stored in its
/// untransposed row-major layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above keeps every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Parameter views for one layer.
struct LayerParams<'p> {
    weight: &'p [f64],
    bias: &'p [f64],
    /// Position of the weight entry in the parameter set; bias follows it.
    entry: usize,
}

/// Resolve parameter entries for every layer, checking names and shapes.
fn bind<'p>(spec: &NetworkSpec, plans: &[LayerPlan], params: &'p ParamSet) -> Result<Vec<Option<LayerParams<'p>>>> {
    let entries = params.entries();
    let mut next = 0;
    let mut bound = Vec::with_capacity(spec.layers.len());
    for ((layer, names), plan) in spec.layers.iter().zip(param_names(spec)).zip(plans) {
        let Some((wname, bname)) = names else {
            bound.push(None);
            continue;
        };
        let (wshape, blen) = match *layer {
            Layer::Dense { inputs, outputs } => (vec![inputs, outputs], outputs),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (vec![out_channels, in_channels, kernel, kernel], out_channels),
            _ => unreachable!(),
        };
        debug_assert_eq!(plan.output.iter().product::<usize>() % blen, 0);
        let (w, b) = match (entries.get(next), entries.get(next + 1)) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::Shape {
                    layer: wname,
                    expected: wshape,
                    got: vec![],
                })
            }
        };
        if w.name != wname || w.tensor.shape() != wshape.as_slice() {
            return Err(Error::Shape {
                layer: wname,
                expected: wshape,
                got: w.tensor.shape().to_vec(),
            });
        }
        if b.name != bname || b.tensor.shape() != [blen] {
            return Err(Error::Shape {
                layer: bname,
                expected: vec![blen],
                got: b.tensor.shape().to_vec(),
            });
        }
        bound.push(Some(LayerParams {
            weight: w.tensor.data(),
            bias: b.tensor.data(),
            entry: next,
        }));
        next += 2;
    }
    if next != entries.len() {
        return Err(Error::Alignment(format!(
            "parameter set has {} entries, network uses {next}",
            entries.len()
        )));
    }
    Ok(bound)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(layer: &Layer, plan: &LayerPlan) -> Self {
        let Layer::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } = *layer
        else {
            unreachable!()
        };
        Self {
            cin: in_channels,
            cout: out_channels,
            k: kernel,
            stride,
            pad: padding,
            h: plan.input[1],
            w: plan.input[2],
            oh: plan.output[1],
            ow: plan.output[2],
        }
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn spatial(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfold one sample `[cin, h, w]` into `[cin*k*k, oh*ow]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.spatial();
        for c in 0..self.cin {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + ki) as isize - self.pad as isize;
                        for ox in 0..self.ow {
                            let xx = (ox * self.stride + kj) as isize - self.pad as isize;
                            dst[oy * self.ow + ox] =
                                if y >= 0 && (y as usize) < self.h && xx >= 0 && (xx as usize) < self.w {
                                    x[(c * self.h + y as usize) * self.w + xx as usize]
                                } else {
                                    0.0
                                };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns into `dx`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let hw = self.spatial();
        for c in 0..self.cin {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + ki) as isize - self.pad as isize;
                        if y < 0 || y as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let xx = (ox * self.stride + kj) as isize - self.pad as isize;
                            if xx >= 0 && (xx as usize) < self.w {
                                dx[(c * self.h + y as usize) * self.w + xx as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

enum Aux {
    None,
    /// Unfolded conv inputs, one `[patch, spatial]` block per sample.
    Cols(Vec<f64>),
    /// Input offset (within a sample) of each pooled maximum.
    Argmax(Vec<u32>),
}

/// Cached activations of one forward pass.
pub(crate) struct Pass<'a> {
    spec: &'a NetworkSpec,
    plans: Vec<LayerPlan>,
    params: Vec<Option<LayerParams<'a>>>,
    input: &'a [f64],
    batch: usize,
    /// `outputs[i]` is the output of layer `i`, `[B, ...]`.
    outputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl<'a> Pass<'a> {
    pub(crate) fn run(spec: &'a NetworkSpec, params: &'a ParamSet, inputs: &'a Tensor) -> Result<Self> {
        let plans = spec.plan()?;
        let bound = bind(spec, &plans, params)?;
        let batch = inputs.shape()[0];
        let per_sample: usize = inputs.shape()[1..].iter().product();
        if per_sample != spec.input_len() {
            let mut expected = vec![batch];
            expected.extend(&spec.input_shape);
            return Err(Error::Shape {
                layer: "input".into(),
                expected,
                got: inputs.shape().to_vec(),
            });
        }
        let mut pass = Pass {
            spec,
            plans,
            params: bound,
            input: inputs.data(),
            batch,
            outputs: Vec::with_capacity(spec.layers.len()),
            aux: Vec::with_capacity(spec.layers.len()),
        };
        for i in 0..spec.layers.len() {
            let (out, aux) = pass.forward_layer(i);
            pass.outputs.push(out);
            pass.aux.push(aux);
        }
        Ok(pass)
    }

    fn layer_input(&self, i: usize) -> &[f64] {
        if i == 0 {
            self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    fn forward_layer(&self, i: usize) -> (Vec<f64>, Aux) {
        let plan = &self.plans[i];
        let x = self.layer_input(i);
        let bsz = self.batch;
        match self.spec.layers[i] {
            Layer::Dense { inputs, outputs } => {
                let p = self.params[i].as_ref().unwrap();
                let mut out = vec![0.0; bsz * outputs];
                for row in out.chunks_exact_mut(outputs) {
                    row.copy_from_slice(p.bias);
                }
                gemm(bsz, inputs, outputs, 1.0, x, false, p.weight, false, 1.0, &mut out);
                (out, Aux::None)
            }
            ref layer @ Layer::Conv { .. } => {
                let g = ConvGeom::new(layer, plan);
                let p = self.params[i].as_ref().unwrap();
                let (patch, hw) = (g.patch(), g.spatial());
                let in_len = g.cin * g.h * g.w;
                let mut cols = vec![0.0; bsz * patch * hw];
                let mut out = vec![0.0; bsz * g.cout * hw];
                for n in 0..bsz {
                    let c_n = &mut cols[n * patch * hw..(n + 1) * patch * hw];
                    g.im2col(&x[n * in_len..(n + 1) * in_len], c_n);
                    let o_n = &mut out[n * g.cout * hw..(n + 1) * g.cout * hw];
                    for (row, b) in o_n.chunks_exact_mut(hw).zip(p.bias) {
                        row.fill(*b);
                    }
                    gemm(g.cout, patch, hw, 1.0, p.weight, false, c_n, false, 1.0, o_n);
                }
                (out, Aux::Cols(cols))
            }
            Layer::MaxPool { window } => {
                let (c, h, w) = (plan.input[0], plan.input[1], plan.input[2]);
                let (oh, ow) = (plan.output[1], plan.output[2]);
                let in_len = c * h * w;
                let out_len = c * oh * ow;
                let mut out = vec![0.0; bsz * out_len];
                let mut arg = vec![0u32; bsz * out_len];
                for n in 0..bsz {
                    let xs = &x[n * in_len..(n + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_at = 0;
                                for dy in 0..window {
                                    for dx in 0..window {
                                        let at = (ch * h + oy * window + dy) * w + ox * window + dx;
                                        if xs[at] > best {
                                            best = xs[at];
                                            best_at = at;
                                        }
                                    }
                                }
                                let o = n * out_len + (ch * oh + oy) * ow + ox;
                                out[o] = best;
                                arg[o] = best_at as u32;
                            }
                        }
                    }
                }
                (out, Aux::Argmax(arg))
            }
            Layer::Relu => (x.iter().map(|v| v.max(0.0)).collect(), Aux::None),
        }
    }

    pub(crate) fn logits(&self) -> &[f64] {
        self.outputs.last().unwrap()
    }

    pub(crate) fn classes(&self) -> usize {
        self.plans.last().unwrap().output[0]
    }

    /// Per-sample losses and the per-sample logit gradients `softmax - onehot`.
    pub(crate) fn loss(&self, labels: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = self.classes();
        let logits = self.logits();
        let mut losses = Vec::with_capacity(self.batch);
        let mut dlogits = vec![0.0; logits.len()];
        for (n, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Label { label: y, classes: c });
            }
            let z = &logits[n * c..(n + 1) * c];
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            losses.push(lse - z[y]);
            let d = &mut dlogits[n * c..(n + 1) * c];
            for (dj, zj) in d.iter_mut().zip(z) {
                *dj = (zj - lse).exp();
            }
            d[y] -= 1.0;
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((losses, dlogits))
    }

    /// Per-sample deltas at the output of each layer. Entry 0 (the gradient
    /// with respect to layer 0's output) is the last one needed for parameter
    /// gradients, so the network input itself is never differentiated.
    pub(crate) fn deltas(&self, dlogits: Vec<f64>) -> Vec<Vec<f64>> {
        let layers = self.spec.layers.len();
        let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); layers];
        deltas[layers - 1] = dlogits;
        for i in (1..layers).rev() {
            let dout = &deltas[i];
            let plan = &self.plans[i];
            let bsz = self.batch;
            let in_len: usize = plan.input.iter().product();
            let din = match self.spec.layers[i] {
                Layer::Relu => dout
                    .iter()
                    .zip(&self.outputs[i])
                    .map(|(d, y)| if *y > 0.0 { *d } else { 0.0 })
                    .collect(),
                Layer::Dense { inputs, outputs } => {
                    let p = self.params[i].as_ref().unwrap();
                    let mut din = vec![0.0; bsz * inputs];
                    gemm(bsz, outputs, inputs, 1.0, dout, false, p.weight, true, 0.0, &mut din);
                    din
                }
                ref layer @ Layer::Conv { .. } => {
                    let g = ConvGeom::new(layer, plan);
                    let p = self.params[i].as_ref().unwrap();
                    let (patch, hw) = (g.patch(), g.spatial());
                    let mut din = vec![0.0; bsz * in_len];
                    let mut dcols = vec![0.0; patch * hw];
                    for n in 0..bsz {
                        let d_n = &dout[n * g.cout * hw..(n + 1) * g.cout * hw];
                        gemm(patch, g.cout, hw, 1.0, p.weight, true, d_n, false, 0.0, &mut dcols);
                        g.col2im(&dcols, &mut din[n * in_len..(n + 1) * in_len]);
                    }
                    din
                }
                Layer::MaxPool { .. } => {
                    let Aux::Argmax(arg) = &self.aux[i] else { unreachable!() };
                    let out_len: usize = plan.output.iter().product();
                    let mut din = vec![0.0; bsz * in_len];
                    for n in 0..bsz {
                        for o in 0..out_len {
                            din[n * in_len + arg[n * out_len + o] as usize] += dout[n * out_len + o];
                        }
                    }
                    din
                }
            };
            deltas[i - 1] = din;
        }
        deltas
    }

    /// Visit every parameterized layer with `(weight entry index, input, delta, aux)`.
    fn param_layers<'s>(
        &'s self,
        deltas: &'s [Vec<f64>],
    ) -> impl Iterator<Item = (usize, &'s Layer, &'s LayerPlan, usize, &'s [f64], &'s [f64], &'s Aux)> + 's {
        (0..self.spec.layers.len()).filter_map(move |i| {
            self.params[i].as_ref().map(|p| {
                (
                    i,
                    &self.spec.layers[i],
                    &self.plans[i],
                    p.entry,
                    self.layer_input(i),
                    deltas[i].as_slice(),
                    &self.aux[i],
                )
            })
        })
    }

    /// Write `scale * Σ_n g_n` into `grads` (aligned with the bound params).
    pub(crate) fn batch_grads(&self, deltas: &[Vec<f64>], scale: f64, grads: &mut ParamSet) {
        let bsz = self.batch;
        for (_, layer, plan, entry, x, d, aux) in self.param_layers(deltas) {
            let (wslot, bslot) = split_pair(grads, entry);
            match *layer {
                Layer::Dense { inputs, outputs } => {
                    gemm(inputs, bsz, outputs, scale, x, true, d, false, 0.0, wslot);
                    bslot.fill(0.0);
                    for row in d.chunks_exact(outputs) {
                        for (b, v) in bslot.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    bslot.iter_mut().for_each(|b| *b *= scale);
                }
                Layer::Conv { .. } => {
                    let g = ConvGeom::new(layer, plan);
                    let Aux::Cols(cols) = aux else { unreachable!() };
                    let (patch, hw) = (g.patch(), g.spatial());
                    wslot.fill(0.0);
                    bslot.fill(0.0);
                    for n in 0..bsz {
                        let d_n = &d[n * g.cout * hw..(n + 1) * g.cout * hw];
                        let c_n = &cols[n * patch * hw..(n + 1) * patch * hw];
                        gemm(g.cout, hw, patch, scale, d_n, false, c_n, true, 1.0, wslot);
                        for (b, row) in bslot.iter_mut().zip(d_n.chunks_exact(hw)) {
                            *b += scale * row.iter().sum::<f64>();
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    /// Gradient of sample `n`'s own loss, written into `grads`.
    pub(crate) fn sample_grads(&self, deltas: &[Vec<f64>], n: usize, grads: &mut ParamSet) {
        for (_, layer, plan, entry, x, d, aux) in self.param_layers(deltas) {
            let (wslot, bslot) = split_pair(grads, entry);
            match *layer {
                Layer::Dense { inputs, outputs } => {
                    let x_n = &x[n * inputs..(n + 1) * inputs];
                    let d_n = &d[n * outputs..(n + 1) * outputs];
                    for (row, xi) in wslot.chunks_exact_mut(outputs).zip(x_n) {
                        for (w, dj) in row.iter_mut().zip(d_n) {
                            *w = xi * dj;
                        }
                    }
                    bslot.copy_from_slice(d_n);
                }
                Layer::Conv { .. } => {
                    let g = ConvGeom::new(layer, plan);
                    let Aux::Cols(cols) = aux else { unreachable!() };
                    let (patch, hw) = (g.patch(), g.spatial());
                    let d_n = &d[n * g.cout * hw..(n + 1) * g.cout * hw];
                    let c_n = &cols[n * patch * hw..(n + 1) * patch * hw];
                    gemm(g.cout, hw, patch, 1.0, d_n, false, c_n, true, 0.0, wslot);
                    for (b, row) in bslot.iter_mut().zip(d_n.chunks_exact(hw)) {
                        *b = row.iter().sum();
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    /// Add `Σ_n g_n²` (elementwise) into `acc`.
    pub(crate) fn add_squared_grads(&self, deltas: &[Vec<f64>], acc: &mut ParamSet) {
        let bsz = self.batch;
        for (_, layer, plan, entry, x, d, aux) in self.param_layers(deltas) {
            let (wslot, bslot) = split_pair(acc, entry);
            match *layer {
                // Per-sample dense gradients are outer products x_n δ_nᵀ, so the
                // sum of their squares is (x∘x)ᵀ(δ∘δ).
                Layer::Dense { inputs, outputs } => {
                    let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
                    let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
                    gemm(inputs, bsz, outputs, 1.0, &x2, true, &d2, false, 1.0, wslot);
                    for row in d2.chunks_exact(outputs) {
                        for (b, v) in bslot.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                Layer::Conv { .. } => {
                    let g = ConvGeom::new(layer, plan);
                    let Aux::Cols(cols) = aux else { unreachable!() };
                    let (patch, hw) = (g.patch(), g.spatial());
                    let mut g_n = vec![0.0; g.cout * patch];
                    for n in 0..bsz {
                        let d_n = &d[n * g.cout * hw..(n + 1) * g.cout * hw];
                        let c_n = &cols[n * patch * hw..(n + 1) * patch * hw];
                        gemm(g.cout, hw, patch, 1.0, d_n, false, c_n, true, 0.0, &mut g_n);
                        for (a, v) in wslot.iter_mut().zip(&g_n) {
                            *a += v * v;
                        }
                        for (b, row) in bslot.iter_mut().zip(d_n.chunks_exact(hw)) {
                            let s: f64 = row.iter().sum();
                            *b += s * s;
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
    }
}

fn split_pair(set: &mut ParamSet, entry: usize) -> (&mut [f64], &mut [f64]) {
    let (w, b) = set.entries_mut()[entry..].split_at_mut(1);
    (w[0].tensor.data_mut(), b[0].tensor.data_mut())
}

/// Mean softmax cross-entropy and logits `[B, C]`.
pub fn forward(spec: &NetworkSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, Tensor)> {
    let pass = Pass::run(spec, params, &batch.inputs)?;
    let (losses, _) = pass.loss(&batch.labels)?;
    let loss = losses.iter().sum::<f64>() / batch.len() as f64;
    let logits = Tensor::new(vec![batch.len(), pass.classes()], pass.logits().to_vec())?;
    Ok((loss, logits))
}

/// Mean batch loss and its gradient, aligned entry-by-entry with `params`.
pub fn loss_and_grad(spec: &NetworkSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)> {
    let pass = Pass::run(spec, params, &batch.inputs)?;
    let (losses, dlogits) = pass.loss(&batch.labels)?;
    let bsz = batch.len() as f64;
    let deltas = pass.deltas(dlogits);
    let mut grads = params.zeros_like();
    pass.batch_grads(&deltas, 1.0 / bsz, &mut grads);
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((losses.iter().sum::<f64>() / bsz, grads))
}

/// Gradient of every sample's individual loss.
pub fn per_sample_grads(spec: &NetworkSpec, params: &ParamSet, batch: &Batch) -> Result<Vec<ParamSet>> {
    let pass = Pass::run(spec, params, &batch.inputs)?;
    let (_, dlogits) = pass.loss(&batch.labels)?;
    let deltas = pass.deltas(dlogits);
    let mut out = Vec::with_capacity(batch.len());
    for n in 0..batch.len() {
        let mut g = params.zeros_like();
        pass.sample_grads(&deltas, n, &mut g);
        out.push(g);
    }
    if out.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("per-sample gradient".into()));
    }
    Ok(out)
}

/// Add the elementwise squares of every per-sample gradient in `batch` to `acc`.
pub(crate) fn accumulate_squared_grads(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &Batch,
    acc: &mut ParamSet,
) -> Result<()> {
    params.check_aligned(acc)?;
    let pass = Pass::run(spec, params, &batch.inputs)?;
    let (_, dlogits) = pass.loss(&batch.labels)?;
    let deltas = pass.deltas(dlogits);
    pass.add_squared_grads(&deltas, acc);
    Ok(())
}
