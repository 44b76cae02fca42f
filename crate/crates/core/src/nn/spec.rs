use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LayerTag, ParamEntry, ParamSet, Tensor};

/// One entry of the fixed layer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Fully connected layer. Any input shape is flattened first.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping max pooling (stride equals window).
    MaxPool {
        window: usize,
    },
    Relu,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv { .. })
    }
}

/// Layer stack followed by a softmax cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape, `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    /// Index of the first layer treated as part of the classifier. When
    /// `None`, convolutional networks split at their first dense layer and
    /// pure MLPs at their last dense layer.
    #[serde(default)]
    pub classifier_start: Option<usize>,
}

/// Resolved per-layer shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerPlan {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl NetworkSpec {
    /// Dense layers with ReLU between them, e.g. `mlp(&[784, 128, 10])`.
    pub fn mlp(widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Dense {
                inputs: pair[0],
                outputs: pair[1],
            });
        }
        Self {
            input_shape: vec![widths.first().copied().unwrap_or(0)],
            layers,
            classifier_start: None,
        }
    }

    /// LeNet-5 layout: two conv/pool stages then three dense layers.
    ///
    /// `width` scales every channel and hidden count; 28-pixel inputs get
    /// 2-pixel padding on the first convolution so that both 28×28 and 32×32
    /// inputs reach a 5×5 map before the dense stack.
    pub fn lenet(in_channels: usize, side: usize, classes: usize, width: f64) -> Self {
        let scale = |n: usize| ((n as f64 * width).round() as usize).max(1);
        let (c1, c2, h1, h2) = (scale(6), scale(16), scale(120), scale(84));
        let padding = if side == 28 { 2 } else { 0 };
        // Saturating so undersized inputs surface as a plan error, not a panic.
        let after_conv1 = (side + 2 * padding).saturating_sub(4);
        let after_conv2 = (after_conv1 / 2).saturating_sub(4);
        let flat = c2 * (after_conv2 / 2) * (after_conv2 / 2);
        Self {
            input_shape: vec![in_channels, side, side],
            layers: vec![
                Layer::Conv {
                    in_channels,
                    out_channels: c1,
                    kernel: 5,
                    stride: 1,
                    padding,
                },
                Layer::Relu,
                Layer::MaxPool { window: 2 },
                Layer::Conv {
                    in_channels: c1,
                    out_channels: c2,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                Layer::Relu,
                Layer::MaxPool { window: 2 },
                Layer::Dense {
                    inputs: flat,
                    outputs: h1,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: h1,
                    outputs: h2,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: h2,
                    outputs: classes,
                },
            ],
            classifier_start: None,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Number of output classes (width of the final layer).
    pub fn classes(&self) -> Result<usize> {
        let plan = self.plan()?;
        Ok(plan.last().map(|p| p.output[0]).unwrap_or(0))
    }

    /// Check that the layers compose and compute every intermediate shape.
    pub(crate) fn plan(&self) -> Result<Vec<LayerPlan>> {
        let err = |layer: usize, msg: String| Error::Spec { layer, msg };
        if self.layers.is_empty() {
            return Err(err(0, "network has no layers".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(err(0, format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut shape = self.input_shape.clone();
        let mut plans = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let output = match *layer {
                Layer::Dense { inputs, outputs } => {
                    let flat: usize = shape.iter().product();
                    if inputs != flat {
                        return Err(err(i, format!("dense expects {inputs} inputs, receives {flat}")));
                    }
                    if outputs == 0 {
                        return Err(err(i, "dense layer with zero outputs".into()));
                    }
                    vec![outputs]
                }
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(i, format!("conv needs [c, h, w] input, receives {shape:?}")));
                    };
                    if c != in_channels {
                        return Err(err(i, format!("conv expects {in_channels} channels, receives {c}")));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(err(i, "conv with zero channels, kernel or stride".into()));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(err(i, format!("kernel {kernel} larger than padded {h}x{w} input")));
                    }
                    vec![
                        out_channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ]
                }
                Layer::MaxPool { window } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(i, format!("max pool needs [c, h, w] input, receives {shape:?}")));
                    };
                    if window == 0 || h < window || w < window {
                        return Err(err(i, format!("pool window {window} does not fit {h}x{w}")));
                    }
                    vec![c, h / window, w / window]
                }
                Layer::Relu => shape.clone(),
            };
            plans.push(LayerPlan {
                input: shape,
                output: output.clone(),
            });
            shape = output;
        }
        if shape.len() != 1 {
            return Err(err(
                self.layers.len() - 1,
                format!("final layer must produce class logits, produces {shape:?}"),
            ));
        }
        if let Some(start) = self.classifier_start {
            if start > self.layers.len() {
                return Err(err(start, "classifier_start beyond the last layer".into()));
            }
        }
        Ok(plans)
    }

    fn default_classifier_start(&self) -> usize {
        let has_conv = self.layers.iter().any(|l| matches!(l, Layer::Conv { .. }));
        let mut dense = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Dense { .. }))
            .map(|(i, _)| i);
        let split = if has_conv { dense.next() } else { dense.next_back() };
        split.unwrap_or(self.layers.len())
    }

    /// Tag of layer `index`.
    pub fn layer_tag(&self, index: usize) -> LayerTag {
        let start = self.classifier_start.unwrap_or_else(|| self.default_classifier_start());
        if index >= start {
            LayerTag::Classifier
        } else {
            LayerTag::FeatureExtractor
        }
    }
}

/// Parameter entry names for each layer, `None` for parameter-free layers.
pub(crate) fn param_names(spec: &NetworkSpec) -> Vec<Option<(String, String)>> {
    let (mut fc, mut conv) = (0, 0);
    spec.layers
        .iter()
        .map(|l| match l {
            Layer::Dense { .. } => {
                fc += 1;
                Some((format!("fc{fc}.weight"), format!("fc{fc}.bias")))
            }
            Layer::Conv { .. } => {
                conv += 1;
                Some((format!("conv{conv}.weight"), format!("conv{conv}.bias")))
            }
            _ => None,
        })
        .collect()
}

/// Initialize parameters: weights uniform in `±1/sqrt(fan_in)`, biases zero.
///
/// Dense weights are stored `[inputs, outputs]`, conv weights
/// `[out_channels, in_channels, kernel, kernel]`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ParamSet> {
    spec.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (index, (layer, names)) in spec.layers.iter().zip(param_names(spec)).enumerate() {
        let Some((wname, bname)) = names else { continue };
        let (wshape, fan_in, bias_len) = match *layer {
            Layer::Dense { inputs, outputs } => (vec![inputs, outputs], inputs, outputs),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                vec![out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
                out_channels,
            ),
            _ => unreachable!("parameter-free layer has no names"),
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len = wshape.iter().product();
        let weights = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
        let tag = Some(spec.layer_tag(index));
        entries.push(ParamEntry {
            name: wname,
            tag,
            tensor: Tensor::new(wshape, weights)?,
        });
        entries.push(ParamEntry {
            name: bname,
            tag,
            tensor: Tensor::zeros(vec![bias_len]),
        });
    }
    ParamSet::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = NetworkSpec::mlp(&[4, 3]);
        let a = build_network(&spec, 7).unwrap();
        let b = build_network(&spec, 7).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&build_network(&spec, 8).unwrap()));
    }

    #[test]
    fn dense_shapes() {
        let p = build_network(&NetworkSpec::mlp(&[100, 50]), 0).unwrap();
        assert_eq!(p.get("fc1.weight").unwrap().shape(), &[100, 50]);
        assert_eq!(p.get("fc1.bias").unwrap().shape(), &[50]);
        assert!(p.get("fc1.bias").unwrap().data().iter().all(|&b| b == 0.0));
        let bound = 1.0 / 10.0;
        assert!(p.get("fc1.weight").unwrap().data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn conv_shapes() {
        let spec = NetworkSpec {
            input_shape: vec![1, 28, 28],
            layers: vec![
                Layer::Conv {
                    in_channels: 1,
                    out_channels: 6,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                Layer::Relu,
                Layer::MaxPool { window: 2 },
                Layer::Dense {
                    inputs: 6 * 12 * 12,
                    outputs: 10,
                },
            ],
            classifier_start: None,
        };
        let p = build_network(&spec, 0).unwrap();
        assert_eq!(p.get("conv1.weight").unwrap().shape(), &[6, 1, 5, 5]);
        assert_eq!(p.get("conv1.bias").unwrap().shape(), &[6]);
        assert_eq!(p.entries()[0].tag, Some(LayerTag::FeatureExtractor));
        assert_eq!(p.entries()[2].tag, Some(LayerTag::Classifier));
    }

    #[test]
    fn lenet_variants_compose() {
        for (c, side) in [(1, 28), (3, 32)] {
            let spec = NetworkSpec::lenet(c, side, 10, 1.0);
            let p = build_network(&spec, 1).unwrap();
            assert_eq!(p.get("fc1.weight").unwrap().shape(), &[400, 120]);
            let tags: Vec<_> = p.entries().iter().map(|e| e.tag.unwrap()).collect();
            assert_eq!(tags.iter().filter(|t| **t == LayerTag::Classifier).count(), 6);
            assert_eq!(tags.iter().filter(|t| **t == LayerTag::FeatureExtractor).count(), 4);
        }
        let wide = NetworkSpec::lenet(3, 32, 10, 2.0);
        assert_eq!(
            build_network(&wide, 1).unwrap().get("conv1.weight").unwrap().shape(),
            &[12, 3, 5, 5]
        );
    }

    #[test]
    fn mlp_splits_at_last_dense() {
        let p = build_network(&NetworkSpec::mlp(&[8, 4, 3]), 0).unwrap();
        assert_eq!(p.entries()[0].tag, Some(LayerTag::FeatureExtractor));
        assert_eq!(p.entries()[3].tag, Some(LayerTag::Classifier));
    }

    #[test]
    fn non_composing_dims_rejected() {
        let mut spec = NetworkSpec::mlp(&[4, 3, 2]);
        spec.layers[2] = Layer::Dense { inputs: 5, outputs: 2 };
        match build_network(&spec, 0) {
            Err(Error::Spec { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected spec error, got {other:?}"),
        }
        let conv_on_flat = NetworkSpec {
            input_shape: vec![16],
            layers: vec![Layer::MaxPool { window: 2 }],
            classifier_start: None,
        };
        assert!(build_network(&conv_on_flat, 0).is_err());
    }
}
