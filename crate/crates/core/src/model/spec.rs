//! Declarative network topology with static shape inference and a line-oriented text
//! form used inside checkpoints.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{conv_output_extent, pool_output_extent, Padding};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        pool_h: usize,
        pool_w: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(Error::InvalidShape {
                    shape: input.to_vec(),
                    reason: format!("{what} needs an [h, w, c] input"),
                }),
            }
        };
        match *self {
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let (h, w, _) = spatial("conv")?;
                let (oh, _) = conv_output_extent(h, kernel_h, stride, padding)?;
                let (ow, _) = conv_output_extent(w, kernel_w, stride, padding)?;
                Ok(vec![oh, ow, filters])
            }
            LayerSpec::MaxPool {
                pool_h,
                pool_w,
                stride,
            } => {
                let (h, w, c) = spatial("maxpool")?;
                if stride == 0 || pool_h == 0 || pool_w == 0 {
                    return Err(Error::invalid("pool extents and stride must be >= 1"));
                }
                Ok(vec![
                    pool_output_extent(h, pool_h, stride)?,
                    pool_output_extent(w, pool_w, stride)?,
                    c,
                ])
            }
            LayerSpec::Flatten => {
                let (h, w, c) = spatial("flatten")?;
                Ok(vec![h * w * c])
            }
            LayerSpec::Dense { units } => match *input {
                [_] if units > 0 => Ok(vec![units]),
                [_] => Err(Error::invalid("dense layer needs at least one unit")),
                _ => Err(Error::InvalidShape {
                    shape: input.to_vec(),
                    reason: "dense needs a flat input".into(),
                }),
            },
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Softmax => match *input {
                [_] => Ok(input.to_vec()),
                _ => Err(Error::InvalidShape {
                    shape: input.to_vec(),
                    reason: "softmax needs a flat input".into(),
                }),
            },
        }
    }

    /// Shapes of the trainable tensors for the given per-sample input.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => vec![
                vec![kernel_h, kernel_w, input[input.len() - 1], filters],
                vec![filters],
            ],
            LayerSpec::Dense { units } => vec![vec![input[0], units], vec![units]],
            _ => vec![],
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => write!(
                f,
                "conv filters={filters} kernel={kernel_h}x{kernel_w} stride={stride} padding={}",
                padding.as_str()
            ),
            LayerSpec::MaxPool {
                pool_h,
                pool_w,
                stride,
            } => write!(f, "maxpool pool={pool_h}x{pool_w} stride={stride}"),
            LayerSpec::Dense { units } => write!(f, "dense units={units}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate}"),
            other => f.write_str(other.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// `[height, width, channels]`
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Knobs for the reference topology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub input_hw: (usize, usize),
    pub pool_stride: usize,
    pub dropout_rate: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            input_hw: (150, 150),
            pool_stride: 1,
            dropout_rate: 0.5,
        }
    }
}

impl ModelSpec {
    /// Three conv(3×3, stride 2, same) + ReLU + maxpool(2×2, valid) blocks with 32, 64
    /// and 64 filters, then flatten, dense 512 + ReLU, dropout, dense `num_classes`,
    /// softmax.
    pub fn reference(num_classes: usize, opts: ReferenceOptions) -> Result<Self> {
        if !(2..=3).contains(&num_classes) {
            return Err(Error::invalid(format!(
                "the reference model has 2 or 3 classes, got {num_classes}"
            )));
        }
        let mut layers = Vec::new();
        for filters in [32, 64, 64] {
            layers.push(LayerSpec::Conv {
                filters,
                kernel_h: 3,
                kernel_w: 3,
                stride: 2,
                padding: Padding::Same,
            });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool {
                pool_h: 2,
                pool_w: 2,
                stride: opts.pool_stride,
            });
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 512 },
            LayerSpec::Relu,
            LayerSpec::Dropout {
                rate: opts.dropout_rate,
            },
            LayerSpec::Dense { units: num_classes },
            LayerSpec::Softmax,
        ]);
        let spec = ModelSpec {
            input_shape: [opts.input_hw.0, opts.input_hw.1, 3],
            num_classes,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-sample shapes: element 0 is the input, element `i + 1` the output of layer `i`.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (index, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::Layer {
                    index,
                    kind: layer.kind().into(),
                    source: Box::new(e),
                })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::invalid("input extents must be at least 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        let shapes = self.infer_shapes()?;
        match self.layers.iter().position(|l| *l == LayerSpec::Softmax) {
            Some(i) if i + 1 == self.layers.len() => {}
            _ => return Err(Error::invalid("the final layer must be the only softmax")),
        }
        let logits = &shapes[shapes.len() - 2];
        if logits != &[self.num_classes] {
            return Err(Error::invalid(format!(
                "network emits {logits:?} logits but has {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `(layer index, shape)` of every trainable tensor, in parameter order.
    pub fn param_layout(&self) -> Result<Vec<(usize, Vec<usize>)>> {
        let shapes = self.infer_shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_shapes(&shapes[i]).into_iter().map(move |s| (i, s)))
            .collect())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .flat_map(|(i, _)| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self
            .param_layout()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }

    pub fn to_text(&self) -> String {
        let [h, w, c] = self.input_shape;
        let mut out = format!("input {h}x{w}x{c}\nclasses {}\n", self.num_classes);
        for l in &self.layers {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::invalid(format!("model spec line {line}: {msg}"));
        let mut input_shape = None;
        let mut num_classes = None;
        let mut layers = Vec::new();
        for (no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().expect("non-empty line");
            let mut kv = std::collections::BTreeMap::new();
            let mut rest = Vec::new();
            for w in words {
                match w.split_once('=') {
                    Some((k, v)) => {
                        kv.insert(k, v);
                    }
                    None => rest.push(w),
                }
            }
            let get = |k: &str| -> Result<&str> {
                kv.get(k)
                    .copied()
                    .ok_or_else(|| bad(no, format!("missing {k}=")))
            };
            let num = |k: &str| -> Result<usize> {
                get(k)?
                    .parse()
                    .map_err(|e| bad(no, format!("{k}: {e}")))
            };
            let pair = |k: &str| -> Result<(usize, usize)> {
                let v = get(k)?;
                let (a, b) = v
                    .split_once('x')
                    .ok_or_else(|| bad(no, format!("{k} must be HxW")))?;
                Ok((
                    a.parse().map_err(|e| bad(no, format!("{k}: {e}")))?,
                    b.parse().map_err(|e| bad(no, format!("{k}: {e}")))?,
                ))
            };
            match head {
                "input" => {
                    let dims: Vec<usize> = rest
                        .first()
                        .ok_or_else(|| bad(no, "missing input shape".into()))?
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(no, e.to_string()))?;
                    let [h, w, c] = dims[..] else {
                        return Err(bad(no, "input must be HxWxC".into()));
                    };
                    input_shape = Some([h, w, c]);
                }
                "classes" => {
                    num_classes = Some(
                        rest.first()
                            .ok_or_else(|| bad(no, "missing class count".into()))?
                            .parse()
                            .map_err(|e| bad(no, format!("classes: {e}")))?,
                    )
                }
                "conv" => {
                    let (kernel_h, kernel_w) = pair("kernel")?;
                    layers.push(LayerSpec::Conv {
                        filters: num("filters")?,
                        kernel_h,
                        kernel_w,
                        stride: num("stride")?,
                        padding: get("padding")?.parse().map_err(|e| bad(no, e))?,
                    });
                }
                "maxpool" => {
                    let (pool_h, pool_w) = pair("pool")?;
                    layers.push(LayerSpec::MaxPool {
                        pool_h,
                        pool_w,
                        stride: num("stride")?,
                    });
                }
                "dense" => layers.push(LayerSpec::Dense {
                    units: num("units")?,
                }),
                "dropout" => layers.push(LayerSpec::Dropout {
                    rate: get("rate")?
                        .parse()
                        .map_err(|e| bad(no, format!("rate: {e}")))?,
                }),
                "relu" => layers.push(LayerSpec::Relu),
                "flatten" => layers.push(LayerSpec::Flatten),
                "softmax" => layers.push(LayerSpec::Softmax),
                other => return Err(bad(no, format!("unknown layer kind '{other}'"))),
            }
        }
        let spec = ModelSpec {
            input_shape: input_shape.ok_or_else(|| bad(0, "missing input line".into()))?,
            num_classes: num_classes.ok_or_else(|| bad(0, "missing classes line".into()))?,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent extent arithmetic for the reference topology.
    fn chain(input: usize, pool_stride: usize) -> Option<usize> {
        let mut x = input;
        for _ in 0..3 {
            x = x.div_ceil(2);
            if x < 2 {
                return None;
            }
            x = (x - 2) / pool_stride + 1;
        }
        Some(x)
    }

    #[test]
    fn reference_shape_chain() {
        let spec = ModelSpec::reference(3, ReferenceOptions::default()).unwrap();
        let shapes = spec.infer_shapes().unwrap();
        let spatial: Vec<usize> = shapes
            .iter()
            .filter(|s| s.len() == 3)
            .map(|s| s[0])
            .collect();
        assert_eq!(spatial, [150, 75, 75, 74, 37, 37, 36, 18, 18, 17]);
        assert_eq!(chain(150, 1), Some(17));
        assert_eq!(shapes[10], vec![17 * 17 * 64]);
        assert_eq!(shapes[10], vec![18496]);
        assert_eq!(shapes.last().unwrap(), &vec![3]);
        assert_eq!(
            ModelSpec::reference(2, ReferenceOptions::default())
                .unwrap()
                .infer_shapes()
                .unwrap()
                .last()
                .unwrap(),
            &vec![2]
        );
        assert!(ModelSpec::reference(4, ReferenceOptions::default()).is_err());
    }

    #[test]
    fn pool_stride_two_variant() {
        let opts = ReferenceOptions {
            pool_stride: 2,
            ..Default::default()
        };
        let shapes = ModelSpec::reference(3, opts).unwrap().infer_shapes().unwrap();
        let f = chain(150, 2).unwrap();
        assert_eq!(shapes[10], vec![f * f * 64]);
    }

    #[test]
    fn small_inputs() {
        for size in 1..40 {
            let opts = ReferenceOptions {
                input_hw: (size, size),
                ..Default::default()
            };
            assert_eq!(ModelSpec::reference(2, opts).is_ok(), chain(size, 1).is_some(), "{size}");
        }
    }

    #[test]
    fn text_round_trip() {
        let spec = ModelSpec::reference(2, ReferenceOptions::default()).unwrap();
        assert_eq!(ModelSpec::from_text(&spec.to_text()).unwrap(), spec);
        assert!(ModelSpec::from_text("input 4x4x3\nclasses 2\nwarp\n").is_err());
    }

    #[test]
    fn validation_names_layer() {
        let spec = ModelSpec {
            input_shape: [4, 4, 3],
            num_classes: 2,
            layers: vec![
                LayerSpec::Dense { units: 2 },
                LayerSpec::Softmax,
            ],
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");

        let spec = ModelSpec {
            input_shape: [4, 4, 3],
            num_classes: 2,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 3 }, LayerSpec::Softmax],
        };
        assert!(spec.validate().is_err());
    }
}
