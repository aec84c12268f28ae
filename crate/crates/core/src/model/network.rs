use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, flatten_backward, flatten_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax, Conv2dParams, ConvCache, DenseCache, DenseParams,
    DropoutMask, DropoutParams, FlattenCache, MaxPoolCache, MaxPoolParams, Mode, ReluCache,
};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_INIT_STD: f64 = 0.05;

#[derive(Debug, Clone)]
pub enum Layer<S: Scalar = f32> {
    Conv(Conv2dParams<S>),
    MaxPool(MaxPoolParams),
    Relu,
    Flatten,
    Dense(DenseParams<S>),
    Dropout(f64),
    Softmax,
}

/// Per-layer state retained by a training forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<S: Scalar = f32> {
    Conv(ConvCache<S>),
    MaxPool(MaxPoolCache),
    Relu(ReluCache),
    Flatten(FlattenCache),
    Dense(DenseCache<S>),
    Dropout(DropoutMask<S>),
    Softmax,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<S: Scalar = f32> {
    /// `[n, classes]` pre-softmax scores.
    pub logits: Tensor<S>,
    /// `[n, classes]`
    pub probs: Tensor<S>,
    /// Present only for [`Mode::Train`].
    pub caches: Option<Vec<LayerCache<S>>>,
}

/// A network instance: the spec plus its trainable tensors.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar = f32> {
    spec: ModelSpec,
    layers: Vec<Layer<S>>,
}

fn at_layer<T>(index: usize, kind: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Layer {
        index,
        kind: kind.into(),
        source: Box::new(e),
    })
}

impl<S: Scalar> Model<S> {
    /// Gaussian weights (mean 0, `init_std`) drawn in layer order from the init stream of
    /// `seed`; zero biases.
    pub fn init(spec: ModelSpec, init_std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::invalid(format!("init std {init_std}: {e}")))?;
        let mut rng = stream_rng(seed, Stream::Init);
        let params = spec
            .param_layout()?
            .into_iter()
            .map(|(_, shape)| {
                let n: usize = shape.iter().product();
                // biases are 1-D; everything else is a weight tensor
                let data = if shape.len() == 1 {
                    vec![S::zero(); n]
                } else {
                    (0..n)
                        .map(|_| S::from_f64_lossy(normal.sample(&mut rng)))
                        .collect()
                };
                Tensor::from_vec(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(spec, params)
    }

    /// Assembles a model from tensors given in [`ModelSpec::param_layout`] order.
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor<S>>) -> Result<Self> {
        let layout = spec.param_layout()?;
        if layout.len() != params.len() {
            return Err(Error::invalid(format!(
                "model needs {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((index, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Layer {
                    index: *index,
                    kind: spec.layers[*index].kind().into(),
                    source: Box::new(Error::ShapeMismatch {
                        op: "parameter",
                        left: p.shape().to_vec(),
                        right: shape.clone(),
                    }),
                });
            }
        }
        let mut params = params.into_iter();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            layers.push(match *l {
                LayerSpec::Conv {
                    stride, padding, ..
                } => {
                    let w = params.next().expect("layout checked");
                    let b = params.next().expect("layout checked");
                    Layer::Conv(Conv2dParams::new(w, b, stride, padding)?)
                }
                LayerSpec::Dense { .. } => {
                    let w = params.next().expect("layout checked");
                    let b = params.next().expect("layout checked");
                    Layer::Dense(DenseParams::new(w, b)?)
                }
                LayerSpec::MaxPool {
                    pool_h,
                    pool_w,
                    stride,
                } => Layer::MaxPool(MaxPoolParams::new(pool_h, pool_w, stride)?),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dropout { rate } => Layer::Dropout(rate),
                LayerSpec::Softmax => Layer::Softmax,
            });
        }
        Ok(Model { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    /// Trainable tensors in layout order (weight then bias per layer).
    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(p) => out.extend([&p.weights, &p.bias]),
                Layer::Dense(p) => out.extend([&p.weights, &p.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(p) => out.extend([&mut p.weights, &mut p.bias]),
                Layer::Dense(p) => out.extend([&mut p.weights, &mut p.bias]),
                _ => {}
            }
        }
        out
    }

    /// Conv kernels `[kh, kw, in_c, filters]` in layer order.
    pub fn conv_weights(&self) -> Vec<&Tensor<S>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(p) => Some(&p.weights),
                _ => None,
            })
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let params = self.params().into_iter().map(Tensor::cast).collect();
        Model::from_params(self.spec.clone(), params).expect("same layout")
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        match x.shape() {
            [_, h, w, c] if [*h, *w, *c] == self.spec.input_shape => Ok(()),
            _ => Err(Error::ShapeMismatch {
                op: "model input",
                left: x.shape().to_vec(),
                right: self.spec.input_shape.to_vec(),
            }),
        }
    }

    /// Runs the whole stack. Dropout draws come from `rng` in train mode only.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<S>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput<S>> {
        self.check_input(x)?;
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(if train { self.layers.len() } else { 0 });
        let mut h = x.clone();
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = self.spec.layers[i].kind();
            let (next, cache) = match layer {
                Layer::Conv(p) => {
                    let (y, c) = at_layer(i, kind, conv2d_forward(&h, p))?;
                    (y, LayerCache::Conv(c))
                }
                Layer::MaxPool(p) => {
                    let (y, c) = at_layer(i, kind, maxpool_forward(&h, p))?;
                    (y, LayerCache::MaxPool(c))
                }
                Layer::Relu => {
                    let (y, c) = relu_forward(&h);
                    (y, LayerCache::Relu(c))
                }
                Layer::Flatten => {
                    let (y, c) = at_layer(i, kind, flatten_forward(&h))?;
                    (y, LayerCache::Flatten(c))
                }
                Layer::Dense(p) => {
                    let (y, c) = at_layer(i, kind, dense_forward(&h, p))?;
                    (y, LayerCache::Dense(c))
                }
                Layer::Dropout(rate) => {
                    let dp = DropoutParams::new(*rate, mode)?;
                    let (y, c) = at_layer(i, kind, dropout_forward(&h, &dp, rng))?;
                    (y, LayerCache::Dropout(c))
                }
                Layer::Softmax => {
                    let y = at_layer(i, kind, softmax(&h))?;
                    logits = Some(std::mem::replace(&mut h, y));
                    if train {
                        caches.push(LayerCache::Softmax);
                    }
                    continue;
                }
            };
            h = next;
            if train {
                caches.push(cache);
            }
        }
        let logits = logits.ok_or_else(|| Error::invalid("model has no softmax output"))?;
        Ok(ForwardOutput {
            logits,
            probs: h,
            caches: train.then_some(caches),
        })
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        // eval mode never draws, any generator will do
        let mut rng = stream_rng(0, Stream::Dropout);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.probs)
    }

    /// Back-propagates a gradient with respect to the logits through every layer
    /// below the softmax. Returns parameter gradients in layout order.
    pub fn backward(&self, caches: &[LayerCache<S>], d_logits: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        if caches.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grads: Vec<Vec<Tensor<S>>> = Vec::new();
        let mut g = d_logits.clone();
        for (i, cache) in caches.iter().enumerate().rev() {
            let kind = self.spec.layers[i].kind();
            g = match cache {
                // the incoming gradient is already with respect to the logits
                LayerCache::Softmax => continue,
                LayerCache::Conv(c) => {
                    let lg = at_layer(i, kind, conv2d_backward(&g, c))?;
                    grads.push(lg.d_params);
                    lg.d_input
                }
                LayerCache::Dense(c) => {
                    let lg = at_layer(i, kind, dense_backward(&g, c))?;
                    grads.push(lg.d_params);
                    lg.d_input
                }
                LayerCache::MaxPool(c) => at_layer(i, kind, maxpool_backward(&g, c))?,
                LayerCache::Relu(c) => at_layer(i, kind, relu_backward(&g, c))?,
                LayerCache::Flatten(c) => at_layer(i, kind, flatten_backward(&g, c))?,
                LayerCache::Dropout(m) => at_layer(i, kind, dropout_backward(&g, m))?,
            };
        }
        Ok(grads.into_iter().rev().flatten().collect())
    }
}
