use super::ops::{self, ParamGrads};
use super::{NnError, Scalar, Tensor};

pub const KERNEL: usize = 3;

/// One layer of a feed-forward stack. Convolutions use 3×3 kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    LeakyRelu {
        negative_slope: f64,
    },
    Sigmoid,
    Flatten,
    /// Reshape each batch row to `shape` (batch dimension excluded).
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::ConvTranspose2d { .. } => "conv_transpose2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// `(weight shape, bias shape, fan-in)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => Some((
                vec![out_channels, in_channels, KERNEL, KERNEL],
                vec![out_channels],
                in_channels * KERNEL * KERNEL,
            )),
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                ..
            } => Some((
                vec![in_channels, out_channels, KERNEL, KERNEL],
                vec![out_channels],
                in_channels * KERNEL * KERNEL,
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((
                vec![in_features, out_features],
                vec![out_features],
                in_features,
            )),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::InvalidSpec(format!("{}: {msg}", self.kind())));
        match self {
            LayerSpec::Conv2d { stride, .. } | LayerSpec::ConvTranspose2d { stride, .. }
                if *stride == 0 =>
            {
                bad("stride must be positive")
            }
            LayerSpec::LeakyRelu { negative_slope }
                if !(*negative_slope > 0.0 && *negative_slope < 1.0) =>
            {
                bad("negative slope must lie in (0, 1)")
            }
            LayerSpec::Reshape { shape } if shape.is_empty() || shape.contains(&0) => {
                bad("target shape must be non-empty and positive")
            }
            _ => Ok(()),
        }
    }
}

/// What a layer keeps from `forward_train` for its backward pass.
#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    spec: LayerSpec,
    weights: Option<Tensor<T>>,
    bias: Option<Tensor<T>>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> Layer<T> {
    /// A layer with zero-valued parameters.
    pub fn new(spec: LayerSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let (weights, bias) = match spec.param_shapes() {
            Some((w, b, _)) => (Some(Tensor::zeros(&w)), Some(Tensor::zeros(&b))),
            None => (None, None),
        };
        Ok(Layer {
            spec,
            weights,
            bias,
            cache: None,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weights(&self) -> Option<&Tensor<T>> {
        self.weights.as_ref()
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    pub fn weights_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.weights.as_mut()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.bias.as_mut()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// `(weights, bias)` for parameterized layers.
    pub fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.weights.as_ref()?, self.bias.as_ref()?))
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        Some((self.weights.as_mut()?, self.bias.as_mut()?))
    }

    fn slope(&self) -> T {
        match self.spec {
            LayerSpec::LeakyRelu { negative_slope } => T::from_f64_lossy(negative_slope),
            _ => unreachable!("slope of a non-activation layer"),
        }
    }

    /// Inference pass; leaves no cache behind.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match &self.spec {
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let (w, b) = self.params().expect("conv has parameters");
                ops::conv2d_forward(input, w, b, *stride, *padding)
            }
            LayerSpec::ConvTranspose2d {
                stride,
                padding,
                output_padding,
                ..
            } => {
                let (w, b) = self.params().expect("conv has parameters");
                ops::conv_transpose2d_forward(input, w, b, *stride, *padding, *output_padding)
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = self.params().expect("dense has parameters");
                ops::dense_forward(input, w, b)
            }
            LayerSpec::LeakyRelu { .. } => Ok(ops::leaky_relu(input, self.slope())),
            LayerSpec::Sigmoid => Ok(ops::sigmoid(input)),
            LayerSpec::Flatten => {
                let n = input.batch();
                input.clone().reshape(&[n, input.row_len()])
            }
            LayerSpec::Reshape { shape } => {
                let mut full = vec![input.batch()];
                full.extend_from_slice(shape);
                input.clone().reshape(&full)
            }
        }
    }

    /// Training pass; caches what [`Self::backward`] needs.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self.forward(input)?;
        self.cache = Some(match self.spec {
            LayerSpec::Sigmoid => Cache::Output(out.clone()),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => Cache::Shape(input.shape().to_vec()),
            _ => Cache::Input(input.clone()),
        });
        Ok(out)
    }

    /// Consumes the cache, accumulates parameter gradients into the weight
    /// and bias gradient slots, and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .take()
            .ok_or(NnError::MissingCache(self.spec.kind()))?;
        let grads = match (&self.spec, cache) {
            (
                LayerSpec::Conv2d {
                    stride, padding, ..
                },
                Cache::Input(x),
            ) => {
                let w = self.weights.as_ref().expect("conv has parameters");
                ops::conv2d_backward(upstream, &x, w, *stride, *padding)?
            }
            (
                LayerSpec::ConvTranspose2d {
                    stride,
                    padding,
                    output_padding,
                    ..
                },
                Cache::Input(x),
            ) => {
                let w = self.weights.as_ref().expect("conv has parameters");
                ops::conv_transpose2d_backward(upstream, &x, w, *stride, *padding, *output_padding)?
            }
            (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                let w = self.weights.as_ref().expect("dense has parameters");
                ops::dense_backward(upstream, &x, w)?
            }
            (LayerSpec::LeakyRelu { .. }, Cache::Input(x)) => {
                return Ok(ops::leaky_relu_backward(upstream, &x, self.slope()));
            }
            (LayerSpec::Sigmoid, Cache::Output(s)) => {
                return Ok(ops::sigmoid_backward(upstream, &s));
            }
            (LayerSpec::Flatten | LayerSpec::Reshape { .. }, Cache::Shape(shape)) => {
                return upstream.clone().reshape(&shape);
            }
            _ => unreachable!("cache kind always matches the layer kind"),
        };
        let ParamGrads {
            input,
            weights,
            bias,
        } = grads;
        self.weights
            .as_mut()
            .unwrap()
            .accumulate_grad(weights.data());
        self.bias.as_mut().unwrap().accumulate_grad(bias.data());
        Ok(input)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            spec: self.spec.clone(),
            weights: self.weights.as_ref().map(Tensor::cast),
            bias: self.bias.as_ref().map(Tensor::cast),
            cache: None,
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(specs: &[LayerSpec]) -> Result<Self, NnError> {
        let layers = specs
            .iter()
            .cloned()
            .map(Layer::new)
            .collect::<Result<_, _>>()?;
        Ok(Sequential { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward_train(&x)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }
}

impl<T: Scalar> FromIterator<Layer<T>> for Sequential<T> {
    fn from_iter<I: IntoIterator<Item = Layer<T>>>(iter: I) -> Self {
        Sequential {
            layers: iter.into_iter().collect(),
        }
    }
}
