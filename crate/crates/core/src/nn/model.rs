//! Plain convolutional autoencoder: strided 3x3x3 convolutions down,
//! mirrored transposed convolutions up, no residual units or normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tape, Tensor, Var};
use crate::scalar::Real;

const KERNEL: usize = 3;
const PADDING: usize = 1;
const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Prelu,
    Relu,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "three")]
    pub spatial_dims: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    #[serde(default)]
    pub num_res_units: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(in_channels: usize, out_channels: usize, channels: Vec<usize>, strides: Vec<usize>) -> Self {
        Self {
            spatial_dims: 3,
            in_channels,
            out_channels,
            channels,
            strides,
            num_res_units: 0,
            activation: Activation::Prelu,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if self.spatial_dims != 3 {
            return bad("only spatial_dims = 3 is supported");
        }
        if self.num_res_units != 0 {
            return bad("residual units are not supported (num_res_units must be 0)");
        }
        if self.channels.is_empty() {
            return bad("channels must not be empty");
        }
        if self.channels.len() != self.strides.len() {
            return bad("channels and strides must have the same length");
        }
        if self.strides.iter().any(|&s| s == 0) {
            return bad("strides must be >= 1");
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.channels.contains(&0) {
            return bad("channel counts must be positive");
        }
        Ok(())
    }

    /// Product of all strides; spatial dims must be divisible by it.
    pub fn downsampling(&self) -> usize {
        self.strides.iter().product()
    }

    /// Encoder convolutions followed by the mirrored decoder.
    pub fn layers(&self) -> Vec<LayerPlan> {
        let k = self.channels.len();
        let mut out = Vec::with_capacity(2 * k);
        let mut cin = self.in_channels;
        for (i, (&c, &s)) in self.channels.iter().zip(&self.strides).enumerate() {
            out.push(LayerPlan {
                name: format!("encode.{i}"),
                transposed: false,
                cin,
                cout: c,
                stride: s,
                activation: true,
            });
            cin = c;
        }
        for i in (0..k).rev() {
            let last = i == 0;
            let cout = if last { self.out_channels } else { self.channels[i - 1] };
            out.push(LayerPlan {
                name: format!("decode.{}", k - 1 - i),
                transposed: true,
                cin,
                cout,
                stride: self.strides[i],
                activation: !last,
            });
            cin = cout;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub name: String,
    pub transposed: bool,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub activation: bool,
}

impl LayerPlan {
    fn weight_shape(&self) -> [usize; 5] {
        let [a, b] = if self.transposed {
            [self.cin, self.cout]
        } else {
            [self.cout, self.cin]
        };
        [a, b, KERNEL, KERNEL, KERNEL]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: [usize; 5],
}

/// Autoencoder with its flat, ordered parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Variables produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
}

impl<T: Real> Model<T> {
    /// Kaiming-uniform kernels (bound `sqrt(6 / fan_in)`), zero biases and
    /// PReLU slopes of 0.25, drawn from a ChaCha8 stream seeded by `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for layer in config.layers() {
            let shape = layer.weight_shape();
            let fan_in = shape[1] * KERNEL.pow(3);
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let w = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
            names.push(format!("{}.weight", layer.name));
            params.push(Tensor::from_vec(shape, w)?.with_grad());
            names.push(format!("{}.bias", layer.name));
            params.push(Tensor::zeros([layer.cout, 1, 1, 1, 1]).with_grad());
            if layer.activation && config.activation == Activation::Prelu {
                names.push(format!("{}.alpha", layer.name));
                params.push(Tensor::scalar(T::lit(PRELU_INIT)).with_grad());
            }
        }
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| ParamInfo {
                name: n.clone(),
                shape: p.shape(),
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// All parameters concatenated in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn check_input(&self, shape: [usize; 5]) -> Result<(), NnError> {
        if shape[1] != self.config.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "input has {} channels, model expects {}",
                shape[1], self.config.in_channels
            )));
        }
        let f = self.config.downsampling();
        for (axis, name) in [(2, "D (z)"), (3, "H (y)"), (4, "W (x)")] {
            if shape[axis] % f != 0 {
                return Err(NnError::InvalidConfig(format!(
                    "axis {name} has size {} which is not divisible by the stride product {f}",
                    shape[axis]
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Parameters become leaves that
    /// receive gradients iff `train` is set.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, train: bool) -> Result<Forward, NnError> {
        self.check_input(tape.value(x)?.shape())?;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.grad = None;
                t.requires_grad = train;
                tape.leaf(t)
            })
            .collect();
        let mut it = vars.iter().copied();
        let mut h = x;
        for layer in self.config.layers() {
            let (w, b) = (it.next().expect("weight"), it.next().expect("bias"));
            h = if layer.transposed {
                tape.conv_transpose3d(h, w, Some(b), layer.stride, PADDING, layer.stride - 1)?
            } else {
                tape.conv3d(h, w, Some(b), layer.stride, PADDING)?
            };
            if layer.activation {
                h = match self.config.activation {
                    Activation::Prelu => tape.prelu(h, it.next().expect("alpha"))?,
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(Forward { logits: h, params: vars })
    }

    /// Logits for `x` without recording gradients.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, xv, false)?;
        tape.take(out.logits)
    }

    /// Moves the gradients of a finished backward pass into the parameters.
    pub fn collect_grads(&mut self, tape: &Tape<T>, fwd: &Forward) {
        for (p, v) in self.params.iter_mut().zip(&fwd.params) {
            p.grad = tape.grad(*v).map(<[T]>::to_vec);
        }
    }
}
