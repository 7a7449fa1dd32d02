//! Desk-scale network layouts shared by the GAN and the hashing model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabelMode;
use crate::error::{Error, Result};
use crate::nn::{Layer, Network, ParamSet, Tensor, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub image_size: usize,
    pub channels: usize,
    pub class_count: usize,
    pub label_mode: LabelMode,
    #[serde(default = "default_noise_dim")]
    pub noise_dim: usize,
    /// Channel count of the generator's last upsampling stage; earlier
    /// stages double it.
    #[serde(default = "default_generator_width")]
    pub generator_width: usize,
    #[serde(default = "default_encoder_widths")]
    pub encoder_widths: [usize; 3],
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_leak")]
    pub leak: f64,
    /// Initial weights are N(0, init_gain² / fan_in).
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

fn default_noise_dim() -> usize {
    64
}
fn default_generator_width() -> usize {
    16
}
fn default_encoder_widths() -> [usize; 3] {
    [8, 16, 32]
}
fn default_feature_dim() -> usize {
    32
}
fn default_leak() -> f64 {
    0.2
}
fn default_init_gain() -> f64 {
    1.0
}

impl ArchConfig {
    pub fn new(image_size: usize, channels: usize, class_count: usize, label_mode: LabelMode) -> Self {
        Self {
            image_size,
            channels,
            class_count,
            label_mode,
            noise_dim: default_noise_dim(),
            generator_width: default_generator_width(),
            encoder_widths: default_encoder_widths(),
            feature_dim: default_feature_dim(),
            leak: default_leak(),
            init_gain: default_init_gain(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Configuration("class_count must be positive".into()));
        }
        if self.channels == 0 || self.noise_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Configuration(
                "channels, noise_dim and feature_dim must be positive".into(),
            ));
        }
        if self.generator_width == 0 || self.encoder_widths.contains(&0) {
            return Err(Error::Configuration("layer widths must be positive".into()));
        }
        if self.image_size < 8 || !(self.image_size / 4).is_power_of_two() || self.image_size % 4 != 0
        {
            return Err(Error::Configuration(format!(
                "image_size must be 4·2^m with m >= 1, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    fn upsampling_stages(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }

    /// `[C, z]` (length `class_count + noise_dim`) → image in `[-1, 1]`.
    ///
    /// Dense projection to a 4×4 map, stride-2 transposed convolutions up to
    /// full resolution, a 3×3 convolution to the output channels, `tanh`.
    pub fn generator(&self, prefix: &str) -> Network {
        let stages = self.upsampling_stages();
        let leak = LeakyReluSlope(self.leak);
        let mut width = self.generator_width << stages;
        let mut layers = vec![
            Layer::Dense {
                name: format!("{prefix}fc"),
                inputs: self.class_count + self.noise_dim,
                outputs: width * 16,
            },
            leak.layer(),
            Layer::Unflatten {
                channels: width,
                height: 4,
                width: 4,
            },
        ];
        for s in 0..stages {
            layers.push(Layer::ConvTranspose {
                name: format!("{prefix}up{}", s + 1),
                in_channels: width,
                out_channels: width / 2,
                kernel: 4,
                stride: 2,
                padding: 1,
            });
            layers.push(leak.layer());
            width /= 2;
        }
        layers.push(Layer::Conv {
            name: format!("{prefix}out"),
            in_channels: width,
            out_channels: self.channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        });
        layers.push(Layer::Tanh);
        Network::new(layers)
    }

    /// Image → `feature_dim` representation: three convolution blocks and a
    /// dense layer, leaky activations throughout.
    pub fn encoder(&self, prefix: &str) -> Network {
        let [w1, w2, w3] = self.encoder_widths;
        let leak = LeakyReluSlope(self.leak);
        let side = self.image_size / 4;
        Network::new(vec![
            Layer::Conv {
                name: format!("{prefix}conv1"),
                in_channels: self.channels,
                out_channels: w1,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            leak.layer(),
            Layer::Conv {
                name: format!("{prefix}conv2"),
                in_channels: w1,
                out_channels: w2,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            leak.layer(),
            Layer::Conv {
                name: format!("{prefix}conv3"),
                in_channels: w2,
                out_channels: w3,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            leak.layer(),
            Layer::Flatten,
            Layer::Dense {
                name: format!("{prefix}fc"),
                inputs: w3 * side * side,
                outputs: self.feature_dim,
            },
            leak.layer(),
        ])
    }

    /// Linear head on top of the encoder features.
    pub fn head(&self, prefix: &str, outputs: usize) -> Network {
        Network::new(vec![Layer::Dense {
            name: format!("{prefix}linear"),
            inputs: self.feature_dim,
            outputs,
        }])
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }
}

/// A trunk network feeding several linear heads.
#[derive(Debug, Clone)]
pub struct Tower {
    pub trunk: Network,
    pub heads: Vec<Network>,
}

/// Values recorded by [`Tower::forward`].
#[derive(Debug)]
pub struct TowerTrace {
    trunk: Trace,
    heads: Vec<Trace>,
    features: Tensor,
}

impl TowerTrace {
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

impl Tower {
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        self.trunk.check_params(params)?;
        self.heads.iter().try_for_each(|h| h.check_params(params))
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, gain: f64) -> ParamSet {
        let mut p = self.trunk.init_scaled(rng, gain);
        for h in &self.heads {
            p.extend(h.init_scaled(rng, gain));
        }
        p
    }

    /// Returns one `[batch, outputs]` tensor per head.
    pub fn forward(&self, params: &ParamSet, x: Tensor) -> Result<(Vec<Tensor>, TowerTrace)> {
        let (features, trunk) = self.trunk.forward(params, x)?;
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (y, t) = h.forward(params, features.clone())?;
            outputs.push(y);
            heads.push(t);
        }
        Ok((outputs, TowerTrace { trunk, heads, features }))
    }

    /// Backward from per-head output gradients; `None` marks a head that does
    /// not contribute to the objective.
    pub fn backward(
        &self,
        params: &ParamSet,
        trace: TowerTrace,
        head_grads: Vec<Option<Tensor>>,
    ) -> (Tensor, ParamSet) {
        let mut grads = ParamSet::new();
        let mut dfeat = Tensor::zeros(trace.features.raw_dim());
        for ((head, t), dy) in self.heads.iter().zip(trace.heads).zip(head_grads) {
            match dy {
                Some(dy) => {
                    let (d, g) = head.backward(params, t, dy);
                    dfeat += &d;
                    grads.extend(g);
                }
                None => grads.extend(head.zero_params()),
            }
        }
        let (dx, g) = self.trunk.backward(params, trace.trunk, dfeat);
        grads.extend(g);
        (dx, grads)
    }
}

#[derive(Clone, Copy)]
struct LeakyReluSlope(f64);

impl LeakyReluSlope {
    fn layer(self) -> Layer {
        Layer::LeakyRelu { slope: self.0 }
    }
}
