//! Attribution classifier and its frequency/patch analysis variants.
//!
//! The full network halves resolution with pairs of 3x3 convolutions
//! (stride 1 then stride 2, LeakyReLU 0.2), doubling channels up to a cap,
//! runs one more 3x3 convolution at 4x4, collapses to `1x1xD` with a 4x4 valid
//! convolution and ends in a fully connected layer. The `D`-dimensional
//! pre-logit activation is the image fingerprint; the rows of the final
//! layer are the model fingerprints.

mod train;

use std::fmt;
use std::str::FromStr;

use ganprint_tensor::{checkpoint_bytes, read_checkpoint, Graph, ParamSet, Tensor, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{stack_with, Image};
use crate::seed::rng_for;

pub(crate) use train::argmax;
pub use train::{classify, evaluate, predict, train, train_on, EpochStats, Evaluation, TrainConfig};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Smallest spatial resolution of the convolution stack.
pub const MIN_RESOLUTION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "resolution", rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Gaussian-downsample the input to this resolution, then convolve.
    PreDownsample(usize),
    /// Convolve the band between this resolution and half of it.
    Residual(usize),
    /// Trainable layers down to this resolution, average pooling afterwards.
    PostPool(usize),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::PreDownsample(r) => write!(f, "predown:{r}"),
            Variant::Residual(r) => write!(f, "residual:{r}"),
            Variant::PostPool(r) => write!(f, "postpool:{r}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Variant::Full);
        }
        let (kind, res) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("bad architecture `{s}`")))?;
        let res: usize = res
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad resolution in `{s}`")))?;
        match kind {
            "predown" => Ok(Variant::PreDownsample(res)),
            "residual" => Ok(Variant::Residual(res)),
            "postpool" => Ok(Variant::PostPool(res)),
            _ => invalid(format!("unknown architecture `{kind}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub variant: Variant,
    pub num_classes: usize,
}

impl ArchConfig {
    /// Desk-scale defaults: 32x32 RGB, 16 base channels, 128-d features.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            input_size: 32,
            in_channels: 3,
            base_channels: 16,
            max_channels: 128,
            variant: Variant::Full,
            num_classes,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Channel width of the stack at `resolution`.
    pub fn channels_at(&self, resolution: usize) -> usize {
        (self.base_channels * (self.input_size / resolution)).min(self.max_channels)
    }

    fn check_resolution(&self, r: usize) -> Result<()> {
        if !r.is_power_of_two() || r < MIN_RESOLUTION || r > self.input_size {
            return invalid(format!(
                "resolution {r} must be a power of two in [{MIN_RESOLUTION}, {}]",
                self.input_size
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input_size;
        if !s.is_power_of_two() || !(16..=128).contains(&s) {
            return invalid(format!("input size {s} must be a power of two in [16, 128]"));
        }
        if self.num_classes < 2 {
            return invalid("need at least 2 classes");
        }
        if self.base_channels == 0 || self.max_channels == 0 || self.in_channels == 0 {
            return invalid("channel counts must be positive");
        }
        match self.variant {
            Variant::Full => Ok(()),
            Variant::PreDownsample(r) | Variant::Residual(r) | Variant::PostPool(r) => self.check_resolution(r),
        }
    }

    /// Layer plan of this configuration.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        self.validate()?;
        let mut layers = Vec::new();
        let start = match self.variant {
            Variant::Full | Variant::PostPool(_) => self.input_size,
            Variant::PreDownsample(r) | Variant::Residual(r) => r,
        };
        let mut res = self.input_size;
        while res > start {
            layers.push(Layer::GaussianDownsample);
            res /= 2;
        }
        if let Variant::Residual(_) = self.variant {
            layers.push(Layer::HighPassResidual);
        }
        let pool_at = match self.variant {
            Variant::PostPool(r) => Some(r),
            _ => None,
        };

        let mut cin = self.in_channels;
        let mut res = start;
        loop {
            let c = self.channels_at(res);
            layers.push(Layer::conv(format!("conv{res}a"), 3, 1, 1, cin, c));
            cin = c;
            if pool_at == Some(res) {
                while res > 1 {
                    layers.push(Layer::AvgPool);
                    res /= 2;
                }
                break;
            }
            if res == MIN_RESOLUTION {
                layers.push(Layer::Conv {
                    name: "conv_final".into(),
                    kernel: MIN_RESOLUTION,
                    stride: 1,
                    pad: 0,
                    cin,
                    cout: self.max_channels,
                    activate: true,
                });
                cin = self.max_channels;
                break;
            }
            let next = self.channels_at(res / 2);
            layers.push(Layer::conv(format!("conv{res}b"), 3, 2, 1, cin, next));
            cin = next;
            res /= 2;
        }
        layers.push(Layer::Dense {
            name: "fc".into(),
            din: cin,
            dout: self.num_classes,
        });
        Ok(layers)
    }

    pub fn feature_dim(&self) -> Result<usize> {
        match self.layers()?.last() {
            Some(Layer::Dense { din, .. }) => Ok(*din),
            _ => unreachable!("layer plan always ends in a dense layer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    GaussianDownsample,
    /// `x - upsample(downsample(x))`
    HighPassResidual,
    Conv {
        name: String,
        kernel: usize,
        stride: usize,
        pad: usize,
        cin: usize,
        cout: usize,
        activate: bool,
    },
    /// 2x2 average pool, stride 2.
    AvgPool,
    Dense {
        name: String,
        din: usize,
        dout: usize,
    },
}

impl Layer {
    fn conv(name: String, kernel: usize, stride: usize, pad: usize, cin: usize, cout: usize) -> Self {
        Layer::Conv {
            name,
            kernel,
            stride,
            pad,
            cin,
            cout,
            activate: true,
        }
    }
}

/// Receptive field of a chain of `(kernel, stride)` layers.
pub fn receptive_field_of(layers: &[(usize, usize)]) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for &(k, s) in layers {
        rf += (k - 1) * jump;
        jump *= s;
    }
    rf
}

/// Patch side covered by one tensor "pixel" when average pooling starts at
/// `pool_start_resolution` in the full network, clamped to the input size.
pub fn receptive_field(config: &ArchConfig, pool_start_resolution: usize) -> Result<usize> {
    let probe = config.clone().with_variant(Variant::PostPool(pool_start_resolution));
    let chain: Vec<(usize, usize)> = probe
        .layers()?
        .iter()
        .filter_map(|l| match l {
            Layer::Conv { kernel, stride, .. } => Some((*kernel, *stride)),
            _ => None,
        })
        .collect();
    Ok(receptive_field_of(&chain).min(config.input_size))
}

/// Pre-logit activation of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
}

/// One class's weight row of the final fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierFingerprint {
    pub values: Vec<f32>,
}

/// A built attribution network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    config: ArchConfig,
    layers: Vec<Layer>,
    params: ParamSet<f32>,
}

/// Node handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub features: Var,
    pub logits: Var,
}

impl Classifier {
    /// Builds any variant; He-style initialization from `seed`.
    pub fn new(config: ArchConfig, seed: u64) -> Result<Self> {
        let layers = config.layers()?;
        let mut params = ParamSet::new();
        for (i, layer) in layers.iter().enumerate() {
            let mut rng = rng_for(seed, &[i as u64]);
            match layer {
                Layer::Conv {
                    name,
                    kernel,
                    cin,
                    cout,
                    ..
                } => {
                    let fan_in = kernel * kernel * cin;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).unwrap();
                    let dims = [*kernel, *kernel, *cin, *cout];
                    params.insert(
                        format!("{name}.weight"),
                        Tensor::from_fn(&dims, |_| normal.sample(&mut rng) as f32),
                    );
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[*cout]));
                }
                Layer::Dense { name, din, dout } => {
                    let normal = Normal::new(0.0, (1.0 / *din as f64).sqrt()).unwrap();
                    params.insert(
                        format!("{name}.weight"),
                        Tensor::from_fn(&[*din, *dout], |_| normal.sample(&mut rng) as f32),
                    );
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[*dout]));
                }
                _ => {}
            }
        }
        Ok(Self { config, layers, params })
    }

    /// Rebuilds a classifier around loaded parameters, checking names and dims.
    pub fn from_params(config: ArchConfig, params: ParamSet<f32>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                reference.params.len()
            )));
        }
        for (name, p) in reference.params.iter() {
            match params.value(name) {
                Some(v) if v.dims() == p.value.dims() => {}
                Some(v) => {
                    return Err(Error::Format(format!(
                        "tensor `{name}` is {:?}, expected {:?}",
                        v.dims(),
                        p.value.dims()
                    )))
                }
                None => return Err(Error::Format(format!("checkpoint lacks tensor `{name}`"))),
            }
        }
        Ok(Self {
            layers: reference.layers,
            config,
            params,
        })
    }

    /// Parameters in the GFPC checkpoint format.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint_bytes(&self.params)
    }

    pub fn from_checkpoint(config: ArchConfig, bytes: &[u8]) -> Result<Self> {
        Self::from_params(config, read_checkpoint(bytes)?)
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn feature_dim(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { din, .. }) => *din,
            _ => unreachable!(),
        }
    }

    /// Maps `[0, 1]` pixels to the `[-1, 1]` network input.
    pub fn input_tensor<'a>(&self, images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor<f32>> {
        let t = stack_with(images, |v| 2.0 * v - 1.0)?;
        let d = t.dims();
        let s = self.config.input_size;
        if d[1] != s || d[2] != s || d[3] != self.config.in_channels {
            return invalid(format!(
                "network expects {s}x{s}x{}, got {}x{}x{}",
                self.config.in_channels, d[1], d[2], d[3]
            ));
        }
        Ok(t)
    }

    /// Records the forward pass of `input` (`[N, H, W, C]`, already normalized).
    pub fn forward(&self, g: &mut Graph<f32>, input: Var) -> Result<ForwardVars> {
        let mut x = input;
        let mut features = None;
        for layer in &self.layers {
            x = match layer {
                Layer::GaussianDownsample => g.gaussian_downsample(x)?,
                Layer::HighPassResidual => {
                    let low = g.gaussian_downsample(x)?;
                    let up = g.upsample_bilinear(low)?;
                    g.sub(x, up)?
                }
                Layer::Conv {
                    name,
                    stride,
                    pad,
                    activate,
                    ..
                } => {
                    let w = g.param(&self.params, &format!("{name}.weight"))?;
                    let b = g.param(&self.params, &format!("{name}.bias"))?;
                    let y = g.conv2d(x, w, *stride, *pad)?;
                    let y = g.add_bias(y, b)?;
                    if *activate {
                        g.leaky_relu(y, LEAKY_SLOPE)?
                    } else {
                        y
                    }
                }
                Layer::AvgPool => g.avg_pool2d(x, 2, 2)?,
                Layer::Dense { name, din, .. } => {
                    let n = g.value(x).dims()[0];
                    let flat = g.reshape(x, &[n, *din])?;
                    features = Some(flat);
                    let w = g.param(&self.params, &format!("{name}.weight"))?;
                    let b = g.param(&self.params, &format!("{name}.bias"))?;
                    let y = g.linear(flat, w)?;
                    g.add_bias(y, b)?
                }
            };
        }
        Ok(ForwardVars {
            features: features.expect("layer plan ends in a dense layer"),
            logits: x,
        })
    }

    /// Features `[N, D]` and logits `[N, K]` of a batch.
    pub fn run(&self, images: &[&Image]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut g = Graph::new();
        let x = g.input(self.input_tensor(images.iter().copied())?)?;
        let out = self.forward(&mut g, x)?;
        Ok((g.value(out.features).clone(), g.value(out.logits).clone()))
    }

    pub fn extract_feature(&self, image: &Image) -> Result<FeatureVector> {
        let (f, _) = self.run(&[image])?;
        Ok(FeatureVector {
            values: f.into_data(),
        })
    }

    /// Features of many images, computed in batches.
    pub fn extract_features(&self, images: &[&Image]) -> Result<Vec<FeatureVector>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(128) {
            let (f, _) = self.run(chunk)?;
            let d = self.feature_dim();
            out.extend(f.data().chunks(d).map(|c| FeatureVector { values: c.to_vec() }));
        }
        Ok(out)
    }

    fn dense_name(&self) -> &str {
        match self.layers.last() {
            Some(Layer::Dense { name, .. }) => name,
            _ => unreachable!(),
        }
    }

    /// Final-layer weight rows, one per class.
    pub fn model_fingerprints(&self) -> Vec<ClassifierFingerprint> {
        let w = self
            .params
            .value(&format!("{}.weight", self.dense_name()))
            .expect("dense weight exists");
        let (d, k) = (w.dims()[0], w.dims()[1]);
        (0..k)
            .map(|class| ClassifierFingerprint {
                values: (0..d).map(|i| w.data()[i * k + class]).collect(),
            })
            .collect()
    }

    pub fn logit_bias(&self) -> Vec<f32> {
        self.params
            .value(&format!("{}.bias", self.dense_name()))
            .expect("dense bias exists")
            .data()
            .to_vec()
    }
}

/// `fingerprints . feature + bias`.
pub fn logits_from_fingerprints(
    feature: &FeatureVector,
    fingerprints: &[ClassifierFingerprint],
    bias: &[f32],
) -> Result<Vec<f64>> {
    if fingerprints.len() != bias.len() {
        return invalid("one bias per fingerprint required");
    }
    fingerprints
        .iter()
        .zip(bias)
        .map(|(fp, &b)| {
            if fp.values.len() != feature.values.len() {
                return invalid(format!(
                    "fingerprint of length {} for feature of length {}",
                    fp.values.len(),
                    feature.values.len()
                ));
            }
            Ok(fp
                .values
                .iter()
                .zip(&feature.values)
                .map(|(&w, &f)| w as f64 * f as f64)
                .sum::<f64>()
                + b as f64)
        })
        .collect()
}
