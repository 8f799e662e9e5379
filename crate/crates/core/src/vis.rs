//! Fingerprint visualization network.
//!
//! An autoencoder `R` reconstructs each image; the residual `R(I) - I` is the
//! image fingerprint. A bank of freely trainable images holds one model
//! fingerprint per source, and the correlation between an image fingerprint
//! and every model fingerprint serves as the classification logit. `R` is
//! trained with a mean L1 reconstruction loss, a WGAN-GP adversarial loss
//! from a small critic, and the correlation cross-entropy.

use std::path::Path;

use ganprint_tensor::{AdamConfig, AdamState, Graph, ParamSet, Scalar, Tensor, Var};
use log::info;
use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::image::{stack_with, Image};
use crate::io::{json_bytes, write_atomic};
use crate::metrics::write_matrix_csv;
use crate::seed::rng_for;

const SLOPE: f64 = 0.2;
const BANK: &str = "bank";

/// Pearson correlation of two equally sized images: the inner product of
/// their zero-mean, unit-norm vectorizations.
pub fn corr(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return invalid(format!("corr of {:?} and {:?}", a.dims(), b.dims()));
    }
    corr_slices(a.data(), b.data())
}

pub fn corr_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return invalid("corr needs two non-empty vectors of equal length");
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    let norm = (saa * sbb).sqrt();
    if saa.sqrt() <= 1e-12 || sbb.sqrt() <= 1e-12 {
        return Err(Error::DegenerateNorm("corr of a constant image".into()));
    }
    Ok((sab / norm).clamp(-1.0, 1.0))
}

/// Mean absolute pixel difference.
pub fn pix_loss(image: &Image, reconstruction: &Image) -> Result<f64> {
    if image.dims() != reconstruction.dims() {
        return invalid("pix_loss needs equally sized images");
    }
    Ok(image.mean_abs_diff(reconstruction))
}

/// `weight * (|grad| - 1)^2` for one sample's critic input gradient.
pub fn gradient_penalty_of(grad: &[f64], weight: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    weight * (norm - 1.0).powi(2)
}

/// Softmax cross-entropy with `corr(F_im, F_mod^y)` as the logits.
pub fn cls_loss(image_fingerprint: &Image, bank: &[Image], true_source: usize) -> Result<f64> {
    if true_source >= bank.len() {
        return invalid(format!("source {true_source} outside a bank of {}", bank.len()));
    }
    let logits = bank
        .iter()
        .map(|f| corr(image_fingerprint, f))
        .collect::<Result<Vec<_>>>()?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[true_source])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pix: f64,
    pub adv: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pix: 20.0,
            adv: 0.1,
            cls: 1.0,
        }
    }
}

impl LossWeights {
    pub fn total(&self, pix: f64, adv: f64, cls: f64) -> f64 {
        self.pix * pix + self.adv * adv + self.cls * cls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Output channels of the stride-2 encoder convolutions; the decoder mirrors them.
    pub encoder_channels: Vec<usize>,
    /// Output channels of the stride-2 critic convolutions.
    pub critic_channels: Vec<usize>,
    pub weights: LossWeights,
    pub gp_weight: f64,
    /// Critic updates per reconstructor update.
    pub n_critic: usize,
    pub bank_init_std: f64,
}

impl VisConfig {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            num_classes,
            encoder_channels: vec![16, 32, 64],
            critic_channels: vec![16, 32, 64],
            weights: LossWeights::default(),
            gp_weight: 10.0,
            n_critic: 1,
            bank_init_std: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return invalid("need at least 2 classes");
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return invalid("encoder needs at least one non-empty layer");
        }
        if self.critic_channels.contains(&0) || self.channels == 0 {
            return invalid("channel counts must be positive");
        }
        let down = 1 << self.encoder_channels.len().max(self.critic_channels.len());
        if !self.height.is_multiple_of(down) || !self.width.is_multiple_of(down) || self.height < down || self.width < down {
            return invalid(format!(
                "{}x{} images cannot be halved {} times",
                self.height,
                self.width,
                down.trailing_zeros()
            ));
        }
        if self.n_critic == 0 {
            return invalid("n_critic must be positive");
        }
        Ok(())
    }

    fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    fn critic_features(&self) -> usize {
        let s = 1 << self.critic_channels.len();
        let c = self.critic_channels.last().copied().unwrap_or(self.channels);
        (self.height / s) * (self.width / s) * c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub seed: u64,
}

impl Default for VisHyper {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            critic_learning_rate: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisEpochStats {
    pub epoch: usize,
    pub pix: f64,
    /// Reconstructor side, `-mean D(R(I))`.
    pub adv: f64,
    pub cls: f64,
    pub critic: f64,
    pub gp: f64,
    pub train_accuracy: f64,
}

/// Reconstructor, critic and fingerprint bank.
#[derive(Debug, Clone, PartialEq)]
pub struct VisNets<T: Scalar = f32> {
    config: VisConfig,
    pub reconstructor: ParamSet<T>,
    pub critic: ParamSet<T>,
    pub bank: ParamSet<T>,
}

fn he_conv<T: Scalar>(rng: &mut impl Rng, cin: usize, cout: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).unwrap();
    Tensor::from_fn(&[3, 3, cin, cout], |_| T::from_f64(normal.sample(rng)))
}

fn enc_name(i: usize) -> String {
    format!("ae.enc{i}")
}

fn dec_name(i: usize) -> String {
    format!("ae.dec{i}")
}

fn critic_name(i: usize) -> String {
    format!("critic.conv{i}")
}

const CRITIC_FC: &str = "critic.fc";

impl<T: Scalar> VisNets<T> {
    pub fn new(config: VisConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0xae]);
        let mut reconstructor = ParamSet::new();
        let mut cin = config.channels;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            reconstructor.insert(format!("{}.weight", enc_name(i)), he_conv(&mut rng, cin, c));
            reconstructor.insert(format!("{}.bias", enc_name(i)), Tensor::zeros(&[c]));
            cin = c;
        }
        for (i, cout) in decoder_outputs(&config).into_iter().enumerate() {
            reconstructor.insert(format!("{}.weight", dec_name(i)), he_conv(&mut rng, cin, cout));
            reconstructor.insert(format!("{}.bias", dec_name(i)), Tensor::zeros(&[cout]));
            cin = cout;
        }

        let mut rng = rng_for(seed, &[0xc1]);
        let mut critic = ParamSet::new();
        let mut cin = config.channels;
        for (i, &c) in config.critic_channels.iter().enumerate() {
            critic.insert(format!("{}.weight", critic_name(i)), he_conv(&mut rng, cin, c));
            critic.insert(format!("{}.bias", critic_name(i)), Tensor::zeros(&[c]));
            cin = c;
        }
        let d = config.critic_features();
        let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).unwrap();
        critic.insert(
            format!("{CRITIC_FC}.weight"),
            Tensor::from_fn(&[d, 1], |_| T::from_f64(normal.sample(&mut rng))),
        );
        critic.insert(format!("{CRITIC_FC}.bias"), Tensor::zeros(&[1]));

        let mut rng = rng_for(seed, &[0xba]);
        let normal = Normal::new(0.0, config.bank_init_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut bank = ParamSet::new();
        bank.insert(
            BANK,
            Tensor::from_fn(&[config.num_classes, config.pixels()], |_| {
                T::from_f64(normal.sample(&mut rng))
            }),
        );
        Ok(Self {
            config,
            reconstructor,
            critic,
            bank,
        })
    }

    pub fn config(&self) -> &VisConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        match *x.dims() {
            [_, h, w, ch] if (h, w, ch) == (c.height, c.width, c.channels) => Ok(()),
            _ => invalid(format!(
                "expected [N, {}, {}, {}] input, got {:?}",
                c.height,
                c.width,
                c.channels,
                x.dims()
            )),
        }
    }

    /// Records `R(x)` for `x` in `[0, 1]`.
    pub fn reconstruct(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.config.encoder_channels.len() {
            h = self.conv(g, &self.reconstructor, &enc_name(i), h, 2)?;
            h = g.leaky_relu(h, SLOPE)?;
        }
        let n = self.config.encoder_channels.len();
        for i in 0..n {
            h = g.upsample_bilinear(h)?;
            h = self.conv(g, &self.reconstructor, &dec_name(i), h, 1)?;
            if i + 1 < n {
                h = g.leaky_relu(h, SLOPE)?;
            }
        }
        Ok(h)
    }

    fn conv(&self, g: &mut Graph<T>, set: &ParamSet<T>, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = g.param(set, &format!("{name}.weight"))?;
        let b = g.param(set, &format!("{name}.bias"))?;
        let y = g.conv2d(x, w, stride, 1)?;
        Ok(g.add_bias(y, b)?)
    }

    /// Records the critic; returns the `[N, 1]` scores and the
    /// pre-activations of every convolution.
    pub fn critic_forward(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut pre = Vec::with_capacity(self.config.critic_channels.len());
        for i in 0..self.config.critic_channels.len() {
            let y = self.conv(g, &self.critic, &critic_name(i), h, 2)?;
            pre.push(y);
            h = g.leaky_relu(y, SLOPE)?;
        }
        let n = g.value(h).dims()[0];
        let flat = g.reshape(h, &[n, self.config.critic_features()])?;
        let w = g.param(&self.critic, &format!("{CRITIC_FC}.weight"))?;
        let b = g.param(&self.critic, &format!("{CRITIC_FC}.bias"))?;
        let y = g.linear(flat, w)?;
        Ok((g.add_bias(y, b)?, pre))
    }

    /// Critic score per image.
    pub fn critic_scores(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone())?;
        let (out, _) = self.critic_forward(&mut g, xv)?;
        Ok(g.value(out).data().iter().map(|v| v.as_f64()).collect())
    }

    /// `dD/dx` per image, plus the LeakyReLU slope masks at `x`.
    fn critic_input_gradient(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.input_with_grad(x.clone())?;
        let (out, pre) = self.critic_forward(&mut g, xv)?;
        let total = g.sum(out)?;
        let grads = g.backward(total)?;
        let masks = pre
            .iter()
            .map(|&p| {
                g.value(p)
                    .map(|v| if v > T::zero() { T::one() } else { T::from_f64(SLOPE) })
            })
            .collect();
        let grad = grads.get(xv).cloned().expect("input is on the gradient path");
        Ok((grad, masks))
    }

    /// Mean gradient penalty over the batch `x_hat`.
    pub fn gradient_penalty(&self, x_hat: &Tensor<T>) -> Result<f64> {
        let (grad, _) = self.critic_input_gradient(x_hat)?;
        let n = x_hat.dims()[0];
        let per = grad.len() / n;
        let total: f64 = grad
            .data()
            .chunks(per)
            .map(|c| {
                let v: Vec<f64> = c.iter().map(|g| g.as_f64()).collect();
                gradient_penalty_of(&v, self.config.gp_weight)
            })
            .sum();
        Ok(total / n as f64)
    }

    /// Adds the critic-parameter gradient of [`gradient_penalty`](Self::gradient_penalty)
    /// into the critic's gradients and returns the penalty.
    ///
    /// The critic is piecewise linear, so for a fixed direction `u` the
    /// product `<u, dD/dx>` equals the critic's tangent map applied to `u`:
    /// the same convolutions without biases, with every LeakyReLU replaced by
    /// its slope mask at `x_hat`. Backpropagating that map with
    /// `u = d penalty / d(dD/dx)` gives the penalty's parameter gradient.
    pub fn accumulate_gradient_penalty(&mut self, x_hat: &Tensor<T>) -> Result<f64> {
        let (grad, masks) = self.critic_input_gradient(x_hat)?;
        let n = x_hat.dims()[0];
        let per = grad.len() / n;
        let lambda = self.config.gp_weight;
        let mut penalty = 0.0;
        let mut u = Vec::with_capacity(grad.len());
        for chunk in grad.data().chunks(per) {
            let v: Vec<f64> = chunk.iter().map(|g| g.as_f64()).collect();
            let norm = v.iter().map(|g| g * g).sum::<f64>().sqrt();
            penalty += lambda * (norm - 1.0).powi(2);
            let coef = if norm > 0.0 {
                2.0 * lambda * (norm - 1.0) / (norm * n as f64)
            } else {
                0.0
            };
            u.extend(v.iter().map(|&g| T::from_f64(coef * g)));
        }

        let mut g = Graph::new();
        let mut t = g.input(Tensor::new(x_hat.dims().to_vec(), u)?)?;
        for (i, mask) in masks.into_iter().enumerate() {
            let w = g.param(&self.critic, &format!("{}.weight", critic_name(i)))?;
            t = g.conv2d(t, w, 2, 1)?;
            t = g.mul_const(t, mask)?;
        }
        let flat = g.reshape(t, &[n, self.config.critic_features()])?;
        let w = g.param(&self.critic, &format!("{CRITIC_FC}.weight"))?;
        let out = g.linear(flat, w)?;
        let total = g.sum(out)?;
        g.backward(total)?.accumulate_owned(&g, &mut self.critic)?;
        Ok(penalty / n as f64)
    }

    /// Records the correlation-logit cross-entropy of flattened `[N, ...]`
    /// image fingerprints; returns `(loss, logits)`.
    pub fn cls_loss_graph(&self, g: &mut Graph<T>, fingerprints: Var, labels: &[usize]) -> Result<(Var, Var)> {
        let n = g.value(fingerprints).dims()[0];
        let flat = g.reshape(fingerprints, &[n, self.config.pixels()])?;
        let fim = g.normalize_rows(flat)?;
        let bank = g.param(&self.bank, BANK)?;
        let fmod = g.normalize_rows(bank)?;
        let logits = g.matmul_nt(fim, fmod)?;
        Ok((g.softmax_cross_entropy(logits, labels)?, logits))
    }

    /// Model fingerprint images `F_mod^y`.
    pub fn model_fingerprints(&self) -> Vec<Image> {
        let c = &self.config;
        let bank = self.bank.value(BANK).expect("bank exists");
        bank.data()
            .chunks(c.pixels())
            .map(|row| {
                let data = row.iter().map(|v| v.as_f64() as f32).collect();
                Image::new(c.height, c.width, c.channels, data).expect("bank rows are image sized")
            })
            .collect()
    }

    /// Image fingerprints `R(I) - I` of many images.
    pub fn image_fingerprints(&self, images: &[&Image]) -> Result<Vec<Image>> {
        let c = &self.config;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let x = stack_with(chunk.iter().copied(), |v| v)?.cast::<T>();
            self.check_input(&x)?;
            let mut g = Graph::new();
            let xv = g.input(x)?;
            let r = self.reconstruct(&mut g, xv)?;
            let f = g.sub(r, xv)?;
            out.extend(g.value(f).data().chunks(c.pixels()).map(|d| {
                Image::new(c.height, c.width, c.channels, d.iter().map(|v| v.as_f64() as f32).collect())
                    .expect("fingerprints are image sized")
            }));
        }
        Ok(out)
    }

    /// Correlation of every image fingerprint with every model fingerprint.
    pub fn responses(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let bank = self.model_fingerprints();
        self.image_fingerprints(images)?
            .iter()
            .map(|f| bank.iter().map(|m| corr(f, m)).collect())
            .collect()
    }

    /// `argmax_y corr(F_im, F_mod^y)`, ties to the smallest index.
    pub fn attribute(&self, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(self
            .responses(images)?
            .iter()
            .map(|r| {
                let mut best = 0;
                for (i, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    /// All parameters under one name space, for checkpointing.
    pub fn to_param_set(&self) -> ParamSet<T> {
        let mut all = ParamSet::new();
        for set in [&self.reconstructor, &self.critic, &self.bank] {
            for (name, p) in set.iter() {
                all.insert(name, p.value.clone());
            }
        }
        all
    }

    /// Inverse of [`to_param_set`](Self::to_param_set); checks names and dims.
    pub fn from_param_set(config: VisConfig, all: ParamSet<T>) -> Result<Self> {
        let mut nets = Self::new(config, 0)?;
        if all.len() != nets.to_param_set().len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, visualization nets need {}",
                all.len(),
                nets.to_param_set().len()
            )));
        }
        for set in [&mut nets.reconstructor, &mut nets.critic, &mut nets.bank] {
            let names: Vec<String> = set.names().map(str::to_string).collect();
            for name in names {
                let loaded = all
                    .value(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
                let slot = set.value_mut(&name).expect("name listed by the set");
                if slot.dims() != loaded.dims() {
                    return Err(Error::Format(format!(
                        "tensor `{name}` is {:?}, expected {:?}",
                        loaded.dims(),
                        slot.dims()
                    )));
                }
                *slot = loaded.clone();
            }
        }
        Ok(nets)
    }
}

fn decoder_outputs(config: &VisConfig) -> Vec<usize> {
    let enc = &config.encoder_channels;
    let mut outs: Vec<usize> = enc.iter().rev().skip(1).copied().collect();
    outs.push(config.channels);
    outs
}

/// Alternating critic / reconstructor-and-bank training.
pub fn train_vis(nets: &mut VisNets<f32>, data: &LabeledDataset, hyper: &VisHyper) -> Result<Vec<VisEpochStats>> {
    if data.is_empty() {
        return invalid("empty dataset");
    }
    if data.num_classes() != nets.config.num_classes {
        return invalid(format!(
            "dataset has {} classes, visualization net has {}",
            data.num_classes(),
            nets.config.num_classes
        ));
    }
    if hyper.batch_size == 0 {
        return invalid("batch size must be positive");
    }
    let weights = nets.config.weights;
    let adam = |lr| AdamState::new(AdamConfig { lr, ..AdamConfig::default() });
    let critic_adam_config = AdamConfig {
        lr: hyper.critic_learning_rate,
        beta1: 0.5,
        beta2: 0.9,
        ..AdamConfig::default()
    };
    let mut recon_adam = adam(hyper.learning_rate);
    let mut bank_adam = adam(hyper.learning_rate);
    let mut critic_adam = AdamState::new(critic_adam_config);

    let records = data.records();
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng_for(hyper.seed, &[0, epoch as u64]));
        let mut sums = [0.0f64; 5];
        let mut correct = 0usize;
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let n = batch.len();
            let x = stack_with(batch.iter().map(|&i| &records[i].image), |v| v)?;
            let labels: Vec<usize> = batch.iter().map(|&i| records[i].label).collect();

            let mut critic_loss = 0.0;
            let mut gp = 0.0;
            if weights.adv != 0.0 {
                for step in 0..nets.config.n_critic {
                    let mut rng = rng_for(hyper.seed, &[1, epoch as u64, b as u64, step as u64]);
                    let (loss, penalty) = critic_step(nets, &x, &mut rng)?;
                    critic_adam.step(&mut nets.critic);
                    critic_loss = loss;
                    gp = penalty;
                }
            }

            let mut g = Graph::new();
            let xv = g.input(x)?;
            let r = nets.reconstruct(&mut g, xv)?;
            let diff = g.sub(r, xv)?;
            let pix = g.mean_abs(diff)?;
            let mut total = g.scale(pix, weights.pix)?;
            let mut adv_value = 0.0;
            if weights.adv != 0.0 {
                let (scores, _) = nets.critic_forward(&mut g, r)?;
                let mean = g.mean(scores)?;
                let adv = g.scale(mean, -1.0)?;
                adv_value = g.scalar(adv);
                let weighted = g.scale(adv, weights.adv)?;
                total = g.add(total, weighted)?;
            }
            let mut cls_value = 0.0;
            if weights.cls != 0.0 {
                let (cls, logits) = nets.cls_loss_graph(&mut g, diff, &labels)?;
                cls_value = g.scalar(cls);
                let k = nets.config.num_classes;
                correct += g
                    .value(logits)
                    .data()
                    .chunks(k)
                    .zip(&labels)
                    .filter(|(row, &l)| crate::attribution::argmax(row) == l)
                    .count();
                let weighted = g.scale(cls, weights.cls)?;
                total = g.add(total, weighted)?;
            }
            let value = g.scalar(total);
            if !value.is_finite() {
                return Err(Error::Numerical(format!("objective became {value} in epoch {epoch}")));
            }
            let grads = g.backward(total)?;
            nets.reconstructor.zero_grad();
            nets.bank.zero_grad();
            grads.accumulate_owned(&g, &mut nets.reconstructor)?;
            grads.accumulate_owned(&g, &mut nets.bank)?;
            recon_adam.step(&mut nets.reconstructor);
            bank_adam.step(&mut nets.bank);

            let w = n as f64;
            sums[0] += g.scalar(pix) * w;
            sums[1] += adv_value * w;
            sums[2] += cls_value * w;
            sums[3] += critic_loss * w;
            sums[4] += gp * w;
        }
        let m = records.len() as f64;
        let stats = VisEpochStats {
            epoch,
            pix: sums[0] / m,
            adv: sums[1] / m,
            cls: sums[2] / m,
            critic: sums[3] / m,
            gp: sums[4] / m,
            train_accuracy: correct as f64 / m,
        };
        info!(
            "vis epoch {epoch}: pix {:.4} adv {:.4} cls {:.4} critic {:.4} gp {:.4} acc {:.3}",
            stats.pix, stats.adv, stats.cls, stats.critic, stats.gp, stats.train_accuracy
        );
        history.push(stats);
    }
    Ok(history)
}

/// One critic update's gradients: `mean D(R(I)) - mean D(I) + GP`.
/// Returns the loss and the penalty part.
fn critic_step(nets: &mut VisNets<f32>, x: &Tensor<f32>, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let xv = g.input(x.clone())?;
    let r = nets.reconstruct(&mut g, xv)?;
    let recon = g.value(r).clone();

    let mut g = Graph::new();
    let rv = g.input(recon.clone())?;
    let xv = g.input(x.clone())?;
    let (fake, _) = nets.critic_forward(&mut g, rv)?;
    let (real, _) = nets.critic_forward(&mut g, xv)?;
    let fake = g.mean(fake)?;
    let real = g.mean(real)?;
    let loss = g.sub(fake, real)?;
    let wasserstein = g.scalar(loss);
    nets.critic.zero_grad();
    g.backward(loss)?.accumulate_owned(&g, &mut nets.critic)?;

    let n = x.dims()[0];
    let per = x.len() / n;
    let mut mixed = x.clone();
    for (m, rv) in mixed.data_mut().chunks_mut(per).zip(recon.data().chunks(per)) {
        let eps: f32 = rng.random();
        for (a, &b) in m.iter_mut().zip(rv) {
            *a = eps * *a + (1.0 - eps) * b;
        }
    }
    let gp = nets.accumulate_gradient_penalty(&mixed)?;
    let total = wasserstein + gp;
    if !total.is_finite() {
        return Err(Error::Numerical(format!("critic loss became {total}")));
    }
    Ok((total, gp))
}

/// Class-by-class mean response: row `i` averages, over class-`i` images,
/// the correlation with each model fingerprint.
pub fn response_matrix(nets: &VisNets<f32>, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    let k = data.num_classes();
    let images: Vec<&Image> = data.images().collect();
    let responses = nets.responses(&images)?;
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    for (r, rec) in responses.iter().zip(data.records()) {
        counts[rec.label] += 1;
        for (s, v) in sums[rec.label].iter_mut().zip(r) {
            *s += v;
        }
    }
    for (row, &c) in sums.iter_mut().zip(&counts) {
        if c == 0 {
            return invalid("every class needs at least one image for the response matrix");
        }
        row.iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(sums)
}

/// Affine map that sends an image's min to 0 and max to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayMapping {
    pub min: f64,
    pub max: f64,
}

/// Stretches a residual image to the full display range.
pub fn display_image(residual: &Image) -> (Image, DisplayMapping) {
    let min = residual.data().iter().copied().fold(f32::INFINITY, f32::min);
    let max = residual.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = max - min;
    let shown = if span > 0.0 {
        residual.map(|v| (v - min) / span)
    } else {
        residual.map(|_| 0.0)
    };
    (
        shown,
        DisplayMapping {
            min: min as f64,
            max: max as f64,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportEntry {
    file: String,
    class: String,
    kind: String,
    mapping: DisplayMapping,
}

/// Writes every model fingerprint and one image fingerprint per class as
/// PGM/PPM, a JSON sidecar with the display mappings, and the mean
/// response matrix as `responses.csv`. Returns the matrix.
pub fn fingerprint_report(nets: &VisNets<f32>, data: &LabeledDataset, out_dir: &Path) -> Result<Vec<Vec<f64>>> {
    let ext = if nets.config.channels == 1 { "pgm" } else { "ppm" };
    let mut entries = Vec::new();
    for (class, fp) in data.classes().iter().zip(nets.model_fingerprints()) {
        let (shown, mapping) = display_image(&fp);
        let file = format!("model_{class}.{ext}");
        write_atomic(&out_dir.join(&file), &shown.to_pnm()?)?;
        entries.push(ReportEntry {
            file,
            class: class.clone(),
            kind: "model".into(),
            mapping,
        });
    }
    for (label, class) in data.classes().iter().enumerate() {
        let Some(rec) = data.records().iter().find(|r| r.label == label) else {
            continue;
        };
        let fp = nets.image_fingerprints(&[&rec.image])?.remove(0);
        let (shown, mapping) = display_image(&fp);
        let file = format!("image_{class}.{ext}");
        write_atomic(&out_dir.join(&file), &shown.to_pnm()?)?;
        entries.push(ReportEntry {
            file,
            class: class.clone(),
            kind: "image".into(),
            mapping,
        });
    }
    write_atomic(&out_dir.join("fingerprints.json"), &json_bytes(&entries)?)?;
    let matrix = response_matrix(nets, data)?;
    let mut csv = Vec::new();
    write_matrix_csv(&matrix, data.classes(), &mut csv)?;
    write_atomic(&out_dir.join("responses.csv"), &csv)?;
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_mirrors_encoder() {
        let c = VisConfig::desk(3);
        assert_eq!(decoder_outputs(&c), vec![32, 16, 3]);
    }

    #[test]
    fn config_rejects_undividable_sizes() {
        let mut c = VisConfig::desk(3);
        c.height = 20;
        assert!(c.validate().is_err());
        let mut c = VisConfig::desk(1);
        assert!(c.validate().is_err());
        c.num_classes = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn display_mapping_spans_full_range() {
        let img = Image::new(1, 3, 1, vec![-0.5, 0.0, 1.5]).unwrap();
        let (shown, m) = display_image(&img);
        assert_eq!(shown.data(), &[0.0, 0.25, 1.0]);
        assert_eq!((m.min, m.max), (-0.5, 1.5));
    }
}
