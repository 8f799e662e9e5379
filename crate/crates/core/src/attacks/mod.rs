//! Perturbation attacks on test images and finetuning against them.
//!
//! Every attack draws its parameters from an RNG, so a seed fixes the whole
//! perturbation. Relighting is a smooth quadratic gain field, standing in for
//! a learned relighting network.

pub mod jpeg;

use std::fmt;
use std::str::FromStr;

use ganprint_tensor::ops::{resample_separable, Resample1d};
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attribution::{train_on, Classifier, EpochStats, TrainConfig};
use crate::dataset::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::filters::{filter_separable, gaussian_kernel};
use crate::image::Image;
use crate::seed::rng_for;

pub use jpeg::{chroma_table, encode_jpeg, fdct, idct, jpeg_round_trip, luma_table, scaled_table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Range of `s`, in 8-bit units.
    pub min: f64,
    pub max: f64,
    /// Treat `s` as a variance (std `sqrt(s)/255`) instead of a std (`s/255`).
    pub variance: bool,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            min: 5.0,
            max: 20.0,
            variance: false,
        }
    }
}

impl NoiseParams {
    /// Noise standard deviation on the `[0, 1]` scale for a drawn `s`.
    pub fn std_for(&self, s: f64) -> f64 {
        if self.variance {
            s.sqrt() / 255.0
        } else {
            s / 255.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub kernels: Vec<usize>,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            kernels: vec![1, 3, 5, 7, 9],
        }
    }
}

/// Conventional sigma for a Gaussian kernel of odd size `k`.
pub fn blur_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    /// Per-side offset range as a fraction of the side length.
    pub min: f64,
    pub max: f64,
}

impl Default for CropParams {
    fn default() -> Self {
        Self { min: 0.05, max: 0.20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JpegParams {
    pub min: u8,
    pub max: u8,
    pub subsample: bool,
}

impl Default for JpegParams {
    fn default() -> Self {
        Self {
            min: 10,
            max: 75,
            subsample: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelightParams {
    /// Coefficients of `x, y, x^2, xy, y^2` are drawn from `[-max, max]`.
    pub max: f64,
}

impl Default for RelightParams {
    fn default() -> Self {
        Self { max: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboParams {
    /// Probability of applying each stage.
    pub probability: f64,
    pub relight: RelightParams,
    pub crop: CropParams,
    pub blur: BlurParams,
    pub jpeg: JpegParams,
    pub noise: NoiseParams,
}

impl Default for ComboParams {
    fn default() -> Self {
        Self {
            probability: 0.5,
            relight: RelightParams::default(),
            crop: CropParams::default(),
            blur: BlurParams::default(),
            jpeg: JpegParams::default(),
            noise: NoiseParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    Noise(NoiseParams),
    Blur(BlurParams),
    Crop(CropParams),
    Jpeg(JpegParams),
    Relight(RelightParams),
    Combination(ComboParams),
}

impl Attack {
    pub fn name(&self) -> &'static str {
        match self {
            Attack::Noise(_) => "noise",
            Attack::Blur(_) => "blur",
            Attack::Crop(_) => "crop",
            Attack::Jpeg(_) => "jpeg",
            Attack::Relight(_) => "relight",
            Attack::Combination(_) => "combo",
        }
    }

    pub fn default_for(kind: &str) -> Result<Self> {
        Ok(match kind {
            "noise" => Attack::Noise(NoiseParams::default()),
            "blur" => Attack::Blur(BlurParams::default()),
            "crop" => Attack::Crop(CropParams::default()),
            "jpeg" => Attack::Jpeg(JpegParams::default()),
            "relight" => Attack::Relight(RelightParams::default()),
            "combo" | "combination" => Attack::Combination(ComboParams::default()),
            _ => return invalid(format!("unknown attack `{kind}`")),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let range = |lo: f64, hi: f64, what: &str| {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                invalid(format!("{what} range [{lo}, {hi}] is empty"))
            } else {
                Ok(())
            }
        };
        match self {
            Attack::Noise(p) => {
                range(p.min, p.max, "noise")?;
                if p.min < 0.0 {
                    return invalid("noise level must be non-negative");
                }
                Ok(())
            }
            Attack::Blur(p) => {
                if p.kernels.is_empty() || p.kernels.iter().any(|k| k % 2 == 0) {
                    return invalid("blur kernels must be a non-empty list of odd sizes");
                }
                Ok(())
            }
            Attack::Crop(p) => {
                range(p.min, p.max, "crop")?;
                if p.min < 0.0 || p.max >= 0.5 {
                    return invalid("crop offsets must lie in [0, 0.5)");
                }
                Ok(())
            }
            Attack::Jpeg(p) => {
                if p.min < 1 || p.max > 100 || p.min > p.max {
                    return invalid(format!("JPEG quality range [{}, {}] invalid", p.min, p.max));
                }
                Ok(())
            }
            Attack::Relight(p) => {
                if !(p.max >= 0.0 && p.max.is_finite()) {
                    return invalid("relight coefficient bound must be non-negative");
                }
                Ok(())
            }
            Attack::Combination(p) => {
                if !(0.0..=1.0).contains(&p.probability) {
                    return invalid("stage probability must lie in [0, 1]");
                }
                Attack::Relight(p.relight).validate()?;
                Attack::Crop(p.crop).validate()?;
                Attack::Blur(p.blur.clone()).validate()?;
                Attack::Jpeg(p.jpeg).validate()?;
                Attack::Noise(p.noise).validate()
            }
        }
    }
}

/// An attack plus the seed that fixes all of its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub attack: Attack,
    pub seed: u64,
}

fn parse_bool(v: &str) -> Result<bool> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("expected true/false, got `{v}`")))
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value `{v}` for `{key}`")))
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// `kind[:key=value,...]`, e.g. `noise:seed=7` or `crop:min=0.05,max=0.20,seed=3`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut attack = Attack::default_for(kind.trim())?;
        let mut seed = 0;
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got `{pair}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match (&mut attack, key) {
                (_, "seed") => seed = parse_num(key, value)?,
                (Attack::Noise(p), "min") => p.min = parse_num(key, value)?,
                (Attack::Noise(p), "max") => p.max = parse_num(key, value)?,
                (Attack::Noise(p), "variance") => p.variance = parse_bool(value)?,
                (Attack::Blur(p), "kernels") => {
                    p.kernels = value
                        .split('/')
                        .map(|k| parse_num(key, k))
                        .collect::<Result<_>>()?
                }
                (Attack::Crop(p), "min") => p.min = parse_num(key, value)?,
                (Attack::Crop(p), "max") => p.max = parse_num(key, value)?,
                (Attack::Jpeg(p), "min") => p.min = parse_num(key, value)?,
                (Attack::Jpeg(p), "max") => p.max = parse_num(key, value)?,
                (Attack::Jpeg(p), "subsample") => p.subsample = parse_bool(value)?,
                (Attack::Relight(p), "max") => p.max = parse_num(key, value)?,
                (Attack::Combination(p), "p") => p.probability = parse_num(key, value)?,
                (Attack::Combination(p), "variance") => p.noise.variance = parse_bool(value)?,
                (a, _) => return invalid(format!("unknown option `{key}` for {} attack", a.name())),
            }
        }
        attack.validate()?;
        Ok(AttackSpec { attack, seed })
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.attack.name())?;
        match &self.attack {
            Attack::Noise(p) => write!(f, "min={},max={},variance={},", p.min, p.max, p.variance)?,
            Attack::Blur(p) => {
                let ks: Vec<String> = p.kernels.iter().map(|k| k.to_string()).collect();
                write!(f, "kernels={},", ks.join("/"))?
            }
            Attack::Crop(p) => write!(f, "min={},max={},", p.min, p.max)?,
            Attack::Jpeg(p) => write!(f, "min={},max={},subsample={},", p.min, p.max, p.subsample)?,
            Attack::Relight(p) => write!(f, "max={},", p.max)?,
            Attack::Combination(p) => write!(f, "p={},variance={},", p.probability, p.noise.variance)?,
        }
        write!(f, "seed={}", self.seed)
    }
}

/// Adds i.i.d. Gaussian noise; returns the image and the drawn std.
pub fn apply_noise(image: &Image, rng: &mut impl Rng, params: &NoiseParams) -> (Image, f64) {
    let s = rng.random_range(params.min..=params.max);
    let std = params.std_for(s);
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    (out, std)
}

/// Gaussian blur with a drawn odd kernel size; returns the image and the size.
pub fn apply_blur(image: &Image, rng: &mut impl Rng, params: &BlurParams) -> (Image, usize) {
    let k = params.kernels[rng.random_range(0..params.kernels.len())];
    (blur_with_kernel(image, k), k)
}

pub fn blur_with_kernel(image: &Image, k: usize) -> Image {
    if k <= 1 {
        return image.clone();
    }
    filter_separable(image, &gaussian_kernel(k, blur_sigma(k))).clamp01()
}

/// Pixel offsets cut from each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

/// Crops the continuous window left by `b` and resizes it bilinearly
/// (half-pixel centers) back to the input dims.
pub fn crop_resize(image: &Image, b: &CropBox) -> Result<Image> {
    let (h, w, _) = image.dims();
    let span_y = h as f64 - b.top - b.bottom;
    let span_x = w as f64 - b.left - b.right;
    if span_y <= 0.0 || span_x <= 0.0 {
        return invalid("crop would be empty");
    }
    let rows = Resample1d::bilinear(h, h, b.top, span_y);
    let cols = Resample1d::bilinear(w, w, b.left, span_x);
    let out = resample_separable(&image.to_tensor(), &rows, &cols)?;
    Ok(Image::from_tensor(&out)?.clamp01())
}

/// Independent per-side offsets drawn from `[min, max]` of the side length.
pub fn apply_crop(image: &Image, rng: &mut impl Rng, params: &CropParams) -> Result<(Image, CropBox)> {
    let (h, w, _) = image.dims();
    let mut draw = |len: usize| rng.random_range(params.min..=params.max) * len as f64;
    let b = CropBox {
        top: draw(h),
        bottom: draw(h),
        left: draw(w),
        right: draw(w),
    };
    Ok((crop_resize(image, &b)?, b))
}

/// JPEG round trip at a drawn quality; returns the image and the quality.
pub fn apply_jpeg(image: &Image, rng: &mut impl Rng, params: &JpegParams) -> Result<(Image, u8)> {
    let q = rng.random_range(params.min..=params.max);
    Ok((jpeg_round_trip(image, q, params.subsample)?, q))
}

/// `clamp(1 + a1 x + a2 y + a3 x^2 + a4 xy + a5 y^2, 0.5, 1.5)` at pixel
/// centers mapped to `[-1, 1]^2`, row-major.
pub fn gain_field(coeffs: &[f64; 5], height: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = 2.0 * (r as f64 + 0.5) / height as f64 - 1.0;
        for c in 0..width {
            let x = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
            let g = 1.0 + coeffs[0] * x + coeffs[1] * y + coeffs[2] * x * x + coeffs[3] * x * y + coeffs[4] * y * y;
            out.push(g.clamp(0.5, 1.5));
        }
    }
    out
}

pub fn relight_with(image: &Image, coeffs: &[f64; 5]) -> Image {
    let (h, w, c) = image.dims();
    let gain = gain_field(coeffs, h, w);
    Image::from_fn(h, w, c, |y, x, ch| {
        (image.get(y, x, ch) as f64 * gain[y * w + x]).clamp(0.0, 1.0) as f32
    })
}

/// Multiplies by a smooth drawn gain field; returns the image and coefficients.
pub fn apply_relight(image: &Image, rng: &mut impl Rng, params: &RelightParams) -> (Image, [f64; 5]) {
    let coeffs: [f64; 5] = std::array::from_fn(|_| rng.random_range(-params.max..=params.max));
    (relight_with(image, &coeffs), coeffs)
}

/// Order of the combination stages.
pub const COMBO_STAGES: [&str; 5] = ["relight", "crop", "blur", "jpeg", "noise"];

/// One combination stage: whether it ran, and the seed its parameters came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: &'static str,
    pub applied: bool,
    pub seed: u64,
}

/// Runs one combination stage with its own RNG.
pub fn apply_stage(image: &Image, stage: &str, seed: u64, params: &ComboParams) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match stage {
        "relight" => apply_relight(image, &mut rng, &params.relight).0,
        "crop" => apply_crop(image, &mut rng, &params.crop)?.0,
        "blur" => apply_blur(image, &mut rng, &params.blur).0,
        "jpeg" => apply_jpeg(image, &mut rng, &params.jpeg)?.0,
        "noise" => apply_noise(image, &mut rng, &params.noise).0,
        _ => return invalid(format!("unknown stage `{stage}`")),
    })
}

/// Each stage in [`COMBO_STAGES`] order: flip a coin, draw a sub-seed
/// (always, so later stages do not depend on earlier coins), and apply the
/// stage with that sub-seed if the coin came up.
pub fn apply_combination(image: &Image, rng: &mut impl Rng, params: &ComboParams) -> Result<(Image, Vec<StageTrace>)> {
    let mut out = image.clone();
    let mut trace = Vec::with_capacity(COMBO_STAGES.len());
    for stage in COMBO_STAGES {
        let applied = rng.random_bool(params.probability);
        let seed = rng.next_u64();
        if applied {
            out = apply_stage(&out, stage, seed, params)?;
        }
        debug!("combination stage {stage}: applied={applied} seed={seed}");
        trace.push(StageTrace { stage, applied, seed });
    }
    Ok((out, trace))
}

impl AttackSpec {
    /// Applies the attack with a caller-provided RNG.
    pub fn apply_with(&self, image: &Image, rng: &mut impl Rng) -> Result<Image> {
        Ok(match &self.attack {
            Attack::Noise(p) => apply_noise(image, rng, p).0,
            Attack::Blur(p) => apply_blur(image, rng, p).0,
            Attack::Crop(p) => apply_crop(image, rng, p)?.0,
            Attack::Jpeg(p) => apply_jpeg(image, rng, p)?.0,
            Attack::Relight(p) => apply_relight(image, rng, p).0,
            Attack::Combination(p) => apply_combination(image, rng, p)?.0,
        })
    }

    /// Attacks record `index` of draw stream `stream`.
    pub fn apply(&self, image: &Image, stream: u64, index: usize) -> Result<Image> {
        self.apply_with(image, &mut rng_for(self.seed, &[stream, index as u64]))
    }

    /// Attacked copy of a dataset; labels and class table are kept.
    pub fn apply_dataset(&self, data: &LabeledDataset, stream: u64) -> Result<LabeledDataset> {
        self.attack.validate()?;
        data.map_images(|i, img| self.apply(img, stream, i))
    }
}

/// Continues training on attacked copies of `train`; each epoch draws fresh
/// attack parameters. Zero epochs leave the network untouched.
pub fn immunize(
    net: &mut Classifier,
    train: &LabeledDataset,
    spec: &AttackSpec,
    hyper: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    spec.attack.validate()?;
    train_on(net, train.num_classes(), hyper, |epoch| {
        let attacked = spec.apply_dataset(train, 1 + epoch as u64)?;
        Ok(attacked.records().to_vec())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_parse() {
        let s: AttackSpec = "noise:seed=7".parse().unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.attack, Attack::Noise(NoiseParams::default()));
        let s: AttackSpec = "crop:min=0.05,max=0.20,seed=3".parse().unwrap();
        assert_eq!(s.attack, Attack::Crop(CropParams { min: 0.05, max: 0.2 }));
        let s: AttackSpec = "combo:seed=11".parse().unwrap();
        assert!(matches!(s.attack, Attack::Combination(_)));
        assert_eq!(s.seed, 11);
        let s: AttackSpec = "blur:kernels=3/5".parse().unwrap();
        assert_eq!(s.attack, Attack::Blur(BlurParams { kernels: vec![3, 5] }));
    }

    #[test]
    fn spec_strings_round_trip() {
        for text in ["noise:variance=true,seed=2", "jpeg:min=20,max=30,seed=9", "relight:seed=1", "combo:p=0.3,seed=4"] {
            let s: AttackSpec = text.parse().unwrap();
            assert_eq!(s.to_string().parse::<AttackSpec>().unwrap(), s);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        for text in ["smudge:seed=1", "noise:seed", "crop:min=0.3,max=0.1", "blur:kernels=4", "jpeg:max=101", "noise:kernels=3"] {
            assert!(text.parse::<AttackSpec>().is_err(), "{text}");
        }
    }

    #[test]
    fn sigma_rule() {
        assert!((blur_sigma(3) - 0.8).abs() < 1e-12);
        assert!((blur_sigma(9) - 1.7).abs() < 1e-12);
    }
}
