//! Synthetic image sources standing in for generator instances.
//!
//! Base images are procedural (smooth color fields plus a few hard-edged
//! shapes). A source perturbs every image it "generates" with the same fixed
//! high-pass pattern drawn from its seed, optionally after a light sharpening.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Record};
use crate::error::{invalid, Result};
use crate::filters::{filter_separable, BINOMIAL5};
use crate::image::Image;
use crate::seed::rng_for;

pub const CHANNELS: usize = 3;
pub const ALLOWED_SIZES: [usize; 4] = [16, 32, 64, 128];
pub const DEFAULT_AMPLITUDE: f64 = 0.02;
pub const REAL_CLASS: &str = "real";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub seed: u64,
    pub pattern_amplitude: f64,
    pub filter_strength: f64,
    pub label: String,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.1).contains(&self.pattern_amplitude) {
            return invalid(format!("pattern amplitude {} outside [0, 0.1]", self.pattern_amplitude));
        }
        if !(0.0..=1.0).contains(&self.filter_strength) {
            return invalid(format!("filter strength {} outside [0, 1]", self.filter_strength));
        }
        Ok(())
    }
}

/// `n_sources` specs that differ only in seed, named `source1..`.
pub fn seed_sources(n_sources: usize, seed: u64, amplitude: f64) -> Vec<SourceSpec> {
    (0..n_sources)
        .map(|i| SourceSpec {
            seed: crate::seed::derive_seed(seed, &[0x5ec, i as u64]),
            pattern_amplitude: amplitude,
            filter_strength: 0.0,
            label: format!("source{}", i + 1),
        })
        .collect()
}

fn gen_base_image(rng: &mut impl Rng, size: usize) -> Image {
    // smooth color field: coarse Gaussian grid, bilinearly interpolated
    let grid = (size / 8).max(2) + 1;
    let base: [f32; CHANNELS] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let lum = Normal::new(0.0f32, 0.12).unwrap();
    let chroma = Normal::new(0.0f32, 0.04).unwrap();
    let mut coarse = vec![[0.0f32; CHANNELS]; grid * grid];
    for cell in coarse.iter_mut() {
        let l = lum.sample(rng);
        for v in cell.iter_mut() {
            *v = l + chroma.sample(rng);
        }
    }
    let scale = (grid - 1) as f32 / size as f32;
    let mut img = Image::from_fn(size, size, CHANNELS, |y, x, c| {
        let gy = (y as f32 + 0.5) * scale;
        let gx = (x as f32 + 0.5) * scale;
        let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
        let (fy, fx) = (gy - y0 as f32, gx - x0 as f32);
        let at = |yy: usize, xx: usize| coarse[yy * grid + xx][c];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        base[c] + top * (1.0 - fy) + bottom * fy
    });

    let shapes = rng.random_range(1..=3);
    for _ in 0..shapes {
        let color: [f32; CHANNELS] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let alpha: f32 = rng.random_range(0.4..0.9);
        let cy = rng.random_range(0.0..size as f32);
        let cx = rng.random_range(0.0..size as f32);
        let ry = rng.random_range(0.08..0.25) * size as f32;
        let rx = rng.random_range(0.08..0.25) * size as f32;
        let disk = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let dy = (y as f32 + 0.5 - cy) / ry;
                let dx = (x as f32 + 0.5 - cx) / rx;
                let inside = if disk {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    for (c, &col) in color.iter().enumerate() {
                        let v = img.get(y, x, c);
                        img.set(y, x, c, v * (1.0 - alpha) + col * alpha);
                    }
                }
            }
        }
    }

    // mild per-image sensor noise
    let sigma: f32 = rng.random_range(0.0..0.006);
    for v in img.data_mut() {
        let n: f32 = StandardNormal.sample(rng);
        *v += sigma * n;
    }
    img.quantize8()
}

fn check_size(size: usize) -> Result<()> {
    if !ALLOWED_SIZES.contains(&size) {
        return invalid(format!("image size {size} not in {ALLOWED_SIZES:?}"));
    }
    Ok(())
}

/// Procedural base images; deterministic per `(seed, index)`.
pub fn gen_base_images(seed: u64, n: usize, size: usize) -> Result<Vec<Image>> {
    check_size(size)?;
    if n == 0 {
        return invalid("need at least one image");
    }
    Ok((0..n as u64)
        .map(|i| gen_base_image(&mut rng_for(seed, &[i]), size))
        .collect())
}

/// A fixed per-source image transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTransform {
    pattern: Image,
    amplitude: f32,
    filter_strength: f32,
}

impl SourceTransform {
    /// Zero-mean, unit-variance high-pass pattern of this source.
    pub fn pattern(&self) -> &Image {
        &self.pattern
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        if img.dims() != self.pattern.dims() {
            return invalid(format!(
                "source pattern is {:?}, image is {:?}",
                self.pattern.dims(),
                img.dims()
            ));
        }
        let mixed = if self.filter_strength > 0.0 {
            let blurred = filter_separable(img, &[0.25, 0.5, 0.25]);
            let s = self.filter_strength;
            // sharpened = img + 0.5 (img - blur)
            img.zip_map(&blurred, |v, b| v + s * 0.5 * (v - b))
        } else {
            img.clone()
        };
        let a = self.amplitude;
        Ok(mixed.zip_map(&self.pattern, |v, p| v + a * p).clamp01())
    }
}

/// High-pass pseudo-random pattern: white noise minus its binomial blur, standardized.
pub fn fingerprint_pattern(seed: u64, height: usize, width: usize, channels: usize) -> Image {
    let mut rng = rng_for(seed, &[0xfa7]);
    let noise = Image::from_fn(height, width, channels, |_, _, _| StandardNormal.sample(&mut rng));
    let blurred = filter_separable(&noise, &BINOMIAL5);
    let hp = noise.zip_map(&blurred, |a, b| a - b);
    let mean = hp.mean();
    let var = hp.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / hp.len() as f64;
    let sd = var.sqrt().max(1e-12);
    hp.map(|v| ((v as f64 - mean) / sd) as f32)
}

pub fn make_source(spec: &SourceSpec, height: usize, width: usize, channels: usize) -> Result<SourceTransform> {
    spec.validate()?;
    Ok(SourceTransform {
        pattern: fingerprint_pattern(spec.seed, height, width, channels),
        amplitude: spec.pattern_amplitude as f32,
        filter_strength: spec.filter_strength as f32,
    })
}

/// Which base pool a record's underlying image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pool {
    Train,
    Test,
}

impl Pool {
    fn tag(self) -> u64 {
        match self {
            Pool::Train => 0x7a1,
            Pool::Test => 0x7e5,
        }
    }
}

/// Identity of a base image: `(pool, class, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaseId {
    pub pool: Pool,
    pub class: usize,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Sampled {
    pub dataset: LabeledDataset,
    pub base_ids: Vec<BaseId>,
}

/// Balanced dataset: optional `real` class of untransformed images, then one
/// class per source, each over fresh base images from `pool`.
pub fn sample_dataset(
    sources: &[SourceSpec],
    base_seed: u64,
    per_class: usize,
    size: usize,
    include_real: bool,
    pool: Pool,
) -> Result<Sampled> {
    check_size(size)?;
    if per_class < 1 {
        return invalid("per_class must be at least 1");
    }
    let classes = sources.len() + usize::from(include_real);
    if classes < 2 {
        return invalid(format!("need at least 2 classes, got {classes}"));
    }
    if classes > u8::MAX as usize {
        return invalid("too many classes");
    }
    let mut names: Vec<String> = Vec::with_capacity(classes);
    if include_real {
        names.push(REAL_CLASS.to_string());
    }
    for s in sources {
        if names.contains(&s.label) {
            return invalid(format!("duplicate class label `{}`", s.label));
        }
        names.push(s.label.clone());
    }
    let mut transforms: Vec<Option<SourceTransform>> = Vec::with_capacity(classes);
    if include_real {
        transforms.push(None);
    }
    for s in sources {
        transforms.push(Some(make_source(s, size, size, CHANNELS)?));
    }

    let mut records = Vec::with_capacity(classes * per_class);
    let mut base_ids = Vec::with_capacity(classes * per_class);
    for (class, t) in transforms.iter().enumerate() {
        for index in 0..per_class {
            let base = gen_base_image(
                &mut rng_for(base_seed, &[pool.tag(), class as u64, index as u64]),
                size,
            );
            let image = match t {
                Some(t) => t.apply(&base)?.quantize8(),
                None => base,
            };
            records.push(Record { image, label: class });
            base_ids.push(BaseId { pool, class, index });
        }
    }
    Ok(Sampled {
        dataset: LabeledDataset::new(names, records)?,
        base_ids,
    })
}

/// Train and test sets over disjoint base pools.
pub fn sample_split(
    sources: &[SourceSpec],
    base_seed: u64,
    train_per_class: usize,
    test_per_class: usize,
    size: usize,
    include_real: bool,
) -> Result<(Sampled, Sampled)> {
    Ok((
        sample_dataset(sources, base_seed, train_per_class, size, include_real, Pool::Train)?,
        sample_dataset(sources, base_seed, test_per_class, size, include_real, Pool::Test)?,
    ))
}

/// Sample Pearson correlation of two equally sized images.
pub fn pattern_correlation(a: &Image, b: &Image) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_images_are_deterministic() {
        let a = gen_base_images(5, 4, 32).unwrap();
        let b = gen_base_images(5, 4, 32).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|img| img.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn rejects_bad_sizes_and_counts() {
        assert!(gen_base_images(1, 1, 24).is_err());
        assert!(gen_base_images(1, 0, 32).is_err());
        let s = seed_sources(1, 1, 0.02);
        assert!(sample_dataset(&s, 1, 0, 16, true, Pool::Train).is_err());
        assert!(sample_dataset(&s, 1, 3, 16, false, Pool::Train).is_err());
    }

    #[test]
    fn zero_amplitude_zero_filter_is_identity() {
        let spec = SourceSpec {
            seed: 9,
            pattern_amplitude: 0.0,
            filter_strength: 0.0,
            label: "x".into(),
        };
        let t = make_source(&spec, 16, 16, 3).unwrap();
        for img in gen_base_images(2, 3, 16).unwrap() {
            assert_eq!(t.apply(&img).unwrap(), img);
        }
    }

    #[test]
    fn transform_is_deterministic() {
        let spec = SourceSpec {
            seed: 4,
            pattern_amplitude: 0.05,
            filter_strength: 0.7,
            label: "x".into(),
        };
        let img = &gen_base_images(3, 1, 32).unwrap()[0];
        let a = make_source(&spec, 32, 32, 3).unwrap().apply(img).unwrap();
        let b = make_source(&spec, 32, 32, 3).unwrap().apply(img).unwrap();
        assert_eq!(a, b);
        assert_ne!(&a, img);
    }

    #[test]
    fn pattern_is_standardized() {
        let p = fingerprint_pattern(3, 32, 32, 3);
        assert!(p.mean().abs() < 1e-6);
        let var = p.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / p.len() as f64;
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn spec_validation() {
        let mut s = seed_sources(1, 0, 0.02).remove(0);
        s.pattern_amplitude = 0.2;
        assert!(s.validate().is_err());
        s.pattern_amplitude = 0.02;
        s.filter_strength = 1.5;
        assert!(s.validate().is_err());
    }
}
