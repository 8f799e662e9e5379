use ganprint_tensor::Tensor;

use crate::error::{invalid, Result};

/// `H x W x C` raster, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return invalid(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Rounds to the nearest 8-bit level.
    pub fn quantize8(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Channel-mean grayscale.
    pub fn grayscale(&self) -> Image {
        let c = self.channels;
        let data = self
            .data
            .chunks(c)
            .map(|px| (px.iter().map(|&v| v as f64).sum::<f64>() / c as f64) as f32)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("image dims are consistent")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match *t.dims() {
            [h, w, c] => Self::new(h, w, c, t.data().to_vec()),
            _ => invalid(format!("expected [H,W,C] tensor, got {:?}", t.dims())),
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len().max(1) as f64
    }

    /// Binary PGM (1 channel) or PPM (3 channels), maxval 255.
    pub fn to_pnm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return invalid(format!("PNM needs 1 or 3 channels, got {c}")),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max)
    }
}

/// Stacks same-sized images into an `[N, H, W, C]` tensor, applying `f` per value.
pub fn stack_with<'a>(images: impl IntoIterator<Item = &'a Image>, f: impl Fn(f32) -> f32) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        match dims {
            None => dims = Some(img.dims()),
            Some(d) if d != img.dims() => {
                return invalid(format!("cannot stack {:?} with {:?}", d, img.dims()));
            }
            _ => {}
        }
        data.extend(img.data.iter().map(|&v| f(v)));
        n += 1;
    }
    let Some((h, w, c)) = dims else {
        return invalid("cannot stack zero images");
    };
    Ok(Tensor::new(vec![n, h, w, c], data)?)
}
