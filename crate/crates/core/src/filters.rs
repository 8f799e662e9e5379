//! Fixed image filters with reflect padding.

use ganprint_tensor::ops::reflect_index;

use crate::image::Image;

/// Sampled, normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size % 2 == 1, "kernel size must be odd");
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

pub const BINOMIAL5: [f64; 5] = ganprint_tensor::ops::BINOMIAL5;

/// Applies an odd-length kernel along both axes with reflect padding.
pub fn filter_separable(img: &Image, kernel: &[f64]) -> Image {
    assert!(kernel.len() % 2 == 1, "kernel length must be odd");
    if kernel.len() == 1 {
        return img.map(|v| (v as f64 * kernel[0]) as f32);
    }
    let (h, w, c) = img.dims();
    let half = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for (t, &k) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + t as isize - half, w);
                for ch in 0..c {
                    tmp[(y * w + x) * c + ch] += k * img.get(y, sx, ch) as f64;
                }
            }
        }
    }
    let mut out = vec![0.0f64; h * w * c];
    for y in 0..h {
        for (t, &k) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - half, h);
            for i in 0..w * c {
                out[y * w * c + i] += k * tmp[sy * w * c + i];
            }
        }
    }
    Image::new(h, w, c, out.into_iter().map(|v| v as f32).collect()).expect("dims preserved")
}

pub fn gaussian_blur(img: &Image, size: usize, sigma: f64) -> Image {
    filter_separable(img, &gaussian_kernel(size, sigma))
}
