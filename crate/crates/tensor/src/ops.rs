//! Forward kernels and their adjoints.
//!
//! Spatial ops accept `[H, W, C]` or batched `[N, H, W, C]` tensors and return
//! the same rank they were given.

use crate::error::{shape_err, Result, TensorError};
use crate::tensor::spatial_dims;
use crate::{Scalar, Tensor};

/// Binomial pyramid kernel used by [`gaussian_downsample`].
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror index into `0..len` without repeating the edge sample.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub(crate) fn new<T: Scalar>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, h, w, cin] = input.nhwc()?;
        let [k, k2, kcin, cout] = match *kernel.dims() {
            [a, b, c, d] => [a, b, c, d],
            _ => return shape_err(format!("kernel must be [k,k,Cin,Cout], got {:?}", kernel.dims())),
        };
        if k != k2 || k == 0 {
            return shape_err(format!("kernel must be square, got {k}x{k2}"));
        }
        if k % 2 == 0 && pad != 0 {
            return shape_err(format!("even kernel size {k} requires pad 0"));
        }
        if kcin != cin {
            return shape_err(format!("kernel expects {kcin} input channels, input has {cin}"));
        }
        if stride == 0 {
            return shape_err("stride must be positive");
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return shape_err(format!("kernel {k} larger than padded input {h}x{w} (pad {pad})"));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(Self {
            n,
            h,
            w,
            cin,
            cout,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn cols(&self) -> usize {
        self.k * self.k * self.cin
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T]) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.rows() * cols];
    let ci = g.cin;
    for n in 0..g.n {
        let img = &input[n * g.h * g.w * ci..(n + 1) * g.h * g.w * ci];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((n * g.ho + oy) * g.wo + ox) * cols;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy * g.w + ix as usize) * ci;
                        let dst = row + (ky * g.k + kx) * ci;
                        out[dst..dst + ci].copy_from_slice(&img[src..src + ci]);
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols_grad: &[T]) -> Vec<T> {
    let cols = g.cols();
    let ci = g.cin;
    let mut out = vec![T::zero(); g.n * g.h * g.w * ci];
    for n in 0..g.n {
        let base = n * g.h * g.w * ci;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((n * g.ho + oy) * g.wo + ox) * cols;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = base + (iy * g.w + ix as usize) * ci;
                        let src = row + (ky * g.k + kx) * ci;
                        for (o, &v) in out[dst..dst + ci].iter_mut().zip(&cols_grad[src..src + ci]) {
                            *o = *o + v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution forward pass; also returns the im2col buffer for reuse in backward.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let g = ConvGeometry::new(input, kernel, stride, pad)?;
    let cols = im2col(&g, input.data());
    let mut out = vec![T::zero(); g.rows() * g.cout];
    T::gemm(g.rows(), g.cols(), g.cout, &cols, false, kernel.data(), false, &mut out, false);
    let dims = spatial_dims(input.rank(), g.n, g.ho, g.wo, g.cout);
    Ok((Tensor::new(dims, out)?, cols))
}

/// Zero-padded 2-D cross-correlation.
///
/// `input` is `[H, W, Cin]` (or batched), `kernel` is `[k, k, Cin, Cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    conv2d_forward(input, kernel, stride, pad).map(|(out, _)| out)
}

/// Gradients of a convolution w.r.t. its input (optional) and kernel.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    cols: &[T],
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = ConvGeometry::new(input, kernel, stride, pad)?;
    let mut gk = vec![T::zero(); g.cols() * g.cout];
    T::gemm(g.cols(), g.rows(), g.cout, cols, true, grad_out.data(), false, &mut gk, false);
    let gkernel = Tensor::new(kernel.dims().to_vec(), gk)?;
    let ginput = if want_input {
        let mut gcols = vec![T::zero(); g.rows() * g.cols()];
        T::gemm(g.rows(), g.cout, g.cols(), grad_out.data(), false, kernel.data(), true, &mut gcols, false);
        Some(Tensor::new(input.dims().to_vec(), col2im(&g, &gcols))?)
    } else {
        None
    };
    Ok((ginput, gkernel))
}

fn pool_geometry(dims: [usize; 4], window: usize, stride: usize) -> Result<(usize, usize)> {
    let [_, h, w, _] = dims;
    if window == 0 || stride == 0 {
        return shape_err("pool window and stride must be positive");
    }
    if window > h || window > w {
        return shape_err(format!("pool window {window} exceeds spatial dims {h}x{w}"));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// Average pooling without padding.
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let dims = input.nhwc()?;
    let [n, h, w, c] = dims;
    let (ho, wo) = pool_geometry(dims, window, stride)?;
    let x = input.data();
    let scale = 1.0 / (window * window) as f64;
    let mut out = vec![T::zero(); n * ho * wo * c];
    let mut acc = vec![0.0f64; c];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ky in 0..window {
                    for kx in 0..window {
                        let src = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c;
                        for (a, v) in acc.iter_mut().zip(&x[src..src + c]) {
                            *a += v.as_f64();
                        }
                    }
                }
                let dst = ((b * ho + oy) * wo + ox) * c;
                for (o, a) in out[dst..dst + c].iter_mut().zip(&acc) {
                    *o = T::from_f64(a * scale);
                }
            }
        }
    }
    Tensor::new(spatial_dims(input.rank(), n, ho, wo, c), out)
}

pub(crate) fn avg_pool2d_backward<T: Scalar>(
    input_dims: &[usize],
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let proto = Tensor::<T>::zeros(input_dims);
    let dims = proto.nhwc()?;
    let [n, h, w, c] = dims;
    let (ho, wo) = pool_geometry(dims, window, stride)?;
    let scale = T::from_f64(1.0 / (window * window) as f64);
    let g = grad_out.data();
    let mut out = proto.into_data();
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((b * ho + oy) * wo + ox) * c;
                for ky in 0..window {
                    for kx in 0..window {
                        let dst = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c;
                        for (o, &v) in out[dst..dst + c].iter_mut().zip(&g[src..src + c]) {
                            *o = *o + v * scale;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_dims.to_vec(), out)
}

/// Sparse 1-D linear resampling: each output sample is a weighted sum of inputs.
#[derive(Debug, Clone)]
pub struct Resample1d {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl Resample1d {
    /// Binomial low-pass with reflect padding followed by stride-2 subsampling.
    pub fn binomial_down(in_len: usize) -> Self {
        let taps = (0..in_len / 2)
            .map(|i| {
                BINOMIAL5
                    .iter()
                    .enumerate()
                    .map(|(t, &wt)| (reflect_index(2 * i as isize + t as isize - 2, in_len), wt))
                    .collect()
            })
            .collect();
        Self { in_len, taps }
    }

    /// Bilinear interpolation with half-pixel centers (align-corners false),
    /// reading the source window `[start, start + span)` into `out_len` samples.
    pub fn bilinear(in_len: usize, out_len: usize, start: f64, span: f64) -> Self {
        let scale = span / out_len as f64;
        let last = (in_len - 1) as f64;
        let taps = (0..out_len)
            .map(|o| {
                let src = (start + (o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
                let lo = src.floor();
                let frac = src - lo;
                let lo = lo as usize;
                let hi = (lo + 1).min(in_len - 1);
                if frac == 0.0 || lo == hi {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - frac), (hi, frac)]
                }
            })
            .collect();
        Self { in_len, taps }
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn taps(&self, out: usize) -> &[(usize, f64)] {
        &self.taps[out]
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Rows,
    Cols,
}

/// Applies `r` (or its transpose) along one spatial axis of `[n, h, w, c]` data.
fn resample_axis<T: Scalar>(
    data: &[T],
    dims: [usize; 4],
    axis: Axis,
    r: &Resample1d,
    transpose: bool,
) -> (Vec<T>, [usize; 4]) {
    let [n, h, w, c] = dims;
    let (src_len, dst_len) = if transpose {
        (r.out_len(), r.in_len)
    } else {
        (r.in_len, r.out_len())
    };
    let out_dims = match axis {
        Axis::Rows => [n, dst_len, w, c],
        Axis::Cols => [n, h, dst_len, c],
    };
    debug_assert_eq!(
        match axis {
            Axis::Rows => h,
            Axis::Cols => w,
        },
        src_len
    );
    let [_, oh, ow, _] = out_dims;
    let mut acc = vec![0.0f64; oh * ow * c];
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        let img = &data[b * h * w * c..(b + 1) * h * w * c];
        acc.iter_mut().for_each(|a| *a = 0.0);
        for o in 0..r.out_len() {
            for &(i, wt) in r.taps(o) {
                // forward: dst[o] += wt * src[i]; transpose: dst[i] += wt * src[o]
                let (s, d) = if transpose { (o, i) } else { (i, o) };
                match axis {
                    Axis::Rows => {
                        let src = &img[s * w * c..(s + 1) * w * c];
                        let dst = &mut acc[d * ow * c..(d + 1) * ow * c];
                        for (a, v) in dst.iter_mut().zip(src) {
                            *a += wt * v.as_f64();
                        }
                    }
                    Axis::Cols => {
                        for y in 0..h {
                            let src = &img[(y * w + s) * c..(y * w + s + 1) * c];
                            let dst = &mut acc[(y * ow + d) * c..(y * ow + d + 1) * c];
                            for (a, v) in dst.iter_mut().zip(src) {
                                *a += wt * v.as_f64();
                            }
                        }
                    }
                }
            }
        }
        for (o, a) in out[b * oh * ow * c..(b + 1) * oh * ow * c].iter_mut().zip(&acc) {
            *o = T::from_f64(*a);
        }
    }
    (out, out_dims)
}

/// Separable resampling: `rows` along H, `cols` along W.
pub fn resample_separable<T: Scalar>(
    input: &Tensor<T>,
    rows: &Resample1d,
    cols: &Resample1d,
) -> Result<Tensor<T>> {
    let dims = input.nhwc()?;
    if dims[1] != rows.in_len() || dims[2] != cols.in_len() {
        return shape_err(format!(
            "resampler expects {}x{}, input is {}x{}",
            rows.in_len(),
            cols.in_len(),
            dims[1],
            dims[2]
        ));
    }
    let (tmp, d1) = resample_axis(input.data(), dims, Axis::Cols, cols, false);
    let (out, [n, h, w, c]) = resample_axis(&tmp, d1, Axis::Rows, rows, false);
    Tensor::new(spatial_dims(input.rank(), n, h, w, c), out)
}

/// Adjoint of [`resample_separable`].
pub(crate) fn resample_separable_transpose<T: Scalar>(
    grad_out: &Tensor<T>,
    input_dims: &[usize],
    rows: &Resample1d,
    cols: &Resample1d,
) -> Result<Tensor<T>> {
    let dims = grad_out.nhwc()?;
    let (tmp, d1) = resample_axis(grad_out.data(), dims, Axis::Rows, rows, true);
    let (out, _) = resample_axis(&tmp, d1, Axis::Cols, cols, true);
    Tensor::new(input_dims.to_vec(), out)
}

pub(crate) fn downsample_resamplers(h: usize, w: usize) -> Result<(Resample1d, Resample1d)> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h == 0 || w == 0 {
        return shape_err(format!("gaussian downsample needs even dims, got {h}x{w}"));
    }
    Ok((Resample1d::binomial_down(h), Resample1d::binomial_down(w)))
}

pub(crate) fn upsample_resamplers(h: usize, w: usize) -> Result<(Resample1d, Resample1d)> {
    if h == 0 || w == 0 {
        return shape_err("cannot upsample an empty image");
    }
    Ok((
        Resample1d::bilinear(h, 2 * h, 0.0, h as f64),
        Resample1d::bilinear(w, 2 * w, 0.0, w as f64),
    ))
}

/// Fixed binomial `[1,4,6,4,1]/16` blur per axis with reflect padding, then
/// stride-2 subsampling. Not trainable.
pub fn gaussian_downsample<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, h, w, _] = input.nhwc()?;
    let (r, c) = downsample_resamplers(h, w)?;
    resample_separable(input, &r, &c)
}

/// Factor-2 bilinear upsampling with half-pixel centers.
pub fn upsample_bilinear<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, h, w, _] = input.nhwc()?;
    let (r, c) = upsample_resamplers(h, w)?;
    resample_separable(input, &r, &c)
}

/// Bilinear resize to arbitrary dims with half-pixel centers.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [_, h, w, _] = input.nhwc()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return shape_err("resize to or from empty dims");
    }
    let r = Resample1d::bilinear(h, out_h, 0.0, h as f64);
    let c = Resample1d::bilinear(w, out_w, 0.0, w as f64);
    resample_separable(input, &r, &c)
}

/// Mean softmax cross-entropy over a batch of logits `[K]` or `[N, K]`.
///
/// Returns the loss and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = match *logits.dims() {
        [k] => (1, k),
        [n, k] => (n, k),
        _ => return shape_err(format!("logits must be [K] or [N,K], got {:?}", logits.dims())),
    };
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} rows of logits", labels.len()));
    }
    if k == 0 {
        return shape_err("logits have zero classes");
    }
    let mut grad = vec![T::zero(); n * k];
    let mut total = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(TensorError::ClassOutOfRange { class: label, classes: k });
        }
        let z = &logits.data()[row * k..(row + 1) * k];
        let max = z.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        total += denom.ln() + max - z[label].as_f64();
        for (j, e) in exps.iter().enumerate() {
            let p = e / denom;
            let target = if j == label { 1.0 } else { 0.0 };
            grad[row * k + j] = T::from_f64((p - target) / n as f64);
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, Tensor::new(logits.dims().to_vec(), grad)?))
}
