//! Baseline JPEG: YCbCr conversion, optional 4:2:0 chroma subsampling,
//! 8x8 DCT and quantization with the IJG-scaled standard tables.
//!
//! [`jpeg_round_trip`] runs encode and decode without entropy coding (the
//! distortion is entirely decided by quantization); [`encode_jpeg`] writes
//! the same coefficients as a baseline Huffman-coded JFIF file.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ganprint_tensor::ops::{resample_separable, Resample1d};
use ganprint_tensor::Tensor;

use crate::error::{invalid, Result};
use crate::image::Image;

const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

/// Natural (row-major) index of each zigzag position.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

/// Standard table scaled by the IJG quality rule, entries clamped to `[1, 255]`.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    base.map(|v| ((v as u32 * scale + 50) / 100).clamp(1, 255) as u16)
}

pub fn luma_table(quality: u8) -> [u16; 64] {
    scaled_table(&LUMA_QUANT, quality)
}

pub fn chroma_table(quality: u8) -> [u16; 64] {
    scaled_table(&CHROMA_QUANT, quality)
}

/// `cos_table()[u * 8 + x] = a(u) cos((2x + 1) u pi / 16)`, orthonormal.
fn cos_table() -> &'static [f64; 64] {
    static TABLE: OnceLock<[f64; 64]> = OnceLock::new();
    TABLE.get_or_init(|| {
        std::array::from_fn(|i| {
            let (u, x) = (i / 8, i % 8);
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            a * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos()
        })
    })
}

/// Orthonormal 2-D DCT-II of a row-major 8x8 block.
pub fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let c = cos_table();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| c[u * 8 + x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| c[v * 8 + y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Inverse of [`fdct`].
pub fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let c = cos_table();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| c[u * 8 + x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| c[v * 8 + y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Edge-replicates to `width x height`.
    fn padded(&self, width: usize, height: usize) -> Plane {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(self.get(y.min(self.height - 1), x.min(self.width - 1)));
            }
        }
        Plane { width, height, data }
    }

    /// 2x2 box average; dims must be even.
    fn halved(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * y, 2 * x)
                    + self.get(2 * y, 2 * x + 1)
                    + self.get(2 * y + 1, 2 * x)
                    + self.get(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Plane { width: w, height: h, data }
    }

    /// Bilinear (triangle-filter) doubling with half-pixel centers.
    fn doubled(&self) -> Plane {
        let t = Tensor::new(vec![self.height, self.width, 1], self.data.clone()).expect("plane dims");
        let rows = Resample1d::bilinear(self.height, 2 * self.height, 0.0, self.height as f64);
        let cols = Resample1d::bilinear(self.width, 2 * self.width, 0.0, self.width as f64);
        let up = resample_separable(&t, &rows, &cols).expect("plane dims");
        Plane {
            width: 2 * self.width,
            height: 2 * self.height,
            data: up.into_data(),
        }
    }

    /// Quantized DCT coefficients of every 8x8 block, blocks row-major.
    fn quantize(&self, table: &[u16; 64]) -> Vec<[i32; 64]> {
        let mut blocks = Vec::with_capacity(self.width * self.height / 64);
        for by in (0..self.height).step_by(8) {
            for bx in (0..self.width).step_by(8) {
                let block: [f64; 64] = std::array::from_fn(|i| self.get(by + i / 8, bx + i % 8) - 128.0);
                let coef = fdct(&block);
                blocks.push(std::array::from_fn(|i| (coef[i] / table[i] as f64).round() as i32));
            }
        }
        blocks
    }

    fn dequantize(width: usize, height: usize, blocks: &[[i32; 64]], table: &[u16; 64]) -> Plane {
        let mut data = vec![0.0; width * height];
        let per_row = width / 8;
        for (b, q) in blocks.iter().enumerate() {
            let (by, bx) = (b / per_row * 8, b % per_row * 8);
            let coef: [f64; 64] = std::array::from_fn(|i| (q[i] * table[i] as i32) as f64);
            let px = idct(&coef);
            for i in 0..64 {
                data[(by + i / 8) * width + bx + i % 8] = px[i] + 128.0;
            }
        }
        Plane { width, height, data }
    }
}

/// Quantized coefficients of one image.
struct Coded {
    width: usize,
    height: usize,
    subsample: bool,
    /// Luma, then chroma (empty for grayscale); each plane's blocks row-major.
    planes: Vec<(usize, usize, Vec<[i32; 64]>)>,
    luma: [u16; 64],
    chroma: [u16; 64],
}

fn to_u8(v: f32) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f64
}

fn code(image: &Image, quality: u8, subsample: bool) -> Result<Coded> {
    let (h, w, c) = image.dims();
    if c != 1 && c != 3 {
        return invalid(format!("JPEG needs 1 or 3 channels, got {c}"));
    }
    if h == 0 || w == 0 {
        return invalid("cannot encode an empty image");
    }
    if !(1..=100).contains(&quality) {
        return invalid(format!("JPEG quality {quality} outside [1, 100]"));
    }
    let subsample = subsample && c == 3;
    let mcu = if subsample { 16 } else { 8 };
    let (pw, ph) = (w.div_ceil(mcu) * mcu, h.div_ceil(mcu) * mcu);
    let luma = luma_table(quality);
    let chroma = chroma_table(quality);

    let mut planes = Vec::new();
    let px = image.data();
    if c == 1 {
        let y = Plane {
            width: w,
            height: h,
            data: px.iter().map(|&v| to_u8(v)).collect(),
        };
        planes.push((pw, ph, y.padded(pw, ph).quantize(&luma)));
    } else {
        let mut ys = Vec::with_capacity(w * h);
        let mut cbs = Vec::with_capacity(w * h);
        let mut crs = Vec::with_capacity(w * h);
        for p in px.chunks(3) {
            let (r, g, b) = (to_u8(p[0]), to_u8(p[1]), to_u8(p[2]));
            ys.push(0.299 * r + 0.587 * g + 0.114 * b);
            cbs.push(-0.168736 * r - 0.331264 * g + 0.5 * b + 128.0);
            crs.push(0.5 * r - 0.418688 * g - 0.081312 * b + 128.0);
        }
        let plane = |data| Plane {
            width: w,
            height: h,
            data,
        };
        planes.push((pw, ph, plane(ys).padded(pw, ph).quantize(&luma)));
        for data in [cbs, crs] {
            let mut p = plane(data).padded(pw, ph);
            if subsample {
                p = p.halved();
            }
            planes.push((p.width, p.height, p.quantize(&chroma)));
        }
    }
    Ok(Coded {
        width: w,
        height: h,
        subsample,
        planes,
        luma,
        chroma,
    })
}

fn decode(coded: &Coded) -> Image {
    let (w, h) = (coded.width, coded.height);
    let mut planes: Vec<Plane> = coded
        .planes
        .iter()
        .enumerate()
        .map(|(i, (pw, ph, blocks))| {
            let table = if i == 0 { &coded.luma } else { &coded.chroma };
            let p = Plane::dequantize(*pw, *ph, blocks, table);
            if i > 0 && coded.subsample {
                p.doubled()
            } else {
                p
            }
        })
        .collect();
    let byte = |v: f64| (v.round().clamp(0.0, 255.0) / 255.0) as f32;
    if planes.len() == 1 {
        let y = planes.remove(0);
        return Image::from_fn(h, w, 1, |r, c, _| byte(y.get(r, c)));
    }
    Image::from_fn(h, w, 3, |r, c, ch| {
        let y = planes[0].get(r, c);
        let cb = planes[1].get(r, c) - 128.0;
        let cr = planes[2].get(r, c) - 128.0;
        byte(match ch {
            0 => y + 1.402 * cr,
            1 => y - 0.344136 * cb - 0.714136 * cr,
            _ => y + 1.772 * cb,
        })
    })
}

/// Encode-decode round trip at `quality` in memory; output is 8-bit valued.
pub fn jpeg_round_trip(image: &Image, quality: u8, subsample: bool) -> Result<Image> {
    Ok(decode(&code(image, quality, subsample)?))
}

struct HuffTable {
    /// `(code, length)` per symbol.
    codes: [(u16, u8); 256],
}

impl HuffTable {
    fn new(bits: &[u8; 16], values: &[u8]) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut code = 0u16;
        let mut k = 0;
        for (len, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                codes[values[k] as usize] = (code, len as u8 + 1);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Self { codes }
    }
}

const DC_LUMA_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const DC_CHROMA_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
const DC_VALUES: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
const AC_LUMA_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
const AC_LUMA_VALUES: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14,
    0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09,
    0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a,
    0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65,
    0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88,
    0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9,
    0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca,
    0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea,
    0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa,
];
const AC_CHROMA_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
const AC_CHROMA_VALUES: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32,
    0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16,
    0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39,
    0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64,
    0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86,
    0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8,
    0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9,
    0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa,
];

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    n: u32,
}

impl BitWriter {
    fn put(&mut self, bits: u16, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((bits >> i) & 1) as u32;
            self.n += 1;
            if self.n == 8 {
                let byte = self.acc as u8;
                self.out.push(byte);
                if byte == 0xff {
                    self.out.push(0);
                }
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    /// Pads the last byte with ones.
    fn finish(mut self) -> Vec<u8> {
        while self.n != 0 {
            self.put(1, 1);
        }
        self.out
    }
}

/// Magnitude category and the value bits of a DC difference or AC coefficient.
fn category(v: i32) -> (u8, u16) {
    let size = (32 - v.unsigned_abs().leading_zeros()) as u8;
    let bits = if v < 0 { v - 1 } else { v } as u16 & ((1u32 << size) - 1) as u16;
    (size, bits)
}

fn encode_block(w: &mut BitWriter, block: &[i32; 64], pred: &mut i32, dc: &HuffTable, ac: &HuffTable) {
    let (size, bits) = category(block[0] - *pred);
    *pred = block[0];
    let (c, l) = dc.codes[size as usize];
    w.put(c, l);
    w.put(bits, size);
    let mut run = 0;
    for &idx in &ZIGZAG[1..] {
        let v = block[idx];
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            let (c, l) = ac.codes[0xf0];
            w.put(c, l);
            run -= 16;
        }
        let (size, bits) = category(v);
        let (c, l) = ac.codes[(run << 4) | size as usize];
        w.put(c, l);
        w.put(bits, size);
        run = 0;
    }
    if run > 0 {
        let (c, l) = ac.codes[0x00];
        w.put(c, l);
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend([0xff, marker]);
    out.extend(((body.len() + 2) as u16).to_be_bytes());
    out.extend(body);
}

/// Baseline Huffman-coded JFIF bytes whose decode equals [`jpeg_round_trip`]
/// up to the decoder's IDCT and upsampling precision.
pub fn encode_jpeg(image: &Image, quality: u8, subsample: bool) -> Result<Vec<u8>> {
    let coded = code(image, quality, subsample)?;
    if coded.width > u16::MAX as usize || coded.height > u16::MAX as usize {
        return invalid("image too large for JPEG");
    }
    let color = coded.planes.len() == 3;
    let mut out = vec![0xff, 0xd8];
    segment(&mut out, 0xe0, b"JFIF\0\x01\x01\0\0\x01\0\x01\0\0");
    let tables: &[(u8, &[u16; 64])] = if color {
        &[(0, &coded.luma), (1, &coded.chroma)]
    } else {
        &[(0, &coded.luma)]
    };
    for (id, table) in tables {
        let mut body = vec![*id];
        body.extend(ZIGZAG.iter().map(|&i| table[i] as u8));
        segment(&mut out, 0xdb, &body);
    }

    let luma_sampling = if coded.subsample { 0x22 } else { 0x11 };
    let mut sof = vec![8];
    sof.extend((coded.height as u16).to_be_bytes());
    sof.extend((coded.width as u16).to_be_bytes());
    if color {
        sof.extend([3, 1, luma_sampling, 0, 2, 0x11, 1, 3, 0x11, 1]);
    } else {
        sof.extend([1, 1, 0x11, 0]);
    }
    segment(&mut out, 0xc0, &sof);

    let mut huff: Vec<(u8, &[u8; 16], &[u8])> = vec![(0x00, &DC_LUMA_BITS, &DC_VALUES), (0x10, &AC_LUMA_BITS, &AC_LUMA_VALUES)];
    if color {
        huff.push((0x01, &DC_CHROMA_BITS, &DC_VALUES));
        huff.push((0x11, &AC_CHROMA_BITS, &AC_CHROMA_VALUES));
    }
    for (class_id, bits, values) in &huff {
        let mut body = vec![*class_id];
        body.extend(bits.iter());
        body.extend(values.iter());
        segment(&mut out, 0xc4, &body);
    }
    if color {
        segment(&mut out, 0xda, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);
    } else {
        segment(&mut out, 0xda, &[1, 1, 0x00, 0, 63, 0]);
    }

    let dc = [
        HuffTable::new(&DC_LUMA_BITS, &DC_VALUES),
        HuffTable::new(&DC_CHROMA_BITS, &DC_VALUES),
    ];
    let ac = [
        HuffTable::new(&AC_LUMA_BITS, &AC_LUMA_VALUES),
        HuffTable::new(&AC_CHROMA_BITS, &AC_CHROMA_VALUES),
    ];
    let mut w = BitWriter {
        out: Vec::new(),
        acc: 0,
        n: 0,
    };
    let mut preds = [0i32; 3];
    let (lw, lh, luma) = &coded.planes[0];
    let luma_per_row = lw / 8;
    let f = if coded.subsample { 2 } else { 1 };
    let (mcu_cols, mcu_rows) = (lw / (8 * f), lh / (8 * f));
    for my in 0..mcu_rows {
        for mx in 0..mcu_cols {
            for dy in 0..f {
                for dx in 0..f {
                    let b = (my * f + dy) * luma_per_row + mx * f + dx;
                    encode_block(&mut w, &luma[b], &mut preds[0], &dc[0], &ac[0]);
                }
            }
            for (p, pred) in coded.planes[1..].iter().zip(preds[1..].iter_mut()) {
                let b = my * (p.0 / 8) + mx;
                encode_block(&mut w, &p.2[b], pred, &dc[1], &ac[1]);
            }
        }
    }
    out.extend(w.finish());
    out.extend([0xff, 0xd9]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_round_trips() {
        let block: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 19) as f64 - 9.0);
        let back = idct(&fdct(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_block_is_dc_only() {
        let coef = fdct(&[3.0; 64]);
        assert!((coef[0] - 24.0).abs() < 1e-12);
        assert!(coef[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn quality_scaling_matches_ijg() {
        assert_eq!(luma_table(50), LUMA_QUANT);
        assert!(luma_table(100).iter().all(|&v| v == 1));
        // q=10: scale 500, 16 -> 80
        assert_eq!(luma_table(10)[0], 80);
        assert_eq!(chroma_table(75)[0], 9);
    }

    #[test]
    fn huffman_tables_are_complete() {
        for (bits, n) in [
            (&DC_LUMA_BITS, 12),
            (&DC_CHROMA_BITS, 12),
            (&AC_LUMA_BITS, 162),
            (&AC_CHROMA_BITS, 162),
        ] {
            assert_eq!(bits.iter().map(|&b| b as usize).sum::<usize>(), n);
        }
    }

    #[test]
    fn categories() {
        assert_eq!(category(0), (0, 0));
        assert_eq!(category(1), (1, 1));
        assert_eq!(category(-1), (1, 0));
        assert_eq!(category(5), (3, 5));
        assert_eq!(category(-5), (3, 2));
    }
}
