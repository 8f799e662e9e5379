//! Labeled image collections and the GFPD dataset file format.
//!
//! GFPD layout (little-endian): magic `b"GFPD"`, `u8` version (= 1), `u16` H,
//! `u16` W, `u8` C, `u32` record count, `u8` class count, class names (`u16`
//! length + UTF-8 each), then per record a `u8` label followed by `H*W*C`
//! `u8` pixels (`round(255 * v)`).

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"GFPD";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    classes: Vec<String>,
    records: Vec<Record>,
}

impl LabeledDataset {
    pub fn new(classes: Vec<String>, records: Vec<Record>) -> Result<Self> {
        if classes.is_empty() {
            return invalid("dataset needs at least one class");
        }
        if let Some(first) = records.first() {
            let dims = first.image.dims();
            for (i, r) in records.iter().enumerate() {
                if r.label >= classes.len() {
                    return invalid(format!("record {i} has label {} but only {} classes", r.label, classes.len()));
                }
                if r.image.dims() != dims {
                    return invalid(format!("record {i} is {:?}, expected {dims:?}", r.image.dims()));
                }
            }
        }
        Ok(Self { classes, records })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(H, W, C)` of every record, if any.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.records.first().map(|r| r.image.dims())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.records.iter().map(|r| &r.image)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Same class table, records transformed one by one.
    pub fn map_images(&self, mut f: impl FnMut(usize, &Image) -> Result<Image>) -> Result<Self> {
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(Record {
                    image: f(i, &r.image)?,
                    label: r.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.classes.clone(), records)
    }

    /// First `n` records of every class, in order.
    pub fn take_per_class(&self, n: usize) -> Self {
        let mut seen = vec![0; self.classes.len()];
        let records = self
            .records
            .iter()
            .filter(|r| {
                seen[r.label] += 1;
                seen[r.label] <= n
            })
            .cloned()
            .collect();
        Self {
            classes: self.classes.clone(),
            records,
        }
    }

    pub fn write_gfpd<W: Write>(&self, mut w: W) -> Result<()> {
        let (h, wd, c) = self.image_dims().unwrap_or((0, 0, 0));
        let h16 = u16::try_from(h).map_err(|_| Error::Format(format!("height {h} too large")))?;
        let w16 = u16::try_from(wd).map_err(|_| Error::Format(format!("width {wd} too large")))?;
        let c8 = u8::try_from(c).map_err(|_| Error::Format(format!("{c} channels too many")))?;
        let n32 = u32::try_from(self.records.len()).map_err(|_| Error::Format("too many records".into()))?;
        let k8 = u8::try_from(self.classes.len()).map_err(|_| Error::Format("too many classes".into()))?;
        let mut buf = Vec::with_capacity(16 + self.records.len() * (1 + h * wd * c));
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        buf.extend_from_slice(&h16.to_le_bytes());
        buf.extend_from_slice(&w16.to_le_bytes());
        buf.push(c8);
        buf.extend_from_slice(&n32.to_le_bytes());
        buf.push(k8);
        for name in &self.classes {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("class name `{name}` too long")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        for r in &self.records {
            buf.push(r.label as u8);
            buf.extend(r.image.data().iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_gfpd_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_gfpd(&mut out)?;
        Ok(out)
    }

    pub fn read_gfpd<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected GFPD")));
        }
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported GFPD version {version}")));
        }
        let h = cur.u16()? as usize;
        let w = cur.u16()? as usize;
        let c = cur.u8()? as usize;
        let count = cur.u32()? as usize;
        let k = cur.u8()? as usize;
        let mut classes = Vec::with_capacity(k);
        for _ in 0..k {
            let len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("class name is not UTF-8".into()))?;
            classes.push(name.to_string());
        }
        let px = h * w * c;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let label = cur.u8()? as usize;
            let data = cur.take(px)?.iter().map(|&b| b as f32 / 255.0).collect();
            records.push(Record {
                image: Image::new(h, w, c, data)?,
                label,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Self::new(classes, records).map_err(|e| Error::Format(e.to_string()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of GFPD data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        let img = |v: f32| Image::filled(2, 3, 1, v);
        LabeledDataset::new(
            vec!["a".into(), "bb".into()],
            vec![
                Record { image: img(0.0), label: 0 },
                Record { image: img(1.0), label: 1 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn header_bytes() {
        let bytes = tiny().to_gfpd_bytes().unwrap();
        assert_eq!(&bytes[..4], b"GFPD");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..7], &2u16.to_le_bytes());
        assert_eq!(&bytes[7..9], &3u16.to_le_bytes());
        assert_eq!(bytes[9], 1);
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(bytes[14], 2);
        assert_eq!(&bytes[15..18], &[1, 0, b'a']);
        assert_eq!(&bytes[18..22], &[2, 0, b'b', b'b']);
        assert_eq!(&bytes[22..29], &[0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[29..], &[1, 255, 255, 255, 255, 255, 255]);
    }

    #[test]
    fn rejects_bad_labels_and_trailing_bytes() {
        let mut bytes = tiny().to_gfpd_bytes().unwrap();
        bytes[29] = 5;
        assert!(LabeledDataset::read_gfpd(&bytes[..]).is_err());
        let mut bytes = tiny().to_gfpd_bytes().unwrap();
        bytes.push(0);
        assert!(LabeledDataset::read_gfpd(&bytes[..]).is_err());
    }

    #[test]
    fn new_validates_records() {
        let bad = LabeledDataset::new(
            vec!["a".into()],
            vec![Record {
                image: Image::filled(1, 1, 1, 0.0),
                label: 1,
            }],
        );
        assert!(bad.is_err());
    }
}
