//! `DGDD` binary container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    4 bytes  "DGDD"
//! version  u16      1 = f32 pixels, 2 = f64 pixels
//! N H W channels C S   u32 each
//! N records:  class u16 | domain u16 | split u8 | H*W*channels pixels
//! crc32    u32      over every byte between the version field and the checksum
//! ```
//!
//! Files are read whole and validated before any record is returned.

use std::fs;
use std::path::Path;

use crate::data::{DatasetMeta, MultiDomainDataset, Provenance, Sample, Split};
use crate::error::{Error, Result};
use crate::numerics::{RealGrid, Shape};

pub const MAGIC: [u8; 4] = *b"DGDD";
pub const FORMAT_VERSION_F32: u16 = 1;
pub const FORMAT_VERSION_F64: u16 = 2;

const HEADER_LEN: usize = 4 + 2 + 6 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelPrecision {
    F32,
    F64,
}

impl PixelPrecision {
    fn version(self) -> u16 {
        match self {
            PixelPrecision::F32 => FORMAT_VERSION_F32,
            PixelPrecision::F64 => FORMAT_VERSION_F64,
        }
    }

    fn width(self) -> usize {
        match self {
            PixelPrecision::F32 => 4,
            PixelPrecision::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub class: u16,
    pub domain: u16,
    pub split: Split,
    pub image: RealGrid,
}

/// Decoded file contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub precision: PixelPrecision,
    pub shape: Shape,
    pub num_classes: u32,
    pub num_domains: u32,
    pub records: Vec<Record>,
}

fn narrow_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what} {v} exceeds u16")))
}

fn narrow_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what} {v} exceeds u32")))
}

pub fn encode_container(c: &Container) -> Result<Vec<u8>> {
    let pixels = c.shape.len();
    let mut buf =
        Vec::with_capacity(HEADER_LEN + c.records.len() * (5 + pixels * c.precision.width()) + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&c.precision.version().to_le_bytes());
    for v in [
        narrow_u32(c.records.len(), "sample count")?,
        narrow_u32(c.shape.height, "height")?,
        narrow_u32(c.shape.width, "width")?,
        narrow_u32(c.shape.channels, "channels")?,
        c.num_classes,
        c.num_domains,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in &c.records {
        r.image.ensure_shape(c.shape)?;
        buf.extend_from_slice(&r.class.to_le_bytes());
        buf.extend_from_slice(&r.domain.to_le_bytes());
        buf.push(r.split.code());
        match c.precision {
            PixelPrecision::F32 => {
                for &v in r.image.values() {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            PixelPrecision::F64 => {
                for &v in r.image.values() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&buf[6..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

fn truncated(path: &Path) -> Error {
    Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated DGDD file"),
    )
}

pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Container> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut m = [0u8; 4];
        for (d, s) in m.iter_mut().zip(bytes) {
            *d = *s;
        }
        return Err(Error::BadMagic {
            found: u32::from_be_bytes(m),
        });
    }
    let mut rd = Reader { bytes, pos: 4 };
    let version = rd.u16().ok_or_else(|| truncated(path))?;
    let precision = match version {
        FORMAT_VERSION_F32 => PixelPrecision::F32,
        FORMAT_VERSION_F64 => PixelPrecision::F64,
        other => {
            return Err(Error::FormatVersionMismatch {
                found: other as u32,
            })
        }
    };
    let mut counts = [0u32; 6];
    for c in counts.iter_mut() {
        *c = rd.u32().ok_or_else(|| truncated(path))?;
    }
    let [n, h, w, ch, num_classes, num_domains] = counts.map(|v| v as usize);
    let shape = Shape::new(h, w, ch);
    if shape.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "empty image shape {shape}"
        )));
    }
    let record_len = 5 + shape.len() * precision.width();
    let expected = n
        .checked_mul(record_len)
        .and_then(|v| v.checked_add(HEADER_LEN + 4))
        .ok_or_else(|| Error::DimensionMismatch("record count overflows".into()))?;
    if bytes.len() < expected {
        return Err(truncated(path));
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[6..expected - 4]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rd.u16().unwrap();
        let domain = rd.u16().unwrap();
        let code = rd.take(1).unwrap()[0];
        let split = Split::from_code(code)
            .ok_or_else(|| Error::DimensionMismatch(format!("unknown split code {code}")))?;
        let raw = rd.take(shape.len() * precision.width()).unwrap();
        let values: Vec<f64> = match precision {
            PixelPrecision::F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            PixelPrecision::F64 => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        records.push(Record {
            class,
            domain,
            split,
            image: RealGrid::from_vec(shape, values)?,
        });
    }
    Ok(Container {
        precision,
        shape,
        num_classes: num_classes as u32,
        num_domains: num_domains as u32,
        records,
    })
}

/// Writes via a temporary sibling and rename so readers never see half a file.
pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let bytes = encode_container(c)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}

impl Container {
    pub fn from_dataset(ds: &MultiDomainDataset, precision: PixelPrecision) -> Result<Self> {
        let records = ds
            .samples
            .iter()
            .map(|s| {
                Ok(Record {
                    class: narrow_u16(s.class, "class")?,
                    domain: narrow_u16(s.domain, "domain")?,
                    split: s.split,
                    image: s.image.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Container {
            precision,
            shape: ds.shape(),
            num_classes: narrow_u32(ds.num_classes, "class count")?,
            num_domains: narrow_u32(ds.num_domains, "domain count")?,
            records,
        })
    }

    /// Provenance is rebuilt from the stored domain and record position.
    pub fn into_dataset(self, name: &str) -> Result<MultiDomainDataset> {
        let samples = self
            .records
            .into_iter()
            .enumerate()
            .map(|(i, r)| Sample {
                image: r.image,
                class: r.class as usize,
                domain: r.domain as usize,
                split: r.split,
                provenance: Provenance {
                    domain: r.domain,
                    style: 0,
                    index: i as u32,
                },
            })
            .collect();
        let ds = MultiDomainDataset {
            samples,
            num_classes: self.num_classes as usize,
            num_domains: self.num_domains as usize,
            meta: DatasetMeta {
                name: name.to_string(),
                shape: self.shape,
                seed: 0,
            },
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Stores a dataset at f32 precision (format version 1).
pub fn save_dataset(ds: &MultiDomainDataset, path: &Path) -> Result<()> {
    write_container(path, &Container::from_dataset(ds, PixelPrecision::F32)?)
}

pub fn load_dataset(path: &Path) -> Result<MultiDomainDataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_container(path)?.into_dataset(&name)
}

/// Stores a flat list of grids at f64 precision; `tags` become the class and domain fields.
pub fn save_grids(path: &Path, grids: &[(u16, u16, &RealGrid)]) -> Result<()> {
    let shape = match grids.first() {
        Some((_, _, g)) => g.shape(),
        None => return Err(Error::EmptySet),
    };
    let records = grids
        .iter()
        .map(|&(class, domain, g)| Record {
            class,
            domain,
            split: Split::Train,
            image: g.clone(),
        })
        .collect();
    let max =
        |f: fn(&(u16, u16, &RealGrid)) -> u16| grids.iter().map(f).max().unwrap_or(0) as u32 + 1;
    write_container(
        path,
        &Container {
            precision: PixelPrecision::F64,
            shape,
            num_classes: max(|t| t.0),
            num_domains: max(|t| t.1),
            records,
        },
    )
}

pub fn load_grids(path: &Path) -> Result<Vec<(u16, u16, RealGrid)>> {
    Ok(read_container(path)?
        .records
        .into_iter()
        .map(|r| (r.class, r.domain, r.image))
        .collect())
}
