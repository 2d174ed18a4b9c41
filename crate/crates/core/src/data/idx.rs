//! IDX (MNIST-style) image and label import.

use std::fs;
use std::path::Path;

use crate::data::{DatasetMeta, MultiDomainDataset, Provenance, Sample, Split};
use crate::error::{Error, Result};
use crate::numerics::{RealGrid, Shape};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Big-endian header of an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

impl IdxHeader {
    fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    fn payload(&self) -> usize {
        self.dims.iter().product()
    }
}

fn be_u32(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
}

/// Parses the header only; `expected_magic` selects images or labels.
pub fn read_idx_header(bytes: &[u8], expected_magic: u32) -> Result<IdxHeader> {
    let magic = be_u32(bytes, 0).ok_or(Error::BadMagic { found: 0 })?;
    if magic != expected_magic {
        return Err(Error::BadMagic { found: magic });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| {
            be_u32(bytes, 4 + 4 * i)
                .map(|d| d as usize)
                .ok_or_else(|| Error::DimensionMismatch("header shorter than its rank".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IdxHeader { magic, dims })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair as a single-domain training set with pixels in `[0, 1]`.
pub fn import_idx(
    images_path: &Path,
    labels_path: &Path,
    domain: usize,
) -> Result<MultiDomainDataset> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    let ih = read_idx_header(&images, IDX_IMAGES_MAGIC)?;
    let lh = read_idx_header(&labels, IDX_LABELS_MAGIC)?;
    let (n, rows, cols) = (ih.dims[0], ih.dims[1], ih.dims[2]);
    if lh.dims[0] != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} images but {} labels",
            lh.dims[0]
        )));
    }
    if images.len() != ih.len() + ih.payload() {
        return Err(Error::DimensionMismatch(format!(
            "image payload is {} bytes, header implies {}",
            images.len() - ih.len(),
            ih.payload()
        )));
    }
    if labels.len() != lh.len() + lh.payload() {
        return Err(Error::DimensionMismatch("label payload length".into()));
    }
    let label_bytes = &labels[lh.len()..];
    let num_classes = label_bytes
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    let shape = Shape::new(rows, cols, 1);
    let domain_tag = u16::try_from(domain)
        .map_err(|_| Error::DimensionMismatch(format!("domain {domain} exceeds u16")))?;
    let samples = images[ih.len()..]
        .chunks_exact(rows * cols)
        .zip(label_bytes)
        .enumerate()
        .map(|(i, (px, &label))| -> Result<Sample> {
            let values = px.iter().map(|&b| b as f64 / 255.0).collect();
            Ok(Sample {
                image: RealGrid::from_vec(shape, values)?,
                class: label as usize,
                domain: 0,
                split: Split::Train,
                provenance: Provenance {
                    domain: domain_tag,
                    style: 0,
                    index: i as u32,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiDomainDataset {
        samples,
        num_classes,
        num_domains: 1,
        meta: DatasetMeta {
            name: images_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            shape,
            seed: 0,
        },
    })
}
