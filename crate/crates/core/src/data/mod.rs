//! Multi-domain labeled image collections and their on-disk formats.

mod container;
mod export;
mod idx;
mod toy;

pub use container::{
    decode_container, encode_container, load_dataset, load_grids, read_container, save_dataset,
    save_grids, write_container, Container, PixelPrecision, Record, FORMAT_VERSION_F32,
    FORMAT_VERSION_F64, MAGIC,
};
pub use export::{fmt_sig6, write_csv, CsvTable};
pub use idx::{import_idx, read_idx_header, IdxHeader, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use toy::{
    generate_toy, glyph_template, render_sample, DomainStyle, StyleTransform, ToySpec, PIXEL_MAX,
    PIXEL_MIN,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RealGrid, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Split> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Where a sample originally came from. Survives domain relabeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    /// Domain id at generation or import time.
    pub domain: u16,
    /// Latent sub-style injected by the generator (0 when there is none).
    pub style: u16,
    /// Position in the originating collection.
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RealGrid,
    pub class: usize,
    pub domain: usize,
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub shape: Shape,
    pub seed: u64,
}

/// Labeled images partitioned into domains over a shared class set.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainDataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub num_domains: usize,
    pub meta: DatasetMeta,
}

impl MultiDomainDataset {
    /// Checks label ranges and shapes.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.class >= self.num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has class {} but C = {}",
                    s.class, self.num_classes
                )));
            }
            if s.domain >= self.num_domains {
                return Err(Error::UnknownDomain {
                    domain: s.domain,
                    available: self.num_domains,
                });
            }
            s.image.ensure_shape(self.meta.shape)?;
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.meta.shape
    }

    pub fn view(&self) -> DatasetView<'_> {
        DatasetView {
            samples: self.samples.iter().collect(),
            num_classes: self.num_classes,
            shape: self.meta.shape,
        }
    }

    pub fn train(&self) -> DatasetView<'_> {
        self.view().split(Split::Train)
    }

    pub fn test(&self) -> DatasetView<'_> {
        self.view().split(Split::Test)
    }

    /// Keeps the samples matching `keep`. Domain ids are left untouched.
    pub fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> MultiDomainDataset {
        MultiDomainDataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            num_classes: self.num_classes,
            num_domains: self.num_domains,
            meta: self.meta.clone(),
        }
    }

    /// Subset over the listed domains, renumbered `0..domains.len()` in list order.
    pub fn select_domains(&self, domains: &[usize]) -> Result<MultiDomainDataset> {
        for &d in domains {
            if d >= self.num_domains {
                return Err(Error::UnknownDomain {
                    domain: d,
                    available: self.num_domains,
                });
            }
        }
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                domains
                    .iter()
                    .position(|&d| d == s.domain)
                    .map(|new| Sample {
                        domain: new,
                        ..s.clone()
                    })
            })
            .collect();
        Ok(MultiDomainDataset {
            samples,
            num_classes: self.num_classes,
            num_domains: domains.len(),
            meta: self.meta.clone(),
        })
    }

    pub fn count(&self, domain: usize, class: usize, split: Split) -> usize {
        self.samples
            .iter()
            .filter(|s| s.domain == domain && s.class == class && s.split == split)
            .count()
    }
}

/// Borrowed selection of samples.
#[derive(Clone, Debug)]
pub struct DatasetView<'a> {
    pub samples: Vec<&'a Sample>,
    pub num_classes: usize,
    pub shape: Shape,
}

impl<'a> DatasetView<'a> {
    pub fn new(samples: Vec<&'a Sample>, num_classes: usize, shape: Shape) -> Self {
        DatasetView {
            samples,
            num_classes,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn keep(&self, f: impl Fn(&Sample) -> bool) -> DatasetView<'a> {
        DatasetView {
            samples: self.samples.iter().copied().filter(|s| f(s)).collect(),
            num_classes: self.num_classes,
            shape: self.shape,
        }
    }

    pub fn split(&self, split: Split) -> DatasetView<'a> {
        self.keep(|s| s.split == split)
    }

    pub fn domain(&self, domain: usize) -> DatasetView<'a> {
        self.keep(|s| s.domain == domain)
    }

    pub fn class(&self, class: usize) -> DatasetView<'a> {
        self.keep(|s| s.class == class)
    }

    pub fn images(&self) -> impl Iterator<Item = &'a RealGrid> + '_ {
        self.samples.iter().map(|s| &s.image)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MultiDomainDataset {
        let shape = Shape::new(2, 2, 1);
        let mut samples = Vec::new();
        for d in 0..3 {
            for c in 0..2 {
                samples.push(Sample {
                    image: RealGrid::filled(shape, (d * 2 + c) as f64),
                    class: c,
                    domain: d,
                    split: Split::Train,
                    provenance: Provenance {
                        domain: d as u16,
                        style: 0,
                        index: samples.len() as u32,
                    },
                });
            }
        }
        MultiDomainDataset {
            samples,
            num_classes: 2,
            num_domains: 3,
            meta: DatasetMeta {
                name: "tiny".into(),
                shape,
                seed: 0,
            },
        }
    }

    #[test]
    fn select_domains_renumbers_but_keeps_provenance() {
        let ds = tiny();
        let sub = ds.select_domains(&[2, 0]).unwrap();
        assert_eq!(sub.num_domains, 2);
        assert_eq!(sub.samples.len(), 4);
        for s in &sub.samples {
            let expected = if s.provenance.domain == 2 { 0 } else { 1 };
            assert_eq!(s.domain, expected);
        }
        sub.validate().unwrap();
        assert!(matches!(
            ds.select_domains(&[5]),
            Err(Error::UnknownDomain { .. })
        ));
    }

    #[test]
    fn views_compose() {
        let ds = tiny();
        assert_eq!(ds.train().domain(1).class(0).len(), 1);
        assert!(ds.test().is_empty());
    }
}
