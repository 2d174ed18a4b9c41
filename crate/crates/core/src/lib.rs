//! Dataset distillation by distribution matching, with spectral gradient
//! surgery separating cross-domain consensus from domain-specific signal.

pub mod data;
pub mod distill;
pub mod dm;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod numerics;
pub mod oracle;
pub mod pseudo;
pub mod surgery;

pub use data::{DatasetView, MultiDomainDataset, Sample, Split, ToySpec};
pub use distill::{DistillConfig, InitStrategy, SyntheticSet, UpdateMode};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport, Protocol, SoftmaxClassifier};
pub use featurizer::{Featurizer, FeaturizerSpec};
pub use numerics::{ComplexGrid, RealGrid, SeededRng, Shape};
pub use surgery::SurgeryWeights;
