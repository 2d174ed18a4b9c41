//! The distillation loop and its artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_grids, save_grids, MultiDomainDataset, Provenance, Split};
use crate::dm::{class_pixel_means, gradient_against, real_targets, synthetic_features};
use crate::error::{Error, Result};
use crate::featurizer::{FeatureVector, Featurizer, FeaturizerSpec};
use crate::numerics::{RealGrid, SeededRng, Shape};
use crate::surgery::{
    consensus, decompose, plain_step, sgs_step, DomainGradientStack, GradientBundle,
    SurgeryWeights, DEFAULT_EPSILON,
};

const INIT_STREAM: u64 = 0x696e_6974;
const FEATURIZER_STREAM: u64 = 0x7073_6921;

/// `IPC x C` synthetic images with their labels and assigned domains.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub images: Vec<RealGrid>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub num_classes: usize,
    pub num_domains: usize,
    pub iteration: u64,
    /// Origin of the initial image, when it was copied from real data.
    pub provenance: Vec<Option<Provenance>>,
}

impl SyntheticSet {
    pub fn from_parts(
        images: Vec<RealGrid>,
        labels: Vec<usize>,
        domains: Vec<usize>,
        num_classes: usize,
        num_domains: usize,
    ) -> Self {
        let n = images.len();
        SyntheticSet {
            images,
            labels,
            domains,
            num_classes,
            num_domains,
            iteration: 0,
            provenance: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Option<Shape> {
        self.images.first().map(|g| g.shape())
    }

    pub fn ipc(&self) -> usize {
        self.images.len() / self.num_classes.max(1)
    }

    /// Images assigned to domain `d` within each class.
    pub fn domain_counts(&self, class: usize) -> Vec<usize> {
        let mut counts = vec![0; self.num_domains];
        for (&l, &d) in self.labels.iter().zip(&self.domains) {
            if l == class {
                counts[d] += 1;
            }
        }
        counts
    }

    /// Checks the per-class size and balance invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.labels.len() != n || self.domains.len() != n || self.provenance.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} images, {} labels, {} domains",
                self.labels.len(),
                self.domains.len()
            )));
        }
        if self.num_classes == 0 || n % self.num_classes != 0 {
            return Err(Error::InvalidConfig(format!(
                "{n} images do not split evenly over {} classes",
                self.num_classes
            )));
        }
        if let Some(&d) = self.domains.iter().find(|&&d| d >= self.num_domains) {
            return Err(Error::UnknownDomain {
                domain: d,
                available: self.num_domains,
            });
        }
        for c in 0..self.num_classes {
            let members = self.labels.iter().filter(|&&l| l == c).count();
            if members != self.ipc() {
                return Err(Error::EmptyClass { class: c });
            }
            let counts = self.domain_counts(c);
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            if hi - lo > 1 {
                return Err(Error::InvalidConfig(format!(
                    "class {c} domain assignment {counts:?} is unbalanced"
                )));
            }
        }
        if self.images.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.iteration,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Noise,
    Random,
    Uniform,
}

/// Which of the three update signals enter the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    BaseOnly,
    ClassOnly,
    DomainOnly,
    ClassDomain,
    All,
}

impl UpdateMode {
    pub const ALL_MODES: [UpdateMode; 5] = [
        UpdateMode::BaseOnly,
        UpdateMode::ClassOnly,
        UpdateMode::DomainOnly,
        UpdateMode::ClassDomain,
        UpdateMode::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::BaseOnly => "base_only",
            UpdateMode::ClassOnly => "class_only",
            UpdateMode::DomainOnly => "domain_only",
            UpdateMode::ClassDomain => "class_domain",
            UpdateMode::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub ipc: usize,
    pub iterations: usize,
    pub eta: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub epsilon: f64,
    pub init: InitStrategy,
    pub seed: u64,
    pub featurizer: FeaturizerSpec,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub mode: UpdateMode,
    /// Clamp pixels to [0, 1] after every step.
    pub clamp: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            ipc: 10,
            iterations: 20_000,
            eta: 1.0,
            lambda_c: 1.0,
            lambda_d: 1.0,
            epsilon: DEFAULT_EPSILON,
            init: InitStrategy::Uniform,
            seed: 0,
            featurizer: FeaturizerSpec::default(),
            checkpoint_every: 0,
            mode: UpdateMode::All,
            clamp: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ipc == 0 {
            return Err(Error::InvalidConfig("ipc must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        self.featurizer.validate()?;
        self.weights().validate()
    }

    /// Step weights after applying the ablation mode.
    pub fn weights(&self) -> SurgeryWeights {
        let (base, class, domain) = match self.mode {
            UpdateMode::BaseOnly => (true, false, false),
            UpdateMode::ClassOnly => (false, true, false),
            UpdateMode::DomainOnly => (false, false, true),
            UpdateMode::ClassDomain => (false, true, true),
            UpdateMode::All => (true, true, true),
        };
        SurgeryWeights {
            lambda_c: if class { self.lambda_c } else { 0.0 },
            lambda_d: if domain { self.lambda_d } else { 0.0 },
            eta: self.eta,
            epsilon: self.epsilon,
            use_base: base,
        }
    }
}

fn featurizer_for(cfg: &DistillConfig, shape: Shape, iteration: u64) -> Featurizer {
    let mut rng = SeededRng::new(
        cfg.seed,
        SeededRng::stream_id(FEATURIZER_STREAM, iteration, 0),
    );
    cfg.featurizer.sample(shape, &mut rng)
}

fn train_split(source: &MultiDomainDataset) -> MultiDomainDataset {
    source.filtered(|s| s.split == Split::Train)
}

/// Synthetic images before the first step.
pub fn initialize(source: &MultiDomainDataset, cfg: &DistillConfig) -> Result<SyntheticSet> {
    cfg.validate()?;
    let train = train_split(source);
    let (c_count, s_count, ipc) = (train.num_classes, train.num_domains.max(1), cfg.ipc);
    let shape = train.shape();
    let mut rng = SeededRng::new(cfg.seed, SeededRng::stream_id(INIT_STREAM, 0, 0));
    let mut images = Vec::with_capacity(ipc * c_count);
    let mut labels = Vec::with_capacity(ipc * c_count);
    let mut domains = Vec::with_capacity(ipc * c_count);
    let mut provenance = Vec::with_capacity(ipc * c_count);
    // noise spans the observed pixel range at two standard deviations
    let (lo, hi) = train
        .samples
        .iter()
        .flat_map(|s| s.image.values().iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (center, spread) = ((lo + hi) / 2.0, (hi - lo) / 4.0);
    for c in 0..c_count {
        let pooled: Vec<usize> = (0..train.samples.len())
            .filter(|&i| train.samples[i].class == c)
            .collect();
        if pooled.is_empty() {
            return Err(Error::EmptyClass { class: c });
        }
        match cfg.init {
            InitStrategy::Noise => {
                for j in 0..ipc {
                    let v = (0..shape.len())
                        .map(|_| center + spread * rng.normal())
                        .collect();
                    images.push(RealGrid::from_vec(shape, v)?);
                    domains.push(j % s_count);
                    provenance.push(None);
                }
            }
            InitStrategy::Random => {
                let mut order = pooled.clone();
                rng.shuffle(&mut order);
                for j in 0..ipc {
                    let s = &train.samples[order[j % order.len()]];
                    images.push(s.image.clone());
                    domains.push(j % s_count);
                    provenance.push(Some(s.provenance));
                }
            }
            InitStrategy::Uniform => {
                for d in 0..s_count {
                    let quota = ipc / s_count + usize::from(d < ipc % s_count);
                    if quota == 0 {
                        continue;
                    }
                    let mut cell: Vec<usize> = pooled
                        .iter()
                        .copied()
                        .filter(|&i| train.samples[i].domain == d)
                        .collect();
                    if cell.is_empty() {
                        return Err(Error::EmptyCell {
                            domain: d,
                            class: c,
                        });
                    }
                    rng.shuffle(&mut cell);
                    for j in 0..quota {
                        let s = &train.samples[cell[j % cell.len()]];
                        images.push(s.image.clone());
                        domains.push(d);
                        provenance.push(Some(s.provenance));
                    }
                }
            }
        }
        labels.extend(std::iter::repeat_n(c, ipc));
    }
    let set = SyntheticSet {
        images,
        labels,
        domains,
        num_classes: c_count,
        num_domains: s_count,
        iteration: 0,
        provenance,
    };
    set.validate()?;
    Ok(set)
}

/// Losses measured at the start of one iteration, under that iteration's featurizer.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub dm_loss: f64,
    pub domain_losses: Vec<f64>,
}

/// Real-side class targets. A linear featurizer commutes with the mean, so its
/// targets come from pixel means computed once.
enum RealSide {
    PixelMeans {
        pooled: Vec<RealGrid>,
        domains: Vec<Vec<RealGrid>>,
    },
    Samples(MultiDomainDataset),
}

impl RealSide {
    fn new(train: MultiDomainDataset, spec: &FeaturizerSpec, with_domains: bool) -> Result<Self> {
        if !matches!(spec, FeaturizerSpec::Linear { .. }) {
            return Ok(RealSide::Samples(train));
        }
        let view = train.view();
        let domains = if with_domains {
            (0..train.num_domains)
                .map(|d| class_pixel_means(&view.domain(d)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(RealSide::PixelMeans {
            pooled: class_pixel_means(&view)?,
            domains,
        })
    }

    fn project(means: &[RealGrid], psi: &Featurizer) -> Result<Vec<FeatureVector>> {
        means.iter().map(|m| psi.features(m)).collect()
    }

    fn pooled(&self, psi: &Featurizer) -> Result<Vec<FeatureVector>> {
        match self {
            RealSide::PixelMeans { pooled, .. } => Self::project(pooled, psi),
            RealSide::Samples(train) => real_targets(&train.view(), psi),
        }
    }

    fn domain(&self, d: usize, psi: &Featurizer) -> Result<Vec<FeatureVector>> {
        match self {
            RealSide::PixelMeans { domains, .. } => Self::project(&domains[d], psi),
            RealSide::Samples(train) => real_targets(&train.view().domain(d), psi),
        }
    }
}

/// Every per-domain class mean needs at least one sample.
fn check_cells(train: &MultiDomainDataset) -> Result<()> {
    let mut seen = vec![false; train.num_domains * train.num_classes];
    for s in &train.samples {
        seen[s.domain * train.num_classes + s.class] = true;
    }
    match seen.iter().position(|&v| !v) {
        Some(i) => Err(Error::EmptyCell {
            domain: i / train.num_classes,
            class: i % train.num_classes,
        }),
        None => Ok(()),
    }
}

fn finish_step(mut x: RealGrid, clamp: bool) -> RealGrid {
    if clamp {
        x.values_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    x
}

fn check_compatible(source: &MultiDomainDataset, set: &SyntheticSet) -> Result<()> {
    if set.num_classes != source.num_classes || set.num_domains != source.num_domains {
        return Err(Error::DimensionMismatch(format!(
            "synthetic set has {} classes / {} domains, source has {} / {}",
            set.num_classes, set.num_domains, source.num_classes, source.num_domains
        )));
    }
    if let Some(shape) = set.shape() {
        if shape != source.shape() {
            return Err(Error::shape(source.shape(), shape));
        }
    }
    set.validate()
}

/// Continues `set` for `iterations` surgery steps, calling `observer` after each.
pub fn continue_distillation(
    source: &MultiDomainDataset,
    mut set: SyntheticSet,
    cfg: &DistillConfig,
    iterations: usize,
    observer: &mut dyn FnMut(&SyntheticSet, &LossRecord) -> Result<()>,
) -> Result<SyntheticSet> {
    cfg.validate()?;
    if source.num_domains < 2 {
        return Err(Error::TooFewDomains {
            found: source.num_domains,
        });
    }
    check_compatible(source, &set)?;
    let weights = cfg.weights();
    let train = train_split(source);
    check_cells(&train)?;
    let real = RealSide::new(train, &cfg.featurizer, true)?;
    let shape = source.shape();
    for _ in 0..iterations {
        let psi = featurizer_for(cfg, shape, set.iteration);
        let sf = synthetic_features(&set, &psi)?;
        let pooled = gradient_against(&set, &sf, &real.pooled(&psi)?, &psi)?;
        let per_domain = (0..source.num_domains)
            .map(|d| gradient_against(&set, &sf, &real.domain(d, &psi)?, &psi))
            .collect::<Result<Vec<_>>>()?;
        let record = LossRecord {
            iteration: set.iteration,
            dm_loss: pooled.loss,
            domain_losses: per_domain.iter().map(|g| g.loss).collect(),
        };
        if !record.dm_loss.is_finite() || record.domain_losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged {
                iteration: set.iteration,
            });
        }
        // a linear featurizer hands every member of a class the same gradients,
        // so one decomposition per class serves all of them
        let shared_per_class = psi.is_linear();
        let mut bundles: Vec<Option<GradientBundle>> = vec![None; set.len()];
        for c in 0..sf.partition.num_classes() {
            let members = sf.partition.members(c);
            let owners = if shared_per_class {
                &members[..1]
            } else {
                members
            };
            for &i in owners {
                let grads = per_domain.iter().map(|g| g.grads[i].clone()).collect();
                let stack = DomainGradientStack::new(i, grads)?;
                let cons = consensus(&stack, weights.epsilon)?;
                bundles[i] = Some(GradientBundle::new(
                    pooled.grads[i].clone(),
                    decompose(&stack, &cons)?,
                ));
            }
            if shared_per_class {
                let first = members[0];
                for &i in &members[1..] {
                    bundles[i] = bundles[first].clone();
                }
            }
        }
        let mut next = Vec::with_capacity(set.len());
        for (i, bundle) in bundles.iter().enumerate() {
            let bundle = bundle.as_ref().expect("partition covers every sample");
            let x = sgs_step(&set.images[i], bundle, set.domains[i], &weights)?;
            next.push(finish_step(x, cfg.clamp));
        }
        set.images = next;
        set.iteration += 1;
        observer(&set, &record)?;
    }
    Ok(set)
}

/// Result of a full run: the final set and one loss record per iteration.
#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub set: SyntheticSet,
    pub history: Vec<LossRecord>,
}

pub fn run_distillation(
    source: &MultiDomainDataset,
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    let set = initialize(source, cfg)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    let set = continue_distillation(source, set, cfg, cfg.iterations, &mut |_, r| {
        history.push(r.clone());
        Ok(())
    })?;
    Ok(DistillOutcome { set, history })
}

/// Plain distribution matching: `x <- x - eta * g` with no surgery at all.
pub fn run_dm_baseline(source: &MultiDomainDataset, cfg: &DistillConfig) -> Result<DistillOutcome> {
    let mut set = initialize(source, cfg)?;
    let real = RealSide::new(train_split(source), &cfg.featurizer, false)?;
    let shape = source.shape();
    let mut history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let psi = featurizer_for(cfg, shape, set.iteration);
        let sf = synthetic_features(&set, &psi)?;
        let g = gradient_against(&set, &sf, &real.pooled(&psi)?, &psi)?;
        if !g.loss.is_finite() {
            return Err(Error::Diverged {
                iteration: set.iteration,
            });
        }
        history.push(LossRecord {
            iteration: set.iteration,
            dm_loss: g.loss,
            domain_losses: Vec::new(),
        });
        set.images = set
            .images
            .iter()
            .zip(&g.grads)
            .map(|(x, gi)| finish_step(plain_step(x, gi, cfg.eta), cfg.clamp))
            .collect();
        set.iteration += 1;
    }
    Ok(DistillOutcome { set, history })
}

/// Per-sample resultant maps the next iteration of `set` would see.
pub fn resultant_maps(
    source: &MultiDomainDataset,
    set: &SyntheticSet,
    cfg: &DistillConfig,
) -> Result<Vec<RealGrid>> {
    check_compatible(source, set)?;
    let real = RealSide::new(train_split(source), &cfg.featurizer, true)?;
    let psi = featurizer_for(cfg, source.shape(), set.iteration);
    let sf = synthetic_features(set, &psi)?;
    let per_domain = (0..source.num_domains)
        .map(|d| gradient_against(set, &sf, &real.domain(d, &psi)?, &psi))
        .collect::<Result<Vec<_>>>()?;
    (0..set.len())
        .map(|i| {
            let stack = DomainGradientStack::new(
                i,
                per_domain.iter().map(|g| g.grads[i].clone()).collect(),
            )?;
            Ok(consensus(&stack, cfg.epsilon)?.resultant_grid())
        })
        .collect()
}

/// Pooled DM loss of `set` under the featurizer the given iteration would draw.
pub fn pooled_loss_at(
    source: &MultiDomainDataset,
    set: &SyntheticSet,
    cfg: &DistillConfig,
    iteration: u64,
) -> Result<f64> {
    let train = train_split(source);
    let psi = featurizer_for(cfg, source.shape(), iteration);
    crate::dm::dm_loss(set, &train.view(), &psi)
}

pub fn history_csv(history: &[LossRecord]) -> crate::data::CsvTable {
    let domains = history.first().map_or(0, |r| r.domain_losses.len());
    let mut header = vec!["iteration".to_string(), "dm_loss".to_string()];
    header.extend((0..domains).map(|d| format!("domain_{d}_loss")));
    let mut table = crate::data::CsvTable {
        header,
        rows: Vec::new(),
    };
    for r in history {
        let mut row = vec![r.iteration.to_string(), crate::data::fmt_sig6(r.dm_loss)];
        row.extend(r.domain_losses.iter().map(|&l| crate::data::fmt_sig6(l)));
        table.push(row);
    }
    table
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    iteration: u64,
    ipc: usize,
    num_classes: usize,
    num_domains: usize,
    provenance: Vec<Option<Provenance>>,
    config: DistillConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the images (f64, lossless) plus a JSON sidecar with counters and config.
pub fn checkpoint(set: &SyntheticSet, cfg: &DistillConfig, path: &Path) -> Result<()> {
    set.validate()?;
    let grids: Vec<(u16, u16, &RealGrid)> = set
        .images
        .iter()
        .zip(set.labels.iter().zip(&set.domains))
        .map(|(g, (&l, &d))| (l as u16, d as u16, g))
        .collect();
    save_grids(path, &grids)?;
    let side = Sidecar {
        iteration: set.iteration,
        ipc: set.ipc(),
        num_classes: set.num_classes,
        num_domains: set.num_domains,
        provenance: set.provenance.clone(),
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&side)?;
    let side_path = sidecar_path(path);
    std::fs::write(&side_path, json).map_err(|e| Error::io(&side_path, e))
}

pub fn restore(path: &Path) -> Result<(SyntheticSet, DistillConfig)> {
    let grids = load_grids(path)?;
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&text)?;
    if grids.len() != side.ipc * side.num_classes || side.provenance.len() != grids.len() {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint holds {} images, sidecar expects {} x {}",
            grids.len(),
            side.ipc,
            side.num_classes
        )));
    }
    let mut images = Vec::with_capacity(grids.len());
    let mut labels = Vec::with_capacity(grids.len());
    let mut domains = Vec::with_capacity(grids.len());
    for (l, d, g) in grids {
        labels.push(l as usize);
        domains.push(d as usize);
        images.push(g);
    }
    let set = SyntheticSet {
        images,
        labels,
        domains,
        num_classes: side.num_classes,
        num_domains: side.num_domains,
        iteration: side.iteration,
        provenance: side.provenance,
    };
    set.validate()?;
    Ok((set, side.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy, ToySpec};

    fn small_toy() -> MultiDomainDataset {
        let spec = ToySpec {
            height: 8,
            width: 8,
            classes: 3,
            train_per_cell: 6,
            test_per_cell: 2,
            ..ToySpec::default()
        };
        generate_toy(&spec, 3).unwrap()
    }

    fn cfg(init: InitStrategy, ipc: usize) -> DistillConfig {
        DistillConfig {
            ipc,
            iterations: 5,
            init,
            featurizer: FeaturizerSpec::Linear { features: 16 },
            ..DistillConfig::default()
        }
    }

    #[test]
    fn uniform_remainder_goes_to_low_domains() {
        let ds = small_toy();
        let set = initialize(&ds, &cfg(InitStrategy::Uniform, 10)).unwrap();
        for c in 0..3 {
            assert_eq!(set.domain_counts(c), vec![3, 3, 2, 2]);
        }
        let set = initialize(&ds, &cfg(InitStrategy::Uniform, 8)).unwrap();
        assert_eq!(set.domain_counts(1), vec![2, 2, 2, 2]);
        for (i, p) in set.provenance.iter().enumerate() {
            assert_eq!(p.unwrap().domain as usize, set.domains[i]);
        }
    }

    #[test]
    fn noise_init_is_scaled_normal() {
        let spec = ToySpec {
            classes: 2,
            train_per_cell: 2,
            test_per_cell: 1,
            ..ToySpec::default()
        };
        let ds = generate_toy(&spec, 0).unwrap();
        let set = initialize(&ds, &cfg(InitStrategy::Noise, 5)).unwrap();
        let pixels = || {
            ds.samples
                .iter()
                .filter(|s| s.split == Split::Train)
                .flat_map(|s| s.image.values().iter().copied())
        };
        let lo = pixels().fold(f64::INFINITY, f64::min);
        let hi = pixels().fold(f64::NEG_INFINITY, f64::max);
        for img in &set.images {
            let n = img.values().len() as f64;
            let m = img.values().iter().sum::<f64>() / n;
            let sd = (img.values().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            assert!((m - (lo + hi) / 2.0).abs() < 0.05, "mean {m}");
            assert!((sd - (hi - lo) / 4.0).abs() < 0.05, "std {sd}");
        }
        for c in 0..2 {
            let counts = set.domain_counts(c);
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn random_init_copies_same_class_train_images() {
        let ds = small_toy();
        let set = initialize(&ds, &cfg(InitStrategy::Random, 4)).unwrap();
        for (img, &l) in set.images.iter().zip(&set.labels) {
            assert!(ds
                .samples
                .iter()
                .any(|s| s.split == Split::Train && s.class == l && &s.image == img));
        }
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let ds = small_toy();
        let mut c = cfg(InitStrategy::Uniform, 4);
        c.iterations = 0;
        let out = run_distillation(&ds, &c).unwrap();
        assert_eq!(out.set, initialize(&ds, &c).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn zero_weights_match_baseline_bitwise() {
        let ds = small_toy();
        let mut c = cfg(InitStrategy::Noise, 4);
        c.lambda_c = 0.0;
        c.lambda_d = 0.0;
        c.eta = 0.5;
        let a = run_distillation(&ds, &c).unwrap();
        let b = run_dm_baseline(&ds, &c).unwrap();
        assert_eq!(a.set.images, b.set.images);
        let la: Vec<f64> = a.history.iter().map(|r| r.dm_loss).collect();
        let lb: Vec<f64> = b.history.iter().map(|r| r.dm_loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn single_domain_source_is_rejected() {
        let ds = small_toy().select_domains(&[2]).unwrap();
        assert!(matches!(
            run_distillation(&ds, &cfg(InitStrategy::Noise, 2)),
            Err(Error::TooFewDomains { found: 1 })
        ));
    }

    #[test]
    fn empty_domain_class_cell_is_named() {
        let ds =
            small_toy().filtered(|s| !(s.domain == 2 && s.class == 0 && s.split == Split::Train));
        for init in [InitStrategy::Noise, InitStrategy::Uniform] {
            assert!(matches!(
                run_distillation(&ds, &cfg(init, 4)),
                Err(Error::EmptyCell {
                    domain: 2,
                    class: 0
                })
            ));
        }
        assert!(run_dm_baseline(&ds, &cfg(InitStrategy::Noise, 4)).is_ok());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(serde_json::from_str::<DistillConfig>(r#"{"ipc": 3, "momentum": 0.9}"#).is_err());
        let c: DistillConfig = serde_json::from_str(r#"{"ipc": 3, "init": "noise"}"#).unwrap();
        assert_eq!(c.ipc, 3);
        assert_eq!(c.init, InitStrategy::Noise);
        assert_eq!(c.iterations, 20_000);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let ds = small_toy();
        let c = cfg(InitStrategy::Uniform, 4);
        let out = run_distillation(&ds, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.dgdd");
        checkpoint(&out.set, &c, &path).unwrap();
        let (back, back_cfg) = restore(&path).unwrap();
        assert_eq!(back, out.set);
        assert_eq!(back_cfg, c);
    }
}
