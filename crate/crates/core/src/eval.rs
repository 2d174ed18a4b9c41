//! Downstream evaluation: softmax regression on flattened pixels, trained on a
//! distilled set and scored on held-out domains.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{fmt_sig6, CsvTable, DatasetView, MultiDomainDataset, Split};
use crate::distill::SyntheticSet;
use crate::error::{Error, Result};
use crate::featurizer::{Featurizer, FeaturizerSpec};
use crate::numerics::{RealGrid, SeededRng};
use crate::pseudo::{assign_pseudo_domains, purity};

const STYLE_STREAM: u64 = 0x7374_796c;

/// Labeled inputs a classifier can be fit on.
#[derive(Clone, Debug)]
pub struct TrainSet<'a> {
    pub inputs: Vec<&'a RealGrid>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<'a> TrainSet<'a> {
    pub fn from_view(view: &DatasetView<'a>) -> Self {
        TrainSet {
            inputs: view.images().collect(),
            labels: view.labels(),
            num_classes: view.num_classes,
        }
    }

    pub fn from_synthetic(set: &'a SyntheticSet) -> Self {
        TrainSet {
            inputs: set.images.iter().collect(),
            labels: set.labels.clone(),
            num_classes: set.num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `C x D`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub trained: bool,
}

impl SoftmaxClassifier {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        SoftmaxClassifier {
            num_classes,
            dim,
            weight: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
            trained: false,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weight[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Arg-max class; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        best
    }

    fn check(&self, x: &RealGrid) -> Result<()> {
        if x.values().len() != self.dim {
            return Err(Error::shape(self.dim, x.values().len()));
        }
        Ok(())
    }

    /// Mean cross-entropy and its gradient with respect to (weight, bias).
    pub fn loss_and_gradient(&self, data: &TrainSet<'_>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if data.inputs.is_empty() {
            return Err(Error::EmptySet);
        }
        let n = data.inputs.len() as f64;
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.num_classes];
        let mut loss = 0.0;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            self.check(x)?;
            let logits = self.logits(x.values());
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            loss += z.ln() + max - logits[y];
            for c in 0..self.num_classes {
                let delta = (exps[c] / z - f64::from(u8::from(c == y))) / n;
                gb[c] += delta;
                let row = &mut gw[c * self.dim..(c + 1) * self.dim];
                for (g, v) in row.iter_mut().zip(x.values()) {
                    *g += delta * v;
                }
            }
        }
        Ok((loss / n, gw, gb))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Full-batch gradient descent from a zero start. The objective is convex and
/// the start fixed, so `_seed` does not influence the result.
pub fn train_classifier(
    data: &TrainSet<'_>,
    epochs: usize,
    lr: f64,
    _seed: u64,
) -> Result<SoftmaxClassifier> {
    let dim = data.inputs.first().ok_or(Error::EmptySet)?.values().len();
    for c in 0..data.num_classes {
        if !data.labels.contains(&c) {
            return Err(Error::EmptyClass { class: c });
        }
    }
    let mut clf = SoftmaxClassifier::zeros(data.num_classes, dim);
    for _ in 0..epochs {
        let (_, gw, gb) = clf.loss_and_gradient(data)?;
        for (w, g) in clf.weight.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
    }
    clf.trained = epochs > 0;
    if !clf.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "classifier diverged at lr {lr}"
        )));
    }
    Ok(clf)
}

pub fn accuracy(clf: &SoftmaxClassifier, test: &DatasetView<'_>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut hits = 0usize;
    for s in &test.samples {
        clf.check(&s.image)?;
        hits += usize::from(clf.predict(s.image.values()) == s.class);
    }
    Ok(hits as f64 / test.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    #[default]
    Mdg,
    Sdg,
    Id,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub target: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Accuracy on the pooled test splits of the domains that were distilled.
    pub id_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub entries: Vec<ReportEntry>,
    /// Mean pseudo-domain purity against the injected styles (SDG only).
    pub purity: Option<f64>,
    pub config_hash: String,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl EvalReport {
    pub fn targets(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| e.target)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.entries
            .iter()
            .map(|e| e.seed)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn target_accuracies(&self, target: usize) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.target == target)
            .map(|e| e.accuracy)
            .collect()
    }

    pub fn target_mean(&self, target: usize) -> f64 {
        mean(&self.target_accuracies(target))
    }

    /// Mean over every (target, seed) entry.
    pub fn mean(&self) -> f64 {
        mean(&self.entries.iter().map(|e| e.accuracy).collect::<Vec<_>>())
    }

    /// Per-seed accuracy averaged over targets.
    pub fn run_means(&self) -> Vec<f64> {
        self.seeds()
            .into_iter()
            .map(|s| {
                mean(
                    &self
                        .entries
                        .iter()
                        .filter(|e| e.seed == s)
                        .map(|e| e.accuracy)
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    /// Standard deviation of the per-run means.
    pub fn std(&self) -> f64 {
        std_dev(&self.run_means())
    }

    pub fn id_mean(&self) -> Option<f64> {
        let ids: Vec<f64> = self.entries.iter().filter_map(|e| e.id_accuracy).collect();
        (!ids.is_empty()).then(|| mean(&ids))
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["target", "seed", "accuracy"]);
        for e in &self.entries {
            t.push(vec![
                e.target.to_string(),
                e.seed.to_string(),
                fmt_sig6(e.accuracy),
            ]);
        }
        t
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let per_target: BTreeMap<String, serde_json::Value> = self
            .targets()
            .into_iter()
            .map(|t| {
                let accs = self.target_accuracies(t);
                (
                    t.to_string(),
                    serde_json::json!({"mean": mean(&accs), "std": std_dev(&accs)}),
                )
            })
            .collect();
        serde_json::json!({
            "protocol": self.protocol,
            "runs": self.seeds().len(),
            "mean": self.mean(),
            "std": self.std(),
            "id_mean": self.id_mean(),
            "purity": self.purity,
            "per_target": per_target,
            "config_hash": self.config_hash,
        })
    }
}

/// Hex SHA-256 of a value's compact JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub runs: usize,
    pub base_seed: u64,
    /// Targets to hold out; empty means every domain.
    pub targets: Vec<usize>,
    /// Featurizer whose hidden maps feed the pseudo-domain style statistics.
    pub style_featurizer: FeaturizerSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epochs: 300,
            lr: 0.01,
            runs: 5,
            base_seed: 0,
            targets: Vec::new(),
            // 1x1 kernels see colour statistics without glyph geometry
            style_featurizer: FeaturizerSpec::Conv {
                out_channels: 16,
                kernel: 1,
            },
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        self.style_featurizer.validate()
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(|r| self.base_seed + r)
    }

    fn resolve_targets(&self, num_domains: usize) -> Result<Vec<usize>> {
        if self.targets.is_empty() {
            return Ok((0..num_domains).collect());
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= num_domains) {
            return Err(Error::UnknownDomain {
                domain: t,
                available: num_domains,
            });
        }
        Ok(self.targets.clone())
    }
}

/// Maps a training source and run seed to a synthetic set.
pub type DistillFn<'a> = dyn Fn(&MultiDomainDataset, u64) -> Result<SyntheticSet> + 'a;

fn provenance_of(data: &MultiDomainDataset, domain: usize) -> BTreeSet<u16> {
    data.samples
        .iter()
        .filter(|s| s.domain == domain)
        .map(|s| s.provenance.domain)
        .collect()
}

/// Fails unless no sample of `input` or `synthetic` originates from `forbidden`.
pub fn audit_isolation(
    forbidden: &BTreeSet<u16>,
    input: &MultiDomainDataset,
    synthetic: Option<&SyntheticSet>,
) -> Result<()> {
    if let Some(s) = input
        .samples
        .iter()
        .find(|s| forbidden.contains(&s.provenance.domain))
    {
        return Err(Error::ProtocolViolation(format!(
            "sample {} of held-out domain {} reached the distillation input",
            s.provenance.index, s.provenance.domain
        )));
    }
    if let Some(set) = synthetic {
        if let Some(p) = set
            .provenance
            .iter()
            .flatten()
            .find(|p| forbidden.contains(&p.domain))
        {
            return Err(Error::ProtocolViolation(format!(
                "synthetic image initialized from held-out sample {} of domain {}",
                p.index, p.domain
            )));
        }
    }
    Ok(())
}

fn fit(set: &SyntheticSet, cfg: &EvalConfig, seed: u64) -> Result<SoftmaxClassifier> {
    train_classifier(&TrainSet::from_synthetic(set), cfg.epochs, cfg.lr, seed)
}

/// Leave-one-domain-out: distill on the other domains, score the held-out one.
pub fn mdg_protocol(
    data: &MultiDomainDataset,
    distill: &DistillFn<'_>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if data.num_domains < 3 {
        return Err(Error::TooFewDomains {
            found: data.num_domains.saturating_sub(1),
        });
    }
    let mut entries = Vec::new();
    for t in cfg.resolve_targets(data.num_domains)? {
        let forbidden = provenance_of(data, t);
        let others: Vec<usize> = (0..data.num_domains).filter(|&d| d != t).collect();
        let source = data.select_domains(&others)?;
        let train = source.filtered(|s| s.split == Split::Train);
        let target_test = data.test().domain(t);
        let source_test = source.test();
        for seed in cfg.seeds() {
            audit_isolation(&forbidden, &train, None)?;
            let set = distill(&train, seed)?;
            audit_isolation(&forbidden, &train, Some(&set))?;
            let clf = fit(&set, cfg, seed)?;
            entries.push(ReportEntry {
                target: t,
                seed,
                accuracy: accuracy(&clf, &target_test)?,
                id_accuracy: Some(accuracy(&clf, &source_test)?),
            });
        }
    }
    Ok(EvalReport {
        protocol: Protocol::Mdg,
        entries,
        purity: None,
        config_hash: String::new(),
    })
}

/// Distill on every domain and score each domain's own test split.
pub fn id_protocol(
    data: &MultiDomainDataset,
    distill: &DistillFn<'_>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let train = data.filtered(|s| s.split == Split::Train);
    let mut entries = Vec::new();
    for seed in cfg.seeds() {
        let set = distill(&train, seed)?;
        let clf = fit(&set, cfg, seed)?;
        for t in cfg.resolve_targets(data.num_domains)? {
            let acc = accuracy(&clf, &data.test().domain(t))?;
            entries.push(ReportEntry {
                target: t,
                seed,
                accuracy: acc,
                id_accuracy: Some(acc),
            });
        }
    }
    entries.sort_by_key(|e| (e.target, e.seed));
    Ok(EvalReport {
        protocol: Protocol::Id,
        entries,
        purity: None,
        config_hash: String::new(),
    })
}

/// Style featurizer used for pseudo-domain assignment in run `seed`.
pub fn style_featurizer(cfg: &EvalConfig, data: &MultiDomainDataset, seed: u64) -> Featurizer {
    let mut rng = SeededRng::new(seed, SeededRng::stream_id(STYLE_STREAM, 0, 0));
    cfg.style_featurizer.sample(data.shape(), &mut rng)
}

/// Single-source protocol: K pseudo-domains stand in for missing domain labels,
/// and every other domain is a target.
pub fn sdg_protocol(
    data: &MultiDomainDataset,
    source_domain: usize,
    k: usize,
    distill: &DistillFn<'_>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "need K >= 2 pseudo-domains, got {k}"
        )));
    }
    if source_domain >= data.num_domains {
        return Err(Error::UnknownDomain {
            domain: source_domain,
            available: data.num_domains,
        });
    }
    let forbidden: BTreeSet<u16> = (0..data.num_domains)
        .filter(|&d| d != source_domain)
        .flat_map(|d| provenance_of(data, d))
        .collect();
    let source = data
        .select_domains(&[source_domain])?
        .filtered(|s| s.split == Split::Train);
    let mut entries = Vec::new();
    let mut purities = Vec::new();
    for seed in cfg.seeds() {
        let psi = style_featurizer(cfg, &source, seed);
        let (pseudo, model) = assign_pseudo_domains(&source, &psi, k, seed)?;
        let styles: Vec<usize> = source
            .samples
            .iter()
            .map(|s| s.provenance.style as usize)
            .collect();
        purities.push(purity(&model.assignment, &styles));
        audit_isolation(&forbidden, &pseudo, None)?;
        let set = distill(&pseudo, seed)?;
        audit_isolation(&forbidden, &pseudo, Some(&set))?;
        let clf = fit(&set, cfg, seed)?;
        let id = accuracy(&clf, &data.test().domain(source_domain))?;
        for t in (0..data.num_domains).filter(|&d| d != source_domain) {
            entries.push(ReportEntry {
                target: t,
                seed,
                accuracy: accuracy(&clf, &data.test().domain(t))?,
                id_accuracy: Some(id),
            });
        }
    }
    entries.sort_by_key(|e| (e.target, e.seed));
    Ok(EvalReport {
        protocol: Protocol::Sdg,
        entries,
        purity: Some(mean(&purities)),
        config_hash: String::new(),
    })
}
