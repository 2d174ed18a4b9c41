//! Distribution matching loss and its exact pixel-space gradient.
//!
//! For a synthetic set with per-class feature means `mu_hat_c` and real
//! per-class means `mu_c` the loss is `sum_c |mu_hat_c - mu_c|^2`. Each
//! synthetic member of class `c` receives the covector
//! `(2 / |synthetic_c|) * (mu_hat_c - mu_c)`, pulled back through the
//! featurizer. Means are taken over the full view, never minibatched here.

use crate::data::{DatasetView, MultiDomainDataset};
use crate::distill::SyntheticSet;
use crate::error::{Error, Result};
use crate::featurizer::{FeatureVector, Featurizer};
use crate::numerics::RealGrid;

/// Sample indices grouped by class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassPartition {
    members: Vec<Vec<usize>>,
}

impl ClassPartition {
    /// Fails with [`Error::EmptyClass`] if some class in `0..num_classes` has no member.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); num_classes];
        for (i, &c) in labels.iter().enumerate() {
            members
                .get_mut(c)
                .ok_or_else(|| Error::DimensionMismatch(format!("label {c} >= C = {num_classes}")))?
                .push(i);
        }
        if let Some(class) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::EmptyClass { class });
        }
        Ok(ClassPartition { members })
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }
}

/// Per-sample gradients of a matching loss together with the loss value.
#[derive(Clone, Debug, PartialEq)]
pub struct DmGradient {
    pub grads: Vec<RealGrid>,
    pub loss: f64,
}

fn mean_of(vectors: impl Iterator<Item = FeatureVector>, len: usize) -> (FeatureVector, usize) {
    let mut acc = vec![0.0; len];
    let mut n = 0usize;
    for v in vectors {
        for (a, b) in acc.iter_mut().zip(v.values()) {
            *a += b;
        }
        n += 1;
    }
    let inv = 1.0 / n.max(1) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    (FeatureVector(acc), n)
}

/// Mean feature vector over the class-`class` samples of `view`.
pub fn class_feature_mean(
    view: &DatasetView<'_>,
    class: usize,
    psi: &Featurizer,
) -> Result<FeatureVector> {
    let mut feats = Vec::new();
    for s in view.samples.iter().filter(|s| s.class == class) {
        feats.push(psi.features(&s.image)?);
    }
    if feats.is_empty() {
        return Err(Error::EmptyClass { class });
    }
    Ok(mean_of(feats.into_iter(), psi.output_len()).0)
}

/// Per-class real feature means for every class of the view.
pub fn real_targets(view: &DatasetView<'_>, psi: &Featurizer) -> Result<Vec<FeatureVector>> {
    (0..view.num_classes)
        .map(|c| class_feature_mean(view, c, psi))
        .collect()
}

/// Per-class mean images; for a linear featurizer `psi(mean) = mean(psi)`.
pub fn class_pixel_means(view: &DatasetView<'_>) -> Result<Vec<RealGrid>> {
    (0..view.num_classes)
        .map(|c| {
            let mut acc = RealGrid::zeros(view.shape);
            let mut n = 0usize;
            for s in view.samples.iter().filter(|s| s.class == c) {
                acc.axpy(1.0, &s.image);
                n += 1;
            }
            if n == 0 {
                return Err(Error::EmptyClass { class: c });
            }
            Ok(acc.scaled(1.0 / n as f64))
        })
        .collect()
}

/// Synthetic-side forward pass, shared by every loss evaluated in one iteration.
#[derive(Clone, Debug)]
pub struct SyntheticFeatures {
    pub partition: ClassPartition,
    pub class_means: Vec<FeatureVector>,
}

pub fn synthetic_features(synth: &SyntheticSet, psi: &Featurizer) -> Result<SyntheticFeatures> {
    let partition = ClassPartition::from_labels(&synth.labels, synth.num_classes)?;
    let mut class_means = Vec::with_capacity(partition.num_classes());
    for c in 0..partition.num_classes() {
        let feats = partition
            .members(c)
            .iter()
            .map(|&i| psi.features(&synth.images[i]))
            .collect::<Result<Vec<_>>>()?;
        class_means.push(mean_of(feats.into_iter(), psi.output_len()).0);
    }
    Ok(SyntheticFeatures {
        partition,
        class_means,
    })
}

/// Loss and gradients against fixed per-class targets.
pub fn gradient_against(
    synth: &SyntheticSet,
    sf: &SyntheticFeatures,
    targets: &[FeatureVector],
    psi: &Featurizer,
) -> Result<DmGradient> {
    if targets.len() != sf.partition.num_classes() {
        return Err(Error::shape(
            format!("{} class targets", sf.partition.num_classes()),
            targets.len(),
        ));
    }
    let mut grads: Vec<Option<RealGrid>> = vec![None; synth.images.len()];
    let mut loss = 0.0;
    for (c, (mean, target)) in sf.class_means.iter().zip(targets).enumerate() {
        loss += mean.squared_distance(target);
        let members = sf.partition.members(c);
        let scale = 2.0 / members.len() as f64;
        let upstream = FeatureVector(
            mean.values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| scale * (a - b))
                .collect(),
        );
        if psi.is_linear() {
            let g = psi.vjp(&synth.images[members[0]], &upstream)?;
            for &i in members {
                grads[i] = Some(g.clone());
            }
        } else {
            for &i in members {
                grads[i] = Some(psi.vjp(&synth.images[i], &upstream)?);
            }
        }
    }
    Ok(DmGradient {
        grads: grads
            .into_iter()
            .map(|g| g.expect("partition covers every sample"))
            .collect(),
        loss,
    })
}

pub fn dm_loss(synth: &SyntheticSet, real: &DatasetView<'_>, psi: &Featurizer) -> Result<f64> {
    let sf = synthetic_features(synth, psi)?;
    let targets = real_targets(real, psi)?;
    Ok(sf
        .class_means
        .iter()
        .zip(&targets)
        .map(|(a, b)| a.squared_distance(b))
        .sum())
}

pub fn dm_gradient(
    synth: &SyntheticSet,
    real: &DatasetView<'_>,
    psi: &Featurizer,
) -> Result<DmGradient> {
    let sf = synthetic_features(synth, psi)?;
    let targets = real_targets(real, psi)?;
    gradient_against(synth, &sf, &targets, psi)
}

/// [`dm_gradient`] with the real side restricted to domain `s` of `source`.
pub fn domain_gradient(
    synth: &SyntheticSet,
    source: &MultiDomainDataset,
    s: usize,
    psi: &Featurizer,
) -> Result<DmGradient> {
    if s >= source.num_domains {
        return Err(Error::UnknownDomain {
            domain: s,
            available: source.num_domains,
        });
    }
    dm_gradient(synth, &source.view().domain(s), psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Provenance, Sample, Split};
    use crate::featurizer::{FeaturizerSpec, LinearFeaturizer};
    use crate::numerics::{SeededRng, Shape};

    fn identity(shape: Shape) -> Featurizer {
        let d = shape.len();
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Featurizer::Linear(LinearFeaturizer::from_weights(shape, d, w).unwrap())
    }

    fn sample(image: RealGrid, class: usize, domain: usize) -> Sample {
        Sample {
            image,
            class,
            domain,
            split: Split::Train,
            provenance: Provenance {
                domain: domain as u16,
                style: 0,
                index: 0,
            },
        }
    }

    fn dataset(samples: Vec<Sample>, c: usize, s: usize, shape: Shape) -> MultiDomainDataset {
        MultiDomainDataset {
            samples,
            num_classes: c,
            num_domains: s,
            meta: DatasetMeta {
                name: "t".into(),
                shape,
                seed: 0,
            },
        }
    }

    #[test]
    fn hand_case_loss_and_gradient() {
        let shape = Shape::new(1, 2, 1);
        let psi = identity(shape);
        let synth = SyntheticSet::from_parts(
            vec![RealGrid::from_vec(shape, vec![1.0, 0.0]).unwrap()],
            vec![0],
            vec![0],
            1,
            1,
        );
        let real = dataset(vec![sample(RealGrid::zeros(shape), 0, 0)], 1, 1, shape);
        assert!((dm_loss(&synth, &real.view(), &psi).unwrap() - 1.0).abs() < 1e-15);
        let g = dm_gradient(&synth, &real.view(), &psi).unwrap();
        assert_eq!(g.grads[0].values(), &[2.0, 0.0]);
    }

    #[test]
    fn class_mean_cases() {
        let shape = Shape::new(1, 3, 1);
        let psi = identity(shape);
        let f = RealGrid::from_vec(shape, vec![1.0, -2.0, 0.5]).unwrap();
        let one = dataset(vec![sample(f.clone(), 0, 0)], 1, 1, shape);
        assert_eq!(
            class_feature_mean(&one.view(), 0, &psi).unwrap().0,
            f.values()
        );
        let pair = dataset(
            vec![sample(f.clone(), 0, 0), sample(f.scaled(-1.0), 0, 0)],
            1,
            1,
            shape,
        );
        assert!(class_feature_mean(&pair.view(), 0, &psi)
            .unwrap()
            .0
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert!(matches!(
            class_feature_mean(&pair.view(), 1, &psi),
            Err(Error::EmptyClass { class: 1 })
        ));
    }

    #[test]
    fn class_mean_matches_accumulate_and_divide() {
        let mut rng = SeededRng::new(2, 0);
        let shape = Shape::new(3, 3, 2);
        let psi = FeaturizerSpec::Conv {
            out_channels: 4,
            kernel: 3,
        }
        .sample(shape, &mut rng);
        let samples: Vec<Sample> = (0..10)
            .map(|_| {
                sample(
                    RealGrid::from_vec(shape, (0..18).map(|_| rng.normal()).collect()).unwrap(),
                    0,
                    0,
                )
            })
            .collect();
        let ds = dataset(samples, 1, 1, shape);
        let got = class_feature_mean(&ds.view(), 0, &psi).unwrap();
        let mut oracle = vec![0.0; psi.output_len()];
        for s in &ds.samples {
            let f = psi.features(&s.image).unwrap();
            for (o, v) in oracle.iter_mut().zip(f.values()) {
                *o += v;
            }
        }
        for (o, g) in oracle.iter().zip(got.values()) {
            assert!((o / 10.0 - g).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_means_give_zero_loss_and_gradient() {
        let shape = Shape::new(2, 2, 1);
        let psi = identity(shape);
        let a = RealGrid::from_vec(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = RealGrid::from_vec(shape, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let real = dataset(
            vec![sample(a.clone(), 0, 0), sample(b.clone(), 1, 0)],
            2,
            1,
            shape,
        );
        let synth = SyntheticSet::from_parts(vec![b, a], vec![1, 0], vec![0, 0], 2, 1);
        let g = dm_gradient(&synth, &real.view(), &psi).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grads.iter().all(|g| g.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_pixel_means_agree_with_feature_means() {
        let mut rng = SeededRng::new(3, 0);
        let shape = Shape::new(4, 4, 3);
        let psi = Featurizer::Linear(LinearFeaturizer::random(shape, 16, &mut rng));
        let samples: Vec<Sample> = (0..12)
            .map(|i| {
                sample(
                    RealGrid::from_vec(shape, (0..48).map(|_| rng.normal()).collect()).unwrap(),
                    i % 3,
                    0,
                )
            })
            .collect();
        let ds = dataset(samples, 3, 1, shape);
        let direct = real_targets(&ds.view(), &psi).unwrap();
        let via_pixels = class_pixel_means(&ds.view()).unwrap();
        for (d, p) in direct.iter().zip(&via_pixels) {
            let f = psi.features(p).unwrap();
            for (a, b) in d.values().iter().zip(f.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_domain_restriction_is_the_full_set() {
        let mut rng = SeededRng::new(4, 0);
        let shape = Shape::new(3, 3, 1);
        let psi = Featurizer::Linear(LinearFeaturizer::random(shape, 5, &mut rng));
        let grid = |rng: &mut SeededRng| {
            RealGrid::from_vec(shape, (0..9).map(|_| rng.normal()).collect()).unwrap()
        };
        let ds = dataset(
            (0..6).map(|i| sample(grid(&mut rng), i % 2, 0)).collect(),
            2,
            1,
            shape,
        );
        let synth = SyntheticSet::from_parts(
            vec![grid(&mut rng), grid(&mut rng), grid(&mut rng)],
            vec![0, 1, 1],
            vec![0, 0, 0],
            2,
            1,
        );
        let full = dm_gradient(&synth, &ds.view(), &psi).unwrap();
        let dom = domain_gradient(&synth, &ds, 0, &psi).unwrap();
        assert_eq!(full, dom);
        assert!(matches!(
            domain_gradient(&synth, &ds, 1, &psi),
            Err(Error::UnknownDomain { .. })
        ));
    }
}
