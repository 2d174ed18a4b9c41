use sgs_core::data::{DatasetMeta, MultiDomainDataset, Provenance, Sample, Split};
use sgs_core::distill::SyntheticSet;
use sgs_core::dm::{dm_gradient, dm_loss, domain_gradient};
use sgs_core::eval::{SoftmaxClassifier, TrainSet};
use sgs_core::featurizer::{FeatureVector, Featurizer, FeaturizerSpec};
use sgs_core::numerics::{RealGrid, SeededRng, Shape};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;
const MARGIN: f64 = 1e-3;

fn random_grid(shape: Shape, rng: &mut SeededRng) -> RealGrid {
    RealGrid::from_vec(shape, (0..shape.len()).map(|_| rng.normal()).collect()).unwrap()
}

fn unit_direction(shape: Shape, rng: &mut SeededRng) -> RealGrid {
    let g = random_grid(shape, rng);
    let n = g.norm();
    g.scaled(1.0 / n)
}

fn source(
    shape: Shape,
    classes: usize,
    domains: usize,
    per_cell: usize,
    rng: &mut SeededRng,
) -> MultiDomainDataset {
    let mut samples = Vec::new();
    for d in 0..domains {
        for c in 0..classes {
            for j in 0..per_cell {
                let mut image = random_grid(shape, rng);
                // domain offset so the per-domain targets differ
                image
                    .values_mut()
                    .iter_mut()
                    .for_each(|v| *v += 0.5 * d as f64);
                samples.push(Sample {
                    image,
                    class: c,
                    domain: d,
                    split: Split::Train,
                    provenance: Provenance {
                        domain: d as u16,
                        style: 0,
                        index: j as u32,
                    },
                });
            }
        }
    }
    MultiDomainDataset {
        samples,
        num_classes: classes,
        num_domains: domains,
        meta: DatasetMeta {
            name: "fd".into(),
            shape,
            seed: 0,
        },
    }
}

fn synthetic(
    shape: Shape,
    classes: usize,
    ipc: usize,
    domains: usize,
    psi: &Featurizer,
    rng: &mut SeededRng,
) -> SyntheticSet {
    let mut images = Vec::new();
    for _ in 0..classes * ipc {
        // resample until every pre-activation clears the kink margin
        loop {
            let g = random_grid(shape, rng);
            if psi.preactivation_margin(&g) > MARGIN {
                images.push(g);
                break;
            }
        }
    }
    let labels = (0..classes * ipc).map(|i| i / ipc).collect();
    let assigned = (0..classes * ipc).map(|i| i % domains).collect();
    SyntheticSet::from_parts(images, labels, assigned, classes, domains)
}

fn shifted(set: &SyntheticSet, dirs: &[RealGrid], h: f64) -> SyntheticSet {
    let mut out = set.clone();
    for (x, d) in out.images.iter_mut().zip(dirs) {
        x.axpy(h, d);
    }
    out
}

fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8)
}

fn check_loss_gradient(spec: FeaturizerSpec, shape: Shape, seed: u64) {
    let mut rng = SeededRng::new(seed, 0);
    let psi = spec.sample(shape, &mut rng);
    let src = source(shape, 2, 3, 4, &mut rng);
    let view = src.view();
    let mut probes = 0;
    while probes < 100 {
        let set = synthetic(shape, 2, 3, 3, &psi, &mut rng);
        let dirs: Vec<RealGrid> = set
            .images
            .iter()
            .map(|_| unit_direction(shape, &mut rng))
            .collect();
        let domain = probes % 3;

        let g = dm_gradient(&set, &view, &psi).unwrap();
        let analytic: f64 = g.grads.iter().zip(&dirs).map(|(a, d)| dot(a, d)).sum();
        let fd = (dm_loss(&shifted(&set, &dirs, STEP), &view, &psi).unwrap()
            - dm_loss(&shifted(&set, &dirs, -STEP), &view, &psi).unwrap())
            / (2.0 * STEP);
        assert!(
            relative_error(fd, analytic) < TOL,
            "pooled fd {fd} analytic {analytic}"
        );

        let gd = domain_gradient(&set, &src, domain, &psi).unwrap();
        let analytic: f64 = gd.grads.iter().zip(&dirs).map(|(a, d)| dot(a, d)).sum();
        let dview = src.view().domain(domain);
        let fd = (dm_loss(&shifted(&set, &dirs, STEP), &dview, &psi).unwrap()
            - dm_loss(&shifted(&set, &dirs, -STEP), &dview, &psi).unwrap())
            / (2.0 * STEP);
        assert!(
            relative_error(fd, analytic) < TOL,
            "domain fd {fd} analytic {analytic}"
        );
        probes += 1;
    }
}

fn dot(a: &RealGrid, b: &RealGrid) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

#[test]
fn dm_and_domain_gradients_linear() {
    check_loss_gradient(
        FeaturizerSpec::Linear { features: 12 },
        Shape::new(4, 4, 2),
        11,
    );
}

#[test]
fn dm_and_domain_gradients_conv() {
    check_loss_gradient(
        FeaturizerSpec::Conv {
            out_channels: 3,
            kernel: 3,
        },
        Shape::new(4, 4, 2),
        12,
    );
}

#[test]
fn vjp_matches_finite_differences() {
    let shape = Shape::new(5, 5, 2);
    for (k, spec) in [
        FeaturizerSpec::Linear { features: 10 },
        FeaturizerSpec::Conv {
            out_channels: 4,
            kernel: 3,
        },
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = SeededRng::new(100 + k as u64, 0);
        let psi = spec.sample(shape, &mut rng);
        let mut checked = 0;
        while checked < 100 {
            let x = random_grid(shape, &mut rng);
            if psi.preactivation_margin(&x) <= MARGIN {
                continue;
            }
            let u = FeatureVector((0..psi.output_len()).map(|_| rng.normal()).collect());
            let v = unit_direction(shape, &mut rng);
            let f = |h: f64| {
                let mut xs = x.clone();
                xs.axpy(h, &v);
                let feats = psi.features(&xs).unwrap();
                feats
                    .values()
                    .iter()
                    .zip(u.values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let fd = (f(STEP) - f(-STEP)) / (2.0 * STEP);
            let analytic = dot(&psi.vjp(&x, &u).unwrap(), &v);
            assert!(
                relative_error(fd, analytic) < TOL,
                "fd {fd} analytic {analytic}"
            );
            checked += 1;
        }
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let shape = Shape::new(3, 3, 1);
    let mut rng = SeededRng::new(7, 0);
    let images: Vec<RealGrid> = (0..12).map(|_| random_grid(shape, &mut rng)).collect();
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let data = TrainSet {
        inputs: images.iter().collect(),
        labels,
        num_classes: 3,
    };
    let mut clf = SoftmaxClassifier::zeros(3, 9);
    clf.weight.iter_mut().for_each(|w| *w = 0.3 * rng.normal());
    clf.bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
    let (_, gw, gb) = clf.loss_and_gradient(&data).unwrap();
    for probe in 0..30 {
        let dw: Vec<f64> = (0..27).map(|_| rng.normal()).collect();
        let db: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let at = |h: f64| {
            let mut c = clf.clone();
            c.weight.iter_mut().zip(&dw).for_each(|(w, d)| *w += h * d);
            c.bias.iter_mut().zip(&db).for_each(|(b, d)| *b += h * d);
            c.loss_and_gradient(&data).unwrap().0
        };
        let fd = (at(STEP) - at(-STEP)) / (2.0 * STEP);
        let analytic: f64 = gw.iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>()
            + gb.iter().zip(&db).map(|(a, b)| a * b).sum::<f64>();
        assert!(
            relative_error(fd, analytic) < TOL,
            "probe {probe}: fd {fd} analytic {analytic}"
        );
    }
}

#[test]
fn cross_entropy_descent_is_monotone_at_small_rate() {
    let spec = sgs_core::ToySpec {
        classes: 3,
        train_per_cell: 8,
        test_per_cell: 1,
        ..sgs_core::ToySpec::default()
    };
    let ds = sgs_core::data::generate_toy(&spec, 4).unwrap();
    let train = ds.train();
    let data = TrainSet::from_view(&train);
    let mut clf = SoftmaxClassifier::zeros(3, spec.shape().len());
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        let (loss, gw, gb) = clf.loss_and_gradient(&data).unwrap();
        assert!(loss <= last + 1e-12, "loss rose from {last} to {loss}");
        last = loss;
        clf.weight
            .iter_mut()
            .zip(&gw)
            .for_each(|(w, g)| *w -= 0.01 * g);
        clf.bias
            .iter_mut()
            .zip(&gb)
            .for_each(|(b, g)| *b -= 0.01 * g);
    }
}
