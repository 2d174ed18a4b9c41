//! Pseudo-domain discovery for single-source data.
//!
//! Style statistics (per-channel mean and standard deviation of the hidden
//! activation maps) are z-normalized and clustered with k-means++ seeded
//! Lloyd iterations; the clusters replace the missing domain labels.

use crate::data::MultiDomainDataset;
use crate::error::{Error, Result};
use crate::featurizer::Featurizer;
use crate::numerics::{RealGrid, SeededRng};

const KMEANS_STREAM: u64 = 0x6b6d_6e73;

/// `[means..., stds...]` of the hidden activation channels.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVector(pub Vec<f64>);

pub fn style_stats(x: &RealGrid, psi: &Featurizer) -> Result<StyleVector> {
    let hidden = psi.hidden_activations(x)?;
    let k = hidden.shape().channels;
    let mut out = vec![0.0; 2 * k];
    for c in 0..k {
        let plane = hidden.channel(c);
        let n = plane.len() as f64;
        let rough = plane.iter().sum::<f64>() / n;
        // one correction pass makes constant planes come out exactly
        let mean = rough + plane.iter().map(|v| v - rough).sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out[c] = mean;
        out[k + c] = var.sqrt();
    }
    Ok(StyleVector(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    /// Centroids in z-normalized style space.
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every centroid update.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-dimension z-scores; constant dimensions are only centred.
pub fn z_normalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vectors.len() as f64;
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for v in vectors {
        for ((s, x), m) in scale.iter_mut().zip(v).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    let scale: Vec<f64> = scale
        .into_iter()
        .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    vectors
        .iter()
        .map(|v| {
            v.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect()
}

/// Nearest centroid; lowest index wins exact ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.below(points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        assignment[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

/// Restarts per clustering; the lowest final inertia wins.
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub normalize: bool,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iters: 100,
            normalize: true,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// k-means with k-means++ seeding on z-normalized inputs.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    kmeans_with(
        vectors,
        k,
        seed,
        &KMeansOptions {
            max_iters,
            ..KMeansOptions::default()
        },
    )
}

pub fn kmeans_with(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterModel> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "k-means needs K >= 2, got {k}"
        )));
    }
    if vectors.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            found: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::shape(
            format!("{dim}-dimensional vectors"),
            "ragged input",
        ));
    }
    let points = if opts.normalize {
        z_normalize(vectors)
    } else {
        vectors.to_vec()
    };
    let mut best: Option<ClusterModel> = None;
    for restart in 0..opts.restarts.max(1) {
        let model = lloyd(&points, k, seed, restart as u64, opts.max_iters);
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, restart: u64, max_iters: usize) -> ClusterModel {
    let dim = points[0].len();
    let mut rng = SeededRng::new(seed, SeededRng::stream_id(KMEANS_STREAM, k as u64, restart));
    let mut centroids = plus_plus_init(&points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    repair_empty(&points, &mut assignment, &mut centroids);
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        history.push(
            points
                .iter()
                .zip(&assignment)
                .map(|(p, &a)| sq_dist(p, &centroids[a]))
                .sum(),
        );
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(&points, &mut next, &mut centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    ClusterModel {
        centroids,
        inertia: *history.last().unwrap(),
        assignment,
        inertia_history: history,
        iterations,
    }
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(assignment: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(assignment.len(), truth.len());
    if assignment.is_empty() {
        return 0.0;
    }
    let k = assignment.iter().max().unwrap() + 1;
    let t = truth.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; t]; k];
    for (&a, &b) in assignment.iter().zip(truth) {
        table[a][b] += 1;
    }
    let hits: usize = table
        .iter()
        .map(|row| row.iter().max().copied().unwrap_or(0))
        .sum();
    hits as f64 / assignment.len() as f64
}

/// Relabels every sample of `data` with a K-means pseudo-domain.
pub fn assign_pseudo_domains(
    data: &MultiDomainDataset,
    psi: &Featurizer,
    k: usize,
    seed: u64,
) -> Result<(MultiDomainDataset, ClusterModel)> {
    let styles = data
        .samples
        .iter()
        .map(|s| style_stats(&s.image, psi).map(|v| v.0))
        .collect::<Result<Vec<_>>>()?;
    let model = kmeans(&styles, k, seed, 100)?;
    let mut out = data.clone();
    for (s, &a) in out.samples.iter_mut().zip(&model.assignment) {
        s.domain = a;
    }
    out.num_domains = k;
    Ok((out, model))
}
