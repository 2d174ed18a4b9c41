//! Fixed random feature extractors with exact vector-Jacobian products.
//!
//! Two families stand in for the randomly initialized encoders used by
//! distribution matching: a dense linear map and a single convolution block
//! (3x3-style kernels, zero padding, stride 1, rectifier, global average pool).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RealGrid, SeededRng, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(len: usize) -> Self {
        FeatureVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// `features(x) = W * flatten(x)`; `W` is `F x D` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFeaturizer {
    input: Shape,
    features: usize,
    weight: Vec<f64>,
}

impl LinearFeaturizer {
    /// Gaussian weights with variance `1 / D`.
    pub fn random(input: Shape, features: usize, rng: &mut SeededRng) -> Self {
        let d = input.len();
        let scale = 1.0 / (d as f64).sqrt();
        let weight = (0..features * d).map(|_| scale * rng.normal()).collect();
        LinearFeaturizer {
            input,
            features,
            weight,
        }
    }

    pub fn from_weights(input: Shape, features: usize, weight: Vec<f64>) -> Result<Self> {
        if features == 0 || weight.len() != features * input.len() {
            return Err(Error::shape(
                format!("{features}x{} weights", input.len()),
                format!("{} weights", weight.len()),
            ));
        }
        Ok(LinearFeaturizer {
            input,
            features,
            weight,
        })
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(x.len())
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    fn transpose_apply(&self, u: &[f64]) -> Vec<f64> {
        let d = self.input.len();
        let mut out = vec![0.0; d];
        for (row, &ui) in self.weight.chunks_exact(d).zip(u) {
            if ui == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += ui * w;
            }
        }
        out
    }
}

/// One convolution block: `relu(conv(x) + b)` followed by a global average per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFeaturizer {
    input: Shape,
    out_channels: usize,
    kernel: usize,
    /// `[out][in][ky][kx]`, row-major.
    kernels: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvFeaturizer {
    /// Gaussian kernels with variance `1 / (channels * k * k)`, zero bias.
    pub fn random(input: Shape, out_channels: usize, kernel: usize, rng: &mut SeededRng) -> Self {
        let fan_in = input.channels * kernel * kernel;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let kernels = (0..out_channels * fan_in)
            .map(|_| scale * rng.normal())
            .collect();
        ConvFeaturizer {
            input,
            out_channels,
            kernel,
            kernels,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn from_parts(
        input: Shape,
        out_channels: usize,
        kernel: usize,
        kernels: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel side {kernel} must be odd"
            )));
        }
        let expected = out_channels * input.channels * kernel * kernel;
        if out_channels == 0 || kernels.len() != expected || bias.len() != out_channels {
            return Err(Error::shape(
                format!("{expected} kernel weights and {out_channels} biases"),
                format!("{} and {}", kernels.len(), bias.len()),
            ));
        }
        Ok(ConvFeaturizer {
            input,
            out_channels,
            kernel,
            kernels,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    fn k(&self, o: usize, c: usize, i: usize, j: usize) -> f64 {
        let k = self.kernel;
        self.kernels[((o * self.input.channels + c) * k + i) * k + j]
    }

    /// Pre-activation maps, one `H x W` plane per output channel.
    fn preactivations(&self, x: &RealGrid) -> Vec<f64> {
        let Shape {
            height: h,
            width: w,
            channels,
        } = self.input;
        let r = (self.kernel / 2) as i64;
        let mut z = vec![0.0; self.out_channels * h * w];
        for o in 0..self.out_channels {
            let plane = &mut z[o * h * w..(o + 1) * h * w];
            plane.fill(self.bias[o]);
            for c in 0..channels {
                let src = x.channel(c);
                for i in 0..self.kernel {
                    for j in 0..self.kernel {
                        let kv = self.k(o, c, i, j);
                        let (oy, ox) = (i as i64 - r, j as i64 - r);
                        for y in 0..h {
                            let sy = y as i64 + oy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                            let drow = &mut plane[y * w..(y + 1) * w];
                            let x0 = (-ox).max(0) as usize;
                            let x1 = (w as i64 - ox).min(w as i64) as usize;
                            for xx in x0..x1 {
                                drow[xx] += kv * srow[(xx as i64 + ox) as usize];
                            }
                        }
                    }
                }
            }
        }
        z
    }

    fn vjp(&self, x: &RealGrid, upstream: &[f64]) -> RealGrid {
        let Shape {
            height: h,
            width: w,
            channels,
        } = self.input;
        let z = self.preactivations(x);
        let r = (self.kernel / 2) as i64;
        let inv = 1.0 / (h * w) as f64;
        let mut out = RealGrid::zeros(self.input);
        for o in 0..self.out_channels {
            if upstream[o] == 0.0 {
                continue;
            }
            // subgradient 0 at the kink
            let dz: Vec<f64> = z[o * h * w..(o + 1) * h * w]
                .iter()
                .map(|&v| if v > 0.0 { upstream[o] * inv } else { 0.0 })
                .collect();
            for c in 0..channels {
                let p = h * w;
                let dst = &mut out.values_mut()[c * p..(c + 1) * p];
                for i in 0..self.kernel {
                    for j in 0..self.kernel {
                        let kv = self.k(o, c, i, j);
                        let (oy, ox) = (i as i64 - r, j as i64 - r);
                        for y in 0..h {
                            let sy = y as i64 + oy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let x0 = (-ox).max(0) as usize;
                            let x1 = (w as i64 - ox).min(w as i64) as usize;
                            for xx in x0..x1 {
                                dst[sy as usize * w + (xx as i64 + ox) as usize] +=
                                    kv * dz[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Featurizer {
    Linear(LinearFeaturizer),
    Conv(ConvFeaturizer),
}

impl Featurizer {
    pub fn input_shape(&self) -> Shape {
        match self {
            Featurizer::Linear(l) => l.input,
            Featurizer::Conv(c) => c.input,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Featurizer::Linear(l) => l.features,
            Featurizer::Conv(c) => c.out_channels,
        }
    }

    /// True when the Jacobian does not depend on the input point.
    pub fn is_linear(&self) -> bool {
        matches!(self, Featurizer::Linear(_))
    }

    pub fn features(&self, x: &RealGrid) -> Result<FeatureVector> {
        x.ensure_shape(self.input_shape())?;
        Ok(FeatureVector(match self {
            Featurizer::Linear(l) => l.forward(x.values()),
            Featurizer::Conv(c) => {
                let z = c.preactivations(x);
                let p = c.input.plane();
                z.chunks_exact(p)
                    .map(|plane| plane.iter().map(|v| v.max(0.0)).sum::<f64>() / p as f64)
                    .collect()
            }
        }))
    }

    /// `J^T * upstream` with `J = d features / d x`.
    pub fn vjp(&self, x: &RealGrid, upstream: &FeatureVector) -> Result<RealGrid> {
        x.ensure_shape(self.input_shape())?;
        if upstream.len() != self.output_len() {
            return Err(Error::shape(
                format!("{} upstream values", self.output_len()),
                upstream.len(),
            ));
        }
        match self {
            Featurizer::Linear(l) => {
                RealGrid::from_vec(l.input, l.transpose_apply(upstream.values()))
            }
            Featurizer::Conv(c) => Ok(c.vjp(x, upstream.values())),
        }
    }

    /// Post-rectifier maps before pooling, one plane per output channel.
    pub fn hidden_activations(&self, x: &RealGrid) -> Result<RealGrid> {
        match self {
            Featurizer::Linear(_) => Err(Error::NotConvolutional),
            Featurizer::Conv(c) => {
                x.ensure_shape(c.input)?;
                let z = c.preactivations(x);
                RealGrid::from_vec(
                    Shape::new(c.input.height, c.input.width, c.out_channels),
                    z.into_iter().map(|v| v.max(0.0)).collect(),
                )
            }
        }
    }

    /// Smallest `|pre-activation|` at `x`; infinite for linear maps.
    pub fn preactivation_margin(&self, x: &RealGrid) -> f64 {
        match self {
            Featurizer::Linear(_) => f64::INFINITY,
            Featurizer::Conv(c) => c
                .preactivations(x)
                .iter()
                .fold(f64::INFINITY, |m, v| m.min(v.abs())),
        }
    }
}

/// Recipe for drawing a fresh featurizer from a seed stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeaturizerSpec {
    Linear { features: usize },
    Conv { out_channels: usize, kernel: usize },
}

impl Default for FeaturizerSpec {
    fn default() -> Self {
        FeaturizerSpec::Linear { features: 64 }
    }
}

impl FeaturizerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeaturizerSpec::Linear { features } if features == 0 => Err(Error::InvalidConfig(
                "linear featurizer needs >= 1 feature".into(),
            )),
            FeaturizerSpec::Conv {
                out_channels,
                kernel,
            } if out_channels == 0 || kernel % 2 == 0 => Err(Error::InvalidConfig(
                "conv featurizer needs >= 1 output channel and an odd kernel".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, input: Shape, rng: &mut SeededRng) -> Featurizer {
        match *self {
            FeaturizerSpec::Linear { features } => {
                Featurizer::Linear(LinearFeaturizer::random(input, features, rng))
            }
            FeaturizerSpec::Conv {
                out_channels,
                kernel,
            } => Featurizer::Conv(ConvFeaturizer::random(input, out_channels, kernel, rng)),
        }
    }
}
