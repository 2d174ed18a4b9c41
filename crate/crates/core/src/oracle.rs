//! Monte-Carlo model of per-domain spectral gradients at one frequency bin.
//!
//! Each domain contributes `A * exp(j * (phi0 + delta))` with magnitude `A`
//! uniform on `[m, M]` and phase noise `delta` uniform on `[-a, a]`,
//! independent of each other. The phase concentration of that family is
//! `sin(a) / a`. The simulation tracks the consensus `mean(G)` and the class
//! signal `mean(G) * r` as the number of domains grows.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_sig6, CsvTable};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::surgery::{resultant_length, DEFAULT_EPSILON};

const ORACLE_STREAM: u64 = 0x6f72_6163;
const SWEEP_STREAM: u64 = 0x7377_6570;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralModel {
    /// Shared signal; only its phase enters the draws.
    pub shared: Complex64,
    /// Half-width of the phase noise, in `[0, pi]`.
    pub half_width: f64,
    pub mag_min: f64,
    pub mag_max: f64,
    pub trials: usize,
}

impl SpectralModel {
    pub fn new(
        shared: Complex64,
        half_width: f64,
        mag_min: f64,
        mag_max: f64,
        trials: usize,
    ) -> Result<Self> {
        let m = SpectralModel {
            shared,
            half_width,
            mag_min,
            mag_max,
            trials,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=PI).contains(&self.half_width) {
            return Err(Error::OutOfRange {
                value: self.half_width,
                lo: 0.0,
                hi: PI,
            });
        }
        if !(self.mag_min > 0.0 && self.mag_min <= self.mag_max && self.mag_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "magnitude bounds need 0 < m <= M, got [{}, {}]",
                self.mag_min, self.mag_max
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("need at least one trial".into()));
        }
        Ok(())
    }

    /// True phase concentration `sin(a) / a` (1 at `a = 0`).
    pub fn concentration(&self) -> f64 {
        if self.half_width == 0.0 {
            1.0
        } else {
            self.half_width.sin() / self.half_width
        }
    }
}

pub fn sample_domain_spectra(
    model: &SpectralModel,
    s: usize,
    rng: &mut SeededRng,
) -> Vec<Complex64> {
    let phi0 = model.shared.arg();
    (0..s)
        .map(|_| {
            let a = rng.uniform_range(model.mag_min, model.mag_max);
            let delta = if model.half_width == 0.0 {
                0.0
            } else {
                rng.uniform_range(-model.half_width, model.half_width)
            };
            Complex64::from_polar(a, phi0 + delta)
        })
        .collect()
}

/// Same formula as the per-bin resultant in [`crate::surgery::consensus`].
pub fn empirical_resultant(samples: &[Complex64], epsilon: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: samples.len(),
        });
    }
    let (sum, abs_sum) = sum_and_abs(samples);
    Ok(resultant_length(sum, abs_sum, epsilon))
}

fn sum_and_abs(samples: &[Complex64]) -> (Complex64, f64) {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut abs_sum = 0.0;
    for z in samples {
        sum += z;
        abs_sum += z.norm();
    }
    (sum, abs_sum)
}

pub fn circular_variance(resultant: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&resultant) {
        return Err(Error::OutOfRange {
            value: resultant,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(1.0 - resultant)
}

/// Mean and standard error of the mean.
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub domain_counts: Vec<usize>,
    /// `E |mean(G) * r|` per domain count.
    pub class_magnitude: Vec<f64>,
    pub class_stderr: Vec<f64>,
    /// `E |mean(G)|` per domain count.
    pub mean_magnitude: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    pub class_slope: f64,
    pub mean_slope: f64,
}

impl DecayCurve {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["S", "mean_class_magnitude", "stderr"]);
        for i in 0..self.domain_counts.len() {
            t.push(vec![
                self.domain_counts[i].to_string(),
                fmt_sig6(self.class_magnitude[i]),
                fmt_sig6(self.class_stderr[i]),
            ]);
        }
        t
    }

    pub fn mean_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["S", "mean_consensus_magnitude", "stderr"]);
        for i in 0..self.domain_counts.len() {
            t.push(vec![
                self.domain_counts[i].to_string(),
                fmt_sig6(self.mean_magnitude[i]),
                fmt_sig6(self.mean_stderr[i]),
            ]);
        }
        t
    }
}

/// Trials for every `S` in `domain_counts`; trial `t` at `S` uses stream `(S, t)` of `seed`.
pub fn attenuation_curve(
    model: &SpectralModel,
    domain_counts: &[usize],
    seed: u64,
) -> Result<DecayCurve> {
    model.validate()?;
    let increasing = domain_counts.windows(2).all(|w| w[0] < w[1]);
    if domain_counts.len() < 3 || !increasing || domain_counts[0] < 2 {
        return Err(Error::InsufficientRange(domain_counts.to_vec()));
    }
    let mut curve = DecayCurve {
        domain_counts: domain_counts.to_vec(),
        class_magnitude: vec![],
        class_stderr: vec![],
        mean_magnitude: vec![],
        mean_stderr: vec![],
        class_slope: 0.0,
        mean_slope: 0.0,
    };
    for &s in domain_counts {
        let mut class = Vec::with_capacity(model.trials);
        let mut mean = Vec::with_capacity(model.trials);
        for t in 0..model.trials {
            let mut rng = SeededRng::new(
                seed,
                SeededRng::stream_id(ORACLE_STREAM, s as u64, t as u64),
            );
            let draws = sample_domain_spectra(model, s, &mut rng);
            let (sum, abs_sum) = sum_and_abs(&draws);
            let consensus = sum * (1.0 / s as f64);
            let r = resultant_length(sum, abs_sum, DEFAULT_EPSILON);
            mean.push(consensus.norm());
            class.push((consensus * r).norm());
        }
        let (m, e) = mean_stderr(&class);
        curve.class_magnitude.push(m);
        curve.class_stderr.push(e);
        let (m, e) = mean_stderr(&mean);
        curve.mean_magnitude.push(m);
        curve.mean_stderr.push(e);
    }
    let xs: Vec<f64> = domain_counts.iter().map(|&s| s as f64).collect();
    curve.class_slope = log_log_slope(&xs, &curve.class_magnitude);
    curve.mean_slope = log_log_slope(&xs, &curve.mean_magnitude);
    Ok(curve)
}

/// One row of a resultant-versus-phase-noise sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub half_width: f64,
    pub concentration: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Mean empirical resultant at `s` domains for each phase-noise half-width.
pub fn resultant_sweep(
    base: &SpectralModel,
    half_widths: &[f64],
    s: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    half_widths
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let model = SpectralModel {
                half_width: a,
                ..*base
            };
            model.validate()?;
            let mut rs = Vec::with_capacity(model.trials);
            for t in 0..model.trials {
                let mut rng =
                    SeededRng::new(seed, SeededRng::stream_id(SWEEP_STREAM, i as u64, t as u64));
                rs.push(empirical_resultant(
                    &sample_domain_spectra(&model, s, &mut rng),
                    DEFAULT_EPSILON,
                )?);
            }
            let (estimate, stderr) = mean_stderr(&rs);
            Ok(SweepPoint {
                half_width: a,
                concentration: model.concentration(),
                estimate,
                stderr,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> CsvTable {
    let mut t = CsvTable::new(&["a", "estimate", "stderr"]);
    for p in points {
        t.push(vec![
            fmt_sig6(p.half_width),
            fmt_sig6(p.estimate),
            fmt_sig6(p.stderr),
        ]);
    }
    t
}
