//! Spectral gradient surgery.
//!
//! The per-domain gradients of one synthetic sample are moved to the Fourier
//! domain. Their complex mean is the cross-domain consensus; the resultant
//! length `|sum G| / (sum |G| + eps)` measures, bin by bin and channel by
//! channel, how well the domains agree on the phase. The consensus weighted
//! by the resultant becomes the class signal, and each domain's deviation from
//! the consensus becomes its domain signal.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fft2, ifft2, ComplexGrid, RealGrid};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Largest representable value below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `|sum| / (abs_sum + eps)` for one bin, clamped into `[0, 1)`.
///
/// `abs_sum` dominates `|sum|` mathematically; the clamp absorbs rounding and
/// the case where `eps` vanishes next to a very large `abs_sum`.
#[inline]
pub fn resultant_length(sum: Complex64, abs_sum: f64, epsilon: f64) -> f64 {
    let num = sum.norm().min(abs_sum);
    (num / (abs_sum + epsilon)).min(BELOW_ONE)
}

/// Per-domain gradients of one synthetic sample and their spectra.
#[derive(Clone, Debug)]
pub struct DomainGradientStack {
    pub sample: usize,
    grads: Vec<RealGrid>,
    spectra: Vec<ComplexGrid>,
}

impl DomainGradientStack {
    pub fn new(sample: usize, grads: Vec<RealGrid>) -> Result<Self> {
        if grads.len() < 2 {
            return Err(Error::TooFewDomains { found: grads.len() });
        }
        let shape = grads[0].shape();
        for g in &grads[1..] {
            g.ensure_shape(shape)?;
        }
        let spectra = grads.iter().map(fft2).collect();
        Ok(DomainGradientStack {
            sample,
            grads,
            spectra,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.grads.len()
    }

    pub fn grads(&self) -> &[RealGrid] {
        &self.grads
    }

    pub fn spectra(&self) -> &[ComplexGrid] {
        &self.spectra
    }
}

/// Consensus spectrum and the element-wise resultant map.
#[derive(Clone, Debug)]
pub struct ConsensusResult {
    pub mean: ComplexGrid,
    /// Same layout as the spectra; every entry in `[0, 1)`.
    pub resultant: Vec<f64>,
    pub epsilon: f64,
}

impl ConsensusResult {
    /// Resultant map as a grid, for dumps and inspection.
    pub fn resultant_grid(&self) -> RealGrid {
        RealGrid::from_vec(self.mean.shape(), self.resultant.clone())
            .expect("resultant entries are finite")
    }
}

pub fn consensus(stack: &DomainGradientStack, epsilon: f64) -> Result<ConsensusResult> {
    let s = stack.spectra.len();
    if s < 2 {
        return Err(Error::TooFewDomains { found: s });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let shape = stack.spectra[0].shape();
    let n = shape.len();
    let inv_s = 1.0 / s as f64;
    let mut mean = Vec::with_capacity(n);
    let mut resultant = Vec::with_capacity(n);
    for k in 0..n {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut abs_sum = 0.0;
        for spec in &stack.spectra {
            let z = spec.values()[k];
            sum += z;
            abs_sum += z.norm();
        }
        mean.push(sum * inv_s);
        resultant.push(resultant_length(sum, abs_sum, epsilon));
    }
    Ok(ConsensusResult {
        mean: ComplexGrid::from_vec(shape, mean)?,
        resultant,
        epsilon,
    })
}

/// Class signal and one domain signal per source domain.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub class: RealGrid,
    pub domain: Vec<RealGrid>,
}

pub fn decompose(stack: &DomainGradientStack, cons: &ConsensusResult) -> Result<Decomposition> {
    let shape = cons.mean.shape();
    let weighted: Vec<Complex64> = cons
        .mean
        .values()
        .iter()
        .zip(&cons.resultant)
        .map(|(z, &r)| z * r)
        .collect();
    let class = ifft2(&ComplexGrid::from_vec(shape, weighted)?)?;
    let domain = stack
        .spectra
        .iter()
        .map(|spec| {
            let dev: Vec<Complex64> = spec
                .values()
                .iter()
                .zip(cons.mean.values())
                .map(|(a, b)| a - b)
                .collect();
            ifft2(&ComplexGrid::from_vec(shape, dev)?)
        })
        .collect::<Result<_>>()?;
    Ok(Decomposition { class, domain })
}

/// The three update signals for one synthetic sample.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    pub base: RealGrid,
    pub class: RealGrid,
    pub domain: Vec<RealGrid>,
}

impl GradientBundle {
    pub fn new(base: RealGrid, parts: Decomposition) -> Self {
        GradientBundle {
            base,
            class: parts.class,
            domain: parts.domain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryWeights {
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub eta: f64,
    pub epsilon: f64,
    /// Whether the pooled gradient enters the update; off only for ablations.
    pub use_base: bool,
}

impl Default for SurgeryWeights {
    fn default() -> Self {
        SurgeryWeights {
            lambda_c: 1.0,
            lambda_d: 1.0,
            eta: 1.0,
            epsilon: DEFAULT_EPSILON,
            use_base: true,
        }
    }
}

impl SurgeryWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_c >= 0.0
            && self.lambda_d >= 0.0
            && self.eta >= 0.0
            && self.epsilon > 0.0
            && [self.lambda_c, self.lambda_d, self.eta, self.epsilon]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid surgery weights {self:?}"
            )))
        }
    }
}

/// `x_hat - eta * (g + lambda_c * g_class + lambda_d * g_domain[assigned])`.
///
/// Terms with zero weight are skipped rather than multiplied by zero, so
/// `lambda_c = lambda_d = 0` reproduces `x_hat - eta * g` bit for bit.
pub fn sgs_step(
    x_hat: &RealGrid,
    bundle: &GradientBundle,
    assigned_domain: usize,
    w: &SurgeryWeights,
) -> Result<RealGrid> {
    let domain = bundle
        .domain
        .get(assigned_domain)
        .ok_or(Error::UnknownDomain {
            domain: assigned_domain,
            available: bundle.domain.len(),
        })?;
    x_hat.ensure_shape(bundle.base.shape())?;
    if w.use_base && w.lambda_c == 0.0 && w.lambda_d == 0.0 {
        return Ok(plain_step(x_hat, &bundle.base, w.eta));
    }
    let mut direction = if w.use_base {
        bundle.base.clone()
    } else {
        RealGrid::zeros(bundle.base.shape())
    };
    if w.lambda_c != 0.0 {
        direction.axpy(w.lambda_c, &bundle.class);
    }
    if w.lambda_d != 0.0 {
        direction.axpy(w.lambda_d, domain);
    }
    Ok(plain_step(x_hat, &direction, w.eta))
}

/// `x - eta * g`, the distribution-matching update.
pub fn plain_step(x: &RealGrid, g: &RealGrid, eta: f64) -> RealGrid {
    let mut out = x.clone();
    for (o, gv) in out.values_mut().iter_mut().zip(g.values()) {
        *o -= eta * gv;
    }
    out
}
