//! Procedural multi-domain glyph datasets.
//!
//! Every class is a fixed binary glyph. Domains differ by a style transform
//! plus an additive per-channel tint, chosen so that the styles occupy
//! distinct parts of the spectrum (flat, low-frequency, Nyquist-rate).

use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, MultiDomainDataset, Provenance, Sample, Split};
use crate::error::{Error, Result};
use crate::numerics::{RealGrid, SeededRng, Shape};

const TOY_STREAM: u64 = 0x746f_79;

/// Pixel range enforced after styling and noise.
pub const PIXEL_MIN: f64 = -0.5;
pub const PIXEL_MAX: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StyleTransform {
    Clean,
    ContrastInvert,
    /// Horizontal sinusoidal background.
    Sinusoid {
        period: f64,
        amplitude: f64,
    },
    /// Additive checkerboard; `period` is the length of one light+dark cycle in pixels.
    Checkerboard {
        period: usize,
        amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainStyle {
    pub name: String,
    pub transform: StyleTransform,
    #[serde(default)]
    pub tint: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub domains: Vec<DomainStyle>,
    /// Latent per-sample tints layered on top of every domain (empty: none).
    pub substyles: Vec<Vec<f64>>,
    pub jitter: usize,
    pub noise_sigma: f64,
    pub train_per_cell: usize,
    pub test_per_cell: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            height: 16,
            width: 16,
            channels: 3,
            classes: 5,
            domains: vec![
                DomainStyle {
                    name: "clean".into(),
                    transform: StyleTransform::Clean,
                    tint: vec![],
                },
                DomainStyle {
                    name: "invert".into(),
                    transform: StyleTransform::ContrastInvert,
                    tint: vec![],
                },
                DomainStyle {
                    name: "sinusoid".into(),
                    transform: StyleTransform::Sinusoid {
                        period: 8.0,
                        amplitude: 0.3,
                    },
                    tint: vec![],
                },
                DomainStyle {
                    name: "checker".into(),
                    transform: StyleTransform::Checkerboard {
                        period: 2,
                        amplitude: 0.2,
                    },
                    tint: vec![0.3, 0.0, -0.3],
                },
            ],
            substyles: vec![],
            jitter: 2,
            noise_sigma: 0.05,
            train_per_cell: 100,
            test_per_cell: 50,
        }
    }
}

impl ToySpec {
    /// Default domains with `tints.len()` latent colour casts inside each one.
    pub fn with_substyles(tints: Vec<Vec<f64>>) -> Self {
        ToySpec {
            substyles: tints,
            ..ToySpec::default()
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.height < 8 || self.width < 8 || self.channels == 0 {
            return bad(format!("image shape {} too small", self.shape()));
        }
        if 2 * self.jitter + 4 > self.height.min(self.width) {
            return bad(format!("jitter {} too large for the grid", self.jitter));
        }
        if self.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.domains.len() < 2 {
            return bad("need at least 2 domains".into());
        }
        for (i, a) in self.domains.iter().enumerate() {
            for b in &self.domains[..i] {
                if a.transform == b.transform && a.tint == b.tint {
                    return bad(format!("domains {} and {} share one style", b.name, a.name));
                }
            }
            if !a.tint.is_empty() && a.tint.len() != self.channels {
                return bad(format!("tint of {} has wrong channel count", a.name));
            }
            match a.transform {
                StyleTransform::Sinusoid { period, .. } if period <= 0.0 => {
                    return bad("sinusoid period must be positive".into())
                }
                StyleTransform::Checkerboard { period, .. } if period < 2 || period % 2 != 0 => {
                    return bad("checkerboard period must be even and >= 2".into())
                }
                _ => {}
            }
        }
        if self.substyles.iter().any(|t| t.len() != self.channels) {
            return bad("substyle tints need one value per channel".into());
        }
        if self.train_per_cell == 0 || self.test_per_cell == 0 {
            return bad("every (domain, class, split) cell needs samples".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Binary glyph for `class`, centred on an `h x w` grid.
pub fn glyph_template(class: usize, h: usize, w: usize) -> Vec<f64> {
    let mut g = vec![0.0; h * w];
    let (cy, cx) = (h as f64 / 2.0 - 0.5, w as f64 / 2.0 - 0.5);
    let half = (h.min(w) as f64 / 2.0 - 3.0).max(2.0);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let inside = dy.abs() <= half && dx.abs() <= half;
            let on = match class {
                0 => inside && dx.abs() <= 1.0,
                1 => inside && dy.abs() <= 1.0,
                2 => inside && (dy.abs() > half - 1.0 || dx.abs() > half - 1.0),
                3 => inside && ((dy - dx).abs() <= 0.5 || (dy + dx).abs() <= 0.5),
                4 => dy * dy + dx * dx <= (half * 0.6).powi(2),
                _ => {
                    // hashed 4x4-cell pattern for classes beyond the hand-made five
                    let cell = ((y * 4 / h) * 4 + x * 4 / w) as u64;
                    let bits = SeededRng::stream_id(0x67_6c79, class as u64, 0);
                    inside && (bits >> cell) & 1 == 1
                }
            };
            if on {
                g[y * w + x] = 1.0;
            }
        }
    }
    g
}

/// Draws one styled sample with the glyph translated by `shift = (dy, dx)`.
pub fn render_sample(
    spec: &ToySpec,
    class: usize,
    style: &DomainStyle,
    substyle: Option<&[f64]>,
    shift: (i64, i64),
    rng: &mut SeededRng,
) -> RealGrid {
    let (h, w) = (spec.height, spec.width);
    let template = glyph_template(class, h, w);
    let mut out = RealGrid::zeros(spec.shape());
    for c in 0..spec.channels {
        let tint = style.tint.get(c).copied().unwrap_or(0.0) + substyle.map_or(0.0, |t| t[c]);
        for y in 0..h {
            for x in 0..w {
                let sy = y as i64 - shift.0;
                let sx = x as i64 - shift.1;
                let glyph = if (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx) {
                    template[sy as usize * w + sx as usize]
                } else {
                    0.0
                };
                let styled = match style.transform {
                    StyleTransform::Clean => glyph,
                    StyleTransform::ContrastInvert => 1.0 - glyph,
                    StyleTransform::Sinusoid { period, amplitude } => {
                        glyph + amplitude * (std::f64::consts::TAU * x as f64 / period).sin()
                    }
                    StyleTransform::Checkerboard { period, amplitude } => {
                        let half = period / 2;
                        let sign = if (y / half + x / half) % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        };
                        glyph + amplitude * sign
                    }
                };
                let v = styled + tint + spec.noise_sigma * rng.normal();
                out.set(c, y, x, v.clamp(PIXEL_MIN, PIXEL_MAX));
            }
        }
    }
    out
}

/// Deterministic under `seed`; train and test splits draw from disjoint streams.
pub fn generate_toy(spec: &ToySpec, seed: u64) -> Result<MultiDomainDataset> {
    spec.validate()?;
    let mut samples = Vec::new();
    for (split, per_cell) in [
        (Split::Train, spec.train_per_cell),
        (Split::Test, spec.test_per_cell),
    ] {
        for (d, style) in spec.domains.iter().enumerate() {
            for class in 0..spec.classes {
                for j in 0..per_cell {
                    let cell = (d * spec.classes + class) as u64;
                    let mut rng = SeededRng::new(
                        seed,
                        SeededRng::stream_id(TOY_STREAM + split.code() as u64, cell, j as u64),
                    );
                    let j_range = 2 * spec.jitter + 1;
                    let shift = (
                        rng.below(j_range) as i64 - spec.jitter as i64,
                        rng.below(j_range) as i64 - spec.jitter as i64,
                    );
                    let sub = if spec.substyles.is_empty() {
                        None
                    } else {
                        Some(rng.below(spec.substyles.len()))
                    };
                    let image = render_sample(
                        spec,
                        class,
                        style,
                        sub.map(|s| spec.substyles[s].as_slice()),
                        shift,
                        &mut rng,
                    );
                    let index = samples.len() as u32;
                    samples.push(Sample {
                        image,
                        class,
                        domain: d,
                        split,
                        provenance: Provenance {
                            domain: d as u16,
                            style: sub.unwrap_or(0) as u16,
                            index,
                        },
                    });
                }
            }
        }
    }
    Ok(MultiDomainDataset {
        samples,
        num_classes: spec.classes,
        num_domains: spec.domains.len(),
        meta: DatasetMeta {
            name: "toy".into(),
            shape: spec.shape(),
            seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToySpec {
        ToySpec {
            train_per_cell: 3,
            test_per_cell: 2,
            ..ToySpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_toy(&small(), 9).unwrap();
        let b = generate_toy(&small(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_toy(&small(), 10).unwrap();
        assert_ne!(a.samples[0].image, c.samples[0].image);
    }

    #[test]
    fn every_cell_is_populated() {
        let ds = generate_toy(&small(), 1).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.samples.len(), 4 * 5 * 5);
        for d in 0..4 {
            for c in 0..5 {
                assert_eq!(ds.count(d, c, Split::Train), 3);
                assert_eq!(ds.count(d, c, Split::Test), 2);
            }
        }
        assert!(ds.samples.iter().all(|s| s
            .image
            .values()
            .iter()
            .all(|v| (PIXEL_MIN..=PIXEL_MAX).contains(v))));
    }

    #[test]
    fn glyphs_are_distinct_and_nonempty() {
        let gs: Vec<Vec<f64>> = (0..7).map(|c| glyph_template(c, 16, 16)).collect();
        for (i, a) in gs.iter().enumerate() {
            assert!(a.iter().sum::<f64>() >= 8.0, "glyph {i} too sparse");
            for b in &gs[..i] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.domains.truncate(1);
        assert!(matches!(generate_toy(&s, 0), Err(Error::InvalidSpec(_))));
        let mut s = small();
        s.domains[1] = s.domains[0].clone();
        assert!(matches!(generate_toy(&s, 0), Err(Error::InvalidSpec(_))));
        let mut s = small();
        s.test_per_cell = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<ToySpec>(r#"{"classes": 3, "colour": 1}"#);
        assert!(err.is_err());
        let ok: ToySpec = serde_json::from_str(r#"{"classes": 3}"#).unwrap();
        assert_eq!(ok.domains.len(), 4);
    }
}
