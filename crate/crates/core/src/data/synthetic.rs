//! Synthetic directional bar images: one vertical or ±45° tilted bar per
//! image on a flat background with additive Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarFamily {
    Vertical,
    /// Running from top-left to bottom-right.
    TiltedDown,
    /// Running from bottom-left to top-right.
    TiltedUp,
}

impl BarFamily {
    pub fn is_tilted(self) -> bool {
        self != BarFamily::Vertical
    }

    pub fn name(self) -> &'static str {
        match self {
            BarFamily::Vertical => "vertical",
            BarFamily::TiltedDown => "tilted_down",
            BarFamily::TiltedUp => "tilted_up",
        }
    }
}

/// Which families the generator draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyMix {
    Vertical,
    Tilted,
    Mixed,
}

/// One bar. `offset` is the column for vertical bars and the diagonal
/// index (`c − r` or `r + c`) for tilted ones; `start`/`length` bound the
/// rows it spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bar {
    pub family: BarFamily,
    pub offset: isize,
    pub thickness: usize,
    pub start: usize,
    pub length: usize,
}

impl Bar {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        if r < self.start || r >= self.start + self.length {
            return false;
        }
        let (r, c) = (r as isize, c as isize);
        let k = match self.family {
            BarFamily::Vertical => c,
            BarFamily::TiltedDown => c - r,
            BarFamily::TiltedUp => r + c,
        };
        k >= self.offset && k < self.offset + self.thickness as isize
    }

    pub fn mask(&self, size: usize) -> Vec<usize> {
        (0..size * size).map(|i| self.contains(i / size, i % size) as usize).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub num_classes: usize,
    pub families: FamilyMix,
    pub thickness: (usize, usize),
    /// Bar length as a fraction range of the image extent.
    pub length: (f64, f64),
    pub background: f64,
    pub foreground: f64,
    pub noise_sigma: f64,
    pub num_labeled: usize,
    pub num_unlabeled: usize,
    pub num_test: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: 32,
            num_classes: 2,
            families: FamilyMix::Mixed,
            thickness: (2, 3),
            length: (0.5, 1.0),
            background: 0.35,
            foreground: 0.65,
            noise_sigma: 0.1,
            num_labeled: 4,
            num_unlabeled: 60,
            num_test: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `H×W×1`, values in `[0,1]`.
    pub image: Tensor,
    /// Row-major class map, when labeled.
    pub label: Option<Vec<usize>>,
    pub family: Option<BarFamily>,
}

impl Sample {
    pub fn extent(&self) -> usize {
        self.image.shape()[0]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitDataset {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitDataset {
    /// Fraction of training images that carry labels.
    pub fn labeled_fraction(&self) -> f64 {
        let n = self.labeled.len() + self.unlabeled.len();
        if n == 0 {
            0.0
        } else {
            self.labeled.len() as f64 / n as f64
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic.{m}")));
        if self.image_size < 4 {
            return bad(format!("image_size must be at least 4, got {}", self.image_size));
        }
        if self.num_classes != 2 {
            return bad(format!("num_classes must be 2 for bar images, got {}", self.num_classes));
        }
        let (t0, t1) = self.thickness;
        if t0 == 0 || t0 > t1 || t1 >= self.image_size {
            return bad(format!("thickness range {t0}..{t1} is degenerate"));
        }
        let (l0, l1) = self.length;
        if !(l0 > 0.0 && l0 <= l1 && l1 <= 1.0) {
            return bad(format!("length range {l0}..{l1} must lie in (0, 1]"));
        }
        for v in [self.background, self.foreground] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("intensities must lie in [0,1], got {v}"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        Ok(())
    }

    fn pick_family<R: Rng + ?Sized>(&self, rng: &mut R) -> BarFamily {
        let vertical = match self.families {
            FamilyMix::Vertical => return BarFamily::Vertical,
            FamilyMix::Tilted => false,
            FamilyMix::Mixed => rng.random_bool(0.5),
        };
        if vertical {
            BarFamily::Vertical
        } else if rng.random_bool(0.5) {
            BarFamily::TiltedDown
        } else {
            BarFamily::TiltedUp
        }
    }

    /// Draws a bar of the given family that lies fully inside the image.
    pub fn random_bar<R: Rng + ?Sized>(&self, family: BarFamily, rng: &mut R) -> Bar {
        let n = self.image_size;
        let thickness = rng.random_range(self.thickness.0..=self.thickness.1);
        let lo = ((self.length.0 * n as f64).round() as usize).clamp(1, n);
        let mut hi = ((self.length.1 * n as f64).round() as usize).clamp(lo, n);
        if family.is_tilted() {
            hi = hi.min(n + 1 - thickness);
        }
        let lo = lo.min(hi);
        let length = rng.random_range(lo..=hi);
        let start = rng.random_range(0..=n - length);
        let ni = n as isize;
        let max_col = n - thickness;
        let t = thickness as isize;
        let (s, e) = (start as isize, (start + length) as isize - 1);
        let offset = match family {
            BarFamily::Vertical => rng.random_range(0..=max_col) as isize,
            // c = r + k must stay in [0, n) for r in [s, e].
            BarFamily::TiltedDown => rng.random_range(-s as i64..=(ni - t - e) as i64) as isize,
            // c = k − r must stay in [0, n) for r in [s, e].
            BarFamily::TiltedUp => rng.random_range(e as i64..=(ni - t + s) as i64) as isize,
        };
        Bar { family, offset, thickness, start, length }
    }

    /// Renders a bar with background/foreground intensities and noise.
    pub fn render<R: Rng + ?Sized>(&self, bar: &Bar, rng: &mut R) -> Result<Sample> {
        let n = self.image_size;
        let label = bar.mask(n);
        if label.iter().all(|&l| l == 0) {
            return Err(Error::domain("gen_synthetic", "bar has no foreground pixel"));
        }
        let noise = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Config(e.to_string()))?;
        let data = label
            .iter()
            .map(|&l| {
                let base = if l == 1 { self.foreground } else { self.background };
                let eps = if self.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                (base + eps).clamp(0.0, 1.0)
            })
            .collect();
        Ok(Sample {
            image: Tensor::new([n, n, 1], data)?,
            label: Some(label),
            family: Some(bar.family),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sample> {
        let family = self.pick_family(rng);
        let bar = self.random_bar(family, rng);
        self.render(&bar, rng)
    }
}

/// Deterministic per seed. Fails when the mean foreground fraction of the
/// first (up to) 100 generated samples leaves `(1%, 50%)`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SplitDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |count: usize, keep_label: bool| -> Result<Vec<Sample>> {
        (0..count)
            .map(|_| {
                let mut s = spec.sample(&mut rng)?;
                if !keep_label {
                    s.label = None;
                }
                Ok(s)
            })
            .collect()
    };
    let labeled = draw(spec.num_labeled, true)?;
    let unlabeled = draw(spec.num_unlabeled, false)?;
    let test = draw(spec.num_test, true)?;
    let fractions: Vec<f64> = labeled
        .iter()
        .chain(&test)
        .filter_map(|s| s.label.as_ref())
        .take(100)
        .map(|l| l.iter().sum::<usize>() as f64 / l.len() as f64)
        .collect();
    if !fractions.is_empty() {
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        if !(0.01..0.5).contains(&mean) {
            return Err(Error::Config(format!(
                "synthetic foreground fraction {mean:.4} outside (0.01, 0.5)"
            )));
        }
    }
    Ok(SplitDataset { labeled, unlabeled, test })
}
