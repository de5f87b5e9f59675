//! Patch-level weak/strong mixing augmentation.
//!
//! A shared dihedral transform is applied to the whole image (and label);
//! the result is cut into a `d×d` patch grid and, per patch, a fair coin
//! decides which of the two output views receives the photometrically
//! distorted version. The other view keeps the geometric-only patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSize {
    Fixed(usize),
    /// Drawn per iteration from `{H/8, H/4, H/2, H}`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub patch_size: PatchSize,
    /// Probability that each photometric transform fires.
    pub alpha: f64,
    pub blur_sigma: (f64, f64),
    /// Symmetric range `[-b, b]` of the additive brightness shift.
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            patch_size: PatchSize::Random,
            alpha: 0.9,
            blur_sigma: (0.1, 1.0),
            brightness: 0.2,
            contrast: (0.8, 1.25),
            gamma: (0.7, 1.5),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if lo.is_finite() && hi.is_finite() && lo > min && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("augment.{name}: invalid range [{lo}, {hi}]")))
            }
        };
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("augment.alpha must lie in [0,1], got {}", self.alpha)));
        }
        if !(self.brightness.is_finite() && self.brightness >= 0.0) {
            return Err(Error::Config("augment.brightness must be a finite non-negative shift".into()));
        }
        if self.patch_size == PatchSize::Fixed(0) {
            return Err(Error::Config("augment.patch_size must be positive".into()));
        }
        range("blur_sigma", self.blur_sigma, 0.0)?;
        range("contrast", self.contrast, 0.0)?;
        range("gamma", self.gamma, 0.0)
    }

    /// Resolves the patch size for an image of extent `h`.
    pub fn sample_patch_size<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Result<usize> {
        match self.patch_size {
            PatchSize::Fixed(d) if d == 0 || d > h => {
                Err(Error::domain("mix_augment", format!("patch size {d} does not fit extent {h}")))
            }
            PatchSize::Fixed(d) => Ok(d),
            PatchSize::Random => {
                let mut choices: Vec<usize> = [8, 4, 2, 1].iter().map(|f| (h / f).max(1)).collect();
                choices.dedup();
                Ok(choices[rng.random_range(0..choices.len())])
            }
        }
    }
}

/// Element of the dihedral group of the square: rotate by `rot·90°`
/// counter-clockwise, then mirror left-right when `flip` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(|k| Dihedral { rot: k % 4, flip: k >= 4 })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Dihedral {
        let k = rng.random_range(0..8u8);
        Dihedral { rot: k % 4, flip: k >= 4 }
    }

    /// Output extents for an `h×w` input.
    pub fn extents(self, h: usize, w: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Applies the transform to a row-major `h×w` grid.
    pub fn apply<T: Copy>(self, data: &[T], h: usize, w: usize) -> Result<Vec<T>> {
        if data.len() != h * w {
            return Err(Error::shape("dihedral", &[h, w], &[data.len()]));
        }
        if self.rot % 2 == 1 && h != w {
            return Err(Error::domain("dihedral", format!("90° rotation of a non-square {h}×{w} grid")));
        }
        let (oh, ow) = self.extents(h, w);
        let mut out = Vec::with_capacity(data.len());
        for r in 0..oh {
            for c in 0..ow {
                let c = if self.flip { ow - 1 - c } else { c };
                let (sr, sc) = match self.rot % 4 {
                    0 => (r, c),
                    1 => (c, w - 1 - r),
                    2 => (h - 1 - r, w - 1 - c),
                    _ => (h - 1 - c, r),
                };
                out.push(data[sr * w + sc]);
            }
        }
        Ok(out)
    }
}

fn image_extents(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [h, w] | [h, w, 1] => Ok((h, w)),
        ref s => Err(Error::domain("augment", format!("expected a greyscale H×W×1 image, got {s:?}"))),
    }
}

/// Applies one random dihedral element to the image and, if present, the label.
pub fn shared_geometric<R: Rng + ?Sized>(
    image: &Tensor,
    label: Option<&[usize]>,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<usize>>)> {
    let g = Dihedral::random(rng);
    apply_geometric(g, image, label)
}

pub fn apply_geometric(
    g: Dihedral,
    image: &Tensor,
    label: Option<&[usize]>,
) -> Result<(Tensor, Option<Vec<usize>>)> {
    let (h, w) = image_extents(image)?;
    let (oh, ow) = g.extents(h, w);
    let img = Tensor::new([oh, ow, 1], g.apply(image.data(), h, w)?)?;
    let lab = label.map(|l| g.apply(l, h, w)).transpose()?;
    Ok((img, lab))
}

/// Separable Gaussian blur with edge replication. Kernel radius is `⌈3σ⌉`.
pub fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let pass = |src: &[f64], along_rows: bool| {
        let mut out = vec![0.0; src.len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let o = i as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r as isize, (c as isize + o).clamp(0, w as isize - 1))
                    } else {
                        ((r as isize + o).clamp(0, h as isize - 1), c as isize)
                    };
                    acc += k * src[rr as usize * w + cc as usize];
                }
                out[r * w + c] = acc;
            }
        }
        out
    };
    let tmp = pass(data, true);
    pass(&tmp, false)
}

/// Parameters of one strong photometric draw; `None` means the transform did not fire.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Photometric {
    pub blur_sigma: Option<f64>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub gamma: Option<f64>,
}

impl Photometric {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Photometric {
        let mut draw = |lo: f64, hi: f64| {
            if rng.random_bool(cfg.alpha) {
                Some(if lo < hi { rng.random_range(lo..=hi) } else { lo })
            } else {
                None
            }
        };
        Photometric {
            blur_sigma: draw(cfg.blur_sigma.0, cfg.blur_sigma.1),
            brightness: draw(-cfg.brightness, cfg.brightness),
            contrast: draw(cfg.contrast.0, cfg.contrast.1),
            gamma: draw(cfg.gamma.0, cfg.gamma.1),
        }
    }

    /// Applies blur, brightness, contrast, gamma in that order, clamping to `[0,1]`
    /// after every step.
    pub fn apply(&self, data: &[f64], h: usize, w: usize) -> Vec<f64> {
        let clamp = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        let mut out = data.to_vec();
        clamp(&mut out);
        if let Some(s) = self.blur_sigma {
            out = gaussian_blur(&out, h, w, s);
            clamp(&mut out);
        }
        if let Some(b) = self.brightness {
            out.iter_mut().for_each(|x| *x += b);
            clamp(&mut out);
        }
        if let Some(f) = self.contrast {
            let mean = out.iter().sum::<f64>() / out.len().max(1) as f64;
            out.iter_mut().for_each(|x| *x = (*x - mean) * f + mean);
            clamp(&mut out);
        }
        if let Some(g) = self.gamma {
            out.iter_mut().for_each(|x| *x = x.powf(g));
            clamp(&mut out);
        }
        out
    }
}

/// Draws and applies a strong photometric transform to an `h×w` patch.
pub fn strong_photometric<R: Rng + ?Sized>(
    patch: &[f64],
    h: usize,
    w: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if patch.len() != h * w {
        return Err(Error::shape("strong_photometric", &[h, w], &[patch.len()]));
    }
    Ok(Photometric::sample(cfg, rng).apply(patch, h, w))
}

/// Partition of an `h×w` grid into `d×d` patches; the last row and column
/// of patches absorb any remainder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || patch > height || patch > width {
            return Err(Error::domain(
                "patch_grid",
                format!("patch size {patch} does not fit a {height}×{width} image"),
            ));
        }
        Ok(PatchGrid { height, width, patch })
    }

    pub fn rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn cols(&self) -> usize {
        self.width / self.patch
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn span(&self, i: usize, n: usize, extent: usize) -> (usize, usize) {
        let start = i * self.patch;
        let end = if i + 1 == n { extent } else { start + self.patch };
        (start, end)
    }

    /// Pixel bounds `(r0, r1, c0, c1)` of patch `p` (row-major patch index).
    pub fn bounds(&self, p: usize) -> (usize, usize, usize, usize) {
        let (r0, r1) = self.span(p / self.cols(), self.rows(), self.height);
        let (c0, c1) = self.span(p % self.cols(), self.cols(), self.width);
        (r0, r1, c0, c1)
    }

    pub fn extract(&self, data: &[f64], p: usize) -> Vec<f64> {
        let (r0, r1, c0, c1) = self.bounds(p);
        (r0..r1).flat_map(|r| data[r * self.width + c0..r * self.width + c1].iter().copied()).collect()
    }

    pub fn insert(&self, data: &mut [f64], p: usize, patch: &[f64]) {
        let (r0, r1, c0, c1) = self.bounds(p);
        let pw = c1 - c0;
        for r in r0..r1 {
            let src = &patch[(r - r0) * pw..(r - r0 + 1) * pw];
            data[r * self.width + c0..r * self.width + c1].copy_from_slice(src);
        }
    }

    /// Patch index owning each pixel.
    pub fn patch_of_pixel(&self) -> Vec<usize> {
        let mut out = vec![0; self.height * self.width];
        for p in 0..self.len() {
            let (r0, r1, c0, c1) = self.bounds(p);
            for r in r0..r1 {
                out[r * self.width + c0..r * self.width + c1].fill(p);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    /// View for the first network.
    pub first: Tensor,
    /// View for the second network.
    pub second: Tensor,
    /// Per patch: `true` when `first` holds the strong version.
    pub strong_in_first: Vec<bool>,
    pub grid: PatchGrid,
    pub geometric: Dihedral,
    /// The geometric-only image both views were built from.
    pub weak: Tensor,
    pub label: Option<Vec<usize>>,
}

impl AugmentedPair {
    pub fn strong_in_second(&self) -> Vec<bool> {
        self.strong_in_first.iter().map(|s| !s).collect()
    }

    /// Per-pixel assignment map for the first view as an `H×W×1` image (1 = strong).
    pub fn mask_image(&self) -> Tensor {
        let owner = self.grid.patch_of_pixel();
        let data = owner.iter().map(|&p| if self.strong_in_first[p] { 1.0 } else { 0.0 }).collect();
        Tensor::from_parts(vec![self.grid.height, self.grid.width, 1], data)
    }
}

/// Builds the two complementary views of one image with patch size `d`.
pub fn mix_augment<R: Rng + ?Sized>(
    image: &Tensor,
    label: Option<&[usize]>,
    d: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedPair> {
    cfg.validate()?;
    let (h, w) = image_extents(image)?;
    let grid = PatchGrid::new(h, w, d)?;
    let g = Dihedral::random(rng);
    let (weak, label) = apply_geometric(g, image, label)?;
    let (h, w) = g.extents(h, w);
    let grid = PatchGrid { height: h, width: w, ..grid };
    let mut first = weak.data().to_vec();
    let mut second = first.clone();
    let mut strong_in_first = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let heads = rng.random_bool(0.5);
        let (r0, r1, c0, c1) = grid.bounds(p);
        let patch = grid.extract(weak.data(), p);
        let strong = Photometric::sample(cfg, rng).apply(&patch, r1 - r0, c1 - c0);
        grid.insert(if heads { &mut first } else { &mut second }, p, &strong);
        strong_in_first.push(heads);
    }
    Ok(AugmentedPair {
        first: Tensor::new([h, w, 1], first)?,
        second: Tensor::new([h, w, 1], second)?,
        strong_in_first,
        grid,
        geometric: g,
        weak,
        label,
    })
}
