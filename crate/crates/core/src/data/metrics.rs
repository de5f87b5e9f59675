//! Overlap and surface-distance segmentation metrics. All metrics are
//! reported for foreground classes only; undefined ratios are `None`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of_class(pred: &[usize], gt: &[usize], class: usize) -> Confusion {
        let mut m = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p == class, g == class) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        m
    }

    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    /// `2TP/(2TP+FP+FN)`; 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_).unwrap_or(1.0)
    }

    /// `TP/(TP+FP+FN)`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_).unwrap_or(1.0)
    }

    pub fn accuracy(&self) -> Option<f64> {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        Self::ratio(self.tn, self.tn + self.fp)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMetrics {
    /// Confusion counts for classes `1..K`.
    pub per_class: Vec<Confusion>,
}

impl OverlapMetrics {
    pub fn dice_per_class(&self) -> Vec<f64> {
        self.per_class.iter().map(Confusion::dice).collect()
    }

    pub fn mean_dice(&self) -> f64 {
        mean(self.per_class.iter().map(|c| Some(c.dice()))).unwrap_or(1.0)
    }

    pub fn miou(&self) -> f64 {
        mean(self.per_class.iter().map(|c| Some(c.iou()))).unwrap_or(1.0)
    }

    pub fn accuracy(&self) -> Option<f64> {
        mean(self.per_class.iter().map(Confusion::accuracy))
    }

    pub fn specificity(&self) -> Option<f64> {
        mean(self.per_class.iter().map(Confusion::specificity))
    }

    pub fn sensitivity(&self) -> Option<f64> {
        mean(self.per_class.iter().map(Confusion::sensitivity))
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn overlap_metrics(pred: &[usize], gt: &[usize], classes: usize) -> Result<OverlapMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::shape("overlap_metrics", &[pred.len()], &[gt.len()]));
    }
    if classes < 2 {
        return Err(Error::domain("overlap_metrics", "needs at least two classes"));
    }
    if let Some(&bad) = pred.iter().chain(gt).find(|&&c| c >= classes) {
        return Err(Error::domain("overlap_metrics", format!("class {bad} out of range {classes}")));
    }
    Ok(OverlapMetrics {
        per_class: (1..classes).map(|c| Confusion::of_class(pred, gt, c)).collect(),
    })
}

/// Foreground pixels with at least one background 4-neighbour, the image
/// border counting as background.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask[r as usize * w + c as usize];
    (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            mask[i] && !(at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1))
        })
        .collect()
}

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `seeds`, by a row pass followed by a column minimisation.
fn squared_distance_map(seeds: &[bool], h: usize, w: usize) -> Vec<Option<u64>> {
    let mut row_dist = vec![None::<u64>; h * w];
    for r in 0..h {
        let row = &seeds[r * w..(r + 1) * w];
        let mut last = None;
        for c in 0..w {
            if row[c] {
                last = Some(c);
            }
            row_dist[r * w + c] = last.map(|l| (c - l) as u64);
        }
        let mut next = None;
        for c in (0..w).rev() {
            if row[c] {
                next = Some(c);
            }
            if let Some(n) = next {
                let d = (n - c) as u64;
                let cell = &mut row_dist[r * w + c];
                *cell = Some(cell.map_or(d, |x| x.min(d)));
            }
        }
    }
    let mut out = vec![None; h * w];
    for c in 0..w {
        for r in 0..h {
            out[r * w + c] = (0..h)
                .filter_map(|q| row_dist[q * w + c].map(|g| g * g + (r.abs_diff(q) as u64).pow(2)))
                .min();
        }
    }
    out
}

/// Distances from each boundary pixel of `from` to the nearest boundary pixel of `to`.
fn directed_distances(from: &[bool], to_map: &[Option<u64>]) -> Vec<f64> {
    from.iter()
        .zip(to_map)
        .filter(|(&b, _)| b)
        .map(|(_, d)| (d.expect("non-empty target boundary") as f64).sqrt())
        .collect()
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub asd: f64,
    pub hd95: f64,
}

/// Surface metrics from two directed distance lists (each non-empty).
pub fn surface_from_directed(mut ab: Vec<f64>, mut ba: Vec<f64>) -> SurfaceMetrics {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let asd = 0.5 * (mean(&ab) + mean(&ba));
    ab.sort_by(f64::total_cmp);
    ba.sort_by(f64::total_cmp);
    SurfaceMetrics {
        asd,
        hd95: percentile(&ab, 0.95).max(percentile(&ba, 0.95)),
    }
}

pub fn surface_metrics(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Result<SurfaceMetrics> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::shape("surface_metrics", &[h, w], &[pred.len(), gt.len()]));
    }
    let bp = boundary(pred, h, w);
    let bg = boundary(gt, h, w);
    match (bp.contains(&true), bg.contains(&true)) {
        (false, false) => return Ok(SurfaceMetrics { asd: 0.0, hd95: 0.0 }),
        (true, true) => {}
        _ => return Err(Error::UndefinedSurfaceDistance),
    }
    let ab = directed_distances(&bp, &squared_distance_map(&bg, h, w));
    let ba = directed_distances(&bg, &squared_distance_map(&bp, h, w));
    Ok(surface_from_directed(ab, ba))
}

/// Dataset-level report, averaged over images and foreground classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: usize,
    pub dice: f64,
    pub miou: f64,
    pub acc: Option<f64>,
    pub spe: Option<f64>,
    pub sen: Option<f64>,
    /// Averaged over (image, class) pairs where the surface distance is defined.
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
    /// (image, class) pairs skipped because exactly one mask was empty.
    pub undefined_surface: usize,
}

impl MetricReport {
    /// `pairs` holds `(prediction, ground truth)` class maps of `h×w` images.
    pub fn from_predictions(pairs: &[(Vec<usize>, Vec<usize>)], h: usize, w: usize, classes: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("metric report over an empty dataset"));
        }
        let mut dice = Vec::new();
        let mut miou = Vec::new();
        let (mut acc, mut spe, mut sen) = (Vec::new(), Vec::new(), Vec::new());
        let (mut hd, mut asd) = (Vec::new(), Vec::new());
        let mut undefined = 0;
        for (pred, gt) in pairs {
            let m = overlap_metrics(pred, gt, classes)?;
            for conf in &m.per_class {
                dice.push(Some(conf.dice()));
                miou.push(Some(conf.iou()));
                acc.push(conf.accuracy());
                spe.push(conf.specificity());
                sen.push(conf.sensitivity());
            }
            for c in 1..classes {
                let pm: Vec<bool> = pred.iter().map(|&p| p == c).collect();
                let gm: Vec<bool> = gt.iter().map(|&g| g == c).collect();
                match surface_metrics(&pm, &gm, h, w) {
                    Ok(s) => {
                        hd.push(Some(s.hd95));
                        asd.push(Some(s.asd));
                    }
                    Err(Error::UndefinedSurfaceDistance) => undefined += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(MetricReport {
            images: pairs.len(),
            dice: mean(dice.into_iter()).unwrap_or(1.0),
            miou: mean(miou.into_iter()).unwrap_or(1.0),
            acc: mean(acc.into_iter()),
            spe: mean(spe.into_iter()),
            sen: mean(sen.into_iter()),
            hd95: mean(hd.into_iter()),
            asd: mean(asd.into_iter()),
            undefined_surface: undefined,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        writeln!(f, "images {}", self.images)?;
        writeln!(f, "Dice   {:.4}", self.dice)?;
        writeln!(f, "mIoU   {:.4}", self.miou)?;
        writeln!(f, "Acc    {}", opt(self.acc))?;
        writeln!(f, "Spe    {}", opt(self.spe))?;
        writeln!(f, "Sen    {}", opt(self.sen))?;
        writeln!(f, "95HD   {}", opt(self.hd95))?;
        write!(f, "ASD    {}", opt(self.asd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let gt = vec![0, 1, 1, 0, 1, 0];
        let m = overlap_metrics(&gt, &gt, 2).unwrap();
        assert_eq!((m.mean_dice(), m.miou(), m.accuracy()), (1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn all_background_prediction() {
        let gt = vec![1, 1, 0, 0];
        let m = overlap_metrics(&[0; 4], &gt, 2).unwrap();
        assert_eq!(m.sensitivity(), Some(0.0));
        assert_eq!(m.specificity(), Some(1.0));
        assert_eq!(m.mean_dice(), 0.0);
    }

    #[test]
    fn hand_counted_four_by_four() {
        #[rustfmt::skip]
        let gt =   [1,1,0,0, 1,1,0,0, 0,0,0,0, 0,0,0,1];
        #[rustfmt::skip]
        let pred = [1,0,0,0, 1,1,1,0, 0,0,0,0, 0,0,1,0];
        let c = overlap_metrics(&pred, &gt, 2).unwrap().per_class[0];
        assert_eq!(c, Confusion { tp: 3, fp: 2, fn_: 2, tn: 9 });
        assert_eq!(c.dice(), 6.0 / 10.0);
        assert_eq!(c.iou(), 3.0 / 7.0);
        assert_eq!(c.accuracy(), Some(12.0 / 16.0));
        assert_eq!(c.specificity(), Some(9.0 / 11.0));
        assert_eq!(c.sensitivity(), Some(3.0 / 5.0));
    }

    #[test]
    fn empty_classes() {
        let m = overlap_metrics(&[0; 4], &[0; 4], 2).unwrap();
        assert_eq!((m.mean_dice(), m.miou()), (1.0, 1.0));
        assert_eq!(m.sensitivity(), None);
        let m = overlap_metrics(&[1, 0, 0, 0], &[0; 4], 2).unwrap();
        assert_eq!(m.mean_dice(), 0.0);
        assert_eq!(m.sensitivity(), None);
    }

    #[test]
    fn single_pixels_three_apart() {
        let mut a = vec![false; 25];
        let mut b = vec![false; 25];
        a[2 * 5] = true;
        b[2 * 5 + 3] = true;
        let s = surface_metrics(&a, &b, 5, 5).unwrap();
        assert_eq!((s.asd, s.hd95), (3.0, 3.0));
        let s = surface_metrics(&a, &a, 5, 5).unwrap();
        assert_eq!((s.asd, s.hd95), (0.0, 0.0));
    }

    #[test]
    fn undefined_and_empty_surfaces() {
        let e = vec![false; 9];
        let mut a = e.clone();
        a[4] = true;
        assert!(matches!(surface_metrics(&a, &e, 3, 3), Err(Error::UndefinedSurfaceDistance)));
        assert_eq!(surface_metrics(&e, &e, 3, 3).unwrap(), SurfaceMetrics { asd: 0.0, hd95: 0.0 });
    }

    #[test]
    fn boundary_excludes_interior() {
        let b = boundary(&[true; 9], 3, 3);
        assert_eq!(b.iter().filter(|&&x| x).count(), 8);
        assert!(!b[4]);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 10.0], 0.95), 9.5);
        assert_eq!(percentile(&[4.0], 0.95), 4.0);
    }
}
