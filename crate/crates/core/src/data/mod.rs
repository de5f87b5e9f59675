//! Synthetic data, image files, dataset manifests and evaluation metrics.
//!
//! A dataset manifest is a text file with one image per line:
//!
//! ```text
//! classes 2
//! labeled images/l0.pgm labels/l0.pgm
//! unlabeled images/u0.pgm
//! test images/t0.pgm labels/t0.pgm
//! ```
//!
//! Paths are relative to the manifest. Label images store class `c` as
//! grey level `c/(K−1)`.

pub mod metrics;
pub mod pgm;
pub mod synthetic;

use std::fs;
use std::path::Path;

pub use metrics::{
    boundary, overlap_metrics, percentile, surface_metrics, Confusion, MetricReport, OverlapMetrics,
    SurfaceMetrics,
};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use synthetic::{gen_synthetic, Bar, BarFamily, FamilyMix, Sample, SplitDataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn label_to_image(label: &[usize], h: usize, w: usize, classes: usize) -> Result<Tensor> {
    let scale = (classes.max(2) - 1) as f64;
    Tensor::new([h, w, 1], label.iter().map(|&c| c as f64 / scale).collect())
}

pub fn image_to_label(image: &Tensor, classes: usize) -> Vec<usize> {
    let scale = (classes.max(2) - 1) as f64;
    image.data().iter().map(|&v| (v * scale).round() as usize).collect()
}

/// Writes every sample as PGM files plus a manifest into `dir`.
pub fn write_dataset(dir: &Path, data: &SplitDataset, classes: usize) -> Result<()> {
    for sub in ["images", "labels"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = format!("classes {classes}\n");
    let splits = [("labeled", &data.labeled), ("unlabeled", &data.unlabeled), ("test", &data.test)];
    for (split, samples) in splits {
        for (i, s) in samples.iter().enumerate() {
            let img = format!("images/{split}_{i:04}.pgm");
            write_pgm(dir.join(&img), &s.image)?;
            manifest.push_str(&format!("{split} {img}"));
            if let Some(label) = &s.label {
                let n = s.extent();
                let lab = format!("labels/{split}_{i:04}.pgm");
                write_pgm(dir.join(&lab), &label_to_image(label, n, n, classes)?)?;
                manifest.push_str(&format!(" {lab}"));
            }
            manifest.push('\n');
        }
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads a dataset manifest; returns the dataset and its class count.
pub fn load_dataset(manifest: &Path) -> Result<(SplitDataset, usize)> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut data = SplitDataset::default();
    let mut classes = 2;
    let mut offset = 0;
    for line in text.lines() {
        let here = offset;
        offset += line.len() + 1;
        let bad = |msg: String| Error::Format {
            path: manifest.to_path_buf(),
            offset: here,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (split, img, lab) = match fields.as_slice() {
            [] => continue,
            [first, ..] if first.starts_with('#') => continue,
            ["classes", k] => {
                classes = k.parse().map_err(|_| bad(format!("bad class count {k:?}")))?;
                continue;
            }
            [split, img] => (*split, *img, None),
            [split, img, lab] => (*split, *img, Some(*lab)),
            _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
        };
        let image = read_pgm(root.join(img))?;
        let label = lab
            .map(|l| -> Result<Vec<usize>> {
                let t = read_pgm(root.join(l))?;
                if t.shape() != image.shape() {
                    return Err(bad(format!("label {l} does not match image {img} in shape")));
                }
                Ok(image_to_label(&t, classes))
            })
            .transpose()?;
        let sample = Sample { image, label, family: None };
        let target = match split {
            "labeled" => &mut data.labeled,
            "unlabeled" => &mut data.unlabeled,
            "test" => &mut data.test,
            other => return Err(bad(format!("unknown split {other:?}"))),
        };
        if split != "unlabeled" && sample.label.is_none() {
            return Err(bad(format!("{split} entry {img} needs a label")));
        }
        target.push(sample);
    }
    Ok((data, classes))
}
