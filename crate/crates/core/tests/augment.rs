mod common;

use std::path::PathBuf;

use common::*;
use dcscan::augment::{
    gaussian_blur, mix_augment, shared_geometric, strong_photometric, AugmentConfig, Dihedral, PatchGrid,
};
use dcscan::tensor::{read_dct1, write_dct1, Tensor};
use rand::Rng;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mix_augment_seed42_d2.dct1")
}

/// `[3, 4, 4, 1]`: first view, second view, assignment mask of the first view.
fn golden_views() -> Tensor {
    let ramp = Tensor::from_fn([4, 4, 1], |i| i as f64 / 15.0);
    let pair = mix_augment(&ramp, None, 2, &AugmentConfig::default(), &mut rng(42)).unwrap();
    let mut data = pair.first.data().to_vec();
    data.extend_from_slice(pair.second.data());
    data.extend_from_slice(pair.mask_image().data());
    Tensor::new([3, 4, 4, 1], data).unwrap()
}

/// Regenerate with `DCSCAN_BLESS=1 cargo test --test augment golden`.
#[test]
fn golden_views_for_seed_42() {
    let got = golden_views();
    let path = golden_path();
    if std::env::var_os("DCSCAN_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_dct1(&got, &path).unwrap();
    }
    let want = read_dct1(&path).expect("golden file present");
    assert_eq!(got.shape(), want.shape());
    assert!(got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn invariants_over_random_draws() {
    let mut r = rng(7);
    for draw in 0..1000 {
        let n = r.random_range(1..=20);
        let d = r.random_range(1..=n);
        let alpha = if draw % 4 == 0 { 0.0 } else { r.random_range(0.0..=1.0) };
        let seed: u64 = r.random();
        if let Err(msg) = check_augment_draw(seed, n, d, alpha) {
            panic!("draw {draw} (seed {seed}, n {n}, d {d}, alpha {alpha}): {msg}");
        }
    }
}

#[test]
fn reassembly_is_identity_for_every_patch_size() {
    let mut r = rng(8);
    for h in 1..=12 {
        for d in 1..=h {
            let w = r.random_range(d..=12);
            let grid = PatchGrid::new(h, w, d).unwrap();
            let data = random_vec(h * w, 0.0, 1.0, &mut r);
            let mut out = vec![f64::NAN; h * w];
            for p in 0..grid.len() {
                grid.insert(&mut out, p, &grid.extract(&data, p));
            }
            assert_eq!(out, data, "{h}×{w} d={d}");
        }
    }
}

#[test]
fn patch_larger_than_image_is_an_error() {
    let image = Tensor::zeros([4, 4, 1]);
    assert!(mix_augment(&image, None, 5, &AugmentConfig::default(), &mut rng(0)).is_err());
}

#[test]
fn geometric_group_identities() {
    let mut r = rng(9);
    let image = Tensor::uniform([5, 5, 1], 0.0, 1.0, &mut r);
    let (same, _) = dcscan::augment::apply_geometric(Dihedral::IDENTITY, &image, None).unwrap();
    assert_eq!(same, image);
    for g in Dihedral::all() {
        let x = g.apply(image.data(), 5, 5).unwrap();
        let mut y = x.clone();
        for _ in 0..(if g.flip { 1 } else { 3 }) {
            y = g.apply(&y, 5, 5).unwrap();
        }
        // Every flip is an involution; every rotation has order dividing 4.
        assert_eq!(y, image.data(), "{g:?}");
    }
    let label: Vec<usize> = (0..25).collect();
    for _ in 0..20 {
        let (img, lab) = shared_geometric(&image, Some(&label), &mut r).unwrap();
        let lab = lab.unwrap();
        for (i, &src) in lab.iter().enumerate() {
            assert_eq!(img.data()[i], image.data()[src]);
        }
    }
}

#[test]
fn photometric_degenerate_cases() {
    let mut r = rng(10);
    let patch = random_vec(16, 0.0, 1.0, &mut r);
    let off = AugmentConfig { alpha: 0.0, ..Default::default() };
    assert_eq!(strong_photometric(&patch, 4, 4, &off, &mut r).unwrap(), patch);
    let blurred = gaussian_blur(&patch, 4, 4, 1e-3);
    assert!(max_abs_diff(&blurred, &patch) < 1e-12);
    let always = AugmentConfig { alpha: 1.0, ..Default::default() };
    for _ in 0..100 {
        let out = strong_photometric(&patch, 4, 4, &always, &mut r).unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let bad = AugmentConfig { gamma: (1.5, 0.7), ..Default::default() };
    assert!(strong_photometric(&patch, 4, 4, &bad, &mut r).is_err());
}
