#![allow(dead_code)]

pub mod grad_suite;
pub mod surface_oracle;

use dcscan::ssm::SsmParams;
use dcscan::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Random SSM parameters with `A_log` spread so that decays differ per state.
pub fn random_ssm(channels: usize, state_dim: usize, rank: usize, r: &mut ChaCha8Rng) -> SsmParams {
    let mut p = SsmParams::init(channels, state_dim, rank, r);
    p.a_log = Tensor::uniform([channels, state_dim], -1.5, 1.0, r);
    p.d = Tensor::uniform([channels], -1.0, 1.0, r);
    p.dt_bias = Tensor::uniform([channels], -1.0, 0.5, r);
    p
}

/// Dense `O(L²)` evaluation of the scan,
/// `y_t = Σ_{s≤t} C_t (Π_{r=s+1..t} Ā_r) B̄_s u_s + D u_t`, with `Ā`, `B̄`
/// taken straight from their definitions.
pub fn unrolled_scan(
    a_log: &[f64],
    d: &[f64],
    u: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    l: usize,
    ch: usize,
    n: usize,
) -> Vec<f64> {
    let abar = |t: usize, k: usize, j: usize| (delta[t * ch + k] * -a_log[k * n + j].exp()).exp();
    let bbar = |t: usize, k: usize, j: usize| {
        let a = -a_log[k * n + j].exp();
        let x = delta[t * ch + k] * a;
        let f = if x.abs() < 1e-6 {
            delta[t * ch + k] * (1.0 + x / 2.0 + x * x / 6.0)
        } else {
            (x.exp() - 1.0) / a
        };
        f * b[t * n + j]
    };
    let mut y = vec![0.0; l * ch];
    for t in 0..l {
        for k in 0..ch {
            let mut acc = d[k] * u[t * ch + k];
            for s in 0..=t {
                for j in 0..n {
                    let mut prod = 1.0;
                    for r in s + 1..=t {
                        prod *= abar(r, k, j);
                    }
                    acc += c[t * n + j] * prod * bbar(s, k, j) * u[s * ch + k];
                }
            }
            y[t * ch + k] = acc;
        }
    }
    y
}

/// `Δ = softplus(u·W_down·W_up + b)`, `B = u·W_B`, `C = u·W_C`, by loops.
pub fn parameterize(p: &SsmParams, u: &[f64], l: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ch = p.channels();
    let n = p.state_dim();
    let r = p.dt_down.shape()[1];
    let (wd, wu) = (p.dt_down.data(), p.dt_up.data());
    let mut delta = vec![0.0; l * ch];
    let mut b = vec![0.0; l * n];
    let mut c = vec![0.0; l * n];
    for t in 0..l {
        let low: Vec<f64> = (0..r).map(|q| (0..ch).map(|k| u[t * ch + k] * wd[k * r + q]).sum()).collect();
        for k in 0..ch {
            let z: f64 = (0..r).map(|q| low[q] * wu[q * ch + k]).sum::<f64>() + p.dt_bias.data()[k];
            delta[t * ch + k] = softplus(z);
        }
        for j in 0..n {
            b[t * n + j] = (0..ch).map(|k| u[t * ch + k] * p.w_b.data()[k * n + j]).sum();
            c[t * n + j] = (0..ch).map(|k| u[t * ch + k] * p.w_c.data()[k * n + j]).sum();
        }
    }
    (delta, b, c)
}

/// Full S6 oracle on an `L×C` sequence.
pub fn s6_oracle(p: &SsmParams, u: &[f64], l: usize) -> Vec<f64> {
    let (delta, b, c) = parameterize(p, u, l);
    unrolled_scan(
        p.a_log.data(),
        p.d.data(),
        u,
        &delta,
        &b,
        &c,
        l,
        p.channels(),
        p.state_dim(),
    )
}

pub fn random_vec(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn random_mask(n: usize, p: f64, r: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| r.random_bool(p) as usize).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Checks one `mix_augment` draw on a random image: complementarity of the
/// assignment, pixel alignment of weak patches with the geometric image, and
/// collapse of the two views when `alpha = 0`.
pub fn check_augment_draw(seed: u64, n: usize, d: usize, alpha: f64) -> std::result::Result<(), String> {
    use dcscan::augment::{apply_geometric, mix_augment, AugmentConfig};
    let mut r = rng(seed);
    let image = Tensor::uniform([n, n, 1], 0.0, 1.0, &mut r);
    let label: Vec<usize> = image.data().iter().map(|&v| usize::from(v > 0.5)).collect();
    let cfg = AugmentConfig { alpha, ..Default::default() };
    let pair = mix_augment(&image, Some(&label), d, &cfg, &mut r).map_err(|e| e.to_string())?;
    let (geo, geo_label) = apply_geometric(pair.geometric, &image, Some(&label)).map_err(|e| e.to_string())?;
    if pair.weak != geo {
        return Err("weak image differs from the geometric transform".into());
    }
    // Label consistency: thresholding commutes with the shared geometry.
    let relabel: Vec<usize> = geo.data().iter().map(|&v| usize::from(v > 0.5)).collect();
    if geo_label.as_ref() != Some(&relabel) || pair.label.as_ref() != Some(&relabel) {
        return Err("label does not follow the image geometry".into());
    }
    let second = pair.strong_in_second();
    if pair.strong_in_first.iter().zip(&second).any(|(a, b)| a == b) {
        return Err("assignment XOR is not all ones".into());
    }
    let per_side = n / d;
    let mask = pair.mask_image();
    for (i, ((&x1, &x2), &w)) in pair.first.data().iter().zip(pair.second.data()).zip(geo.data()).enumerate() {
        let (row, col) = ((i / n / d).min(per_side - 1), (i % n / d).min(per_side - 1));
        let strong_first = pair.strong_in_first[row * per_side + col];
        if mask.data()[i] != f64::from(u8::from(strong_first)) {
            return Err(format!("mask pixel {i} disagrees with the assignment"));
        }
        let weak_side = if strong_first { x2 } else { x1 };
        if weak_side != w {
            return Err(format!("weak pixel {i} not aligned with the geometric image"));
        }
        if alpha == 0.0 && (x1 != w || x2 != w) {
            return Err(format!("alpha = 0 but pixel {i} was changed"));
        }
        if !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&x2) {
            return Err(format!("pixel {i} left [0,1]"));
        }
    }
    Ok(())
}
