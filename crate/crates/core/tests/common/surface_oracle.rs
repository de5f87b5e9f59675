//! All-pairs reference for boundary distances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn brute_boundary(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            let neighbours = [(r as i64 - 1, c as i64), (r as i64 + 1, c as i64), (r as i64, c as i64 - 1), (r as i64, c as i64 + 1)];
            let touches_background = neighbours.iter().any(|&(y, x)| {
                y < 0 || x < 0 || y >= h as i64 || x >= w as i64 || !mask[y as usize * w + x as usize]
            });
            if touches_background {
                out.push((r, c));
            }
        }
    }
    out
}

pub fn brute_directed(from: &[(usize, usize)], to: &[(usize, usize)]) -> Vec<f64> {
    from.iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(y, x)| ((r as f64 - y as f64).powi(2) + (c as f64 - x as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn brute_percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// All-pairs `(asd, hd95)`; `None` when exactly one boundary is empty.
pub fn brute_surface(a: &[bool], b: &[bool], h: usize, w: usize) -> Option<(f64, f64)> {
    let (ba, bb) = (brute_boundary(a, h, w), brute_boundary(b, h, w));
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return Some((0.0, 0.0)),
        (false, false) => {}
        _ => return None,
    }
    let ab = brute_directed(&ba, &bb);
    let bab = brute_directed(&bb, &ba);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some((
        0.5 * (mean(&ab) + mean(&bab)),
        brute_percentile(&ab, 0.95).max(brute_percentile(&bab, 0.95)),
    ))
}

pub fn blobby_mask(h: usize, w: usize, r: &mut ChaCha8Rng) -> Vec<bool> {
    match r.random_range(0..4) {
        0 => vec![false; h * w],
        1 => (0..h * w).map(|_| r.random_bool(0.3)).collect(),
        _ => {
            let (r0, c0) = (r.random_range(0..h), r.random_range(0..w));
            let (r1, c1) = (r.random_range(r0..h), r.random_range(c0..w));
            let mut m: Vec<bool> = (0..h * w).map(|i| (r0..=r1).contains(&(i / w)) && (c0..=c1).contains(&(i % w))).collect();
            for _ in 0..r.random_range(0..4) {
                let k = r.random_range(0..h * w);
                m[k] = !m[k];
            }
            m
        }
    }
}

pub fn random_mask_pair(r: &mut ChaCha8Rng) -> (usize, usize, Vec<bool>, Vec<bool>) {
    let (h, w) = (r.random_range(1..=16), r.random_range(1..=16));
    (h, w, blobby_mask(h, w, r), blobby_mask(h, w, r))
}
