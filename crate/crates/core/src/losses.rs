//! Objective terms: dice, cross-entropy, uncertainty-weighted route fusion,
//! the cross-network contrastive loss, cross-supervision and the warm-up
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax_last, Reduce, Tape, Tensor, Var};

pub const DICE_EPS: f64 = 1e-5;

/// Peak weight of the unsupervised term.
pub const LAMBDA_PEAK: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub t_max: usize,
}

impl ScheduleConfig {
    pub fn new(t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        Ok(ScheduleConfig { t_max })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Positive pair included alongside the negatives.
    WithPositive,
    /// Negatives only.
    NegativesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub denominator: Denominator,
    /// Average the a→b and b→a directions.
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.5,
            denominator: Denominator::WithPositive,
            symmetric: false,
        }
    }
}

/// One-hot `H×W×K` encoding of a class map.
pub fn one_hot(labels: &[usize], shape_hw: [usize; 2], classes: usize) -> Result<Tensor> {
    let n = shape_hw[0] * shape_hw[1];
    if labels.len() != n {
        return Err(Error::shape("one_hot", &shape_hw, &[labels.len()]));
    }
    let mut t = Tensor::zeros([shape_hw[0], shape_hw[1], classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::domain("one_hot", format!("class {l} out of range {classes}")));
        }
        t.data_mut()[i * classes + l] = 1.0;
    }
    Ok(t)
}

/// `1 - mean_{c≥1} (2Σpg + ε)/(Σp + Σg + ε)` over foreground classes.
pub fn dice_loss(tape: &mut Tape, probs: Var, target: Var, eps: f64) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape != tape.shape(target) {
        return Err(Error::shape("dice_loss", &shape, tape.shape(target)));
    }
    let k = match shape.last() {
        Some(&k) if k >= 2 => k,
        _ => return Err(Error::domain("dice_loss", "needs at least two classes on the last axis")),
    };
    let spatial: Vec<usize> = (0..shape.len() - 1).collect();
    let pg = tape.mul(probs, target)?;
    let inter = tape.reduce(Reduce::Sum, pg, &spatial)?;
    let sp = tape.reduce(Reduce::Sum, probs, &spatial)?;
    let sg = tape.reduce(Reduce::Sum, target, &spatial)?;
    let num = tape.scale(inter, 2.0)?;
    let num = tape.add_scalar(num, eps)?;
    let den = tape.add(sp, sg)?;
    let den = tape.add_scalar(den, eps)?;
    let dice = tape.div(num, den)?;
    let fg = tape.narrow_last(dice, 1, k - 1)?;
    let mean = tape.reduce(Reduce::Mean, fg, &[0])?;
    let neg = tape.neg(mean)?;
    tape.add_scalar(neg, 1.0)
}

/// Mean over pixels of `-log softmax(logits)[target]`.
pub fn ce_loss(tape: &mut Tape, logits: Var, target: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax(logits)?;
    let picked = tape.pick_last(ls, target)?;
    let m = tape.mean_all(picked)?;
    tape.neg(m)
}

/// `½(dice + ce)` of `logits` against a class map.
pub fn dice_ce(tape: &mut Tape, logits: Var, target: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let [h, w, k] = shape[..] else {
        return Err(Error::domain("dice_ce", format!("expected H×W×K logits, got {shape:?}")));
    };
    let probs = tape.softmax(logits)?;
    let oh = tape.constant(one_hot(target, [h, w], k)?);
    let d = dice_loss(tape, probs, oh, DICE_EPS)?;
    let c = ce_loss(tape, logits, target)?;
    let s = tape.add(d, c)?;
    tape.scale(s, 0.5)
}

/// Per-pixel argmax; ties go to the lowest class index. Not differentiated.
pub fn pseudo_label(logits: &Tensor) -> Vec<usize> {
    argmax_last(logits)
}

/// `½(dice+ce)(a, y) + ½(dice+ce)(b, y)`.
pub fn supervised_loss(tape: &mut Tape, logits_a: Var, logits_b: Var, label: &[usize]) -> Result<Var> {
    let la = dice_ce(tape, logits_a, label)?;
    let lb = dice_ce(tape, logits_b, label)?;
    tape.add(la, lb)
}

/// `½(dice+ce)(a, argmax b) + ½(dice+ce)(b, argmax a)`; pseudo-labels carry no gradient.
pub fn cross_supervision_loss(tape: &mut Tape, logits_a: Var, logits_b: Var) -> Result<Var> {
    let pa = pseudo_label(tape.value(logits_a));
    let pb = pseudo_label(tape.value(logits_b));
    let la = dice_ce(tape, logits_a, &pb)?;
    let lb = dice_ce(tape, logits_b, &pa)?;
    tape.add(la, lb)
}

/// `w = σ(mean_c (1/K) Σ_k (z_k - z̄)²)`, one weight per spatial location (`H×W×1`).
pub fn uncertainty_weights(tape: &mut Tape, route_feats: &[Var]) -> Result<Var> {
    if route_feats.len() != 4 {
        return Err(Error::domain(
            "uncertainty_weights",
            format!("expected 4 route features, got {}", route_feats.len()),
        ));
    }
    let shape = tape.shape(route_feats[0]).to_vec();
    if route_feats.iter().any(|&z| tape.shape(z) != shape.as_slice()) || shape.len() != 3 {
        return Err(Error::shape("uncertainty_weights", &shape, tape.shape(route_feats[1])));
    }
    let k = route_feats.len() as f64;
    let mut sum = route_feats[0];
    for &z in &route_feats[1..] {
        sum = tape.add(sum, z)?;
    }
    let mean = tape.scale(sum, 1.0 / k)?;
    let mut var = None;
    for &z in route_feats {
        let d = tape.sub(z, mean)?;
        let sq = tape.mul(d, d)?;
        var = Some(match var {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let var = tape.scale(var.unwrap(), 1.0 / k)?;
    let v = tape.reduce(Reduce::Mean, var, &[2])?;
    let v = tape.reshape(v, &[shape[0], shape[1], 1])?;
    tape.sigmoid(v)
}

/// `h = (Σ_k z_k) ⊙ w`, `w` broadcast over channels.
pub fn fuse_features(tape: &mut Tape, route_feats: &[Var], w: Var) -> Result<Var> {
    let Some((&first, rest)) = route_feats.split_first() else {
        return Err(Error::domain("fuse_features", "no route features"));
    };
    let mut sum = first;
    for &z in rest {
        sum = tape.add(sum, z)?;
    }
    tape.mul(sum, w)
}

fn contrastive_one_way(tape: &mut Tape, a: Var, b: Var, cfg: &ContrastiveConfig) -> Result<Var> {
    let (n, d) = match (tape.shape(a), tape.shape(b)) {
        (&[n, d], &[n2, d2]) if n == n2 && d == d2 => (n, d),
        (sa, sb) => return Err(Error::shape("contrastive_loss", sa, sb)),
    };
    if n < 2 {
        return Err(Error::domain("contrastive_loss", "batch size must be at least 2"));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::domain("contrastive_loss", "temperature must be positive"));
    }
    let tau = cfg.temperature;
    let with_pos = cfg.denominator == Denominator::WithPositive;
    let in_den = move |i: usize, j: usize| with_pos || i != j;

    // sim[i*n + j] = <a_i, b_j>/τ, softmax weights over each row's denominator set.
    let (av, bv) = (tape.value(a).data(), tape.value(b).data());
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = (0..d).map(|c| av[i * d + c] * bv[j * d + c]).sum::<f64>() / tau;
        }
    }
    let mut probs = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let m = (0..n).filter(|&j| in_den(i, j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&j| in_den(i, j)).map(|j| (row[j] - m).exp()).sum();
        for j in (0..n).filter(|&j| in_den(i, j)) {
            probs[i * n + j] = (row[j] - m).exp() / z;
        }
        total += m + z.ln() - row[i];
    }
    let loss = Tensor::scalar(total / n as f64);
    tape.record("contrastive_loss", loss, &[a, b], move |g, ins, _| {
        let (av, bv) = (ins[0].data(), ins[1].data());
        let scale = g.item() / (n as f64 * tau);
        let mut ga = vec![0.0; n * d];
        let mut gb = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..n {
                let ds = (probs[i * n + j] - if i == j { 1.0 } else { 0.0 }) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..d {
                    ga[i * d + c] += ds * bv[j * d + c];
                    gb[j * d + c] += ds * av[i * d + c];
                }
            }
        }
        vec![
            Tensor::from_parts(vec![n, d], ga),
            Tensor::from_parts(vec![n, d], gb),
        ]
    })
}

/// Mean over `i` of `-log(exp(<a_i,b_i>/τ) / Σ_{j∈den(i)} exp(<a_i,b_j>/τ))`.
pub fn contrastive_loss(tape: &mut Tape, a: Var, b: Var, cfg: &ContrastiveConfig) -> Result<Var> {
    let ab = contrastive_one_way(tape, a, b, cfg)?;
    if !cfg.symmetric {
        return Ok(ab);
    }
    let ba = contrastive_one_way(tape, b, a, cfg)?;
    let s = tape.add(ab, ba)?;
    tape.scale(s, 0.5)
}

/// `λ(t) = 0.1·exp(-5(1 - t/t_max)²)` for `0 ≤ t ≤ t_max`.
pub fn lambda_schedule(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if cfg.t_max == 0 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    if t > cfg.t_max {
        return Err(Error::domain("lambda_schedule", format!("t={t} beyond t_max={}", cfg.t_max)));
    }
    let r = 1.0 - t as f64 / cfg.t_max as f64;
    Ok(LAMBDA_PEAK * (-5.0 * r * r).exp())
}

/// `sup + λ(t)·unsup + dfc` on the tape.
pub fn total_loss(
    tape: &mut Tape,
    sup: Var,
    unsup: Var,
    dfc: Var,
    t: usize,
    cfg: &ScheduleConfig,
) -> Result<Var> {
    let lambda = lambda_schedule(t, cfg)?;
    let u = tape.scale(unsup, lambda)?;
    let s = tape.add(sup, u)?;
    tape.add(s, dfc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tape, v: Var) -> f64 {
        t.value(v).item()
    }

    #[test]
    fn schedule_points() {
        let cfg = ScheduleConfig::new(100).unwrap();
        assert_eq!(lambda_schedule(100, &cfg).unwrap(), 0.1);
        assert!((lambda_schedule(0, &cfg).unwrap() - 0.1 * (-5f64).exp()).abs() < 1e-15);
        assert!((lambda_schedule(0, &cfg).unwrap() - 6.7379e-4).abs() < 1e-8);
        assert!((lambda_schedule(50, &cfg).unwrap() - 2.8650e-2).abs() < 1e-6);
        assert!(lambda_schedule(101, &cfg).is_err());
        assert!(ScheduleConfig::new(0).is_err());
    }

    #[test]
    fn total_is_linear_combination() {
        let cfg = ScheduleConfig::new(10).unwrap();
        let mut t = Tape::new();
        let one = t.constant(Tensor::scalar(1.0));
        let tot = total_loss(&mut t, one, one, one, 10, &cfg).unwrap();
        assert!((scalar(&t, tot) - 2.1).abs() < 1e-15);
    }

    #[test]
    fn pseudo_label_ties_and_shift() {
        let l = Tensor::new([1, 2, 3], vec![0.1, 2.0, -1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(pseudo_label(&l), vec![1, 0]);
        assert_eq!(pseudo_label(&l.map(|x| x + 7.5)), vec![1, 0]);
    }

    #[test]
    fn ce_uniform_two_classes() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::zeros([2, 2, 2]));
        let c = ce_loss(&mut t, l, &[0, 1, 1, 0]).unwrap();
        assert!((scalar(&t, c) - std::f64::consts::LN_2).abs() < 1e-15);
        let big = t.constant(Tensor::new([1, 1, 2], vec![0.0, 60.0]).unwrap());
        let c = ce_loss(&mut t, big, &[1]).unwrap();
        assert!(scalar(&t, c) < 1e-25);
        assert!(ce_loss(&mut t, big, &[2]).is_err());
    }

    #[test]
    fn contrastive_needs_two() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros([1, 3]));
        assert!(contrastive_loss(&mut t, a, a, &ContrastiveConfig::default()).is_err());
    }

    #[test]
    fn uncertainty_requires_four_routes() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros([2, 2, 1]));
        assert!(uncertainty_weights(&mut t, &[z, z, z]).is_err());
    }
}
