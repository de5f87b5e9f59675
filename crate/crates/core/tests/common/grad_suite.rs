//! Finite-difference cases for every differentiable operation, grouped so
//! that unit tests and the acceptance run share one list.

use super::rng;
use dcscan::augment::{mix_augment, AugmentConfig};
use dcscan::data::{gen_synthetic, SyntheticSpec};
use dcscan::losses::{
    ce_loss, contrastive_loss, cross_supervision_loss, dice_ce, dice_loss, fuse_features, one_hot, pseudo_label, supervised_loss, total_loss,
    uncertainty_weights, ContrastiveConfig, Denominator, ScheduleConfig,
};
use dcscan::network::{NetworkConfig, Projector, SegNetwork, VssBlock};
use dcscan::params::ParamStore;
use dcscan::routes::RouteSet;
use dcscan::tensor::{grad_check, grad_check_indices, Binary, Reduce, Tape, Tensor, Unary, Var};
use dcscan::trainer::fused_bottleneck;
use dcscan::Result;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;

#[derive(Debug)]
pub struct Case {
    pub name: String,
    pub error: f64,
    pub tol: f64,
}

impl Case {
    pub fn ok(&self) -> bool {
        self.error < self.tol
    }
}

pub fn assert_cases(cases: &[Case]) {
    let bad: Vec<&Case> = cases.iter().filter(|c| !c.ok()).collect();
    assert!(bad.is_empty(), "{bad:#?}");
}

/// Contracts `out` against fixed random weights so every output element
/// carries a distinct gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let w = Tensor::uniform(tape.shape(out).to_vec(), -1.0, 1.0, &mut rng(seed));
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum_all(p)
}

fn case<F>(name: impl Into<String>, inputs: &[Tensor], f: F) -> Case
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let out = f(tape, v)?;
            weighted_sum(tape, out, 99)
        },
        inputs,
        1e-5,
    )
    .unwrap();
    Case { name: name.into(), error: report.max_rel_error, tol: PRIMITIVE_TOL }
}

fn rand_t(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, r)
}

pub fn unary_cases() -> Vec<Case> {
    let mut r = rng(1);
    let x = rand_t(&[3, 4], -2.0, 2.0, &mut r);
    let pos = rand_t(&[3, 4], 0.3, 2.0, &mut r);
    let ops = [
        Unary::Neg,
        Unary::Exp,
        Unary::Sigmoid,
        Unary::Softplus,
        Unary::Silu,
        Unary::Scale(-1.7),
        Unary::AddScalar(0.3),
    ];
    let mut out: Vec<Case> = ops.iter().map(|&op| case(format!("{op:?}"), std::slice::from_ref(&x), |t, v| t.unary(op, v[0]))).collect();
    out.push(case("Log", std::slice::from_ref(&pos), |t, v| t.unary(Unary::Log, v[0])));
    out.push(case("Powf", &[pos], |t, v| t.unary(Unary::Powf(1.7), v[0])));
    out
}

pub fn binary_cases() -> Vec<Case> {
    let mut r = rng(2);
    let shapes: [(&[usize], &[usize]); 4] = [(&[2, 3], &[2, 3]), (&[2, 3], &[3]), (&[4, 1, 3], &[2, 3]), (&[1], &[2, 2])];
    let mut out = Vec::new();
    for (sa, sb) in shapes {
        let a = rand_t(sa, -2.0, 2.0, &mut r);
        let b = rand_t(sb, 0.5, 2.0, &mut r);
        for op in [Binary::Add, Binary::Sub, Binary::Mul, Binary::Div] {
            out.push(case(format!("{op:?} {sa:?} {sb:?}"), &[a.clone(), b.clone()], |t, v| t.binary(op, v[0], v[1])));
        }
    }
    out
}

pub fn reduction_cases() -> Vec<Case> {
    let mut r = rng(4);
    let x = rand_t(&[3, 4, 2], -2.0, 2.0, &mut r);
    let mut out = Vec::new();
    for op in [Reduce::Sum, Reduce::Mean, Reduce::Max] {
        for axes in [&[0usize][..], &[1], &[2], &[0, 2], &[0, 1, 2]] {
            out.push(case(format!("{op:?} {axes:?}"), std::slice::from_ref(&x), |t, v| t.reduce(op, v[0], axes)));
        }
    }
    out.push(case("mean_all", &[x], |t, v| t.mean_all(v[0])));
    out
}

pub fn matrix_cases() -> Vec<Case> {
    let mut r = rng(5);
    let a = rand_t(&[3, 4], -1.0, 1.0, &mut r);
    let b = rand_t(&[4, 2], -1.0, 1.0, &mut r);
    let x = rand_t(&[2, 3, 4], -1.0, 1.0, &mut r);
    let bias = rand_t(&[2], -1.0, 1.0, &mut r);
    vec![
        case("matmul", &[a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1])),
        case("transpose", std::slice::from_ref(&a), |t, v| t.transpose(v[0])),
        case("reshape", &[a], |t, v| t.reshape(v[0], &[2, 6])),
        case("linear", &[x.clone(), b.clone(), bias], |t, v| t.linear(v[0], v[1], Some(v[2]))),
        case("linear no bias", &[x, b], |t, v| t.linear(v[0], v[1], None)),
    ]
}

pub fn layernorm_conv_cases() -> Vec<Case> {
    let mut r = rng(6);
    let x = rand_t(&[3, 5], -2.0, 2.0, &mut r);
    let gain = rand_t(&[5], 0.5, 1.5, &mut r);
    let bias = rand_t(&[5], -0.5, 0.5, &mut r);
    let img = rand_t(&[5, 4, 2], -1.0, 1.0, &mut r);
    let k = rand_t(&[3, 3, 2], -1.0, 1.0, &mut r);
    vec![
        case("layernorm", &[x, gain, bias], |t, v| t.layernorm(v[0], v[1], v[2], 1e-5)),
        case("depthwise_conv2d", &[img, k], |t, v| t.depthwise_conv2d(v[0], v[1])),
    ]
}

pub fn layout_cases() -> Vec<Case> {
    let mut r = rng(7);
    let m = rand_t(&[4, 3], -1.0, 1.0, &mut r);
    let a = rand_t(&[2, 2, 3], -1.0, 1.0, &mut r);
    let b = rand_t(&[2, 2, 1], -1.0, 1.0, &mut r);
    let g = rand_t(&[4, 6, 2], -1.0, 1.0, &mut r);
    vec![
        case("gather_rows", std::slice::from_ref(&m), |t, v| t.gather_rows(v[0], &[2, 0, 3, 1, 2])),
        case("concat_last", &[a.clone(), b], |t, v| t.concat_last(v[0], v[1])),
        case("narrow_last", std::slice::from_ref(&a), |t, v| t.narrow_last(v[0], 1, 2)),
        case("space_to_depth", &[g], |t, v| t.space_to_depth(v[0], 2)),
        case("upsample_nearest", std::slice::from_ref(&a), |t, v| t.upsample_nearest(v[0], 2)),
        case("stack", &[m.clone(), m.map(|x| x * 2.0 - 0.1)], |t, v| t.stack(&[v[0], v[1], v[0]])),
        case("pick_last", &[m], |t, v| t.pick_last(v[0], &[2, 0, 1, 1])),
        case("log_softmax", std::slice::from_ref(&a), |t, v| t.log_softmax(v[0])),
        case("softmax", &[a], |t, v| t.softmax(v[0])),
    ]
}

pub fn loss_cases() -> Vec<Case> {
    let mut r = rng(8);
    let logits = rand_t(&[3, 3, 3], -2.0, 2.0, &mut r);
    let labels: Vec<usize> = (0..9).map(|i| (i * 7 + 1) % 3).collect();
    let target = one_hot(&labels, [3, 3], 3).unwrap();
    let mut out = vec![
        case("dice_loss", std::slice::from_ref(&logits), |t, v| {
            let p = t.softmax(v[0])?;
            let g = t.constant(target.clone());
            dice_loss(t, p, g, 1e-5)
        }),
        case("ce_loss", &[logits], |t, v| ce_loss(t, v[0], &labels)),
    ];
    let a = rand_t(&[4, 5], -1.0, 1.0, &mut r);
    let b = rand_t(&[4, 5], -1.0, 1.0, &mut r);
    for denominator in [Denominator::WithPositive, Denominator::NegativesOnly] {
        for symmetric in [false, true] {
            let cfg = ContrastiveConfig { temperature: 0.5, denominator, symmetric };
            out.push(case(format!("contrastive {denominator:?} symmetric={symmetric}"), &[a.clone(), b.clone()], |t, v| {
                contrastive_loss(t, v[0], v[1], &cfg)
            }));
        }
    }
    let z: Vec<Tensor> = (0..4).map(|_| rand_t(&[2, 3, 4], -1.0, 1.0, &mut r)).collect();
    out.push(case("uncertainty_weights", &z, uncertainty_weights));
    out.push(case("fuse_features", &z, |t, v| {
        let w = uncertainty_weights(t, v)?;
        fuse_features(t, v, w)
    }));
    out
}

pub fn block_cases() -> Vec<Case> {
    let mut r = rng(9);
    let mut store = ParamStore::new();
    let block = VssBlock::new(&mut store, "blk", 2, 2, 4, 1, &mut r);
    let x = rand_t(&[4, 4, 2], -1.0, 1.0, &mut r);
    let mut inputs = vec![x];
    inputs.extend(store.values().iter().cloned());
    [RouteSet::Hv, RouteSet::Da]
        .into_iter()
        .map(|set| {
            let report = grad_check(
                |tape: &mut Tape, v: &[Var]| {
                    let out = block.forward(tape, &v[1..], set, v[0])?;
                    weighted_sum(tape, out.out, 5)
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            Case { name: format!("vss block {set}"), error: report.max_rel_error, tol: COMPOSITE_TOL }
        })
        .collect()
}

pub fn projector_case() -> Case {
    let mut r = rng(10);
    let proj = Projector::new(6, 16, &mut r);
    let h = rand_t(&[3, 3, 6], -1.0, 1.0, &mut r);
    let mut inputs = vec![h];
    inputs.extend(proj.params().values().iter().cloned());
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let z = proj.forward(tape, &v[1..], v[0])?;
            weighted_sum(tape, z, 6)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    Case { name: "projector".into(), error: report.max_rel_error, tol: PRIMITIVE_TOL }
}

/// `(tensor, element)` pairs: `per_tensor` distinct elements of every tensor.
pub fn sample_elements(tensors: &[Tensor], per_tensor: usize, r: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    tensors
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let k = per_tensor.min(t.len());
            sample(r, t.len(), k).into_iter().map(move |e| (i, e)).collect::<Vec<_>>()
        })
        .collect()
}

/// `sum(logits)` against a 1% sample of the parameters of a 16×16 network.
pub fn network_case() -> Case {
    let mut r = rng(11);
    let cfg = NetworkConfig { image_size: 16, ..Default::default() };
    let net = SegNetwork::new(&cfg, RouteSet::Da, &mut r).unwrap();
    let image = rand_t(&[16, 16, 1], 0.0, 1.0, &mut r);
    let params = net.params().values().to_vec();
    let total: usize = params.iter().map(Tensor::len).sum();
    let flat: Vec<(usize, usize)> = params.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e))).collect();
    let picked: Vec<(usize, usize)> = sample(&mut r, total, total.div_ceil(100)).into_iter().map(|k| flat[k]).collect();
    let report = grad_check_indices(
        |tape: &mut Tape, v: &[Var]| {
            let x = tape.constant(image.clone());
            let out = net.forward(tape, v, x)?;
            tape.sum_all(out.logits)
        },
        &params,
        1e-3,
        &picked,
    )
    .unwrap();
    Case { name: "network logits".into(), error: report.max_rel_error, tol: COMPOSITE_TOL }
}

/// The full co-training objective on one labeled and one unlabeled 16×16
/// image: both networks and both projectors, at a mid-schedule iteration so
/// every term carries weight.
///
/// Cross-supervision targets are argmax maps carried as constants. Finite
/// differences would step across their discontinuities, so the numeric side
/// holds them at their unperturbed values; the case fails outright unless
/// this objective equals the trained one in value and in analytic gradient.
pub fn total_loss_case() -> Case {
    let net_cfg = NetworkConfig { image_size: 16, ..Default::default() };
    let data = gen_synthetic(&SyntheticSpec {
        image_size: 16,
        num_labeled: 1,
        num_unlabeled: 1,
        num_test: 0,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let mut r = rng(13);
    let net_a = SegNetwork::new(&net_cfg, RouteSet::Hv, &mut r).unwrap();
    let net_b = SegNetwork::new(&net_cfg, RouteSet::Da, &mut r).unwrap();
    let proj_a = Projector::new(net_cfg.bottleneck_feature_dim(), net_cfg.projector_dim, &mut r);
    let proj_b = Projector::new(net_cfg.bottleneck_feature_dim(), net_cfg.projector_dim, &mut r);
    let aug = AugmentConfig::default();
    let views: Vec<_> = [&data.labeled[0], &data.unlabeled[0]]
        .iter()
        .map(|s| mix_augment(&s.image, s.label.as_deref(), 4, &aug, &mut r).unwrap())
        .collect();
    let frozen: Vec<(Vec<usize>, Vec<usize>)> = views
        .iter()
        .map(|p| {
            (
                pseudo_label(&net_a.predict_logits(&p.first).unwrap()),
                pseudo_label(&net_b.predict_logits(&p.second).unwrap()),
            )
        })
        .collect();
    let sizes = [net_a.params().len(), net_b.params().len(), proj_a.params().len()];
    let mut inputs: Vec<Tensor> = net_a.params().values().to_vec();
    inputs.extend(net_b.params().values().iter().cloned());
    inputs.extend(proj_a.params().values().iter().cloned());
    inputs.extend(proj_b.params().values().iter().cloned());
    let schedule = ScheduleConfig { t_max: 10 };
    let contrastive = ContrastiveConfig::default();
    let objective = |freeze: bool| {
        let (views, frozen) = (&views, &frozen);
        let (net_a, net_b, proj_a, proj_b) = (&net_a, &net_b, &proj_a, &proj_b);
        move |tape: &mut Tape, v: &[Var]| -> Result<Var> {
            let (va, rest) = v.split_at(sizes[0]);
            let (vb, rest) = rest.split_at(sizes[1]);
            let (vpa, vpb) = rest.split_at(sizes[2]);
            let (mut sup, mut unsup, mut za, mut zb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (p, (la, lb)) in views.iter().zip(frozen) {
                let xa = tape.constant(p.first.clone());
                let xb = tape.constant(p.second.clone());
                let oa = net_a.forward(tape, va, xa)?;
                let ob = net_b.forward(tape, vb, xb)?;
                if let Some(lab) = &p.label {
                    sup.push(supervised_loss(tape, oa.logits, ob.logits, lab)?);
                }
                unsup.push(if freeze {
                    let x = dice_ce(tape, oa.logits, lb)?;
                    let y = dice_ce(tape, ob.logits, la)?;
                    tape.add(x, y)?
                } else {
                    cross_supervision_loss(tape, oa.logits, ob.logits)?
                });
                let ha = fused_bottleneck(tape, &oa.route_feats)?;
                let hb = fused_bottleneck(tape, &ob.route_feats)?;
                za.push(proj_a.forward(tape, vpa, ha)?);
                zb.push(proj_b.forward(tape, vpb, hb)?);
            }
            let unsup_sum = tape.add(unsup[0], unsup[1])?;
            let unsup_mean = tape.scale(unsup_sum, 0.5)?;
            let pa = tape.stack(&za)?;
            let pb = tape.stack(&zb)?;
            let dfc = contrastive_loss(tape, pa, pb, &contrastive)?;
            total_loss(tape, sup[0], unsup_mean, dfc, 5, &schedule)
        }
    };
    let analytic = |freeze: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = objective(freeze)(&mut tape, &v).unwrap();
        let value = tape.value(out).item();
        let g = tape.backward(out).unwrap();
        (value, v.iter().zip(&inputs).map(|(&x, t)| g.get_or_zeros(x, t)).collect())
    };
    let (trained, frozen_view) = (analytic(false), analytic(true));
    let mut gap = (trained.0 - frozen_view.0).abs();
    for (a, b) in trained.1.iter().zip(&frozen_view.1) {
        gap = gap.max(a.max_abs_diff(b));
    }
    let picked = sample_elements(&inputs, 3, &mut r);
    // Tensors span gradients from 1e-12 to 1e-2: tiny ones need a wide step
    // to clear roundoff, strongly curved ones a narrow step, so each element
    // is scored at the better of two fixed steps.
    let worst = picked
        .iter()
        .map(|&pick| {
            [1e-3, 1e-4]
                .iter()
                .map(|&h| grad_check_indices(objective(true), &inputs, h, &[pick]).unwrap().max_rel_error)
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let error = if gap == 0.0 { worst } else { f64::INFINITY };
    Case { name: "total loss, 2 images 16x16".into(), error, tol: COMPOSITE_TOL }
}

pub fn all_cases() -> Vec<Case> {
    let mut out = unary_cases();
    out.extend(binary_cases());
    out.extend(reduction_cases());
    out.extend(matrix_cases());
    out.extend(layernorm_conv_cases());
    out.extend(layout_cases());
    out.extend(loss_cases());
    out.extend(block_cases());
    out.push(projector_case());
    out.push(network_case());
    out.push(total_loss_case());
    out
}
