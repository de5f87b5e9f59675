//! Co-training of two segmentation networks with cross-supervision and a
//! contrastive term on fused bottleneck features.
//!
//! All randomness of iteration `t` comes from ChaCha streams keyed by
//! `(seed, t, purpose)`, so a run resumed from a checkpoint replays the
//! uninterrupted run bit for bit.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{mix_augment, shared_geometric, AugmentConfig};
use crate::data::{MetricReport, Sample, SplitDataset};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_loss, cross_supervision_loss, dice_ce, fuse_features, lambda_schedule, pseudo_label, supervised_loss,
    total_loss, uncertainty_weights, ContrastiveConfig, ScheduleConfig,
};
use crate::network::{NetworkConfig, Projector, SegNetwork};
use crate::params::ParamStore;
use crate::routes::RouteSet;
use crate::tensor::{Reduce, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub labeled_batch: usize,
    pub t_max: usize,
    /// Iterations between metric-log lines; 0 disables periodic evaluation.
    pub eval_interval: usize,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub route_set_a: RouteSet,
    pub route_set_b: RouteSet,
    /// Weak/strong patch mixing; when off both networks see the same weak view.
    pub mix_views: bool,
    pub use_dfc: bool,
    pub unsup_unlabeled_only: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 24,
            labeled_batch: 12,
            t_max: 1000,
            eval_interval: 100,
            checkpoint_interval: 0,
            route_set_a: RouteSet::Hv,
            route_set_b: RouteSet::Da,
            mix_views: true,
            use_dfc: true,
            unsup_unlabeled_only: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer.{m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.labeled_batch == 0 || self.labeled_batch > self.batch_size {
            return bad("labeled_batch must lie in 1..=batch_size");
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        Ok(())
    }

    fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig { t_max: self.t_max }
    }
}

/// `g' = g + wd·θ; v ← μv + g'; θ ← θ − lr·v`, elementwise over aligned slices.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], buffers: &mut [Tensor], cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != buffers.len() {
        return Err(Error::invalid("sgd_step: parameter, gradient and buffer counts differ"));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(buffers.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
            *p -= cfg.lr * *v;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Stream {
    Init = 0,
    Batch = 1,
    Augment = 2,
}

fn stream_rng(seed: u64, t: usize, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 2) | purpose as u64);
    rng
}

/// RNG driving the augmentation of iteration `t`.
pub fn augment_rng(seed: u64, t: usize) -> ChaCha8Rng {
    stream_rng(seed, t, Stream::Augment)
}

/// RNG driving batch selection of iteration `t`.
pub fn batch_rng(seed: u64, t: usize) -> ChaCha8Rng {
    stream_rng(seed, t, Stream::Batch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Iteration index the losses were computed at (before the update).
    pub t: usize,
    pub sup: f64,
    pub unsup: f64,
    pub dfc: f64,
    pub lambda: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    A,
    B,
}

/// A network with its projector and momentum buffers.
#[derive(Clone, Debug)]
pub struct Member {
    pub net: SegNetwork,
    pub projector: Projector,
    pub net_momentum: Vec<Tensor>,
    pub proj_momentum: Vec<Tensor>,
}

impl Member {
    fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, route_set: RouteSet, rng: &mut R) -> Result<Self> {
        let net = SegNetwork::new(cfg, route_set, rng)?;
        let projector = Projector::new(cfg.bottleneck_feature_dim(), cfg.projector_dim, rng);
        Ok(Member {
            net_momentum: zeros_like(net.params()),
            proj_momentum: zeros_like(projector.params()),
            net,
            projector,
        })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        self.net.save(&dir.join("net"))?;
        self.projector.save(&dir.join("projector"))?;
        buffers_store(self.net.params(), &self.net_momentum).save(&dir.join("net_momentum"), &[])?;
        buffers_store(self.projector.params(), &self.proj_momentum).save(&dir.join("projector_momentum"), &[])
    }

    fn load(dir: &Path) -> Result<Self> {
        let net = SegNetwork::load(&dir.join("net"))?;
        let projector = Projector::load(&dir.join("projector"))?;
        let load_buffers = |sub: &str, like: &ParamStore| -> Result<Vec<Tensor>> {
            let (store, _) = ParamStore::load(&dir.join(sub))?;
            let mut out = like.clone();
            out.copy_from(&store)?;
            Ok(out.values().to_vec())
        };
        Ok(Member {
            net_momentum: load_buffers("net_momentum", net.params())?,
            proj_momentum: load_buffers("projector_momentum", projector.params())?,
            net,
            projector,
        })
    }
}

fn zeros_like(store: &ParamStore) -> Vec<Tensor> {
    store.values().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn buffers_store(like: &ParamStore, buffers: &[Tensor]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, b) in like.names().iter().zip(buffers) {
        s.add(name.clone(), b.clone());
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StateFile {
    t: usize,
    train: TrainConfig,
    seed: u64,
    augment: AugmentConfig,
    contrastive: ContrastiveConfig,
}

#[derive(Clone, Debug)]
pub struct CoTrainState {
    pub a: Member,
    pub b: Member,
    pub t: usize,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub contrastive: ContrastiveConfig,
}

impl CoTrainState {
    pub fn new(
        network: &NetworkConfig,
        train: TrainConfig,
        augment: AugmentConfig,
        contrastive: ContrastiveConfig,
    ) -> Result<Self> {
        network.validate()?;
        train.validate()?;
        augment.validate()?;
        let mut rng = stream_rng(train.seed, 0, Stream::Init);
        let a = Member::new(network, train.route_set_a, &mut rng)?;
        let b = Member::new(network, train.route_set_b, &mut rng)?;
        Ok(CoTrainState { a, b, t: 0, train, augment, contrastive })
    }

    pub fn member(&self, which: Which) -> &Member {
        match which {
            Which::A => &self.a,
            Which::B => &self.b,
        }
    }

    /// One optimisation step on the given labeled and unlabeled images.
    pub fn train_iteration(&mut self, labeled: &[&Sample], unlabeled: &[&Sample]) -> Result<LossBreakdown> {
        if labeled.is_empty() {
            return Err(Error::invalid("train_iteration needs at least one labeled image"));
        }
        if self.t >= self.train.t_max {
            return Err(Error::invalid(format!("iteration {} reaches t_max {}", self.t, self.train.t_max)));
        }
        let cfg = self.train.clone();
        let lambda = lambda_schedule(self.t, &cfg.schedule())?;
        let mut rng = augment_rng(cfg.seed, self.t);
        let extent = labeled[0].extent();
        let d = self.augment.sample_patch_size(extent, &mut rng)?;

        let mut tape = Tape::new();
        let va = self.a.net.params().bind(&mut tape);
        let vb = self.b.net.params().bind(&mut tape);
        let vpa = self.a.projector.params().bind(&mut tape);
        let vpb = self.b.projector.params().bind(&mut tape);

        let mut sup_terms = Vec::new();
        let mut unsup_terms = Vec::new();
        let (mut proj_a, mut proj_b) = (Vec::new(), Vec::new());
        for (i, s) in labeled.iter().chain(unlabeled).enumerate() {
            let is_labeled = i < labeled.len();
            let label = if is_labeled {
                Some(s.label.as_deref().ok_or_else(|| Error::invalid("labeled batch holds an unlabeled image"))?)
            } else {
                None
            };
            let (xa, xb, lab) = if cfg.mix_views {
                let p = mix_augment(&s.image, label, d, &self.augment, &mut rng)?;
                (p.first, p.second, p.label)
            } else {
                let (img, lab) = shared_geometric(&s.image, label, &mut rng)?;
                (img.clone(), img, lab)
            };
            let xa = tape.constant(xa);
            let xb = tape.constant(xb);
            let oa = self.a.net.forward(&mut tape, &va, xa)?;
            let ob = self.b.net.forward(&mut tape, &vb, xb)?;
            if let Some(lab) = lab {
                sup_terms.push(supervised_loss(&mut tape, oa.logits, ob.logits, &lab)?);
            }
            if !(cfg.unsup_unlabeled_only && is_labeled) {
                unsup_terms.push(cross_supervision_loss(&mut tape, oa.logits, ob.logits)?);
            }
            if cfg.use_dfc {
                let ha = fused_bottleneck(&mut tape, &oa.route_feats)?;
                let hb = fused_bottleneck(&mut tape, &ob.route_feats)?;
                proj_a.push(self.a.projector.forward(&mut tape, &vpa, ha)?);
                proj_b.push(self.b.projector.forward(&mut tape, &vpb, hb)?);
            }
        }
        let sup = mean_of(&mut tape, &sup_terms)?;
        let unsup = mean_of(&mut tape, &unsup_terms)?;
        let dfc = if cfg.use_dfc {
            let pa = tape.stack(&proj_a)?;
            let pb = tape.stack(&proj_b)?;
            contrastive_loss(&mut tape, pa, pb, &self.contrastive)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        let total = total_loss(&mut tape, sup, unsup, dfc, self.t, &cfg.schedule())?;
        let breakdown = LossBreakdown {
            t: self.t,
            sup: tape.value(sup).item(),
            unsup: tape.value(unsup).item(),
            dfc: tape.value(dfc).item(),
            lambda,
            total: tape.value(total).item(),
        };
        let grads = tape.backward(total)?;
        let collect = |vars: &[Var], store: &ParamStore| -> Vec<Tensor> {
            vars.iter().zip(store.values()).map(|(&v, p)| grads.get_or_zeros(v, p)).collect()
        };
        let (ga, gb) = (collect(&va, self.a.net.params()), collect(&vb, self.b.net.params()));
        let (gpa, gpb) = (collect(&vpa, self.a.projector.params()), collect(&vpb, self.b.projector.params()));
        sgd_step(self.a.net.params_mut().values_mut(), &ga, &mut self.a.net_momentum, &cfg)?;
        sgd_step(self.b.net.params_mut().values_mut(), &gb, &mut self.b.net_momentum, &cfg)?;
        sgd_step(self.a.projector.params_mut().values_mut(), &gpa, &mut self.a.proj_momentum, &cfg)?;
        sgd_step(self.b.projector.params_mut().values_mut(), &gpb, &mut self.b.proj_momentum, &cfg)?;
        self.t += 1;
        Ok(breakdown)
    }

    /// Draws the batch of iteration `t` and trains on it.
    pub fn step(&mut self, data: &SplitDataset) -> Result<LossBreakdown> {
        let mut rng = batch_rng(self.train.seed, self.t);
        let labeled = pick(&data.labeled, self.train.labeled_batch, &mut rng);
        let unlabeled = pick(&data.unlabeled, self.train.batch_size - self.train.labeled_batch, &mut rng);
        self.train_iteration(&labeled, &unlabeled)
    }

    /// Metrics of one member's network on labeled images.
    pub fn evaluate(&self, samples: &[Sample], which: Which) -> Result<MetricReport> {
        evaluate_network(&self.member(which).net, samples)
    }

    /// Mean over images of `1 − cos` between the pooled fused bottleneck
    /// features of the two networks.
    pub fn diversity_measure(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("diversity_measure needs at least one image"));
        }
        let mut total = 0.0;
        for s in samples {
            let fa = pooled_fused_feature(&self.a.net, &s.image)?;
            let fb = pooled_fused_feature(&self.b.net, &s.image)?;
            total += cosine_distance(&fa, &fb)?;
        }
        Ok(total / samples.len() as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.a.save(&dir.join("a"))?;
        self.b.save(&dir.join("b"))?;
        let state = StateFile {
            t: self.t,
            train: self.train.clone(),
            seed: self.train.seed,
            augment: self.augment.clone(),
            contrastive: self.contrastive,
        };
        let path = dir.join("state.json");
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: StateFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut train = state.train;
        train.seed = state.seed;
        Ok(CoTrainState {
            a: Member::load(&dir.join("a"))?,
            b: Member::load(&dir.join("b"))?,
            t: state.t,
            train,
            augment: state.augment,
            contrastive: state.contrastive,
        })
    }
}

/// Supervised training of one network on the first view of each mixed pair.
#[derive(Clone, Debug)]
pub struct SingleTrainer {
    pub net: SegNetwork,
    pub momentum: Vec<Tensor>,
    pub t: usize,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

impl SingleTrainer {
    /// Initial weights depend on the seed only, not on the route set.
    pub fn new(network: &NetworkConfig, route_set: RouteSet, train: TrainConfig, augment: AugmentConfig) -> Result<Self> {
        network.validate()?;
        train.validate()?;
        augment.validate()?;
        let net = SegNetwork::new(network, route_set, &mut stream_rng(train.seed, 0, Stream::Init))?;
        Ok(SingleTrainer { momentum: zeros_like(net.params()), net, t: 0, train, augment })
    }

    /// One step of `½(dice + ce)` on a labeled batch; returns the loss.
    pub fn train_iteration(&mut self, labeled: &[&Sample]) -> Result<f64> {
        if labeled.is_empty() {
            return Err(Error::invalid("train_iteration needs at least one labeled image"));
        }
        let mut rng = augment_rng(self.train.seed, self.t);
        let d = self.augment.sample_patch_size(labeled[0].extent(), &mut rng)?;
        let mut tape = Tape::new();
        let v = self.net.params().bind(&mut tape);
        let mut terms = Vec::with_capacity(labeled.len());
        for s in labeled {
            let label = s.label.as_deref().ok_or_else(|| Error::invalid("labeled batch holds an unlabeled image"))?;
            let (x, lab) = if self.train.mix_views {
                let p = mix_augment(&s.image, Some(label), d, &self.augment, &mut rng)?;
                (p.first, p.label)
            } else {
                shared_geometric(&s.image, Some(label), &mut rng)?
            };
            let x = tape.constant(x);
            let o = self.net.forward(&mut tape, &v, x)?;
            terms.push(dice_ce(&mut tape, o.logits, &lab.expect("label follows image"))?);
        }
        let loss = mean_of(&mut tape, &terms)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = v.iter().zip(self.net.params().values()).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
        sgd_step(self.net.params_mut().values_mut(), &g, &mut self.momentum, &self.train)?;
        self.t += 1;
        Ok(value)
    }

    pub fn step(&mut self, data: &SplitDataset) -> Result<f64> {
        let mut rng = batch_rng(self.train.seed, self.t);
        let labeled = pick(&data.labeled, self.train.labeled_batch, &mut rng);
        self.train_iteration(&labeled)
    }
}

fn pick<'a, R: Rng + ?Sized>(pool: &'a [Sample], k: usize, rng: &mut R) -> Vec<&'a Sample> {
    if pool.is_empty() || k == 0 {
        return Vec::new();
    }
    if k <= pool.len() {
        sample_indices(rng, pool.len(), k).into_iter().map(|i| &pool[i]).collect()
    } else {
        (0..k).map(|_| &pool[rng.random_range(0..pool.len())]).collect()
    }
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, 1.0 / terms.len() as f64)
}

/// Uncertainty-weighted fusion of the four bottleneck route features.
pub fn fused_bottleneck(tape: &mut Tape, route_feats: &[Var]) -> Result<Var> {
    let w = uncertainty_weights(tape, route_feats)?;
    fuse_features(tape, route_feats, w)
}

/// Spatial mean of the fused bottleneck feature of `net` on `image`.
pub fn pooled_fused_feature(net: &SegNetwork, image: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = net.params().bind_frozen(&mut tape);
    let x = tape.constant(image.clone());
    let out = net.forward(&mut tape, &v, x)?;
    let h = fused_bottleneck(&mut tape, &out.route_feats)?;
    let pooled = tape.reduce(Reduce::Mean, h, &[0, 1])?;
    Ok(tape.value(pooled).clone())
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("cosine_distance", a.shape(), b.shape()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine_distance", "zero-norm feature"));
    }
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// Argmax class map of `net` on one image.
pub fn predict(net: &SegNetwork, image: &Tensor) -> Result<Vec<usize>> {
    Ok(pseudo_label(&net.predict_logits(image)?))
}

/// Metrics of `net` on labeled images, without augmentation.
pub fn evaluate_network(net: &SegNetwork, samples: &[Sample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation over an empty dataset"));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = s.label.clone().ok_or_else(|| Error::invalid("evaluation image without a label"))?;
        pairs.push((predict(net, &s.image)?, gt));
    }
    let (h, w) = (samples[0].image.shape()[0], samples[0].image.shape()[1]);
    MetricReport::from_predictions(&pairs, h, w, net.config().num_classes)
}

/// Where a training run writes its artefacts.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub dir: PathBuf,
}

impl RunOutputs {
    pub const METRICS_LOG: &'static str = "metrics.log";
    pub const DIVERSITY_LOG: &'static str = "diversity.log";
    pub const FINAL_REPORT: &'static str = "report.json";

    pub fn checkpoint_dir(&self, t: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{t:06}"))
    }

    pub fn final_dir(&self) -> PathBuf {
        self.dir.join("final")
    }

    fn append(&self, name: &str, line: &str) -> Result<()> {
        let path = self.dir.join(name);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }
}

/// Images used for periodic evaluation: the test split, or the labeled one.
fn eval_set(data: &SplitDataset) -> &[Sample] {
    if data.test.is_empty() {
        &data.labeled
    } else {
        &data.test
    }
}

/// Trains until `t == t_max`, logging every `eval_interval` iterations and
/// checkpointing every `checkpoint_interval` iterations when `out` is given.
/// Returns the per-iteration loss breakdowns of this call.
pub fn train(state: &mut CoTrainState, data: &SplitDataset, out: Option<&RunOutputs>) -> Result<Vec<LossBreakdown>> {
    train_until(state, data, state.train.t_max, out)
}

pub fn train_until(
    state: &mut CoTrainState,
    data: &SplitDataset,
    until: usize,
    out: Option<&RunOutputs>,
) -> Result<Vec<LossBreakdown>> {
    if let Some(o) = out {
        fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
    }
    let until = until.min(state.train.t_max);
    let mut history = Vec::new();
    while state.t < until {
        let b = state.step(data)?;
        history.push(b);
        let t = state.t;
        let Some(o) = out else { continue };
        let (ei, ci) = (state.train.eval_interval, state.train.checkpoint_interval);
        if (ei > 0 && t.is_multiple_of(ei)) || t == state.train.t_max {
            let dice = state.evaluate(eval_set(data), Which::A)?.dice;
            o.append(
                RunOutputs::METRICS_LOG,
                &format!(
                    "iter={t} sup={:.6} unsup={:.6} dfc={:.6} lambda={:.6} dice={dice:.6}",
                    b.sup, b.unsup, b.dfc, b.lambda
                ),
            )?;
            let probe = &eval_set(data)[..eval_set(data).len().min(8)];
            let div = state.diversity_measure(probe)?;
            o.append(RunOutputs::DIVERSITY_LOG, &format!("iter={t} diversity={div:.6}"))?;
        }
        if ci > 0 && t.is_multiple_of(ci) {
            state.save(&o.checkpoint_dir(t))?;
        }
    }
    if let Some(o) = out {
        if state.t == state.train.t_max {
            state.save(&o.final_dir())?;
        }
    }
    Ok(history)
}

/// Parses `iter=<t> diversity=<v>` lines.
pub fn parse_diversity_log(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut t = None;
        let mut v = None;
        for field in line.split_whitespace() {
            match field.split_once('=') {
                Some(("iter", x)) => t = x.parse().ok(),
                Some(("diversity", x)) => v = x.parse().ok(),
                _ => {}
            }
        }
        match (t, v) {
            (Some(t), Some(v)) => out.push((t, v)),
            _ => return Err(Error::invalid(format!("diversity log line {}: {line:?}", n + 1))),
        }
    }
    Ok(out)
}
