//! U-shaped segmentation network built from simplified visual state-space
//! blocks, and the projector head used by the contrastive term.
//!
//! Default desk layout for a 32×32×1 input:
//!
//! ```text
//! 32×32×1 ─ space_to_depth(2)+linear ─ 16×16×8 ─ VSS ─┬──────────────── skip
//!                                                     │
//!          space_to_depth(2)+linear ─ 8×8×16 ─ VSS (bottleneck, route features)
//!                                                     │
//!          upsample ×2 + linear ─ 16×16×8 ─ concat skip + linear ─ VSS
//!                                                     │
//!          upsample ×2 ─ concat image ─ depthwise 3×3 + linear + silu ─ head ─ 32×32×2
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::routes::{ss2d_forward, RouteSet};
use crate::ssm::{SsmParams, SsmVars};
use crate::tensor::{Reduce, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub expansion: usize,
    pub state_dim: usize,
    pub dt_rank: usize,
    pub num_classes: usize,
    pub projector_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            image_size: 32,
            in_channels: 1,
            embed_dim: 8,
            expansion: 2,
            state_dim: 4,
            dt_rank: 1,
            num_classes: 2,
            projector_dim: 16,
        }
    }
}

impl NetworkConfig {
    /// Product of all downsampling steps.
    pub const DOWNSAMPLE: usize = 4;

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("in_channels", self.in_channels),
            ("embed_dim", self.embed_dim),
            ("expansion", self.expansion),
            ("state_dim", self.state_dim),
            ("dt_rank", self.dt_rank),
            ("projector_dim", self.projector_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !self.image_size.is_multiple_of(Self::DOWNSAMPLE) {
            return Err(Error::Config(format!(
                "image_size {} not divisible by {}",
                self.image_size,
                Self::DOWNSAMPLE
            )));
        }
        Ok(())
    }

    /// Channel width of the bottleneck route features.
    pub fn bottleneck_feature_dim(&self) -> usize {
        2 * self.embed_dim * self.expansion
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("config serializes");
        v.as_object()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let mut obj = serde_json::Map::new();
        for (k, v) in meta {
            if k == "route_set" || k == "kind" {
                continue;
            }
            let val: serde_json::Value =
                serde_json::from_str(v).map_err(|e| Error::Config(format!("meta {k}: {e}")))?;
            obj.insert(k.clone(), val);
        }
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| Error::Config(e.to_string()))
    }
}

fn uniform_init<R: Rng + ?Sized>(shape: [usize; 2], rng: &mut R) -> Tensor {
    let bound = 1.0 / (shape[0] as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Copy, Debug)]
struct SsmIds {
    a_log: ParamId,
    d: ParamId,
    dt_down: ParamId,
    dt_up: ParamId,
    dt_bias: ParamId,
    w_b: ParamId,
    w_c: ParamId,
}

impl SsmIds {
    fn register(store: &mut ParamStore, prefix: &str, p: SsmParams) -> Self {
        let mut add = |n: &str, t: Tensor| store.add(format!("{prefix}.{n}"), t);
        SsmIds {
            a_log: add("a_log", p.a_log),
            d: add("d", p.d),
            dt_down: add("dt_down", p.dt_down),
            dt_up: add("dt_up", p.dt_up),
            dt_bias: add("dt_bias", p.dt_bias),
            w_b: add("w_b", p.w_b),
            w_c: add("w_c", p.w_c),
        }
    }

    fn vars(&self, v: &[Var]) -> SsmVars {
        SsmVars {
            a_log: v[self.a_log.index()],
            d: v[self.d.index()],
            dt_down: v[self.dt_down.index()],
            dt_up: v[self.dt_up.index()],
            dt_bias: v[self.dt_bias.index()],
            w_b: v[self.w_b.index()],
            w_c: v[self.w_c.index()],
        }
    }
}

/// Gated block: layernorm, in-projection, depthwise conv, SS2D, gate, out-projection, residual.
#[derive(Clone, Debug)]
pub struct VssBlock {
    channels: usize,
    inner: usize,
    ln_in_gain: ParamId,
    ln_in_bias: ParamId,
    w_in: ParamId,
    dw: ParamId,
    w_gate: ParamId,
    ssm: [SsmIds; 4],
    ln_out_gain: ParamId,
    ln_out_bias: ParamId,
    w_out: ParamId,
}

/// Output of [`VssBlock::forward`].
#[derive(Clone, Copy, Debug)]
pub struct VssOutput {
    pub out: Var,
    pub route_feats: [Var; 4],
}

const LN_EPS: f64 = 1e-5;

impl VssBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        expansion: usize,
        state_dim: usize,
        dt_rank: usize,
        rng: &mut R,
    ) -> Self {
        let inner = channels * expansion;
        let ln_in_gain = store.add(format!("{prefix}.ln_in.gain"), Tensor::full([channels], 1.0));
        let ln_in_bias = store.add(format!("{prefix}.ln_in.bias"), Tensor::zeros([channels]));
        let w_in = store.add(format!("{prefix}.w_in"), uniform_init([channels, inner], rng));
        let dw = store.add(format!("{prefix}.dw"), Tensor::uniform([3, 3, inner], -1.0 / 3.0, 1.0 / 3.0, rng));
        let w_gate = store.add(format!("{prefix}.w_gate"), uniform_init([channels, inner], rng));
        let ssm = std::array::from_fn(|k| {
            let p = SsmParams::init(inner, state_dim, dt_rank, rng);
            SsmIds::register(store, &format!("{prefix}.ss2d.r{k}"), p)
        });
        let ln_out_gain = store.add(format!("{prefix}.ln_out.gain"), Tensor::full([inner], 1.0));
        let ln_out_bias = store.add(format!("{prefix}.ln_out.bias"), Tensor::zeros([inner]));
        let w_out = store.add(format!("{prefix}.w_out"), uniform_init([inner, channels], rng));
        VssBlock {
            channels,
            inner,
            ln_in_gain,
            ln_in_bias,
            w_in,
            dw,
            w_gate,
            ssm,
            ln_out_gain,
            ln_out_bias,
            w_out,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn inner_channels(&self) -> usize {
        self.inner
    }

    /// Ids of the in/gate/out projection weights.
    pub fn projection_ids(&self) -> [ParamId; 3] {
        [self.w_in, self.w_gate, self.w_out]
    }

    /// `y = LN(x); u = silu(dw(y·W_in)); s = LN(SS2D(u)); g = silu(y·W_gate);
    /// out = (s ⊙ g)·W_out + x`.
    pub fn forward(&self, tape: &mut Tape, v: &[Var], route_set: RouteSet, x: Var) -> Result<VssOutput> {
        match *tape.shape(x) {
            [_, _, c] if c == self.channels => {}
            ref s => return Err(Error::shape("vss_block", &[self.channels], s)),
        }
        let y = tape.layernorm(x, v[self.ln_in_gain.index()], v[self.ln_in_bias.index()], LN_EPS)?;
        let u = tape.linear(y, v[self.w_in.index()], None)?;
        let u = tape.depthwise_conv2d(u, v[self.dw.index()])?;
        let u = tape.silu(u)?;
        let params: [SsmVars; 4] = std::array::from_fn(|k| self.ssm[k].vars(v));
        let ss = ss2d_forward(tape, route_set, &params, u)?;
        let s = tape.layernorm(ss.out, v[self.ln_out_gain.index()], v[self.ln_out_bias.index()], LN_EPS)?;
        let g = tape.linear(y, v[self.w_gate.index()], None)?;
        let g = tape.silu(g)?;
        let sg = tape.mul(s, g)?;
        let o = tape.linear(sg, v[self.w_out.index()], None)?;
        let out = tape.add(o, x)?;
        Ok(VssOutput {
            out,
            route_feats: ss.route_feats,
        })
    }
}

/// Zero-mean, unit-variance rescaling of each input channel over all pixels.
fn standardize(tape: &mut Tape, image: Var) -> Result<Var> {
    let shape = tape.shape(image).to_vec();
    let (hw, c) = (shape[0] * shape[1], shape[2]);
    let t = tape.reshape(image, &[hw, c])?;
    let t = tape.transpose(t)?;
    let gain = tape.constant(Tensor::full([hw], 1.0));
    let bias = tape.constant(Tensor::zeros([hw]));
    let t = tape.layernorm(t, gain, bias, LN_EPS)?;
    let t = tape.transpose(t)?;
    tape.reshape(t, &shape)
}

/// Output of [`SegNetwork::forward`].
#[derive(Clone, Copy, Debug)]
pub struct NetworkOutput {
    /// `H×W×num_classes`
    pub logits: Var,
    /// Bottleneck SS2D route features, each `h'×w'×E`.
    pub route_feats: [Var; 4],
}

#[derive(Clone, Debug)]
pub struct SegNetwork {
    config: NetworkConfig,
    route_set: RouteSet,
    params: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    enc: VssBlock,
    down_w: ParamId,
    down_b: ParamId,
    bottleneck: VssBlock,
    up_w: ParamId,
    up_b: ParamId,
    fuse_w: ParamId,
    fuse_b: ParamId,
    dec: VssBlock,
    final_dw: ParamId,
    final_w: ParamId,
    final_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl SegNetwork {
    pub fn new<R: Rng + ?Sized>(config: &NetworkConfig, route_set: RouteSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        let cin = config.in_channels;
        let (ex, n, r) = (config.expansion, config.state_dim, config.dt_rank);
        let mut p = ParamStore::new();
        let embed_w = p.add("embed.w", uniform_init([4 * cin, c], rng));
        let embed_b = p.add("embed.b", Tensor::zeros([c]));
        let enc = VssBlock::new(&mut p, "enc", c, ex, n, r, rng);
        let down_w = p.add("down.w", uniform_init([4 * c, 2 * c], rng));
        let down_b = p.add("down.b", Tensor::zeros([2 * c]));
        let bottleneck = VssBlock::new(&mut p, "bottleneck", 2 * c, ex, n, r, rng);
        let up_w = p.add("up.w", uniform_init([2 * c, c], rng));
        let up_b = p.add("up.b", Tensor::zeros([c]));
        let fuse_w = p.add("fuse.w", uniform_init([2 * c, c], rng));
        let fuse_b = p.add("fuse.b", Tensor::zeros([c]));
        let dec = VssBlock::new(&mut p, "dec", c, ex, n, r, rng);
        let final_dw = p.add(
            "final.dw",
            Tensor::uniform([3, 3, c + cin], -1.0 / 3.0, 1.0 / 3.0, rng),
        );
        let final_w = p.add("final.w", uniform_init([c + cin, c], rng));
        let final_b = p.add("final.b", Tensor::zeros([c]));
        let head_w = p.add("head.w", uniform_init([c, config.num_classes], rng));
        let head_b = p.add("head.b", Tensor::zeros([config.num_classes]));
        Ok(SegNetwork {
            config: config.clone(),
            route_set,
            params: p,
            embed_w,
            embed_b,
            enc,
            down_w,
            down_b,
            bottleneck,
            up_w,
            up_b,
            fuse_w,
            fuse_b,
            dec,
            final_dw,
            final_w,
            final_b,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn route_set(&self) -> RouteSet {
        self.route_set
    }

    /// Same weights, different route set.
    pub fn with_route_set(&self, route_set: RouteSet) -> Self {
        SegNetwork {
            route_set,
            ..self.clone()
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn blocks(&self) -> [&VssBlock; 3] {
        [&self.enc, &self.bottleneck, &self.dec]
    }

    pub fn forward(&self, tape: &mut Tape, v: &[Var], image: Var) -> Result<NetworkOutput> {
        let cfg = &self.config;
        let (h, w) = match *tape.shape(image) {
            [h, w, c] if c == cfg.in_channels => (h, w),
            ref s => return Err(Error::shape("network_forward", &[cfg.in_channels], s)),
        };
        let f = NetworkConfig::DOWNSAMPLE;
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::domain(
                "network_forward",
                format!("{h}×{w} not divisible by {f}"),
            ));
        }
        let image = standardize(tape, image)?;
        let x = tape.space_to_depth(image, 2)?;
        let x = tape.linear(x, v[self.embed_w.index()], Some(v[self.embed_b.index()]))?;
        let skip = self.enc.forward(tape, v, self.route_set, x)?.out;

        let x = tape.space_to_depth(skip, 2)?;
        let x = tape.linear(x, v[self.down_w.index()], Some(v[self.down_b.index()]))?;
        let bott = self.bottleneck.forward(tape, v, self.route_set, x)?;

        let x = tape.upsample_nearest(bott.out, 2)?;
        let x = tape.linear(x, v[self.up_w.index()], Some(v[self.up_b.index()]))?;
        let x = tape.concat_last(x, skip)?;
        let x = tape.linear(x, v[self.fuse_w.index()], Some(v[self.fuse_b.index()]))?;
        let x = self.dec.forward(tape, v, self.route_set, x)?.out;

        let x = tape.upsample_nearest(x, 2)?;
        let x = tape.concat_last(x, image)?;
        let x = tape.depthwise_conv2d(x, v[self.final_dw.index()])?;
        let x = tape.linear(x, v[self.final_w.index()], Some(v[self.final_b.index()]))?;
        let x = tape.silu(x)?;
        let logits = tape.linear(x, v[self.head_w.index()], Some(v[self.head_b.index()]))?;
        Ok(NetworkOutput {
            logits,
            route_feats: bott.route_feats,
        })
    }

    /// Inference without gradients.
    pub fn predict_logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.params.bind_frozen(&mut tape);
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, &v, x)?;
        Ok(tape.value(out.logits).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut meta = vec![
            ("kind".to_string(), "network".to_string()),
            ("route_set".to_string(), self.route_set.tag().to_string()),
        ];
        meta.extend(self.config.to_meta());
        self.params.save(dir, &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, meta) = ParamStore::load(dir)?;
        let route_set: RouteSet = meta
            .get("route_set")
            .ok_or_else(|| Error::Config("checkpoint manifest lacks route_set".into()))?
            .parse()?;
        let config = NetworkConfig::from_meta(&meta)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = SegNetwork::new(&config, route_set, &mut rng)?;
        net.params.copy_from(&store)?;
        Ok(net)
    }
}

/// Global average pool followed by `linear → silu → linear`.
#[derive(Clone, Debug)]
pub struct Projector {
    params: ParamStore,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Projector {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, width: usize, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let w1 = p.add("proj.w1", uniform_init([in_dim, width], rng));
        let b1 = p.add("proj.b1", Tensor::zeros([width]));
        let w2 = p.add("proj.w2", uniform_init([width, width], rng));
        let b2 = p.add("proj.b2", Tensor::zeros([width]));
        Projector { params: p, w1, b1, w2, b2 }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn out_dim(&self) -> usize {
        self.params.get(self.b2).len()
    }

    /// `h: h'×w'×C → [width]`.
    pub fn forward(&self, tape: &mut Tape, v: &[Var], h: Var) -> Result<Var> {
        let c = match *tape.shape(h) {
            [_, _, c] => c,
            ref s => return Err(Error::domain("projector", format!("expected feature map, got {s:?}"))),
        };
        let pooled = tape.reduce(Reduce::Mean, h, &[0, 1])?;
        let pooled = tape.reshape(pooled, &[1, c])?;
        let z = tape.linear(pooled, v[self.w1.index()], Some(v[self.b1.index()]))?;
        let z = tape.silu(z)?;
        let z = tape.linear(z, v[self.w2.index()], Some(v[self.b2.index()]))?;
        let width = self.out_dim();
        tape.reshape(z, &[width])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir, &[("kind".into(), "projector".into())])
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, _) = ParamStore::load(dir)?;
        let in_dim = store
            .id_of("proj.w1")
            .map(|id| store.get(id).shape()[0])
            .ok_or_else(|| Error::Config("projector checkpoint lacks proj.w1".into()))?;
        let width = store.get(store.id_of("proj.b2").unwrap()).len();
        let mut p = Projector::new(in_dim, width, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        p.params.copy_from(&store)?;
        Ok(p)
    }
}
