//! Shared-weight encoder/decoder supernet.
//!
//! The base network is a four-stage 3D U-Net variant: each encoder stage runs
//! two conv-norm-activation layers and pools, a bottleneck follows, and each
//! decoder stage upsamples, concatenates a channel-halving 1×1×1 link from
//! the matching encoder stage, and runs two more conv-norm-activation layers.
//! Searchable skip edges add a matched (1×1×1 conv + resize) encoder feature
//! into a deeper decoder stage's input. Heads on decoder stages 1–3 are
//! resized to full resolution and summed before the output conv.
//!
//! No parameter shape depends on the chosen architecture, so every child
//! network draws from the same store.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::searchspace::{
    slot, ArchChoice, DecisionSchema, SKIP_CONNECT, SKIP_EDGES, STAGES,
};
use crate::tensor::{
    adam_step, ActivationKind, AdamConfig, Gradients, Moments, PoolKind, Real, Shape5, Tape,
    Tensor5, Var,
};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl SupernetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "base_channels must be an even number >= 2, got {}",
                self.base_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Widths of encoder stages 1–4 followed by the bottleneck.
    pub fn widths(&self) -> [usize; 5] {
        std::array::from_fn(|s| self.base_channels << s)
    }

    /// Channels entering decoder stage `stage` (1-based): upsampled deeper
    /// features plus the halved link.
    pub fn decoder_in(&self, stage: usize) -> usize {
        let w = self.widths();
        w[stage] + w[stage - 1] / 2
    }
}

/// Concrete per-stage settings selected by one [`ArchChoice`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchRealization {
    /// Training patch `(d, h, w)`.
    pub patch: [usize; 3],
    /// Pooling stride `(d, h, w)` after each encoder stage.
    pub strides: [[usize; 3]; STAGES],
    pub dilations: [usize; STAGES],
    pub pool: PoolKind,
    pub activation: ActivationKind,
    /// Active flags in `SKIP_EDGES` order.
    pub skips: [bool; 6],
}

impl ArchRealization {
    pub fn from_choice(schema: &DecisionSchema, choice: &ArchChoice) -> Result<Self> {
        schema.validate_choice(choice)?;
        let rule = &schema.stride_rule;
        let fixed = |stage: usize| [rule.depth[stage][0], rule.hw[stage][0], rule.hw[stage][0]];
        let searched = |sd: usize, shw: usize| -> Result<[usize; 3]> {
            let (d, hw) = (schema.int(sd, choice)?, schema.int(shw, choice)?);
            Ok([d, hw, hw])
        };
        let hw = schema.int(slot::PATCH_HW, choice)?;
        let pool = match schema.label(slot::POOLING, choice)? {
            "max" => PoolKind::Max,
            "avg" => PoolKind::Avg,
            other => return Err(Error::Argument(format!("unknown pooling `{other}`"))),
        };
        let act = schema.label(slot::ACTIVATION, choice)?;
        let activation = ActivationKind::from_name(act)
            .ok_or_else(|| Error::Argument(format!("unknown activation `{act}`")))?;
        let mut dilations = [1; STAGES];
        for (k, &s) in slot::DILATION.iter().enumerate() {
            dilations[k + 1] = schema.int(s, choice)?;
        }
        let mut skips = [false; 6];
        for (k, flag) in skips.iter_mut().enumerate() {
            *flag = schema.label(slot::SKIP + k, choice)? == SKIP_CONNECT;
        }
        Ok(ArchRealization {
            patch: [schema.int(slot::PATCH_D, choice)?, hw, hw],
            strides: [
                fixed(0),
                fixed(1),
                searched(slot::STRIDE3_D, slot::STRIDE3_HW)?,
                searched(slot::STRIDE4_D, slot::STRIDE4_HW)?,
            ],
            dilations,
            pool,
            activation,
            skips,
        })
    }

    /// Cumulative pooling stride per axis; inputs must be multiples of it.
    pub fn divisor(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.strides.iter().map(|s| s[a]).product())
    }

    /// The same network with the training patch cleared. Two realizations
    /// with equal inference keys compute identical whole-volume outputs.
    pub fn inference_key(&self) -> ArchRealization {
        ArchRealization {
            patch: [0; 3],
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor5<T>,
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    weight: usize,
    bias: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct BlockIds {
    conv: [usize; 2],
    gamma: [usize; 2],
    beta: [usize; 2],
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: [BlockIds; STAGES],
    bottleneck: BlockIds,
    decoder: [BlockIds; STAGES],
    link: [ConvIds; STAGES],
    skip: [ConvIds; 6],
    head: [ConvIds; 3],
    out: ConvIds,
}

/// The shared parameter store.
#[derive(Clone, Debug)]
pub struct SupernetWeights<T> {
    config: SupernetConfig,
    params: Vec<Param<T>>,
    layout: Layout,
    init_count: usize,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, value: Tensor5<T>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    /// He-uniform over fan-in.
    fn kernel(&mut self, name: &str, c_out: usize, c_in: usize, k: usize) -> usize {
        let shape = Shape5::new(c_out, c_in, k, k, k);
        let bound = (6.0 / (c_in * k * k * k) as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor5::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)));
        self.push(format!("{name}.weight"), t)
    }

    fn vector(&mut self, name: String, len: usize, v: f64) -> usize {
        self.push(name, Tensor5::filled(Shape5::new(len, 1, 1, 1, 1), T::lit(v)))
    }

    fn conv1x1(&mut self, name: &str, c_out: usize, c_in: usize) -> ConvIds {
        let weight = self.kernel(name, c_out, c_in, 1);
        let bias = Some(self.vector(format!("{name}.bias"), c_out, 0.0));
        ConvIds { weight, bias }
    }

    fn block(&mut self, name: &str, c_in: usize, c_out: usize) -> BlockIds {
        let c1 = self.kernel(&format!("{name}.conv1"), c_out, c_in, 3);
        let g1 = self.vector(format!("{name}.norm1.gamma"), c_out, 1.0);
        let b1 = self.vector(format!("{name}.norm1.beta"), c_out, 0.0);
        let c2 = self.kernel(&format!("{name}.conv2"), c_out, c_out, 3);
        let g2 = self.vector(format!("{name}.norm2.gamma"), c_out, 1.0);
        let b2 = self.vector(format!("{name}.norm2.beta"), c_out, 0.0);
        BlockIds {
            conv: [c1, c2],
            gamma: [g1, g2],
            beta: [b1, b2],
        }
    }
}

/// Tape handles for every parameter, in store order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps handles recorded elsewhere, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Handles to the interesting intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Features {
    pub logits: Var,
    /// Encoder stage outputs before pooling.
    pub encoder: [Var; STAGES],
    pub bottleneck: Var,
    /// Decoder stage inputs after concatenation and skip sums.
    pub decoder_inputs: [Var; STAGES],
    pub decoder: [Var; STAGES],
    /// Deep-supervision heads of decoder stages 1–3 at their own resolution.
    pub heads: [Var; 3],
    /// Sum of the resized heads, input of the output conv.
    pub supervision: Var,
}

impl<T: Real> SupernetWeights<T> {
    /// Allocates every parameter once with seeded initialization.
    pub fn build(config: SupernetConfig, schema: &DecisionSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        if schema.stats.in_channels != config.in_channels
            || schema.stats.out_channels != config.out_channels
        {
            return Err(Error::Config(format!(
                "supernet channels ({}, {}) disagree with dataset ({}, {})",
                config.in_channels,
                config.out_channels,
                schema.stats.in_channels,
                schema.stats.out_channels
            )));
        }
        let w = config.widths();
        let mut b = Builder::<T> {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let encoder = std::array::from_fn(|s| {
            let c_in = if s == 0 { config.in_channels } else { w[s - 1] };
            b.block(&format!("enc{}", s + 1), c_in, w[s])
        });
        let bottleneck = b.block("bottleneck", w[3], w[4]);
        let decoder = std::array::from_fn(|s| b.block(&format!("dec{}", s + 1), config.decoder_in(s + 1), w[s]));
        let link = std::array::from_fn(|s| b.conv1x1(&format!("link{}", s + 1), w[s] / 2, w[s]));
        let skip = std::array::from_fn(|k| {
            let (from, to) = SKIP_EDGES[k];
            b.conv1x1(&format!("skip{from}_{to}"), config.decoder_in(to), w[from - 1])
        });
        let head = std::array::from_fn(|s| b.conv1x1(&format!("head{}", s + 1), config.base_channels, w[s]));
        let out = b.conv1x1("out", config.out_channels, config.base_channels);
        Ok(SupernetWeights {
            config,
            params: b.params,
            layout: Layout {
                encoder,
                bottleneck,
                decoder,
                link,
                skip,
                head,
                out,
            },
            init_count: 1,
        })
    }

    pub fn config(&self) -> SupernetConfig {
        self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// How many times this store has been initialized; stays 1 for its lifetime.
    pub fn init_count(&self) -> usize {
        self.init_count
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces parameter values from a flat list with matching shapes.
    pub fn load_values(&mut self, values: Vec<Tensor5<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(shape_err!(
                "expected {} parameter arrays, got {}",
                self.params.len(),
                values.len()
            ));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(shape_err!("parameter {} expects {}, got {}", p.name, p.value.shape(), v.shape()));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn skip_param_ids(&self, edge: usize) -> Vec<usize> {
        let c = self.layout.skip[edge];
        std::iter::once(c.weight).chain(c.bias).collect()
    }

    /// Parameters read by `forward` under `arch`: everything except the
    /// matching convs of disabled skip edges.
    pub fn active_param_ids(&self, arch: &ArchRealization) -> BTreeSet<usize> {
        let mut ids: BTreeSet<usize> = (0..self.params.len()).collect();
        for (k, &on) in arch.skips.iter().enumerate() {
            if !on {
                for id in self.skip_param_ids(k) {
                    ids.remove(&id);
                }
            }
        }
        ids
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    fn conv(&self, tape: &mut Tape<T>, p: &BoundParams, ids: ConvIds, x: Var, dil: usize) -> Result<Var> {
        tape.conv3d(x, p.var(ids.weight), ids.bias.map(|b| p.var(b)), [dil; 3])
    }

    fn block(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        ids: BlockIds,
        x: Var,
        dil: usize,
        act: ActivationKind,
    ) -> Result<Var> {
        let mut h = x;
        for k in 0..2 {
            h = tape.conv3d(h, p.var(ids.conv[k]), None, [dil; 3])?;
            h = tape.instance_norm(h, p.var(ids.gamma[k]), p.var(ids.beta[k]), NORM_EPS)?;
            h = tape.activation(h, act);
        }
        Ok(h)
    }

    /// 1×1×1 conv of a skip edge's feature followed by a resize to the target
    /// decoder resolution. The caller adds the result.
    pub fn matching_op(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        edge: usize,
        feature: Var,
        target_spatial: [usize; 3],
    ) -> Result<Var> {
        let c = self.layout.skip[edge];
        matching_op(tape, feature, p.var(c.weight), c.bias.map(|b| p.var(b)), target_spatial)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        arch: &ArchRealization,
        x: Var,
    ) -> Result<Features> {
        let xs = tape.shape(x);
        if xs.c != self.config.in_channels {
            return Err(shape_err!(
                "supernet expects {} input channels, got {xs}",
                self.config.in_channels
            ));
        }
        let div = arch.divisor();
        let sp = xs.spatial();
        if (0..3).any(|a| !sp[a].is_multiple_of(div[a])) {
            return Err(shape_err!(
                "input {xs} is not divisible by the cumulative stride {div:?}"
            ));
        }
        let act = arch.activation;
        let lay = &self.layout;

        let mut encoder = [x; STAGES];
        let mut h = x;
        for s in 0..STAGES {
            let dil = if s == 0 { 1 } else { arch.dilations[s] };
            let e = self.block(tape, p, lay.encoder[s], h, dil, act)?;
            encoder[s] = e;
            h = tape.pool3d(e, arch.pool, arch.strides[s])?;
        }
        let bottleneck = self.block(tape, p, lay.bottleneck, h, 1, act)?;

        let mut decoder_inputs = [x; STAGES];
        let mut decoder = [x; STAGES];
        let mut prev = bottleneck;
        for s in (0..STAGES).rev() {
            let target = tape.shape(encoder[s]).spatial();
            let up = tape.resize_trilinear(prev, target)?;
            let link = self.conv(tape, p, lay.link[s], encoder[s], 1)?;
            let mut input = tape.concat_channels(up, link)?;
            for (k, &(from, to)) in SKIP_EDGES.iter().enumerate() {
                if to == s + 1 && arch.skips[k] {
                    let m = self.matching_op(tape, p, k, encoder[from - 1], target)?;
                    input = tape.add(input, m)?;
                }
            }
            decoder_inputs[s] = input;
            prev = self.block(tape, p, lay.decoder[s], input, 1, act)?;
            decoder[s] = prev;
        }

        let full = tape.shape(decoder[0]).spatial();
        let heads: [Var; 3] = [
            self.conv(tape, p, lay.head[0], decoder[0], 1)?,
            self.conv(tape, p, lay.head[1], decoder[1], 1)?,
            self.conv(tape, p, lay.head[2], decoder[2], 1)?,
        ];
        let mut supervision = heads[0];
        for &hd in &heads[1..] {
            let r = tape.resize_trilinear(hd, full)?;
            supervision = tape.add(supervision, r)?;
        }
        let logits = self.conv(tape, p, lay.out, supervision, 1)?;
        Ok(Features {
            logits,
            encoder,
            bottleneck,
            decoder_inputs,
            decoder,
            heads,
            supervision,
        })
    }

    /// Forward pass without gradient bookkeeping, returning logits.
    pub fn infer(&self, arch: &ArchRealization, image: Tensor5<T>) -> Result<Tensor5<T>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(image);
        let f = self.forward(&mut tape, &p, arch, x)?;
        Ok(tape.value(f.logits).clone())
    }

    /// 64-bit FNV-1a over the raw bytes of the given parameters.
    pub fn fingerprint(&self, ids: impl IntoIterator<Item = usize>) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in ids {
            for v in self.params[id].value.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

pub fn matching_op<T: Real>(
    tape: &mut Tape<T>,
    feature: Var,
    weight: Var,
    bias: Option<Var>,
    target_spatial: [usize; 3],
) -> Result<Var> {
    let c = tape.conv3d(feature, weight, bias, [1, 1, 1])?;
    tape.resize_trilinear(c, target_spatial)
}

/// Adam over the shared store. Parameters without a gradient in a step are
/// left untouched, including their moments and weight decay.
#[derive(Clone, Debug)]
pub struct SharedOptimizer<T> {
    pub config: AdamConfig,
    pub moments: Vec<Moments<T>>,
}

impl<T: Real> SharedOptimizer<T> {
    pub fn new(weights: &SupernetWeights<T>, config: AdamConfig) -> Self {
        SharedOptimizer {
            config,
            moments: weights
                .params()
                .iter()
                .map(|p| Moments::zeros(p.value.numel()))
                .collect(),
        }
    }

    /// Applies one step for every parameter whose gradient is present.
    /// Returns the ids that were updated.
    pub fn step(
        &mut self,
        weights: &mut SupernetWeights<T>,
        bound: &BoundParams,
        grads: &Gradients<T>,
    ) -> Vec<usize> {
        let mut updated = Vec::new();
        for (id, (param, moments)) in weights.params.iter_mut().zip(&mut self.moments).enumerate() {
            if let Some(g) = grads.get(bound.var(id)) {
                adam_step(param.value.data_mut(), g, moments, &self.config);
                updated.push(id);
            }
        }
        updated
    }
}
