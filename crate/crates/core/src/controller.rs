//! LSTM policy over the decision schema, trained with REINFORCE.
//!
//! All parameters live in one flat `f64` vector; [`Layout`] maps regions of
//! it to the embedding table, per-step offsets, LSTM weights and the
//! per-decision output heads. Gradients are derived by hand (BPTT) and
//! checked against finite differences in the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::searchspace::{ArchChoice, DecisionSchema};
use crate::tensor::{adam_step, AdamConfig, Moments};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub entropy_coef: f64,
    pub baseline_decay: f64,
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 64,
            embedding: 32,
            lr: 1e-3,
            weight_decay: 1e-6,
            entropy_coef: 1e-4,
            baseline_decay: 0.95,
            init_range: 0.1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding == 0 {
            return Err(Error::Config("controller sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("controller lr must be positive, weight decay >= 0".into()));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::Config("entropy coefficient must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Offsets of each parameter group inside the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub hidden: usize,
    pub embedding: usize,
    pub counts: Vec<usize>,
    /// First embedding row of each decision's choices; row 0 is the start token.
    pub emb_row: Vec<usize>,
    pub emb: usize,
    pub offsets: usize,
    /// Gate weights `(4H, E + H)`, gate order i, f, g, o.
    pub w: usize,
    pub b: usize,
    /// Per decision: (weight offset `(k, H)`, bias offset `k`).
    pub heads: Vec<(usize, usize)>,
    pub len: usize,
}

impl Layout {
    pub fn new(counts: &[usize], hidden: usize, embedding: usize) -> Self {
        let mut emb_row = Vec::with_capacity(counts.len());
        let mut rows = 1;
        for &k in counts {
            emb_row.push(rows);
            rows += k;
        }
        let emb = 0;
        let offsets = emb + rows * embedding;
        let w = offsets + counts.len() * embedding;
        let b = w + 4 * hidden * (embedding + hidden);
        let mut at = b + 4 * hidden;
        let heads = counts
            .iter()
            .map(|&k| {
                let h = (at, at + k * hidden);
                at += k * hidden + k;
                h
            })
            .collect();
        Layout {
            hidden,
            embedding,
            counts: counts.to_vec(),
            emb_row,
            emb,
            offsets,
            w,
            b,
            heads,
            len: at,
        }
    }

    fn input_row(&self, step: usize, prev: Option<usize>) -> usize {
        match prev {
            None => 0,
            Some(a) => self.emb_row[step - 1] + a,
        }
    }
}

/// One sampled action sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub actions: ArchChoice,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

impl Rollout {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn entropy(&self) -> f64 {
        self.entropies.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    /// Mean over rollouts of the per-step mean entropy.
    pub mean_entropy: f64,
    pub loss: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    pub config: ControllerConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub moments: Moments<f64>,
    /// `None` until the first update.
    pub baseline: Option<f64>,
}

fn sigmoid(x: f64) -> f64 {
    crate::tensor::sigmoid(x)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Saved activations of one LSTM step.
struct StepCache {
    row: usize,
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

impl ControllerState {
    pub fn new(config: ControllerConfig, schema: &DecisionSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&schema.choice_counts(), config.hidden, config.embedding);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = config.init_range;
        let params = (0..layout.len)
            .map(|_| if r > 0.0 { rng.gen_range(-r..r) } else { 0.0 })
            .collect();
        let moments = Moments::zeros(layout.len);
        Ok(ControllerState {
            config,
            layout,
            params,
            moments,
            baseline: None,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.config.lr, self.config.weight_decay)
    }

    pub fn check_schema(&self, schema: &DecisionSchema) -> Result<()> {
        if schema.choice_counts() != self.layout.counts {
            return Err(Error::Incompatible(format!(
                "controller was built for choice counts {:?}, schema has {:?}",
                self.layout.counts,
                schema.choice_counts()
            )));
        }
        Ok(())
    }

    fn step(&self, t: usize, prev: Option<usize>, h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let (hd, e) = (self.layout.hidden, self.layout.embedding);
        let p = &self.params;
        let row = self.layout.input_row(t, prev);
        let emb = &p[self.layout.emb + row * e..][..e];
        let off = &p[self.layout.offsets + t * e..][..e];
        let input: Vec<f64> = emb.iter().zip(off).map(|(a, b)| a + b).collect();
        let cols = e + hd;
        let mut gates = vec![0.0; 4 * hd];
        for (j, gate) in gates.iter_mut().enumerate() {
            let wr = &p[self.layout.w + j * cols..][..cols];
            let mut s = p[self.layout.b + j];
            s += wr[..e].iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
            s += wr[e..].iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
            *gate = if (2 * hd..3 * hd).contains(&j) { s.tanh() } else { sigmoid(s) };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for u in 0..hd {
            let (i, f, g, o) = (gates[u], gates[hd + u], gates[2 * hd + u], gates[3 * hd + u]);
            c[u] = f * c_prev[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        let k = self.layout.counts[t];
        let (hw, hb) = self.layout.heads[t];
        let logits: Vec<f64> = (0..k)
            .map(|a| {
                p[hb + a] + p[hw + a * hd..][..hd].iter().zip(&h).map(|(x, y)| x * y).sum::<f64>()
            })
            .collect();
        StepCache {
            row,
            input,
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            h,
            probs: softmax(&logits),
        }
    }

    /// Runs the policy, choosing each action with `pick(step, probs)`.
    fn unroll(&self, mut pick: impl FnMut(usize, &[f64]) -> usize) -> (Vec<usize>, Vec<StepCache>) {
        let hd = self.layout.hidden;
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut prev = None;
        let mut actions = Vec::new();
        let mut caches = Vec::new();
        for t in 0..self.layout.counts.len() {
            let cache = self.step(t, prev, &h, &c);
            let a = pick(t, &cache.probs);
            h.clone_from(&cache.h);
            c.clone_from(&cache.c);
            actions.push(a);
            prev = Some(a);
            caches.push(cache);
        }
        (actions, caches)
    }

    /// Per-step action probabilities along a fixed action sequence.
    pub fn probabilities(&self, actions: &ArchChoice) -> Vec<Vec<f64>> {
        let (_, caches) = self.unroll(|t, _| actions.indices[t]);
        caches.into_iter().map(|c| c.probs).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Rollout {
        let (actions, caches) = self.unroll(|_, probs| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (a, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return a;
                }
            }
            probs.len() - 1
        });
        let log_probs = actions
            .iter()
            .zip(&caches)
            .map(|(&a, c)| c.probs[a].ln())
            .collect();
        let entropies = caches.iter().map(|c| entropy(&c.probs)).collect();
        Rollout {
            actions: ArchChoice::new(actions),
            log_probs,
            entropies,
        }
    }

    /// Argmax at every step; ties go to the lowest index.
    pub fn greedy(&self) -> ArchChoice {
        let (actions, _) = self.unroll(|_, probs| {
            let mut best = 0;
            for (a, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = a;
                }
            }
            best
        });
        ArchChoice::new(actions)
    }

    /// Mean per-step entropy of the greedy trajectory.
    pub fn greedy_entropy(&self) -> f64 {
        let greedy = self.greedy();
        let probs = self.probabilities(&greedy);
        probs.iter().map(|p| entropy(p)).sum::<f64>() / probs.len().max(1) as f64
    }

    /// Gradient of `coef · (−Σ log π) − β·Σ H` for one rollout, added into `grad`.
    fn accumulate(&self, actions: &[usize], coef: f64, beta: f64, grad: &mut [f64]) {
        let (_, caches) = self.unroll(|t, _| actions[t]);
        let (hd, e) = (self.layout.hidden, self.layout.embedding);
        let cols = e + hd;
        let p = &self.params;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..caches.len()).rev() {
            let sc = &caches[t];
            let h_ent = entropy(&sc.probs);
            let dz: Vec<f64> = sc
                .probs
                .iter()
                .enumerate()
                .map(|(a, &pa)| {
                    let onehot = (a == actions[t]) as u8 as f64;
                    let ln = if pa > 0.0 { pa.ln() } else { 0.0 };
                    coef * (pa - onehot) + beta * pa * (ln + h_ent)
                })
                .collect();
            let (hw, hb) = self.layout.heads[t];
            let mut dh = dh_next.clone();
            for (a, &d) in dz.iter().enumerate() {
                grad[hb + a] += d;
                let wr = &p[hw + a * hd..][..hd];
                let gr = &mut grad[hw + a * hd..][..hd];
                for u in 0..hd {
                    gr[u] += d * sc.h[u];
                    dh[u] += d * wr[u];
                }
            }
            let mut da = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for u in 0..hd {
                let (i, f, g, o) = (sc.gates[u], sc.gates[hd + u], sc.gates[2 * hd + u], sc.gates[3 * hd + u]);
                let tc = sc.c[u].tanh();
                let dc = dc_next[u] + dh[u] * o * (1.0 - tc * tc);
                da[u] = dc * g * i * (1.0 - i);
                da[hd + u] = dc * sc.c_prev[u] * f * (1.0 - f);
                da[2 * hd + u] = dc * i * (1.0 - g * g);
                da[3 * hd + u] = dh[u] * tc * o * (1.0 - o);
                dc_prev[u] = dc * f;
            }
            let mut dx = vec![0.0; e];
            let mut dh_prev = vec![0.0; hd];
            for (j, &d) in da.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[self.layout.b + j] += d;
                let wr = &p[self.layout.w + j * cols..][..cols];
                let gr = &mut grad[self.layout.w + j * cols..][..cols];
                for q in 0..e {
                    gr[q] += d * sc.input[q];
                    dx[q] += d * wr[q];
                }
                for q in 0..hd {
                    gr[e + q] += d * sc.h_prev[q];
                    dh_prev[q] += d * wr[e + q];
                }
            }
            let er = self.layout.emb + sc.row * e;
            let or = self.layout.offsets + t * e;
            for q in 0..e {
                grad[er + q] += dx[q];
                grad[or + q] += dx[q];
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }

    /// Loss value and gradient for a batch, advantages taken against `baseline`.
    pub fn loss_and_gradient(&self, rollouts: &[Rollout], rewards: &[f64], baseline: f64) -> (f64, Vec<f64>) {
        let n = rollouts.len() as f64;
        let beta = self.config.entropy_coef;
        let parts = par::map_indices(rollouts.len(), |r| {
            let adv = rewards[r] - baseline;
            let ro = &rollouts[r];
            let mut g = vec![0.0; self.layout.len];
            self.accumulate(&ro.actions.indices, adv / n, beta / n, &mut g);
            let loss = (-adv * ro.log_prob() - beta * ro.entropy()) / n;
            (loss, g)
        });
        let mut grad = vec![0.0; self.layout.len];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        (loss, grad)
    }

    /// One REINFORCE step followed by the baseline update.
    pub fn reinforce_update(&mut self, rollouts: &[Rollout], rewards: &[f64]) -> Result<UpdateStats> {
        if rollouts.is_empty() {
            return Err(Error::Argument("reinforce_update needs at least one rollout".into()));
        }
        if rollouts.len() != rewards.len() {
            return Err(Error::Argument(format!(
                "{} rollouts but {} rewards",
                rollouts.len(),
                rewards.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::Argument(format!("non-finite reward {r}")));
        }
        for ro in rollouts {
            if ro.actions.indices.len() != self.layout.counts.len()
                || ro.actions.indices.iter().zip(&self.layout.counts).any(|(&a, &k)| a >= k)
            {
                return Err(Error::Argument("rollout does not fit the controller's schema".into()));
            }
        }
        let n = rewards.len() as f64;
        let mean_reward = rewards.iter().sum::<f64>() / n;
        let baseline = *self.baseline.get_or_insert(mean_reward);
        let (loss, grad) = self.loss_and_gradient(rollouts, rewards, baseline);
        let cfg = self.adam();
        adam_step(&mut self.params, &grad, &mut self.moments, &cfg);
        let gamma = self.config.baseline_decay;
        let next = gamma * baseline + (1.0 - gamma) * mean_reward;
        self.baseline = Some(next);
        let steps = self.layout.counts.len().max(1) as f64;
        let mean_entropy = rollouts.iter().map(|r| r.entropy() / steps).sum::<f64>() / n;
        Ok(UpdateStats {
            mean_reward,
            mean_entropy,
            loss,
            baseline: next,
        })
    }
}
