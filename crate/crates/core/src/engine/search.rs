use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, SurrogateConfig, SurrogateMode};
use super::eval::evaluate_dice;
use super::report::EpisodeLog;
use crate::controller::{ControllerState, Rollout};
use crate::data::{axial_hflip, load_case, nonzero_crop, sample_patch, zscore_normalize, Case, DatasetManifest};
use crate::error::{Error, Result};
use crate::par;
use crate::searchspace::{build_schema, ArchChoice, DecisionSchema};
use crate::supernet::{ArchRealization, SharedOptimizer, SupernetWeights};
use crate::tensor::{AdamConfig, Shape5, Tape, Tensor5, DICE_SMOOTHING};

pub(crate) const CONTROLLER_STREAM: u64 = 1;
pub(crate) const TRAIN_STREAM: u64 = 2;
const PLANT_STREAM: u64 = 3;
const WEIGHT_SEED_SALT: u64 = 0x5e_ed0f_5a7e;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic k-fold split: cases are ordered by the FNV-1a hash of their
/// id and dealt round-robin into folds. Returns (train, validation) indices.
pub fn fold_split(ids: &[String], folds: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (fnv1a(ids[i].as_bytes()), ids[i].clone()));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (pos, &i) in order.iter().enumerate() {
        if pos % folds == fold {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Crop to the nonzero box, then standardize each channel.
pub fn preprocess(case: &Case) -> Case {
    let mut c = nonzero_crop(case).case;
    c.image = zscore_normalize(&c.image);
    c
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Case>,
    pub validation: Vec<Case>,
}

impl Dataset {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let root = config
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("a dataset path is required".into()))?;
        let manifest = DatasetManifest::load(root)?;
        let ids: Vec<String> = manifest.cases.iter().map(|c| c.id.clone()).collect();
        let (train_idx, val_idx) = fold_split(&ids, config.folds, config.fold);
        if train_idx.is_empty() || val_idx.is_empty() {
            return Err(Error::DatasetTooSmall(format!(
                "{} cases cannot fill a {}-fold split",
                ids.len(),
                config.folds
            )));
        }
        let load = |idx: &[usize]| -> Result<Vec<Case>> {
            par::map_indices(idx.len(), |k| load_case(&manifest.case_dir(idx[k])).map(|c| preprocess(&c)))
                .into_iter()
                .collect()
        };
        let train = load(&train_idx)?;
        let validation = load(&val_idx)?;
        let mut manifest = manifest;
        manifest.stats = manifest.subset_stats(&train_idx)?;
        Ok(Dataset {
            manifest,
            train,
            validation,
        })
    }
}

/// Shared weights with their optimizer, present outside surrogate mode.
pub struct Child {
    pub weights: SupernetWeights<f32>,
    pub optimizer: SharedOptimizer<f32>,
}

/// Complete mutable state of a search; everything here goes into checkpoints.
pub struct Search {
    pub config: ExperimentConfig,
    pub schema: DecisionSchema,
    pub dataset: Option<Dataset>,
    pub child: Option<Child>,
    pub controller: ControllerState,
    pub controller_rng: ChaCha8Rng,
    pub train_rng: ChaCha8Rng,
    pub planted: Option<Vec<usize>>,
    /// Index of the next episode to run.
    pub episode: usize,
    pub logs: Vec<EpisodeLog>,
}

impl Search {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (dataset, stats) = match (&config.surrogate, &config.data) {
            (Some(SurrogateConfig { stats: Some(s), .. }), _) => (None, *s),
            (_, Some(_)) => {
                let d = Dataset::load(&config)?;
                let s = d.manifest.stats;
                (Some(d), s)
            }
            _ => return Err(Error::Config("a dataset path is required".into())),
        };
        let schema = build_schema(&stats)?;
        let controller = ControllerState::new(config.controller(), &schema, config.seed)?;
        let child = match (&config.surrogate, &dataset) {
            (None, Some(_)) => {
                let weights = SupernetWeights::build(config.supernet(&stats), &schema, config.seed ^ WEIGHT_SEED_SALT)?;
                let optimizer = SharedOptimizer::new(&weights, AdamConfig::new(config.child_lr, config.child_weight_decay));
                Some(Child { weights, optimizer })
            }
            _ => None,
        };
        let planted = match &config.surrogate {
            None => None,
            Some(s) => Some(match &s.planted {
                Some(p) => {
                    schema.validate_choice(&ArchChoice::new(p.clone()))?;
                    p.clone()
                }
                None => {
                    let mut rng = stream_rng(config.seed, PLANT_STREAM);
                    schema.choice_counts().iter().map(|&k| rng.gen_range(0..k)).collect()
                }
            }),
        };
        Ok(Search {
            controller_rng: stream_rng(config.seed, CONTROLLER_STREAM),
            train_rng: stream_rng(config.seed, TRAIN_STREAM),
            config,
            schema,
            dataset,
            child,
            controller,
            planted,
            episode: 0,
            logs: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.episode >= self.config.episodes
    }

    /// The architecture the next episode trains on.
    pub fn next_training_arch(&self) -> ArchChoice {
        if self.episode == 0 {
            self.schema.max_architecture()
        } else {
            self.controller.greedy()
        }
    }

    pub fn realize(&self, choice: &ArchChoice) -> Result<ArchRealization> {
        ArchRealization::from_choice(&self.schema, choice)
    }

    pub fn surrogate_reward(&self, choice: &ArchChoice) -> f64 {
        let (Some(cfg), Some(planted)) = (&self.config.surrogate, &self.planted) else {
            return 0.0;
        };
        match cfg.mode {
            SurrogateMode::Exact => {
                if choice.indices == *planted {
                    1.0
                } else {
                    cfg.miss_reward
                }
            }
            SurrogateMode::PerDecision => {
                let hit: f64 = choice
                    .indices
                    .iter()
                    .zip(planted)
                    .map(|(a, b)| if a == b { 1.0 } else { cfg.miss_reward })
                    .sum();
                hit / planted.len() as f64
            }
        }
    }

    /// Rewards for `rollouts` under the current shared weights. Identical
    /// inference graphs are evaluated once.
    pub fn rewards(&self, rollouts: &[ArchChoice]) -> Result<Vec<f64>> {
        if self.config.surrogate.is_some() {
            return Ok(rollouts.iter().map(|c| self.surrogate_reward(c)).collect());
        }
        let (child, data) = match (&self.child, &self.dataset) {
            (Some(c), Some(d)) => (c, d),
            _ => return Err(Error::Config("dice rewards need a dataset".into())),
        };
        let archs = rollouts.iter().map(|c| self.realize(c)).collect::<Result<Vec<_>>>()?;
        let mut unique: Vec<ArchRealization> = Vec::new();
        let mut slot_of: HashMap<ArchRealization, usize> = HashMap::new();
        for a in &archs {
            slot_of.entry(a.inference_key()).or_insert_with(|| {
                unique.push(*a);
                unique.len() - 1
            });
        }
        let scores = par::map_indices(unique.len(), |k| evaluate_dice(&child.weights, &unique[k], &data.validation));
        let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
        Ok(archs.iter().map(|a| scores[slot_of[&a.inference_key()]]).collect())
    }

    /// Trains the shared weights on `choice` for the configured number of
    /// epochs. Returns the mean loss.
    pub fn train_child(&mut self, choice: &ArchChoice) -> Result<Option<f64>> {
        let arch = self.realize(choice)?;
        let episode = self.episode;
        let (Some(child), Some(data)) = (self.child.as_mut(), self.dataset.as_ref()) else {
            return Ok(None);
        };
        let rng = &mut self.train_rng;
        let mut total = 0.0;
        let mut steps = 0usize;
        for _ in 0..self.config.child_epochs_per_episode {
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(rng);
            for batch in order.chunks(self.config.batch_size) {
                let loss = train_step(child, &arch, batch.iter().map(|&i| &data.train[i]), rng)?;
                if !loss.is_finite() {
                    log::error!("episode {episode}: child loss became {loss} on {arch:?}");
                    return Err(Error::NumericAbort {
                        episode,
                        detail: format!("child dice loss is {loss}"),
                    });
                }
                total += loss;
                steps += 1;
            }
        }
        Ok(Some(total / steps.max(1) as f64))
    }

    /// Runs one full episode and appends its log.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let start = Instant::now();
        if let Some(c) = &self.child {
            debug_assert_eq!(c.weights.init_count(), 1);
        }
        let trained = self.next_training_arch();
        let train_loss = self.train_child(&trained)?;

        let rollouts: Vec<Rollout> = (0..self.config.rollouts_per_episode)
            .map(|_| self.controller.sample(&mut self.controller_rng))
            .collect();
        let choices: Vec<ArchChoice> = rollouts.iter().map(|r| r.actions.clone()).collect();
        let rewards = self.rewards(&choices)?;
        let stats = self.controller.reinforce_update(&rollouts, &rewards)?;
        if !stats.loss.is_finite() || self.controller.params.iter().any(|p| !p.is_finite()) {
            log::error!("episode {}: controller diverged (loss {})", self.episode, stats.loss);
            return Err(Error::NumericAbort {
                episode: self.episode,
                detail: format!("controller loss is {}", stats.loss),
            });
        }
        let max_reward = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log = EpisodeLog {
            episode: self.episode,
            trained,
            train_loss,
            rollouts: choices,
            mean_reward: stats.mean_reward,
            max_reward,
            rewards,
            entropy: stats.mean_entropy,
            controller_loss: stats.loss,
            baseline: stats.baseline,
            greedy: self.controller.greedy(),
            duration_secs: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "episode {:>4}  reward {:.4} (max {:.4})  entropy {:.4}  loss {}",
            log.episode,
            log.mean_reward,
            log.max_reward,
            log.entropy,
            log.train_loss.map_or("-".into(), |l| format!("{l:.4}"))
        );
        self.episode += 1;
        self.logs.push(log.clone());
        Ok(log)
    }

    /// Runs until the configured episode count.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.run_episode()?;
        }
        Ok(())
    }

    pub fn greedy(&self) -> ArchChoice {
        self.controller.greedy()
    }
}

fn stack(parts: &[Tensor5<f32>]) -> Tensor5<f32> {
    let s = parts[0].shape();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor5::new(Shape5::new(parts.len(), s.c, s.d, s.h, s.w), data).expect("equal patch shapes")
}

fn train_step<'a, R: Rng>(
    child: &mut Child,
    arch: &ArchRealization,
    cases: impl Iterator<Item = &'a Case>,
    rng: &mut R,
) -> Result<f64> {
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for case in cases {
        let (mut img, mut lab) = sample_patch(case, arch.patch, rng);
        axial_hflip(&mut img, &mut lab, rng);
        images.push(img);
        labels.push(lab);
    }
    let mut tape = Tape::new();
    let bound = child.weights.bind(&mut tape, true);
    let x = tape.constant(stack(&images));
    let y = tape.constant(stack(&labels));
    let f = child.weights.forward(&mut tape, &bound, arch, x)?;
    let p = tape.sigmoid(f.logits);
    let loss = tape.dice_loss(p, y, DICE_SMOOTHING)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    child.optimizer.step(&mut child.weights, &bound, &grads);
    Ok(value)
}

/// Final greedy architecture, per-episode logs, and the search state for checkpointing.
pub fn run_search(config: ExperimentConfig) -> Result<(ArchChoice, Vec<EpisodeLog>, Search)> {
    let mut search = Search::new(config)?;
    search.run()?;
    Ok((search.greedy(), search.logs.clone(), search))
}
