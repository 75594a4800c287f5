//! Search orchestration: episodes, rewards, one-shot inference, logs and
//! checkpoints.

mod checkpoint;
mod config;
mod eval;
mod report;
mod search;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ExperimentConfig, SurrogateConfig, SurrogateMode};
pub use eval::{case_dice, evaluate_dice, hard_dice, one_shot_infer};
pub use report::{convergence_report, mean_over, read_jsonl, to_csv, to_jsonl, write_logs, EpisodeLog};
pub use search::{fold_split, preprocess, run_search, Child, Dataset, Search};
