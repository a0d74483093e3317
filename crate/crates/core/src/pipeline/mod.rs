//! End-to-end completion model: feature extractor, seed generator and a
//! stack of upsampling blocks, plus the multi-stage loss and toy training.

pub mod block;
pub mod check;
pub mod config;
pub mod diag;
pub mod extractor;
pub mod init;
pub mod model;
pub mod seed;
pub mod toy;
pub mod train;

pub use block::{dfg_block, dfg_block_op, BlockDiagnostics, OFFSET_SCALE};
pub use check::{check_instance, gradcheck_instance, gradcheck_instance_with, GradCheckInstance};
pub use config::{BlockSettings, DegreeMode, GraphMode, ModelConfig, SeedFeatures, StageConfig, TrainConfig, DEFAULT_ALPHA};
pub use diag::{degree_map, DegreeMap};
pub use extractor::{extract_features, extract_features_op};
pub use init::{init_params, param_shapes};
pub use model::{complete, forward_op, loss, loss_op, stage_targets, CompletionResult, StageLosses};
pub use seed::{generate_seed, generate_seed_op};
pub use toy::{sphere_plane, ToySample, ToyTask};
pub use train::{eval_set, evaluate, train_toy, write_curve_csv, EvalSummary, LossRecord, TrainOutcome};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::Result;

fn bind(t: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
    Ok(t.param(name, store.get(name)?))
}
