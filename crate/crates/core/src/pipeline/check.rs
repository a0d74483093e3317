//! A small end-to-end instance for gradient checking.

use super::config::ModelConfig;
use super::init::init_params;
use super::model::{forward_op, loss_op, stage_targets};
use super::toy::{ToySample, ToyTask};
use crate::autodiff::{grad_check, GradCheckOptions, GradReport, ParamStore};
use crate::error::Result;
use crate::rng::Rng;

pub struct GradCheckInstance {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub sample: ToySample,
}

/// 32-point partial sphere, width 8, 16 seed points, 256 ground-truth points.
pub fn gradcheck_instance(seed: u64) -> GradCheckInstance {
    let cfg = ModelConfig { width: 8, n_coarse: 16, n_seed: 16, ..ModelConfig::default() };
    gradcheck_instance_with(cfg, seed)
}

pub fn gradcheck_instance_with(cfg: ModelConfig, seed: u64) -> GradCheckInstance {
    let mut rng = Rng::derived(seed, "gradcheck");
    let sample = ToyTask::SphereMinusCap.sample(&mut rng, 32, 256);
    GradCheckInstance { params: init_params(&cfg, seed), cfg, sample }
}

pub fn check_instance(inst: &GradCheckInstance, opts: &GradCheckOptions) -> Result<GradReport> {
    let targets = stage_targets(&inst.sample.gt, &inst.cfg.stage_sizes())?;
    grad_check(
        |t, store| {
            let fw = forward_op(t, store, &inst.sample.partial, &inst.cfg)?;
            Ok(loss_op(t, &fw.stages, &targets).0)
        },
        &inst.params,
        opts,
    )
}
