use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use super::config::{ModelConfig, TrainConfig};
use super::init::init_params;
use super::model::{complete, forward_op, loss, loss_op, stage_targets};
use super::toy::{ToySample, ToyTask};
use crate::autodiff::{adam_step, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::chamfer_l1;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    pub per_stage: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean total multi-stage loss.
    pub loss: f64,
    /// Mean CD-l1 of the final stage against the full ground truth.
    pub cd_l1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// One record per iteration, measured on the batch before its update.
    pub curve: Vec<LossRecord>,
    pub initial: EvalSummary,
    pub last: EvalSummary,
}

/// Loss, per-stage terms and parameter gradients of one sample.
pub fn sample_gradients(
    store: &ParamStore,
    cfg: &ModelConfig,
    sample: &ToySample,
) -> Result<(f64, Vec<f64>, BTreeMap<String, Matrix>)> {
    let mut t = Tape::new();
    let fw = forward_op(&mut t, store, &sample.partial, cfg)?;
    let targets = stage_targets(&sample.gt, &cfg.stage_sizes())?;
    let (total, terms) = loss_op(&mut t, &fw.stages, &targets);
    let grads = t.backward(total)?.params();
    let per_stage = terms.iter().map(|&v| t.value(v).item()).collect();
    Ok((t.value(total).item(), per_stage, grads))
}

/// Fixed held-out shapes for before/after comparisons.
pub fn eval_set(task: ToyTask, train: &TrainConfig) -> Vec<ToySample> {
    let mut rng = Rng::derived(train.seed, "eval");
    (0..train.eval_shapes)
        .map(|_| task.sample(&mut rng, train.partial_points, train.gt_points))
        .collect()
}

pub fn evaluate(samples: &[ToySample], cfg: &ModelConfig, store: &ParamStore) -> Result<EvalSummary> {
    let rows = samples
        .par_iter()
        .map(|s| {
            let r = complete(&s.partial, cfg, store)?;
            let l = loss(&r, &s.gt)?;
            Ok((l.total, chamfer_l1(r.output(), &s.gt)?.value))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len().max(1) as f64;
    Ok(EvalSummary {
        loss: rows.iter().map(|r| r.0).sum::<f64>() / n,
        cd_l1: rows.iter().map(|r| r.1).sum::<f64>() / n,
    })
}

pub fn train_toy(task: ToyTask, cfg: &ModelConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    if train.iters == 0 {
        return Err(Error::Config("iters must be at least 1".into()));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    cfg.validate()?;
    let mut store = init_params(cfg, train.seed);
    let held_out = eval_set(task, train);
    let initial = evaluate(&held_out, cfg, &store)?;
    let mut rng = Rng::derived(train.seed, "train");
    let mut curve = Vec::with_capacity(train.iters);
    let scale = 1.0 / train.batch_size as f64;
    for iter in 0..train.iters {
        let batch: Vec<ToySample> = (0..train.batch_size)
            .map(|_| task.sample(&mut rng, train.partial_points, train.gt_points))
            .collect();
        let results = batch
            .par_iter()
            .map(|s| sample_gradients(&store, cfg, s))
            .collect::<Result<Vec<_>>>()?;

        let mut total = 0.0;
        let mut per_stage = vec![0.0; cfg.stages() + 1];
        let mut grads: BTreeMap<String, Matrix> = BTreeMap::new();
        for (l, terms, g) in results {
            total += l * scale;
            for (acc, v) in per_stage.iter_mut().zip(terms) {
                *acc += v * scale;
            }
            for (name, m) in g {
                let m = m.map(|x| x * scale);
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_assign(&m),
                    None => {
                        grads.insert(name, m);
                    }
                }
            }
        }
        curve.push(LossRecord { iter, total, per_stage });
        log::debug!("iter {iter} loss {total:.6}");

        let mut adam = train.adam;
        if train.lr_decay_every > 0 {
            adam.lr *= 0.1f64.powi((iter / train.lr_decay_every) as i32);
        }
        adam_step(&mut store, &grads, &adam)?;
    }
    let last = evaluate(&held_out, cfg, &store)?;
    Ok(TrainOutcome { params: store, curve, initial, last })
}

/// `iter,loss_total,loss_p0,...` with one row per record.
pub fn write_curve_csv(curve: &[LossRecord], stages: usize, mut w: impl Write) -> Result<()> {
    let mut header = String::from("iter,loss_total");
    for i in 0..stages {
        header.push_str(&format!(",loss_p{i}"));
    }
    writeln!(w, "{header}")?;
    for r in curve {
        let mut line = format!("{},{}", r.iter, r.total);
        for v in &r.per_stage {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
