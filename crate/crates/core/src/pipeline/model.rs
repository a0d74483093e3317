use super::block::{dfg_block_op, BlockDiagnostics};
use super::config::ModelConfig;
use super::extractor::extract_features_op;
use super::seed::generate_seed_op;
use crate::autodiff::{Axis, ParamStore, Tape, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::chamfer_l1;
use crate::sampling::fps_canonical;

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `P_0 .. P_S`
    pub stages: Vec<Var>,
    /// `H_0 .. H_S`
    pub features: Vec<Var>,
    /// Per-block offsets, rows aligned with `stages[i + 1]`.
    pub offsets: Vec<Var>,
    pub global_f: Var,
    pub blocks: Vec<BlockDiagnostics>,
}

pub fn forward_op(t: &mut Tape, store: &ParamStore, partial: &PointCloud, cfg: &ModelConfig) -> Result<ForwardVars> {
    cfg.validate()?;
    let feats = extract_features_op(t, store, partial, cfg)?;
    let seed = generate_seed_op(t, store, partial, &feats, cfg)?;
    let mut stages = vec![seed.points];
    let mut features = vec![seed.features];
    let mut offsets = Vec::new();
    let mut blocks = Vec::new();
    for i in 0..cfg.stages() {
        let out = dfg_block_op(t, store, i + 1, stages[i], features[i], feats.global_f, &cfg.stage(i))?;
        stages.push(out.points);
        features.push(out.features);
        offsets.push(out.offsets);
        blocks.push(out.diagnostics);
    }
    Ok(ForwardVars { stages, features, offsets, global_f: feats.global_f, blocks })
}

#[derive(Clone, Debug)]
pub struct CompletionResult {
    pub stages: Vec<PointCloud>,
    pub features: Vec<Matrix>,
    pub offsets: Vec<Matrix>,
    pub blocks: Vec<BlockDiagnostics>,
    /// Filled by [`CompletionResult::with_losses`].
    pub losses: Option<StageLosses>,
}

impl CompletionResult {
    pub fn output(&self) -> &PointCloud {
        self.stages.last().expect("at least one stage")
    }

    pub fn with_losses(mut self, gt: &PointCloud) -> Result<Self> {
        self.losses = Some(loss(&self, gt)?);
        Ok(self)
    }
}

pub fn complete(partial: &PointCloud, cfg: &ModelConfig, store: &ParamStore) -> Result<CompletionResult> {
    let mut t = Tape::new();
    let fw = forward_op(&mut t, store, partial, cfg)?;
    let stages = fw
        .stages
        .iter()
        .map(|&v| PointCloud::from_matrix(t.value(v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompletionResult {
        stages,
        features: fw.features.iter().map(|&v| t.value(v).clone()).collect(),
        offsets: fw.offsets.iter().map(|&v| t.value(v).clone()).collect(),
        blocks: fw.blocks,
        losses: None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageLosses {
    pub total: f64,
    pub per_stage: Vec<f64>,
}

/// Ground-truth targets per stage: `fps(gt, |P_i|)` from the canonical start.
pub fn stage_targets(gt: &PointCloud, sizes: &[usize]) -> Result<Vec<PointCloud>> {
    let needed = sizes.iter().copied().max().unwrap_or(0);
    if gt.len() < needed {
        return Err(Error::GtTooSmall { gt: gt.len(), needed });
    }
    sizes
        .iter()
        .map(|&s| Ok(gt.select(&fps_canonical(gt, s)?.indices)))
        .collect()
}

/// Sum over stages of CD-l1 against the per-stage ground-truth subsample.
pub fn loss(result: &CompletionResult, gt: &PointCloud) -> Result<StageLosses> {
    let sizes: Vec<usize> = result.stages.iter().map(PointCloud::len).collect();
    let targets = stage_targets(gt, &sizes)?;
    let per_stage = result
        .stages
        .iter()
        .zip(&targets)
        .map(|(p, s)| chamfer_l1(p, s).map(|m| m.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(StageLosses { total: per_stage.iter().sum(), per_stage })
}

/// CD-l1 between a tape cloud and a fixed cloud.
pub fn chamfer_l1_op(t: &mut Tape, p: Var, target: &PointCloud) -> Var {
    let s = t.constant(target.to_matrix());
    let d = t.pairwise_dist(p, s);
    let a = t.min_reduce(d, Axis::Rows);
    let a = t.mean(a);
    let b = t.min_reduce(d, Axis::Cols);
    let b = t.mean(b);
    t.add(a, b)
}

/// Returns the total and the per-stage terms. The total is one compensated
/// sum over every scaled nearest-neighbour distance, so it carries a single
/// final rounding.
pub fn loss_op(t: &mut Tape, stages: &[Var], targets: &[PointCloud]) -> (Var, Vec<Var>) {
    let mut terms = Vec::with_capacity(stages.len());
    let mut parts: Option<Var> = None;
    for (&p, target) in stages.iter().zip(targets) {
        let s = t.constant(target.to_matrix());
        let d = t.pairwise_dist(p, s);
        let rows = t.min_reduce(d, Axis::Rows);
        let cols = t.min_reduce(d, Axis::Cols);
        let cols = t.transpose(cols);
        let rows = t.scale(rows, 1.0 / t.value(rows).len() as f64);
        let cols = t.scale(cols, 1.0 / t.value(cols).len() as f64);
        let both = t.concat_rows(rows, cols);
        terms.push(t.sum(both));
        parts = Some(match parts {
            None => both,
            Some(acc) => t.concat_rows(acc, both),
        });
    }
    let total = t.sum(parts.expect("at least one stage"));
    (total, terms)
}
