use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::detail::ShareMode;
use crate::error::{Error, Result};
use crate::graph::DEFAULT_ANCHOR_COUNT;

/// How per-point degrees are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegreeMode {
    /// Detail-driven allocation.
    Flexible,
    /// Every point gets the same `k` (plain KNN).
    Uniform(usize),
}

/// Which graph channels feed the fusion module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphMode {
    Both,
    LocalOnly,
    GlobalOnly,
}

impl GraphMode {
    pub fn uses_local(self) -> bool {
        self != GraphMode::GlobalOnly
    }

    pub fn uses_global(self) -> bool {
        self != GraphMode::LocalOnly
    }
}

/// Features handed to the first block as the previous-stage term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedFeatures {
    Seed,
    Zeros,
}

/// Settings shared by every upsampling block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSettings {
    pub alpha: f64,
    pub gamma: f64,
    /// Down-up sampling factor of the detail score.
    pub s: usize,
    /// Curvature neighbourhood size.
    pub k_c: usize,
    /// `None` uses the default window for the stage size.
    pub d_min: Option<usize>,
    pub d_max: Option<usize>,
    pub anchor_count: usize,
    pub degree_mode: DegreeMode,
    pub share_mode: ShareMode,
    pub graphs: GraphMode,
}

impl Default for BlockSettings {
    fn default() -> Self {
        BlockSettings {
            alpha: DEFAULT_ALPHA,
            gamma: crate::aggregate::DEFAULT_GAMMA,
            s: 3,
            k_c: crate::geometry::DEFAULT_CURVATURE_K,
            d_min: None,
            d_max: None,
            anchor_count: DEFAULT_ANCHOR_COUNT,
            degree_mode: DegreeMode::Flexible,
            share_mode: ShareMode::Literal,
            graphs: GraphMode::Both,
        }
    }
}

pub const DEFAULT_ALPHA: f64 = 3.0;

/// One block's resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub up_ratio: usize,
    pub width: usize,
    pub settings: BlockSettings,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.up_ratio == 0 {
            return Err(Error::Config("up ratio must be at least 1".into()));
        }
        if self.width < 4 {
            return Err(Error::Config(format!("feature width {} is below 4", self.width)));
        }
        let s = &self.settings;
        if s.s == 0 {
            return Err(Error::Config("s must be at least 1".into()));
        }
        if !(s.gamma >= 0.0 && s.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be finite and nonnegative", s.gamma)));
        }
        if !(s.alpha > 0.0 && s.alpha.is_finite()) {
            return Err(Error::BadAlpha(s.alpha));
        }
        if s.anchor_count == 0 {
            return Err(Error::Config("anchor_count must be positive".into()));
        }
        if s.k_c < 3 {
            return Err(Error::Config("k_c must be at least 3".into()));
        }
        if let DegreeMode::Uniform(0) = s.degree_mode {
            return Err(Error::Config("uniform degree must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub up_ratios: Vec<usize>,
    /// Points generated by the seed generator.
    pub n_coarse: usize,
    /// Size of the seed cloud.
    pub n_seed: usize,
    pub extractor_k: usize,
    pub h0: SeedFeatures,
    pub block: BlockSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 16,
            up_ratios: vec![2, 2, 2],
            n_coarse: 64,
            n_seed: 64,
            extractor_k: 16,
            h0: SeedFeatures::Seed,
            block: BlockSettings::default(),
        }
    }
}

impl ModelConfig {
    pub fn stage(&self, i: usize) -> StageConfig {
        StageConfig {
            up_ratio: self.up_ratios[i],
            width: self.width,
            settings: self.block.clone(),
        }
    }

    pub fn stages(&self) -> usize {
        self.up_ratios.len()
    }

    /// `|P_0|, |P_1|, ...`
    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.n_seed];
        for &r in &self.up_ratios {
            sizes.push(sizes.last().unwrap() * r);
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.up_ratios.is_empty() {
            return Err(Error::Config("at least one upsampling stage is required".into()));
        }
        for i in 0..self.stages() {
            self.stage(i).validate()?;
        }
        if self.n_coarse == 0 || self.n_seed < 4 {
            return Err(Error::Config("n_coarse must be positive and n_seed at least 4".into()));
        }
        if self.extractor_k == 0 {
            return Err(Error::Config("extractor_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning rate is multiplied by 0.1 every this many iterations.
    pub lr_decay_every: usize,
    pub partial_points: usize,
    pub gt_points: usize,
    /// Held-out shapes scored before and after training.
    pub eval_shapes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 200,
            seed: 42,
            batch_size: 4,
            adam: AdamConfig::default(),
            lr_decay_every: 1000,
            partial_points: 256,
            gt_points: 1024,
            eval_shapes: 8,
        }
    }
}
