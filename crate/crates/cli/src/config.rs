//! `key = value` configuration files. `#` starts a comment; unknown keys
//! and malformed values are errors.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dfg_core::detail::ShareMode;
use dfg_core::pipeline::{DegreeMode, GraphMode, ModelConfig, SeedFeatures, TrainConfig};

pub const KEYS: &[&str] = &[
    "width",
    "up_ratios",
    "n_coarse",
    "n_seed",
    "extractor_k",
    "alpha",
    "gamma",
    "s",
    "k_c",
    "d_min",
    "d_max",
    "anchor_count",
    "degree_mode",
    "uniform_degree",
    "share_mode",
    "graphs",
    "h0",
    "lr",
    "beta1",
    "beta2",
    "lr_decay_every",
    "batch_size",
    "partial_points",
    "gt_points",
    "eval_shapes",
    "seed",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("config key '{key}': cannot parse '{v}'"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                bail!("config line {}: unknown key '{k}'", i + 1);
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                bail!("config line {}: duplicate key '{k}'", i + 1);
            }
        }
        let cfg = Config { entries };
        // type-check everything up front
        cfg.model(ModelConfig::default())?;
        cfg.train(TrainConfig::default())?;
        cfg.seed()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries.get(key).map(|v| parse_num(key, v)).transpose()
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.get("seed")
    }

    /// Overrides the fields of `base` that the file sets.
    pub fn model(&self, mut m: ModelConfig) -> Result<ModelConfig> {
        if let Some(v) = self.get("width")? {
            m.width = v;
        }
        if let Some(v) = self.entries.get("up_ratios") {
            m.up_ratios = v
                .split(',')
                .map(|x| parse_num("up_ratios", x.trim()))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = self.get("n_coarse")? {
            m.n_coarse = v;
        }
        if let Some(v) = self.get("n_seed")? {
            m.n_seed = v;
        }
        if let Some(v) = self.get("extractor_k")? {
            m.extractor_k = v;
        }
        let b = &mut m.block;
        if let Some(v) = self.get("alpha")? {
            b.alpha = v;
        }
        if let Some(v) = self.get("gamma")? {
            b.gamma = v;
        }
        if let Some(v) = self.get("s")? {
            b.s = v;
        }
        if let Some(v) = self.get("k_c")? {
            b.k_c = v;
        }
        if let Some(v) = self.get("d_min")? {
            b.d_min = Some(v);
        }
        if let Some(v) = self.get("d_max")? {
            b.d_max = Some(v);
        }
        if let Some(v) = self.get("anchor_count")? {
            b.anchor_count = v;
        }
        let k: Option<usize> = self.get("uniform_degree")?;
        match self.entries.get("degree_mode").map(String::as_str) {
            None | Some("flexible") => {
                if k.is_some() && self.entries.contains_key("degree_mode") {
                    bail!("uniform_degree is only valid with degree_mode = uniform");
                }
                if let (Some(k), None) = (k, self.entries.get("degree_mode")) {
                    b.degree_mode = DegreeMode::Uniform(k);
                }
            }
            Some("uniform") => b.degree_mode = DegreeMode::Uniform(k.unwrap_or(16)),
            Some(other) => bail!("degree_mode must be flexible or uniform, got '{other}'"),
        }
        match self.entries.get("share_mode").map(String::as_str) {
            None => {}
            Some("literal") => b.share_mode = ShareMode::Literal,
            Some("combined") => b.share_mode = ShareMode::Combined,
            Some(other) => bail!("share_mode must be literal or combined, got '{other}'"),
        }
        match self.entries.get("graphs").map(String::as_str) {
            None => {}
            Some("both") => b.graphs = GraphMode::Both,
            Some("local") => b.graphs = GraphMode::LocalOnly,
            Some("global") => b.graphs = GraphMode::GlobalOnly,
            Some(other) => bail!("graphs must be both, local or global, got '{other}'"),
        }
        match self.entries.get("h0").map(String::as_str) {
            None => {}
            Some("seed") => m.h0 = SeedFeatures::Seed,
            Some("zeros") => m.h0 = SeedFeatures::Zeros,
            Some(other) => bail!("h0 must be seed or zeros, got '{other}'"),
        }
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self, mut t: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = self.get("lr")? {
            t.adam.lr = v;
        }
        if let Some(v) = self.get("beta1")? {
            t.adam.beta1 = v;
        }
        if let Some(v) = self.get("beta2")? {
            t.adam.beta2 = v;
        }
        if let Some(v) = self.get("lr_decay_every")? {
            t.lr_decay_every = v;
        }
        if let Some(v) = self.get("batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = self.get("partial_points")? {
            t.partial_points = v;
        }
        if let Some(v) = self.get("gt_points")? {
            t.gt_points = v;
        }
        if let Some(v) = self.get("eval_shapes")? {
            t.eval_shapes = v;
        }
        if let Some(v) = self.get("seed")? {
            t.seed = v;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies() {
        let c = Config::parse("# demo\nalpha = 2.5\nup_ratios = 2, 4\ngraphs = local # trailing\n").unwrap();
        let m = c.model(ModelConfig::default()).unwrap();
        assert_eq!(m.block.alpha, 2.5);
        assert_eq!(m.up_ratios, vec![2, 4]);
        assert_eq!(m.block.graphs, GraphMode::LocalOnly);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(Config::parse("colour = red").is_err());
        assert!(Config::parse("alpha = lots").is_err());
        assert!(Config::parse("alpha = 1\nalpha = 2").is_err());
        assert!(Config::parse("graphs = neither").is_err());
        assert!(Config::parse("width = 2").is_err());
        assert!(Config::parse("no equals sign").is_err());
    }

    #[test]
    fn uniform_degree_mode() {
        let c = Config::parse("degree_mode = uniform\nuniform_degree = 2").unwrap();
        assert_eq!(c.model(ModelConfig::default()).unwrap().block.degree_mode, DegreeMode::Uniform(2));
        let c = Config::parse("uniform_degree = 5").unwrap();
        assert_eq!(c.model(ModelConfig::default()).unwrap().block.degree_mode, DegreeMode::Uniform(5));
        assert!(Config::parse("degree_mode = flexible\nuniform_degree = 5").is_err());
    }
}
