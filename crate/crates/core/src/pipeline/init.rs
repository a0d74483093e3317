use super::config::{GraphMode, ModelConfig};
use crate::autodiff::ParamStore;

/// Extractor depth; each level halves the point count.
pub const EXTRACTOR_LEVELS: usize = 3;

/// Parameter layout: `(name, rows, cols, fan_in)`.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize, usize)> {
    let c = cfg.width;
    let mut v: Vec<(String, usize, usize, usize)> = Vec::new();
    let mut add = |name: String, rows: usize, cols: usize, fan_in: usize| v.push((name, rows, cols, fan_in));

    add("extract.embed.w".into(), 3, c, 3);
    add("extract.embed.b".into(), 1, c, 3);
    for l in 1..=EXTRACTOR_LEVELS {
        add(format!("extract.l{l}.wp"), 3, c, 3 + c);
        add(format!("extract.l{l}.wf"), c, c, 3 + c);
        add(format!("extract.l{l}.b"), 1, c, 3 + c);
    }

    add("seed.w1f".into(), c, c, 2 * c);
    add("seed.w1g".into(), c, c, 2 * c);
    add("seed.b1".into(), 1, c, 2 * c);
    add("seed.w2".into(), c, 3, c);
    add("seed.b2".into(), 1, 3, c);

    for (i, &r) in cfg.up_ratios.iter().enumerate() {
        let b = format!("block{}", i + 1);
        add(format!("{b}.q.wp"), 3, c, 3 + 2 * c);
        add(format!("{b}.q.wh"), c, c, 3 + 2 * c);
        add(format!("{b}.q.wg"), c, c, 3 + 2 * c);
        add(format!("{b}.q.b1"), 1, c, 3 + 2 * c);
        add(format!("{b}.q.w2"), c, c, c);
        add(format!("{b}.q.b2"), 1, c, c);
        let graphs = cfg.block.graphs;
        let mut channels = Vec::new();
        if graphs.uses_local() {
            channels.push("local");
        }
        if graphs.uses_global() {
            channels.push("global");
        }
        for ch in channels {
            add(format!("{b}.{ch}.pos.w"), 3, c, 3);
            add(format!("{b}.{ch}.pos.b"), 1, c, 3);
            add(format!("{b}.{ch}.beta.w1"), c, c, c);
            add(format!("{b}.{ch}.beta.b1"), 1, c, c);
            add(format!("{b}.{ch}.beta.w2"), c, c, c);
            add(format!("{b}.{ch}.beta.b2"), 1, c, c);
        }
        for f in ["fuse1", "fuse2"] {
            for w in ["wq", "wk", "wv"] {
                add(format!("{b}.{f}.{w}"), c, c, c);
            }
        }
        if graphs == GraphMode::Both {
            add(format!("{b}.fuse2.wg"), c, c, c);
        }
        add(format!("{b}.mlp.w1"), c, c, c);
        add(format!("{b}.mlp.b1"), 1, c, c);
        add(format!("{b}.mlp.w2"), c, c, c);
        add(format!("{b}.mlp.b2"), 1, c, c);
        add(format!("{b}.up.wa"), c, c, c + r);
        add(format!("{b}.up.code"), r, c, c + r);
        add(format!("{b}.up.ba"), 1, c, c + r);
        add(format!("{b}.up.wo"), c, 3, c);
        add(format!("{b}.up.bo"), 1, 3, c);
    }
    v
}

/// Uniform `±1/sqrt(fan_in)` initialisation, one derived stream per tensor.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, rows, cols, fan_in) in param_shapes(cfg) {
        store.insert_uniform(&name, rows, cols, fan_in, seed);
    }
    store
}
