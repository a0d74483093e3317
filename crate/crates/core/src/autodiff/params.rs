use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Matrix,
    m: Matrix,
    v: Matrix,
    step: u64,
}

impl ParamEntry {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Matrix, &Matrix) {
        (&self.m, &self.v)
    }
}

/// Named learnable tensors with their Adam state. Iteration order is the
/// lexicographic order of names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.insert(name.into(), ParamEntry::new(value));
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init from a stream
    /// derived from `seed` and `name`, so a parameter's initial value does
    /// not depend on which other parameters exist.
    pub fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, seed: u64) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = Rng::derived(seed, name);
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("shape"));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint(
            self.entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        CheckpointTensor {
                            shape: [e.value.rows(), e.value.cols()],
                            data: e.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut store = Self::new();
        for (name, t) in ckpt.0 {
            store.insert(name, Matrix::from_vec(t.shape[0], t.shape[1], t.data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }

    /// Checks that every name in `expected` exists with the given shape.
    pub fn check_shapes(&self, expected: &ParamStore) -> Result<()> {
        for (name, want) in expected.iter() {
            let have = self.get(name)?;
            if have.shape() != want.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: checkpoint {:?}, model {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}

/// On-disk format: `{name: {"shape": [rows, cols], "data": [...]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Checkpoint(pub BTreeMap<String, CheckpointTensor>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter. Parameters absent
/// from `grads` are stepped with a zero gradient.
pub fn adam_step(store: &mut ParamStore, grads: &BTreeMap<String, Matrix>, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads {
        let e = store
            .entries
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if e.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for {name} is {:?}, parameter is {:?}",
                g.shape(),
                e.value.shape()
            )));
        }
    }
    for (name, e) in store.entries.iter_mut() {
        e.step += 1;
        let t = e.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let g = grads.get(name);
        for i in 0..e.value.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let m = cfg.beta1 * e.m.data()[i] + (1.0 - cfg.beta1) * gi;
            let v = cfg.beta2 * e.v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            e.m.data_mut()[i] = m;
            e.v.data_mut()[i] = v;
            let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            e.value.data_mut()[i] -= update;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap());
        let g = BTreeMap::from([(
            "w".to_string(),
            Matrix::from_vec(1, 3, vec![0.5, -2.0, 1e-3]).unwrap(),
        )]);
        adam_step(&mut s, &g, &AdamConfig { lr: 0.01, ..Default::default() }).unwrap();
        let w = s.get("w").unwrap();
        assert!((w.get(0, 0) - 0.99).abs() < 1e-9);
        assert!((w.get(0, 1) - 1.01).abs() < 1e-9);
        assert!((w.get(0, 2) - 0.99).abs() < 1e-6);
        assert_eq!(s.entry("w").unwrap().step(), 1);
    }

    #[test]
    fn zero_gradient_keeps_fresh_parameters() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::from_vec(2, 1, vec![0.3, -0.4]).unwrap());
        let before = s.get("w").unwrap().clone();
        let g = BTreeMap::from([("w".to_string(), Matrix::zeros(2, 1))]);
        adam_step(&mut s, &g, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap(), &before);
        assert_eq!(s.entry("w").unwrap().step(), 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::scalar(1.0));
        let cfg = AdamConfig::default();
        adam_step(&mut s, &BTreeMap::from([("w".into(), Matrix::scalar(1.0))]), &cfg).unwrap();
        let (m1, v1) = s.entry("w").unwrap().moments();
        let (m1, v1) = (m1.item(), v1.item());
        adam_step(&mut s, &BTreeMap::from([("w".into(), Matrix::scalar(0.0))]), &cfg).unwrap();
        let (m2, v2) = s.entry("w").unwrap().moments();
        assert!((m2.item() - 0.9 * m1).abs() < 1e-15);
        assert!((v2.item() - 0.99 * v1).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends() {
        let mut s = ParamStore::new();
        s.insert("theta", Matrix::scalar(1.0));
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let th = s.get("theta").unwrap().item();
            let g = BTreeMap::from([("theta".to_string(), Matrix::scalar(2.0 * th))]);
            adam_step(&mut s, &g, &cfg).unwrap();
            let now = s.get("theta").unwrap().item().abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn shape_and_name_errors() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::zeros(2, 2));
        let bad = BTreeMap::from([("w".to_string(), Matrix::zeros(1, 2))]);
        assert!(matches!(adam_step(&mut s, &bad, &AdamConfig::default()), Err(Error::ShapeMismatch(_))));
        let unknown = BTreeMap::from([("q".to_string(), Matrix::zeros(1, 2))]);
        assert!(matches!(adam_step(&mut s, &unknown, &AdamConfig::default()), Err(Error::UnknownParam(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.insert_uniform("a.w", 3, 4, 3, 17);
        s.insert("b", Matrix::from_vec(1, 3, vec![0.1, 1.0 / 3.0, -2.5e-300]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        s.save(&path).unwrap();
        let back = ParamStore::load(&path).unwrap();
        for (name, m) in s.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(m.shape(), b.shape());
            for (x, y) in m.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["a.w"]["shape"], serde_json::json!([3, 4]));
    }
}
