//! Central-difference verification of tape gradients.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Fraction of all scalar coordinates probed (at least one).
    pub fraction: f64,
    pub seed: u64,
    pub inject_fault: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            fraction: 0.05,
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Max relative error per parameter over its probed coordinates.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes whose `+eps` or `-eps` evaluation changed a discrete decision
    /// (relu/abs sign, argmin, sampling, graph structure) and were dropped.
    pub excluded: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the analytic gradient of the scalar built by `f` against
/// central differences on a seeded sample of parameter coordinates.
///
/// A probe is excluded when the perturbed evaluations record a different
/// tape signature than the unperturbed one, i.e. the step crossed a kink
/// or flipped a discrete choice; central differences are meaningless there.
pub fn grad_check<F>(f: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<((f64, f64), u64)> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        Ok((tape.scalar_parts(loss), tape.signature()))
    };

    let mut tape = Tape::new();
    if opts.inject_fault {
        tape.inject_adjoint_fault();
    }
    let loss = f(&mut tape, params)?;
    let base_sig = tape.signature();
    let analytic = tape.backward(loss)?.params();

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, m)| (0..m.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let count = ((coords.len() as f64 * opts.fraction).ceil() as usize).clamp(1, coords.len().max(1));
    let mut rng = Rng::new(opts.seed);
    let mut picks = rng.sample_indices(coords.len(), count);
    picks.sort_unstable();

    let mut per_param: BTreeMap<String, f64> = BTreeMap::new();
    let mut checked = 0;
    let mut excluded = 0;
    let mut probe = params.clone();
    for k in picks {
        let (name, i) = &coords[k];
        let orig = params.get(name)?.data()[*i];
        probe.get_mut(name)?.data_mut()[*i] = orig + opts.eps;
        let (plus, sig_plus) = eval(&probe)?;
        probe.get_mut(name)?.data_mut()[*i] = orig - opts.eps;
        let (minus, sig_minus) = eval(&probe)?;
        probe.get_mut(name)?.data_mut()[*i] = orig;
        if sig_plus != base_sig || sig_minus != base_sig {
            excluded += 1;
            continue;
        }
        // hi parts are close, so their difference is exact
        let numeric = ((plus.0 - minus.0) + (plus.1 - minus.1)) / (2.0 * opts.eps);
        let a = analytic.get(name).map_or(0.0, |g| g.data()[*i]);
        let err = relative_error(a, numeric);
        let slot = per_param.entry(name.clone()).or_insert(0.0);
        *slot = slot.max(err);
        checked += 1;
    }
    let max_rel_error = per_param.values().copied().fold(0.0, f64::max);
    Ok(GradReport {
        per_param,
        max_rel_error,
        checked,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn store(entries: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        for &(n, r, c) in entries {
            s.insert_uniform(n, r, c, r, seed);
        }
        s
    }

    #[test]
    fn linear_loss_is_exact() {
        let p = store(&[("w", 4, 3)], 1);
        let opts = GradCheckOptions { fraction: 1.0, ..Default::default() };
        let r = grad_check(
            |t, s| {
                let w = t.param("w", s.get("w")?);
                let c = t.constant(Matrix::from_vec(4, 3, (0..12).map(f64::from).collect())?);
                let m = t.mul(w, c);
                Ok(t.sum(m))
            },
            &p,
            &opts,
        )
        .unwrap();
        assert_eq!(r.checked, 12);
        assert!(r.max_rel_error <= 1e-10, "{}", r.max_rel_error);
    }

    #[test]
    fn kink_coordinate_is_excluded() {
        let mut p = ParamStore::new();
        p.insert("x", Matrix::from_vec(1, 2, vec![1e-5, 0.7]).unwrap());
        let opts = GradCheckOptions { fraction: 1.0, ..Default::default() };
        let r = grad_check(
            |t, s| {
                let x = t.param("x", s.get("x")?);
                let a = t.abs(x);
                Ok(t.sum(a))
            },
            &p,
            &opts,
        )
        .unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn mlp_softmax_min_loss_matches_differences() {
        let p = store(
            &[("w1", 3, 6), ("b1", 1, 6), ("w2", 6, 6), ("w3", 6, 3)],
            9,
        );
        let x = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let target = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
        let build = |t: &mut Tape, s: &ParamStore| -> Result<Var> {
            let xi = t.constant(x.clone());
            let w1 = t.param("w1", s.get("w1")?);
            let b1 = t.param("b1", s.get("b1")?);
            let h = t.affine(xi, w1, b1);
            let h = t.tanh(h);
            let w2 = t.param("w2", s.get("w2")?);
            let h = t.matmul(h, w2);
            let h = t.softmax_rows(h);
            let w3 = t.param("w3", s.get("w3")?);
            let y = t.matmul(h, w3);
            let tg = t.constant(target.clone());
            let d = t.pairwise_dist(y, tg);
            let r = t.min_reduce(d, super::super::tape::Axis::Rows);
            let c = t.min_reduce(d, super::super::tape::Axis::Cols);
            let r = t.mean(r);
            let c = t.mean(c);
            Ok(t.add(r, c))
        };
        let opts = GradCheckOptions { fraction: 1.0, ..Default::default() };
        let r = grad_check(build, &p, &opts).unwrap();
        assert!(r.checked > 40);
        assert!(r.max_rel_error <= 1e-4, "{:?}", r.per_param);
        let faulty = grad_check(build, &p, &GradCheckOptions { inject_fault: true, ..opts }).unwrap();
        assert!(faulty.max_rel_error > 1e-2);
    }
}
