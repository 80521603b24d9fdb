//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;

use super::{Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor, so near-zero gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error, as `name[index]`.
    pub worst: String,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error || self.checked == 0 {
            self.max_rel_error = e;
            self.worst = label();
        }
        self.checked += 1;
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: &Self) {
        if other.max_rel_error > self.max_rel_error || self.checked == 0 {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
        self.checked += other.checked;
    }
}

/// Up to `n` distinct `(parameter, flat index)` pairs among parameters whose
/// name starts with `prefix`; every coordinate when there are fewer than `n`.
pub fn sample_coordinates(store: &ParamStore, prefix: &str, n: usize, seed: u64) -> Vec<(String, usize)> {
    let all: Vec<(String, usize)> = store
        .names()
        .filter(|name| name.starts_with(prefix))
        .flat_map(|name| {
            let len = store.value(name).map_or(0, Matrix::len);
            (0..len).map(move |i| (name.to_owned(), i))
        })
        .collect();
    if all.len() <= n {
        return all;
    }
    let mut picked: Vec<usize> = sample(&mut rng_for(seed, &[]), all.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i].clone()).collect()
}

/// Compares the gradients held in `store` against central differences of
/// `loss` at `coords`. The gradients must come from the same `loss`.
pub fn check_param_gradients(
    store: &ParamStore,
    coords: &[(String, usize)],
    loss: impl Fn(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut probe = store.clone();
    let mut report = GradCheckReport::new();
    for (name, idx) in coords {
        let analytic = store
            .grad(name)
            .ok_or_else(|| Error::InvalidValue(format!("unknown parameter {name}")))?
            .as_slice()[*idx];
        let orig = store.value(name).unwrap().as_slice()[*idx];
        let mut at = |v: f64| -> Result<f64> {
            probe.value_mut(name).unwrap().as_mut_slice()[*idx] = v;
            loss(&probe)
        };
        let numeric = (at(orig + FD_STEP)? - at(orig - FD_STEP)?) / (2.0 * FD_STEP);
        at(orig)?;
        report.record(|| format!("{name}[{idx}]"), analytic, numeric);
    }
    Ok(report)
}

/// Checks the gradient of `build(tape, x)` with respect to the free input `x`
/// at up to `n` sampled coordinates. Parameters are read from `store` frozen.
pub fn check_input_gradients(
    x: &Matrix,
    n: usize,
    seed: u64,
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let eval = |m: &Matrix| -> Result<f64> {
        let mut t = Tape::frozen();
        let v = t.variable(m.clone());
        let out = build(&mut t, v)?;
        Ok(t.value(out).scalar())
    };
    let mut t = Tape::frozen();
    let v = t.variable(x.clone());
    let out = build(&mut t, v)?;
    let g = t.backward(out)?.get_or_zeros(&t, v);
    let idx: Vec<usize> = if x.len() <= n {
        (0..x.len()).collect()
    } else {
        let mut i = sample(&mut rng_for(seed, &[]), x.len(), n).into_vec();
        i.sort_unstable();
        i
    };
    let mut report = GradCheckReport::new();
    let mut probe = x.clone();
    for i in idx {
        let orig = x.as_slice()[i];
        probe.as_mut_slice()[i] = orig + FD_STEP;
        let up = eval(&probe)?;
        probe.as_mut_slice()[i] = orig - FD_STEP;
        let down = eval(&probe)?;
        probe.as_mut_slice()[i] = orig;
        report.record(|| format!("input[{i}]"), g.as_slice()[i], (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}
