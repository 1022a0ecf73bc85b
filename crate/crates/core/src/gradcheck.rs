//! Central finite-difference checks for tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    match tape.value(v) {
        [x] => Ok(*x),
        other => Err(Error::Usage(format!(
            "gradient check needs a scalar function, got {} values",
            other.len()
        ))),
    }
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences, `|a - n| / max(1, |a|)` over all coordinates.
///
/// `f` must be deterministic.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Usage("eps must be positive".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x)?;
    let out = f(&mut tape, xv)?;
    scalar_of(&tape, out)?;
    let analytic = tape.backward(out)?.of(&tape, xv);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe)?;
        let o = f(&mut t, v)?;
        scalar_of(&t, o)
    };
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate().take(x.len()) {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.values_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.values_mut()[i] = orig;
        worst = worst.max(rel_err(a, (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Worst coordinate found by [`param_gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Finite-difference check of every coordinate of the listed parameters.
///
/// `f` builds a scalar loss from the store on a fresh tape. Coordinates are
/// visited with stride `stride` (1 = all) to bound cost on larger tensors.
pub fn param_gradient_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    eps: f64,
    stride: usize,
) -> Result<ParamCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let stride = stride.max(1);
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    scalar_of(&tape, out)?;
    tape.backward(out)?.accumulate_into(store);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let o = f(&mut t, s)?;
        scalar_of(&t, o)
    };
    let mut report = ParamCheck {
        max_rel_err: 0.0,
        worst_param: None,
        worst_index: 0,
        coords_checked: 0,
    };
    for &id in ids {
        let n = store.get(id).len();
        for i in (0..n).step_by(stride) {
            let analytic = store.get(id).grad()[i];
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig;
            let e = rel_err(analytic, (up - down) / (2.0 * eps));
            report.coords_checked += 1;
            if e > report.max_rel_err || report.worst_param.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst_param = Some(store.name(id).to_string());
                report.worst_index = i;
            }
        }
    }
    store.zero_grad();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap();
        let e = finite_diff_check(
            |t, x| {
                let w = t.vector(vec![1.5, -2.0, 0.25])?;
                t.dot(w, x)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(e <= 1e-10, "{e}");
    }

    #[test]
    fn tanh_sum_at_zero() {
        let x = Tensor::vector(vec![0.0; 5]).unwrap();
        let e = finite_diff_check(
            |t, x| {
                let y = t.tanh(x)?;
                t.sum(y)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(e <= 1e-8, "{e}");
    }

    #[test]
    fn wrong_backward_rule_is_detected() {
        // derivative of sin reported as 1 + cos
        let x = Tensor::vector(vec![0.4, -0.9, 1.3]).unwrap();
        let e = finite_diff_check(
            |t, x| {
                let y = t.map(x, f64::sin, |x, _| 1.0 + x.cos())?;
                t.sum(y)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(e >= 1e-2, "{e}");

        let ok = finite_diff_check(
            |t, x| {
                let y = t.map(x, f64::sin, |x, _| x.cos())?;
                t.sum(y)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(ok < 1e-8, "{ok}");
    }

    #[test]
    fn rejects_non_scalar_and_bad_eps() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(finite_diff_check(|t, x| t.tanh(x), &x, 1e-5).is_err());
        assert!(finite_diff_check(|t, x| t.sum(x), &x, 0.0).is_err());
    }
}
