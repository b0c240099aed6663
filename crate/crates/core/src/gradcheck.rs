//! Central finite-difference check of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Max over coordinates of `|g_auto - g_fd| / max(1, |g_fd|)`, where `g_fd`
/// is the central difference with step `h`.
///
/// `f` builds a scalar from its input on the tape it is handed; it is called
/// once with a tracked input and `2 * x.len()` times on untracked perturbed
/// copies.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let auto = grads
        .get(xv)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(probe);
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if !value.is_scalar() {
            return Err(Error::NotScalar(value.shape().to_vec()));
        }
        Ok(value.item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fp = eval(Tensor::new(x.shape().to_vec(), plus)?)?;
        let fm = eval(Tensor::new(x.shape().to_vec(), minus)?)?;
        let fd = (fp - fm) / (2.0 * h);
        if !fd.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_check" });
        }
        worst = worst.max((auto[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![0.3, -1.2]).unwrap();
        let err = finite_diff_check(
            |tape, _x| Ok(tape.constant(Tensor::scalar(4.0))),
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_check(|t, x| t.sum(x), &x, 0.0).is_err());
    }
}
