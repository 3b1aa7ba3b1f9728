use alloc::format;

use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

/// Largest `|analytic - fd| / max(1, |fd|)` over all coordinates.
///
/// `f` is evaluated twice at `x` first; any difference means the noise was
/// not held fixed and the comparison would be meaningless.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    x.expect_same_shape("finite_diff_check", analytic)?;
    let a = f(x)?;
    let b = f(x)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::NonDeterministic(format!("f(x) returned {a} then {b}")));
    }
    let fd = finite_diff_gradient(f, x, eps)?;
    Ok(analytic.data().iter().zip(fd.data()).map(|(&g, &d)| (g - d).abs() / d.abs().max(1.0)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Graph;

    #[test]
    fn quadratic_has_exact_central_difference() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let f = |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum());
        let analytic = Tensor::from_f64(&[2], &[2.0, 4.0]).unwrap();
        assert!(finite_diff_check(f, &x, &analytic, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let err = finite_diff_check(|_| Ok(4.0), &x, &Tensor::zeros(&[3]), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn nondeterministic_function_is_reported() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let mut calls = 0.0;
        let f = |_: &Tensor<f64>| {
            calls += 1.0;
            Ok(calls)
        };
        assert!(matches!(finite_diff_check(f, &x, &Tensor::zeros(&[1]), 1e-5), Err(Error::NonDeterministic(_))));
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let x = Tensor::from_f64(&[4], &[0.3, -0.7, 1.1, 0.2]).unwrap();
        let eval = |t: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let mut g = Graph::new();
            let v = g.leaf(t.clone(), true);
            let s = g.sigmoid(v)?;
            let e = g.exp(v)?;
            let m = g.mul(s, e)?;
            let sq = g.mul(m, v)?;
            let r = g.relu(sq)?;
            let l = g.ln(e)?;
            let a = g.add(r, l)?;
            let loss = g.mean(a)?;
            Ok((g.value(loss).item(), g.backward(loss)?.wrt(v)))
        };
        let analytic = eval(&x).unwrap().1;
        let err = finite_diff_check(|t| eval(t).map(|r| r.0), &x, &analytic, 1e-6).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
