use super::{backward, AutodiffError, Tape, Tensor, Var};

/// Central-difference gradient check of a scalar function.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over the
/// coordinates of `x`. The function is rebuilt on a fresh tape for every
/// evaluation, so it may itself call [`backward`] with `create_graph` to
/// check second-order derivatives.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let eval = |xv: &Tensor| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let v = tape.var(xv.clone());
        let out = f(&tape, v);
        if !out.shape().is_scalar() {
            return Err(AutodiffError::NonScalarOutput(out.shape()));
        }
        let y = out.item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(AutodiffError::NonFinite(y))
        }
    };

    let analytic = {
        let tape = Tape::new();
        let v = tape.var(x.clone());
        let out = f(&tape, v);
        let y = out.item();
        if !y.is_finite() {
            return Err(AutodiffError::NonFinite(y));
        }
        backward(out, &[v], false)?[0].value()
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::column(vec![1.0, 2.0, 3.0]);
        let err = finite_diff_check(|_, v| v.square().sum(), &x, 1e-6).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn constant_function() {
        let x = Tensor::column(vec![1.0, -2.0]);
        let err = finite_diff_check(|t, _| t.scalar(4.0), &x, 1e-6).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn protected_log() {
        let x = Tensor::scalar(0.5);
        let err = finite_diff_check(|_, v| v.plog().sum(), &x, 1e-6).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = Tensor::scalar(-1.0);
        let r = finite_diff_check(|_, v| v.ln().sum(), &x, 1e-6);
        assert!(matches!(r, Err(AutodiffError::NonFinite(_))));
    }

    #[test]
    fn through_a_gradient() {
        // d/dphi of d/dtheta (theta - a*phi*theta)^2
        let x = Tensor::scalar(0.7);
        let err = finite_diff_check(
            |t, phi| {
                let theta = t.var(Tensor::scalar(1.3));
                let inner = theta.sub(phi.mul(theta).scale(0.1)).square();
                backward(inner, &[theta], true).unwrap()[0]
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
