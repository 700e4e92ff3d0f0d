use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares the reverse-mode gradient of `f` at `x` against central
/// differences and returns the largest relative error over coordinates:
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// `f` receives a fresh graph and the parameter node holding `x` and must
/// return a scalar node. Any failure while evaluating `f` yields `NaN`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> f64
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let analytic = match analytic_gradient(&f, x) {
        Ok(g) => g,
        Err(_) => return f64::NAN,
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = evaluate(&f, &probe);
        probe.data_mut()[i] = orig - step;
        let minus = evaluate(&f, &probe);
        probe.data_mut()[i] = orig;
        let (Ok(plus), Ok(minus)) = (plus, minus) else {
            return f64::NAN;
        };
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        if err.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(err);
    }
    worst
}

fn analytic_gradient<F>(f: &F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let p = g.param(x.clone());
    let loss = f(&mut g, p)?;
    Ok(g.backward(loss)?.get(p).clone())
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let p = g.param(x.clone());
    let loss = f(&mut g, p)?;
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(
            |g, p| {
                let sq = g.square(p)?;
                g.sum(sq)
            },
            &x,
            1e-5,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(4.0))), &x, 1e-5);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn failure_is_nan() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        // a non-scalar "loss" cannot be differentiated
        let err = grad_check(|_, p| Ok(p), &x, 1e-5);
        assert!(err.is_nan());
    }
}
