use crate::error::{Error, Result};
use crate::numeric::graph::{Graph, Var};
use crate::numeric::tensor::Tensor;

/// Compares reverse-mode gradients of `f` with central finite differences.
///
/// `f` builds a scalar loss from the parameter leaves it is handed. It is
/// evaluated once with gradient-tracking leaves for the analytic gradient
/// and then twice per coordinate with constant leaves. Returns the largest
/// relative error `|a − n| / max(|a|, |n|, 1e-8)` over all coordinates.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(params, eps, f)?.max_relative_error)
}

/// [`grad_check`] with the coordinates split by whether the analytic
/// gradient is exactly zero.
///
/// A loss that is constant in some parameter (a term that cancels, say)
/// has an exactly zero analytic gradient there while the difference
/// quotient holds rounding noise of order `ε_mach·|f| / eps`. The relative
/// error of such a coordinate is that noise over the `1e-8` floor, which
/// says nothing about the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Over coordinates with a nonzero analytic gradient.
    pub max_relative_error_nonzero: f64,
    /// Largest `|numeric|` where the analytic gradient is exactly zero.
    pub max_numeric_at_zero: f64,
    pub coordinates: usize,
    pub zero_coordinates: usize,
}

pub fn grad_check_report<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Contract(format!("grad_check needs eps > 0, got {}", eps)));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = f(&mut g, &vars)?;
    let base = g.value(loss).values()[0];
    if !base.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite: {}", base)));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .zip(&vars)
        .map(|(p, &v)| g.grad(v).map_or_else(|| vec![0.0; p.len()], |s| s.to_vec()))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let value = g.value(loss).values()[0];
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Numeric(format!("objective is not finite: {}", value)))
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_relative_error_nonzero: 0.0,
        max_numeric_at_zero: 0.0,
        coordinates: 0,
        zero_coordinates: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = params[pi].values()[j];
            work[pi].values_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[pi].values_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[pi].values_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let err = (a - numeric).abs() / denom;
            report.max_relative_error = report.max_relative_error.max(err);
            report.coordinates += 1;
            if a == 0.0 {
                report.zero_coordinates += 1;
                report.max_numeric_at_zero = report.max_numeric_at_zero.max(numeric.abs());
            } else {
                report.max_relative_error_nonzero = report.max_relative_error_nonzero.max(err);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let w = Tensor::scalar(3.0);
        let err = grad_check(&[w], 1e-5, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_is_rounding_level() {
        let a = Tensor::from_rows(&[[1.5, -2.0, 0.25]]).unwrap();
        let err = grad_check(&[a], 1e-5, |g, v| {
            let s = g.scale(v[0], 3.0);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn cancelled_terms_are_reported_apart() {
        // f = sum((w + c) - w) + v²: constant in w
        let w = Tensor::from_rows(&[[0.3, -1.7]]).unwrap();
        let v = Tensor::scalar(2.0);
        let report = grad_check_report(&[w, v], 1e-5, |g, p| {
            let c = g.constant(Tensor::from_rows(&[[1e3, -2e3]]).unwrap());
            let shifted = g.add(p[0], c)?;
            let back = g.sub(shifted, p[0])?;
            let s = g.sum(back);
            let sq = g.mul(p[1], p[1])?;
            let sq = g.sum(sq);
            g.add(s, sq)
        })
        .unwrap();
        assert_eq!(report.zero_coordinates, 2);
        assert_eq!(report.coordinates, 3);
        assert!(report.max_relative_error_nonzero < 1e-8);
        assert!(report.max_numeric_at_zero < 1e-6);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let w = Tensor::scalar(1.0);
        assert!(grad_check(std::slice::from_ref(&w), 0.0, |g, v| Ok(g.sum(v[0]))).is_err());
        let r = grad_check(&[w], 1e-5, |g, v| {
            let s = g.scale(v[0], f64::INFINITY);
            Ok(g.sum(s))
        });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
