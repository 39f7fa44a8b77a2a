//! Central finite-difference verification of analytic gradients.

use super::{backward, no_grad, Result, Tensor, TensorError};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Maximum relative error per checked parameter, in input order.
    pub max_rel_errors: Vec<f32>,
    /// True iff every entry of `max_rel_errors` is below the tolerance.
    pub pass: bool,
    pub epsilon: f32,
    pub tolerance: f32,
}

impl GradCheckReport {
    pub fn worst(&self) -> f32 {
        self.max_rel_errors.iter().copied().fold(0.0, f32::max)
    }
}

/// Compares analytic gradients of `f` against central finite differences.
///
/// `f` must map the given parameters to a scalar tensor. For every element of
/// every parameter, the numeric gradient is `(f(p+eps) - f(p-eps)) / (2*eps)`
/// and the relative error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    epsilon: f32,
    tolerance: f32,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    // Analytic pass.
    for p in params {
        p.zero_grad();
    }
    let loss = f(params)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(TensorError::NonFiniteValue(value));
    }
    backward(&loss)?;
    let analytic: Vec<Vec<f32>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    // Numeric pass: perturb each element in place, re-evaluate without taping.
    let mut max_rel_errors = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut worst = 0.0f32;
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + epsilon;
            let up = no_grad(|| f(params))?.item();
            p.data_mut()[i] = orig - epsilon;
            let down = no_grad(|| f(params))?.item();
            p.data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(TensorError::NonFiniteValue(if up.is_finite() {
                    down
                } else {
                    up
                }));
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        max_rel_errors.push(worst);
    }
    let pass = max_rel_errors.iter().all(|e| *e < tolerance);
    Ok(GradCheckReport {
        max_rel_errors,
        pass,
        epsilon,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{mul, reduce_sum};

    #[test]
    fn quadratic_passes_tightly() {
        // Central differences are exact for quadratics, so a large step is
        // legitimate and keeps f32 roundoff far below the tolerance.
        let x = Tensor::from_vec(&[4], vec![0.7, -1.3, 0.2, 1.9])
            .unwrap()
            .requires_grad();
        let report = grad_check(
            |ps| Ok(reduce_sum(&mul(&ps[0], &ps[0])?)),
            &[x],
            0.125,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "worst rel err {}", report.worst());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap().requires_grad();
        let zero = Tensor::scalar(0.0);
        let err = grad_check(
            |ps| crate::tensor::div(&reduce_sum(&ps[0]), &zero),
            &[x],
            1e-3,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, crate::tensor::TensorError::NonFiniteValue(_)));
    }

    #[test]
    fn corrupted_gradient_fails() {
        // The function value is 2*sum(x) (x plus a detached copy of x), but
        // the graph only sees one of the two copies, so the analytic gradient
        // is off by exactly 2x from the numeric one.
        let x = Tensor::from_vec(&[3], vec![0.5, -0.25, 1.0])
            .unwrap()
            .requires_grad();
        let report = grad_check(
            |ps| {
                let detached = Tensor::from_vec(ps[0].shape(), ps[0].to_vec()).unwrap();
                Ok(reduce_sum(&crate::tensor::add(&ps[0], &detached)?))
            },
            &[x],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(!report.pass, "a 2x-off gradient must be flagged");
    }
}
