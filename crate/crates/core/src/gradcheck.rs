//! Central-difference gradient checking.
//!
//! The analytic gradient is whatever the caller left in each
//! [`ParamTensor::grad`]; the checker perturbs every entry of every tensor
//! and compares against `(loss(θ+δ) − loss(θ−δ)) / 2δ`.

use crate::numeric::ParamTensor;

/// Anything exposing its trainable tensors in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Parameterized for Vec<ParamTensor> {
    fn params(&self) -> Vec<&ParamTensor> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}

pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares analytic gradients to central differences over every entry.
///
/// Returns the maximum of `|a − n| / max(1, |a|, |n|)`.
pub fn finite_diff_check<M, F>(model: &mut M, mut loss: F, delta: f64) -> GradCheckReport
where
    M: Parameterized + ?Sized,
    F: FnMut(&M) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    for (t, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let (orig, analytic) = {
                let ps = model.params();
                (ps[t].value.as_slice()[i], ps[t].grad.as_slice()[i])
            };
            set_entry(model, t, i, orig + delta);
            let up = loss(model);
            set_entry(model, t, i, orig - delta);
            let down = loss(model);
            set_entry(model, t, i, orig);

            let numeric = (up - down) / (2.0 * delta);
            let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((model.params()[t].name.clone(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report
}

fn set_entry<M: Parameterized + ?Sized>(model: &mut M, tensor: usize, idx: usize, v: f64) {
    model.params_mut()[tensor].value.as_mut_slice()[idx] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    #[test]
    fn quadratic_is_exact() {
        let mut params = vec![ParamTensor::new("theta", Matrix::from_vec(1, 1, vec![3.0]).unwrap())];
        params[0].grad.set(0, 0, 3.0);
        let report = finite_diff_check(
            &mut params,
            |p| 0.5 * p[0].value.get(0, 0).powi(2),
            DEFAULT_DELTA,
        );
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(params[0].value.get(0, 0), 3.0);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut params = vec![ParamTensor::zeros("a", 2, 2), ParamTensor::zeros("b", 1, 3)];
        let report = finite_diff_check(&mut params, |_| 7.0, DEFAULT_DELTA);
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.entries_checked, 7);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut params = vec![ParamTensor::new("w", Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap())];
        // d/dw of sum(w^2) is 2w; give the second entry a bad value.
        params[0].grad = Matrix::from_vec(1, 2, vec![2.0, 1.0]).unwrap();
        let report = finite_diff_check(
            &mut params,
            |p| p[0].value.as_slice().iter().map(|x| x * x).sum(),
            DEFAULT_DELTA,
        );
        assert!(report.max_rel_error > 0.5);
        assert_eq!(report.worst, Some(("w".to_string(), 1)));
    }
}
