//! Central finite-difference comparison against analytic gradients.

use super::tensor::Tensor;

/// Gradients smaller than this in magnitude are judged on absolute error.
pub const SMALL_GRADIENT: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct TensorReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Worst coordinate under the combined relative/absolute rule.
    pub worst_index: Option<usize>,
    /// Coordinates where either perturbed evaluation was not finite.
    pub non_finite: Vec<usize>,
    checked: Vec<(f64, f64)>,
}

impl TensorReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.non_finite.is_empty()
            && self
                .checked
                .iter()
                .all(|&(a, n)| coordinate_passes(a, n, rel_tol, abs_tol))
    }

    /// Worst relative error at or above [`SMALL_GRADIENT`] and worst
    /// absolute error below it.
    pub fn split_errors(&self) -> (f64, f64) {
        self.checked.iter().fold((0.0, 0.0), |(rel, abs), &(a, n)| {
            if a.abs().max(n.abs()) < SMALL_GRADIENT {
                (rel, f64::max(abs, (a - n).abs()))
            } else {
                (f64::max(rel, relative_error(a, n)), abs)
            }
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub tensors: Vec<TensorReport>,
    pub evaluations: usize,
}

impl FdReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.tensors.iter().all(|t| t.passes(rel_tol, abs_tol))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn split_errors(&self) -> (f64, f64) {
        self.tensors
            .iter()
            .map(TensorReport::split_errors)
            .fold((0.0, 0.0), |(r, a), (tr, ta)| (f64::max(r, tr), f64::max(a, ta)))
    }

    /// Indices of tensors that fail the tolerance rule.
    pub fn failures(&self, rel_tol: f64, abs_tol: f64) -> Vec<usize> {
        self.tensors
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.passes(rel_tol, abs_tol))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn coordinate_passes(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    if scale < SMALL_GRADIENT {
        (analytic - numeric).abs() <= abs_tol
    } else {
        relative_error(analytic, numeric) <= rel_tol
    }
}

/// Compares `analytic` against `(f(p + eps) - f(p - eps)) / 2 eps` for every
/// coordinate of every tensor in `params`.
///
/// `select` restricts the check to a subset of coordinates of a tensor
/// (`None` means all of them).
pub fn finite_difference_check<F>(
    mut f: F,
    params: &mut [Tensor],
    analytic: &[Tensor],
    epsilon: f64,
    mut select: impl FnMut(usize, usize) -> bool,
) -> FdReport
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per tensor");
    let mut report = FdReport::default();
    for t in 0..params.len() {
        let mut tr = TensorReport::default();
        let mut worst = -1.0;
        for i in 0..params[t].len() {
            if !select(t, i) {
                continue;
            }
            let orig = params[t].data()[i];
            params[t].data_mut()[i] = orig + epsilon;
            let plus = f(params);
            params[t].data_mut()[i] = orig - epsilon;
            let minus = f(params);
            params[t].data_mut()[i] = orig;
            report.evaluations += 2;
            if !plus.is_finite() || !minus.is_finite() {
                tr.non_finite.push(i);
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[t].data()[i];
            let rel = relative_error(a, numeric);
            let abs = (a - numeric).abs();
            tr.max_rel_error = tr.max_rel_error.max(rel);
            tr.max_abs_error = tr.max_abs_error.max(abs);
            let badness = if a.abs().max(numeric.abs()) < SMALL_GRADIENT {
                abs * 1e3
            } else {
                rel
            };
            if badness > worst {
                worst = badness;
                tr.worst_index = Some(i);
            }
            tr.checked.push((a, numeric));
        }
        report.tensors.push(tr);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_matches() {
        let mut p = vec![Tensor::scalar(3.0)];
        let analytic = vec![Tensor::scalar(6.0)];
        let r = finite_difference_check(|p| p[0].data()[0].powi(2), &mut p, &analytic, 1e-4, |_, _| true);
        assert!(r.tensors[0].max_abs_error < 1e-7);
        let (rel, abs) = r.split_errors();
        assert!(rel < 1e-8 && abs == 0.0);
        assert!(r.passes(1e-3, 1e-6));
        assert_eq!(p[0].data()[0], 3.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let analytic = vec![Tensor::vector(vec![0.0, 0.0])];
        let r = finite_difference_check(|_| 4.2, &mut p, &analytic, 1e-4, |_, _| true);
        assert_eq!(r.tensors[0].max_abs_error, 0.0);
        assert!(r.passes(1e-3, 1e-6));
    }

    #[test]
    fn wrong_gradient_fails_and_non_finite_reported() {
        let mut p = vec![Tensor::scalar(1.0)];
        let analytic = vec![Tensor::scalar(5.0)];
        let r = finite_difference_check(|p| p[0].data()[0].powi(2), &mut p, &analytic, 1e-4, |_, _| true);
        assert!(!r.passes(1e-3, 1e-6));

        let mut p = vec![Tensor::scalar(0.0)];
        let analytic = vec![Tensor::scalar(0.0)];
        let r = finite_difference_check(|p| p[0].data()[0].ln(), &mut p, &analytic, 1e-4, |_, _| true);
        assert_eq!(r.tensors[0].non_finite, vec![0]);
        assert!(!r.passes(1e-3, 1e-6));
    }
}
