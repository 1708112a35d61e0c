//! Central finite-difference check of analytic gradients.

use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Scalar;

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordinateCheck>,
    pub warnings: Vec<String>,
}

impl GradCheckReport {
    /// Coordinates where at least one gradient exceeded the zero floor.
    pub fn informative(&self) -> usize {
        self.checks.iter().filter(|c| c.analytic.abs().max(c.numeric.abs()) >= ZERO_GRAD).count()
    }
}

/// Gradients whose magnitudes are both below this are treated as agreeing.
/// Central differences through the full model in f64 carry rounding noise
/// of roughly `1e-10 / h`, so smaller values carry no signal.
pub const ZERO_GRAD: f64 = 1e-9;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_GRAD {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic gradients with central differences on `n_samples`
/// coordinates.
///
/// `f(params, with_grad)` must evaluate the same deterministic loss every
/// call; when `with_grad` is true it must also leave d(loss)/d(param) in the
/// store's gradient slots (starting from zeroed grads). Coordinates are drawn
/// by first picking a parameter tensor uniformly, then an entry uniformly, so
/// small tensors (biases) are covered as well as large ones.
pub fn finite_diff_check<T, F>(
    mut f: F,
    params: &mut ParamStore<T>,
    n_samples: usize,
    h: f64,
    rng: &mut Rng,
) -> GradCheckReport
where
    T: Scalar,
    F: FnMut(&mut ParamStore<T>, bool) -> f64,
{
    let mut report = GradCheckReport::default();
    if n_samples == 0 {
        let msg = "finite_diff_check called with n_samples = 0; nothing checked".to_string();
        log::warn!("{msg}");
        report.warnings.push(msg);
        return report;
    }
    if params.is_empty() {
        report.warnings.push("parameter store is empty".into());
        return report;
    }
    params.zero_grad();
    f(params, true);
    let ids: Vec<ParamId> = params.iter().map(|(id, _)| id).collect();
    for _ in 0..n_samples {
        let id = ids[rng.below(ids.len())];
        let n = params.value(id).len();
        let index = rng.below(n);
        let analytic = params.grad(id).data()[index].as_f64();
        let original = params.value(id).data()[index];
        params.value_mut(id).data_mut()[index] = T::of(original.as_f64() + h);
        let up = f(params, false);
        params.value_mut(id).data_mut()[index] = T::of(original.as_f64() - h);
        let down = f(params, false);
        params.value_mut(id).data_mut()[index] = original;
        let numeric = (up - down) / (2.0 * h);
        let rel_error = relative_error(analytic, numeric);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.checks.push(CoordinateCheck {
            param: params.entry(id).name.clone(),
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::tensor::Matrix;

    /// loss = sum((W·x) ⊙ (W·x)) + sum(b)
    fn quadratic(params: &mut ParamStore<f64>, with_grad: bool) -> f64 {
        let w = params.id("w").unwrap();
        let b = params.id("b").unwrap();
        let mut g = Graph::new();
        let wv = g.param(params, w);
        let bv = g.param(params, b);
        let x = g.constant(Matrix::from_rows(&[[0.3], [-1.1], [2.0]]));
        let y = g.matmul(wv, x).unwrap();
        let sq = g.mul(y, y).unwrap();
        let s1 = g.sum(sq);
        let s2 = g.sum(bv);
        let l = g.add(s1, s2).unwrap();
        let value = g.value(l).get(0, 0);
        if with_grad {
            g.backward(l, params).unwrap();
        }
        value
    }

    fn quadratic_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut rng = Rng::new(3);
        s.add_weight("w", 2, 3, &mut rng).unwrap();
        s.add("b", Matrix::filled(1, 2, 0.1)).unwrap();
        s
    }

    #[test]
    fn quadratic_is_exact() {
        let mut s = quadratic_store();
        let r = finite_diff_check(quadratic, &mut s, 50, 1e-4, &mut Rng::new(9));
        assert_eq!(r.checks.len(), 50);
        assert!(r.max_rel_error <= 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn zero_samples_is_vacuous_with_warning() {
        let mut s = quadratic_store();
        let r = finite_diff_check(quadratic, &mut s, 0, 1e-4, &mut Rng::new(9));
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut s = quadratic_store();
        let wrong = |p: &mut ParamStore<f64>, with_grad: bool| {
            let v = quadratic(p, with_grad);
            if with_grad {
                let b = p.id("b").unwrap();
                p.entry_mut(b).grad = Matrix::filled(1, 2, 2.0);
            }
            v
        };
        let r = finite_diff_check(wrong, &mut s, 40, 1e-4, &mut Rng::new(1));
        assert!(r.max_rel_error > 0.4);
    }
}
