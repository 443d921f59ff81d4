//! Central finite-difference gradient checks.

use rand::seq::index::sample;

use super::ParameterSet;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Relative step: `h = step * max(1, |w|)`.
    pub step: f64,
    /// Coordinates checked per tensor; smaller tensors are checked fully.
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_tensor: 200,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares analytic gradients with central differences.
///
/// `loss_fn` must return the loss and leave the analytic gradient in the
/// parameter accumulators (it is responsible for zeroing them first). It is
/// called once for the analytic pass and twice per checked coordinate.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(params: &mut ParameterSet, mut loss_fn: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&mut ParameterSet) -> f64,
{
    params.zero_grads();
    loss_fn(params);
    let analytic: Vec<Vec<f64>> = params.ids().map(|id| params.grad(id).to_vec()).collect();
    let mut rng = seeded(opts.seed);
    let mut report = GradCheckReport {
        params: Vec::new(),
        max_rel_error: 0.0,
        coords_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        let coords: Vec<usize> = if n <= opts.samples_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples_per_tensor).into_vec()
        };
        let mut check = ParamCheck {
            name: params.name(id).to_owned(),
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for i in coords {
            let orig = params.value(id)[i];
            let h = opts.step * orig.abs().max(1.0);
            params.value_mut(id)[i] = orig + h;
            let lp = loss_fn(params);
            params.value_mut(id)[i] = orig - h;
            let lm = loss_fn(params);
            params.value_mut(id)[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[id.index()][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                check.worst_index = i;
            }
        }
        report.coords_checked += check.checked;
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    // Leave the analytic gradient in place.
    for id in params.ids().collect::<Vec<_>>() {
        params.grad_mut(id).copy_from_slice(&analytic[id.index()]);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn params() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.add("a", Tensor::vector(vec![0.5, -1.0, 2.0])).unwrap();
        p.add("b", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        p
    }

    #[test]
    fn sum_loss_has_unit_gradients() {
        let mut p = params();
        let report = grad_check(
            &mut p,
            |p| {
                p.zero_grads();
                let mut total = 0.0;
                for id in p.ids().collect::<Vec<_>>() {
                    total += p.value(id).iter().sum::<f64>();
                    p.grad_mut(id).iter_mut().for_each(|g| *g = 1.0);
                }
                total
            },
            GradCheckOptions::default(),
        );
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 7);
        let id = p.id("b").unwrap();
        assert_eq!(p.grad(id), &[1.0; 4]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut p = params();
        let report = grad_check(&mut p, |p| {
            p.zero_grads();
            3.0
        }, GradCheckOptions::default());
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut p = params();
        let report = grad_check(
            &mut p,
            |p| {
                p.zero_grads();
                let id = p.id("a").unwrap();
                let w = p.value(id)[0];
                p.grad_mut(id)[0] = 3.0 * w; // true derivative of w^2 is 2w
                w * w
            },
            GradCheckOptions::default(),
        );
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst().unwrap().name, "a");
    }
}
