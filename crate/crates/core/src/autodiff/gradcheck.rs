//! Central-difference gradient oracle.
//!
//! Used both by the test suite and by the `gradcheck` CLI command to verify
//! the reverse-mode sweep against an implementation-independent estimate.

use super::params::{Gradients, Params};
use super::tensor::Tensor;

/// Central-difference gradient of `f` with respect to every coordinate of
/// every parameter: `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)`.
///
/// `f` must be deterministic. Parameters are restored exactly afterwards.
pub fn finite_difference_gradient<F>(f: &mut F, params: &mut Params, eps: f64) -> Vec<Tensor>
where
    F: FnMut(&Params) -> f64,
{
    assert!(eps > 0.0, "finite differences need eps > 0");
    let mut out = Vec::with_capacity(params.len());
    for id in params.ids().collect::<Vec<_>>() {
        let shape = params.get(id).shape();
        let mut grad = Tensor::zeros(shape[0], shape[1]);
        for i in 0..grad.len() {
            let original = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = original + eps;
            let plus = f(params);
            params.get_mut(id).data_mut()[i] = original - eps;
            let minus = f(params);
            params.get_mut(id).data_mut()[i] = original;
            grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out.push(grad);
    }
    out
}

/// Worst relative error between an analytic and a numeric gradient for one
/// tensor, with an absolute floor of 1 in the denominator.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Per-parameter comparison of a backward pass against finite differences.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// `(parameter name, max relative error)` in registration order.
    pub per_param: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.per_param.iter().all(|(_, e)| *e <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.per_param
            .iter()
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }
}

/// Run `f` once through the analytic path (`grads`) and compare against its
/// finite-difference estimate at tolerance `tol`.
pub fn compare_gradients<F>(
    f: &mut F,
    params: &mut Params,
    grads: &Gradients,
    eps: f64,
    tol: f64,
) -> GradcheckReport
where
    F: FnMut(&Params) -> f64,
{
    let numeric = finite_difference_gradient(f, params, eps);
    let per_param = params
        .ids()
        .map(|id| {
            let analytic = grads.dense(id, params);
            let err = max_relative_error(&analytic, &numeric[id.index()]);
            (params.name(id).to_string(), err)
        })
        .collect();
    GradcheckReport {
        per_param,
        tolerance: tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamId, Tape};

    #[test]
    fn quadratic_is_exact() {
        let mut params = Params::new();
        params.add("x", Tensor::scalar(1.7));
        let mut f = |p: &Params| {
            let x = p.get(ParamId(0)).scalar_value();
            3.0 * x * x
        };
        let grads = finite_difference_gradient(&mut f, &mut params, 1e-5);
        // Central differences are exact (to roundoff) on quadratics.
        assert!((grads[0].scalar_value() - 3.0 * 2.0 * 1.7).abs() < 1e-8);
        assert_eq!(params.get(ParamId(0)).scalar_value(), 1.7);
    }

    #[test]
    fn linear_is_exact() {
        let mut params = Params::new();
        params.add("x", Tensor::scalar(-0.3));
        let mut f = |p: &Params| 5.0 * p.get(ParamId(0)).scalar_value() - 2.0;
        let grads = finite_difference_gradient(&mut f, &mut params, 1e-4);
        assert!((grads[0].scalar_value() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn backward_matches_on_composition() {
        // tanh(w x + b) summed; checked against central differences.
        let mut params = Params::new();
        let w = params.add("w", Tensor::from_vec(2, 2, vec![0.3, -0.8, 0.5, 0.2]));
        let b = params.add("b", Tensor::row_vector(&[0.1, -0.4]));
        let x = Tensor::from_vec(1, 2, vec![0.7, -1.1]);

        let run = |p: &Params| -> (f64, Gradients) {
            let mut tape = Tape::new(p);
            let wv = tape.param(w);
            let bv = tape.param(b);
            let xv = tape.constant(x.clone());
            let z = tape.matmul(xv, wv);
            let z = tape.add(z, bv);
            let y = tape.tanh(z);
            let ones = tape.constant(Tensor::row_vector(&[1.0, 1.0]));
            let loss = tape.dot(y, ones);
            let grads = tape.backward(loss);
            (tape.scalar(loss), grads)
        };
        let (_, grads) = run(&params);
        let mut f = |p: &Params| run(p).0;
        let report = compare_gradients(&mut f, &mut params, &grads, 1e-5, 1e-8);
        assert!(report.passed(), "worst error {}", report.worst());
    }
}
