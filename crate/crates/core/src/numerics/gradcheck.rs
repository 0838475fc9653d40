use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor in the relative error.
const REL_FLOOR: f64 = 1e-8;

fn eval_scalar<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv).map_err(|e| Error::Evaluation(e.to_string()))?;
    let v = g.value(y);
    if v.len() != 1 {
        return Err(Error::Evaluation(format!("function must be scalar, got shape {:?}", v.shape())));
    }
    let s = v.data()[0];
    if !s.is_finite() {
        return Err(Error::Evaluation("non-finite function value".into()));
    }
    Ok(s)
}

/// Autodiff gradient of the scalar function `f` at `x`.
pub fn autodiff_grad<F>(f: &F, x: &Tensor<f64>) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv).map_err(|e| Error::Evaluation(e.to_string()))?;
    if g.value(y).len() != 1 {
        return Err(Error::Evaluation(format!("function must be scalar, got shape {:?}", g.shape(y))));
    }
    let grads = g.backward(y)?;
    Ok(grads
        .get(xv)
        .map(|t| t.to_f64_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]))
}

/// Max over `coords` of |autodiff − central difference| / (|central difference| + 1e-8).
pub fn grad_check_coords<F>(f: F, x: &Tensor<f64>, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!("grad_check eps must lie in [1e-6, 1e-3], got {}", eps)));
    }
    eval_scalar(&f, x)?;
    let analytic = autodiff_grad(&f, x)?;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[i] += eps;
        minus.data_mut()[i] -= eps;
        let fd = (eval_scalar(&f, &plus)? - eval_scalar(&f, &minus)?) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / (fd.abs() + REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gradient check over every coordinate of `x`.
///
/// Both routes run on an f64 graph: the op implementations are shared with
/// the f32 graph, so this checks the backward rules without f32 rounding
/// swamping the finite differences.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, eps, &coords)
}
