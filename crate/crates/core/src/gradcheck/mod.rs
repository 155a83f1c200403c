//! Central finite-difference verification of analytic gradients.

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

pub mod suite;

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Acceptance threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

/// A differentiable computation ending in a scalar loss, evaluated in
/// 64-bit precision. Variables cover both parameters and inputs.
pub trait Objective {
    /// Evaluates the loss at the current variable values. Must be a
    /// deterministic function of the variables.
    fn loss(&mut self) -> Result<Tensor<f64>>;

    /// Analytic gradients aligned with `variables_mut()`.
    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>>;

    fn variables_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)>;
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per variable, in variable order.
    pub per_variable: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

fn scalar_loss(obj: &mut dyn Objective) -> Result<f64> {
    let l = obj.loss()?;
    ensure!(
        l.is_scalar(),
        Error::Config(format!(
            "gradient check needs a scalar loss, got shape {:?}",
            l.shape()
        ))
    );
    Ok(l.data()[0])
}

/// Maximum over every variable element of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(obj: &mut dyn Objective, epsilon: f64) -> Result<GradCheckReport> {
    scalar_loss(obj)?;
    let analytic = obj.gradients()?;
    let n_vars = obj.variables_mut().len();
    ensure!(
        analytic.len() == n_vars,
        Error::Config(format!(
            "{} gradients for {n_vars} variables",
            analytic.len()
        ))
    );
    let mut per_variable = Vec::with_capacity(n_vars);
    for (v, grad) in analytic.iter().enumerate() {
        let (name, len) = {
            let mut vars = obj.variables_mut();
            let (name, t) = &mut vars[v];
            ensure!(
                t.shape() == grad.shape(),
                Error::shape(
                    "finite_diff_check",
                    format!("gradient for {name} is {:?}, variable is {:?}", grad.shape(), t.shape())
                )
            );
            (name.clone(), t.len())
        };
        let mut worst = 0.0f64;
        for i in 0..len {
            let orig = obj.variables_mut()[v].1.data()[i];
            obj.variables_mut()[v].1.data_mut()[i] = orig + epsilon;
            let plus = scalar_loss(obj)?;
            obj.variables_mut()[v].1.data_mut()[i] = orig - epsilon;
            let minus = scalar_loss(obj)?;
            obj.variables_mut()[v].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        per_variable.push((name, worst));
    }
    let max_relative_error = per_variable.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_variable,
    })
}

/// Objective built from closures over a list of named variables.
pub struct FnObjective<L, G>
where
    L: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    G: FnMut(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    pub vars: Vec<(String, Tensor<f64>)>,
    pub loss_fn: L,
    pub grad_fn: G,
}

impl<L, G> FnObjective<L, G>
where
    L: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    G: FnMut(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    pub fn new(vars: Vec<(&str, Tensor<f64>)>, loss_fn: L, grad_fn: G) -> Self {
        FnObjective {
            vars: vars.into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
            loss_fn,
            grad_fn,
        }
    }

    fn values(&self) -> Vec<Tensor<f64>> {
        self.vars.iter().map(|(_, t)| t.clone()).collect()
    }
}

impl<L, G> Objective for FnObjective<L, G>
where
    L: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    G: FnMut(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    fn loss(&mut self) -> Result<Tensor<f64>> {
        let v = self.values();
        (self.loss_fn)(&v)
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        let v = self.values();
        (self.grad_fn)(&v)
    }

    fn variables_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        self.vars.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_graph_has_zero_error() {
        let mut obj = FnObjective::new(
            vec![("x", Tensor::vector(vec![1.0, 2.0]))],
            |_| Ok(Tensor::scalar(3.0)),
            |_| Ok(vec![Tensor::zeros(&[2])]),
        );
        let rep = finite_diff_check(&mut obj, DEFAULT_EPSILON).unwrap();
        assert_eq!(rep.max_relative_error, 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut obj = FnObjective::new(
            vec![("x", Tensor::vector(vec![1.0, 2.0]))],
            |v| Ok(v[0].clone()),
            |_| Ok(vec![Tensor::zeros(&[2])]),
        );
        assert!(finite_diff_check(&mut obj, DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut obj = FnObjective::new(
            vec![("x", Tensor::vector(vec![1.5]))],
            |v| Ok(Tensor::scalar(v[0].data()[0].powi(2))),
            |v| Ok(vec![Tensor::vector(vec![v[0].data()[0]])]),
        );
        let rep = finite_diff_check(&mut obj, DEFAULT_EPSILON).unwrap();
        assert!((rep.max_relative_error - 0.5).abs() < 1e-6);
    }
}
