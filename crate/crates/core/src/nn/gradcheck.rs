//! Finite-difference gradient checking that only needs forward passes.

use rand::seq::index::sample;
use rand::Rng;

use super::Tensor;
use crate::error::Result;

/// A model plus a fixed scalar objective.
pub trait GradCheckable {
    /// Forward pass returning the objective.
    fn objective(&mut self) -> Result<f64>;
    /// Analytic gradients, one tensor per parameter in [`Self::param_values_mut`] order.
    fn analytic_grads(&mut self) -> Result<Vec<Tensor>>;
    fn param_values_mut(&mut self) -> Vec<&mut Tensor>;
    /// Piecewise-linear region identifier for the most recent forward pass.
    fn kink_signature(&self) -> Vec<bool>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Central differences on `per_param` random coordinates of each parameter
/// (all coordinates when `None`). Coordinates where `±h` crosses a
/// LeakyReLU kink are skipped. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn check<M: GradCheckable>(
    model: &mut M,
    per_param: Option<usize>,
    h: f64,
    floor: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    let analytic = model.analytic_grads()?;
    let mut report = GradCheckReport::default();
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = model.param_values_mut()[pi].data()[j];
            model.param_values_mut()[pi].data_mut()[j] = orig + h;
            let fp = model.objective()?;
            let sp = model.kink_signature();
            model.param_values_mut()[pi].data_mut()[j] = orig - h;
            let fm = model.objective()?;
            let sm = model.kink_signature();
            model.param_values_mut()[pi].data_mut()[j] = orig;
            if sp != sm {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((pi, j, a, numeric));
            }
        }
    }
    Ok(report)
}
