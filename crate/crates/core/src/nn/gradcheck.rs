//! Central finite-difference check of analytic gradients, run at `f64`.

use rand::seq::index;

use super::params::ModelParams;
use crate::error::Result;
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest analytic gradient magnitude among the checked entries.
    pub max_grad: f64,
}

/// Relative error with a floor on the denominator, so entries whose true gradient is zero are
/// judged by their absolute error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `loss`'s analytic gradient with `(L(θ+h) − L(θ−h)) / 2h` on up to `per_tensor`
/// seeded entries of every tensor (all entries when the tensor is smaller).
///
/// `loss(params, grad)` must return the loss and, when `grad` is given, add its gradient.
pub fn check_gradients<F>(
    params: &ModelParams<f64>,
    per_tensor: usize,
    step: f64,
    seed: u64,
    loss: F,
) -> Result<Vec<TensorCheck>>
where
    F: Fn(&ModelParams<f64>, Option<&mut ModelParams<f64>>) -> Result<f64>,
{
    let mut grad = params.zeros_like();
    loss(params, Some(&mut grad))?;
    let mut probe = params.clone();
    let mut rng = seeded(seed);
    let names: Vec<(String, usize)> = params.named().iter().map(|(n, m)| (n.clone(), m.data().len())).collect();
    let mut out = Vec::with_capacity(names.len());
    for (t, (name, len)) in names.into_iter().enumerate() {
        let entries: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            let mut v = index::sample(&mut rng, len, per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let analytic = grad.named()[t].1.data().to_vec();
        let mut check = TensorCheck {
            name,
            checked: entries.len(),
            max_rel_err: 0.0,
            max_grad: 0.0,
        };
        for i in entries {
            let orig = params.named()[t].1.data()[i];
            probe.named_mut()[t].1.data_mut()[i] = orig + step;
            let up = loss(&probe, None)?;
            probe.named_mut()[t].1.data_mut()[i] = orig - step;
            let down = loss(&probe, None)?;
            probe.named_mut()[t].1.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            check.max_rel_err = check.max_rel_err.max(rel_err(analytic[i], numeric));
            check.max_grad = check.max_grad.max(analytic[i].abs());
        }
        out.push(check);
    }
    Ok(out)
}
