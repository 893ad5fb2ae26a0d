use super::{LossModel, ParamVector, Partition};
use crate::bounds::ConvergenceConstants;
use crate::error::{Error, Result};

/// Values that cannot be measured from probes and are passed through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateInputs {
    pub eta: f64,
    /// User-supplied or separately measured federated-learning gap.
    pub epsilon: f64,
    pub tau_max: usize,
}

/// Empirical convergence constants over a set of probe points.
///
/// * `rho`  = max over probe pairs of `|F(w) − F(w')| / ‖w − w'‖`
/// * `beta` = max over probe pairs of `‖∇F(w) − ∇F(w')‖ / ‖w − w'‖`
/// * `delta_i` = max over probes of `‖∇F_i(w) − ∇F(w)‖`, `delta = Σ D_i delta_i / D`
/// * `grad_f_star` = max over probes of `‖∇F(w)‖`
///
/// Coincident probe pairs are skipped. These are lower estimates of the true
/// suprema.
pub fn estimate_constants(
    model: &LossModel,
    partition: &Partition,
    probes: &[ParamVector],
    inputs: EstimateInputs,
) -> Result<ConvergenceConstants> {
    if probes.is_empty() {
        return Err(Error::invalid("probe trajectory is empty"));
    }
    let losses = probes
        .iter()
        .map(|w| partition.global_loss(model, w))
        .collect::<Result<Vec<_>>>()?;
    let grads = probes
        .iter()
        .map(|w| partition.global_gradient(model, w))
        .collect::<Result<Vec<_>>>()?;

    let mut rho: f64 = 0.0;
    let mut beta: f64 = 0.0;
    let mut pairs = 0usize;
    for i in 0..probes.len() {
        for j in i + 1..probes.len() {
            let dist = probes[i].distance(&probes[j]);
            if dist == 0.0 {
                continue;
            }
            pairs += 1;
            rho = rho.max((losses[i] - losses[j]).abs() / dist);
            beta = beta.max(grads[i].distance(&grads[j]) / dist);
        }
    }
    if pairs == 0 {
        return Err(Error::invalid(
            "probe points contain no distinct pair; cannot estimate rho/beta",
        ));
    }

    let mut delta_i = vec![0.0_f64; partition.n_clients()];
    for (w, global) in probes.iter().zip(&grads) {
        for (d, client) in delta_i.iter_mut().zip(&partition.clients) {
            let local = model.gradient(w, client)?;
            *d = d.max(local.distance(global));
        }
    }
    let total = partition.total_size() as f64;
    let delta = partition
        .clients
        .iter()
        .zip(&delta_i)
        .map(|(c, d)| c.len() as f64 * d)
        .sum::<f64>()
        / total;
    let grad_f_star = grads.iter().map(ParamVector::norm).fold(0.0, f64::max);

    Ok(ConvergenceConstants {
        rho,
        beta,
        eta: inputs.eta,
        delta_i,
        delta,
        grad_f_star,
        epsilon: inputs.epsilon,
        tau_max: inputs.tau_max,
    })
}
