//! Convergence-bound formulas and trajectory diagnostics.
//!
//! With `rho` the Lipschitz constant of the global loss, `eta` the learning
//! rate, `delta_i` the gradient divergence of client `i`, `grad_f_star` the
//! largest global gradient norm and `epsilon` the federated-learning gap:
//!
//! * local deviation: `‖w̃_i(t) − w(T)‖ ≤ g_i(t) = (delta_i + grad_f_star)·eta·t − tau/rho`
//! * loss gap: `F(w(T)) − F(w*) ≤ epsilon² / (rho·eta·(delta + grad_f_star) − tau + rho·eta·grad_f_star·T)`
//!
//! Checks that use estimated constants are diagnostics: estimates are lower
//! bounds of the true suprema, so a reported violation is a finding, not a
//! failure.

use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::model::{LossModel, ParamVector, Partition};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConstants {
    pub rho: f64,
    /// Smoothness estimate; reported only, no bound uses it.
    pub beta: f64,
    pub eta: f64,
    pub delta_i: Vec<f64>,
    /// `Σ D_i delta_i / D`
    pub delta: f64,
    pub grad_f_star: f64,
    pub epsilon: f64,
    pub tau_max: usize,
}

impl ConvergenceConstants {
    /// Constants for the schedule solver, which only needs `rho·eta·grad_f_star`.
    pub fn for_solver(rho: f64, eta: f64, grad_f_star: f64, tau_max: usize) -> Self {
        ConvergenceConstants {
            rho,
            beta: 0.0,
            eta,
            delta_i: Vec::new(),
            delta: 0.0,
            grad_f_star,
            epsilon: 0.0,
            tau_max,
        }
    }

    /// `rho·eta·grad_f_star`, the weight of total training in the objective.
    pub fn progress_rate(&self) -> f64 {
        self.rho * self.eta * self.grad_f_star
    }

    /// Divergence of client `i`, falling back to the aggregate `delta`.
    pub fn client_delta(&self, i: usize) -> f64 {
        self.delta_i.get(i).copied().unwrap_or(self.delta)
    }

    /// Every constant multiplied by `factor` (except `eta` and `tau_max`).
    pub fn inflated(&self, factor: f64) -> Self {
        ConvergenceConstants {
            rho: self.rho * factor,
            beta: self.beta * factor,
            eta: self.eta,
            delta_i: self.delta_i.iter().map(|d| d * factor).collect(),
            delta: self.delta * factor,
            grad_f_star: self.grad_f_star * factor,
            epsilon: self.epsilon * factor,
            tau_max: self.tau_max,
        }
    }
}

/// `g_i(t) = (delta_i + grad_f_star)·eta·t − tau/rho`. Negative for small
/// `t`; in particular `g_i(0) = −tau/rho`, not zero.
pub fn g_i(t: f64, delta_i: f64, constants: &ConvergenceConstants, tau: f64) -> f64 {
    (delta_i + constants.grad_f_star) * constants.eta * t - tau / constants.rho
}

/// Outcome of evaluating the loss-gap bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapBound {
    Bound(f64),
    /// The denominator is not positive, so the bound says nothing.
    NotApplicable {
        denominator: f64,
    },
}

impl GapBound {
    pub fn value(self) -> Option<f64> {
        match self {
            GapBound::Bound(v) => Some(v),
            GapBound::NotApplicable { .. } => None,
        }
    }
}

/// Loss-gap bound after `t_total` local steps with aggregate divergence.
pub fn loss_gap_bound(t_total: f64, tau: f64, constants: &ConvergenceConstants) -> GapBound {
    loss_gap_bound_with_divergence(t_total, tau, constants.delta, constants)
}

/// Loss-gap bound using a specific divergence (e.g. one client's `delta_i`).
pub fn loss_gap_bound_with_divergence(
    t_total: f64,
    tau: f64,
    divergence: f64,
    constants: &ConvergenceConstants,
) -> GapBound {
    let rate = constants.progress_rate();
    let denominator =
        constants.rho * constants.eta * (divergence + constants.grad_f_star) - tau + rate * t_total;
    if denominator > 0.0 {
        GapBound::Bound(constants.epsilon * constants.epsilon / denominator)
    } else {
        GapBound::NotApplicable { denominator }
    }
}

/// Local steps needed before the bound reaches `eps_target`:
/// `(epsilon²/eps_target − rho·eta·(divergence + grad_f_star) + tau) / (rho·eta·grad_f_star)`.
pub fn min_trainings_for_gap(
    eps_target: f64,
    constants: &ConvergenceConstants,
    tau: f64,
    divergence: f64,
) -> Result<f64> {
    if !(eps_target > 0.0) {
        return Err(Error::invalid("target gap must be positive"));
    }
    let rate = constants.progress_rate();
    if !(rate > 0.0) {
        return Err(Error::invalid("rho·eta·grad_f_star must be positive"));
    }
    let e2 = constants.epsilon * constants.epsilon;
    Ok(
        (e2 / eps_target - constants.rho * constants.eta * (divergence + constants.grad_f_star)
            + tau)
            / rate,
    )
}

/// Sine of the angle between `u` and the ray through `v`: `0` when
/// `u = m·v` for some `m > 0`, `1` when orthogonal or opposed.
pub fn collinearity_residual(u: &ParamVector, v: &ParamVector) -> f64 {
    let uu = u.dot(u);
    if uu == 0.0 {
        return 0.0;
    }
    let vv = v.dot(v);
    if vv == 0.0 {
        return 1.0;
    }
    let m = u.dot(v) / vv;
    if m <= 0.0 {
        return 1.0;
    }
    let mut rem = u.clone();
    rem.axpy(-m, v);
    (rem.dot(&rem) / uu).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub satisfied: bool,
    pub max_residual: f64,
    pub evaluations: usize,
}

impl ConditionCheck {
    fn from_residuals(residuals: impl IntoIterator<Item = f64>, tol: f64) -> Self {
        let (max_residual, evaluations) = residuals
            .into_iter()
            .fold((0.0_f64, 0usize), |(m, n), r| (m.max(r), n + 1));
        ConditionCheck {
            satisfied: max_residual < tol,
            max_residual,
            evaluations,
        }
    }
}

/// Positive-collinearity checks for the four tightness conditions:
///
/// 1. every `w_i(1)` is a positive multiple of `w(T)`;
/// 2. every `∇F_i(w)` is a positive multiple of `∇F(w)` at each global iterate;
/// 3. every pre-aggregation `w_i(k·tau)` is a positive multiple of `w(k·tau)`;
/// 4. each global update `w(k·tau) − w((k−1)·tau)` is a positive multiple of
///    `−∇F(w((k−1)·tau))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightnessReport {
    pub conditions: [ConditionCheck; 4],
}

impl TightnessReport {
    pub fn all_satisfied(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }
}

pub fn check_tightness_conditions(
    trajectory: &Trajectory,
    partition: &Partition,
    model: &LossModel,
    tol: f64,
) -> Result<TightnessReport> {
    let history = trajectory
        .clients
        .as_ref()
        .ok_or_else(|| Error::invalid("tightness checks need recorded client history"))?;
    if trajectory.rounds.is_empty() {
        return Err(Error::invalid(
            "tightness checks need at least one aggregation",
        ));
    }
    let tau = trajectory.schedule.tau;
    let w_final = trajectory.final_params();
    let n = partition.n_clients();

    let first = (0..n).map(|i| collinearity_residual(history.local(i, 1, tau), w_final));

    let globals = trajectory.global_iterates();
    let mut grad_residuals = Vec::new();
    let mut global_grads = Vec::with_capacity(globals.len());
    for w in &globals {
        let global = partition.global_gradient(model, w)?;
        for client in &partition.clients {
            grad_residuals.push(collinearity_residual(&model.gradient(w, client)?, &global));
        }
        global_grads.push(global);
    }

    let synced = history
        .pre_aggregation
        .iter()
        .zip(&trajectory.rounds)
        .flat_map(|(locals, r)| locals.iter().map(|l| collinearity_residual(l, &r.params)));

    let descent = globals
        .windows(2)
        .zip(&global_grads)
        .map(|(pair, g)| collinearity_residual(&pair[1].sub(&pair[0]), &g.scaled(-1.0)));

    Ok(TightnessReport {
        conditions: [
            ConditionCheck::from_residuals(first, tol),
            ConditionCheck::from_residuals(grad_residuals, tol),
            ConditionCheck::from_residuals(synced.collect::<Vec<_>>(), tol),
            ConditionCheck::from_residuals(descent.collect::<Vec<_>>(), tol),
        ],
    })
}

/// Relative slack for floating-point rounding in the gradient-norm check.
const GRADIENT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeviationReport {
    /// `(i, t)` pairs with `g_i(t) > 0`.
    pub deviation_checked: usize,
    pub deviation_violations: usize,
    /// Largest `‖w̃_i(t) − w(T)‖ / g_i(t)` over checked pairs.
    pub max_deviation_ratio: f64,
    pub gradient_checked: usize,
    pub gradient_violations: usize,
    /// Largest `‖∇F_i(w)‖ / (delta_i + grad_f_star)`.
    pub max_gradient_ratio: f64,
}

/// Every parameter vector the run visited: global iterates followed by each
/// client's per-step history.
pub fn trajectory_points(trajectory: &Trajectory) -> Vec<ParamVector> {
    let mut points = trajectory.global_iterates();
    if let Some(h) = &trajectory.clients {
        for path in &h.synced {
            points.extend(path.iter().cloned());
        }
        for locals in &h.pre_aggregation {
            points.extend(locals.iter().cloned());
        }
    }
    points
}

/// Compares recorded client deviations against `g_i(t)` and client gradient
/// norms at every point from [`trajectory_points`] against
/// `delta_i + grad_f_star`.
pub fn verify_local_deviation_bound(
    trajectory: &Trajectory,
    partition: &Partition,
    model: &LossModel,
    constants: &ConvergenceConstants,
) -> Result<DeviationReport> {
    let history = trajectory
        .clients
        .as_ref()
        .ok_or_else(|| Error::invalid("deviation checks need recorded client history"))?;
    let tau = trajectory.schedule.tau as f64;
    let w_final = trajectory.final_params();
    let mut report = DeviationReport::default();

    for (i, path) in history.synced.iter().enumerate() {
        let delta_i = constants.client_delta(i);
        for (t, w) in path.iter().enumerate() {
            let g = g_i(t as f64, delta_i, constants, tau);
            if g <= 0.0 {
                continue;
            }
            report.deviation_checked += 1;
            let ratio = w.distance(w_final) / g;
            report.max_deviation_ratio = report.max_deviation_ratio.max(ratio);
            if ratio > 1.0 {
                report.deviation_violations += 1;
            }
        }
    }

    for w in trajectory_points(trajectory) {
        for (i, client) in partition.clients.iter().enumerate() {
            let limit = constants.client_delta(i) + constants.grad_f_star;
            let norm = model.gradient(&w, client)?.norm();
            report.gradient_checked += 1;
            if limit > 0.0 {
                report.max_gradient_ratio = report.max_gradient_ratio.max(norm / limit);
            }
            if norm > limit * (1.0 + GRADIENT_SLACK) {
                report.gradient_violations += 1;
            }
        }
    }
    Ok(report)
}
