//! Choosing `(tau, K)` under the delay and energy budgets.
//!
//! The solver minimises the surrogate `tau − s·K·tau` with `s = rho·eta·grad_f_star`
//! subject to
//!
//! * delay:  `K·(c·tau² + t_cm) ≤ t_tot`
//! * energy: `K·(E_tr·tau + E_cm) ≤ E_tot`
//! * `tau ≥ 1`, `K ≥ 1`.
//!
//! For `s > 0` the objective falls as `K` grows, so at the optimum `K` sits on
//! whichever budget curve is lower. Along each curve the objective is a
//! one-dimensional function of `tau` with a single stationary point, and the
//! curves cross where both budgets bind. Evaluating the two stationary points,
//! the crossings and the ends of the feasible `tau` interval therefore covers
//! every possible minimiser.

use std::fmt;
use std::ops::RangeInclusive;

use crate::bounds::ConvergenceConstants;
use crate::engine::Schedule;
use crate::error::{Error, Result};
use crate::resource::{BudgetUsage, CostModel, ResourceParams};

/// Relative slack allowed when a real-valued candidate sits on a budget.
const BINDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KktCase {
    /// Only the energy budget binds.
    EnergyBinding,
    /// Both budgets bind; one of the two roots of the crossing quadratic.
    BothBinding,
    /// Only the delay budget binds.
    DelayBinding,
    /// `tau = 1` with the largest feasible `K`.
    MinTau,
    /// `K = 1` with the largest feasible `tau`.
    SingleRound,
}

impl KktCase {
    pub fn name(self) -> &'static str {
        match self {
            KktCase::EnergyBinding => "energy-binding",
            KktCase::BothBinding => "both-binding",
            KktCase::DelayBinding => "delay-binding",
            KktCase::MinTau => "min-tau",
            KktCase::SingleRound => "single-round",
        }
    }
}

impl fmt::Display for KktCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub case: KktCase,
    pub tau: f64,
    pub k: f64,
    /// Discriminant of the both-binding quadratic; shared by all candidates
    /// of one solve.
    pub i1: f64,
    pub feasible: bool,
    pub objective: f64,
    /// `delay/t_tot − 1`; zero when the delay budget binds.
    pub delay_residual: f64,
    /// `energy/E_tot − 1`.
    pub energy_residual: f64,
}

impl Candidate {
    fn evaluate(case: KktCase, tau: f64, k: f64, i1: f64, costs: &CostModel, rate: f64) -> Self {
        let usage = costs.usage(tau, k);
        let delay_residual = usage.delay_s / costs.t_tot - 1.0;
        let energy_residual = usage.energy_j / costs.e_tot - 1.0;
        let feasible = tau.is_finite()
            && k.is_finite()
            && tau >= 1.0
            && k >= 1.0
            && delay_residual <= BINDING_SLACK
            && energy_residual <= BINDING_SLACK;
        Candidate {
            case,
            tau,
            k,
            i1,
            feasible,
            objective: surrogate_objective(tau, k, rate),
            delay_residual,
            energy_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffSolution {
    pub candidates: Vec<Candidate>,
    /// Index into `candidates` of the minimiser.
    pub selected: usize,
    pub costs: CostModel,
    /// `rho·eta·grad_f_star`
    pub progress_rate: f64,
}

impl TradeoffSolution {
    pub fn selected(&self) -> &Candidate {
        &self.candidates[self.selected]
    }

    /// The discriminant of the both-binding quadratic.
    pub fn i1(&self) -> f64 {
        self.selected().i1
    }
}

/// Carried by [`Error::InfeasibleBudget`].
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleDiagnostics {
    pub candidates: Vec<Candidate>,
    /// Cost of the cheapest schedule, one round of one step.
    pub minimum_usage: BudgetUsage,
    pub t_tot: f64,
    pub e_tot: f64,
}

impl fmt::Display for InfeasibleDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let u = &self.minimum_usage;
        write!(
            f,
            "tau=1,K=1 needs {:.6} s of {} s and {:.6} J of {} J",
            u.delay_s, self.t_tot, u.energy_j, self.e_tot
        )?;
        for c in &self.candidates {
            write!(
                f,
                "; {} tau={:.6} K={:.6} (delay {:+.3e}, energy {:+.3e})",
                c.case, c.tau, c.k, c.delay_residual, c.energy_residual
            )?;
        }
        Ok(())
    }
}

fn infeasible(costs: &CostModel, candidates: Vec<Candidate>) -> Error {
    Error::InfeasibleBudget(Box::new(InfeasibleDiagnostics {
        candidates,
        minimum_usage: costs.usage(1.0, 1.0),
        t_tot: costs.t_tot,
        e_tot: costs.e_tot,
    }))
}

/// `tau − rate·K·tau`, with `rate = rho·eta·grad_f_star`.
pub fn surrogate_objective(tau: f64, k: f64, rate: f64) -> f64 {
    tau - rate * k * tau
}

/// With neither budget active the first-order conditions read `1 − s·K = 0`
/// and `−s·tau = 0`, so the only stationary point has `tau = 0` and is never
/// a usable schedule. Kept for the record and its test.
pub fn unconstrained_stationary_point(rate: f64) -> (f64, f64) {
    (0.0, 1.0 / rate)
}

/// Both roots of `a·x² + b·x + c = 0`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if !(disc >= 0.0) || a == 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return Some((0.0, 0.0));
    }
    Some((q / a, c / q))
}

/// Solves from resource parameters and convergence constants.
pub fn solve_closed_form(
    resources: &ResourceParams,
    constants: &ConvergenceConstants,
) -> Result<TradeoffSolution> {
    solve_with_costs(&resources.cost_model()?, constants.progress_rate())
}

/// Solves from already-resolved budget constants.
pub fn solve_with_costs(costs: &CostModel, rate: f64) -> Result<TradeoffSolution> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::invalid(
            "rho·eta·grad_f_star must be finite and non-negative",
        ));
    }
    let CostModel {
        delay_coefficient: c,
        t_cm,
        e_tr,
        e_cm,
        t_tot,
        e_tot,
        ..
    } = *costs;

    let i1 = (e_tr * t_tot).powi(2) - 4.0 * c * e_tot * (t_cm * e_tot - e_cm * t_tot);
    let mut candidates = Vec::with_capacity(6);
    let mut push = |case, tau: f64, k: f64| {
        candidates.push(Candidate::evaluate(case, tau, k, i1, costs, rate));
    };

    if rate > 0.0 {
        let tau = ((rate * e_cm * e_tot).sqrt() - e_cm) / e_tr;
        let k = (e_tot / (rate * e_cm)).sqrt();
        push(KktCase::EnergyBinding, tau, k);
    }

    if let Some((r1, r2)) = quadratic_roots(c * e_tot, -e_tr * t_tot, t_cm * e_tot - e_cm * t_tot) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        for tau in [lo, hi] {
            if tau > 0.0 {
                push(KktCase::BothBinding, tau, e_tot / (e_cm + e_tr * tau));
            }
        }
    }

    // On the delay curve K = t_tot/(u + t_cm), u = c·tau², stationarity gives
    // u² + (2·t_cm + S)·u + t_cm² − S·t_cm = 0 with S = s·t_tot, which has a
    // positive root exactly when S > t_cm.
    let big_s = rate * t_tot;
    if big_s > t_cm {
        let u = 0.5 * (-(2.0 * t_cm + big_s) + (big_s * big_s + 8.0 * big_s * t_cm).sqrt());
        if u > 0.0 {
            push(KktCase::DelayBinding, (u / c).sqrt(), t_tot / (u + t_cm));
        }
    }

    push(KktCase::MinTau, 1.0, costs.max_k(1.0));
    let tau_hi = costs.max_tau_single_round();
    if tau_hi >= 1.0 {
        push(KktCase::SingleRound, tau_hi, 1.0);
    }

    let selected = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.feasible)
        .min_by(|(_, a), (_, b)| {
            a.objective
                .total_cmp(&b.objective)
                .then(a.tau.total_cmp(&b.tau))
        })
        .map(|(i, _)| i);

    match selected {
        Some(selected) => Ok(TradeoffSolution {
            candidates,
            selected,
            costs: *costs,
            progress_rate: rate,
        }),
        None => Err(infeasible(costs, candidates)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub tau: usize,
    pub k: usize,
    pub objective: f64,
}

/// Exhaustive search over integer `(tau, K)` in the given ranges. Ties go
/// to the smaller `tau`, then the smaller `K`.
pub fn grid_oracle(
    resources: &ResourceParams,
    constants: &ConvergenceConstants,
    tau_range: RangeInclusive<usize>,
    k_range: RangeInclusive<usize>,
) -> Result<GridOptimum> {
    grid_oracle_costs(
        &resources.cost_model()?,
        constants.progress_rate(),
        tau_range,
        k_range,
    )
}

pub fn grid_oracle_costs(
    costs: &CostModel,
    rate: f64,
    tau_range: RangeInclusive<usize>,
    k_range: RangeInclusive<usize>,
) -> Result<GridOptimum> {
    if tau_range.is_empty() || k_range.is_empty() {
        return Err(Error::invalid("grid ranges must be nonempty"));
    }
    let mut best: Option<GridOptimum> = None;
    for tau in tau_range {
        for k in k_range.clone() {
            if !costs.usage(tau as f64, k as f64).feasible() {
                continue;
            }
            let objective = surrogate_objective(tau as f64, k as f64, rate);
            // strict comparison keeps the earlier (smaller) pair on ties
            if best.is_none_or(|b| objective < b.objective) {
                best = Some(GridOptimum { tau, k, objective });
            }
        }
    }
    best.ok_or_else(|| infeasible(costs, Vec::new()))
}

/// Integer optimum found by pairing every `tau` in range with its largest
/// feasible `K`. For `rate ≥ 0` this agrees with [`grid_oracle_costs`] over
/// an unbounded `K` range, at a fraction of the cost.
pub fn best_integer_schedule(
    costs: &CostModel,
    rate: f64,
    tau_range: RangeInclusive<usize>,
) -> Option<GridOptimum> {
    let mut best: Option<GridOptimum> = None;
    for tau in tau_range {
        let Some(k) = costs.max_integer_k(tau) else {
            continue;
        };
        let objective = surrogate_objective(tau as f64, k as f64, rate);
        if best.is_none_or(|b| objective < b.objective) {
            best = Some(GridOptimum { tau, k, objective });
        }
    }
    best
}

/// Turns the real-valued solution into an integer schedule.
///
/// Both integer neighbours of the selected `tau` are clamped to
/// `[1, tau_max]` and paired with the largest `K` the budgets allow there;
/// the better surrogate value wins (smaller `tau` on ties). Pairing each
/// `tau` with its own maximal `K` dominates rounding `K` first, since for a
/// fixed `tau` the objective never increases with `K`.
pub fn round_and_clamp(solution: &TradeoffSolution, tau_max: usize) -> Result<Schedule> {
    if tau_max == 0 {
        return Err(Error::invalid("tau_max must be at least 1"));
    }
    let costs = &solution.costs;
    let sel = solution.selected();
    let clamp = |t: f64| (t.max(1.0) as usize).clamp(1, tau_max);
    let mut taus = vec![clamp(sel.tau.floor()), clamp(sel.tau.ceil())];
    taus.dedup();

    let mut best: Option<(usize, usize, f64)> = None;
    for tau in taus {
        let Some(k) = costs.max_integer_k(tau) else {
            continue;
        };
        let obj = surrogate_objective(tau as f64, k as f64, solution.progress_rate);
        if best.is_none_or(|(_, _, b)| obj < b) {
            best = Some((tau, k, obj));
        }
    }
    let (tau, k, _) = best.ok_or_else(|| infeasible(costs, solution.candidates.clone()))?;
    Schedule::new(tau, k)
}
