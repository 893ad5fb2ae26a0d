//! The five experiment kinds behind the CLI.
//!
//! Data, partition and resource draws come from the base seed so every run of
//! a sweep or comparison sees the same clients. Run `i` gets `seed + i`,
//! which only matters for sampled delays and is written to the CSV.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::{DelayMode, ExperimentConfig};
use super::metrics::{format_sig, records_from_trajectory, MetricsRecord};
use crate::bounds::{
    check_tightness_conditions, loss_gap_bound, trajectory_points, verify_local_deviation_bound,
    ConvergenceConstants, DeviationReport, GapBound, TightnessReport,
};
use crate::engine::{
    centralized_optimum, run_schedule, safe_step_size, BudgetMode, DelayAccounting, RunSettings,
    Schedule, Trajectory, Truncation,
};
use crate::error::{Error, Result};
use crate::model::{
    estimate_constants, partition, ClientDataset, EstimateInputs, LossModel, ParamVector, Partition,
};
use crate::optimizer::{
    best_integer_schedule, round_and_clamp, solve_closed_form, Candidate, GridOptimum,
    TradeoffSolution,
};
use crate::resource::ResourceParams;

/// Local steps in the probe run used to estimate missing constants.
const PROBE_STEPS: usize = 100;
/// Largest `tau` the solve report scans for the integer optimum.
const REPORT_TAU_CAP: usize = 200;
/// Tolerance for the tightness collinearity checks.
const TIGHTNESS_TOL: f64 = 1e-9;

/// Everything derived from a config and a base seed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub model: LossModel,
    pub partition: Partition,
    /// Accuracy is scored here: the holdout split, or the training data.
    pub eval: ClientDataset,
    pub resources: ResourceParams,
    pub initial: ParamVector,
}

impl Setup {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let data = config.dataset(seed)?;
        let (train, eval) = if config.holdout > 0.0 {
            data.split_holdout(config.holdout, seed)?
        } else {
            (data.clone(), data)
        };
        let partition = partition(&train, config.n_clients, config.partition, seed)?;
        let initial = ParamVector::zeros(partition.dim());
        Ok(Setup {
            config: config.clone(),
            seed,
            model: config.loss_model()?,
            partition,
            eval,
            resources: config.resource_params(seed)?,
            initial,
        })
    }

    pub fn settings(&self, run_seed: u64, enforce: bool, record_clients: bool) -> RunSettings {
        RunSettings {
            eta: self.config.eta,
            budget_mode: if enforce {
                BudgetMode::Enforce
            } else {
                BudgetMode::Track
            },
            delay_accounting: match self.config.delay {
                DelayMode::Expected => DelayAccounting::Expected,
                DelayMode::Sampled => DelayAccounting::Sampled { seed: run_seed },
            },
            record_clients,
        }
    }

    pub fn run(
        &self,
        schedule: Schedule,
        run_seed: u64,
        enforce: bool,
        record_clients: bool,
    ) -> Result<Trajectory> {
        run_schedule(
            &schedule,
            &self.partition,
            &self.model,
            &self.initial,
            &self.resources,
            &self.settings(run_seed, enforce, record_clients),
            Some(&self.eval),
        )
    }

    /// Constants estimated over every point of a run of `schedule`.
    pub fn estimate_on(&self, trajectory: &Trajectory) -> Result<ConvergenceConstants> {
        estimate_constants(
            &self.model,
            &self.partition,
            &trajectory_points(trajectory),
            EstimateInputs {
                eta: self.config.eta,
                epsilon: self.config.epsilon,
                tau_max: self.config.tau_max,
            },
        )
    }

    /// Constants for the solver: configured `rho` and `grad_F_star` win,
    /// missing ones come from a probe run with `tau = tau_max`.
    pub fn constants(&self) -> Result<ConvergenceConstants> {
        let mut constants = match (self.config.rho, self.config.grad_f_star) {
            (Some(rho), Some(g)) => {
                ConvergenceConstants::for_solver(rho, self.config.eta, g, self.config.tau_max)
            }
            _ => {
                let tau = self.config.tau_max;
                let probe = Schedule::new(tau, PROBE_STEPS.div_ceil(tau))?;
                let traj = self.run(probe, self.seed, false, true)?;
                self.estimate_on(&traj)?
            }
        };
        if let Some(rho) = self.config.rho {
            constants.rho = rho;
        }
        if let Some(g) = self.config.grad_f_star {
            constants.grad_f_star = g;
        }
        constants.epsilon = self.config.epsilon;
        Ok(constants)
    }

    /// The configured schedule, filling a missing `K` with the budget maximum
    /// and a missing `tau` from the solver.
    pub fn schedule(&self) -> Result<(Schedule, Option<TradeoffSolution>)> {
        match (self.config.tau, self.config.k) {
            (Some(tau), Some(k)) => Ok((Schedule::new(tau, k)?, None)),
            (Some(tau), None) => Ok((self.budget_schedule(tau)?, None)),
            (None, _) => {
                let solution = solve_closed_form(&self.resources, &self.constants()?)?;
                let schedule = round_and_clamp(&solution, self.config.tau_max)?;
                Ok((schedule, Some(solution)))
            }
        }
    }

    /// `tau` with the largest `K` both budgets allow.
    pub fn budget_schedule(&self, tau: usize) -> Result<Schedule> {
        let costs = self.resources.cost_model()?;
        match costs.max_integer_k(tau) {
            Some(k) => Schedule::new(tau, k),
            None => Err(Error::invalid(format!(
                "tau={tau} does not fit a single round in the budgets"
            ))),
        }
    }
}

/// Summary of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub schedule: Schedule,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub cum_delay_s: f64,
    pub cum_energy_j: f64,
    pub truncated: Option<Truncation>,
}

impl RunSummary {
    fn new(label: impl Into<String>, trajectory: &Trajectory, seed: u64) -> Self {
        let last = trajectory.rounds.last();
        RunSummary {
            label: label.into(),
            schedule: trajectory.schedule,
            seed,
            steps: trajectory.steps_run(),
            final_loss: trajectory.final_loss(),
            final_accuracy: last.and_then(|r| r.accuracy),
            cum_delay_s: last.map_or(0.0, |r| r.cum_delay_s),
            cum_energy_j: last.map_or(0.0, |r| r.cum_energy_j),
            truncated: trajectory.truncated,
        }
    }
}

pub const SUMMARY_HEADER: &str =
    "run,tau,K,steps,final_loss,accuracy,cum_delay_s,cum_energy_J,seed,status";

pub fn summary_csv(rows: &[RunSummary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let status = match r.truncated {
            None => "complete".to_string(),
            Some(t) => {
                format!("stopped-by-{:?}-after-{}", t.limit, t.completed_rounds).to_lowercase()
            }
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.schedule.tau,
            r.schedule.k,
            r.steps,
            format_sig(r.final_loss),
            r.final_accuracy.map(format_sig).unwrap_or_default(),
            format_sig(r.cum_delay_s),
            format_sig(r.cum_energy_j),
            r.seed,
            status
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub summary: RunSummary,
    pub records: Vec<MetricsRecord>,
    pub solution: Option<TradeoffSolution>,
}

pub fn simulate(config: &ExperimentConfig, seed: u64, enforce: bool) -> Result<SimulationReport> {
    let setup = Setup::new(config, seed)?;
    let (schedule, solution) = setup.schedule()?;
    let traj = setup.run(schedule, seed, enforce, false)?;
    Ok(SimulationReport {
        summary: RunSummary::new("simulate", &traj, seed),
        records: records_from_trajectory(&traj, seed),
        solution,
    })
}

/// One `tau` of a sweep.
#[derive(Debug, Clone)]
pub enum SweepPoint {
    Ran {
        summary: RunSummary,
        records: Vec<MetricsRecord>,
    },
    /// Not even one round of this `tau` fits the budgets.
    Infeasible { tau: usize },
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn summaries(&self) -> Vec<RunSummary> {
        self.points
            .iter()
            .filter_map(|p| match p {
                SweepPoint::Ran { summary, .. } => Some(summary.clone()),
                SweepPoint::Infeasible { .. } => None,
            })
            .collect()
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        self.points
            .iter()
            .flat_map(|p| match p {
                SweepPoint::Ran { records, .. } => records.clone(),
                SweepPoint::Infeasible { .. } => Vec::new(),
            })
            .collect()
    }

    pub fn infeasible(&self) -> Vec<usize> {
        self.points
            .iter()
            .filter_map(|p| match p {
                SweepPoint::Infeasible { tau } => Some(*tau),
                SweepPoint::Ran { .. } => None,
            })
            .collect()
    }
}

/// One run per `tau`, each with the largest `K` the budgets allow.
pub fn run_sweep(
    config: &ExperimentConfig,
    seed: u64,
    taus: &[usize],
    enforce: bool,
) -> Result<SweepReport> {
    let setup = Setup::new(config, seed)?;
    let points = taus
        .par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let run_seed = seed.wrapping_add(i as u64);
            let Ok(schedule) = setup.budget_schedule(tau) else {
                return Ok(SweepPoint::Infeasible { tau });
            };
            let traj = setup.run(schedule, run_seed, enforce, false)?;
            Ok(SweepPoint::Ran {
                summary: RunSummary::new(format!("tau={tau}"), &traj, run_seed),
                records: records_from_trajectory(&traj, run_seed),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { points })
}

/// The `tau` grid of a sweep: configured values, or `1..=tau_max`.
pub fn sweep_taus(config: &ExperimentConfig) -> Vec<usize> {
    if config.tau_values.is_empty() {
        (1..=config.tau_max).collect()
    } else {
        config.tau_values.clone()
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub solution: TradeoffSolution,
    /// Optimized schedule first, then `tau = 1` and `tau = tau_max`.
    pub runs: Vec<RunSummary>,
    pub records: Vec<MetricsRecord>,
}

impl CompareReport {
    pub fn optimized(&self) -> &RunSummary {
        &self.runs[0]
    }

    pub fn best_baseline_loss(&self) -> f64 {
        self.runs[1..]
            .iter()
            .map(|r| r.final_loss)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The solver's schedule against fixed-`tau` baselines under the same budgets.
pub fn run_compare(config: &ExperimentConfig, seed: u64, enforce: bool) -> Result<CompareReport> {
    let setup = Setup::new(config, seed)?;
    let solution = solve_closed_form(&setup.resources, &setup.constants()?)?;
    let optimized = round_and_clamp(&solution, config.tau_max)?;
    let mut plan = vec![("optimized".to_string(), optimized)];
    for tau in [1, config.tau_max] {
        plan.push((format!("baseline-tau={tau}"), setup.budget_schedule(tau)?));
    }
    let results = plan
        .par_iter()
        .enumerate()
        .map(|(i, (label, schedule))| {
            let run_seed = seed.wrapping_add(i as u64);
            let traj = setup.run(*schedule, run_seed, enforce, false)?;
            Ok((
                RunSummary::new(label.clone(), &traj, run_seed),
                records_from_trajectory(&traj, run_seed),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(CompareReport {
        solution,
        runs,
        records: records.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub schedule: Schedule,
    pub constants: ConvergenceConstants,
    pub final_loss: f64,
    pub optimum_loss: f64,
    pub optimum_converged: bool,
    pub measured_gap: f64,
    pub bound: GapBound,
    pub tightness: TightnessReport,
    pub deviation: DeviationReport,
}

impl BoundsReport {
    pub fn csv(&self) -> String {
        let c = &self.constants;
        let mut rows: Vec<(String, String)> = vec![
            ("tau".into(), self.schedule.tau.to_string()),
            ("K".into(), self.schedule.k.to_string()),
            ("rho".into(), format_sig(c.rho)),
            ("beta".into(), format_sig(c.beta)),
            ("eta".into(), format_sig(c.eta)),
            ("delta".into(), format_sig(c.delta)),
            ("grad_F_star".into(), format_sig(c.grad_f_star)),
            ("epsilon".into(), format_sig(c.epsilon)),
        ];
        for (i, d) in c.delta_i.iter().enumerate() {
            rows.push((format!("delta_{}", i + 1), format_sig(*d)));
        }
        let bound = match self.bound {
            GapBound::Bound(v) => format_sig(v),
            GapBound::NotApplicable { .. } => "not-applicable".into(),
        };
        rows.extend([
            ("final_loss".into(), format_sig(self.final_loss)),
            ("optimum_loss".into(), format_sig(self.optimum_loss)),
            (
                "optimum_converged".into(),
                self.optimum_converged.to_string(),
            ),
            ("measured_gap".into(), format_sig(self.measured_gap)),
            ("gap_bound".into(), bound),
        ]);
        for (i, cond) in self.tightness.conditions.iter().enumerate() {
            rows.push((format!("tightness_{}", i + 1), cond.satisfied.to_string()));
            rows.push((
                format!("tightness_{}_residual", i + 1),
                format_sig(cond.max_residual),
            ));
        }
        let d = &self.deviation;
        rows.extend([
            ("deviation_checked".into(), d.deviation_checked.to_string()),
            (
                "deviation_violations".into(),
                d.deviation_violations.to_string(),
            ),
            (
                "deviation_max_ratio".into(),
                format_sig(d.max_deviation_ratio),
            ),
            ("gradient_checked".into(), d.gradient_checked.to_string()),
            (
                "gradient_violations".into(),
                d.gradient_violations.to_string(),
            ),
            (
                "gradient_max_ratio".into(),
                format_sig(d.max_gradient_ratio),
            ),
        ]);
        let mut out = String::from("quantity,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Runs the configured schedule with full client history, estimates the
/// constants over that same run and checks the bounds against it.
pub fn bounds_report(config: &ExperimentConfig, seed: u64, enforce: bool) -> Result<BoundsReport> {
    let setup = Setup::new(config, seed)?;
    let (schedule, _) = setup.schedule()?;
    let traj = setup.run(schedule, seed, enforce, true)?;
    let constants = setup.estimate_on(&traj)?;

    let pooled = setup.partition.pooled();
    let step = safe_step_size(&setup.model, &pooled);
    let optimum = centralized_optimum(&setup.model, &pooled, &setup.initial, step, 1e-10, 200_000)?;
    let final_loss = traj.final_loss();

    let steps = traj.steps_run() as f64;
    Ok(BoundsReport {
        schedule,
        bound: loss_gap_bound(steps, schedule.tau as f64, &constants),
        tightness: check_tightness_conditions(
            &traj,
            &setup.partition,
            &setup.model,
            TIGHTNESS_TOL,
        )?,
        deviation: verify_local_deviation_bound(&traj, &setup.partition, &setup.model, &constants)?,
        constants,
        final_loss,
        optimum_loss: optimum.loss,
        optimum_converged: optimum.converged,
        measured_gap: final_loss - optimum.loss,
    })
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub constants: ConvergenceConstants,
    pub candidates: Vec<Candidate>,
    pub selected: Option<usize>,
    pub schedule: Option<Schedule>,
    /// Best integer schedule with `tau ≤ 200`, for reference.
    pub integer_best: Option<GridOptimum>,
    pub reference_tau: Option<usize>,
    pub note: Option<String>,
}

pub const SOLVE_HEADER: &str =
    "case,tau,K,I1,feasible,objective,delay_residual,energy_residual,selected";

impl SolveReport {
    pub fn csv(&self) -> String {
        let mut out = format!("{SOLVE_HEADER}\n");
        for (i, c) in self.candidates.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.case,
                format_sig(c.tau),
                format_sig(c.k),
                format_sig(c.i1),
                c.feasible,
                format_sig(c.objective),
                format_sig(c.delay_residual),
                format_sig(c.energy_residual),
                self.selected == Some(i)
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "rho·eta·grad_F_star = {}",
            format_sig(self.constants.progress_rate())
        );
        let _ = writeln!(
            out,
            "{:<15} {:>14} {:>14} {:>15} {:>8} {:>15} {:>15} {:>15}",
            "case", "tau", "K", "I1", "feasible", "objective", "delay_res", "energy_res"
        );
        for (i, c) in self.candidates.iter().enumerate() {
            let mark = if self.selected == Some(i) { "*" } else { "" };
            let _ = writeln!(
                out,
                "{:<15} {:>14} {:>14} {:>15} {:>8} {:>15} {:>15} {:>15}",
                format!("{}{mark}", c.case),
                format_sig(c.tau),
                format_sig(c.k),
                format_sig(c.i1),
                c.feasible,
                format_sig(c.objective),
                format_sig(c.delay_residual),
                format_sig(c.energy_residual)
            );
        }
        match self.schedule {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "schedule: tau={} K={} T={}",
                    s.tau,
                    s.k,
                    s.total_steps()
                );
            }
            None => {
                let _ = writeln!(out, "schedule: none (no feasible candidate)");
            }
        }
        if let Some(g) = self.integer_best {
            let _ = writeln!(
                out,
                "integer optimum (tau <= {REPORT_TAU_CAP}): tau={} K={} objective={}",
                g.tau,
                g.k,
                format_sig(g.objective)
            );
        }
        if let Some(r) = self.reference_tau {
            let got = self
                .schedule
                .map_or_else(|| "none".to_string(), |s| s.tau.to_string());
            let verdict = if self.schedule.map(|s| s.tau) == Some(r) {
                "matched"
            } else {
                "not reproduced"
            };
            let _ = writeln!(out, "reference tau={r}: {verdict} (solver tau={got})");
        }
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}

/// Candidate table for the configured budgets. An infeasible budget still
/// produces a report, with no selection.
pub fn solve(config: &ExperimentConfig, seed: u64) -> Result<SolveReport> {
    let setup = Setup::new(config, seed)?;
    let constants = setup.constants()?;
    let costs = setup.resources.cost_model()?;
    let (candidates, selected, schedule) = match solve_closed_form(&setup.resources, &constants) {
        Ok(solution) => {
            let schedule = round_and_clamp(&solution, config.tau_max)?;
            (solution.candidates, Some(solution.selected), Some(schedule))
        }
        Err(Error::InfeasibleBudget(d)) => (d.candidates, None, None),
        Err(e) => return Err(e),
    };
    Ok(SolveReport {
        integer_best: best_integer_schedule(&costs, constants.progress_rate(), 1..=REPORT_TAU_CAP),
        constants,
        candidates,
        selected,
        schedule,
        reference_tau: config.reference_tau,
        note: config.note.clone(),
    })
}
