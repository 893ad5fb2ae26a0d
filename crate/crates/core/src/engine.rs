//! The FedAvg training loop.
//!
//! Clients start from shared parameters, run `tau` full-batch gradient steps
//! on their own data, then the server replaces every client model with the
//! size-weighted average. A schedule repeats this `K` times, `T = K·tau`
//! local steps in total. Rounds are charged against the delay and energy
//! budgets; in [`BudgetMode::Enforce`] a round that would overrun either
//! budget is not started.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ClientDataset, LossModel, ParamVector, Partition};
use crate::resource::{sample_training_delay, ResourceParams};

/// `tau` local steps between aggregations, `K` aggregations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Schedule {
    pub tau: usize,
    pub k: usize,
}

impl Schedule {
    pub fn new(tau: usize, k: usize) -> Result<Self> {
        if tau == 0 || k == 0 {
            return Err(Error::invalid(format!(
                "schedule needs tau >= 1 and K >= 1, got tau={tau}, K={k}"
            )));
        }
        Ok(Schedule { tau, k })
    }

    /// Total local steps `T = K·tau`.
    pub fn total_steps(&self) -> usize {
        self.k * self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// Account for delay and energy but never stop early.
    Track,
    /// Stop before a round that would exceed `t_tot` or `E_tot`.
    Enforce,
}

/// How a round's training delay is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayAccounting {
    /// The expected-delay bound `c·tau` per round.
    Expected,
    /// A fresh shifted-exponential straggler draw per round.
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub eta: f64,
    pub budget_mode: BudgetMode,
    pub delay_accounting: DelayAccounting,
    /// Keep every client's parameters at every step.
    pub record_clients: bool,
}

impl RunSettings {
    pub fn new(eta: f64) -> Self {
        RunSettings {
            eta,
            budget_mode: BudgetMode::Track,
            delay_accounting: DelayAccounting::Expected,
            record_clients: false,
        }
    }
}

/// State after one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// Aggregation index `k`, starting at 1.
    pub round: usize,
    /// Local step index `t = k·tau`.
    pub step: usize,
    pub params: ParamVector,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub cum_delay_s: f64,
    pub cum_energy_j: f64,
}

/// Per-client parameter history.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientHistory {
    /// `synced[i][t]`: client `i` after step `t` (and after aggregation when
    /// `t = k·tau`), for `t = 0..=T_run`.
    pub synced: Vec<Vec<ParamVector>>,
    /// `pre_aggregation[k-1][i]`: client `i` at step `k·tau` before averaging.
    pub pre_aggregation: Vec<Vec<ParamVector>>,
}

impl ClientHistory {
    /// Client `i`'s own model after local step `t` (before any aggregation).
    pub fn local(&self, client: usize, t: usize, tau: usize) -> &ParamVector {
        if t > 0 && t.is_multiple_of(tau) {
            &self.pre_aggregation[t / tau - 1][client]
        } else {
            &self.synced[client][t]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetLimit {
    Delay,
    Energy,
}

/// Where an enforced run stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub completed_rounds: usize,
    pub completed_steps: usize,
    pub limit: BudgetLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub schedule: Schedule,
    pub initial: ParamVector,
    pub initial_loss: f64,
    pub rounds: Vec<RoundRecord>,
    pub clients: Option<ClientHistory>,
    pub truncated: Option<Truncation>,
}

impl Trajectory {
    /// Global parameters after the last completed aggregation.
    pub fn final_params(&self) -> &ParamVector {
        self.rounds.last().map_or(&self.initial, |r| &r.params)
    }

    pub fn final_loss(&self) -> f64 {
        self.rounds.last().map_or(self.initial_loss, |r| r.loss)
    }

    /// Local steps actually executed.
    pub fn steps_run(&self) -> usize {
        self.rounds.len() * self.schedule.tau
    }

    /// `w(0), w(tau), w(2·tau), …`
    pub fn global_iterates(&self) -> Vec<ParamVector> {
        std::iter::once(self.initial.clone())
            .chain(self.rounds.iter().map(|r| r.params.clone()))
            .collect()
    }
}

/// One gradient step on a client's own data: `w − eta·∇F_i(w)`.
pub fn local_step(
    params: &ParamVector,
    model: &LossModel,
    data: &ClientDataset,
    eta: f64,
) -> Result<ParamVector> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    let grad = model.gradient(params, data)?;
    let mut next = params.clone();
    next.axpy(-eta, &grad);
    if !next.is_finite() {
        return Err(Error::NonFinite("local step"));
    }
    Ok(next)
}

/// FedAvg: `Σ D_i w_i / D`, accumulated in ascending client order as a
/// running weighted mean (so identical inputs come back bit-for-bit).
pub fn aggregate(client_params: &[ParamVector], sizes: &[usize]) -> Result<ParamVector> {
    let Some(first) = client_params.first() else {
        return Err(Error::invalid("cannot aggregate an empty client list"));
    };
    if client_params.len() != sizes.len() {
        return Err(Error::invalid("one dataset size per client is required"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("client dataset sizes must be positive"));
    }
    let mut mean = first.clone();
    let mut seen = sizes[0] as f64;
    for (w, &d) in client_params.iter().zip(sizes).skip(1) {
        w.check_dim(mean.dim())?;
        seen += d as f64;
        let weight = d as f64 / seen;
        let delta = w.sub(&mean);
        mean.axpy(weight, &delta);
    }
    Ok(mean)
}

/// Size-weighted global loss over all clients.
pub fn global_loss(partition: &Partition, model: &LossModel, params: &ParamVector) -> Result<f64> {
    partition.global_loss(model, params)
}

/// Summing identical round costs drifts from `K·cost` by a few ulps; without
/// slack a schedule sized exactly to the budget could lose its last round.
const ENFORCE_SLACK: f64 = 1e-9;

/// Runs `schedule` from `initial` on every client.
pub fn run_schedule(
    schedule: &Schedule,
    partition: &Partition,
    model: &LossModel,
    initial: &ParamVector,
    resources: &ResourceParams,
    settings: &RunSettings,
    eval: Option<&ClientDataset>,
) -> Result<Trajectory> {
    initial.check_dim(partition.dim())?;
    if !(settings.eta > 0.0 && settings.eta.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if resources.n_clients != partition.n_clients() {
        return Err(Error::invalid(format!(
            "resource model has N={} but the partition has {} clients",
            resources.n_clients,
            partition.n_clients()
        )));
    }
    let costs = resources.cost_model()?;
    let sizes = partition.sizes();
    let tau = schedule.tau;
    let mut delay_rng = match settings.delay_accounting {
        DelayAccounting::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        DelayAccounting::Expected => None,
    };

    let n = partition.n_clients();
    let mut client_params = vec![initial.clone(); n];
    let mut history = settings.record_clients.then(|| ClientHistory {
        synced: vec![vec![initial.clone()]; n],
        pre_aggregation: Vec::new(),
    });

    let initial_loss = partition.global_loss(model, initial)?;
    let mut rounds = Vec::with_capacity(schedule.k);
    let mut truncated = None;
    let (mut cum_delay, mut cum_energy) = (0.0_f64, 0.0_f64);

    for round in 1..=schedule.k {
        let train_delay = match delay_rng.as_mut() {
            Some(rng) => sample_training_delay(tau, resources, rng)?,
            None => costs.delay_coefficient * tau as f64,
        };
        let round_delay = train_delay * tau as f64 + costs.t_cm;
        let round_energy = costs.e_tr * tau as f64 + costs.e_cm;
        if settings.budget_mode == BudgetMode::Enforce {
            let limit = if cum_delay + round_delay > costs.t_tot * (1.0 + ENFORCE_SLACK) {
                Some(BudgetLimit::Delay)
            } else if cum_energy + round_energy > costs.e_tot * (1.0 + ENFORCE_SLACK) {
                Some(BudgetLimit::Energy)
            } else {
                None
            };
            if let Some(limit) = limit {
                truncated = Some(Truncation {
                    completed_rounds: round - 1,
                    completed_steps: (round - 1) * tau,
                    limit,
                });
                break;
            }
        }

        let record = history.is_some();
        let local_paths: Vec<Vec<ParamVector>> = client_params
            .par_iter()
            .zip(partition.clients.par_iter())
            .map(|(start, data)| {
                let mut path = Vec::with_capacity(if record { tau } else { 1 });
                let mut w = start.clone();
                for _ in 0..tau {
                    w = local_step(&w, model, data, settings.eta)?;
                    if record {
                        path.push(w.clone());
                    }
                }
                if !record {
                    path.push(w);
                }
                Ok(path)
            })
            .collect::<Result<_>>()?;

        let finals: Vec<ParamVector> = local_paths
            .iter()
            .map(|p| p.last().expect("at least one local step").clone())
            .collect();
        let global = aggregate(&finals, &sizes)?;

        if let Some(h) = history.as_mut() {
            for (i, path) in local_paths.into_iter().enumerate() {
                let synced = &mut h.synced[i];
                synced.extend(path);
                *synced.last_mut().expect("nonempty") = global.clone();
            }
            h.pre_aggregation.push(finals);
        }
        client_params.iter_mut().for_each(|w| *w = global.clone());

        cum_delay += round_delay;
        cum_energy += round_energy;
        let loss = partition.global_loss(model, &global)?;
        let accuracy = eval.map(|d| model.accuracy(&global, d)).transpose()?;
        rounds.push(RoundRecord {
            round,
            step: round * tau,
            params: global,
            loss,
            accuracy,
            cum_delay_s: cum_delay,
            cum_energy_j: cum_energy,
        });
    }

    Ok(Trajectory {
        schedule: *schedule,
        initial: initial.clone(),
        initial_loss,
        rounds,
        clients: history,
        truncated,
    })
}

/// Result of centralized gradient descent towards `w*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub params: ParamVector,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent on pooled data until `‖∇F‖ < tol` or
/// `max_iters` steps. Used as the reference `w*` for gap measurements.
pub fn centralized_optimum(
    model: &LossModel,
    data: &ClientDataset,
    initial: &ParamVector,
    step: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Optimum> {
    let mut w = initial.clone();
    let mut iterations = 0;
    let mut grad = model.gradient(&w, data)?;
    while grad.norm() >= tol && iterations < max_iters {
        w.axpy(-step, &grad);
        grad = model.gradient(&w, data)?;
        iterations += 1;
    }
    let grad_norm = grad.norm();
    Ok(Optimum {
        loss: model.loss(&w, data)?,
        params: w,
        grad_norm,
        iterations,
        converged: grad_norm < tol,
    })
}

/// Step size `1/L` from a cheap upper bound on the smoothness of the loss
/// (`‖X‖_F² / n` scaled by the curvature of the sample loss).
pub fn safe_step_size(model: &LossModel, data: &ClientDataset) -> f64 {
    let frob = data.rows().flatten().map(|v| v * v).sum::<f64>() / data.len() as f64;
    let curvature = match model.kind {
        crate::model::LossKind::LogLoss => 0.25,
        crate::model::LossKind::MeanSquaredError => 2.0,
        // nonsmooth: borrow the logistic scale
        crate::model::LossKind::Hinge => 0.25,
    };
    1.0 / (curvature * frob + model.l2).max(f64::MIN_POSITIVE)
}
