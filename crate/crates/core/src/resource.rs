//! Delay and energy models.
//!
//! Local training delay of client `i` over a round of `tau` steps is a
//! shifted exponential, `a_i·tau + Exp(rate mu/tau)`, and the round waits for
//! the slowest client. Its expectation is bounded by `(N·tau/mu)·I0 + a·tau`
//! where `I0 = Σ_{i=1..N} C(N−1, i−1)(−1)^{i−1} / i²`, which equals `H_N / N`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::engine::Schedule;
use crate::error::{Error, Result};

/// Largest client count evaluated through the exact alternating sum.
pub const I0_ALTERNATING_MAX_N: usize = 60;

/// `I0(N)`. Up to [`I0_ALTERNATING_MAX_N`] the alternating binomial sum is
/// evaluated exactly in integer arithmetic and rounded once; beyond that the
/// harmonic form `H_N / N` is used, since the binomials overflow.
pub fn compute_i0(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("I0 needs at least one client"));
    }
    if n > I0_ALTERNATING_MAX_N {
        let harmonic: f64 = (1..=n).rev().map(|k| 1.0 / k as f64).sum();
        return Ok(harmonic / n as f64);
    }
    // lcm(1..=60) < 2^84, so it fits in u128.
    let lcm = (1..=n as u128).fold(1u128, |acc, k| acc / gcd(acc, k) * k);
    let mut numerator = BigInt::from(0);
    let mut binom: u64 = 1; // C(n-1, i-1)
    for i in 1..=n {
        let scaled = BigInt::from(lcm / i as u128);
        let term = BigInt::from(binom) * &scaled * &scaled;
        if i % 2 == 1 {
            numerator += term;
        } else {
            numerator -= term;
        }
        if i < n {
            // C(n-1, i) = C(n-1, i-1) * (n-i) / i, exact in u128
            binom = (u128::from(binom) * (n - i) as u128 / i as u128) as u64;
        }
    }
    let denominator = BigInt::from(lcm) * BigInt::from(lcm);
    BigRational::new(numerator, denominator)
        .to_f64()
        .ok_or(Error::NonFinite("I0"))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Where the per-aggregation upload delay comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CommDelay {
    /// Directly configured `t_cm` in seconds.
    Constant(f64),
    /// FDMA upload: slowest client's `Z / (B·log2(1 + P_cm·h_i/N0))`.
    Channel(ChannelSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    /// Payload size `Z` in bits.
    pub payload_bits: f64,
    /// Per-client bandwidth `B` in hertz.
    pub bandwidth_hz: f64,
    /// Noise power `N0` in watts.
    pub noise_w: f64,
    /// Static channel gain `h_i` per client.
    pub gains: Vec<f64>,
}

/// Where the per-step training energy comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingEnergy {
    /// Directly configured `E_tr` in joules.
    Constant(f64),
    /// `κ·C·D_max·f²` for the most loaded client.
    Cpu(CpuSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpuSpec {
    /// Effective switched capacitance `κ`.
    pub kappa: f64,
    /// CPU cycles per sample `C`.
    pub cycles_per_sample: f64,
    /// Largest client dataset `D_max`.
    pub d_max: f64,
    /// CPU frequency in hertz.
    pub cpu_freq_hz: f64,
}

/// System constants for the delay and energy budgets.
///
/// `a` is the largest per-step computation time in seconds; `client_a`
/// optionally holds heterogeneous per-client values `a_i ≤ a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceParams {
    pub n_clients: usize,
    pub mu: f64,
    pub a: f64,
    pub client_a: Option<Vec<f64>>,
    pub comm: CommDelay,
    pub p_cm: f64,
    pub energy: TrainingEnergy,
    pub t_tot: f64,
    pub e_tot: f64,
}

impl ResourceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if self.n_clients == 0 {
            return Err(Error::invalid("N must be positive"));
        }
        positive("mu", self.mu)?;
        positive("P_cm", self.p_cm)?;
        positive("t_tot", self.t_tot)?;
        positive("E_tot", self.e_tot)?;
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!(
                "a must be nonnegative, got {}",
                self.a
            )));
        }
        if let Some(list) = &self.client_a {
            if list.len() != self.n_clients {
                return Err(Error::invalid("client_a must list one value per client"));
            }
            if list.iter().any(|&ai| !(0.0..=self.a).contains(&ai)) {
                return Err(Error::invalid("every a_i must lie in [0, a]"));
            }
        }
        match &self.comm {
            CommDelay::Constant(t) => positive("t_cm", *t)?,
            CommDelay::Channel(ch) => {
                positive("Z", ch.payload_bits)?;
                positive("B", ch.bandwidth_hz)?;
                positive("N0", ch.noise_w)?;
                if ch.gains.len() != self.n_clients {
                    return Err(Error::invalid("h must list one gain per client"));
                }
            }
        }
        match &self.energy {
            TrainingEnergy::Constant(e) => {
                if !(*e >= 0.0 && e.is_finite()) {
                    return Err(Error::invalid(format!("E_tr must be nonnegative, got {e}")));
                }
            }
            TrainingEnergy::Cpu(cpu) => {
                for (name, v) in [
                    ("kappa", cpu.kappa),
                    ("C", cpu.cycles_per_sample),
                    ("D_max", cpu.d_max),
                    ("f_cpu", cpu.cpu_freq_hz),
                ] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::invalid(format!("{name} must be nonnegative")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `a_i` for client `i` (falls back to `a`).
    pub fn client_a(&self, i: usize) -> f64 {
        self.client_a.as_ref().map_or(self.a, |list| list[i])
    }

    /// Draws heterogeneous `a_i ~ U[a/2, a]`.
    pub fn with_heterogeneous_a(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let list = (0..self.n_clients)
            .map(|_| rng.random_range(0.5 * self.a..=self.a))
            .collect();
        self.client_a = Some(list);
        self
    }

    /// Per-step expected delay coefficient `c = (N/mu)·I0 + a`, so that
    /// `E(t_tr) ≤ c·tau`.
    pub fn delay_coefficient(&self) -> Result<f64> {
        Ok(self.n_clients as f64 / self.mu * compute_i0(self.n_clients)? + self.a)
    }

    /// Resolves the derived costs once for repeated evaluation.
    pub fn cost_model(&self) -> Result<CostModel> {
        self.validate()?;
        let t_cm = comm_delay(self)?;
        Ok(CostModel {
            delay_coefficient: self.delay_coefficient()?,
            t_cm,
            e_tr: training_energy(self),
            e_cm: self.p_cm * t_cm,
            p_cm: self.p_cm,
            t_tot: self.t_tot,
            e_tot: self.e_tot,
        })
    }
}

/// Upper bound on the expected round training delay, `(N·tau/mu)·I0 + a·tau`.
pub fn expected_training_delay(tau: usize, params: &ResourceParams) -> Result<f64> {
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    Ok(params.delay_coefficient()? * tau as f64)
}

/// One draw of the round training delay `max_i (a_i·tau + Exp(mu/tau))`.
pub fn sample_training_delay<R: Rng + ?Sized>(
    tau: usize,
    params: &ResourceParams,
    rng: &mut R,
) -> Result<f64> {
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    let tau_f = tau as f64;
    let exp = Exp::new(params.mu / tau_f)
        .map_err(|e| Error::invalid(format!("bad fluctuation rate: {e}")))?;
    let mut slowest = f64::NEG_INFINITY;
    for i in 0..params.n_clients {
        let t = params.client_a(i) * tau_f + exp.sample(rng);
        slowest = slowest.max(t);
    }
    Ok(slowest)
}

/// Per-aggregation upload delay `t_cm`.
pub fn comm_delay(params: &ResourceParams) -> Result<f64> {
    match &params.comm {
        CommDelay::Constant(t) => Ok(*t),
        CommDelay::Channel(ch) => {
            if !(ch.bandwidth_hz > 0.0 && ch.noise_w > 0.0) {
                return Err(Error::invalid("bandwidth and noise power must be positive"));
            }
            let mut worst: f64 = 0.0;
            for (client, &h) in ch.gains.iter().enumerate() {
                let rate = ch.bandwidth_hz * (params.p_cm * h / ch.noise_w).log2_1p();
                if !(rate > 0.0) {
                    return Err(Error::InfeasibleChannel { client });
                }
                worst = worst.max(ch.payload_bits / rate);
            }
            Ok(worst)
        }
    }
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Per-step training energy `E_tr`.
pub fn training_energy(params: &ResourceParams) -> f64 {
    match &params.energy {
        TrainingEnergy::Constant(e) => *e,
        TrainingEnergy::Cpu(cpu) => {
            cpu.kappa * cpu.cycles_per_sample * cpu.d_max * cpu.cpu_freq_hz * cpu.cpu_freq_hz
        }
    }
}

/// Resolved constants of the budget constraints
///
/// * delay:  `c·K·tau² + t_cm·K ≤ t_tot`
/// * energy: `E_tr·K·tau + E_cm·K ≤ E_tot`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub delay_coefficient: f64,
    pub t_cm: f64,
    pub e_tr: f64,
    pub e_cm: f64,
    pub p_cm: f64,
    pub t_tot: f64,
    pub e_tot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetUsage {
    pub delay_s: f64,
    pub energy_j: f64,
    pub delay_ok: bool,
    pub energy_ok: bool,
}

impl BudgetUsage {
    pub fn feasible(&self) -> bool {
        self.delay_ok && self.energy_ok
    }
}

impl CostModel {
    pub fn delay(&self, tau: f64, k: f64) -> f64 {
        self.delay_coefficient * k * tau * tau + self.t_cm * k
    }

    pub fn energy(&self, tau: f64, k: f64) -> f64 {
        self.e_tr * k * tau + self.e_cm * k
    }

    pub fn usage(&self, tau: f64, k: f64) -> BudgetUsage {
        let delay_s = self.delay(tau, k);
        let energy_j = self.energy(tau, k);
        BudgetUsage {
            delay_s,
            energy_j,
            delay_ok: delay_s <= self.t_tot,
            energy_ok: energy_j <= self.e_tot,
        }
    }

    /// Largest real `K` meeting both budgets at this `tau`.
    pub fn max_k(&self, tau: f64) -> f64 {
        let by_delay = self.t_tot / (self.delay_coefficient * tau * tau + self.t_cm);
        let by_energy = self.e_tot / (self.e_tr * tau + self.e_cm);
        by_delay.min(by_energy)
    }

    /// Largest integer `K` meeting both budgets at integer `tau`, if any.
    pub fn max_integer_k(&self, tau: usize) -> Option<usize> {
        let bound = self.max_k(tau as f64);
        if !(bound >= 1.0) {
            return None;
        }
        let mut k = bound.floor().min(u32::MAX as f64) as usize;
        // guard against rounding at the boundary
        while k >= 1 && !self.usage(tau as f64, k as f64).feasible() {
            k -= 1;
        }
        while self.usage(tau as f64, (k + 1) as f64).feasible() {
            k += 1;
        }
        (k >= 1).then_some(k)
    }

    /// Largest real `tau` with `K = 1` inside both budgets.
    pub fn max_tau_single_round(&self) -> f64 {
        let by_delay = ((self.t_tot - self.t_cm) / self.delay_coefficient)
            .max(0.0)
            .sqrt();
        let by_energy = if self.e_tr > 0.0 {
            (self.e_tot - self.e_cm) / self.e_tr
        } else {
            f64::INFINITY
        };
        by_delay.min(by_energy)
    }
}

/// Expected-delay and energy usage of a schedule against the budgets.
pub fn budget_usage(schedule: &Schedule, params: &ResourceParams) -> Result<BudgetUsage> {
    let costs = params.cost_model()?;
    Ok(costs.usage(schedule.tau as f64, schedule.k as f64))
}
