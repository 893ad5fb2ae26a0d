//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runtime limits are part of each verdict.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{config_path, random_costs, GRID};
use fedsched::bounds::{
    loss_gap_bound_with_divergence, min_trainings_for_gap, ConvergenceConstants,
};
use fedsched::engine::{run_schedule, RunSettings, Schedule};
use fedsched::harness::{run_compare, run_sweep, sweep_taus, ExperimentConfig};
use fedsched::model::{
    estimate_constants, partition, synthetic_blobs, ClientDataset, EstimateInputs, LossKind,
    LossModel, ParamVector, PartitionScheme, SyntheticSpec,
};
use fedsched::optimizer::{
    grid_oracle_costs, round_and_clamp, solve_closed_form, solve_with_costs, surrogate_objective,
    KktCase,
};
use fedsched::resource::{
    compute_i0, expected_training_delay, sample_training_delay, CommDelay, ResourceParams,
    TrainingEnergy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict, Option<u64>);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(v: Verdict, elapsed: Duration, limit: Duration) -> Verdict {
    match v {
        Ok(d) if elapsed > limit => Err(format!("{d}; took {elapsed:?}, limit {limit:?}")),
        other => other,
    }
}

fn desk_data(seed: u64) -> ClientDataset {
    synthetic_blobs(&SyntheticSpec {
        n_samples: 1000,
        dim: 10,
        separation: 2.0,
        seed,
    })
    .unwrap()
}

fn c1_i0() -> Verdict {
    let mut worst = 0.0_f64;
    let mut slowest = Duration::ZERO;
    let mut harmonic = 0.0;
    for n in 1..=50usize {
        harmonic += 1.0 / n as f64;
        let start = Instant::now();
        let v = compute_i0(n).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        worst = worst.max((v - harmonic / n as f64).abs());
    }
    let five = compute_i0(5).map_err(|e| e.to_string())?;
    let ok = worst < 1e-12 && five == 137.0 / 300.0;
    within_time(
        check(
            ok,
            format!("max |I0 - H_N/N| = {worst:.2e} over N=1..50, I0(5) = {five}"),
        ),
        slowest,
        Duration::from_millis(1),
    )
    .map(|d| format!("{d}; slowest call {slowest:?}"))
}

fn straggler_params(heterogeneous: bool) -> ResourceParams {
    let p = ResourceParams {
        n_clients: 5,
        mu: 0.2,
        a: 2.0,
        client_a: None,
        comm: CommDelay::Constant(0.14),
        p_cm: 1.5,
        energy: TrainingEnergy::Constant(10.0),
        t_tot: 200.0,
        e_tot: 1500.0,
    };
    if heterogeneous {
        p.with_heterogeneous_a(11)
    } else {
        p
    }
}

fn monte_carlo(params: &ResourceParams, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..samples {
        let d = sample_training_delay(10, params, &mut rng).unwrap();
        sum += d;
        sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sq - n * mean * mean) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn c2_straggler_bound() -> Verdict {
    let homogeneous = straggler_params(false);
    let bound = expected_training_delay(10, &homogeneous).map_err(|e| e.to_string())?;
    let (m_eq, se_eq) = monte_carlo(&homogeneous, 100_000, 1);
    let (m_het, se_het) = monte_carlo(&straggler_params(true), 100_000, 2);
    let ok = (bound - 134.167).abs() < 1e-3
        && (m_eq - bound).abs() <= 3.0 * se_eq
        && m_het <= bound + 3.0 * se_het;
    check(
        ok,
        format!(
            "bound {bound:.4} s; equal a_i mean {m_eq:.4} ± {se_eq:.4}; heterogeneous a_i mean {m_het:.4} ± {se_het:.4}"
        ),
    )
}

fn c3_solver_vs_grid() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut sets, mut draws) = (0, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_residual = 0.0_f64;
    let mut failures = Vec::new();
    while sets < 100 {
        draws += 1;
        let Some((costs, rate)) = random_costs(&mut rng) else {
            continue;
        };
        sets += 1;
        let sol = solve_with_costs(&costs, rate).map_err(|e| e.to_string())?;
        let sched = round_and_clamp(&sol, GRID).map_err(|e| e.to_string())?;
        let grid =
            grid_oracle_costs(&costs, rate, 1..=GRID, 1..=GRID).map_err(|e| e.to_string())?;
        let ours = surrogate_objective(sched.tau as f64, sched.k as f64, rate);
        // cost of moving the grid optimum by one unit in tau or in K
        let step = (1.0 - rate * grid.k as f64)
            .abs()
            .max(rate * grid.tau as f64);
        let excess = (ours - grid.objective) / step;
        worst_excess = worst_excess.max(excess);

        let sel = sol.selected();
        let residual = match sel.case {
            KktCase::EnergyBinding => sel.energy_residual.abs(),
            KktCase::DelayBinding => sel.delay_residual.abs(),
            KktCase::BothBinding => sel.energy_residual.abs().max(sel.delay_residual.abs()),
            KktCase::MinTau | KktCase::SingleRound => {
                sel.energy_residual.abs().min(sel.delay_residual.abs())
            }
        };
        worst_residual = worst_residual.max(residual);

        let feasible = costs.usage(sched.tau as f64, sched.k as f64).feasible();
        if !feasible || ours < grid.objective || excess > 1.0 || residual >= 1e-9 {
            failures.push(format!(
                "set {sets}: ours ({},{}) {ours:.4}, grid ({},{}) {:.4}, residual {residual:.1e}",
                sched.tau, sched.k, grid.tau, grid.k, grid.objective
            ));
        }
    }
    let detail = format!(
        "100 sets ({draws} draws); worst degradation {worst_excess:.3} unit steps; worst binding residual {worst_residual:.1e}"
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join(" | ")))
    }
}

fn c4_energy_binding() -> Verdict {
    let mut params = straggler_params(false);
    params.t_tot = 1e9;
    let constants = ConvergenceConstants::for_solver(0.01, 0.1, 1000.0, 20);
    let sol = solve_closed_form(&params, &constants).map_err(|e| e.to_string())?;
    let sel = sol.selected();
    let energy = sol.costs.energy(sel.tau, sel.k);
    let ok = sel.case == KktCase::EnergyBinding
        && (sel.tau - 1.75380).abs() <= 1e-4
        && (sel.k - 84.5154).abs() <= 1e-4
        && (energy - 1500.0).abs() <= 1e-6;
    check(
        ok,
        format!(
            "{} at tau={:.6}, K={:.6}, energy {energy:.9} J",
            sel.case, sel.tau, sel.k
        ),
    )
}

fn c5_fedavg_equals_gd() -> Verdict {
    let eta = 0.1;
    let mut worst = 0.0_f64;
    let mut runs = 0;
    for seed in [1u64, 2, 3] {
        let data = desk_data(seed);
        for kind in [
            LossKind::LogLoss,
            LossKind::Hinge,
            LossKind::MeanSquaredError,
        ] {
            let model = LossModel::new(kind);
            let mut central = vec![ParamVector::zeros(data.dim())];
            for t in 0..200 {
                let mut w = central[t].clone();
                w.axpy(-eta, &model.gradient(&w, &data).unwrap());
                central.push(w);
            }
            for scheme in [PartitionScheme::Iid, PartitionScheme::LabelSorted] {
                for n in [1usize, 2, 5, 10] {
                    let p = partition(&data, n, scheme, seed).unwrap();
                    let mut res = straggler_params(false);
                    res.n_clients = n;
                    let traj = run_schedule(
                        &Schedule::new(1, 200).unwrap(),
                        &p,
                        &model,
                        &ParamVector::zeros(data.dim()),
                        &res,
                        &RunSettings::new(eta),
                        None,
                    )
                    .map_err(|e| e.to_string())?;
                    for r in &traj.rounds {
                        let d = r.params.sub(&central[r.step]);
                        worst = d.as_slice().iter().fold(worst, |m, v| m.max(v.abs()));
                    }
                    runs += 1;
                }
            }
        }
    }
    check(
        worst < 1e-12,
        format!("{runs} runs of 200 steps; max coordinate difference {worst:.2e}"),
    )
}

fn c6_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let delta = rng.random_range(0.0..3.0);
        let constants = ConvergenceConstants {
            rho: rng.random_range(0.01..10.0),
            beta: 0.0,
            eta: rng.random_range(0.001..1.0),
            delta_i: vec![delta],
            delta,
            grad_f_star: rng.random_range(0.01..10.0),
            epsilon: rng.random_range(0.01..2.0),
            tau_max: 20,
        };
        let tau = rng.random_range(1..=20) as f64;
        let x = 10f64.powf(rng.random_range(-6.0..0.0));
        let t = min_trainings_for_gap(x, &constants, tau, delta).map_err(|e| e.to_string())?;
        let back = loss_gap_bound_with_divergence(t, tau, delta, &constants)
            .value()
            .ok_or("bound not applicable at the returned T")?;
        worst = worst.max((back / x - 1.0).abs());
    }
    check(
        worst < 1e-9,
        format!("max relative error {worst:.2e} over 20 targets"),
    )
}

fn c7_divergence_ordering() -> Verdict {
    let eta = 0.1;
    let model = LossModel::new(LossKind::LogLoss);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=10u64 {
        let data = desk_data(seed);
        // shared probes: the centralized descent path on the pooled data
        let mut probes = vec![ParamVector::zeros(data.dim())];
        for t in 0..50 {
            let mut w = probes[t].clone();
            w.axpy(-eta, &model.gradient(&w, &data).unwrap());
            probes.push(w);
        }
        let inputs = EstimateInputs {
            eta,
            epsilon: 0.1,
            tau_max: 20,
        };
        let delta = |scheme| {
            let p = partition(&data, 5, scheme, seed).unwrap();
            estimate_constants(&model, &p, &probes, inputs)
                .unwrap()
                .delta
        };
        let (skewed, iid) = (
            delta(PartitionScheme::LabelSorted),
            delta(PartitionScheme::Iid),
        );
        if skewed > iid {
            wins += 1;
        }
        pairs.push(format!("{skewed:.3}/{iid:.3}"));
    }
    check(
        wins >= 9,
        format!(
            "label-sorted > iid in {wins}/10 seeds (delta {})",
            pairs.join(" ")
        ),
    )
}

fn c8_schedule_benefit() -> Verdict {
    let config = ExperimentConfig::load(&config_path("desk_label_sorted.toml"))
        .map_err(|e| e.to_string())?;
    let taus = sweep_taus(&config);
    let (mut u_shapes, mut close) = (0, 0);
    let mut notes = Vec::new();
    for seed in 1..=5u64 {
        let sweep = run_sweep(&config, seed, &taus, true).map_err(|e| e.to_string())?;
        let runs = sweep.summaries();
        let loss_at = |tau: usize| {
            runs.iter()
                .find(|r| r.schedule.tau == tau)
                .map(|r| r.final_loss)
        };
        let (first, last) = (
            loss_at(1).ok_or("tau=1 infeasible")?,
            loss_at(config.tau_max).ok_or("tau_max infeasible")?,
        );
        let interior = runs
            .iter()
            .filter(|r| r.schedule.tau > 1 && r.schedule.tau < config.tau_max)
            .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss))
            .ok_or("no interior tau")?;
        if interior.final_loss < first && interior.final_loss < last {
            u_shapes += 1;
        }

        let cmp = run_compare(&config, seed, true).map_err(|e| e.to_string())?;
        let best = cmp.best_baseline_loss();
        let opt = cmp.optimized();
        if opt.final_loss <= best * 1.05 {
            close += 1;
        }
        notes.push(format!(
            "seed {seed}: best interior tau={} ({:.5}) vs {first:.5}/{last:.5}, optimized tau={} {:.5} vs baseline {best:.5}",
            interior.schedule.tau, interior.final_loss, opt.schedule.tau, opt.final_loss
        ));
    }
    check(
        u_shapes >= 4 && close >= 4,
        format!(
            "U-shape {u_shapes}/5, optimized within 5% {close}/5; {}",
            notes.join("; ")
        ),
    )
}

fn fedsched(args: &[&str]) -> Result<(Vec<u8>, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fedsched"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    if !out.status.success() {
        return Err(format!("fedsched {}: {stderr}", args.join(" ")));
    }
    Ok((out.stdout, stderr))
}

fn c9_reference_note() -> Verdict {
    let mut details = Vec::new();
    for (file, tau) in [
        ("reference_svm_iid.toml", 17),
        ("reference_svm_non_iid.toml", 10),
    ] {
        let path = config_path(file);
        let (csv, table) = fedsched(&["solve", "--config", path.to_str().unwrap()])?;
        let csv = String::from_utf8_lossy(&csv);
        let ok = csv.starts_with("case,tau,K,I1,feasible")
            && table.contains("case")
            && table.contains(&format!("reference tau={tau}"))
            && table.contains("note:");
        if !ok {
            return Err(format!("{file}: missing candidate table or note"));
        }
        let line = table
            .lines()
            .find(|l| l.starts_with("reference"))
            .unwrap_or_default();
        details.push(format!("{file}: {line}"));
    }
    Ok(details.join("; "))
}

fn c10_determinism() -> Verdict {
    let dir = std::env::temp_dir().join(format!("fedsched-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let desk = config_path("desk_label_sorted.toml");
    let table = config_path("reference_svm_iid.toml");
    let jobs = [
        ("solve", &table),
        ("simulate", &desk),
        ("sweep", &desk),
        ("bounds", &desk),
        ("compare", &desk),
    ];
    let mut checked = Vec::new();
    for (command, config) in jobs {
        let mut outputs = Vec::new();
        for round in 0..2 {
            let out = dir.join(format!("{command}-{round}.csv"));
            fedsched(&[
                command,
                "--config",
                config.to_str().unwrap(),
                "--seed",
                "3",
                "--out",
                out.to_str().unwrap(),
            ])?;
            outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
            let summary = dir.join(format!("{command}-{round}_summary.csv"));
            if let Ok(bytes) = std::fs::read(&summary) {
                outputs.push(bytes);
            }
        }
        let half = outputs.len() / 2;
        if outputs[..half] != outputs[half..] {
            return Err(format!("{command} output differs between invocations"));
        }
        checked.push(command);
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("byte-identical CSV for {}", checked.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("I0 closed form", c1_i0, None),
        ("straggler delay bound", c2_straggler_bound, Some(5)),
        ("closed form vs grid oracle", c3_solver_vs_grid, Some(30)),
        ("energy-binding candidate", c4_energy_binding, None),
        (
            "tau=1 FedAvg equals centralized GD",
            c5_fedavg_equals_gd,
            None,
        ),
        ("bound round trip", c6_round_trip, None),
        ("non-iid divergence ordering", c7_divergence_ordering, None),
        (
            "U-shape and schedule benefit",
            c8_schedule_benefit,
            Some(120),
        ),
        ("reference schedule note", c9_reference_note, None),
        ("determinism", c10_determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let verdict = run();
        let elapsed = start.elapsed();
        let verdict = match limit {
            Some(secs) => within_time(verdict, elapsed, Duration::from_secs(secs)),
            None => verdict,
        };
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if verdict.is_err() {
            failed += 1;
        }
        println!(
            "criterion {:>2} {tag} [{name}] {detail} ({:.2} s)",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
