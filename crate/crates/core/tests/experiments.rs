mod common;

use common::config_path;
use fedsched::harness::{run_compare, run_sweep, sweep_taus, ExperimentConfig};

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap()
}

#[test]
fn iid_optimized_schedule_tracks_best_baseline_on_average() {
    let config = load("desk_iid.toml");
    let (mut opt, mut base) = (0.0, 0.0);
    for seed in 1..=5 {
        let report = run_compare(&config, seed, true).unwrap();
        opt += report.optimized().final_loss;
        base += report.best_baseline_loss();
    }
    assert!(opt / 5.0 <= 1.05 * base / 5.0, "{opt} vs {base}");
}

#[test]
fn iid_sweep_best_tau_beats_single_step_rounds() {
    let config = load("desk_iid.toml");
    let taus = sweep_taus(&config);
    let mut votes = 0;
    for seed in 1..=5 {
        let runs = run_sweep(&config, seed, &taus, true).unwrap().summaries();
        let best = runs
            .iter()
            .map(|r| r.final_loss)
            .fold(f64::INFINITY, f64::min);
        let first = runs
            .iter()
            .find(|r| r.schedule.tau == 1)
            .unwrap()
            .final_loss;
        if best <= first {
            votes += 1;
        }
    }
    assert!(votes >= 3);
}

#[test]
fn enforced_sweeps_end_inside_the_budgets() {
    let config = load("desk_label_sorted.toml");
    let report = run_sweep(&config, 2, &sweep_taus(&config), true).unwrap();
    assert!(report.infeasible().is_empty());
    for r in report.summaries() {
        assert!(r.cum_delay_s <= config.t_tot * (1.0 + 1e-9), "{r:?}");
        assert!(r.cum_energy_j <= config.e_tot * (1.0 + 1e-9), "{r:?}");
    }
    // cumulative columns never decrease within a run
    let records = report.records();
    for pair in records.windows(2) {
        if pair[0].tau == pair[1].tau {
            assert!(pair[1].cum_delay_s >= pair[0].cum_delay_s);
            assert!(pair[1].cum_energy_j >= pair[0].cum_energy_j);
        }
    }
}

#[test]
fn shipped_configs_load() {
    for name in [
        "desk_iid.toml",
        "desk_label_sorted.toml",
        "reference_svm_iid.toml",
        "reference_svm_non_iid.toml",
    ] {
        let c = load(name);
        let text = c.to_toml().unwrap();
        assert_eq!(text.parse::<ExperimentConfig>().unwrap(), c, "{name}");
    }
}
