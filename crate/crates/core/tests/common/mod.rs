#![allow(dead_code)]

use std::path::PathBuf;

use fedsched::resource::CostModel;
use rand::Rng;

/// Largest `tau` and `K` the random budgets may admit, so a grid of this
/// size covers the whole feasible region.
pub const GRID: usize = 200;

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Random budgets whose feasible region is nonempty and lies inside
/// `[1, GRID]²`, plus a progress rate. Returns `None` for rejected draws.
pub fn random_costs<R: Rng>(rng: &mut R) -> Option<(CostModel, f64)> {
    let c = log_uniform(rng, 1e-3, 1.0);
    let t_cm = log_uniform(rng, 1e-2, 1.0);
    let e_tr = log_uniform(rng, 1e-2, 10.0);
    let e_cm = log_uniform(rng, 1e-2, 1.0);
    let costs = CostModel {
        delay_coefficient: c,
        t_cm,
        e_tr,
        e_cm,
        p_cm: 1.0,
        t_tot: (c + t_cm) * log_uniform(rng, 1.0, 400.0),
        e_tot: (e_tr + e_cm) * log_uniform(rng, 1.0, 400.0),
    };
    let rate = log_uniform(rng, 1e-3, 5.0);
    let inside = costs.usage(1.0, 1.0).feasible()
        && costs.max_k(1.0) <= GRID as f64
        && costs.max_tau_single_round() <= GRID as f64;
    inside.then_some((costs, rate))
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}
