//! Flat `key = value` experiment files.
//!
//! Keys follow the usual symbols of the system model: `N`, `mu`, `a`,
//! `t_cm`, `P_cm`, `E_tr`, `t_tot`, `E_tot`, `eta`, `rho`, `grad_F_star`,
//! `epsilon`, `tau_max`, `tau`, `K`. Everything has a default, so an empty
//! file is a valid desk-scale experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    load_idx_dataset, synthetic_blobs, ClientDataset, LossKind, LossModel, PartitionScheme,
    SyntheticSpec,
};
use crate::resource::{CommDelay, ResourceParams, TrainingEnergy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    #[default]
    Simulate,
    Sweep,
    Bounds,
    Compare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::Bounds => "bounds",
            Mode::Compare => "compare",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    /// Charge the expected straggler delay every round.
    #[default]
    Expected,
    /// Draw the straggler delay every round.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,

    pub model: LossKind,
    pub l2: f64,

    pub dataset: DatasetSource,
    pub samples: usize,
    pub dim: usize,
    pub separation: f64,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub idx_subset: Option<usize>,
    /// Fraction of samples held out for accuracy; `0` scores on training data.
    pub holdout: f64,

    pub partition: PartitionScheme,
    #[serde(rename = "N")]
    pub n_clients: usize,

    pub eta: f64,
    /// When absent, `rho` and `grad_F_star` are estimated from a probe run.
    pub rho: Option<f64>,
    #[serde(rename = "grad_F_star")]
    pub grad_f_star: Option<f64>,
    pub epsilon: f64,
    pub tau_max: usize,

    pub mu: f64,
    pub a: f64,
    /// Draw per-client floors `a_i` from `U[a/2, a]`.
    pub heterogeneous_a: bool,
    pub t_cm: f64,
    #[serde(rename = "P_cm")]
    pub p_cm: f64,
    #[serde(rename = "E_tr")]
    pub e_tr: f64,
    pub t_tot: f64,
    #[serde(rename = "E_tot")]
    pub e_tot: f64,

    /// Fixed schedule for `simulate` and `bounds`; the solver fills gaps.
    pub tau: Option<usize>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    /// `tau` grid for `sweep`; empty means `1..=tau_max`.
    pub tau_values: Vec<usize>,
    pub delay: DelayMode,
    pub enforce_budget: bool,

    /// Known optimum for this setting, printed next to the solver output.
    pub reference_tau: Option<usize>,
    pub note: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Simulate,
            seed: 1,
            model: LossKind::LogLoss,
            l2: 0.0,
            dataset: DatasetSource::Synthetic,
            samples: 1000,
            dim: 10,
            separation: 2.0,
            idx_images: None,
            idx_labels: None,
            idx_subset: None,
            holdout: 0.0,
            partition: PartitionScheme::LabelSorted,
            n_clients: 5,
            eta: 0.1,
            rho: None,
            grad_f_star: None,
            epsilon: 0.1,
            tau_max: 20,
            mu: 300.0,
            a: 0.002,
            heterogeneous_a: false,
            t_cm: 0.14,
            p_cm: 1.5,
            e_tr: 0.05,
            t_tot: 100.0,
            e_tot: 50.0,
            tau: None,
            k: None,
            tau_values: Vec::new(),
            delay: DelayMode::Expected,
            enforce_budget: false,
            reference_tau: None,
            note: None,
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative IDX paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for p in [&mut config.idx_images, &mut config.idx_labels]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("mu", self.mu),
            ("a", self.a),
            ("t_cm", self.t_cm),
            ("P_cm", self.p_cm),
            ("E_tr", self.e_tr),
            ("t_tot", self.t_tot),
            ("E_tot", self.e_tot),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("rho", self.rho), ("grad_F_star", self.grad_f_star)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!(
                        "{name} must be non-negative, got {v}"
                    )));
                }
            }
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("holdout must lie in [0, 1)".into()));
        }
        if self.n_clients == 0 || self.tau_max == 0 {
            return Err(Error::Config("N and tau_max must be at least 1".into()));
        }
        if self.tau == Some(0) || self.k == Some(0) || self.tau_values.contains(&0) {
            return Err(Error::Config("tau and K must be at least 1".into()));
        }
        match self.dataset {
            DatasetSource::Synthetic => {
                if self.samples < 2 || self.dim == 0 || !(self.separation >= 0.0) {
                    return Err(Error::Config(
                        "synthetic data needs samples >= 2, dim >= 1, separation >= 0".into(),
                    ));
                }
            }
            DatasetSource::Idx => {
                for (name, p) in [
                    ("idx_images", &self.idx_images),
                    ("idx_labels", &self.idx_labels),
                ] {
                    match p {
                        None => {
                            return Err(Error::Config(format!("{name} is required for idx data")))
                        }
                        Some(p) if !p.is_file() => {
                            return Err(Error::Config(format!("{name}: {} not found", p.display())))
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn loss_model(&self) -> Result<LossModel> {
        LossModel::with_l2(self.model, self.l2)
    }

    /// The whole dataset before holdout and partitioning.
    pub fn dataset(&self, seed: u64) -> Result<ClientDataset> {
        match self.dataset {
            DatasetSource::Synthetic => synthetic_blobs(&SyntheticSpec {
                n_samples: self.samples,
                dim: self.dim,
                separation: self.separation,
                seed,
            }),
            DatasetSource::Idx => {
                let missing = || Error::Config("idx paths missing".into());
                load_idx_dataset(
                    self.idx_images.as_deref().ok_or_else(missing)?,
                    self.idx_labels.as_deref().ok_or_else(missing)?,
                    self.idx_subset,
                )
            }
        }
    }

    pub fn resource_params(&self, seed: u64) -> Result<ResourceParams> {
        let params = ResourceParams {
            n_clients: self.n_clients,
            mu: self.mu,
            a: self.a,
            client_a: None,
            comm: CommDelay::Constant(self.t_cm),
            p_cm: self.p_cm,
            energy: TrainingEnergy::Constant(self.e_tr),
            t_tot: self.t_tot,
            e_tot: self.e_tot,
        };
        let params = if self.heterogeneous_a {
            params.with_heterogeneous_a(seed)
        } else {
            params
        };
        params.validate()?;
        Ok(params)
    }
}
