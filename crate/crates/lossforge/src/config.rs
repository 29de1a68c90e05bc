//! Scenario configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lossforge_core::features::{DEFAULT_KEEP_PROB, DEFAULT_NUM_MASKS};
use lossforge_core::trainer::DEFAULT_LEARNING_RATE;
use lossforge_core::Hypercube;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub const DEFAULT_SEED_COUNT: usize = 30;
pub const DEFAULT_RANDOM_SEARCH_BUDGET: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    HyperparamTuning,
    OnlineRegularizer,
    MixtureLoss,
    PerfectLinearRecovery,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::HyperparamTuning => "hyperparam_tuning",
            Scenario::OnlineRegularizer => "online_regularizer",
            Scenario::MixtureLoss => "mixture_loss",
            Scenario::PerfectLinearRecovery => "perfect_linear_recovery",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_examples: usize,
    pub dim: usize,
    pub classes: usize,
    /// Class means are drawn from `N(0, separation²/dim)` per coordinate.
    pub separation: f64,
    #[serde(default)]
    pub label_noise: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    #[default]
    Zscore,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        normalize: Normalize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSetting {
    Fixed(f64),
    Named(AutoEpsilon),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoEpsilon {
    Auto,
}

impl Default for EpsilonSetting {
    fn default() -> Self {
        EpsilonSetting::Named(AutoEpsilon::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Epochs per full training run.
    pub epochs: u64,
    /// Collect validation gradients and Jacobians for LearnLoss. Defaults
    /// to on for full-run scenarios and off for the online one.
    pub use_gradients: Option<bool>,
    pub epsilon: EpsilonSetting,
    pub dropout_keep_prob: f64,
    pub dropout_masks: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 20,
            use_gradients: None,
            epsilon: EpsilonSetting::default(),
            dropout_keep_prob: DEFAULT_KEEP_PROB,
            dropout_masks: DEFAULT_NUM_MASKS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    /// Standard deviation of the Gaussian noise added to the training inputs
    /// for the `augmented` component.
    pub noise: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig { noise: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    pub num_features: usize,
    /// Rows of each synthetic Jacobian.
    pub num_params: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig { num_features: 4, num_params: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    /// Feature names; see [`crate::harness::build_features`]. Defaults per
    /// scenario.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    /// `[lo, hi]` per feature name, or per group (`pwl`, `mixture`).
    #[serde(default)]
    pub feasible: BTreeMap<String, [f64; 2]>,
    /// TuneLoss iterations for full-run scenarios, total epochs for the
    /// online one, maximum observation count for recovery.
    pub budget: usize,
    #[serde(default)]
    pub random_search_budget: Option<usize>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub num_seeds: Option<usize>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub mixture: MixtureConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    /// Record wall-clock milliseconds in traces. Off keeps every output
    /// reproducible bit for bit.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub save_observations: bool,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // Relative dataset paths are resolved against the config file.
        if let (Some(DatasetConfig::Csv { path: data, .. }), Some(dir)) = (&mut config.dataset, path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(config_err("budget must be at least 1"));
        }
        if self.scenario == Scenario::OnlineRegularizer && self.budget < 2 {
            return Err(config_err("the online scenario needs a budget of at least 2 epochs (one bootstrap epoch plus one tuned epoch)"));
        }
        if self.random_search_budget == Some(0) {
            return Err(config_err("random_search_budget must be at least 1"));
        }
        if self.seeds.is_some() && self.num_seeds.is_some() {
            return Err(config_err("give either seeds or num_seeds, not both"));
        }
        if self.seeds().is_empty() {
            return Err(config_err("no seeds to run"));
        }
        for (name, [lo, hi]) in &self.feasible {
            Hypercube::new(vec![*lo], vec![*hi]).map_err(|e| config_err(format!("feasible range for {name}: {e}")))?;
        }
        let t = &self.trainer;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(config_err("learning_rate must be finite and non-negative"));
        }
        if t.epochs == 0 {
            return Err(config_err("trainer.epochs must be at least 1"));
        }
        if let EpsilonSetting::Fixed(e) = t.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(config_err("epsilon must be finite and non-negative"));
            }
        }
        if self.scenario == Scenario::PerfectLinearRecovery {
            if self.recovery.num_features < 2 {
                return Err(config_err("recovery.num_features must be at least 2"));
            }
        } else {
            match &self.dataset {
                None => return Err(config_err("this scenario needs a [dataset] section")),
                Some(DatasetConfig::Synthetic(s)) => {
                    if s.num_examples < 4 || s.dim == 0 || s.classes < 2 {
                        return Err(config_err("synthetic data needs num_examples >= 4, dim >= 1, classes >= 2"));
                    }
                    if !(s.separation >= 0.0 && s.separation.is_finite()) || !(0.0..=1.0).contains(&s.label_noise) {
                        return Err(config_err("separation must be >= 0 and label_noise in [0, 1]"));
                    }
                }
                Some(DatasetConfig::Csv { .. }) => {}
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.num_seeds) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (0..n as u64).collect(),
            (None, None) => (0..DEFAULT_SEED_COUNT as u64).collect(),
        }
    }

    pub fn random_search_budget(&self) -> usize {
        self.random_search_budget.unwrap_or(DEFAULT_RANDOM_SEARCH_BUDGET)
    }

    pub fn use_gradients(&self) -> bool {
        self.trainer.use_gradients.unwrap_or(matches!(self.scenario, Scenario::HyperparamTuning | Scenario::MixtureLoss))
    }

    pub fn feature_names(&self) -> Vec<String> {
        if let Some(f) = &self.features {
            return f.clone();
        }
        let names: &[&str] = match self.scenario {
            Scenario::HyperparamTuning => &["l1", "l2sq", "uniform", "dropout", "logloss"],
            Scenario::OnlineRegularizer => &["logloss", "pwl:50"],
            Scenario::MixtureLoss => &["mixture:train,augmented"],
            Scenario::PerfectLinearRecovery => &[],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}
