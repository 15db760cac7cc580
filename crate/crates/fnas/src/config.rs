//! Experiment configuration: JSON in, validated and fully materialized
//! ("effective") config out.
//!
//! Unknown keys are rejected. Derived quantities that matter for
//! reproducibility — the latency cost table and the surrogate weights — are
//! filled into the effective config, so re-running from an emitted
//! `effective-config.json` reproduces a run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::UacConfig;
use crate::error::{Error, Result};
use crate::eval::latency::CostTable;
use crate::eval::surrogate::SurrogateModel;
use crate::eval::RewardConfig;
use crate::policy::{PolicyConfig, PpoConfig};
use crate::pool;
use crate::space::SpaceSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModuleToggles {
    pub uac: bool,
    pub akp: bool,
    pub aeb: bool,
}

impl ModuleToggles {
    pub fn label(&self) -> String {
        let mut on = Vec::new();
        if self.uac {
            on.push("uac");
        }
        if self.akp {
            on.push("akp");
        }
        if self.aeb {
            on.push("aeb");
        }
        if on.is_empty() {
            "baseline".to_string()
        } else {
            on.join("+")
        }
    }

    pub fn all_combinations() -> Vec<ModuleToggles> {
        (0..8)
            .map(|m| ModuleToggles {
                uac: m & 1 != 0,
                akp: m & 2 != 0,
                aeb: m & 4 != 0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    /// Seeded logistic surrogate; weights are derived from the seed unless
    /// given explicitly.
    Surrogate {
        seed: u64,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        interactions: Option<Vec<(usize, usize, f64)>>,
    },
    /// Stored benchmark rows from a CSV file.
    Tabular { path: PathBuf },
    /// The toy trainer on the rings dataset.
    Toy {
        dataset_seed: u64,
        #[serde(default = "default_toy_epochs")]
        epochs: usize,
        #[serde(default = "default_toy_lr")]
        learning_rate: f64,
        #[serde(default = "default_toy_batch")]
        batch_size: usize,
        #[serde(default = "default_toy_train_points")]
        train_points: usize,
        #[serde(default = "default_toy_val_points")]
        val_points: usize,
    },
}

fn default_toy_epochs() -> usize {
    20
}
fn default_toy_lr() -> f64 {
    0.2
}
fn default_toy_batch() -> usize {
    64
}
fn default_toy_train_points() -> usize {
    2000
}
fn default_toy_val_points() -> usize {
    500
}

impl EvaluatorConfig {
    /// Comparability tag for ablation tables.
    pub fn tag(&self) -> String {
        match self {
            EvaluatorConfig::Surrogate { seed, noise_std, .. } => {
                format!("surrogate:{seed}:{noise_std}")
            }
            EvaluatorConfig::Tabular { path } => format!("tabular:{}", path.display()),
            EvaluatorConfig::Toy { dataset_seed, epochs, .. } => {
                format!("toy:{dataset_seed}:{epochs}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AkpConfig {
    pub tau_sim: f64,
    /// Canonical training iterations for pool fairness; None means "the
    /// evaluator's epoch count".
    pub canonical_iterations: Option<u64>,
}

impl Default for AkpConfig {
    fn default() -> Self {
        AkpConfig { tau_sim: pool::DEFAULT_TAU_SIM, canonical_iterations: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AebConfig {
    pub capacity: usize,
}

impl Default for AebConfig {
    fn default() -> Self {
        AebConfig { capacity: crate::replay::DEFAULT_CAPACITY }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferInputs {
    pub critic: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: SpaceSchema,
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub cost_table: Option<CostTable>,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub modules: ModuleToggles,
    #[serde(default)]
    pub uac: UacConfig,
    #[serde(default)]
    pub akp: AkpConfig,
    #[serde(default)]
    pub aeb: AebConfig,
    pub iterations: u64,
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub transfer: TransferInputs,
}

fn default_checkpoint_every() -> u64 {
    25
}

impl ExperimentConfig {
    /// A minimal config on the enumerable schema, used by tests and examples.
    pub fn enumerable_surrogate(seed: u64, iterations: u64) -> Self {
        ExperimentConfig {
            schema: SpaceSchema::enumerable_space(),
            evaluator: EvaluatorConfig::Surrogate {
                seed: 1,
                noise_std: 0.0,
                weights: None,
                interactions: None,
            },
            cost_table: None,
            reward: RewardConfig { target_latency: 8.0, alpha: -0.07 },
            ppo: PpoConfig::default(),
            policy: PolicyConfig::default(),
            modules: ModuleToggles::default(),
            uac: UacConfig::default(),
            akp: AkpConfig::default(),
            aeb: AebConfig::default(),
            iterations,
            seed,
            checkpoint_every: default_checkpoint_every(),
            transfer: TransferInputs::default(),
        }
    }

    /// Fills every derived field so the config is self-contained, then
    /// validates.
    pub fn resolve(mut self) -> Result<ExperimentConfig> {
        self.schema.validate()?;
        if self.cost_table.is_none() {
            self.cost_table = Some(CostTable::default_for(&self.schema));
        }
        if let EvaluatorConfig::Surrogate { seed, noise_std, weights, interactions } =
            &mut self.evaluator
        {
            if weights.is_none() || interactions.is_none() {
                let model = SurrogateModel::build(&self.schema, *seed, *noise_std);
                *weights = Some(model.weights);
                *interactions = Some(model.interactions);
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.reward.validate()?;
        self.ppo.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".to_string()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".to_string()));
        }
        if self.ppo.batch_size % 2 != 0 {
            return Err(Error::Config("batch_size must be even".to_string()));
        }
        if let Some(t) = &self.cost_table {
            t.validate(&self.schema)?;
        }
        if let EvaluatorConfig::Surrogate { weights, interactions, .. } = &self.evaluator {
            if let Some(w) = weights {
                if w.len() != self.schema.embedding_len() {
                    return Err(Error::Config(format!(
                        "surrogate weights have {} entries, embedding needs {}",
                        w.len(),
                        self.schema.embedding_len()
                    )));
                }
            }
            if let Some(pairs) = interactions {
                let n = self.schema.embedding_len();
                if pairs.iter().any(|(i, j, _)| *i >= n || *j >= n) {
                    return Err(Error::Config(
                        "surrogate interaction index out of range".to_string(),
                    ));
                }
            }
        }
        if let EvaluatorConfig::Toy { epochs, batch_size, train_points, val_points, .. } =
            &self.evaluator
        {
            if *epochs == 0 || *batch_size == 0 || *train_points == 0 || *val_points == 0 {
                return Err(Error::Config("toy evaluator sizes must be positive".to_string()));
            }
        }
        if !(self.uac.target_trusted_fraction >= 0.0 && self.uac.target_trusted_fraction <= 1.0) {
            return Err(Error::Config("target_trusted_fraction must be in [0, 1]".to_string()));
        }
        if self.aeb.capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".to_string()));
        }
        if !(self.akp.tau_sim > 0.0 && self.akp.tau_sim <= 1.0) {
            return Err(Error::Config("tau_sim must be in (0, 1]".to_string()));
        }
        Ok(())
    }

    /// Stable hash of the effective config; fences resumes and transfers.
    pub fn config_hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a config file and applies `--set key.path=value` overrides on the
/// fully defaulted tree, so every documented key can be overridden whether or
/// not the file spells it out.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let parsed: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("malformed config {}: {e}", path.display())))?;
    apply_overrides(parsed, overrides)
}

pub fn apply_overrides(
    config: ExperimentConfig,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return config.resolve();
    }
    let mut tree = serde_json::to_value(&config)?;
    for (path, raw) in overrides {
        set_path(&mut tree, path, raw)?;
    }
    let patched: ExperimentConfig = serde_json::from_value(tree)
        .map_err(|e| Error::Config(format!("override produced an invalid config: {e}")))?;
    patched.resolve()
}

fn set_path(tree: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let mut cursor = tree;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let map = cursor.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override path `{path}`: `{seg}` is not an object"))
        })?;
        let entry = map
            .get_mut(*seg)
            .ok_or_else(|| Error::Config(format!("override path `{path}`: no key `{seg}`")))?;
        if i == segments.len() - 1 {
            let value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            *entry = value;
        } else {
            cursor = entry;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_fills_cost_table_and_surrogate_weights() {
        let cfg = ExperimentConfig::enumerable_surrogate(1, 10).resolve().unwrap();
        assert!(cfg.cost_table.is_some());
        match &cfg.evaluator {
            EvaluatorConfig::Surrogate { weights, interactions, .. } => {
                assert_eq!(weights.as_ref().unwrap().len(), 24);
                assert_eq!(interactions.as_ref().unwrap().len(), 3);
            }
            _ => panic!("not a surrogate"),
        }
    }

    #[test]
    fn effective_config_round_trips_to_the_same_hash() {
        let cfg = ExperimentConfig::enumerable_surrogate(7, 25).resolve().unwrap();
        let text = cfg.to_pretty_json();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        let back = back.resolve().unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(
            ExperimentConfig::enumerable_surrogate(1, 10).resolve().unwrap(),
        )
        .unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("mystery".to_string(), serde_json::json!(1));
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn overrides_flip_exactly_one_key() {
        let base = ExperimentConfig::enumerable_surrogate(1, 10).resolve().unwrap();
        let patched = apply_overrides(
            base.clone(),
            &[("modules.uac".to_string(), "true".to_string())],
        )
        .unwrap();
        assert!(patched.modules.uac);
        // Everything else identical: flipping back reproduces the original.
        let restored = apply_overrides(
            patched,
            &[("modules.uac".to_string(), "false".to_string())],
        )
        .unwrap();
        assert_eq!(base, restored);
    }

    #[test]
    fn override_of_missing_key_is_rejected() {
        let base = ExperimentConfig::enumerable_surrogate(1, 10);
        let err = apply_overrides(base, &[("modules.nope".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn seed_override_parses_as_number() {
        let base = ExperimentConfig::enumerable_surrogate(1, 10);
        let patched =
            apply_overrides(base, &[("seed".to_string(), "99".to_string())]).unwrap();
        assert_eq!(patched.seed, 99);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = ExperimentConfig::enumerable_surrogate(1, 10);
        cfg.iterations = 0;
        assert!(cfg.resolve().is_err());

        let mut cfg = ExperimentConfig::enumerable_surrogate(1, 10);
        cfg.reward.target_latency = -2.0;
        assert!(cfg.resolve().is_err());

        let mut cfg = ExperimentConfig::enumerable_surrogate(1, 10);
        cfg.ppo.batch_size = 63;
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn toggle_labels() {
        assert_eq!(ModuleToggles::default().label(), "baseline");
        let all = ModuleToggles { uac: true, akp: true, aeb: true };
        assert_eq!(all.label(), "uac+akp+aeb");
        assert_eq!(ModuleToggles::all_combinations().len(), 8);
    }
}
