//! Flat experiment configuration.
//!
//! One TOML file (or nothing at all) configures an entire run; every
//! key has a default, and environment-dependent defaults (discount,
//! value and reward ranges, search budget, trajectory-action
//! injection) are filled in per environment at resolution time.
//! Command-line `--set key=value` overrides are applied on top of the
//! file before anything is parsed into typed form, so a single
//! mechanism covers both sources. Resolution produces the typed
//! sub-configurations the library consumes plus a fully explicit
//! echo of the flat config for reproducibility.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use muzero_core::env::{EnvDescriptor, EnvKind};
use muzero_core::error::{Error, Result};
use muzero_core::eval::EvalMode;
use muzero_core::model::{Arch, ModelSpec, ScalarSupport};
use muzero_core::replay::ReplayConfig;
use muzero_core::search::SearchConfig;
use muzero_core::targets::{TargetConfig, ValueTargetMode};
use muzero_core::train::{AdamConfig, CrrWeighting, LossMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: String,
    pub catch_width: usize,
    pub catch_height: usize,
    pub pointmass_steps: usize,
    pub sticky_prob: f64,
    pub seed: u64,

    pub blocks: usize,
    pub layers_per_block: usize,
    pub hidden: usize,
    pub obs_stack: usize,
    pub q_head: bool,

    pub num_simulations: Option<usize>,
    pub action_samples: usize,
    pub inject_action: Option<bool>,
    pub discount: Option<f64>,

    pub reanalyse_fraction: f64,
    pub value_target: ValueTargetMode,
    pub unroll_steps: usize,
    pub td_steps: usize,

    pub value_min: Option<f64>,
    pub value_max: Option<f64>,
    pub value_bins: Option<usize>,
    pub reward_min: Option<f64>,
    pub reward_max: Option<f64>,
    pub reward_bins: Option<usize>,

    pub replay_capacity: usize,
    pub max_subsequence: usize,
    pub priority_alpha: f64,
    pub priority_beta: f64,

    pub loss_mode: LossMode,
    pub batch_size: usize,
    pub max_steps: usize,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub target_update_period: usize,
    pub value_loss_weight: f64,
    pub crr_weighting: CrrWeighting,
    pub crr_beta: f64,
    pub scale_unroll_losses: bool,
    pub scale_dynamics_gradient: bool,

    pub temperature: f64,
    pub replay_ratio: f64,
    pub env_frame_budget: Option<usize>,
    pub dataset: Option<String>,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
    pub checkpoint_period: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "catch".into(),
            catch_width: 5,
            catch_height: 10,
            pointmass_steps: 50,
            sticky_prob: 0.0,
            seed: 0,

            blocks: 2,
            layers_per_block: 2,
            hidden: 64,
            obs_stack: 1,
            q_head: false,

            num_simulations: None,
            action_samples: 12,
            inject_action: None,
            discount: None,

            reanalyse_fraction: 0.0,
            value_target: ValueTargetMode::TdN,
            unroll_steps: 5,
            td_steps: 5,

            value_min: None,
            value_max: None,
            value_bins: None,
            reward_min: None,
            reward_max: None,
            reward_bins: None,

            replay_capacity: 2000,
            max_subsequence: 50,
            priority_alpha: 1.0,
            priority_beta: 1.0,

            loss_mode: LossMode::Reanalyse,
            batch_size: 128,
            max_steps: 20000,
            lr_init: 1e-4,
            weight_decay: 1e-4,
            target_update_period: 100,
            value_loss_weight: 1.0,
            crr_weighting: CrrWeighting::Binary,
            crr_beta: 1.0,
            scale_unroll_losses: true,
            scale_dynamics_gradient: true,

            temperature: 1.0,
            replay_ratio: 16.0,
            env_frame_budget: None,
            dataset: None,
            eval_episodes: 300,
            eval_mode: EvalMode::Mcts,
            checkpoint_period: 0,
        }
    }
}

/// Fully typed view of one experiment, ready for the runner.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// The flat config with every environment default filled in;
    /// serializing it reproduces this run exactly.
    pub flat: ExperimentConfig,
    pub env: EnvDescriptor,
    pub model: ModelSpec,
    pub search: SearchConfig,
    pub targets: TargetConfig,
    pub replay: ReplayConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub temperature: f64,
    pub replay_ratio: f64,
    pub env_frame_budget: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
    pub checkpoint_period: usize,
}

struct EnvDefaults {
    discount: f64,
    num_simulations: usize,
    inject_action: bool,
    value_range: (f64, f64, usize),
    reward_range: (f64, f64, usize),
}

impl ExperimentConfig {
    fn env_descriptor(&self) -> Result<EnvDescriptor> {
        let kind = match self.env.as_str() {
            "catch" => EnvKind::Catch { width: self.catch_width, height: self.catch_height },
            "pointmass" => EnvKind::PointMass { episode_steps: self.pointmass_steps },
            other => {
                return Err(Error::Config(format!(
                    "unknown env {other:?} (expected \"catch\" or \"pointmass\")"
                )))
            }
        };
        Ok(EnvDescriptor { kind, sticky_prob: self.sticky_prob })
    }

    fn env_defaults(&self, kind: &EnvKind) -> EnvDefaults {
        match kind {
            EnvKind::Catch { .. } => EnvDefaults {
                discount: 0.997,
                num_simulations: 50,
                inject_action: false,
                value_range: (-1.0, 1.0, 21),
                reward_range: (-1.0, 1.0, 21),
            },
            EnvKind::PointMass { episode_steps } => EnvDefaults {
                discount: 0.99,
                num_simulations: 20,
                inject_action: true,
                value_range: (-4.0 * (*episode_steps as f64), 0.0, 51),
                reward_range: (-4.0, 0.0, 21),
            },
        }
    }

    /// Fills environment defaults and produces the typed
    /// sub-configurations, validating each.
    pub fn resolve(&self) -> Result<Resolved> {
        let env = self.env_descriptor()?;
        let defaults = self.env_defaults(&env.kind);

        let mut flat = self.clone();
        flat.discount = Some(self.discount.unwrap_or(defaults.discount));
        flat.num_simulations = Some(self.num_simulations.unwrap_or(defaults.num_simulations));
        flat.inject_action = Some(self.inject_action.unwrap_or(defaults.inject_action));
        flat.value_min = Some(self.value_min.unwrap_or(defaults.value_range.0));
        flat.value_max = Some(self.value_max.unwrap_or(defaults.value_range.1));
        flat.value_bins = Some(self.value_bins.unwrap_or(defaults.value_range.2));
        flat.reward_min = Some(self.reward_min.unwrap_or(defaults.reward_range.0));
        flat.reward_max = Some(self.reward_max.unwrap_or(defaults.reward_range.1));
        flat.reward_bins = Some(self.reward_bins.unwrap_or(defaults.reward_range.2));
        let discount = flat.discount.unwrap();

        let probe = env.build(0)?;
        let model = ModelSpec {
            arch: Arch {
                blocks: self.blocks,
                layers_per_block: self.layers_per_block,
                hidden: self.hidden,
            },
            action_spec: probe.action_spec(),
            obs_size: probe.observation_size(),
            obs_stack: self.obs_stack,
            value_support: ScalarSupport::new(
                flat.value_min.unwrap(),
                flat.value_max.unwrap(),
                flat.value_bins.unwrap(),
            )?,
            reward_support: ScalarSupport::new(
                flat.reward_min.unwrap(),
                flat.reward_max.unwrap(),
                flat.reward_bins.unwrap(),
            )?,
            q_head: self.q_head,
        };
        model.validate()?;

        let mut search = SearchConfig::new(flat.num_simulations.unwrap(), discount);
        search.action_samples = self.action_samples;
        search.validate()?;

        let targets = TargetConfig {
            fraction: self.reanalyse_fraction,
            value_target: self.value_target,
            unroll_steps: self.unroll_steps,
            td_steps: self.td_steps,
            discount,
            obs_stack: self.obs_stack,
            inject_action: flat.inject_action.unwrap(),
        };
        targets.validate()?;

        let replay = ReplayConfig {
            capacity: self.replay_capacity,
            max_subsequence: self.max_subsequence,
            alpha: self.priority_alpha,
            beta: self.priority_beta,
            ..ReplayConfig::default()
        };
        replay.validate()?;

        let train = TrainConfig {
            loss_mode: self.loss_mode,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            lr_init: self.lr_init,
            adam: AdamConfig { weight_decay: self.weight_decay, ..AdamConfig::default() },
            target_update_period: self.target_update_period,
            scale_unroll_losses: self.scale_unroll_losses,
            scale_dynamics_gradient: self.scale_dynamics_gradient,
            value_loss_weight: self.value_loss_weight,
            crr_weighting: self.crr_weighting,
            crr_beta: self.crr_beta,
        };
        train.validate()?;

        if !(0.0..=1.0).contains(&self.sticky_prob) {
            return Err(Error::Config(format!(
                "sticky_prob {} outside [0, 1]",
                self.sticky_prob
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if !(self.replay_ratio > 0.0 && self.replay_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "replay_ratio {} must be a positive finite number",
                self.replay_ratio
            )));
        }
        let offline = self.reanalyse_fraction >= 1.0 || self.loss_mode != LossMode::Reanalyse;
        if offline && self.dataset.is_none() {
            return Err(Error::Config(
                "a run that never acts (reanalyse_fraction = 1 or a cloning loss) needs a dataset"
                    .into(),
            ));
        }

        Ok(Resolved {
            env,
            model,
            search,
            targets,
            replay,
            train,
            seed: self.seed,
            temperature: self.temperature,
            replay_ratio: self.replay_ratio,
            env_frame_budget: self.env_frame_budget,
            dataset: self.dataset.as_ref().map(PathBuf::from),
            eval_episodes: self.eval_episodes,
            eval_mode: self.eval_mode,
            checkpoint_period: self.checkpoint_period,
            flat,
        })
    }

    /// The flat config as TOML, suitable for rerunning the experiment.
    pub fn echo(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("could not serialize config: {e}")))
    }
}

fn parse_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (key, raw) = entry.split_once('=').ok_or_else(|| {
        Error::Config(format!("override {entry:?} is not of the form key=value"))
    })?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {entry:?} has an empty key")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed table has key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    table.insert(key.to_string(), value);
    Ok(())
}

/// Loads a config file (when given) and applies `key=value` overrides,
/// then parses the result. Unknown keys are rejected so typos fail
/// loudly.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for entry in overrides {
        parse_override(&mut table, entry)?;
    }
    ExperimentConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| Error::Config(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use muzero_core::env::ActionSpec;

    #[test]
    fn defaults_resolve_for_both_environments() {
        let catch = ExperimentConfig::default().resolve().unwrap();
        assert_eq!(catch.search.discount, 0.997);
        assert_eq!(catch.model.obs_size, 50);
        assert_eq!(catch.model.action_spec, ActionSpec::Discrete { n: 3 });
        assert!(!catch.targets.inject_action);
        assert_eq!(catch.model.value_support.bins, 21);

        let mut cfg = ExperimentConfig { env: "pointmass".into(), ..Default::default() };
        cfg.dataset = Some("unused.jsonl".into());
        cfg.loss_mode = LossMode::Bc;
        let pm = cfg.resolve().unwrap();
        assert_eq!(pm.search.discount, 0.99);
        assert_eq!(pm.model.obs_size, 2);
        assert!(pm.targets.inject_action);
        assert!(matches!(pm.model.action_spec, ActionSpec::Continuous { dims: 1, .. }));
        assert_eq!(pm.model.value_support.v_min, -200.0);
    }

    #[test]
    fn explicit_values_beat_environment_defaults() {
        let cfg = ExperimentConfig {
            discount: Some(0.5),
            num_simulations: Some(7),
            inject_action: Some(true),
            value_bins: Some(31),
            ..Default::default()
        };
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.search.discount, 0.5);
        assert_eq!(resolved.search.num_simulations, 7);
        assert!(resolved.targets.inject_action);
        assert_eq!(resolved.model.value_support.bins, 31);
        assert_eq!(resolved.flat.value_bins, Some(31));
        assert_eq!(resolved.flat.reward_bins, Some(21));
    }

    #[test]
    fn overrides_are_parsed_as_toml_values_with_string_fallback() {
        let cfg = load_config(
            None,
            &[
                "seed=9".into(),
                "lr_init=1e-4".into(),
                "env=pointmass".into(),
                "dataset=path/with/slashes.jsonl".into(),
                "q_head=true".into(),
                "loss_mode=\"crr\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lr_init, 1e-4);
        assert_eq!(cfg.env, "pointmass");
        assert_eq!(cfg.dataset.as_deref(), Some("path/with/slashes.jsonl"));
        assert!(cfg.q_head);
        assert_eq!(cfg.loss_mode, LossMode::Crr);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_config(None, &["lr_int=3e-3".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("lr_int"), "{err}");
    }

    #[test]
    fn file_plus_overrides_round_trip_through_the_echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "env = \"catch\"\nmax_steps = 123\nhidden = 16\n").unwrap();
        let cfg = load_config(Some(&path), &["max_steps=77".into()]).unwrap();
        assert_eq!(cfg.max_steps, 77);
        assert_eq!(cfg.hidden, 16);

        let resolved = cfg.resolve().unwrap();
        let echoed = resolved.flat.echo().unwrap();
        let reparsed: ExperimentConfig = toml::from_str(&echoed).unwrap();
        assert_eq!(reparsed, resolved.flat);
        assert_eq!(reparsed.resolve().unwrap().search.discount, 0.997);
    }

    #[test]
    fn offline_modes_require_a_dataset() {
        let cfg = ExperimentConfig { reanalyse_fraction: 1.0, ..Default::default() };
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
        let cfg = ExperimentConfig { loss_mode: LossMode::Bc, ..Default::default() };
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
        let cfg = ExperimentConfig {
            loss_mode: LossMode::Bc,
            dataset: Some("d.jsonl".into()),
            ..Default::default()
        };
        assert!(cfg.resolve().is_ok());
    }

    #[test]
    fn bad_env_name_is_a_config_error() {
        let cfg = ExperimentConfig { env: "chess".into(), ..Default::default() };
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("chess"), "{err}");
    }
}
