//! Trajectories and learning-target construction.
//!
//! A trajectory stores one episode: observations, the actions actually
//! executed, rewards, and optionally the search statistics recorded
//! while acting. Training samples unroll a model `unroll_steps` moves
//! from a start position, so each sample carries per-step policy,
//! value, and reward targets with validity masks for positions that
//! run past the end of the episode.
//!
//! Policy and root-value targets come from search statistics, either
//! the ones stored while acting or recomputed with a fresh search
//! against the current network. Which of the two a batch uses is drawn
//! per sample from the configured stored-data fraction. Value targets
//! are either n-step returns bootstrapped with the target network or
//! the search root value itself.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSpec, Env};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::search::{run_mcts, select_action, NetEvaluator, RootSource, SearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    SelfPlay,
    Dataset,
}

/// Root statistics saved at one position: the visit distribution over
/// candidates, the candidate actions when they were sampled rather
/// than enumerated, and the search value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredStats {
    pub dist: Vec<f64>,
    pub actions: Option<Vec<Action>>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub id: u64,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub stats: Vec<Option<StoredStats>>,
    pub source: TrajectorySource,
}

impl Trajectory {
    pub fn from_episode(
        id: u64,
        observations: Vec<Vec<f64>>,
        actions: Vec<Action>,
        rewards: Vec<f64>,
        terminal: bool,
        source: TrajectorySource,
    ) -> Result<Self> {
        let stats = vec![None; actions.len()];
        let traj = Self { id, observations, actions, rewards, terminal, stats, source };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if t == 0 {
            return Err(Error::Usage("trajectory has no steps".into()));
        }
        if self.observations.len() != t || self.rewards.len() != t || self.stats.len() != t {
            return Err(Error::Usage(format!(
                "trajectory arrays disagree: {} observations, {t} actions, {} rewards, {} stats",
                self.observations.len(),
                self.rewards.len(),
                self.stats.len()
            )));
        }
        let obs_size = self.observations[0].len();
        if self.observations.iter().any(|o| o.len() != obs_size) {
            return Err(Error::Usage("trajectory observations vary in size".into()));
        }
        Ok(())
    }

    /// Observation stack ending at position `t`, oldest first, zero
    /// padded before the episode start.
    pub fn obs_stack(&self, t: usize, stack: usize) -> Vec<f64> {
        stack_obs(&self.observations, t, stack)
    }

    pub fn return_sum(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn stack_obs(observations: &[Vec<f64>], t: usize, stack: usize) -> Vec<f64> {
    assert!(stack >= 1 && t < observations.len());
    let obs_size = observations[0].len();
    let mut out = vec![0.0; obs_size * stack];
    for slot in 0..stack {
        let age = stack - 1 - slot;
        if t >= age {
            out[slot * obs_size..(slot + 1) * obs_size]
                .copy_from_slice(&observations[t - age]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTargetMode {
    TdN,
    SearchValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    /// Share of training batches built from stored data with freshly
    /// recomputed targets rather than newly acted episodes.
    pub fraction: f64,
    pub value_target: ValueTargetMode,
    pub unroll_steps: usize,
    pub td_steps: usize,
    pub discount: f64,
    pub obs_stack: usize,
    /// Whether fresh root searches force the trajectory's executed
    /// action into the candidate set.
    pub inject_action: bool,
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config(format!("fraction {} outside [0, 1]", self.fraction)));
        }
        if self.unroll_steps < 1 || self.td_steps < 1 || self.obs_stack < 1 {
            return Err(Error::Config(
                "unroll_steps, td_steps, obs_stack must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config(format!("discount {} outside [0, 1]", self.discount)));
        }
        Ok(())
    }
}

/// Which statistics a sample's policy and root-value targets read:
/// the ones stored when the episode was acted, or a fresh search with
/// the current network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSource {
    Stored,
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Env,
    Stored,
}

/// Draws the per-sample batch source: stored data with probability
/// `fraction`, freshly acted episodes otherwise.
pub fn mix_sources(fraction: f64, rng: &mut ChaCha8Rng) -> SampleSource {
    if rng.random::<f64>() < fraction {
        SampleSource::Stored
    } else {
        SampleSource::Env
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyTarget {
    Dist(Vec<f64>),
    Sampled { actions: Vec<Action>, weights: Vec<f64> },
    Absent,
}

/// One unrolled training sample. Vectors indexed by unroll step k hold
/// K+1 entries for positions t..t+K (policy, value) and K entries for
/// the rewards predicted by dynamics steps 1..K. Masks mark which
/// entries are inside the episode; masked entries hold neutral
/// placeholders.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub obs_stack: Vec<f64>,
    pub actions: Vec<Action>,
    pub policy_targets: Vec<PolicyTarget>,
    pub value_targets: Vec<f64>,
    pub reward_targets: Vec<f64>,
    pub policy_mask: Vec<bool>,
    pub value_mask: Vec<bool>,
    pub reward_mask: Vec<bool>,
    pub behavior_actions: Vec<Option<Action>>,
    pub weight: f64,
    pub new_priority: Option<f64>,
}

/// Memoized target-network state values, keyed by trajectory id and
/// position. Must be cleared whenever the target network is replaced.
pub struct BootstrapCache {
    values: HashMap<(u64, usize), f64>,
    obs_stack: usize,
}

impl BootstrapCache {
    pub fn new(obs_stack: usize) -> Self {
        Self { values: HashMap::new(), obs_stack }
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }

    pub fn value(
        &mut self,
        traj: &Trajectory,
        position: usize,
        target_params: &ModelParams,
    ) -> Result<f64> {
        if let Some(&v) = self.values.get(&(traj.id, position)) {
            return Ok(v);
        }
        let stacked = traj.obs_stack(position, self.obs_stack);
        let v = target_params.state_value(&stacked)?;
        self.values.insert((traj.id, position), v);
        Ok(v)
    }
}

/// Value target for position `t`. In n-step mode this is the sum of
/// discounted rewards up to `td_steps` ahead plus a discounted
/// target-network bootstrap, truncated at the episode end with no
/// bootstrap beyond it. In search-value mode the caller supplies the
/// root value from the chosen statistics source.
pub fn compute_value_target(
    traj: &Trajectory,
    t: usize,
    config: &TargetConfig,
    target_params: &ModelParams,
    cache: &mut BootstrapCache,
    search_value: Option<f64>,
) -> Result<f64> {
    if t >= traj.len() {
        return Err(Error::Usage(format!(
            "value target position {t} outside trajectory of length {}",
            traj.len()
        )));
    }
    match config.value_target {
        ValueTargetMode::SearchValue => search_value.ok_or_else(|| {
            Error::Usage(
                "search-value targets need root statistics; this position has none".into(),
            )
        }),
        ValueTargetMode::TdN => {
            let bootstrap_at = t + config.td_steps;
            let horizon = bootstrap_at.min(traj.len());
            let mut z = 0.0;
            let mut coeff = 1.0;
            for i in t..horizon {
                z += coeff * traj.rewards[i];
                coeff *= config.discount;
            }
            if bootstrap_at < traj.len() {
                z += coeff * cache.value(traj, bootstrap_at, target_params)?;
            }
            Ok(z)
        }
    }
}

/// Recomputes root statistics at one position with a fresh search
/// against `params`. Reads only the observation history up to `t` and
/// the executed action at `t`, never anything later in the episode.
pub fn reanalyse_position(
    traj: &Trajectory,
    t: usize,
    params: &ModelParams,
    search_config: &SearchConfig,
    inject_action: bool,
    obs_stack: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StoredStats> {
    let stacked = traj.obs_stack(t, obs_stack);
    let evaluator = NetEvaluator::new(params, search_config.action_samples);
    let injected = inject_action.then(|| traj.actions[t].clone());
    let result = run_mcts(
        RootSource::Observation(&stacked),
        &evaluator,
        search_config,
        rng,
        injected.as_ref(),
        true,
    )?;
    let actions = match params.spec.action_spec {
        ActionSpec::Discrete { .. } => None,
        ActionSpec::Continuous { .. } => Some(result.searched_actions),
    };
    Ok(StoredStats { dist: result.visit_dist, actions, value: result.root_value })
}

fn policy_target_of(stats: &StoredStats) -> PolicyTarget {
    match &stats.actions {
        Some(actions) => PolicyTarget::Sampled {
            actions: actions.clone(),
            weights: stats.dist.clone(),
        },
        None => PolicyTarget::Dist(stats.dist.clone()),
    }
}

/// Builds the unrolled sample starting at position `t`. `source` picks
/// where policy and root-value statistics come from; value targets in
/// n-step mode always bootstrap with `target_params`.
#[allow(clippy::too_many_arguments)]
pub fn build_training_sample(
    traj: &Trajectory,
    t: usize,
    config: &TargetConfig,
    search_config: &SearchConfig,
    source: StatsSource,
    params: &ModelParams,
    target_params: &ModelParams,
    cache: &mut BootstrapCache,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSample> {
    config.validate()?;
    if t >= traj.len() {
        return Err(Error::Usage(format!(
            "sample position {t} outside trajectory of length {}",
            traj.len()
        )));
    }
    let k_steps = config.unroll_steps;
    let len = traj.len();
    let null = params.spec.action_spec.null_action();

    let mut policy_targets = Vec::with_capacity(k_steps + 1);
    let mut value_targets = Vec::with_capacity(k_steps + 1);
    let mut policy_mask = Vec::with_capacity(k_steps + 1);
    let mut value_mask = Vec::with_capacity(k_steps + 1);
    let mut behavior_actions = Vec::with_capacity(k_steps + 1);
    let mut root_value = None;

    for k in 0..=k_steps {
        let pos = t + k;
        if pos < len {
            let stats = match source {
                StatsSource::Stored => traj.stats[pos].clone(),
                StatsSource::Fresh => Some(reanalyse_position(
                    traj,
                    pos,
                    params,
                    search_config,
                    config.inject_action,
                    config.obs_stack,
                    rng,
                )?),
            };
            let search_value = stats.as_ref().map(|s| s.value);
            if k == 0 {
                root_value = search_value;
            }
            policy_mask.push(stats.is_some());
            policy_targets.push(match &stats {
                Some(s) => policy_target_of(s),
                None => PolicyTarget::Absent,
            });
            value_targets.push(compute_value_target(
                traj,
                pos,
                config,
                target_params,
                cache,
                search_value,
            )?);
            value_mask.push(true);
            behavior_actions.push(Some(traj.actions[pos].clone()));
        } else {
            policy_mask.push(false);
            value_mask.push(false);
            policy_targets.push(PolicyTarget::Absent);
            value_targets.push(0.0);
            behavior_actions.push(None);
        }
    }

    let mut actions = Vec::with_capacity(k_steps);
    let mut reward_targets = Vec::with_capacity(k_steps);
    let mut reward_mask = Vec::with_capacity(k_steps);
    for k in 1..=k_steps {
        let step_index = t + k - 1;
        if step_index < len {
            actions.push(traj.actions[step_index].clone());
            reward_targets.push(traj.rewards[step_index]);
            reward_mask.push(true);
        } else {
            actions.push(null.clone());
            reward_targets.push(0.0);
            reward_mask.push(false);
        }
    }

    // Priorities always measure the gap between the search value and
    // the n-step return, independent of which value target the loss
    // uses; under search-value targets the two would otherwise be
    // identical and every priority would collapse to the floor.
    let new_priority = match root_value {
        Some(v) => {
            let td_config = TargetConfig { value_target: ValueTargetMode::TdN, ..config.clone() };
            let z = compute_value_target(traj, t, &td_config, target_params, cache, None)?;
            Some((v - z).abs())
        }
        None => None,
    };

    Ok(TrainingSample {
        obs_stack: traj.obs_stack(t, config.obs_stack),
        actions,
        policy_targets,
        value_targets,
        reward_targets,
        policy_mask,
        value_mask,
        reward_mask,
        behavior_actions,
        weight: 1.0,
        new_priority,
    })
}

/// Plays one episode with search-guided action selection, recording
/// per-step root statistics for later target building.
pub fn act_episode(
    env: &mut dyn Env,
    params: &ModelParams,
    search_config: &SearchConfig,
    temperature: f64,
    obs_stack: usize,
    id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let seed = rng.random::<u64>();
    let mut observations = vec![env.reset(seed)];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut stats = Vec::new();
    let evaluator = NetEvaluator::new(params, search_config.action_samples);
    let sampled_actions = matches!(params.spec.action_spec, ActionSpec::Continuous { .. });

    loop {
        let t = observations.len() - 1;
        let stacked = stack_obs(&observations, t, obs_stack);
        let result = run_mcts(
            RootSource::Observation(&stacked),
            &evaluator,
            search_config,
            rng,
            None,
            true,
        )?;
        let choice = select_action(&result.visit_dist, temperature, rng);
        let action = result.searched_actions[choice].clone();
        stats.push(Some(StoredStats {
            dist: result.visit_dist,
            actions: sampled_actions.then(|| result.searched_actions.clone()),
            value: result.root_value,
        }));
        let step = env.step(&action)?;
        actions.push(step.executed);
        rewards.push(step.reward);
        if step.terminal {
            break;
        }
        observations.push(step.observation);
    }

    let traj = Trajectory {
        id,
        observations,
        actions,
        rewards,
        terminal: true,
        stats,
        source: TrajectorySource::SelfPlay,
    };
    traj.validate()?;
    Ok(traj)
}
