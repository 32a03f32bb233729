//! Episode datasets on disk.
//!
//! A dataset is one JSON value per line: a header describing the
//! environment and generating policy, then one line per episode with
//! its raw observations, executed actions, and rewards. Floats survive
//! the round trip exactly, so values computed from a loaded dataset
//! are bitwise identical to values computed when it was written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSpec, EnvDescriptor, EnvKind};
use crate::error::{DatasetError, Error, Result};
use crate::eval::{max_value_action, sample_policy_action, EvalMode};
use crate::model::{load_checkpoint, ModelParams};
use crate::oracle::{CatchObsPolicy, PointMassController};
use crate::rng::derive_rng;
use crate::search::{run_mcts, select_action, NetEvaluator, RootSource, SearchConfig};
use crate::targets::{stack_obs, Trajectory, TrajectorySource};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub env: EnvDescriptor,
    pub action_spec: ActionSpec,
    pub obs_size: usize,
    pub episodes: usize,
    pub generator: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct EpisodeOut<'a> {
    observations: &'a [Vec<f64>],
    actions: &'a [Action],
    rewards: &'a [f64],
    terminal: bool,
}

#[derive(Deserialize)]
struct EpisodeIn {
    observations: Vec<Vec<f64>>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
    terminal: bool,
}

/// Writes a header plus one line per trajectory.
pub fn write_dataset(
    path: &Path,
    header: &DatasetHeader,
    trajectories: &[Trajectory],
) -> Result<()> {
    if header.episodes != trajectories.len() {
        return Err(Error::Dataset(DatasetError::HeaderMismatch(format!(
            "header declares {} episodes but {} were supplied",
            header.episodes,
            trajectories.len()
        ))));
    }
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, header)
        .map_err(|e| Error::Dataset(DatasetError::Malformed { line: 1, reason: e.to_string() }))?;
    out.write_all(b"\n")?;
    for traj in trajectories {
        let record = EpisodeOut {
            observations: &traj.observations,
            actions: &traj.actions,
            rewards: &traj.rewards,
            terminal: traj.terminal,
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| {
            Error::Dataset(DatasetError::Malformed { line: 0, reason: e.to_string() })
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn check_action(spec: &ActionSpec, action: &Action, line: usize) -> Result<()> {
    spec.encode(action, &mut Vec::new()).map_err(|e| {
        Error::Dataset(DatasetError::HeaderMismatch(format!(
            "action at line {line} does not fit the declared action spec: {e}"
        )))
    })?;
    Ok(())
}

/// Reads a dataset back into trajectories (ids are assigned by file
/// order, search statistics start empty). Diagnostics carry the
/// offending line number.
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Trajectory>)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header: DatasetHeader = match lines.next() {
        Some((_, Ok(text))) => serde_json::from_str(&text).map_err(|e| {
            Error::Dataset(DatasetError::Malformed { line: 1, reason: e.to_string() })
        })?,
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(Error::Dataset(DatasetError::Malformed {
                line: 1,
                reason: "file is empty".into(),
            }))
        }
    };
    if header.version != DATASET_VERSION {
        return Err(Error::Dataset(DatasetError::Version {
            found: header.version,
            expected: DATASET_VERSION,
        }));
    }

    let mut trajectories = Vec::with_capacity(header.episodes);
    for (index, line) in lines {
        let line_no = index + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: EpisodeIn = serde_json::from_str(&text).map_err(|e| {
            Error::Dataset(DatasetError::Malformed { line: line_no, reason: e.to_string() })
        })?;
        for obs in &record.observations {
            if obs.len() != header.obs_size {
                return Err(Error::Dataset(DatasetError::HeaderMismatch(format!(
                    "observation of size {} at line {line_no}, header declares {}",
                    obs.len(),
                    header.obs_size
                ))));
            }
        }
        for action in &record.actions {
            check_action(&header.action_spec, action, line_no)?;
        }
        let traj = Trajectory::from_episode(
            trajectories.len() as u64,
            record.observations,
            record.actions,
            record.rewards,
            record.terminal,
            TrajectorySource::Dataset,
        )
        .map_err(|e| {
            Error::Dataset(DatasetError::Malformed { line: line_no, reason: e.to_string() })
        })?;
        trajectories.push(traj);
    }

    if trajectories.len() != header.episodes {
        return Err(Error::Dataset(DatasetError::HeaderMismatch(format!(
            "header declares {} episodes but the file holds {}",
            header.episodes,
            trajectories.len()
        ))));
    }
    Ok((header, trajectories))
}

/// The behavior policy a dataset is generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    /// Uniform over the discrete actions.
    Random,
    /// Greedy Catch oracle, replaced by a uniform action with
    /// probability `epsilon`.
    EpsilonOracle { epsilon: f64 },
    /// Proportional-derivative controller for PointMass with optional
    /// Gaussian action noise.
    PdController { kp: f64, kd: f64, noise: f64 },
    /// A saved model driven in one of the evaluation modes.
    Checkpoint { path: String, mode: EvalMode },
}

impl PolicySpec {
    fn describe(&self) -> String {
        match self {
            PolicySpec::Random => "random".into(),
            PolicySpec::EpsilonOracle { epsilon } => format!("epsilon_oracle({epsilon})"),
            PolicySpec::PdController { kp, kd, noise } => {
                format!("pd_controller(kp={kp}, kd={kd}, noise={noise})")
            }
            PolicySpec::Checkpoint { path, mode } => format!("checkpoint({path}, {mode:?})"),
        }
    }
}

struct BehaviorPolicy {
    spec: PolicySpec,
    oracle: Option<CatchObsPolicy>,
    controller: Option<PointMassController>,
    model: Option<ModelParams>,
    n_discrete: Option<usize>,
}

impl BehaviorPolicy {
    fn new(spec: &PolicySpec, desc: &EnvDescriptor) -> Result<Self> {
        let mut policy = BehaviorPolicy {
            spec: spec.clone(),
            oracle: None,
            controller: None,
            model: None,
            n_discrete: None,
        };
        match spec {
            PolicySpec::Random => {
                let probe = desc.build(0)?;
                match probe.action_spec() {
                    ActionSpec::Discrete { n } => policy.n_discrete = Some(n),
                    ActionSpec::Continuous { .. } => {
                        return Err(Error::Config(
                            "random behavior policy requires a discrete action space".into(),
                        ))
                    }
                }
            }
            PolicySpec::EpsilonOracle { epsilon } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
                }
                match desc.kind {
                    EnvKind::Catch { width, height } => {
                        policy.oracle = Some(CatchObsPolicy::new(width, height));
                    }
                    _ => {
                        return Err(Error::Config(
                            "epsilon-oracle behavior policy only exists for Catch".into(),
                        ))
                    }
                }
            }
            PolicySpec::PdController { kp, kd, .. } => {
                if !matches!(desc.kind, EnvKind::PointMass { .. }) {
                    return Err(Error::Config(
                        "controller behavior policy only exists for PointMass".into(),
                    ));
                }
                policy.controller = Some(PointMassController::new(*kp, *kd));
            }
            PolicySpec::Checkpoint { path, .. } => {
                policy.model = Some(load_checkpoint(Path::new(path))?);
            }
        }
        Ok(policy)
    }

    fn obs_stack(&self) -> usize {
        self.model.as_ref().map_or(1, |m| m.spec.obs_stack)
    }

    fn act(
        &mut self,
        obs: &[f64],
        search_config: &SearchConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Action> {
        match &self.spec {
            PolicySpec::Random => {
                let n = self.n_discrete.expect("checked at construction");
                Ok(Action::Discrete(rng.random_range(0..n)))
            }
            PolicySpec::EpsilonOracle { epsilon } => {
                let oracle = self.oracle.as_mut().expect("checked at construction");
                let greedy = oracle.act(obs);
                if rng.random::<f64>() < *epsilon {
                    Ok(Action::Discrete(rng.random_range(0..3)))
                } else {
                    Ok(Action::Discrete(greedy))
                }
            }
            PolicySpec::PdController { noise, .. } => {
                let controller = self.controller.as_ref().expect("checked at construction");
                let mut a = controller.act(obs[0], obs[1]);
                if *noise > 0.0 {
                    a += Normal::new(0.0, *noise).expect("finite noise").sample(rng);
                }
                Ok(Action::Continuous(vec![a.clamp(-1.0, 1.0)]))
            }
            PolicySpec::Checkpoint { mode, .. } => {
                let params = self.model.as_ref().expect("checked at construction");
                match mode {
                    EvalMode::PolicySample => sample_policy_action(params, obs, rng),
                    EvalMode::MaxValue => max_value_action(params, obs, search_config, rng),
                    EvalMode::Mcts => {
                        let evaluator = NetEvaluator::new(params, search_config.action_samples);
                        let result = run_mcts(
                            RootSource::Observation(obs),
                            &evaluator,
                            search_config,
                            rng,
                            None,
                            false,
                        )?;
                        let index = select_action(&result.visit_dist, 0.0, rng);
                        Ok(result.searched_actions[index].clone())
                    }
                }
            }
        }
    }
}

/// Rolls the behavior policy for `episodes` episodes and writes the
/// dataset to `path`. Sticky environments record the executed action,
/// not the intended one.
pub fn generate_behavior_dataset(
    desc: &EnvDescriptor,
    policy: &PolicySpec,
    episodes: usize,
    seed: u64,
    search_config: &SearchConfig,
    path: &Path,
) -> Result<DatasetHeader> {
    if episodes == 0 {
        return Err(Error::Config("a dataset needs at least one episode".into()));
    }
    let mut behavior = BehaviorPolicy::new(policy, desc)?;
    let obs_stack = behavior.obs_stack();
    let mut env = desc.build(seed)?;
    let mut rng = derive_rng(seed, &[0xda7a]);
    let mut trajectories = Vec::with_capacity(episodes);

    for id in 0..episodes {
        let mut observations = vec![env.reset(rng.random())];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut terminal = false;
        for t in 0.. {
            let stacked = stack_obs(&observations, t, obs_stack);
            let action = behavior.act(&stacked, search_config, &mut rng)?;
            let step = env.step(&action)?;
            actions.push(step.executed);
            rewards.push(step.reward);
            if step.terminal {
                terminal = true;
                break;
            }
            observations.push(step.observation);
        }
        trajectories.push(Trajectory::from_episode(
            id as u64,
            observations,
            actions,
            rewards,
            terminal,
            TrajectorySource::Dataset,
        )?);
    }

    let probe = desc.build(0)?;
    let header = DatasetHeader {
        version: DATASET_VERSION,
        env: desc.clone(),
        action_spec: probe.action_spec(),
        obs_size: probe.observation_size(),
        episodes,
        generator: policy.describe(),
        seed,
    };
    write_dataset(path, &header, &trajectories)?;
    Ok(header)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub episodes: usize,
    pub positions: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    /// Ten equal-width bins spanning `[min_return, max_return]`.
    pub histogram: Vec<usize>,
}

pub fn dataset_stats(trajectories: &[Trajectory]) -> Result<DatasetStats> {
    if trajectories.is_empty() {
        return Err(Error::Usage("dataset has no episodes".into()));
    }
    let returns: Vec<f64> = trajectories.iter().map(Trajectory::return_sum).collect();
    let positions = trajectories.iter().map(Trajectory::len).sum();
    let min = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut histogram = vec![0usize; 10];
    let span = max - min;
    for &r in &returns {
        let bin = if span == 0.0 {
            0
        } else {
            (((r - min) / span * 10.0) as usize).min(9)
        };
        histogram[bin] += 1;
    }
    Ok(DatasetStats {
        episodes: returns.len(),
        positions,
        mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
        min_return: min,
        max_return: max,
        histogram,
    })
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "episodes {}  positions {}  return mean {:.4} min {:.4} max {:.4}",
            self.episodes, self.positions, self.mean_return, self.min_return, self.max_return
        )?;
        write!(f, "histogram")?;
        for count in &self.histogram {
            write!(f, " {count}")?;
        }
        Ok(())
    }
}
