//! Toy episodic environments behind one trait, plus a sticky-action
//! wrapper and a serializable descriptor from which any supported
//! environment can be reconstructed.

mod catch;
pub mod pointmass;
mod sticky;

pub use catch::CatchEnv;
pub use pointmass::PointMassEnv;
pub use sticky::StickyEnv;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single agent action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Declares the action interface of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpec {
    Discrete { n: usize },
    Continuous { dims: usize, low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSpec::Discrete { n } => {
                if *n < 2 {
                    return Err(Error::Config(format!("discrete action count {n} < 2")));
                }
            }
            ActionSpec::Continuous { dims, low, high } => {
                if *dims < 1 {
                    return Err(Error::Config("continuous action dims < 1".into()));
                }
                if low.len() != *dims || high.len() != *dims {
                    return Err(Error::Config("action bound lengths do not match dims".into()));
                }
                for (l, h) in low.iter().zip(high) {
                    if !(l < h) {
                        return Err(Error::Config(format!("action bounds [{l}, {h}] invalid")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Width of the action encoding fed to the dynamics function:
    /// one-hot for discrete, raw vector for continuous.
    pub fn encoded_len(&self) -> usize {
        match self {
            ActionSpec::Discrete { n } => *n,
            ActionSpec::Continuous { dims, .. } => *dims,
        }
    }

    pub fn encode(&self, action: &Action, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        match (self, action) {
            (ActionSpec::Discrete { n }, Action::Discrete(a)) => {
                if a >= n {
                    return Err(Error::Usage(format!("discrete action {a} out of range (n={n})")));
                }
                out.resize(*n, 0.0);
                out[*a] = 1.0;
            }
            (ActionSpec::Continuous { dims, .. }, Action::Continuous(v)) => {
                if v.len() != *dims {
                    return Err(Error::Usage(format!(
                        "continuous action has {} dims, expected {dims}",
                        v.len()
                    )));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::Usage("continuous action has non-finite entries".into()));
                }
                out.extend_from_slice(v);
            }
            _ => return Err(Error::Usage("action kind does not match action spec".into())),
        }
        Ok(())
    }

    /// The placeholder replayed for unroll steps past the end of an
    /// episode (its loss terms are masked out).
    pub fn null_action(&self) -> Action {
        match self {
            ActionSpec::Discrete { .. } => Action::Discrete(0),
            ActionSpec::Continuous { dims, .. } => Action::Continuous(vec![0.0; *dims]),
        }
    }

    pub fn clamp(&self, action: &mut Action) {
        if let (ActionSpec::Continuous { low, high, .. }, Action::Continuous(v)) = (self, action) {
            for ((x, &l), &h) in v.iter_mut().zip(low).zip(high) {
                *x = x.clamp(l, h);
            }
        }
    }
}

/// Outcome of one environment step. `executed` is the action that was
/// actually applied, which differs from the requested one under the
/// sticky wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub executed: Action,
}

pub trait Env {
    fn action_spec(&self) -> ActionSpec;
    fn observation_size(&self) -> usize;
    /// Starts a new episode and returns the initial observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

/// Environment family and construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Catch { width: usize, height: usize },
    PointMass { episode_steps: usize },
}

/// Everything needed to rebuild an identical environment, including the
/// sticky-action wrapper probability (0 means unwrapped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub kind: EnvKind,
    pub sticky_prob: f64,
}

impl EnvDescriptor {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            EnvKind::Catch { width, height } => {
                if *width < 3 {
                    return Err(Error::Config(format!("catch width {width} < 3")));
                }
                if *height < 2 {
                    return Err(Error::Config(format!("catch height {height} < 2")));
                }
            }
            EnvKind::PointMass { episode_steps } => {
                if *episode_steps < 1 {
                    return Err(Error::Config("pointmass episode_steps < 1".into()));
                }
            }
        }
        if !(0.0..1.0).contains(&self.sticky_prob) {
            return Err(Error::Config(format!(
                "sticky probability {} outside [0, 1)",
                self.sticky_prob
            )));
        }
        Ok(())
    }

    pub fn action_spec(&self) -> ActionSpec {
        match &self.kind {
            EnvKind::Catch { .. } => ActionSpec::Discrete { n: 3 },
            EnvKind::PointMass { .. } => ActionSpec::Continuous {
                dims: 1,
                low: vec![-1.0],
                high: vec![1.0],
            },
        }
    }

    pub fn observation_size(&self) -> usize {
        match &self.kind {
            EnvKind::Catch { width, height } => width * height,
            EnvKind::PointMass { .. } => 2,
        }
    }

    /// Constructs the described environment. `seed` feeds the wrapper's
    /// stickiness stream; per-episode randomness is supplied at `reset`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Env>> {
        self.validate()?;
        let inner: Box<dyn Env> = match &self.kind {
            EnvKind::Catch { width, height } => Box::new(CatchEnv::new(*width, *height)?),
            EnvKind::PointMass { episode_steps } => Box::new(PointMassEnv::new(*episode_steps)?),
        };
        if self.sticky_prob > 0.0 {
            Ok(Box::new(StickyEnv::new(inner, self.sticky_prob, seed)?))
        } else {
            Ok(inner)
        }
    }
}

/// Constructor matching the descriptor defaults for Catch.
pub fn catch_new(width: usize, height: usize, _seed: u64) -> Result<CatchEnv> {
    CatchEnv::new(width, height)
}

/// Constructor matching the descriptor defaults for PointMass.
pub fn pointmass_new(episode_len: usize, _seed: u64) -> Result<PointMassEnv> {
    PointMassEnv::new(episode_len)
}

/// Wraps any environment with sticky actions: with probability `p` the
/// previously executed action is repeated instead of the requested one.
pub fn sticky_wrap(env: Box<dyn Env>, p: f64, seed: u64) -> Result<StickyEnv> {
    StickyEnv::new(env, p, seed)
}
