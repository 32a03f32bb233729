//! PointMass: a 1-D mass accelerated by a bounded force toward the
//! origin.
//!
//! State is (position x, velocity v) with x0 ~ Uniform(-1, 1), v0 = 0.
//! Each step applies `v' = clamp(v + 0.1 a, -1, 1)` then
//! `x' = clamp(x + 0.1 v', -2, 2)` and pays reward `-x'^2`. Episodes end
//! after a fixed number of steps. Actions outside [-1, 1] are clamped
//! silently so unbounded Gaussian policy samples are always legal.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Action, ActionSpec, Env, StepResult};

pub struct PointMassEnv {
    episode_steps: usize,
    x: f64,
    v: f64,
    steps_taken: usize,
    terminal: bool,
}

pub const DT: f64 = 0.1;
pub const X_LIMIT: f64 = 2.0;
pub const V_LIMIT: f64 = 1.0;

/// One dynamics step shared with the grid oracle.
pub fn transition(x: f64, v: f64, a: f64) -> (f64, f64, f64) {
    let a = a.clamp(-1.0, 1.0);
    let v_next = (v + DT * a).clamp(-V_LIMIT, V_LIMIT);
    let x_next = (x + DT * v_next).clamp(-X_LIMIT, X_LIMIT);
    (x_next, v_next, -x_next * x_next)
}

impl PointMassEnv {
    pub fn new(episode_steps: usize) -> Result<Self> {
        if episode_steps < 1 {
            return Err(Error::Config("pointmass episode_steps < 1".into()));
        }
        Ok(PointMassEnv {
            episode_steps,
            x: 0.0,
            v: 0.0,
            steps_taken: 0,
            terminal: true,
        })
    }

    pub fn state(&self) -> (f64, f64) {
        (self.x, self.v)
    }
}

impl Env for PointMassEnv {
    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Continuous { dims: 1, low: vec![-1.0], high: vec![1.0] }
    }

    fn observation_size(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = rng.random_range(-1.0..1.0);
        self.v = 0.0;
        self.steps_taken = 0;
        self.terminal = false;
        vec![self.x, self.v]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::Usage("step called on a terminal episode".into()));
        }
        let a = match action {
            Action::Continuous(v) if v.len() == 1 && v[0].is_finite() => v[0],
            _ => return Err(Error::Usage(format!("invalid pointmass action {action:?}"))),
        };
        let (x, v, reward) = transition(self.x, self.v, a);
        self.x = x;
        self.v = v;
        self.steps_taken += 1;
        self.terminal = self.steps_taken == self.episode_steps;
        Ok(StepResult {
            observation: vec![self.x, self.v],
            reward,
            terminal: self.terminal,
            executed: Action::Continuous(vec![a.clamp(-1.0, 1.0)]),
        })
    }
}
