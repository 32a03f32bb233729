//! Catch: a ball falls one row per step down a `width x height` board
//! while a paddle on the bottom row moves left, stays, or moves right.
//!
//! The ball starts on the top row in a uniformly random column and the
//! paddle starts in the center column. An episode lasts exactly `height`
//! steps; every reward is 0 except the final step, which pays +1 when the
//! paddle column matches the ball column and -1 otherwise. Observations
//! are the flattened board with the ball clamped to the bottom row; ball
//! and paddle can only share a cell on that final row.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Action, ActionSpec, Env, StepResult};

pub struct CatchEnv {
    width: usize,
    height: usize,
    ball_col: usize,
    ball_row: usize,
    paddle_col: usize,
    steps_taken: usize,
    terminal: bool,
}

impl CatchEnv {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 3 {
            return Err(Error::Config(format!("catch width {width} < 3")));
        }
        if height < 2 {
            return Err(Error::Config(format!("catch height {height} < 2")));
        }
        Ok(CatchEnv {
            width,
            height,
            ball_col: 0,
            ball_row: 0,
            paddle_col: width / 2,
            steps_taken: 0,
            terminal: true,
        })
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.width * self.height];
        let ball_row = self.ball_row.min(self.height - 1);
        obs[ball_row * self.width + self.ball_col] = 1.0;
        obs[(self.height - 1) * self.width + self.paddle_col] = 1.0;
        obs
    }

    /// Internal coordinates (ball_row, ball_col, paddle_col), for oracles.
    pub fn state(&self) -> (usize, usize, usize) {
        (self.ball_row, self.ball_col, self.paddle_col)
    }
}

impl Env for CatchEnv {
    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Discrete { n: 3 }
    }

    fn observation_size(&self) -> usize {
        self.width * self.height
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ball_col = rng.random_range(0..self.width);
        self.ball_row = 0;
        self.paddle_col = self.width / 2;
        self.steps_taken = 0;
        self.terminal = false;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::Usage("step called on a terminal episode".into()));
        }
        let a = match action {
            Action::Discrete(a) if *a < 3 => *a,
            _ => return Err(Error::Usage(format!("invalid catch action {action:?}"))),
        };
        self.paddle_col = match a {
            0 => self.paddle_col.saturating_sub(1),
            1 => self.paddle_col,
            _ => (self.paddle_col + 1).min(self.width - 1),
        };
        self.ball_row += 1;
        self.steps_taken += 1;
        self.terminal = self.steps_taken == self.height;
        let reward = if self.terminal {
            if self.paddle_col == self.ball_col {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        Ok(StepResult {
            observation: self.observe(),
            reward,
            terminal: self.terminal,
            executed: action.clone(),
        })
    }
}
