//! Sticky-action wrapper: with probability `p` the previously executed
//! action is repeated instead of the requested one. The first step of
//! every episode always executes the requested action.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::derive_seed;

use super::{Action, ActionSpec, Env, StepResult};

pub struct StickyEnv {
    inner: Box<dyn Env>,
    p: f64,
    rng: ChaCha8Rng,
    seed: u64,
    episodes: u64,
    previous: Option<Action>,
}

impl StickyEnv {
    pub fn new(inner: Box<dyn Env>, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("sticky probability {p} outside [0, 1)")));
        }
        Ok(StickyEnv {
            inner,
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            episodes: 0,
            previous: None,
        })
    }
}

impl Env for StickyEnv {
    fn action_spec(&self) -> ActionSpec {
        self.inner.action_spec()
    }

    fn observation_size(&self) -> usize {
        self.inner.observation_size()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.previous = None;
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.episodes, seed]));
        self.episodes += 1;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let repeat = self.previous.is_some() && self.p > 0.0 && self.rng.random::<f64>() < self.p;
        let chosen = if repeat {
            self.previous.clone().unwrap()
        } else {
            action.clone()
        };
        let result = self.inner.step(&chosen)?;
        self.previous = Some(result.executed.clone());
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CatchEnv;

    fn boxed_catch() -> Box<dyn Env> {
        Box::new(CatchEnv::new(5, 10).unwrap())
    }

    #[test]
    fn zero_probability_is_a_pass_through() {
        let mut plain = CatchEnv::new(5, 10).unwrap();
        let mut sticky = StickyEnv::new(boxed_catch(), 0.0, 3).unwrap();
        for seed in 0..10 {
            assert_eq!(plain.reset(seed), sticky.reset(seed));
            for i in 0..10 {
                let a = Action::Discrete((i + seed as usize) % 3);
                assert_eq!(plain.step(&a).unwrap(), sticky.step(&a).unwrap());
            }
        }
    }

    #[test]
    fn probability_one_is_rejected() {
        assert!(StickyEnv::new(boxed_catch(), 1.0, 0).is_err());
    }

    #[test]
    fn first_step_always_executes_the_request() {
        let mut sticky = StickyEnv::new(boxed_catch(), 0.9, 11).unwrap();
        for seed in 0..30 {
            sticky.reset(seed);
            let r = sticky.step(&Action::Discrete(2)).unwrap();
            assert_eq!(r.executed, Action::Discrete(2));
        }
    }

    #[test]
    fn repeat_frequency_matches_probability() {
        // Over many steps, alternating requests so a repeat is always
        // observable as executed != requested.
        let mut sticky = StickyEnv::new(boxed_catch(), 0.25, 5).unwrap();
        let mut repeats = 0u64;
        let mut eligible = 0u64;
        let mut episode = 0u64;
        'outer: loop {
            sticky.reset(episode);
            episode += 1;
            let mut last_executed: Option<Action> = None;
            for i in 0..10 {
                let requested = match &last_executed {
                    Some(Action::Discrete(a)) => Action::Discrete((a + 1) % 3),
                    _ => Action::Discrete(i % 3),
                };
                let r = sticky.step(&requested).unwrap();
                if let Some(prev) = &last_executed {
                    eligible += 1;
                    if r.executed == *prev {
                        repeats += 1;
                    }
                }
                last_executed = Some(r.executed.clone());
                if eligible >= 100_000 {
                    break 'outer;
                }
                if r.terminal {
                    break;
                }
            }
        }
        let freq = repeats as f64 / eligible as f64;
        assert!((0.24..=0.26).contains(&freq), "repeat frequency {freq}");
    }
}
