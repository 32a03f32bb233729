//! Policy evaluation.
//!
//! Rolls a policy out in a real environment for a fixed number of
//! episodes and reports undiscounted returns. A trained model can be
//! driven three ways: sampling the policy head directly, greedily
//! maximizing one-step model value, or running a full tree search per
//! step. Scores are optionally normalized against a random-policy and
//! a behavior-policy reference so different environments share a
//! scale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvDescriptor};
use crate::error::{Error, Result};
use crate::model::{ModelParams, PolicyOutput};
use crate::nn::{argmax, softmax};
use crate::rng::derive_rng;
use crate::search::{
    run_mcts, sample_root_actions, select_action, NetEvaluator, RootSource, SearchConfig,
};
use crate::targets::stack_obs;

const MAX_EPISODE_STEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    PolicySample,
    MaxValue,
    Mcts,
}

/// Evaluation draws actions near the policy mean; wide exploration
/// scales are capped so a barely trained head still produces a
/// readable score.
pub fn clamp_eval_scale(sigma: f64) -> f64 {
    sigma.min(0.05)
}

pub fn mean_return(returns: &[f64]) -> f64 {
    returns.iter().sum::<f64>() / returns.len() as f64
}

/// Runs `episodes` rollouts of an arbitrary action-selection rule and
/// returns each episode's undiscounted return. The rule sees the same
/// stacked observation the model would.
pub fn evaluate_policy(
    desc: &EnvDescriptor,
    episodes: usize,
    obs_stack: usize,
    seed: u64,
    select: &mut dyn FnMut(&[f64], &mut ChaCha8Rng) -> Result<Action>,
) -> Result<Vec<f64>> {
    let mut env = desc.build(seed)?;
    let mut rng = derive_rng(seed, &[0x45]);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut observations = vec![env.reset(rng.random())];
        let mut total = 0.0;
        for t in 0.. {
            if t >= MAX_EPISODE_STEPS {
                return Err(Error::Usage(format!(
                    "episode exceeded {MAX_EPISODE_STEPS} steps without terminating"
                )));
            }
            let stacked = stack_obs(&observations, t, obs_stack);
            let action = select(&stacked, &mut rng)?;
            let step = env.step(&action)?;
            total += step.reward;
            if step.terminal {
                break;
            }
            observations.push(step.observation);
        }
        returns.push(total);
    }
    Ok(returns)
}

pub(crate) fn sample_policy_action(
    params: &ModelParams,
    obs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    let latent = params.representation(obs)?;
    match params.predict(&latent)?.policy {
        PolicyOutput::Discrete { logits } => {
            let probs = softmax(&logits);
            let draw: f64 = rng.random();
            let mut cumulative = 0.0;
            let mut chosen = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                cumulative += p;
                if draw < cumulative {
                    chosen = i;
                    break;
                }
            }
            Ok(Action::Discrete(chosen))
        }
        PolicyOutput::Gaussian { mean, log_scale } => {
            let values = mean
                .iter()
                .zip(&log_scale)
                .map(|(&m, &ls)| {
                    let sigma = clamp_eval_scale(ls.clamp(-7.0, 2.0).exp());
                    Normal::new(m, sigma).expect("finite sigma").sample(rng)
                })
                .collect();
            let mut action = Action::Continuous(values);
            params.spec.action_spec.clamp(&mut action);
            Ok(action)
        }
    }
}

pub(crate) fn max_value_action(
    params: &ModelParams,
    obs: &[f64],
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    let latent = params.representation(obs)?;
    if params.spec.q_head {
        let q: Vec<f64> = params
            .predict_q(&latent)?
            .iter()
            .map(|logits| params.decode_value_logits(logits))
            .collect();
        return Ok(Action::Discrete(argmax(&q)));
    }
    let policy = params.predict(&latent)?.policy;
    let (candidates, _) = sample_root_actions(&policy, config.action_samples, rng);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut clamped = Vec::with_capacity(candidates.len());
    for (i, candidate) in candidates.into_iter().enumerate() {
        let mut action = candidate;
        params.spec.action_spec.clamp(&mut action);
        let (reward_logits, next) = params.dynamics(&latent, &action)?;
        let reward = params.decode_reward_logits(&reward_logits);
        let value = params.decode_value_logits(&params.predict(&next)?.value_logits);
        let score = reward + config.discount * value;
        if score > best_score {
            best_score = score;
            best = i;
        }
        clamped.push(action);
    }
    Ok(clamped.swap_remove(best))
}

/// Evaluates a trained model in one of the three modes. Tree search
/// runs without exploration noise and picks the visit-count argmax.
pub fn evaluate(
    params: &ModelParams,
    desc: &EnvDescriptor,
    episodes: usize,
    mode: EvalMode,
    search_config: &SearchConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let obs_stack = params.spec.obs_stack;
    let mut select = |obs: &[f64], rng: &mut ChaCha8Rng| -> Result<Action> {
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
    };
    evaluate_policy(desc, episodes, obs_stack, seed, &mut select)
}

/// Affine rescaling where the random reference maps to 0 and the
/// behavior reference to 1.
pub fn normalized_score(raw: f64, random_ref: f64, behavior_ref: f64) -> Result<f64> {
    let denom = behavior_ref - random_ref;
    if denom.abs() < 1e-9 {
        return Err(Error::Config(format!(
            "normalization references coincide: behavior {behavior_ref}, random {random_ref}"
        )));
    }
    Ok((raw - random_ref) / denom)
}
