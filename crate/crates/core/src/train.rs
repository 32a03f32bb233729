//! Losses and optimization.
//!
//! The main loss unrolls the model `K` steps from a stored position
//! and sums cross-entropies of the policy, value, and reward heads
//! against their targets, with two standard stabilizers: losses at
//! unroll steps past the root are scaled by `1 / K`, and the gradient
//! flowing back through each dynamics application is halved. Two
//! offline baselines reuse the heads: plain behavior cloning of the
//! policy, and advantage-weighted cloning where the weight comes from
//! a one-step advantage estimate under the target network. Updates are
//! decoupled-weight-decay Adam on a cosine learning-rate schedule, and
//! the target network is a periodic full copy of the parameters.

use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::model::{ModelParams, PolicyNodes};
use crate::nn::{GradStore, NodeId, ParamId, ParamSet, Tape};
use crate::targets::{PolicyTarget, TrainingSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Reanalyse,
    Bc,
    Crr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrrWeighting {
    Binary,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub batch_size: usize,
    pub max_steps: usize,
    pub lr_init: f64,
    pub adam: AdamConfig,
    pub target_update_period: usize,
    pub scale_unroll_losses: bool,
    pub scale_dynamics_gradient: bool,
    pub value_loss_weight: f64,
    pub crr_weighting: CrrWeighting,
    pub crr_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Reanalyse,
            batch_size: 128,
            max_steps: 20_000,
            lr_init: 3e-3,
            adam: AdamConfig::default(),
            target_update_period: 100,
            scale_unroll_losses: true,
            scale_dynamics_gradient: true,
            value_loss_weight: 1.0,
            crr_weighting: CrrWeighting::Binary,
            crr_beta: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.max_steps < 1 || self.target_update_period < 1 {
            return Err(Error::Config(
                "batch_size, max_steps, target_update_period must be >= 1".into(),
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("lr_init {} must be positive", self.lr_init)));
        }
        if self.value_loss_weight < 0.0 {
            return Err(Error::Config("value_loss_weight must be >= 0".into()));
        }
        if self.crr_beta <= 0.0 {
            return Err(Error::Config("crr_beta must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted-mean loss over a batch, broken into head components.
/// `total` is exactly `policy + value + reward`; `per_sample` holds
/// each sample's weighted total before the batch mean.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub policy: f64,
    pub value: f64,
    pub reward: f64,
    pub total: f64,
    pub per_sample: Vec<f64>,
}

struct TermGroups {
    policy: Vec<(NodeId, f64)>,
    value: Vec<(NodeId, f64)>,
    reward: Vec<(NodeId, f64)>,
}

impl TermGroups {
    fn new() -> Self {
        Self { policy: Vec::new(), value: Vec::new(), reward: Vec::new() }
    }

    fn group_value(tape: &Tape, terms: &[(NodeId, f64)]) -> f64 {
        terms.iter().map(|&(id, c)| c * tape.scalar(id)).sum()
    }

    fn finish(
        self,
        tape: &mut Tape,
        head_context: &str,
    ) -> Result<(NodeId, f64, f64, f64)> {
        let policy = Self::group_value(tape, &self.policy);
        let value = Self::group_value(tape, &self.value);
        let reward = Self::group_value(tape, &self.reward);
        for (name, total) in [("policy", policy), ("value", value), ("reward", reward)] {
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{name} loss is {total} ({head_context})"
                )));
            }
        }
        let mut all = self.policy;
        all.extend(self.value);
        all.extend(self.reward);
        let node = tape.weighted_sum(all);
        Ok((node, policy, value, reward))
    }
}

fn policy_term(
    tape: &mut Tape,
    heads: &PolicyNodes,
    target: &PolicyTarget,
) -> Result<NodeId> {
    match (heads, target) {
        (PolicyNodes::Discrete(logits), PolicyTarget::Dist(dist)) => {
            Ok(tape.softmax_cross_entropy(*logits, dist.clone()))
        }
        (PolicyNodes::Gaussian { mean, log_scale }, PolicyTarget::Sampled { actions, weights }) => {
            let rows: Result<Vec<Vec<f64>>> = actions
                .iter()
                .map(|a| match a {
                    Action::Continuous(v) => Ok(v.clone()),
                    Action::Discrete(_) => {
                        Err(Error::Usage("discrete action in sampled policy target".into()))
                    }
                })
                .collect();
            Ok(tape.gaussian_nll(*mean, *log_scale, rows?, weights.clone()))
        }
        _ => Err(Error::Usage("policy head and target kinds disagree".into())),
    }
}

fn behavior_term(
    tape: &mut Tape,
    heads: &PolicyNodes,
    action: &Action,
    n_actions_hint: usize,
) -> Result<NodeId> {
    match (heads, action) {
        (PolicyNodes::Discrete(logits), Action::Discrete(a)) => {
            let mut one_hot = vec![0.0; n_actions_hint];
            if *a >= one_hot.len() {
                return Err(Error::Usage(format!("behavior action {a} out of range")));
            }
            one_hot[*a] = 1.0;
            Ok(tape.softmax_cross_entropy(*logits, one_hot))
        }
        (PolicyNodes::Gaussian { mean, log_scale }, Action::Continuous(v)) => {
            Ok(tape.gaussian_nll(*mean, *log_scale, vec![v.clone()], vec![1.0]))
        }
        _ => Err(Error::Usage("behavior action kind does not match policy head".into())),
    }
}

fn n_actions(params: &ModelParams) -> usize {
    match params.spec.action_spec {
        crate::env::ActionSpec::Discrete { n } => n,
        crate::env::ActionSpec::Continuous { dims, .. } => dims,
    }
}

/// K-step unrolled loss for one batch. Gradients accumulate into
/// `grads` scaled by each sample's importance weight over the batch
/// size.
pub fn unrolled_loss(
    params: &ModelParams,
    batch: &[TrainingSample],
    config: &TrainConfig,
    grads: &mut GradStore,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let mut policy_sum = 0.0;
    let mut value_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut per_sample = Vec::with_capacity(batch.len());
    let scale_of = |k: usize, k_steps: usize| {
        if k == 0 || !config.scale_unroll_losses {
            1.0
        } else {
            1.0 / k_steps as f64
        }
    };

    for sample in batch {
        let k_steps = sample.actions.len();
        let mut tape = Tape::new(&params.set);
        let mut latent = params.representation_t(&mut tape, &sample.obs_stack)?;
        let mut groups = TermGroups::new();

        for k in 0..=k_steps {
            let step_scale = scale_of(k, k_steps);
            let (heads, value_logits) = params.predict_t(&mut tape, latent);
            if sample.value_mask[k] {
                let target = params.spec.value_support.encode_two_hot(sample.value_targets[k]);
                let node = tape.softmax_cross_entropy(value_logits, target);
                groups.value.push((node, step_scale * config.value_loss_weight));
            }
            if sample.policy_mask[k] {
                let node = policy_term(&mut tape, &heads, &sample.policy_targets[k])?;
                groups.policy.push((node, step_scale));
            }
            if k < k_steps {
                let (reward_logits, next) =
                    params.dynamics_t(&mut tape, latent, &sample.actions[k])?;
                if sample.reward_mask[k] {
                    let target =
                        params.spec.reward_support.encode_two_hot(sample.reward_targets[k]);
                    let node = tape.softmax_cross_entropy(reward_logits, target);
                    groups.reward.push((node, scale_of(k + 1, k_steps)));
                }
                latent = if config.scale_dynamics_gradient {
                    tape.scale_grad(next, 0.5)
                } else {
                    next
                };
            }
        }

        let (total_node, policy, value, reward) = groups.finish(&mut tape, "unrolled loss")?;
        let batch_scale = sample.weight / batch.len() as f64;
        policy_sum += batch_scale * policy;
        value_sum += batch_scale * value;
        reward_sum += batch_scale * reward;
        per_sample.push(sample.weight * (policy + value + reward));
        tape.backward(total_node, batch_scale, grads);
    }

    Ok(LossBreakdown {
        policy: policy_sum,
        value: value_sum,
        reward: reward_sum,
        total: policy_sum + value_sum + reward_sum,
        per_sample,
    })
}

/// Behavior cloning: cross-entropy (or Gaussian negative log
/// likelihood) of the policy head against the action the dataset
/// actually took at the root position. Value and reward heads are
/// untouched.
pub fn bc_loss(
    params: &ModelParams,
    batch: &[TrainingSample],
    grads: &mut GradStore,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let hint = n_actions(params);
    let mut policy_sum = 0.0;
    let mut per_sample = Vec::with_capacity(batch.len());
    for sample in batch {
        let action = sample.behavior_actions[0]
            .as_ref()
            .ok_or_else(|| Error::Usage("sample root has no behavior action".into()))?;
        let mut tape = Tape::new(&params.set);
        let latent = params.representation_t(&mut tape, &sample.obs_stack)?;
        let (heads, _) = params.predict_t(&mut tape, latent);
        let node = behavior_term(&mut tape, &heads, action, hint)?;
        let loss = tape.scalar(node);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("policy loss is {loss} (behavior cloning)")));
        }
        let batch_scale = sample.weight / batch.len() as f64;
        policy_sum += batch_scale * loss;
        per_sample.push(sample.weight * loss);
        tape.backward(node, batch_scale, grads);
    }
    Ok(LossBreakdown {
        policy: policy_sum,
        value: 0.0,
        reward: 0.0,
        total: policy_sum,
        per_sample,
    })
}

/// The advantage-weighting factor applied to the cloning term: a 0/1
/// indicator of non-negative advantage, or a clipped exponential.
pub fn crr_advantage_factor(advantage: f64, weighting: CrrWeighting, beta: f64) -> f64 {
    match weighting {
        CrrWeighting::Binary => {
            if advantage >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        CrrWeighting::Exponential => (advantage / beta).exp().clamp(0.0, 20.0),
    }
}

/// One-step advantage of the behavior action under the target network:
/// predicted reward plus discounted successor value, minus the state
/// value.
pub fn crr_advantage(
    target_params: &ModelParams,
    obs_stack: &[f64],
    action: &Action,
    discount: f64,
) -> Result<f64> {
    let state = target_params.representation(obs_stack)?;
    let value_here = target_params.decode_value_logits(
        &target_params.predict(&state)?.value_logits,
    );
    let (reward_logits, successor) = target_params.dynamics(&state, action)?;
    let reward = target_params.decode_reward_logits(&reward_logits);
    let value_next = target_params.decode_value_logits(
        &target_params.predict(&successor)?.value_logits,
    );
    Ok(reward + discount * value_next - value_here)
}

/// Advantage-weighted cloning with a jointly trained critic: the
/// policy term is the cloning loss scaled by the advantage factor, the
/// value head fits the sample's value target, and the reward head fits
/// the observed one-step reward through a dynamics application.
pub fn crr_loss(
    params: &ModelParams,
    target_params: &ModelParams,
    batch: &[TrainingSample],
    discount: f64,
    config: &TrainConfig,
    grads: &mut GradStore,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let hint = n_actions(params);
    let mut policy_sum = 0.0;
    let mut value_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut per_sample = Vec::with_capacity(batch.len());

    for sample in batch {
        let action = sample.behavior_actions[0]
            .as_ref()
            .ok_or_else(|| Error::Usage("sample root has no behavior action".into()))?;
        let advantage = crr_advantage(target_params, &sample.obs_stack, action, discount)?;
        let factor = crr_advantage_factor(advantage, config.crr_weighting, config.crr_beta);

        let mut tape = Tape::new(&params.set);
        let latent = params.representation_t(&mut tape, &sample.obs_stack)?;
        let (heads, value_logits) = params.predict_t(&mut tape, latent);
        let mut groups = TermGroups::new();

        let clone_node = behavior_term(&mut tape, &heads, action, hint)?;
        groups.policy.push((clone_node, factor));

        if sample.value_mask[0] {
            let target = params.spec.value_support.encode_two_hot(sample.value_targets[0]);
            let node = tape.softmax_cross_entropy(value_logits, target);
            groups.value.push((node, config.value_loss_weight));
        }
        if sample.reward_mask[0] {
            let (reward_logits, _) = params.dynamics_t(&mut tape, latent, action)?;
            let target = params.spec.reward_support.encode_two_hot(sample.reward_targets[0]);
            let node = tape.softmax_cross_entropy(reward_logits, target);
            groups.reward.push((node, 1.0));
        }

        let (total_node, policy, value, reward) =
            groups.finish(&mut tape, "advantage-weighted cloning")?;
        let batch_scale = sample.weight / batch.len() as f64;
        policy_sum += batch_scale * policy;
        value_sum += batch_scale * value;
        reward_sum += batch_scale * reward;
        per_sample.push(sample.weight * (policy + value + reward));
        tape.backward(total_node, batch_scale, grads);
    }

    Ok(LossBreakdown {
        policy: policy_sum,
        value: value_sum,
        reward: reward_sum,
        total: policy_sum + value_sum + reward_sum,
        per_sample,
    })
}

/// Dispatches on the configured loss mode.
pub fn compute_loss(
    params: &ModelParams,
    target_params: &ModelParams,
    batch: &[TrainingSample],
    discount: f64,
    config: &TrainConfig,
    grads: &mut GradStore,
) -> Result<LossBreakdown> {
    match config.loss_mode {
        LossMode::Reanalyse => unrolled_loss(params, batch, config, grads),
        LossMode::Bc => bc_loss(params, batch, grads),
        LossMode::Crr => crr_loss(params, target_params, batch, discount, config, grads),
    }
}

/// Adam with decoupled weight decay. Moment estimates live here and
/// persist across steps.
pub struct Optimizer {
    config: AdamConfig,
    m: GradStore,
    v: GradStore,
    step: u64,
}

impl Optimizer {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self { config, m: GradStore::zeros_like(params), v: GradStore::zeros_like(params), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut ParamSet, grads: &GradStore, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let id = ParamId(i);
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            for (m_k, g_k) in m.data.iter_mut().zip(&g.data) {
                *m_k = c.beta1 * *m_k + (1.0 - c.beta1) * g_k;
            }
            let v = self.v.get_mut(id);
            for (v_k, g_k) in v.data.iter_mut().zip(&g.data) {
                *v_k = c.beta2 * *v_k + (1.0 - c.beta2) * g_k * g_k;
            }
            let theta = params.get_mut(id);
            for k in 0..theta.data.len() {
                let m_hat = self.m.get(id).data[k] / bias1;
                let v_hat = self.v.get(id).data[k] / bias2;
                let update = m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * theta.data[k];
                theta.data[k] -= lr * update;
            }
        }
    }
}

/// Cosine decay from `lr_init` at step 0 to exactly 0 at `max_steps`.
pub fn cosine_lr(lr_init: f64, step: usize, max_steps: usize) -> f64 {
    assert!(max_steps >= 1);
    let progress = (step.min(max_steps) as f64) / max_steps as f64;
    lr_init * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Copies the parameters into the target network every
/// `period` steps, including step 0. Returns whether a copy happened,
/// so callers can invalidate value caches.
pub fn maybe_update_target(
    step: usize,
    params: &ModelParams,
    target: &mut ModelParams,
    period: usize,
) -> bool {
    if step % period == 0 {
        *target = params.clone();
        true
    } else {
        false
    }
}
