//! The three-part latent model: `representation` embeds an observation
//! stack, `dynamics` advances a latent state by one action and predicts
//! the transition reward, `predict` reads out policy and value.
//!
//! All trunks are stacks of pre-activation residual blocks (layer norm,
//! ReLU, linear per layer) over a fixed hidden width. Latent states are
//! rescaled into [0, 1] by their own min and max after `representation`
//! and `dynamics`, keeping them on the scale of the one-hot action
//! encoding that `dynamics` concatenates to its input. Value and reward
//! are categorical over per-environment scalar supports. Every forward
//! exists twice with identical arithmetic: an allocation-light inference
//! path and a tape path for gradients.

mod checkpoint;
pub mod support;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use support::ScalarSupport;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSpec};
use crate::error::{Error, Result};
use crate::nn::{
    ensure_finite, infer, softmax, GradStore, NodeId, ParamId, ParamSet, Tape, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub hidden: usize,
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 || self.layers_per_block < 1 || self.hidden < 1 {
            return Err(Error::Config(format!("architecture sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Everything that fixes the parameter shapes and codecs of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub action_spec: ActionSpec,
    pub obs_size: usize,
    pub obs_stack: usize,
    pub value_support: ScalarSupport,
    pub reward_support: ScalarSupport,
    pub q_head: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.action_spec.validate()?;
        self.value_support.validate()?;
        self.reward_support.validate()?;
        if self.obs_size < 1 || self.obs_stack < 1 {
            return Err(Error::Config("obs_size and obs_stack must be >= 1".into()));
        }
        if self.q_head && !matches!(self.action_spec, ActionSpec::Discrete { .. }) {
            return Err(Error::Config("q_head requires a discrete action spec".into()));
        }
        Ok(())
    }

    pub fn stacked_obs_len(&self) -> usize {
        self.obs_size * self.obs_stack
    }

    /// How many times the encoded action is tiled in the dynamics input.
    /// Tiling gives the action a share of the input comparable to the
    /// latent so its gradient signal is not swamped by state features.
    pub fn action_tiling(&self) -> usize {
        let encoded = self.action_spec.encoded_len();
        (self.arch.hidden / (2 * encoded)).max(1)
    }

    pub fn tiled_action_len(&self) -> usize {
        self.action_tiling() * self.action_spec.encoded_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState(pub Vec<f64>);

#[derive(Debug, Clone)]
pub enum PolicyOutput {
    Discrete { logits: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_scale: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct PredictionOutput {
    pub policy: PolicyOutput,
    pub value_logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    scale: ParamId,
    offset: ParamId,
}

#[derive(Debug, Clone)]
struct BlockIds {
    layers: Vec<(NormIds, LinearIds)>,
}

#[derive(Debug, Clone)]
struct TrunkIds {
    input: Option<LinearIds>,
    blocks: Vec<BlockIds>,
}

#[derive(Debug, Clone)]
enum PolicyIds {
    Discrete(LinearIds),
    Gaussian { mean: LinearIds, log_scale: LinearIds },
}

#[derive(Debug, Clone)]
struct Layout {
    repr: TrunkIds,
    dynamics: TrunkIds,
    prediction: TrunkIds,
    reward: LinearIds,
    value: LinearIds,
    policy: PolicyIds,
    q: Option<LinearIds>,
}

/// Parameters plus cached layout. Cloning yields an independent deep
/// copy, which is how target-network snapshots are taken.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub set: ParamSet,
    layout: Layout,
}

/// Number of policy-head outputs searched over (discrete action count,
/// or the Gaussian dimensionality for continuous specs).
fn policy_width(spec: &ModelSpec) -> usize {
    match &spec.action_spec {
        ActionSpec::Discrete { n } => *n,
        ActionSpec::Continuous { dims, .. } => *dims,
    }
}

fn build_layout(spec: &ModelSpec, set: &mut ParamSet) -> Layout {
    let h = spec.arch.hidden;
    let mut trunk = |name: &str, input_width: Option<usize>| -> TrunkIds {
        let input = input_width.map(|width| LinearIds {
            w: set.add(&format!("{name}/in/w"), Tensor::zeros(h, width)),
            b: set.add(&format!("{name}/in/b"), Tensor::zeros(h, 1)),
        });
        let blocks = (0..spec.arch.blocks)
            .map(|i| BlockIds {
                layers: (0..spec.arch.layers_per_block)
                    .map(|j| {
                        let norm = NormIds {
                            scale: set.add(
                                &format!("{name}/b{i}/l{j}/ln/scale"),
                                Tensor::vector(vec![1.0; h]),
                            ),
                            offset: set.add(
                                &format!("{name}/b{i}/l{j}/ln/offset"),
                                Tensor::zeros(h, 1),
                            ),
                        };
                        let linear = LinearIds {
                            w: set.add(&format!("{name}/b{i}/l{j}/w"), Tensor::zeros(h, h)),
                            b: set.add(&format!("{name}/b{i}/l{j}/b"), Tensor::zeros(h, 1)),
                        };
                        (norm, linear)
                    })
                    .collect(),
            })
            .collect();
        TrunkIds { input, blocks }
    };

    let repr = trunk("repr", Some(spec.stacked_obs_len()));
    let dynamics = trunk("dyn", Some(h + spec.tiled_action_len()));
    let prediction = trunk("pred", None);

    let mut head = |name: &str, rows: usize| LinearIds {
        w: set.add(&format!("{name}/w"), Tensor::zeros(rows, h)),
        b: set.add(&format!("{name}/b"), Tensor::zeros(rows, 1)),
    };
    let reward = head("dyn/reward", spec.reward_support.bins);
    let value = head("pred/value", spec.value_support.bins);
    let policy = match &spec.action_spec {
        ActionSpec::Discrete { n } => PolicyIds::Discrete(head("pred/policy", *n)),
        ActionSpec::Continuous { dims, .. } => PolicyIds::Gaussian {
            mean: head("pred/mean", *dims),
            log_scale: head("pred/log_scale", *dims),
        },
    };
    let q = spec.q_head.then(|| head("pred/q", policy_width(spec) * spec.value_support.bins));

    Layout { repr, dynamics, prediction, reward, value, policy, q }
}

/// Fresh parameters: fan-in variance-scaled trunk weights, unit norm
/// scales, and zero-initialized output heads (so the initial policy is
/// uniform and decoded scalars sit at the support midpoint).
pub fn init_params(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    spec.validate()?;
    let mut set = ParamSet::new();
    let layout = build_layout(spec, &mut set);
    for trunk in [&layout.repr, &layout.dynamics, &layout.prediction] {
        if let Some(input) = trunk.input {
            init_linear(&mut set, input, rng);
        }
        for block in &trunk.blocks {
            for (_, linear) in &block.layers {
                init_linear(&mut set, *linear, rng);
            }
        }
    }
    Ok(ModelParams { spec: spec.clone(), set, layout })
}

fn init_linear(set: &mut ParamSet, ids: LinearIds, rng: &mut ChaCha8Rng) {
    let w = set.get_mut(ids.w);
    let std = (1.0 / w.cols as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in &mut w.data {
        *v = normal.sample(rng);
    }
}

/// Reconstructs a parameter set from named tensors (checkpoint load).
/// Every layout entry must be present with the right shape, and no
/// extras are allowed.
pub fn params_from_tensors(
    spec: &ModelSpec,
    mut tensors: std::collections::HashMap<String, Tensor>,
) -> Result<ModelParams> {
    spec.validate()?;
    let mut set = ParamSet::new();
    let layout = build_layout(spec, &mut set);
    for i in 0..set.len() {
        let id = ParamId(i);
        let name = set.name(id).to_string();
        let tensor = tensors
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
        let slot = set.get_mut(id);
        if tensor.rows != slot.rows || tensor.cols != slot.cols {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?} has shape {}x{}, expected {}x{}",
                tensor.rows, tensor.cols, slot.rows, slot.cols
            )));
        }
        *slot = tensor;
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected parameter {name:?}")));
    }
    Ok(ModelParams { spec: spec.clone(), set, layout })
}

impl ModelParams {
    pub fn grad_store(&self) -> GradStore {
        GradStore::zeros_like(&self.set)
    }

    fn trunk_infer(&self, trunk: &TrunkIds, input: Vec<f64>) -> Vec<f64> {
        let mut x = match trunk.input {
            Some(lin) => infer::linear(&self.set, lin.w, lin.b, &input),
            None => input,
        };
        for block in &trunk.blocks {
            let mut branch = x.clone();
            for (norm, linear) in &block.layers {
                branch = infer::layer_norm(&self.set, norm.scale, norm.offset, &branch);
                infer::relu_in_place(&mut branch);
                branch = infer::linear(&self.set, linear.w, linear.b, &branch);
            }
            infer::add_in_place(&mut x, &branch);
        }
        x
    }

    fn trunk_tape(&self, tape: &mut Tape, trunk: &TrunkIds, input: NodeId) -> NodeId {
        let mut x = match trunk.input {
            Some(lin) => tape.linear(lin.w, lin.b, input),
            None => input,
        };
        for block in &trunk.blocks {
            let mut branch = x;
            for (norm, linear) in &block.layers {
                branch = tape.layer_norm(norm.scale, norm.offset, branch);
                branch = tape.relu(branch);
                branch = tape.linear(linear.w, linear.b, branch);
            }
            x = tape.add(x, branch);
        }
        x
    }

    fn check_obs(&self, obs_stack: &[f64]) -> Result<()> {
        let expected = self.spec.stacked_obs_len();
        if obs_stack.len() != expected {
            return Err(Error::Usage(format!(
                "observation stack has length {}, expected {expected}",
                obs_stack.len()
            )));
        }
        Ok(())
    }

    pub fn representation(&self, obs_stack: &[f64]) -> Result<LatentState> {
        self.check_obs(obs_stack)?;
        let mut latent = self.trunk_infer(&self.layout.repr, obs_stack.to_vec());
        infer::bounded_scale_in_place(&mut latent);
        ensure_finite(&latent, "representation output")?;
        Ok(LatentState(latent))
    }

    fn tiled_action(&self, action: &Action) -> Result<Vec<f64>> {
        let mut encoded = Vec::with_capacity(self.spec.action_spec.encoded_len());
        self.spec.action_spec.encode(action, &mut encoded)?;
        let mut tiled = Vec::with_capacity(self.spec.tiled_action_len());
        for _ in 0..self.spec.action_tiling() {
            tiled.extend_from_slice(&encoded);
        }
        Ok(tiled)
    }

    pub fn dynamics(&self, latent: &LatentState, action: &Action) -> Result<(Vec<f64>, LatentState)> {
        let encoded = self.tiled_action(action)?;
        let mut input = Vec::with_capacity(latent.0.len() + encoded.len());
        input.extend_from_slice(&latent.0);
        input.extend_from_slice(&encoded);
        let mut next = self.trunk_infer(&self.layout.dynamics, input);
        infer::bounded_scale_in_place(&mut next);
        ensure_finite(&next, "dynamics output")?;
        let reward_logits =
            infer::linear(&self.set, self.layout.reward.w, self.layout.reward.b, &next);
        ensure_finite(&reward_logits, "reward logits")?;
        Ok((reward_logits, LatentState(next)))
    }

    pub fn predict(&self, latent: &LatentState) -> Result<PredictionOutput> {
        let trunk = self.trunk_infer(&self.layout.prediction, latent.0.clone());
        ensure_finite(&trunk, "prediction trunk")?;
        let value_logits =
            infer::linear(&self.set, self.layout.value.w, self.layout.value.b, &trunk);
        ensure_finite(&value_logits, "value logits")?;
        let policy = match &self.layout.policy {
            PolicyIds::Discrete(ids) => {
                let logits = infer::linear(&self.set, ids.w, ids.b, &trunk);
                ensure_finite(&logits, "policy logits")?;
                PolicyOutput::Discrete { logits }
            }
            PolicyIds::Gaussian { mean, log_scale } => {
                let mean_v = infer::linear(&self.set, mean.w, mean.b, &trunk);
                let ls_v = infer::linear(&self.set, log_scale.w, log_scale.b, &trunk);
                ensure_finite(&mean_v, "policy mean")?;
                ensure_finite(&ls_v, "policy log scale")?;
                PolicyOutput::Gaussian { mean: mean_v, log_scale: ls_v }
            }
        };
        Ok(PredictionOutput { policy, value_logits })
    }

    /// Per-action value logits from the optional q head, one row per
    /// discrete action.
    pub fn predict_q(&self, latent: &LatentState) -> Result<Vec<Vec<f64>>> {
        let ids = self
            .layout
            .q
            .ok_or_else(|| Error::Usage("model has no q head configured".into()))?;
        let trunk = self.trunk_infer(&self.layout.prediction, latent.0.clone());
        let flat = infer::linear(&self.set, ids.w, ids.b, &trunk);
        ensure_finite(&flat, "q logits")?;
        let bins = self.spec.value_support.bins;
        Ok(flat.chunks(bins).map(|c| c.to_vec()).collect())
    }

    pub fn representation_t(&self, tape: &mut Tape, obs_stack: &[f64]) -> Result<NodeId> {
        self.check_obs(obs_stack)?;
        let input = tape.input(obs_stack.to_vec());
        let out = self.trunk_tape(tape, &self.layout.repr, input);
        Ok(tape.bounded_scale(out))
    }

    pub fn dynamics_t(
        &self,
        tape: &mut Tape,
        latent: NodeId,
        action: &Action,
    ) -> Result<(NodeId, NodeId)> {
        let encoded = self.tiled_action(action)?;
        let action_node = tape.input(encoded);
        let input = tape.concat(latent, action_node);
        let raw = self.trunk_tape(tape, &self.layout.dynamics, input);
        let next = tape.bounded_scale(raw);
        let reward_logits = tape.linear(self.layout.reward.w, self.layout.reward.b, next);
        Ok((reward_logits, next))
    }

    pub fn predict_t(&self, tape: &mut Tape, latent: NodeId) -> (PolicyNodes, NodeId) {
        let trunk = self.trunk_tape(tape, &self.layout.prediction, latent);
        let value_logits = tape.linear(self.layout.value.w, self.layout.value.b, trunk);
        let policy = match &self.layout.policy {
            PolicyIds::Discrete(ids) => PolicyNodes::Discrete(tape.linear(ids.w, ids.b, trunk)),
            PolicyIds::Gaussian { mean, log_scale } => PolicyNodes::Gaussian {
                mean: tape.linear(mean.w, mean.b, trunk),
                log_scale: tape.linear(log_scale.w, log_scale.b, trunk),
            },
        };
        (policy, value_logits)
    }

    pub fn q_t(&self, tape: &mut Tape, latent: NodeId) -> Result<NodeId> {
        let ids = self
            .layout
            .q
            .ok_or_else(|| Error::Usage("model has no q head configured".into()))?;
        let trunk = self.trunk_tape(tape, &self.layout.prediction, latent);
        Ok(tape.linear(ids.w, ids.b, trunk))
    }

    pub fn decode_value_logits(&self, logits: &[f64]) -> f64 {
        self.spec.value_support.decode_expectation(&softmax(logits))
    }

    pub fn decode_reward_logits(&self, logits: &[f64]) -> f64 {
        self.spec.reward_support.decode_expectation(&softmax(logits))
    }

    /// Convenience: decoded state value of an observation stack.
    pub fn state_value(&self, obs_stack: &[f64]) -> Result<f64> {
        let latent = self.representation(obs_stack)?;
        let pred = self.predict(&latent)?;
        Ok(self.decode_value_logits(&pred.value_logits))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PolicyNodes {
    Discrete(NodeId),
    Gaussian { mean: NodeId, log_scale: NodeId },
}

/// Width rule for sizing the hidden layer from the dataset: the number
/// of stored datapoints divided by the layer count, square-rooted, and
/// floored at `min_width`.
pub fn scale_network_width_with_min(datapoints: usize, layers: usize, min_width: usize) -> usize {
    assert!(datapoints >= 1 && layers >= 1);
    let width = (datapoints as f64 / layers as f64).sqrt().round() as usize;
    width.max(min_width)
}

pub fn scale_network_width(datapoints: usize, layers: usize) -> usize {
    scale_network_width_with_min(datapoints, layers, 8)
}
