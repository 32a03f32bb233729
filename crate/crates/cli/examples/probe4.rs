use muzero_core::env::{Action, ActionSpec};
use muzero_core::model::{init_params, Arch, ModelSpec, ScalarSupport};
use muzero_core::nn::Tape;
use muzero_core::rng::derive_rng;
use muzero_core::train::{AdamConfig, Optimizer};

fn main() {
    let spec = ModelSpec {
        arch: Arch { blocks: 1, layers_per_block: 2, hidden: 32 },
        action_spec: ActionSpec::Discrete { n: 3 },
        obs_size: 50,
        obs_stack: 1,
        value_support: ScalarSupport { v_min: -1.0, v_max: 1.0, bins: 21 },
        reward_support: ScalarSupport { v_min: -1.0, v_max: 1.0, bins: 21 },
        q_head: false,
    };
    let mut params = init_params(&spec, &mut derive_rng(0, &[1])).unwrap();
    let mut opt = Optimizer::new(&params.set, AdamConfig::default());

    let mut cases = Vec::new();
    for b in 0..5usize {
        for p in 0..5usize {
            for a in 0..3usize {
                let mut obs = vec![0.0; 50];
                obs[45 + b] = 1.0;
                obs[45 + p] = 1.0;
                let after = match a {
                    0 => p.saturating_sub(1),
                    1 => p,
                    _ => (p + 1).min(4),
                };
                let r = if after == b { 1.0 } else { -1.0 };
                cases.push((obs, a, r));
            }
        }
    }

    let support = spec.reward_support;
    let n = cases.len() as f64;
    for step in 0..3001 {
        let mut grads = params.grad_store();
        let mut total = 0.0;
        for (obs, a, r) in &cases {
            let mut tape = Tape::new(&params.set);
            let latent = params.representation_t(&mut tape, obs).unwrap();
            let (reward_logits, _next) =
                params.dynamics_t(&mut tape, latent, &Action::Discrete(*a)).unwrap();
            let ce = tape.softmax_cross_entropy(reward_logits, support.encode_two_hot(*r));
            total += tape.value(ce)[0];
            tape.backward(ce, 1.0 / n, &mut grads);
        }
        opt.apply(&mut params.set, &grads, 3e-3);
        if step % 250 == 0 {
            println!("step {step}: reward ce {:.5}", total / n);
        }
    }

    println!("reward head probe:");
    for (b, p) in [(1usize, 1usize), (3, 2), (1, 2), (0, 3)] {
        let mut obs = vec![0.0; 50];
        obs[45 + b] = 1.0;
        obs[45 + p] = 1.0;
        let latent = params.representation(&obs).unwrap();
        let mut rhats = Vec::new();
        for a in 0..3 {
            let (rl, _) = params.dynamics(&latent, &Action::Discrete(a)).unwrap();
            rhats.push(params.decode_reward_logits(&rl));
        }
        println!("b={b} p={p} rhat=[{:+.3} {:+.3} {:+.3}]", rhats[0], rhats[1], rhats[2]);
    }
}
