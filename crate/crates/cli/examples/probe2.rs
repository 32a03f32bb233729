use std::path::Path;

use muzero_core::env::{Action, ActionSpec};
use muzero_core::model::{init_params, load_checkpoint, Arch, ModelParams, ModelSpec, ScalarSupport};
use muzero_core::rng::derive_rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sensitivity(params: &ModelParams, label: &str) {
    let mut obs = vec![0.0; 50];
    obs[9 * 5 + 2] = 1.0;
    obs[9 * 5 + 3] = 1.0;
    let latent = params.representation(&obs).unwrap();
    let mut nexts = Vec::new();
    let mut rhats = Vec::new();
    for a in 0..3 {
        let (rl, next) = params.dynamics(&latent, &Action::Discrete(a)).unwrap();
        rhats.push(params.decode_reward_logits(&rl));
        nexts.push(next.0);
    }
    let mut obs2 = vec![0.0; 50];
    obs2[9 * 5 + 0] = 1.0;
    obs2[9 * 5 + 4] = 1.0;
    let latent2 = params.representation(&obs2).unwrap();
    println!(
        "{label}: |latent|={:.3} |dyn(a0)|={:.3} action_delta01={:.4} action_delta02={:.4} state_delta={:.4} rhat=[{:+.3} {:+.3} {:+.3}]",
        norm(&latent.0),
        norm(&nexts[0]),
        diff(&nexts[0], &nexts[1]),
        diff(&nexts[0], &nexts[2]),
        diff(&latent.0, &latent2.0),
        rhats[0],
        rhats[1],
        rhats[2],
    );
}

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
    let fresh = init_params(&spec, &mut derive_rng(0, &[1])).unwrap();
    sensitivity(&fresh, "fresh-init");
    for path in std::env::args().skip(1) {
        let params = load_checkpoint(Path::new(&path)).unwrap();
        sensitivity(&params, &path);
    }
}
