use muzero_core::env::{Action, ActionSpec, EnvDescriptor, EnvKind};
use muzero_core::model::{init_params, Arch, ModelSpec, ScalarSupport};
use muzero_core::rng::derive_rng;
use muzero_core::search::SearchConfig;
use muzero_core::targets::{
    build_training_sample, BootstrapCache, StatsSource, TargetConfig, Trajectory,
    TrajectorySource, ValueTargetMode,
};
use muzero_core::train::{compute_loss, AdamConfig, Optimizer, TrainConfig};
use rand::Rng;

fn main() {
    let desc = EnvDescriptor { kind: EnvKind::Catch { width: 5, height: 10 }, sticky_prob: 0.0 };
    let mut env = desc.build(0).unwrap();
    let mut rng = derive_rng(0, &[99]);
    let mut trajs = Vec::new();
    for id in 0..500u64 {
        let mut observations = vec![env.reset(rng.random())];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        loop {
            let a = Action::Discrete(rng.random_range(0..3));
            let step = env.step(&a).unwrap();
            actions.push(step.executed);
            rewards.push(step.reward);
            if step.terminal {
                break;
            }
            observations.push(step.observation);
        }
        trajs.push(
            Trajectory::from_episode(
                id,
                observations,
                actions,
                rewards,
                true,
                TrajectorySource::Dataset,
            )
            .unwrap(),
        );
    }

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
    let target_params = params.clone();
    let search_config = SearchConfig::new(16, 0.997);
    let targets = TargetConfig {
        fraction: 0.0,
        value_target: ValueTargetMode::TdN,
        unroll_steps: 5,
        td_steps: 5,
        discount: 0.997,
        obs_stack: 1,
        inject_action: false,
    };
    let train = TrainConfig {
        batch_size: 24,
        max_steps: 2000,
        lr_init: 3e-3,
        adam: AdamConfig::default(),
        ..TrainConfig::default()
    };
    let mut opt = Optimizer::new(&params.set, train.adam.clone());
    let mut cache = BootstrapCache::new(1);

    let column_norms = |t: &muzero_core::nn::Tensor| -> (f64, f64) {
        let mut latent_sq = 0.0;
        let mut action_sq = 0.0;
        for r in 0..t.rows {
            let row = &t.data[r * t.cols..(r + 1) * t.cols];
            for (c, &v) in row.iter().enumerate() {
                if c < 32 {
                    latent_sq += v * v;
                } else {
                    action_sq += v * v;
                }
            }
        }
        (latent_sq.sqrt(), action_sq.sqrt())
    };
    let in_w = params.set.id("dyn/in/w").unwrap();
    let (l0, a0) = column_norms(params.set.get(in_w));
    println!("init dyn/in/w: |latent cols|={l0:.4} |action cols|={a0:.4}");

    for step in 0..10000 {
        let mut batch = Vec::with_capacity(24);
        for _ in 0..24 {
            let traj = &trajs[rng.random_range(0..trajs.len())];
            let t = rng.random_range(0..traj.len());
            batch.push(
                build_training_sample(
                    traj,
                    t,
                    &targets,
                    &search_config,
                    StatsSource::Stored,
                    &params,
                    &target_params,
                    &mut cache,
                    &mut rng,
                )
                .unwrap(),
            );
        }
        let mut grads = params.grad_store();
        let breakdown =
            compute_loss(&params, &target_params, &batch, 0.997, &train, &mut grads).unwrap();
        opt.apply(&mut params.set, &grads, 3e-3);
        if step % 1000 == 0 {
            let (lw, aw) = column_norms(params.set.get(in_w));
            let (lg, ag) = column_norms(grads.get(in_w));
            println!(
                "step {step}: policy {:.4} value {:.4} reward {:.4} w(lat/act)={lw:.3}/{aw:.3} g(lat/act)={lg:.5}/{ag:.5}",
                breakdown.policy, breakdown.value, breakdown.reward
            );
        }
    }

    println!("reward head probe at pre-terminal states:");
    for (b, p) in [(1usize, 1usize), (3, 2), (1, 2), (0, 3)] {
        let mut obs = vec![0.0; 50];
        obs[9 * 5 + b] = 1.0;
        obs[9 * 5 + p] = 1.0;
        let latent = params.representation(&obs).unwrap();
        let mut rhats = Vec::new();
        for a in 0..3 {
            let (rl, _) = params.dynamics(&latent, &Action::Discrete(a)).unwrap();
            rhats.push(params.decode_reward_logits(&rl));
        }
        println!("b={b} p={p} rhat=[{:+.3} {:+.3} {:+.3}]", rhats[0], rhats[1], rhats[2]);
    }
}
