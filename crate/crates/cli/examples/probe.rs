use std::path::Path;

use muzero_core::env::{Action, EnvDescriptor, EnvKind};
use muzero_core::model::{load_checkpoint, PolicyOutput};
use muzero_core::nn::softmax;
use muzero_core::rng::derive_rng;
use muzero_core::search::{run_mcts, NetEvaluator, RootSource, SearchConfig};

fn obs_for(ball_row: usize, ball_col: usize, paddle_col: usize) -> Vec<f64> {
    let (w, h) = (5usize, 10usize);
    let mut obs = vec![0.0; w * h];
    obs[ball_row.min(h - 1) * w + ball_col] = 1.0;
    obs[(h - 1) * w + paddle_col] = 1.0;
    obs
}

fn main() {
    let path = std::env::args().nth(1).expect("checkpoint path");
    let params = load_checkpoint(Path::new(&path)).expect("load");
    let config = SearchConfig::new(16, 0.997);
    let mut rng = derive_rng(7, &[1]);

    println!("pre-terminal states (ball on bottom row, one action left):");
    let states = [
        (9usize, 1usize, 1usize),
        (9, 2, 2),
        (9, 3, 2),
        (9, 1, 2),
        (9, 0, 3),
        (9, 4, 0),
    ];
    for (r, b, p) in states {
        let obs = obs_for(r, b, p);
        let latent = params.representation(&obs).unwrap();
        let pred = params.predict(&latent).unwrap();
        let v = params.decode_value_logits(&pred.value_logits);
        let pi = match &pred.policy {
            PolicyOutput::Discrete { logits } => softmax(logits),
            _ => unreachable!(),
        };
        let mut rhats = Vec::new();
        for a in 0..3 {
            let (rl, _) = params.dynamics(&latent, &Action::Discrete(a)).unwrap();
            rhats.push(params.decode_reward_logits(&rl));
        }
        let best = [p.saturating_sub(1), p, (p + 1).min(4)]
            .iter()
            .position(|&land| land == b);
        println!(
            "b={b} p={p} vhat={:+.3} pi=[{:.2} {:.2} {:.2}] rhat=[{:+.3} {:+.3} {:+.3}] catching_a={:?}",
            v, pi[0], pi[1], pi[2], rhats[0], rhats[1], rhats[2], best
        );
    }

    println!("mcts at ball_row=8 states (two actions left):");
    for (b, p) in [(2usize, 2usize), (3, 2), (0, 3), (4, 4)] {
        let obs = obs_for(8, b, p);
        let evaluator = NetEvaluator::new(&params, config.action_samples);
        let result =
            run_mcts(RootSource::Observation(&obs), &evaluator, &config, &mut rng, None, false)
                .unwrap();
        println!(
            "b={b} p={p} visits=[{:.2} {:.2} {:.2}] q=[{:+.3} {:+.3} {:+.3}] root_v={:+.3}",
            result.visit_dist[0],
            result.visit_dist[1],
            result.visit_dist[2],
            result.q_values[0],
            result.q_values[1],
            result.q_values[2],
            result.root_value
        );
    }

    println!("greedy mcts episodes:");
    let desc = EnvDescriptor { kind: EnvKind::Catch { width: 5, height: 10 }, sticky_prob: 0.0 };
    let mut env = desc.build(0).unwrap();
    for ep in 0..8u64 {
        let mut obs = env.reset(1000 + ep);
        let mut trace = String::new();
        let mut ret = 0.0;
        loop {
            let evaluator = NetEvaluator::new(&params, config.action_samples);
            let result =
                run_mcts(RootSource::Observation(&obs), &evaluator, &config, &mut rng, None, false)
                    .unwrap();
            let index = muzero_core::nn::argmax(&result.visit_dist);
            let step = env.step(&result.searched_actions[index]).unwrap();
            trace.push(char::from(b'0' + index as u8));
            ret += step.reward;
            if step.terminal {
                break;
            }
            obs = step.observation;
        }
        println!("ep {ep}: actions={trace} return={ret:+.0}");
    }
}
