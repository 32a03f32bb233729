//! End-to-end training runner.
//!
//! One call drives a full experiment: optional dataset preload, the
//! interleaved acting/learning loop, metrics logging, checkpointing,
//! and a final evaluation. Acting is paid for by the batch itself:
//! every sample whose targets come from fresh acting statistics earns
//! `1 / replay_ratio` environment frames of credit, so total
//! environment usage scales with
//! `batch_size * (1 - reanalyse_fraction) * max_steps / replay_ratio`
//! and each acted frame is presented to the learner `replay_ratio`
//! times on average. A fully recomputed run touches the environment
//! only for its evaluation, and cloning losses never act at all.
//! Everything is seeded, so two runs of the same config are bitwise
//! identical.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::sync::Arc;



use muzero_core::data::read_dataset;
use muzero_core::error::{Error, Result};
use muzero_core::eval::{evaluate, mean_return};
use muzero_core::model::{init_params, save_checkpoint, ModelParams};
use muzero_core::replay::ReplayBuffer;
use muzero_core::rng::derive_rng;
use muzero_core::targets::{
    act_episode, build_training_sample, mix_sources, BootstrapCache, SampleSource, StatsSource,
};
use muzero_core::train::{
    compute_loss, cosine_lr, maybe_update_target, LossMode, Optimizer,
};

use crate::config::Resolved;

/// What a finished run produced, with paths to its artifacts.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub steps: usize,
    pub env_frames: usize,
    pub episodes_acted: usize,
    pub acting_searches: usize,
    pub reanalyse_searches: usize,
    pub final_loss: f64,
    pub eval_mean: f64,
    pub eval_returns: Vec<f64>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

fn check_dataset_header(
    resolved: &Resolved,
    header: &muzero_core::data::DatasetHeader,
) -> Result<()> {
    if header.env != resolved.env {
        return Err(Error::Config(format!(
            "dataset was generated on {:?} but the run is configured for {:?}",
            header.env, resolved.env
        )));
    }
    if header.obs_size != resolved.model.obs_size {
        return Err(Error::Config(format!(
            "dataset observations have size {} but the model expects {}",
            header.obs_size, resolved.model.obs_size
        )));
    }
    if header.action_spec != resolved.model.action_spec {
        return Err(Error::Config(
            "dataset action space does not match the environment".into(),
        ));
    }
    Ok(())
}

/// Trains one experiment into `out_dir` and returns the report.
pub fn run_experiment(resolved: &Resolved, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), resolved.flat.echo()?)?;

    let seed = resolved.seed;
    let mut init_rng = derive_rng(seed, &[1]);
    let mut params = init_params(&resolved.model, &mut init_rng)?;
    let mut target_params = params.clone();
    let mut optimizer = Optimizer::new(&params.set, resolved.train.adam);
    let mut buffer = ReplayBuffer::new(resolved.replay.clone())?;
    let mut cache = BootstrapCache::new(resolved.targets.obs_stack);

    let mut episodes_acted = 0usize;
    let mut next_traj_id = 0u64;
    if let Some(path) = &resolved.dataset {
        let (header, trajectories) = read_dataset(path)?;
        check_dataset_header(resolved, &header)?;
        next_traj_id = trajectories.len() as u64;
        for traj in trajectories {
            buffer.append(Arc::new(traj), &resolved.targets);
        }
    }

    let offline = resolved.targets.fraction >= 1.0 || resolved.train.loss_mode != LossMode::Reanalyse;
    if offline && buffer.is_empty() {
        return Err(Error::Config("offline training found an empty dataset".into()));
    }

    let mut env = resolved.env.build(seed)?;
    let mut acting_rng = derive_rng(seed, &[2]);
    let mut batch_rng = derive_rng(seed, &[3]);

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(
        metrics,
        "step,lr,policy_loss,value_loss,reward_loss,total_loss,grad_norm,buffer_positions,env_frames,recomputed_share,act_return"
    )?;

    let mut env_frames = 0usize;
    let mut frame_credit = 0.0f64;
    let mut longest_episode = 1usize;
    let mut final_loss = 0.0;
    let mut reanalyse_searches = 0usize;
    let mut recent_returns: VecDeque<f64> = VecDeque::with_capacity(100);

    for step in 0..resolved.train.max_steps {
        if maybe_update_target(
            step,
            &params,
            &mut target_params,
            resolved.train.target_update_period,
        ) {
            cache.clear();
        }

        let mut sources: Vec<SampleSource> = (0..resolved.train.batch_size)
            .map(|_| {
                if offline {
                    SampleSource::Stored
                } else {
                    mix_sources(resolved.targets.fraction, &mut batch_rng)
                }
            })
            .collect();

        if !offline {
            let budget_left = |frames: usize, longest: usize| {
                resolved.env_frame_budget.map_or(true, |budget| frames + longest <= budget)
            };
            frame_credit += sources.iter().filter(|s| **s == SampleSource::Env).count() as f64
                / resolved.replay_ratio;
            while (frame_credit > 0.0 || buffer.is_empty())
                && budget_left(env_frames, longest_episode)
            {
                let traj = act_episode(
                    env.as_mut(),
                    &params,
                    &resolved.search,
                    resolved.temperature,
                    resolved.targets.obs_stack,
                    next_traj_id,
                    &mut acting_rng,
                )?;
                next_traj_id += 1;
                episodes_acted += 1;
                env_frames += traj.len();
                frame_credit -= traj.len() as f64;
                longest_episode = longest_episode.max(traj.len());
                if recent_returns.len() == 100 {
                    recent_returns.pop_front();
                }
                recent_returns.push_back(traj.rewards.iter().sum::<f64>());
                buffer.append(Arc::new(traj), &resolved.targets);
            }
            if !budget_left(env_frames, longest_episode) {
                for source in &mut sources {
                    *source = SampleSource::Stored;
                }
            }
        }

        let sampled = buffer.sample(resolved.train.batch_size, &mut batch_rng)?;
        let mut batch = Vec::with_capacity(sampled.len());
        let mut priority_updates = Vec::with_capacity(sampled.len());
        let mut recomputed = 0usize;
        for (position, source) in sampled.iter().zip(&sources) {
            let stats_source = match (resolved.train.loss_mode, source) {
                (LossMode::Reanalyse, SampleSource::Stored) => StatsSource::Fresh,
                _ => StatsSource::Stored,
            };
            if stats_source == StatsSource::Fresh {
                recomputed += 1;
                let tail = position.traj.len() - 1 - position.t;
                reanalyse_searches += tail.min(resolved.targets.unroll_steps) + 1;
            }
            let mut sample = build_training_sample(
                &position.traj,
                position.t,
                &resolved.targets,
                &resolved.search,
                stats_source,
                &params,
                &target_params,
                &mut cache,
                &mut batch_rng,
            )?;
            sample.weight = position.weight;
            if let Some(priority) = sample.new_priority {
                priority_updates.push((position.reference, priority));
            }
            batch.push(sample);
        }

        let mut grads = params.grad_store();
        let loss = compute_loss(
            &params,
            &target_params,
            &batch,
            resolved.search.discount,
            &resolved.train,
            &mut grads,
        )?;
        let grad_norm = grads.global_norm();
        let lr = cosine_lr(resolved.train.lr_init, step, resolved.train.max_steps);
        optimizer.apply(&mut params.set, &grads, lr);
        buffer.update_priorities(&priority_updates);
        final_loss = loss.total;

        let act_return = if recent_returns.is_empty() {
            0.0
        } else {
            recent_returns.iter().sum::<f64>() / recent_returns.len() as f64
        };
        writeln!(
            metrics,
            "{step},{lr},{},{},{},{},{grad_norm},{},{env_frames},{},{act_return}",
            loss.policy,
            loss.value,
            loss.reward,
            loss.total,
            buffer.num_positions(),
            recomputed as f64 / resolved.train.batch_size as f64,
        )?;

        if resolved.checkpoint_period > 0 && (step + 1) % resolved.checkpoint_period == 0 {
            save_checkpoint(&params, &out_dir.join(format!("model_{:06}.mzcp", step + 1)))?;
        }
    }
    metrics.flush()?;

    let checkpoint_path = out_dir.join("model.mzcp");
    save_checkpoint(&params, &checkpoint_path)?;

    let eval_returns = evaluate(
        &params,
        &resolved.env,
        resolved.eval_episodes,
        resolved.eval_mode,
        &resolved.search,
        muzero_core::rng::derive_seed(seed, &[4]),
    )?;
    let eval_mean = mean_return(&eval_returns);

    let report = RunReport {
        steps: resolved.train.max_steps,
        env_frames,
        episodes_acted,
        final_loss,
        eval_mean,
        eval_returns,
        checkpoint_path,
        metrics_path,
    };
    let summary = format!(
        "steps = {}\nenv_frames = {}\nepisodes_acted = {}\nfinal_loss = {}\neval_mean = {}\neval_episodes = {}\n",
        report.steps,
        report.env_frames,
        report.episodes_acted,
        report.final_loss,
        report.eval_mean,
        report.eval_returns.len(),
    );
    std::fs::write(out_dir.join("summary.toml"), summary)?;
    Ok(report)
}

/// Loads a checkpoint back for post-hoc evaluation.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    muzero_core::model::load_checkpoint(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use muzero_core::data::{generate_behavior_dataset, PolicySpec};
    use muzero_core::search::SearchConfig;

    fn tiny_online_config() -> ExperimentConfig {
        ExperimentConfig {
            hidden: 8,
            layers_per_block: 1,
            num_simulations: Some(4),
            batch_size: 4,
            max_steps: 6,
            eval_episodes: 2,
            unroll_steps: 2,
            td_steps: 3,
            replay_ratio: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn online_run_produces_all_artifacts_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = tiny_online_config().resolve().unwrap();
        let a = run_experiment(&resolved, &dir.path().join("a")).unwrap();
        let b = run_experiment(&resolved, &dir.path().join("b")).unwrap();
        assert_eq!(a.steps, 6);
        assert!(a.env_frames > 0);
        assert_eq!(a.env_frames, b.env_frames);
        assert_eq!(a.final_loss, b.final_loss);
        assert_eq!(a.eval_returns, b.eval_returns);
        assert_eq!(
            std::fs::read(&a.checkpoint_path).unwrap(),
            std::fs::read(&b.checkpoint_path).unwrap()
        );
        let metrics = std::fs::read_to_string(&a.metrics_path).unwrap();
        assert_eq!(metrics.lines().count(), 7);
        assert!(metrics.starts_with("step,lr,"));
        assert!(dir.path().join("a/config.toml").exists());
        assert!(dir.path().join("a/summary.toml").exists());
    }

    #[test]
    fn frame_credit_ties_env_usage_to_the_fresh_share() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_online_config();
        cfg.max_steps = 50;
        cfg.reanalyse_fraction = 0.75;
        let resolved = cfg.resolve().unwrap();
        let report = run_experiment(&resolved, dir.path()).unwrap();
        let expected = 50.0 * 4.0 * 0.25;
        assert!(
            (report.env_frames as f64) < 2.5 * expected + 20.0,
            "env frames {} for expected budget {expected}",
            report.env_frames
        );
        assert!(report.env_frames >= 10);
    }

    #[test]
    fn fully_offline_run_never_touches_the_environment() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("data.jsonl");
        generate_behavior_dataset(
            &ExperimentConfig::default().resolve().unwrap().env,
            &PolicySpec::EpsilonOracle { epsilon: 0.2 },
            30,
            5,
            &SearchConfig::new(4, 0.997),
            &data_path,
        )
        .unwrap();
        let mut cfg = tiny_online_config();
        cfg.reanalyse_fraction = 1.0;
        cfg.dataset = Some(data_path.to_string_lossy().into_owned());
        let resolved = cfg.resolve().unwrap();
        let report = run_experiment(&resolved, &dir.path().join("run")).unwrap();
        assert_eq!(report.env_frames, 0);
        assert_eq!(report.episodes_acted, 0);
        let metrics = std::fs::read_to_string(&report.metrics_path).unwrap();
        let last = metrics.lines().last().unwrap();
        assert!(last.ends_with(",1"), "expected fully recomputed batches: {last}");
    }

    #[test]
    fn cloning_losses_train_offline_without_search() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("data.jsonl");
        generate_behavior_dataset(
            &ExperimentConfig::default().resolve().unwrap().env,
            &PolicySpec::EpsilonOracle { epsilon: 0.2 },
            30,
            5,
            &SearchConfig::new(4, 0.997),
            &data_path,
        )
        .unwrap();
        for loss_mode in [LossMode::Bc, LossMode::Crr] {
            let mut cfg = tiny_online_config();
            cfg.loss_mode = loss_mode;
            cfg.dataset = Some(data_path.to_string_lossy().into_owned());
            let resolved = cfg.resolve().unwrap();
            let report =
                run_experiment(&resolved, &dir.path().join(format!("{loss_mode:?}"))).unwrap();
            assert_eq!(report.env_frames, 0);
            assert!(report.final_loss.is_finite());
        }
    }

    #[test]
    fn frame_budget_caps_acting_and_redirects_to_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_online_config();
        cfg.max_steps = 30;
        cfg.env_frame_budget = Some(40);
        let resolved = cfg.resolve().unwrap();
        let report = run_experiment(&resolved, dir.path()).unwrap();
        assert!(report.env_frames <= 40, "frames {}", report.env_frames);
        let metrics = std::fs::read_to_string(&report.metrics_path).unwrap();
        let last = metrics.lines().last().unwrap();
        assert!(last.ends_with(",1"), "after budget all targets recompute: {last}");
    }

    #[test]
    fn replay_ratio_divides_environment_usage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_online_config();
        cfg.max_steps = 100;
        let base = run_experiment(&cfg.resolve().unwrap(), &dir.path().join("r1")).unwrap();
        cfg.replay_ratio = 4.0;
        let quartered = run_experiment(&cfg.resolve().unwrap(), &dir.path().join("r4")).unwrap();
        assert!(
            (400..420).contains(&base.env_frames),
            "ratio 1 frames {}",
            base.env_frames
        );
        assert!(
            (100..120).contains(&quartered.env_frames),
            "ratio 4 frames {}",
            quartered.env_frames
        );
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("pm.jsonl");
        let pm_env = muzero_core::env::EnvDescriptor {
            kind: muzero_core::env::EnvKind::PointMass { episode_steps: 50 },
            sticky_prob: 0.0,
        };
        generate_behavior_dataset(
            &pm_env,
            &PolicySpec::PdController { kp: 0.8, kd: 1.2, noise: 0.1 },
            10,
            3,
            &SearchConfig::new(4, 0.99),
            &data_path,
        )
        .unwrap();
        let mut cfg = tiny_online_config();
        cfg.reanalyse_fraction = 1.0;
        cfg.dataset = Some(data_path.to_string_lossy().into_owned());
        let resolved = cfg.resolve().unwrap();
        let err = run_experiment(&resolved, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }
}
