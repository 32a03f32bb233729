//! Loss-mode by evaluation-mode ablation grid.
//!
//! Trains the three loss modes on the same offline dataset and scores
//! each trained model under the three evaluation modes, writing one
//! CSV with all nine cells. The interesting comparisons are within a
//! column (how much the unrolled-model loss buys over cloning) and
//! within a row (how much search at evaluation time buys over the raw
//! policy head).

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use muzero_core::error::Result;
use muzero_core::eval::{evaluate, mean_return, EvalMode};
use muzero_core::rng::derive_seed;
use muzero_core::train::LossMode;

use crate::config::ExperimentConfig;
use crate::runner::{load_params, run_experiment};

pub const LOSS_MODES: [LossMode; 3] = [LossMode::Reanalyse, LossMode::Bc, LossMode::Crr];
pub const EVAL_MODES: [EvalMode; 3] =
    [EvalMode::PolicySample, EvalMode::MaxValue, EvalMode::Mcts];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub loss_mode: LossMode,
    pub eval_mode: EvalMode,
    pub mean_return: f64,
}

fn mode_dir_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::Reanalyse => "reanalyse",
        LossMode::Bc => "bc",
        LossMode::Crr => "crr",
    }
}

fn eval_mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::PolicySample => "policy_sample",
        EvalMode::MaxValue => "max_value",
        EvalMode::Mcts => "mcts",
    }
}

/// Runs the full grid. The base config must point at a dataset; each
/// loss mode trains once (reanalyse fully offline) and is then scored
/// under every evaluation mode with a shared evaluation seed.
pub fn run_ablation(base: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AblationCell>> {
    std::fs::create_dir_all(out_dir)?;
    let mut cells = Vec::with_capacity(9);
    for loss_mode in LOSS_MODES {
        let mut cfg = base.clone();
        cfg.loss_mode = loss_mode;
        if loss_mode == LossMode::Reanalyse {
            cfg.reanalyse_fraction = 1.0;
        }
        let resolved = cfg.resolve()?;
        let run_dir = out_dir.join(mode_dir_name(loss_mode));
        let report = run_experiment(&resolved, &run_dir)?;
        let params = load_params(&report.checkpoint_path)?;
        for eval_mode in EVAL_MODES {
            let returns = evaluate(
                &params,
                &resolved.env,
                resolved.eval_episodes,
                eval_mode,
                &resolved.search,
                derive_seed(resolved.seed, &[5]),
            )?;
            cells.push(AblationCell {
                loss_mode,
                eval_mode,
                mean_return: mean_return(&returns),
            });
        }
    }

    let mut csv = BufWriter::new(File::create(out_dir.join("ablation.csv"))?);
    writeln!(csv, "loss_mode,eval_mode,mean_return")?;
    for cell in &cells {
        writeln!(
            csv,
            "{},{},{}",
            mode_dir_name(cell.loss_mode),
            eval_mode_name(cell.eval_mode),
            cell.mean_return
        )?;
    }
    csv.flush()?;
    Ok(cells)
}
