//! Agent training: the interaction loop over the environment with the greed
//! and learning-rate schedules, replay storage, per-step updates and
//! best-agent caching via periodic greedy evaluation games.

use anyhow::{anyhow, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alrl_core::agent::{Agent, GreedSchedule, LearningRateSchedule, ReplayBuffer, Transition};
use alrl_core::checkpoint::CheckpointMeta;
use alrl_core::env::TraceRow;

use crate::config::ExperimentConfig;
use crate::runner::{build_env, ExperimentData};

/// One row of the training log CSV.
#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub interaction: usize,
    pub game: usize,
    pub loss: f64,
    pub reward: f64,
    pub tau: f64,
    pub lr: f64,
}

pub struct TrainOutputs {
    pub final_agent: Agent,
    pub final_meta: CheckpointMeta,
    pub best_agent: Agent,
    pub best_meta: CheckpointMeta,
    /// cumulated reward of the mid-training evaluation game that produced
    /// the best checkpoint
    pub best_score: f64,
    pub buffer: ReplayBuffer,
    pub log: Vec<TrainLogRow>,
    /// per-game episode traces, flattened with their game index
    pub traces: Vec<(usize, TraceRow)>,
}

/// Run the full training loop for `minTrainingInteractions` interactions.
pub fn train_agent(config: &ExperimentConfig, data: &ExperimentData) -> Result<TrainOutputs> {
    config.validate()?;
    let mut env = build_env(config, data, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut agent = Agent::new(config.agent_config(), &mut rng).map_err(|e| anyhow!("{e}"))?;
    let mut buffer = ReplayBuffer::new(config.memory_max_length);

    let greed = GreedSchedule {
        tau_start: config.greed_parameter_range.0,
        tau_end: config.greed_parameter_range.1,
        exploration_steps: config.exploration,
        conversion_steps: config.conversion,
    };
    let lr_schedule = LearningRateSchedule::new(
        config.agent_learning_rate_range.0,
        config.agent_learning_rate_range.1,
        config.min_training_interactions,
    );

    let total = config.min_training_interactions;
    let mut log = Vec::with_capacity(total);
    let mut traces = Vec::new();
    let mut game = 0usize;
    let mut state = env.reset().map_err(|e| anyhow!("{e}"))?;

    let mut best_agent = agent.clone();
    let mut best_meta = CheckpointMeta { training_step: 0, tau: greed.tau(0), lr: lr_schedule.lr(0) };
    let mut best_score = f64::NEG_INFINITY;

    for step in 0..total {
        let tau = greed.tau(step);
        let lr = lr_schedule.lr(step);
        let action = agent.act(&state, tau, &mut rng, false).map_err(|e| anyhow!("{e}"))?;
        let out = env.step(action).map_err(|e| anyhow!("{e}"))?;
        buffer.push(Transition {
            state: std::mem::take(&mut state),
            action,
            reward: out.reward,
            next_state: out.state.clone(),
            done: out.done,
        });
        let loss = agent.train_step(&buffer, lr, &mut rng).map_err(|e| anyhow!("{e}"))?;
        log.push(TrainLogRow { interaction: step + 1, game, loss, reward: out.reward, tau, lr });

        if out.done {
            for row in env.trace() {
                traces.push((game, *row));
            }
            game += 1;
            if config.best_agent_eval_every_games > 0
                && game % config.best_agent_eval_every_games == 0
            {
                let score = evaluation_game_score(&agent, config, data)?;
                if score > best_score {
                    best_score = score;
                    best_agent = agent.clone();
                    best_meta = CheckpointMeta { training_step: (step + 1) as u64, tau, lr };
                }
            }
            state = env.reset().map_err(|e| anyhow!("{e}"))?;
        } else {
            state = out.state;
        }
    }
    // trailing partial game
    for row in env.trace() {
        traces.push((game, *row));
    }

    let final_meta = CheckpointMeta {
        training_step: total as u64,
        tau: greed.tau(total),
        lr: lr_schedule.lr(total),
    };
    if best_score == f64::NEG_INFINITY {
        best_agent = agent.clone();
        best_meta = final_meta;
    }
    Ok(TrainOutputs {
        final_agent: agent,
        final_meta,
        best_agent,
        best_meta,
        best_score,
        buffer,
        log,
        traces,
    })
}

/// One greedy game on a fixed-seed evaluation environment; the cumulated
/// reward ranks checkpoints during training.
fn evaluation_game_score(
    agent: &Agent,
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<f64> {
    let mut env = build_env(config, data, config.seed.wrapping_add(500_000))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(500_001));
    let mut state = env.reset().map_err(|e| anyhow!("{e}"))?;
    let mut total = 0.0;
    loop {
        let action = agent.act(&state, 1.0, &mut rng, true).map_err(|e| anyhow!("{e}"))?;
        let out = env.step(action).map_err(|e| anyhow!("{e}"))?;
        total += out.reward;
        if out.done {
            return Ok(total);
        }
        state = out.state;
    }
}
