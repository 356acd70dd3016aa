//! Evaluation protocol: greedy games to the budget, tracked F1 recorded after
//! every added image, multiple runs averaged and smoothed. The same protocol
//! drives the trained agent and the three baselines.

use anyhow::{anyhow, bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use alrl_core::agent::Agent;
use alrl_core::classifier::{macro_f1, F1Tracker, ICModel};
use alrl_core::data::DataPool;
use alrl_core::env::ExperimentMode;
use alrl_core::sampling::{
    select_random, select_variant1, select_variant2, ThresholdPolicy, Variant2Decision,
};

use crate::config::ExperimentConfig;
use crate::curve::{pad_run, EvalCurve, EvalRun};
use crate::runner::{build_env, ExperimentData};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Baseline {
    Random,
    BvssbVariant1,
    BvssbVariant2,
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Random => "random",
            Baseline::BvssbVariant1 => "bvssb1",
            Baseline::BvssbVariant2 => "bvssb2",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "random" => Ok(Baseline::Random),
            "bvssb1" => Ok(Baseline::BvssbVariant1),
            "bvssb2" => Ok(Baseline::BvssbVariant2),
            other => bail!("unknown baseline '{other}' (random|bvssb1|bvssb2)"),
        }
    }
}

/// Offset separating per-run RNG streams from the training seed.
fn run_seed(config: &ExperimentConfig, run: usize) -> u64 {
    config.seed.wrapping_add(1_000 + 7_919 * run as u64)
}

fn budget_grid(config: &ExperimentConfig) -> Vec<usize> {
    let step = if config.mode == ExperimentMode::Exp3Bundle { config.images_to_bundle } else { 1 };
    (1..=config.budget / step).map(|k| k * step).collect()
}

/// Play `evaluation_runs` greedy games with the agent and aggregate.
pub fn evaluate_agent(
    agent: &Agent,
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<EvalCurve> {
    let grid = budget_grid(config);
    let runs: Vec<EvalRun> = (0..config.evaluation_runs)
        .into_par_iter()
        .map(|run| agent_game(agent, config, data, run_seed(config, run), &grid))
        .collect::<Result<_>>()?;
    EvalCurve::aggregate("ddqn", runs)
}

/// One greedy game in the environment; records (added_images, tracked F1)
/// after every label action. Ends on budget, pool exhaustion or the
/// interaction cap (truncated, padded with the last value).
fn agent_game(
    agent: &Agent,
    config: &ExperimentConfig,
    data: &ExperimentData,
    seed: u64,
    grid: &[usize],
) -> Result<EvalRun> {
    let mut env = build_env(config, data, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut state = env.reset().map_err(|e| anyhow!("{e}"))?;
    let mut xs = Vec::new();
    let mut f1 = Vec::new();
    let mut added = 0usize;
    loop {
        let action = agent.act(&state, 1.0, &mut rng, true).map_err(|e| anyhow!("{e}"))?;
        let out = env.step(action).map_err(|e| anyhow!("{e}"))?;
        if out.info.added_images > added {
            added = out.info.added_images;
            if added <= config.budget {
                xs.push(added);
                f1.push(out.info.tracked_f1);
            }
        }
        if out.done {
            break;
        }
        state = out.state;
    }
    Ok(pad_run(xs, f1, grid))
}

/// Evaluate one baseline under the shared protocol.
pub fn evaluate_baseline(
    baseline: Baseline,
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<EvalCurve> {
    let grid: Vec<usize> = (1..=config.budget).collect();
    let runs: Vec<EvalRun> = (0..config.evaluation_runs)
        .into_par_iter()
        .map(|run| baseline_game(baseline, config, data, run_seed(config, run), &grid))
        .collect::<Result<_>>()?;
    EvalCurve::aggregate(baseline.name(), runs)
}

/// The classic pool-based loop: seed set, fit, select, label, refit, record.
fn baseline_game(
    baseline: Baseline,
    config: &ExperimentConfig,
    data: &ExperimentData,
    seed: u64,
    grid: &[usize],
) -> Result<EvalRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = DataPool::new(data.train.clone());
    pool.build_seed_set(config.initial_points_per_class, &mut rng)
        .map_err(|e| anyhow!("{e}"))?;
    let mut model =
        ICModel::new(config.classifier_config(), &mut rng).map_err(|e| anyhow!("{e}"))?;
    model
        .fit(&pool, &data.reduced_validation, &mut rng)
        .map_err(|e| anyhow!("{e}"))?;
    let mut tracker = F1Tracker::new(0.7);
    tracker.update(macro_f1(&model, &data.reduced_validation).map_err(|e| anyhow!("{e}"))?);

    let mut xs = Vec::new();
    let mut f1 = Vec::new();
    let mut label_and_record = |pool: &mut DataPool,
                                model: &mut ICModel,
                                tracker: &mut F1Tracker,
                                rng: &mut ChaCha8Rng,
                                id: usize,
                                added: usize|
     -> Result<()> {
        pool.label(id).map_err(|e| anyhow!("{e}"))?;
        model.fit(pool, &data.reduced_validation, rng).map_err(|e| anyhow!("{e}"))?;
        let raw = macro_f1(model, &data.reduced_validation).map_err(|e| anyhow!("{e}"))?;
        let tracked = tracker.update(raw);
        xs.push(added);
        f1.push(tracked);
        Ok(())
    };

    match baseline {
        Baseline::Random | Baseline::BvssbVariant1 => {
            for added in 1..=config.budget {
                if pool.unlabeled_len() == 0 {
                    break;
                }
                let id = match baseline {
                    Baseline::Random => select_random(&pool, &mut rng).map_err(|e| anyhow!("{e}"))?,
                    _ => select_variant1(&pool, &model).map_err(|e| anyhow!("{e}"))?,
                };
                label_and_record(&mut pool, &mut model, &mut tracker, &mut rng, id, added)?;
            }
        }
        Baseline::BvssbVariant2 => {
            // the exp2-style stream: five slots, skipped rounds decay the
            // threshold and replace one random slot
            let mut policy = ThresholdPolicy::default();
            let mut slots = pool
                .draw_candidates(policy.sample_size, &mut rng)
                .map_err(|e| anyhow!("{e}"))?;
            let mut added = 0usize;
            while added < config.budget && pool.unlabeled_len() > policy.sample_size {
                let decision = select_variant2(&mut policy, &slots, &pool, &model)
                    .map_err(|e| anyhow!("{e}"))?;
                match decision {
                    Variant2Decision::Add(id) => {
                        added += 1;
                        label_and_record(&mut pool, &mut model, &mut tracker, &mut rng, id, added)?;
                        let idx = slots.iter().position(|s| *s == id).expect("chosen from slots");
                        let fresh = pool
                            .draw_candidates_excluding(1, &slots, &mut rng)
                            .map_err(|e| anyhow!("{e}"))?;
                        slots[idx] = fresh[0];
                    }
                    Variant2Decision::Skip => {
                        let idx = rng.gen_range(0..slots.len());
                        let fresh = pool
                            .draw_candidates_excluding(1, &slots, &mut rng)
                            .map_err(|e| anyhow!("{e}"))?;
                        slots[idx] = fresh[0];
                    }
                }
            }
        }
    }
    Ok(pad_run(xs, f1, grid))
}

/// Run the requested baselines under identical per-run seeds.
pub fn run_baselines(
    baselines: &[Baseline],
    config: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<Vec<EvalCurve>> {
    baselines
        .iter()
        .map(|b| evaluate_baseline(*b, config, data))
        .collect()
}
