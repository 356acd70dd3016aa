//! Q-value correlation diagnostics: per-feature moments from the replay
//! buffer, then single-feature sweeps across a two-standard-deviation range
//! while the remaining features hold sampled values. Plotted against the
//! Q-value of the matching label action, this shows whether the agent links
//! entropy/margin scores to picking an image.

use anyhow::{anyhow, bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alrl_core::agent::{Agent, ReplayBuffer};
use alrl_core::env::MODEL_METRIC_COUNT;

/// Which of a slot's two score features is swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepFeature {
    Entropy,
    Margin,
}

impl SweepFeature {
    pub fn name(&self) -> &'static str {
        match self {
            SweepFeature::Entropy => "entropy",
            SweepFeature::Margin => "margin",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub feature: SweepFeature,
    pub slot: usize,
    pub rep: usize,
    pub value: f64,
    pub q: f64,
}

/// Two-pass per-feature mean and population standard deviation over every
/// state stored in the buffer.
pub fn feature_moments(buffer: &ReplayBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    if buffer.is_empty() {
        bail!("replay buffer is empty");
    }
    let dim = buffer.get(0).state.len();
    let n = buffer.len() as f64;
    let mut mean = vec![0.0; dim];
    for t in buffer.iter() {
        if t.state.len() != dim {
            bail!("inconsistent state dimensions in buffer");
        }
        for (m, v) in mean.iter_mut().zip(&t.state) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for t in buffer.iter() {
        for (d, v) in t.state.iter().enumerate() {
            let delta = v - mean[d];
            var[d] += delta * delta;
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt()).collect();
    Ok((mean, std))
}

/// Number of presented slots implied by the state layout.
fn slot_count(state_dim: usize) -> Result<usize> {
    let score_dims = state_dim
        .checked_sub(MODEL_METRIC_COUNT + 1)
        .ok_or_else(|| anyhow!("state dimension {state_dim} too small"))?;
    if score_dims == 0 || score_dims % 2 != 0 {
        bail!("state dimension {state_dim} does not match the slot layout");
    }
    Ok(score_dims / 2)
}

/// Sweep every entropy- and margin-slot feature. For each repetition a base
/// state is drawn with every feature uniform in mean +- 2 std, then the swept
/// feature walks a grid across its own range while the rest stay fixed. The
/// recorded Q is the Q-value of the action that labels the swept slot.
pub fn diagnose_q_correlation(
    agent: &Agent,
    buffer: &ReplayBuffer,
    reps: usize,
    grid_points: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let (mean, std) = feature_moments(buffer)?;
    let dim = mean.len();
    if agent.config().state_dim != dim {
        bail!(
            "agent expects {} state dims, buffer holds {dim}",
            agent.config().state_dim
        );
    }
    let slots = slot_count(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for slot in 0..slots {
        for feature in [SweepFeature::Entropy, SweepFeature::Margin] {
            let feature_idx = 2 * slot
                + match feature {
                    SweepFeature::Entropy => 0,
                    SweepFeature::Margin => 1,
                };
            // exp1 has one slot and its label action is 0; otherwise the
            // label action index equals the slot index
            let action = if slots == 1 { 0 } else { slot };
            for rep in 0..reps {
                let base: Vec<f64> = (0..dim)
                    .map(|d| sample_range(mean[d], std[d], &mut rng))
                    .collect();
                let lo = mean[feature_idx] - 2.0 * std[feature_idx];
                let hi = mean[feature_idx] + 2.0 * std[feature_idx];
                let points = if std[feature_idx] == 0.0 { 1 } else { grid_points.max(1) };
                for g in 0..points {
                    let value = if points == 1 {
                        mean[feature_idx]
                    } else {
                        lo + (hi - lo) * g as f64 / (points - 1) as f64
                    };
                    let mut state = base.clone();
                    state[feature_idx] = value;
                    let q = agent.q_values(&state).map_err(|e| anyhow!("{e}"))?[action];
                    out.push(SweepPoint { feature, slot, rep, value, q });
                }
            }
        }
    }
    Ok(out)
}

fn sample_range<R: Rng>(mean: f64, std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        mean
    } else {
        rng.gen_range(mean - 2.0 * std..=mean + 2.0 * std)
    }
}
