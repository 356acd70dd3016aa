//! Uncertainty scores over class-probability vectors and the three baseline
//! selectors: random, full-pool BvsSB (variant 1) and the thresholded
//! stream variant (variant 2).

use rand::Rng;

use crate::classifier::ICModel;
use crate::data::DataPool;
use crate::error::{Error, Result};

/// Per-instance uncertainty metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScores {
    /// 1 - max probability
    pub least_confident: f64,
    /// gap between the two highest probabilities; small = informative
    pub margin_bvssb: f64,
    /// Shannon entropy (natural log), with 0*ln(0) taken as 0
    pub entropy: f64,
}

/// Score one probability vector. The vector must have at least two entries
/// and sum to 1 within 1e-6.
pub fn score(p: &[f64]) -> Result<UncertaintyScores> {
    if p.len() < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {}", p.len())));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(Error::Input(format!("not a probability distribution (sum {sum})")));
    }
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut entropy = 0.0;
    for &v in p {
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
        if v > 0.0 {
            entropy -= v * v.ln();
        }
    }
    Ok(UncertaintyScores {
        least_confident: 1.0 - top,
        margin_bvssb: top - second,
        entropy,
    })
}

/// Adaptive threshold controlling how many presented images variant 2 skips.
/// A rejected round decays the threshold; an accepted image resets it.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdPolicy {
    pub threshold: f64,
    pub initial: f64,
    pub decay: f64,
    pub sample_size: usize,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self { threshold: 0.8, initial: 0.8, decay: 0.05, sample_size: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant2Decision {
    Add(usize),
    Skip,
}

/// Variant 1: the single most promising image out of all unlabeled
/// datapoints — the argmin of the BvsSB margin over U, ties broken by the
/// lowest id.
pub fn select_variant1(pool: &DataPool, model: &ICModel) -> Result<usize> {
    let unlabeled = pool.unlabeled_ids();
    if unlabeled.is_empty() {
        return Err(Error::PoolExhausted { requested: 1, available: 0 });
    }
    let mut best_id = usize::MAX;
    let mut best_margin = f64::INFINITY;
    // Chunked scoring keeps the forward-pass scratch bounded on big pools.
    for chunk in unlabeled.chunks(512) {
        let probs = model.predict(&pool.dataset().gather_images(chunk))?;
        for (i, id) in chunk.iter().enumerate() {
            let margin = score(probs.row(i))?.margin_bvssb;
            if margin < best_margin || (margin == best_margin && *id < best_id) {
                best_margin = margin;
                best_id = *id;
            }
        }
    }
    Ok(best_id)
}

/// Variant 2: given `sample_size` candidates, add the most informative one if
/// its informativeness (1 - margin) clears the threshold, otherwise skip and
/// decay the threshold (floored at 0).
pub fn select_variant2(
    policy: &mut ThresholdPolicy,
    candidates: &[usize],
    pool: &DataPool,
    model: &ICModel,
) -> Result<Variant2Decision> {
    if candidates.len() != policy.sample_size {
        return Err(Error::Input(format!(
            "expected {} candidates, got {}",
            policy.sample_size,
            candidates.len()
        )));
    }
    let probs = model.predict(&pool.dataset().gather_images(candidates))?;
    let mut best_idx = 0;
    let mut best_info = f64::NEG_INFINITY;
    for i in 0..candidates.len() {
        let info = 1.0 - score(probs.row(i))?.margin_bvssb;
        if info > best_info {
            best_info = info;
            best_idx = i;
        }
    }
    if best_info >= policy.threshold {
        policy.threshold = policy.initial;
        Ok(Variant2Decision::Add(candidates[best_idx]))
    } else {
        policy.threshold = (policy.threshold - policy.decay).max(0.0);
        Ok(Variant2Decision::Skip)
    }
}

/// Uniformly random unlabeled id.
pub fn select_random<R: Rng>(pool: &DataPool, rng: &mut R) -> Result<usize> {
    let unlabeled = pool.unlabeled_ids();
    if unlabeled.is_empty() {
        return Err(Error::PoolExhausted { requested: 1, available: 0 });
    }
    Ok(unlabeled[rng.gen_range(0..unlabeled.len())])
}
