//! Gym-style active-learning environment. A game starts from a class-balanced
//! seed set and a freshly initialized classifier; every step the agent either
//! labels presented image(s) (which retrains the classifier and moves the
//! tracked F1) or asks for a replacement. Three modes: a single presented
//! image with label/notLabel actions, a sample of s images with s+1 actions,
//! and bundles of images per action with sub-games and soft resets.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{extract_metrics, macro_f1, ClassifierConfig, F1Tracker, ICModel};
use crate::data::{DataPool, Dataset};
use crate::error::{Error, Result};
use crate::sampling::score;

pub const MODEL_METRIC_COUNT: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    /// One image per state, actions {label, notLabel}.
    Exp1Single,
    /// A sample of s images, actions {pick slot 0..s-1, pick none}.
    Exp2Sample,
    /// s bundles of images; a pick labels the whole bundle. Sub-games of
    /// fixed length end in soft resets that rebaseline the reward.
    Exp3Bundle,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub mode: ExperimentMode,
    pub budget: usize,
    pub initial_points_per_class: usize,
    pub reward_shaping: bool,
    pub max_interactions_per_game: usize,
    pub sample_size: usize,
    pub bundle_size: usize,
    pub subgame_length: usize,
    pub reward_scale: f64,
    pub tracker_alpha: f64,
}

impl EnvConfig {
    pub fn exp1() -> Self {
        Self {
            mode: ExperimentMode::Exp1Single,
            budget: 800,
            initial_points_per_class: 5,
            reward_shaping: false,
            max_interactions_per_game: 1200,
            sample_size: 1,
            bundle_size: 1,
            subgame_length: 0,
            reward_scale: 1.0,
            tracker_alpha: 0.7,
        }
    }

    pub fn exp2() -> Self {
        Self { mode: ExperimentMode::Exp2Sample, sample_size: 5, ..Self::exp1() }
    }

    pub fn exp3() -> Self {
        Self {
            mode: ExperimentMode::Exp3Bundle,
            sample_size: 5,
            bundle_size: 5,
            subgame_length: 50,
            reward_scale: 40.0,
            ..Self::exp1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if self.sample_size == 0 || self.bundle_size == 0 {
            return Err(Error::Config("sample_size and bundle_size must be >= 1".into()));
        }
        if self.mode == ExperimentMode::Exp1Single && self.sample_size != 1 {
            return Err(Error::Config("exp1 presents exactly one image".into()));
        }
        if self.mode != ExperimentMode::Exp3Bundle && self.bundle_size != 1 {
            return Err(Error::Config("bundles exist only in exp3".into()));
        }
        if self.mode == ExperimentMode::Exp3Bundle && self.subgame_length == 0 {
            return Err(Error::Config("exp3 needs a positive subgame_length".into()));
        }
        if !(0.0..1.0).contains(&self.tracker_alpha) {
            return Err(Error::Config("tracker alpha must lie in [0,1)".into()));
        }
        Ok(())
    }

    pub fn action_space(&self) -> usize {
        match self.mode {
            ExperimentMode::Exp1Single => 2,
            _ => self.sample_size + 1,
        }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.sample_size + MODEL_METRIC_COUNT + 1
    }
}

/// Step result: new state, reward, terminal flag and advisory diagnostics.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub raw_f1: f64,
    pub tracked_f1: f64,
    pub labeled: usize,
    pub added_images: usize,
    /// true when the game ended on the interaction cap rather than the budget
    pub truncated: bool,
}

/// One row of the episode trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub interaction: usize,
    pub action: usize,
    pub reward: f64,
    pub labeled: usize,
    pub raw_f1: f64,
    pub tracked_f1: f64,
}

pub struct ALEnv {
    config: EnvConfig,
    train: Arc<Dataset>,
    reduced_val: Arc<Dataset>,
    pool: DataPool,
    model: ICModel,
    tracker: F1Tracker,
    slots: Vec<Vec<usize>>,
    initial_f1: f64,
    last_tracked_f1: f64,
    raw_f1: f64,
    seed_size: usize,
    added_images: usize,
    added_since_soft_reset: usize,
    interactions: usize,
    done: bool,
    initialized: bool,
    rng: ChaCha8Rng,
    trace: Vec<TraceRow>,
}

impl ALEnv {
    pub fn new(
        train: Arc<Dataset>,
        reduced_val: Arc<Dataset>,
        classifier: ClassifierConfig,
        config: EnvConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ICModel::new(classifier, &mut rng)?;
        let pool = DataPool::new(train.clone());
        Ok(Self {
            config,
            train,
            reduced_val,
            pool,
            model,
            tracker: F1Tracker::new(0.7),
            slots: Vec::new(),
            initial_f1: 0.0,
            last_tracked_f1: 0.0,
            raw_f1: 0.0,
            seed_size: 0,
            added_images: 0,
            added_since_soft_reset: 0,
            interactions: 0,
            done: false,
            initialized: false,
            rng,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_space(&self) -> usize {
        self.config.action_space()
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    pub fn model(&self) -> &ICModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ICModel {
        &mut self.model
    }

    pub fn pool(&self) -> &DataPool {
        &self.pool
    }

    pub fn tracked_f1(&self) -> f64 {
        self.tracker.current()
    }

    pub fn raw_f1(&self) -> f64 {
        self.raw_f1
    }

    pub fn added_images(&self) -> usize {
        self.added_images
    }

    pub fn added_since_soft_reset(&self) -> usize {
        self.added_since_soft_reset
    }

    pub fn interactions(&self) -> usize {
        self.interactions
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Hard reset: fresh seed set, random classifier parameters fit on it,
    /// tracker re-primed, counters zeroed, slots refilled.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        self.pool = DataPool::new(self.train.clone());
        self.pool.build_seed_set(self.config.initial_points_per_class, &mut self.rng)?;
        self.seed_size = self.pool.labeled_len();
        self.model.reinitialize(&mut self.rng)?;
        self.model.fit(&self.pool, &self.reduced_val, &mut self.rng)?;
        self.tracker = F1Tracker::new(self.config.tracker_alpha);
        self.raw_f1 = macro_f1(&self.model, &self.reduced_val)?;
        let tracked = self.tracker.update(self.raw_f1);
        self.initial_f1 = tracked;
        self.last_tracked_f1 = tracked;
        self.added_images = 0;
        self.added_since_soft_reset = 0;
        self.interactions = 0;
        self.done = false;
        self.initialized = true;
        self.trace.clear();
        self.fill_all_slots()?;
        self.build_state()
    }

    fn fill_all_slots(&mut self) -> Result<()> {
        let total = self.config.sample_size * self.config.bundle_size;
        let ids = self.pool.draw_candidates(total, &mut self.rng)?;
        self.slots = ids.chunks(self.config.bundle_size).map(|c| c.to_vec()).collect();
        Ok(())
    }

    fn other_slot_ids(&self, skip: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if i != skip {
                out.extend_from_slice(slot);
            }
        }
        out
    }

    /// Advance the MDP by one action. Label actions move the slot's images
    /// into L and retrain the classifier; the no-label action replaces one
    /// random slot without training.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if !self.initialized {
            return Err(Error::Logic("step before reset".into()));
        }
        if self.done {
            return Err(Error::Logic("step on a finished game".into()));
        }
        if action >= self.action_space() {
            return Err(Error::Input(format!(
                "action {action} outside [0, {})",
                self.action_space()
            )));
        }
        self.interactions += 1;

        let label_action = match self.config.mode {
            ExperimentMode::Exp1Single => action == 0,
            _ => action < self.config.sample_size,
        };
        let mut exhausted = false;
        if label_action {
            let slot_idx = if self.config.mode == ExperimentMode::Exp1Single { 0 } else { action };
            let ids = self.slots[slot_idx].clone();
            for id in &ids {
                self.pool.label(*id)?;
            }
            self.added_images += ids.len();
            self.added_since_soft_reset += ids.len();
            self.model.fit(&self.pool, &self.reduced_val, &mut self.rng)?;
            self.raw_f1 = macro_f1(&self.model, &self.reduced_val)?;
            self.tracker.update(self.raw_f1);
            let exclude = self.other_slot_ids(slot_idx);
            match self.pool.draw_candidates_excluding(
                self.config.bundle_size,
                &exclude,
                &mut self.rng,
            ) {
                Ok(fresh) => self.slots[slot_idx] = fresh,
                Err(Error::PoolExhausted { .. }) => exhausted = true,
                Err(e) => return Err(e),
            }
        } else {
            // Replace one slot (the only slot in exp1, a uniformly random
            // one otherwise) with fresh candidates; the classifier stays.
            let slot_idx = if self.config.sample_size == 1 {
                0
            } else {
                self.rng.gen_range(0..self.config.sample_size)
            };
            let mut exclude = self.other_slot_ids(slot_idx);
            exclude.extend_from_slice(&self.slots[slot_idx]);
            match self.pool.draw_candidates_excluding(
                self.config.bundle_size,
                &exclude,
                &mut self.rng,
            ) {
                Ok(fresh) => self.slots[slot_idx] = fresh,
                Err(Error::PoolExhausted { .. }) => exhausted = true,
                Err(e) => return Err(e),
            }
        }

        let budget_done = match self.config.mode {
            // exp3 runs sub-games until |L| - |seed| exceeds the budget
            ExperimentMode::Exp3Bundle => self.added_images > self.config.budget,
            _ => self.added_images >= self.config.budget,
        };
        let truncated = self.interactions >= self.config.max_interactions_per_game;
        let done = budget_done || truncated || exhausted;
        self.done = done;

        let tracked = self.tracker.current();
        let reward = if self.config.reward_shaping {
            let r = (tracked - self.last_tracked_f1) * self.config.reward_scale;
            self.last_tracked_f1 = tracked;
            r
        } else if done {
            (tracked - self.initial_f1) * self.config.reward_scale
        } else if self.config.mode == ExperimentMode::Exp3Bundle
            && self.added_since_soft_reset >= self.config.subgame_length
        {
            let r = (tracked - self.initial_f1) * self.config.reward_scale;
            self.soft_reset();
            r
        } else {
            0.0
        };

        let info = StepInfo {
            raw_f1: self.raw_f1,
            tracked_f1: tracked,
            labeled: self.pool.labeled_len(),
            added_images: self.added_images,
            truncated: truncated && !budget_done,
        };
        self.trace.push(TraceRow {
            interaction: self.interactions,
            action,
            reward,
            labeled: info.labeled,
            raw_f1: info.raw_f1,
            tracked_f1: info.tracked_f1,
        });
        let state = self.build_state()?;
        Ok(StepOutcome { state, reward, done, info })
    }

    /// Rebaseline the reward without touching the labeled set.
    fn soft_reset(&mut self) {
        self.initial_f1 = self.tracker.current();
        self.added_since_soft_reset = 0;
    }

    /// State layout: per slot [entropy, margin] (bundle means in exp3), then
    /// the 24 model parameter statistics, then the tracked F1.
    pub fn build_state(&self) -> Result<Vec<f64>> {
        if !self.initialized {
            return Err(Error::Logic("state requested before reset".into()));
        }
        let flat_ids: Vec<usize> = self.slots.iter().flatten().copied().collect();
        let probs = self.model.predict(&self.train.gather_images(&flat_ids))?;
        let mut state = Vec::with_capacity(self.state_dim());
        let bundle = self.config.bundle_size;
        for slot_idx in 0..self.slots.len() {
            let mut entropy = 0.0;
            let mut margin = 0.0;
            for j in 0..bundle {
                let s = score(probs.row(slot_idx * bundle + j))?;
                entropy += s.entropy;
                margin += s.margin_bvssb;
            }
            state.push(entropy / bundle as f64);
            state.push(margin / bundle as f64);
        }
        let metrics = extract_metrics(&self.model);
        if metrics.len() != MODEL_METRIC_COUNT {
            return Err(Error::Config(format!(
                "classifier exposes {} parameter statistics, state needs {MODEL_METRIC_COUNT}",
                metrics.len()
            )));
        }
        state.extend_from_slice(&metrics);
        state.push(self.tracker.current());
        debug_assert_eq!(state.len(), self.state_dim());
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite state vector".into()));
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mini_mnist, MiniMnistConfig};
    use crate::tensor::Tensor;

    fn mini_env(config: EnvConfig, seed: u64) -> ALEnv {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = MiniMnistConfig {
            classes: 4,
            train: 400,
            validation: 80,
            ..Default::default()
        };
        let (train, val) = generate_mini_mnist(&cfg, &mut rng);
        ALEnv::new(
            Arc::new(train),
            Arc::new(val),
            ClassifierConfig::mini(8, 4),
            config,
            seed,
        )
        .unwrap()
    }

    fn small_exp1() -> EnvConfig {
        EnvConfig {
            budget: 6,
            initial_points_per_class: 2,
            max_interactions_per_game: 20,
            ..EnvConfig::exp1()
        }
    }

    fn small_exp2() -> EnvConfig {
        EnvConfig {
            budget: 6,
            initial_points_per_class: 2,
            max_interactions_per_game: 20,
            ..EnvConfig::exp2()
        }
    }

    #[test]
    fn reset_builds_seed_set_and_state() {
        let mut env = mini_env(small_exp1(), 7);
        let state = env.reset().unwrap();
        assert_eq!(env.pool().labeled_len(), 8); // 2 per class, 4 classes
        assert_eq!(state.len(), 27);
        assert_eq!(env.action_space(), 2);
        assert!(state.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn full_scale_seed_set_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = MiniMnistConfig { classes: 10, train: 600, validation: 100, ..Default::default() };
        let (train, val) = generate_mini_mnist(&cfg, &mut rng);
        let mut env = ALEnv::new(
            Arc::new(train),
            Arc::new(val),
            ClassifierConfig::mini(8, 10),
            EnvConfig { budget: 10, max_interactions_per_game: 30, ..EnvConfig::exp1() },
            3,
        )
        .unwrap();
        env.reset().unwrap();
        assert_eq!(env.pool().labeled_len(), 50);
    }

    #[test]
    fn same_seed_same_initial_state() {
        let mut a = mini_env(small_exp2(), 11);
        let mut b = mini_env(small_exp2(), 11);
        assert_eq!(a.reset().unwrap(), b.reset().unwrap());
        let mut c = mini_env(small_exp2(), 12);
        assert_ne!(a.reset().unwrap(), c.reset().unwrap());
    }

    #[test]
    fn exp2_state_has_35_dims() {
        let mut env = mini_env(small_exp2(), 5);
        let state = env.reset().unwrap();
        assert_eq!(state.len(), 35);
        assert_eq!(env.action_space(), 6);
    }

    #[test]
    fn uniform_classifier_gives_zero_margin_and_full_entropy() {
        let mut env = mini_env(small_exp2(), 5);
        env.reset().unwrap();
        // zero the classification head: logits all 0 -> uniform softmax
        let n_layers = env.model().net.layers.len();
        let last = &mut env.model_mut().net.layers[n_layers - 1];
        last.weight = Tensor::zeros(last.weight.shape().to_vec());
        last.bias = Tensor::zeros(last.bias.shape().to_vec());
        let state = env.build_state().unwrap();
        for slot in 0..5 {
            assert!((state[2 * slot] - 4f64.ln()).abs() < 1e-9, "entropy slot {slot}");
            assert!(state[2 * slot + 1].abs() < 1e-9, "margin slot {slot}");
        }
    }

    #[test]
    fn not_label_keeps_pool_and_model() {
        let mut env = mini_env(small_exp1(), 13);
        env.reset().unwrap();
        let labeled = env.pool().labeled_len();
        let params_before: Vec<Tensor> =
            env.model().net.param_tensors().into_iter().cloned().collect();
        let out = env.step(1).unwrap();
        assert_eq!(env.pool().labeled_len(), labeled);
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
        let params_after = env.model().net.param_tensors();
        for (before, after) in params_before.iter().zip(params_after) {
            assert_eq!(before, after);
        }
    }

    #[test]
    fn label_action_grows_pool_and_accounts() {
        let mut env = mini_env(small_exp2(), 17);
        env.reset().unwrap();
        let seed = env.pool().labeled_len();
        let out = env.step(2).unwrap();
        assert_eq!(env.pool().labeled_len(), seed + 1);
        assert_eq!(out.info.added_images, 1);
        assert_eq!(env.pool().labeled_len() - seed, env.added_images());
    }

    #[test]
    fn budget_exactly_terminates_exp2() {
        let mut env = mini_env(small_exp2(), 19);
        env.reset().unwrap();
        for i in 0..6 {
            let out = env.step(0).unwrap();
            assert_eq!(out.done, i == 5, "step {i}");
            if out.done {
                assert_eq!(out.info.added_images, 6);
                assert!(!out.info.truncated);
            }
        }
        assert!(env.step(0).is_err());
    }

    #[test]
    fn interaction_cap_truncates() {
        let mut env = mini_env(
            EnvConfig { max_interactions_per_game: 3, ..small_exp2() },
            23,
        );
        env.reset().unwrap();
        env.step(5).unwrap();
        env.step(5).unwrap();
        let out = env.step(5).unwrap();
        assert!(out.done);
        assert!(out.info.truncated);
    }

    #[test]
    fn out_of_range_action_is_input_error() {
        let mut env = mini_env(small_exp2(), 29);
        env.reset().unwrap();
        assert!(matches!(env.step(6), Err(Error::Input(_))));
    }

    #[test]
    fn reward_telescoping_with_shaping() {
        let mut env = mini_env(
            EnvConfig { reward_shaping: true, budget: 5, ..small_exp2() },
            31,
        );
        env.reset().unwrap();
        let initial = env.tracked_f1();
        let mut total = 0.0;
        let mut done = false;
        let mut k = 0;
        while !done {
            let action = if k % 3 == 2 { 5 } else { k % 5 };
            let out = env.step(action).unwrap();
            total += out.reward;
            done = out.done;
            k += 1;
        }
        let expected = env.tracked_f1() - initial;
        assert!((total - expected).abs() <= 1e-9, "sum {total} vs {expected}");
    }

    #[test]
    fn exp3_subgame_soft_reset() {
        let config = EnvConfig {
            budget: 30,
            initial_points_per_class: 2,
            subgame_length: 10,
            max_interactions_per_game: 50,
            reward_scale: 40.0,
            bundle_size: 5,
            sample_size: 2,
            mode: ExperimentMode::Exp3Bundle,
            reward_shaping: false,
            tracker_alpha: 0.7,
        };
        let mut env = mini_env(config, 37);
        env.reset().unwrap();
        let initial = env.tracked_f1();
        let seed = env.pool().labeled_len();

        // first label action adds a bundle of 5: below subgame length
        let out = env.step(0).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(env.added_since_soft_reset(), 5);

        // second label action reaches 10 = subgame length: reward emitted,
        // counter reset, labeled set intact
        let out = env.step(1).unwrap();
        assert!(!out.done);
        let expected = 40.0 * (env.tracked_f1() - initial);
        assert!((out.reward - expected).abs() < 1e-12);
        assert_eq!(env.added_since_soft_reset(), 0);
        assert_eq!(env.pool().labeled_len(), seed + 10);
    }

    #[test]
    fn exp3_hard_stop_overshoots_budget_by_bundle() {
        let config = EnvConfig {
            budget: 10,
            initial_points_per_class: 2,
            subgame_length: 5,
            max_interactions_per_game: 50,
            bundle_size: 5,
            sample_size: 2,
            mode: ExperimentMode::Exp3Bundle,
            reward_shaping: false,
            reward_scale: 1.0,
            tracker_alpha: 0.7,
        };
        let mut env = mini_env(config, 41);
        env.reset().unwrap();
        // 10 added -> not done (strict >), 15 -> done
        assert!(!env.step(0).unwrap().done);
        assert!(!env.step(0).unwrap().done);
        let out = env.step(0).unwrap();
        assert!(out.done);
        assert_eq!(out.info.added_images, 15);
    }

    #[test]
    fn pool_exhaustion_ends_game() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MiniMnistConfig { classes: 2, train: 12, validation: 10, ..Default::default() };
        let (train, val) = generate_mini_mnist(&cfg, &mut rng);
        let mut env = ALEnv::new(
            Arc::new(train),
            Arc::new(val),
            ClassifierConfig::mini(8, 2),
            EnvConfig {
                budget: 100,
                initial_points_per_class: 2,
                max_interactions_per_game: 100,
                ..EnvConfig::exp1()
            },
            43,
        )
        .unwrap();
        env.reset().unwrap();
        // 12 points, 4 seeded, 1 in the slot: labeling repeatedly must end
        // with a pool-exhaustion done rather than an error.
        let mut done = false;
        let mut steps = 0;
        while !done {
            let out = env.step(0).unwrap();
            done = out.done;
            steps += 1;
            assert!(steps <= 10);
        }
    }

    #[test]
    fn trace_records_every_interaction() {
        let mut env = mini_env(small_exp2(), 47);
        env.reset().unwrap();
        env.step(0).unwrap();
        env.step(5).unwrap();
        env.step(1).unwrap();
        let trace = env.trace();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace[0].interaction, 1);
        assert_eq!(trace[1].action, 5);
        assert!(trace.iter().all(|r| r.tracked_f1 >= 0.0 && r.tracked_f1 <= 1.0));
    }
}
