//! Experiment configuration: a flat key-value text file whose keys mirror the
//! appendix parameter tables (`targetNetworkUpdateRate`, `memoryMaxLength`,
//! ...), plus presets for the three experiment modes at full and desk scale.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use alrl_core::agent::AgentConfig;
use alrl_core::classifier::ClassifierConfig;
use alrl_core::data::MiniMnistConfig;
use alrl_core::env::{EnvConfig, ExperimentMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    /// Synthetic 8x8 blob data, generated from the run seed.
    Mini,
    /// Real IDX files from the directory in `ALRL_DATA_DIR`.
    Mnist,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: ExperimentMode,
    pub dataset: DatasetChoice,
    pub seed: u64,

    pub budget: usize,
    pub initial_points_per_class: usize,
    pub reward_shaping: bool,
    pub max_interactions_per_game: usize,
    pub sample_size: usize,
    pub images_to_bundle: usize,
    pub subgame_length: usize,
    pub reward_scaling: f64,

    pub ic_model_max_epochs: usize,
    pub early_stopping_patience: usize,
    pub validation_reduced: usize,

    pub agent_batch_size: usize,
    pub target_network_update_rate: usize,
    pub memory_max_length: usize,
    pub greed_parameter_range: (f64, f64),
    pub agent_learning_rate_range: (f64, f64),
    pub min_training_interactions: usize,
    pub exploration: usize,
    pub conversion: usize,
    pub agent_hidden: (usize, usize),
    pub best_agent_eval_every_games: usize,

    pub evaluation_runs: usize,
    pub checkpoints: Vec<usize>,

    pub mini_classes: usize,
    pub mini_train: usize,
    pub mini_validation: usize,
}

impl ExperimentConfig {
    /// Full-scale single-image setup.
    pub fn exp1_full() -> Self {
        Self {
            mode: ExperimentMode::Exp1Single,
            dataset: DatasetChoice::Mnist,
            seed: 42,
            budget: 800,
            initial_points_per_class: 5,
            reward_shaping: false,
            max_interactions_per_game: 1200,
            sample_size: 1,
            images_to_bundle: 1,
            subgame_length: 0,
            reward_scaling: 1.0,
            ic_model_max_epochs: 50,
            early_stopping_patience: 1,
            validation_reduced: 1000,
            agent_batch_size: 64,
            target_network_update_rate: 10,
            memory_max_length: 1000,
            greed_parameter_range: (1.0, 0.2),
            agent_learning_rate_range: (0.001, 0.00001),
            min_training_interactions: 12000,
            exploration: 4000,
            conversion: 4000,
            agent_hidden: (24, 12),
            best_agent_eval_every_games: 10,
            evaluation_runs: 15,
            checkpoints: vec![100, 400, 800],
            mini_classes: 10,
            mini_train: 2000,
            mini_validation: 500,
        }
    }

    /// Full-scale sample setup (state in R^35, 6 actions).
    pub fn exp2_full() -> Self {
        Self {
            mode: ExperimentMode::Exp2Sample,
            sample_size: 5,
            agent_hidden: (48, 24),
            ..Self::exp1_full()
        }
    }

    /// Full-scale bundle setup with sub-games.
    pub fn exp3_full() -> Self {
        Self {
            mode: ExperimentMode::Exp3Bundle,
            sample_size: 5,
            images_to_bundle: 5,
            subgame_length: 50,
            reward_scaling: 40.0,
            min_training_interactions: 8000,
            exploration: 3000,
            conversion: 3000,
            agent_hidden: (48, 24),
            ..Self::exp1_full()
        }
    }

    /// Desk-scale exp2 preset on synthetic data: budget 200, 5 evaluation
    /// runs, dense reward shaping and a short schedule so a training run
    /// finishes in minutes.
    pub fn exp2_desk() -> Self {
        Self {
            dataset: DatasetChoice::Mini,
            budget: 200,
            max_interactions_per_game: 400,
            reward_shaping: true,
            reward_scaling: 40.0,
            validation_reduced: 400,
            min_training_interactions: 2200,
            exploration: 600,
            conversion: 1000,
            agent_learning_rate_range: (0.003, 0.0003),
            best_agent_eval_every_games: 4,
            evaluation_runs: 5,
            checkpoints: vec![50, 100, 200],
            ..Self::exp2_full()
        }
    }

    /// Desk-scale baseline-only preset (no agent training knobs changed).
    pub fn baselines_desk() -> Self {
        Self { reward_shaping: false, ..Self::exp2_desk() }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            mode: self.mode,
            budget: self.budget,
            initial_points_per_class: self.initial_points_per_class,
            reward_shaping: self.reward_shaping,
            max_interactions_per_game: self.max_interactions_per_game,
            sample_size: self.sample_size,
            bundle_size: if self.mode == ExperimentMode::Exp3Bundle {
                self.images_to_bundle
            } else {
                1
            },
            subgame_length: self.subgame_length,
            reward_scale: self.reward_scaling,
            tracker_alpha: 0.7,
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        let env = self.env_config();
        AgentConfig {
            state_dim: env.state_dim(),
            action_space: env.action_space(),
            hidden: self.agent_hidden,
            l2: 0.001,
            leaky_slope: 0.3,
            batchnorm: true,
            gamma: 0.9,
            target_sync: self.target_network_update_rate,
            batch_size: self.agent_batch_size,
            memory_capacity: self.memory_max_length,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let mut cfg = match self.dataset {
            DatasetChoice::Mnist => ClassifierConfig::mnist(),
            DatasetChoice::Mini => ClassifierConfig::mini(8, self.mini_classes),
        };
        cfg.max_epochs = self.ic_model_max_epochs;
        cfg
    }

    pub fn mini_config(&self) -> MiniMnistConfig {
        MiniMnistConfig {
            classes: self.mini_classes,
            train: self.mini_train,
            validation: self.mini_validation,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.early_stopping_patience != 1 {
            bail!("earlyStoppingPatience is fixed at 1 by the training rule");
        }
        if self.exploration + self.conversion > self.min_training_interactions {
            bail!(
                "exploration ({}) + conversion ({}) exceed minTrainingInteractions ({})",
                self.exploration,
                self.conversion,
                self.min_training_interactions
            );
        }
        if self.evaluation_runs == 0 {
            bail!("evaluationRuns must be >= 1");
        }
        if self.checkpoints.is_empty() {
            bail!("checkpoints must not be empty");
        }
        self.env_config().validate().map_err(|e| anyhow!("{e}"))?;
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let mode = match pairs.get("mode").map(String::as_str) {
            Some("exp1") => ExperimentMode::Exp1Single,
            Some("exp2") | None => ExperimentMode::Exp2Sample,
            Some("exp3") => ExperimentMode::Exp3Bundle,
            Some(other) => bail!("unknown mode '{other}' (expected exp1|exp2|exp3)"),
        };
        let mut cfg = match mode {
            ExperimentMode::Exp1Single => Self::exp1_full(),
            ExperimentMode::Exp2Sample => Self::exp2_full(),
            ExperimentMode::Exp3Bundle => Self::exp3_full(),
        };
        for (key, value) in &pairs {
            apply_key(&mut cfg, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_key_values(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected 'key = value', got '{raw}'", lineno + 1))?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parse_range(value: &str) -> Result<(f64, f64)> {
    let inner = value
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .ok_or_else(|| anyhow!("expected '[a, b]', got '{value}'"))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("expected exactly two values in '{value}'");
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>> {
    let inner = value
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .ok_or_else(|| anyhow!("expected '[a, b, ...]', got '{value}'"))?;
    inner
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(Into::into))
        .collect()
}

fn parse_pair_usize(value: &str) -> Result<(usize, usize)> {
    let list = parse_usize_list(value)?;
    if list.len() != 2 {
        bail!("expected exactly two values in '{value}'");
    }
    Ok((list[0], list[1]))
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("expected a boolean, got '{other}'"),
    }
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let ctx = |e: anyhow::Error| anyhow!("key '{key}': {e}");
    match key {
        "mode" => {} // handled up front to pick the preset
        "dataset" => {
            cfg.dataset = match value {
                "mini" => DatasetChoice::Mini,
                "mnist" => DatasetChoice::Mnist,
                other => bail!("unknown dataset '{other}' (expected mini|mnist)"),
            }
        }
        "seed" => cfg.seed = value.parse().map_err(|e: std::num::ParseIntError| ctx(e.into()))?,
        "budget" => cfg.budget = value.parse()?,
        "initialPointsPerClass" => cfg.initial_points_per_class = value.parse()?,
        "rewardShaping" => cfg.reward_shaping = parse_bool(value).map_err(ctx)?,
        "maxInteractionPerGame" => cfg.max_interactions_per_game = value.parse()?,
        "sampleSize" => cfg.sample_size = value.parse()?,
        "imagesToBundle" => cfg.images_to_bundle = value.parse()?,
        "subGameLength" => cfg.subgame_length = value.parse()?,
        "rewardScaling" => cfg.reward_scaling = value.parse()?,
        "icModelMaxEpochs" => cfg.ic_model_max_epochs = value.parse()?,
        "earlyStoppingPatience" => cfg.early_stopping_patience = value.parse()?,
        "validationReduced" => cfg.validation_reduced = value.parse()?,
        "agentBatchSize" => cfg.agent_batch_size = value.parse()?,
        "targetNetworkUpdateRate" => cfg.target_network_update_rate = value.parse()?,
        "memoryMaxLength" => cfg.memory_max_length = value.parse()?,
        "greedParameterRange" => cfg.greed_parameter_range = parse_range(value).map_err(ctx)?,
        "agentLearningRateRange" => {
            cfg.agent_learning_rate_range = parse_range(value).map_err(ctx)?
        }
        "minTrainingInteractions" => cfg.min_training_interactions = value.parse()?,
        "exploration" => cfg.exploration = value.parse()?,
        "conversion" => cfg.conversion = value.parse()?,
        "agentHidden" => cfg.agent_hidden = parse_pair_usize(value).map_err(ctx)?,
        "bestAgentEvalEveryGames" => cfg.best_agent_eval_every_games = value.parse()?,
        "evaluationRuns" => cfg.evaluation_runs = value.parse()?,
        "checkpoints" => cfg.checkpoints = parse_usize_list(value).map_err(ctx)?,
        "miniClasses" => cfg.mini_classes = value.parse()?,
        "miniTrain" => cfg.mini_train = value.parse()?,
        "miniValidation" => cfg.mini_validation = value.parse()?,
        other => bail!("unknown config key '{other}'"),
    }
    Ok(())
}
