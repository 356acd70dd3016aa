//! Dataset acquisition and environment construction shared by every
//! subcommand. Real MNIST comes from IDX files in `ALRL_DATA_DIR`; the mini
//! dataset is generated from the run seed.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alrl_core::data::{generate_mini_mnist, Dataset, ValidationSplit};
use alrl_core::env::ALEnv;
use alrl_core::idx::read_idx_file;

use crate::config::{DatasetChoice, ExperimentConfig};

pub const DATA_DIR_ENV: &str = "ALRL_DATA_DIR";

/// Training pool data plus the validation split used for rewards.
#[derive(Clone)]
pub struct ExperimentData {
    pub train: Arc<Dataset>,
    pub full_validation: Arc<Dataset>,
    pub reduced_validation: Arc<Dataset>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    match config.dataset {
        DatasetChoice::Mini => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9));
            let (train, val) = generate_mini_mnist(&config.mini_config(), &mut rng);
            let full = Arc::new(val);
            let reduced = config.validation_reduced.min(full.len());
            let split = ValidationSplit::new(full.clone(), reduced, &mut rng)
                .map_err(|e| anyhow!("{e}"))?;
            Ok(ExperimentData {
                train: Arc::new(train),
                full_validation: split.full,
                reduced_validation: split.reduced,
            })
        }
        DatasetChoice::Mnist => {
            let dir = std::env::var(DATA_DIR_ENV)
                .map(PathBuf::from)
                .with_context(|| format!("{DATA_DIR_ENV} must point at the IDX files"))?;
            let train = load_idx_dataset(&dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
            let test = load_idx_dataset(&dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
            let full = Arc::new(test);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9));
            let split = ValidationSplit::new(full.clone(), config.validation_reduced, &mut rng)
                .map_err(|e| anyhow!("{e}"))?;
            Ok(ExperimentData {
                train: Arc::new(train),
                full_validation: split.full,
                reduced_validation: split.reduced,
            })
        }
    }
}

fn load_idx_dataset(dir: &std::path::Path, images: &str, labels: &str) -> Result<Dataset> {
    let images = read_idx_file(&resolve(dir, images)?).map_err(|e| anyhow!("{e}"))?;
    let labels = read_idx_file(&resolve(dir, labels)?).map_err(|e| anyhow!("{e}"))?;
    Dataset::from_idx(&images, &labels, 10).map_err(|e| anyhow!("{e}"))
}

/// Accept both the plain file and the gzip variant.
fn resolve(dir: &std::path::Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    bail!("neither {} nor {}.gz found in {}", name, name, dir.display());
}

pub fn build_env(config: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<ALEnv> {
    ALEnv::new(
        data.train.clone(),
        data.reduced_validation.clone(),
        config.classifier_config(),
        config.env_config(),
        seed,
    )
    .map_err(|e| anyhow!("{e}"))
}
