//! Cross-module checks: the baseline selectors against brute-force scoring
//! over the same model predictions.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alrl_core::classifier::{ClassifierConfig, ICModel};
use alrl_core::data::{generate_mini_mnist, DataPool, MiniMnistConfig};
use alrl_core::sampling::{score, select_variant1, select_variant2, ThresholdPolicy, Variant2Decision};
use alrl_core::tensor::Tensor;

fn setup(seed: u64) -> (Arc<alrl_core::data::Dataset>, ICModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MiniMnistConfig { classes: 4, train: 120, validation: 40, ..Default::default() };
    let (train, _) = generate_mini_mnist(&cfg, &mut rng);
    let model = ICModel::new(ClassifierConfig::mini(8, 4), &mut rng).unwrap();
    (Arc::new(train), model)
}

/// Brute force: score every unlabeled id one at a time and take the argmin
/// margin with the lowest-id tie rule.
fn brute_force_variant1(pool: &DataPool, model: &ICModel) -> usize {
    let mut best_id = usize::MAX;
    let mut best_margin = f64::INFINITY;
    let mut ids: Vec<usize> = pool.unlabeled_ids().to_vec();
    ids.sort_unstable();
    for id in ids {
        let probs = model.predict(&pool.dataset().gather_images(&[id])).unwrap();
        let margin = score(probs.row(0)).unwrap().margin_bvssb;
        if margin < best_margin {
            best_margin = margin;
            best_id = id;
        }
    }
    best_id
}

#[test]
fn variant1_matches_brute_force() {
    for seed in 0..5 {
        let (train, model) = setup(seed);
        let pool = DataPool::new(train);
        assert_eq!(
            select_variant1(&pool, &model).unwrap(),
            brute_force_variant1(&pool, &model),
            "seed {seed}"
        );
    }
}

#[test]
fn variant1_single_candidate_and_shuffle_invariance() {
    let (train, model) = setup(11);
    let n = train.len();
    let mut pool = DataPool::new(train.clone());
    for id in 0..n - 1 {
        pool.label(id).unwrap();
    }
    assert_eq!(select_variant1(&pool, &model).unwrap(), n - 1);

    // two pools over the same U with different internal orders agree
    let mut a = DataPool::new(train.clone());
    a.label(3).unwrap();
    a.label(17).unwrap();
    let mut b = DataPool::new(train);
    b.label(17).unwrap();
    b.label(3).unwrap();
    assert_eq!(select_variant1(&a, &model).unwrap(), select_variant1(&b, &model).unwrap());
}

#[test]
fn variant1_all_equal_margins_takes_lowest_id() {
    let (train, mut model) = setup(13);
    // uniform predictions: zero the classification head
    let last = model.net.layers.len() - 1;
    model.net.layers[last].weight = Tensor::zeros(model.net.layers[last].weight.shape().to_vec());
    model.net.layers[last].bias = Tensor::zeros(model.net.layers[last].bias.shape().to_vec());
    let mut pool = DataPool::new(train);
    pool.label(0).unwrap();
    pool.label(1).unwrap();
    assert_eq!(select_variant1(&pool, &model).unwrap(), 2);
}

#[test]
fn variant2_uniform_model_always_adds_and_resets() {
    let (train, mut model) = setup(17);
    let last = model.net.layers.len() - 1;
    model.net.layers[last].weight = Tensor::zeros(model.net.layers[last].weight.shape().to_vec());
    model.net.layers[last].bias = Tensor::zeros(model.net.layers[last].bias.shape().to_vec());
    let pool = DataPool::new(train);
    let mut policy = ThresholdPolicy::default();
    let candidates = [0, 1, 2, 3, 4];
    // margin 0 -> informativeness 1 >= 0.8 -> add, threshold stays reset
    for _ in 0..3 {
        let decision = select_variant2(&mut policy, &candidates, &pool, &model).unwrap();
        assert!(matches!(decision, Variant2Decision::Add(_)));
        assert_eq!(policy.threshold, 0.8);
    }
}

#[test]
fn variant2_confident_model_decays_to_zero_then_adds() {
    let (train, mut model) = setup(19);
    // force near-one-hot predictions: huge bias on class 0
    let last = model.net.layers.len() - 1;
    model.net.layers[last].weight = Tensor::zeros(model.net.layers[last].weight.shape().to_vec());
    model.net.layers[last].bias = Tensor::new(vec![4], vec![60.0, 0.0, 0.0, 0.0]).unwrap();
    let pool = DataPool::new(train);
    let mut policy = ThresholdPolicy::default();
    let candidates = [5, 6, 7, 8, 9];
    // informativeness ~ 0 < threshold: 16 skips walk 0.8 down to 0
    for k in 1..=16 {
        let decision = select_variant2(&mut policy, &candidates, &pool, &model).unwrap();
        assert_eq!(decision, Variant2Decision::Skip, "skip {k}");
        let expected = (0.8 - 0.05 * k as f64).max(0.0);
        assert!((policy.threshold - expected).abs() < 1e-12);
    }
    assert!(policy.threshold.abs() < 1e-12);
    // at threshold 0 every candidate clears it
    let decision = select_variant2(&mut policy, &candidates, &pool, &model).unwrap();
    assert!(matches!(decision, Variant2Decision::Add(_)));
    assert_eq!(policy.threshold, 0.8);
}

#[test]
fn variant2_wrong_candidate_count_rejected() {
    let (train, model) = setup(23);
    let pool = DataPool::new(train);
    let mut policy = ThresholdPolicy::default();
    assert!(select_variant2(&mut policy, &[0, 1], &pool, &model).is_err());
}
