use std::collections::BTreeSet;

use osal_core::open_set::novelty_nn_distance;
use osal_core::pseudo_label::KMeansOptions;
use osal_core::*;

fn nn_auroc(split: &DatasetSplit) -> f64 {
    let scores: Vec<(f64, bool)> = split
        .test
        .members()
        .iter()
        .zip(split.test.hidden_truth())
        .map(|(e, t)| {
            (
                novelty_nn_distance(e.vector(), &split.train).unwrap(),
                t.is_novel,
            )
        })
        .collect();
    auroc(&scores).unwrap()
}

#[test]
fn generated_splits_are_balanced_and_disjoint() {
    for seed in 0..5 {
        let split = generate_mixture(&MixtureConfig::separable(seed)).unwrap();
        assert_eq!(split.known_classes, (0..10).collect::<BTreeSet<_>>());
        assert_eq!(split.novel_classes, (10..20).collect::<BTreeSet<_>>());
        assert!(split.train.labels().all(|l| l < 10));
        for pool in [&split.observed, &split.test] {
            let novel = pool.hidden_truth().iter().filter(|t| t.is_novel).count();
            assert!(novel.abs_diff(pool.len() - novel) <= 1);
        }
        let mut ids: Vec<&str> = split.train.ids().collect();
        ids.extend(split.observed.members().iter().map(|e| e.id()));
        ids.extend(split.test.members().iter().map(|e| e.id()));
        let unique: BTreeSet<&str> = ids.iter().copied().collect();
        assert_eq!(unique.len(), ids.len());
    }
}

#[test]
fn tighter_classes_never_hurt_nn_auroc() {
    for seed in 0..5 {
        let aucs: Vec<f64> = [3.0, 2.0, 1.0]
            .iter()
            .map(|&std| {
                let cfg = MixtureConfig {
                    within_class_std: std,
                    ..MixtureConfig::hard(seed)
                };
                nn_auroc(&generate_mixture(&cfg).unwrap())
            })
            .collect();
        assert!(
            aucs.windows(2).all(|w| w[1] >= w[0]),
            "seed {seed}: {aucs:?}"
        );
    }
}

#[test]
fn zero_noise_gives_perfect_nn_auroc() {
    let cfg = MixtureConfig {
        within_class_std: 0.0,
        ..MixtureConfig::separable(3)
    };
    assert_eq!(nn_auroc(&generate_mixture(&cfg).unwrap()), 1.0);
}

#[test]
fn select_k_finds_three_blobs() {
    let mut hits = 0;
    for seed in 0..10 {
        let cfg = MixtureConfig {
            n_classes: 3,
            dim: 2,
            per_class_count: 20,
            class_center_spread: 30.0,
            within_class_std: 0.5,
            fraction_known: 1.0,
            train_fraction: 1.0,
            seed,
        };
        let points: Vec<Vec<f64>> = synthetic::generate_points(&cfg)
            .unwrap()
            .into_iter()
            .map(|m| m.embedding.vector().to_vec())
            .collect();
        let sel = select_k(&points, &[2, 3, 4, 5, 6], seed, &KMeansOptions::default()).unwrap();
        hits += usize::from(sel.k == 3);
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn active_learning_conserves_ids() {
    let split = generate_mixture(&MixtureConfig::separable(1)).unwrap();
    let params = KernelParams::new(10.0).unwrap();
    for kind in StrategyKind::ALL {
        let cfg = AlConfig::new(15, QueryStrategy::new(kind, 1), params);
        let mut oracle = SimulatedOracle::new(&split.observed);
        let run = run_active_learning(&split, &cfg, &mut oracle).unwrap();
        assert_eq!(run.trace.steps.len(), 15);
        let queried: BTreeSet<&str> = run.trace.queried_ids().collect();
        assert_eq!(queried.len(), 15);
        let mut expected: BTreeSet<&str> = split.train.ids().collect();
        expected.extend(&queried);
        assert_eq!(run.labeled.ids().collect::<BTreeSet<_>>(), expected);
        let left: BTreeSet<&str> = run
            .remaining
            .iter()
            .map(|&i| split.observed.members()[i].id())
            .collect();
        assert!(left.is_disjoint(&queried));
        assert_eq!(left.len() + queried.len(), split.observed.len());
    }
}
