use std::collections::{BTreeMap, BTreeSet};

use approx::assert_relative_eq;
use osal_core::embedding::squared_distance;
use osal_core::open_set::{novelty_density, novelty_entropy, novelty_nn_distance};
use osal_core::pseudo_label::{kmeans_from, kmeans_pp_init};
use osal_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vectors(
    n: std::ops::Range<usize>,
    dim: usize,
    lo: f64,
    hi: f64,
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(lo..hi, dim), n)
}

fn labeled(points: &[Vec<f64>], labels: &[Label]) -> LabeledSet {
    LabeledSet::from_members(
        points
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (p, &l))| {
                LabeledEmbedding::new(Embedding::new(format!("c{i}"), p.clone()).unwrap(), l)
            })
            .collect(),
    )
    .unwrap()
}

fn pool(points: &[Vec<f64>], known: &BTreeSet<Label>) -> UnlabeledPool {
    UnlabeledPool::new(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (Embedding::new(format!("u{i}"), p.clone()).unwrap(), 0))
            .collect(),
        known,
    )
    .unwrap()
}

/// Centres labelled from `0..4`.
fn center_set(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Label>)> {
    (1usize..20).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(lo..hi, dim), n),
            prop::collection::vec(0u32..4, n),
        )
    })
}

fn naive_posterior(
    x: &[f64],
    points: &[Vec<f64>],
    labels: &[Label],
    sigma: f64,
) -> BTreeMap<Label, f64> {
    let mut num: BTreeMap<Label, f64> = BTreeMap::new();
    let mut den = 0.0;
    for (p, &l) in points.iter().zip(labels) {
        let k = (-squared_distance(x, p) / (2.0 * sigma * sigma)).exp();
        *num.entry(l).or_insert(0.0) += k;
        den += k;
    }
    num.into_iter().map(|(l, v)| (l, v / den)).collect()
}

fn naive_silhouette(points: &[Vec<f64>], assignment: &[usize]) -> f64 {
    let n = points.len();
    let k = assignment.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[assignment[j]] += squared_distance(&points[i], &points[j]).sqrt();
                counts[assignment[j]] += 1;
            }
        }
        let own = assignment[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn embedding_files_round_trip_exactly(pts in vectors(1..10, 3, -1e6, 1e6), labels in prop::collection::vec(0u32..5, 10)) {
        let set = labeled(&pts, &labels[..pts.len()]);
        for format in [io::FileFormat::Csv, io::FileFormat::Jsonl] {
            let text = io::write_labeled_set(&set, io::SplitTag::Train, format, &["note".into()]);
            let back = io::parse_embedding_file(text.as_bytes(), format).unwrap().into_labeled_set().unwrap();
            prop_assert_eq!(back.members(), set.members());
        }
    }

    #[test]
    fn traces_round_trip_exactly(scores in prop::collection::vec(-1e3..1e3f64, 1..20)) {
        let trace = AlTrace {
            steps: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| active_learning::TraceStep { step: i + 1, id: format!("u{i}"), score, label: 1, was_novel: i % 2 == 0 })
                .collect(),
            snapshots: vec![active_learning::Snapshot { step: scores.len(), novel_acc: scores[0].abs() / 1e3, combined_acc: 0.5, novel_degenerate: false }],
        };
        let (_, back) = io::parse_trace(io::write_trace(&trace, None).as_bytes()).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn distance_axioms(pts in vectors(3..4, 5, -50.0, 50.0)) {
        let (a, b, c) = (&pts[0], &pts[1], &pts[2]);
        let ab = euclidean_distance(a, b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, euclidean_distance(b, a).unwrap());
        prop_assert_eq!(euclidean_distance(a, a).unwrap(), 0.0);
        if a != b {
            prop_assert!(ab > 0.0);
        }
        let via = euclidean_distance(a, c).unwrap() + euclidean_distance(c, b).unwrap();
        prop_assert!(ab <= via * (1.0 + 1e-9));
    }

    #[test]
    fn nearest_neighbors_prefix((pts, labels) in center_set(3, -5.0, 5.0), q in prop::collection::vec(-5.0..5.0f64, 3)) {
        let set = labeled(&pts, &labels);
        let all = nearest_neighbors(&q, &set, set.len()).unwrap();
        for k in 1..=set.len() {
            prop_assert_eq!(&nearest_neighbors(&q, &set, k).unwrap()[..], &all[..k]);
        }
    }

    #[test]
    fn split_conserves_ids(
        labels in prop::collection::vec(0u32..6, 2..60),
        frac in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.iter().collect::<BTreeSet<_>>().len() >= 2);
        let data: Vec<LabeledEmbedding> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledEmbedding::new(Embedding::new(format!("p{i}"), vec![i as f64]).unwrap(), l))
            .collect();
        let split = split_known_novel(&data, &KnownAssignment::FirstFraction(0.5), frac, seed).unwrap();
        prop_assert!(split.train.labels().all(|l| !split.novel_classes.contains(&l)));
        let mut ids: Vec<String> = split.train.ids().map(str::to_owned).collect();
        ids.extend(split.observed.members().iter().map(|e| e.id().to_owned()));
        ids.extend(split.test.members().iter().map(|e| e.id().to_owned()));
        ids.sort();
        let mut source: Vec<String> = data.iter().map(|m| m.embedding.id().to_owned()).collect();
        source.sort();
        prop_assert_eq!(ids, source);
    }

    #[test]
    fn posterior_is_normalised((pts, labels) in center_set(4, -100.0, 100.0), q in prop::collection::vec(-100.0..100.0f64, 4), sigma in 0.1..1000.0f64) {
        let set = labeled(&pts, &labels);
        let post = class_posterior(&q, &set, &KernelParams::new(sigma).unwrap()).unwrap();
        let total: f64 = post.probs().values().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(post.probs().values().all(|p| p.is_finite() && *p >= 0.0));
    }

    #[test]
    fn posterior_shift_invariant(
        (pts, labels) in center_set(3, -10.0, 10.0),
        q in prop::collection::vec(-10.0..10.0f64, 3),
        shift in prop::collection::vec(-1000.0..1000.0f64, 3),
        sigma in 0.5..50.0f64,
    ) {
        let params = KernelParams::new(sigma).unwrap();
        let base = class_posterior(&q, &labeled(&pts, &labels), &params).unwrap();
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
        let mq: Vec<f64> = q.iter().zip(&shift).map(|(a, s)| a + s).collect();
        let after = class_posterior(&mq, &labeled(&moved, &labels), &params).unwrap();
        for (l, p) in base.probs() {
            prop_assert!((p - after.prob(*l)).abs() <= 1e-9, "{} vs {}", p, after.prob(*l));
        }
    }

    #[test]
    fn posterior_wide_kernel_gives_class_frequencies((pts, labels) in center_set(3, -10.0, 10.0), q in prop::collection::vec(-10.0..10.0f64, 3)) {
        let post = class_posterior(&q, &labeled(&pts, &labels), &KernelParams::new(1e6).unwrap()).unwrap();
        for (l, p) in post.probs() {
            let freq = labels.iter().filter(|&&x| x == *l).count() as f64 / labels.len() as f64;
            prop_assert!((p - freq).abs() <= 1e-3);
        }
    }

    #[test]
    fn posterior_matches_naive_double_loop(
        (pts, labels) in center_set(4, -3.0, 3.0),
        q in prop::collection::vec(-3.0..3.0f64, 4),
        sigma in 1.0..10.0f64,
    ) {
        let post = class_posterior(&q, &labeled(&pts, &labels), &KernelParams::new(sigma).unwrap()).unwrap();
        for (l, p) in naive_posterior(&q, &pts, &labels, sigma) {
            prop_assert!((post.prob(l) - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn density_and_entropy_ignore_label_names(
        (pts, labels) in center_set(3, -5.0, 5.0),
        q in prop::collection::vec(-5.0..5.0f64, 3),
        perm in Just(vec![10u32, 11, 12, 13]).prop_shuffle(),
        sigma in 0.5..5.0f64,
    ) {
        let params = KernelParams::new(sigma).unwrap();
        let a = labeled(&pts, &labels);
        let renamed: Vec<Label> = labels.iter().map(|&l| perm[l as usize]).collect();
        let b = labeled(&pts, &renamed);
        assert_relative_eq!(novelty_density(&q, &a, &params).unwrap(), novelty_density(&q, &b, &params).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(novelty_entropy(&q, &a, &params).unwrap(), novelty_entropy(&q, &b, &params).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn nn_distance_never_grows_with_more_centers(
        (pts, labels) in center_set(3, -5.0, 5.0),
        q in prop::collection::vec(-5.0..5.0f64, 3),
        extra in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let mut set = labeled(&pts, &labels);
        let before = novelty_nn_distance(&q, &set).unwrap();
        insert_center(&mut set, LabeledEmbedding::new(Embedding::new("extra", extra).unwrap(), 0)).unwrap();
        prop_assert!(novelty_nn_distance(&q, &set).unwrap() <= before);
    }

    #[test]
    fn verdict_depends_only_on_score_and_threshold(score in -10.0..10.0f64, delta in -10.0..10.0f64) {
        let p = OpenSetPrediction::decide(3, score, delta);
        prop_assert_eq!(p.is_novel(), score > delta);
        prop_assert!(!OpenSetPrediction::decide(3, delta, delta).is_novel());
        prop_assert_eq!(p, OpenSetPrediction::decide(3, score, delta));
    }

    #[test]
    fn auroc_invariant_under_increasing_maps(scores in prop::collection::vec((-20i32..20, any::<bool>()), 2..40)) {
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let base: Vec<(f64, bool)> = scores.iter().map(|&(s, y)| (s as f64, y)).collect();
        let a = auroc(&base).unwrap();
        let exp: Vec<(f64, bool)> = base.iter().map(|&(s, y)| (s.exp(), y)).collect();
        let affine: Vec<(f64, bool)> = base.iter().map(|&(s, y)| (3.0 * s + 7.0, y)).collect();
        prop_assert_eq!(a, auroc(&exp).unwrap());
        prop_assert_eq!(a, auroc(&affine).unwrap());
    }

    #[test]
    fn auroc_of_negated_scores_is_complement(
        order in (2usize..40).prop_flat_map(|n| (Just((0..n).collect::<Vec<_>>()).prop_shuffle(), prop::collection::vec(any::<bool>(), n))),
    ) {
        let (ranks, ys) = order;
        prop_assume!(ys.iter().any(|&y| y) && ys.iter().any(|&y| !y));
        let s: Vec<(f64, bool)> = ranks.iter().zip(&ys).map(|(&r, &y)| (r as f64, y)).collect();
        let neg: Vec<(f64, bool)> = s.iter().map(|&(v, y)| (-v, y)).collect();
        prop_assert!((auroc(&s).unwrap() + auroc(&neg).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn calibrated_threshold_maximises_f1(scores in prop::collection::vec((-10i32..10, any::<bool>()), 1..30)) {
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let s: Vec<(f64, bool)> = scores.iter().map(|&(v, y)| (v as f64 / 2.0, y)).collect();
        let delta = calibrate_threshold(&s, open_set::CalibrationObjective::MaxF1).unwrap();
        let best = f1_at_threshold(&s, delta).unwrap();
        for c in open_set::candidate_thresholds(&s) {
            prop_assert!(best >= f1_at_threshold(&s, c).unwrap());
        }
    }

    #[test]
    fn recall_non_decreasing_in_m(pts in vectors(2..25, 3, -5.0, 5.0), seed in any::<u64>()) {
        let labels: Vec<Label> = (0..pts.len()).map(|i| ((i as u64 ^ seed) % 3) as Label).collect();
        let mut prev = 0.0;
        for m in 1..pts.len() {
            let r = recall_at_m(&pts, &labels, m).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn lloyd_inertia_never_increases(pts in vectors(4..40, 2, -10.0, 10.0), k in 1usize..4, seed in any::<u64>()) {
        let c = kmeans(&pts, k, seed, 300, 0.0).unwrap();
        for w in c.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", c.inertia_history);
        }
    }

    #[test]
    fn kmeans_ignores_point_order(
        pts in prop::collection::vec(prop::collection::vec(0i32..20, 2), 6..30),
        k in 2usize..4,
        seed in any::<u64>(),
        shuffle_seed in any::<u64>(),
    ) {
        let pts: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
        let distinct: BTreeSet<Vec<i64>> = pts.iter().map(|p| p.iter().map(|&v| v as i64).collect()).collect();
        prop_assume!(distinct.len() >= k);
        let init = kmeans_pp_init(&pts, k, seed).unwrap();
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let a = kmeans_from(&pts, init.clone(), 300, 0.0).unwrap();
        let b = kmeans_from(&shuffled, init, 300, 0.0).unwrap();
        prop_assert_eq!(&a.centroids, &b.centroids);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.assignment[i], b.assignment[j]);
        }
        prop_assert!((a.inertia - b.inertia).abs() <= 1e-9 * a.inertia.max(1.0));
    }

    #[test]
    fn silhouette_matches_naive(pts in vectors(3..25, 2, -5.0, 5.0), k in 2usize..4) {
        prop_assume!(pts.len() >= k);
        let assignment: Vec<usize> = (0..pts.len()).map(|i| i % k).collect();
        let s = silhouette_score(&pts, &assignment).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(s, naive_silhouette(&pts, &assignment));
    }

    #[test]
    fn uldr_argmax_matches_raw_ratio(
        centers in vectors(1..6, 2, -3.0, 3.0),
        unlabeled in vectors(2..15, 2, -3.0, 3.0),
        sigma in 1.0..5.0f64,
    ) {
        let params = KernelParams::new(sigma).unwrap();
        let known = BTreeSet::from([0]);
        let c = labeled(&centers, &vec![0; centers.len()]);
        let u = pool(&unlabeled, &known);
        let remaining: Vec<usize> = (0..u.len()).collect();
        let raw: Vec<f64> = (0..u.len()).map(|i| uldr_score(i, &u, &c, &params).unwrap().exp()).collect();
        let mut best = 0;
        for (i, r) in raw.iter().enumerate() {
            if *r > raw[best] {
                best = i;
            }
        }
        let strategy = QueryStrategy::new(StrategyKind::Uldr, 0);
        let pick = select_query(&u, &remaining, &c, &strategy, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // exp can merge scores that differ by less than an ulp
        prop_assert!(pick.index == best || raw[pick.index] == raw[best]);
    }

    #[test]
    fn uldr_drops_near_a_queried_point(
        centers in vectors(1..6, 2, -4.0, 4.0),
        unlabeled in vectors(3..15, 2, -4.0, 4.0),
        q in 0usize..15,
        sigma in 0.5..3.0f64,
    ) {
        let q = q % unlabeled.len();
        let params = KernelParams::new(sigma).unwrap();
        let known = BTreeSet::from([0]);
        let c = labeled(&centers, &vec![0; centers.len()]);
        let before = pool(&unlabeled, &known);
        let rest: Vec<Vec<f64>> = unlabeled.iter().enumerate().filter(|&(i, _)| i != q).map(|(_, p)| p.clone()).collect();
        let after_pool = pool(&rest, &known);
        let mut after_centers = c.clone();
        insert_center(&mut after_centers, LabeledEmbedding::new(Embedding::new("queried", unlabeled[q].clone()).unwrap(), 0)).unwrap();
        for (j_after, j) in (0..unlabeled.len()).filter(|&j| j != q).enumerate() {
            if euclidean_distance(&unlabeled[j], &unlabeled[q]).unwrap() > 5.0 * sigma {
                continue;
            }
            let s0 = uldr_score(j, &before, &c, &params).unwrap();
            let s1 = uldr_score(j_after, &after_pool, &after_centers, &params).unwrap();
            prop_assert!(s1 <= s0 + 1e-12, "{} -> {}", s0, s1);
        }
    }

    #[test]
    fn center_only_strategies_ignore_extra_pool_members(
        centers in vectors(2..6, 2, -3.0, 3.0),
        unlabeled in vectors(2..10, 2, -3.0, 3.0),
        extra in vectors(1..10, 2, 50.0, 60.0),
    ) {
        let params = KernelParams::new(1.5).unwrap();
        let known = BTreeSet::from([0, 1]);
        let labels: Vec<Label> = (0..centers.len()).map(|i| (i % 2) as Label).collect();
        let c = labeled(&centers, &labels);
        let small = pool(&unlabeled, &known);
        let mut all = unlabeled.clone();
        all.extend(extra);
        let big = pool(&all, &known);
        for kind in [StrategyKind::Kde, StrategyKind::Fnn, StrategyKind::Entropy] {
            let strategy = QueryStrategy::new(kind, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let remaining: Vec<usize> = (0..unlabeled.len()).collect();
            let a = select_query(&small, &remaining, &c, &strategy, &params, &mut rng).unwrap();
            let b = select_query(&big, &remaining, &c, &strategy, &params, &mut rng).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn uldr_alone_reacts_to_a_crowd_of_unlabeled_points() {
    let params = KernelParams::new(1.0).unwrap();
    let known = BTreeSet::from([0, 1]);
    let c = labeled(&[vec![0.0, 0.0], vec![10.0, 0.0]], &[0, 1]);
    // u0 sits between the two classes; u1 is close to class 0 only.
    let base = vec![vec![5.0, 3.0], vec![0.0, 5.0]];
    let mut crowded = base.clone();
    crowded.extend([vec![0.3, 4.8], vec![-0.3, 4.8], vec![0.0, 4.7]]);
    for kind in StrategyKind::ALL {
        if kind == StrategyKind::Random {
            continue;
        }
        let strategy = QueryStrategy::new(kind, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_query(
            &pool(&base, &known),
            &[0, 1],
            &c,
            &strategy,
            &params,
            &mut rng,
        )
        .unwrap();
        let b = select_query(
            &pool(&crowded, &known),
            &[0, 1, 2, 3, 4],
            &c,
            &strategy,
            &params,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.index, 0, "{kind:?}");
        if kind == StrategyKind::Uldr {
            assert_eq!(b.index, 1);
        } else {
            assert_eq!(a, b, "{kind:?}");
        }
    }
}
