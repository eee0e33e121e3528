//! Property tests for the invariants that hold for every input.

mod common;

use std::collections::BTreeSet;

use common::{oracle_assignment, small_learner, small_planted};
use interpoll::autodiff::{Graph, Tensor};
use interpoll::data::{
    filter_aligned_majority, gen_planted_shortcut, gen_prefix_shortcut, inject_label_noise, read_dataset,
    write_dataset, Dataset, Group, PlantedConfig, PrefixConfig,
};
use interpoll::grouping::{infer_min_maj, read_assignment, write_assignment, AssignmentSource, Flag};
use interpoll::model::{decode_checkpoint, encode_checkpoint, Model, ModelConfig};
use interpoll::probing::{mdl_probe, ProbeTask};
use interpoll::training::{train_erm, TrainConfig};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convex_combine_endpoints_are_exact(
        (a, b) in (1usize..8).prop_flat_map(|n| (finite_vec(n), finite_vec(n)))
    ) {
        let n = a.len();
        let mut g = Graph::new();
        let va = g.leaf(Tensor::new(vec![1, n], a.clone()).unwrap());
        let vb = g.leaf(Tensor::new(vec![1, n], b.clone()).unwrap());
        let lo = g.convex_combine(va, vb, 0.0).unwrap();
        let hi = g.convex_combine(va, vb, 1.0).unwrap();
        prop_assert!(g.value(lo).bitwise_eq(g.value(va)));
        prop_assert!(g.value(hi).bitwise_eq(g.value(vb)));
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_ln_k_only_for_constant_logits(
        z in (2usize..7).prop_flat_map(finite_vec),
        c in -50.0f64..50.0,
    ) {
        let k = z.len();
        let loss = |logits: &[f64], label: usize| {
            let mut g = Graph::new();
            let v = g.leaf(Tensor::new(vec![1, k], logits.to_vec()).unwrap());
            let l = g.softmax_cross_entropy(v, label).unwrap();
            g.scalar(l)
        };
        let ln_k = (k as f64).ln();
        let losses: Vec<f64> = (0..k).map(|y| loss(&z, y)).collect();
        prop_assert!(losses.iter().all(|&l| l >= 0.0));
        for y in 0..k {
            prop_assert!((loss(&vec![c; k], y) - ln_k).abs() < 1e-12);
        }
        // The label-averaged loss is lse(z) - mean(z) >= ln K, with equality
        // exactly for constant logits.
        let spread = z.iter().cloned().fold(f64::MIN, f64::max) - z.iter().cloned().fold(f64::MAX, f64::min);
        let mean = losses.iter().sum::<f64>() / k as f64;
        if spread > 1e-3 {
            prop_assert!(mean > ln_k);
        }
    }

    #[test]
    fn forward_pass_is_deterministic(seed in any::<u64>(), len in 1usize..6, label in 0usize..3) {
        let cfg = ModelConfig { vocab_size: 9, embed_dim: 4, hidden_dims: vec![5], num_classes: 3, seed };
        let model = Model::init(cfg).unwrap();
        let tokens: Vec<u32> = (0..len as u32).map(|t| (t * 7 + seed as u32) % 9).collect();
        let run = || {
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let z = model.encode_var(&mut g, &vars, &tokens, 1).unwrap();
            let logits = model.logits_var(&mut g, &vars, z).unwrap();
            let l = g.softmax_cross_entropy(logits, label).unwrap();
            g.scalar(l).to_bits()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn prediction_ignores_a_shared_logit_offset(seed in any::<u64>(), shift in -20.0f64..20.0) {
        let cfg = ModelConfig { vocab_size: 12, embed_dim: 4, hidden_dims: vec![6], num_classes: 4, seed };
        let model = Model::init(cfg).unwrap();
        let mut shifted = model.clone();
        shifted.classifier_mut().bias.values_mut().iter_mut().for_each(|b| *b += shift);
        let seqs: Vec<Vec<u32>> = (0..12u32).map(|t| vec![t, (t * 5 + 1) % 12]).collect();
        let a = model.predict_many(seqs.iter().map(Vec::as_slice)).unwrap();
        let b = shifted.predict_many(seqs.iter().map(Vec::as_slice)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn checkpoints_round_trip_bitwise(seed in any::<u64>(), depth in 0usize..3) {
        let cfg = ModelConfig { vocab_size: 7, embed_dim: 3, hidden_dims: vec![4; depth], num_classes: 2, seed };
        let model = Model::init(cfg).unwrap();
        prop_assert!(decode_checkpoint(&encode_checkpoint(&model)).unwrap().bitwise_eq(&model));
    }
}

fn planted_strategy() -> impl Strategy<Value = PlantedConfig> {
    (
        20usize..200,
        1usize..60,
        2usize..5,
        0.51f64..0.999,
        1usize..3,
        1usize..3,
        1usize..6,
        2usize..6,
        0.0f64..=1.0,
        any::<u64>(),
    )
        .prop_map(|(n, n_test, k, rho, core, short, noise, len, signal, seed)| PlantedConfig {
            n,
            n_test,
            num_classes: k,
            majority_fraction: rho,
            core_tokens_per_class: core,
            shortcut_tokens_per_class: short,
            noise_tokens: noise,
            sequence_length: len,
            core_signal: signal,
            seed,
        })
}

fn assert_balanced(d: &Dataset) -> Result<(), TestCaseError> {
    let counts = d.class_counts();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    prop_assert!(hi - lo <= 1, "class counts {counts:?}");
    Ok(())
}

fn assert_groups_match_alignment(d: &Dataset) -> Result<(), TestCaseError> {
    for e in d.examples() {
        prop_assert_eq!(e.group == Some(Group::Majority), e.shortcut_aligned == Some(true));
        prop_assert!(e.group.is_some() && e.shortcut_aligned.is_some());
    }
    Ok(())
}

fn ids(d: &Dataset) -> BTreeSet<u64> {
    d.examples().iter().map(|e| e.id).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn planted_generator_invariants(cfg in planted_strategy()) {
        let a = gen_planted_shortcut(&cfg).unwrap();
        let b = gen_planted_shortcut(&cfg).unwrap();
        let splits = [&a.train, &a.id_test, &a.ood_test];
        for (x, y) in splits.iter().zip([&b.train, &b.id_test, &b.ood_test]) {
            prop_assert_eq!(*x, y);
            assert_balanced(x)?;
            assert_groups_match_alignment(x)?;
        }
        let all: Vec<BTreeSet<u64>> = splits.iter().map(|d| ids(d)).collect();
        prop_assert!(all[0].is_disjoint(&all[1]) && all[0].is_disjoint(&all[2]) && all[1].is_disjoint(&all[2]));
        for d in splits {
            for e in d.examples() {
                prop_assert!(e.tokens.iter().all(|&t| (t as usize) < d.vocab_size()));
            }
        }
    }

    #[test]
    fn prefix_generator_invariants(
        n in 10usize..200, n_test in 1usize..50, k in 2usize..5, p in 0.0f64..=1.0, seed in any::<u64>()
    ) {
        let cfg = PrefixConfig { n, n_test, num_classes: k, p, seed, ..PrefixConfig::default() };
        let a = gen_prefix_shortcut(&cfg).unwrap();
        let b = gen_prefix_shortcut(&cfg).unwrap();
        prop_assert_eq!(&a.train, &b.train);
        prop_assert_eq!(&a.test, &b.test);
        prop_assert!(ids(&a.train).is_disjoint(&ids(&a.test)));
        for d in [&a.train, &a.test] {
            assert_balanced(d)?;
            assert_groups_match_alignment(d)?;
        }
    }

    #[test]
    fn label_noise_flips_exactly_the_requested_count(
        cfg in planted_strategy(), fraction in 0.0f64..=1.0, noise_seed in any::<u64>()
    ) {
        let d = gen_planted_shortcut(&cfg).unwrap().train;
        let noisy = inject_label_noise(&d, fraction, noise_seed).unwrap();
        let flipped = d.examples().iter().zip(noisy.examples()).filter(|(a, b)| a.label != b.label).count();
        prop_assert_eq!(flipped, (fraction * d.len() as f64).round() as usize);
        prop_assert_eq!(noisy, inject_label_noise(&d, fraction, noise_seed).unwrap());
    }

    #[test]
    fn filtering_keeps_exactly_the_unaligned_examples(cfg in planted_strategy()) {
        let d = gen_planted_shortcut(&cfg).unwrap().train;
        match filter_aligned_majority(&d) {
            Ok((kept, counts)) => {
                prop_assert_eq!(counts.kept + counts.removed, d.len());
                prop_assert!(kept.examples().iter().all(|e| e.shortcut_aligned == Some(false)));
                prop_assert_eq!(kept.len(), d.examples().iter().filter(|e| e.shortcut_aligned == Some(false)).count());
            }
            Err(_) => prop_assert!(d.examples().iter().all(|e| e.shortcut_aligned == Some(true))),
        }
    }

    #[test]
    fn datasets_round_trip_through_jsonl(cfg in planted_strategy()) {
        let d = gen_planted_shortcut(&cfg).unwrap().ood_test;
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn inferred_groups_partition_the_training_ids(seed in any::<u64>()) {
        let data = small_planted(seed);
        let d = &data.train;
        let (aux, _) = train_erm(Model::init(small_learner(d, seed)).unwrap(), d, &TrainConfig::erm(1, 64, 0.01, seed)).unwrap();
        let source = AssignmentSource { variant: "tiny".into(), seed };
        let a = infer_min_maj(&aux, d, source.clone()).unwrap();
        prop_assert_eq!(&a, &infer_min_maj(&aux, d, source).unwrap());
        let flagged: BTreeSet<u64> = a.flags().keys().copied().collect();
        prop_assert_eq!(flagged, ids(d));
        let minority = a.flags().values().filter(|f| **f == Flag::InferredMinority).count();
        prop_assert_eq!(minority, a.minority_count());
        let mut buf = Vec::new();
        write_assignment(&a, &mut buf).unwrap();
        prop_assert_eq!(read_assignment(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn probe_compression_ignores_class_relabeling(
        seed in any::<u64>(), perm in Just(vec![0usize, 1, 2]).prop_shuffle()
    ) {
        let d = small_planted(seed).ood_test;
        let model = Model::init(small_learner(&d, seed)).unwrap();
        let reps = model.encode_many(d.token_seqs(), None).unwrap();
        let targets = d.shortcut_classes().unwrap();
        let relabeled: Vec<usize> = targets.iter().map(|&t| perm[t]).collect();
        let a = mdl_probe(&ProbeTask::new(reps.clone(), targets, 3, None).unwrap(), seed).unwrap();
        let b = mdl_probe(&ProbeTask::new(reps, relabeled, 3, None).unwrap(), seed).unwrap();
        prop_assert!((a.compression - b.compression).abs() < 1e-9 * a.compression);
        prop_assert!(a.online_bits > 0.0 && a.online_bits.is_finite());
    }
}

#[test]
fn oracle_flags_recover_full_recall() {
    let data = small_planted(3);
    let a = oracle_assignment(&data.train);
    assert_eq!(interpoll::grouping::minority_recall(&a, &data.train).unwrap(), 1.0);
}
