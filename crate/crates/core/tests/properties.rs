use meterguard_core::attacks::{awgn, fgsm, label_flip, pgd};
use meterguard_core::autodiff::{Tape, Tensor};
use meterguard_core::data::{
    inject_drop, inject_spike, normalize, split, AnomalyKind, Injection, LabeledDataset, LoadProfile, SpikeDirection,
};
use meterguard_core::evaluation::{asr_from_labels, compute_metrics, AsrProtocol};
use meterguard_core::federation::{assign_malicious, fedavg, select_clients};
use meterguard_core::models::{decode_weights, encode_weights, Architecture, FocalLoss, LstmConfig, Model, WeightMap};
use proptest::prelude::*;

fn labels(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, 1..max)
}

fn profile() -> impl Strategy<Value = LoadProfile> {
    prop::array::uniform24(0.0f64..10.0).prop_map(|values| LoadProfile { values, day_index: 0 })
}

fn clean_dataset(profiles: Vec<LoadProfile>) -> LabeledDataset {
    let n = profiles.len();
    LabeledDataset {
        profiles,
        labels: vec![0; n],
        anomaly_kinds: vec![AnomalyKind::None; n],
        injections: vec![None; n],
    }
}

fn tiny_model(seed: u64) -> Model {
    Model::new(Architecture::Lstm(LstmConfig { hidden: 4 }), seed).unwrap()
}

fn batch(rows: usize) -> impl Strategy<Value = (Tensor, Vec<u8>)> {
    (
        prop::collection::vec(-2.0f64..2.0, rows * 24),
        prop::collection::vec(0u8..=1, rows),
    )
        .prop_map(move |(x, y)| (Tensor::new(vec![rows, 24], x).unwrap(), y))
}

fn weight_maps(n: usize) -> impl Strategy<Value = Vec<WeightMap>> {
    let template = tiny_model(0).into_weights();
    let len = template.parameter_count();
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, len), n).prop_map(move |all| {
        all.into_iter()
            .map(|flat| {
                let mut w = template.clone();
                let mut it = flat.into_iter();
                for (_, t) in w.iter_mut() {
                    for v in t.data_mut() {
                        *v = it.next().unwrap();
                    }
                }
                w
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_counts_partition_the_batch((pred, truth) in (1usize..200).prop_flat_map(|n| (prop::collection::vec(0u8..=1, n), prop::collection::vec(0u8..=1, n)))) {
        let m = compute_metrics(&pred, &truth).unwrap();
        prop_assert_eq!(m.total(), pred.len());
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
    }

    #[test]
    fn asr_is_a_disagreement_share(a in labels(200), seed in any::<u64>(), f in 0.0f64..=1.0) {
        let b = label_flip(&a, f, seed).unwrap();
        let r = asr_from_labels(&a, &b, AsrProtocol::InferenceAttack).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.asr));
        prop_assert_eq!(r.flipped, (f * a.len() as f64).floor() as usize);
        prop_assert_eq!(asr_from_labels(&a, &a, AsrProtocol::TrainingAttack).unwrap().asr, 0.0);
    }

    #[test]
    fn fgsm_stays_in_the_ball_and_moves_by_eps((x, y) in batch(3), eps in 0.0f64..1.0, seed in 0u64..4) {
        let model = tiny_model(seed);
        let adv = fgsm(&model, &x, &y, eps, &FocalLoss::default()).unwrap();
        for (&a, &b) in adv.data().iter().zip(x.data()) {
            let d = (a - b).abs();
            prop_assert!(d <= eps + 4.0 * f64::EPSILON);
            prop_assert!(d == 0.0 || (d - eps).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn projected_pgd_respects_radius_and_box((x, y) in batch(2), eps in 0.01f64..0.5, radius in 0.01f64..0.5, iters in 1usize..5) {
        let model = tiny_model(1);
        let adv = pgd(&model, &x, &y, eps, iters, Some(radius), &FocalLoss::default()).unwrap();
        for (&a, &b) in adv.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= radius + 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn awgn_is_seeded((x, _) in batch(2), seed in any::<u64>(), var in 0.0f64..1.0) {
        prop_assert_eq!(awgn(&x, var, seed).unwrap(), awgn(&x, var, seed).unwrap());
        prop_assert_eq!(awgn(&x, 0.0, seed).unwrap(), x);
    }

    #[test]
    fn fedavg_is_order_free_and_bounded(maps in (1usize..6).prop_flat_map(weight_maps)) {
        let avg = fedavg(&maps).unwrap();
        let mut rev = maps.clone();
        rev.reverse();
        let back = fedavg(&rev).unwrap();
        for ((name, a), (_, b)) in avg.iter().zip(back.iter()) {
            prop_assert!(a.max_abs_diff(b) <= 1e-12, "{name}");
            for (i, &v) in a.data().iter().enumerate() {
                let column = maps.iter().map(|m| m.get(name).unwrap().data()[i]);
                let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c), h.max(c)));
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise(maps in weight_maps(1)) {
        let w = &maps[0];
        prop_assert_eq!(&decode_weights(&encode_weights(w)).unwrap(), w);
    }

    #[test]
    fn malicious_sets_are_nested(n in 1usize..40, seed in any::<u64>()) {
        let mut prev = vec![false; n];
        for count in 0..=n {
            let flags = assign_malicious(n, count, seed).unwrap();
            prop_assert_eq!(flags.iter().filter(|&&b| b).count(), count);
            prop_assert!(prev.iter().zip(&flags).all(|(&p, &f)| !p || f));
            prev = flags;
        }
    }

    #[test]
    fn client_selection_is_a_distinct_subset((total, per) in (1usize..40).prop_flat_map(|t| (Just(t), 1..=t)), seed in any::<u64>(), round in 1usize..100) {
        let s = select_clients(total, per, seed, round).unwrap();
        prop_assert_eq!(s.len(), per);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|&i| i < total));
    }

    #[test]
    fn injections_touch_only_their_hours(p in profile(), start in 0usize..24, len in 1usize..=2, r in 0.5f64..1.5, up in any::<bool>()) {
        let dir = if up { SpikeDirection::Positive } else { SpikeDirection::Negative };
        let spiked = inject_spike(&p, start, len, r, dir, (0.5, 1.5)).unwrap();
        let dropped = inject_drop(&p, start, len).unwrap();
        for h in 0..24 {
            let inside = (h + 24 - start) % 24 < len;
            if inside {
                prop_assert_eq!(dropped.values[h], 0.0);
            } else {
                prop_assert_eq!(spiked.values[h].to_bits(), p.values[h].to_bits());
                prop_assert_eq!(dropped.values[h].to_bits(), p.values[h].to_bits());
            }
        }
    }

    #[test]
    fn normalized_clean_data_spans_unit_range(ps in prop::collection::vec(profile(), 2..20)) {
        let ds = clean_dataset(ps.clone());
        let (norm, scaling) = normalize(&ds).unwrap();
        prop_assume!(scaling.max > scaling.min);
        let all: Vec<f64> = norm.profiles.iter().flat_map(|p| p.values).collect();
        prop_assert!(all.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        prop_assert!(all.contains(&0.0));
    }

    #[test]
    fn split_partitions_every_sample(n in 10usize..200, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let mut ds = clean_dataset((0..n).map(|d| LoadProfile { values: [d as f64; 24], day_index: d }).collect());
        for d in (0..n).step_by(3) {
            ds.labels[d] = 1;
            ds.anomaly_kinds[d] = AnomalyKind::Drop;
            ds.injections[d] = Some(Injection { kind: AnomalyKind::Drop, start: 0, len: 1, amplitude: 0.0, source: d });
        }
        prop_assert!(ds.validate().is_ok());
        let (train, test) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        for part in [&train, &test] {
            prop_assert!(part.labels.contains(&0) && part.labels.contains(&1));
            prop_assert!(part.profiles.iter().zip(&part.labels).all(|(p, &l)| u8::from(p.day_index % 3 == 0) == l));
        }
        let mut days: Vec<usize> = train.profiles.iter().chain(&test.profiles).map(|p| p.day_index).collect();
        days.sort_unstable();
        prop_assert_eq!(days, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn product_gradient_is_the_other_factor(a in prop::collection::vec(-3.0f64..3.0, 1..30)) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.5 - 1.0).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(a.clone()), true);
        let c = tape.constant(Tensor::vector(b.clone()));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        prop_assert_eq!(g.data(), &b[..]);
    }

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], v).unwrap());
        let s = tape.softmax(x).unwrap();
        for row in tape.value(s).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}
