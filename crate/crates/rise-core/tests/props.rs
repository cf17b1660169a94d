//! Property tests for the library invariants.

use proptest::prelude::*;

use rise_core::confusion::{fit_confusion, negative_weights};
use rise_core::dataset::{
    load_bundle, save_bundle, BundleMeta, DatasetBundle, ExampleRecord, LabelSet, Split,
};
use rise_core::embedder::{cosine, cw_loss};
use rise_core::hardness::{detect_hard, estimate_threshold, logit_variance};
use rise_core::metrics::{f1_report, spearman_rho, topk_oracle};
use rise_core::rerank::rerank_logits;
use rise_core::util::argmax;

fn arb_bundle() -> impl Strategy<Value = DatasetBundle> {
    (
        2usize..5,
        1usize..4,
        1usize..9,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_flat_map(|(c, d, n, with_features, with_label_features)| {
            let logits =
                proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, c..=c), n..=n);
            let features = if with_features || with_label_features {
                proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, d..=d), n..=n)
                    .prop_map(Some)
                    .boxed()
            } else {
                Just(None).boxed()
            };
            let label_features = if with_label_features {
                proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, d..=d), c..=c)
                    .prop_map(Some)
                    .boxed()
            } else {
                Just(None).boxed()
            };
            let gold = proptest::collection::vec(0usize..c, n..=n);
            (Just((c, d)), logits, features, label_features, gold).prop_map(
                |((c, d), logits, features, label_features, gold)| {
                    let labels =
                        LabelSet::new((0..c).map(|i| format!("label-{i}")).collect()).unwrap();
                    let has_features = features.is_some();
                    let examples = logits
                        .into_iter()
                        .enumerate()
                        .map(|(i, z)| ExampleRecord {
                            id: format!("ex-{i}"),
                            split: match i % 3 {
                                0 => Split::Train,
                                1 => Split::Dev,
                                _ => Split::Test,
                            },
                            gold: gold[i],
                            logits: z,
                            features: features.as_ref().map(|m| m[i].clone()),
                        })
                        .collect();
                    let dim = (has_features || label_features.is_some()).then_some(d);
                    DatasetBundle::new(
                        labels,
                        examples,
                        label_features,
                        BundleMeta {
                            dim,
                            meta: Default::default(),
                        },
                    )
                    .unwrap()
                },
            )
        })
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundle_round_trip_is_lossless(bundle in arb_bundle()) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_bundle(&manifest).unwrap();
        prop_assert_eq!(&loaded, &bundle);
        // Serialized forms are byte-identical across save cycles.
        let dir2 = tempfile::tempdir().unwrap();
        save_bundle(&loaded, dir2.path()).unwrap();
        prop_assert_eq!(dir_bytes(dir.path()), dir_bytes(dir2.path()));
    }

    #[test]
    fn variance_shift_and_scale_laws(
        z in proptest::collection::vec(-1e3f64..1e3, 2..12),
        shift in -1e3f64..1e3,
        scale in -8f64..8.0,
    ) {
        let v = logit_variance(&z).unwrap();
        let shifted: Vec<f64> = z.iter().map(|x| x + shift).collect();
        let vs = logit_variance(&shifted).unwrap();
        prop_assert!((v - vs).abs() <= 1e-12 * v.abs().max(1.0) + 1e-9);
        let scaled: Vec<f64> = z.iter().map(|x| scale * x).collect();
        let vc = logit_variance(&scaled).unwrap();
        let want = scale * scale * v;
        prop_assert!((vc - want).abs() <= 1e-12 * want.abs().max(1.0) + 1e-9);
    }

    #[test]
    fn threshold_matches_explicit_materialization(
        rows in proptest::collection::vec(
            proptest::collection::vec(-50f64..50.0, 3..=3), 1..20),
        gold in proptest::collection::vec(0usize..3, 20),
    ) {
        let gold = &gold[..rows.len()];
        // Oracle: materialize the misclassified set, then average.
        let mut variances = Vec::new();
        for (z, &g) in rows.iter().zip(gold) {
            let mut best = 0;
            for i in 1..z.len() {
                if z[i] > z[best] {
                    best = i;
                }
            }
            if best != g {
                let mean = z.iter().sum::<f64>() / z.len() as f64;
                let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / z.len() as f64;
                variances.push(var);
            }
        }
        match estimate_threshold(&rows, gold) {
            Ok(t) => {
                let want = variances.iter().sum::<f64>() / variances.len() as f64;
                prop_assert!((t - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
            Err(_) => prop_assert!(variances.is_empty()),
        }
    }

    #[test]
    fn hard_selection_is_monotone_in_threshold(
        rows in proptest::collection::vec(
            proptest::collection::vec(-10f64..10.0, 4..=4), 1..30),
        t1 in 0f64..20.0,
        t2 in 0f64..20.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let small = detect_hard(&rows, lo).unwrap();
        let large = detect_hard(&rows, hi).unwrap();
        for (a, b) in small.iter().zip(&large) {
            prop_assert!(!a || *b, "hard at {lo} must stay hard at {hi}");
        }
    }

    #[test]
    fn confusion_matches_pair_counting_oracle(
        rows in proptest::collection::vec(
            proptest::collection::vec(-5f64..5.0, 4..=4), 1..40),
        gold in proptest::collection::vec(0usize..4, 40),
    ) {
        let gold = &gold[..rows.len()];
        let profile = fit_confusion(&rows, gold).unwrap();
        let c = 4;
        for y in 0..c {
            let support = gold.iter().filter(|&&g| g == y).count();
            let row_sum: f64 = profile.table()[y].iter().sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-9);
            for yp in 0..c {
                let want = if support == 0 {
                    1.0 / c as f64
                } else {
                    let count = rows
                        .iter()
                        .zip(gold)
                        .filter(|(z, &g)| g == y && argmax(z) == yp)
                        .count();
                    count as f64 / support as f64
                };
                prop_assert!((profile.prob(y, yp) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confusion_is_permutation_equivariant(
        rows in proptest::collection::vec(
            proptest::collection::vec(-5f64..5.0, 3..=3), 1..20),
        gold in proptest::collection::vec(0usize..3, 20),
    ) {
        let gold = &gold[..rows.len()];
        let perm = [2usize, 0, 1];
        let rows_p: Vec<Vec<f64>> = rows
            .iter()
            .map(|z| {
                // column j of the permuted matrix holds the class that
                // perm maps onto j
                let mut out = vec![0.0; 3];
                for (orig, &target) in perm.iter().enumerate() {
                    out[target] = z[orig];
                }
                out
            })
            .collect();
        let gold_p: Vec<usize> = gold.iter().map(|&g| perm[g]).collect();
        let base = fit_confusion(&rows, gold).unwrap();
        let permuted = fit_confusion(&rows_p, &gold_p).unwrap();
        for y in 0..3 {
            for yp in 0..3 {
                let a = base.prob(y, yp);
                let b = permuted.prob(perm[y], perm[yp]);
                prop_assert!((a - b).abs() < 1e-12, "({y},{yp}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn negative_weights_skip_gold(
        rows in proptest::collection::vec(
            proptest::collection::vec(-5f64..5.0, 3..=3), 1..15),
        gold in proptest::collection::vec(0usize..3, 15),
        target in 0usize..3,
        eps in 0f64..0.5,
    ) {
        let gold = &gold[..rows.len()];
        let profile = fit_confusion(&rows, gold).unwrap();
        let weights = negative_weights(&profile, target, eps).unwrap();
        prop_assert_eq!(weights.len(), 2);
        prop_assert!(weights.iter().all(|&(y, _)| y != target));
        prop_assert!(weights.iter().all(|&(_, w)| w >= 0.0));
    }

    #[test]
    fn cosine_positive_scale_invariance(
        u in proptest::collection::vec(0.01f64..10.0, 3..=3),
        v in proptest::collection::vec(0.01f64..10.0, 3..=3),
        a in 0.001f64..100.0,
        b in 0.001f64..100.0,
    ) {
        let base = cosine(&u, &v).unwrap();
        let us: Vec<f64> = u.iter().map(|x| a * x).collect();
        let vs: Vec<f64> = v.iter().map(|x| b * x).collect();
        let scaled = cosine(&us, &vs).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9);
    }

    #[test]
    fn cw_loss_is_non_negative(
        e_x in proptest::collection::vec(-2f64..2.0, 3..=3),
        labels in proptest::collection::vec(
            proptest::collection::vec(-2f64..2.0, 3..=3), 4..=4),
        gold in 0usize..4,
        ws in proptest::collection::vec(0f64..2.0, 3..=3),
    ) {
        prop_assume!(e_x.iter().any(|&v| v != 0.0));
        prop_assume!(labels.iter().all(|row| row.iter().any(|&v| v != 0.0)));
        let weights: Vec<(usize, f64)> = (0..4)
            .filter(|&y| y != gold)
            .zip(ws.iter().copied())
            .collect();
        let loss = cw_loss(&e_x, &labels, gold, &weights, 1.0).unwrap();
        prop_assert!(loss >= 0.0);
        let has_mass = weights.iter().any(|&(_, w)| w > 0.0);
        if !has_mass {
            prop_assert_eq!(loss, 0.0);
        }
    }

    #[test]
    fn f1_matches_counting_oracle(
        gold in proptest::collection::vec(0usize..4, 1..60),
        pred_seed in proptest::collection::vec(0usize..4, 60),
    ) {
        let pred = &pred_seed[..gold.len()];
        let report = f1_report(&gold, pred, 4).unwrap();
        let mut macro_sum = 0.0;
        let mut macro_n = 0usize;
        let mut weighted = 0.0;
        for c in 0..4 {
            let tp = gold.iter().zip(pred).filter(|(&g, &p)| g == c && p == c).count();
            let pred_c = pred.iter().filter(|&&p| p == c).count();
            let gold_c = gold.iter().filter(|&&g| g == c).count();
            let precision = if pred_c == 0 { 0.0 } else { tp as f64 / pred_c as f64 };
            let recall = if gold_c == 0 { 0.0 } else { tp as f64 / gold_c as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            if gold_c > 0 || pred_c > 0 {
                macro_sum += f1;
                macro_n += 1;
            }
            weighted += gold_c as f64 * f1;
            prop_assert!((report.per_class[c].f1 - f1).abs() <= 1e-12);
        }
        let macro_want = if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 };
        prop_assert!((report.macro_f1 - macro_want).abs() <= 1e-12);
        prop_assert!((report.weighted_f1 - weighted / gold.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn spearman_matches_counting_rank_oracle(
        xs in proptest::collection::vec(-100f64..100.0, 3..30),
        ys_seed in proptest::collection::vec(-100f64..100.0, 30),
    ) {
        let ys = &ys_seed[..xs.len()];
        // Oracle ranks: 1 + (# strictly smaller) + (# equal among others) / 2.
        let rank_of = |data: &[f64]| -> Vec<f64> {
            data.iter()
                .map(|&v| {
                    let smaller = data.iter().filter(|&&o| o < v).count();
                    let equal = data.iter().filter(|&&o| o == v).count();
                    1.0 + smaller as f64 + (equal as f64 - 1.0) / 2.0
                })
                .collect()
        };
        let rx = rank_of(&xs);
        let ry = rank_of(ys);
        let n = xs.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        match spearman_rho(&xs, ys) {
            Ok(rho) => {
                let want = sxy / (sxx.sqrt() * syy.sqrt());
                prop_assert!((rho - want).abs() <= 1e-12, "{rho} vs {want}");
            }
            Err(_) => prop_assert!(sxx == 0.0 || syy == 0.0),
        }
    }

    #[test]
    fn topk_curves_never_decrease(
        rows in proptest::collection::vec(
            proptest::collection::vec(-10f64..10.0, 5..=5), 1..25),
        gold in proptest::collection::vec(0usize..5, 25),
    ) {
        let gold = &gold[..rows.len()];
        let points = topk_oracle(&rows, gold, &[1, 2, 3, 4, 5]).unwrap();
        for w in points.windows(2) {
            prop_assert!(w[0].oracle_accuracy <= w[1].oracle_accuracy);
        }
        prop_assert_eq!(points[4].oracle_accuracy, 1.0);
    }

    #[test]
    fn rerank_is_permutation_equivariant(
        z in proptest::collection::vec(-10f64..10.0, 4..=4),
        s in proptest::collection::vec(-1f64..1.0, 4..=4),
    ) {
        let perm = [3usize, 1, 0, 2];
        let apply = |xs: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 4];
            for (orig, &target) in perm.iter().enumerate() {
                out[target] = xs[orig];
            }
            out
        };
        let base = rerank_logits(&z, &s).unwrap();
        let permuted = rerank_logits(&apply(&z), &apply(&s)).unwrap();
        prop_assert_eq!(apply(&base), permuted.clone());
        prop_assert_eq!(perm[argmax(&base)], argmax(&permuted));
    }
}
