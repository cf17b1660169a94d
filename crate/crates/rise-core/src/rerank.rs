//! Selective logit reranking.
//!
//! For a hard example the logits are reweighted element-wise by the
//! text–label cosine similarities, `z̃ = s ⊙ z`, and the prediction is
//! the argmax of the product. Easy examples keep their original logits
//! and prediction bit-for-bit.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, Split};
use crate::embedder::{similarity_vector, EmbedderParams};
use crate::error::{Error, Result};
use crate::hardness::HardnessReport;
use crate::util::argmax;

/// Outcome of the selective pass for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub id: String,
    pub original_logits: Vec<f64>,
    /// Similarities actually used for the product; empty when reranking
    /// was not applied.
    pub similarity: Vec<f64>,
    pub reranked_logits: Vec<f64>,
    /// Whether the example was hard and therefore reranked.
    pub applied: bool,
    /// Final label index (ties broken by the lowest index).
    pub prediction: usize,
}

/// Element-wise product of logits and similarities.
pub fn rerank_logits(z: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if z.len() != s.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits vs {} similarities",
            z.len(),
            s.len()
        )));
    }
    Ok(z.iter().zip(s).map(|(a, b)| a * b).collect())
}

/// Knobs for [`predict_selective_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RerankOptions {
    /// Map each similarity through `(s + 1) / 2` before the product,
    /// keeping the multiplier non-negative for signed logits.
    pub sim_clamp: bool,
}

/// Rerank the test split: hard examples get the similarity-weighted
/// product, everything else passes through untouched.
pub fn predict_selective(
    bundle: &DatasetBundle,
    hardness: &HardnessReport,
    params: &EmbedderParams,
) -> Result<Vec<RerankResult>> {
    predict_selective_with(bundle, hardness, params, RerankOptions::default())
}

/// [`predict_selective`] with explicit options. Examples are processed
/// in parallel; output order equals test-split file order.
pub fn predict_selective_with(
    bundle: &DatasetBundle,
    hardness: &HardnessReport,
    params: &EmbedderParams,
    opts: RerankOptions,
) -> Result<Vec<RerankResult>> {
    let verdicts = hardness.verdicts();
    let test = bundle.split_examples(Split::Test);
    let label_feats = bundle.label_features.as_deref();

    test.par_iter()
        .map(|ex| {
            let is_hard = *verdicts.get(ex.id.as_str()).ok_or_else(|| {
                Error::MissingEntry(format!("hardness report does not cover example {}", ex.id))
            })?;
            if !is_hard {
                return Ok(RerankResult {
                    id: ex.id.clone(),
                    original_logits: ex.logits.clone(),
                    similarity: Vec::new(),
                    reranked_logits: ex.logits.clone(),
                    applied: false,
                    prediction: argmax(&ex.logits),
                });
            }
            let feats = ex.features.as_deref().ok_or(Error::MissingFeatures(
                "a hard test example has no features",
            ))?;
            let label_feats =
                label_feats.ok_or(Error::MissingFeatures("bundle has no label_features"))?;
            let mut similarity = similarity_vector(params, feats, label_feats)?.into_vec();
            if opts.sim_clamp {
                for s in &mut similarity {
                    *s = (*s + 1.0) / 2.0;
                }
            }
            let reranked = rerank_logits(&ex.logits, &similarity)?;
            Ok(RerankResult {
                id: ex.id.clone(),
                original_logits: ex.logits.clone(),
                similarity,
                prediction: argmax(&reranked),
                reranked_logits: reranked,
                applied: true,
            })
        })
        .collect()
}

/// Serialize results as JSON lines, one object per example.
pub fn write_jsonl(results: &[RerankResult], mut w: impl Write) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Parse the format produced by [`write_jsonl`].
pub fn read_jsonl(r: impl BufRead) -> Result<Vec<RerankResult>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BundleMeta, ExampleRecord, LabelSet};
    use crate::hardness::HardnessEntry;

    #[test]
    fn elementwise_product() {
        let out = rerank_logits(&[2.0, 3.0], &[0.5, -1.0]).unwrap();
        assert_eq!(out, vec![1.0, -3.0]);
    }

    #[test]
    fn all_ones_similarity_changes_nothing() {
        let z = [3.1, -0.5, 2.2];
        let out = rerank_logits(&z, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(out, z.to_vec());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(matches!(
            rerank_logits(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn case_study_flip_toward_gold() {
        // Competing logits where the runner-up label is semantically
        // closest; the product promotes it to the top.
        let z = [3.6837, 3.4986, 2.4172];
        let s = [0.2696, 0.4200, 0.6776];
        let out = rerank_logits(&z, &s).unwrap();
        let expected = [0.9932, 1.4696, 1.6380];
        for (o, e) in out.iter().zip(&expected) {
            assert!((o - e).abs() < 5e-4, "{o} vs {e}");
        }
        assert_eq!(argmax(&z), 0);
        assert_eq!(argmax(&out), 2);
    }

    #[test]
    fn case_study_flip_away_from_gold() {
        // The documented failure mode: a correct baseline overturned by
        // a slightly higher similarity on the runner-up.
        let z = [4.5328, 4.5044, 2.2153];
        let s = [0.5221, 0.5434, 0.3931];
        let out = rerank_logits(&z, &s).unwrap();
        let expected = [2.3667, 2.4478, 0.8708];
        for (o, e) in out.iter().zip(&expected) {
            assert!((o - e).abs() < 5e-4, "{o} vs {e}");
        }
        assert_eq!(argmax(&z), 0);
        assert_eq!(argmax(&out), 1);
    }

    fn tiny_bundle(hard_ids: &[&str]) -> (DatasetBundle, HardnessReport) {
        let labels = LabelSet::new(vec!["a".into(), "b".into()]).unwrap();
        let examples = vec![
            ExampleRecord {
                id: "t0".into(),
                split: Split::Test,
                gold: 0,
                logits: vec![2.0, 1.0],
                features: Some(vec![1.0, 0.0]),
            },
            ExampleRecord {
                id: "t1".into(),
                split: Split::Test,
                gold: 1,
                logits: vec![1.5, 1.4],
                features: Some(vec![0.0, 1.0]),
            },
        ];
        let label_features = Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let bundle = DatasetBundle::new(
            labels,
            examples,
            label_features,
            BundleMeta {
                dim: Some(2),
                meta: Default::default(),
            },
        )
        .unwrap();
        let per_example = bundle
            .examples
            .iter()
            .map(|ex| HardnessEntry {
                id: ex.id.clone(),
                variance: 0.0,
                is_hard: hard_ids.contains(&ex.id.as_str()),
            })
            .collect();
        let report = HardnessReport {
            threshold: 0.0,
            per_example,
            dev_misclassified_count: 0,
        };
        (bundle, report)
    }

    #[test]
    fn nothing_hard_means_baseline_predictions() {
        let (bundle, report) = tiny_bundle(&[]);
        let params = EmbedderParams::identity(2);
        let results = predict_selective(&bundle, &report, &params).unwrap();
        for (r, ex) in results.iter().zip(bundle.split_examples(Split::Test)) {
            assert!(!r.applied);
            assert_eq!(r.reranked_logits, ex.logits);
            assert_eq!(r.prediction, argmax(&ex.logits));
            assert!(r.similarity.is_empty());
        }
    }

    #[test]
    fn easy_examples_keep_bit_identical_logits() {
        let (bundle, report) = tiny_bundle(&["t1"]);
        let params = EmbedderParams::identity(2);
        let results = predict_selective(&bundle, &report, &params).unwrap();
        let easy = &results[0];
        assert!(!easy.applied);
        for (a, b) in easy.reranked_logits.iter().zip(&bundle.examples[0].logits) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let hard = &results[1];
        assert!(hard.applied);
        // Feature row equals label 1's name vector: similarity [0, 1]
        // sends the product's argmax to label 1.
        assert_eq!(hard.prediction, 1);
    }

    #[test]
    fn hard_with_parallel_labels_reduces_to_baseline() {
        // Every label feature equals the input feature, so all cosines
        // are 1 and the product is the original vector.
        let labels = LabelSet::new(vec!["a".into(), "b".into()]).unwrap();
        let bundle = DatasetBundle::new(
            labels,
            vec![ExampleRecord {
                id: "x".into(),
                split: Split::Test,
                gold: 0,
                logits: vec![2.0, 1.0],
                features: Some(vec![0.3, 0.4]),
            }],
            Some(vec![vec![0.3, 0.4], vec![0.3, 0.4]]),
            BundleMeta {
                dim: Some(2),
                meta: Default::default(),
            },
        )
        .unwrap();
        let report = HardnessReport {
            threshold: 1.0,
            per_example: vec![HardnessEntry {
                id: "x".into(),
                variance: 0.0,
                is_hard: true,
            }],
            dev_misclassified_count: 0,
        };
        let params = EmbedderParams::identity(2);
        let results = predict_selective(&bundle, &report, &params).unwrap();
        assert!(results[0].applied);
        assert_eq!(results[0].prediction, 0);
        for (a, b) in results[0].reranked_logits.iter().zip(&[2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_hardness_entry_is_an_error() {
        let (bundle, mut report) = tiny_bundle(&[]);
        report.per_example.pop();
        let params = EmbedderParams::identity(2);
        assert!(matches!(
            predict_selective(&bundle, &report, &params),
            Err(Error::MissingEntry(_))
        ));
    }

    #[test]
    fn sim_clamp_maps_into_unit_interval() {
        let (bundle, report) = tiny_bundle(&["t0", "t1"]);
        let params = EmbedderParams::identity(2);
        let results =
            predict_selective_with(&bundle, &report, &params, RerankOptions { sim_clamp: true })
                .unwrap();
        for r in &results {
            for &s in &r.similarity {
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn positive_constant_similarity_preserves_argmax_of_positive_logits() {
        let z = [0.5, 3.0, 1.7];
        let s = [0.25, 0.25, 0.25];
        let out = rerank_logits(&z, &s).unwrap();
        assert_eq!(argmax(&out), argmax(&z));
    }

    #[test]
    fn negative_logits_flip_under_constant_similarity_only_if_negative() {
        // With mixed-sign logits a positive constant multiplier still
        // preserves the argmax; a negative one reverses the order.
        let z = [-2.0, 1.0, -0.5];
        let positive = rerank_logits(&z, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(argmax(&positive), argmax(&z));
        let negative = rerank_logits(&z, &[-0.5, -0.5, -0.5]).unwrap();
        assert_ne!(argmax(&negative), argmax(&z));
    }

    #[test]
    fn jsonl_round_trip() {
        let results = vec![RerankResult {
            id: "q".into(),
            original_logits: vec![1.0, 2.5],
            similarity: vec![0.1, 0.30000000000000004],
            reranked_logits: vec![0.1, 0.75],
            applied: true,
            prediction: 1,
        }];
        let mut buf = Vec::new();
        write_jsonl(&results, &mut buf).unwrap();
        let parsed = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(parsed, results);
    }
}
