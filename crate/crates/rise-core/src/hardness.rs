//! Hard-example detection from logit variance.
//!
//! A low-variance logit vector means many labels compete, i.e. the
//! classifier is unsure. The adaptive threshold is the mean variance
//! over dev-set misclassifications; an example is hard when its
//! variance falls strictly below that threshold.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::metrics;
use crate::util::argmax;

/// Variance estimator applied to a logit vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    /// Mean squared deviation with divisor C.
    #[default]
    Population,
    /// Divisor C − 1.
    Sample,
}

impl std::str::FromStr for VarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(VarianceKind::Population),
            "sample" => Ok(VarianceKind::Sample),
            other => Err(Error::BadConfig(format!(
                "variance must be population|sample, got {other:?}"
            ))),
        }
    }
}

/// Population variance of a logit vector (divisor C).
pub fn logit_variance(z: &[f64]) -> Result<f64> {
    logit_variance_with(z, VarianceKind::Population)
}

/// Variance of a logit vector under the chosen estimator.
pub fn logit_variance_with(z: &[f64], kind: VarianceKind) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::DegenerateVector(z.len()));
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let ss: f64 = z.iter().map(|v| (v - mean) * (v - mean)).sum();
    let divisor = match kind {
        VarianceKind::Population => n,
        VarianceKind::Sample => n - 1.0,
    };
    Ok(ss / divisor)
}

/// Adaptive threshold: mean variance over dev examples whose argmax
/// prediction disagrees with gold. Errors with
/// [`Error::NoMisclassifications`] when the dev classifier is perfect.
pub fn estimate_threshold(dev_logits: &[Vec<f64>], dev_gold: &[usize]) -> Result<f64> {
    estimate_threshold_with(dev_logits, dev_gold, VarianceKind::Population)
}

/// [`estimate_threshold`] with an explicit variance estimator.
pub fn estimate_threshold_with(
    dev_logits: &[Vec<f64>],
    dev_gold: &[usize],
    kind: VarianceKind,
) -> Result<f64> {
    if dev_logits.is_empty() {
        return Err(Error::EmptyInput("dev logits"));
    }
    if dev_logits.len() != dev_gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} logit rows vs {} gold labels",
            dev_logits.len(),
            dev_gold.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (z, &gold) in dev_logits.iter().zip(dev_gold) {
        if argmax(z) != gold {
            sum += logit_variance_with(z, kind)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoMisclassifications);
    }
    Ok(sum / count as f64)
}

/// Flag each row whose variance is strictly below `threshold`.
pub fn detect_hard(logits: &[Vec<f64>], threshold: f64) -> Result<Vec<bool>> {
    detect_hard_with(logits, threshold, VarianceKind::Population)
}

/// [`detect_hard`] with an explicit variance estimator.
pub fn detect_hard_with(
    logits: &[Vec<f64>],
    threshold: f64,
    kind: VarianceKind,
) -> Result<Vec<bool>> {
    if threshold < 0.0 {
        return Err(Error::BadConfig(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    logits
        .iter()
        .map(|z| Ok(logit_variance_with(z, kind)? < threshold))
        .collect()
}

/// Per-example verdict from one hardness assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessEntry {
    pub id: String,
    pub variance: f64,
    pub is_hard: bool,
}

/// Result of assessing a bundle: the threshold in effect and one entry
/// per example, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct HardnessReport {
    pub threshold: f64,
    pub per_example: Vec<HardnessEntry>,
    pub dev_misclassified_count: usize,
}

impl HardnessReport {
    /// Verdict for one example id, if covered.
    pub fn is_hard(&self, id: &str) -> Option<bool> {
        self.per_example
            .iter()
            .find(|e| e.id == id)
            .map(|e| e.is_hard)
    }

    /// Id → verdict map for repeated lookups.
    pub fn verdicts(&self) -> HashMap<&str, bool> {
        self.per_example
            .iter()
            .map(|e| (e.id.as_str(), e.is_hard))
            .collect()
    }

    pub fn hard_fraction(&self) -> f64 {
        if self.per_example.is_empty() {
            return 0.0;
        }
        let hard = self.per_example.iter().filter(|e| e.is_hard).count();
        hard as f64 / self.per_example.len() as f64
    }

    /// Serialize as JSON lines: one object per example, then a summary
    /// object `{threshold, hard_fraction}`.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for entry in &self.per_example {
            serde_json::to_writer(&mut w, entry)?;
            writeln!(w).map_err(|e| Error::io("<writer>", e))?;
        }
        let summary = serde_json::json!({
            "threshold": self.threshold,
            "hard_fraction": self.hard_fraction(),
            "dev_misclassified_count": self.dev_misclassified_count,
        });
        serde_json::to_writer(&mut w, &summary)?;
        writeln!(w).map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    /// Parse the format produced by [`HardnessReport::write_jsonl`].
    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut per_example = Vec::new();
        let mut threshold = None;
        let mut dev_misclassified_count = 0;
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            if value.get("threshold").is_some() {
                threshold = value["threshold"].as_f64();
                dev_misclassified_count = value
                    .get("dev_misclassified_count")
                    .and_then(|v| v.as_u64())
                    .unwrap_or(0) as usize;
            } else {
                per_example.push(serde_json::from_value(value)?);
            }
        }
        let threshold = threshold
            .ok_or_else(|| Error::Manifest("hardness jsonl has no summary line".into()))?;
        let report = HardnessReport {
            threshold,
            per_example,
            dev_misclassified_count,
        };
        for entry in &report.per_example {
            if entry.is_hard != (entry.variance < threshold) {
                return Err(Error::Manifest(format!(
                    "hardness entry {} disagrees with the recorded threshold",
                    entry.id
                )));
            }
        }
        Ok(report)
    }
}

/// Options for [`assess_bundle`].
#[derive(Debug, Clone, Copy, Default)]
pub struct HardnessOptions {
    /// Skip dev-set estimation and use this threshold directly.
    pub threshold: Option<f64>,
    pub variance: VarianceKind,
}

/// Assess every example in the bundle. The threshold comes from the dev
/// split unless overridden in `opts`.
pub fn assess_bundle(bundle: &DatasetBundle, opts: &HardnessOptions) -> Result<HardnessReport> {
    let (dev_logits, dev_gold) = bundle.split_logits_gold(Split::Dev);
    let dev_misclassified_count = dev_logits
        .iter()
        .zip(&dev_gold)
        .filter(|(z, &g)| argmax(z) != g)
        .count();
    let threshold = match opts.threshold {
        Some(t) => {
            if t < 0.0 {
                return Err(Error::BadConfig(format!(
                    "threshold must be non-negative, got {t}"
                )));
            }
            t
        }
        None => {
            if dev_logits.is_empty() {
                return Err(Error::EmptySplit("dev"));
            }
            estimate_threshold_with(&dev_logits, &dev_gold, opts.variance)?
        }
    };
    let per_example = bundle
        .examples
        .iter()
        .map(|ex| {
            let variance = logit_variance_with(&ex.logits, opts.variance)?;
            Ok(HardnessEntry {
                id: ex.id.clone(),
                variance,
                is_hard: variance < threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HardnessReport {
        threshold,
        per_example,
        dev_misclassified_count,
    })
}

/// Four-level difficulty scale for cross-model hardness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HardnessLevel {
    Easy,
    RatherEasy,
    RatherDifficult,
    Difficult,
}

/// Cross-model verdict for one example: `k` of `model_count` models were
/// uncertain about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelEntry {
    pub id: String,
    pub k: usize,
    pub level: HardnessLevel,
}

/// Hardness aggregated over a set of independently trained models.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModelHardness {
    pub model_count: usize,
    pub per_example: Vec<CrossModelEntry>,
}

/// Bucket a count of uncertain models into a difficulty level.
///
/// For `model_count == 7` the buckets are the fixed table
/// {0}, {1,2}, {3,4}, {5,6,7}. For other model counts they scale as
/// {0}, [1, ⌈M/3⌉], (⌈M/3⌉, ⌈2M/3⌉], and the rest.
pub fn hardness_level(k: usize, model_count: usize) -> Result<HardnessLevel> {
    if model_count == 0 {
        return Err(Error::EmptyModelSet);
    }
    if k > model_count {
        return Err(Error::BadConfig(format!(
            "k={k} exceeds model count {model_count}"
        )));
    }
    if model_count == 7 {
        return Ok(match k {
            0 => HardnessLevel::Easy,
            1 | 2 => HardnessLevel::RatherEasy,
            3 | 4 => HardnessLevel::RatherDifficult,
            _ => HardnessLevel::Difficult,
        });
    }
    let lo = model_count.div_ceil(3);
    let hi = (2 * model_count).div_ceil(3);
    Ok(if k == 0 {
        HardnessLevel::Easy
    } else if k <= lo {
        HardnessLevel::RatherEasy
    } else if k <= hi {
        HardnessLevel::RatherDifficult
    } else {
        HardnessLevel::Difficult
    })
}

/// Aggregate an M×N uncertainty matrix (one row per model, one column
/// per example) into per-example hardness levels. Ids default to the
/// column index.
pub fn cross_model_levels(uncertain_flags: &[Vec<bool>]) -> Result<CrossModelHardness> {
    let n = uncertain_flags.first().map_or(0, Vec::len);
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    cross_model_levels_with_ids(uncertain_flags, &ids)
}

/// [`cross_model_levels`] with caller-supplied example ids.
pub fn cross_model_levels_with_ids(
    uncertain_flags: &[Vec<bool>],
    ids: &[String],
) -> Result<CrossModelHardness> {
    let model_count = uncertain_flags.len();
    if model_count == 0 {
        return Err(Error::EmptyModelSet);
    }
    let n = uncertain_flags[0].len();
    for (m, row) in uncertain_flags.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "model row {m} has {} flags, expected {n}",
                row.len()
            )));
        }
    }
    if ids.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} ids for {n} examples",
            ids.len()
        )));
    }
    let mut per_example = Vec::with_capacity(n);
    for j in 0..n {
        let k = uncertain_flags.iter().filter(|row| row[j]).count();
        per_example.push(CrossModelEntry {
            id: ids[j].clone(),
            k,
            level: hardness_level(k, model_count)?,
        });
    }
    Ok(CrossModelHardness {
        model_count,
        per_example,
    })
}

/// One point of a threshold/cost trade-off sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub hard_count: usize,
    pub weighted_f1: f64,
}

/// Evaluate the selective pipeline across a grid of thresholds.
///
/// For each threshold, examples below it are reranked through
/// `rerank_fn(index, logits)` and everything is scored with weighted F1
/// against `gold`. The grid must be non-empty and sorted ascending.
/// Points are evaluated in parallel; output order matches the grid.
pub fn threshold_sweep<F>(
    logits: &[Vec<f64>],
    gold: &[usize],
    grid: &[f64],
    rerank_fn: F,
) -> Result<Vec<SweepPoint>>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>> + Sync,
{
    if grid.is_empty() {
        return Err(Error::BadConfig("threshold grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::BadConfig(
            "threshold grid must be sorted ascending".into(),
        ));
    }
    if logits.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} logit rows vs {} gold labels",
            logits.len(),
            gold.len()
        )));
    }
    let num_classes = logits.first().map_or(0, Vec::len);
    grid.par_iter()
        .map(|&threshold| {
            let flags = detect_hard(logits, threshold)?;
            let hard_count = flags.iter().filter(|&&b| b).count();
            let mut preds = Vec::with_capacity(logits.len());
            for (i, z) in logits.iter().enumerate() {
                if flags[i] {
                    preds.push(argmax(&rerank_fn(i, z)?));
                } else {
                    preds.push(argmax(z));
                }
            }
            let report = metrics::f1_report(gold, &preds, num_classes)?;
            Ok(SweepPoint {
                threshold,
                hard_count,
                weighted_f1: report.weighted_f1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_of_constant_vector_is_zero() {
        assert_eq!(logit_variance(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn variance_matches_hand_computation() {
        // mean 0, squared deviations 4 + 0 + 4, divisor 3
        let v = logit_variance(&[2.0, 0.0, -2.0]).unwrap();
        assert!((v - 8.0 / 3.0).abs() < 1e-15, "{v}");
    }

    #[test]
    fn sample_variance_uses_divisor_n_minus_one() {
        let v = logit_variance_with(&[2.0, 0.0, -2.0], VarianceKind::Sample).unwrap();
        assert!((v - 4.0).abs() < 1e-15, "{v}");
    }

    #[test]
    fn variance_is_shift_invariant() {
        let z = [0.3, -1.2, 4.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
        let a = logit_variance(&z).unwrap();
        let b = logit_variance(&shifted).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn variance_rejects_short_vectors() {
        assert!(matches!(
            logit_variance(&[1.0]),
            Err(Error::DegenerateVector(1))
        ));
    }

    #[test]
    fn threshold_is_mean_variance_over_misclassified() {
        // [sqrt(2), -sqrt(2)] has variance 2, [2, -2] has variance 4; both
        // with gold=1 are misclassified. [0, 5] with gold=1 is correct.
        let s = 2.0_f64.sqrt();
        let logits = vec![vec![s, -s], vec![2.0, -2.0], vec![0.0, 5.0]];
        let gold = vec![1, 1, 1];
        let t = estimate_threshold(&logits, &gold).unwrap();
        assert!((t - 3.0).abs() < 1e-12, "{t}");
    }

    #[test]
    fn single_misclassification_returns_its_variance() {
        let logits = vec![vec![2.0, 0.0, -2.0]];
        let t = estimate_threshold(&logits, &[1]).unwrap();
        assert!((t - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_dev_set_has_no_threshold() {
        let logits = vec![vec![5.0, 0.0], vec![0.0, 5.0]];
        assert!(matches!(
            estimate_threshold(&logits, &[0, 1]),
            Err(Error::NoMisclassifications)
        ));
    }

    #[test]
    fn argmax_ties_count_as_correct_for_lowest_index() {
        // Tied logits predict index 0; gold 0 means no misclassification.
        let logits = vec![vec![1.0, 1.0]];
        assert!(matches!(
            estimate_threshold(&logits, &[0]),
            Err(Error::NoMisclassifications)
        ));
        // Gold 1 with the same tie is a misclassification.
        let t = estimate_threshold(&logits, &[1]).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn detection_uses_strict_inequality() {
        // variance of [a, -a] is exactly a^2 for representable a^2
        let rows = vec![
            vec![0.5, -0.5], // variance 0.25 -> hard against 1.0
            vec![1.0, -1.0], // variance 1.0 -> boundary, not hard
            vec![2.0, -2.0], // variance 4.0 -> not hard
        ];
        let flags = detect_hard(&rows, 1.0).unwrap();
        assert_eq!(flags, vec![true, false, false]);
        // The 2.5-under-3.0 case from the contract.
        let v = logit_variance(&[2.5_f64.sqrt(), -(2.5_f64.sqrt())]).unwrap();
        assert!(v < 3.0);
        assert_eq!(
            detect_hard(&[vec![2.5_f64.sqrt(), -(2.5_f64.sqrt())]], 3.0).unwrap(),
            vec![true]
        );
    }

    #[test]
    fn zero_threshold_flags_nothing() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        let flags = detect_hard(&rows, 0.0).unwrap();
        assert_eq!(flags, vec![false, false]);
    }

    #[test]
    fn bucket_table_for_seven_models() {
        let expect = [
            HardnessLevel::Easy,
            HardnessLevel::RatherEasy,
            HardnessLevel::RatherEasy,
            HardnessLevel::RatherDifficult,
            HardnessLevel::RatherDifficult,
            HardnessLevel::Difficult,
            HardnessLevel::Difficult,
            HardnessLevel::Difficult,
        ];
        for (k, want) in expect.iter().enumerate() {
            assert_eq!(hardness_level(k, 7).unwrap(), *want, "k={k}");
        }
    }

    #[test]
    fn cross_model_counts_column_sums() {
        // 3 models, 4 examples
        let flags = vec![
            vec![true, false, true, false],
            vec![true, false, true, false],
            vec![true, false, false, false],
        ];
        let out = cross_model_levels(&flags).unwrap();
        let ks: Vec<usize> = out.per_example.iter().map(|e| e.k).collect();
        assert_eq!(ks, vec![3, 0, 2, 0]);
        assert_eq!(out.per_example[1].level, HardnessLevel::Easy);
        assert_eq!(out.per_example[0].level, HardnessLevel::Difficult);
    }

    #[test]
    fn cross_model_rejects_empty_model_set() {
        assert!(matches!(cross_model_levels(&[]), Err(Error::EmptyModelSet)));
    }

    #[test]
    fn cross_model_is_invariant_to_model_row_order() {
        let flags = vec![
            vec![true, false, true],
            vec![false, false, true],
            vec![true, true, false],
        ];
        let permuted = vec![flags[2].clone(), flags[0].clone(), flags[1].clone()];
        assert_eq!(
            cross_model_levels(&flags).unwrap(),
            cross_model_levels(&permuted).unwrap()
        );
    }

    #[test]
    fn sweep_at_zero_threshold_is_baseline() {
        let logits = vec![vec![3.0, 1.0], vec![1.0, 3.0], vec![2.0, 1.9]];
        let gold = vec![0, 1, 1];
        let points = threshold_sweep(&logits, &gold, &[0.0], |_, z| {
            Ok(z.iter().map(|v| -v).collect())
        })
        .unwrap();
        assert_eq!(points[0].hard_count, 0);
        // Baseline predictions: 0, 1, 0 -> class 0: tp=1 fp=1, class 1: tp=1 fn=1
        let baseline = metrics::f1_report(&gold, &[0, 1, 0], 2).unwrap();
        assert_eq!(points[0].weighted_f1, baseline.weighted_f1);
    }

    #[test]
    fn sweep_hard_count_is_monotone_in_threshold() {
        let logits: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 0.1, -(i as f64) * 0.1])
            .collect();
        let gold = vec![0; 20];
        let grid = vec![0.0, 0.5, 1.0, 2.0, 5.0];
        let points = threshold_sweep(&logits, &gold, &grid, |_, z| Ok(z.to_vec())).unwrap();
        for w in points.windows(2) {
            assert!(w[0].hard_count <= w[1].hard_count);
        }
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let logits = vec![vec![1.0, 0.0]];
        let err = threshold_sweep(&logits, &[0], &[1.0, 0.5], |_, z| Ok(z.to_vec()));
        assert!(matches!(err, Err(Error::BadConfig(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let report = HardnessReport {
            threshold: 1.25,
            per_example: vec![
                HardnessEntry {
                    id: "a".into(),
                    variance: 0.5,
                    is_hard: true,
                },
                HardnessEntry {
                    id: "b".into(),
                    variance: 2.0,
                    is_hard: false,
                },
            ],
            dev_misclassified_count: 3,
        };
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let parsed = HardnessReport::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn jsonl_rejects_verdicts_that_contradict_the_threshold() {
        let text = concat!(
            "{\"id\":\"a\",\"variance\":5.0,\"is_hard\":true}\n",
            "{\"threshold\":1.0,\"hard_fraction\":1.0}\n",
        );
        assert!(matches!(
            HardnessReport::read_jsonl(text.as_bytes()),
            Err(Error::Manifest(_))
        ));
    }
}
