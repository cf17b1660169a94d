//! End-to-end orchestration: detect → confusion → train → rerank →
//! evaluate, writing every stage artifact into one run directory.
//!
//! Stage outputs:
//!
//! | file            | stage     | contents                              |
//! |-----------------|-----------|---------------------------------------|
//! | `config.json`   | setup     | the resolved run configuration        |
//! | `hardness.jsonl`| hardness  | per-example variance and verdict      |
//! | `confusion.csv` | confusion | row-normalized gold→predicted table   |
//! | `params.json`   | train     | projection head + per-epoch loss trace|
//! | `results.jsonl` | rerank    | one `RerankResult` per test example   |
//! | `report.json`   | evaluate  | baseline vs reranked metrics          |
//!
//! Two runs with the same config produce byte-identical `report.json`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rise_core::confusion::fit_confusion;
use rise_core::dataset::{load_bundle, DatasetBundle, Split};
use rise_core::embedder::{train_embedder, TrainedEmbedder};
use rise_core::hardness::{assess_bundle, HardnessOptions, HardnessReport};
use rise_core::metrics::{f1_report_with, topk_oracle, F1Options, TopkPoint};
use rise_core::rerank::{predict_selective_with, RerankOptions, RerankResult};
use rise_core::util::argmax;
use rise_core::{Error, Result};

use crate::config::{HeadMode, RunConfig};

/// A pipeline failure tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StageError {
    /// Setup and validation failures exit with 2, stage failures with 3.
    pub fn exit_code(&self) -> u8 {
        match self.stage {
            "config" | "load" => 2,
            _ => 3,
        }
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait StageExt<T> {
    fn stage(self, name: &'static str) -> StageResult<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, name: &'static str) -> StageResult<T> {
        self.map_err(|source| StageError {
            stage: name,
            source,
        })
    }
}

/// Accuracy and F1 summary of one prediction list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl MetricsSummary {
    fn zero() -> Self {
        MetricsSummary {
            n: 0,
            accuracy: 0.0,
            macro_f1: 0.0,
            weighted_f1: 0.0,
        }
    }
}

/// Baseline vs reranked metrics on one example subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetComparison {
    pub n: usize,
    pub baseline: MetricsSummary,
    pub reranked: MetricsSummary,
}

/// Everything `report.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub threshold: f64,
    pub dev_misclassified_count: usize,
    pub hard_count: usize,
    pub hard_fraction: f64,
    pub test: SubsetComparison,
    pub hard_subset: SubsetComparison,
    pub easy_subset: SubsetComparison,
    /// Top-k oracle curve over the original test logits.
    pub topk: Vec<TopkPoint>,
}

/// Artifacts of one finished run.
#[derive(Debug)]
pub struct PipelineOutput {
    pub run_dir: PathBuf,
    pub report: PipelineReport,
}

fn summarize(
    gold: &[usize],
    pred: &[usize],
    c: usize,
    all_classes: bool,
) -> Result<MetricsSummary> {
    if gold.is_empty() {
        return Ok(MetricsSummary::zero());
    }
    let report = f1_report_with(gold, pred, c, F1Options { all_classes })?;
    Ok(MetricsSummary {
        n: report.n,
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
        weighted_f1: report.weighted_f1,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Build the evaluation report from rerank results and hardness verdicts.
pub fn evaluate_results(
    bundle: &DatasetBundle,
    hardness: &HardnessReport,
    results: &[RerankResult],
    topk: &[usize],
    all_classes: bool,
) -> Result<PipelineReport> {
    let test = bundle.split_examples(Split::Test);
    if test.len() != results.len() {
        return Err(Error::LengthMismatch(format!(
            "{} test examples vs {} rerank results",
            test.len(),
            results.len()
        )));
    }
    let c = bundle.num_classes();
    let verdicts = hardness.verdicts();

    let gold: Vec<usize> = test.iter().map(|e| e.gold).collect();
    let base_pred: Vec<usize> = test.iter().map(|e| argmax(&e.logits)).collect();
    let rr_pred: Vec<usize> = results.iter().map(|r| r.prediction).collect();

    let mut hard_idx = Vec::new();
    let mut easy_idx = Vec::new();
    for (i, ex) in test.iter().enumerate() {
        let is_hard = *verdicts.get(ex.id.as_str()).ok_or_else(|| {
            Error::MissingEntry(format!("hardness report does not cover example {}", ex.id))
        })?;
        if is_hard {
            hard_idx.push(i);
        } else {
            easy_idx.push(i);
        }
    }
    let take = |idx: &[usize], xs: &[usize]| -> Vec<usize> { idx.iter().map(|&i| xs[i]).collect() };

    let test_cmp = SubsetComparison {
        n: gold.len(),
        baseline: summarize(&gold, &base_pred, c, all_classes)?,
        reranked: summarize(&gold, &rr_pred, c, all_classes)?,
    };
    let hard_cmp = SubsetComparison {
        n: hard_idx.len(),
        baseline: summarize(
            &take(&hard_idx, &gold),
            &take(&hard_idx, &base_pred),
            c,
            all_classes,
        )?,
        reranked: summarize(
            &take(&hard_idx, &gold),
            &take(&hard_idx, &rr_pred),
            c,
            all_classes,
        )?,
    };
    let easy_cmp = SubsetComparison {
        n: easy_idx.len(),
        baseline: summarize(
            &take(&easy_idx, &gold),
            &take(&easy_idx, &base_pred),
            c,
            all_classes,
        )?,
        reranked: summarize(
            &take(&easy_idx, &gold),
            &take(&easy_idx, &rr_pred),
            c,
            all_classes,
        )?,
    };

    let ks: Vec<usize> = topk.iter().copied().filter(|&k| k >= 1 && k <= c).collect();
    let topk_points = if ks.is_empty() || gold.is_empty() {
        Vec::new()
    } else {
        let logits: Vec<Vec<f64>> = test.iter().map(|e| e.logits.clone()).collect();
        topk_oracle(&logits, &gold, &ks)?
    };

    Ok(PipelineReport {
        threshold: hardness.threshold,
        dev_misclassified_count: hardness.dev_misclassified_count,
        hard_count: hard_idx.len(),
        hard_fraction: if gold.is_empty() {
            0.0
        } else {
            hard_idx.len() as f64 / gold.len() as f64
        },
        test: test_cmp,
        hard_subset: hard_cmp,
        easy_subset: easy_cmp,
        topk: topk_points,
    })
}

/// Run every stage, writing artifacts into `cfg.out_dir`.
///
/// On failure the error names the stage and any artifacts written so
/// far stay on disk.
pub fn run_pipeline(cfg: &RunConfig) -> StageResult<PipelineOutput> {
    cfg.validate().stage("config")?;
    let run_dir = cfg.out_dir.clone();
    fs::create_dir_all(&run_dir)
        .map_err(|e| Error::Io {
            path: run_dir.clone(),
            source: e,
        })
        .stage("config")?;
    write_json_pretty(&run_dir.join("config.json"), cfg).stage("config")?;

    let bundle = load_bundle(&cfg.manifest).stage("load")?;

    // hardness
    let hardness_opts = HardnessOptions {
        threshold: cfg.hardness.threshold,
        variance: cfg.hardness.variance,
    };
    let hardness = assess_bundle(&bundle, &hardness_opts).stage("hardness")?;
    let mut buf = Vec::new();
    hardness.write_jsonl(&mut buf).stage("hardness")?;
    write_text(
        &run_dir.join("hardness.jsonl"),
        std::str::from_utf8(&buf).expect("jsonl is utf-8"),
    )
    .stage("hardness")?;

    // confusion
    let (dev_logits, dev_gold) = bundle.split_logits_gold(Split::Dev);
    let profile = fit_confusion(&dev_logits, &dev_gold).stage("confusion")?;
    let mut buf = Vec::new();
    profile
        .write_csv(&bundle.labels, &mut buf)
        .stage("confusion")?;
    write_text(
        &run_dir.join("confusion.csv"),
        std::str::from_utf8(&buf).expect("csv is utf-8"),
    )
    .stage("confusion")?;

    // train
    let trained = match cfg.train.mode {
        HeadMode::Linear => {
            let tc = cfg
                .train
                .to_train_config(cfg.seed, cfg.confusion.neg_smoothing);
            train_embedder(&bundle, &profile, &tc).stage("train")?
        }
        HeadMode::Identity => {
            let d = bundle
                .feature_dim()
                .ok_or(Error::MissingFeatures("bundle declares no feature dim"))
                .stage("train")?;
            TrainedEmbedder::identity(d)
        }
    };
    trained.save(run_dir.join("params.json")).stage("train")?;

    // rerank
    let rerank_opts = RerankOptions {
        sim_clamp: cfg.rerank.sim_clamp,
    };
    let results =
        predict_selective_with(&bundle, &hardness, &trained.params, rerank_opts).stage("rerank")?;
    let mut buf = Vec::new();
    rise_core::rerank::write_jsonl(&results, &mut buf).stage("rerank")?;
    write_text(
        &run_dir.join("results.jsonl"),
        std::str::from_utf8(&buf).expect("jsonl is utf-8"),
    )
    .stage("rerank")?;

    // evaluate
    let report = evaluate_results(
        &bundle,
        &hardness,
        &results,
        &cfg.eval.topk,
        cfg.eval.all_classes,
    )
    .stage("evaluate")?;
    write_json_pretty(&run_dir.join("report.json"), &report).stage("evaluate")?;

    Ok(PipelineOutput { run_dir, report })
}

/// Pipeline variants for the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Confusion-weighted training with a linear head.
    Full,
    /// Linear head trained with every negative weighted 1.
    UniformWeights,
    /// Raw features as the embedding space, no training.
    IdentityEmbedder,
}

impl AblationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::UniformWeights => "uniform_weights",
            AblationMode::IdentityEmbedder => "identity_embedder",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationMode::Full),
            "uniform_weights" => Ok(AblationMode::UniformWeights),
            "identity_embedder" => Ok(AblationMode::IdentityEmbedder),
            other => Err(Error::BadConfig(format!(
                "unknown ablation mode {other:?}; expected full|uniform_weights|identity_embedder"
            ))),
        }
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub baseline_weighted_f1: f64,
    pub reranked_weighted_f1: f64,
    pub hard_baseline_weighted_f1: f64,
    pub hard_reranked_weighted_f1: f64,
    pub hard_reranked_macro_f1: f64,
}

/// Comparative report across ablation modes sharing one bundle and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Plain-text table, one line per mode.
    pub fn render(&self) -> String {
        let mut out = String::from(
            "mode               |  wF1 base |  wF1 rerank | hard wF1 base | hard wF1 rerank\n",
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:<18} | {:>9.4} | {:>11.4} | {:>13.4} | {:>15.4}\n",
                row.mode,
                row.baseline_weighted_f1,
                row.reranked_weighted_f1,
                row.hard_baseline_weighted_f1,
                row.hard_reranked_weighted_f1,
            ));
        }
        out
    }
}

/// Run one pipeline per mode on the same bundle and seed; each mode
/// writes into `<out_dir>/<mode>/` and the table lands in
/// `<out_dir>/ablation.json`.
pub fn ablation_matrix(cfg: &RunConfig, modes: &[AblationMode]) -> StageResult<AblationReport> {
    if modes.is_empty() {
        return Err(Error::BadConfig("ablation needs at least one mode".into())).stage("config");
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut mode_cfg = cfg.clone();
        mode_cfg.out_dir = cfg.out_dir.join(mode.as_str());
        match mode {
            AblationMode::Full => {
                mode_cfg.train.mode = HeadMode::Linear;
                mode_cfg.train.weighting = rise_core::embedder::Weighting::Confusion;
            }
            AblationMode::UniformWeights => {
                mode_cfg.train.mode = HeadMode::Linear;
                mode_cfg.train.weighting = rise_core::embedder::Weighting::Uniform;
            }
            AblationMode::IdentityEmbedder => {
                mode_cfg.train.mode = HeadMode::Identity;
            }
        }
        let output = run_pipeline(&mode_cfg)?;
        rows.push(AblationRow {
            mode: mode.to_string(),
            baseline_weighted_f1: output.report.test.baseline.weighted_f1,
            reranked_weighted_f1: output.report.test.reranked.weighted_f1,
            hard_baseline_weighted_f1: output.report.hard_subset.baseline.weighted_f1,
            hard_reranked_weighted_f1: output.report.hard_subset.reranked.weighted_f1,
            hard_reranked_macro_f1: output.report.hard_subset.reranked.macro_f1,
        });
    }
    let report = AblationReport { rows };
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Io {
            path: cfg.out_dir.clone(),
            source: e,
        })
        .stage("evaluate")?;
    write_json_pretty(&cfg.out_dir.join("ablation.json"), &report).stage("evaluate")?;
    Ok(report)
}
