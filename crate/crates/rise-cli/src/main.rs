//! `rise` — refine classifier predictions at inference time.
//!
//! Operates on precomputed artifact bundles: detects low-confidence
//! examples from logit variance, learns a confusion-weighted text–label
//! embedding space, and reranks the logits of hard examples by semantic
//! similarity.

use std::fs;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rise_cli::config::{HeadMode, RunConfig};
use rise_cli::pipeline::{ablation_matrix, run_pipeline, AblationMode};
use rise_core::confusion::{fit_confusion, write_table_csv, ConfusionProfile};
use rise_core::dataset::{load_bundle, save_bundle, Split};
use rise_core::embedder::{train_embedder, TrainConfig, TrainedEmbedder, Weighting};
use rise_core::hardness::{assess_bundle, HardnessOptions, HardnessReport, VarianceKind};
use rise_core::metrics::{f1_report_with, topk_oracle, F1Options};
use rise_core::rerank::{predict_selective_with, RerankOptions};
use rise_core::synth::{generate, SynthConfig};
use rise_core::util::argmax;
use rise_core::Error;

#[derive(Parser)]
#[command(
    name = "rise",
    version,
    about = "Inference-time semantic reranking for classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a bundle manifest and print a report.
    Validate { manifest: PathBuf },
    /// Generate a synthetic bundle with controllable confusability.
    Synth(SynthArgs),
    /// Flag hard examples by logit variance (JSON lines on stdout).
    DetectHard {
        manifest: PathBuf,
        /// Override the dev-estimated variance threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Variance estimator: population or sample.
        #[arg(long, default_value = "population")]
        variance: String,
    },
    /// Fit the dev-set confusion profile (CSV on stdout).
    FitConfusion {
        manifest: PathBuf,
        /// Add this to every off-diagonal entry of the emitted table.
        #[arg(long, default_value_t = 0.0)]
        neg_smoothing: f64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the shared text–label projection head.
    TrainEmbedder(TrainArgs),
    /// Rerank hard test examples with a trained head.
    Rerank {
        manifest: PathBuf,
        /// Hardness report (JSON lines) from detect-hard or a pipeline run.
        #[arg(long)]
        hardness: PathBuf,
        /// Trained head parameters (JSON).
        #[arg(long)]
        params: PathBuf,
        /// Map similarities through (s + 1) / 2 before the product.
        #[arg(long)]
        sim_clamp: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold labels (JSON on stdout).
    Evaluate {
        /// One gold label index per line, aligned with the prediction file.
        #[arg(long)]
        gold: PathBuf,
        /// Rerank results (JSON lines).
        #[arg(long)]
        pred: PathBuf,
        /// Comma-separated ks for the top-k oracle curve.
        #[arg(long, value_delimiter = ',')]
        topk: Vec<usize>,
        /// Restrict scoring to examples flagged hard in --hardness.
        #[arg(long)]
        hard_only: bool,
        #[arg(long)]
        hardness: Option<PathBuf>,
        /// Average macro-F1 over all classes, not only the present ones.
        #[arg(long)]
        all_classes: bool,
    },
    /// Run detect → confusion → train → rerank → evaluate from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare pipeline variants on one bundle and seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of full,uniform_weights,identity_embedder.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Examples per class in each of train/dev/test.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Shrink factor for confusable-pair centroid gaps (0 = identical).
    #[arg(long, default_value_t = 0.1)]
    overlap: f64,
    /// Per-coordinate feature noise.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Pairs like 0:1,2:3 whose centroids are pulled together.
    #[arg(long, value_delimiter = ',')]
    confusable: Vec<String>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Radius of the centroid sphere.
    #[arg(long, default_value_t = 10.0)]
    scale: f64,
    /// Per-coordinate noise on the label-name features.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    manifest: PathBuf,
    /// Confusion profile CSV from fit-confusion.
    #[arg(long)]
    confusion: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// confusion or uniform (the no-ambiguity-modeling ablation).
    #[arg(long, default_value = "confusion")]
    weighting: String,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Smoothing added to every confusion-derived negative weight.
    #[arg(long, default_value_t = 0.01)]
    neg_smoothing: f64,
    /// linear trains a head; identity skips training.
    #[arg(long, default_value = "linear")]
    mode: String,
    /// Output dimension K of the head; defaults to the feature dim.
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::MissingFile(_)
        | Error::Manifest(_)
        | Error::Parse { .. }
        | Error::DimensionMismatch(_)
        | Error::LengthMismatch(_)
        | Error::BadLabel(_)
        | Error::BadSplit(_)
        | Error::DuplicateId(_)
        | Error::BadConfig(_)
        | Error::Json(_) => 2,
        _ => 3,
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("RISE_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Core(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
        Err(CmdError::Stage(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

enum CmdError {
    Core(Error),
    Stage(rise_cli::pipeline::StageError),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Core(e)
    }
}

impl From<rise_cli::pipeline::StageError> for CmdError {
    fn from(e: rise_cli::pipeline::StageError) -> Self {
        CmdError::Stage(e)
    }
}

fn dispatch(command: Command) -> Result<(), CmdError> {
    match command {
        Command::Validate { manifest } => {
            let bundle = load_bundle(&manifest)?;
            let splits = [Split::Train, Split::Dev, Split::Test];
            let counts: Vec<usize> = splits
                .iter()
                .map(|&s| bundle.split_examples(s).len())
                .collect();
            println!("manifest: {}", manifest.display());
            println!(
                "labels: {} ({})",
                bundle.num_classes(),
                bundle.labels.names().join(", ")
            );
            println!("examples: {}", bundle.examples.len());
            println!(
                "splits: train={} dev={} test={}",
                counts[0], counts[1], counts[2]
            );
            match bundle.feature_dim() {
                Some(d) => println!("feature dim: {d}"),
                None => println!("feature dim: none"),
            }
            println!(
                "label features: {}",
                if bundle.label_features.is_some() {
                    "present"
                } else {
                    "absent"
                }
            );
            println!("ok");
            Ok(())
        }
        Command::Synth(args) => {
            let confusable_pairs = parse_pairs(&args.confusable)?;
            let cfg = SynthConfig {
                num_classes: args.classes,
                dim: args.dim,
                n_per_class: args.n,
                overlap: args.overlap,
                noise: args.noise,
                confusable_pairs,
                seed: args.seed,
                centroid_scale: args.scale,
                label_feature_noise: args.label_noise,
            };
            let bundle = generate(&cfg)?;
            let manifest = save_bundle(&bundle, &args.out)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::DetectHard {
            manifest,
            threshold,
            variance,
        } => {
            let bundle = load_bundle(&manifest)?;
            let opts = HardnessOptions {
                threshold,
                variance: variance.parse::<VarianceKind>()?,
            };
            let report = assess_bundle(&bundle, &opts)?;
            let stdout = std::io::stdout();
            report.write_jsonl(stdout.lock())?;
            Ok(())
        }
        Command::FitConfusion {
            manifest,
            neg_smoothing,
            out,
        } => {
            let bundle = load_bundle(&manifest)?;
            let (dev_logits, dev_gold) = bundle.split_logits_gold(Split::Dev);
            let profile = fit_confusion(&dev_logits, &dev_gold)?;
            let table = profile.smoothed_table(neg_smoothing);
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_table_csv(&bundle.labels, &table, &mut buf)?;
                    fs::write(&path, buf).map_err(|e| Error::Io { path, source: e })?;
                }
                None => {
                    let stdout = std::io::stdout();
                    write_table_csv(&bundle.labels, &table, stdout.lock())?;
                }
            }
            Ok(())
        }
        Command::TrainEmbedder(args) => {
            let bundle = load_bundle(&args.manifest)?;
            let mode = args.mode.parse::<HeadMode>()?;
            let trained = match mode {
                HeadMode::Identity => {
                    let d = bundle
                        .feature_dim()
                        .ok_or(Error::MissingFeatures("bundle declares no feature dim"))?;
                    TrainedEmbedder::identity(d)
                }
                HeadMode::Linear => {
                    let file = fs::File::open(&args.confusion).map_err(|e| Error::Io {
                        path: args.confusion.clone(),
                        source: e,
                    })?;
                    let (profile, _names) = ConfusionProfile::read_csv(BufReader::new(file))?;
                    let cfg = TrainConfig {
                        learning_rate: args.lr,
                        epochs: args.epochs,
                        batch_size: args.batch,
                        seed: args.seed,
                        weighting: args.weighting.parse::<Weighting>()?,
                        tau: args.tau,
                        neg_smoothing: args.neg_smoothing,
                        embed_dim: args.embed_dim,
                    };
                    train_embedder(&bundle, &profile, &cfg)?
                }
            };
            trained.save(&args.out)?;
            if let Some(last) = trained.loss_trace.last() {
                println!("final epoch mean loss: {last}");
            }
            println!("{}", args.out.display());
            Ok(())
        }
        Command::Rerank {
            manifest,
            hardness,
            params,
            sim_clamp,
            out,
        } => {
            let bundle = load_bundle(&manifest)?;
            let file = fs::File::open(&hardness).map_err(|e| Error::Io {
                path: hardness.clone(),
                source: e,
            })?;
            let report = HardnessReport::read_jsonl(BufReader::new(file))?;
            let trained = TrainedEmbedder::load(&params)?;
            let results = predict_selective_with(
                &bundle,
                &report,
                &trained.params,
                RerankOptions { sim_clamp },
            )?;
            let mut buf = Vec::new();
            rise_core::rerank::write_jsonl(&results, &mut buf)?;
            fs::write(&out, buf).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let applied = results.iter().filter(|r| r.applied).count();
            eprintln!("reranked {applied} of {} test examples", results.len());
            println!("{}", out.display());
            Ok(())
        }
        Command::Evaluate {
            gold,
            pred,
            topk,
            hard_only,
            hardness,
            all_classes,
        } => {
            let gold_text = fs::read_to_string(&gold).map_err(|e| Error::Io {
                path: gold.clone(),
                source: e,
            })?;
            let gold_labels: Vec<usize> = gold_text
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| {
                    l.trim().parse::<usize>().map_err(|e| Error::Parse {
                        path: gold.clone(),
                        line: 0,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?;
            let file = fs::File::open(&pred).map_err(|e| Error::Io {
                path: pred.clone(),
                source: e,
            })?;
            let results = rise_core::rerank::read_jsonl(BufReader::new(file))?;
            if results.len() != gold_labels.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} gold labels vs {} prediction lines",
                    gold_labels.len(),
                    results.len()
                ))
                .into());
            }
            let keep: Vec<usize> = if hard_only {
                let path = hardness.ok_or_else(|| {
                    Error::BadConfig("--hard-only requires --hardness <jsonl>".into())
                })?;
                let file = fs::File::open(&path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let report = HardnessReport::read_jsonl(BufReader::new(file))?;
                let verdicts = report.verdicts();
                results
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| verdicts.get(r.id.as_str()).copied().unwrap_or(false))
                    .map(|(i, _)| i)
                    .collect()
            } else {
                (0..results.len()).collect()
            };
            if keep.is_empty() {
                return Err(Error::EmptyInput("no examples left to evaluate").into());
            }
            let c = results[0].original_logits.len();
            let g: Vec<usize> = keep.iter().map(|&i| gold_labels[i]).collect();
            let baseline: Vec<usize> = keep
                .iter()
                .map(|&i| argmax(&results[i].original_logits))
                .collect();
            let reranked: Vec<usize> = keep.iter().map(|&i| results[i].prediction).collect();
            let opts = F1Options { all_classes };
            let base_report = f1_report_with(&g, &baseline, c, opts)?;
            let rr_report = f1_report_with(&g, &reranked, c, opts)?;
            let ks: Vec<usize> = topk.into_iter().filter(|&k| k >= 1 && k <= c).collect();
            let topk_points = if ks.is_empty() {
                Vec::new()
            } else {
                let logits: Vec<Vec<f64>> = keep
                    .iter()
                    .map(|&i| results[i].original_logits.clone())
                    .collect();
                topk_oracle(&logits, &g, &ks)?
            };
            let out = serde_json::json!({
                "n": g.len(),
                "hard_only": hard_only,
                "baseline": base_report,
                "reranked": rr_report,
                "topk": topk_points,
            });
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &out).map_err(Error::Json)?;
            writeln!(lock).ok();
            Ok(())
        }
        Command::Pipeline {
            config,
            out_dir,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = run_pipeline(&cfg)?;
            let r = &output.report;
            eprintln!(
                "threshold {:.6}; {} of {} test examples hard",
                r.threshold, r.hard_count, r.test.n
            );
            eprintln!(
                "test wF1 {:.4} -> {:.4}; hard-subset mF1 {:.4} -> {:.4}",
                r.test.baseline.weighted_f1,
                r.test.reranked.weighted_f1,
                r.hard_subset.baseline.macro_f1,
                r.hard_subset.reranked.macro_f1
            );
            println!("{}", output.run_dir.display());
            Ok(())
        }
        Command::Ablate {
            config,
            modes,
            out_dir,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            let parsed: Vec<AblationMode> = modes
                .iter()
                .map(|m| m.trim().parse::<AblationMode>())
                .collect::<Result<_, _>>()?;
            let report = ablation_matrix(&cfg, &parsed)?;
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn parse_pairs(specs: &[String]) -> Result<Vec<(usize, usize)>, Error> {
    specs
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| Error::BadConfig(format!("bad pair {s:?}; expected a:b")))?;
            let a = a
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::BadConfig(format!("bad pair {s:?}: {e}")))?;
            let b = b
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::BadConfig(format!("bad pair {s:?}: {e}")))?;
            Ok((a, b))
        })
        .collect()
}
