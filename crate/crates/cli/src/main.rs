use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use harmony_bench::cross::{cross_eval, cross_eval_split, CrossEvalConfig, Dataset};
use harmony_bench::evaluate::{evaluate, undefined_primary_cells, EvalOptions};
use harmony_bench::pipeline::{run_synthetic_pipeline, PipelineConfig};
use harmony_bench::render::render_report;
use harmony_bench::scorer::{continue_training, predict_scores, MODEL_METRIC};
use harmony_bench::split::{session_manifests, split_dataset, SplitOptions, SplitSpec};
use harmony_bench::synth::{generate_study, generate_task, simulate_ratings, RaterConfig, StudyConfig, Task};
use harmony_core::correlation::PlccFit;
use harmony_core::metrics::{score_manifest, Metric, ResizePolicy};
use harmony_core::mos::{run_pipeline, CleaningConfig};
use harmony_core::records::{read_mos, read_ratings, read_scores, write_mos, write_ratings, write_scores};
use harmony_core::{load_manifest, write_manifest, EvalReport};
use harmony_model::checkpoint;
use harmony_model::{HarmonyIqa, Mode, ModelConfig, Stages, TrainConfig};
use harmony_service::{RatingService, ServiceConfig, SystemClock};

#[derive(Parser)]
#[command(
    name = "harmony",
    version,
    about = "Image harmonization quality assessment workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw ratings and compute per-image MOS.
    Mos {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Score every manifest entry with full-reference metrics.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        /// Metric name, repeatable; `all` for every metric.
        #[arg(long = "metric", default_value = "all")]
        metrics: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Fail on size mismatches instead of resizing the reference.
        #[arg(long)]
        strict_size: bool,
    },
    /// Stratified 4:1 train/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        group_by_composite: bool,
    },
    /// Cut a manifest into per-session sub-manifests for the rating service.
    Sessions {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 9)]
        sessions: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Correlate metric scores with MOS on the test fold.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        mos: PathBuf,
        /// Without a split every scored image is in the test fold.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "raw")]
        fit: PlccFit,
        /// Exit with status 2 when a metric's overall cell is undefined.
        #[arg(long)]
        strict: bool,
    },
    /// Train the scorer on one dataset directory and evaluate on another.
    CrossEval {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// For train == test: the split to honour.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "raw")]
        fit: PlccFit,
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Train the learned scorer.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        mos: PathBuf,
        #[arg(long, default_value = "both")]
        stage: Stages,
        #[arg(long, default_value = "nr")]
        mode: Mode,
        /// Train on the train fold and validate on the test fold.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Continue from a checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch losses as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Score a manifest with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Must match the mode the model was built with.
        #[arg(long)]
        mode: Option<Mode>,
        /// Only score the test fold of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the rating service.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        session_minutes: i64,
        /// Directory with the rating UI assets, served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Generate synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Triplets from nine simulated algorithms, optionally with ratings.
    Study {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 150)]
        composites: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also simulate this many annotators into ratings.csv.
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// A dataset directory whose MOS is an exact image statistic.
    Task {
        #[arg(long, default_value = "brightness")]
        kind: Task,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Study, ratings, MOS, metric scores, split and report in one go.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        composites: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct TrainingArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
}

impl TrainingArgs {
    fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        if let Some(e) = self.stage1_epochs {
            cfg.stage1.epochs = e;
        }
        if let Some(e) = self.stage2_epochs {
            cfg.stage2.epochs = e;
        }
        cfg
    }

    fn model_config(&self, mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }
}

fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    if names.iter().any(|n| n == "all") {
        return Ok(Metric::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| n.parse::<Metric>().map_err(|e| anyhow::anyhow!("{e}")))
        .collect()
}

fn write_report(report: &EvalReport, out: &Path, strict: bool) -> Result<ExitCode> {
    let (md, json) = render_report(report)?;
    std::fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    print!("{md}");
    let undefined = undefined_primary_cells(report);
    if !undefined.is_empty() {
        log::warn!("undefined overall correlations: {}", undefined.join(", "));
        if strict {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Mos { ratings, out, summary } => {
            let ratings = read_ratings(&ratings)?;
            let outcome = run_pipeline(&ratings, &CleaningConfig::default())?;
            write_mos(&out, &outcome.records)?;
            let text = serde_json::to_string_pretty(&outcome.summary)?;
            match summary {
                Some(path) => {
                    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?
                }
                None => eprintln!("{text}"),
            }
        }
        Command::Score {
            manifest,
            metrics,
            out,
            strict_size,
        } => {
            let manifest = load_manifest(&manifest)?;
            let policy = if strict_size {
                ResizePolicy::Strict
            } else {
                ResizePolicy::ResizeReference
            };
            let mut scores = Vec::new();
            let mut failed = 0;
            for metric in parse_metrics(&metrics)? {
                let run = score_manifest(&manifest, metric, policy);
                for e in &run.errors {
                    eprintln!("{} {}: {}", metric.name(), e.image_id, e.error);
                }
                failed += run.errors.len();
                scores.extend(run.scores);
            }
            write_scores(&out, &scores)?;
            if failed > 0 {
                eprintln!("{failed} entries could not be scored");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Split {
            manifest,
            seed,
            out,
            group_by_composite,
        } => {
            let manifest = load_manifest(&manifest)?;
            let split = split_dataset(&manifest, seed, SplitOptions { group_by_composite })?;
            split.write(&out)?;
            eprintln!("{} train / {} test", split.train_ids.len(), split.test_ids.len());
        }
        Command::Sessions {
            manifest,
            sessions,
            out_dir,
        } => {
            let manifest = load_manifest(&manifest)?;
            std::fs::create_dir_all(&out_dir)?;
            for (k, part) in session_manifests(&manifest, sessions)?.iter().enumerate() {
                write_manifest(part, out_dir.join(format!("session_{:02}.jsonl", k + 1)))?;
            }
        }
        Command::Eval {
            scores,
            mos,
            split,
            out,
            fit,
            strict,
        } => {
            let scores = read_scores(&scores)?;
            let mos = read_mos(&mos)?;
            let split = match split {
                Some(path) => SplitSpec::read(path)?,
                None => {
                    let ids: BTreeSet<&str> = scores.iter().map(|s| s.image_id.as_str()).collect();
                    SplitSpec {
                        train_ids: Vec::new(),
                        test_ids: ids.into_iter().map(String::from).collect(),
                        ratio: "0:1".into(),
                        stratify_key: "none".into(),
                        seed: 0,
                        subsets: Default::default(),
                    }
                }
            };
            let report = evaluate(
                &scores,
                &mos,
                &split,
                &EvalOptions {
                    fit,
                    ..EvalOptions::default()
                },
            )?;
            return write_report(&report, &out, strict);
        }
        Command::CrossEval {
            train,
            test,
            split,
            out,
            fit,
            strict,
            training,
        } => {
            let cfg = CrossEvalConfig {
                model: training.model_config(Mode::Nr),
                train: training.train_config(),
                fit,
            };
            let a = Dataset::load(&train)?;
            let same = std::fs::canonicalize(&train)? == std::fs::canonicalize(&test)?;
            let report = match (same, split) {
                (true, Some(path)) => cross_eval_split(&a, &SplitSpec::read(path)?, &cfg)?,
                (true, None) => bail!("training and test sets are the same directory; pass --split"),
                (false, _) => cross_eval(&a, &Dataset::load(&test)?, &cfg)?,
            };
            return write_report(&report, &out, strict);
        }
        Command::Train {
            manifest,
            mos,
            stage,
            mode,
            split,
            init,
            out,
            history,
            training,
        } => {
            let manifest = load_manifest(&manifest)?;
            let mos = read_mos(&mos)?;
            let split = split.map(SplitSpec::read).transpose()?;
            let mut model = match init {
                Some(path) => checkpoint::load(&path)?,
                None => HarmonyIqa::new(training.model_config(mode))?,
            };
            if model.mode() != mode {
                bail!("checkpoint was built for {:?} mode, not {mode:?}", model.mode());
            }
            let train_ids = split.as_ref().map(SplitSpec::train_set);
            let val_ids = split.as_ref().map(SplitSpec::test_set);
            let hist = continue_training(
                &mut model,
                &manifest,
                &mos,
                train_ids.as_ref(),
                val_ids.as_ref(),
                &training.train_config(),
                stage,
            )?;
            checkpoint::save(&model, &out)?;
            if let Some(path) = history {
                std::fs::write(&path, serde_json::to_string_pretty(&hist)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(last) = hist.epochs.last() {
                eprintln!("stage {} final train loss {:.5}", last.stage, last.train_loss);
            }
        }
        Command::Predict {
            model,
            manifest,
            mode,
            split,
            out,
        } => {
            let model = checkpoint::load(&model)?;
            if let Some(mode) = mode {
                if mode != model.mode() {
                    bail!("the model was trained in {:?} mode", model.mode());
                }
            }
            let manifest = load_manifest(&manifest)?;
            let split = split.map(SplitSpec::read).transpose()?;
            let ids = split.as_ref().map(SplitSpec::test_set);
            let scores = predict_scores(&model, &manifest, ids.as_ref(), MODEL_METRIC)?;
            write_scores(&out, &scores)?;
        }
        Command::Serve {
            manifest,
            ratings,
            port,
            host,
            seed,
            session_minutes,
            static_dir,
        } => {
            let manifest = load_manifest(&manifest)?;
            let cfg = ServiceConfig {
                session_minutes,
                ..ServiceConfig::new(manifest, ratings, seed)
            };
            let svc = Arc::new(RatingService::open(cfg, Arc::new(SystemClock))?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("rating service on http://{}", listener.local_addr()?);
                harmony_service::serve(listener, harmony_service::router(svc, static_dir)).await
            })?;
        }
        Command::Synth(cmd) => synth(cmd)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Study {
            out,
            composites,
            size,
            seed,
            subjects,
        } => {
            let study = generate_study(
                &out,
                &StudyConfig {
                    composites,
                    image_size: size,
                    seed,
                },
            )?;
            if let Some(subjects) = subjects {
                let cfg = RaterConfig {
                    subjects,
                    seed,
                    ..RaterConfig::default()
                };
                write_ratings(
                    out.join("ratings.csv"),
                    &simulate_ratings(&study.manifest, &study.latent, &cfg),
                )?;
            }
            eprintln!("{} triplets in {}", study.manifest.len(), out.display());
        }
        SynthCommand::Task {
            kind,
            n,
            size,
            seed,
            out,
        } => {
            generate_task(&out, kind, n, size, seed)?;
        }
        SynthCommand::Pipeline {
            out,
            composites,
            size,
            seed,
        } => {
            let cfg = PipelineConfig {
                study: StudyConfig {
                    composites,
                    image_size: size,
                    seed,
                },
                raters: RaterConfig {
                    seed,
                    ..RaterConfig::default()
                },
                split_seed: seed,
                ..PipelineConfig::default()
            };
            let artifacts = run_synthetic_pipeline(&out, &cfg)?;
            print!("{}", std::fs::read_to_string(&artifacts.report_md)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
