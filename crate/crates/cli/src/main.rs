use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hypevents::lm::DecodeStrategy;
use hypevents::metrics::{krippendorff_alpha_ordinal, load_annotations, majority_vote, pairwise_kappa, AnnotationTable, Scale};
use hypevents::mtl::AuxLabelMode;
use hypevents::pipeline::{run_experiment, RunConfig, SeedRun, Stage};
use hypevents::simscore::ProviderKind;

/// Default output root when neither `--out` nor the config sets one.
const OUT_ENV: &str = "HYPEVENTS_OUT";

#[derive(Parser, Debug)]
#[command(name = "hypevents", version, about = "Abductive hypothesis selection with generated next events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write corpus splits and the vocabulary.
    GenCorpus(Common),
    /// Train the infilling language model.
    TrainLm(Common),
    /// Decode a next event for every hypothesis.
    Generate(Common),
    /// Unsupervised selection by similarity to the second observation.
    Select(Common),
    /// Train the multi-task classifier.
    TrainMtl(Common),
    /// Classify dev and test instances with the trained classifier.
    Predict(Common),
    /// Aggregate predictions and selections into eval.json.
    Evaluate(Common),
    /// Agreement statistics over an annotation file.
    Agreement {
        #[command(flatten)]
        common: Common,
        /// Annotation file; overrides `annotations_path`.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Every stage for every seed, then the aggregate report.
    Experiment(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Run seeds 1..=N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Epochs for the model trained by this command (both for `experiment`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate, scoped like `--epochs`.
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size, scoped like `--epochs`.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_parser = parse_from_str::<DecodeStrategy>)]
    decode: Option<DecodeStrategy>,
    /// Top-k sampling width.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "aux-label", value_parser = parse_from_str::<AuxLabelMode>)]
    aux_label: Option<AuxLabelMode>,
    #[arg(long, value_parser = parse_from_str::<ProviderKind>)]
    provider: Option<ProviderKind>,
    /// Log progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

fn parse_from_str<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

#[derive(Clone, Copy, PartialEq)]
enum Scope {
    Lm,
    Mtl,
    Both,
    None,
}

fn load_config(c: &Common, scope: Scope) -> hypevents::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out = Some(out.clone());
    } else if cfg.out.is_none() {
        cfg.out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = c.seeds {
        cfg.seeds = (1..=n).collect();
    }
    let lm = matches!(scope, Scope::Lm | Scope::Both);
    let mtl = matches!(scope, Scope::Mtl | Scope::Both);
    if let Some(e) = c.epochs {
        if lm {
            cfg.lm_epochs = e;
        }
        if mtl {
            cfg.mtl_epochs = e;
        }
    }
    if let Some(lr) = c.lr {
        if lm {
            cfg.lm_lr = lr;
        }
        if mtl {
            cfg.mtl_lr = lr;
        }
    }
    if let Some(b) = c.batch {
        if lm {
            cfg.lm_batch_size = b;
        }
        if mtl {
            cfg.mtl_batch_size = b;
        }
    }
    if let Some(d) = c.decode {
        cfg.decode = d;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(a) = c.aux_label {
        cfg.aux_label = a;
    }
    if let Some(p) = c.provider {
        cfg.provider = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_logging(verbose: bool) {
    let level = if verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
}

fn run_stage(common: &Common, stage: Stage, scope: Scope) -> anyhow::Result<()> {
    init_logging(common.verbose);
    let cfg = load_config(common, scope)?;
    for &seed in &cfg.seeds {
        let run = SeedRun::new(&cfg, seed);
        log::info!("seed {seed}: {}", stage.name());
        let summary = match stage {
            Stage::GenCorpus => serde_json::to_value(run.gen_corpus()?)?,
            Stage::TrainLm => json!({ "epoch_losses": run.train_lm()? }),
            Stage::Generate => serde_json::to_value(run.generate()?)?,
            Stage::TrainMtl => {
                let epochs = run.train_mtl()?;
                json!({ "w_trajectory": epochs.iter().map(|e| e.w).collect::<Vec<_>>(), "epochs": epochs })
            }
            Stage::Predict => {
                let recs = run.predict()?;
                json!({ "test_predictions": recs.len() })
            }
            Stage::Select => {
                let recs = run.select()?;
                let correct = recs.iter().filter(|r| r.correct).count();
                json!({ "test_instances": recs.len(), "test_correct": correct })
            }
            Stage::Evaluate => serde_json::to_value(run.evaluate()?)?,
        };
        println!(
            "{}",
            json!({ "stage": stage.name(), "seed": seed, "dir": run.dir, "result": summary })
        );
    }
    Ok(())
}

fn run_agreement(common: &Common, annotations: Option<PathBuf>) -> anyhow::Result<()> {
    init_logging(common.verbose);
    let cfg = load_config(common, Scope::None)?;
    let path = annotations
        .or_else(|| cfg.annotations_path.clone())
        .context("no annotation file: pass --annotations or set annotations_path")?;
    let records = load_annotations(&path)?;
    let mut aspects: Vec<&str> = records.iter().map(|r| r.aspect.as_str()).collect();
    aspects.sort_unstable();
    aspects.dedup();
    let mut rows = Vec::new();
    for aspect in aspects {
        let ordinal = cfg.ordinal_aspects.iter().any(|a| a == aspect);
        let scale = if ordinal {
            Scale::Ordinal {
                order: cfg.ordinal_order.clone(),
            }
        } else {
            Scale::Nominal
        };
        let table = AnnotationTable::from_records(&records, aspect, scale)?;
        let report = if ordinal {
            krippendorff_alpha_ordinal(&table)?
        } else {
            pairwise_kappa(&table)?
        };
        let vote = majority_vote(&table)?;
        rows.push(json!({
            "aspect": aspect,
            "agreement": report,
            "majority_labels": vote.labels.len(),
            "majority_excluded": vote.excluded,
        }));
    }
    let out = cfg.out_dir();
    let doc = serde_json::to_vec_pretty(&rows)?;
    hypevents::pipeline::write_atomic(&out.join("agreement.json"), &doc)?;
    println!("{}", json!({ "stage": "agreement", "aspects": rows }));
    Ok(())
}

fn run_experiment_cmd(common: &Common) -> anyhow::Result<bool> {
    init_logging(common.verbose);
    let cfg = load_config(common, Scope::Both)?;
    let report = run_experiment(&cfg)?;
    print!("{}", report.summary_text());
    Ok(!report.partial)
}

fn error_record(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", error_record("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::GenCorpus(c) => run_stage(c, Stage::GenCorpus, Scope::None).map(|_| true),
        Command::TrainLm(c) => run_stage(c, Stage::TrainLm, Scope::Lm).map(|_| true),
        Command::Generate(c) => run_stage(c, Stage::Generate, Scope::None).map(|_| true),
        Command::Select(c) => run_stage(c, Stage::Select, Scope::None).map(|_| true),
        Command::TrainMtl(c) => run_stage(c, Stage::TrainMtl, Scope::Mtl).map(|_| true),
        Command::Predict(c) => run_stage(c, Stage::Predict, Scope::None).map(|_| true),
        Command::Evaluate(c) => run_stage(c, Stage::Evaluate, Scope::None).map(|_| true),
        Command::Agreement { common, annotations } => run_agreement(common, annotations.clone()).map(|_| true),
        Command::Experiment(c) => run_experiment_cmd(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", error_record("partial", "one or more seeds failed; see report.jsonl"));
            ExitCode::FAILURE
        }
        Err(e) => {
            let kind = e
                .downcast_ref::<hypevents::Error>()
                .map_or("internal", hypevents::Error::kind);
            eprintln!("{}", error_record(kind, &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
