//! File-based stage orchestration: corpus, LM training, generation,
//! selection, MTL training, prediction, evaluation, and the multi-seed
//! experiment report.
//!
//! Each seed owns `{out}/seed-{seed}/`:
//!
//! ```text
//! config.toml            run configuration (seeds = [seed], out omitted)
//! corpus/{stories,train,dev,test}.jsonl
//! vocab.txt
//! lm_train.jsonl  lm.ckpt
//! generated/{train,dev,test}.jsonl
//! mtl_epochs.jsonl  mtl.ckpt
//! predictions/{dev,test}.jsonl
//! selection/{dev,test}.jsonl
//! eval.json
//! ```
//!
//! The experiment writes `report.jsonl`, `summary.json`, `summary.txt` and
//! `config.toml` to `{out}`; wall-clock times go only to `{out}/run.log`.

pub mod checkpoint;
pub mod config;
pub mod reference;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_lm, load_mtl, save_lm, save_mtl, Checkpoint, ModelKind};
pub use config::{CorpusSource, RunConfig};

use crate::autodiff::RngStream;
use crate::error::{Error, Result};
use crate::lm::{generate_next_event, train_lm, LmModel};
use crate::metrics::{breakdown_report, BreakdownRecord, BreakdownRow};
use crate::mtl::{aux_labels, AuxLabelMode, predict, train_mtl, EncoderProvider, MtlEpochRecord, MtlModel};
use crate::simscore::{evaluate_selector, EmbeddingProvider, LmProvider, ProviderKind, SelectionRecord, StaticProvider};
use crate::text::data::write_stories;
use crate::text::{gen_synthetic, load_anli, load_timetravel, AbductiveInstance, Story, Vocab};

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written artifact under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serialises");
        buf.push(b'\n');
    }
    buf
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(records))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("record serialises");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Appends one timestamped line to `{out}/run.log`. Failures are ignored.
pub fn log_event(out: &Path, message: &str) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let _ = std::fs::create_dir_all(out);
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("run.log"))
    {
        let _ = writeln!(f, "{ts:.3} {message}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenCorpus,
    TrainLm,
    Generate,
    TrainMtl,
    Predict,
    Select,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenCorpus,
        Stage::TrainLm,
        Stage::Generate,
        Stage::TrainMtl,
        Stage::Predict,
        Stage::Select,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::TrainLm => "train-lm",
            Stage::Generate => "generate",
            Stage::TrainMtl => "train-mtl",
            Stage::Predict => "predict",
            Stage::Select => "select",
            Stage::Evaluate => "evaluate",
        }
    }

    /// The file a stage writes last; its presence marks the stage complete.
    pub fn marker(self) -> &'static str {
        match self {
            Stage::GenCorpus => "vocab.txt",
            Stage::TrainLm => "lm.ckpt",
            Stage::Generate => "generated/test.jsonl",
            Stage::TrainMtl => "mtl.ckpt",
            Stage::Predict => "predictions/test.jsonl",
            Stage::Select => "selection/test.jsonl",
            Stage::Evaluate => "eval.json",
        }
    }
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub stories: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEpochLine {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub instances: usize,
    pub degenerate: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: u8,
    pub gold: Option<u8>,
    pub correct: Option<bool>,
    pub tie: bool,
    pub main_logits: [f64; 2],
    pub aux_prediction: u8,
    pub aux_logits: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub mtl_test_accuracy: f64,
    pub mtl_dev_accuracy: Option<f64>,
    pub mtl_test_ties: usize,
    pub unsup_test_accuracy: f64,
    pub unsup_dev_accuracy: Option<f64>,
    pub unsup_test_ties: usize,
    pub unsup_test_degenerate: usize,
    pub unsup_test_abstentions: usize,
    pub w_final: f64,
    pub w_trajectory: Vec<f64>,
    pub mtl_epochs: Vec<MtlEpochRecord>,
    pub lm_epoch_losses: Vec<f64>,
    pub mtl_test_breakdown: Vec<BreakdownRow>,
}

/// Stage runner for one seed of a configuration.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub config: RunConfig,
    pub seed: u64,
    pub dir: PathBuf,
}

impl SeedRun {
    pub fn new(config: &RunConfig, seed: u64) -> Self {
        SeedRun {
            config: config.clone(),
            seed,
            dir: config.seed_dir(seed),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.path(stage.marker()).is_file()
    }

    /// The configuration as recorded in the seed directory.
    pub fn config_snapshot(&self) -> String {
        let mut c = self.config.clone();
        c.seeds = vec![self.seed];
        c.out = None;
        c.to_toml()
    }

    fn write_config(&self) -> Result<()> {
        write_atomic(&self.path("config.toml"), self.config_snapshot().as_bytes())
    }

    fn require(&self, stage: Stage, missing: Stage, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::PipelineOrder {
                stage: stage.name(),
                missing: missing.name(),
                path: p,
            })
        }
    }

    fn load_split(&self, stage: Stage, missing: Stage, dir: &str, split: &str) -> Result<Vec<AbductiveInstance>> {
        load_anli(&self.require(stage, missing, &format!("{dir}/{split}.jsonl"))?)
    }

    fn vocab(&self, stage: Stage) -> Result<Vocab> {
        Vocab::load(&self.require(stage, Stage::GenCorpus, "vocab.txt")?)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::GenCorpus => self.gen_corpus().map(drop),
            Stage::TrainLm => self.train_lm().map(drop),
            Stage::Generate => self.generate().map(drop),
            Stage::TrainMtl => self.train_mtl().map(drop),
            Stage::Predict => self.predict().map(drop),
            Stage::Select => self.select().map(drop),
            Stage::Evaluate => self.evaluate().map(drop),
        }
    }

    /// Writes the corpus splits and the shared vocabulary (built from the
    /// stories and the training split).
    pub fn gen_corpus(&self) -> Result<CorpusSummary> {
        self.write_config()?;
        let c = &self.config;
        let (stories, splits): (Vec<Story>, [Vec<AbductiveInstance>; 3]) = match c.corpus {
            CorpusSource::Synthetic => {
                let corpus = gen_synthetic(&c.synthetic_spec(self.seed))?;
                let mut it = corpus.instances.into_iter();
                let train: Vec<_> = it.by_ref().take(c.n_train).collect();
                let dev: Vec<_> = it.by_ref().take(c.n_dev).collect();
                let test: Vec<_> = it.collect();
                (corpus.stories, [train, dev, test])
            }
            CorpusSource::Files => {
                let need = |p: &Option<PathBuf>, key: &str| {
                    p.clone()
                        .ok_or_else(|| Error::Config(vec![format!("{key} is required when corpus = \"files\"")]))
                };
                let stories = load_timetravel(&need(&c.stories_path, "stories_path")?)?;
                let train = load_anli(&need(&c.train_path, "train_path")?)?;
                let dev = match &c.dev_path {
                    Some(p) => load_anli(p)?,
                    None => Vec::new(),
                };
                let test = load_anli(&need(&c.test_path, "test_path")?)?;
                (stories, [train, dev, test])
            }
        };
        let texts = stories
            .iter()
            .flat_map(|s| s.texts())
            .chain(splits[0].iter().flat_map(|i| i.texts()));
        let vocab = Vocab::build(texts, 1)?;
        write_stories_atomic(&self.path("corpus/stories.jsonl"), &stories)?;
        for (split, records) in SPLITS.iter().zip(&splits) {
            write_jsonl(&self.path(&format!("corpus/{split}.jsonl")), records)?;
        }
        write_atomic(&self.path("vocab.txt"), vocab.to_text().as_bytes())?;
        Ok(CorpusSummary {
            stories: stories.len(),
            train: splits[0].len(),
            dev: splits[1].len(),
            test: splits[2].len(),
            vocab_size: vocab.len(),
        })
    }

    pub fn train_lm(&self) -> Result<Vec<f64>> {
        let stage = Stage::TrainLm;
        let vocab = self.vocab(stage)?;
        let stories = load_timetravel(&self.require(stage, Stage::GenCorpus, "corpus/stories.jsonl")?)?;
        self.write_config()?;
        let mut model = LmModel::new(self.config.lm_config(self.seed), vocab)?;
        let report = train_lm(&mut model, &stories)?;
        let lines: Vec<LmEpochLine> = report
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(epoch, &loss)| LmEpochLine { epoch, loss })
            .collect();
        write_jsonl(&self.path("lm_train.jsonl"), &lines)?;
        save_lm(&model, &self.path("lm.ckpt"))?;
        Ok(report.epoch_losses)
    }

    /// Decodes a next event for both hypotheses of every instance. Each
    /// (split, instance, hypothesis) draws from its own random stream.
    pub fn generate(&self) -> Result<GenerateSummary> {
        let stage = Stage::Generate;
        let model = load_lm(&self.require(stage, Stage::TrainLm, "lm.ckpt")?)?;
        let splits = SPLITS
            .iter()
            .map(|s| self.load_split(stage, Stage::GenCorpus, "corpus", s))
            .collect::<Result<Vec<_>>>()?;
        self.write_config()?;
        let spec = self.config.decode_spec(self.seed);
        let root = RngStream::new(self.seed).split_named("generate");
        let mut summary = GenerateSummary {
            instances: 0,
            degenerate: 0,
            truncated: 0,
        };
        for (split, mut instances) in SPLITS.iter().zip(splits) {
            let split_rng = root.split_named(split);
            for (i, inst) in instances.iter_mut().enumerate() {
                let mut texts = [String::new(), String::new()];
                for (j, text) in texts.iter_mut().enumerate() {
                    let mut rng = split_rng.split((2 * i + j) as u64);
                    let g = generate_next_event(&model, &inst.obs1, inst.hypothesis(j), &inst.obs2, &spec, &mut rng)?;
                    summary.degenerate += g.degenerate as usize;
                    summary.truncated += g.truncated as usize;
                    *text = g.text;
                }
                inst.generated = Some(texts);
                summary.instances += 1;
            }
            write_jsonl(&self.path(&format!("generated/{split}.jsonl")), &instances)?;
        }
        Ok(summary)
    }

    pub fn train_mtl(&self) -> Result<Vec<MtlEpochRecord>> {
        let stage = Stage::TrainMtl;
        let vocab = self.vocab(stage)?;
        let train = self.load_split(stage, Stage::Generate, "generated", "train")?;
        let dev = self.load_split(stage, Stage::Generate, "generated", "dev")?;
        self.write_config()?;
        let cfg = self.config.mtl_config(self.seed);
        let aux = match cfg.aux_label {
            AuxLabelMode::Gold => aux_labels(&train, cfg.aux_label, None)?,
            AuxLabelMode::Bertscore => {
                let provider = self.provider(stage)?;
                aux_labels(&train, cfg.aux_label, Some(provider.as_ref()))?
            }
        };
        let mut model = MtlModel::new(cfg, vocab)?;
        let report = train_mtl(&mut model, &train, &aux, &dev)?;
        write_jsonl(&self.path("mtl_epochs.jsonl"), &report.epochs)?;
        save_mtl(&model, &self.path("mtl.ckpt"))?;
        Ok(report.epochs)
    }

    pub fn predict(&self) -> Result<Vec<PredictionRecord>> {
        let stage = Stage::Predict;
        let model = load_mtl(&self.require(stage, Stage::TrainMtl, "mtl.ckpt")?)?;
        let dev = self.load_split(stage, Stage::Generate, "generated", "dev")?;
        let test = self.load_split(stage, Stage::Generate, "generated", "test")?;
        self.write_config()?;
        let mut out = Vec::new();
        for (split, instances) in [("dev", dev), ("test", test)] {
            let records = instances
                .iter()
                .enumerate()
                .map(|(i, inst)| {
                    let p = predict(&model, inst)?;
                    Ok(PredictionRecord {
                        id: inst.key(i),
                        prediction: p.prediction,
                        gold: inst.label,
                        correct: inst.label.map(|g| g == p.prediction),
                        tie: p.tie,
                        main_logits: p.main_logits,
                        aux_prediction: p.aux_prediction,
                        aux_logits: p.aux_logits,
                        category: inst.category.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&self.path(&format!("predictions/{split}.jsonl")), &records)?;
            out = records;
        }
        Ok(out)
    }

    fn provider(&self, stage: Stage) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.config.provider {
            ProviderKind::Static => Box::new(StaticProvider::new(self.vocab(stage)?, self.config.static_dim, self.seed)),
            ProviderKind::Lm => {
                let lm = load_lm(&self.require(stage, Stage::TrainLm, "lm.ckpt")?)?;
                Box::new(OwnedLmProvider(lm))
            }
            ProviderKind::Encoder => {
                let m = load_mtl(&self.require(stage, Stage::TrainMtl, "mtl.ckpt")?)?;
                Box::new(OwnedEncoderProvider(m))
            }
        })
    }

    /// Unsupervised selection on the dev and test splits.
    pub fn select(&self) -> Result<Vec<SelectionRecord>> {
        let stage = Stage::Select;
        let dev = self.load_split(stage, Stage::Generate, "generated", "dev")?;
        let test = self.load_split(stage, Stage::Generate, "generated", "test")?;
        let provider = self.provider(stage)?;
        self.write_config()?;
        let mut out = Vec::new();
        for (split, instances) in [("dev", dev), ("test", test)] {
            let records = if instances.is_empty() {
                Vec::new()
            } else {
                evaluate_selector(&instances, provider.as_ref())?.records
            };
            write_jsonl(&self.path(&format!("selection/{split}.jsonl")), &records)?;
            out = records;
        }
        Ok(out)
    }

    pub fn evaluate(&self) -> Result<SeedEval> {
        let stage = Stage::Evaluate;
        let need = |missing, rel: &str| self.require(stage, missing, rel);
        let pred_test: Vec<PredictionRecord> = read_jsonl(&need(Stage::Predict, "predictions/test.jsonl")?)?;
        let pred_dev: Vec<PredictionRecord> = read_jsonl(&need(Stage::Predict, "predictions/dev.jsonl")?)?;
        let sel_test: Vec<SelectionRecord> = read_jsonl(&need(Stage::Select, "selection/test.jsonl")?)?;
        let sel_dev: Vec<SelectionRecord> = read_jsonl(&need(Stage::Select, "selection/dev.jsonl")?)?;
        let epochs: Vec<MtlEpochRecord> = read_jsonl(&need(Stage::TrainMtl, "mtl_epochs.jsonl")?)?;
        let lm: Vec<LmEpochLine> = read_jsonl(&need(Stage::TrainLm, "lm_train.jsonl")?)?;
        let w_final = load_mtl(&need(Stage::TrainMtl, "mtl.ckpt")?)?.w();
        self.write_config()?;

        let mtl_acc = |recs: &[PredictionRecord]| -> Result<Option<f64>> {
            if recs.is_empty() {
                return Ok(None);
            }
            let mut correct = 0;
            for r in recs {
                match r.correct {
                    Some(c) => correct += c as usize,
                    None => return Err(Error::InvalidInstance(format!("instance {} has no label", r.id))),
                }
            }
            Ok(Some(correct as f64 / recs.len() as f64))
        };
        let sel_acc = |recs: &[SelectionRecord]| {
            (!recs.is_empty()).then(|| recs.iter().filter(|r| r.correct).count() as f64 / recs.len() as f64)
        };
        let breakdown: Vec<BreakdownRecord> = pred_test
            .iter()
            .map(|r| BreakdownRecord {
                category: r.category.clone(),
                prediction: Some(r.prediction),
                gold: r.gold.unwrap_or(0),
            })
            .collect();
        let eval = SeedEval {
            seed: self.seed,
            mtl_test_accuracy: mtl_acc(&pred_test)?.ok_or(Error::Empty("test predictions"))?,
            mtl_dev_accuracy: mtl_acc(&pred_dev)?,
            mtl_test_ties: pred_test.iter().filter(|r| r.tie).count(),
            unsup_test_accuracy: sel_acc(&sel_test).ok_or(Error::Empty("test selection"))?,
            unsup_dev_accuracy: sel_acc(&sel_dev),
            unsup_test_ties: sel_test.iter().filter(|r| r.tie).count(),
            unsup_test_degenerate: sel_test.iter().filter(|r| r.degenerate_1 || r.degenerate_2).count(),
            unsup_test_abstentions: sel_test.iter().filter(|r| r.abstain).count(),
            w_final,
            w_trajectory: epochs.iter().map(|e| e.w).collect(),
            mtl_epochs: epochs,
            lm_epoch_losses: lm.iter().map(|l| l.loss).collect(),
            mtl_test_breakdown: breakdown_report(&breakdown, None),
        };
        write_json(&self.path("eval.json"), &eval)?;
        Ok(eval)
    }

    /// Runs every stage whose output is missing, in order. Refuses to resume
    /// over artifacts produced by a different configuration.
    pub fn run_all(&self) -> Result<SeedEval> {
        let cfg_path = self.path("config.toml");
        if cfg_path.is_file() {
            let existing = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
            if existing != self.config_snapshot() {
                return Err(Error::Config(vec![format!(
                    "{} holds artifacts of a different configuration; use another output directory",
                    self.dir.display()
                )]));
            }
        }
        let out = self.config.out_dir();
        for stage in Stage::ALL {
            if stage != Stage::Evaluate && self.is_done(stage) {
                log_event(&out, &format!("seed {} {} skipped (done)", self.seed, stage.name()));
                continue;
            }
            log_event(&out, &format!("seed {} {} start", self.seed, stage.name()));
            self.run(stage)?;
            log_event(&out, &format!("seed {} {} done", self.seed, stage.name()));
        }
        read_json(&self.path("eval.json"))
    }
}

fn write_stories_atomic(path: &Path, stories: &[Story]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_stories(&tmp, stories)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct OwnedLmProvider(LmModel);

impl EmbeddingProvider for OwnedLmProvider {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        LmProvider { model: &self.0 }.embed(text)
    }
    fn dim(&self) -> usize {
        self.0.config.d_model
    }
}

struct OwnedEncoderProvider(MtlModel);

impl EmbeddingProvider for OwnedEncoderProvider {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        EncoderProvider { model: &self.0 }.embed(text)
    }
    fn dim(&self) -> usize {
        self.0.config.d_model
    }
}

/// Mean and sample variance of per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample variance (n − 1 denominator); absent for n < 2.
    pub variance: Option<f64>,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let variance = match (n, mean) {
            (2.., Some(m)) => Some(values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64),
            _ => None,
        };
        Aggregate { n, mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub kind: String,
    pub message: String,
}

/// One line of `report.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub result: Option<SeedEval>,
    pub error: Option<SeedFailure>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<SeedReport>,
    pub partial: bool,
    pub mtl_test_accuracy: Aggregate,
    pub mtl_dev_accuracy: Aggregate,
    pub unsup_test_accuracy: Aggregate,
    pub unsup_dev_accuracy: Aggregate,
    pub w_final: Aggregate,
}

impl ExperimentReport {
    pub fn from_seeds(seeds: Vec<SeedReport>) -> Self {
        let ok: Vec<&SeedEval> = seeds.iter().filter_map(|s| s.result.as_ref()).collect();
        let agg = |f: &dyn Fn(&SeedEval) -> Option<f64>| Aggregate::of(&ok.iter().filter_map(|e| f(e)).collect::<Vec<_>>());
        ExperimentReport {
            partial: ok.len() != seeds.len(),
            mtl_test_accuracy: agg(&|e| Some(e.mtl_test_accuracy)),
            mtl_dev_accuracy: agg(&|e| e.mtl_dev_accuracy),
            unsup_test_accuracy: agg(&|e| Some(e.unsup_test_accuracy)),
            unsup_dev_accuracy: agg(&|e| e.unsup_dev_accuracy),
            w_final: agg(&|e| Some(e.w_final)),
            seeds,
        }
    }

    pub fn summary_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut s = format!(
            "experiment over {} seed(s){}\n\n",
            self.seeds.len(),
            if self.partial { ", PARTIAL: some seeds failed" } else { "" }
        );
        s.push_str(&format!("{:<28} {:>3} {:>8} {:>10}\n", "metric", "n", "mean", "variance"));
        for (name, a) in [
            ("mtl test accuracy", &self.mtl_test_accuracy),
            ("mtl dev accuracy", &self.mtl_dev_accuracy),
            ("unsupervised test accuracy", &self.unsup_test_accuracy),
            ("unsupervised dev accuracy", &self.unsup_dev_accuracy),
            ("final w", &self.w_final),
        ] {
            s.push_str(&format!(
                "{:<28} {:>3} {:>8} {:>10}\n",
                name,
                a.n,
                fmt(a.mean),
                a.variance.map_or("-".to_string(), |v| format!("{v:.6}"))
            ));
        }
        s.push_str(&format!("\n{:<6} {:>9} {:>9} {:>8}  status\n", "seed", "mtl test", "unsup", "w"));
        for r in &self.seeds {
            match (&r.result, &r.error) {
                (Some(e), _) => s.push_str(&format!(
                    "{:<6} {:>9.4} {:>9.4} {:>8.4}  ok\n",
                    r.seed, e.mtl_test_accuracy, e.unsup_test_accuracy, e.w_final
                )),
                (None, err) => s.push_str(&format!(
                    "{:<6} {:>9} {:>9} {:>8}  failed: {}\n",
                    r.seed,
                    "-",
                    "-",
                    "-",
                    err.as_ref().map_or("unknown", |e| e.message.as_str())
                )),
            }
        }
        s.push('\n');
        s.push_str(&reference::reference_table());
        s
    }
}

/// Runs every seed of `config`, continuing past failed seeds, and writes
/// the experiment report files to the output directory.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let out = config.out_dir();
    let mut root_cfg = config.clone();
    root_cfg.out = None;
    write_atomic(&out.join("config.toml"), root_cfg.to_toml().as_bytes())?;
    log_event(&out, &format!("experiment start, seeds {:?}", config.seeds));
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let report = match SeedRun::new(config, seed).run_all() {
            Ok(eval) => SeedReport {
                seed,
                result: Some(eval),
                error: None,
            },
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                log_event(&out, &format!("seed {seed} failed: {e}"));
                SeedReport {
                    seed,
                    result: None,
                    error: Some(SeedFailure {
                        kind: e.kind().to_string(),
                        message: e.to_string(),
                    }),
                }
            }
        };
        seeds.push(report);
    }
    let report = ExperimentReport::from_seeds(seeds);
    write_jsonl(&out.join("report.jsonl"), &report.seeds)?;
    write_json(&out.join("summary.json"), &report)?;
    write_atomic(&out.join("summary.txt"), report.summary_text().as_bytes())?;
    log_event(&out, "experiment done");
    Ok(report)
}
