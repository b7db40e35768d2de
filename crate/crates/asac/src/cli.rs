//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use asac_core::adaptive::dump_weights;
use asac_core::data::{split_corpus, LabeledExample, Vocab};
use asac_core::encoder::LayerStates;
use asac_core::eval::{evaluate, run_ablation_matrix, Evaluation};
use asac_core::model::AsacModel;
use asac_core::synth::generate_synthetic_corpus;
use asac_core::train::{train, Dataset};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::corpus::{load_corpus, save_corpus, CorpusFormat, LoadedCorpus};
use crate::embeddings::{alignment_path, attach_states, read_alignment, read_embeddings};
use crate::error::{Error, Result};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "asac", version, about = "Nested medical NER with adaptive layer mixing and two-pass CRFs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic nested corpus and its 14:3:3 split.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2500)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json, metrics.jsonl and run.conf.
    Train(RunArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(ModelArgs),
    /// Decode a corpus to JSON lines with both passes' spans.
    Predict(ModelArgs),
    /// Dump per-class layer weights as CSV.
    Weights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count second-pass label changes per class as CSV.
    Stats(ModelArgs),
    /// Train and test all four component configurations per seed.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra key=value settings, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// json or jsonl; taken from the extension when absent.
    #[arg(long)]
    pub format: Option<String>,
    /// Precomputed states for models trained on them.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Destination file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score the first pass instead of the second (eval only).
    #[arg(long)]
    pub pass1: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for a in &self.set {
            cfg.apply_assignment(a)?;
        }
        let t = &mut cfg.experiment.train;
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        for (flag, slot) in [
            (&self.train, &mut cfg.train),
            (&self.dev, &mut cfg.dev),
            (&self.test, &mut cfg.test),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir.clone_from(d);
        }
        if cfg.train_embeddings.is_some() {
            cfg.experiment.precomputed = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { seed, size, out } => synth(seed, size, &out),
        Command::Train(args) => train_command(&args.resolve()?),
        Command::Eval(args) => eval_command(&args),
        Command::Predict(args) => predict_command(&args),
        Command::Weights { checkpoint, out } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            emit(out.as_deref(), &report::weights_csv(&dump_weights(&model.params.adaptive)?))
        }
        Command::Stats(args) => {
            let (_, eval) = evaluate_file(&args)?;
            emit(args.out.as_deref(), &report::change_stats_csv(&eval.change_stats))
        }
        Command::Ablate { run, seeds, out } => ablate_command(&run.resolve()?, &seeds, out.as_deref()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn synth(seed: u64, size: usize, out: &Path) -> Result<()> {
    create_dir(out)?;
    let corpus = generate_synthetic_corpus(seed, size);
    let (train, dev, test) = split_corpus(&corpus, seed);
    for (name, set) in [("corpus", &corpus), ("train", &train), ("dev", &dev), ("test", &test)] {
        save_corpus(&out.join(format!("{name}.json")), set, CorpusFormat::Json)?;
    }
    Ok(())
}

fn format_for(path: &Path, explicit: Option<CorpusFormat>) -> CorpusFormat {
    explicit.unwrap_or_else(|| CorpusFormat::from_path(path))
}

/// Loads a corpus and reports skipped examples on stderr.
fn read_examples(path: &Path, format: CorpusFormat) -> Result<Vec<LabeledExample>> {
    let LoadedCorpus { examples, rejected } = load_corpus(path, format)?;
    if !rejected.is_empty() {
        eprintln!("{}: skipped {} example(s)", path.display(), rejected.len());
        for r in rejected.iter().take(10) {
            eprintln!("  example {}: {}", r.index, r.reason);
        }
    }
    Ok(examples)
}

/// Cuts sentences to what the encoder can hold, with a notice.
fn fit_to_encoder(examples: Vec<LabeledExample>, max_len: usize) -> Vec<LabeledExample> {
    let limit = max_len.saturating_sub(2);
    let cut = examples.iter().filter(|e| e.len() > limit).count();
    if cut == 0 {
        return examples;
    }
    eprintln!("truncated {cut} sentence(s) to {limit} characters");
    examples.iter().map(|e| e.truncated(limit)).collect()
}

/// Examples with their stored states when `embeddings` is given. Stored
/// states fix their own truncation; otherwise sentences are cut to fit.
fn with_states(
    examples: Vec<LabeledExample>,
    embeddings: Option<&Path>,
    model: &AsacModel,
) -> Result<(Vec<LabeledExample>, Option<Vec<LayerStates>>)> {
    match (embeddings, model.config.precomputed) {
        (Some(path), true) => {
            let enc = &model.config.encoder;
            let (header, sentences) = read_embeddings(path, enc.n_states(), enc.d_model)?;
            let alignment = read_alignment(&alignment_path(path))?;
            let (ex, states) = attach_states(&examples, &alignment, &header, &sentences, model.max_len(), path)?;
            Ok((ex, Some(states)))
        }
        (None, false) => Ok((fit_to_encoder(examples, model.max_len()), None)),
        (Some(_), false) => Err(Error::Config("this model runs its own encoder; drop the embeddings".into())),
        (None, true) => Err(Error::Config("this model needs precomputed embeddings for every corpus".into())),
    }
}

fn dataset<'a>(examples: &'a [LabeledExample], states: &'a Option<Vec<LayerStates>>) -> Result<Dataset<'a>> {
    Ok(match states {
        Some(s) => Dataset::with_states(examples, s)?,
        None => Dataset::new(examples),
    })
}

struct Splits {
    train: Vec<LabeledExample>,
    dev: Vec<LabeledExample>,
    test: Vec<LabeledExample>,
}

/// Train, dev and test examples from explicit files or a split corpus.
fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let load = |p: &Option<PathBuf>| -> Result<Vec<LabeledExample>> {
        match p {
            Some(p) => read_examples(p, format_for(p, cfg.format)),
            None => Ok(Vec::new()),
        }
    };
    if cfg.train.is_some() {
        return Ok(Splits {
            train: load(&cfg.train)?,
            dev: load(&cfg.dev)?,
            test: load(&cfg.test)?,
        });
    }
    let Some(path) = &cfg.corpus else {
        return Err(Error::Config("no training data: set train or corpus".into()));
    };
    if cfg.train_embeddings.is_some() {
        return Err(Error::Config("precomputed embeddings need explicit train/dev/test files".into()));
    }
    let all = read_examples(path, format_for(path, cfg.format))?;
    let (train, dev, test) = split_corpus(&all, cfg.split_seed);
    Ok(Splits { train, dev, test })
}

pub fn train_command(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    if splits.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let vocab = Vocab::build(&splits.train);
    let model = cfg.experiment.build_model(vocab)?;
    let (train_ex, train_states) = with_states(splits.train, cfg.train_embeddings.as_deref(), &model)?;
    let (dev_ex, dev_states) = if splits.dev.is_empty() {
        (Vec::new(), None)
    } else {
        with_states(splits.dev, cfg.dev_embeddings.as_deref(), &model)?
    };
    let train_set = dataset(&train_ex, &train_states)?;
    let dev_set = dataset(&dev_ex, &dev_states)?;

    create_dir(&cfg.out_dir)?;
    let conf_path = cfg.out_dir.join("run.conf");
    fs::write(&conf_path, cfg.to_text()).map_err(|e| Error::io(&conf_path, e))?;
    let log_path = cfg.out_dir.join("metrics.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut io_err = None;
    let (model, _) = train(model, &cfg.experiment.train, &train_set, &dev_set, &mut |r| {
        let line = report::epoch_line(r);
        eprint!("{line}");
        if let Err(e) = log.write_all(line.as_bytes()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    save_checkpoint(&cfg.out_dir.join("checkpoint.json"), &model, cfg.experiment.train.seed)
}

fn evaluate_file(args: &ModelArgs) -> Result<(AsacModel, Evaluation)> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => CorpusFormat::from_path(&args.corpus),
    };
    let examples = read_examples(&args.corpus, format)?;
    let (examples, states) = with_states(examples, args.embeddings.as_deref(), &model)?;
    let eval = evaluate(&model, &dataset(&examples, &states)?)?;
    Ok((model, eval))
}

fn eval_command(args: &ModelArgs) -> Result<()> {
    let (_, eval) = evaluate_file(args)?;
    let metrics = if args.pass1 { &eval.pass1 } else { &eval.pass2 };
    emit(args.out.as_deref(), &report::metrics_json(metrics))
}

fn predict_command(args: &ModelArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => CorpusFormat::from_path(&args.corpus),
    };
    let examples = read_examples(&args.corpus, format)?;
    let (examples, states) = with_states(examples, args.embeddings.as_deref(), &model)?;
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        let p = match &states {
            Some(s) => model.decode_states(&s[i])?,
            None => model.predict(ex.sentence())?,
        };
        out.push_str(&report::prediction_line(ex.sentence(), &p.pass1_spans, &p.pass2_spans));
    }
    emit(args.out.as_deref(), &out)
}

pub fn ablate_command(cfg: &RunConfig, seeds: &[u64], out: Option<&Path>) -> Result<()> {
    let splits = load_splits(cfg)?;
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Config("ablation needs both a training and a test set".into()));
    }
    let vocab = Vocab::build(&splits.train);
    let probe = cfg.experiment.build_model(vocab.clone())?;
    let (train_ex, train_states) = with_states(splits.train, cfg.train_embeddings.as_deref(), &probe)?;
    let (test_ex, test_states) = with_states(splits.test, cfg.test_embeddings.as_deref(), &probe)?;
    drop(probe);
    let rows = run_ablation_matrix(
        &dataset(&train_ex, &train_states)?,
        &dataset(&test_ex, &test_states)?,
        &vocab,
        &cfg.experiment,
        seeds,
        &mut |r| eprint!("{}", report::ablation_line(r)),
    )?;
    emit(out, &report::ablation_csv(&rows))
}
