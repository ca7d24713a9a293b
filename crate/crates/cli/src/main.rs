use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rnnparse::composer::{phrase_vectors, read_phrase_dump, write_phrase_dump, Arena, PhraseRecord};
use rnnparse::ensemble_eval::{evalb_f1, nearest_phrases};
use rnnparse::greedy_parser::{parse, parse_tagged_line, vote_parse};
use rnnparse::nncore::{ModelDims, ModelParams, Precision};
use rnnparse::synth::generate_treebank;
use rnnparse::trainer::{save_history, train_from, train_with, TrainConfig};
use rnnparse::tree::{parse_tree, read_trees, write_trees};
use rnnparse::treebank::{preprocess_splits, DEFAULT_MERGE_THRESHOLD};
use rnnparse::vocab::{load_pretrained_embeddings, TagSet};
use rnnparse::ParseTree;

#[derive(Parser, Debug)]
#[command(name = "rnnparse", version, about = "Greedy bottom-up constituency parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a bracketed treebank and build the tagset.
    Preprocess(PreprocessArgs),
    /// Train a model on preprocessed trees.
    Train(TrainArgs),
    /// Parse "word/POS" sentences, one per line.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Nearest phrases to a query phrase in representation space.
    Neighbors(NeighborsArgs),
    /// Merge training history files into one long-format CSV.
    DumpCurves(DumpCurvesArgs),
    /// Write a synthetic treebank from the built-in toy grammar.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Training treebank; label statistics come from this file only.
    train: PathBuf,
    /// Further splits normalized with the training statistics.
    #[arg(long = "also")]
    also: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MERGE_THRESHOLD)]
    merge_threshold: usize,
    /// Training words seen fewer times map to the unknown word.
    #[arg(long, default_value_t = 1)]
    min_word_count: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum PrecisionArg {
    #[value(name = "64")]
    F64,
    #[value(name = "32")]
    F32,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Tagset file; built from the training trees when absent.
    #[arg(long)]
    tagset: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    lr: f64,
    #[arg(long, default_value_t = 0.25)]
    dropout: f64,
    /// Word, tag and hidden sizes as D,T,H.
    #[arg(long, default_value = "200,20,500")]
    dims: String,
    #[arg(long, default_value_t = 7)]
    window: usize,
    #[arg(long, default_value_t = 7)]
    kmax: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, value_enum, default_value = "64")]
    precision: PrecisionArg,
    /// Text embeddings ("word v1 ... vD" per line) for the word table.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Model file; repeat with --vote for an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    tagset: PathBuf,
    /// Average the scores of all given models.
    #[arg(long)]
    vote: bool,
    /// Input file; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Where to write the per-length CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NeighborsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tagset: PathBuf,
    /// Bracketed query phrase, e.g. "(NP (DT the) (NN dog))".
    #[arg(long)]
    query: String,
    /// Treebank whose phrases are searched.
    #[arg(long, conflicts_with = "dump", required_unless_present = "dump")]
    corpus: Option<PathBuf>,
    /// Precomputed phrase dump to search.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Save the phrase dump computed from --corpus.
    #[arg(long, requires = "corpus")]
    write_dump: Option<PathBuf>,
    #[arg(short, default_value_t = 5)]
    k: usize,
}

#[derive(Args, Debug)]
struct DumpCurvesArgs {
    /// History CSV files written by `train`.
    #[arg(required = true)]
    histories: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<C: Serialize> {
    command: &'static str,
    tool_version: &'static str,
    config: C,
    seed: Option<u64>,
    tagset: Option<PathBuf>,
    models: Vec<PathBuf>,
    corpora: Vec<PathBuf>,
}

impl<C: Serialize> RunManifest<C> {
    fn new(command: &'static str, config: C) -> Self {
        RunManifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            seed: None,
            tagset: None,
            models: Vec::new(),
            corpora: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Marks errors caused by how the command was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_corpus(path: &Path) -> Result<Vec<ParseTree>> {
    read_trees(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_dims(text: &str, window: usize, kmax: usize) -> Result<ModelDims> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--dims expects D,T,H, got {text:?}")))?;
    let [word_dim, tag_dim, hidden] = parts[..] else {
        return Err(usage(format!("--dims expects D,T,H, got {text:?}")));
    };
    let dims = ModelDims {
        word_dim,
        tag_dim,
        hidden,
        window,
        kmax,
    };
    if [word_dim, tag_dim, hidden, window, kmax].contains(&0) {
        return Err(usage("all dimensions must be at least 1"));
    }
    dims.validate().map_err(|e| usage(e.to_string()))?;
    Ok(dims)
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let train = read_corpus(&a.train)?;
    let others = a
        .also
        .iter()
        .map(|p| read_corpus(p))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[ParseTree]> = others.iter().map(|v| v.as_slice()).collect();
    let (train_out, others_out, stats) = preprocess_splits(&train, &refs, a.merge_threshold);
    fs::create_dir_all(&a.out_dir)?;

    let mut outputs = vec![a.out_dir.join("train.mrg")];
    write_trees(&outputs[0], &train_out)?;
    for (path, trees) in a.also.iter().zip(&others_out) {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "split".into());
        let out = a.out_dir.join(format!("{stem}.mrg"));
        if outputs.contains(&out) {
            bail!("two inputs map to {}", out.display());
        }
        write_trees(&out, trees)?;
        outputs.push(out);
    }
    let tagset = TagSet::build(&train_out, a.min_word_count)?;
    let tagset_path = a.out_dir.join("tagset.txt");
    tagset.save(&tagset_path)?;
    stats.write_sidecar(a.out_dir.join("merged_labels.tsv"), a.merge_threshold)?;

    #[derive(Serialize)]
    struct Config {
        merge_threshold: usize,
        min_word_count: usize,
        outputs: Vec<PathBuf>,
    }
    let mut manifest = RunManifest::new(
        "preprocess",
        Config {
            merge_threshold: a.merge_threshold,
            min_word_count: a.min_word_count,
            outputs,
        },
    );
    manifest.tagset = Some(tagset_path);
    manifest.corpora = std::iter::once(a.train.clone()).chain(a.also.clone()).collect();
    manifest.write(&a.out_dir)?;
    eprintln!(
        "preprocessed {} training trees ({} dropped), {} labels",
        train_out.len(),
        train.len() - train_out.len(),
        tagset.num_labels()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let dims = parse_dims(&a.dims, a.window, a.kmax)?;
    if !(0.0..1.0).contains(&a.dropout) {
        return Err(usage("--dropout must be in [0, 1)"));
    }
    let cfg = TrainConfig {
        base_lr: a.lr,
        p_drop: a.dropout,
        dims,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        precision: a.precision.into(),
        ..TrainConfig::default()
    };
    let train = read_corpus(&a.train)?;
    let dev = read_corpus(&a.dev)?;
    let tagset = match &a.tagset {
        Some(p) => TagSet::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TagSet::build(&train, 1)?,
    };
    fs::create_dir_all(a.out_dir.join("checkpoints"))?;
    let tagset_path = a.out_dir.join("tagset.txt");
    tagset.save(&tagset_path)?;

    let precision = cfg.precision;
    let ckpt_dir = a.out_dir.join("checkpoints");
    let on_epoch = |r: &rnnparse::trainer::EpochRecord, improved: Option<&ModelParams>| {
        eprintln!("epoch {:>3}  nll {:.4}  dev F1 {:.2}", r.epoch, r.train_nll, r.dev_f1);
        if let Some(p) = improved {
            p.save(ckpt_dir.join(format!("epoch-{:03}.bin", r.epoch)), precision)?;
        }
        Ok(())
    };
    let outcome = match &a.embeddings {
        Some(path) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut params = cfg.init_params(&tagset, &mut rng)?;
            let (words, report) = load_pretrained_embeddings(path, &tagset, dims.word_dim, &mut rng)?;
            eprintln!(
                "embeddings: {} matched, {} defaulted, {} skipped",
                report.matched,
                report.defaulted,
                report.skipped.len()
            );
            params.words = words;
            train_from(params, &train, &dev, &tagset, &cfg, on_epoch)?
        }
        None => train_with(&train, &dev, &tagset, &cfg, on_epoch)?,
    };
    let model_path = a.out_dir.join("model.bin");
    outcome.params.save(&model_path, precision)?;
    save_history(a.out_dir.join("history.csv"), &outcome.history)?;
    eprintln!("best epoch {}", outcome.best_epoch);

    #[derive(Serialize)]
    struct Config<'a> {
        #[serde(flatten)]
        args: &'a TrainArgs,
        word_dim: usize,
        tag_dim: usize,
        hidden: usize,
        best_epoch: usize,
    }
    let mut manifest = RunManifest::new(
        "train",
        Config {
            args: &a,
            word_dim: dims.word_dim,
            tag_dim: dims.tag_dim,
            hidden: dims.hidden,
            best_epoch: outcome.best_epoch,
        },
    );
    manifest.seed = Some(a.seed);
    manifest.tagset = Some(tagset_path);
    manifest.models = vec![model_path];
    manifest.corpora = vec![a.train.clone(), a.dev.clone()];
    manifest.write(&a.out_dir)?;
    Ok(())
}

fn cmd_parse(a: ParseArgs) -> Result<()> {
    if a.models.len() > 1 && !a.vote {
        return Err(usage("several models given; pass --vote to combine them"));
    }
    if a.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let tagset = TagSet::load(&a.tagset).with_context(|| format!("reading {}", a.tagset.display()))?;
    let models = a
        .models
        .iter()
        .map(|p| ModelParams::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut input = String::new();
    match &a.input {
        Some(p) => {
            input = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        }
        None => {
            io::stdin().read_to_string(&mut input)?;
        }
    }
    let lines: Vec<&str> = input.lines().collect();
    let start = Instant::now();
    let model_refs: Vec<&ModelParams> = models.iter().collect();
    let tagset_refs: Vec<&TagSet> = vec![&tagset; models.len()];
    let parse_line = |(i, line): (usize, &&str)| -> Result<String> {
        let (words, pos) = parse_tagged_line(line).with_context(|| format!("input line {}", i + 1))?;
        if words.is_empty() {
            return Ok(String::new());
        }
        let tree = if a.vote {
            vote_parse(&words, &pos, &model_refs, &tagset_refs)
        } else {
            parse(&words, &pos, model_refs[0], &tagset)
        };
        Ok(tree.with_context(|| format!("input line {}", i + 1))?.to_string())
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.threads).build()?;
    let out: Vec<String> = pool.install(|| {
        lines
            .par_iter()
            .enumerate()
            .map(parse_line)
            .collect::<Result<Vec<_>>>()
    })?;
    let elapsed = start.elapsed();

    let mut sink: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for line in &out {
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    eprintln!(
        "parsed {} sentences in {:.3} s",
        out.len(),
        elapsed.as_secs_f64()
    );

    if let Some(p) = &a.output {
        #[derive(Serialize)]
        struct Config {
            vote: bool,
            threads: usize,
            output: PathBuf,
        }
        let mut manifest = RunManifest::new(
            "parse",
            Config {
                vote: a.vote,
                threads: a.threads,
                output: p.clone(),
            },
        );
        manifest.tagset = Some(a.tagset.clone());
        manifest.models = a.models.clone();
        manifest.corpora = a.input.iter().cloned().collect();
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        manifest.write(dir)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let gold = read_corpus(&a.gold)?;
    let pred = read_corpus(&a.pred)?;
    let report = evalb_f1(&gold, &pred)?;
    print!("{}", report.summary());
    if let Some(p) = &a.csv {
        fs::write(p, report.length_csv())?;
    } else {
        print!("{}", report.length_csv());
    }
    Ok(())
}

fn cmd_neighbors(a: NeighborsArgs) -> Result<()> {
    let params = ModelParams::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let tagset = TagSet::load(&a.tagset).with_context(|| format!("reading {}", a.tagset.display()))?;
    let query = parse_tree(&a.query).map_err(|e| usage(format!("--query: {e}")))?;
    if query.is_leaf() {
        return Err(usage("--query must be a phrase, not a single preterminal"));
    }
    let mut arena = Arena::eval(params.p_drop);
    let root = arena.compose_tree(&query, &params, &tagset)?;
    let qvec = arena.node(root).vec.clone();

    let records: Vec<PhraseRecord> = match (&a.corpus, &a.dump) {
        (Some(corpus), _) => {
            let mut recs = Vec::new();
            for t in read_corpus(corpus)? {
                if !t.is_leaf() {
                    recs.extend(phrase_vectors(&t, &params, &tagset, params.p_drop)?);
                }
            }
            if let Some(out) = &a.write_dump {
                write_phrase_dump(BufWriter::new(fs::File::create(out)?), &recs)?;
            }
            recs
        }
        (None, Some(dump)) => {
            let f = fs::File::open(dump).with_context(|| format!("reading {}", dump.display()))?;
            read_phrase_dump(io::BufReader::new(f), params.dims.word_dim)?
        }
        (None, None) => return Err(usage("give --corpus or --dump")),
    };
    for (phrase, d) in nearest_phrases(&query.to_string(), &qvec, &records, a.k)? {
        println!("{d:.6}\t{phrase}");
    }
    Ok(())
}

fn cmd_dump_curves(a: DumpCurvesArgs) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "run,epoch,train_nll,dev_f1")?;
    for path in &a.histories {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        if lines.next() != Some("epoch,train_nll,dev_f1") {
            bail!("{}: not a training history file", path.display());
        }
        let run = path.display().to_string();
        for (i, line) in lines.enumerate() {
            if line.split(',').count() != 3 {
                bail!("{}: malformed line {}", path.display(), i + 2);
            }
            writeln!(out, "{run},{line}")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let trees = generate_treebank(a.count, a.seed);
    write_trees(&a.out, &trees)?;
    #[derive(Serialize)]
    struct Config {
        count: usize,
        output: PathBuf,
    }
    let mut manifest = RunManifest::new(
        "generate",
        Config {
            count: a.count,
            output: a.out.clone(),
        },
    );
    manifest.seed = Some(a.seed);
    let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    manifest.write(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Neighbors(a) => cmd_neighbors(a),
        Command::DumpCurves(a) => cmd_dump_curves(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
