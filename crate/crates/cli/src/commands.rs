//! Subcommands and argument handling.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use segcvae::autodiff::{Checkpoint, DType, Rng};
use segcvae::corpus::{
    build_cdm_dataset_with, build_vocab, encode_pair, filter_by_tokens, mine_cdm, pairs_from_corpus, read_pairs_tsv,
    split_general, write_pairs_tsv, CdmMode, DatasetStats, DialoguePair, EmbeddingTable, EncodedPair, Split,
    Vocabulary,
};
use segcvae::eval::{evaluate, generate_n, EvalItem};
use segcvae::gradsuite::run_gradient_suite;
use segcvae::model::SegCvae;
use segcvae::training::{fit, load_model, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG, VALID_LOG};

use crate::config::{parse_config, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const VOCAB: &str = "vocab.txt";
pub const VOCAB_EMBEDDING: &str = "vocab.ckpt";
pub const GENERATIONS: &str = "generations.tsv";
/// Random configurations checked by `gradcheck`.
pub const GRADCHECK_CONFIGS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "segcvae", version, about = "Train, sample and score SegCVAE dialogue models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a dialogue corpus into train/valid/test pair files.
    PrepareData(Flags),
    /// Report one-to-many and many-to-one mappings in a corpus.
    CdmStats(Flags),
    /// Train a model into a run directory.
    Train(Flags),
    /// Sample responses for every test context of a run.
    Generate(Flags),
    /// Score a run's generations against its test references.
    Evaluate(Flags),
    /// Run the gradient-check suite.
    Gradcheck(Flags),
    /// Train with components switched off.
    Ablate(Flags),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    O2m,
    M2o,
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Component {
    Is,
    Eg,
    San,
    Scn,
    Sdn,
}

impl Component {
    fn name(self) -> &'static str {
        match self {
            Component::Is => "is",
            Component::Eg => "eg",
            Component::San => "san",
            Component::Scn => "scn",
            Component::Sdn => "sdn",
        }
    }
}

#[derive(Clone, Debug, Args)]
struct Flags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input file or directory.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "general")]
    mode: Mode,
    /// Responses sampled per context.
    #[arg(long, default_value_t = 8)]
    n_responses: usize,
    /// Component to switch off; repeatable.
    #[arg(long = "drop", value_enum)]
    drop: Vec<Component>,
}

impl Flags {
    fn input(&self) -> CliResult<&Path> {
        self.input.as_deref().ok_or_else(|| CliError::Usage("--in is required".into()))
    }

    fn out(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    /// Config file values with command-line overrides applied.
    fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
        }
        for c in &self.drop {
            cfg.model.ablation = cfg.model.ablation.drop(c.name())?;
        }
        Ok(cfg)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status: 0 on success, 1 on a domain error, 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("SEGCVAE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SEGCVAE_THREADS={raw:?} is not a positive integer")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::PrepareData(f) => prepare_data(&f),
        Command::CdmStats(f) => cdm_stats(&f),
        Command::Train(f) => train(&f, "train"),
        Command::Generate(f) => generate(&f),
        Command::Evaluate(f) => evaluate_run(&f),
        Command::Gradcheck(f) => gradcheck(&f),
        Command::Ablate(f) => {
            if f.drop.is_empty() {
                return Err(CliError::Usage("ablate needs at least one --drop".into()));
            }
            train(&f, "ablate")
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn file_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.txt");
    out.with_file_name(name)
}

/// TSV pairs when any line has a TAB, otherwise blank-line separated dialogues.
fn parse_pairs(text: &str) -> CliResult<Vec<DialoguePair>> {
    if text.lines().any(|l| l.contains('\t')) {
        Ok(read_pairs_tsv(text)?)
    } else {
        Ok(pairs_from_corpus(text))
    }
}

fn load_pairs(manifest: &mut RunManifest, path: &Path) -> CliResult<Vec<DialoguePair>> {
    let text = manifest.read_input_text(path)?;
    parse_pairs(&text)
}

fn prepare_data(f: &Flags) -> CliResult<()> {
    let out = f.out()?;
    let cfg = f.run_config()?;
    let mut manifest = RunManifest::new("prepare-data").with_config(&cfg);
    if let Some(c) = &f.config {
        manifest.read_input(c)?;
    }
    let mut pairs = load_pairs(&mut manifest, f.input()?)?;
    if let Some(path) = &cfg.embeddings {
        let table = EmbeddingTable::parse(&manifest.read_input_text(path)?)?;
        pairs = filter_by_tokens(&pairs, |t| table.contains(t));
    }
    let (tp, vp) = (cfg.train_percent, cfg.valid_percent);
    let (pairs, split, stats) = match f.mode {
        Mode::General => {
            let split = split_general(&pairs, tp, vp);
            let stats = DatasetStats::of(&pairs);
            (pairs, split, stats)
        }
        Mode::O2m | Mode::M2o => {
            let mode = if f.mode == Mode::O2m { CdmMode::O2M } else { CdmMode::M2O };
            let ds = build_cdm_dataset_with(&pairs, mode, tp, vp)?;
            (ds.pairs, ds.split, ds.stats)
        }
    };
    create_dir(out)?;
    for (name, which) in [("train.tsv", Split::Train), ("valid.tsv", Split::Valid), ("test.tsv", Split::Test)] {
        write_file(&out.join(name), write_pairs_tsv(&split.select(&pairs, which)))?;
        manifest.artifact(name);
    }
    write_file(&out.join("split.txt"), split.to_text())?;
    let mode = format!("mode: {:?}\n", f.mode).to_lowercase();
    write_file(&out.join("stats.txt"), format!("{mode}{}", stats.to_text()))?;
    manifest.artifact("split.txt");
    manifest.artifact("stats.txt");
    manifest.write(Some(&out.join(MANIFEST)))?;
    print!("{mode}{}{}", stats.to_text(), split.to_text());
    Ok(())
}

fn cdm_stats(f: &Flags) -> CliResult<()> {
    let mut manifest = RunManifest::new("cdm-stats");
    let pairs = load_pairs(&mut manifest, f.input()?)?;
    let report = mine_cdm(&pairs)?;
    print!("{}", report.to_text());
    match &f.out {
        Some(out) => {
            write_file(out, report.to_text())?;
            manifest.artifact(out);
            manifest.write(Some(&file_manifest_path(out)))
        }
        None => manifest.write(None),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn encode_all(pairs: &[DialoguePair], vocab: &Vocabulary, max_clen: usize) -> CliResult<Vec<EncodedPair>> {
    pairs
        .iter()
        .map(|p| encode_pair(p, vocab, max_clen).map_err(CliError::from))
        .collect()
}

fn train(f: &Flags, command: &str) -> CliResult<()> {
    let out = f.out()?;
    let mut cfg = f.run_config()?;
    if let Some(dir) = &f.input {
        cfg.train_data = Some(dir.join("train.tsv"));
        cfg.valid_data = Some(dir.join("valid.tsv"));
        let test = dir.join("test.tsv");
        cfg.test_data = test.exists().then_some(test);
    }
    for p in [&mut cfg.train_data, &mut cfg.valid_data, &mut cfg.test_data, &mut cfg.embeddings]
        .into_iter()
        .flatten()
    {
        *p = absolute(p);
    }
    cfg.training.validate()?;

    let mut manifest = RunManifest::new(command).with_config(&cfg);
    if let Some(c) = &f.config {
        manifest.read_input(c)?;
    }
    let train_pairs = load_pairs(&mut manifest, cfg.required("train_data")?)?;
    let valid_pairs = load_pairs(&mut manifest, cfg.required("valid_data")?)?;
    if let Some(test) = &cfg.test_data {
        manifest.read_input(test)?;
    }
    let table = match &cfg.embeddings {
        Some(p) => Some(EmbeddingTable::parse(&manifest.read_input_text(p)?)?),
        None => None,
    };

    let mut rng = Rng::new(cfg.training.seed);
    let vocab = build_vocab(&train_pairs, cfg.vocab_size, cfg.model.emb_dim, table.as_ref(), &mut rng)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.size();
    let model = SegCvae::for_vocab(model_cfg, &vocab, &mut rng)?;
    let train_data = encode_all(&train_pairs, &vocab, cfg.model.max_clen)?;
    let valid_data = encode_all(&valid_pairs, &vocab, cfg.model.max_clen)?;

    create_dir(out)?;
    for name in [TRAIN_LOG, VALID_LOG] {
        let p = out.join(name);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|source| CliError::File {
                path: p.display().to_string(),
                source,
            })?;
        }
    }
    write_file(&out.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    write_file(&out.join(VOCAB), vocab.to_text())?;
    let mut emb = Checkpoint::new();
    emb.push("embedding", DType::F64, vocab.embedding().clone())?;
    emb.save(&out.join(VOCAB_EMBEDDING))?;
    for name in [CONFIG_SNAPSHOT, VOCAB, VOCAB_EMBEDDING, TRAIN_LOG, VALID_LOG, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        manifest.artifact(name);
    }
    manifest.write(Some(&out.join(MANIFEST)))?;

    let mut trainer = Trainer::new(model, cfg.training.clone())?;
    let report = fit(&mut trainer, &train_data, &valid_data, Some(out))?;
    println!("steps: {}", trainer.step());
    println!("best_epoch: {}", report.best_epoch);
    println!("best_valid_ppl: {:.6}", report.best_ppl);
    Ok(())
}

/// Everything `generate` and `evaluate` need from a finished run.
struct Run {
    cfg: RunConfig,
    vocab: Vocabulary,
    /// Test contexts in first-appearance order with their references.
    contexts: Vec<(Vec<String>, Vec<Vec<String>>)>,
}

fn open_run(dir: &Path, manifest: &mut RunManifest) -> CliResult<Run> {
    let cfg = parse_config(&dir.join(CONFIG_SNAPSHOT))?;
    manifest.read_input(&dir.join(CONFIG_SNAPSHOT))?;
    let words = manifest.read_input_text(&dir.join(VOCAB))?;
    manifest.read_input(&dir.join(VOCAB_EMBEDDING))?;
    let emb = Checkpoint::load(&dir.join(VOCAB_EMBEDDING))?;
    let table = emb
        .get("embedding")
        .ok_or_else(|| CliError::Failed(format!("{} has no embedding", VOCAB_EMBEDDING)))?;
    let vocab = Vocabulary::from_text(&words, table.clone())?;
    let test = load_pairs(manifest, cfg.required("test_data")?)?;
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut contexts: Vec<(Vec<String>, Vec<Vec<String>>)> = Vec::new();
    for p in test {
        let i = *index.entry(p.context.clone()).or_insert_with(|| {
            contexts.push((p.context.clone(), Vec::new()));
            contexts.len() - 1
        });
        if !contexts[i].1.contains(&p.response) {
            contexts[i].1.push(p.response);
        }
    }
    if contexts.is_empty() {
        return Err(segcvae::Error::EmptyCorpus("test split is empty".into()).into());
    }
    Ok(Run { cfg, vocab, contexts })
}

fn generate(f: &Flags) -> CliResult<()> {
    if f.n_responses == 0 {
        return Err(CliError::Usage("--n-responses must be positive".into()));
    }
    let dir = f.input()?;
    let mut manifest = RunManifest::new("generate");
    let run = open_run(dir, &mut manifest)?;
    let ckpt_path = [BEST_CHECKPOINT, LAST_CHECKPOINT]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| CliError::Failed(format!("no checkpoint in {}", dir.display())))?;
    manifest.read_input(&ckpt_path)?;
    let model = load_model(&Checkpoint::load(&ckpt_path)?)?;
    let seed = f.seed.unwrap_or(run.cfg.training.seed);
    manifest.seed = Some(seed);
    let mut rng = Rng::new(seed);

    let mut lines = String::new();
    for (context, _) in &run.contexts {
        let encoded = encode_pair(&DialoguePair::new(context.clone(), vec![]), &run.vocab, model.config().max_clen)?;
        let record = generate_n(&model, &encoded.context, f.n_responses, &mut rng)?;
        let ctx = context.join(" ");
        for r in &record.responses {
            lines.push_str(&format!("{ctx}\t{}\n", run.vocab.decode(r).join(" ")));
        }
    }
    let out = f.out.clone().unwrap_or_else(|| dir.join(GENERATIONS));
    write_file(&out, &lines)?;
    manifest.artifact(&out);
    manifest.write(Some(&file_manifest_path(&out)))?;
    println!("contexts: {}", run.contexts.len());
    println!("responses: {}", run.contexts.len() * f.n_responses);
    Ok(())
}

/// `context \t response` lines; the response may be empty.
fn read_generations(text: &str) -> CliResult<HashMap<Vec<String>, Vec<Vec<String>>>> {
    let mut out: HashMap<Vec<String>, Vec<Vec<String>>> = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (c, r) = line
            .split_once('\t')
            .ok_or_else(|| segcvae::Error::Format(format!("generations line {}: missing TAB", no + 1)))?;
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        out.entry(words(c)).or_default().push(words(r));
    }
    Ok(out)
}

fn evaluate_run(f: &Flags) -> CliResult<()> {
    let dir = f.input()?;
    let mut manifest = RunManifest::new("evaluate");
    let run = open_run(dir, &mut manifest)?;
    let gen_path = dir.join(GENERATIONS);
    let mut generated = read_generations(&manifest.read_input_text(&gen_path)?)?;
    let items: Vec<EvalItem> = run
        .contexts
        .into_iter()
        .filter_map(|(context, references)| {
            generated.remove(&context).map(|g| EvalItem {
                context,
                generated: g,
                references,
            })
        })
        .collect();
    let report = evaluate(&items, &run.vocab)?;
    let text = report.to_text();
    print!("{text}");
    std::io::stdout().flush().ok();
    match &f.out {
        Some(out) => {
            write_file(out, &text)?;
            manifest.artifact(out);
            manifest.write(Some(&file_manifest_path(out)))
        }
        None => manifest.write(None),
    }
}

fn gradcheck(f: &Flags) -> CliResult<()> {
    let seed = f.seed.unwrap_or(0);
    let mut manifest = RunManifest::new("gradcheck");
    manifest.seed = Some(seed);
    let report = run_gradient_suite(GRADCHECK_CONFIGS, seed)?;
    let text = report.to_text();
    print!("{text}");
    match &f.out {
        Some(out) => {
            write_file(out, &text)?;
            manifest.artifact(out);
            manifest.write(Some(&file_manifest_path(out)))?;
        }
        None => manifest.write(None)?,
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} gradient checks failed",
            report.failures().len()
        )))
    }
}
