//! The `treegram` command line: subcommands wiring the library into
//! reproducible pipelines.
//!
//! Every option can also come from a `--config` file of `key=value` lines
//! (keys are the long flag names without dashes); flags win over the file.
//! Exit status is 0 on success, 2 for bad input and 1 for internal errors.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::category::Category;
use crate::chart::{ChartGrammar, Weighting};
use crate::compactor::{compact, linguistic_compact, stages_csv, staged_compact, threshold_with_report, OrderPolicy};
use crate::evaluator::{evaluate_corpus, format_table, EvalReport};
use crate::grammar::{extract_grammar, growth_curve, read_grammar, write_grammar, Grammar, GrammarBuilder};
use crate::synth::{default_base_grammar, generate, sidecar_json, GeneratorConfig};
use crate::treebank::{normalize, read_treebank, write_treebank, Tree};

/// Bad user input; reported with exit status 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(message: impl Into<String>) -> anyhow::Error {
    InputError(message.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "treegram", version, about = "Treebank grammar extraction, compaction and evaluation")]
pub struct Cli {
    /// Flat key=value file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random choice; recorded in output metadata.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also print the main JSON report to stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read treebanks and write the counted grammar plus its growth curve.
    Extract(ExtractArgs),
    /// Write only the rule-growth curve of the treebanks.
    Growth(ExtractArgs),
    /// Remove rules the rest of the grammar can parse.
    Compact(CompactArgs),
    /// Drop rules seen fewer than --min-count times.
    Threshold(ThresholdArgs),
    /// Extract and compact cumulative chunks of the input files.
    Stage(StageArgs),
    /// Parse gold sentences with one or more grammars and score them.
    Eval(EvalArgs),
    /// Generate a synthetic treebank from a base grammar.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Token interval between growth-curve samples.
    #[arg(long)]
    sample_every: Option<usize>,
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct CompactArgs {
    /// naive | linguistic
    #[arg(long)]
    mode: Option<String>,
    /// Linguistic ratio; a rule goes when some parse beats ratio * p(rule).
    #[arg(long)]
    ratio: Option<f64>,
    /// flat-first | input | random | random:<seed>
    #[arg(long)]
    order: Option<String>,
    grammar: PathBuf,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    #[arg(long)]
    min_count: Option<u64>,
    grammar: PathBuf,
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Number of chunks, by file count; the remainder joins the last chunk.
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long)]
    order: Option<String>,
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Grammar to evaluate; repeat for side-by-side columns.
    #[arg(long = "grammar", required = true)]
    grammars: Vec<PathBuf>,
    /// Show only labelled scores.
    #[arg(long, conflicts_with = "unlabelled")]
    labelled: bool,
    /// Show only unlabelled scores.
    #[arg(long)]
    unlabelled: bool,
    /// Gold treebank files.
    #[arg(required = true)]
    gold: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Base grammar file; the bundled 50-rule grammar when absent.
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Probability of splicing each non-root phrase into its parent.
    #[arg(long)]
    flatten: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    sentences: Option<usize>,
}

/// Parsed `key=value` config file.
#[derive(Debug, Default)]
struct Config {
    path: Option<PathBuf>,
    values: BTreeMap<String, (usize, String)>,
}

impl Config {
    fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| input_error(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            let key = key.trim().replace('_', "-");
            values.insert(key, (i + 1, value.trim().to_string()));
        }
        Ok(Config {
            path: Some(path.to_path_buf()),
            values,
        })
    }

    /// The flag value if given, else the parsed config value.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse().map(Some).map_err(|e| {
                let path = self.path.as_deref().unwrap_or(Path::new("config"));
                input_error(format!("{}:{line}: bad value for {key}: {e}", path.display()))
            }),
        }
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    fn prefixed(&self, prefix: &str) -> impl Iterator<Item = (&str, usize, &str)> + '_ {
        let prefix = prefix.to_string();
        self.values
            .iter()
            .filter_map(move |(k, (line, v))| k.strip_prefix(&prefix).map(|rest| (rest, *line, v.as_str())))
    }
}

/// Settings shared by all subcommands.
#[derive(Clone)]
struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    json: bool,
    inputs: Vec<PathBuf>,
}

impl Run {
    /// Writes one output file, refusing to clobber any input.
    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        if let Ok(target) = path.canonicalize() {
            for input in &self.inputs {
                if input.canonicalize().is_ok_and(|i| i == target) {
                    return Err(input_error(format!("refusing to overwrite input {}", input.display())));
                }
            }
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn header(&self) -> String {
        format!("# treegram {} seed={}\n", self.command, self.seed)
    }

    /// JSON object with `command` and `seed` ahead of the payload fields.
    fn json_doc(&self, payload: impl Serialize) -> Result<String> {
        let mut doc = serde_json::Map::new();
        doc.insert("command".into(), json!(self.command));
        doc.insert("seed".into(), json!(self.seed));
        match serde_json::to_value(payload)? {
            Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("data".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
        text.push('\n');
        Ok(text)
    }

    fn emit_json(&self, text: &str) {
        if self.json {
            print!("{text}");
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("treegram: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
        Err(_) => ExitCode::from(1),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let mut ctx = Run {
        command: "",
        out: config.pick(cli.out.clone(), "out")?.unwrap_or_else(|| PathBuf::from(".")),
        seed: config.pick(cli.seed, "seed")?.unwrap_or(0),
        json: config.flag(cli.json, "json")?,
        inputs: cli.config.iter().cloned().collect(),
    };
    match cli.command {
        Command::Extract(args) => {
            ctx.command = "extract";
            cmd_extract(&ctx, &config, args, true)
        }
        Command::Growth(args) => {
            ctx.command = "growth";
            cmd_extract(&ctx, &config, args, false)
        }
        Command::Compact(args) => {
            ctx.command = "compact";
            cmd_compact(&ctx, &config, args)
        }
        Command::Threshold(args) => {
            ctx.command = "threshold";
            cmd_threshold(&ctx, &config, args)
        }
        Command::Stage(args) => {
            ctx.command = "stage";
            cmd_stage(&ctx, &config, args)
        }
        Command::Eval(args) => {
            ctx.command = "eval";
            cmd_eval(&ctx, &config, args)
        }
        Command::Synth(args) => {
            ctx.command = "synth";
            cmd_synth(&ctx, &config, args)
        }
    }
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// Checks every input is readable before any work starts.
fn validate_inputs(ctx: &mut Run, paths: &[PathBuf]) -> Result<()> {
    for path in paths {
        fs::File::open(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        ctx.inputs.push(path.clone());
    }
    Ok(())
}

/// Reads and normalizes one treebank file; trees that normalize away are
/// dropped.
fn read_trees(path: &Path) -> Result<Vec<Tree>> {
    let text = read_input(path)?;
    let raw = read_treebank(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(raw.iter().filter_map(normalize).collect())
}

fn read_grammar_file(path: &Path) -> Result<Grammar> {
    let text = read_input(path)?;
    read_grammar(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn parse_order(raw: Option<String>, seed: u64) -> Result<OrderPolicy> {
    match raw.as_deref() {
        None => Ok(OrderPolicy::default()),
        Some("random") => Ok(OrderPolicy::Random { seed }),
        Some(s) => s.parse().map_err(input_error),
    }
}

fn log_counts(files: usize, trees: usize, tokens: usize) {
    eprintln!("read {trees} trees, {tokens} tokens from {files} file(s)");
}

fn cmd_extract(ctx: &Run, config: &Config, args: ExtractArgs, write_rules: bool) -> Result<()> {
    let mut ctx = ctx.clone();
    validate_inputs(&mut ctx, &args.files)?;
    let sample_every = config.pick(args.sample_every, "sample-every")?.unwrap_or(1000);
    if sample_every == 0 {
        return Err(input_error("--sample-every must be at least 1"));
    }
    let mut trees = Vec::new();
    for path in &args.files {
        trees.extend(read_trees(path)?);
    }
    let mut builder = GrammarBuilder::new();
    for tree in &trees {
        builder.add_tree(tree).map_err(|e| input_error(e.to_string()))?;
    }
    log_counts(args.files.len(), builder.trees(), builder.tokens());
    let curve = growth_curve(&trees, sample_every);
    if write_rules {
        let grammar = builder.finish();
        ctx.write("grammar.txt", &(ctx.header() + &write_grammar(&grammar)))?;
        eprintln!("{} distinct rules", grammar.len());
    }
    ctx.write("growth.csv", &curve.to_csv())?;
    if ctx.json {
        let doc = ctx.json_doc(json!({ "sample_every": sample_every, "growth": curve }))?;
        ctx.write("growth.json", &doc)?;
        ctx.emit_json(&doc);
    }
    Ok(())
}

fn cmd_compact(ctx: &Run, config: &Config, args: CompactArgs) -> Result<()> {
    let mut ctx = ctx.clone();
    validate_inputs(&mut ctx, std::slice::from_ref(&args.grammar))?;
    let mode = config.pick(args.mode, "mode")?.unwrap_or_else(|| "naive".into());
    let order = parse_order(config.pick(args.order, "order")?, ctx.seed)?;
    let grammar = read_grammar_file(&args.grammar)?;
    let (compacted, report) = match mode.as_str() {
        "naive" => compact(&grammar, order),
        "linguistic" => {
            let ratio = config.pick(args.ratio, "ratio")?.unwrap_or(1.0);
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(input_error(format!("--ratio must be positive, got {ratio}")));
            }
            linguistic_compact(&grammar, ratio, order)
                .map_err(|e| input_error(format!("{}: {e}", args.grammar.display())))?
        }
        other => return Err(input_error(format!("unknown mode {other:?} (naive|linguistic)"))),
    };
    eprintln!(
        "{} -> {} rules ({:.1}% reduction)",
        report.initial_size, report.final_size, report.reduction_percent
    );
    ctx.write("compacted.txt", &(ctx.header() + &write_grammar(&compacted)))?;
    let doc = ctx.json_doc(&report)?;
    ctx.write("compact.json", &doc)?;
    ctx.emit_json(&doc);
    Ok(())
}

fn cmd_threshold(ctx: &Run, config: &Config, args: ThresholdArgs) -> Result<()> {
    let mut ctx = ctx.clone();
    validate_inputs(&mut ctx, std::slice::from_ref(&args.grammar))?;
    let min_count = config.pick(args.min_count, "min-count")?.unwrap_or(2);
    let grammar = read_grammar_file(&args.grammar)?;
    let (kept, report) = threshold_with_report(&grammar, min_count);
    eprintln!("{} -> {} rules", report.initial_size, report.final_size);
    ctx.write("thresholded.txt", &(ctx.header() + &write_grammar(&kept)))?;
    let doc = ctx.json_doc(json!({ "min_count": min_count, "report": report }))?;
    ctx.write("threshold.json", &doc)?;
    ctx.emit_json(&doc);
    Ok(())
}

/// Splits `n` items into `chunks` runs of `n / chunks`, the remainder going
/// to the last run.
pub fn chunk_bounds(n: usize, chunks: usize) -> Option<Vec<std::ops::Range<usize>>> {
    if chunks == 0 || chunks > n {
        return None;
    }
    let size = n / chunks;
    Some(
        (0..chunks)
            .map(|i| {
                let end = if i + 1 == chunks { n } else { (i + 1) * size };
                i * size..end
            })
            .collect(),
    )
}

fn cmd_stage(ctx: &Run, config: &Config, args: StageArgs) -> Result<()> {
    let mut ctx = ctx.clone();
    let chunks = config.pick(args.chunks, "chunks")?.unwrap_or(10);
    let bounds = chunk_bounds(args.files.len(), chunks).ok_or_else(|| {
        input_error(format!(
            "--chunks must be between 1 and the number of files ({}), got {chunks}",
            args.files.len()
        ))
    })?;
    validate_inputs(&mut ctx, &args.files)?;
    let order = parse_order(config.pick(args.order, "order")?, ctx.seed)?;
    let mut grammars = Vec::with_capacity(bounds.len());
    let (mut trees, mut tokens) = (0, 0);
    for range in bounds {
        let mut chunk = Vec::new();
        for path in &args.files[range] {
            chunk.extend(read_trees(path)?);
        }
        trees += chunk.len();
        tokens += chunk.iter().map(Tree::num_tokens).sum::<usize>();
        grammars.push(extract_grammar(&chunk).map_err(|e| input_error(e.to_string()))?);
    }
    log_counts(args.files.len(), trees, tokens);
    let rows = staged_compact(&grammars, order);
    ctx.write("stages.csv", &stages_csv(&rows))?;
    if ctx.json {
        let doc = ctx.json_doc(json!({ "order_used": order.to_string(), "stages": rows }))?;
        ctx.write("stages.json", &doc)?;
        ctx.emit_json(&doc);
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalColumn {
    name: String,
    grammar: String,
    #[serde(flatten)]
    report: EvalReport,
}

fn cmd_eval(ctx: &Run, config: &Config, args: EvalArgs) -> Result<()> {
    let mut ctx = ctx.clone();
    validate_inputs(&mut ctx, &args.grammars)?;
    validate_inputs(&mut ctx, &args.gold)?;
    let only_labelled = config.flag(args.labelled, "labelled")?;
    let only_unlabelled = config.flag(args.unlabelled, "unlabelled")?;
    if only_labelled && only_unlabelled {
        return Err(input_error("--labelled and --unlabelled are mutually exclusive"));
    }
    let mut gold = Vec::new();
    for path in &args.gold {
        gold.extend(read_trees(path)?);
    }
    log_counts(args.gold.len(), gold.len(), gold.iter().map(Tree::num_tokens).sum());

    let names = column_names(&args.grammars);
    let mut columns = Vec::new();
    for (path, name) in args.grammars.iter().zip(names) {
        let grammar = read_grammar_file(path)?;
        let chart = ChartGrammar::new(&grammar, Weighting::Probabilistic)
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let report = evaluate_corpus(&chart, grammar.len(), &gold);
        columns.push(EvalColumn {
            name,
            grammar: path.display().to_string(),
            report,
        });
    }
    let table_input: Vec<(String, EvalReport)> =
        columns.iter().map(|c| (c.name.clone(), c.report.clone())).collect();
    let table = format_table(&table_input, !only_unlabelled, !only_labelled);
    ctx.write("eval.txt", &table)?;
    let doc = ctx.json_doc(json!({ "columns": columns }))?;
    ctx.write("eval.json", &doc)?;
    if ctx.json {
        ctx.emit_json(&doc);
    } else {
        print!("{table}");
    }
    Ok(())
}

/// File stems, falling back to full paths when stems collide.
fn column_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect();
    let distinct: HashSet<&String> = stems.iter().collect();
    if distinct.len() == stems.len() {
        stems
    } else {
        paths.iter().map(|p| p.display().to_string()).collect()
    }
}

fn cmd_synth(ctx: &Run, config: &Config, args: SynthArgs) -> Result<()> {
    let mut ctx = ctx.clone();
    let base = match config.pick(args.grammar, "grammar")? {
        Some(path) => {
            validate_inputs(&mut ctx, std::slice::from_ref(&path))?;
            read_grammar_file(&path)?
        }
        None => default_base_grammar(),
    };
    let mut gen = GeneratorConfig::new(base);
    gen.seed = ctx.seed;
    if let Some(p) = config.pick(args.flatten, "flatten")? {
        gen.flatten_probability = p;
    }
    if let Some(d) = config.pick(args.max_depth, "max-depth")? {
        gen.max_depth = d;
    }
    if let Some(n) = config.pick(args.sentences, "sentences")? {
        gen.sentence_count = n;
    }
    for (cat, line, raw) in config.prefixed("flatten.") {
        let p: f64 = raw
            .parse()
            .map_err(|e| input_error(format!("config line {line}: bad value for flatten.{cat}: {e}")))?;
        gen.category_flatten.insert(Category::new(cat), p);
    }
    gen.validate().map_err(|e| input_error(e.to_string()))?;
    let corpus = generate(&gen).map_err(|e| anyhow!(e))?;
    let tokens: usize = corpus.trees.iter().map(Tree::num_tokens).sum();
    eprintln!(
        "generated {} trees, {tokens} tokens using {} base rules",
        corpus.trees.len(),
        corpus.usage.len()
    );
    ctx.write("corpus.mrg", &(ctx.header() + &write_treebank(&corpus.trees)))?;
    let mut sidecar = sidecar_json(&gen, &corpus.usage);
    sidecar.push('\n');
    ctx.write("corpus.json", &sidecar)?;
    ctx.emit_json(&sidecar);
    Ok(())
}
