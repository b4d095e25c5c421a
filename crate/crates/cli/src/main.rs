use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xabsa_core::{ContentMode, Split};

mod commands;
mod io;

use io::CliError;

#[derive(Parser, Debug)]
#[command(name = "xabsa", version, about = "Cross-lingual aspect-based sentiment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a SemEval-style XML file to sentence JSONL.
    Ingest(IngestArgs),
    /// Corpus counts: sentences, tuples, categories, polarities, NULL aspects.
    Stats(StatsArgs),
    /// Build input/target pairs for one or more tasks.
    Pairs(PairsArgs),
    /// Greedy decoding with a mock scorer.
    Decode(DecodeArgs),
    /// Parse raw generations into tuples.
    Parse(ParseArgs),
    /// Score predictions against gold.
    Eval(EvalArgs),
    /// Emit LLM prompts.
    Prompt(PromptArgs),
    /// Send prompts to a chat endpoint or replay recorded responses.
    Llm(LlmArgs),
    /// Run the mask server over stdio or TCP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CatalogArg {
    /// Category inventory, one ENTITY#ATTRIBUTE per line. Defaults to the
    /// twelve restaurant categories.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    xml: PathBuf,
    /// Language code stored on every sentence.
    #[arg(long)]
    lang: String,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Skip opinions labelled "conflict" instead of failing.
    #[arg(long)]
    drop_conflict: bool,
    /// Also split 9:1 and write every tenth sentence here.
    #[arg(long)]
    dev_out: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Sentence JSONL or review XML (detected from the first byte).
    input: PathBuf,
    /// Language for XML input.
    #[arg(long, default_value = "en")]
    lang: String,
    #[arg(long)]
    drop_conflict: bool,
    /// Report the 9:1 train/dev split instead of the whole file.
    #[arg(long)]
    split_dev: bool,
}

#[derive(Args, Debug)]
struct PairsArgs {
    /// Sentence JSONL.
    #[arg(long)]
    corpus: PathBuf,
    /// Task name, comma-separated list, or `all`.
    #[arg(long, alias = "tasks", default_value = "tasd")]
    task: String,
    /// Emit opinion-free sentences with an empty target.
    #[arg(long)]
    include_empty: bool,
    #[command(flatten)]
    catalog: CatalogArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ScorerKind {
    Seeded,
    Adversarial,
    Tabular,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Bag,
    Trie,
}

impl From<ModeArg> for ContentMode {
    fn from(m: ModeArg) -> ContentMode {
        match m {
            ModeArg::Bag => ContentMode::Bag,
            ModeArg::Trie => ContentMode::Trie,
        }
    }
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Pair JSONL from `pairs`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum)]
    scorer: ScorerKind,
    /// Mask with the constraint automaton (the default).
    #[arg(long, conflicts_with = "unconstrained")]
    constrained: bool,
    /// Plain greedy decoding over the whole vocabulary.
    #[arg(long)]
    unconstrained: bool,
    #[arg(long, value_enum, default_value = "bag")]
    content_mode: ModeArg,
    /// Admit an empty output.
    #[arg(long)]
    allow_empty: bool,
    #[arg(long, default_value_t = xabsa_core::constrain::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    catalog: CatalogArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Generation JSONL from `decode` or `llm`.
    #[arg(long)]
    generations: PathBuf,
    #[command(flatten)]
    catalog: CatalogArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FormatArg {
    Json,
    Csv,
    Md,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Gold sentence JSONL.
    #[arg(long)]
    gold: PathBuf,
    /// Prediction JSONL from `parse`, or a sentence file; repeat with `--runs`.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Treat the prediction files as independent runs and report a 95%
    /// confidence interval.
    #[arg(long)]
    runs: bool,
    #[arg(long)]
    task: String,
    /// Compare aspect terms case-insensitively.
    #[arg(long, alias = "case-normalize")]
    lowercase: bool,
    /// Score gold sentences without predictions as empty predictions.
    #[arg(long)]
    allow_missing: bool,
    /// Include per-sentence counts (JSON output only).
    #[arg(long)]
    per_sentence: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Training language, for report columns.
    #[arg(long, default_value = "en")]
    source: String,
    /// Evaluation language, for report columns.
    #[arg(long, default_value = "en")]
    target: String,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct PromptArgs {
    /// Sentences to build prompts for (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "tasd")]
    task: String,
    /// Number of demonstrations, taken from `--train` in file order.
    #[arg(long, default_value_t = 0)]
    shots: usize,
    /// Training sentences (JSONL); required when `--shots` is above zero.
    #[arg(long)]
    train: Option<PathBuf>,
    #[command(flatten)]
    catalog: CatalogArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct LlmArgs {
    /// Prompt JSONL from `prompt`.
    #[arg(long)]
    prompts: PathBuf,
    /// Answer from recorded responses only.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the endpoint and record responses here.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    /// Maximum concurrent requests.
    #[arg(long, default_value_t = 4)]
    in_flight: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Listen on this address instead of stdio, e.g. 127.0.0.1:7878.
    #[arg(long)]
    tcp: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Stats(a) => commands::stats(a),
        Command::Pairs(a) => commands::pairs(a),
        Command::Decode(a) => commands::decode(a),
        Command::Parse(a) => commands::parse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Prompt(a) => commands::prompt(a),
        Command::Llm(a) => commands::llm(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            io::report_error(&CliError::Usage(e.render().to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            io::report_error(&e);
            ExitCode::FAILURE
        }
    }
}
