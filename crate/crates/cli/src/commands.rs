use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use xabsa_core::bridge::{serve_lines, serve_tcp, SessionRegistry};
use xabsa_core::decode::{AdversarialScorer, SeededScorer, TabularScorer};
use xabsa_core::evalkit::{
    aggregate_runs, emit_report, micro_scores, AspectMatch, CellKey, ReportFormat, SentenceTuples,
};
use xabsa_core::ingest::{compute_stats, parse_semeval_xml, read_jsonl, split_train_dev, write_jsonl, XmlOptions};
use xabsa_core::llm::{build_prompt, prompt_key, EndpointConfig, FixtureStore, LlmClient, PromptSpec};
use xabsa_core::vocab::EOS;
use xabsa_core::{
    build_corpus_pairs, greedy_decode, parse_target, project_tuples, unconstrained_greedy_decode, ConstraintSession,
    Corpus, DecodeOutcome, ExamplePair, ParseDiagnostics, Scorer, SessionBuilder, Split, Task, TaskTuple, Termination,
    TokenId, Vocab,
};

use crate::io::{load_catalog, read, read_records, to_jsonl, write_output, CliError};
use crate::{
    DecodeArgs, EvalArgs, FormatArg, IngestArgs, LlmArgs, PairsArgs, ParseArgs, PromptArgs, ScorerKind, ServeArgs,
    StatsArgs,
};

/// One raw model output.
#[derive(Debug, Serialize, Deserialize)]
struct GenerationRecord {
    id: String,
    task: Task,
    #[serde(default)]
    lang: String,
    generation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminated_by: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    task: Task,
    #[serde(default)]
    lang: String,
    tuples: Vec<TaskTuple>,
    #[serde(default)]
    diagnostics: ParseDiagnostics,
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptRecord {
    id: String,
    task: Task,
    lang: String,
    prompt: String,
    key: String,
}

fn parse_task(name: &str) -> Result<Task, CliError> {
    name.parse()
        .map_err(|e: xabsa_core::model::ModelError| CliError::Usage(e.to_string()))
}

fn parse_tasks(spec: &str) -> Result<Vec<Task>, CliError> {
    if spec == "all" {
        return Ok(Task::ALL.to_vec());
    }
    let mut tasks = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let task = parse_task(name)?;
        if !tasks.contains(&task) {
            tasks.push(task);
        }
    }
    if tasks.is_empty() {
        return Err(CliError::Usage("no task given".into()));
    }
    Ok(tasks)
}

fn load_corpus(path: &Path, split: Split) -> Result<Corpus, CliError> {
    Ok(read_jsonl(&read(path)?, split)?)
}

fn json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec(value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let options = XmlOptions {
        drop_conflict: args.drop_conflict,
    };
    let corpus = parse_semeval_xml(&read(&args.xml)?, &args.lang, args.split.into(), options)?;
    match &args.dev_out {
        Some(dev_path) => {
            let (train, dev) = split_train_dev(&corpus);
            write_output(Some(dev_path), &write_jsonl(&dev))?;
            write_output(args.out.out.as_deref(), &write_jsonl(&train))
        }
        None => write_output(args.out.out.as_deref(), &write_jsonl(&corpus)),
    }
}

pub fn stats(args: StatsArgs) -> Result<(), CliError> {
    let bytes = read(&args.input)?;
    let body = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(&bytes);
    let is_xml = body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'<');
    let corpus = if is_xml {
        let options = XmlOptions {
            drop_conflict: args.drop_conflict,
        };
        parse_semeval_xml(&bytes, &args.lang, Split::Train, options)?
    } else {
        read_jsonl(&bytes, Split::Train)?
    };
    let out = if args.split_dev {
        let (train, dev) = split_train_dev(&corpus);
        serde_json::json!({"train": compute_stats(&train), "dev": compute_stats(&dev)})
    } else {
        serde_json::to_value(compute_stats(&corpus)).expect("stats serialize")
    };
    write_output(None, &json_line(&out))
}

pub fn pairs(args: PairsArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus, Split::Train)?;
    let catalog = load_catalog(args.catalog.catalog.as_deref())?;
    let tasks = parse_tasks(&args.task)?;
    let pairs = build_corpus_pairs(&corpus, &tasks, &catalog, args.include_empty);
    write_output(args.out.out.as_deref(), &to_jsonl(&pairs))
}

fn sentence_of(pair: &ExamplePair) -> Result<&str, CliError> {
    pair.input_text
        .rsplit_once(" | ")
        .map(|(text, _)| text)
        .ok_or_else(|| CliError::Usage(format!("pair `{}` has no ` | ` marker prompt", pair.source_sentence_id)))
}

fn run_decoder<S: Scorer>(
    scorer: &S,
    input: &[TokenId],
    session: &ConstraintSession,
    constrained: bool,
) -> Result<DecodeOutcome, CliError> {
    if constrained {
        Ok(greedy_decode(scorer, input, session)?)
    } else {
        Ok(unconstrained_greedy_decode(
            scorer,
            input,
            session.specials().eos,
            session.max_len(),
        ))
    }
}

pub fn decode(args: DecodeArgs) -> Result<(), CliError> {
    let pairs: Vec<ExamplePair> = read_records(&args.pairs)?;
    let catalog = load_catalog(args.catalog.catalog.as_deref())?;
    let builder = SessionBuilder::new(&catalog)
        .mode(args.content_mode.into())
        .allow_empty(args.allow_empty)
        .max_len(args.max_len);

    // Intern everything up front so every scorer sees the same vocabulary size.
    let mut vocab = Vocab::reference();
    let eos = vocab.id(EOS).expect("reference vocabulary has eos");
    let mut inputs = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        inputs.push(vocab.encode(&pair.input_text));
        let mut target = vocab.encode(&pair.target_text);
        target.push(eos);
        targets.push(target);
    }
    let sessions = pairs
        .iter()
        .map(|p| Ok(builder.build(sentence_of(p)?, p.task, &mut vocab)?))
        .collect::<Result<Vec<_>, CliError>>()?;

    let vocab_size = vocab.len();
    let mut tabular = TabularScorer::new(vocab_size, eos);
    if args.scorer == ScorerKind::Tabular {
        for (input, target) in inputs.iter().zip(&targets) {
            tabular.memorize(input.clone(), target.clone());
        }
    }
    let constrained = !args.unconstrained;
    let mut records = Vec::with_capacity(pairs.len());
    for ((pair, input), session) in pairs.iter().zip(&inputs).zip(&sessions) {
        let outcome = match args.scorer {
            ScorerKind::Seeded => {
                let scorer = SeededScorer {
                    seed: args.seed,
                    vocab_size,
                };
                run_decoder(&scorer, input, session, constrained)?
            }
            ScorerKind::Adversarial => {
                let scorer = AdversarialScorer {
                    seed: args.seed,
                    vocab_size,
                    session,
                };
                run_decoder(&scorer, input, session, constrained)?
            }
            ScorerKind::Tabular => run_decoder(&tabular, input, session, constrained)?,
        };
        records.push(GenerationRecord {
            id: pair.source_sentence_id.clone(),
            task: pair.task,
            lang: pair.language.clone(),
            generation: vocab.decode(&outcome.tokens),
            terminated_by: Some(outcome.terminated_by),
            steps: Some(outcome.steps),
        });
    }
    write_output(args.out.out.as_deref(), &to_jsonl(&records))
}

pub fn parse(args: ParseArgs) -> Result<(), CliError> {
    let generations: Vec<GenerationRecord> = read_records(&args.generations)?;
    let catalog = load_catalog(args.catalog.catalog.as_deref())?;
    let mut total = ParseDiagnostics::default();
    let mut tuples = 0;
    let records: Vec<PredictionRecord> = generations
        .into_iter()
        .map(|g| {
            let parsed = parse_target(&g.generation, g.task, &catalog);
            total.merge(&parsed.diagnostics);
            tuples += parsed.tuples.len();
            PredictionRecord {
                id: g.id,
                task: g.task,
                lang: g.lang,
                tuples: parsed.tuples,
                diagnostics: parsed.diagnostics,
            }
        })
        .collect();
    write_output(args.out.out.as_deref(), &to_jsonl(&records))?;
    if args.out.out.is_some() {
        let summary = serde_json::json!({"generations": records.len(), "tuples": tuples, "diagnostics": total});
        write_output(None, &json_line(&summary))?;
    }
    Ok(())
}

fn prediction_rows(
    path: &Path,
    task: Task,
    gold_ids: &BTreeSet<&str>,
    allow_missing: bool,
) -> Result<Vec<SentenceTuples>, CliError> {
    let mut rows: Vec<SentenceTuples> = match read_records::<PredictionRecord>(path) {
        Ok(records) => records
            .into_iter()
            .filter(|r| r.task == task)
            .map(|r| (r.id, r.tuples))
            .collect(),
        // a sentence file (gold format) is scored through the task projection
        Err(parse_err) => match read_jsonl(&read(path)?, Split::Test) {
            Ok(corpus) => corpus
                .sentences
                .into_iter()
                .map(|s| (s.id, project_tuples(&s.tuples, task)))
                .collect(),
            Err(_) => return Err(parse_err),
        },
    };
    if allow_missing {
        let present: BTreeSet<String> = rows.iter().map(|(id, _)| id.clone()).collect();
        rows.extend(
            gold_ids
                .iter()
                .filter(|id| !present.contains(**id))
                .map(|id| (id.to_string(), Vec::new())),
        );
    }
    Ok(rows)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let task = parse_task(&args.task)?;
    let gold_corpus = load_corpus(&args.gold, Split::Test)?;
    let gold: Vec<SentenceTuples> = gold_corpus
        .sentences
        .iter()
        .map(|s| (s.id.clone(), project_tuples(&s.tuples, task)))
        .collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
    let matching = if args.lowercase {
        AspectMatch::Lowercase
    } else {
        AspectMatch::Exact
    };
    if args.pred.len() > 1 && !args.runs {
        return Err(CliError::Usage("several --pred files need --runs".into()));
    }
    let mut reports = Vec::new();
    for path in &args.pred {
        let rows = prediction_rows(path, task, &gold_ids, args.allow_missing)?;
        reports.push(micro_scores(&rows, &gold, matching, args.per_sentence)?);
    }

    let out = if args.runs {
        let aggregate = aggregate_runs(&reports.iter().map(|r| r.f1).collect::<Vec<_>>())?;
        match args.format {
            FormatArg::Json => json_line(&serde_json::json!({"runs": reports, "aggregate": aggregate})),
            FormatArg::Csv | FormatArg::Md => {
                let key = CellKey {
                    task,
                    source: args.source.clone(),
                    target: args.target.clone(),
                };
                let cells = BTreeMap::from([(key, aggregate)]);
                let format = if args.format == FormatArg::Csv {
                    ReportFormat::Csv
                } else {
                    ReportFormat::Markdown
                };
                emit_report(&cells, format, matching).into_bytes()
            }
        }
    } else {
        if args.format != FormatArg::Json {
            return Err(CliError::Usage(
                "csv and md tables report run aggregates; pass --runs".into(),
            ));
        }
        json_line(&reports[0])
    };
    write_output(args.out.out.as_deref(), &out)
}

pub fn prompt(args: PromptArgs) -> Result<(), CliError> {
    let task = parse_task(&args.task)?;
    let corpus = load_corpus(&args.corpus, Split::Test)?;
    let catalog = load_catalog(args.catalog.catalog.as_deref())?;
    let spec = match (&args.train, args.shots) {
        (_, 0) => PromptSpec::zero_shot(task, corpus.language.clone()),
        (Some(train), n) => PromptSpec::from_training(task, &load_corpus(train, Split::Train)?, n, &catalog)?,
        (None, _) => return Err(CliError::Usage("--shots above zero needs --train".into())),
    };
    let records: Vec<PromptRecord> = corpus
        .sentences
        .iter()
        .map(|s| {
            let prompt = build_prompt(&spec, &s.text, &catalog);
            PromptRecord {
                id: s.id.clone(),
                task,
                lang: s.language.clone(),
                key: prompt_key(&prompt),
                prompt,
            }
        })
        .collect();
    write_output(args.out.out.as_deref(), &to_jsonl(&records))
}

pub fn llm(args: LlmArgs) -> Result<(), CliError> {
    let prompts: Vec<PromptRecord> = read_records(&args.prompts)?;
    let client = match (&args.replay, &args.record) {
        (Some(dir), _) => LlmClient::Replay(FixtureStore::new(dir)),
        (None, Some(dir)) => LlmClient::Record(EndpointConfig::from_env(&args.model)?, FixtureStore::new(dir)),
        (None, None) => LlmClient::Live(EndpointConfig::from_env(&args.model)?),
    };
    let texts: Vec<String> = prompts.iter().map(|p| p.prompt.clone()).collect();
    let responses = client.complete_all(&texts, args.in_flight);
    let mut records = Vec::with_capacity(prompts.len());
    for (p, response) in prompts.iter().zip(responses) {
        records.push(GenerationRecord {
            id: p.id.clone(),
            task: p.task,
            lang: p.lang.clone(),
            generation: response?,
            terminated_by: None,
            steps: None,
        });
    }
    write_output(args.out.out.as_deref(), &to_jsonl(&records))
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let registry = SessionRegistry::new();
    match &args.tcp {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr).map_err(CliError::Serve)?;
            serve_tcp(listener, Arc::new(registry)).map_err(CliError::Serve)
        }
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve_lines(&registry, stdin.lock(), stdout.lock()).map_err(CliError::Serve)
        }
    }
}
