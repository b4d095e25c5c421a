//! Acceptance gate: one line per criterion, non-zero exit on any failure.
//!
//! Criterion 8 needs the SemEval-2016 English restaurant files; point
//! `XABSA_SEMEVAL_TRAIN` and `XABSA_SEMEVAL_TEST` at the train and gold test
//! XML to run it.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xabsa_core::decode::{AdversarialScorer, PositionalScorer};
use xabsa_core::evalkit::{aggregate_runs, micro_scores, AspectMatch, SentenceTuples};
use xabsa_core::ingest::write_jsonl;
use xabsa_core::vocab::EOS;
use xabsa_core::{
    greedy_decode, linearize, parse_target, unconstrained_greedy_decode, AspectTerm, Category, ContentMode, Corpus,
    LabelCatalog, Marker, Polarity, SentimentTuple, SessionBuilder, Split, Task, TaskTuple, Termination, Vocab,
};

const F1_TOL: f64 = 1e-9;
const CI_TOL: f64 = 1e-3;
/// Two-sided 95% Student-t half-width of 1..=5, from an independent
/// statistics package.
const CI_ORACLE: f64 = 1.963_243_161_477_560_7;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn xabsa(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_xabsa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "xabsa {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

const WORKED_XML: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<Reviews><Review rid="r1"><sentences>
<sentence id="r1:0"><text>Delicious tea but pricey soup</text><Opinions>
<Opinion target="tea" category="DRINKS#QUALITY" polarity="positive" from="10" to="13"/>
<Opinion target="soup" category="FOOD#PRICES" polarity="negative" from="25" to="29"/>
</Opinions></sentence>
</sentences></Review></Reviews>
"#;

fn worked_example() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let xml = dir.path().join("worked.xml");
    let corpus = dir.path().join("worked.jsonl");
    std::fs::write(&xml, WORKED_XML).unwrap();
    let run = || -> Result<serde_json::Value, String> {
        xabsa(&[
            "ingest",
            "--xml",
            path_str(&xml),
            "--lang",
            "en",
            "-o",
            path_str(&corpus),
        ])?;
        let out = xabsa(&["pairs", "--corpus", path_str(&corpus), "--task", "tasd"])?;
        let text = String::from_utf8(out).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != 1 {
            return Err(format!("expected one pair, got {}", lines.len()));
        }
        serde_json::from_str(lines[0]).map_err(|e| e.to_string())
    };
    let pair = match run() {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e),
    };
    let input = "Delicious tea but pricey soup | [A] [C] [P]";
    let target = "[A] tea [C] drinks quality [P] great [;] [A] soup [C] food prices [P] bad";
    check(
        pair["input"] == input && pair["target"] == target,
        format!("input {} target {}", pair["input"], pair["target"]),
    )
}

fn state_table() -> Outcome {
    let catalog = LabelCatalog::restaurant();
    let mut vocab = Vocab::reference();
    let session = SessionBuilder::new(&catalog)
        .build(common::STATE_TABLE_SENTENCE, Task::Tasd, &mut vocab)
        .unwrap();
    let rows = common::state_table_rows();
    let prefixes: usize = rows.iter().map(|r| r.prefixes.len()).sum();
    let bad = common::state_table_mismatches(&session, &vocab);
    let eos_rows: Vec<&str> = rows
        .iter()
        .filter(|r| r.candidates.contains(EOS))
        .map(|r| r.generated)
        .collect();
    check(
        rows.len() == 13 && bad.is_empty() && eos_rows == ["... [P] ..."],
        format!(
            "{} rows, {prefixes} prefixes, {} mismatches {:?}",
            rows.len(),
            bad.len(),
            bad.first()
        ),
    )
}

fn equivalence() -> Outcome {
    let mut reachable = 0;
    let mut checks = 0;
    let mut notes = Vec::new();
    let mut runs: Vec<(Task, ContentMode, usize)> = Task::ALL.iter().map(|&t| (t, ContentMode::Bag, 12)).collect();
    runs.push((Task::Tasd, ContentMode::Trie, 16));
    for (task, mode, max_len) in runs {
        let exhaustive = if max_len == 12 { 4 } else { 0 };
        let eq = common::mini_equivalence(task, mode, false, max_len, exhaustive, 200);
        reachable += eq.reachable;
        checks += eq.acceptor_checks;
        if eq.reachable != eq.expanded || !eq.mismatches.is_empty() {
            notes.push(format!(
                "{} {mode:?}: {} vs {} {:?}",
                task.name(),
                eq.reachable,
                eq.expanded,
                eq.mismatches
            ));
        }
    }
    check(
        notes.is_empty(),
        format!("{reachable} reachable sequences equal the grammar expansion, {checks} acceptor checks; {notes:?}"),
    )
}

fn dedup(tuples: &[TaskTuple]) -> Vec<TaskTuple> {
    let mut out: Vec<TaskTuple> = Vec::new();
    for t in tuples {
        if !out.contains(t) {
            out.push(t.clone());
        }
    }
    out
}

fn round_trip() -> Outcome {
    let catalog = LabelCatalog::restaurant();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut cases = 0;
    for i in 0..1000 {
        let sentence = common::random_sentence(&mut rng, format!("s{i}"), &catalog);
        for task in Task::ALL {
            let mut raw: Vec<TaskTuple> = sentence.tuples.iter().map(|t| TaskTuple::project(t, task)).collect();
            if rng.gen_bool(0.3) {
                raw.push(raw.choose(&mut rng).unwrap().clone());
            }
            let expected = dedup(&raw);
            let parsed = parse_target(&linearize(&raw, task, &catalog), task, &catalog);
            let d = &parsed.diagnostics;
            let clean = d.dropped_fragments == 0
                && d.unknown_polarity_words == 0
                && d.noncatalog_categories == 0
                && d.duplicate_tuples_removed == raw.len() - expected.len();
            if parsed.tuples != expected || !clean {
                failures.push(format!("{} on {:?}", task.name(), sentence.text));
            }
            cases += 1;
        }
    }
    check(
        cases == 6000 && failures.is_empty(),
        format!("{cases} cases, {} failures {:?}", failures.len(), failures.first()),
    )
}

fn adversarial_validity() -> Outcome {
    let catalog = LabelCatalog::restaurant();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut collected, mut attempts, mut aspect_tokens) = (0, 0, 0);
    let mut failures = Vec::new();
    while collected < 500 && attempts < 5000 {
        let task = Task::ALL[attempts % 6];
        let seed = attempts as u64;
        attempts += 1;
        let text = common::random_sentence_text(&mut rng);
        let mut vocab = Vocab::reference();
        let session = SessionBuilder::new(&catalog).build(&text, task, &mut vocab).unwrap();
        let input = vocab.encode(&text);
        let scorer = AdversarialScorer {
            seed,
            vocab_size: vocab.len(),
            session: &session,
        };
        let out = greedy_decode(&scorer, &input, &session).unwrap();
        if out.terminated_by != Termination::Eos {
            continue;
        }
        collected += 1;
        let specials = *session.specials();
        aspect_tokens += common::aspect_tokens(&out.tokens, &specials).len();
        let parsed = parse_target(&vocab.decode(&out.tokens), task, &catalog);
        let leaked = common::leaked_tokens(&out.tokens, &specials, &text, &vocab);
        if parsed.diagnostics.dropped_fragments != 0 || !leaked.is_empty() {
            failures.push(format!(
                "{}: {} leaked {leaked:?}",
                task.name(),
                vocab.decode(&out.tokens)
            ));
        }
    }
    check(
        collected == 500 && failures.is_empty(),
        format!(
            "{collected} eos-terminated of {attempts} decodes, {aspect_tokens} aspect tokens, {} failures {:?}",
            failures.len(),
            failures.first()
        ),
    )
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize, catalog: &LabelCatalog) -> Corpus {
    let sentences = (0..n)
        .map(|i| common::random_sentence(rng, format!("syn{i}"), catalog))
        .collect();
    Corpus::new(sentences, Split::Train, "en")
}

fn overfit() -> Outcome {
    let catalog = LabelCatalog::restaurant();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    std::fs::write(p("corpus.jsonl"), write_jsonl(&random_corpus(&mut rng, 20, &catalog))).unwrap();
    let run = || -> Result<Vec<(Task, f64, usize)>, String> {
        xabsa(&[
            "pairs",
            "--corpus",
            path_str(&p("corpus.jsonl")),
            "--task",
            "all",
            "-o",
            path_str(&p("pairs.jsonl")),
        ])?;
        xabsa(&[
            "decode",
            "--pairs",
            path_str(&p("pairs.jsonl")),
            "--scorer",
            "tabular",
            "--constrained",
            "-o",
            path_str(&p("gen.jsonl")),
        ])?;
        xabsa(&[
            "parse",
            "--generations",
            path_str(&p("gen.jsonl")),
            "-o",
            path_str(&p("pred.jsonl")),
        ])?;
        let mut scores = Vec::new();
        for task in Task::ALL {
            let out = xabsa(&[
                "eval",
                "--gold",
                path_str(&p("corpus.jsonl")),
                "--pred",
                path_str(&p("pred.jsonl")),
                "--task",
                task.name(),
            ])?;
            let report: serde_json::Value = serde_json::from_slice(&out).map_err(|e| e.to_string())?;
            let f1 = report["f1"].as_f64().ok_or("no f1")?;
            scores.push((task, f1, report["gold_count"].as_u64().unwrap_or(0) as usize));
        }
        Ok(scores)
    };
    match run() {
        Err(e) => Outcome::Fail(e),
        Ok(scores) => {
            let shown: Vec<String> = scores
                .iter()
                .map(|(t, f1, g)| format!("{}={f1} ({g} gold)", t.name()))
                .collect();
            check(
                scores.iter().all(|&(_, f1, g)| f1 == 1.0 && g > 0),
                format!("20 pairs per task: {}", shown.join(" ")),
            )
        }
    }
}

fn tuple(aspect: &str, category: &str, polarity: Polarity) -> TaskTuple {
    TaskTuple {
        aspect: Some(AspectTerm::explicit(aspect).unwrap()),
        category: Some(category.parse::<Category>().unwrap()),
        polarity: Some(polarity),
    }
}

fn metric_arithmetic() -> Outcome {
    use Polarity::*;
    let gold: Vec<SentenceTuples> = vec![
        (
            "a".into(),
            vec![
                tuple("tea", "DRINKS#QUALITY", Positive),
                tuple("soup", "FOOD#PRICES", Negative),
            ],
        ),
        (
            "b".into(),
            vec![
                tuple("staff", "SERVICE#GENERAL", Neutral),
                tuple("wine", "DRINKS#PRICES", Negative),
            ],
        ),
    ];
    let pred: Vec<SentenceTuples> = vec![
        (
            "a".into(),
            vec![
                tuple("tea", "DRINKS#QUALITY", Positive),
                tuple("soup", "FOOD#PRICES", Positive),
            ],
        ),
        ("b".into(), vec![tuple("staff", "SERVICE#GENERAL", Neutral)]),
    ];
    let report = micro_scores(&pred, &gold, AspectMatch::Exact, false).unwrap();
    let agg = aggregate_runs(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let ok = (report.tp, report.pred_count, report.gold_count) == (2, 3, 4)
        && (report.f1 - 4.0 / 7.0).abs() < F1_TOL
        && (agg.ci_halfwidth - CI_ORACLE).abs() < CI_TOL
        && (agg.ci_halfwidth - 1.963).abs() < CI_TOL;
    check(
        ok,
        format!(
            "tp/pred/gold {}/{}/{} f1 {:.12}, CI halfwidth {:.6}",
            report.tp, report.pred_count, report.gold_count, report.f1, agg.ci_halfwidth
        ),
    )
}

fn semeval_stats() -> Outcome {
    let (Ok(train), Ok(test)) = (
        std::env::var("XABSA_SEMEVAL_TRAIN"),
        std::env::var("XABSA_SEMEVAL_TEST"),
    ) else {
        return Outcome::Skip("XABSA_SEMEVAL_TRAIN / XABSA_SEMEVAL_TEST not set".into());
    };
    let stats = |args: &[&str]| -> Result<serde_json::Value, String> {
        serde_json::from_slice(&xabsa(args)?).map_err(|e| e.to_string())
    };
    let (test_stats, split) = match (stats(&["stats", &test]), stats(&["stats", &train, "--split-dev"])) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let got = (
        test_stats["sentences"].as_u64(),
        test_stats["tuples"].as_u64(),
        test_stats["null_aspects"].as_u64(),
        split["train"]["sentences"].as_u64(),
        split["dev"]["sentences"].as_u64(),
    );
    check(
        got == (Some(676), Some(859), Some(209), Some(1800), Some(200)),
        format!(
            "test {}/{}/{} sentences/tuples/NULL, split {}/{} sentences, dev tuples {} (not asserted)",
            test_stats["sentences"],
            test_stats["tuples"],
            test_stats["null_aspects"],
            split["train"]["sentences"],
            split["dev"]["sentences"],
            split["dev"]["tuples"]
        ),
    )
}

/// Words a source-language model might copy into a target-language output.
const FOREIGN: [&str; 6] = ["té", "sopa", "camarero", "precio", "comida", "vino"];

fn constrained_contrast() -> Outcome {
    let catalog = LabelCatalog::restaurant();
    let categories: Vec<&Category> = catalog.categories.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tasks: Vec<Task> = Task::ALL.into_iter().filter(|t| t.has(Marker::A)).collect();
    let (mut unconstrained_leaks, mut constrained_leaks) = (0, 0);
    for case in 0..100 {
        let task = tasks[case % tasks.len()];
        let text = common::random_sentence_text(&mut rng);
        let mut vocab = Vocab::reference();
        let session = SessionBuilder::new(&catalog).build(&text, task, &mut vocab).unwrap();
        let foreign = SentimentTuple::new(
            AspectTerm::explicit(*FOREIGN.choose(&mut rng).unwrap()).unwrap(),
            (*categories.choose(&mut rng).unwrap()).clone(),
            *Polarity::ALL.choose(&mut rng).unwrap(),
        );
        let target = linearize(&[TaskTuple::project(&foreign, task)], task, &catalog);
        let input = vocab.encode(&text);
        let mut memorized = vocab.encode(&target);
        memorized.push(session.specials().eos);
        let mut scorer = PositionalScorer::new(vocab.len());
        scorer.memorize(input.clone(), memorized);

        let specials = *session.specials();
        let free = unconstrained_greedy_decode(&scorer, &input, specials.eos, session.max_len());
        if !common::leaked_tokens(&free.tokens, &specials, &text, &vocab).is_empty() {
            unconstrained_leaks += 1;
        }
        let masked = greedy_decode(&scorer, &input, &session).unwrap();
        if !common::leaked_tokens(&masked.tokens, &specials, &text, &vocab).is_empty() {
            constrained_leaks += 1;
        }
    }
    check(
        unconstrained_leaks >= 90 && constrained_leaks == 0,
        format!("out-of-sentence aspect tokens in {unconstrained_leaks}/100 unconstrained, {constrained_leaks}/100 constrained"),
    )
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "worked example pair",
            budget: Some(Duration::from_secs(1)),
            run: worked_example,
        },
        Criterion {
            id: 2,
            name: "state-class table",
            budget: Some(Duration::from_secs(1)),
            run: state_table,
        },
        Criterion {
            id: 3,
            name: "generator/acceptor equivalence",
            budget: Some(Duration::from_secs(10)),
            run: equivalence,
        },
        Criterion {
            id: 4,
            name: "linearize/parse round trip",
            budget: Some(Duration::from_secs(10)),
            run: round_trip,
        },
        Criterion {
            id: 5,
            name: "adversarial validity",
            budget: Some(Duration::from_secs(30)),
            run: adversarial_validity,
        },
        Criterion {
            id: 6,
            name: "overfit end-to-end",
            budget: None,
            run: overfit,
        },
        Criterion {
            id: 7,
            name: "metric arithmetic",
            budget: None,
            run: metric_arithmetic,
        },
        Criterion {
            id: 8,
            name: "SemEval-2016 statistics",
            budget: None,
            run: semeval_stats,
        },
        Criterion {
            id: 9,
            name: "constrained vs unconstrained",
            budget: None,
            run: constrained_contrast,
        },
    ];
    let mut failed = 0;
    for c in criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Outcome::Pass(detail), Some(budget)) = (&outcome, c.budget) {
            if elapsed > budget {
                outcome = Outcome::Fail(format!("{detail}; took {elapsed:.2?}, budget {budget:?}"));
            }
        }
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {}. {} ({elapsed:.2?}): {detail}", c.id, c.name);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
