//! Conversion between tuples and the bracketed marker language.
//!
//! A TASD target looks like
//! `[A] tea [C] drinks quality [P] great [;] [A] soup [C] food prices [P] bad`;
//! other tasks keep only their own markers. Inputs carry the marker prompt,
//! e.g. `Delicious tea but pricey soup | [A] [C] [P]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AspectTerm, Category, Corpus, LabelCatalog, Marker, Polarity, SentimentTuple, Task, TaskTuple};

/// Tuple separator as it appears in target text.
pub const SEPARATOR: &str = "[;]";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("unknown polarity word `{0}`")]
    UnknownPolarityWord(String),
    #[error("malformed category phrase `{0}`")]
    MalformedCategoryPhrase(String),
}

pub fn polarity_word(polarity: Polarity, catalog: &LabelCatalog) -> &str {
    catalog.polarity_word(polarity)
}

pub fn word_to_polarity(word: &str, catalog: &LabelCatalog) -> Result<Polarity, GrammarError> {
    catalog
        .polarity_for_word(word)
        .ok_or_else(|| GrammarError::UnknownPolarityWord(word.to_string()))
}

/// `FOOD#QUALITY` becomes `food quality`.
pub fn category_phrase(category: &Category) -> String {
    match category.attribute() {
        Some(attribute) => format!("{} {}", category.entity().to_lowercase(), attribute.to_lowercase()),
        None => category.entity().to_lowercase(),
    }
}

pub fn phrase_to_category(phrase: &str) -> Result<Category, GrammarError> {
    let malformed = || GrammarError::MalformedCategoryPhrase(phrase.to_string());
    let (entity, attribute) = phrase.split_once(' ').ok_or_else(malformed)?;
    Category::new(entity.to_uppercase(), attribute.to_uppercase()).map_err(|_| malformed())
}

pub fn aspect_phrase<'a>(aspect: &'a AspectTerm, catalog: &'a LabelCatalog) -> &'a str {
    match aspect {
        AspectTerm::Explicit { text, .. } => text,
        AspectTerm::Implicit => &catalog.implicit_word,
    }
}

/// The implicit word always maps back to an implicit aspect, even when the
/// review itself contains that word.
pub fn phrase_to_aspect(phrase: &str, catalog: &LabelCatalog) -> Option<AspectTerm> {
    if phrase == catalog.implicit_word {
        Some(AspectTerm::Implicit)
    } else {
        AspectTerm::explicit(phrase).ok()
    }
}

/// Project triplets onto the task's elements, keeping first occurrences.
pub fn project_tuples(triplets: &[SentimentTuple], task: Task) -> Vec<TaskTuple> {
    let mut out: Vec<TaskTuple> = Vec::new();
    for t in triplets {
        let projected = TaskTuple::project(t, task);
        if !out.contains(&projected) {
            out.push(projected);
        }
    }
    out
}

/// Marker prompt for a task, e.g. `[C] [P]`.
pub fn marker_prompt(task: Task) -> String {
    task.marker_order()
        .iter()
        .map(|m| m.tag())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn build_input(sentence_text: &str, task: Task) -> String {
    format!("{sentence_text} | {}", marker_prompt(task))
}

fn element_phrase(tuple: &TaskTuple, marker: Marker, catalog: &LabelCatalog) -> Option<String> {
    match marker {
        Marker::A => tuple.aspect.as_ref().map(|a| aspect_phrase(a, catalog).to_string()),
        Marker::C => tuple.category.as_ref().map(category_phrase),
        Marker::P => tuple.polarity.map(|p| catalog.polarity_word(p).to_string()),
    }
}

/// Render task tuples as a target sequence. Tuples must already be projected
/// for `task`; an element the task needs but the tuple lacks is skipped.
pub fn linearize(tuples: &[TaskTuple], task: Task, catalog: &LabelCatalog) -> String {
    tuples
        .iter()
        .map(|tuple| {
            task.marker_order()
                .iter()
                .filter_map(|&m| element_phrase(tuple, m, catalog).map(|p| format!("{} {}", m.tag(), p)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join(&format!(" {SEPARATOR} "))
}

/// Anomaly counts collected while parsing generated text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Structurally broken fragments: missing, extra, reordered or empty
    /// markers. Fragments lost to an unknown polarity word are counted in
    /// `unknown_polarity_words` only.
    pub dropped_fragments: usize,
    pub duplicate_tuples_removed: usize,
    pub unknown_polarity_words: usize,
    pub noncatalog_categories: usize,
}

impl ParseDiagnostics {
    pub fn is_clean(&self) -> bool {
        *self == ParseDiagnostics::default()
    }

    pub fn merge(&mut self, other: &ParseDiagnostics) {
        self.dropped_fragments += other.dropped_fragments;
        self.duplicate_tuples_removed += other.duplicate_tuples_removed;
        self.unknown_polarity_words += other.unknown_polarity_words;
        self.noncatalog_categories += other.noncatalog_categories;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTarget {
    /// Deduplicated tuples in order of first appearance.
    pub tuples: Vec<TaskTuple>,
    pub diagnostics: ParseDiagnostics,
}

fn marker_at(s: &str) -> Option<Marker> {
    Marker::ALL.into_iter().find(|m| s.starts_with(m.tag()))
}

/// Split a fragment into `(marker, content)` pairs. Content runs from the
/// marker to the next `[` and is trimmed; it must be non-empty.
fn split_fragment(fragment: &str) -> Option<Vec<(Marker, &str)>> {
    let mut rest = fragment.trim_start();
    let mut out = Vec::new();
    while !rest.is_empty() {
        let marker = marker_at(rest)?;
        rest = &rest[marker.tag().len()..];
        let end = rest.find('[').unwrap_or(rest.len());
        let content = rest[..end].trim();
        if content.is_empty() {
            return None;
        }
        out.push((marker, content));
        rest = rest[end..].trim_start();
    }
    Some(out)
}

enum FragmentOutcome {
    Tuple(TaskTuple),
    Dropped,
    UnknownPolarity,
}

fn parse_fragment(fragment: &str, task: Task, catalog: &LabelCatalog) -> FragmentOutcome {
    let Some(parts) = split_fragment(fragment) else {
        return FragmentOutcome::Dropped;
    };
    if !parts.iter().map(|(m, _)| *m).eq(task.marker_order().iter().copied()) {
        return FragmentOutcome::Dropped;
    }
    let mut tuple = TaskTuple {
        aspect: None,
        category: None,
        polarity: None,
    };
    for (marker, content) in parts {
        match marker {
            Marker::A => match phrase_to_aspect(content, catalog) {
                Some(a) => tuple.aspect = Some(a),
                None => return FragmentOutcome::Dropped,
            },
            Marker::C => match phrase_to_category(content).or_else(|_| Category::raw(content)) {
                Ok(c) => tuple.category = Some(c),
                Err(_) => return FragmentOutcome::Dropped,
            },
            Marker::P => match word_to_polarity(content, catalog) {
                Ok(p) => tuple.polarity = Some(p),
                Err(_) => return FragmentOutcome::UnknownPolarity,
            },
        }
    }
    FragmentOutcome::Tuple(tuple)
}

/// Lenient parse of generated target text. Never fails: malformed fragments
/// are dropped and counted, duplicates collapse, categories outside the
/// catalog are kept and counted.
pub fn parse_target(text: &str, task: Task, catalog: &LabelCatalog) -> ParsedTarget {
    let mut diagnostics = ParseDiagnostics::default();
    let mut tuples: Vec<TaskTuple> = Vec::new();
    if text.trim().is_empty() {
        return ParsedTarget { tuples, diagnostics };
    }
    for fragment in text.split(SEPARATOR) {
        match parse_fragment(fragment, task, catalog) {
            FragmentOutcome::Tuple(tuple) => {
                if tuples.contains(&tuple) {
                    diagnostics.duplicate_tuples_removed += 1;
                    continue;
                }
                if let Some(c) = &tuple.category {
                    if !catalog.categories.contains(c) {
                        diagnostics.noncatalog_categories += 1;
                    }
                }
                tuples.push(tuple);
            }
            FragmentOutcome::Dropped => diagnostics.dropped_fragments += 1,
            FragmentOutcome::UnknownPolarity => diagnostics.unknown_polarity_words += 1,
        }
    }
    ParsedTarget { tuples, diagnostics }
}

/// One training or inference example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    #[serde(rename = "id")]
    pub source_sentence_id: String,
    pub task: Task,
    #[serde(rename = "lang")]
    pub language: String,
}

/// Emit one pair per sentence and task. Requesting all six tasks yields the
/// multi-task corpus. Opinion-free sentences appear only with
/// `include_empty`, with an empty target.
pub fn build_corpus_pairs(
    corpus: &Corpus,
    tasks: &[Task],
    catalog: &LabelCatalog,
    include_empty: bool,
) -> Vec<ExamplePair> {
    let mut pairs = Vec::new();
    for sentence in &corpus.sentences {
        if sentence.tuples.is_empty() && !include_empty {
            continue;
        }
        for &task in tasks {
            let projected = project_tuples(&sentence.tuples, task);
            pairs.push(ExamplePair {
                input_text: build_input(&sentence.text, task),
                target_text: linearize(&projected, task, catalog),
                source_sentence_id: sentence.id.clone(),
                task,
                language: sentence.language.clone(),
            });
        }
    }
    pairs
}
