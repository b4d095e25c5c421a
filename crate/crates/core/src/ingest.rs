//! Corpus ingestion: SemEval-2016 review XML and the JSONL interchange
//! format, the 9:1 train/dev split and corpus statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AspectTerm, Category, Corpus, Polarity, Sentence, SentimentTuple, Span, Split};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unknown polarity label `{label}` in sentence {sentence}")]
    UnknownPolarityLabel { sentence: String, label: String },
    #[error("opinion without a usable category in sentence {sentence}")]
    MissingCategoryAttribute { sentence: String },
    #[error("schema violation on line {line}: {detail}")]
    SchemaViolation { line: usize, detail: String },
    #[error("duplicate sentence id `{0}`")]
    DuplicateSentenceId(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct XmlOptions {
    /// Skip opinions labelled `conflict` instead of failing.
    pub drop_conflict: bool,
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Span from `from`/`to` attributes, if they describe a non-empty range
/// inside the text.
fn parse_span(from: Option<&str>, to: Option<&str>, text_len: usize) -> Option<Span> {
    let from = from?.trim().parse().ok()?;
    let to = to?.trim().parse().ok()?;
    Span::new(from, to).ok().filter(|s| s.to <= text_len)
}

pub fn parse_semeval_xml(
    bytes: &[u8],
    language: &str,
    split: Split,
    options: XmlOptions,
) -> Result<Corpus, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    let mut sentences = Vec::new();
    for (ordinal, node) in doc.descendants().filter(|n| n.has_tag_name("sentence")).enumerate() {
        let id = node
            .attribute("id")
            .map(str::to_string)
            .unwrap_or_else(|| format!("s{ordinal}"));
        let sentence_text: String = node
            .children()
            .find(|c| c.has_tag_name("text"))
            .and_then(|t| t.text())
            .unwrap_or_default()
            .to_string();
        let mut tuples = Vec::new();
        for op in node.descendants().filter(|n| n.has_tag_name("Opinion")) {
            let polarity = match op.attribute("polarity") {
                Some("conflict") if options.drop_conflict => continue,
                Some(label) => label
                    .parse::<Polarity>()
                    .map_err(|_| IngestError::UnknownPolarityLabel {
                        sentence: id.clone(),
                        label: label.to_string(),
                    })?,
                None => {
                    return Err(IngestError::UnknownPolarityLabel {
                        sentence: id.clone(),
                        label: String::new(),
                    })
                }
            };
            let category: Category = op
                .attribute("category")
                .and_then(|c| c.parse::<Category>().ok())
                .filter(|c| !c.is_raw())
                .ok_or_else(|| IngestError::MissingCategoryAttribute { sentence: id.clone() })?;
            let aspect = match op.attribute("target") {
                None | Some("NULL") | Some("") => AspectTerm::Implicit,
                Some(target) => match parse_span(op.attribute("from"), op.attribute("to"), char_len(&sentence_text)) {
                    Some(span) => AspectTerm::explicit_with_span(target, span),
                    None => AspectTerm::explicit(target),
                }
                .expect("target is non-empty"),
            };
            tuples.push(SentimentTuple::new(aspect, category, polarity));
        }
        sentences.push(Sentence::new(id, language, sentence_text, tuples));
    }
    let corpus = Corpus::new(sentences, split, language);
    if let Some(dup) = corpus.duplicate_id() {
        return Err(IngestError::DuplicateSentenceId(dup.to_string()));
    }
    Ok(corpus)
}

/// Sentences at 0-based index ≡ 9 (mod 10) go to dev; order is preserved.
pub fn split_train_dev(corpus: &Corpus) -> (Corpus, Corpus) {
    let (dev, train): (Vec<_>, Vec<_>) = corpus
        .sentences
        .iter()
        .cloned()
        .enumerate()
        .partition(|(i, _)| i % 10 == 9);
    let strip = |v: Vec<(usize, Sentence)>| v.into_iter().map(|(_, s)| s).collect();
    (
        Corpus::new(strip(train), Split::Train, corpus.language.clone()),
        Corpus::new(strip(dev), Split::Dev, corpus.language.clone()),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tuples: usize,
    pub distinct_categories: usize,
    pub polarity_counts: BTreeMap<Polarity, usize>,
    pub null_aspects: usize,
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        sentences: corpus.sentences.len(),
        polarity_counts: Polarity::ALL.iter().map(|&p| (p, 0)).collect(),
        ..CorpusStats::default()
    };
    let mut categories = BTreeSet::new();
    for t in corpus.sentences.iter().flat_map(|s| &s.tuples) {
        stats.tuples += 1;
        categories.insert(&t.category);
        *stats.polarity_counts.entry(t.polarity).or_default() += 1;
        if t.aspect.is_implicit() {
            stats.null_aspects += 1;
        }
    }
    stats.distinct_categories = categories.len();
    stats
}

/// One tuple in the interchange schema. `term: null` is an implicit aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleRecord {
    pub term: Option<String>,
    #[serde(default)]
    pub from: Option<usize>,
    #[serde(default)]
    pub to: Option<usize>,
    pub category: Category,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceRecord {
    pub id: String,
    pub lang: String,
    pub text: String,
    pub tuples: Vec<TupleRecord>,
}

impl TupleRecord {
    pub fn from_tuple(t: &SentimentTuple) -> Self {
        let span = t.aspect.span();
        TupleRecord {
            term: t.aspect.text().map(str::to_string),
            from: span.map(|s| s.from),
            to: span.map(|s| s.to),
            category: t.category.clone(),
            polarity: t.polarity,
        }
    }

    pub fn to_tuple(&self) -> Result<SentimentTuple, String> {
        if self.category.is_raw() {
            return Err(format!("category `{}` is not ENTITY#ATTRIBUTE", self.category));
        }
        let aspect = match (&self.term, self.from, self.to) {
            (None, None, None) => AspectTerm::Implicit,
            (None, _, _) => return Err("implicit aspect with a span".into()),
            (Some(text), Some(from), Some(to)) => {
                let span = Span::new(from, to).map_err(|e| e.to_string())?;
                AspectTerm::explicit_with_span(text.clone(), span).map_err(|e| e.to_string())?
            }
            (Some(text), None, None) => AspectTerm::explicit(text.clone()).map_err(|e| e.to_string())?,
            (Some(_), _, _) => return Err("span needs both `from` and `to`".into()),
        };
        Ok(SentimentTuple::new(aspect, self.category.clone(), self.polarity))
    }
}

impl SentenceRecord {
    pub fn from_sentence(s: &Sentence) -> Self {
        SentenceRecord {
            id: s.id.clone(),
            lang: s.language.clone(),
            text: s.text.clone(),
            tuples: s.tuples.iter().map(TupleRecord::from_tuple).collect(),
        }
    }

    pub fn to_sentence(&self) -> Result<Sentence, String> {
        let tuples = self
            .tuples
            .iter()
            .map(TupleRecord::to_tuple)
            .collect::<Result<Vec<_>, _>>()?;
        let text_len = char_len(&self.text);
        if let Some(span) = tuples.iter().filter_map(|t| t.aspect.span()).find(|s| s.to > text_len) {
            return Err(format!("span [{}, {}) exceeds the text", span.from, span.to));
        }
        Ok(Sentence::new(
            self.id.clone(),
            self.lang.clone(),
            self.text.clone(),
            tuples,
        ))
    }
}

/// Parse JSONL; blank lines are skipped. The corpus language is taken from
/// the first sentence (`und` when empty).
pub fn read_jsonl(bytes: &[u8], split: Split) -> Result<Corpus, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::SchemaViolation {
        line: 0,
        detail: e.to_string(),
    })?;
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let violation = |detail: String| IngestError::SchemaViolation { line: i + 1, detail };
        let record: SentenceRecord = serde_json::from_str(line).map_err(|e| violation(e.to_string()))?;
        sentences.push(record.to_sentence().map_err(violation)?);
    }
    let language = sentences
        .first()
        .map(|s| s.language.clone())
        .unwrap_or_else(|| "und".into());
    let corpus = Corpus::new(sentences, split, language);
    if let Some(dup) = corpus.duplicate_id() {
        return Err(IngestError::DuplicateSentenceId(dup.to_string()));
    }
    Ok(corpus)
}

pub fn write_jsonl(corpus: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    for s in &corpus.sentences {
        serde_json::to_writer(&mut out, &SentenceRecord::from_sentence(s)).expect("in-memory write");
        out.push(b'\n');
    }
    out
}
