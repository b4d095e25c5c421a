//! Shared domain types: polarities, categories, aspect terms, tuples, tasks,
//! sentences, corpora and the label catalog.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed category `{0}`: expected ENTITY#ATTRIBUTE")]
    MalformedCategory(String),
    #[error("unknown polarity label `{0}`")]
    UnknownPolarityLabel(String),
    #[error("aspect term text must not be empty")]
    EmptyAspect,
    #[error("invalid span [{from}, {to})")]
    InvalidSpan { from: usize, to: usize },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown marker `{0}`")]
    UnknownMarker(String),
    #[error("polarity words must be three distinct non-empty single words")]
    InvalidPolarityWords,
}

/// Sentiment polarity. The label space is closed: exactly three values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn label(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }

    fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Neutral => 1,
            Polarity::Negative => 2,
        }
    }
}

impl FromStr for Polarity {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(ModelError::UnknownPolarityLabel(other.to_string())),
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// An aspect category, canonically rendered as `ENTITY#ATTRIBUTE`.
///
/// Generated text can name categories that do not fit that shape; those are
/// kept as raw labels (upper-cased words, no attribute) so they can still be
/// counted and scored as wrong.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category {
    entity: String,
    attribute: Option<String>,
}

fn valid_category_part(part: &str) -> bool {
    !part.is_empty() && !part.contains('#') && !part.chars().any(char::is_whitespace) && part.to_uppercase() == part
}

impl Category {
    pub fn new(entity: impl Into<String>, attribute: impl Into<String>) -> Result<Self, ModelError> {
        let entity = entity.into();
        let attribute = attribute.into();
        if !valid_category_part(&entity) || !valid_category_part(&attribute) {
            return Err(ModelError::MalformedCategory(format!("{entity}#{attribute}")));
        }
        Ok(Category {
            entity,
            attribute: Some(attribute),
        })
    }

    /// A free-form label such as `FOOD` or `QUALITY FOOD QUALITY`.
    pub fn raw(label: &str) -> Result<Self, ModelError> {
        let words: Vec<String> = label.split_whitespace().map(str::to_uppercase).collect();
        if words.is_empty() || label.contains('#') {
            return Err(ModelError::MalformedCategory(label.to_string()));
        }
        Ok(Category {
            entity: words.join(" "),
            attribute: None,
        })
    }

    pub fn is_raw(&self) -> bool {
        self.attribute.is_none()
    }

    /// For raw labels, the whole label.
    pub fn entity(&self) -> &str {
        &self.entity
    }

    pub fn attribute(&self) -> Option<&str> {
        self.attribute.as_deref()
    }
}

impl FromStr for Category {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('#');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(entity), Some(attribute), None) => {
                Category::new(entity, attribute).map_err(|_| ModelError::MalformedCategory(s.to_string()))
            }
            (Some(label), None, None) if label.to_uppercase() == label => Category::raw(label),
            _ => Err(ModelError::MalformedCategory(s.to_string())),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.attribute {
            Some(attribute) => write!(f, "{}#{}", self.entity, attribute),
            None => f.write_str(&self.entity),
        }
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open character offsets `[from, to)` into the sentence text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub from: usize,
    pub to: usize,
}

impl Span {
    pub fn new(from: usize, to: usize) -> Result<Self, ModelError> {
        if from < to {
            Ok(Span { from, to })
        } else {
            Err(ModelError::InvalidSpan { from, to })
        }
    }
}

/// The opinion target. Spans are metadata and never take part in equality,
/// hashing or ordering.
#[derive(Debug, Clone)]
pub enum AspectTerm {
    Explicit { text: String, span: Option<Span> },
    Implicit,
}

impl AspectTerm {
    pub fn explicit(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.is_empty() {
            return Err(ModelError::EmptyAspect);
        }
        Ok(AspectTerm::Explicit { text, span: None })
    }

    pub fn explicit_with_span(text: impl Into<String>, span: Span) -> Result<Self, ModelError> {
        let text = text.into();
        if text.is_empty() {
            return Err(ModelError::EmptyAspect);
        }
        Ok(AspectTerm::Explicit { text, span: Some(span) })
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            AspectTerm::Explicit { text, .. } => Some(text),
            AspectTerm::Implicit => None,
        }
    }

    pub fn span(&self) -> Option<Span> {
        match self {
            AspectTerm::Explicit { span, .. } => *span,
            AspectTerm::Implicit => None,
        }
    }

    pub fn is_implicit(&self) -> bool {
        matches!(self, AspectTerm::Implicit)
    }

    /// Same term with the surface text lowercased (span kept).
    pub fn lowercased(&self) -> Self {
        match self {
            AspectTerm::Explicit { text, span } => AspectTerm::Explicit {
                text: text.to_lowercase(),
                span: *span,
            },
            AspectTerm::Implicit => AspectTerm::Implicit,
        }
    }

    fn key(&self) -> Option<&str> {
        self.text()
    }
}

impl PartialEq for AspectTerm {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for AspectTerm {}

impl Hash for AspectTerm {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for AspectTerm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AspectTerm {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// One gold or predicted `(aspect, category, polarity)` triplet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentimentTuple {
    pub aspect: AspectTerm,
    pub category: Category,
    pub polarity: Polarity,
}

impl SentimentTuple {
    pub fn new(aspect: AspectTerm, category: Category, polarity: Polarity) -> Self {
        SentimentTuple {
            aspect,
            category,
            polarity,
        }
    }
}

/// Element markers of the target language: `[A]`, `[C]`, `[P]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Marker {
    A,
    C,
    P,
}

impl Marker {
    pub const ALL: [Marker; 3] = [Marker::A, Marker::C, Marker::P];

    pub fn letter(self) -> &'static str {
        match self {
            Marker::A => "A",
            Marker::C => "C",
            Marker::P => "P",
        }
    }

    /// `[A]`, `[C]` or `[P]`.
    pub fn tag(self) -> &'static str {
        match self {
            Marker::A => "[A]",
            Marker::C => "[C]",
            Marker::P => "[P]",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Marker::A => 0,
            Marker::C => 1,
            Marker::P => 2,
        }
    }
}

impl FromStr for Marker {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Marker::A),
            "C" => Ok(Marker::C),
            "P" => Ok(Marker::P),
            other => Err(ModelError::UnknownMarker(other.to_string())),
        }
    }
}

/// The six ABSA tasks, each predicting a fixed subset of the elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Ate,
    Acd,
    Acsa,
    E2e,
    Acte,
    Tasd,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Ate, Task::Acd, Task::Acsa, Task::E2e, Task::Acte, Task::Tasd];

    pub fn marker_order(self) -> &'static [Marker] {
        match self {
            Task::Ate => &[Marker::A],
            Task::Acd => &[Marker::C],
            Task::Acsa => &[Marker::C, Marker::P],
            Task::E2e => &[Marker::A, Marker::P],
            Task::Acte => &[Marker::A, Marker::C],
            Task::Tasd => &[Marker::A, Marker::C, Marker::P],
        }
    }

    pub fn has(self, marker: Marker) -> bool {
        self.marker_order().contains(&marker)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Ate => "ate",
            Task::Acd => "acd",
            Task::Acsa => "acsa",
            Task::E2e => "e2e",
            Task::Acte => "acte",
            Task::Tasd => "tasd",
        }
    }

    /// Inverse of [`Task::marker_order`].
    pub fn from_markers(markers: &[Marker]) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.marker_order() == markers)
    }
}

impl FromStr for Task {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Task::Ate),
            "acd" => Ok(Task::Acd),
            "acsa" => Ok(Task::Acsa),
            "e2e" | "e2e-absa" => Ok(Task::E2e),
            "acte" => Ok(Task::Acte),
            "tasd" => Ok(Task::Tasd),
            _ => Err(ModelError::UnknownTask(s.to_string())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Task {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A triplet projected onto the element subset of one task. Elements the task
/// does not predict are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskTuple {
    pub aspect: Option<AspectTerm>,
    pub category: Option<Category>,
    pub polarity: Option<Polarity>,
}

impl TaskTuple {
    pub fn project(triplet: &SentimentTuple, task: Task) -> Self {
        TaskTuple {
            aspect: task.has(Marker::A).then(|| triplet.aspect.clone()),
            category: task.has(Marker::C).then(|| triplet.category.clone()),
            polarity: task.has(Marker::P).then_some(triplet.polarity),
        }
    }

    pub fn lowercased(&self) -> Self {
        TaskTuple {
            aspect: self.aspect.as_ref().map(AspectTerm::lowercased),
            ..self.clone()
        }
    }
}

/// JSON form: `{"aspect": "tea", "category": "FOOD#QUALITY", "polarity":
/// "positive"}` with absent elements omitted and an implicit aspect as `null`.
impl Serialize for TaskTuple {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(None)?;
        if let Some(aspect) = &self.aspect {
            map.serialize_entry("aspect", &aspect.text())?;
        }
        if let Some(category) = &self.category {
            map.serialize_entry("category", category)?;
        }
        if let Some(polarity) = &self.polarity {
            map.serialize_entry("polarity", polarity)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for TaskTuple {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            #[serde(default, deserialize_with = "present")]
            aspect: Option<Option<String>>,
            category: Option<Category>,
            polarity: Option<Polarity>,
        }
        fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Option<String>>, D::Error> {
            Option::<String>::deserialize(d).map(Some)
        }
        let repr = Repr::deserialize(deserializer)?;
        let aspect = match repr.aspect {
            None => None,
            Some(None) => Some(AspectTerm::Implicit),
            Some(Some(text)) => Some(AspectTerm::explicit(text).map_err(serde::de::Error::custom)?),
        };
        Ok(TaskTuple {
            aspect,
            category: repr.category,
            polarity: repr.polarity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub language: String,
    pub text: String,
    /// Gold tuples in annotation order, duplicates removed.
    pub tuples: Vec<SentimentTuple>,
}

impl Sentence {
    pub fn new(
        id: impl Into<String>,
        language: impl Into<String>,
        text: impl Into<String>,
        tuples: Vec<SentimentTuple>,
    ) -> Self {
        let mut out: Vec<SentimentTuple> = Vec::with_capacity(tuples.len());
        for t in tuples {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        Sentence {
            id: id.into(),
            language: language.into(),
            text: text.into(),
            tuples: out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub split: Split,
    pub language: String,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, split: Split, language: impl Into<String>) -> Self {
        Corpus {
            sentences,
            split,
            language: language.into(),
        }
    }

    /// First repeated sentence id, if any.
    pub fn duplicate_id(&self) -> Option<&str> {
        let mut seen = std::collections::HashSet::new();
        self.sentences
            .iter()
            .find(|s| !seen.insert(s.id.as_str()))
            .map(|s| s.id.as_str())
    }
}

/// Category inventory plus the polarity verbalizer and the implicit-aspect word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    pub categories: BTreeSet<Category>,
    polarity_words: [String; 3],
    pub implicit_word: String,
}

/// Restaurant-domain inventory of SemEval-2016 Task 5.
pub const RESTAURANT_CATEGORIES: [&str; 12] = [
    "AMBIENCE#GENERAL",
    "DRINKS#PRICES",
    "DRINKS#QUALITY",
    "DRINKS#STYLE_OPTIONS",
    "FOOD#PRICES",
    "FOOD#QUALITY",
    "FOOD#STYLE_OPTIONS",
    "LOCATION#GENERAL",
    "RESTAURANT#GENERAL",
    "RESTAURANT#MISCELLANEOUS",
    "RESTAURANT#PRICES",
    "SERVICE#GENERAL",
];

impl Default for LabelCatalog {
    fn default() -> Self {
        LabelCatalog::new(BTreeSet::new())
    }
}

impl LabelCatalog {
    pub fn new(categories: BTreeSet<Category>) -> Self {
        LabelCatalog {
            categories,
            polarity_words: ["great".into(), "ok".into(), "bad".into()],
            implicit_word: "it".into(),
        }
    }

    pub fn restaurant() -> Self {
        LabelCatalog::new(
            RESTAURANT_CATEGORIES
                .iter()
                .map(|c| c.parse().expect("static category"))
                .collect(),
        )
    }

    /// Catalog whose category set is exactly the categories seen in `corpora`.
    pub fn from_corpora<'a>(corpora: impl IntoIterator<Item = &'a Corpus>) -> Self {
        let categories = corpora
            .into_iter()
            .flat_map(|c| c.sentences.iter())
            .flat_map(|s| s.tuples.iter().map(|t| t.category.clone()))
            .collect();
        LabelCatalog::new(categories)
    }

    /// Replace the verbalizer. Words must be distinct, non-empty and free of
    /// whitespace so the mapping stays invertible.
    pub fn with_polarity_words(mut self, positive: &str, neutral: &str, negative: &str) -> Result<Self, ModelError> {
        let words = [positive, neutral, negative];
        let distinct: BTreeSet<&str> = words.iter().copied().collect();
        if distinct.len() != 3
            || words
                .iter()
                .any(|w| w.is_empty() || w.chars().any(|c| c.is_whitespace() || c == '['))
        {
            return Err(ModelError::InvalidPolarityWords);
        }
        self.polarity_words = words.map(str::to_string);
        Ok(self)
    }

    pub fn polarity_word(&self, polarity: Polarity) -> &str {
        &self.polarity_words[polarity.index()]
    }

    pub fn polarity_for_word(&self, word: &str) -> Option<Polarity> {
        Polarity::ALL.into_iter().find(|p| self.polarity_word(*p) == word)
    }

    pub fn polarity_words(&self) -> impl Iterator<Item = &str> {
        self.polarity_words.iter().map(String::as_str)
    }
}
