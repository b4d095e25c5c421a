//! Generative cross-lingual aspect-based sentiment analysis toolkit.
//!
//! Converts sentiment tuples to and from a bracketed marker language,
//! constrains greedy decoding to that language, ingests review corpora,
//! scores predictions and builds LLM prompts.

pub mod bridge;
pub mod constrain;
pub mod decode;
pub mod evalkit;
pub mod grammar;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod vocab;

pub use constrain::{
    CandidateSets, ConstraintError, ConstraintSession, ContentMode, DecodeState, SessionBuilder, SpecialTokens,
};
pub use decode::{greedy_decode, unconstrained_greedy_decode, DecodeOutcome, Scorer, Termination};
pub use grammar::{
    build_corpus_pairs, build_input, linearize, parse_target, project_tuples, ExamplePair, ParseDiagnostics,
    ParsedTarget,
};
pub use model::{
    AspectTerm, Category, Corpus, LabelCatalog, Marker, Polarity, Sentence, SentimentTuple, Span, Split, Task,
    TaskTuple,
};
pub use vocab::{TokenId, Vocab};
