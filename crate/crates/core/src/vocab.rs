//! Reference whitespace tokenizer.
//!
//! Words are whitespace-separated. Markers split into three tokens: `[A]` is
//! open, letter `A`, close, and `[;]` is open, separator, close. Letters and
//! the separator are vocabulary entries of their own (`<A>`, `<sep>`, ...),
//! distinct from an ordinary word `A` or `;` occurring in a review.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::Marker;

pub type TokenId = u32;

pub const EOS: &str = "<eos>";
pub const OPEN: &str = "[";
pub const CLOSE: &str = "]";
pub const SEP: &str = "<sep>";
pub const LETTER_A: &str = "<A>";
pub const LETTER_C: &str = "<C>";
pub const LETTER_P: &str = "<P>";

const SPECIALS: [&str; 7] = [EOS, OPEN, CLOSE, SEP, LETTER_A, LETTER_C, LETTER_P];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("duplicate vocabulary entry `{0}` on line {1}")]
    DuplicateEntry(String, usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

fn letter_entry(marker: Marker) -> &'static str {
    match marker {
        Marker::A => LETTER_A,
        Marker::C => LETTER_C,
        Marker::P => LETTER_P,
    }
}

/// Split one whitespace-delimited word into vocabulary entries.
fn pieces(word: &str) -> Vec<&str> {
    match word {
        "[" => vec![OPEN],
        "]" => vec![CLOSE],
        EOS => vec![EOS],
        "[A" => vec![OPEN, LETTER_A],
        "[C" => vec![OPEN, LETTER_C],
        "[P" => vec![OPEN, LETTER_P],
        "[;" => vec![OPEN, SEP],
        "[A]" => vec![OPEN, LETTER_A, CLOSE],
        "[C]" => vec![OPEN, LETTER_C, CLOSE],
        "[P]" => vec![OPEN, LETTER_P, CLOSE],
        "[;]" => vec![OPEN, SEP, CLOSE],
        other => vec![other],
    }
}

impl Vocab {
    /// Vocabulary holding only the special entries, at ids 0..7 in the order
    /// eos, open, close, separator, A, C, P.
    pub fn reference() -> Self {
        let mut v = Vocab::default();
        for s in SPECIALS {
            v.intern(s);
        }
        v
    }

    /// One entry per line; the id is the 0-based line index.
    pub fn from_lines(text: &str) -> Result<Self, VocabError> {
        let mut v = Vocab::default();
        for (i, line) in text.lines().enumerate() {
            if v.index.contains_key(line) {
                return Err(VocabError::DuplicateEntry(line.to_string(), i + 1));
            }
            v.intern(line);
        }
        Ok(v)
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn intern(&mut self, entry: &str) -> TokenId {
        if let Some(&id) = self.index.get(entry) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(entry.to_string());
        self.index.insert(entry.to_string(), id);
        id
    }

    pub fn id(&self, entry: &str) -> Option<TokenId> {
        self.index.get(entry).copied()
    }

    pub fn entry(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn letter(&self, marker: Marker) -> Option<TokenId> {
        self.id(letter_entry(marker))
    }

    pub fn is_special(entry: &str) -> bool {
        SPECIALS.contains(&entry)
    }

    /// Tokenize, adding unseen words to the vocabulary.
    pub fn encode(&mut self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .flat_map(pieces)
            .map(|p| self.intern(p))
            .collect()
    }

    /// Tokenize against a frozen vocabulary.
    pub fn encode_known(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        text.split_whitespace()
            .flat_map(pieces)
            .map(|p| self.id(p).ok_or_else(|| VocabError::UnknownToken(p.to_string())))
            .collect()
    }

    /// Render tokens back to text. Stops at the first eos; unknown ids are
    /// skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut glue_next = false;
        for &id in ids {
            let Some(entry) = self.entry(id) else { continue };
            let surface = match entry {
                EOS => break,
                SEP => ";",
                LETTER_A => "A",
                LETTER_C => "C",
                LETTER_P => "P",
                other => other,
            };
            let glue = glue_next || entry == CLOSE;
            if !out.is_empty() && !glue {
                out.push(' ');
            }
            out.push_str(surface);
            glue_next = entry == OPEN;
        }
        out
    }
}
