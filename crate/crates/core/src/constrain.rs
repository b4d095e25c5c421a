//! Scheme-guided constrained decoding automaton.
//!
//! The automaton works over abstract token ids. For marker order
//! `m1 .. mk` the admissible sequences are
//!
//! ```text
//! tuple (sep tuple)* eos        tuple = [ m1 ] c+ [ m2 ] c+ .. [ mk ] c+
//!                               sep   = [ ; ]
//! ```
//!
//! where each content run `c+` is drawn from the candidate set of its marker
//! (a token bag, or an exact phrase in trie mode). With `allow_empty` a lone
//! eos is accepted as well.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::grammar::category_phrase;
use crate::model::{LabelCatalog, Marker, Task};
use crate::vocab::{TokenId, Vocab, VocabError, EOS};

pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("invalid constraint configuration: {0}")]
    InvalidConfig(String),
    #[error("token {token} at position {position} is not admissible")]
    IllFormedPrefix { position: usize, token: TokenId },
}

/// Ids of the structural tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub open: TokenId,
    pub close: TokenId,
    pub sep: TokenId,
    pub eos: TokenId,
    /// Letter ids indexed by [`Marker::index`].
    pub letters: [TokenId; 3],
}

impl SpecialTokens {
    pub fn letter(&self, marker: Marker) -> TokenId {
        self.letters[marker.index()]
    }

    pub fn all(&self) -> [TokenId; 7] {
        [
            self.open,
            self.close,
            self.sep,
            self.eos,
            self.letters[0],
            self.letters[1],
            self.letters[2],
        ]
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.all().contains(&id)
    }

    pub fn from_vocab(vocab: &Vocab) -> Result<Self, VocabError> {
        let get = |e: &str| vocab.id(e).ok_or_else(|| VocabError::UnknownToken(e.to_string()));
        let letter = |m: Marker| {
            vocab
                .letter(m)
                .ok_or_else(|| VocabError::UnknownToken(m.letter().to_string()))
        };
        Ok(SpecialTokens {
            open: get(crate::vocab::OPEN)?,
            close: get(crate::vocab::CLOSE)?,
            sep: get(crate::vocab::SEP)?,
            eos: get(EOS)?,
            letters: [letter(Marker::A)?, letter(Marker::C)?, letter(Marker::P)?],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContentMode {
    #[default]
    Bag,
    Trie,
}

impl std::str::FromStr for ContentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bag" => Ok(ContentMode::Bag),
            "trie" => Ok(ContentMode::Trie),
            other => Err(format!("unknown content mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    terminal: bool,
}

/// Prefix tree over admissible phrases. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseTrie {
    nodes: Vec<TrieNode>,
}

impl Default for PhraseTrie {
    fn default() -> Self {
        PhraseTrie {
            nodes: vec![TrieNode::default()],
        }
    }
}

impl PhraseTrie {
    pub const ROOT: usize = 0;

    pub fn from_phrases<I, P>(phrases: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[TokenId]>,
    {
        let mut trie = PhraseTrie::default();
        for p in phrases {
            trie.insert(p.as_ref());
        }
        trie
    }

    pub fn insert(&mut self, phrase: &[TokenId]) {
        let mut node = Self::ROOT;
        for &tok in phrase {
            node = match self.nodes[node].children.get(&tok) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(tok, next);
                    next
                }
            };
        }
        self.nodes[node].terminal = true;
    }

    pub fn child(&self, node: usize, tok: TokenId) -> Option<usize> {
        self.nodes.get(node)?.children.get(&tok).copied()
    }

    pub fn next_tokens(&self, node: usize) -> impl Iterator<Item = TokenId> + '_ {
        self.nodes[node].children.keys().copied()
    }

    pub fn is_terminal(&self, node: usize) -> bool {
        self.nodes[node].terminal
    }

    pub fn contains(&self, phrase: &[TokenId]) -> bool {
        let mut node = Self::ROOT;
        for &tok in phrase {
            match self.child(node, tok) {
                Some(n) => node = n,
                None => return false,
            }
        }
        self.nodes[node].terminal
    }

    /// Holds no phrase at all (the empty phrase is never stored).
    pub fn is_empty(&self) -> bool {
        self.nodes[Self::ROOT].children.is_empty()
    }

    /// Every token appearing in some phrase.
    pub fn tokens(&self) -> BTreeSet<TokenId> {
        self.nodes.iter().flat_map(|n| n.children.keys().copied()).collect()
    }

    /// All stored phrases in lexicographic id order.
    pub fn phrases(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if self.nodes[node].terminal {
                out.push(path.clone());
            }
            for (&tok, &child) in self.nodes[node].children.iter().rev() {
                let mut p = path.clone();
                p.push(tok);
                stack.push((child, p));
            }
        }
        out.sort();
        out
    }
}

/// Per-marker content constraint, indexed by [`Marker::index`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateSets {
    Bag([BTreeSet<TokenId>; 3]),
    Trie([PhraseTrie; 3]),
}

impl CandidateSets {
    pub fn mode(&self) -> ContentMode {
        match self {
            CandidateSets::Bag(_) => ContentMode::Bag,
            CandidateSets::Trie(_) => ContentMode::Trie,
        }
    }

    fn content_tokens(&self, marker: Marker) -> BTreeSet<TokenId> {
        match self {
            CandidateSets::Bag(bags) => bags[marker.index()].clone(),
            CandidateSets::Trie(tries) => tries[marker.index()].tokens(),
        }
    }

    fn is_empty_for(&self, marker: Marker) -> bool {
        match self {
            CandidateSets::Bag(bags) => bags[marker.index()].is_empty(),
            CandidateSets::Trie(tries) => tries[marker.index()].is_empty(),
        }
    }
}

/// A field of the tuple grammar a bracket can introduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Marker(Marker),
    Sep,
}

/// Where a token prefix sits in the target grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeState {
    /// Nothing generated yet.
    Start,
    /// `[` and a letter (or `;`) generated, `]` pending.
    AwaitClose(Slot),
    /// `[` generated after content or after a separator.
    AwaitLetter(Slot),
    /// Inside the content of `marker`. In trie mode `node` tracks the phrase.
    Content {
        marker: Marker,
        has_content: bool,
        node: Option<usize>,
    },
    /// A complete `[;]` generated.
    AfterSep,
    /// eos generated; nothing may follow.
    Finished,
}

/// Immutable automaton configuration for one input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSession {
    marker_order: Vec<Marker>,
    specials: SpecialTokens,
    candidates: CandidateSets,
    allow_empty: bool,
    max_len: usize,
}

impl ConstraintSession {
    pub fn new(
        marker_order: Vec<Marker>,
        specials: SpecialTokens,
        candidates: CandidateSets,
        allow_empty: bool,
        max_len: usize,
    ) -> Result<Self, ConstraintError> {
        let invalid = |msg: String| Err(ConstraintError::InvalidConfig(msg));
        if marker_order.is_empty() {
            return invalid("marker order is empty".into());
        }
        if !marker_order.windows(2).all(|w| w[0] < w[1]) {
            return invalid("markers must be unique and ordered A < C < P".into());
        }
        let ids = specials.all();
        let distinct: BTreeSet<_> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return invalid("special token ids must be pairwise distinct".into());
        }
        if max_len == 0 {
            return invalid("max_len must be positive".into());
        }
        if let CandidateSets::Trie(tries) = &candidates {
            if tries.iter().any(|t| t.is_terminal(PhraseTrie::ROOT)) {
                return invalid("trie phrases must be non-empty".into());
            }
        }
        for &m in &marker_order {
            if candidates.is_empty_for(m) {
                return invalid(format!("content set for marker {} is empty", m.letter()));
            }
        }
        for m in Marker::ALL {
            if let Some(id) = candidates
                .content_tokens(m)
                .into_iter()
                .find(|&id| specials.contains(id))
            {
                return invalid(format!("content for marker {} contains special token {id}", m.letter()));
            }
        }
        Ok(ConstraintSession {
            marker_order,
            specials,
            candidates,
            allow_empty,
            max_len,
        })
    }

    pub fn marker_order(&self) -> &[Marker] {
        &self.marker_order
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn candidates(&self) -> &CandidateSets {
        &self.candidates
    }

    pub fn allow_empty(&self) -> bool {
        self.allow_empty
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn with_max_len(mut self, max_len: usize) -> Result<Self, ConstraintError> {
        if max_len == 0 {
            return Err(ConstraintError::InvalidConfig("max_len must be positive".into()));
        }
        self.max_len = max_len;
        Ok(self)
    }

    pub fn start(&self) -> DecodeState {
        DecodeState::Start
    }

    fn first_marker(&self) -> Marker {
        self.marker_order[0]
    }

    fn is_last(&self, marker: Marker) -> bool {
        self.marker_order.last() == Some(&marker)
    }

    /// Slot introduced by the bracket that follows content of `marker`.
    fn slot_after(&self, marker: Marker) -> Slot {
        let i = self
            .marker_order
            .iter()
            .position(|&m| m == marker)
            .expect("marker belongs to the session");
        match self.marker_order.get(i + 1) {
            Some(&next) => Slot::Marker(next),
            None => Slot::Sep,
        }
    }

    fn slot_token(&self, slot: Slot) -> TokenId {
        match slot {
            Slot::Marker(m) => self.specials.letter(m),
            Slot::Sep => self.specials.sep,
        }
    }

    /// Whether the current content run may end here.
    fn at_boundary(&self, has_content: bool, node: Option<usize>, marker: Marker) -> bool {
        match (&self.candidates, node) {
            (CandidateSets::Trie(tries), Some(n)) => tries[marker.index()].is_terminal(n),
            _ => has_content,
        }
    }

    fn advance_content(&self, marker: Marker, node: Option<usize>, token: TokenId) -> Option<DecodeState> {
        match &self.candidates {
            CandidateSets::Bag(bags) => bags[marker.index()].contains(&token).then_some(DecodeState::Content {
                marker,
                has_content: true,
                node: None,
            }),
            CandidateSets::Trie(tries) => {
                let next = tries[marker.index()].child(node.unwrap_or(PhraseTrie::ROOT), token)?;
                Some(DecodeState::Content {
                    marker,
                    has_content: true,
                    node: Some(next),
                })
            }
        }
    }

    /// Transition on one token; `None` if the token is not admissible.
    pub fn advance(&self, state: DecodeState, token: TokenId) -> Option<DecodeState> {
        let sp = &self.specials;
        match state {
            DecodeState::Start => {
                if token == sp.open {
                    Some(DecodeState::AwaitLetter(Slot::Marker(self.first_marker())))
                } else if token == sp.eos && self.allow_empty {
                    Some(DecodeState::Finished)
                } else {
                    None
                }
            }
            DecodeState::AwaitLetter(slot) => (token == self.slot_token(slot)).then_some(DecodeState::AwaitClose(slot)),
            DecodeState::AwaitClose(slot) => {
                if token != sp.close {
                    return None;
                }
                Some(match slot {
                    Slot::Marker(marker) => DecodeState::Content {
                        marker,
                        has_content: false,
                        node: self.trie_root(),
                    },
                    Slot::Sep => DecodeState::AfterSep,
                })
            }
            DecodeState::Content {
                marker,
                has_content,
                node,
            } => {
                let boundary = self.at_boundary(has_content, node, marker);
                if token == sp.open {
                    boundary.then_some(DecodeState::AwaitLetter(self.slot_after(marker)))
                } else if token == sp.eos {
                    (boundary && self.is_last(marker)).then_some(DecodeState::Finished)
                } else {
                    self.advance_content(marker, node, token)
                }
            }
            DecodeState::AfterSep => {
                (token == sp.open).then_some(DecodeState::AwaitLetter(Slot::Marker(self.first_marker())))
            }
            DecodeState::Finished => None,
        }
    }

    fn trie_root(&self) -> Option<usize> {
        match self.candidates {
            CandidateSets::Bag(_) => None,
            CandidateSets::Trie(_) => Some(PhraseTrie::ROOT),
        }
    }

    /// Admissible next tokens in `state`. Empty only for [`DecodeState::Finished`].
    pub fn allowed_from(&self, state: DecodeState) -> BTreeSet<TokenId> {
        let sp = &self.specials;
        let mut out = BTreeSet::new();
        match state {
            DecodeState::Start => {
                out.insert(sp.open);
                if self.allow_empty {
                    out.insert(sp.eos);
                }
            }
            DecodeState::AwaitClose(_) => {
                out.insert(sp.close);
            }
            DecodeState::AwaitLetter(slot) => {
                out.insert(self.slot_token(slot));
            }
            DecodeState::Content {
                marker,
                has_content,
                node,
            } => {
                match (&self.candidates, node) {
                    (CandidateSets::Trie(tries), Some(n)) => out.extend(tries[marker.index()].next_tokens(n)),
                    _ => out.extend(self.candidates.content_tokens(marker)),
                }
                if self.at_boundary(has_content, node, marker) {
                    out.insert(sp.open);
                    if self.is_last(marker) {
                        out.insert(sp.eos);
                    }
                }
            }
            DecodeState::AfterSep => {
                out.insert(sp.open);
            }
            DecodeState::Finished => {}
        }
        out
    }

    /// Classify a prefix by scanning it left to right.
    pub fn classify_state(&self, prefix: &[TokenId]) -> Result<DecodeState, ConstraintError> {
        let mut state = self.start();
        for (position, &token) in prefix.iter().enumerate() {
            state = self
                .advance(state, token)
                .ok_or(ConstraintError::IllFormedPrefix { position, token })?;
        }
        Ok(state)
    }

    pub fn allowed_tokens(&self, prefix: &[TokenId]) -> Result<BTreeSet<TokenId>, ConstraintError> {
        Ok(self.allowed_from(self.classify_state(prefix)?))
    }

    fn content_run_ok(&self, marker: Marker, run: &[TokenId]) -> bool {
        if run.is_empty() {
            return false;
        }
        match &self.candidates {
            CandidateSets::Bag(bags) => run.iter().all(|t| bags[marker.index()].contains(t)),
            CandidateSets::Trie(tries) => tries[marker.index()].contains(run),
        }
    }

    fn tuple_ok(&self, mut tokens: &[TokenId]) -> bool {
        let sp = &self.specials;
        for &marker in &self.marker_order {
            match tokens {
                [open, letter, close, rest @ ..]
                    if *open == sp.open && *letter == sp.letter(marker) && *close == sp.close =>
                {
                    let end = rest.iter().position(|&t| t == sp.open).unwrap_or(rest.len());
                    if !self.content_run_ok(marker, &rest[..end]) {
                        return false;
                    }
                    tokens = &rest[end..];
                }
                _ => return false,
            }
        }
        tokens.is_empty()
    }

    /// Membership test for complete sequences. Works on the whole sequence
    /// (split at separators, then match each tuple) rather than through the
    /// incremental automaton, so it can serve as an oracle for it.
    pub fn accepts(&self, sequence: &[TokenId]) -> bool {
        let sp = &self.specials;
        let Some((&last, body)) = sequence.split_last() else {
            return false;
        };
        if last != sp.eos || body.contains(&sp.eos) {
            return false;
        }
        if body.is_empty() {
            return self.allow_empty;
        }
        let mut tuples = Vec::new();
        let mut start = 0;
        for (i, &t) in body.iter().enumerate() {
            if t != sp.sep {
                continue;
            }
            if i == 0 || body[i - 1] != sp.open || body.get(i + 1) != Some(&sp.close) {
                return false;
            }
            tuples.push(&body[start..i - 1]);
            start = i + 2;
        }
        tuples.push(&body[start..]);
        tuples.into_iter().all(|t| self.tuple_ok(t))
    }
}

/// Builds sessions from review text with the reference tokenizer.
///
/// Aspect content is the input's word tokens plus the implicit word;
/// category content comes from the catalog phrases; polarity content from the
/// polarity words. In trie mode aspects are restricted to contiguous input
/// n-grams (or the implicit word) and categories/polarities to whole phrases.
#[derive(Debug, Clone)]
pub struct SessionBuilder<'a> {
    pub catalog: &'a LabelCatalog,
    pub mode: ContentMode,
    pub allow_empty: bool,
    pub max_len: usize,
}

impl<'a> SessionBuilder<'a> {
    pub fn new(catalog: &'a LabelCatalog) -> Self {
        SessionBuilder {
            catalog,
            mode: ContentMode::Bag,
            allow_empty: false,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn mode(mut self, mode: ContentMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn allow_empty(mut self, allow_empty: bool) -> Self {
        self.allow_empty = allow_empty;
        self
    }

    pub fn max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    /// Register every word the catalog can contribute.
    pub fn intern_catalog(&self, vocab: &mut Vocab) {
        for c in &self.catalog.categories {
            vocab.encode(&category_phrase(c));
        }
        for w in self.catalog.polarity_words() {
            vocab.encode(w);
        }
        vocab.encode(&self.catalog.implicit_word);
    }

    pub fn build(
        &self,
        sentence_text: &str,
        task: Task,
        vocab: &mut Vocab,
    ) -> Result<ConstraintSession, ConstraintError> {
        self.intern_catalog(vocab);
        let specials = SpecialTokens::from_vocab(vocab).map_err(|e| ConstraintError::InvalidConfig(e.to_string()))?;
        let input = vocab.encode(sentence_text);
        let implicit = vocab.encode(&self.catalog.implicit_word);

        // Word runs of the input, split around any structural tokens it contains.
        let runs: Vec<&[TokenId]> = input
            .split(|t| specials.contains(*t))
            .filter(|r| !r.is_empty())
            .collect();
        let categories: Vec<Vec<TokenId>> = self
            .catalog
            .categories
            .iter()
            .map(|c| vocab.encode(&category_phrase(c)))
            .collect();
        let polarities: Vec<Vec<TokenId>> = self.catalog.polarity_words().map(|w| vocab.encode(w)).collect();

        let candidates = match self.mode {
            ContentMode::Bag => {
                let aspect = runs
                    .iter()
                    .flat_map(|r| r.iter().copied())
                    .chain(implicit.iter().copied())
                    .collect();
                let category = categories.iter().flatten().copied().collect();
                let polarity = polarities.iter().flatten().copied().collect();
                CandidateSets::Bag([aspect, category, polarity])
            }
            ContentMode::Trie => {
                let mut aspect = PhraseTrie::from_phrases([&implicit]);
                for run in &runs {
                    for start in 0..run.len() {
                        aspect.insert(&run[start..]);
                        for end in start + 1..run.len() {
                            aspect.insert(&run[start..end]);
                        }
                    }
                }
                CandidateSets::Trie([
                    aspect,
                    PhraseTrie::from_phrases(&categories),
                    PhraseTrie::from_phrases(&polarities),
                ])
            }
        };
        ConstraintSession::new(
            task.marker_order().to_vec(),
            specials,
            candidates,
            self.allow_empty,
            self.max_len,
        )
    }
}
