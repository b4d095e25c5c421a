//! Greedy generation under the constraint automaton, plus deterministic
//! scorers that stand in for a model.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constrain::ConstraintSession;
use crate::vocab::TokenId;

/// Next-token scores over the vocabulary, higher preferred. Must be a pure
/// function of its arguments. Missing or NaN entries count as `-inf`.
pub trait Scorer: Send + Sync {
    fn score(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        (**self).score(input, prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    /// Generated ids, including the final eos when there is one.
    pub tokens: Vec<TokenId>,
    pub terminated_by: Termination,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("no admissible token at step {step}")]
    DeadEnd { step: usize },
}

fn score_of(scores: &[f64], id: TokenId) -> f64 {
    match scores.get(id as usize) {
        Some(s) if !s.is_nan() => *s,
        _ => f64::NEG_INFINITY,
    }
}

/// Highest score among `candidates` (ascending ids); ties go to the lowest id.
fn argmax(scores: &[f64], candidates: impl IntoIterator<Item = TokenId>) -> Option<TokenId> {
    let mut best: Option<(TokenId, f64)> = None;
    for id in candidates {
        let s = score_of(scores, id);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id)
}

/// Greedy decoding restricted to the automaton's admissible tokens.
pub fn greedy_decode<S: Scorer + ?Sized>(
    scorer: &S,
    input: &[TokenId],
    session: &ConstraintSession,
) -> Result<DecodeOutcome, DecodeError> {
    let eos = session.specials().eos;
    let mut state = session.start();
    let mut tokens = Vec::new();
    while tokens.len() < session.max_len() {
        let allowed = session.allowed_from(state);
        let scores = scorer.score(input, &tokens);
        let step = tokens.len();
        let next = argmax(&scores, allowed).ok_or(DecodeError::DeadEnd { step })?;
        state = session
            .advance(state, next)
            .expect("allowed token advances the automaton");
        tokens.push(next);
        if next == eos {
            return Ok(DecodeOutcome {
                steps: tokens.len(),
                tokens,
                terminated_by: Termination::Eos,
            });
        }
    }
    Ok(DecodeOutcome {
        steps: tokens.len(),
        tokens,
        terminated_by: Termination::MaxLen,
    })
}

/// Plain greedy decoding over every id the scorer returns.
pub fn unconstrained_greedy_decode<S: Scorer + ?Sized>(
    scorer: &S,
    input: &[TokenId],
    eos: TokenId,
    max_len: usize,
) -> DecodeOutcome {
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let scores = scorer.score(input, &tokens);
        let next = argmax(&scores, 0..scores.len() as TokenId).unwrap_or(eos);
        tokens.push(next);
        if next == eos {
            return DecodeOutcome {
                steps: tokens.len(),
                tokens,
                terminated_by: Termination::Eos,
            };
        }
    }
    DecodeOutcome {
        steps: tokens.len(),
        tokens,
        terminated_by: Termination::MaxLen,
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    // splitmix64 finalizer over a running hash
    h ^= v
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(h << 6)
        .wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

fn context_rng(seed: u64, input: &[TokenId], prefix: &[TokenId]) -> ChaCha8Rng {
    let mut h = mix(0, seed);
    h = mix(h, input.len() as u64);
    for &t in input {
        h = mix(h, t as u64);
    }
    h = mix(h, u64::MAX);
    for &t in prefix {
        h = mix(h, t as u64);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Pseudo-random scores in `[0, 1)`, a deterministic function of
/// `(seed, input, prefix)`.
#[derive(Debug, Clone)]
pub struct SeededScorer {
    pub seed: u64,
    pub vocab_size: usize,
}

impl Scorer for SeededScorer {
    fn score(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let mut rng = context_rng(self.seed, input, prefix);
        (0..self.vocab_size).map(|_| rng.gen::<f64>()).collect()
    }
}

/// Ranks every token the session would reject above every token it admits;
/// seeded noise orders tokens within each group.
#[derive(Debug, Clone)]
pub struct AdversarialScorer<'a> {
    pub seed: u64,
    pub vocab_size: usize,
    pub session: &'a ConstraintSession,
}

impl Scorer for AdversarialScorer<'_> {
    fn score(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let allowed = self.session.allowed_tokens(prefix).unwrap_or_default();
        let mut rng = context_rng(self.seed, input, prefix);
        (0..self.vocab_size as TokenId)
            .map(|id| {
                let noise = rng.gen::<f64>();
                if allowed.contains(&id) {
                    noise
                } else {
                    1000.0 + noise
                }
            })
            .collect()
    }
}

/// Memorizes `input -> target` pairs. While the prefix follows a memorized
/// target the next target token scores 1; off-track prefixes score eos 0.5
/// and everything else 0.
#[derive(Debug, Clone)]
pub struct TabularScorer {
    table: HashMap<Vec<TokenId>, Vec<TokenId>>,
    vocab_size: usize,
    eos: TokenId,
}

impl TabularScorer {
    pub fn new(vocab_size: usize, eos: TokenId) -> Self {
        TabularScorer {
            table: HashMap::new(),
            vocab_size,
            eos,
        }
    }

    /// `target` should end with eos.
    pub fn memorize(&mut self, input: Vec<TokenId>, target: Vec<TokenId>) {
        self.table.insert(input, target);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Scorer for TabularScorer {
    fn score(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let mut scores = vec![0.0; self.vocab_size];
        let next = self
            .table
            .get(input)
            .filter(|t| t.len() > prefix.len() && t.starts_with(prefix))
            .map(|t| t[prefix.len()]);
        match next {
            Some(id) => scores[id as usize] = 1.0,
            None => scores[self.eos as usize] = 0.5,
        }
        scores
    }
}

/// Position-aligned preference for a memorized target: the target token at
/// the current position scores 10, any other token of that target scores 1,
/// the rest 0. Unlike [`TabularScorer`] it keeps steering after the prefix
/// diverges, which models a decoder that prefers certain words (for example
/// source-language aspect terms) wherever it is.
#[derive(Debug, Clone)]
pub struct PositionalScorer {
    table: HashMap<Vec<TokenId>, Vec<TokenId>>,
    vocab_size: usize,
}

impl PositionalScorer {
    pub fn new(vocab_size: usize) -> Self {
        PositionalScorer {
            table: HashMap::new(),
            vocab_size,
        }
    }

    pub fn memorize(&mut self, input: Vec<TokenId>, target: Vec<TokenId>) {
        self.table.insert(input, target);
    }
}

impl Scorer for PositionalScorer {
    fn score(&self, input: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let mut scores = vec![0.0; self.vocab_size];
        if let Some(target) = self.table.get(input) {
            for &t in target {
                scores[t as usize] = 1.0;
            }
            if let Some(&t) = target.get(prefix.len()) {
                scores[t as usize] = 10.0;
            }
        }
        scores
    }
}
