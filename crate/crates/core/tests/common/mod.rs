//! Oracles and generators shared by the integration and acceptance tests.
//! Nothing here calls into the automaton's incremental code paths.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use xabsa_core::model::{AspectTerm, Category, LabelCatalog, Polarity, Sentence, SentimentTuple};
use xabsa_core::vocab::{self, TokenId, Vocab};
use xabsa_core::{ConstraintSession, Marker, SpecialTokens};

pub const WORDS: [&str; 24] = [
    "tea",
    "soup",
    "ramen",
    "broth",
    "waiter",
    "menu",
    "Delicious",
    "pricey",
    "cold",
    "warm",
    "but",
    "and",
    "the",
    "noodles",
    "salad",
    "staff",
    "rude",
    "Decor",
    "cozy",
    "wine",
    "slow",
    "fresh",
    "bland",
    "portions",
];

/// Token-level grammar expansion: every complete sequence of at most
/// `max_len` tokens (eos included) that the grammar produces. `content[m]`
/// lists the admissible phrases for marker `m`; a bag is the set of all
/// non-empty strings over its tokens, which callers pass as `Content::Bag`.
pub enum Content {
    Bag(Vec<TokenId>),
    Phrases(Vec<Vec<TokenId>>),
}

fn content_strings(content: &Content, budget: usize) -> Vec<Vec<TokenId>> {
    match content {
        Content::Phrases(ps) => ps.iter().filter(|p| p.len() <= budget).cloned().collect(),
        Content::Bag(tokens) => {
            let mut out = Vec::new();
            let mut layer: Vec<Vec<TokenId>> = vec![vec![]];
            for _ in 0..budget {
                let next: Vec<Vec<TokenId>> = layer
                    .iter()
                    .flat_map(|s| {
                        tokens.iter().map(move |&t| {
                            let mut s = s.clone();
                            s.push(t);
                            s
                        })
                    })
                    .collect();
                out.extend(next.iter().cloned());
                layer = next;
            }
            out
        }
    }
}

pub fn expand_language(
    order: &[Marker],
    specials: &SpecialTokens,
    content: &[Content; 3],
    allow_empty: bool,
    max_len: usize,
) -> HashSet<Vec<TokenId>> {
    let mut out = HashSet::new();
    if allow_empty && max_len >= 1 {
        out.insert(vec![specials.eos]);
    }
    // tuples: body of tuple 1, then ([ ; ] body)*, then eos
    let budget = max_len.saturating_sub(1);
    let mut frontier: Vec<Vec<TokenId>> = tuples_within(order, specials, content, budget, &[]);
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for seq in frontier {
            let mut done = seq.clone();
            done.push(specials.eos);
            out.insert(done);
            let mut with_sep = seq.clone();
            with_sep.extend([specials.open, specials.sep, specials.close]);
            if with_sep.len() < budget {
                next.extend(tuples_within(order, specials, content, budget, &with_sep));
            }
        }
        frontier = next;
    }
    out
}

fn tuples_within(
    order: &[Marker],
    specials: &SpecialTokens,
    content: &[Content; 3],
    budget: usize,
    prefix: &[TokenId],
) -> Vec<Vec<TokenId>> {
    let mut partial = vec![prefix.to_vec()];
    for (i, &m) in order.iter().enumerate() {
        // each later marker needs at least `[ X ]` plus one content token
        let reserved = 4 * (order.len() - i - 1);
        let mut grown = Vec::new();
        for p in &partial {
            let mut head = p.clone();
            head.extend([specials.open, specials.letter(m), specials.close]);
            if head.len() + reserved >= budget {
                continue;
            }
            for c in content_strings(&content[m.index()], budget - head.len() - reserved) {
                let mut s = head.clone();
                s.extend(c);
                grown.push(s);
            }
        }
        partial = grown;
    }
    partial
}

/// Every eos-terminated sequence of at most `max_len` tokens reachable by
/// always picking some token from the session's allowed set.
pub fn mask_reachable(session: &ConstraintSession, max_len: usize) -> HashSet<Vec<TokenId>> {
    let eos = session.specials().eos;
    let mut out = HashSet::new();
    let mut stack = vec![(session.start(), Vec::new())];
    while let Some((state, prefix)) = stack.pop() {
        if prefix.len() >= max_len {
            continue;
        }
        for tok in session.allowed_from(state) {
            let mut seq: Vec<TokenId> = prefix.clone();
            seq.push(tok);
            if tok == eos {
                out.insert(seq);
            } else {
                let next = session.advance(state, tok).expect("allowed token advances");
                stack.push((next, seq));
            }
        }
    }
    out
}

/// Aspect-term tokens of a raw token sequence: whatever follows `[ A ]` up to
/// the next `[` or eos.
pub fn aspect_tokens(tokens: &[TokenId], specials: &SpecialTokens) -> Vec<TokenId> {
    let letter_a = specials.letter(Marker::A);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if i + 2 < tokens.len()
            && tokens[i] == specials.open
            && tokens[i + 1] == letter_a
            && tokens[i + 2] == specials.close
        {
            i += 3;
            while i < tokens.len() && tokens[i] != specials.open && tokens[i] != specials.eos {
                out.push(tokens[i]);
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

pub fn leaked_tokens<'v>(
    tokens: &[TokenId],
    specials: &SpecialTokens,
    sentence: &str,
    vocab: &'v Vocab,
) -> Vec<&'v str> {
    let allowed: BTreeSet<&str> = sentence.split_whitespace().chain(["it"]).collect();
    aspect_tokens(tokens, specials)
        .into_iter()
        .map(|t| vocab.entry(t).unwrap_or("<unk>"))
        .filter(|w| !allowed.contains(w))
        .collect()
}

pub fn with_eos(vocab: &Vocab, text: &str) -> Vec<TokenId> {
    let mut ids = vocab.encode_known(text).unwrap();
    ids.push(vocab.id(vocab::EOS).unwrap());
    ids
}

pub fn random_sentence_text(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(3..=9);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random annotated sentence: aspects are contiguous word spans or implicit,
/// categories come from the catalog. Tuples may repeat.
pub fn random_sentence(rng: &mut impl Rng, id: String, catalog: &LabelCatalog) -> Sentence {
    let text = random_sentence_text(rng);
    let words: Vec<&str> = text.split_whitespace().collect();
    let categories: Vec<&Category> = catalog.categories.iter().collect();
    let n = rng.gen_range(1..=4);
    let tuples = (0..n)
        .map(|_| {
            let aspect = if rng.gen_bool(0.2) {
                AspectTerm::Implicit
            } else {
                let start = rng.gen_range(0..words.len());
                let end = rng.gen_range(start + 1..=(start + 2).min(words.len()));
                AspectTerm::explicit(words[start..end].join(" ")).unwrap()
            };
            let category = (*categories.choose(rng).unwrap()).clone();
            let polarity = *Polarity::ALL.choose(rng).unwrap();
            SentimentTuple::new(aspect, category, polarity)
        })
        .collect();
    Sentence::new(id, "en", text, tuples)
}

pub const STATE_TABLE_SENTENCE: &str = "Delicious tea but pricey soup";

pub struct StateRow {
    pub generated: &'static str,
    /// Prefixes (as vocabulary entries) that fall in this row.
    pub prefixes: Vec<Vec<&'static str>>,
    pub candidates: BTreeSet<String>,
}

/// The thirteen TASD state classes over the reference vocabulary, with their
/// candidate sets written out by hand. Aspect content is the sentence words
/// plus the implicit word; category content is every word of the restaurant
/// category phrases.
pub fn state_table_rows() -> Vec<StateRow> {
    let set = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    let input: Vec<&str> = STATE_TABLE_SENTENCE.split_whitespace().chain(["it"]).collect();
    let categories = [
        "ambience",
        "drinks",
        "food",
        "general",
        "location",
        "miscellaneous",
        "prices",
        "quality",
        "restaurant",
        "service",
        "style_options",
    ];
    let polarity = ["great", "ok", "bad"];
    let union = |a: &[&str], b: &[&str]| set(a).union(&set(b)).cloned().collect::<BTreeSet<String>>();

    let a = vec!["[", "<A>", "]", "tea"];
    let ac = [a.clone(), vec!["[", "<C>", "]", "food", "quality"]].concat();
    let acp = [ac.clone(), vec!["[", "<P>", "]", "great"]].concat();
    let sep = [acp.clone(), vec!["[", "<sep>", "]"]].concat();
    let cut = |v: &[&'static str], drop: usize| v[..v.len() - drop].to_vec();
    let plus = |v: &[&'static str], extra: &[&'static str]| [v, extra].concat();

    vec![
        StateRow {
            generated: "",
            prefixes: vec![vec![]],
            candidates: set(&["["]),
        },
        StateRow {
            generated: "... [A / [C / [P / [;",
            prefixes: vec![cut(&a, 2), cut(&ac, 3), cut(&acp, 2), cut(&sep, 1)],
            candidates: set(&["]"]),
        },
        StateRow {
            generated: "... [A]",
            prefixes: vec![cut(&a, 1)],
            candidates: set(&input),
        },
        StateRow {
            generated: "... [C]",
            prefixes: vec![cut(&ac, 2)],
            candidates: set(&categories),
        },
        StateRow {
            generated: "... [P]",
            prefixes: vec![cut(&acp, 1)],
            candidates: set(&polarity),
        },
        StateRow {
            generated: "... [A] ...",
            prefixes: vec![a.clone()],
            candidates: union(&input, &["["]),
        },
        StateRow {
            generated: "... [C] ...",
            prefixes: vec![cut(&ac, 1), ac.clone()],
            candidates: union(&categories, &["["]),
        },
        StateRow {
            generated: "... [P] ...",
            prefixes: vec![acp.clone()],
            candidates: union(&polarity, &["<eos>", "["]),
        },
        StateRow {
            generated: "... [A] ... [",
            prefixes: vec![plus(&a, &["["])],
            candidates: set(&["<C>"]),
        },
        StateRow {
            generated: "... [C] ... [",
            prefixes: vec![plus(&ac, &["["])],
            candidates: set(&["<P>"]),
        },
        StateRow {
            generated: "... [P] ... [",
            prefixes: vec![plus(&acp, &["["])],
            candidates: set(&["<sep>"]),
        },
        StateRow {
            generated: "... [;]",
            prefixes: vec![sep.clone()],
            candidates: set(&["["]),
        },
        StateRow {
            generated: "... [;] [",
            prefixes: vec![plus(&sep, &["["])],
            candidates: set(&["<A>"]),
        },
    ]
}

/// Checks every prefix of every row; returns the mismatches.
pub fn state_table_mismatches(session: &ConstraintSession, vocab: &Vocab) -> Vec<String> {
    let mut bad = Vec::new();
    for row in state_table_rows() {
        for prefix in &row.prefixes {
            let ids: Vec<TokenId> = prefix.iter().map(|e| vocab.id(e).expect("entry in vocab")).collect();
            let got: BTreeSet<String> = match session.allowed_tokens(&ids) {
                Ok(set) => set.iter().map(|&t| vocab.entry(t).unwrap().to_string()).collect(),
                Err(e) => {
                    bad.push(format!("{:?}: {e}", row.generated));
                    continue;
                }
            };
            if got != row.candidates {
                bad.push(format!(
                    "{:?} after {:?}: got {:?}, want {:?}",
                    row.generated, prefix, got, row.candidates
                ));
            }
        }
    }
    bad
}

pub const MINI_SENTENCE: &str = "tea soup cheap";

pub fn mini_catalog() -> LabelCatalog {
    LabelCatalog::new(
        ["FOOD#QUALITY", "DRINKS#PRICES"]
            .iter()
            .map(|c| c.parse().unwrap())
            .collect(),
    )
}

#[derive(Debug, Default)]
pub struct Equivalence {
    pub reachable: usize,
    pub expanded: usize,
    pub acceptor_checks: usize,
    pub mismatches: Vec<String>,
}

/// Compares three views of the language over sequences of at most `max_len`
/// tokens on the miniature session: mask-reachable sequences, the grammar
/// expansion, and `accepts`. `accepts` is checked on every reachable
/// sequence, on every eos-terminated sequence of at most `exhaustive_len`
/// tokens over the session alphabet plus one foreign token, and on all
/// single-token edits of up to `edit_sample` reachable sequences.
pub fn mini_equivalence(
    task: xabsa_core::Task,
    mode: xabsa_core::ContentMode,
    allow_empty: bool,
    max_len: usize,
    exhaustive_len: usize,
    edit_sample: usize,
) -> Equivalence {
    use xabsa_core::{ContentMode, SessionBuilder};

    let catalog = mini_catalog();
    let mut vocab = Vocab::reference();
    let session = SessionBuilder::new(&catalog)
        .mode(mode)
        .allow_empty(allow_empty)
        .build(MINI_SENTENCE, task, &mut vocab)
        .unwrap();
    let foreign = vocab.intern("zzz");
    let id = |w: &str| vocab.id(w).unwrap();
    let input: Vec<TokenId> = MINI_SENTENCE.split_whitespace().map(id).collect();
    let categories = [vec![id("food"), id("quality")], vec![id("drinks"), id("prices")]];
    let polarity: Vec<TokenId> = ["great", "ok", "bad"].into_iter().map(id).collect();
    let content = match mode {
        ContentMode::Bag => [
            Content::Bag(input.iter().copied().chain([id("it")]).collect()),
            Content::Bag(categories.concat()),
            Content::Bag(polarity.clone()),
        ],
        ContentMode::Trie => {
            let mut grams = vec![vec![id("it")]];
            for i in 0..input.len() {
                for j in i + 1..=input.len() {
                    grams.push(input[i..j].to_vec());
                }
            }
            [
                Content::Phrases(grams),
                Content::Phrases(categories.to_vec()),
                Content::Phrases(polarity.iter().map(|&p| vec![p]).collect()),
            ]
        }
    };
    let specials = *session.specials();
    let reachable = mask_reachable(&session, max_len);
    let expanded = expand_language(task.marker_order(), &specials, &content, allow_empty, max_len);

    let mut eq = Equivalence {
        reachable: reachable.len(),
        expanded: expanded.len(),
        ..Default::default()
    };
    for seq in reachable.symmetric_difference(&expanded).take(5) {
        let side = if reachable.contains(seq) {
            "reachable only"
        } else {
            "grammar only"
        };
        eq.mismatches.push(format!("{side}: {}", vocab.decode(seq)));
    }
    let check = |seq: &[TokenId], eq: &mut Equivalence| {
        if seq.len() > max_len {
            return;
        }
        eq.acceptor_checks += 1;
        let want = expanded.contains(seq);
        if session.accepts(seq) != want && eq.mismatches.len() < 20 {
            eq.mismatches
                .push(format!("accepts({:?}) != {want}", vocab.decode(seq)));
        }
    };
    for seq in &reachable {
        check(seq, &mut eq);
    }

    let mut alphabet: Vec<TokenId> = (0..vocab.len() as TokenId).filter(|&t| t != specials.eos).collect();
    alphabet.sort_unstable();
    assert!(alphabet.contains(&foreign));
    let mut layer: Vec<Vec<TokenId>> = vec![vec![]];
    for _ in 0..exhaustive_len {
        for body in &layer {
            let mut seq = body.clone();
            seq.push(specials.eos);
            check(&seq, &mut eq);
            if !body.is_empty() {
                check(body, &mut eq);
            }
        }
        layer = layer
            .iter()
            .flat_map(|b| {
                alphabet.iter().map(move |&t| {
                    let mut b = b.clone();
                    b.push(t);
                    b
                })
            })
            .collect();
    }

    let mut sample: Vec<&Vec<TokenId>> = reachable.iter().collect();
    sample.sort();
    let step = (sample.len() / edit_sample.max(1)).max(1);
    let full: Vec<TokenId> = alphabet.iter().copied().chain([specials.eos]).collect();
    for seq in sample.into_iter().step_by(step) {
        for i in 0..seq.len() {
            let mut deleted = seq.clone();
            deleted.remove(i);
            check(&deleted, &mut eq);
            for &t in &full {
                let mut sub = seq.clone();
                sub[i] = t;
                check(&sub, &mut eq);
                let mut ins = seq.clone();
                ins.insert(i, t);
                check(&ins, &mut eq);
            }
        }
    }
    eq
}
