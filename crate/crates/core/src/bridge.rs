//! Mask sidecar: serves the constraint automaton over newline-delimited JSON
//! so external runtimes can fetch per-step admissible token sets.
//!
//! Clients tokenize everything themselves; the server only sees ids.
//!
//! ```text
//! -> {"type":"init","session":"s1","markers":["A","C","P"],"special":{...},"content":{...},"mode":"bag","allow_empty":false,"max_len":256}
//! <- {"type":"ack","session":"s1"}
//! -> {"type":"mask","session":"s1","prefix":[1,4,2]}
//! <- {"type":"allowed","session":"s1","tokens":[9,10,11],"terminal":false}
//! -> {"type":"close","session":"s1"}
//! <- {"type":"ack","session":"s1"}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::net::TcpListener;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::constrain::{CandidateSets, ConstraintError, ConstraintSession, PhraseTrie, SpecialTokens, DEFAULT_MAX_LEN};
use crate::model::Marker;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetterIds {
    #[serde(rename = "A")]
    pub a: TokenId,
    #[serde(rename = "C")]
    pub c: TokenId,
    #[serde(rename = "P")]
    pub p: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub open: TokenId,
    pub close: TokenId,
    pub sep: TokenId,
    pub eos: TokenId,
    pub letters: LetterIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WireMode {
    #[default]
    Bag,
    Trie,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitMessage {
    pub session: String,
    pub markers: Vec<String>,
    pub special: SpecialIds,
    #[serde(default)]
    pub content: BTreeMap<String, Vec<TokenId>>,
    #[serde(default)]
    pub mode: WireMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrases: Option<BTreeMap<String, Vec<Vec<TokenId>>>>,
    #[serde(default)]
    pub allow_empty: bool,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Init(InitMessage),
    Mask { session: String, prefix: Vec<TokenId> },
    Close { session: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    DuplicateSession,
    InvalidConfig,
    UnknownSession,
    IllFormedPrefix,
    BadRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ack {
        session: String,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
    Allowed {
        session: String,
        tokens: Vec<TokenId>,
        terminal: bool,
    },
}

impl Response {
    fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Response::Error {
            code,
            detail: detail.into(),
        }
    }
}

impl InitMessage {
    /// Wire form of an in-process session.
    pub fn from_session(session_id: impl Into<String>, session: &ConstraintSession) -> Self {
        let sp = session.specials();
        let (mode, content, phrases) = match session.candidates() {
            CandidateSets::Bag(bags) => (
                WireMode::Bag,
                Marker::ALL
                    .iter()
                    .map(|m| (m.letter().to_string(), bags[m.index()].iter().copied().collect()))
                    .collect(),
                None,
            ),
            CandidateSets::Trie(tries) => (
                WireMode::Trie,
                BTreeMap::new(),
                Some(
                    Marker::ALL
                        .iter()
                        .map(|m| (m.letter().to_string(), tries[m.index()].phrases()))
                        .collect(),
                ),
            ),
        };
        InitMessage {
            session: session_id.into(),
            markers: session.marker_order().iter().map(|m| m.letter().to_string()).collect(),
            special: SpecialIds {
                open: sp.open,
                close: sp.close,
                sep: sp.sep,
                eos: sp.eos,
                letters: LetterIds {
                    a: sp.letter(Marker::A),
                    c: sp.letter(Marker::C),
                    p: sp.letter(Marker::P),
                },
            },
            content,
            mode,
            phrases,
            allow_empty: session.allow_empty(),
            max_len: session.max_len(),
        }
    }

    pub fn to_session(&self) -> Result<ConstraintSession, ConstraintError> {
        let invalid = |m: String| ConstraintError::InvalidConfig(m);
        let markers = self
            .markers
            .iter()
            .map(|m| m.parse::<Marker>().map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        for key in self.content.keys().chain(self.phrases.iter().flat_map(|p| p.keys())) {
            key.parse::<Marker>().map_err(|e| invalid(e.to_string()))?;
        }
        let sp = &self.special;
        let specials = SpecialTokens {
            open: sp.open,
            close: sp.close,
            sep: sp.sep,
            eos: sp.eos,
            letters: [sp.letters.a, sp.letters.c, sp.letters.p],
        };
        let candidates = match self.mode {
            WireMode::Bag => {
                let bag = |m: Marker| -> BTreeSet<TokenId> {
                    self.content.get(m.letter()).into_iter().flatten().copied().collect()
                };
                CandidateSets::Bag([bag(Marker::A), bag(Marker::C), bag(Marker::P)])
            }
            WireMode::Trie => {
                let phrases = self
                    .phrases
                    .as_ref()
                    .ok_or_else(|| invalid("trie mode requires `phrases`".into()))?;
                let mut tries: [PhraseTrie; 3] = Default::default();
                for m in Marker::ALL {
                    for p in phrases.get(m.letter()).into_iter().flatten() {
                        if p.is_empty() {
                            return Err(invalid(format!("empty phrase for marker {}", m.letter())));
                        }
                        tries[m.index()].insert(p);
                    }
                }
                CandidateSets::Trie(tries)
            }
        };
        ConstraintSession::new(markers, specials, candidates, self.allow_empty, self.max_len)
    }
}

/// Initialized sessions by id. Sessions never change after `init`.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    sessions: RwLock<HashMap<String, Arc<ConstraintSession>>>,
}

impl SessionRegistry {
    pub fn new() -> Self {
        SessionRegistry::default()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn handle_init(&self, msg: &InitMessage) -> Response {
        let session = match msg.to_session() {
            Ok(s) => s,
            Err(e) => return Response::error(ErrorCode::InvalidConfig, e.to_string()),
        };
        let mut sessions = self.sessions.write().expect("registry lock");
        if sessions.contains_key(&msg.session) {
            return Response::error(ErrorCode::DuplicateSession, format!("session `{}` exists", msg.session));
        }
        sessions.insert(msg.session.clone(), Arc::new(session));
        Response::Ack {
            session: msg.session.clone(),
        }
    }

    pub fn handle_mask(&self, session_id: &str, prefix: &[TokenId]) -> Response {
        let Some(session) = self.sessions.read().expect("registry lock").get(session_id).cloned() else {
            return Response::error(ErrorCode::UnknownSession, format!("no session `{session_id}`"));
        };
        match session.allowed_tokens(prefix) {
            Ok(allowed) => Response::Allowed {
                session: session_id.to_string(),
                terminal: allowed.contains(&session.specials().eos),
                tokens: allowed.into_iter().collect(),
            },
            Err(e) => Response::error(ErrorCode::IllFormedPrefix, e.to_string()),
        }
    }

    pub fn handle_close(&self, session_id: &str) -> Response {
        match self.sessions.write().expect("registry lock").remove(session_id) {
            Some(_) => Response::Ack {
                session: session_id.to_string(),
            },
            None => Response::error(ErrorCode::UnknownSession, format!("no session `{session_id}`")),
        }
    }

    pub fn handle(&self, request: &Request) -> Response {
        match request {
            Request::Init(msg) => self.handle_init(msg),
            Request::Mask { session, prefix } => self.handle_mask(session, prefix),
            Request::Close { session } => self.handle_close(session),
        }
    }

    /// One request line in, one response line out (without the newline).
    pub fn handle_line(&self, line: &str) -> String {
        let response = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => Response::error(ErrorCode::BadRequest, e.to_string()),
        };
        serde_json::to_string(&response).expect("response serializes")
    }
}

/// Serve one line-delimited stream until EOF. Blank lines are ignored.
pub fn serve_lines<R: BufRead, W: Write>(registry: &SessionRegistry, reader: R, mut writer: W) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", registry.handle_line(&line))?;
        writer.flush()?;
    }
    Ok(())
}

/// Accept connections forever, one thread per connection, all sharing the
/// registry.
pub fn serve_tcp(listener: TcpListener, registry: Arc<SessionRegistry>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let registry = Arc::clone(&registry);
        std::thread::spawn(move || {
            let _ = stream.set_nodelay(true);
            let reader = match stream.try_clone() {
                Ok(s) => io::BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve_lines(&registry, reader, io::BufWriter::new(stream));
        });
    }
    Ok(())
}
