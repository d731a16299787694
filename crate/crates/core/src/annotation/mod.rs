//! Blinded pairwise-preference annotation.
//!
//! Annotators see `k` agents under a per-annotator shuffle and pick one or
//! more winners per turn and per conversation. Records are kept in the
//! displayed labels; tallies remap them to methods through the session's
//! permutation, which never leaves the store.

mod replay;
mod store;
mod tally;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use replay::{reported_distribution, ReplayFixture, ReportedDistribution};
pub use store::{AnnotationStore, LogEntry, LogPayload, SubmitAck};
pub use tally::{export_csv, format_winners, tally, Tally};

/// Number of compared agents: the four prompt strategies.
pub const DEFAULT_AGENTS: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("unknown conversation {0}")]
    UnknownConversation(String),
    #[error("no session for annotator {0}")]
    UnknownAnnotator(String),
    #[error("annotator {0} already has a session")]
    SessionExists(String),
    #[error("conversation {conversation} is not assigned to annotator {annotator}")]
    NotAssigned { annotator: String, conversation: String },
    #[error("annotator {annotator} already submitted conversation {conversation}")]
    Duplicate { annotator: String, conversation: String },
    #[error("record for {conversation} is missing turns {missing:?}")]
    MissingTurns { conversation: String, missing: Vec<usize> },
    #[error("record for {conversation} has {got} turns, conversation has {expected}")]
    ExtraTurns {
        conversation: String,
        expected: usize,
        got: usize,
    },
    #[error("empty winner set at {0}")]
    EmptyWinners(String),
    #[error("agent {agent} out of range 1..={k}")]
    InvalidAgent { agent: usize, k: usize },
    #[error("invalid comparison set {conversation}: {message}")]
    InvalidSet { conversation: String, message: String },
    #[error("invalid session request: {0}")]
    InvalidRequest(String),
    #[error("log hash chain broken at entry {0}")]
    ChainBroken(u64),
    #[error("storage: {0}")]
    Storage(String),
}

pub type AnnotationResult<T> = std::result::Result<T, AnnotationError>;

/// Responses of every method for one conversation. `responses[t][m]` is the
/// system turn of method `m + 1` at turn `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSet {
    pub conversation_id: String,
    pub user_turns: Vec<String>,
    pub responses: Vec<Vec<String>>,
}

impl ComparisonSet {
    pub fn turns(&self) -> usize {
        self.user_turns.len()
    }

    pub fn validate(&self, k: usize) -> AnnotationResult<()> {
        let fail = |message: String| {
            Err(AnnotationError::InvalidSet {
                conversation: self.conversation_id.clone(),
                message,
            })
        };
        if self.user_turns.is_empty() {
            return fail("no turns".into());
        }
        if self.responses.len() != self.user_turns.len() {
            return fail(format!(
                "{} user turns but {} response rows",
                self.user_turns.len(),
                self.responses.len()
            ));
        }
        if let Some(t) = self.responses.iter().position(|r| r.len() != k) {
            return fail(format!(
                "turn {} has {} responses, expected {k}",
                t + 1,
                self.responses[t].len()
            ));
        }
        Ok(())
    }
}

/// Bijection from displayed agent label to method, both 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(k: usize) -> Self {
        Self((1..=k).collect())
    }

    /// `mapping[d - 1]` is the method shown as agent `d`.
    pub fn from_mapping(mapping: Vec<usize>) -> AnnotationResult<Self> {
        let k = mapping.len();
        let set: BTreeSet<usize> = mapping.iter().copied().collect();
        if k == 0 || set.len() != k || set.iter().any(|&m| m == 0 || m > k) {
            return Err(AnnotationError::InvalidRequest(format!(
                "{mapping:?} is not a permutation of 1..={k}"
            )));
        }
        Ok(Self(mapping))
    }

    /// Deterministic shuffle derived from the seed and the annotator id.
    pub fn for_annotator(seed: u64, annotator: &str, k: usize) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(annotator.as_bytes());
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        let mut m: Vec<usize> = (1..=k).collect();
        m.shuffle(&mut rng);
        Self(m)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn method_of(&self, displayed: usize) -> Option<usize> {
        displayed.checked_sub(1).and_then(|i| self.0.get(i)).copied()
    }

    pub fn displayed_of(&self, method: usize) -> Option<usize> {
        self.0.iter().position(|&m| m == method).map(|i| i + 1)
    }

    pub fn mapping(&self) -> &[usize] {
        &self.0
    }

    pub fn to_methods(&self, displayed: &BTreeSet<usize>) -> BTreeSet<usize> {
        displayed.iter().filter_map(|&d| self.method_of(d)).collect()
    }

    pub fn to_displayed(&self, methods: &BTreeSet<usize>) -> BTreeSet<usize> {
        methods.iter().filter_map(|&m| self.displayed_of(m)).collect()
    }
}

/// Server-side session state. The permutation is private to the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub annotator: String,
    pub seed: u64,
    pub permutation: Permutation,
    pub conversations: Vec<String>,
}

/// What a client learns about its session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub annotator: String,
    pub conversations: Vec<String>,
    pub agents: usize,
}

/// One annotated conversation in displayed agent labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator: String,
    pub conversation_id: String,
    pub turn_winners: Vec<BTreeSet<usize>>,
    pub conversation_winners: BTreeSet<usize>,
}

impl AnnotationRecord {
    /// Checks coverage and winner sets against a conversation with `turns`
    /// turns and `k` agents.
    pub fn validate(&self, turns: usize, k: usize) -> AnnotationResult<()> {
        if self.turn_winners.len() < turns {
            return Err(AnnotationError::MissingTurns {
                conversation: self.conversation_id.clone(),
                missing: (self.turn_winners.len() + 1..=turns).collect(),
            });
        }
        if self.turn_winners.len() > turns {
            return Err(AnnotationError::ExtraTurns {
                conversation: self.conversation_id.clone(),
                expected: turns,
                got: self.turn_winners.len(),
            });
        }
        let check = |set: &BTreeSet<usize>, at: String| {
            if set.is_empty() {
                return Err(AnnotationError::EmptyWinners(at));
            }
            if let Some(&agent) = set.iter().find(|&&a| a == 0 || a > k) {
                return Err(AnnotationError::InvalidAgent { agent, k });
            }
            Ok(())
        };
        for (t, set) in self.turn_winners.iter().enumerate() {
            check(set, format!("turn {}", t + 1))?;
        }
        check(&self.conversation_winners, "conversation level".into())
    }

    /// The same choices expressed in method labels.
    pub fn remapped(&self, p: &Permutation) -> AnnotationRecord {
        AnnotationRecord {
            annotator: self.annotator.clone(),
            conversation_id: self.conversation_id.clone(),
            turn_winners: self.turn_winners.iter().map(|s| p.to_methods(s)).collect(),
            conversation_winners: p.to_methods(&self.conversation_winners),
        }
    }
}

/// One turn as shown to an annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayedTurn {
    pub turn: usize,
    pub user: String,
    /// `responses[d - 1]` is the response shown as agent `d`.
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayedConversation {
    pub conversation_id: String,
    pub turns: Vec<DisplayedTurn>,
}

impl DisplayedConversation {
    pub fn new(set: &ComparisonSet, p: &Permutation) -> Self {
        let turns = set
            .user_turns
            .iter()
            .zip(&set.responses)
            .enumerate()
            .map(|(t, (user, row))| DisplayedTurn {
                turn: t + 1,
                user: user.clone(),
                responses: (1..=p.k())
                    .map(|d| row[p.method_of(d).expect("bijection") - 1].clone())
                    .collect(),
            })
            .collect();
        Self {
            conversation_id: set.conversation_id.clone(),
            turns,
        }
    }
}
