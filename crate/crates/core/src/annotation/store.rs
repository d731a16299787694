use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tally::{export_csv, tally, Tally};
use super::{
    AnnotationError, AnnotationRecord, AnnotationResult, AnnotationSession, ComparisonSet, DisplayedConversation,
    Permutation, SessionView,
};

const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";
const SETS_FILE: &str = "sets.json";
const LOG_FILE: &str = "log.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogPayload {
    Session(AnnotationSession),
    Record(AnnotationRecord),
}

/// One line of the append-only log. `hash` covers the previous hash, the
/// sequence number and the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub prev_hash: String,
    pub payload: LogPayload,
    pub hash: String,
}

fn entry_hash(prev: &str, seq: u64, payload: &LogPayload) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(seq.to_le_bytes());
    h.update(serde_json::to_vec(payload).expect("payload serializes"));
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    last_hash: String,
    sessions: Vec<AnnotationSession>,
    records: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub seq: u64,
    pub hash: String,
}

fn storage(e: impl std::fmt::Display) -> AnnotationError {
    AnnotationError::Storage(e.to_string())
}

/// Sessions and records for one comparison corpus, optionally persisted to a
/// directory as `sets.json`, `log.jsonl` and `snapshot.json`.
#[derive(Debug)]
pub struct AnnotationStore {
    agents: usize,
    dir: Option<PathBuf>,
    sets: BTreeMap<String, ComparisonSet>,
    sessions: BTreeMap<String, AnnotationSession>,
    records: Vec<AnnotationRecord>,
    submitted: BTreeSet<(String, String)>,
    seq: u64,
    last_hash: String,
    snapshot_every: u64,
}

impl AnnotationStore {
    pub fn in_memory(sets: Vec<ComparisonSet>, agents: usize) -> AnnotationResult<Self> {
        if agents == 0 {
            return Err(AnnotationError::InvalidRequest("need at least one agent".into()));
        }
        let mut map = BTreeMap::new();
        for s in sets {
            s.validate(agents)?;
            let id = s.conversation_id.clone();
            if map.insert(id.clone(), s).is_some() {
                return Err(AnnotationError::InvalidSet {
                    conversation: id,
                    message: "duplicate conversation id".into(),
                });
            }
        }
        Ok(Self {
            agents,
            dir: None,
            sets: map,
            sessions: BTreeMap::new(),
            records: Vec::new(),
            submitted: BTreeSet::new(),
            seq: 0,
            last_hash: GENESIS.to_string(),
            snapshot_every: 25,
        })
    }

    /// Opens (or initializes) a persistent store in `dir`, replaying and
    /// verifying the existing log.
    pub fn open(dir: &Path, sets: Vec<ComparisonSet>, agents: usize) -> AnnotationResult<Self> {
        let mut store = Self::in_memory(sets, agents)?;
        std::fs::create_dir_all(dir).map_err(storage)?;
        let sets_path = dir.join(SETS_FILE);
        let sets_json = serde_json::to_string_pretty(&store.sets.values().collect::<Vec<_>>()).map_err(storage)?;
        if sets_path.exists() {
            let existing = std::fs::read_to_string(&sets_path).map_err(storage)?;
            if existing != sets_json {
                return Err(AnnotationError::Storage(format!(
                    "{} holds different comparison sets",
                    sets_path.display()
                )));
            }
        } else {
            std::fs::write(&sets_path, &sets_json).map_err(storage)?;
        }
        for entry in read_log(&dir.join(LOG_FILE))? {
            store.apply(&entry.payload)?;
            store.seq = entry.seq;
            store.last_hash = entry.hash;
        }
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    /// Reopens a store directory using the comparison sets saved in it.
    pub fn open_existing(dir: &Path, agents: usize) -> AnnotationResult<Self> {
        let path = dir.join(SETS_FILE);
        let text =
            std::fs::read_to_string(&path).map_err(|e| AnnotationError::Storage(format!("{}: {e}", path.display())))?;
        let sets: Vec<ComparisonSet> = serde_json::from_str(&text).map_err(storage)?;
        Self::open(dir, sets, agents)
    }

    pub fn with_snapshot_every(mut self, n: u64) -> Self {
        self.snapshot_every = n.max(1);
        self
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn conversation_ids(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn last_hash(&self) -> &str {
        &self.last_hash
    }

    fn apply(&mut self, payload: &LogPayload) -> AnnotationResult<()> {
        match payload {
            LogPayload::Session(s) => {
                self.sessions.insert(s.annotator.clone(), s.clone());
            }
            LogPayload::Record(r) => {
                self.submitted.insert((r.annotator.clone(), r.conversation_id.clone()));
                self.records.push(r.clone());
            }
        }
        Ok(())
    }

    fn append(&mut self, payload: LogPayload) -> AnnotationResult<SubmitAck> {
        let seq = self.seq + 1;
        let hash = entry_hash(&self.last_hash, seq, &payload);
        let entry = LogEntry {
            seq,
            prev_hash: self.last_hash.clone(),
            payload,
            hash: hash.clone(),
        };
        if let Some(dir) = &self.dir {
            let mut line = serde_json::to_string(&entry).map_err(storage)?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(LOG_FILE))
                .map_err(storage)?;
            f.write_all(line.as_bytes()).map_err(storage)?;
            f.sync_data().map_err(storage)?;
        }
        self.apply(&entry.payload)?;
        self.seq = seq;
        self.last_hash = hash.clone();
        if self.dir.is_some() && seq % self.snapshot_every == 0 {
            self.snapshot()?;
        }
        Ok(SubmitAck { seq, hash })
    }

    /// Writes the current state to `snapshot.json` (atomically via rename).
    pub fn snapshot(&self) -> AnnotationResult<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let snap = Snapshot {
            seq: self.seq,
            last_hash: self.last_hash.clone(),
            sessions: self.sessions.values().cloned().collect(),
            records: self.records.clone(),
        };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&snap).map_err(storage)?).map_err(storage)?;
        std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE)).map_err(storage)?;
        Ok(())
    }

    pub fn create_session(
        &mut self,
        annotator: &str,
        conversations: &[String],
        seed: u64,
    ) -> AnnotationResult<SessionView> {
        if annotator.trim().is_empty() {
            return Err(AnnotationError::InvalidRequest("annotator id must be nonempty".into()));
        }
        if conversations.is_empty() {
            return Err(AnnotationError::InvalidRequest("no conversations assigned".into()));
        }
        if let Some(c) = conversations.iter().find(|c| !self.sets.contains_key(*c)) {
            return Err(AnnotationError::UnknownConversation(c.clone()));
        }
        if self.sessions.contains_key(annotator) {
            return Err(AnnotationError::SessionExists(annotator.to_string()));
        }
        let session = AnnotationSession {
            annotator: annotator.to_string(),
            seed,
            permutation: Permutation::for_annotator(seed, annotator, self.agents),
            conversations: conversations.to_vec(),
        };
        self.append(LogPayload::Session(session))?;
        self.session_view(annotator)
    }

    fn session(&self, annotator: &str) -> AnnotationResult<&AnnotationSession> {
        self.sessions
            .get(annotator)
            .ok_or_else(|| AnnotationError::UnknownAnnotator(annotator.to_string()))
    }

    pub fn session_view(&self, annotator: &str) -> AnnotationResult<SessionView> {
        let s = self.session(annotator)?;
        Ok(SessionView {
            annotator: s.annotator.clone(),
            conversations: s.conversations.clone(),
            agents: self.agents,
        })
    }

    /// Server-side only.
    pub fn permutation(&self, annotator: &str) -> AnnotationResult<&Permutation> {
        Ok(&self.session(annotator)?.permutation)
    }

    /// The first assigned conversation this annotator has not submitted yet.
    pub fn next_conversation(&self, annotator: &str) -> AnnotationResult<Option<DisplayedConversation>> {
        let s = self.session(annotator)?;
        let next = s
            .conversations
            .iter()
            .find(|c| !self.submitted.contains(&(annotator.to_string(), (*c).clone())));
        Ok(next.map(|c| DisplayedConversation::new(&self.sets[c], &s.permutation)))
    }

    pub fn submit(&mut self, record: AnnotationRecord) -> AnnotationResult<SubmitAck> {
        let s = self.session(&record.annotator)?;
        if !s.conversations.contains(&record.conversation_id) {
            return Err(AnnotationError::NotAssigned {
                annotator: record.annotator.clone(),
                conversation: record.conversation_id.clone(),
            });
        }
        let key = (record.annotator.clone(), record.conversation_id.clone());
        if self.submitted.contains(&key) {
            return Err(AnnotationError::Duplicate {
                annotator: key.0,
                conversation: key.1,
            });
        }
        let set = self
            .sets
            .get(&record.conversation_id)
            .ok_or_else(|| AnnotationError::UnknownConversation(record.conversation_id.clone()))?;
        record.validate(set.turns(), self.agents)?;
        self.append(LogPayload::Record(record))
    }

    fn with_permutations(&self) -> Vec<(&AnnotationRecord, &Permutation)> {
        self.records
            .iter()
            .map(|r| (r, &self.sessions[&r.annotator].permutation))
            .collect()
    }

    pub fn tally(&self) -> AnnotationResult<Tally> {
        tally(self.agents, self.with_permutations())
    }

    pub fn export_csv(&self) -> AnnotationResult<String> {
        export_csv(self.with_permutations())
    }
}

/// Reads a log file and checks every link of the hash chain.
pub fn read_log(path: &Path) -> AnnotationResult<Vec<LogEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(storage)?;
    let mut prev = GENESIS.to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(storage)?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = i as u64 + 1;
        let entry: LogEntry = serde_json::from_str(&line).map_err(|_| AnnotationError::ChainBroken(seq))?;
        if entry.seq != seq || entry.prev_hash != prev || entry.hash != entry_hash(&prev, seq, &entry.payload) {
            return Err(AnnotationError::ChainBroken(seq));
        }
        prev = entry.hash.clone();
        out.push(entry);
    }
    Ok(out)
}

impl AnnotationStore {
    /// Re-verifies the on-disk log against the in-memory head.
    pub fn verify(&self) -> AnnotationResult<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let entries = read_log(&dir.join(LOG_FILE))?;
        let head = entries.last().map_or(GENESIS, |e| e.hash.as_str());
        if head != self.last_hash {
            return Err(AnnotationError::ChainBroken(self.seq));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets() -> Vec<ComparisonSet> {
        (0..3)
            .map(|i| ComparisonSet {
                conversation_id: format!("c{i}"),
                user_turns: vec!["u1".into(), "u2".into()],
                responses: vec![vec!["r".into(); 4], vec!["s".into(); 4]],
            })
            .collect()
    }

    fn rec(annotator: &str, conv: &str) -> AnnotationRecord {
        AnnotationRecord {
            annotator: annotator.into(),
            conversation_id: conv.into(),
            turn_winners: vec![BTreeSet::from([1]), BTreeSet::from([3, 4])],
            conversation_winners: BTreeSet::from([2]),
        }
    }

    #[test]
    fn session_lifecycle() {
        let mut s = AnnotationStore::in_memory(sets(), 4).unwrap();
        let ids = vec!["c0".to_string(), "c1".to_string()];
        s.create_session("ann", &ids, 1).unwrap();
        assert_eq!(
            s.create_session("ann", &ids, 1).unwrap_err(),
            AnnotationError::SessionExists("ann".into())
        );
        assert!(matches!(
            s.create_session("b", &["zz".to_string()], 1),
            Err(AnnotationError::UnknownConversation(_))
        ));
        assert_eq!(s.next_conversation("ann").unwrap().unwrap().conversation_id, "c0");
        s.submit(rec("ann", "c0")).unwrap();
        assert_eq!(s.next_conversation("ann").unwrap().unwrap().conversation_id, "c1");
        assert!(matches!(
            s.submit(rec("ann", "c0")),
            Err(AnnotationError::Duplicate { .. })
        ));
        assert!(matches!(
            s.submit(rec("ann", "c2")),
            Err(AnnotationError::NotAssigned { .. })
        ));
        s.submit(rec("ann", "c1")).unwrap();
        assert!(s.next_conversation("ann").unwrap().is_none());
        let t = s.tally().unwrap();
        assert_eq!((t.turns, t.conversations, t.turn_ties), (4, 2, 2));
    }

    #[test]
    fn persistent_log_replays_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["c0".to_string(), "c1".to_string()];
        {
            let mut s = AnnotationStore::open(dir.path(), sets(), 4)
                .unwrap()
                .with_snapshot_every(2);
            s.create_session("ann", &ids, 5).unwrap();
            s.submit(rec("ann", "c0")).unwrap();
            s.verify().unwrap();
        }
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let s = AnnotationStore::open_existing(dir.path(), 4).unwrap();
        assert_eq!(s.records().len(), 1);
        assert_eq!(s.permutation("ann").unwrap(), &Permutation::for_annotator(5, "ann", 4));

        let log = dir.path().join(LOG_FILE);
        let text = std::fs::read_to_string(&log).unwrap();
        std::fs::write(&log, text.replace("\"c0\"", "\"c1\"")).unwrap();
        assert!(matches!(
            AnnotationStore::open(dir.path(), sets(), 4),
            Err(AnnotationError::ChainBroken(_))
        ));
    }
}
