use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{Schema, BASE_PLACEHOLDERS, SCHEMALESS_PLACEHOLDERS};
use crate::{Error, Result};

/// Cumulative slot assignments, `domain → slot → value`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogState(pub BTreeMap<String, BTreeMap<String, String>>);

impl DialogState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, domain: &str, slot: &str, value: &str) {
        self.0
            .entry(domain.to_string())
            .or_default()
            .insert(slot.to_string(), value.to_string());
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.0.get(domain)?.get(slot).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(BTreeMap::is_empty)
    }

    /// `(domain, slot)` pairs present in the state.
    pub fn slot_keys(&self) -> BTreeSet<(String, String)> {
        self.0
            .iter()
            .flat_map(|(d, slots)| slots.keys().map(move |s| (d.clone(), s.clone())))
            .collect()
    }

    /// `"domain slot value"` triples joined by `" ; "`, domains and slots in
    /// lexicographic order. Empty state serializes to the empty string.
    pub fn serialize(&self) -> String {
        self.0
            .iter()
            .flat_map(|(d, slots)| slots.iter().map(move |(s, v)| format!("{d} {s} {v}")))
            .collect::<Vec<_>>()
            .join(" ; ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    pub system: String,
    #[serde(default)]
    pub state: DialogState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    #[serde(default)]
    pub constraints: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub requested: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub target_entity: String,
}

impl Goal {
    pub fn is_empty(&self) -> bool {
        self.constraints.values().all(BTreeMap::is_empty) && self.requested.values().all(BTreeSet::is_empty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, dev or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    #[serde(default)]
    pub split: Split,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub goal: Option<Goal>,
}

impl Dialog {
    /// System texts in turn order.
    pub fn system_texts(&self) -> Vec<&str> {
        self.turns.iter().map(|t| t.system.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogCorpus {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    pub dialogs: Vec<Dialog>,
}

impl DialogCorpus {
    pub fn split_sizes(&self) -> SplitSizes {
        let count = |s| self.dialogs.iter().filter(|d| d.split == s).count();
        SplitSizes {
            train: count(Split::Train),
            dev: count(Split::Dev),
            test: count(Split::Test),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Dialog> {
        self.dialogs.iter().filter(move |d| d.split == split)
    }

    /// Placeholders permitted in system turns.
    pub fn placeholder_vocab(&self) -> BTreeSet<String> {
        match &self.schema {
            Some(s) => s.placeholders(),
            None => BASE_PLACEHOLDERS
                .iter()
                .chain(SCHEMALESS_PLACEHOLDERS)
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dialogs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let placeholders = self.placeholder_vocab();
        let mut seen = HashSet::new();
        for d in &self.dialogs {
            validate_dialog(d, &placeholders, self.schema.as_ref())?;
            if !seen.insert(d.id.as_str()) {
                return Err(corpus_err(&d.id, "id", "duplicate dialog id"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

fn corpus_err(dialog: &str, path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Corpus {
        dialog: dialog.to_string(),
        path: path.into(),
        message: message.into(),
    }
}

fn placeholders_in(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .filter(|w| w.starts_with('[') && w.ends_with(']') && w.len() > 2)
}

fn validate_dialog(d: &Dialog, placeholders: &BTreeSet<String>, schema: Option<&Schema>) -> Result<()> {
    if d.id.trim().is_empty() {
        return Err(corpus_err("<unnamed>", "id", "empty dialog id"));
    }
    if d.turns.is_empty() {
        return Err(corpus_err(&d.id, "turns", "dialog has no turns"));
    }
    let mut prev: Option<&DialogState> = None;
    for (i, t) in d.turns.iter().enumerate() {
        if t.user.trim().is_empty() {
            return Err(corpus_err(&d.id, format!("turns[{i}].user"), "empty user text"));
        }
        if let Some(p) = placeholders_in(&t.system).find(|p| !placeholders.contains(*p)) {
            return Err(corpus_err(
                &d.id,
                format!("turns[{i}].system"),
                format!("placeholder {p} is not in the placeholder vocabulary"),
            ));
        }
        if let Some(prev) = prev {
            let now = t.state.slot_keys();
            if let Some((dom, slot)) = prev.slot_keys().into_iter().find(|k| !now.contains(k)) {
                return Err(corpus_err(
                    &d.id,
                    format!("turns[{i}].state.{dom}.{slot}"),
                    "state is not cumulative: slot dropped from previous turn",
                ));
            }
        }
        prev = Some(&t.state);
    }
    if let (Some(goal), Some(schema)) = (&d.goal, schema) {
        for (dom, slots) in &goal.constraints {
            let ds = schema
                .domain(dom)
                .ok_or_else(|| corpus_err(&d.id, format!("goal.constraints.{dom}"), "unknown domain"))?;
            for slot in slots.keys() {
                if !ds.constraints.iter().any(|s| &s.name == slot) {
                    return Err(corpus_err(
                        &d.id,
                        format!("goal.constraints.{dom}.{slot}"),
                        "unknown slot",
                    ));
                }
            }
        }
        for (dom, slots) in &goal.requested {
            let ds = schema
                .domain(dom)
                .ok_or_else(|| corpus_err(&d.id, format!("goal.requested.{dom}"), "unknown domain"))?;
            for slot in slots {
                if !ds.requestable.iter().any(|s| &s.name == slot) {
                    return Err(corpus_err(
                        &d.id,
                        format!("goal.requested.{dom}.{slot}"),
                        "unknown slot",
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Parses and validates a corpus from its JSON text.
pub fn parse_corpus(text: &str) -> Result<DialogCorpus> {
    let root: serde_json::Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| corpus_err("<corpus>", "$", "expected a JSON object with a `dialogs` array"))?;
    let schema = match obj.get("schema") {
        Some(v) if !v.is_null() => Some(
            serde_json::from_value::<Schema>(v.clone()).map_err(|e| corpus_err("<corpus>", "schema", e.to_string()))?,
        ),
        _ => None,
    };
    let raw = obj
        .get("dialogs")
        .and_then(|v| v.as_array())
        .ok_or_else(|| corpus_err("<corpus>", "dialogs", "missing `dialogs` array"))?;
    let mut dialogs = Vec::with_capacity(raw.len());
    for (i, v) in raw.iter().enumerate() {
        let id = v
            .get("id")
            .and_then(|x| x.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{i}"));
        let d: Dialog =
            serde_json::from_value(v.clone()).map_err(|e| corpus_err(&id, format!("dialogs[{i}]"), e.to_string()))?;
        dialogs.push(d);
    }
    let corpus = DialogCorpus { schema, dialogs };
    corpus.validate()?;
    Ok(corpus)
}

/// Reads a corpus JSON file (`{"dialogs": [...]}`) and validates it.
pub fn load_corpus(path: &Path) -> Result<DialogCorpus> {
    let text = std::fs::read_to_string(path)?;
    let corpus = parse_corpus(&text)?;
    let sizes = corpus.split_sizes();
    log::info!(
        "loaded {} dialogs from {} (train {}, dev {}, test {})",
        corpus.dialogs.len(),
        path.display(),
        sizes.train,
        sizes.dev,
        sizes.test
    );
    Ok(corpus)
}
