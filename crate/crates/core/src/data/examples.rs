use serde::{Deserialize, Serialize};

use super::corpus::{Dialog, DialogState};
use super::special;

/// One response-generation instance: ground-truth context `C`, current user
/// utterance `u_n`, the state `D_{n-1}` before this turn, and target `s_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub dialog_id: String,
    pub turn: usize,
    /// `(u_i, s_i)` for every earlier turn.
    pub context: Vec<(String, String)>,
    pub user: String,
    pub state: DialogState,
    pub target: String,
}

impl TrainingExample {
    /// Number of utterances in the context (two per earlier turn).
    pub fn context_utterances(&self) -> usize {
        2 * self.context.len()
    }
}

/// One example per turn, conditioning on all earlier ground-truth turns.
pub fn make_examples(dialog: &Dialog) -> Vec<TrainingExample> {
    let mut out = Vec::with_capacity(dialog.turns.len());
    let mut state = DialogState::new();
    for (n, turn) in dialog.turns.iter().enumerate() {
        out.push(TrainingExample {
            dialog_id: dialog.id.clone(),
            turn: n,
            context: dialog.turns[..n]
                .iter()
                .map(|t| (t.user.clone(), t.system.clone()))
                .collect(),
            user: turn.user.clone(),
            state: state.clone(),
            target: turn.system.clone(),
        });
        state = turn.state.clone();
    }
    out
}

/// `[USER] u_1 [SYS] s_1 … [USER] u_{n-1} [SYS] s_{n-1}`; empty for no context.
pub fn serialize_context(context: &[(String, String)]) -> String {
    context
        .iter()
        .map(|(u, s)| format!("{} {u} {} {s}", special::USER, special::SYS))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::Turn;

    fn dialog(n: usize) -> Dialog {
        let mut state = DialogState::new();
        let turns = (0..n)
            .map(|i| {
                state.set("train", &format!("slot{i}"), "v");
                Turn {
                    user: format!("user {i}"),
                    system: format!("system {i}"),
                    state: state.clone(),
                }
            })
            .collect();
        Dialog {
            id: "d".into(),
            split: Default::default(),
            turns,
            goal: None,
        }
    }

    #[test]
    fn single_turn_has_empty_context_and_state() {
        let ex = make_examples(&dialog(1));
        assert_eq!(ex.len(), 1);
        assert!(ex[0].context.is_empty());
        assert!(ex[0].state.is_empty());
    }

    #[test]
    fn context_grows_by_two_utterances() {
        let ex = make_examples(&dialog(5));
        assert_eq!(ex.len(), 5);
        for (k, e) in ex.iter().enumerate() {
            assert_eq!(e.context_utterances(), 2 * k);
        }
    }

    #[test]
    fn state_is_previous_turns_and_cumulative() {
        let d = dialog(4);
        let ex = make_examples(&d);
        assert_eq!(ex[3].state, d.turns[2].state);
        let s2 = ex[2].state.slot_keys();
        let s3 = ex[3].state.slot_keys();
        assert!(s3.is_superset(&s2));
    }

    #[test]
    fn target_never_leaks() {
        for e in make_examples(&dialog(4)) {
            assert!(!e.user.contains(&e.target));
            assert!(!serialize_context(&e.context).contains(&e.target));
            assert!(!e.state.serialize().contains(&e.target));
        }
    }

    #[test]
    fn context_serialization() {
        let c = vec![("a b".to_string(), "c".to_string()), ("d".to_string(), "e".to_string())];
        assert_eq!(serialize_context(&c), "[USER] a b [SYS] c [USER] d [SYS] e");
        assert_eq!(serialize_context(&[]), "");
    }
}
