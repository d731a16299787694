use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AnnotationError, AnnotationRecord, AnnotationResult, Permutation};

/// Counts in method labels. Index `m - 1` holds method `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub agents: usize,
    pub turns: usize,
    pub conversations: usize,
    /// Turns where the method was the only winner.
    pub turn_wins: Vec<usize>,
    /// Turns with more than one winner.
    pub turn_ties: usize,
    /// Tied turns the method was part of.
    pub turn_tie_shares: Vec<usize>,
    pub conversation_wins: Vec<usize>,
    pub conversation_ties: usize,
    pub conversation_tie_shares: Vec<usize>,
}

impl Tally {
    pub fn empty(agents: usize) -> Self {
        Self {
            agents,
            turns: 0,
            conversations: 0,
            turn_wins: vec![0; agents],
            turn_ties: 0,
            turn_tie_shares: vec![0; agents],
            conversation_wins: vec![0; agents],
            conversation_ties: 0,
            conversation_tie_shares: vec![0; agents],
        }
    }

    /// Outright wins plus ties account for every annotated turn and conversation.
    pub fn is_conserved(&self) -> bool {
        self.turn_wins.iter().sum::<usize>() + self.turn_ties == self.turns
            && self.conversation_wins.iter().sum::<usize>() + self.conversation_ties == self.conversations
    }

    fn count(wins: &mut [usize], ties: &mut usize, shares: &mut [usize], set: &BTreeSet<usize>) {
        if set.len() == 1 {
            let m = *set.iter().next().expect("one element");
            wins[m - 1] += 1;
        } else {
            *ties += 1;
            for &m in set {
                shares[m - 1] += 1;
            }
        }
    }

    /// Adds a record that is already in method labels.
    pub fn add(&mut self, record: &AnnotationRecord) {
        for set in &record.turn_winners {
            Self::count(&mut self.turn_wins, &mut self.turn_ties, &mut self.turn_tie_shares, set);
        }
        Self::count(
            &mut self.conversation_wins,
            &mut self.conversation_ties,
            &mut self.conversation_tie_shares,
            &record.conversation_winners,
        );
        self.turns += record.turn_winners.len();
        self.conversations += 1;
    }
}

/// Remaps each record through its annotator's permutation and counts.
pub fn tally<'a, I>(agents: usize, records: I) -> AnnotationResult<Tally>
where
    I: IntoIterator<Item = (&'a AnnotationRecord, &'a Permutation)>,
{
    let mut t = Tally::empty(agents);
    for (r, p) in records {
        if p.k() != agents {
            return Err(AnnotationError::InvalidRequest(format!(
                "permutation over {} agents, tally over {agents}",
                p.k()
            )));
        }
        r.validate(r.turn_winners.len(), agents)?;
        t.add(&r.remapped(p));
    }
    debug_assert!(t.is_conserved());
    Ok(t)
}

/// `2` for a single winner, `[3,4]` for a tie.
pub fn format_winners(set: &BTreeSet<usize>) -> String {
    if set.len() == 1 {
        set.iter().next().expect("one element").to_string()
    } else {
        let inner: Vec<String> = set.iter().map(usize::to_string).collect();
        format!("[{}]", inner.join(","))
    }
}

/// CSV with one row per annotated turn, winners in method labels. The
/// conversation-level column is filled on the last turn of each conversation.
pub fn export_csv<'a, I>(records: I) -> AnnotationResult<String>
where
    I: IntoIterator<Item = (&'a AnnotationRecord, &'a Permutation)>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AnnotationError::Storage(e.to_string());
    w.write_record([
        "annotator",
        "conversation_id",
        "turn",
        "turn_level",
        "conversation_level",
    ])
    .map_err(io)?;
    for (r, p) in records {
        let m = r.remapped(p);
        let last = m.turn_winners.len();
        for (t, set) in m.turn_winners.iter().enumerate() {
            let conv = if t + 1 == last {
                format_winners(&m.conversation_winners)
            } else {
                String::new()
            };
            w.write_record([
                m.annotator.as_str(),
                m.conversation_id.as_str(),
                &(t + 1).to_string(),
                &format_winners(set),
                &conv,
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| AnnotationError::Storage(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AnnotationError::Storage(e.to_string()))
}
