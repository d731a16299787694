//! Deterministic synthetic multi-domain corpus.
//!
//! Every dialog is built so that the right system turn depends on something
//! said earlier: the second turn acknowledges a constraint the user gave in
//! the first turn, and the details turn answers requests the user only
//! mentioned in the first turn.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Dialog, DialogCorpus, DialogState, Goal, Split, Turn};
use super::schema::{placeholder, DomainSchema, Schema};
use crate::{Error, Result};

const OPENERS: &[&str] = &["", "hello , ", "hi , ", "good morning , "];
const REQUEST_FRAMES: &[&str] = &[
    "later i will need the {list} .",
    "i will also want to know the {list} .",
];
const SECOND_FRAMES: &[&str] = &["{value} please .", "i would like {value} .", "{value} would be good ."];
const FILLERS: &[&str] = &["that sounds good .", "great , thanks .", "ok ."];
const ASK_DETAILS: &[&str] = &[
    "can you give me the details i asked for ?",
    "please send me the information i mentioned .",
    "what were the details i wanted ?",
];
const FILLER_REPLY: &str = "is there anything else i can help you with ?";
const OFFER_TAIL: &str = "would you like more information ?";

/// Marker stored in the dialog state for a requested (not yet answered) slot.
pub const REQUESTED_VALUE: &str = "?";

fn validate_schema(schema: &Schema) -> Result<()> {
    if schema.domains.len() < 2 {
        return Err(Error::Config(format!(
            "synthetic corpus needs at least 2 domains, schema has {}",
            schema.domains.len()
        )));
    }
    for d in &schema.domains {
        if d.constraints.len() < 2 || d.requestable.is_empty() {
            return Err(Error::Config(format!(
                "domain {} needs >= 2 constraint slots and >= 1 requestable slot",
                d.name
            )));
        }
        if d.constraints.iter().any(|s| s.values.is_empty()) {
            return Err(Error::Config(format!("domain {} has a slot without values", d.name)));
        }
    }
    Ok(())
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn noun_list(nouns: &[&str]) -> String {
    nouns.join(" and the ")
}

fn build_dialog(rng: &mut ChaCha8Rng, idx: usize, domain: &DomainSchema) -> Dialog {
    let dom = domain.name.as_str();
    // the user opens with a random slot; the system asks for the first
    // remaining slot in schema order
    let i1 = rng.gen_range(0..domain.constraints.len());
    let i2 = usize::from(i1 == 0);
    let order = [i1, i2];
    let (first, second) = (&domain.constraints[i1], &domain.constraints[i2]);
    let v1 = first.values[rng.gen_range(0..first.values.len())].clone();
    let v2 = second.values[rng.gen_range(0..second.values.len())].clone();

    let n_req = rng.gen_range(1..=domain.requestable.len().min(2));
    let mut req_idx: Vec<usize> = (0..domain.requestable.len()).collect();
    req_idx.shuffle(rng);
    let mut req_idx = req_idx[..n_req].to_vec();
    req_idx.sort_unstable();
    let requests: Vec<_> = req_idx.iter().map(|&i| &domain.requestable[i]).collect();

    let mut state = DialogState::new();
    let mut turns = Vec::new();

    // turn 1: domain, first constraint, and the requests for later
    let req_nouns: Vec<&str> = requests.iter().map(|r| r.noun.as_str()).collect();
    let user1 = format!(
        "{}i am looking for a {} {} . {}",
        pick(rng, OPENERS),
        domain.noun,
        first.user_phrase.replace("{value}", &v1),
        pick(rng, REQUEST_FRAMES).replace("{list}", &noun_list(&req_nouns)),
    );
    let system1 = format!(
        "there are [choice] {}s {} . {}",
        domain.noun, first.ack, second.question
    );
    state.set(dom, &first.name, &v1);
    for r in &requests {
        state.set(dom, &r.name, REQUESTED_VALUE);
    }
    turns.push(Turn {
        user: user1,
        system: system1,
        state: state.clone(),
    });

    // turn 2: bare value for the asked slot; the offer acknowledges both constraints
    let user2 = pick(rng, SECOND_FRAMES).replace("{value}", &v2);
    let acks: Vec<&str> = domain
        .constraints
        .iter()
        .enumerate()
        .filter(|(i, _)| *i == order[0] || *i == order[1])
        .map(|(_, s)| s.ack.as_str())
        .collect();
    let system2 = format!(
        "{} is a {} {} . {}",
        domain.entity_placeholder,
        domain.noun,
        acks.join(" "),
        OFFER_TAIL
    );
    state.set(dom, &second.name, &v2);
    turns.push(Turn {
        user: user2,
        system: system2,
        state: state.clone(),
    });

    for _ in 0..rng.gen_range(0..=2) {
        turns.push(Turn {
            user: pick(rng, FILLERS).to_string(),
            system: FILLER_REPLY.to_string(),
            state: state.clone(),
        });
    }

    let answers: Vec<String> = requests
        .iter()
        .map(|r| format!("the {} is {}", r.noun, placeholder(&r.name)))
        .collect();
    turns.push(Turn {
        user: pick(rng, ASK_DETAILS).to_string(),
        system: format!("sure . {} .", answers.join(" and ")),
        state: state.clone(),
    });

    if rng.gen_bool(0.5) {
        turns.push(Turn {
            user: "thank you , goodbye .".into(),
            system: "you are welcome . goodbye .".into(),
            state: state.clone(),
        });
    }

    let mut constraints = BTreeMap::new();
    constraints.insert(
        dom.to_string(),
        BTreeMap::from([(first.name.clone(), v1), (second.name.clone(), v2)]),
    );
    let requested = BTreeMap::from([(
        dom.to_string(),
        requests.iter().map(|r| r.name.clone()).collect::<BTreeSet<_>>(),
    )]);
    let split = match idx % 10 {
        0 => Split::Test,
        1 => Split::Dev,
        _ => Split::Train,
    };
    Dialog {
        id: format!("syn-{idx:05}"),
        split,
        turns,
        goal: Some(Goal {
            constraints,
            requested,
            target_entity: format!("{dom} {}", idx % 97),
        }),
    }
}

/// Generates `n_dialogs` dialogs from `seed`; domains are drawn uniformly.
/// Dialog `i` goes to the test split when `i % 10 == 0`, dev when `== 1`,
/// train otherwise.
pub fn synthesize_corpus(seed: u64, n_dialogs: usize, schema: &Schema) -> Result<DialogCorpus> {
    if n_dialogs < 1 {
        return Err(Error::Config("n_dialogs must be >= 1".into()));
    }
    validate_schema(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dialogs = (0..n_dialogs)
        .map(|i| {
            let d = &schema.domains[rng.gen_range(0..schema.domains.len())];
            build_dialog(&mut rng, i, d)
        })
        .collect();
    let corpus = DialogCorpus {
        schema: Some(schema.clone()),
        dialogs,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_corpus;

    #[test]
    fn deterministic_and_valid() {
        let s = Schema::restaurant_train();
        let a = synthesize_corpus(11, 40, &s).unwrap();
        let b = synthesize_corpus(11, 40, &s).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = synthesize_corpus(12, 40, &s).unwrap();
        assert_ne!(a, c);
        let reparsed = parse_corpus(&a.to_json().unwrap()).unwrap();
        assert_eq!(reparsed, a);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Schema::restaurant_train();
        assert!(synthesize_corpus(0, 0, &s).is_err());
        let one = Schema {
            domains: vec![s.domains[0].clone()],
        };
        assert!(synthesize_corpus(0, 5, &one).is_err());
    }

    #[test]
    fn second_turn_needs_first_turn_constraint() {
        let c = synthesize_corpus(3, 20, &Schema::restaurant_train()).unwrap();
        for d in &c.dialogs {
            let goal = d.goal.as_ref().unwrap();
            let (dom, slots) = goal.constraints.iter().next().unwrap();
            let sys2 = &d.turns[1].system;
            for slot in slots.keys() {
                assert!(sys2.contains(&placeholder(slot)), "{dom}: {sys2}");
            }
            let last_user = &d.turns[d.turns.len() - 1].user;
            for r in &goal.requested[dom] {
                assert!(!last_user.contains(r.as_str()));
            }
        }
    }
}
