use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Placeholders that may appear in delexicalized system turns regardless of schema.
pub const BASE_PLACEHOLDERS: &[&str] = &[
    "[name]",
    "[ref]",
    "[choice]",
    "[food]",
    "[pricerange]",
    "[area]",
    "[bookday]",
    "[booktime]",
    "[bookpeople]",
    "[trainid]",
    "[departure]",
    "[destination]",
    "[leaveat]",
    "[arriveby]",
    "[price]",
    "[duration]",
    "[stars]",
    "[type]",
];

/// Further placeholders accepted when a corpus carries no schema, covering
/// the remaining slots a MultiWOZ conversion produces.
pub const SCHEMALESS_PLACEHOLDERS: &[&str] = &[
    "[address]",
    "[phone]",
    "[postcode]",
    "[bookstay]",
    "[entrancefee]",
    "[openhours]",
];

/// The delexicalization placeholder of a slot: `food` → `[food]`.
pub fn placeholder(slot: &str) -> String {
    format!("[{slot}]")
}

/// A constrainable (informable) slot with its surface templates.
/// `{value}` in `user_phrase` is replaced by the slot value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<String>,
    #[serde(default)]
    pub user_phrase: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub ack: String,
}

/// A requestable slot (answered with its placeholder).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub name: String,
    #[serde(default)]
    pub noun: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub name: String,
    #[serde(default)]
    pub noun: String,
    pub entity_placeholder: String,
    pub constraints: Vec<SlotSpec>,
    pub requestable: Vec<RequestSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub domains: Vec<DomainSchema>,
}

impl Schema {
    pub fn domain(&self, name: &str) -> Option<&DomainSchema> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Base placeholders plus every slot, request and entity placeholder of the schema.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = BASE_PLACEHOLDERS.iter().map(|s| s.to_string()).collect();
        for d in &self.domains {
            out.insert(d.entity_placeholder.clone());
            out.extend(d.constraints.iter().map(|s| placeholder(&s.name)));
            out.extend(d.requestable.iter().map(|r| placeholder(&r.name)));
        }
        out
    }

    /// Restaurant and train domains, three constraint slots and three
    /// requestable slots each.
    pub fn restaurant_train() -> Self {
        fn slot(name: &str, values: &[&str], user: &str, q: &str, ack: &str) -> SlotSpec {
            SlotSpec {
                name: name.into(),
                values: values.iter().map(|s| s.to_string()).collect(),
                user_phrase: user.into(),
                question: q.into(),
                ack: ack.into(),
            }
        }
        fn req(name: &str, noun: &str) -> RequestSpec {
            RequestSpec {
                name: name.into(),
                noun: noun.into(),
            }
        }
        let towns = ["cambridge", "london", "ely", "norwich", "stevenage"];
        Schema {
            domains: vec![
                DomainSchema {
                    name: "restaurant".into(),
                    noun: "restaurant".into(),
                    entity_placeholder: "[name]".into(),
                    constraints: vec![
                        slot(
                            "food",
                            &["chinese", "italian", "indian", "thai", "french"],
                            "that serves {value} food",
                            "what type of food would you like ?",
                            "serving [food] food",
                        ),
                        slot(
                            "pricerange",
                            &["cheap", "moderate", "expensive"],
                            "in the {value} price range",
                            "what price range would you like ?",
                            "in the [pricerange] price range",
                        ),
                        slot(
                            "area",
                            &["north", "south", "east", "west", "centre"],
                            "in the {value} of town",
                            "which area of town do you prefer ?",
                            "in the [area] of town",
                        ),
                    ],
                    requestable: vec![
                        req("phone", "phone number"),
                        req("address", "address"),
                        req("postcode", "postcode"),
                    ],
                },
                DomainSchema {
                    name: "train".into(),
                    noun: "train".into(),
                    entity_placeholder: "[trainid]".into(),
                    constraints: vec![
                        slot(
                            "departure",
                            &towns,
                            "leaving from {value}",
                            "where will you be departing from ?",
                            "leaving from [departure]",
                        ),
                        slot(
                            "destination",
                            &towns,
                            "going to {value}",
                            "where are you travelling to ?",
                            "going to [destination]",
                        ),
                        slot(
                            "day",
                            &[
                                "monday",
                                "tuesday",
                                "wednesday",
                                "thursday",
                                "friday",
                                "saturday",
                                "sunday",
                            ],
                            "on {value}",
                            "what day would you like to travel ?",
                            "on [day]",
                        ),
                    ],
                    requestable: vec![
                        req("price", "price"),
                        req("duration", "travel time"),
                        req("arriveby", "arrival time"),
                    ],
                },
            ],
        }
    }
}
