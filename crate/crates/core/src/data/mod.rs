//! Dialog corpus model, ingestion, tokenization and the synthetic corpus generator.

mod corpus;
mod examples;
mod schema;
mod synth;
mod tokenizer;

pub use corpus::{load_corpus, parse_corpus, Dialog, DialogCorpus, DialogState, Goal, Split, SplitSizes, Turn};
pub use examples::{make_examples, serialize_context, TrainingExample};
pub use schema::{
    placeholder, DomainSchema, RequestSpec, Schema, SlotSpec, BASE_PLACEHOLDERS, SCHEMALESS_PLACEHOLDERS,
};
pub use synth::synthesize_corpus;
pub use tokenizer::{tokenize, Tokenizer, SPECIAL_TOKENS};

/// Role and marker tokens used when serializing model inputs.
pub mod special {
    pub const PAD: &str = "[PAD]";
    pub const BOS: &str = "[BOS]";
    pub const EOS: &str = "[EOS]";
    pub const UNK: &str = "[UNK]";
    pub const USER: &str = "[USER]";
    pub const SYS: &str = "[SYS]";
    pub const STATE: &str = "[STATE]";
    pub const NOCTX: &str = "[NOCTX]";
    pub const NOSTATE: &str = "[NOSTATE]";
}
