//! From raw `(user, item, timestamp)` logs to a filtered, sessionized corpus
//! split per user by time.

mod dataset;
mod interactions;
mod sessions;

pub use dataset::{
    corpus_stats, preprocess, split_per_user, CorpusStats, PreprocessConfig, ReferenceStats, Session,
    SessionDataset, Split, SplitStats, Vocabulary, PADDING, REFERENCE_STATS,
};
pub use interactions::{load_interactions, read_interactions, FormatSpec, Interaction, TimeUnit};
pub use sessions::{filter_corpus, sessionize, RawSession};
