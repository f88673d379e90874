//! BM25 sparse retrieval.

mod analyzer;
mod index;
mod porter;
mod store;

pub use analyzer::{analyze, Analyzer, Stemmer};
pub use index::{build_index, idf, search, tf_weight, try_build_index, Bm25Index, Bm25Params, Posting};
pub use porter::stem as porter_stem;
pub use store::{read_index, write_index, INDEX_FORMAT_VERSION, INDEX_MAGIC};
