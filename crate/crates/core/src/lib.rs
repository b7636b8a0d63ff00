//! Cross-lingual knowledge graph alignment.
//!
//! Two views propose entity alignments between a pair of graphs: an
//! interaction-based attribute model that compares translated values of
//! aligned attributes, and a TransE relationship model trained on triples
//! swapped through known alignments. A bootstrap loop merges both views,
//! grows the seed set of entities, relations, attributes and values, and
//! retrains until no new alignment appears.

pub mod attribute;
pub mod error;
pub mod eval;
pub mod joint;
pub mod kg;
pub mod relation;
pub mod similarity;
pub mod synth;
pub mod translator;

pub use error::{Error, Result};
