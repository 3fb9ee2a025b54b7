//! Literal-to-hyperbole paraphrasing: mask spans that match hyperbolic
//! part-of-speech patterns, over-generate infills, and rank them.

pub mod backend;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod masking;
pub mod overgen;
pub mod pipeline;
pub mod ranker;
pub mod tagger;
pub mod text;
