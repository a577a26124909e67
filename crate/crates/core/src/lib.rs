//! Network-position citation indicator.
//!
//! Builds yearly co-authorship networks from a bibliographic corpus, turns
//! each author's geodesic distances to a year's papers into a 10-bin
//! profile, estimates the citations that position predicts with exact k-NN
//! regression, and ranks authors by position (`s_pos`) and by performance
//! relative to comparable positions (`s_pers`).

pub mod analyses;
pub mod citation_stats;
pub mod corpus;
pub mod distances;
pub mod error;
pub mod graph;
pub mod matching;
pub mod pipeline;
pub mod potential;
pub mod sindex;
pub mod synth;

pub use error::{Error, Result};
