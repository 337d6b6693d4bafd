//! Contextual-invariance auditing of forced-choice pronoun generation:
//! templated prompts, collection against chat backends, descriptive
//! statistics and Contextuality-by-Default analysis.

pub mod backend;
pub mod cbd;
pub mod collector;
pub mod config;
pub mod norms;
pub mod pipeline;
pub mod report;
pub mod schema;
pub mod seed;
pub mod simulate;
pub mod stats;
pub mod synthetic;
