//! Curation, embedding, layout and search for an atlas of AI incidents in
//! mobile computing.
//!
//! Stages run in order: [`ingest`] → [`formatter`] → [`assessment`] →
//! [`embedding`] → [`layout`] → [`atlas`]. [`search`] serves keyword search
//! and facet filtering over the finished dataset.

pub mod assessment;
pub mod atlas;
pub mod domain;
pub mod embedding;
pub mod formatter;
pub mod ingest;
pub mod layout;
pub mod search;
pub mod text;
