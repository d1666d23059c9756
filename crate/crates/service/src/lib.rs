//! Stage runners, pipeline, HTTP API and CLI for the atlas.

pub mod cli;
pub mod pipeline;
pub mod server;
pub mod stages;
