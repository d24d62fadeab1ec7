//! Command-line and streaming front end for the text-to-gesture engine.

pub mod engine;
pub mod protocol;
pub mod server;
pub mod ws;
