pub mod archive;
pub mod cli_io;
pub mod encoding;
pub mod engine;
pub mod evaluation;
pub mod grammar;
pub mod mlkit;
pub mod synth;
pub mod variation;
