pub mod ingest;
pub mod session;
pub mod representation;
pub mod sentinel;
pub mod models;
pub mod evaluation;
pub mod explain;
pub mod synth;
pub mod pipeline;
