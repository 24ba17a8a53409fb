pub mod embed;
pub mod error;
pub mod eval;
pub mod exec;
pub mod ingest;
pub mod metrics;
pub mod ot;
pub mod pipeline;
pub mod senses;
pub mod sus;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
