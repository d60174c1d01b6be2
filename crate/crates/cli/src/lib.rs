//! Command-line pipeline around the `fairgraph` library: ingest, train,
//! explain, evaluate and topology stages writing reproducible artifacts.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::Method;
