//! Protocol runner for synthetic echo datasets: stage orchestration,
//! artifact bookkeeping and the `echosyn` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod protocol;
pub mod stages;
pub mod store;

pub use config::ProtocolConfig;
pub use error::{PipelineError, Result};
pub use protocol::{run_protocol, ProtocolReport};
pub use store::Run;
