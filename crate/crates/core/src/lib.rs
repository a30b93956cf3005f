//! Estimating displacement flows from advertising audience counts.
//!
//! Weekly counts of platform users who speak the origin language are
//! collected per destination country, scaled by official diaspora stocks and
//! platform penetration, and turned into estimated inflows and destination
//! shares. The modules follow the data:
//!
//! - [`domain`]: countries, weeks, observations and series
//! - [`ingest`]: audience clients with record/replay, CSV loaders, the snapshot store
//! - [`estimator`]: adjustment, flow and share estimates, normalization, correlation
//! - [`simulate`]: an agent-level ground truth for measuring estimator bias
//! - [`cli`]: the commands behind the `flowlens` binary

pub mod domain;
pub mod estimator;
pub mod ingest;
pub mod simulate;
pub mod cli;
