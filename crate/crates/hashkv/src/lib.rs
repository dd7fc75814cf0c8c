//! Embedded persistent key-value store built on KV separation with
//! hash-based data grouping, plus a WiscKey-style vLog baseline behind the
//! same interface.

pub mod cache;
pub mod circ;
pub mod config;
pub mod error;
pub mod gc;
pub mod io;
pub mod journal;
pub mod lsm;
pub mod metrics;
pub mod record;
pub mod segment;
pub mod store;
pub mod vlog;

pub use error::{Error, Result};

pub use config::{StoreConfig, ValueBackend};
pub use lsm::ScanLimit;
pub use store::{AuditReport, RecoveryReport, Store};
