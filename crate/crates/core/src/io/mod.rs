//! File formats: trial records, output tables and configuration.

mod atomic_write;
pub mod config;
pub mod kv;
pub mod table;
pub mod trials;

pub use atomic_write::write_atomically;
pub use config::RunConfig;
pub use table::Table;
pub use trials::{load_trials, save_trials, TrialReader};
