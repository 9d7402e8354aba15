//! HTTP service and command-line tools around `slangquest-core`.

pub mod adapters;
pub mod api;
pub mod cli;
