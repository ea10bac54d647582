//! HTTP node, command-line interface, API client and benchmark harness.

pub mod api;
pub mod bench;
pub mod cli;
pub mod client;
