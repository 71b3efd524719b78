//! `bboard` binary support: command-line handling and the HTTP API.

pub mod cli;
pub mod http;
