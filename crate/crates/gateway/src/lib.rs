//! Command-line entry points and the HTTP review service for `labelshed`.

pub mod classes;
pub mod cli;
pub mod server;
pub mod session;
