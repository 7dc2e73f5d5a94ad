//! Command-line tools, the live mission service and HTTP clients for remote
//! language and detection models, on top of `travnav-core`.

pub mod cli;
pub mod io;
pub mod remote;
pub mod service;
