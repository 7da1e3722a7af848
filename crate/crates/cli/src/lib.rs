//! Support code for the `svdrank` binary.

pub mod server;
