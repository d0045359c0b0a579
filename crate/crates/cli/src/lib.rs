//! File formats, CSV artifacts, and study orchestration on top of
//! `gaspipe-core`. The binary in `main.rs` is a thin argument layer over
//! [`commands`].

pub mod bundled;
pub mod commands;
pub mod formats;
pub mod tables;
