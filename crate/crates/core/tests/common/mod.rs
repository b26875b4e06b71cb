//! Test-only oracles, kept independent of the library's solution paths.
#![allow(dead_code)]

pub mod fixtures;
pub mod oracle;
