//! Support library for the `ebtree` command-line tool.

pub mod bench;
