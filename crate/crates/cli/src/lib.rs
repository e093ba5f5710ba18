//! Command-line front end for the `usot` solver suite.

pub mod commands;
pub mod config;
pub mod failure;
pub mod formats;
