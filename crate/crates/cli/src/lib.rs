//! Command-line front end: configuration, experiment dispatch, CSV and SVG output.

pub mod commands;
pub mod config;
pub mod csv;
pub mod svg;
