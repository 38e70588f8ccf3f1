//! Pattern generation, inference runs, validation and experiment reports
//! on top of `turing-core`.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod gates;
pub mod io;
pub mod reference;
