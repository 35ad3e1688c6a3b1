//! Command implementations behind the `lexadapt` binary.

pub mod commands;
pub mod experiments;
