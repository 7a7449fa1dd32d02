//! Shared fixtures and independent oracles for the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

pub mod checks;
pub mod gradcheck;
pub mod oracles;
