//! Slow, obviously-correct reference computations for tests.
//!
//! Nothing here shares code with the crates under test; every routine is a
//! direct transcription of a definition as nested loops over plain slices.

pub mod conv;
pub mod linalg;
