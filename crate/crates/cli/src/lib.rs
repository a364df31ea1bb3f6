//! Library surface of the command-line front end: parameter feasibility
//! checks and the fuzzing harness, shared by the binary and the test suites.

pub mod constraints;
pub mod fuzz;
