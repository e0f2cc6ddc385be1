//! Benchmark harness for the bilevel solver: seeded instance generation,
//! a single-loop penalty baseline, experiment drivers, and report output.

pub mod baseline;
pub mod experiment;
pub mod instance;
pub mod libsvm;
pub mod svm;
