pub mod baseline;
pub mod classifier;
pub mod data;
pub mod density;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod solver;
