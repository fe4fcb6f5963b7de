pub mod cli;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod girsanov;
pub mod linalg;
pub mod lyapunov;
pub mod measure;
pub mod mollify;
pub mod oracle;
pub mod rng;
pub mod solver;
pub mod stats;
