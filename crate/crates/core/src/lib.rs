//! Survival regression trees whose internal nodes are split by a
//! kernelized, ridge-regularized dipole-criterion SVM.

pub mod data;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod pipeline;
pub mod qp;
pub mod sim;
pub mod splitter;
pub mod tree;

pub use error::{Error, Result};
