//! Robust density estimation with medians of random forest density estimators.
//!
//! A contaminated sample is cut into disjoint blocks; each block is turned
//! into a forest of random midpoint-split histograms, and the estimate at a
//! point is the normalized pointwise (lower) median of the block forests.
//! Outliers can only move the estimate at `x` through blocks that hold points
//! in `x`'s cells, and the median ignores a minority of such blocks.
//!
//! Modules:
//! - [`geometry`]: boxes, split trees, forests, leaf counting
//! - [`estimator`]: block assignment, fitting and evaluation
//! - [`model_io`]: JSON model files
//! - [`theory`]: rate exponents and parameter recommendations
//! - [`synth`]: synthetic inlier/outlier generators and CSV datasets
//! - [`evaluation`]: grids, MAE, AUC and the benchmark harness
//! - [`diagnostics`]: local outliers, clean blocks, concentration profiles

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod geometry;
pub mod model_io;
mod quadrature;
pub mod rng;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
pub use estimator::{
    BlockAssignment, BlockSize, DomainSpec, EstimatorConfig, FittedMfrde, Quadrature,
};
pub use geometry::{AxisBox, Forest, LeafCounts, Points, SplitTree};
pub use quadrature::lattice_coord;
