//! Compatibility of Gaussian data with latent tree models, without fitting.
//!
//! The crate decides whether a correlation or covariance matrix is consistent
//! with *some* latent tree model, or with a *specific* tree, by checking the
//! complete semialgebraic description of the model class, and provides the
//! statistical machinery around it: exact covariances of Wishart 2-minors,
//! chi-square tetrad tests on quartet systems, inverse-Wishart posterior
//! compatibility probabilities, and a simulation lab.
//!
//! Modules:
//! - [`trees`]: leaf-labeled trees, Newick I/O, quartets and quartet sets;
//! - [`geometry`]: tree metrics, phylogenetic oranges, membership tests and
//!   tree reconstruction;
//! - [`wishart`]: compound matrices, minor estimators, minor covariances and
//!   the samplers behind them;
//! - [`inference`]: tetrad chi-square tests and Bayesian compatibility;
//! - [`simlab`]: data generation and scripted simulation experiments;
//! - [`numerics`], [`rng`]: shared kernels.

pub mod geometry;
pub mod inference;
pub mod io;
pub mod numerics;
pub mod rng;
pub mod simlab;
pub mod trees;
pub mod wishart;
