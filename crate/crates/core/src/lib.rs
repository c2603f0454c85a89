//! Numerical laboratory for Liouville conformal field theory on bordered surfaces.
//!
//! Bottom-up: model surfaces and their doubles ([`surfaces`]), Laplacian
//! spectra and Gaussian free fields ([`spectral`]), Green functions
//! ([`green`]), regularized fields on meshes ([`field`]), Gaussian
//! multiplicative chaos ([`gmc`]), Liouville correlations ([`lcft`]), the
//! Markov decomposition ([`markov`]), and fusion asymptotics ([`fusion`]).

pub mod cli;
pub mod error;
pub mod field;
pub mod gmc;
pub mod green;
pub mod lcft;
pub mod fusion;
pub mod markov;
pub mod mc;
pub mod quadrature;
pub mod spectral;
pub mod surfaces;

pub use error::{Error, Result};
