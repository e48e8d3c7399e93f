//! Edge-preserving restoration of images treated as histograms of samples from
//! a bivariate density.
//!
//! The estimate splits the image with a partition of unity. Windows where a
//! local template model finds a creased (edge) structure are fitted
//! parametrically; the complementary smooth part is reconstructed with a
//! closed-form thin-plate-spline shrinkage of its Fourier coefficients.

pub mod edges;
pub mod error;
pub mod ltm;
pub mod model;
pub mod noise;
pub mod partition;
pub mod pgm;
pub mod pipeline;
pub mod spectral;
mod optim;

pub use error::{Error, Result, Stage};
pub use ltm::{LtmFit, LtmParams, Window};
pub use model::{DensityGrid, ImageHistogram, TorusPoint};
