//! Nonconforming rotated-Q1 tetrahedral finite elements for the Stokes
//! equations, paired with continuous piecewise-linear pressure.
//!
//! The crate provides:
//!
//! - [`mesh`]: tetrahedral meshes with derived topology and per-cell affine
//!   maps, plus structured box and ball generators and a plain text format;
//! - [`element`]: the rotated-Q1 reference element (shape functions,
//!   gradients, edge-midpoint and volume quadrature) and the P1 pressure
//!   element;
//! - [`spaces`]: global velocity/pressure degree-of-freedom maps and discrete
//!   fields with midpoint coupling across cells;
//! - [`assembly`]: sparse assembly of the velocity operators (Laplacian and
//!   strain form), the two divergence couplings, pressure Gram matrices and
//!   load vectors;
//! - [`system`]: Dirichlet boundary conditions, the bordered saddle-point
//!   system with an optional zero-mean pressure multiplier, and the sparse
//!   direct solve;
//! - [`analysis`]: error norms, manufactured solutions, convergence studies,
//!   numerical inf-sup and Korn constants, and element-identity verifiers.

// assembly kernels iterate several parallel index spaces at once; plain
// index loops read better there than iterator chains
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod assembly;
pub mod element;
pub mod geometry;
pub mod mesh;
pub mod spaces;
pub mod system;
