//! Voxel-based characterization of porous and composite materials.
//!
//! The library turns a segmented voxel image (CT scan, synthetic microstructure)
//! into effective linear-elastic properties without ever extracting a boundary-
//! conforming mesh. The geometry is embedded in a Cartesian grid of high-order
//! hexahedral cells; voxels cut by each cell scale the material locally through
//! an indicator field, and per-voxel stiffness contributions are pre-integrated
//! once per (polynomial degree, voxel tiling) combination so that assembling a
//! cell reduces to a weighted sum over cached matrices.
//!
//! On top of the immersed solver sit three characterization workflows:
//!
//! * **Numerical homogenization** — apparent stiffness tensors under kinematic
//!   uniform (KUBC), static uniform (SUBC) and periodic (PBC) boundary
//!   conditions, including the hierarchy checks between them
//!   ([`homog::order_relation_check`]).
//! * **Direct numerical tensile tests** — frictionless-grip compression/tension
//!   of the full specimen, reported as an effective axial modulus.
//! * **Window sweeps** — moving-window apparent properties over a large scan,
//!   with scatter statistics that quantify representativeness.
//!
//! Modules are layered bottom-up: [`voxel`] and [`material`] hold the inputs,
//! [`mesh`] and [`preint`] the discretization, [`system`] the sparse solver,
//! [`bc`] the load-case generators, [`homog`] the averaging and tensor
//! extraction, and [`validate`] canned benchmark scenarios.

pub mod bc;
pub mod error;
pub mod homog;
pub mod material;
pub mod mesh;
pub mod par;
pub mod preint;
pub mod system;
pub mod validate;
pub mod voxel;

pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
