//! Depth-video action recognition with 3D dynamic voxels.
//!
//! Depth clips are back-projected to point clouds, cropped to the action
//! volume, voxelized on a shared lattice and compressed by temporal rank
//! pooling into per-voxel motion values. The motion grids are turned into
//! normalized point sets and classified by a multi-stream point-set network.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod depth_io;
pub mod error;
pub mod geom;
pub mod net;
pub mod pipeline;
pub mod pointset;
pub mod proposal;
pub mod rankpool;
pub mod stats;
pub mod synth;
pub mod voxel;

pub use error::{Error, Result};
