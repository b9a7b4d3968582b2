//! Binary occupancy grids over a lattice shared by every frame of a clip.

use crate::depth_io::PointCloud;
use crate::error::{Error, Result};

pub const DEFAULT_VOXEL_SIZE_MM: f64 = 35.0;

/// Integer voxel coordinate `(x, y, z)`.
pub type VoxelIndex = [u32; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub dims: [u32; 3],
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(origin: [f64; 3], dims: [u32; 3], voxel_size: f64) -> Result<Self> {
        if dims.contains(&0) || !(voxel_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid needs positive dims and voxel size, got {dims:?} / {voxel_size}"
            )));
        }
        Ok(Self {
            origin,
            dims,
            voxel_size,
        })
    }

    pub fn cell_count(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    /// Cell containing `p`, clamped into the lattice.
    #[inline]
    pub fn index_of(&self, p: &[f64; 3]) -> VoxelIndex {
        let mut idx = [0u32; 3];
        for a in 0..3 {
            let cell = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            idx[a] = cell.clamp(0.0, (self.dims[a] - 1) as f64) as u32;
        }
        idx
    }

    pub fn contains(&self, idx: &VoxelIndex) -> bool {
        idx.iter().zip(&self.dims).all(|(i, d)| i < d)
    }
}

/// Lattice spanning the union of all clouds.
pub fn fit_grid(clouds: &[PointCloud], voxel_size: f64) -> Result<GridSpec> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for p in clouds.iter().flat_map(|c| &c.points) {
        any = true;
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if !any {
        return Err(Error::EmptyRegion);
    }
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidArgument(format!("voxel size {voxel_size}")));
    }
    let mut dims = [1u32; 3];
    for a in 0..3 {
        dims[a] = (((hi[a] - lo[a]) / voxel_size).ceil() as u32).max(1);
    }
    GridSpec::new(lo, dims, voxel_size)
}

/// Sparse binary occupancy; `occupied` is sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    occupied: Vec<VoxelIndex>,
}

impl VoxelGrid {
    pub fn from_indices(spec: GridSpec, mut occupied: Vec<VoxelIndex>) -> Result<Self> {
        if let Some(bad) = occupied.iter().find(|i| !spec.contains(i)) {
            return Err(Error::InvalidArgument(format!(
                "voxel {bad:?} outside dims {:?}",
                spec.dims
            )));
        }
        occupied.sort_unstable();
        occupied.dedup();
        Ok(Self { spec, occupied })
    }

    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            occupied: Vec::new(),
        }
    }

    pub fn occupied(&self) -> &[VoxelIndex] {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn is_occupied(&self, idx: &VoxelIndex) -> bool {
        self.occupied.binary_search(idx).is_ok()
    }
}

/// Occupancy is binary no matter how many points share a cell.
pub fn voxelize(cloud: &PointCloud, spec: &GridSpec) -> VoxelGrid {
    let mut occupied: Vec<VoxelIndex> = cloud.points.iter().map(|p| spec.index_of(p)).collect();
    occupied.sort_unstable();
    occupied.dedup();
    VoxelGrid { spec: *spec, occupied }
}
