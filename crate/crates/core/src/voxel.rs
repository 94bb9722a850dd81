//! Voxel images, segmentation, and synthetic unit-cell geometries.
//!
//! A [`VoxelGrid`] is a raw scalar image (CT intensities, Hounsfield-like
//! units) with physical spacing. Segmenting it with a threshold yields an
//! [`IndicatorField`], the geometry representation used by the immersed
//! solver: every voxel is either solid (`α = 1`) or void (`α = α_void`, a tiny
//! positive stiffness scale that keeps the fictitious domain well-posed).
//!
//! Voxels are laid out x-fastest: `index = x + nx·(y + ny·z)`.
//!
//! Synthetic generators produce the two benchmark geometries used throughout
//! the validation suite: a cubic cell with a centered cubic void and a cubic
//! cell with a centered spherical particle (two solid phases). Both rasterize
//! by voxel-center membership — a voxel belongs to the feature iff its center
//! point lies strictly inside — which matches the binary α model; there is no
//! volume-fraction antialiasing.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default stiffness scale assigned to void voxels. Small enough that the
/// fictitious material carries negligible load, large enough to keep the
/// stiffness matrix numerically regular.
pub const DEFAULT_ALPHA_VOID: f64 = 1e-9;

/// Largest admissible `alpha_void`. Above this the fictitious material starts
/// to contribute visibly to homogenized stiffness.
pub const MAX_ALPHA_VOID: f64 = 1e-6;

/// Compact bit set used for per-voxel boolean masks (solid/void, phase ids).
/// At CT scale a `Vec<f64>` indicator would cost ~1 GB; one bit per voxel
/// keeps it at ~15 MB.
#[derive(Debug, Clone, PartialEq)]
pub struct BitMask {
    words: Vec<u64>,
    len: usize,
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / 64];
        if value {
            *w |= 1 << (i % 64);
        } else {
            *w &= !(1 << (i % 64));
        }
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Element type of a raw voxel file. Integers are unsigned little-endian,
/// floats IEEE-754 little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    F32,
    F64,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// JSON sidecar describing a raw voxel file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    /// Voxel counts (nx, ny, nz).
    pub dims: [usize; 3],
    /// Physical voxel spacing in mm.
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    /// Memory layout; only "x-fastest" is supported.
    #[serde(default = "default_order")]
    pub order: String,
}

fn default_order() -> String {
    "x-fastest".to_string()
}

impl GridMeta {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Input(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Input(format!(
                "grid spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if self.order != "x-fastest" {
            return Err(Error::Input(format!(
                "unsupported voxel order {:?}; only \"x-fastest\" is implemented",
                self.order
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Scalar 3D image with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    /// Voxel counts (nx, ny, nz), each ≥ 1.
    pub dims: [usize; 3],
    /// Voxel spacing in mm, each > 0.
    pub spacing: [f64; 3],
    /// Intensities, x-fastest, `data.len() == nx·ny·nz`.
    pub data: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let meta = GridMeta { dims, spacing_mm: spacing, dtype: Dtype::F64, order: default_order() };
        meta.validate()?;
        if data.len() != meta.voxel_count() {
            return Err(Error::Input(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                meta.voxel_count()
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }
}

/// Per-voxel indicator field: solid voxels carry α = 1, void voxels the small
/// positive `alpha_void`. Stored as a bit mask plus the scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    solid: BitMask,
    solid_count: usize,
    alpha_void: f64,
}

impl IndicatorField {
    /// Builds a field from a solid mask. Validates `alpha_void` ∈ (0, 1e-6].
    pub fn from_mask(
        dims: [usize; 3],
        spacing: [f64; 3],
        solid: BitMask,
        alpha_void: f64,
    ) -> Result<Self> {
        check_alpha_void(alpha_void)?;
        let n = dims[0] * dims[1] * dims[2];
        if solid.len() != n {
            return Err(Error::Input(format!(
                "mask length {} does not match dims {:?}",
                solid.len(),
                dims
            )));
        }
        if dims.iter().any(|&d| d == 0) || spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Input("dims must be >= 1 and spacing > 0".into()));
        }
        let solid_count = solid.count_ones();
        Ok(Self { dims, spacing, solid, solid_count, alpha_void })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn voxel_count(&self) -> usize {
        self.solid.len()
    }

    #[inline]
    pub fn is_solid(&self, idx: usize) -> bool {
        self.solid.get(idx)
    }

    /// α value of one voxel: exactly `1.0` or `alpha_void`.
    #[inline]
    pub fn alpha_at(&self, idx: usize) -> f64 {
        if self.solid.get(idx) {
            1.0
        } else {
            self.alpha_void
        }
    }

    pub fn alpha_void(&self) -> f64 {
        self.alpha_void
    }

    pub fn solid_count(&self) -> usize {
        self.solid_count
    }

    pub fn void_count(&self) -> usize {
        self.voxel_count() - self.solid_count
    }

    /// Returns the same geometry with a different void stiffness scale.
    pub fn with_alpha_void(mut self, alpha_void: f64) -> Result<Self> {
        check_alpha_void(alpha_void)?;
        self.alpha_void = alpha_void;
        Ok(self)
    }

    /// Physical edge lengths of the full image, mm.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// Extracts a sub-image of `dims` voxels starting at `origin` (voxel
    /// coordinates). Fails if the window exceeds the image.
    pub fn window(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<IndicatorField> {
        for d in 0..3 {
            if dims[d] == 0 || origin[d] + dims[d] > self.dims[d] {
                return Err(Error::Geometry(format!(
                    "window origin {:?} + dims {:?} exceeds image dims {:?}",
                    origin, dims, self.dims
                )));
            }
        }
        let mut mask = BitMask::zeros(dims[0] * dims[1] * dims[2]);
        let mut out = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let src = self.index(origin[0] + x, origin[1] + y, origin[2] + z);
                    mask.set(out, self.solid.get(src));
                    out += 1;
                }
            }
        }
        IndicatorField::from_mask(dims, self.spacing, mask, self.alpha_void)
    }

    /// Tiles the field `counts` times along each axis (periodic repetition).
    pub fn tile(&self, counts: [usize; 3]) -> Result<IndicatorField> {
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Input("tile counts must be >= 1".into()));
        }
        let dims = [
            self.dims[0] * counts[0],
            self.dims[1] * counts[1],
            self.dims[2] * counts[2],
        ];
        let mut mask = BitMask::zeros(dims[0] * dims[1] * dims[2]);
        let mut out = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let src = self.index(x % self.dims[0], y % self.dims[1], z % self.dims[2]);
                    mask.set(out, self.solid.get(src));
                    out += 1;
                }
            }
        }
        IndicatorField::from_mask(dims, self.spacing, mask, self.alpha_void)
    }
}

fn check_alpha_void(alpha_void: f64) -> Result<()> {
    if !(alpha_void.is_finite() && alpha_void > 0.0 && alpha_void <= MAX_ALPHA_VOID) {
        return Err(Error::Input(format!(
            "alpha_void must lie in (0, {MAX_ALPHA_VOID:e}], got {alpha_void:e}"
        )));
    }
    Ok(())
}

/// Two-phase voxel map: matrix (0) or particle (1). Both phases are solid;
/// this is the geometry input for particle-reinforced composites.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    particle: BitMask,
}

impl PhaseMap {
    pub fn voxel_count(&self) -> usize {
        self.particle.len()
    }

    #[inline]
    pub fn is_particle(&self, idx: usize) -> bool {
        self.particle.get(idx)
    }

    /// Fraction of voxels assigned to the particle phase.
    pub fn particle_fraction(&self) -> f64 {
        self.particle.count_ones() as f64 / self.voxel_count() as f64
    }
}

/// Neighborhood used by [`flood_fill_clean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors only — conservative against diagonal "leaks" through
    /// checkerboard noise. The default.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

/// Reads a raw little-endian voxel file described by `meta`.
///
/// The file length must equal `dims product · element size` exactly;
/// intensities are widened to `f64`.
pub fn load_voxel_grid(path: &Path, meta: &GridMeta) -> Result<VoxelGrid> {
    meta.validate()?;
    let n = meta.voxel_count();
    let expected = n * meta.dtype.bytes();
    let actual = fs::metadata(path)?.len();
    if actual != expected as u64 {
        return Err(Error::Input(format!(
            "file {} holds {} bytes but dims {:?} with dtype {:?} require {} bytes",
            path.display(),
            actual,
            meta.dims,
            meta.dtype,
            expected
        )));
    }
    let mut bytes = Vec::with_capacity(expected);
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(Error::Input(format!(
            "short read on {}: got {} of {} bytes",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let data: Vec<f64> = match meta.dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as f64).collect(),
        Dtype::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    VoxelGrid::new(meta.dims, meta.spacing_mm, data)
}

/// Conventional sidecar location for a raw file: same stem, `.json` extension.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Reads a [`GridMeta`] sidecar.
pub fn read_sidecar(path: &Path) -> Result<GridMeta> {
    let text = fs::read_to_string(path)?;
    let meta: GridMeta = serde_json::from_str(&text)?;
    meta.validate()?;
    Ok(meta)
}

/// Writes an indicator field as a raw u8 mask (1 = solid, 0 = void) with a
/// matching JSON sidecar next to it.
pub fn write_mask(field: &IndicatorField, raw_path: &Path) -> Result<()> {
    let mut bytes = vec![0u8; field.voxel_count()];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = field.is_solid(i) as u8;
    }
    fs::write(raw_path, &bytes)?;
    let meta = GridMeta {
        dims: field.dims,
        spacing_mm: field.spacing,
        dtype: Dtype::U8,
        order: default_order(),
    };
    fs::write(sidecar_path(raw_path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Thresholds a grid into an indicator field: voxels with intensity
/// `>= threshold` become solid, the rest void with stiffness scale
/// `alpha_void`.
pub fn segment_threshold(
    grid: &VoxelGrid,
    threshold: f64,
    alpha_void: f64,
) -> Result<IndicatorField> {
    let mut mask = BitMask::zeros(grid.voxel_count());
    for (i, &v) in grid.data.iter().enumerate() {
        if v >= threshold {
            mask.set(i, true);
        }
    }
    IndicatorField::from_mask(grid.dims, grid.spacing, mask, alpha_void)
}

/// Keeps only the largest connected solid component; every other solid voxel
/// becomes void. Components are discovered by breadth-first search in
/// ascending linear-index order, so a size tie resolves to the component with
/// the lowest seed index — deterministic by construction. Idempotent.
///
/// Fails on a field without any solid voxel (nothing to retain).
pub fn flood_fill_clean(field: &IndicatorField, connectivity: Connectivity) -> Result<IndicatorField> {
    let n = field.voxel_count();
    if field.solid_count() == 0 {
        return Err(Error::Geometry("empty geometry: no solid voxels to clean".into()));
    }
    let neighbors: Vec<[i64; 3]> = match connectivity {
        Connectivity::Six => vec![
            [-1, 0, 0],
            [1, 0, 0],
            [0, -1, 0],
            [0, 1, 0],
            [0, 0, -1],
            [0, 0, 1],
        ],
        Connectivity::TwentySix => {
            let mut v = Vec::with_capacity(26);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy, dz) != (0, 0, 0) {
                            v.push([dx, dy, dz]);
                        }
                    }
                }
            }
            v
        }
    };

    fn bfs(
        field: &IndicatorField,
        neighbors: &[[i64; 3]],
        seed: usize,
        visited: &mut BitMask,
        queue: &mut Vec<u32>,
        mut touch: impl FnMut(usize),
    ) {
        let [nx, ny, nz] = field.dims;
        queue.clear();
        queue.push(seed as u32);
        visited.set(seed, true);
        touch(seed);
        let mut head = 0;
        while head < queue.len() {
            let cur = queue[head] as usize;
            head += 1;
            let x = (cur % nx) as i64;
            let y = (cur / nx % ny) as i64;
            let z = (cur / (nx * ny)) as i64;
            for d in neighbors {
                let (px, py, pz) = (x + d[0], y + d[1], z + d[2]);
                if px < 0 || py < 0 || pz < 0 || px >= nx as i64 || py >= ny as i64 || pz >= nz as i64
                {
                    continue;
                }
                let q = px as usize + nx * (py as usize + ny * pz as usize);
                if field.is_solid(q) && !visited.get(q) {
                    visited.set(q, true);
                    queue.push(q as u32);
                    touch(q);
                }
            }
        }
    }

    // Pass 1: find the seed of the largest component. Scanning ascending means
    // each component is first seen at its own minimum linear index, so keeping
    // strictly larger sizes implements the lowest-seed tie-break.
    let mut visited = BitMask::zeros(n);
    let mut queue: Vec<u32> = Vec::new();
    let mut best_seed = 0usize;
    let mut best_size = 0usize;
    for seed in 0..n {
        if field.is_solid(seed) && !visited.get(seed) {
            let mut size = 0usize;
            bfs(field, &neighbors, seed, &mut visited, &mut queue, |_| size += 1);
            if size > best_size {
                best_size = size;
                best_seed = seed;
            }
        }
    }

    // Pass 2: re-trace the winning component into the output mask.
    let mut kept = BitMask::zeros(n);
    let mut visited = BitMask::zeros(n);
    bfs(field, &neighbors, best_seed, &mut visited, &mut queue, |i| kept.set(i, true));
    IndicatorField::from_mask(field.dims, field.spacing, kept, field.alpha_void())
}

/// Fraction of void voxels, in `[0, 1]`.
pub fn porosity(field: &IndicatorField) -> f64 {
    field.void_count() as f64 / field.voxel_count() as f64
}

/// Builds a cubic cell of physical edge `edge` mm with a centered cubic void
/// of edge `void_edge`, rasterized at `resolution` voxels per edge. A voxel is
/// void iff its center lies strictly inside the void cube.
pub fn make_cubic_void_cell(edge: f64, void_edge: f64, resolution: usize) -> Result<IndicatorField> {
    if !(edge.is_finite() && edge > 0.0) {
        return Err(Error::Input(format!("cell edge must be positive, got {edge}")));
    }
    if !(void_edge.is_finite() && (0.0..edge).contains(&void_edge)) {
        return Err(Error::Input(format!(
            "void edge must satisfy 0 <= void_edge < edge, got {void_edge} (edge {edge})"
        )));
    }
    if resolution < 2 {
        return Err(Error::Input(format!("resolution must be >= 2, got {resolution}")));
    }
    let n = resolution;
    let s = edge / n as f64;
    let half = void_edge / 2.0;
    let center = edge / 2.0;
    // Per-axis membership is identical, so classify one axis and reuse it.
    let inside: Vec<bool> = (0..n)
        .map(|i| ((i as f64 + 0.5) * s - center).abs() < half)
        .collect();
    let mut mask = BitMask::zeros(n * n * n);
    let mut idx = 0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let void = inside[x] && inside[y] && inside[z];
                mask.set(idx, !void);
                idx += 1;
            }
        }
    }
    IndicatorField::from_mask([n, n, n], [s, s, s], mask, DEFAULT_ALPHA_VOID)
}

/// Builds a two-phase cubic cell with a centered spherical particle whose
/// nominal volume fraction is `particle_fraction`; the radius follows from
/// `r = edge·(3 c_p / 4π)^{1/3}`. Voxel-center rasterization as above.
///
/// `particle_fraction` must lie in `[0, π/6)` so the sphere stays inside the
/// cell.
pub fn make_sphere_cell(edge: f64, particle_fraction: f64, resolution: usize) -> Result<PhaseMap> {
    if !(edge.is_finite() && edge > 0.0) {
        return Err(Error::Input(format!("cell edge must be positive, got {edge}")));
    }
    let max_frac = std::f64::consts::PI / 6.0;
    if !(particle_fraction.is_finite() && (0.0..max_frac).contains(&particle_fraction)) {
        return Err(Error::Input(format!(
            "particle volume fraction must lie in [0, {max_frac:.6}), got {particle_fraction}"
        )));
    }
    if resolution < 2 {
        return Err(Error::Input(format!("resolution must be >= 2, got {resolution}")));
    }
    let n = resolution;
    let s = edge / n as f64;
    let r = sphere_radius(edge, particle_fraction);
    let r2 = r * r;
    let center = edge / 2.0;
    let coord: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * s - center).collect();
    let mut particle = BitMask::zeros(n * n * n);
    let mut idx = 0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d2 = coord[x] * coord[x] + coord[y] * coord[y] + coord[z] * coord[z];
                if d2 < r2 {
                    particle.set(idx, true);
                }
                idx += 1;
            }
        }
    }
    Ok(PhaseMap { dims: [n, n, n], spacing: [s, s, s], particle })
}

/// Radius of a centered sphere with volume fraction `c_p` in a cube of edge
/// `edge`: `r = edge·(3 c_p / 4π)^{1/3}`.
pub fn sphere_radius(edge: f64, particle_fraction: f64) -> f64 {
    edge * (3.0 * particle_fraction / (4.0 * std::f64::consts::PI)).cbrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn field_from_bools(dims: [usize; 3], solid: &[bool]) -> IndicatorField {
        let mut mask = BitMask::zeros(solid.len());
        for (i, &s) in solid.iter().enumerate() {
            mask.set(i, s);
        }
        IndicatorField::from_mask(dims, [1.0, 1.0, 1.0], mask, DEFAULT_ALPHA_VOID).unwrap()
    }

    #[test]
    fn bitmask_set_get_count() {
        let mut m = BitMask::zeros(130);
        m.set(0, true);
        m.set(64, true);
        m.set(129, true);
        assert!(m.get(0) && m.get(64) && m.get(129));
        assert!(!m.get(1));
        assert_eq!(m.count_ones(), 3);
        m.set(64, false);
        assert_eq!(m.count_ones(), 2);
    }

    #[test]
    fn segment_trivial_fields() {
        let grid = VoxelGrid::new([2, 2, 2], [1.0; 3], vec![0.0; 8]).unwrap();
        let f = segment_threshold(&grid, 0.5, 1e-9).unwrap();
        assert_eq!(f.solid_count(), 0);
        assert_eq!(porosity(&f), 1.0);

        let grid = VoxelGrid::new([2, 2, 2], [1.0; 3], vec![1.0; 8]).unwrap();
        let f = segment_threshold(&grid, 0.5, 1e-9).unwrap();
        assert_eq!(f.solid_count(), 8);
        assert_eq!(porosity(&f), 0.0);
    }

    #[test]
    fn segment_checkerboard_has_half_porosity() {
        let n = 4usize;
        let mut data = vec![0.0; n * n * n];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    data[x + n * (y + n * z)] = ((x + y + z) % 2) as f64;
                }
            }
        }
        let grid = VoxelGrid::new([n, n, n], [1.0; 3], data).unwrap();
        let f = segment_threshold(&grid, 0.5, 1e-9).unwrap();
        // Direct enumeration: exactly half the voxels have odd parity.
        assert_eq!(f.solid_count(), n * n * n / 2);
        assert_eq!(porosity(&f), 0.5);
    }

    #[test]
    fn segment_rejects_bad_alpha() {
        let grid = VoxelGrid::new([1, 1, 1], [1.0; 3], vec![1.0]).unwrap();
        assert!(segment_threshold(&grid, 0.5, 0.0).is_err());
        assert!(segment_threshold(&grid, 0.5, 1e-5).is_err());
        assert!(segment_threshold(&grid, 0.5, 1e-6).is_ok());
    }

    /// Brute-force component labeling, the oracle for flood-fill tests.
    fn components_oracle(field: &IndicatorField, conn: Connectivity) -> Vec<Vec<usize>> {
        let [nx, ny, nz] = field.dims;
        let n = field.voxel_count();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for seed in 0..n {
            if !field.is_solid(seed) || seen[seed] {
                continue;
            }
            let mut comp = vec![seed];
            seen[seed] = true;
            let mut stack = vec![seed];
            while let Some(cur) = stack.pop() {
                let (x, y, z) = (cur % nx, cur / nx % ny, cur / (nx * ny));
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if (dx, dy, dz) == (0, 0, 0) {
                                continue;
                            }
                            if matches!(conn, Connectivity::Six)
                                && dx.abs() + dy.abs() + dz.abs() != 1
                            {
                                continue;
                            }
                            let (px, py, pz) =
                                (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if px < 0
                                || py < 0
                                || pz < 0
                                || px >= nx as i64
                                || py >= ny as i64
                                || pz >= nz as i64
                            {
                                continue;
                            }
                            let q = px as usize + nx * (py as usize + ny * pz as usize);
                            if field.is_solid(q) && !seen[q] {
                                seen[q] = true;
                                comp.push(q);
                                stack.push(q);
                            }
                        }
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    #[test]
    fn flood_fill_removes_isolated_voxel() {
        // 5³ grid: a 3³ block plus one isolated voxel in the far corner.
        let n = 5usize;
        let mut solid = vec![false; n * n * n];
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    solid[x + n * (y + n * z)] = true;
                }
            }
        }
        solid[(n - 1) + n * ((n - 1) + n * (n - 1))] = true;
        let f = field_from_bools([n, n, n], &solid);
        let cleaned = flood_fill_clean(&f, Connectivity::Six).unwrap();
        assert_eq!(cleaned.solid_count(), 27);
        assert!(!cleaned.is_solid((n - 1) + n * ((n - 1) + n * (n - 1))));
    }

    #[test]
    fn flood_fill_identity_on_connected_field() {
        let f = field_from_bools([3, 3, 3], &[true; 27]);
        let cleaned = flood_fill_clean(&f, Connectivity::Six).unwrap();
        assert_eq!(cleaned, f);
    }

    #[test]
    fn flood_fill_tie_breaks_by_lowest_seed() {
        // Two disjoint 2-voxel bars of equal size in a 5×1×1 row... use 7×1×1:
        // voxels {0,1} and {4,5} solid. Lowest seed (0) wins.
        let mut solid = vec![false; 7];
        solid[0] = true;
        solid[1] = true;
        solid[4] = true;
        solid[5] = true;
        let f = field_from_bools([7, 1, 1], &solid);
        let cleaned = flood_fill_clean(&f, Connectivity::Six).unwrap();
        assert!(cleaned.is_solid(0) && cleaned.is_solid(1));
        assert!(!cleaned.is_solid(4) && !cleaned.is_solid(5));
        // Oracle agreement: the kept voxels are exactly the component whose
        // minimum index is smallest among the largest components.
        let comps = components_oracle(&f, Connectivity::Six);
        let max = comps.iter().map(|c| c.len()).max().unwrap();
        let winner = comps.iter().filter(|c| c.len() == max).min_by_key(|c| c[0]).unwrap();
        for &v in winner {
            assert!(cleaned.is_solid(v));
        }
        assert_eq!(cleaned.solid_count(), winner.len());
    }

    #[test]
    fn flood_fill_connectivity_modes_differ_on_diagonals() {
        // Two voxels touching only at a corner: one component under 26-conn,
        // two under 6-conn.
        let mut solid = vec![false; 8];
        solid[0] = true; // (0,0,0)
        solid[7] = true; // (1,1,1)
        let f = field_from_bools([2, 2, 2], &solid);
        let six = flood_fill_clean(&f, Connectivity::Six).unwrap();
        assert_eq!(six.solid_count(), 1);
        let full = flood_fill_clean(&f, Connectivity::TwentySix).unwrap();
        assert_eq!(full.solid_count(), 2);
    }

    #[test]
    fn flood_fill_rejects_empty_geometry() {
        let f = field_from_bools([2, 2, 2], &[false; 8]);
        assert!(matches!(flood_fill_clean(&f, Connectivity::Six), Err(Error::Geometry(_))));
    }

    #[test]
    fn cubic_void_cell_examples() {
        // No void: fully solid.
        let f = make_cubic_void_cell(10.0, 0.0, 10).unwrap();
        assert_eq!(f.solid_count(), 1000);

        // 9 mm void at resolution 100: centers (i+0.5)·0.1 mm are inside the
        // void iff 0.5 < c < 9.5, i.e. i ∈ {5..94} — 90 per axis.
        let f = make_cubic_void_cell(10.0, 9.0, 100).unwrap();
        assert_eq!(f.void_count(), 90 * 90 * 90);
        assert_relative_eq!(porosity(&f), 0.729, max_relative = 1e-15);

        // Resolution 4, void 5: centers at 1.25, 3.75, 6.25, 8.75; inside iff
        // |c-5| < 2.5, which holds for the middle two — a 2³ void block.
        let f = make_cubic_void_cell(10.0, 5.0, 4).unwrap();
        let mut count = 0;
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let inside = |i: usize| ((i as f64 + 0.5) * 2.5 - 5.0).abs() < 2.5;
                    let void = inside(x) && inside(y) && inside(z);
                    assert_eq!(!f.is_solid(f.index(x, y, z)), void);
                    count += void as usize;
                }
            }
        }
        assert_eq!(count, 8);
        assert_eq!(f.void_count(), 8);
    }

    #[test]
    fn cubic_void_rejects_bad_inputs() {
        assert!(make_cubic_void_cell(10.0, 10.0, 10).is_err());
        assert!(make_cubic_void_cell(10.0, 11.0, 10).is_err());
        assert!(make_cubic_void_cell(10.0, -1.0, 10).is_err());
        assert!(make_cubic_void_cell(10.0, 5.0, 1).is_err());
    }

    #[test]
    fn cubic_void_porosity_converges_at_rate_one_over_n() {
        let target: f64 = (7.3f64 / 10.0).powi(3);
        for &n in &[25usize, 50, 100, 200, 400] {
            let f = make_cubic_void_cell(10.0, 7.3, n).unwrap();
            let err = (porosity(&f) - target).abs();
            assert!(
                err <= 4.0 / n as f64,
                "porosity error {err} at resolution {n} exceeds 4/n"
            );
        }
    }

    #[test]
    fn sphere_cell_examples() {
        // Radius formula.
        let r = sphere_radius(10.0, 0.2678);
        assert_relative_eq!(
            r,
            10.0 * (3.0 * 0.2678 / (4.0 * std::f64::consts::PI)).cbrt(),
            max_relative = 1e-15
        );

        // Zero fraction: all matrix.
        let pm = make_sphere_cell(10.0, 0.0, 8).unwrap();
        assert_eq!(pm.particle_fraction(), 0.0);

        // Rasterized fraction within 1% of nominal at resolution 64.
        let pm = make_sphere_cell(10.0, 0.2678, 64).unwrap();
        // Oracle: independent voxel-center count.
        let mut count = 0usize;
        let s = 10.0 / 64.0;
        for z in 0..64 {
            for y in 0..64 {
                for x in 0..64 {
                    let cx = (x as f64 + 0.5) * s - 5.0;
                    let cy = (y as f64 + 0.5) * s - 5.0;
                    let cz = (z as f64 + 0.5) * s - 5.0;
                    if cx * cx + cy * cy + cz * cz < r * r {
                        count += 1;
                    }
                }
            }
        }
        let frac = count as f64 / 64f64.powi(3);
        assert_eq!(pm.particle_fraction(), frac);
        assert!(
            (frac - 0.2678).abs() / 0.2678 < 0.01,
            "rasterized fraction {frac} deviates more than 1% from nominal"
        );
    }

    #[test]
    fn sphere_cell_rejects_out_of_range_fraction() {
        assert!(make_sphere_cell(10.0, std::f64::consts::PI / 6.0, 8).is_err());
        assert!(make_sphere_cell(10.0, -0.1, 8).is_err());
    }

    #[test]
    fn window_and_tile() {
        let f = make_cubic_void_cell(10.0, 5.0, 4).unwrap();
        // A 2³ window at the void center is fully void.
        let w = f.window([1, 1, 1], [2, 2, 2]).unwrap();
        assert_eq!(w.solid_count(), 0);
        // A corner window is fully solid.
        let w = f.window([0, 0, 0], [1, 1, 1]).unwrap();
        assert_eq!(w.solid_count(), 1);
        assert!(f.window([3, 3, 3], [2, 2, 2]).is_err());

        let t = f.tile([2, 1, 1]).unwrap();
        assert_eq!(t.dims, [8, 4, 4]);
        assert_eq!(t.void_count(), 2 * f.void_count());
        // Periodicity: voxel (x,y,z) equals voxel (x+4,y,z).
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(
                        t.is_solid(t.index(x, y, z)),
                        t.is_solid(t.index(x + 4, y, z))
                    );
                }
            }
        }
    }

    #[test]
    fn counts_partition_the_grid() {
        let f = make_cubic_void_cell(10.0, 6.0, 20).unwrap();
        assert_eq!(f.solid_count() + f.void_count(), f.voxel_count());
    }

    proptest! {
        /// Thresholding the indicator (read back as a {α_void, 1} image) with
        /// the same threshold in (1e-6, 1] reproduces the indicator exactly.
        #[test]
        fn segment_threshold_idempotent_on_binary(
            data in proptest::collection::vec(0.0f64..2.0, 27),
            threshold in 1e-5f64..=1.0,
        ) {
            let grid = VoxelGrid::new([3, 3, 3], [1.0; 3], data).unwrap();
            let f1 = segment_threshold(&grid, threshold, 1e-9).unwrap();
            let binary: Vec<f64> = (0..27).map(|i| f1.alpha_at(i)).collect();
            let grid2 = VoxelGrid::new([3, 3, 3], [1.0; 3], binary).unwrap();
            let f2 = segment_threshold(&grid2, threshold, 1e-9).unwrap();
            prop_assert_eq!(f1, f2);
        }

        /// Flood fill never grows the solid set and is idempotent.
        #[test]
        fn flood_fill_shrinks_and_is_idempotent(
            bits in proptest::collection::vec(proptest::bool::weighted(0.6), 64),
            conn in prop_oneof![Just(Connectivity::Six), Just(Connectivity::TwentySix)],
        ) {
            let f = field_from_bools([4, 4, 4], &bits);
            prop_assume!(f.solid_count() > 0);
            let once = flood_fill_clean(&f, conn).unwrap();
            prop_assert!(once.solid_count() <= f.solid_count());
            let twice = flood_fill_clean(&once, conn).unwrap();
            prop_assert_eq!(once, twice);
        }

        /// The components oracle agrees with the production flood fill on the
        /// retained component (largest, lowest seed on ties).
        #[test]
        fn flood_fill_matches_bfs_oracle(
            bits in proptest::collection::vec(proptest::bool::weighted(0.5), 36),
        ) {
            let f = field_from_bools([3, 4, 3], &bits);
            prop_assume!(f.solid_count() > 0);
            let cleaned = flood_fill_clean(&f, Connectivity::Six).unwrap();
            let comps = components_oracle(&f, Connectivity::Six);
            let max = comps.iter().map(|c| c.len()).max().unwrap();
            let winner = comps
                .iter()
                .filter(|c| c.len() == max)
                .min_by_key(|c| c[0])
                .unwrap();
            prop_assert_eq!(cleaned.solid_count(), winner.len());
            for &v in winner {
                prop_assert!(cleaned.is_solid(v));
            }
        }
    }
}
