//! Cartesian finite-cell mesh, hierarchic shape functions, and DOF management.
//!
//! The embedding box is tiled by `n_x × n_y × n_z` axis-aligned hexahedral
//! cells, each covering `v_x × v_y × v_z` voxels. Cells carry a tensor-product
//! hierarchic basis of order `p`:
//!
//! * per direction, the two linear vertex functions `N₁ = (1-ξ)/2`,
//!   `N₂ = (1+ξ)/2` plus the integrated Legendre bubbles
//!   `φ_j = (P_j - P_{j-2}) / √(4j-2)` for `j = 2..p`, which vanish at `ξ = ±1`;
//! * in 3D, all products of one 1D function per direction.
//!
//! Every 3D mode is owned by exactly one geometric entity — vertex, edge,
//! face, or cell interior — according to how many of its three 1D factors are
//! bubbles. Global scalar modes are enumerated entity-type by entity-type
//! (vertices, x/y/z-edges, x/y/z-normal faces, volumes), so modes shared
//! between adjacent cells resolve to identical global indices by construction.
//! Edge and face bubbles are always parametrized along the global axes, never
//! per-cell, which keeps the orientation-sensitive odd modes consistent
//! between neighbors. Displacement DOFs interleave components:
//! `dof = 3·scalar_mode + component`.

use serde::Serialize;

use crate::{Error, Result};

/// Maximum supported polynomial order. Pre-integrated voxel matrices grow as
/// `(p+1)⁶` per voxel slot, which gets out of hand on a workstation above 4.
pub const MAX_ORDER: usize = 4;

/// Evaluates Legendre polynomials `P_0..P_n` at `x` by the three-term
/// recurrence `(k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}`.
fn legendre_upto(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(x);
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * x * out[k] - k as f64 * out[k - 1]) / (k + 1) as f64;
        out.push(next);
    }
}

/// Values and derivatives of the 1D hierarchic basis at `xi`:
/// index 0 → `N₁`, index 1 → `N₂`, index `j ≥ 2` → bubble `φ_j`.
///
/// `φ_j' = √((2j-1)/2) · P_{j-1}` follows from the Legendre identity
/// `P_j' - P_{j-2}' = (2j-1) P_{j-1}`.
pub fn basis_1d(p: usize, xi: f64, values: &mut [f64], derivs: &mut [f64]) {
    debug_assert!(values.len() == p + 1 && derivs.len() == p + 1);
    values[0] = 0.5 * (1.0 - xi);
    values[1] = 0.5 * (1.0 + xi);
    derivs[0] = -0.5;
    derivs[1] = 0.5;
    if p >= 2 {
        let mut leg = Vec::with_capacity(p + 1);
        legendre_upto(p, xi, &mut leg);
        for j in 2..=p {
            let norm = (4.0 * j as f64 - 2.0).sqrt();
            values[j] = (leg[j] - leg[j - 2]) / norm;
            derivs[j] = ((2.0 * j as f64 - 1.0) / 2.0).sqrt() * leg[j - 1];
        }
    }
}

/// Geometric owner of a local scalar mode, with everything needed to map it to
/// a global entity. Indices `i, j, k ∈ {0, 1}` pick the cell-local side along
/// an axis; `m* ∈ 2..=p` are bubble indices along the named axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalEntity {
    Vertex { i: usize, j: usize, k: usize },
    EdgeX { j: usize, k: usize, m: usize },
    EdgeY { i: usize, k: usize, m: usize },
    EdgeZ { i: usize, j: usize, m: usize },
    /// Face with normal x at local side `i`; bubbles `my`, `mz`.
    FaceX { i: usize, my: usize, mz: usize },
    FaceY { j: usize, mx: usize, mz: usize },
    FaceZ { k: usize, mx: usize, my: usize },
    Volume { mx: usize, my: usize, mz: usize },
}

/// One scalar mode of the cell-local basis: its 1D factor indices per
/// direction and its owning entity.
#[derive(Debug, Clone, Copy)]
pub struct LocalMode {
    /// 1D basis indices `(a, b, c)` for the x, y, z factors.
    pub exps: [usize; 3],
    pub entity: LocalEntity,
}

/// Builds the canonical local mode list for order `p`: vertices, then edge
/// modes (x, y, z families), then face modes (x, y, z normals), then volume
/// modes. All gather/scatter code and the pre-integrated matrices share this
/// ordering.
pub fn local_modes(p: usize) -> Vec<LocalMode> {
    let mut modes = Vec::with_capacity((p + 1) * (p + 1) * (p + 1));
    // Vertices, x-fastest.
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                modes.push(LocalMode { exps: [i, j, k], entity: LocalEntity::Vertex { i, j, k } });
            }
        }
    }
    // Edge bubbles: for each edge family, the four edges (transverse sides
    // y-fastest), each with p-1 ascending bubble indices.
    for k in 0..2 {
        for j in 0..2 {
            for m in 2..=p {
                modes.push(LocalMode { exps: [m, j, k], entity: LocalEntity::EdgeX { j, k, m } });
            }
        }
    }
    for k in 0..2 {
        for i in 0..2 {
            for m in 2..=p {
                modes.push(LocalMode { exps: [i, m, k], entity: LocalEntity::EdgeY { i, k, m } });
            }
        }
    }
    for j in 0..2 {
        for i in 0..2 {
            for m in 2..=p {
                modes.push(LocalMode { exps: [i, j, m], entity: LocalEntity::EdgeZ { i, j, m } });
            }
        }
    }
    // Face bubbles: two sides per normal; bubble pairs with the lower axis
    // fastest (global axis order fixes the orientation).
    for i in 0..2 {
        for mz in 2..=p {
            for my in 2..=p {
                modes.push(LocalMode { exps: [i, my, mz], entity: LocalEntity::FaceX { i, my, mz } });
            }
        }
    }
    for j in 0..2 {
        for mz in 2..=p {
            for mx in 2..=p {
                modes.push(LocalMode { exps: [mx, j, mz], entity: LocalEntity::FaceY { j, mx, mz } });
            }
        }
    }
    for k in 0..2 {
        for my in 2..=p {
            for mx in 2..=p {
                modes.push(LocalMode { exps: [mx, my, k], entity: LocalEntity::FaceZ { k, mx, my } });
            }
        }
    }
    // Volume bubbles, x-fastest.
    for mz in 2..=p {
        for my in 2..=p {
            for mx in 2..=p {
                modes.push(LocalMode { exps: [mx, my, mz], entity: LocalEntity::Volume { mx, my, mz } });
            }
        }
    }
    debug_assert_eq!(modes.len(), (p + 1).pow(3));
    modes
}

/// Tensor-product hierarchic basis of one cell.
#[derive(Debug, Clone)]
pub struct ShapeBasis {
    pub p: usize,
    modes: Vec<LocalMode>,
}

impl ShapeBasis {
    pub fn new(p: usize) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&p) {
            return Err(Error::Mesh(format!("polynomial order must lie in 1..={MAX_ORDER}, got {p}")));
        }
        Ok(Self { p, modes: local_modes(p) })
    }

    /// Scalar modes per cell, `(p+1)³`.
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[LocalMode] {
        &self.modes
    }

    /// Values and reference-coordinate gradients of all modes at a local point
    /// `(ξ, η, ζ) ∈ [-1, 1]³`. Physical gradients follow by scaling component
    /// `d` with `2 / Δ_d` (see [`CellMesh::gradient_scale`]).
    pub fn evaluate(&self, local: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
        let p = self.p;
        let mut vals = vec![[0.0; 3]; 0];
        // Per-direction 1D tables.
        let mut v = [vec![0.0; p + 1], vec![0.0; p + 1], vec![0.0; p + 1]];
        let mut d = [vec![0.0; p + 1], vec![0.0; p + 1], vec![0.0; p + 1]];
        for dir in 0..3 {
            basis_1d(p, local[dir], &mut v[dir], &mut d[dir]);
        }
        let mut values = Vec::with_capacity(self.modes.len());
        vals.reserve(self.modes.len());
        for m in &self.modes {
            let [a, b, c] = m.exps;
            values.push(v[0][a] * v[1][b] * v[2][c]);
            vals.push([
                d[0][a] * v[1][b] * v[2][c],
                v[0][a] * d[1][b] * v[2][c],
                v[0][a] * v[1][b] * d[2][c],
            ]);
        }
        (values, vals)
    }
}

/// One of the six planar faces of the embedding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoxFace {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl BoxFace {
    pub const ALL: [BoxFace; 6] = [
        BoxFace::XMin,
        BoxFace::XMax,
        BoxFace::YMin,
        BoxFace::YMax,
        BoxFace::ZMin,
        BoxFace::ZMax,
    ];

    /// Axis normal to the face (0, 1, 2).
    pub fn axis(self) -> usize {
        match self {
            BoxFace::XMin | BoxFace::XMax => 0,
            BoxFace::YMin | BoxFace::YMax => 1,
            BoxFace::ZMin | BoxFace::ZMax => 2,
        }
    }

    /// True on the max-coordinate side.
    pub fn is_max(self) -> bool {
        matches!(self, BoxFace::XMax | BoxFace::YMax | BoxFace::ZMax)
    }

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis()] = if self.is_max() { 1.0 } else { -1.0 };
        n
    }
}

/// A periodic master/slave scalar-mode pair: `u_slave = u_master + jump`,
/// where the jump is the macroscopic affine increment over `delta` for vertex
/// modes and zero for higher modes.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicPair {
    pub master: usize,
    pub slave: usize,
    /// Position difference x_slave - x_master (one box extent along one axis).
    pub delta: [f64; 3],
    pub is_vertex: bool,
}

/// Cartesian mesh of finite cells with global DOF numbering.
#[derive(Debug, Clone)]
pub struct CellMesh {
    /// Cell counts per direction.
    pub cells: [usize; 3],
    /// Voxels per cell per direction.
    pub voxels_per_cell: [usize; 3],
    /// Polynomial order, 1..=4.
    pub p: usize,
    /// Voxel spacing, mm.
    pub spacing: [f64; 3],
    /// Cell edge lengths, mm (`voxels_per_cell · spacing`).
    pub cell_size: [f64; 3],
    /// Physical box extents, mm.
    pub box_extent: [f64; 3],
    basis: ShapeBasis,
    // Section bases of the global scalar numbering, in canonical order:
    // vertices, x/y/z-edges, x/y/z-normal faces, volumes.
    base_vertex: usize,
    base_edge: [usize; 3],
    base_face: [usize; 3],
    base_volume: usize,
    n_scalar: usize,
}

impl CellMesh {
    pub fn basis(&self) -> &ShapeBasis {
        &self.basis
    }

    pub fn cell_count(&self) -> usize {
        self.cells[0] * self.cells[1] * self.cells[2]
    }

    /// Scalar modes per cell.
    pub fn modes_per_cell(&self) -> usize {
        self.basis.n_modes()
    }

    /// Displacement DOFs per cell, `3·(p+1)³`.
    pub fn dofs_per_cell(&self) -> usize {
        3 * self.basis.n_modes()
    }

    /// Total scalar modes.
    pub fn n_scalar_modes(&self) -> usize {
        self.n_scalar
    }

    /// Global displacement DOF of a scalar mode and component.
    #[inline]
    pub fn dof(scalar: usize, component: usize) -> usize {
        3 * scalar + component
    }

    /// Constant Jacobian determinant of the reference-to-physical map,
    /// `Δx·Δy·Δz / 8`.
    pub fn det_jacobian(&self) -> f64 {
        self.cell_size[0] * self.cell_size[1] * self.cell_size[2] / 8.0
    }

    /// Factor per direction converting reference gradients to physical ones.
    pub fn gradient_scale(&self) -> [f64; 3] {
        [
            2.0 / self.cell_size[0],
            2.0 / self.cell_size[1],
            2.0 / self.cell_size[2],
        ]
    }

    /// Number of mesh vertices per direction.
    pub fn vertex_dims(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn n_vertices(&self) -> usize {
        let d = self.vertex_dims();
        d[0] * d[1] * d[2]
    }

    /// Scalar mode id of a mesh vertex. Vertices occupy the leading block of
    /// the numbering, so this doubles as the vertex linear index.
    #[inline]
    pub fn vertex_scalar(&self, v: [usize; 3]) -> usize {
        let d = self.vertex_dims();
        debug_assert!(v[0] < d[0] && v[1] < d[1] && v[2] < d[2]);
        self.base_vertex + v[0] + d[0] * (v[1] + d[1] * v[2])
    }

    /// Physical coordinates of a mesh vertex.
    pub fn vertex_position(&self, v: [usize; 3]) -> [f64; 3] {
        [
            v[0] as f64 * self.cell_size[0],
            v[1] as f64 * self.cell_size[1],
            v[2] as f64 * self.cell_size[2],
        ]
    }

    fn edge_scalar(&self, axis: usize, coords: [usize; 3], m: usize) -> usize {
        // coords: cell index along `axis`, vertex indices transverse.
        let per = self.p - 1;
        let dims = self.edge_dims(axis);
        let lin = coords[0] + dims[0] * (coords[1] + dims[1] * coords[2]);
        self.base_edge[axis] + lin * per + (m - 2)
    }

    /// Entity-grid dims of edges along `axis`, in (fast, mid, slow) order
    /// x → (cx, vy, vz), y → (vx, cy, vz), z → (vx, vy, cz).
    fn edge_dims(&self, axis: usize) -> [usize; 3] {
        let [nx, ny, nz] = self.cells;
        match axis {
            0 => [nx, ny + 1, nz + 1],
            1 => [nx + 1, ny, nz + 1],
            2 => [nx + 1, ny + 1, nz],
            _ => unreachable!(),
        }
    }

    fn face_scalar(&self, normal: usize, coords: [usize; 3], mm: [usize; 2]) -> usize {
        let per = (self.p - 1) * (self.p - 1);
        let dims = self.face_dims(normal);
        let lin = coords[0] + dims[0] * (coords[1] + dims[1] * coords[2]);
        // Lower-axis bubble fastest.
        let off = (mm[0] - 2) + (self.p - 1) * (mm[1] - 2);
        self.base_face[normal] + lin * per + off
    }

    /// Entity-grid dims of faces with the given normal, (fast, mid, slow):
    /// x-normal → (vx, cy, cz), y-normal → (cx, vy, cz), z-normal → (cx, cy, vz).
    fn face_dims(&self, normal: usize) -> [usize; 3] {
        let [nx, ny, nz] = self.cells;
        match normal {
            0 => [nx + 1, ny, nz],
            1 => [nx, ny + 1, nz],
            2 => [nx, ny, nz + 1],
            _ => unreachable!(),
        }
    }

    fn volume_scalar(&self, cell: [usize; 3], mm: [usize; 3]) -> usize {
        let per = (self.p - 1).pow(3);
        let [nx, ny, _] = self.cells;
        let lin = cell[0] + nx * (cell[1] + ny * cell[2]);
        let q = self.p - 1;
        let off = (mm[0] - 2) + q * ((mm[1] - 2) + q * (mm[2] - 2));
        self.base_volume + lin * per + off
    }

    /// Global scalar mode ids of one cell, in the canonical local order of
    /// [`local_modes`].
    pub fn cell_scalar_modes(&self, cell: [usize; 3]) -> Vec<usize> {
        let [cx, cy, cz] = cell;
        debug_assert!(cx < self.cells[0] && cy < self.cells[1] && cz < self.cells[2]);
        let mut out = Vec::with_capacity(self.modes_per_cell());
        for mode in self.basis.modes() {
            let id = match mode.entity {
                LocalEntity::Vertex { i, j, k } => self.vertex_scalar([cx + i, cy + j, cz + k]),
                LocalEntity::EdgeX { j, k, m } => self.edge_scalar(0, [cx, cy + j, cz + k], m),
                LocalEntity::EdgeY { i, k, m } => self.edge_scalar(1, [cx + i, cy, cz + k], m),
                LocalEntity::EdgeZ { i, j, m } => self.edge_scalar(2, [cx + i, cy + j, cz], m),
                LocalEntity::FaceX { i, my, mz } => self.face_scalar(0, [cx + i, cy, cz], [my, mz]),
                LocalEntity::FaceY { j, mx, mz } => self.face_scalar(1, [cx, cy + j, cz], [mx, mz]),
                LocalEntity::FaceZ { k, mx, my } => self.face_scalar(2, [cx, cy, cz + k], [mx, my]),
                LocalEntity::Volume { mx, my, mz } => self.volume_scalar(cell, [mx, my, mz]),
            };
            out.push(id);
        }
        out
    }

    /// Global displacement DOFs of one cell: `3` per scalar mode, component
    /// fastest, matching the local layout `3·mode + component`.
    pub fn cell_dofs(&self, cell: [usize; 3]) -> Vec<usize> {
        let scalars = self.cell_scalar_modes(cell);
        let mut out = Vec::with_capacity(3 * scalars.len());
        for s in scalars {
            for c in 0..3 {
                out.push(Self::dof(s, c));
            }
        }
        out
    }

    /// Mesh vertices lying on one box face, as (grid coords, scalar id).
    pub fn face_vertices(&self, face: BoxFace) -> Vec<([usize; 3], usize)> {
        let d = self.vertex_dims();
        let axis = face.axis();
        let fixed = if face.is_max() { d[axis] - 1 } else { 0 };
        let mut out = Vec::new();
        let (a1, a2) = other_axes(axis);
        for s in 0..d[a2] {
            for f in 0..d[a1] {
                let mut v = [0usize; 3];
                v[axis] = fixed;
                v[a1] = f;
                v[a2] = s;
                out.push((v, self.vertex_scalar(v)));
            }
        }
        out
    }

    /// Scalar ids of all edge/face modes whose entity lies inside one box
    /// face (volume modes never do).
    pub fn face_higher_modes(&self, face: BoxFace) -> Vec<usize> {
        let mut out = Vec::new();
        if self.p < 2 {
            return out;
        }
        let axis = face.axis();
        let [nx, ny, nz] = self.cells;
        let n = [nx, ny, nz];
        let vfix = if face.is_max() { n[axis] } else { 0 };
        // Edge entities: edges along `dir` lie in the face iff dir != axis and
        // their transverse vertex coordinate along `axis` equals vfix.
        for dir in 0..3 {
            if dir == axis {
                continue;
            }
            let dims = self.edge_dims(dir);
            // Coordinate slots of edge_dims(dir): slot 0 runs along x, 1 along
            // y, 2 along z (cell index on `dir`, vertex index otherwise).
            for c2 in 0..dims[2] {
                for c1 in 0..dims[1] {
                    for c0 in 0..dims[0] {
                        let coords = [c0, c1, c2];
                        if coords[axis] != vfix {
                            continue;
                        }
                        for m in 2..=self.p {
                            out.push(self.edge_scalar(dir, coords, m));
                        }
                    }
                }
            }
        }
        // Face entities: only faces with normal == axis lie in the box face.
        let dims = self.face_dims(axis);
        for c2 in 0..dims[2] {
            for c1 in 0..dims[1] {
                for c0 in 0..dims[0] {
                    let coords = [c0, c1, c2];
                    if coords[axis] != vfix {
                        continue;
                    }
                    for mb in 2..=self.p {
                        for ma in 2..=self.p {
                            out.push(self.face_scalar(axis, coords, [ma, mb]));
                        }
                    }
                }
            }
        }
        out
    }

    /// All boundary vertices (deduplicated), as (grid coords, scalar id).
    pub fn boundary_vertices(&self) -> Vec<([usize; 3], usize)> {
        let d = self.vertex_dims();
        let mut out = Vec::new();
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    if x == 0 || y == 0 || z == 0 || x == d[0] - 1 || y == d[1] - 1 || z == d[2] - 1
                    {
                        out.push(([x, y, z], self.vertex_scalar([x, y, z])));
                    }
                }
            }
        }
        out
    }

    /// All boundary edge/face modes (deduplicated, sorted).
    pub fn boundary_higher_modes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = BoxFace::ALL
            .iter()
            .flat_map(|&f| self.face_higher_modes(f))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Master/slave scalar pairs for periodic boundary conditions: for each
    /// axis, every boundary entity on the min face pairs with its translate on
    /// the max face. Entities on box edges/corners appear in several pairs;
    /// the constraint machinery resolves those chains.
    pub fn periodic_scalar_pairs(&self) -> Vec<PeriodicPair> {
        let mut out = Vec::new();
        let d = self.vertex_dims();
        for axis in 0..3 {
            let mut delta = [0.0; 3];
            delta[axis] = self.box_extent[axis];
            // Vertices.
            let (a1, a2) = other_axes(axis);
            for s in 0..d[a2] {
                for f in 0..d[a1] {
                    let mut lo = [0usize; 3];
                    lo[a1] = f;
                    lo[a2] = s;
                    let mut hi = lo;
                    hi[axis] = d[axis] - 1;
                    out.push(PeriodicPair {
                        master: self.vertex_scalar(lo),
                        slave: self.vertex_scalar(hi),
                        delta,
                        is_vertex: true,
                    });
                }
            }
            if self.p >= 2 {
                // Edges transverse to `axis`.
                for dir in 0..3 {
                    if dir == axis {
                        continue;
                    }
                    let dims = self.edge_dims(dir);
                    for c2 in 0..dims[2] {
                        for c1 in 0..dims[1] {
                            for c0 in 0..dims[0] {
                                let lo = [c0, c1, c2];
                                if lo[axis] != 0 {
                                    continue;
                                }
                                let mut hi = lo;
                                hi[axis] = dims[axis] - 1;
                                for m in 2..=self.p {
                                    out.push(PeriodicPair {
                                        master: self.edge_scalar(dir, lo, m),
                                        slave: self.edge_scalar(dir, hi, m),
                                        delta,
                                        is_vertex: false,
                                    });
                                }
                            }
                        }
                    }
                }
                // Faces with normal == axis.
                let dims = self.face_dims(axis);
                for c2 in 0..dims[2] {
                    for c1 in 0..dims[1] {
                        for c0 in 0..dims[0] {
                            let lo = [c0, c1, c2];
                            if lo[axis] != 0 {
                                continue;
                            }
                            let mut hi = lo;
                            hi[axis] = dims[axis] - 1;
                            for mb in 2..=self.p {
                                for ma in 2..=self.p {
                                    out.push(PeriodicPair {
                                        master: self.face_scalar(axis, lo, [ma, mb]),
                                        slave: self.face_scalar(axis, hi, [ma, mb]),
                                        delta,
                                        is_vertex: false,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Mesh summary as JSON (cells, order, DOF count).
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "cells": self.cells,
            "voxels_per_cell": self.voxels_per_cell,
            "p": self.p,
            "cell_size_mm": self.cell_size,
            "box_extent_mm": self.box_extent,
            "scalar_modes": self.n_scalar_modes(),
            "dofs": dof_count(self),
        })
    }
}

pub(crate) fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        2 => (0, 1),
        _ => unreachable!(),
    }
}

/// Builds a mesh over a voxel image. The cells must tile the image exactly:
/// `field_dims[i] % voxels_per_cell[i] == 0`; otherwise the caller has to crop
/// or pad first (the CLI exposes an explicit crop flag — silent padding would
/// alter the porosity).
pub fn build_mesh(
    field_dims: [usize; 3],
    spacing: [f64; 3],
    voxels_per_cell: [usize; 3],
    p: usize,
) -> Result<CellMesh> {
    if !(1..=MAX_ORDER).contains(&p) {
        return Err(Error::Mesh(format!("polynomial order must lie in 1..={MAX_ORDER}, got {p}")));
    }
    if voxels_per_cell.iter().any(|&v| v == 0) {
        return Err(Error::Mesh("voxels_per_cell components must be >= 1".into()));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::Mesh(format!("spacing must be positive, got {spacing:?}")));
    }
    let mut cells = [0usize; 3];
    for i in 0..3 {
        if field_dims[i] == 0 || field_dims[i] % voxels_per_cell[i] != 0 {
            return Err(Error::Mesh(format!(
                "voxel dims {:?} are not divisible by voxels_per_cell {:?}; crop or pad the image",
                field_dims, voxels_per_cell
            )));
        }
        cells[i] = field_dims[i] / voxels_per_cell[i];
    }
    let cell_size = [
        voxels_per_cell[0] as f64 * spacing[0],
        voxels_per_cell[1] as f64 * spacing[1],
        voxels_per_cell[2] as f64 * spacing[2],
    ];
    let box_extent = [
        field_dims[0] as f64 * spacing[0],
        field_dims[1] as f64 * spacing[1],
        field_dims[2] as f64 * spacing[2],
    ];
    let basis = ShapeBasis::new(p)?;
    let [nx, ny, nz] = cells;
    let q = p - 1;
    let n_vertices = (nx + 1) * (ny + 1) * (nz + 1);
    let n_edges = [
        nx * (ny + 1) * (nz + 1),
        (nx + 1) * ny * (nz + 1),
        (nx + 1) * (ny + 1) * nz,
    ];
    let n_faces = [(nx + 1) * ny * nz, nx * (ny + 1) * nz, nx * ny * (nz + 1)];
    let n_cells = nx * ny * nz;

    let base_vertex = 0;
    let mut cursor = n_vertices;
    let mut base_edge = [0; 3];
    for i in 0..3 {
        base_edge[i] = cursor;
        cursor += n_edges[i] * q;
    }
    let mut base_face = [0; 3];
    for i in 0..3 {
        base_face[i] = cursor;
        cursor += n_faces[i] * q * q;
    }
    let base_volume = cursor;
    cursor += n_cells * q * q * q;

    Ok(CellMesh {
        cells,
        voxels_per_cell,
        p,
        spacing,
        cell_size,
        box_extent,
        basis,
        base_vertex,
        base_edge,
        base_face,
        base_volume,
        n_scalar: cursor,
    })
}

/// Total displacement DOFs:
/// `3·[vertices + edges·(p-1) + faces·(p-1)² + cells·(p-1)³]`.
pub fn dof_count(mesh: &CellMesh) -> usize {
    3 * mesh.n_scalar_modes()
}
