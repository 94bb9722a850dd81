//! Global sparse assembly, constraint elimination, and the conjugate-gradient
//! solver.
//!
//! Constraints (Dirichlet values and periodic couplings) are handled by
//! elimination through an affine map `u_all = T·u_free + g`, never by penalty
//! or multipliers, so the reduced operator stays symmetric positive definite
//! and CG applies. The map is built with a union–find structure that carries
//! an offset per DOF: tying `u_s = u_m + jump` unions the two trees and
//! accumulates jumps along paths, which resolves the constraint chains that
//! appear where several periodic face pairs meet at box edges and corners.
//!
//! Two assembly paths produce the same reduced system (a tested invariant):
//!
//! * [`assemble_global`] builds the unconstrained sparse matrix;
//!   [`apply_dirichlet`] / [`apply_periodic`] then reduce it.
//! * [`assemble_reduced_multi`] scatters cell matrices directly into the
//!   reduced pattern, sharing one matrix across several load cases that
//!   differ only in constraint values — the hot path for homogenization,
//!   where each boundary-condition family solves six unit load cases.
//!
//! Assembly visits cells in index order with an ordered serial scatter (cell
//! matrices are computed in parallel), so results do not depend on thread
//! count.

use std::io::Write as IoWrite;
use std::time::Instant;

use crate::mesh::CellMesh;
use crate::preint::{DomainCoefficients, VoxelStiffnessCache};
use crate::{par, Error, Result};

/// Cells whose stiffness is computed per parallel batch before the ordered
/// scatter; bounds scratch memory to `CHUNK · (dofs_per_cell)²` floats.
const CELL_CHUNK: usize = 32;

// ---------------------------------------------------------------------------
// Sparse matrix
// ---------------------------------------------------------------------------

/// Compressed-sparse-row matrix storing the full (not triangular) pattern of
/// a structurally symmetric matrix. Column indices are sorted within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicates are summed.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(u32, f64)>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows.iter_mut() {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = 0.0;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    /// Entry lookup by binary search within the row; zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A·x`, parallel over rows (deterministic: each row is an
    /// independent serial sum).
    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        par::map_indexed(self.n, |i| {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                s += v * x[c as usize];
            }
            s
        })
    }

    /// Maximum relative asymmetry `|Aᵢⱼ − Aⱼᵢ| / max|A|`.
    pub fn symmetry_error(&self) -> f64 {
        let scale = self
            .vals
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()))
            .max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = c as usize;
                if j > i {
                    worst = worst.max((v - self.get(j, i)).abs());
                }
            }
        }
        worst / scale
    }

    /// Dense copy — debugging and tests on small systems only.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c as usize)] = v;
            }
        }
        m
    }

    /// Matrix Market coordinate output (symmetric, lower triangle, 1-based).
    pub fn write_matrix_market(&self, mut w: impl IoWrite) -> Result<()> {
        let lower = self
            .cols
            .iter()
            .enumerate()
            .filter(|&(k, &c)| {
                let i = self.row_ptr.partition_point(|&r| r <= k) - 1;
                c as usize <= i
            })
            .count();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.n, self.n, lower)?;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c as usize <= i {
                    writeln!(w, "{} {} {:.17e}", i + 1, c as usize + 1, v)?;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

/// Where a DOF of the full system ends up after elimination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// `u_dof = u_free[idx] + offset`.
    Free { idx: usize, offset: f64 },
    /// `u_dof = value`.
    Fixed { value: f64 },
}

/// Mutable constraint accumulator: a union–find forest over DOFs where each
/// link carries an affine offset, plus optional fixed values at roots.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    parent: Vec<usize>,
    offset: Vec<f64>,
    fixed: Vec<Option<f64>>,
    /// Relative tolerance for detecting contradictory prescriptions. Offsets
    /// reached along different union paths differ by float association, so
    /// exact comparison would reject valid periodic corner chains.
    pub tol: f64,
}

impl ConstraintSet {
    pub fn new(n_dof: usize) -> Self {
        Self {
            parent: (0..n_dof).collect(),
            offset: vec![0.0; n_dof],
            fixed: vec![None; n_dof],
            tol: 1e-9,
        }
    }

    pub fn n_dof(&self) -> usize {
        self.parent.len()
    }

    /// Root of `i` and the accumulated offset `u_i − u_root`, with full path
    /// compression.
    fn find(&mut self, i: usize) -> (usize, f64) {
        let mut r = i;
        let mut total = 0.0;
        while self.parent[r] != r {
            total += self.offset[r];
            r = self.parent[r];
        }
        // Second pass: point every node on the path directly at the root.
        let mut cur = i;
        let mut acc = total;
        while self.parent[cur] != cur {
            let next = self.parent[cur];
            let o = self.offset[cur];
            self.parent[cur] = r;
            self.offset[cur] = acc;
            acc -= o;
            cur = next;
        }
        (r, total)
    }

    fn close(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.tol * (1.0 + a.abs().max(b.abs()))
    }

    /// Prescribes `u_dof = value` (Dirichlet).
    pub fn fix(&mut self, dof: usize, value: f64) -> Result<()> {
        let (r, o) = self.find(dof);
        let root_value = value - o;
        match self.fixed[r] {
            None => {
                self.fixed[r] = Some(root_value);
                Ok(())
            }
            Some(existing) if self.close(existing, root_value) => Ok(()),
            Some(existing) => Err(Error::Constraint(format!(
                "dof {dof}: conflicting prescriptions {existing} vs {root_value}"
            ))),
        }
    }

    /// Ties `u_slave = u_master + jump` (periodic coupling).
    pub fn tie(&mut self, slave: usize, master: usize, jump: f64) -> Result<()> {
        let (rs, os) = self.find(slave);
        let (rm, om) = self.find(master);
        let delta = om + jump - os; // u_rs = u_rm + delta
        if rs == rm {
            return if self.close(delta, 0.0) {
                Ok(())
            } else {
                Err(Error::Constraint(format!(
                    "contradictory coupling {slave} = {master} + {jump}: cycle mismatch {delta}"
                )))
            };
        }
        // Attach slave-side root under master-side root so master-side
        // representatives survive chains deterministically.
        self.parent[rs] = rm;
        self.offset[rs] = delta;
        match (self.fixed[rs].take(), self.fixed[rm]) {
            (None, _) => {}
            (Some(vs), None) => self.fixed[rm] = Some(vs - delta),
            (Some(vs), Some(vm)) => {
                if !self.close(vs, vm + delta) {
                    return Err(Error::Constraint(format!(
                        "coupling {slave} = {master} + {jump} contradicts fixed values \
                         ({vs} vs {})",
                        vm + delta
                    )));
                }
            }
        }
        Ok(())
    }

    /// Freezes the forest into per-DOF targets. Free roots receive reduced
    /// indices in ascending DOF order.
    pub fn resolve(mut self) -> ResolvedConstraints {
        let n = self.n_dof();
        for i in 0..n {
            self.find(i);
        }
        let mut idx_of_root = vec![usize::MAX; n];
        let mut n_free = 0;
        for i in 0..n {
            if self.parent[i] == i && self.fixed[i].is_none() {
                idx_of_root[i] = n_free;
                n_free += 1;
            }
        }
        let targets = (0..n)
            .map(|i| {
                let r = self.parent[i];
                let o = if r == i { 0.0 } else { self.offset[i] };
                match self.fixed[r] {
                    Some(v) => Target::Fixed { value: v + o },
                    None => Target::Free { idx: idx_of_root[r], offset: o },
                }
            })
            .collect();
        ResolvedConstraints { n_free, targets }
    }
}

/// Immutable affine map `u_all = T·u_free + g` produced by
/// [`ConstraintSet::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConstraints {
    n_free: usize,
    targets: Vec<Target>,
}

impl ResolvedConstraints {
    /// All DOFs free, zero offsets.
    pub fn identity(n_dof: usize) -> Self {
        Self {
            n_free: n_dof,
            targets: (0..n_dof).map(|i| Target::Free { idx: i, offset: 0.0 }).collect(),
        }
    }

    pub fn n_dof(&self) -> usize {
        self.targets.len()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    #[inline]
    pub fn target(&self, dof: usize) -> Target {
        self.targets[dof]
    }

    /// True when both maps eliminate the same DOFs to the same reduced
    /// indices — the condition for sharing one reduced matrix across load
    /// cases whose constraint *values* differ.
    pub fn structure_eq(&self, other: &Self) -> bool {
        self.n_free == other.n_free
            && self.targets.len() == other.targets.len()
            && self
                .targets
                .iter()
                .zip(&other.targets)
                .all(|(a, b)| match (a, b) {
                    (Target::Free { idx: i, .. }, Target::Free { idx: j, .. }) => i == j,
                    (Target::Fixed { .. }, Target::Fixed { .. }) => true,
                    _ => false,
                })
    }

    /// Reconstructs the full displacement vector from reduced unknowns.
    pub fn expand(&self, u_free: &[f64]) -> Vec<f64> {
        assert_eq!(u_free.len(), self.n_free);
        self.targets
            .iter()
            .map(|t| match *t {
                Target::Free { idx, offset } => u_free[idx] + offset,
                Target::Fixed { value } => value,
            })
            .collect()
    }

    /// The affine shift `g` of a DOF: offset for free DOFs, value for fixed.
    #[inline]
    pub fn shift(&self, dof: usize) -> f64 {
        match self.targets[dof] {
            Target::Free { offset, .. } => offset,
            Target::Fixed { value } => value,
        }
    }

    /// Composes with a map acting on this map's free space:
    /// `u_all = T₁(T₂ u₂ + g₂) + g₁`.
    pub fn compose(&self, inner: &ResolvedConstraints) -> ResolvedConstraints {
        assert_eq!(inner.n_dof(), self.n_free);
        let targets = self
            .targets
            .iter()
            .map(|t| match *t {
                Target::Fixed { value } => Target::Fixed { value },
                Target::Free { idx, offset } => match inner.target(idx) {
                    Target::Free { idx: i2, offset: o2 } => {
                        Target::Free { idx: i2, offset: offset + o2 }
                    }
                    Target::Fixed { value } => Target::Fixed { value: offset + value },
                },
            })
            .collect();
        ResolvedConstraints { n_free: inner.n_free, targets }
    }
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// One load case sharing the reduced matrix of its family: constraint values
/// plus optional external nodal loads in full-DOF numbering.
pub struct LoadData<'a> {
    pub cons: &'a ResolvedConstraints,
    pub f_ext: Option<&'a [f64]>,
}

/// Stiffness of one cell during the batched sweep: uniform cells share
/// memoized matrices keyed by their `(α·λ, α·μ)` coefficients.
enum CellKind {
    Uniform(f64, f64),
    Cut(Vec<f64>),
}

/// Assembles the reduced system `K_red` once and one right-hand side per load
/// case. All cases must share the constraint structure; cell matrices enter
/// each RHS as `−K·g` with that case's affine shifts, plus `Tᵀ f_ext`.
pub fn assemble_reduced_multi(
    mesh: &CellMesh,
    cache: &VoxelStiffnessCache,
    coeffs: &DomainCoefficients,
    cases: &[LoadData],
) -> Result<(CsrMatrix, Vec<Vec<f64>>)> {
    if cases.is_empty() {
        return Err(Error::Input("no load cases supplied".into()));
    }
    let base = cases[0].cons;
    let n_dof = 3 * mesh.n_scalar_modes();
    if base.n_dof() != n_dof {
        return Err(Error::Input(format!(
            "constraint map covers {} dofs, mesh has {n_dof}",
            base.n_dof()
        )));
    }
    for (c, case) in cases.iter().enumerate() {
        if !case.cons.structure_eq(base) {
            return Err(Error::Input(format!(
                "load case {c} does not share the constraint structure of case 0"
            )));
        }
        if let Some(f) = case.f_ext {
            if f.len() != n_dof {
                return Err(Error::Input(format!(
                    "load case {c}: external load has {} entries, expected {n_dof}",
                    f.len()
                )));
            }
        }
    }
    let expected_dims = [
        mesh.cells[0] * mesh.voxels_per_cell[0],
        mesh.cells[1] * mesh.voxels_per_cell[1],
        mesh.cells[2] * mesh.voxels_per_cell[2],
    ];
    if coeffs.dims != expected_dims {
        return Err(Error::Input(format!(
            "voxel field {:?} does not match mesh tiling {:?}",
            coeffs.dims, expected_dims
        )));
    }

    let n_free = base.n_free();
    let n_cells = mesh.cell_count();
    let cell_at = |c: usize| {
        [
            c % mesh.cells[0],
            c / mesh.cells[0] % mesh.cells[1],
            c / (mesh.cells[0] * mesh.cells[1]),
        ]
    };

    // Pattern pass: every pair of free DOFs touching a common cell couples.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_free];
    for c in 0..n_cells {
        let dofs = mesh.cell_dofs(cell_at(c));
        let mut fset: Vec<u32> = dofs
            .iter()
            .filter_map(|&d| match base.target(d) {
                Target::Free { idx, .. } => Some(idx as u32),
                Target::Fixed { .. } => None,
            })
            .collect();
        fset.sort_unstable();
        fset.dedup();
        for &p in &fset {
            rows[p as usize].extend_from_slice(&fset);
        }
    }
    let mut row_ptr = Vec::with_capacity(n_free + 1);
    row_ptr.push(0usize);
    let mut cols = Vec::new();
    for row in rows.iter_mut() {
        row.sort_unstable();
        row.dedup();
        cols.extend_from_slice(row);
        row_ptr.push(cols.len());
        row.clear();
        row.shrink_to_fit();
    }
    drop(rows);
    let mut vals = vec![0.0f64; cols.len()];
    let mut rhs = vec![vec![0.0f64; n_free]; cases.len()];

    // External loads: f_red[p] = Σ_{i→p} f_ext[i].
    for (c, case) in cases.iter().enumerate() {
        if let Some(f) = case.f_ext {
            for (i, &fi) in f.iter().enumerate() {
                if let Target::Free { idx, .. } = base.target(i) {
                    rhs[c][idx] += fi;
                }
            }
        }
    }

    // Value pass: batched parallel cell-matrix computation, ordered scatter.
    let d = mesh.dofs_per_cell();
    let mut memo: Vec<((f64, f64), Vec<f64>)> = Vec::new();
    let mut start = 0usize;
    while start < n_cells {
        let len = CELL_CHUNK.min(n_cells - start);
        let kinds: Vec<CellKind> = par::map_indexed(len, |t| {
            let cell = cell_at(start + t);
            let mut cl = Vec::new();
            let mut cm = Vec::new();
            let uniform = coeffs.gather_cell(mesh, cell, &mut cl, &mut cm);
            if uniform {
                CellKind::Uniform(cl[0], cm[0])
            } else {
                let mut k = vec![0.0; d * d];
                cache.accumulate(&cl, &cm, &mut k);
                CellKind::Cut(k)
            }
        });
        for (t, kind) in kinds.iter().enumerate() {
            let cell = cell_at(start + t);
            let k: &[f64] = match kind {
                CellKind::Cut(k) => k,
                CellKind::Uniform(cl, cm) => {
                    if !memo.iter().any(|(key, _)| *key == (*cl, *cm)) {
                        let hk = cache.homogeneous(1.0, 0.0);
                        let hm = cache.homogeneous(0.0, 1.0);
                        let k: Vec<f64> = hk
                            .k
                            .iter()
                            .zip(&hm.k)
                            .map(|(a, b)| cl * a + cm * b)
                            .collect();
                        memo.push(((*cl, *cm), k));
                    }
                    &memo.iter().find(|(key, _)| *key == (*cl, *cm)).unwrap().1
                }
            };
            scatter_cell(
                mesh, cell, k, base, cases, &row_ptr, &cols, &mut vals, &mut rhs,
            );
        }
        start += len;
    }

    Ok((CsrMatrix { n: n_free, row_ptr, cols, vals }, rhs))
}

/// Adds one cell matrix to the reduced system and the per-case right-hand
/// sides. Column positions are found with a merge walk over the sorted row
/// pattern, which also handles several local DOFs folding onto one reduced
/// index (periodic wrap on one-cell-wide grids).
#[allow(clippy::too_many_arguments)]
fn scatter_cell(
    mesh: &CellMesh,
    cell: [usize; 3],
    k: &[f64],
    base: &ResolvedConstraints,
    cases: &[LoadData],
    row_ptr: &[usize],
    cols: &[u32],
    vals: &mut [f64],
    rhs: &mut [Vec<f64>],
) {
    let d = mesh.dofs_per_cell();
    let dofs = mesh.cell_dofs(cell);
    let free_idx: Vec<Option<u32>> = dofs
        .iter()
        .map(|&g| match base.target(g) {
            Target::Free { idx, .. } => Some(idx as u32),
            Target::Fixed { .. } => None,
        })
        .collect();
    let mut fset: Vec<u32> = free_idx.iter().flatten().copied().collect();
    fset.sort_unstable();
    fset.dedup();
    let slot_of: Vec<Option<u16>> = free_idx
        .iter()
        .map(|f| f.map(|v| fset.binary_search(&v).unwrap() as u16))
        .collect();

    // Per-case affine shifts of the cell's DOFs, kept sparse: most cells have
    // no constrained neighbourhood and skip RHS work entirely.
    let shifts: Vec<Vec<(usize, f64)>> = cases
        .iter()
        .map(|case| {
            dofs.iter()
                .enumerate()
                .filter_map(|(j, &g)| {
                    let s = case.cons.shift(g);
                    (s != 0.0).then_some((j, s))
                })
                .collect()
        })
        .collect();

    let mut pos = vec![0u32; fset.len()];
    for i in 0..d {
        let Some(p) = free_idx[i] else { continue };
        let p = p as usize;
        let row_cols = &cols[row_ptr[p]..row_ptr[p + 1]];
        // Merge walk: fset and row_cols are both sorted, fset ⊆ row_cols.
        let mut b = 0usize;
        for (a, &fc) in fset.iter().enumerate() {
            while row_cols[b] != fc {
                b += 1;
            }
            pos[a] = b as u32;
        }
        let row_vals = &mut vals[row_ptr[p]..row_ptr[p + 1]];
        let krow = &k[i * d..(i + 1) * d];
        for (j, slot) in slot_of.iter().enumerate() {
            if let Some(s) = slot {
                row_vals[pos[*s as usize] as usize] += krow[j];
            }
        }
        for (c, shift) in shifts.iter().enumerate() {
            if shift.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for &(j, g) in shift {
                s += krow[j] * g;
            }
            rhs[c][p] -= s;
        }
    }
}

/// Residual forces `r = K_full · u` in full-DOF numbering, computed
/// matrix-free cell by cell (parallel batches, ordered accumulation).
pub fn nodal_forces(
    mesh: &CellMesh,
    cache: &VoxelStiffnessCache,
    coeffs: &DomainCoefficients,
    u_full: &[f64],
) -> Result<Vec<f64>> {
    let n_dof = 3 * mesh.n_scalar_modes();
    if u_full.len() != n_dof {
        return Err(Error::Input(format!(
            "displacement vector has {} entries, expected {n_dof}",
            u_full.len()
        )));
    }
    let n_cells = mesh.cell_count();
    let d = mesh.dofs_per_cell();
    let cell_at = |c: usize| {
        [
            c % mesh.cells[0],
            c / mesh.cells[0] % mesh.cells[1],
            c / (mesh.cells[0] * mesh.cells[1]),
        ]
    };
    let mut r = vec![0.0f64; n_dof];
    let mut memo: Vec<((f64, f64), Vec<f64>)> = Vec::new();
    let mut start = 0usize;
    while start < n_cells {
        let len = CELL_CHUNK.min(n_cells - start);
        // Each batch entry: (dofs, r_cell).
        let parts: Vec<(Vec<usize>, Vec<f64>)> = {
            // Memoize uniform matrices up front so the parallel pass can read
            // them immutably.
            for t in 0..len {
                let cell = cell_at(start + t);
                let mut cl = Vec::new();
                let mut cm = Vec::new();
                if coeffs.gather_cell(mesh, cell, &mut cl, &mut cm)
                    && !memo.iter().any(|(key, _)| *key == (cl[0], cm[0]))
                {
                    let hk = cache.homogeneous(1.0, 0.0);
                    let hm = cache.homogeneous(0.0, 1.0);
                    let k: Vec<f64> = hk
                        .k
                        .iter()
                        .zip(&hm.k)
                        .map(|(a, b)| cl[0] * a + cm[0] * b)
                        .collect();
                    memo.push(((cl[0], cm[0]), k));
                }
            }
            let memo_ref = &memo;
            par::map_indexed(len, move |t| {
                let cell = cell_at(start + t);
                let dofs = mesh.cell_dofs(cell);
                let mut cl = Vec::new();
                let mut cm = Vec::new();
                let uniform = coeffs.gather_cell(mesh, cell, &mut cl, &mut cm);
                let owned;
                let k: &[f64] = if uniform {
                    &memo_ref
                        .iter()
                        .find(|(key, _)| *key == (cl[0], cm[0]))
                        .unwrap()
                        .1
                } else {
                    let mut kk = vec![0.0; d * d];
                    cache.accumulate(&cl, &cm, &mut kk);
                    owned = kk;
                    &owned
                };
                let u_cell: Vec<f64> = dofs.iter().map(|&g| u_full[g]).collect();
                let mut rc = vec![0.0; d];
                for i in 0..d {
                    let krow = &k[i * d..(i + 1) * d];
                    let mut s = 0.0;
                    for (kv, uv) in krow.iter().zip(&u_cell) {
                        s += kv * uv;
                    }
                    rc[i] = s;
                }
                (dofs, rc)
            })
        };
        for (dofs, rc) in parts {
            for (g, v) in dofs.iter().zip(rc) {
                r[*g] += v;
            }
        }
        start += len;
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// GlobalSystem: assemble-then-constrain path
// ---------------------------------------------------------------------------

/// A linear system over the current free DOFs together with the affine map
/// back to the full numbering.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub k: CsrMatrix,
    pub f: Vec<f64>,
    pub cons: ResolvedConstraints,
}

/// Assembles the unconstrained global matrix (all DOFs free, zero loads).
pub fn assemble_global(
    mesh: &CellMesh,
    cache: &VoxelStiffnessCache,
    coeffs: &DomainCoefficients,
) -> Result<GlobalSystem> {
    let n_dof = 3 * mesh.n_scalar_modes();
    let cons = ResolvedConstraints::identity(n_dof);
    let (k, rhs) = assemble_reduced_multi(
        mesh,
        cache,
        coeffs,
        &[LoadData { cons: &cons, f_ext: None }],
    )?;
    Ok(GlobalSystem { k, f: rhs.into_iter().next().unwrap(), cons })
}

impl GlobalSystem {
    pub fn n_free(&self) -> usize {
        self.k.n
    }

    /// Adds a nodal load given in full-DOF numbering (loads at fixed DOFs
    /// become reactions and are dropped).
    pub fn add_load(&mut self, dof: usize, value: f64) {
        if let Target::Free { idx, .. } = self.cons.target(dof) {
            self.f[idx] += value;
        }
    }

    /// Solves with the supplied options and reconstructs the full vector.
    pub fn solve(&self, opts: &SolveOptions) -> Result<(Vec<f64>, SolveReport)> {
        let precond = Precond::jacobi(&self.k);
        let (u_red, report) = solve_pcg(&self.k, &self.f, &precond, opts)?;
        Ok((self.cons.expand(&u_red), report))
    }
}

/// Reduces the current system by additional constraints expressed in the
/// system's *current free* numbering: `K₂ = TᵀKT`, `f₂ = Tᵀ(f − K g)`.
fn reduce_system(sys: &GlobalSystem, cs: ConstraintSet) -> GlobalSystem {
    let map2 = cs.resolve();
    let n2 = map2.n_free();
    let mut rows2: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n2];
    let mut f2 = vec![0.0f64; n2];
    for i in 0..sys.k.n {
        let Target::Free { idx: p, .. } = map2.target(i) else { continue };
        f2[p] += sys.f[i];
        let (cols, vals) = sys.k.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            let j = c as usize;
            match map2.target(j) {
                Target::Free { idx: q, offset } => {
                    rows2[p].push((q as u32, v));
                    if offset != 0.0 {
                        f2[p] -= v * offset;
                    }
                }
                Target::Fixed { value } => f2[p] -= v * value,
            }
        }
    }
    GlobalSystem {
        k: CsrMatrix::from_rows(n2, rows2),
        f: f2,
        cons: sys.cons.compose(&map2),
    }
}

/// Eliminates Dirichlet values `u_dof = value` (full-DOF numbering).
pub fn apply_dirichlet(sys: &GlobalSystem, fixed: &[(usize, f64)]) -> Result<GlobalSystem> {
    let mut cs = ConstraintSet::new(sys.k.n);
    for &(dof, value) in fixed {
        match sys.cons.target(dof) {
            Target::Free { idx, offset } => cs.fix(idx, value - offset)?,
            Target::Fixed { value: w } => {
                if (w - value).abs() > cs.tol * (1.0 + w.abs().max(value.abs())) {
                    return Err(Error::Constraint(format!(
                        "dof {dof} already fixed to {w}, cannot re-fix to {value}"
                    )));
                }
            }
        }
    }
    Ok(reduce_system(sys, cs))
}

/// Eliminates periodic couplings `u_slave = u_master + jump` given as
/// `(master, slave, jump)` triples in full-DOF numbering.
pub fn apply_periodic(
    sys: &GlobalSystem,
    pairs: &[(usize, usize, f64)],
) -> Result<GlobalSystem> {
    let mut cs = ConstraintSet::new(sys.k.n);
    for &(master, slave, jump) in pairs {
        let tm = sys.cons.target(master);
        let ts = sys.cons.target(slave);
        match (tm, ts) {
            (
                Target::Free { idx: im, offset: om },
                Target::Free { idx: is, offset: os },
            ) => cs.tie(is, im, om + jump - os)?,
            (Target::Fixed { value: w }, Target::Free { idx: is, offset: os }) => {
                cs.fix(is, w + jump - os)?
            }
            (Target::Free { idx: im, offset: om }, Target::Fixed { value: ws }) => {
                cs.fix(im, ws - jump - om)?
            }
            (Target::Fixed { value: wm }, Target::Fixed { value: ws }) => {
                if (ws - (wm + jump)).abs() > cs.tol * (1.0 + ws.abs().max(wm.abs())) {
                    return Err(Error::Constraint(format!(
                        "coupling of fixed dofs {slave} = {master} + {jump} is contradictory"
                    )));
                }
            }
        }
    }
    Ok(reduce_system(sys, cs))
}

// ---------------------------------------------------------------------------
// Preconditioned conjugate gradients
// ---------------------------------------------------------------------------

/// Solver controls. `max_iter` defaults to `20·⌈√n⌉`.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_time: f64,
}

/// Symmetric preconditioners for CG.
pub enum Precond {
    /// Diagonal scaling.
    Jacobi { inv_diag: Vec<f64> },
    /// Additive Schwarz: dense Cholesky solves on overlapping DOF blocks
    /// (one block per cut cell), diagonal scaling on uncovered DOFs. This is
    /// the remedy for the ill-conditioning that the soft-material α scaling
    /// induces in cells containing both phases.
    Schwarz {
        inv_diag_rest: Vec<f64>,
        blocks: Vec<(Vec<u32>, nalgebra::Cholesky<f64, nalgebra::Dyn>)>,
    },
}

impl Precond {
    pub fn jacobi(k: &CsrMatrix) -> Self {
        let inv_diag = k
            .diag()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Precond::Jacobi { inv_diag }
    }

    /// Builds the additive-Schwarz preconditioner from overlapping blocks of
    /// reduced DOF indices (duplicates allowed between blocks, not within).
    pub fn schwarz(k: &CsrMatrix, block_dofs: &[Vec<u32>]) -> Result<Self> {
        let mut covered = vec![false; k.n];
        let mut blocks = Vec::with_capacity(block_dofs.len());
        for dofs in block_dofs {
            if dofs.is_empty() {
                continue;
            }
            let m = dofs.len();
            let mut a = nalgebra::DMatrix::zeros(m, m);
            for (bi, &gi) in dofs.iter().enumerate() {
                covered[gi as usize] = true;
                for (bj, &gj) in dofs.iter().enumerate() {
                    a[(bi, bj)] = k.get(gi as usize, gj as usize);
                }
            }
            let chol = a.clone().cholesky().or_else(|| {
                // Principal submatrices of an SPD matrix are SPD; a failure
                // here is float roundoff at extreme α contrast — retry with a
                // hair of diagonal lift.
                let lift = 1e-12 * a.diagonal().amax();
                (a + nalgebra::DMatrix::identity(m, m) * lift).cholesky()
            });
            let chol = chol.ok_or_else(|| {
                Error::Constraint("Schwarz block is not positive definite".into())
            })?;
            blocks.push((dofs.clone(), chol));
        }
        let inv_diag_rest = k
            .diag()
            .iter()
            .zip(&covered)
            .map(|(&d, &c)| if c || d <= 0.0 { 0.0 } else { 1.0 / d })
            .collect();
        Ok(Precond::Schwarz { inv_diag_rest, blocks })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Jacobi { inv_diag } => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv_diag) {
                    *zi = ri * di;
                }
            }
            Precond::Schwarz { inv_diag_rest, blocks } => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv_diag_rest) {
                    *zi = ri * di;
                }
                for (dofs, chol) in blocks {
                    let rb = nalgebra::DVector::from_iterator(
                        dofs.len(),
                        dofs.iter().map(|&g| r[g as usize]),
                    );
                    let yb = chol.solve(&rb);
                    for (bi, &g) in dofs.iter().enumerate() {
                        z[g as usize] += yb[bi];
                    }
                }
            }
        }
    }
}

/// Free DOF blocks of all cut cells (cells containing both α values), the
/// natural Schwarz decomposition for immersed geometries.
pub fn cut_cell_blocks(
    mesh: &CellMesh,
    coeffs: &DomainCoefficients,
    cons: &ResolvedConstraints,
) -> Vec<Vec<u32>> {
    let mut blocks = Vec::new();
    let mut cl = Vec::new();
    let mut cm = Vec::new();
    for ck in 0..mesh.cells[2] {
        for cj in 0..mesh.cells[1] {
            for ci in 0..mesh.cells[0] {
                let cell = [ci, cj, ck];
                if coeffs.gather_cell(mesh, cell, &mut cl, &mut cm) {
                    continue;
                }
                let mut dofs: Vec<u32> = mesh
                    .cell_dofs(cell)
                    .iter()
                    .filter_map(|&g| match cons.target(g) {
                        Target::Free { idx, .. } => Some(idx as u32),
                        Target::Fixed { .. } => None,
                    })
                    .collect();
                dofs.sort_unstable();
                dofs.dedup();
                if !dofs.is_empty() {
                    blocks.push(dofs);
                }
            }
        }
    }
    blocks
}

/// Preconditioned conjugate gradients on `K x = b`. Converges when
/// `‖b − Kx‖ / ‖b‖ ≤ tol`; a zero right-hand side returns immediately.
pub fn solve_pcg(
    k: &CsrMatrix,
    b: &[f64],
    precond: &Precond,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    assert_eq!(b.len(), k.n);
    let start = Instant::now();
    let n = k.n;
    let norm_b = par::norm_sq(b).sqrt();
    if norm_b == 0.0 || n == 0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                wall_time: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| 20 * (n as f64).sqrt().ceil() as usize)
        .max(1);

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    let mut history: Vec<f64> = Vec::new();
    let mut rel = 1.0;

    for it in 1..=max_iter {
        let q = k.spmv(&p);
        let pq = par::dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::Solver {
                iterations: it - 1,
                residual: rel,
                tolerance: opts.tol,
                history,
            });
        }
        let alpha = rz / pq;
        par::axpy(alpha, &p, &mut x);
        par::axpy(-alpha, &q, &mut r);
        rel = par::norm_sq(&r).sqrt() / norm_b;
        history.push(rel);
        if history.len() > 16 {
            history.remove(0);
        }
        if rel <= opts.tol {
            return Ok((
                x,
                SolveReport {
                    iterations: it,
                    relative_residual: rel,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            ));
        }
        precond.apply(&r, &mut z);
        let rz_new = par::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        par::xpby(&z, beta, &mut p);
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: rel,
        tolerance: opts.tol,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::IsotropicMaterial;
    use crate::mesh::build_mesh;
    use crate::preint::build_cache;
    use crate::voxel::{make_cubic_void_cell, IndicatorField};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solid_field(dims: [usize; 3], spacing: [f64; 3]) -> IndicatorField {
        let mut mask = crate::voxel::BitMask::zeros(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] * dims[1] * dims[2] {
            mask.set(i, true);
        }
        IndicatorField::from_mask(dims, spacing, mask, crate::voxel::DEFAULT_ALPHA_VOID).unwrap()
    }

    #[test]
    fn csr_from_rows_merges_and_spmv_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut dense: DMatrix<f64> = DMatrix::zeros(n, n);
        for _ in 0..400 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let v: f64 = rng.gen_range(-1.0..1.0);
            rows[i].push((j as u32, v));
            dense[(i, j)] += v;
        }
        let a = CsrMatrix::from_rows(n, rows);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.spmv(&x);
        let yd = &dense * DVector::from_column_slice(&x);
        for i in 0..n {
            assert_relative_eq!(y[i], yd[i], epsilon = 1e-12);
        }
        // Sorted unique columns per row.
        for i in 0..n {
            let (cols, _) = a.row(i);
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn constraint_chain_resolves_to_single_master() {
        // Three periodic tie families over the 8 vertices of a cube, as at a
        // periodic corner: all vertices chain to vertex 0 with summed jumps.
        let mut cs = ConstraintSet::new(8);
        let (jx, jy, jz) = (0.1, 0.2, 0.4);
        // x-pairs, y-pairs, z-pairs (slave = +face vertex).
        for (s, m, j) in [
            (1, 0, jx),
            (3, 2, jx),
            (5, 4, jx),
            (7, 6, jx),
            (2, 0, jy),
            (3, 1, jy),
            (6, 4, jy),
            (7, 5, jy),
            (4, 0, jz),
            (5, 1, jz),
            (6, 2, jz),
            (7, 3, jz),
        ] {
            cs.tie(s, m, j).unwrap();
        }
        let res = cs.resolve();
        assert_eq!(res.n_free(), 1);
        let expected = [
            0.0,
            jx,
            jy,
            jx + jy,
            jz,
            jx + jz,
            jy + jz,
            jx + jy + jz,
        ];
        let u = res.expand(&[10.0]);
        for (i, &e) in expected.iter().enumerate() {
            assert_relative_eq!(u[i], 10.0 + e, epsilon = 1e-12);
        }
    }

    #[test]
    fn contradictory_constraints_are_rejected() {
        let mut cs = ConstraintSet::new(3);
        cs.tie(1, 0, 1.0).unwrap();
        // Cycle with inconsistent jump: u1 = u0 + 1 and u0 = u1 + 1.
        assert!(cs.tie(0, 1, 1.0).is_err());
        // Consistent closing of the cycle passes.
        assert!(cs.tie(0, 1, -1.0).is_ok());

        let mut cs = ConstraintSet::new(3);
        cs.fix(0, 2.0).unwrap();
        cs.tie(1, 0, 0.5).unwrap();
        assert!(cs.fix(1, 2.5).is_ok());
        assert!(cs.fix(1, 9.0).is_err());
    }

    #[test]
    fn fix_all_yields_empty_free_system() {
        let mut cs = ConstraintSet::new(5);
        for i in 0..5 {
            cs.fix(i, i as f64).unwrap();
        }
        let res = cs.resolve();
        assert_eq!(res.n_free(), 0);
        let u = res.expand(&[]);
        assert_eq!(u, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_cell_global_matrix_equals_cell_matrix() {
        let field = solid_field([2, 2, 2], [0.5; 3]);
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 1).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(10.0, 0.3).unwrap();
        let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let sys = assemble_global(&mesh, &cache, &coeffs).unwrap();
        let kc = cache.homogeneous(mat.lambda(), mat.mu());
        assert_eq!(sys.k.n, 24);
        // Global dof = cell dof ordering differs (component-fastest in both,
        // vertices in the same x-fastest order for a single p=1 cell).
        let dofs = mesh.cell_dofs([0, 0, 0]);
        let dense = sys.k.to_dense();
        for (li, &gi) in dofs.iter().enumerate() {
            for (lj, &gj) in dofs.iter().enumerate() {
                assert_relative_eq!(dense[(gi, gj)], kc.at(li, lj), epsilon = 1e-12);
            }
        }
        assert!(sys.k.symmetry_error() < 1e-12);
    }

    #[test]
    fn two_cell_assembly_matches_dense_scatter_oracle() {
        let field = solid_field([4, 2, 2], [0.5, 0.7, 0.6]);
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(3.0, 0.35).unwrap();
        let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let sys = assemble_global(&mesh, &cache, &coeffs).unwrap();

        // Brute-force dense oracle: scatter both cell matrices by dof map.
        let n = 3 * mesh.n_scalar_modes();
        let mut dense = DMatrix::zeros(n, n);
        let kc = cache.homogeneous(mat.lambda(), mat.mu());
        for cell in [[0, 0, 0], [1, 0, 0]] {
            let dofs = mesh.cell_dofs(cell);
            for (li, &gi) in dofs.iter().enumerate() {
                for (lj, &gj) in dofs.iter().enumerate() {
                    dense[(gi, gj)] += kc.at(li, lj);
                }
            }
        }
        let got = sys.k.to_dense();
        let scale = dense.amax();
        assert!((got - dense).amax() < 1e-12 * scale);
    }

    #[test]
    fn fully_void_matrix_is_alpha_times_homogeneous() {
        let dims = [2, 2, 2];
        let mask = crate::voxel::BitMask::zeros(8);
        // from_mask rejects empty solids only in flood-fill; indicator allows it.
        let field = IndicatorField::from_mask(dims, [1.0; 3], mask, 1e-9).unwrap();
        let mesh = build_mesh(dims, [1.0; 3], [2, 2, 2], 1).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(5.0, 0.2).unwrap();
        let void = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let solid = crate::preint::DomainCoefficients::from_indicator(
            &solid_field(dims, [1.0; 3]),
            &mat,
        );
        let kv = assemble_global(&mesh, &cache, &void).unwrap();
        let ks = assemble_global(&mesh, &cache, &solid).unwrap();
        for (a, b) in kv.k.vals.iter().zip(&ks.k.vals) {
            assert_relative_eq!(*a, b * 1e-9, max_relative = 1e-13);
        }
    }

    #[test]
    fn one_cell_system_has_exactly_six_near_null_modes() {
        let field = solid_field([2, 2, 2], [0.8, 1.0, 1.2]);
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 1).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(1.0, 0.3).unwrap();
        let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let sys = assemble_global(&mesh, &cache, &coeffs).unwrap();
        let mut eig: Vec<f64> = sys.k.to_dense().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lam_max = eig[eig.len() - 1];
        let near_null = eig.iter().filter(|&&e| e <= 1e-8 * lam_max).count();
        assert_eq!(near_null, 6, "eigenvalues: {:?}", &eig[..8.min(eig.len())]);
    }

    #[test]
    fn pcg_matches_dense_solve_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 50;
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
        let spd = &m * m.transpose() + DMatrix::identity(n, n) * (n as f64);
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                rows[i].push((j as u32, spd[(i, j)]));
            }
        }
        let a = CsrMatrix::from_rows(n, rows);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = SolveOptions { tol: 1e-12, max_iter: Some(5000) };
        let (x, report) = solve_pcg(&a, &b, &Precond::jacobi(&a), &opts).unwrap();
        assert!(report.relative_residual <= 1e-12);
        let xd = spd
            .clone()
            .cholesky()
            .unwrap()
            .solve(&DVector::from_column_slice(&b));
        for i in 0..n {
            assert_relative_eq!(x[i], xd[i], epsilon = 1e-9 * xd.amax());
        }
        // Schwarz with two overlapping blocks reproduces the same solution.
        let blocks = vec![(0..30u32).collect::<Vec<_>>(), (20..n as u32).collect()];
        let pre = Precond::schwarz(&a, &blocks).unwrap();
        let (x2, _) = solve_pcg(&a, &b, &pre, &opts).unwrap();
        for i in 0..n {
            assert_relative_eq!(x2[i], xd[i], epsilon = 1e-9 * xd.amax());
        }
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let a = CsrMatrix::from_rows(2, vec![vec![(0, 2.0)], vec![(1, 3.0)]]);
        let (x, report) =
            solve_pcg(&a, &[0.0, 0.0], &Precond::jacobi(&a), &SolveOptions::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn solver_failure_carries_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
        let spd = &m * m.transpose() + DMatrix::identity(n, n) * 0.01;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                rows[i].push((j as u32, spd[(i, j)]));
            }
        }
        let a = CsrMatrix::from_rows(n, rows);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = SolveOptions { tol: 1e-14, max_iter: Some(2) };
        match solve_pcg(&a, &b, &Precond::jacobi(&a), &opts) {
            Err(Error::Solver { iterations, history, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            other => panic!("expected solver failure, got {:?}", other.map(|_| ())),
        }
    }

    /// Affine Dirichlet data on the whole boundary of a homogeneous mesh must
    /// reproduce the affine field exactly (patch test).
    #[test]
    fn dirichlet_patch_test_recovers_affine_field() {
        let field = solid_field([4, 4, 4], [0.5, 0.6, 0.4]);
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(7.0, 0.25).unwrap();
        let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let sys = assemble_global(&mesh, &cache, &coeffs).unwrap();

        let a = [[1e-3, 4e-4, -2e-4], [4e-4, -5e-4, 3e-4], [-2e-4, 3e-4, 8e-4]];
        let affine = |x: [f64; 3], c: usize| -> f64 {
            a[c][0] * x[0] + a[c][1] * x[1] + a[c][2] * x[2]
        };
        let mut fixed = Vec::new();
        for (v, s) in mesh.boundary_vertices() {
            let x = mesh.vertex_position(v);
            for c in 0..3 {
                fixed.push((CellMesh::dof(s, c), affine(x, c)));
            }
        }
        for s in mesh.boundary_higher_modes() {
            for c in 0..3 {
                fixed.push((CellMesh::dof(s, c), 0.0));
            }
        }
        let reduced = apply_dirichlet(&sys, &fixed).unwrap();
        let opts = SolveOptions { tol: 1e-13, max_iter: Some(10_000) };
        let (u, _) = reduced.solve(&opts).unwrap();

        let scale = 1e-3 * mesh.box_extent[0];
        for vz in 0..=mesh.cells[2] {
            for vy in 0..=mesh.cells[1] {
                for vx in 0..=mesh.cells[0] {
                    let v = [vx, vy, vz];
                    let x = mesh.vertex_position(v);
                    let s = mesh.vertex_scalar(v);
                    for c in 0..3 {
                        let want = affine(x, c);
                        let got = u[CellMesh::dof(s, c)];
                        assert!(
                            (got - want).abs() < 1e-9 * scale,
                            "vertex {v:?} comp {c}: {got} vs {want}"
                        );
                    }
                }
            }
        }
        // Higher modes vanish: the affine field has no fluctuation content.
        for s in mesh.n_vertices()..mesh.n_scalar_modes() {
            for c in 0..3 {
                assert!(u[CellMesh::dof(s, c)].abs() < 1e-9 * scale);
            }
        }
    }

    /// The direct-reduced assembly and the assemble-then-constrain path must
    /// produce identical solutions.
    #[test]
    fn elimination_before_and_after_assembly_agree() {
        let field = make_cubic_void_cell(4.0, 2.0, 4).unwrap();
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(9.0, 0.3).unwrap();
        let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let n_dof = 3 * mesh.n_scalar_modes();

        // A mixed constraint load: affine Dirichlet on two faces, one
        // periodic family on the x faces.
        let a = [[2e-3, 0.0, 0.0], [0.0, -1e-3, 0.0], [0.0, 0.0, 5e-4]];
        let affine = |x: [f64; 3], c: usize| -> f64 {
            a[c][0] * x[0] + a[c][1] * x[1] + a[c][2] * x[2]
        };
        let mut fixed = Vec::new();
        for (v, s) in mesh.boundary_vertices() {
            if v[2] == 0 || v[2] == mesh.cells[2] {
                let x = mesh.vertex_position(v);
                for c in 0..3 {
                    fixed.push((CellMesh::dof(s, c), affine(x, c)));
                }
            }
        }
        let mut pairs = Vec::new();
        for pp in mesh.periodic_scalar_pairs() {
            if pp.delta[0] > 0.0 && pp.delta[1] == 0.0 && pp.delta[2] == 0.0 {
                for c in 0..3 {
                    let jump = a[c][0] * pp.delta[0];
                    pairs.push((
                        CellMesh::dof(pp.master, c),
                        CellMesh::dof(pp.slave, c),
                        if pp.is_vertex { jump } else { 0.0 },
                    ));
                }
            }
        }

        // Path A: full assembly, then constraints.
        let sys = assemble_global(&mesh, &cache, &coeffs).unwrap();
        let sys = apply_dirichlet(&sys, &fixed).unwrap();
        let sys = apply_periodic(&sys, &pairs).unwrap();
        let opts = SolveOptions { tol: 1e-13, max_iter: Some(20_000) };
        let (ua, _) = sys.solve(&opts).unwrap();

        // Path B: constraints first, reduced assembly.
        let mut cs = ConstraintSet::new(n_dof);
        for &(dof, v) in &fixed {
            cs.fix(dof, v).unwrap();
        }
        for &(m, s, j) in &pairs {
            cs.tie(s, m, j).unwrap();
        }
        let cons = cs.resolve();
        let (k, rhs) = assemble_reduced_multi(
            &mesh,
            &cache,
            &coeffs,
            &[LoadData { cons: &cons, f_ext: None }],
        )
        .unwrap();
        let (ur, _) = solve_pcg(&k, &rhs[0], &Precond::jacobi(&k), &opts).unwrap();
        let ub = cons.expand(&ur);

        let scale = ua.iter().fold(0.0f64, |acc, &x| acc.max(x.abs())).max(1e-30);
        for (x, y) in ua.iter().zip(&ub) {
            assert!(
                (x - y).abs() <= 1e-10 * scale,
                "solution mismatch {x} vs {y} (scale {scale})"
            );
        }
    }

    /// Iteration counts are recorded as α_void decreases on a fixed cut
    /// geometry (growth expected, not bounded).
    #[test]
    fn iteration_count_recorded_across_alpha_contrast() {
        let mat = IsotropicMaterial::new(1.0, 0.3).unwrap();
        let mut iters = Vec::new();
        for alpha in [1e-6, 1e-9, 1e-12] {
            let field = make_cubic_void_cell(4.0, 2.0, 4)
                .unwrap()
                .with_alpha_void(alpha)
                .unwrap();
            let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
            let cache = build_cache(&mesh).unwrap();
            let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
            let sys = assemble_global(&mesh, &cache, &coeffs).unwrap();
            let mut fixed = Vec::new();
            let strain = 1e-3;
            for (v, s) in mesh.boundary_vertices() {
                let x = mesh.vertex_position(v);
                fixed.push((CellMesh::dof(s, 0), strain * x[0]));
                fixed.push((CellMesh::dof(s, 1), 0.0));
                fixed.push((CellMesh::dof(s, 2), 0.0));
            }
            let reduced = apply_dirichlet(&sys, &fixed).unwrap();
            let opts = SolveOptions { tol: 1e-8, max_iter: Some(100_000) };
            let (_, report) = reduced.solve(&opts).unwrap();
            iters.push(report.iterations);
        }
        assert!(iters[2] >= iters[0], "iterations {iters:?}");
        assert!(iters.iter().all(|&i| i > 0));
    }

    #[test]
    fn matrix_market_dump_round_trips() {
        let a = CsrMatrix::from_rows(
            3,
            vec![
                vec![(0, 2.0), (1, -1.0)],
                vec![(0, -1.0), (1, 2.0), (2, -1.0)],
                vec![(1, -1.0), (2, 2.0)],
            ],
        );
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("%%MatrixMarket"));
        assert_eq!(lines.next().unwrap(), "3 3 5");
        let mut entries: Vec<(usize, usize, f64)> = lines
            .map(|l| {
                let mut it = l.split_whitespace();
                (
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        entries.sort_by_key(|&(i, j, _)| (i, j));
        assert_eq!(entries.len(), 5);
        for &(i, j, v) in &entries {
            assert!(j <= i);
            assert_relative_eq!(v, a.get(i - 1, j - 1), epsilon = 1e-15);
        }
    }

    #[test]
    fn nodal_forces_vanish_on_interior_for_affine_field() {
        let field = solid_field([4, 4, 4], [0.5; 3]);
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial::new(4.0, 0.3).unwrap();
        let coeffs = crate::preint::DomainCoefficients::from_indicator(&field, &mat);
        let a = [[1e-3, 2e-4, 0.0], [2e-4, -4e-4, 1e-4], [0.0, 1e-4, 6e-4]];
        let n_dof = 3 * mesh.n_scalar_modes();
        let mut u = vec![0.0; n_dof];
        for vz in 0..=mesh.cells[2] {
            for vy in 0..=mesh.cells[1] {
                for vx in 0..=mesh.cells[0] {
                    let v = [vx, vy, vz];
                    let x = mesh.vertex_position(v);
                    let s = mesh.vertex_scalar(v);
                    for c in 0..3 {
                        u[CellMesh::dof(s, c)] =
                            a[c][0] * x[0] + a[c][1] * x[1] + a[c][2] * x[2];
                    }
                }
            }
        }
        let r = nodal_forces(&mesh, &cache, &coeffs, &u).unwrap();
        let scale = r.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        assert!(scale > 0.0);
        // Total force balance.
        for c in 0..3 {
            let total: f64 = (0..mesh.n_scalar_modes()).map(|s| r[CellMesh::dof(s, c)]).sum();
            assert!(total.abs() < 1e-12 * scale * mesh.n_scalar_modes() as f64);
        }
        // Interior equations are in equilibrium under a constant-stress state.
        let boundary: std::collections::HashSet<usize> = mesh
            .boundary_vertices()
            .into_iter()
            .map(|(_, s)| s)
            .chain(mesh.boundary_higher_modes())
            .collect();
        for s in 0..mesh.n_scalar_modes() {
            if boundary.contains(&s) {
                continue;
            }
            for c in 0..3 {
                assert!(
                    r[CellMesh::dof(s, c)].abs() < 1e-10 * scale,
                    "interior residual at scalar {s} comp {c}"
                );
            }
        }
    }
}
