//! Boundary-condition generators on the embedding box.
//!
//! Three homogenization families plus the numerical tensile test:
//!
//! * **KUBC** — kinematic uniform: `u = ε^M·x` on the whole box boundary.
//!   The boundary trace must be *exactly* linear, so boundary vertex DOFs are
//!   prescribed to the affine values and every boundary edge/face mode is
//!   pinned to zero.
//! * **SUBC** — static uniform: consistent nodal loads of the traction
//!   `t = σ^M·n` integrated face-wise, with each boundary voxel's traction
//!   scaled by its indicator α (the soft void material carries its share of
//!   the load, consistent with the embedding). Rigid modes are removed by a
//!   3-2-1 vertex pinning scheme.
//! * **PBC** — periodic: opposite-face DOFs are tied with the macroscopic
//!   jump `ε^M·Δx` on vertices and zero jump on higher modes (the affine
//!   content of the trace lives in the vertex modes alone); one corner vertex
//!   is fixed to remove translation.
//! * **TENSILE** — frictionless-grip uniaxial experiment: normal displacement
//!   prescribed on the two end faces (0 and `strain·L`), lateral faces free,
//!   minimal in-plane pins on the minus face.
//!
//! Every generator emits a [`LoadCase`]: plain lists of Dirichlet values,
//! periodic couplings and nodal loads in full-DOF numbering, which the
//! constraint machinery in [`crate::system`] turns into a reduced system.
//! Cases of one family on one mesh share their constraint structure, so the
//! six unit load cases of a homogenization run share one reduced matrix.

use crate::mesh::{other_axes, BoxFace, CellMesh};
use crate::preint::gauss_legendre;
use crate::system::{ConstraintSet, ResolvedConstraints};
use crate::voxel::IndicatorField;
use crate::{Error, Result};

/// Symmetric macroscopic strain. Stored as the full tensor; Voigt order is
/// (11, 22, 33, 12, 23, 13) with engineering shear.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MacroStrain {
    t: [[f64; 3]; 3],
}

impl MacroStrain {
    pub fn zero() -> Self {
        Self { t: [[0.0; 3]; 3] }
    }

    /// From a Voigt 6-vector with engineering shear (γ = 2ε off-diagonal).
    pub fn from_voigt(v: [f64; 6]) -> Self {
        Self {
            t: [
                [v[0], v[3] / 2.0, v[5] / 2.0],
                [v[3] / 2.0, v[1], v[4] / 2.0],
                [v[5] / 2.0, v[4] / 2.0, v[2]],
            ],
        }
    }

    pub fn voigt(&self) -> [f64; 6] {
        [
            self.t[0][0],
            self.t[1][1],
            self.t[2][2],
            2.0 * self.t[0][1],
            2.0 * self.t[1][2],
            2.0 * self.t[0][2],
        ]
    }

    pub fn tensor(&self) -> [[f64; 3]; 3] {
        self.t
    }

    /// The affine displacement `ε^M·x`.
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = self.t[i][0] * x[0] + self.t[i][1] * x[1] + self.t[i][2] * x[2];
        }
        u
    }
}

/// Symmetric macroscopic stress, MPa. Voigt order (11, 22, 33, 12, 23, 13).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MacroStress {
    t: [[f64; 3]; 3],
}

impl MacroStress {
    pub fn zero() -> Self {
        Self { t: [[0.0; 3]; 3] }
    }

    pub fn from_voigt(v: [f64; 6]) -> Self {
        Self {
            t: [
                [v[0], v[3], v[5]],
                [v[3], v[1], v[4]],
                [v[5], v[4], v[2]],
            ],
        }
    }

    pub fn voigt(&self) -> [f64; 6] {
        [
            self.t[0][0],
            self.t[1][1],
            self.t[2][2],
            self.t[0][1],
            self.t[1][2],
            self.t[0][2],
        ]
    }

    pub fn tensor(&self) -> [[f64; 3]; 3] {
        self.t
    }

    /// Traction `σ^M·n`.
    pub fn traction(&self, n: [f64; 3]) -> [f64; 3] {
        let mut t = [0.0; 3];
        for (i, ti) in t.iter_mut().enumerate() {
            *ti = self.t[i][0] * n[0] + self.t[i][1] * n[1] + self.t[i][2] * n[2];
        }
        t
    }
}

/// The six unit macroscopic strain states (Voigt basis, engineering shear).
pub fn unit_strains() -> [MacroStrain; 6] {
    std::array::from_fn(|i| {
        let mut v = [0.0; 6];
        v[i] = 1.0;
        MacroStrain::from_voigt(v)
    })
}

/// The six unit macroscopic stress states, MPa.
pub fn unit_stresses() -> [MacroStress; 6] {
    std::array::from_fn(|i| {
        let mut v = [0.0; 6];
        v[i] = 1.0;
        MacroStress::from_voigt(v)
    })
}

/// Boundary-condition family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BcKind {
    Kubc,
    Subc,
    Pbc,
    Tensile,
}

/// One generated load case: constraints and loads in full-DOF numbering plus
/// the macroscopic state it encodes.
#[derive(Debug, Clone)]
pub struct LoadCase {
    pub kind: BcKind,
    pub strain: Option<MacroStrain>,
    pub stress: Option<MacroStress>,
    /// Tensile axis (0, 1, 2) and applied engineering strain.
    pub axis: Option<usize>,
    pub applied_strain: Option<f64>,
    pub dirichlet: Vec<(usize, f64)>,
    /// `(master, slave, jump)`: `u_slave = u_master + jump`.
    pub periodic: Vec<(usize, usize, f64)>,
    /// Consistent nodal loads, N; `None` for load-free cases.
    pub loads: Option<Vec<f64>>,
    /// SUBC self-equilibration diagnostics: (|net force| / ‖f‖₁,
    /// ‖net moment‖ / (L·‖f‖₁)).
    pub equilibration: Option<(f64, f64)>,
}

impl LoadCase {
    /// Builds the elimination map of this case's constraints.
    pub fn resolve(&self, mesh: &CellMesh) -> Result<ResolvedConstraints> {
        let n_dof = 3 * mesh.n_scalar_modes();
        let mut cs = ConstraintSet::new(n_dof);
        for &(master, slave, jump) in &self.periodic {
            cs.tie(slave, master, jump)?;
        }
        for &(dof, value) in &self.dirichlet {
            cs.fix(dof, value)?;
        }
        Ok(cs.resolve())
    }

    /// Machine-readable summary for run reports.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "macro_strain_voigt": self.strain.map(|e| e.voigt()),
            "macro_stress_voigt": self.stress.map(|s| s.voigt()),
            "tensile_axis": self.axis,
            "applied_strain": self.applied_strain,
            "n_dirichlet": self.dirichlet.len(),
            "n_periodic": self.periodic.len(),
            "has_loads": self.loads.is_some(),
            "equilibration": self.equilibration,
        })
    }
}

/// Kinematic uniform boundary conditions: `u = ε^M·x` on the box boundary.
pub fn kubc(mesh: &CellMesh, eps: &MacroStrain) -> LoadCase {
    let mut dirichlet = Vec::new();
    for (v, s) in mesh.boundary_vertices() {
        let u = eps.apply(mesh.vertex_position(v));
        for c in 0..3 {
            dirichlet.push((CellMesh::dof(s, c), u[c]));
        }
    }
    // The linear boundary field has no fluctuation content: all boundary
    // edge/face modes vanish.
    for s in mesh.boundary_higher_modes() {
        for c in 0..3 {
            dirichlet.push((CellMesh::dof(s, c), 0.0));
        }
    }
    LoadCase {
        kind: BcKind::Kubc,
        strain: Some(*eps),
        stress: None,
        axis: None,
        applied_strain: None,
        dirichlet,
        periodic: Vec::new(),
        loads: None,
        equilibration: None,
    }
}

/// Periodic boundary conditions: `u(x⁺) − u(x⁻) = ε^M·Δx` on opposite faces,
/// corner vertex fixed against translation.
pub fn pbc(mesh: &CellMesh, eps: &MacroStrain) -> LoadCase {
    let mut periodic = Vec::new();
    for pair in mesh.periodic_scalar_pairs() {
        let jump = if pair.is_vertex {
            eps.apply(pair.delta)
        } else {
            [0.0; 3]
        };
        for c in 0..3 {
            periodic.push((
                CellMesh::dof(pair.master, c),
                CellMesh::dof(pair.slave, c),
                jump[c],
            ));
        }
    }
    let origin = mesh.vertex_scalar([0, 0, 0]);
    let dirichlet = (0..3).map(|c| (CellMesh::dof(origin, c), 0.0)).collect();
    LoadCase {
        kind: BcKind::Pbc,
        strain: Some(*eps),
        stress: None,
        axis: None,
        applied_strain: None,
        dirichlet,
        periodic,
        loads: None,
        equilibration: None,
    }
}

/// Static uniform boundary conditions: consistent nodal loads of `t = σ^M·n`
/// on the six box faces, α-scaled per boundary voxel, with 3-2-1 pins.
pub fn subc(mesh: &CellMesh, field: &IndicatorField, sig: &MacroStress) -> Result<LoadCase> {
    let n_dof = 3 * mesh.n_scalar_modes();
    let mut loads = vec![0.0f64; n_dof];
    let v = mesh.voxels_per_cell;
    let (g_nodes, g_weights) = gauss_legendre(mesh.p + 1);
    let basis = mesh.basis();

    for face in BoxFace::ALL {
        let axis = face.axis();
        let (a1, a2) = other_axes(axis);
        let layer = if face.is_max() { field.dims[axis] - 1 } else { 0 };

        // Applicability: the boundary voxel layer must contain solid.
        let mut solid_in_layer = 0usize;
        for ib in 0..field.dims[a2] {
            for ia in 0..field.dims[a1] {
                let mut vox = [0usize; 3];
                vox[axis] = layer;
                vox[a1] = ia;
                vox[a2] = ib;
                if field.is_solid(field.index(vox[0], vox[1], vox[2])) {
                    solid_in_layer += 1;
                }
            }
        }
        if solid_in_layer == 0 {
            return Err(Error::Geometry(format!(
                "SUBC inapplicable: boundary face {face:?} is entirely void"
            )));
        }

        let traction = sig.traction(face.normal());
        if traction.iter().all(|&t| t == 0.0) {
            continue;
        }
        let xi_face = if face.is_max() { 1.0 } else { -1.0 };
        // Physical sub-face measure: cell face area / 4 (reference-to-physical
        // Jacobian) times the sub-interval half-widths 1/v.
        let jac = mesh.cell_size[a1] / 2.0 * mesh.cell_size[a2] / 2.0
            / (v[a1] as f64)
            / (v[a2] as f64);

        // Per-mode surface integrals ∫ N_m dΓ over each voxel sub-face of the
        // cell face: identical for every cell of the face, so tabulate once.
        let n_modes = mesh.modes_per_cell();
        let mut table = vec![vec![0.0f64; n_modes]; v[a1] * v[a2]];
        for sb in 0..v[a2] {
            for sa in 0..v[a1] {
                let w_m = &mut table[sa + v[a1] * sb];
                for (gb, &nb) in g_nodes.iter().enumerate() {
                    for (ga, &na) in g_nodes.iter().enumerate() {
                        let mut local = [0.0f64; 3];
                        local[axis] = xi_face;
                        local[a1] = -1.0 + (2.0 * sa as f64 + 1.0 + na) / v[a1] as f64;
                        local[a2] = -1.0 + (2.0 * sb as f64 + 1.0 + nb) / v[a2] as f64;
                        let w = g_weights[ga] * g_weights[gb] * jac;
                        let (values, _) = basis.evaluate(local);
                        for (m, &nv) in values.iter().enumerate() {
                            w_m[m] += w * nv;
                        }
                    }
                }
            }
        }

        // Sweep the face cells, α-scaling each sub-face by its boundary voxel.
        let cell_layer = if face.is_max() { mesh.cells[axis] - 1 } else { 0 };
        for cb in 0..mesh.cells[a2] {
            for ca in 0..mesh.cells[a1] {
                let mut cell = [0usize; 3];
                cell[axis] = cell_layer;
                cell[a1] = ca;
                cell[a2] = cb;
                let scalars = mesh.cell_scalar_modes(cell);
                for sb in 0..v[a2] {
                    for sa in 0..v[a1] {
                        let mut vox = [0usize; 3];
                        vox[axis] = layer;
                        vox[a1] = ca * v[a1] + sa;
                        vox[a2] = cb * v[a2] + sb;
                        let alpha = field.alpha_at(field.index(vox[0], vox[1], vox[2]));
                        let w_m = &table[sa + v[a1] * sb];
                        for (m, &s) in scalars.iter().enumerate() {
                            let wa = alpha * w_m[m];
                            if wa == 0.0 {
                                continue;
                            }
                            for c in 0..3 {
                                loads[CellMesh::dof(s, c)] += traction[c] * wa;
                            }
                        }
                    }
                }
            }
        }
    }

    // 3-2-1 pins against the six rigid modes: origin fully fixed, the far-x
    // vertex pinned in y and z, the far-y vertex pinned in z.
    let mut dirichlet = Vec::new();
    let o = mesh.vertex_scalar([0, 0, 0]);
    for c in 0..3 {
        dirichlet.push((CellMesh::dof(o, c), 0.0));
    }
    let vx = mesh.vertex_scalar([mesh.cells[0], 0, 0]);
    dirichlet.push((CellMesh::dof(vx, 1), 0.0));
    dirichlet.push((CellMesh::dof(vx, 2), 0.0));
    let vy = mesh.vertex_scalar([0, mesh.cells[1], 0]);
    dirichlet.push((CellMesh::dof(vy, 2), 0.0));

    let equilibration = equilibration_residual(mesh, &loads);
    Ok(LoadCase {
        kind: BcKind::Subc,
        strain: None,
        stress: Some(*sig),
        axis: None,
        applied_strain: None,
        dirichlet,
        periodic: Vec::new(),
        loads: Some(loads),
        equilibration: Some(equilibration),
    })
}

/// Numerical tensile test along `axis` with frictionless grips: the minus
/// face is held at zero normal displacement, the plus face is moved to
/// `strain·L_axis`, lateral faces stay traction-free.
pub fn tensile(mesh: &CellMesh, axis: usize, strain: f64) -> Result<LoadCase> {
    if axis > 2 {
        return Err(Error::Input(format!("tensile axis must be 0, 1 or 2, got {axis}")));
    }
    if strain == 0.0 {
        return Err(Error::Input("tensile strain must be nonzero".into()));
    }
    let (minus, plus) = match axis {
        0 => (BoxFace::XMin, BoxFace::XMax),
        1 => (BoxFace::YMin, BoxFace::YMax),
        _ => (BoxFace::ZMin, BoxFace::ZMax),
    };
    let u_plus = strain * mesh.box_extent[axis];
    let mut dirichlet = Vec::new();
    for (face, value) in [(minus, 0.0), (plus, u_plus)] {
        for (_, s) in mesh.face_vertices(face) {
            dirichlet.push((CellMesh::dof(s, axis), value));
        }
        // A planar grip face has no normal fluctuation content.
        for s in mesh.face_higher_modes(face) {
            dirichlet.push((CellMesh::dof(s, axis), 0.0));
        }
    }
    // In-plane pins on the minus face: both transverse components at the
    // origin, one at a far vertex to stop rotation about the load axis.
    let (a1, a2) = other_axes(axis);
    let o = mesh.vertex_scalar([0, 0, 0]);
    dirichlet.push((CellMesh::dof(o, a1), 0.0));
    dirichlet.push((CellMesh::dof(o, a2), 0.0));
    let mut far = [0usize; 3];
    far[a1] = mesh.cells[a1];
    let f = mesh.vertex_scalar(far);
    dirichlet.push((CellMesh::dof(f, a2), 0.0));

    Ok(LoadCase {
        kind: BcKind::Tensile,
        strain: None,
        stress: None,
        axis: Some(axis),
        applied_strain: Some(strain),
        dirichlet,
        periodic: Vec::new(),
        loads: None,
        equilibration: None,
    })
}

/// Net force and net moment of a load vector, tested against the rigid-body
/// modes (vertex DOFs carry the affine field, higher modes are zero), both
/// relative to ‖f‖₁. Used to verify SUBC self-equilibration.
pub fn equilibration_residual(mesh: &CellMesh, loads: &[f64]) -> (f64, f64) {
    let norm1: f64 = loads.iter().map(|f| f.abs()).sum();
    if norm1 == 0.0 {
        return (0.0, 0.0);
    }
    let center = [
        mesh.box_extent[0] / 2.0,
        mesh.box_extent[1] / 2.0,
        mesh.box_extent[2] / 2.0,
    ];
    let mut force = [0.0f64; 3];
    let mut moment = [0.0f64; 3];
    let d = mesh.vertex_dims();
    for vz in 0..d[2] {
        for vy in 0..d[1] {
            for vx in 0..d[0] {
                let v = [vx, vy, vz];
                let s = mesh.vertex_scalar(v);
                let x = mesh.vertex_position(v);
                let r = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                let f = [
                    loads[CellMesh::dof(s, 0)],
                    loads[CellMesh::dof(s, 1)],
                    loads[CellMesh::dof(s, 2)],
                ];
                for c in 0..3 {
                    force[c] += f[c];
                }
                moment[0] += r[1] * f[2] - r[2] * f[1];
                moment[1] += r[2] * f[0] - r[0] * f[2];
                moment[2] += r[0] * f[1] - r[1] * f[0];
            }
        }
    }
    let fmax = force.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mmax = moment.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let l = mesh
        .box_extent
        .iter()
        .fold(0.0f64, |a, &x| a.max(x));
    (fmax / norm1, mmax / (l * norm1))
}
