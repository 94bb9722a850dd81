//! Homogenization post-processing and drivers.
//!
//! Turns solved displacement fields into volume-averaged stresses and strains,
//! and stacks six unit load cases into an effective stiffness tensor per
//! boundary-condition family. Strain averages run over the full embedding box
//! (void contributions enter through the fictitious α stiffness of the solved
//! field); stress averages come from nodal forces, with an independent volume
//! quadrature as cross-check. A moving-window driver repeats the tensor
//! identification over sub-images for representativity studies, and a direct
//! tensile driver extracts effective engineering constants from a virtual
//! grip-loaded test.

use crate::bc::{self, BcKind, LoadCase};
use crate::material::{
    engineering_constants, ElasticityTensor, EngineeringConstants, IsotropicMaterial,
};
use crate::mesh::{build_mesh, other_axes, BoxFace, CellMesh};
use crate::preint::{build_cache, DomainCoefficients, StrainQuadrature, VoxelStiffnessCache};
use crate::system::{
    assemble_reduced_multi, cut_cell_blocks, nodal_forces, solve_pcg, CsrMatrix, LoadData,
    Precond, ResolvedConstraints, SolveOptions, SolveReport,
};
use crate::voxel::{porosity, IndicatorField, PhaseMap};
use crate::{par, Error, Result};
use nalgebra::{DMatrix, Matrix6};
use serde::Serialize;

// ---------------------------------------------------------------------------
// Small tensor helpers (3×3 working form, Voigt on the way out)
// ---------------------------------------------------------------------------

type T3 = [[f64; 3]; 3];

fn sym3(g: &T3) -> T3 {
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = 0.5 * (g[i][j] + g[j][i]);
        }
    }
    s
}

fn scale3(t: &T3, s: f64) -> T3 {
    let mut r = *t;
    for row in &mut r {
        for v in row {
            *v *= s;
        }
    }
    r
}

fn sub3(a: &T3, b: &T3) -> T3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][j] - b[i][j];
        }
    }
    r
}

fn frob3(t: &T3) -> f64 {
    t.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Voigt stress vector `(σ11, σ22, σ33, σ12, σ23, σ13)` of a symmetric tensor.
fn stress_voigt(t: &T3) -> [f64; 6] {
    [t[0][0], t[1][1], t[2][2], t[0][1], t[1][2], t[0][2]]
}

/// Voigt strain vector with engineering shears `(ε11, ε22, ε33, γ12, γ23, γ13)`.
fn strain_voigt(t: &T3) -> [f64; 6] {
    [
        t[0][0],
        t[1][1],
        t[2][2],
        t[0][1] + t[1][0],
        t[1][2] + t[2][1],
        t[0][2] + t[2][0],
    ]
}

/// Contraction `σ : ε` of Voigt stress with engineering-shear Voigt strain.
fn voigt_contract(sig: &[f64; 6], eps: &[f64; 6]) -> f64 {
    sig.iter().zip(eps).map(|(s, e)| s * e).sum()
}

/// Physical volume of the embedding box Ω_e, mm³.
fn box_volume(mesh: &CellMesh) -> f64 {
    mesh.box_extent[0] * mesh.box_extent[1] * mesh.box_extent[2]
}

fn check_u(mesh: &CellMesh, u: &[f64]) -> Result<()> {
    let n = 3 * mesh.n_scalar_modes();
    if u.len() != n {
        return Err(Error::Input(format!(
            "displacement vector has {} entries, expected {n}",
            u.len()
        )));
    }
    Ok(())
}

fn check_dims(mesh: &CellMesh, dims: [usize; 3]) -> Result<()> {
    let expected = [
        mesh.cells[0] * mesh.voxels_per_cell[0],
        mesh.cells[1] * mesh.voxels_per_cell[1],
        mesh.cells[2] * mesh.voxels_per_cell[2],
    ];
    if dims != expected {
        return Err(Error::Input(format!(
            "voxel field {dims:?} does not match mesh tiling {expected:?}"
        )));
    }
    Ok(())
}

fn check_field(mesh: &CellMesh, field: &IndicatorField) -> Result<()> {
    check_dims(mesh, field.dims)
}

// ---------------------------------------------------------------------------
// Volume averaging of strains
// ---------------------------------------------------------------------------

/// Which voxels a volume integral runs over.
#[derive(Clone, Copy)]
enum Region<'a> {
    All,
    Solid(&'a IndicatorField),
    Void(&'a IndicatorField),
}

/// Per-slot tables derived from a [`StrainQuadrature`]: integrated shape
/// gradients `∫ ∇N dV` over each voxel sub-domain and the sub-domain volumes.
/// Cell integrals of `∇u` reduce to `Σ_m u_m ⊗ G_m` with these, so volume
/// averages cost one pass over coefficients instead of one over Gauss points.
struct GradTable {
    per_slot: Vec<Vec<[f64; 3]>>,
    volumes: Vec<f64>,
    coords: Vec<[usize; 3]>,
}

impl GradTable {
    fn build(mesh: &CellMesh, sq: &StrainQuadrature) -> Self {
        let n_modes = mesh.modes_per_cell();
        let v = mesh.voxels_per_cell;
        let slots = sq.slot_count();
        let mut per_slot = Vec::with_capacity(slots);
        let mut volumes = Vec::with_capacity(slots);
        let mut coords = Vec::with_capacity(slots);
        for s in 0..slots {
            let mut g = vec![[0.0; 3]; n_modes];
            let mut vol = 0.0;
            for (w, grads) in sq.slot(s) {
                vol += w;
                for (m, gr) in grads.iter().enumerate() {
                    for d in 0..3 {
                        g[m][d] += w * gr[d];
                    }
                }
            }
            per_slot.push(g);
            volumes.push(vol);
            coords.push([s % v[0], s / v[0] % v[1], s / (v[0] * v[1])]);
        }
        Self { per_slot, volumes, coords }
    }
}

/// Integral of the displacement gradient over a voxel region, together with
/// the region volume.
fn integrate_gradient(
    mesh: &CellMesh,
    table: &GradTable,
    u: &[f64],
    region: Region,
) -> Result<(T3, f64)> {
    check_u(mesh, u)?;
    if let Region::Solid(f) | Region::Void(f) = region {
        check_field(mesh, f)?;
    }
    let v = mesh.voxels_per_cell;
    let n_modes = mesh.modes_per_cell();
    let mut acc = [[0.0; 3]; 3];
    let mut vol = 0.0;
    for ck in 0..mesh.cells[2] {
        for cj in 0..mesh.cells[1] {
            for ci in 0..mesh.cells[0] {
                let dofs = mesh.cell_dofs([ci, cj, ck]);
                let base = [ci * v[0], cj * v[1], ck * v[2]];
                for (slot, g_modes) in table.per_slot.iter().enumerate() {
                    let take = match region {
                        Region::All => true,
                        Region::Solid(f) | Region::Void(f) => {
                            let s = table.coords[slot];
                            let solid = f.is_solid(f.index(
                                base[0] + s[0],
                                base[1] + s[1],
                                base[2] + s[2],
                            ));
                            matches!(region, Region::Solid(_)) == solid
                        }
                    };
                    if !take {
                        continue;
                    }
                    vol += table.volumes[slot];
                    for (m, g) in g_modes.iter().enumerate().take(n_modes) {
                        for c in 0..3 {
                            let umc = u[dofs[3 * m + c]];
                            acc[c][0] += umc * g[0];
                            acc[c][1] += umc * g[1];
                            acc[c][2] += umc * g[2];
                        }
                    }
                }
            }
        }
    }
    Ok((acc, vol))
}

/// Volume average of the (unsymmetrized) displacement gradient `⟨∇u⟩` over the
/// full embedding box. Useful when the rotation part matters.
pub fn average_displacement_gradient(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    u: &[f64],
) -> Result<T3> {
    let table = GradTable::build(mesh, sq);
    let (g, vol) = integrate_gradient(mesh, &table, u, Region::All)?;
    Ok(scale3(&g, 1.0 / vol))
}

/// Volume-average strain `⟨ε⟩ = ⟨sym ∇u⟩` over the full embedding box Ω_e,
/// voids included.
pub fn average_strain(mesh: &CellMesh, sq: &StrainQuadrature, u: &[f64]) -> Result<T3> {
    Ok(sym3(&average_displacement_gradient(mesh, sq, u)?))
}

/// Average strain restricted to solid voxels, returned with the solid volume
/// fraction `c_m` (both from the same quadrature tables).
pub fn matrix_average_strain(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    field: &IndicatorField,
    u: &[f64],
) -> Result<(T3, f64)> {
    let table = GradTable::build(mesh, sq);
    let (g, vol) = integrate_gradient(mesh, &table, u, Region::Solid(field))?;
    let mean = if vol > 0.0 { scale3(&sym3(&g), 1.0 / vol) } else { [[0.0; 3]; 3] };
    Ok((mean, vol / box_volume(mesh)))
}

/// Average strain restricted to void voxels, with the void volume fraction.
pub fn void_average_strain(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    field: &IndicatorField,
    u: &[f64],
) -> Result<(T3, f64)> {
    let table = GradTable::build(mesh, sq);
    let (g, vol) = integrate_gradient(mesh, &table, u, Region::Void(field))?;
    let mean = if vol > 0.0 { scale3(&sym3(&g), 1.0 / vol) } else { [[0.0; 3]; 3] };
    Ok((mean, vol / box_volume(mesh)))
}

/// Cavity strain `ε_c = ⟨ε⟩_Ω − c_m ⟨ε⟩_matrix`: the part of the macroscopic
/// strain carried by pore deformation rather than by the solid skeleton.
pub fn cavity_strain(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    field: &IndicatorField,
    u: &[f64],
) -> Result<T3> {
    let table = GradTable::build(mesh, sq);
    let (g_all, vol_all) = integrate_gradient(mesh, &table, u, Region::All)?;
    let (g_m, vol_m) = integrate_gradient(mesh, &table, u, Region::Solid(field))?;
    let eps_all = scale3(&sym3(&g_all), 1.0 / vol_all);
    let c_m = vol_m / vol_all;
    let eps_m = if vol_m > 0.0 { scale3(&sym3(&g_m), 1.0 / vol_m) } else { [[0.0; 3]; 3] };
    Ok(sub3(&eps_all, &scale3(&eps_m, c_m)))
}

// ---------------------------------------------------------------------------
// Volume averaging of stresses
// ---------------------------------------------------------------------------

/// Average stress from nodal forces: `⟨σ⟩ V = Σ_v r_v ⊗ x_v` over mesh
/// vertices, with `r = K·u` in full numbering.
///
/// The sum over vertices alone is the exact volume integral of the discrete
/// stress, for any `u`: testing the bilinear form with `v = x_e·e_c` gives
/// `∫ σ_ce dV = rᵀ v`, and that affine field has unit vertex coefficients and
/// zero higher-mode coefficients. The result is symmetrized by the caller
/// where a symmetric average is required.
pub fn average_stress_nodal(mesh: &CellMesh, r: &[f64]) -> Result<T3> {
    check_u(mesh, r)?;
    let d = mesh.vertex_dims();
    let mut acc = [[0.0; 3]; 3];
    for vz in 0..d[2] {
        for vy in 0..d[1] {
            for vx in 0..d[0] {
                let v = [vx, vy, vz];
                let s = mesh.vertex_scalar(v);
                let x = mesh.vertex_position(v);
                for c in 0..3 {
                    let rc = r[CellMesh::dof(s, c)];
                    acc[c][0] += rc * x[0];
                    acc[c][1] += rc * x[1];
                    acc[c][2] += rc * x[2];
                }
            }
        }
    }
    Ok(scale3(&acc, 1.0 / box_volume(mesh)))
}

/// Integral of the stress `C(x):ε(u)` and of the strain energy `½ ε:C(x):ε`
/// by direct Gauss quadrature, with per-voxel Lamé coefficients (α-scaled for
/// porous media, per-phase for composites). The independent cross-check for
/// the nodal stress route and for the algebraic energy `½ uᵀKu`.
pub fn stress_energy_quadrature(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    coeffs: &DomainCoefficients,
    u: &[f64],
) -> Result<(T3, f64)> {
    check_u(mesh, u)?;
    check_dims(mesh, coeffs.dims)?;
    let v = mesh.voxels_per_cell;
    let n_modes = mesh.modes_per_cell();
    let cells = mesh.cells;
    let [nx, ny, _] = coeffs.dims;
    let parts: Vec<([f64; 9], f64)> = par::map_indexed(mesh.cell_count(), |c| {
        let cell = [c % cells[0], c / cells[0] % cells[1], c / (cells[0] * cells[1])];
        let dofs = mesh.cell_dofs(cell);
        let u_cell: Vec<f64> = dofs.iter().map(|&g| u[g]).collect();
        let base = [cell[0] * v[0], cell[1] * v[1], cell[2] * v[2]];
        let mut sig = [0.0; 9];
        let mut energy = 0.0;
        for slot in 0..sq.slot_count() {
            let s = [slot % v[0], slot / v[0] % v[1], slot / (v[0] * v[1])];
            let idx = base[0] + s[0] + nx * (base[1] + s[1] + ny * (base[2] + s[2]));
            let (la, mu) = coeffs.lame_at(idx);
            for (w, grads) in sq.slot(slot) {
                let mut grad = [[0.0; 3]; 3];
                for (m, g) in grads.iter().enumerate().take(n_modes) {
                    for c in 0..3 {
                        let umc = u_cell[3 * m + c];
                        grad[c][0] += umc * g[0];
                        grad[c][1] += umc * g[1];
                        grad[c][2] += umc * g[2];
                    }
                }
                let eps = sym3(&grad);
                let tr = eps[0][0] + eps[1][1] + eps[2][2];
                let mut sq_sum = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        sq_sum += eps[i][j] * eps[i][j];
                        sig[3 * i + j] += w * 2.0 * mu * eps[i][j];
                    }
                }
                for i in 0..3 {
                    sig[4 * i] += w * la * tr;
                }
                energy += w * (0.5 * la * tr * tr + mu * sq_sum);
            }
        }
        (sig, energy)
    });
    let mut sig = [[0.0; 3]; 3];
    let mut energy = 0.0;
    for (s, e) in parts {
        for i in 0..3 {
            for j in 0..3 {
                sig[i][j] += s[3 * i + j];
            }
        }
        energy += e;
    }
    Ok((sig, energy))
}

/// Volume-average stress by direct quadrature of `C(x):ε(u)` over Ω_e.
pub fn average_stress_volume(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    coeffs: &DomainCoefficients,
    u: &[f64],
) -> Result<T3> {
    let (sig, _) = stress_energy_quadrature(mesh, sq, coeffs, u)?;
    Ok(scale3(&sig, 1.0 / box_volume(mesh)))
}

/// Strain energy `∫ ½ ε:C(x):ε dV` by direct quadrature; equals `½ uᵀKu` up
/// to integration roundoff.
pub fn strain_energy_quadrature(
    mesh: &CellMesh,
    sq: &StrainQuadrature,
    coeffs: &DomainCoefficients,
    u: &[f64],
) -> Result<f64> {
    Ok(stress_energy_quadrature(mesh, sq, coeffs, u)?.1)
}

// ---------------------------------------------------------------------------
// Per-case records and the effective-tensor drivers
// ---------------------------------------------------------------------------

/// Volume averages of one solved load case, Voigt notation (engineering
/// shears on strains).
#[derive(Debug, Clone, Serialize)]
pub struct AveragedState {
    /// ⟨σ⟩ over Ω_e from nodal forces, symmetrized.
    pub sigma: [f64; 6],
    /// ⟨ε⟩ over Ω_e.
    pub eps: [f64; 6],
    /// Cavity strain ε_c = ⟨ε⟩ − c_m ⟨ε⟩_matrix.
    pub cavity: [f64; 6],
    /// Energy density ⟨½ σ:ε⟩ = uᵀKu / (2V), MPa.
    pub energy_density: f64,
    /// Solid volume fraction c_m.
    pub matrix_fraction: f64,
}

/// Diagnostics of one unit load case inside a tensor identification.
#[derive(Debug, Clone, Serialize)]
pub struct CaseRecord {
    pub averaged: AveragedState,
    /// Macrohomogeneity residual `|⟨σ⟩:⟨ε⟩ − ⟨σ:ε⟩| / |⟨σ:ε⟩|`.
    pub hill_residual: f64,
    /// Relative Frobenius gap between the nodal-force and volume-quadrature
    /// stress averages.
    pub stress_route_gap: f64,
    /// Asymmetry `‖σ − σᵀ‖/‖σ‖` of the raw nodal stress average.
    pub stress_asymmetry: f64,
    /// Net (force, moment) residual of applied loads, traction cases only.
    pub equilibration: Option<(f64, f64)>,
    pub solver: SolveReport,
}

/// Result of one six-case stiffness identification.
#[derive(Debug, Clone)]
pub struct TensorRun {
    pub kind: BcKind,
    /// Effective stiffness, symmetrized, Voigt (11, 22, 33, 12, 23, 13), MPa.
    pub tensor: ElasticityTensor,
    /// Major-symmetry deviation of the raw (pre-symmetrization) matrix.
    pub asymmetry: f64,
    /// One record per unit case, Voigt order.
    pub cases: Vec<CaseRecord>,
    pub porosity: f64,
    /// True when the geometry has no solid voxels at all; the identified
    /// tensor is then the α-scaled ghost stiffness, not a material property.
    pub degenerate: bool,
}

/// Preconditioner selection for the embedded solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PrecondKind {
    /// Diagonal scaling everywhere.
    Jacobi,
    /// Block Cholesky on cut cells (both α values present), diagonal
    /// elsewhere. Falls back to Jacobi on uncut geometries.
    SchwarzCut,
}

/// Controls shared by all homogenization drivers.
#[derive(Debug, Clone)]
pub struct HomogOptions {
    pub solve: SolveOptions,
    pub precond: PrecondKind,
}

impl Default for HomogOptions {
    fn default() -> Self {
        Self { solve: SolveOptions::default(), precond: PrecondKind::SchwarzCut }
    }
}

/// Driver bundling the mesh-level tables (stiffness cache, quadrature,
/// integrated gradients) so repeated identifications on the same grid share
/// them — the moving-window sweep and the porosity series reuse one instance.
pub struct Homogenizer<'a> {
    pub mesh: &'a CellMesh,
    pub cache: &'a VoxelStiffnessCache,
    pub sq: &'a StrainQuadrature,
    pub opts: HomogOptions,
    table: GradTable,
}

impl<'a> Homogenizer<'a> {
    pub fn new(mesh: &'a CellMesh, cache: &'a VoxelStiffnessCache, sq: &'a StrainQuadrature) -> Self {
        assert_eq!(cache.dofs_per_cell(), mesh.dofs_per_cell(), "cache built for another mesh");
        assert_eq!(sq.slot_count(), cache.slot_count(), "quadrature built for another mesh");
        let table = GradTable::build(mesh, sq);
        Self { mesh, cache, sq, opts: HomogOptions::default(), table }
    }

    pub fn with_options(mut self, opts: HomogOptions) -> Self {
        self.opts = opts;
        self
    }

    /// Identifies the effective stiffness of `field` under the given
    /// boundary-condition family: six unit macroscopic strain cases for
    /// KUBC/PBC (tensor columns are the averaged stresses) or six unit stress
    /// cases for SUBC (compliance columns are the averaged strains, then
    /// inverted).
    pub fn effective_tensor(
        &self,
        field: &IndicatorField,
        mat: &IsotropicMaterial,
        kind: BcKind,
    ) -> Result<TensorRun> {
        check_field(self.mesh, field)?;
        match kind {
            BcKind::Kubc | BcKind::Pbc => self.strain_driven(field, mat, kind),
            BcKind::Subc => self.stress_driven(field, mat),
            BcKind::Tensile => Err(Error::Input(
                "the tensile test is a direct simulation, not a homogenization family".into(),
            )),
        }
    }

    fn strain_driven(
        &self,
        field: &IndicatorField,
        mat: &IsotropicMaterial,
        kind: BcKind,
    ) -> Result<TensorRun> {
        let cases: Vec<LoadCase> = bc::unit_strains()
            .iter()
            .map(|e| match kind {
                BcKind::Kubc => bc::kubc(self.mesh, e),
                _ => bc::pbc(self.mesh, e),
            })
            .collect();
        let coeffs = DomainCoefficients::from_indicator(field, mat);
        let sols = self.solve_family(&coeffs, &cases)?;
        let mut raw = Matrix6::zeros();
        let mut records = Vec::with_capacity(6);
        for (j, (u, report)) in sols.into_iter().enumerate() {
            let rec = self.case_record(&coeffs, Some(field), u, report, None)?;
            for i in 0..6 {
                raw[(i, j)] = rec.averaged.sigma[i];
            }
            records.push(rec);
        }
        let t = ElasticityTensor::from_matrix(raw);
        Ok(TensorRun {
            kind,
            tensor: t.symmetrized(),
            asymmetry: t.asymmetry(),
            cases: records,
            porosity: porosity(field),
            degenerate: porosity(field) == 1.0,
        })
    }

    fn stress_driven(&self, field: &IndicatorField, mat: &IsotropicMaterial) -> Result<TensorRun> {
        let mut cases = Vec::with_capacity(6);
        for sig in bc::unit_stresses().iter() {
            cases.push(bc::subc(self.mesh, field, sig)?);
        }
        let coeffs = DomainCoefficients::from_indicator(field, mat);
        let sols = self.solve_family(&coeffs, &cases)?;
        let mut s_raw = Matrix6::zeros();
        let mut records = Vec::with_capacity(6);
        for (j, (u, report)) in sols.into_iter().enumerate() {
            let rec =
                self.case_record(&coeffs, Some(field), u, report, cases[j].equilibration)?;
            for i in 0..6 {
                s_raw[(i, j)] = rec.averaged.eps[i];
            }
            records.push(rec);
        }
        let asymmetry = ElasticityTensor::from_matrix(s_raw).asymmetry();
        let c = s_raw.try_inverse().ok_or_else(|| {
            Error::Geometry("traction-identified compliance matrix is singular".into())
        })?;
        Ok(TensorRun {
            kind: BcKind::Subc,
            tensor: ElasticityTensor::from_matrix(c).symmetrized(),
            asymmetry,
            cases: records,
            porosity: porosity(field),
            degenerate: porosity(field) == 1.0,
        })
    }

    /// Identifies the effective stiffness of a fully solid two-phase
    /// composite under a strain-driven family (KUBC or PBC). There is no
    /// cavity: the matrix fraction is one and the cavity strain zero by
    /// definition. Traction-driven identification is not offered for
    /// composites — the porous drivers cover SUBC.
    pub fn effective_tensor_two_phase(
        &self,
        phases: &PhaseMap,
        matrix: &IsotropicMaterial,
        particle: &IsotropicMaterial,
        kind: BcKind,
    ) -> Result<TensorRun> {
        check_dims(self.mesh, phases.dims)?;
        if !matches!(kind, BcKind::Kubc | BcKind::Pbc) {
            return Err(Error::Input(
                "two-phase identification supports KUBC and PBC only".into(),
            ));
        }
        let cases: Vec<LoadCase> = bc::unit_strains()
            .iter()
            .map(|e| match kind {
                BcKind::Kubc => bc::kubc(self.mesh, e),
                _ => bc::pbc(self.mesh, e),
            })
            .collect();
        let coeffs = DomainCoefficients::from_phases(phases, matrix, particle);
        let sols = self.solve_family(&coeffs, &cases)?;
        let mut raw = Matrix6::zeros();
        let mut records = Vec::with_capacity(6);
        for (j, (u, report)) in sols.into_iter().enumerate() {
            let rec = self.case_record(&coeffs, None, u, report, None)?;
            for i in 0..6 {
                raw[(i, j)] = rec.averaged.sigma[i];
            }
            records.push(rec);
        }
        let t = ElasticityTensor::from_matrix(raw);
        Ok(TensorRun {
            kind,
            tensor: t.symmetrized(),
            asymmetry: t.asymmetry(),
            cases: records,
            porosity: 0.0,
            degenerate: false,
        })
    }

    /// Runs a direct tensile test: grip faces normal to `axis`, prescribed
    /// engineering strain, traction-free laterals. Returns the effective
    /// modulus `E = (F/A)/ε` from the resultant grip force over the gross
    /// cross-section, plus Poisson estimates from volume-averaged lateral
    /// strains.
    pub fn tensile(
        &self,
        field: &IndicatorField,
        mat: &IsotropicMaterial,
        axis: usize,
        strain: f64,
    ) -> Result<TensileRun> {
        check_field(self.mesh, field)?;
        let case = bc::tensile(self.mesh, axis, strain)?;
        let coeffs = DomainCoefficients::from_indicator(field, mat);
        let mut sols = self.solve_family(&coeffs, std::slice::from_ref(&case))?;
        let (u, solver) = sols.pop().expect("one case in, one solution out");
        let r = nodal_forces(self.mesh, self.cache, &coeffs, &u)?;
        let face = [BoxFace::XMax, BoxFace::YMax, BoxFace::ZMax][axis];
        let mut force = 0.0;
        for (_, s) in self.mesh.face_vertices(face) {
            force += r[CellMesh::dof(s, axis)];
        }
        let (a1, a2) = other_axes(axis);
        let gross_area = self.mesh.box_extent[a1] * self.mesh.box_extent[a2];
        let (g_all, vol) = integrate_gradient(self.mesh, &self.table, &u, Region::All)?;
        let eps = scale3(&sym3(&g_all), 1.0 / vol);
        let lateral_strain = [eps[a1][a1], eps[a2][a2]];
        let energy_density = par::dot(&u, &r) / (2.0 * box_volume(self.mesh));
        Ok(TensileRun {
            axis,
            applied_strain: strain,
            modulus: force / gross_area / strain,
            poisson: [-lateral_strain[0] / strain, -lateral_strain[1] / strain],
            force,
            gross_area,
            lateral_strain,
            energy_density,
            solver,
        })
    }

    /// Assembles the shared reduced matrix of a constraint family and solves
    /// every case against it.
    fn solve_family(
        &self,
        coeffs: &DomainCoefficients,
        cases: &[LoadCase],
    ) -> Result<Vec<(Vec<f64>, SolveReport)>> {
        let mut resolved = Vec::with_capacity(cases.len());
        for case in cases {
            resolved.push(case.resolve(self.mesh)?);
        }
        let loads: Vec<LoadData> = cases
            .iter()
            .zip(&resolved)
            .map(|(c, r)| LoadData { cons: r, f_ext: c.loads.as_deref() })
            .collect();
        let (k_red, rhs) = assemble_reduced_multi(self.mesh, self.cache, coeffs, &loads)?;
        let precond = self.build_precond(&k_red, coeffs, &resolved[0])?;
        let mut out = Vec::with_capacity(rhs.len());
        for (j, b) in rhs.iter().enumerate() {
            let (u_free, report) = solve_pcg(&k_red, b, &precond, &self.opts.solve)
                .map_err(|e| Error::Case { index: j, source: Box::new(e) })?;
            out.push((resolved[j].expand(&u_free), report));
        }
        Ok(out)
    }

    fn build_precond(
        &self,
        k: &CsrMatrix,
        coeffs: &DomainCoefficients,
        cons: &ResolvedConstraints,
    ) -> Result<Precond> {
        match self.opts.precond {
            PrecondKind::Jacobi => Ok(Precond::jacobi(k)),
            PrecondKind::SchwarzCut => {
                let blocks = cut_cell_blocks(self.mesh, coeffs, cons);
                if blocks.is_empty() {
                    Ok(Precond::jacobi(k))
                } else {
                    Precond::schwarz(k, &blocks)
                }
            }
        }
    }

    fn case_record(
        &self,
        coeffs: &DomainCoefficients,
        solid: Option<&IndicatorField>,
        u: Vec<f64>,
        solver: SolveReport,
        equilibration: Option<(f64, f64)>,
    ) -> Result<CaseRecord> {
        let v_box = box_volume(self.mesh);
        let r = nodal_forces(self.mesh, self.cache, coeffs, &u)?;

        let (g_all, vol_all) = integrate_gradient(self.mesh, &self.table, &u, Region::All)?;
        let eps = scale3(&sym3(&g_all), 1.0 / vol_all);
        // Porous media split into skeleton and cavity contributions; fully
        // solid composites have no cavity by definition.
        let (c_m, cavity) = match solid {
            Some(field) => {
                let (g_m, vol_m) =
                    integrate_gradient(self.mesh, &self.table, &u, Region::Solid(field))?;
                let c_m = vol_m / vol_all;
                let eps_m =
                    if vol_m > 0.0 { scale3(&sym3(&g_m), 1.0 / vol_m) } else { [[0.0; 3]; 3] };
                (c_m, sub3(&eps, &scale3(&eps_m, c_m)))
            }
            None => (1.0, [[0.0; 3]; 3]),
        };

        let sig_raw = average_stress_nodal(self.mesh, &r)?;
        let sig = sym3(&sig_raw);
        let sig_norm = frob3(&sig_raw);
        let stress_asymmetry =
            if sig_norm > 0.0 { frob3(&sub3(&sig_raw, &sym3(&sig_raw))) * 2.0 / sig_norm } else { 0.0 };

        let (sig_vol_int, _) = stress_energy_quadrature(self.mesh, self.sq, coeffs, &u)?;
        let sig_vol = scale3(&sig_vol_int, 1.0 / v_box);
        let vol_norm = frob3(&sig_vol);
        let stress_route_gap = if vol_norm > 0.0 {
            frob3(&sub3(&sig, &sig_vol)) / vol_norm
        } else {
            frob3(&sub3(&sig, &sig_vol))
        };

        // ∫ σ:ε dV equals uᵀKu exactly; the Hill–Mandel residual compares it
        // with the product of the averages.
        let work = par::dot(&u, &r);
        let sigma = stress_voigt(&sig);
        let eps_v = strain_voigt(&eps);
        let denom = work.abs().max(f64::MIN_POSITIVE);
        let hill_residual = (voigt_contract(&sigma, &eps_v) * v_box - work).abs() / denom;

        Ok(CaseRecord {
            averaged: AveragedState {
                sigma,
                eps: eps_v,
                cavity: strain_voigt(&cavity),
                energy_density: work / (2.0 * v_box),
                matrix_fraction: c_m,
            },
            hill_residual,
            stress_route_gap,
            stress_asymmetry,
            equilibration,
            solver,
        })
    }
}

/// One-shot effective tensor: builds the per-mesh tables internally. Prefer
/// [`Homogenizer`] when running several identifications on the same grid.
pub fn effective_tensor(
    mesh: &CellMesh,
    field: &IndicatorField,
    mat: &IsotropicMaterial,
    kind: BcKind,
) -> Result<TensorRun> {
    let cache = build_cache(mesh)?;
    let sq = StrainQuadrature::build(mesh);
    Homogenizer::new(mesh, &cache, &sq).effective_tensor(field, mat, kind)
}

/// One-shot traction-driven (SUBC) effective tensor.
pub fn effective_tensor_subc(
    mesh: &CellMesh,
    field: &IndicatorField,
    mat: &IsotropicMaterial,
) -> Result<TensorRun> {
    effective_tensor(mesh, field, mat, BcKind::Subc)
}

// ---------------------------------------------------------------------------
// Order relations between the families
// ---------------------------------------------------------------------------

/// Result of the ordering check `C_SUBC ⪯ C_PBC ⪯ C_KUBC` (Löwner order).
#[derive(Debug, Clone, Serialize)]
pub struct OrderRelation {
    /// Smallest eigenvalue of `C_KUBC − C_PBC` (Mandel form).
    pub min_eig_kubc_minus_pbc: f64,
    /// Smallest eigenvalue of `C_PBC − C_SUBC` (Mandel form).
    pub min_eig_pbc_minus_subc: f64,
    /// Tolerance floor, `1e-6 · ‖C_KUBC‖` (Mandel Frobenius norm).
    pub threshold: f64,
    /// Leading principal minors of the shifted differences are nonnegative
    /// (secondary semidefiniteness check).
    pub leading_minors_ok: [bool; 2],
    pub pass: bool,
}

/// Checks the hierarchy of apparent stiffness tensors: traction-driven below
/// periodic below displacement-driven, up to a small spectral tolerance
/// relative to the KUBC magnitude.
pub fn order_relation_check(
    c_subc: &ElasticityTensor,
    c_pbc: &ElasticityTensor,
    c_kubc: &ElasticityTensor,
) -> OrderRelation {
    let threshold = 1e-6 * c_kubc.norm_mandel();
    let d1 = ElasticityTensor::from_matrix(c_kubc.c - c_pbc.c);
    let d2 = ElasticityTensor::from_matrix(c_pbc.c - c_subc.c);
    let e1 = d1.min_eigenvalue();
    let e2 = d2.min_eigenvalue();
    let minors = |d: &ElasticityTensor| {
        let shifted = d.mandel() + Matrix6::identity() * threshold;
        (1..=6).all(|k| {
            DMatrix::from_fn(k, k, |i, j| shifted[(i, j)]).determinant() >= 0.0
        })
    };
    OrderRelation {
        min_eig_kubc_minus_pbc: e1,
        min_eig_pbc_minus_subc: e2,
        threshold,
        leading_minors_ok: [minors(&d1), minors(&d2)],
        pass: e1 >= -threshold && e2 >= -threshold,
    }
}

/// Upper-triangle entries of a Voigt stiffness matrix, row-major:
/// `c11, c12, …, c16, c22, …, c66` (21 values).
pub fn upper_triangle(t: &ElasticityTensor) -> [f64; 21] {
    let mut out = [0.0; 21];
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            out[k] = t.c[(i, j)];
            k += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Moving-window sweep
// ---------------------------------------------------------------------------

/// Scalar quantity tracked across a window sweep, extracted from directional
/// engineering constants. Indices follow the axis order for moduli and the
/// Voigt shear order `(xy, yz, xz)` for shear moduli and Poisson ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quantity {
    E(usize),
    G(usize),
    Nu(usize),
}

impl Quantity {
    pub fn extract(&self, eng: &EngineeringConstants) -> f64 {
        match *self {
            Quantity::E(i) => eng.e[i],
            Quantity::G(i) => eng.g[i],
            Quantity::Nu(i) => eng.nu[i],
        }
    }

    pub fn label(&self) -> String {
        let axis = ["xx", "yy", "zz"];
        let pair = ["xy", "yz", "xz"];
        match *self {
            Quantity::E(i) => format!("E_{}", axis[i]),
            Quantity::G(i) => format!("G_{}", pair[i]),
            Quantity::Nu(i) => format!("nu_{}", pair[i]),
        }
    }
}

/// One window of a sweep. `tensor`/`eng` are present iff the window solved
/// and yielded valid engineering constants; otherwise `error` says why and
/// the window is excluded from the statistics.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    /// Window indices along each axis.
    pub index: [usize; 3],
    /// Window origin in voxel coordinates.
    pub origin: [usize; 3],
    pub tensor: Option<ElasticityTensor>,
    pub eng: Option<EngineeringConstants>,
    /// Largest Hill–Mandel residual over the six unit cases.
    pub hill_max: f64,
    pub error: Option<String>,
}

/// Population statistics of the tracked quantity over successful windows.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepStats {
    pub mean: f64,
    /// Population standard deviation (divisor N).
    pub std: f64,
    /// Coefficient of variation σ/μ; zero when the mean vanishes.
    pub cv: f64,
    pub count: usize,
}

/// Full result of a moving-window sweep.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub kind: BcKind,
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub quantity: Quantity,
    pub records: Vec<WindowRecord>,
    pub stats: SweepStats,
    pub failed: usize,
}

impl SweepReport {
    /// Per-window CSV: indices, voxel origin, the 21 upper-triangle stiffness
    /// entries, directional moduli, and the worst Hill residual. Failed
    /// windows are omitted (they are kept in `records` with their error).
    pub fn to_csv(&self) -> String {
        let mut header = String::from("ix,iy,iz,ox,oy,oz");
        for i in 0..6 {
            for j in i..6 {
                header.push_str(&format!(",c{}{}", i + 1, j + 1));
            }
        }
        header.push_str(",e_xx,e_yy,e_zz,hill_residual_max\n");
        let mut out = header;
        for rec in &self.records {
            let (Some(t), Some(eng)) = (&rec.tensor, &rec.eng) else { continue };
            let mut row = format!(
                "{},{},{},{},{},{}",
                rec.index[0], rec.index[1], rec.index[2], rec.origin[0], rec.origin[1],
                rec.origin[2]
            );
            for v in upper_triangle(t) {
                row.push_str(&format!(",{v:.17e}"));
            }
            for e in eng.e {
                row.push_str(&format!(",{e:.17e}"));
            }
            row.push_str(&format!(",{:.17e}\n", rec.hill_max));
            out.push_str(&row);
        }
        out
    }
}

/// Identifies the effective tensor on every window of size `window` voxels,
/// advanced by `stride`, and aggregates the tracked quantity. All windows
/// share one mesh, stiffness cache, and quadrature (they have identical
/// dimensions); failed windows are recorded and excluded from the statistics.
#[allow(clippy::too_many_arguments)]
pub fn window_sweep(
    field: &IndicatorField,
    mat: &IsotropicMaterial,
    kind: BcKind,
    window: [usize; 3],
    stride: [usize; 3],
    voxels_per_cell: [usize; 3],
    p: usize,
    quantity: Quantity,
    opts: &HomogOptions,
) -> Result<SweepReport> {
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::Input("window stride must be >= 1 in every direction".into()));
    }
    for d in 0..3 {
        if window[d] == 0 || window[d] > field.dims[d] {
            return Err(Error::Geometry(format!(
                "window {:?} does not fit into image dims {:?}",
                window, field.dims
            )));
        }
    }
    let mesh = build_mesh(window, field.spacing, voxels_per_cell, p)?;
    let cache = build_cache(&mesh)?;
    let sq = StrainQuadrature::build(&mesh);
    let hom = Homogenizer::new(&mesh, &cache, &sq)
        .with_options(opts.clone());

    let counts = [
        (field.dims[0] - window[0]) / stride[0] + 1,
        (field.dims[1] - window[1]) / stride[1] + 1,
        (field.dims[2] - window[2]) / stride[2] + 1,
    ];
    let mut records = Vec::with_capacity(counts[0] * counts[1] * counts[2]);
    let mut values = Vec::new();
    let mut failed = 0usize;
    for iz in 0..counts[2] {
        for iy in 0..counts[1] {
            for ix in 0..counts[0] {
                let index = [ix, iy, iz];
                let origin = [ix * stride[0], iy * stride[1], iz * stride[2]];
                let sub = field.window(origin, window)?;
                let outcome = hom.effective_tensor(&sub, mat, kind).and_then(|run| {
                    let eng = engineering_constants(&run.tensor)?;
                    Ok((run, eng))
                });
                match outcome {
                    Ok((run, eng)) => {
                        let hill_max = run
                            .cases
                            .iter()
                            .map(|c| c.hill_residual)
                            .fold(0.0f64, f64::max);
                        values.push(quantity.extract(&eng));
                        records.push(WindowRecord {
                            index,
                            origin,
                            tensor: Some(run.tensor),
                            eng: Some(eng),
                            hill_max,
                            error: None,
                        });
                    }
                    Err(e) => {
                        failed += 1;
                        records.push(WindowRecord {
                            index,
                            origin,
                            tensor: None,
                            eng: None,
                            hill_max: f64::INFINITY,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
    }
    let count = values.len();
    // A constant population (identical windows: homogeneous or period-aligned
    // images) has zero scatter exactly; short-circuiting it keeps the rounded
    // running sum from injecting one-ulp noise into mean and CV.
    let constant = count > 0 && values.iter().all(|&v| v == values[0]);
    let mean = if count == 0 {
        0.0
    } else if constant {
        values[0]
    } else {
        values.iter().sum::<f64>() / count as f64
    };
    let var = if count == 0 || constant {
        0.0
    } else {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64
    };
    let std = var.sqrt();
    let cv = if mean != 0.0 { std / mean } else { 0.0 };
    Ok(SweepReport {
        kind,
        window,
        stride,
        quantity,
        records,
        stats: SweepStats { mean, std, cv, count },
        failed,
    })
}

// ---------------------------------------------------------------------------
// Direct tensile test
// ---------------------------------------------------------------------------

/// Result of one virtual tensile test.
#[derive(Debug, Clone, Serialize)]
pub struct TensileRun {
    pub axis: usize,
    pub applied_strain: f64,
    /// Effective Young's modulus `(F/A)/ε`, MPa, gross cross-section.
    pub modulus: f64,
    /// Poisson estimates toward the two lateral axes (ascending axis order),
    /// from volume-averaged lateral strains.
    pub poisson: [f64; 2],
    /// Resultant normal force on the loaded face, N (MPa·mm²).
    pub force: f64,
    /// Gross cross-section area, mm².
    pub gross_area: f64,
    /// Volume-averaged lateral normal strains (ascending axis order).
    pub lateral_strain: [f64; 2],
    /// Strain energy density ⟨½ σ:ε⟩, MPa.
    pub energy_density: f64,
    pub solver: SolveReport,
}

impl TensileRun {
    /// Two-column stress–strain record of the (linear) test, sampled on
    /// `samples ≥ 2` evenly spaced strain levels from zero to the applied
    /// strain.
    pub fn stress_strain_csv(&self, samples: usize) -> String {
        let n = samples.max(2);
        let stress_peak = self.force / self.gross_area;
        let mut out = String::from("strain,stress_mpa\n");
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            out.push_str(&format!(
                "{:.17e},{:.17e}\n",
                t * self.applied_strain,
                t * stress_peak
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::isotropic_tensor;
    use crate::mesh::build_mesh;
    use crate::preint::gauss_legendre;
    use crate::voxel::{make_cubic_void_cell, make_sphere_cell, BitMask};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solid_field(dims: [usize; 3], spacing: [f64; 3]) -> IndicatorField {
        let n = dims[0] * dims[1] * dims[2];
        let mut mask = BitMask::zeros(n);
        for i in 0..n {
            mask.set(i, true);
        }
        IndicatorField::from_mask(dims, spacing, mask, 1e-9).unwrap()
    }

    fn void_field(dims: [usize; 3], spacing: [f64; 3]) -> IndicatorField {
        let n = dims[0] * dims[1] * dims[2];
        IndicatorField::from_mask(dims, spacing, BitMask::zeros(n), 1e-9).unwrap()
    }

    /// Vertex-interpolated field u = A·x (higher modes zero); exact for
    /// affine A since the vertex modes are trilinear.
    fn affine_u(mesh: &CellMesh, a: &T3) -> Vec<f64> {
        let mut u = vec![0.0; 3 * mesh.n_scalar_modes()];
        let d = mesh.vertex_dims();
        for vz in 0..d[2] {
            for vy in 0..d[1] {
                for vx in 0..d[0] {
                    let v = [vx, vy, vz];
                    let s = mesh.vertex_scalar(v);
                    let x = mesh.vertex_position(v);
                    for c in 0..3 {
                        u[CellMesh::dof(s, c)] =
                            a[c][0] * x[0] + a[c][1] * x[1] + a[c][2] * x[2];
                    }
                }
            }
        }
        u
    }

    fn random_u(mesh: &CellMesh, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * mesh.n_scalar_modes()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Surface integral ∮ u ⊗ n dΓ over the box boundary by face-wise Gauss
    /// quadrature of the trace, the divergence-theorem counterpart of ∫∇u dV.
    fn surface_flux(mesh: &CellMesh, u: &[f64]) -> T3 {
        let (nodes, weights) = gauss_legendre(mesh.p + 1);
        let mut acc = [[0.0; 3]; 3];
        for face in BoxFace::ALL {
            let axis = face.axis();
            let (a1, a2) = other_axes(axis);
            let n = face.normal();
            let fixed = if face.is_max() { mesh.cells[axis] - 1 } else { 0 };
            let local_n = if face.is_max() { 1.0 } else { -1.0 };
            let jac = mesh.cell_size[a1] * mesh.cell_size[a2] / 4.0;
            for c2 in 0..mesh.cells[a2] {
                for c1 in 0..mesh.cells[a1] {
                    let mut cell = [0; 3];
                    cell[axis] = fixed;
                    cell[a1] = c1;
                    cell[a2] = c2;
                    let dofs = mesh.cell_dofs(cell);
                    for (qj, &xj) in nodes.iter().enumerate() {
                        for (qi, &xi) in nodes.iter().enumerate() {
                            let mut local = [0.0; 3];
                            local[axis] = local_n;
                            local[a1] = xi;
                            local[a2] = xj;
                            let (vals, _) = mesh.basis().evaluate(local);
                            let w = weights[qi] * weights[qj] * jac;
                            for c in 0..3 {
                                let mut uc = 0.0;
                                for (m, val) in vals.iter().enumerate() {
                                    uc += val * u[dofs[3 * m + c]];
                                }
                                for e in 0..3 {
                                    acc[c][e] += w * uc * n[e];
                                }
                            }
                        }
                    }
                }
            }
        }
        acc
    }

    #[test]
    fn affine_field_average_strain_is_exact() {
        let mesh = build_mesh([4, 4, 4], [0.5, 0.25, 0.75], [2, 2, 2], 2).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        // Symmetric strain plus a rotation; the gradient average sees both,
        // the strain average only the symmetric part.
        let a = [[1e-3, 4e-4, -2e-4], [0.0, -5e-4, 7e-4], [3e-4, -1e-4, 2e-3]];
        let u = affine_u(&mesh, &a);
        let g = average_displacement_gradient(&mesh, &sq, &u).unwrap();
        let eps = average_strain(&mesh, &sq, &u).unwrap();
        let sym = sym3(&a);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(g[i][j], a[i][j], epsilon = 1e-15, max_relative = 1e-12);
                assert_relative_eq!(eps[i][j], sym[i][j], epsilon = 1e-15, max_relative = 1e-12);
            }
        }
        // Pure rotation averages to zero strain.
        let w = [[0.0, 1e-3, -2e-3], [-1e-3, 0.0, 5e-4], [2e-3, -5e-4, 0.0]];
        let eps_w = average_strain(&mesh, &sq, &affine_u(&mesh, &w)).unwrap();
        for row in &eps_w {
            for v in row {
                assert!(v.abs() < 1e-14, "rotation leaked into strain: {v}");
            }
        }
    }

    #[test]
    fn gradient_average_matches_surface_flux() {
        for p in [1, 3] {
            let mesh = build_mesh([4, 2, 2], [0.3, 0.5, 0.4], [2, 2, 2], p).unwrap();
            let sq = StrainQuadrature::build(&mesh);
            let u = random_u(&mesh, 41 + p as u64);
            let flux = surface_flux(&mesh, &u);
            let g = average_displacement_gradient(&mesh, &sq, &u).unwrap();
            let vol = box_volume(&mesh);
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(g[i][j] * vol, flux[i][j], epsilon = 1e-12, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn nodal_stress_of_homogeneous_affine_state_is_exact() {
        let mesh = build_mesh([4, 4, 4], [0.25; 3], [2, 2, 2], 2).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let cache = build_cache(&mesh).unwrap();
        let field = solid_field([4, 4, 4], [0.25; 3]);
        let mat = IsotropicMaterial { e: 200e3, nu: 0.3 };
        let coeffs = DomainCoefficients::from_indicator(&field, &mat);
        let eps = [[1e-3, 2.5e-4, 0.0], [2.5e-4, -4e-4, 1e-4], [0.0, 1e-4, 6e-4]];
        let u = affine_u(&mesh, &eps);
        let r = nodal_forces(&mesh, &cache, &coeffs, &u).unwrap();

        let sig = sym3(&average_stress_nodal(&mesh, &r).unwrap());
        let c = isotropic_tensor(&mat);
        let expected_v: Vec<f64> = (0..6)
            .map(|i| {
                (0..6).map(|j| c.c[(i, j)] * strain_voigt(&eps)[j]).sum::<f64>()
            })
            .collect();
        let got = stress_voigt(&sig);
        for i in 0..6 {
            assert_relative_eq!(got[i], expected_v[i], epsilon = 1e-9, max_relative = 1e-9);
        }

        // Independent volume quadrature agrees, and the quadrature energy
        // matches the algebraic work ½uᵀr.
        let sig_vol = average_stress_volume(&mesh, &sq, &coeffs, &u).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(sig[i][j], sig_vol[i][j], epsilon = 1e-9, max_relative = 1e-10);
            }
        }
        let e_quad = strain_energy_quadrature(&mesh, &sq, &coeffs, &u).unwrap();
        let work: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
        assert_relative_eq!(2.0 * e_quad, work, max_relative = 1e-10);
    }

    #[test]
    fn cavity_strain_vanishes_on_fully_solid_geometry() {
        let mesh = build_mesh([4, 4, 4], [0.25; 3], [2, 2, 2], 2).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let field = solid_field([4, 4, 4], [0.25; 3]);
        let u = random_u(&mesh, 7);
        let cav = cavity_strain(&mesh, &sq, &field, &u).unwrap();
        let scale = frob3(&average_strain(&mesh, &sq, &u).unwrap()).max(1.0);
        assert!(frob3(&cav) <= 1e-12 * scale, "cavity strain {} on solid body", frob3(&cav));
    }

    #[test]
    fn cavity_strain_of_affine_field_scales_with_void_fraction() {
        let field = make_cubic_void_cell(12.0, 6.0, 6).unwrap();
        let mesh = build_mesh(field.dims, field.spacing, [3, 3, 3], 2).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let a = [[2e-3, 1e-4, 0.0], [1e-4, -1e-3, 3e-4], [0.0, 3e-4, 5e-4]];
        let u = affine_u(&mesh, &a);
        let c_v = porosity(&field);
        assert!(c_v > 0.0 && c_v < 1.0);

        // Uniform strain: ⟨ε⟩ = ⟨ε⟩_m, so ε_c = (1 − c_m)·ε = c_v·ε.
        let cav = cavity_strain(&mesh, &sq, &field, &u).unwrap();
        let sym = sym3(&a);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(cav[i][j], c_v * sym[i][j], epsilon = 1e-15, max_relative = 1e-10);
            }
        }
        // Void-average oracle: ε_c = c_v ⟨ε⟩_void by volume additivity.
        let (eps_v, frac_v) = void_average_strain(&mesh, &sq, &field, &u).unwrap();
        assert_relative_eq!(frac_v, c_v, max_relative = 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(cav[i][j], c_v * eps_v[i][j], epsilon = 1e-15, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn subdomain_expansion_holds_for_solved_periodic_case() {
        let field = make_cubic_void_cell(8.0, 4.0, 4).unwrap();
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let cache = build_cache(&mesh).unwrap();
        let mat = IsotropicMaterial { e: 70e3, nu: 0.3 };
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        let coeffs = DomainCoefficients::from_indicator(&field, &mat);
        let case = bc::pbc(&mesh, &bc::unit_strains()[0]);
        let (u, _) = hom
            .solve_family(&coeffs, std::slice::from_ref(&case))
            .unwrap()
            .pop()
            .unwrap();

        // Additivity of the solid/void integrals against the full-box one:
        // three independently accumulated quadratures.
        let table = GradTable::build(&mesh, &sq);
        let (g_all, v_all) = integrate_gradient(&mesh, &table, &u, Region::All).unwrap();
        let (g_m, v_m) = integrate_gradient(&mesh, &table, &u, Region::Solid(&field)).unwrap();
        let (g_v, v_v) = integrate_gradient(&mesh, &table, &u, Region::Void(&field)).unwrap();
        assert_relative_eq!(v_all, v_m + v_v, max_relative = 1e-12);
        let scale = frob3(&g_all).max(1e-300);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (g_all[i][j] - g_m[i][j] - g_v[i][j]).abs() <= 1e-10 * scale,
                    "gradient integrals do not add up at ({i},{j})"
                );
            }
        }
        // ε_c = c_v ⟨ε⟩_void on a genuinely heterogeneous solution.
        let cav = cavity_strain(&mesh, &sq, &field, &u).unwrap();
        let (eps_v, c_v) = void_average_strain(&mesh, &sq, &field, &u).unwrap();
        let cav_scale = frob3(&cav).max(1e-300);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (cav[i][j] - c_v * eps_v[i][j]).abs() <= 1e-10 * cav_scale,
                    "cavity strain disagrees with void average at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn fully_solid_tensor_matches_matrix_for_all_families() {
        let dims = [4, 4, 4];
        let spacing = [0.25; 3];
        let field = solid_field(dims, spacing);
        let mat = IsotropicMaterial { e: 3000.0, nu: 0.35 };
        let c_ref = isotropic_tensor(&mat);
        let mesh = build_mesh(dims, spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        for kind in [BcKind::Kubc, BcKind::Pbc, BcKind::Subc] {
            let run = hom.effective_tensor(&field, &mat, kind).unwrap();
            let scale = c_ref.c.norm();
            assert!(
                (run.tensor.c - c_ref.c).norm() <= 1e-8 * scale,
                "{kind:?}: tensor off by {:.3e}",
                (run.tensor.c - c_ref.c).norm() / scale
            );
            assert!(run.asymmetry <= 1e-8, "{kind:?}: asymmetry {}", run.asymmetry);
            assert!(!run.degenerate);
            assert_eq!(run.cases.len(), 6);
            for (j, rec) in run.cases.iter().enumerate() {
                assert!(
                    rec.hill_residual <= 1e-8,
                    "{kind:?} case {j}: Hill residual {:.3e}",
                    rec.hill_residual
                );
                assert!(
                    rec.stress_route_gap <= 1e-8,
                    "{kind:?} case {j}: stress route gap {:.3e}",
                    rec.stress_route_gap
                );
                // Strain-driven families reproduce the imposed average strain
                // exactly (boundary-integral identity).
                if kind != BcKind::Subc {
                    let target = bc::unit_strains()[j].voigt();
                    for i in 0..6 {
                        assert!(
                            (rec.averaged.eps[i] - target[i]).abs() <= 1e-10,
                            "{kind:?} case {j}: ⟨ε⟩[{i}] = {} vs {}",
                            rec.averaged.eps[i],
                            target[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn fully_void_tensor_is_ghost_stiffness_and_flagged() {
        let dims = [2, 2, 2];
        let spacing = [0.5; 3];
        let field = void_field(dims, spacing);
        let mat = IsotropicMaterial { e: 200e3, nu: 0.25 };
        let mesh = build_mesh(dims, spacing, [1, 1, 1], 2).unwrap();
        let run = effective_tensor(&mesh, &field, &mat, BcKind::Kubc).unwrap();
        assert!(run.degenerate);
        assert_relative_eq!(run.porosity, 1.0);
        let ghost = isotropic_tensor(&mat).scale(1e-9);
        let scale = ghost.c.norm();
        assert!(
            (run.tensor.c - ghost.c).norm() <= 1e-6 * scale,
            "ghost tensor off by {:.3e}",
            (run.tensor.c - ghost.c).norm() / scale
        );
    }

    #[test]
    fn two_phase_tensor_with_equal_phases_is_the_matrix_tensor() {
        let phases = make_sphere_cell(1.0, 0.3, 4).unwrap();
        let mesh = build_mesh(phases.dims, phases.spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        let mat = IsotropicMaterial { e: 3.0e3, nu: 0.35 };
        let run = hom.effective_tensor_two_phase(&phases, &mat, &mat, BcKind::Pbc).unwrap();
        let exact = isotropic_tensor(&mat);
        assert!(
            (run.tensor.c - exact.c).norm() <= 1e-8 * exact.c.norm(),
            "phase split of a uniform material changed the tensor by {:.3e}",
            (run.tensor.c - exact.c).norm() / exact.c.norm()
        );
        assert_eq!(run.porosity, 0.0);
        assert!(!run.degenerate);
        for rec in &run.cases {
            assert!(rec.hill_residual <= 1e-9);
            assert!(rec.stress_route_gap <= 1e-9);
            assert_relative_eq!(rec.averaged.matrix_fraction, 1.0);
            assert!(rec.averaged.cavity.iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn two_phase_tensor_is_stiffened_and_bounded_by_the_voigt_mixture() {
        let phases = make_sphere_cell(1.0, 0.3, 4).unwrap();
        let mesh = build_mesh(phases.dims, phases.spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        let matrix = IsotropicMaterial { e: 3.0e3, nu: 0.35 };
        let particle = IsotropicMaterial { e: 72.5e3, nu: 0.2 };
        let kubc = hom
            .effective_tensor_two_phase(&phases, &matrix, &particle, BcKind::Kubc)
            .unwrap();
        let pbc = hom
            .effective_tensor_two_phase(&phases, &matrix, &particle, BcKind::Pbc)
            .unwrap();

        // Stiffer inclusions must stiffen the composite, and the rule of
        // mixtures (uniform-strain trial field) caps the KUBC stiffness from
        // above; PBC relaxes the boundary and sits at or below KUBC.
        let c_m = isotropic_tensor(&matrix);
        assert!(pbc.tensor.c[(0, 0)] > c_m.c[(0, 0)]);
        let f = phases.particle_fraction();
        let voigt_mix = c_m.scale(1.0 - f).add_scaled(f, &isotropic_tensor(&particle));
        let tol = 1e-9 * voigt_mix.norm_mandel();
        let upper = ElasticityTensor::from_matrix(voigt_mix.c - kubc.tensor.c);
        assert!(upper.min_eigenvalue() >= -tol, "KUBC exceeds the Voigt mixture");
        let gap = ElasticityTensor::from_matrix(kubc.tensor.c - pbc.tensor.c);
        assert!(gap.min_eigenvalue() >= -tol, "PBC stiffer than KUBC");

        // Traction-driven identification is a porous-media feature.
        assert!(matches!(
            hom.effective_tensor_two_phase(&phases, &matrix, &particle, BcKind::Subc),
            Err(Error::Input(_))
        ));
    }

    /// Shared small porous fixture: centered cubic void, 4³ voxels, 2³ cells.
    /// Spacing 2 mm keeps the voxel-center classification exact in floats.
    fn cubic_void_fixture() -> (IndicatorField, CellMesh) {
        let field = make_cubic_void_cell(8.0, 4.0, 4).unwrap();
        let mesh = build_mesh(field.dims, field.spacing, [2, 2, 2], 2).unwrap();
        (field, mesh)
    }

    #[test]
    fn cubic_void_tensor_has_cubic_symmetry_and_tight_diagnostics() {
        let (field, mesh) = cubic_void_fixture();
        let mat = IsotropicMaterial { e: 200e3, nu: 0.25 };
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        let run = hom.effective_tensor(&field, &mat, BcKind::Pbc).unwrap();
        let c = &run.tensor.c;
        let scale = c.norm();
        // The geometry is invariant under axis permutations, so the tensor
        // must be cubic: equal diagonal normals, equal off-diagonal normals,
        // equal shears.
        for (a, b) in [((0, 0), (1, 1)), ((1, 1), (2, 2)), ((3, 3), (4, 4)), ((4, 4), (5, 5))] {
            assert!(
                (c[a] - c[b]).abs() <= 1e-6 * scale,
                "cubic symmetry broken: C{a:?}={} vs C{b:?}={}",
                c[a],
                c[b]
            );
        }
        for (a, b) in [((0, 1), (0, 2)), ((0, 2), (1, 2))] {
            assert!((c[a] - c[b]).abs() <= 1e-6 * scale);
        }
        for rec in &run.cases {
            assert!(rec.hill_residual <= 1e-8, "Hill residual {:.3e}", rec.hill_residual);
            assert!(rec.stress_route_gap <= 1e-8, "route gap {:.3e}", rec.stress_route_gap);
        }
        // Porosity of the discrete geometry: 2³ of 4³ voxel centers lie
        // strictly inside the 4 mm void.
        assert_relative_eq!(run.porosity, 8.0 / 64.0, max_relative = 1e-12);
    }

    #[test]
    fn apparent_tensors_obey_the_hierarchy() {
        let (field, mesh) = cubic_void_fixture();
        let mat = IsotropicMaterial { e: 200e3, nu: 0.25 };
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        let c_kubc = hom.effective_tensor(&field, &mat, BcKind::Kubc).unwrap().tensor;
        let c_pbc = hom.effective_tensor(&field, &mat, BcKind::Pbc).unwrap().tensor;
        let c_subc = hom.effective_tensor(&field, &mat, BcKind::Subc).unwrap().tensor;
        let rel = order_relation_check(&c_subc, &c_pbc, &c_kubc);
        assert!(
            rel.pass,
            "hierarchy violated: eig(K−P)={:.3e}, eig(P−S)={:.3e}, threshold {:.3e}",
            rel.min_eig_kubc_minus_pbc, rel.min_eig_pbc_minus_subc, rel.threshold
        );
        assert!(rel.leading_minors_ok[0] && rel.leading_minors_ok[1]);
    }

    #[test]
    fn order_relation_check_detects_violations() {
        let mat = IsotropicMaterial { e: 100.0, nu: 0.3 };
        let c = isotropic_tensor(&mat);
        let ok = order_relation_check(&c.scale(0.5), &c.scale(0.75), &c);
        assert!(ok.pass);
        // Traction-identified tensor above the displacement-driven one.
        let bad = order_relation_check(&c.scale(2.0), &c, &c.scale(0.5));
        assert!(!bad.pass);
        assert!(bad.min_eig_pbc_minus_subc < -bad.threshold);
    }

    #[test]
    fn tensile_test_recovers_matrix_constants_on_solid_bar() {
        let dims = [4, 4, 4];
        let spacing = [0.25; 3];
        let field = solid_field(dims, spacing);
        let mat = IsotropicMaterial { e: 3000.0, nu: 0.35 };
        let mesh = build_mesh(dims, spacing, [2, 2, 2], 2).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq);
        let strain = 2e-3;
        let run = hom.tensile(&field, &mat, 2, strain).unwrap();
        assert_relative_eq!(run.modulus, mat.e, max_relative = 1e-6);
        assert_relative_eq!(run.poisson[0], mat.nu, max_relative = 1e-6);
        assert_relative_eq!(run.poisson[1], mat.nu, max_relative = 1e-6);
        assert_relative_eq!(run.force, mat.e * strain * run.gross_area, max_relative = 1e-6);
        assert_relative_eq!(
            run.energy_density,
            0.5 * mat.e * strain * strain,
            max_relative = 1e-6
        );
    }

    #[test]
    fn stress_strain_csv_is_a_linear_ramp() {
        let run = TensileRun {
            axis: 2,
            applied_strain: 1e-3,
            modulus: 50e3,
            poisson: [0.3, 0.3],
            force: 500.0,
            gross_area: 10.0,
            lateral_strain: [-3e-4, -3e-4],
            energy_density: 0.025,
            solver: SolveReport { iterations: 1, relative_residual: 0.0, wall_time: 0.0 },
        };
        let csv = run.stress_strain_csv(5);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "strain,stress_mpa");
        assert_eq!(lines.len(), 6);
        let parse = |line: &str| -> (f64, f64) {
            let mut it = line.split(',');
            (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
        };
        assert_eq!(parse(lines[1]), (0.0, 0.0));
        let (e_last, s_last) = parse(lines[5]);
        assert_relative_eq!(e_last, 1e-3);
        assert_relative_eq!(s_last, 50.0);
        // Every sampled point sits on the same line through the origin.
        for line in &lines[2..] {
            let (e, s) = parse(line);
            assert_relative_eq!(s / e, 50.0 / 1e-3, max_relative = 1e-12);
        }
    }

    #[test]
    fn homogeneous_window_sweep_has_zero_scatter() {
        let field = solid_field([6, 6, 6], [1.0; 3]);
        let mat = IsotropicMaterial { e: 10e3, nu: 0.2 };
        let report = window_sweep(
            &field,
            &mat,
            BcKind::Kubc,
            [4, 4, 4],
            [2, 2, 2],
            [2, 2, 2],
            1,
            Quantity::E(2),
            &HomogOptions::default(),
        )
        .unwrap();
        assert_eq!(report.records.len(), 8);
        assert_eq!(report.stats.count, 8);
        assert_eq!(report.failed, 0);
        assert!(report.stats.cv <= 1e-12, "CV = {}", report.stats.cv);
        assert!(report.stats.mean > 0.0);
        assert_eq!(report.quantity.label(), "E_zz");
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[0].starts_with("ix,iy,iz,ox,oy,oz,c11,c12"));
        assert!(lines[0].ends_with("e_xx,e_yy,e_zz,hill_residual_max"));
        // 6 index/origin columns + 21 tensor + 3 moduli + 1 residual.
        assert_eq!(lines[1].split(',').count(), 31);
    }

    #[test]
    fn window_sweep_rejects_bad_windows() {
        let field = solid_field([6, 6, 6], [1.0; 3]);
        let mat = IsotropicMaterial { e: 10e3, nu: 0.2 };
        let opts = HomogOptions::default();
        let oversize = window_sweep(
            &field, &mat, BcKind::Kubc, [8, 4, 4], [2, 2, 2], [2, 2, 2], 1,
            Quantity::E(0), &opts,
        );
        assert!(matches!(oversize, Err(Error::Geometry(_))));
        let zero_stride = window_sweep(
            &field, &mat, BcKind::Kubc, [4, 4, 4], [0, 2, 2], [2, 2, 2], 1,
            Quantity::E(0), &opts,
        );
        assert!(matches!(zero_stride, Err(Error::Input(_))));
        let indivisible = window_sweep(
            &field, &mat, BcKind::Kubc, [5, 4, 4], [1, 2, 2], [2, 2, 2], 1,
            Quantity::E(0), &opts,
        );
        assert!(matches!(indivisible, Err(Error::Mesh(_))));
    }

    #[test]
    fn solver_failure_carries_the_case_index() {
        let (field, mesh) = cubic_void_fixture();
        let mat = IsotropicMaterial { e: 200e3, nu: 0.25 };
        let cache = build_cache(&mesh).unwrap();
        let sq = StrainQuadrature::build(&mesh);
        let hom = Homogenizer::new(&mesh, &cache, &sq).with_options(HomogOptions {
            solve: SolveOptions { tol: 1e-14, max_iter: Some(1) },
            precond: PrecondKind::Jacobi,
        });
        let err = hom.effective_tensor(&field, &mat, BcKind::Kubc).unwrap_err();
        match err {
            Error::Case { index, source } => {
                assert_eq!(index, 0);
                assert!(matches!(*source, Error::Solver { .. }));
            }
            other => panic!("expected a case-tagged solver error, got {other}"),
        }
    }
}
