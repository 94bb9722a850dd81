//! Linear-elastic constitutive data and analytic bounds.
//!
//! Stiffness tensors are stored as symmetric 6×6 matrices in Voigt notation
//! with the component ordering `(11, 22, 33, 12, 23, 13)` and *engineering*
//! shear strains (`γ = 2ε`), so `σ = C ε` maps
//! `[σ11 σ22 σ33 σ12 σ23 σ13] = C [ε11 ε22 ε33 γ12 γ23 γ13]`.
//!
//! Units are consistent but not enforced; the test suite and the bundled
//! scenarios use mm and MPa.
//!
//! Spectral checks (positive definiteness, tensor ordering) are performed on
//! the Mandel form of the matrix — shear rows and columns scaled by √2 — which
//! makes the 6×6 eigenproblem equivalent to the eigenproblem of the underlying
//! fourth-order tensor. In the engineering-shear matrix the shear eigenvalues
//! would come out halved, which distorts tolerance comparisons.

use nalgebra::{Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Voigt index pairs in crate ordering: `(11, 22, 33, 12, 23, 13)`.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];

/// Voigt index of the tensor component `(i, j)` (zero-based, `i`, `j` < 3).
pub fn voigt_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (1, 2) => 4,
        (0, 2) => 5,
        _ => panic!("tensor indices out of range: ({i}, {j})"),
    }
}

/// Isotropic material defined by Young's modulus and Poisson's ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicMaterial {
    /// Young's modulus (must be positive).
    pub e: f64,
    /// Poisson's ratio, in the open interval (-1, 0.5).
    pub nu: f64,
}

impl IsotropicMaterial {
    /// Validates the parameter ranges. `nu = 0.5` (incompressible) is rejected
    /// because the Lamé parameter λ diverges there.
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::Input(format!("Young's modulus must be positive, got {e}")));
        }
        if !(nu.is_finite() && nu > -1.0 && nu < 0.5) {
            return Err(Error::Input(format!(
                "Poisson's ratio must lie in (-1, 0.5), got {nu}"
            )));
        }
        Ok(Self { e, nu })
    }

    /// First Lamé parameter λ.
    pub fn lambda(&self) -> f64 {
        self.e * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
    }

    /// Shear modulus μ (second Lamé parameter).
    pub fn mu(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }

    /// Bulk modulus K.
    pub fn bulk(&self) -> f64 {
        self.e / (3.0 * (1.0 - 2.0 * self.nu))
    }
}

/// Symmetric fourth-order stiffness tensor in Voigt form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityTensor {
    /// 6×6 Voigt matrix, engineering-shear convention, ordering
    /// `(11, 22, 33, 12, 23, 13)`.
    pub c: Matrix6<f64>,
}

impl ElasticityTensor {
    pub fn zero() -> Self {
        Self { c: Matrix6::zeros() }
    }

    pub fn from_matrix(c: Matrix6<f64>) -> Self {
        Self { c }
    }

    /// Entry in tensor index notation, e.g. `at(0, 0, 2, 2)` = C_1133.
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[(voigt_index(i, j), voigt_index(k, l))]
    }

    /// `C + s * D`, entrywise.
    pub fn add_scaled(&self, s: f64, d: &ElasticityTensor) -> Self {
        Self { c: self.c + s * d.c }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { c: self.c * s }
    }

    /// Symmetric part `(C + Cᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        Self { c: (self.c + self.c.transpose()) * 0.5 }
    }

    /// Relative deviation from major symmetry, `‖C − Cᵀ‖ / ‖C‖` (Frobenius).
    pub fn asymmetry(&self) -> f64 {
        let norm = self.c.norm();
        if norm == 0.0 {
            0.0
        } else {
            (self.c - self.c.transpose()).norm() / norm
        }
    }

    /// Frobenius norm of the Mandel form.
    pub fn norm_mandel(&self) -> f64 {
        self.mandel().norm()
    }

    /// Mandel (orthonormal) form: shear rows and columns scaled by √2. Its
    /// eigenvalues equal those of the fourth-order tensor; for an isotropic
    /// material they are 3K (multiplicity 1) and 2μ (multiplicity 5).
    pub fn mandel(&self) -> Matrix6<f64> {
        let s = [1.0, 1.0, 1.0, std::f64::consts::SQRT_2, std::f64::consts::SQRT_2, std::f64::consts::SQRT_2];
        let mut m = self.c;
        for i in 0..6 {
            for j in 0..6 {
                m[(i, j)] *= s[i] * s[j];
            }
        }
        m
    }

    /// Eigenvalues of the Mandel form, ascending.
    pub fn eigenvalues_mandel(&self) -> [f64; 6] {
        let sym = (self.mandel() + self.mandel().transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut v = [0.0; 6];
        for (i, e) in eig.eigenvalues.iter().enumerate() {
            v[i] = *e;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    /// Smallest eigenvalue of the Mandel form.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues_mandel()[0]
    }

    /// Compliance matrix `S = C⁻¹`.
    pub fn compliance(&self) -> Result<Matrix6<f64>> {
        self.c
            .try_inverse()
            .ok_or_else(|| Error::Input("stiffness matrix is singular".into()))
    }

    /// Serializes as CSV: a header naming the ordering, then the 36 entries
    /// row-major, six per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for i in 0..6 {
            let row: Vec<String> = (0..6).map(|j| format!("{:.17e}", self.c[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`Self::to_csv`]. Comment lines (`#`) and
    /// the ordering header are skipped; the remaining fields must contain
    /// exactly 36 numbers in row-major order (line breaks are immaterial).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::with_capacity(36);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("voigt") {
                continue;
            }
            for field in line.split(',') {
                let field = field.trim();
                if field.is_empty() {
                    continue;
                }
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Input(format!("bad tensor entry {field:?}: {e}")))?,
                );
            }
        }
        if values.len() != 36 {
            return Err(Error::Input(format!(
                "expected 36 tensor entries, found {}",
                values.len()
            )));
        }
        Ok(Self { c: Matrix6::from_row_slice(&values) })
    }
}

/// Header line identifying the CSV layout of an [`ElasticityTensor`].
pub const CSV_HEADER: &str =
    "voigt_order=11,22,33,12,23,13 shear=engineering layout=row-major";

/// Directional engineering constants extracted from a (generally anisotropic)
/// stiffness tensor via its compliance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineeringConstants {
    /// Young's moduli along x, y, z.
    pub e: [f64; 3],
    /// Shear moduli `[G_xy, G_yz, G_xz]` (matching the Voigt shear order).
    pub g: [f64; 3],
    /// Poisson ratios `[ν_xy, ν_yz, ν_xz]`; `ν_ij = -ε_j/ε_i` under uniaxial
    /// stress along `i`. The complementary ratios follow from
    /// `ν_ji = ν_ij · E_j / E_i`.
    pub nu: [f64; 3],
}

/// Builds the Voigt stiffness matrix of an isotropic material.
///
/// Normal block: `λ + 2μ` on the diagonal, `λ` off-diagonal; shear diagonal
/// `μ` (engineering shear convention).
pub fn isotropic_tensor(mat: &IsotropicMaterial) -> ElasticityTensor {
    let la = mat.lambda();
    let mu = mat.mu();
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = if i == j { la + 2.0 * mu } else { la };
        }
        c[(i + 3, i + 3)] = mu;
    }
    ElasticityTensor { c }
}

/// Extracts directional engineering constants from `c`.
///
/// Fails if the matrix is singular, not positive along the normal directions,
/// or violates major symmetry by more than `1e-6` relative.
pub fn engineering_constants(c: &ElasticityTensor) -> Result<EngineeringConstants> {
    let asym = c.asymmetry();
    if asym > 1e-6 {
        return Err(Error::Input(format!(
            "stiffness matrix violates major symmetry (relative deviation {asym:.3e})"
        )));
    }
    let s = c.symmetrized().compliance()?;
    for i in 0..6 {
        if s[(i, i)] <= 0.0 {
            return Err(Error::Input(format!(
                "compliance diagonal entry {i} is not positive; tensor is not positive definite"
            )));
        }
    }
    let e = [1.0 / s[(0, 0)], 1.0 / s[(1, 1)], 1.0 / s[(2, 2)]];
    let g = [1.0 / s[(3, 3)], 1.0 / s[(4, 4)], 1.0 / s[(5, 5)]];
    // ν_ij = -S_ji / S_ii with loading along i; S is symmetric here.
    let nu = [
        -s[(1, 0)] / s[(0, 0)],
        -s[(2, 1)] / s[(1, 1)],
        -s[(2, 0)] / s[(0, 0)],
    ];
    Ok(EngineeringConstants { e, g, nu })
}

/// Voigt (uniform strain) upper bound for a porous material: the matrix
/// stiffness scaled by the solid volume fraction.
pub fn voigt_bound(mat: &IsotropicMaterial, porosity: f64) -> Result<ElasticityTensor> {
    check_porosity(porosity)?;
    Ok(isotropic_tensor(mat).scale(1.0 - porosity))
}

/// Reuss (uniform stress) lower bound. Any nonzero pore fraction carries zero
/// stress at unbounded compliance, so the bound collapses to zero.
pub fn reuss_bound(mat: &IsotropicMaterial, porosity: f64) -> Result<ElasticityTensor> {
    check_porosity(porosity)?;
    if porosity == 0.0 {
        Ok(isotropic_tensor(mat))
    } else {
        Ok(ElasticityTensor::zero())
    }
}

/// Hashin–Shtrikman upper bound for an isotropic matrix with spherical-ish
/// voids of volume fraction `porosity`. The void phase has zero stiffness, so
/// only the upper bound is informative (the lower bound coincides with Reuss).
///
/// ```text
/// K⁺ = K_m + c_v / ( -1/K_m + 3 (1-c_v) / (3 K_m + 4 G_m) )
/// G⁺ = G_m + c_v / ( -1/G_m + 6 (1-c_v)(K_m + 2 G_m) / (5 G_m (3 K_m + 4 G_m)) )
/// ```
///
/// In the dilute limit these reduce to the classical single-void corrections
/// `K ≈ K_m (1 - c (1 + 3K_m/(4G_m)))` and `G ≈ G_m (1 - c·15(1-ν)/(7-5ν))`,
/// which the unit tests pin independently.
pub fn hashin_shtrikman_upper(mat: &IsotropicMaterial, porosity: f64) -> Result<ElasticityTensor> {
    check_porosity(porosity)?;
    let km = mat.bulk();
    let gm = mat.mu();
    let c = porosity;
    let k_up = km + c / (-1.0 / km + 3.0 * (1.0 - c) / (3.0 * km + 4.0 * gm));
    let g_up = gm + c / (-1.0 / gm + 6.0 * (1.0 - c) * (km + 2.0 * gm) / (5.0 * gm * (3.0 * km + 4.0 * gm)));
    Ok(from_bulk_shear(k_up, g_up))
}

/// Isotropic stiffness from bulk and shear moduli (λ = K - 2μ/3).
pub fn from_bulk_shear(k: f64, g: f64) -> ElasticityTensor {
    let la = k - 2.0 * g / 3.0;
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = if i == j { la + 2.0 * g } else { la };
        }
        c[(i + 3, i + 3)] = g;
    }
    ElasticityTensor { c }
}

fn check_porosity(porosity: f64) -> Result<()> {
    if !(porosity.is_finite() && (0.0..=1.0).contains(&porosity)) {
        return Err(Error::Input(format!("porosity must lie in [0, 1], got {porosity}")));
    }
    Ok(())
}
