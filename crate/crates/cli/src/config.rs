//! Declarative run configuration: TOML file, flag overrides, validation.
//!
//! Every numerical experiment is described by a [`RunConfig`]. The file is
//! optional — defaults cover exploratory runs — and every leaf field has a
//! matching command-line flag that overrides the file value. `--explain`
//! prints the merged effective configuration, and its SHA-256 hash goes into
//! every output header so results stay traceable to their exact settings.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxhom::bc::BcKind;
use voxhom::homog::{HomogOptions, PrecondKind, Quantity};
use voxhom::material::IsotropicMaterial;
use voxhom::system::SolveOptions;
use voxhom::voxel::{Connectivity, DEFAULT_ALPHA_VOID, MAX_ALPHA_VOID};
use voxhom::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub segmentation: SegmentationConfig,
    pub mesh: MeshConfig,
    pub material: MaterialConfig,
    pub analysis: AnalysisConfig,
    pub solver: SolverConfig,
    /// Output directory; command results land in per-command subdirectories.
    #[serde(rename = "output")]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Raw little-endian voxel file.
    pub raw: Option<PathBuf>,
    /// JSON metadata sidecar; defaults to the raw path with `.json`.
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Intensities at or above this value count as solid.
    pub threshold: f64,
    /// Neighborhood for the largest-component cleanup.
    pub connectivity: Connectivity,
    /// Stiffness scale of void voxels.
    pub alpha_void: f64,
    /// Keep only the largest connected solid component when segmenting.
    pub clean: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            connectivity: Connectivity::Six,
            alpha_void: DEFAULT_ALPHA_VOID,
            clean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Voxels per finite cell, per axis.
    pub voxels_per_cell: [usize; 3],
    /// Polynomial degree of the cell shape functions.
    pub p: usize,
    /// Crop trailing voxels so every axis divides into whole cells, instead
    /// of rejecting indivisible grids.
    pub crop_to_multiple: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { voxels_per_cell: [4, 4, 4], p: 2, crop_to_multiple: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub e: f64,
    pub nu: f64,
}

impl PhaseConfig {
    pub fn material(&self) -> IsotropicMaterial {
        IsotropicMaterial { e: self.e, nu: self.nu }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    /// Solid (matrix) phase.
    pub matrix: PhaseConfig,
    /// Optional second solid phase for composite benchmarks.
    pub particle: Option<PhaseConfig>,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { matrix: PhaseConfig { e: 200_000.0, nu: 0.25 }, particle: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Boundary-condition families for `homogenize` (first entry drives
    /// `sweep`): any of `kubc`, `pbc`, `subc`.
    pub bc: Vec<String>,
    /// Window size in voxels for `sweep`.
    pub window: Option<[usize; 3]>,
    /// Window stride in voxels; defaults to the window (tiling, no overlap).
    pub stride: Option<[usize; 3]>,
    /// Loading axis for `tensile`: `x`, `y` or `z`.
    pub axis: String,
    /// Applied engineering strain for `tensile`.
    pub strain: f64,
    /// Scalar tracked by `sweep` statistics (`E_xx` … `nu_xz`).
    pub quantity: String,
    /// Porosity grid for `bounds`.
    pub porosities: Vec<f64>,
    /// Raster resolution for `validate-table1`.
    pub resolution: usize,
    /// Sample count of emitted stress–strain curves.
    pub samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bc: vec!["kubc".into(), "pbc".into(), "subc".into()],
            window: None,
            stride: None,
            axis: "z".into(),
            strain: 1e-3,
            quantity: "E_zz".into(),
            porosities: (0..10).map(|i| i as f64 / 10.0).collect(),
            resolution: 96,
            samples: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative residual target of the conjugate-gradient solver.
    pub tol: f64,
    /// Iteration cap; 0 picks the size-based default.
    pub max_iter: usize,
    /// Worker threads; 0 uses all cores. Part of the config (and hash)
    /// because reductions are only bit-reproducible at a fixed count.
    pub threads: usize,
    /// `schwarz` (block Cholesky on cut cells) or `jacobi`.
    pub precond: String,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 0, threads: 0, precond: "schwarz".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    /// Loads a TOML file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| Error::Input(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Range-checks everything that does not need the input file.
    pub fn validate(&self) -> Result<()> {
        let seg = &self.segmentation;
        if !seg.threshold.is_finite() {
            return Err(Error::Input(format!("threshold must be finite, got {}", seg.threshold)));
        }
        if !(seg.alpha_void > 0.0 && seg.alpha_void <= MAX_ALPHA_VOID) {
            return Err(Error::Input(format!(
                "alpha_void must lie in (0, {MAX_ALPHA_VOID:e}], got {}",
                seg.alpha_void
            )));
        }
        if !(1..=4).contains(&self.mesh.p) {
            return Err(Error::Input(format!("polynomial degree must be 1–4, got {}", self.mesh.p)));
        }
        if self.mesh.voxels_per_cell.iter().any(|&v| v == 0) {
            return Err(Error::Input("voxels_per_cell must be >= 1 per axis".into()));
        }
        for phase in std::iter::once(&self.material.matrix).chain(self.material.particle.iter()) {
            if !(phase.e.is_finite() && phase.e > 0.0) {
                return Err(Error::Input(format!("Young's modulus must be positive, got {}", phase.e)));
            }
            if !(phase.nu.is_finite() && phase.nu > -1.0 && phase.nu < 0.5) {
                return Err(Error::Input(format!(
                    "Poisson's ratio must lie in (-1, 0.5), got {}",
                    phase.nu
                )));
            }
        }
        if !(self.analysis.strain.is_finite() && self.analysis.strain != 0.0) {
            return Err(Error::Input(format!(
                "applied strain must be finite and nonzero, got {}",
                self.analysis.strain
            )));
        }
        if self.analysis.samples < 2 {
            return Err(Error::Input("stress–strain curves need at least 2 samples".into()));
        }
        for &phi in &self.analysis.porosities {
            if !(0.0..=1.0).contains(&phi) {
                return Err(Error::Input(format!("porosity must lie in [0, 1], got {phi}")));
            }
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            return Err(Error::Input(format!("solver tol must be positive, got {}", self.solver.tol)));
        }
        self.bc_kinds()?;
        self.axis()?;
        self.quantity()?;
        self.homog_options()?;
        Ok(())
    }

    /// Parsed boundary-condition families, order and duplicates preserved.
    pub fn bc_kinds(&self) -> Result<Vec<BcKind>> {
        if self.analysis.bc.is_empty() {
            return Err(Error::Input("analysis.bc must name at least one family".into()));
        }
        self.analysis
            .bc
            .iter()
            .map(|name| match name.to_ascii_lowercase().as_str() {
                "kubc" => Ok(BcKind::Kubc),
                "pbc" => Ok(BcKind::Pbc),
                "subc" => Ok(BcKind::Subc),
                other => Err(Error::Input(format!(
                    "unknown boundary-condition family {other:?} (expected kubc, pbc or subc)"
                ))),
            })
            .collect()
    }

    pub fn axis(&self) -> Result<usize> {
        match self.analysis.axis.to_ascii_lowercase().as_str() {
            "x" => Ok(0),
            "y" => Ok(1),
            "z" => Ok(2),
            other => Err(Error::Input(format!("unknown axis {other:?} (expected x, y or z)"))),
        }
    }

    pub fn quantity(&self) -> Result<Quantity> {
        let q = match self.analysis.quantity.as_str() {
            "E_xx" => Quantity::E(0),
            "E_yy" => Quantity::E(1),
            "E_zz" => Quantity::E(2),
            "G_xy" => Quantity::G(0),
            "G_yz" => Quantity::G(1),
            "G_xz" => Quantity::G(2),
            "nu_xy" => Quantity::Nu(0),
            "nu_yz" => Quantity::Nu(1),
            "nu_xz" => Quantity::Nu(2),
            other => {
                return Err(Error::Input(format!(
                    "unknown quantity {other:?} (expected E_xx…E_zz, G_xy…G_xz or nu_xy…nu_xz)"
                )))
            }
        };
        Ok(q)
    }

    pub fn homog_options(&self) -> Result<HomogOptions> {
        let precond = match self.solver.precond.to_ascii_lowercase().as_str() {
            "schwarz" => PrecondKind::SchwarzCut,
            "jacobi" => PrecondKind::Jacobi,
            other => {
                return Err(Error::Input(format!(
                    "unknown preconditioner {other:?} (expected schwarz or jacobi)"
                )))
            }
        };
        Ok(HomogOptions {
            solve: SolveOptions {
                tol: self.solver.tol,
                max_iter: (self.solver.max_iter > 0).then_some(self.solver.max_iter),
            },
            precond,
        })
    }

    /// Canonical TOML rendering of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical rendering, hex-encoded.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Provenance lines prepended to every report.
    pub fn provenance(&self) -> String {
        format!("voxhom {}\nconfig sha256 {}", env!("CARGO_PKG_VERSION"), self.sha256())
    }
}
