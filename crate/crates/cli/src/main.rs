//! `voxhom` — voxel-image homogenization from the command line.
//!
//! Every run is driven by a [`config::RunConfig`]: an optional TOML file plus
//! flag overrides (flags win). `--explain` prints the merged configuration
//! and exits, which is also what gets hashed into every report header.
//!
//! Exit codes: 0 success, 1 configuration error, 2 geometry error, 3 solver
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voxhom::voxel::Connectivity;
use voxhom::{Error, Result};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "voxhom",
    version,
    about = "Finite-cell homogenization and virtual testing of voxel images",
    arg_required_else_help = true
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    explain: bool,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Threshold the input into a solid/void mask and report porosity.
    Segment,
    /// Identify apparent stiffness tensors under KUBC/PBC/SUBC.
    Homogenize,
    /// Virtual tensile test along one axis.
    Tensile,
    /// Moving-window sweep of an apparent property.
    Sweep,
    /// Analytical Voigt and Hashin–Shtrikman bounds over a porosity grid.
    Bounds,
    /// Spherical-inclusion benchmark against published reference values.
    #[command(name = "validate-table1")]
    ValidateTable1,
}

/// One flag per configuration leaf. All are optional; set ones replace the
/// file (or default) values before validation.
#[derive(Args)]
struct Overrides {
    /// Raw little-endian voxel input file.
    #[arg(long, global = true, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Metadata sidecar (defaults to the input path with extension .json).
    #[arg(long, global = true, value_name = "FILE")]
    meta: Option<PathBuf>,
    /// Segmentation threshold: intensities at or above it are solid.
    #[arg(long, global = true, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Keep only the largest connected solid component.
    #[arg(long, global = true, value_name = "BOOL")]
    clean: Option<bool>,
    /// Cleanup neighborhood: 6 or 26.
    #[arg(long, global = true, value_name = "6|26")]
    connectivity: Option<String>,
    /// Stiffness scale of void voxels.
    #[arg(long, global = true)]
    alpha_void: Option<f64>,
    /// Voxels per finite cell: one value or three comma-separated.
    #[arg(long, global = true, value_delimiter = ',', value_name = "N[,N,N]")]
    voxels_per_cell: Option<Vec<usize>>,
    /// Polynomial degree of the cell shape functions (1–4).
    #[arg(long, global = true)]
    p: Option<usize>,
    /// Crop trailing voxels so every axis divides into whole cells.
    #[arg(long, global = true, value_name = "BOOL")]
    crop_to_multiple: Option<bool>,
    /// Matrix Young's modulus, MPa.
    #[arg(long = "matrix-e", global = true, value_name = "MPA")]
    matrix_e: Option<f64>,
    /// Matrix Poisson's ratio.
    #[arg(long = "matrix-nu", global = true, value_name = "NU", allow_negative_numbers = true)]
    matrix_nu: Option<f64>,
    /// Particle-phase Young's modulus, MPa (composite runs).
    #[arg(long = "particle-e", global = true, value_name = "MPA")]
    particle_e: Option<f64>,
    /// Particle-phase Poisson's ratio (composite runs).
    #[arg(long = "particle-nu", global = true, value_name = "NU", allow_negative_numbers = true)]
    particle_nu: Option<f64>,
    /// Boundary-condition families, comma-separated (kubc, pbc, subc).
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    bc: Option<Vec<String>>,
    /// Sweep window in voxels: one value or three comma-separated.
    #[arg(long, global = true, value_delimiter = ',', value_name = "N[,N,N]")]
    window: Option<Vec<usize>>,
    /// Sweep stride in voxels: one value or three comma-separated.
    #[arg(long, global = true, value_delimiter = ',', value_name = "N[,N,N]")]
    stride: Option<Vec<usize>>,
    /// Tensile loading axis: x, y or z.
    #[arg(long, global = true)]
    axis: Option<String>,
    /// Applied engineering strain for the tensile test (negative compresses).
    #[arg(long, global = true, allow_negative_numbers = true)]
    strain: Option<f64>,
    /// Quantity tracked by sweep statistics (E_xx … nu_xz).
    #[arg(long, global = true)]
    quantity: Option<String>,
    /// Porosity grid for bounds, comma-separated.
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    porosities: Option<Vec<f64>>,
    /// Raster resolution for validate-table1.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Sample count of emitted stress–strain curves.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Conjugate-gradient relative tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Iteration cap; 0 picks the size-based default.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Preconditioner: schwarz or jacobi.
    #[arg(long, global = true)]
    precond: Option<String>,
    /// Output directory (per-command subdirectories are created inside).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Expands a one- or three-element list into a per-axis triple.
fn triple(values: Vec<usize>, flag: &str) -> Result<[usize; 3]> {
    match values.as_slice() {
        [n] => Ok([*n; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(Error::Input(format!(
            "--{flag} takes one value or three comma-separated values, got {}",
            other.len()
        ))),
    }
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.input {
            cfg.input.raw = Some(v);
        }
        if let Some(v) = self.meta {
            cfg.input.meta = Some(v);
        }
        if let Some(v) = self.threshold {
            cfg.segmentation.threshold = v;
        }
        if let Some(v) = self.clean {
            cfg.segmentation.clean = v;
        }
        if let Some(v) = self.connectivity {
            cfg.segmentation.connectivity = match v.as_str() {
                "6" => Connectivity::Six,
                "26" => Connectivity::TwentySix,
                other => {
                    return Err(Error::Input(format!(
                        "unknown connectivity {other:?} (expected 6 or 26)"
                    )))
                }
            };
        }
        if let Some(v) = self.alpha_void {
            cfg.segmentation.alpha_void = v;
        }
        if let Some(v) = self.voxels_per_cell {
            cfg.mesh.voxels_per_cell = triple(v, "voxels-per-cell")?;
        }
        if let Some(v) = self.p {
            cfg.mesh.p = v;
        }
        if let Some(v) = self.crop_to_multiple {
            cfg.mesh.crop_to_multiple = v;
        }
        if let Some(v) = self.matrix_e {
            cfg.material.matrix.e = v;
        }
        if let Some(v) = self.matrix_nu {
            cfg.material.matrix.nu = v;
        }
        if self.particle_e.is_some() || self.particle_nu.is_some() {
            let mut particle = cfg.material.particle.unwrap_or(cfg.material.matrix);
            if let Some(v) = self.particle_e {
                particle.e = v;
            }
            if let Some(v) = self.particle_nu {
                particle.nu = v;
            }
            cfg.material.particle = Some(particle);
        }
        if let Some(v) = self.bc {
            cfg.analysis.bc = v;
        }
        if let Some(v) = self.window {
            cfg.analysis.window = Some(triple(v, "window")?);
        }
        if let Some(v) = self.stride {
            cfg.analysis.stride = Some(triple(v, "stride")?);
        }
        if let Some(v) = self.axis {
            cfg.analysis.axis = v;
        }
        if let Some(v) = self.strain {
            cfg.analysis.strain = v;
        }
        if let Some(v) = self.quantity {
            cfg.analysis.quantity = v;
        }
        if let Some(v) = self.porosities {
            cfg.analysis.porosities = v;
        }
        if let Some(v) = self.resolution {
            cfg.analysis.resolution = v;
        }
        if let Some(v) = self.samples {
            cfg.analysis.samples = v;
        }
        if let Some(v) = self.tol {
            cfg.solver.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.solver.max_iter = v;
        }
        if let Some(v) = self.threads {
            cfg.solver.threads = v;
        }
        if let Some(v) = self.precond {
            cfg.solver.precond = v;
        }
        if let Some(v) = self.out {
            cfg.output.dir = v;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cli.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    if cli.explain {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    voxhom::par::set_threads(cfg.solver.threads)?;
    match cli.command {
        Cmd::Segment => commands::segment(&cfg),
        Cmd::Homogenize => commands::homogenize(&cfg),
        Cmd::Tensile => commands::tensile(&cfg),
        Cmd::Sweep => commands::sweep(&cfg),
        Cmd::Bounds => commands::bounds(&cfg),
        Cmd::ValidateTable1 => commands::validate_table1(&cfg),
    }
}

/// Maps library errors onto the documented exit codes.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::Case { source, .. } => error_code(source),
        Error::Geometry(_) => 2,
        Error::Solver { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print on stdout and succeed; genuine
            // parse failures are configuration errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
