//! Command implementations: each loads what it needs from the configuration,
//! runs the corresponding core driver, and writes reports under
//! `<output.dir>/<command>/`.
//!
//! Reports are reproducible by construction: no timestamps or wall-clock
//! values, fixed field order, `{:.17e}` floats in CSV bodies, and a
//! provenance header (tool version + configuration hash) on every file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use voxhom::bc::BcKind;
use voxhom::homog::{
    order_relation_check, window_sweep, Homogenizer, OrderRelation, TensorRun,
};
use voxhom::material::{
    engineering_constants, hashin_shtrikman_upper, voigt_bound, ElasticityTensor,
    EngineeringConstants,
};
use voxhom::mesh::{build_mesh, CellMesh};
use voxhom::preint::{build_cache, StrainQuadrature};
use voxhom::validate::{scenario_table1, write_report_pair};
use voxhom::voxel::{
    flood_fill_clean, load_voxel_grid, porosity, read_sidecar, segment_threshold, sidecar_path,
    write_mask, IndicatorField,
};
use voxhom::{Error, Result};

use crate::config::RunConfig;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Loads the raw input and thresholds it into an indicator field.
fn load_field(cfg: &RunConfig) -> Result<IndicatorField> {
    let raw = cfg
        .input
        .raw
        .as_deref()
        .ok_or_else(|| Error::Input("this command needs an input file (input.raw)".into()))?;
    let meta_path = cfg.input.meta.clone().unwrap_or_else(|| sidecar_path(raw));
    let meta = read_sidecar(&meta_path)?;
    let grid = load_voxel_grid(raw, &meta)?;
    segment_threshold(&grid, cfg.segmentation.threshold, cfg.segmentation.alpha_void)
}

/// Applies the crop-to-multiple policy ahead of meshing.
fn maybe_crop(cfg: &RunConfig, field: IndicatorField) -> Result<IndicatorField> {
    if !cfg.mesh.crop_to_multiple {
        return Ok(field);
    }
    let v = cfg.mesh.voxels_per_cell;
    let dims = [0, 1, 2].map(|d| field.dims[d] - field.dims[d] % v[d]);
    if dims == field.dims {
        return Ok(field);
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Mesh(format!(
            "grid {:?} is smaller than one cell of {v:?} voxels",
            field.dims
        )));
    }
    field.window([0, 0, 0], dims)
}

fn mesh_for(cfg: &RunConfig, field: &IndicatorField) -> Result<CellMesh> {
    build_mesh(field.dims, field.spacing, cfg.mesh.voxels_per_cell, cfg.mesh.p)
}

fn command_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.output.dir.join(command);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// `# `-prefixed provenance lines followed by the CSV body.
fn csv_with_provenance(cfg: &RunConfig, body: &str) -> String {
    let mut s = String::new();
    for line in cfg.provenance().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str(body);
    s
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn tensor_rows(t: &ElasticityTensor) -> [[f64; 6]; 6] {
    let mut rows = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            rows[i][j] = t.c[(i, j)];
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SegmentSummary {
    tool: String,
    config_sha256: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    voxels: usize,
    solid_voxels: usize,
    porosity: f64,
    cleaned: bool,
    /// Solid count straight after thresholding, before any cleanup.
    solid_voxels_raw: usize,
}

/// Thresholds the input grid into a solid/void mask, optionally keeps only
/// the largest connected component, and writes the mask plus a JSON summary.
pub fn segment(cfg: &RunConfig) -> Result<()> {
    let field = load_field(cfg)?;
    let solid_raw = field.solid_count();
    if solid_raw == 0 {
        return Err(Error::Geometry("empty geometry: no voxel reaches the threshold".into()));
    }
    let field = if cfg.segmentation.clean {
        flood_fill_clean(&field, cfg.segmentation.connectivity)?
    } else {
        field
    };

    let dir = command_dir(cfg, "segment")?;
    let mask_path = dir.join("mask.raw");
    write_mask(&field, &mask_path)?;
    announce(&mask_path);

    let summary = SegmentSummary {
        tool: format!("voxhom {}", env!("CARGO_PKG_VERSION")),
        config_sha256: cfg.sha256(),
        dims: field.dims,
        spacing_mm: field.spacing,
        voxels: field.voxel_count(),
        solid_voxels: field.solid_count(),
        porosity: porosity(&field),
        cleaned: cfg.segmentation.clean,
        solid_voxels_raw: solid_raw,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    announce(&summary_path);
    println!(
        "segmented {}×{}×{} voxels, porosity {:.6}",
        field.dims[0],
        field.dims[1],
        field.dims[2],
        porosity(&field)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// homogenize
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CaseSummary {
    iterations: usize,
    relative_residual: f64,
    hill_residual: f64,
    stress_route_gap: f64,
    equilibration: Option<(f64, f64)>,
}

#[derive(Serialize)]
struct FamilyReport {
    kind: BcKind,
    /// Symmetrized stiffness, Voigt rows (11, 22, 33, 12, 23, 13), MPa.
    tensor: [[f64; 6]; 6],
    asymmetry: f64,
    degenerate: bool,
    engineering: Option<EngineeringConstants>,
    cases: Vec<CaseSummary>,
}

#[derive(Serialize)]
struct PairCheck {
    /// `"KUBC ⪰ PBC"`-style label, stiffer family first.
    pair: String,
    min_eigenvalue: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Serialize)]
struct HomogenizeReport {
    tool: String,
    config_sha256: String,
    dims: [usize; 3],
    porosity: f64,
    mesh: serde_json::Value,
    families: Vec<FamilyReport>,
    /// Full three-family verdict, present when KUBC, PBC and SUBC all ran.
    order: Option<OrderRelation>,
    /// Pairwise Löwner checks for whichever families are present.
    pairwise: Vec<PairCheck>,
}

fn family_report(run: &TensorRun) -> FamilyReport {
    FamilyReport {
        kind: run.kind,
        tensor: tensor_rows(&run.tensor),
        asymmetry: run.asymmetry,
        degenerate: run.degenerate,
        engineering: engineering_constants(&run.tensor).ok(),
        cases: run
            .cases
            .iter()
            .map(|c| CaseSummary {
                iterations: c.solver.iterations,
                relative_residual: c.solver.relative_residual,
                hill_residual: c.hill_residual,
                stress_route_gap: c.stress_route_gap,
                equilibration: c.equilibration,
            })
            .collect(),
    }
}

/// Identifies the apparent stiffness tensor under every requested family and
/// writes a JSON report plus one CSV matrix per family.
pub fn homogenize(cfg: &RunConfig) -> Result<()> {
    let kinds = cfg.bc_kinds()?;
    let field = maybe_crop(cfg, load_field(cfg)?)?;
    let mesh = mesh_for(cfg, &field)?;
    let cache = build_cache(&mesh)?;
    let sq = StrainQuadrature::build(&mesh);
    let hom = Homogenizer::new(&mesh, &cache, &sq).with_options(cfg.homog_options()?);
    let mat = cfg.material.matrix.material();

    let mut runs: Vec<TensorRun> = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        runs.push(hom.effective_tensor(&field, &mat, kind)?);
    }

    let find = |k: BcKind| runs.iter().find(|r| r.kind == k).map(|r| &r.tensor);
    let (kubc, pbc, subc) = (find(BcKind::Kubc), find(BcKind::Pbc), find(BcKind::Subc));
    let order = match (kubc, pbc, subc) {
        (Some(k), Some(p), Some(s)) => Some(order_relation_check(s, p, k)),
        _ => None,
    };
    let mut pairwise = Vec::new();
    for (label, stiff, soft) in [
        ("KUBC ⪰ PBC", kubc, pbc),
        ("PBC ⪰ SUBC", pbc, subc),
        ("KUBC ⪰ SUBC", kubc, subc),
    ] {
        let (Some(a), Some(b)) = (stiff, soft) else { continue };
        let threshold = 1e-6 * a.norm_mandel();
        let min_eigenvalue = ElasticityTensor::from_matrix(a.c - b.c).min_eigenvalue();
        pairwise.push(PairCheck {
            pair: label.to_string(),
            min_eigenvalue,
            threshold,
            pass: min_eigenvalue >= -threshold,
        });
    }

    let dir = command_dir(cfg, "homogenize")?;
    for run in &runs {
        let name = format!("c_{}.csv", format!("{:?}", run.kind).to_lowercase());
        let path = dir.join(name);
        fs::write(&path, csv_with_provenance(cfg, &run.tensor.to_csv()))?;
        announce(&path);
    }
    let report = HomogenizeReport {
        tool: format!("voxhom {}", env!("CARGO_PKG_VERSION")),
        config_sha256: cfg.sha256(),
        dims: field.dims,
        porosity: porosity(&field),
        mesh: mesh.summary_json(),
        families: runs.iter().map(family_report).collect(),
        order,
        pairwise,
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    announce(&path);
    for f in &report.families {
        println!(
            "{:?}: C1111 = {:.4e} MPa, asymmetry {:.2e}",
            f.kind, f.tensor[0][0], f.asymmetry
        );
    }
    if let Some(o) = &report.order {
        println!("order relation SUBC ⪯ PBC ⪯ KUBC: {}", if o.pass { "PASS" } else { "FAIL" });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tensile
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TensileReport {
    tool: String,
    config_sha256: String,
    dims: [usize; 3],
    porosity: f64,
    axis: String,
    applied_strain: f64,
    /// Effective Young's modulus `(F/A)/ε`, MPa.
    modulus: f64,
    poisson: [f64; 2],
    force: f64,
    gross_area: f64,
    lateral_strain: [f64; 2],
    energy_density: f64,
    iterations: usize,
    relative_residual: f64,
}

/// Runs the virtual tensile test along the configured axis and writes the
/// modulus report plus a stress–strain curve CSV.
pub fn tensile(cfg: &RunConfig) -> Result<()> {
    let axis = cfg.axis()?;
    let field = maybe_crop(cfg, load_field(cfg)?)?;
    let mesh = mesh_for(cfg, &field)?;
    let cache = build_cache(&mesh)?;
    let sq = StrainQuadrature::build(&mesh);
    let hom = Homogenizer::new(&mesh, &cache, &sq).with_options(cfg.homog_options()?);
    let run = hom.tensile(&field, &cfg.material.matrix.material(), axis, cfg.analysis.strain)?;

    let dir = command_dir(cfg, "tensile")?;
    let curve_path = dir.join("stress_strain.csv");
    fs::write(&curve_path, csv_with_provenance(cfg, &run.stress_strain_csv(cfg.analysis.samples)))?;
    announce(&curve_path);

    let report = TensileReport {
        tool: format!("voxhom {}", env!("CARGO_PKG_VERSION")),
        config_sha256: cfg.sha256(),
        dims: field.dims,
        porosity: porosity(&field),
        axis: cfg.analysis.axis.to_ascii_lowercase(),
        applied_strain: run.applied_strain,
        modulus: run.modulus,
        poisson: run.poisson,
        force: run.force,
        gross_area: run.gross_area,
        lateral_strain: run.lateral_strain,
        energy_density: run.energy_density,
        iterations: run.solver.iterations,
        relative_residual: run.solver.relative_residual,
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    announce(&path);
    println!(
        "E_{} = {:.6e} MPa (ν = {:.4}, {:.4})",
        report.axis, report.modulus, report.poisson[0], report.poisson[1]
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FailedWindow {
    index: [usize; 3],
    origin: [usize; 3],
    error: String,
}

#[derive(Serialize)]
struct SweepSummary {
    tool: String,
    config_sha256: String,
    kind: BcKind,
    window: [usize; 3],
    stride: [usize; 3],
    quantity: String,
    mean: f64,
    std: f64,
    cv: f64,
    count: usize,
    failed: Vec<FailedWindow>,
}

/// Moving-window apparent-property sweep: per-window CSV plus scatter
/// statistics of the tracked quantity.
pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.bc_kinds()?[0];
    let quantity = cfg.quantity()?;
    let window = cfg
        .analysis
        .window
        .ok_or_else(|| Error::Input("sweep needs a window size (analysis.window)".into()))?;
    let stride = cfg.analysis.stride.unwrap_or(window);
    let field = load_field(cfg)?;
    let report = window_sweep(
        &field,
        &cfg.material.matrix.material(),
        kind,
        window,
        stride,
        cfg.mesh.voxels_per_cell,
        cfg.mesh.p,
        quantity,
        &cfg.homog_options()?,
    )?;

    let dir = command_dir(cfg, "sweep")?;
    let csv_path = dir.join("windows.csv");
    fs::write(&csv_path, csv_with_provenance(cfg, &report.to_csv()))?;
    announce(&csv_path);

    let summary = SweepSummary {
        tool: format!("voxhom {}", env!("CARGO_PKG_VERSION")),
        config_sha256: cfg.sha256(),
        kind: report.kind,
        window: report.window,
        stride: report.stride,
        quantity: report.quantity.label(),
        mean: report.stats.mean,
        std: report.stats.std,
        cv: report.stats.cv,
        count: report.stats.count,
        failed: report
            .records
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| FailedWindow {
                    index: r.index,
                    origin: r.origin,
                    error: e.clone(),
                })
            })
            .collect(),
    };
    let path = dir.join("report.json");
    write_json(&path, &summary)?;
    announce(&path);
    println!(
        "{} windows, {} = {:.6e} ± {:.3e} (CV {:.4e})",
        summary.count,
        summary.quantity,
        summary.mean,
        summary.std,
        summary.cv
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

/// Analytical Voigt and upper Hashin–Shtrikman bounds of the matrix material
/// over the configured porosity grid, as a CSV table.
pub fn bounds(cfg: &RunConfig) -> Result<()> {
    let mat = cfg.material.matrix.material();
    let mut body = String::from(
        "porosity,voigt_c1111,voigt_c1313,hs_upper_c1111,hs_upper_c1313,hs_below_voigt_min_eig\n",
    );
    for &phi in &cfg.analysis.porosities {
        let v = voigt_bound(&mat, phi)?;
        let hs = hashin_shtrikman_upper(&mat, phi)?;
        let margin = ElasticityTensor::from_matrix(v.c - hs.c).min_eigenvalue();
        let _ = writeln!(
            body,
            "{phi:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{margin:.17e}",
            v.c[(0, 0)],
            v.c[(5, 5)],
            hs.c[(0, 0)],
            hs.c[(5, 5)],
        );
    }
    let dir = command_dir(cfg, "bounds")?;
    let path = dir.join("bounds.csv");
    fs::write(&path, csv_with_provenance(cfg, &body))?;
    announce(&path);
    Ok(())
}

// ---------------------------------------------------------------------------
// validate-table1
// ---------------------------------------------------------------------------

/// Runs the spherical-inclusion benchmark scenario and writes its comparison
/// reports under `<output.dir>/validation/`.
pub fn validate_table1(cfg: &RunConfig) -> Result<()> {
    let rep = scenario_table1(cfg.analysis.resolution, cfg.mesh.p)?;
    let (md, csv) = write_report_pair(
        &cfg.output.dir,
        "table1",
        &cfg.provenance(),
        &rep.to_markdown(),
        &rep.to_csv(),
    )?;
    announce(&md);
    announce(&csv);
    let json_path = cfg.output.dir.join("validation").join("table1.json");
    write_json(&json_path, &json!({
        "tool": format!("voxhom {}", env!("CARGO_PKG_VERSION")),
        "config_sha256": cfg.sha256(),
        "report": rep,
    }))?;
    announce(&json_path);
    println!(
        "C1111 deviation {:+.2}%, C2211 deviation {:+.2}% ({} DOF)",
        100.0 * rep.rel_deviation[0],
        100.0 * rep.rel_deviation[1],
        rep.dofs
    );
    Ok(())
}
