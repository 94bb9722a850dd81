//! Per-voxel stiffness pre-integration.
//!
//! The expensive part of immersed voxel FEM is integrating cell stiffness
//! matrices over hundreds of voxels per cell. Because every cell has the same
//! size, the same voxel tiling, and an isotropic material that depends
//! linearly on the Lamé parameters, the integral splits per voxel slot
//! `(i, j, k)` into two geometry-only matrices:
//!
//! ```text
//! K_cell = Σ_slots α_s (λ_s K_λ^(s) + μ_s K_μ^(s))
//!
//! K_λ^(s)[(m,c),(n,e)] = ∫_s ∂N_m/∂x_c · ∂N_n/∂x_e dV
//! K_μ^(s)[(m,c),(n,e)] = ∫_s δ_ce ∇N_m·∇N_n + ∂N_m/∂x_e · ∂N_n/∂x_c dV
//! ```
//!
//! which are computed once per `(p, voxels_per_cell, spacing)` configuration
//! with a `(p+1)`-point Gauss rule per direction per voxel sub-interval — the
//! integrand is polynomial of degree ≤ 2p per direction, so this is exact.
//! Assembling any cell then reduces to a weighted matrix sum. Caching λ and μ
//! parts separately doubles the cache memory but lets a single cache serve
//! two-phase composites.
//!
//! The α scaling is applied at assembly time, never baked into the cache.

use crate::material::IsotropicMaterial;
use crate::mesh::CellMesh;
use crate::voxel::{IndicatorField, PhaseMap};
use crate::{par, Error, Result};

/// Default memory budget for one pre-integrated cache: 2 GiB.
pub const CACHE_MEM_CAP_DEFAULT: u64 = 2 << 30;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`. Nodes are the roots of `P_n`, found by Newton iteration
/// from the Chebyshev initial guess; weights are `2 / ((1 - x²) P_n'(x)²)`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev estimate for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' at x via the recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Pre-integrated per-voxel stiffness matrices for one mesh configuration.
///
/// Slots are ordered x-fastest: `slot = i + v_x·(j + v_y·k)`, matching the
/// voxel gather order of [`DomainCoefficients::gather_cell`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelStiffnessCache {
    /// Voxels per cell per direction.
    pub v: [usize; 3],
    /// Polynomial order.
    pub p: usize,
    /// DOFs per cell, `3·(p+1)³`.
    d: usize,
    /// Per slot: `d×d` row-major λ-matrix.
    k_lambda: Vec<Vec<f64>>,
    /// Per slot: `d×d` row-major μ-matrix.
    k_mu: Vec<Vec<f64>>,
    /// Σ over slots of `k_lambda` — the homogeneous-cell fast path.
    sum_lambda: Vec<f64>,
    /// Σ over slots of `k_mu`.
    sum_mu: Vec<f64>,
}

/// Dense stiffness matrix of one cell.
#[derive(Debug, Clone)]
pub struct CellStiffness {
    /// Matrix dimension (DOFs per cell).
    pub d: usize,
    /// Row-major `d×d` entries, MPa·mm.
    pub k: Vec<f64>,
}

impl CellStiffness {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.d + j]
    }
}

impl VoxelStiffnessCache {
    /// Number of voxel slots per cell.
    pub fn slot_count(&self) -> usize {
        self.v[0] * self.v[1] * self.v[2]
    }

    /// Matrix dimension, DOFs per cell.
    pub fn dofs_per_cell(&self) -> usize {
        self.d
    }

    pub fn k_lambda(&self, slot: usize) -> &[f64] {
        &self.k_lambda[slot]
    }

    pub fn k_mu(&self, slot: usize) -> &[f64] {
        &self.k_mu[slot]
    }

    /// Σ over all slots of `λ K_λ + μ K_μ` — the stiffness of a fully solid
    /// homogeneous cell with unit α.
    pub fn homogeneous(&self, lambda: f64, mu: f64) -> CellStiffness {
        let mut k = vec![0.0; self.d * self.d];
        for (out, (&kl, &km)) in k.iter_mut().zip(self.sum_lambda.iter().zip(&self.sum_mu)) {
            *out = lambda * kl + mu * km;
        }
        CellStiffness { d: self.d, k }
    }

    /// Accumulates `Σ_slots coeff_l[s]·K_λ^(s) + coeff_m[s]·K_μ^(s)` into a
    /// zeroed buffer. The coefficient arrays carry the α·λ and α·μ products
    /// per slot. Only the upper triangle is accumulated (the summands are all
    /// symmetric), then mirrored — this halves the dominant flop count.
    pub fn accumulate(&self, coeff_l: &[f64], coeff_m: &[f64], out: &mut [f64]) {
        let d = self.d;
        assert_eq!(coeff_l.len(), self.slot_count());
        assert_eq!(coeff_m.len(), self.slot_count());
        assert_eq!(out.len(), d * d);
        out.fill(0.0);
        for slot in 0..self.slot_count() {
            let (cl, cm) = (coeff_l[slot], coeff_m[slot]);
            if cl == 0.0 && cm == 0.0 {
                continue;
            }
            let kl = &self.k_lambda[slot];
            let km = &self.k_mu[slot];
            for i in 0..d {
                let row = i * d;
                for j in i..d {
                    out[row + j] += cl * kl[row + j] + cm * km[row + j];
                }
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                out[j * d + i] = out[i * d + j];
            }
        }
    }

    /// Convenience wrapper around [`Self::accumulate`] allocating the result.
    pub fn assemble(&self, coeff_l: &[f64], coeff_m: &[f64]) -> CellStiffness {
        let mut k = vec![0.0; self.d * self.d];
        self.accumulate(coeff_l, coeff_m, &mut k);
        CellStiffness { d: self.d, k }
    }
}

/// Assembles one cell from per-voxel indicator values and Lamé parameters:
/// `K_c = Σ α_s (λ_s K_λ + μ_s K_μ)`. `alphas` and `lame` follow the slot
/// order of the cache.
pub fn assemble_cell(
    cache: &VoxelStiffnessCache,
    alphas: &[f64],
    lame: &[(f64, f64)],
) -> Result<CellStiffness> {
    let n = cache.slot_count();
    if alphas.len() != n || lame.len() != n {
        return Err(Error::Input(format!(
            "expected {n} per-voxel values, got {} alphas and {} materials",
            alphas.len(),
            lame.len()
        )));
    }
    let coeff_l: Vec<f64> = alphas.iter().zip(lame).map(|(&a, &(l, _))| a * l).collect();
    let coeff_m: Vec<f64> = alphas.iter().zip(lame).map(|(&a, &(_, m))| a * m).collect();
    Ok(cache.assemble(&coeff_l, &coeff_m))
}

/// Builds the cache with the default 2 GiB memory budget.
pub fn build_cache(mesh: &CellMesh) -> Result<VoxelStiffnessCache> {
    build_cache_with_cap(mesh, CACHE_MEM_CAP_DEFAULT)
}

/// Builds the cache, failing with the required byte count if the two dense
/// matrix families would exceed `cap_bytes`.
pub fn build_cache_with_cap(mesh: &CellMesh, cap_bytes: u64) -> Result<VoxelStiffnessCache> {
    let v = mesh.voxels_per_cell;
    let p = mesh.p;
    let slots = v[0] * v[1] * v[2];
    let d = mesh.dofs_per_cell();
    let required_bytes = (slots as u64) * 2 * (d as u64) * (d as u64) * 8;
    if required_bytes > cap_bytes {
        return Err(Error::Memory { required_bytes, cap_bytes });
    }

    let n_modes = mesh.modes_per_cell();
    let (g_nodes, g_weights) = gauss_legendre(p + 1);
    let det_j = mesh.det_jacobian();
    let grad_scale = mesh.gradient_scale();
    let basis = mesh.basis().clone();

    // One worker per slot; slots are independent, so the parallel map is
    // deterministic.
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = par::map_indexed(slots, |slot| {
        let si = slot % v[0];
        let sj = slot / v[0] % v[1];
        let sk = slot / (v[0] * v[1]);
        let sub = [si, sj, sk];
        // Sub-interval half-width and midpoint per direction in reference
        // coordinates: voxel i of v spans [-1 + 2i/v, -1 + 2(i+1)/v].
        let mut half = [0.0; 3];
        let mut mid = [0.0; 3];
        for dir in 0..3 {
            half[dir] = 1.0 / v[dir] as f64;
            mid[dir] = -1.0 + (2.0 * sub[dir] as f64 + 1.0) * half[dir];
        }
        let mut kl = vec![0.0; d * d];
        let mut km = vec![0.0; d * d];
        let mut grads = vec![[0.0; 3]; n_modes];
        for (gk, &nk) in g_nodes.iter().enumerate() {
            for (gj, &nj) in g_nodes.iter().enumerate() {
                for (gi, &ni) in g_nodes.iter().enumerate() {
                    let local = [
                        mid[0] + half[0] * ni,
                        mid[1] + half[1] * nj,
                        mid[2] + half[2] * nk,
                    ];
                    let w = g_weights[gi] * half[0]
                        * g_weights[gj] * half[1]
                        * g_weights[gk] * half[2]
                        * det_j;
                    let (_, ref_grads) = basis.evaluate(local);
                    for (m, g) in ref_grads.iter().enumerate() {
                        grads[m] = [
                            g[0] * grad_scale[0],
                            g[1] * grad_scale[1],
                            g[2] * grad_scale[2],
                        ];
                    }
                    accumulate_kernels(&grads, w, d, &mut kl, &mut km);
                }
            }
        }
        (kl, km)
    });

    let mut k_lambda = Vec::with_capacity(slots);
    let mut k_mu = Vec::with_capacity(slots);
    let mut sum_lambda = vec![0.0; d * d];
    let mut sum_mu = vec![0.0; d * d];
    for (kl, km) in pairs {
        for (s, &x) in sum_lambda.iter_mut().zip(&kl) {
            *s += x;
        }
        for (s, &x) in sum_mu.iter_mut().zip(&km) {
            *s += x;
        }
        k_lambda.push(kl);
        k_mu.push(km);
    }

    Ok(VoxelStiffnessCache { v, p, d, k_lambda, k_mu, sum_lambda, sum_mu })
}

/// Adds one quadrature point to the λ and μ kernels:
/// `K_λ += w · ∂N_m/∂x_c ∂N_n/∂x_e`,
/// `K_μ += w · (δ_ce ∇N_m·∇N_n + ∂N_m/∂x_e ∂N_n/∂x_c)`.
fn accumulate_kernels(grads: &[[f64; 3]], w: f64, d: usize, kl: &mut [f64], km: &mut [f64]) {
    let n_modes = grads.len();
    debug_assert_eq!(3 * n_modes, d);
    for m in 0..n_modes {
        let gm = grads[m];
        for n in 0..n_modes {
            let gn = grads[n];
            let dot = gm[0] * gn[0] + gm[1] * gn[1] + gm[2] * gn[2];
            for c in 0..3 {
                let row = (3 * m + c) * d + 3 * n;
                for e in 0..3 {
                    kl[row + e] += w * gm[c] * gn[e];
                    let mut s = gm[e] * gn[c];
                    if c == e {
                        s += dot;
                    }
                    km[row + e] += w * s;
                }
            }
        }
    }
}

/// Per-voxel assembly coefficients over the whole image: `c_λ = α·λ` and
/// `c_μ = α·μ` for every voxel, precomputed once so cell assembly is a pure
/// gather + weighted sum.
#[derive(Debug, Clone)]
pub struct DomainCoefficients {
    pub dims: [usize; 3],
    c_lambda: Vec<f64>,
    c_mu: Vec<f64>,
}

impl DomainCoefficients {
    /// Porous single-material domain: solid voxels carry `(λ, μ)`, void
    /// voxels `α_void·(λ, μ)`.
    pub fn from_indicator(field: &IndicatorField, mat: &IsotropicMaterial) -> Self {
        let n = field.voxel_count();
        let (la, mu) = (mat.lambda(), mat.mu());
        let mut c_lambda = Vec::with_capacity(n);
        let mut c_mu = Vec::with_capacity(n);
        for i in 0..n {
            let a = field.alpha_at(i);
            c_lambda.push(a * la);
            c_mu.push(a * mu);
        }
        Self { dims: field.dims, c_lambda, c_mu }
    }

    /// Two-phase solid domain (α = 1 everywhere).
    pub fn from_phases(
        phases: &PhaseMap,
        matrix: &IsotropicMaterial,
        particle: &IsotropicMaterial,
    ) -> Self {
        let n = phases.voxel_count();
        let lm = [matrix.lambda(), particle.lambda()];
        let mm = [matrix.mu(), particle.mu()];
        let mut c_lambda = Vec::with_capacity(n);
        let mut c_mu = Vec::with_capacity(n);
        for i in 0..n {
            let ph = phases.is_particle(i) as usize;
            c_lambda.push(lm[ph]);
            c_mu.push(mm[ph]);
        }
        Self { dims: phases.dims, c_lambda, c_mu }
    }

    /// Effective Lamé pair `(c_λ, c_μ)` of one voxel (α-scaled for porous
    /// media, per-phase for two-phase media).
    #[inline]
    pub fn lame_at(&self, idx: usize) -> (f64, f64) {
        (self.c_lambda[idx], self.c_mu[idx])
    }

    /// Gathers the per-slot coefficients of one cell in cache slot order
    /// (x-fastest within the cell). Returns whether all slots are identical,
    /// in which case the homogeneous fast path applies.
    pub fn gather_cell(
        &self,
        mesh: &CellMesh,
        cell: [usize; 3],
        out_l: &mut Vec<f64>,
        out_m: &mut Vec<f64>,
    ) -> bool {
        let v = mesh.voxels_per_cell;
        out_l.clear();
        out_m.clear();
        let base = [cell[0] * v[0], cell[1] * v[1], cell[2] * v[2]];
        let [nx, ny, _] = self.dims;
        let mut uniform = true;
        for k in 0..v[2] {
            for j in 0..v[1] {
                let row = base[0] + nx * (base[1] + j + ny * (base[2] + k));
                for i in 0..v[0] {
                    let idx = row + i;
                    let (cl, cm) = (self.c_lambda[idx], self.c_mu[idx]);
                    if !out_l.is_empty() && (cl != out_l[0] || cm != out_m[0]) {
                        uniform = false;
                    }
                    out_l.push(cl);
                    out_m.push(cm);
                }
            }
        }
        uniform
    }
}

/// Volume quadrature tables for post-processing integrals (average strain,
/// cavity strain): per voxel slot, the physical integration weights and
/// per-mode physical gradients at the same Gauss points used for stiffness.
#[derive(Debug, Clone)]
pub struct StrainQuadrature {
    pub v: [usize; 3],
    pub p: usize,
    /// Per slot: list of (weight incl. detJ, per-mode physical gradients).
    slots: Vec<Vec<(f64, Vec<[f64; 3]>)>>,
}

impl StrainQuadrature {
    pub fn build(mesh: &CellMesh) -> Self {
        let v = mesh.voxels_per_cell;
        let p = mesh.p;
        let slots_n = v[0] * v[1] * v[2];
        let (g_nodes, g_weights) = gauss_legendre(p + 1);
        let det_j = mesh.det_jacobian();
        let grad_scale = mesh.gradient_scale();
        let basis = mesh.basis().clone();
        let slots = par::map_indexed(slots_n, |slot| {
            let si = slot % v[0];
            let sj = slot / v[0] % v[1];
            let sk = slot / (v[0] * v[1]);
            let sub = [si, sj, sk];
            let mut half = [0.0; 3];
            let mut mid = [0.0; 3];
            for dir in 0..3 {
                half[dir] = 1.0 / v[dir] as f64;
                mid[dir] = -1.0 + (2.0 * sub[dir] as f64 + 1.0) * half[dir];
            }
            let mut qps = Vec::with_capacity(g_nodes.len().pow(3));
            for (gk, &nk) in g_nodes.iter().enumerate() {
                for (gj, &nj) in g_nodes.iter().enumerate() {
                    for (gi, &ni) in g_nodes.iter().enumerate() {
                        let local = [
                            mid[0] + half[0] * ni,
                            mid[1] + half[1] * nj,
                            mid[2] + half[2] * nk,
                        ];
                        let w = g_weights[gi] * half[0]
                            * g_weights[gj] * half[1]
                            * g_weights[gk] * half[2]
                            * det_j;
                        let (_, ref_grads) = basis.evaluate(local);
                        let grads: Vec<[f64; 3]> = ref_grads
                            .iter()
                            .map(|g| {
                                [
                                    g[0] * grad_scale[0],
                                    g[1] * grad_scale[1],
                                    g[2] * grad_scale[2],
                                ]
                            })
                            .collect();
                        qps.push((w, grads));
                    }
                }
            }
            qps
        });
        Self { v, p, slots }
    }

    pub fn slot(&self, slot: usize) -> &[(f64, Vec<[f64; 3]>)] {
        &self.slots[slot]
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }
}
