//! Finite element assembly of the velocity, pressure and divergence
//! operators, the LPS stabilization and the boundary lift.
//!
//! Velocity matrices are assembled on all Q2 unknowns and then split into
//! the interior block (rows and columns interior) and the interior-row
//! block (interior rows, all columns). The latter is what the nonlinear
//! residual needs, since the state carries its Dirichlet values.

use crate::error::{Error, Result};
use crate::grid::{
    build_dofmap, build_mesh, build_patches, tabulate, DofMap, Mesh, PatchPartition, QuadratureRule,
};
use crate::sparse::{SparseMatrix, TripletBuilder};

pub const DEFAULT_QUADRATURE: usize = 3;

/// Mesh, maps, quadrature and the wind-independent matrices of one level.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub dofmap: DofMap,
    pub patches: PatchPartition,
    pub rule: QuadratureRule,
    /// Vector mass, interior block.
    pub mass: SparseMatrix,
    /// Vector mass, interior rows and all columns.
    pub mass_rows: SparseMatrix,
    /// Vector stiffness, interior block.
    pub stiffness: SparseMatrix,
    pub stiffness_rows: SparseMatrix,
    pub pressure: PressureBase,
    pub divergence: DivergenceOperator,
    all_v: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PressureBase {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
}

#[derive(Debug, Clone)]
pub struct DivergenceOperator {
    /// `n_p x n_v_int`
    pub b: SparseMatrix,
    /// `n_p x n_v_full`, before boundary elimination.
    pub b_full: SparseMatrix,
}

impl DivergenceOperator {
    /// Contribution `B_full g` of a full velocity field that is zero in the interior.
    pub fn boundary_contribution(&self, lifted: &[f64]) -> Vec<f64> {
        self.b_full.matvec(lifted)
    }
}

impl Discretization {
    pub fn new(level: u32) -> Result<Self> {
        Self::with_quadrature(level, DEFAULT_QUADRATURE)
    }

    pub fn with_quadrature(level: u32, order: usize) -> Result<Self> {
        let mesh = build_mesh(level)?;
        if mesh.cells_per_dir < 2 {
            return Err(Error::InvalidLevel(level));
        }
        let dofmap = build_dofmap(&mesh);
        let patches = build_patches(&mesh);
        let rule = tabulate(order)?;
        let all_v: Vec<usize> = (0..dofmap.n_v_full).collect();

        let (mass_full, stiff_full) = velocity_base(&mesh, &dofmap, &rule);
        let pressure = pressure_base(&mesh, &rule);
        let divergence = assemble_divergence_with(&mesh, &dofmap, &rule);
        let int = &dofmap.interior;
        Ok(Self {
            mass: mass_full.submatrix(int, int),
            mass_rows: mass_full.submatrix(int, &all_v),
            stiffness: stiff_full.submatrix(int, int),
            stiffness_rows: stiff_full.submatrix(int, &all_v),
            mesh,
            dofmap,
            patches,
            rule,
            pressure,
            divergence,
            all_v,
        })
    }

    pub fn level(&self) -> u32 {
        self.mesh.level
    }

    pub fn n_v(&self) -> usize {
        self.dofmap.n_v_int
    }

    pub fn n_p(&self) -> usize {
        self.dofmap.n_p
    }

    fn split(&self, full: &SparseMatrix) -> (SparseMatrix, SparseMatrix) {
        let int = &self.dofmap.interior;
        (full.submatrix(int, int), full.submatrix(int, &self.all_v))
    }
}

/// Wind-dependent velocity operators at interior dimension, plus the
/// interior-row versions used by the residual.
#[derive(Debug, Clone)]
pub struct VelocityOperators {
    pub m: SparseMatrix,
    pub k: SparseMatrix,
    pub n: SparseMatrix,
    pub h: SparseMatrix,
    pub w: SparseMatrix,
    pub n_rows: SparseMatrix,
    pub w_rows: SparseMatrix,
    pub stab: StabilizationInfo,
}

#[derive(Debug, Clone, Default)]
pub struct StabilizationInfo {
    /// Stabilization parameter per patch.
    pub delta: Vec<f64>,
    /// Patch Peclet number per patch.
    pub peclet: Vec<f64>,
}

impl StabilizationInfo {
    pub fn active_patches(&self) -> usize {
        self.delta.iter().filter(|&&d| d > 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct PressureOperators {
    pub mp: SparseMatrix,
    pub kp: SparseMatrix,
    pub np: SparseMatrix,
    pub wp: SparseMatrix,
    pub mp_diag: Vec<f64>,
}

fn check_wind(disc: &Discretization, wind: &[f64]) -> Result<()> {
    if wind.len() != disc.dofmap.n_v_full {
        return Err(Error::Assembly(format!(
            "wind has length {}, expected {}",
            wind.len(),
            disc.dofmap.n_v_full
        )));
    }
    if let Some(i) = wind.iter().position(|v| !v.is_finite()) {
        return Err(Error::Assembly(format!("wind entry {i} is not finite")));
    }
    Ok(())
}

/// Velocity operators at `wind`. The stabilization is built from
/// `stab_wind` when given and omitted otherwise.
pub fn assemble_velocity(
    disc: &Discretization,
    wind: &[f64],
    nu: f64,
    stab_wind: Option<&[f64]>,
) -> Result<VelocityOperators> {
    check_wind(disc, wind)?;
    let n_full = convection_full(disc, wind);
    let h_full = newton_full(disc, wind);
    let (w_full, stab) = match stab_wind {
        Some(sw) => {
            check_wind(disc, sw)?;
            lps_velocity_full(disc, sw, nu)
        }
        None => (
            SparseMatrix::zeros(disc.dofmap.n_v_full, disc.dofmap.n_v_full),
            StabilizationInfo::default(),
        ),
    };
    let (n, n_rows) = disc.split(&n_full);
    let (w, w_rows) = disc.split(&w_full);
    let int = &disc.dofmap.interior;
    Ok(VelocityOperators {
        m: disc.mass.clone(),
        k: disc.stiffness.clone(),
        n,
        h: h_full.submatrix(int, int),
        w,
        n_rows,
        w_rows,
        stab,
    })
}

pub fn assemble_pressure(
    disc: &Discretization,
    wind: &[f64],
    nu: f64,
    stab_wind: Option<&[f64]>,
) -> Result<PressureOperators> {
    check_wind(disc, wind)?;
    let np = pressure_convection(disc, wind);
    let wp = match stab_wind {
        Some(sw) => {
            check_wind(disc, sw)?;
            lps_pressure(disc, sw, nu)
        }
        None => SparseMatrix::zeros(disc.n_p(), disc.n_p()),
    };
    Ok(PressureOperators {
        mp_diag: disc.pressure.mass.diagonal(),
        mp: disc.pressure.mass.clone(),
        kp: disc.pressure.stiffness.clone(),
        np,
        wp,
    })
}

pub fn assemble_divergence(mesh: &Mesh, dofmap: &DofMap) -> DivergenceOperator {
    let rule = tabulate(DEFAULT_QUADRATURE).expect("default order is supported");
    assemble_divergence_with(mesh, dofmap, &rule)
}

/// The matrices `N(zeta)` and `H(zeta)` at interior dimension.
pub fn assemble_curvature(disc: &Discretization, zeta: &[f64]) -> Result<(SparseMatrix, SparseMatrix)> {
    check_wind(disc, zeta)?;
    let int = &disc.dofmap.interior;
    Ok((
        convection_full(disc, zeta).submatrix(int, int),
        newton_full(disc, zeta).submatrix(int, int),
    ))
}

/// Exact second derivative in `v` of `G(v, zeta) = (v . grad v, zeta)`, at
/// interior dimension.
pub fn assemble_convection_hessian(disc: &Discretization, zeta: &[f64]) -> Result<SparseMatrix> {
    check_wind(disc, zeta)?;
    let mesh = &disc.mesh;
    let rule = &disc.rule;
    let n = disc.dofmap.n_v_full;
    let geo = Geometry::new(mesh, rule);
    let mut t = TripletBuilder::with_capacity(n, n, mesh.num_cells() * 324);
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.q2_cell_nodes(cell);
        let mut e = [[[[0.0; 2]; 2]; 9]; 9];
        for q in 0..rule.len() {
            let (zq, _) = geo.field_at(zeta, &nodes, q);
            let wd = geo.wdet[q];
            let v = &rule.q2_values[q];
            let g = &geo.grads[q];
            for i in 0..9 {
                for k in 0..9 {
                    for a in 0..2 {
                        for b in 0..2 {
                            e[i][k][a][b] +=
                                wd * (zq[b] * v[i] * g[k][a] + zq[a] * v[k] * g[i][b]);
                        }
                    }
                }
            }
        }
        for i in 0..9 {
            for k in 0..9 {
                for a in 0..2 {
                    for b in 0..2 {
                        t.push(2 * nodes[i] + a, 2 * nodes[k] + b, e[i][k][a][b]);
                    }
                }
            }
        }
    }
    let full = t.build()?;
    let int = &disc.dofmap.interior;
    Ok(full.submatrix(int, int))
}

/// Full velocity vector holding `g` at boundary nodes and zero elsewhere.
pub fn lift_boundary<G: Fn([f64; 2]) -> [f64; 2]>(disc: &Discretization, g: G) -> Vec<f64> {
    let mut out = vec![0.0; disc.dofmap.n_v_full];
    for &dof in &disc.dofmap.boundary {
        if dof % 2 == 0 {
            let node = dof / 2;
            let val = g(disc.mesh.q2_coord(node));
            out[dof] = val[0];
            out[dof + 1] = val[1];
        }
    }
    out
}

/// Lid data of the driven cavity: `[1, 0]` on the open top edge, zero elsewhere.
pub fn cavity_lid(p: [f64; 2]) -> [f64; 2] {
    const EPS: f64 = 1e-12;
    if (p[1] - 1.0).abs() < EPS && p[0] > -1.0 + EPS && p[0] < 1.0 - EPS {
        [1.0, 0.0]
    } else {
        [0.0, 0.0]
    }
}

/// Nodal interpolant of a constant vector field on all Q2 nodes.
pub fn constant_field(disc: &Discretization, value: [f64; 2]) -> Vec<f64> {
    (0..disc.dofmap.n_v_full).map(|i| value[i % 2]).collect()
}

// ----------------------------------------------------------------------
// element kernels

/// Per-quadrature-point tables in physical coordinates. All cells of the
/// uniform mesh share them.
struct Geometry {
    values: Vec<[f64; 9]>,
    grads: Vec<[[f64; 2]; 9]>,
    p_values: Vec<[f64; 4]>,
    p_grads: Vec<[[f64; 2]; 4]>,
    wdet: Vec<f64>,
}

impl Geometry {
    fn new(mesh: &Mesh, rule: &QuadratureRule) -> Self {
        let s = 2.0 / mesh.h;
        let det = mesh.h * mesh.h / 4.0;
        Self {
            values: rule.q2_values.clone(),
            grads: rule.q2_grads.iter().map(|g| g.map(|[a, b]| [a * s, b * s])).collect(),
            p_values: rule.q1_values.clone(),
            p_grads: rule.q1_grads.iter().map(|g| g.map(|[a, b]| [a * s, b * s])).collect(),
            wdet: rule.weights.iter().map(|w| w * det).collect(),
        }
    }

    fn len(&self) -> usize {
        self.wdet.len()
    }

    /// Value and gradient `grad[c][a] = d_a u_c` of a Q2 vector field.
    fn field_at(&self, u: &[f64], nodes: &[usize; 9], q: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for (k, &node) in nodes.iter().enumerate() {
            let phi = self.values[q][k];
            let dphi = self.grads[q][k];
            for c in 0..2 {
                let uc = u[2 * node + c];
                val[c] += uc * phi;
                grad[c][0] += uc * dphi[0];
                grad[c][1] += uc * dphi[1];
            }
        }
        (val, grad)
    }
}

fn push_both_components(t: &mut TripletBuilder, nodes: &[usize; 9], e: &[[f64; 9]; 9]) {
    for i in 0..9 {
        for j in 0..9 {
            let v = e[i][j];
            t.push(2 * nodes[i], 2 * nodes[j], v);
            t.push(2 * nodes[i] + 1, 2 * nodes[j] + 1, v);
        }
    }
}

fn velocity_base(mesh: &Mesh, dofmap: &DofMap, rule: &QuadratureRule) -> (SparseMatrix, SparseMatrix) {
    let geo = Geometry::new(mesh, rule);
    let mut me = [[0.0; 9]; 9];
    let mut ke = [[0.0; 9]; 9];
    for q in 0..geo.len() {
        let (v, g, wd) = (&geo.values[q], &geo.grads[q], geo.wdet[q]);
        for i in 0..9 {
            for j in 0..9 {
                me[i][j] += wd * v[i] * v[j];
                ke[i][j] += wd * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    let n = dofmap.n_v_full;
    let cap = mesh.num_cells() * 162;
    let mut tm = TripletBuilder::with_capacity(n, n, cap);
    let mut tk = TripletBuilder::with_capacity(n, n, cap);
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.q2_cell_nodes(cell);
        push_both_components(&mut tm, &nodes, &me);
        push_both_components(&mut tk, &nodes, &ke);
    }
    (tm.build().expect("in bounds"), tk.build().expect("in bounds"))
}

fn pressure_base(mesh: &Mesh, rule: &QuadratureRule) -> PressureBase {
    let geo = Geometry::new(mesh, rule);
    let mut me = [[0.0; 4]; 4];
    let mut ke = [[0.0; 4]; 4];
    for q in 0..geo.len() {
        let (v, g, wd) = (&geo.p_values[q], &geo.p_grads[q], geo.wdet[q]);
        for i in 0..4 {
            for j in 0..4 {
                me[i][j] += wd * v[i] * v[j];
                ke[i][j] += wd * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    let n = mesh.num_q1_nodes();
    let mut tm = TripletBuilder::with_capacity(n, n, mesh.num_cells() * 16);
    let mut tk = TripletBuilder::with_capacity(n, n, mesh.num_cells() * 16);
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.q1_cell_nodes(cell);
        for i in 0..4 {
            for j in 0..4 {
                tm.push(nodes[i], nodes[j], me[i][j]);
                tk.push(nodes[i], nodes[j], ke[i][j]);
            }
        }
    }
    PressureBase {
        mass: tm.build().expect("in bounds"),
        stiffness: tk.build().expect("in bounds"),
    }
}

fn assemble_divergence_with(mesh: &Mesh, dofmap: &DofMap, rule: &QuadratureRule) -> DivergenceOperator {
    let geo = Geometry::new(mesh, rule);
    let mut be = [[[0.0; 2]; 9]; 4];
    for q in 0..geo.len() {
        let (psi, g, wd) = (&geo.p_values[q], &geo.grads[q], geo.wdet[q]);
        for i in 0..4 {
            for j in 0..9 {
                for c in 0..2 {
                    be[i][j][c] -= wd * psi[i] * g[j][c];
                }
            }
        }
    }
    let (np, nv) = (mesh.num_q1_nodes(), dofmap.n_v_full);
    let mut t = TripletBuilder::with_capacity(np, nv, mesh.num_cells() * 72);
    for cell in 0..mesh.num_cells() {
        let pn = mesh.q1_cell_nodes(cell);
        let vn = mesh.q2_cell_nodes(cell);
        for i in 0..4 {
            for j in 0..9 {
                for c in 0..2 {
                    t.push(pn[i], 2 * vn[j] + c, be[i][j][c]);
                }
            }
        }
    }
    let b_full = t.build().expect("in bounds");
    let rows: Vec<usize> = (0..np).collect();
    DivergenceOperator {
        b: b_full.submatrix(&rows, &dofmap.interior),
        b_full,
    }
}

/// `N(w)_{ij} = ((w . grad phi_j), phi_i)` on all Q2 unknowns.
fn convection_full(disc: &Discretization, wind: &[f64]) -> SparseMatrix {
    let mesh = &disc.mesh;
    let geo = Geometry::new(mesh, &disc.rule);
    let n = disc.dofmap.n_v_full;
    let mut t = TripletBuilder::with_capacity(n, n, mesh.num_cells() * 162);
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.q2_cell_nodes(cell);
        let mut e = [[0.0; 9]; 9];
        for q in 0..geo.len() {
            let (w, _) = geo.field_at(wind, &nodes, q);
            let (v, g, wd) = (&geo.values[q], &geo.grads[q], geo.wdet[q]);
            for j in 0..9 {
                let adv = wd * (w[0] * g[j][0] + w[1] * g[j][1]);
                for i in 0..9 {
                    e[i][j] += adv * v[i];
                }
            }
        }
        push_both_components(&mut t, &nodes, &e);
    }
    t.build().expect("in bounds")
}

/// `H(w)_{(i,c),(j,d)} = (phi_j d_d w_c, phi_i)` on all Q2 unknowns.
fn newton_full(disc: &Discretization, wind: &[f64]) -> SparseMatrix {
    let mesh = &disc.mesh;
    let geo = Geometry::new(mesh, &disc.rule);
    let n = disc.dofmap.n_v_full;
    let mut t = TripletBuilder::with_capacity(n, n, mesh.num_cells() * 324);
    for cell in 0..mesh.num_cells() {
        let nodes = mesh.q2_cell_nodes(cell);
        let mut e = [[[[0.0; 2]; 2]; 9]; 9];
        for q in 0..geo.len() {
            let (_, gw) = geo.field_at(wind, &nodes, q);
            let (v, wd) = (&geo.values[q], geo.wdet[q]);
            for i in 0..9 {
                for j in 0..9 {
                    let m = wd * v[i] * v[j];
                    for c in 0..2 {
                        for d in 0..2 {
                            e[i][j][c][d] += m * gw[c][d];
                        }
                    }
                }
            }
        }
        for i in 0..9 {
            for j in 0..9 {
                for c in 0..2 {
                    for d in 0..2 {
                        t.push(2 * nodes[i] + c, 2 * nodes[j] + d, e[i][j][c][d]);
                    }
                }
            }
        }
    }
    t.build().expect("in bounds")
}

/// Stabilization parameter and Peclet number of one patch, with the wind
/// taken at the patch centroid. The patch length along the wind is
/// `(|w_x| L + |w_y| L) / |w|` for a square patch of side `L`.
pub fn patch_delta(wind_at_centroid: [f64; 2], side: f64, nu: f64) -> (f64, f64) {
    let norm = wind_at_centroid[0].hypot(wind_at_centroid[1]);
    if norm <= 1e-12 {
        return (0.0, 0.0);
    }
    let h_m = (wind_at_centroid[0].abs() + wind_at_centroid[1].abs()) * side / norm;
    let pe = norm * h_m / (2.0 * nu);
    let delta = if pe > 1.0 {
        h_m / (2.0 * norm) * (1.0 - 1.0 / pe)
    } else {
        0.0
    };
    (delta, pe)
}

fn centroid_wind(wind: &[f64], node: usize) -> [f64; 2] {
    [wind[2 * node], wind[2 * node + 1]]
}

fn stabilization_info(disc: &Discretization, wind: &[f64], nu: f64) -> StabilizationInfo {
    let mut info = StabilizationInfo::default();
    for patch in &disc.patches.patches {
        let (d, pe) = patch_delta(centroid_wind(wind, patch.center_node), patch.extent[0], nu);
        info.delta.push(d);
        info.peclet.push(pe);
    }
    info
}

/// Local projection stabilization on the velocity space.
fn lps_velocity_full(disc: &Discretization, wind: &[f64], nu: f64) -> (SparseMatrix, StabilizationInfo) {
    let mesh = &disc.mesh;
    let geo = Geometry::new(mesh, &disc.rule);
    let nq = mesh.q2_per_dir();
    let npd = mesh.cells_per_dir / 2;
    let n = disc.dofmap.n_v_full;
    let info = stabilization_info(disc, wind, nu);
    let active = info.active_patches();
    let mut t = TripletBuilder::with_capacity(n, n, active * 25 * 25 * 2);

    for (pi, patch) in disc.patches.patches.iter().enumerate() {
        let delta = info.delta[pi];
        if delta == 0.0 {
            continue;
        }
        let (px, py) = (pi % npd, pi / npd);
        let global = |la: usize, lb: usize| (4 * py + lb) * nq + 4 * px + la;
        let mut a = [[0.0; 25]; 25];
        let mut g = [0.0; 25];
        for (ci, &cell) in patch.cells.iter().enumerate() {
            let (dx, dy) = (ci % 2, ci / 2);
            let nodes = mesh.q2_cell_nodes(cell);
            let local: [usize; 9] =
                std::array::from_fn(|k| (2 * dy + k / 3) * 5 + 2 * dx + k % 3);
            for q in 0..geo.len() {
                let (w, _) = geo.field_at(wind, &nodes, q);
                let wd = geo.wdet[q];
                let s: [f64; 9] =
                    std::array::from_fn(|k| w[0] * geo.grads[q][k][0] + w[1] * geo.grads[q][k][1]);
                for i in 0..9 {
                    g[local[i]] += wd * s[i];
                    for j in 0..9 {
                        a[local[i]][local[j]] += wd * s[i] * s[j];
                    }
                }
            }
        }
        let inv_measure = 1.0 / patch.measure;
        for i in 0..25 {
            let gi = global(i % 5, i / 5);
            for j in 0..25 {
                let v = delta * (a[i][j] - g[i] * g[j] * inv_measure);
                if v != 0.0 {
                    let gj = global(j % 5, j / 5);
                    t.push(2 * gi, 2 * gj, v);
                    t.push(2 * gi + 1, 2 * gj + 1, v);
                }
            }
        }
    }
    (t.build().expect("in bounds"), info)
}

/// `N_p(w)_{ij} = ((w . grad psi_j), psi_i)` on the Q1 space.
fn pressure_convection(disc: &Discretization, wind: &[f64]) -> SparseMatrix {
    let mesh = &disc.mesh;
    let geo = Geometry::new(mesh, &disc.rule);
    let n = disc.n_p();
    let mut t = TripletBuilder::with_capacity(n, n, mesh.num_cells() * 16);
    for cell in 0..mesh.num_cells() {
        let vn = mesh.q2_cell_nodes(cell);
        let pn = mesh.q1_cell_nodes(cell);
        let mut e = [[0.0; 4]; 4];
        for q in 0..geo.len() {
            let (w, _) = geo.field_at(wind, &vn, q);
            let (v, g, wd) = (&geo.p_values[q], &geo.p_grads[q], geo.wdet[q]);
            for j in 0..4 {
                let adv = wd * (w[0] * g[j][0] + w[1] * g[j][1]);
                for i in 0..4 {
                    e[i][j] += adv * v[i];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                t.push(pn[i], pn[j], e[i][j]);
            }
        }
    }
    t.build().expect("in bounds")
}

/// Local projection stabilization on the pressure space, with the same
/// patch parameters as the velocity space.
fn lps_pressure(disc: &Discretization, wind: &[f64], nu: f64) -> SparseMatrix {
    let mesh = &disc.mesh;
    let geo = Geometry::new(mesh, &disc.rule);
    let np1 = mesh.q1_per_dir();
    let npd = mesh.cells_per_dir / 2;
    let n = disc.n_p();
    let info = stabilization_info(disc, wind, nu);
    let mut t = TripletBuilder::with_capacity(n, n, info.active_patches() * 81);

    for (pi, patch) in disc.patches.patches.iter().enumerate() {
        let delta = info.delta[pi];
        if delta == 0.0 {
            continue;
        }
        let (px, py) = (pi % npd, pi / npd);
        let mut a = [[0.0; 9]; 9];
        let mut g = [0.0; 9];
        for (ci, &cell) in patch.cells.iter().enumerate() {
            let (dx, dy) = (ci % 2, ci / 2);
            let vn = mesh.q2_cell_nodes(cell);
            let local: [usize; 4] = std::array::from_fn(|k| (dy + k / 2) * 3 + dx + k % 2);
            for q in 0..geo.len() {
                let (w, _) = geo.field_at(wind, &vn, q);
                let wd = geo.wdet[q];
                let s: [f64; 4] = std::array::from_fn(|k| {
                    w[0] * geo.p_grads[q][k][0] + w[1] * geo.p_grads[q][k][1]
                });
                for i in 0..4 {
                    g[local[i]] += wd * s[i];
                    for j in 0..4 {
                        a[local[i]][local[j]] += wd * s[i] * s[j];
                    }
                }
            }
        }
        let inv_measure = 1.0 / patch.measure;
        for i in 0..9 {
            let gi = (2 * py + i / 3) * np1 + 2 * px + i % 3;
            for j in 0..9 {
                let gj = (2 * py + j / 3) * np1 + 2 * px + j % 3;
                t.push(gi, gj, delta * (a[i][j] - g[i] * g[j] * inv_measure));
            }
        }
    }
    t.build().expect("in bounds")
}
