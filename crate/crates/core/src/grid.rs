//! Uniform quadrilateral mesh of (-1,1)^2, Q2/Q1 degree-of-freedom maps,
//! quadrature tables and LPS macro-patches.
//!
//! Nodes are numbered lexicographically by (y, x). Velocity unknowns are
//! interleaved, so component `c` of Q2 node `k` is unknown `2k + c`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    pub level: u32,
    pub cells_per_dir: usize,
    /// Q1 mesh size `2^{1-l}`.
    pub h: f64,
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex indices of each cell, starting bottom-left.
    pub cells: Vec<[usize; 4]>,
}

impl Mesh {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Q2 nodes per direction.
    pub fn q2_per_dir(&self) -> usize {
        2 * self.cells_per_dir + 1
    }

    /// Q1 nodes per direction.
    pub fn q1_per_dir(&self) -> usize {
        self.cells_per_dir + 1
    }

    pub fn num_q2_nodes(&self) -> usize {
        self.q2_per_dir().pow(2)
    }

    pub fn num_q1_nodes(&self) -> usize {
        self.q1_per_dir().pow(2)
    }

    pub fn q2_coord(&self, node: usize) -> [f64; 2] {
        let nq = self.q2_per_dir();
        let (iy, ix) = (node / nq, node % nq);
        let s = 0.5 * self.h;
        [-1.0 + ix as f64 * s, -1.0 + iy as f64 * s]
    }

    pub fn q1_coord(&self, node: usize) -> [f64; 2] {
        self.vertices[node]
    }

    /// Cell index from its (x, y) position in the grid.
    pub fn cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.cells_per_dir + cx
    }

    /// Bottom-left corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        self.vertices[self.cells[cell][0]]
    }

    /// The nine Q2 nodes of a cell in local tensor order `b * 3 + a`.
    pub fn q2_cell_nodes(&self, cell: usize) -> [usize; 9] {
        let nc = self.cells_per_dir;
        let nq = self.q2_per_dir();
        let (cx, cy) = (cell % nc, cell / nc);
        let mut out = [0; 9];
        for b in 0..3 {
            for a in 0..3 {
                out[b * 3 + a] = (2 * cy + b) * nq + 2 * cx + a;
            }
        }
        out
    }

    /// The four Q1 nodes of a cell in local tensor order `b * 2 + a`.
    pub fn q1_cell_nodes(&self, cell: usize) -> [usize; 4] {
        let nc = self.cells_per_dir;
        let np = self.q1_per_dir();
        let (cx, cy) = (cell % nc, cell / nc);
        let mut out = [0; 4];
        for b in 0..2 {
            for a in 0..2 {
                out[b * 2 + a] = (cy + b) * np + cx + a;
            }
        }
        out
    }
}

pub fn build_mesh(level: u32) -> Result<Mesh> {
    if level < 1 || level > 12 {
        return Err(Error::InvalidLevel(level));
    }
    let nc = 1usize << level;
    let h = 2.0 / nc as f64;
    let np = nc + 1;
    let vertices = (0..np * np)
        .map(|k| {
            let (iy, ix) = (k / np, k % np);
            [-1.0 + ix as f64 * h, -1.0 + iy as f64 * h]
        })
        .collect();
    let cells = (0..nc * nc)
        .map(|c| {
            let (cx, cy) = (c % nc, c / nc);
            let v0 = cy * np + cx;
            [v0, v0 + 1, v0 + np + 1, v0 + np]
        })
        .collect();
    Ok(Mesh {
        level,
        cells_per_dir: nc,
        h,
        vertices,
        cells,
    })
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub level: u32,
    pub n_q2_nodes: usize,
    pub n_v_full: usize,
    /// Sorted full velocity indices on the boundary.
    pub boundary: Vec<usize>,
    /// Sorted full velocity indices in the interior.
    pub interior: Vec<usize>,
    /// Interior position of each full velocity index, `usize::MAX` on the boundary.
    pub full_to_interior: Vec<usize>,
    pub n_v_int: usize,
    pub n_p: usize,
}

impl DofMap {
    /// Dimension of the coupled system `[v; zeta; mu; p]`.
    pub fn coupled_dim(&self) -> usize {
        2 * self.n_v_int + 2 * self.n_p
    }

    /// Restricts a full velocity vector to its interior entries.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| full[i]).collect()
    }

    /// Scatters interior entries into a full vector whose boundary entries
    /// are taken from `boundary_values`.
    pub fn extend(&self, interior: &[f64], boundary_values: &[f64]) -> Vec<f64> {
        let mut full = boundary_values.to_vec();
        for (k, &i) in self.interior.iter().enumerate() {
            full[i] = interior[k];
        }
        full
    }

    pub fn extend_zero(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_v_full];
        for (k, &i) in self.interior.iter().enumerate() {
            full[i] = interior[k];
        }
        full
    }
}

pub fn build_dofmap(mesh: &Mesh) -> DofMap {
    let nq = mesh.q2_per_dir();
    let n_nodes = nq * nq;
    let n_v_full = 2 * n_nodes;
    let mut boundary = Vec::new();
    let mut interior = Vec::new();
    let mut full_to_interior = vec![usize::MAX; n_v_full];
    for node in 0..n_nodes {
        let (iy, ix) = (node / nq, node % nq);
        let on_boundary = ix == 0 || iy == 0 || ix == nq - 1 || iy == nq - 1;
        for c in 0..2 {
            let dof = 2 * node + c;
            if on_boundary {
                boundary.push(dof);
            } else {
                full_to_interior[dof] = interior.len();
                interior.push(dof);
            }
        }
    }
    DofMap {
        level: mesh.level,
        n_q2_nodes: n_nodes,
        n_v_full,
        n_v_int: interior.len(),
        boundary,
        interior,
        full_to_interior,
        n_p: mesh.num_q1_nodes(),
    }
}

/// Closed-form coupled dimension at level `l`.
pub fn coupled_dof_count(level: u32) -> usize {
    let nq = (1usize << (level + 1)) + 1;
    let np = (1usize << level) + 1;
    let n_v_int = 2 * (nq * nq - 4 * (nq - 1));
    2 * n_v_int + 2 * np * np
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub cells: [usize; 4],
    pub measure: f64,
    pub centroid: [f64; 2],
    /// Q2 node at the centroid (shared vertex of the four cells).
    pub center_node: usize,
    /// Side lengths in x and y.
    pub extent: [f64; 2],
}

/// Disjoint 2x2 macro-patches covering the mesh.
#[derive(Debug, Clone)]
pub struct PatchPartition {
    pub patches: Vec<Patch>,
    /// Patch owning each cell.
    pub cell_patch: Vec<usize>,
}

pub fn build_patches(mesh: &Mesh) -> PatchPartition {
    let nc = mesh.cells_per_dir;
    let npd = nc / 2;
    let nq = mesh.q2_per_dir();
    let mut patches = Vec::with_capacity(npd * npd);
    let mut cell_patch = vec![0; mesh.num_cells()];
    for py in 0..npd {
        for px in 0..npd {
            let cells = [
                mesh.cell_index(2 * px, 2 * py),
                mesh.cell_index(2 * px + 1, 2 * py),
                mesh.cell_index(2 * px, 2 * py + 1),
                mesh.cell_index(2 * px + 1, 2 * py + 1),
            ];
            for &c in &cells {
                cell_patch[c] = patches.len();
            }
            let side = 2.0 * mesh.h;
            let o = mesh.cell_origin(cells[0]);
            patches.push(Patch {
                cells,
                measure: side * side,
                centroid: [o[0] + mesh.h, o[1] + mesh.h],
                center_node: (4 * py + 2) * nq + 4 * px + 2,
                extent: [side, side],
            });
        }
    }
    PatchPartition { patches, cell_patch }
}

/// Tensor Gauss rule on the reference square with tabulated Q2 and Q1
/// shape functions.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub order: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub q2_values: Vec<[f64; 9]>,
    pub q2_grads: Vec<[[f64; 2]; 9]>,
    pub q1_values: Vec<[f64; 4]>,
    pub q1_grads: Vec<[[f64; 2]; 4]>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn gauss_1d(n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    match n {
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            Some((vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]))
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt() * 2.0 / 7.0;
            let (a, b) = ((3.0 / 7.0 - s).sqrt(), (3.0 / 7.0 + s).sqrt());
            let wa = (18.0 + 30.0f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0f64.sqrt()) / 36.0;
            Some((vec![-b, -a, a, b], vec![wb, wa, wa, wb]))
        }
        5 => {
            let s = 2.0 * (10.0f64 / 7.0).sqrt();
            let (a, b) = ((5.0 - s).sqrt() / 3.0, (5.0 + s).sqrt() / 3.0);
            let w0 = 128.0 / 225.0;
            let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
            Some((vec![-b, -a, 0.0, a, b], vec![wb, wa, w0, wa, wb]))
        }
        _ => None,
    }
}

pub fn q2_1d(x: f64) -> [f64; 3] {
    [0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)]
}

pub fn q2_1d_deriv(x: f64) -> [f64; 3] {
    [x - 0.5, -2.0 * x, x + 0.5]
}

pub fn q1_1d(x: f64) -> [f64; 2] {
    [0.5 * (1.0 - x), 0.5 * (1.0 + x)]
}

pub fn q1_1d_deriv(_x: f64) -> [f64; 2] {
    [-0.5, 0.5]
}

/// Q2 shape values and reference gradients at a point of [-1,1]^2.
pub fn q2_shape(p: [f64; 2]) -> ([f64; 9], [[f64; 2]; 9]) {
    let (vx, vy) = (q2_1d(p[0]), q2_1d(p[1]));
    let (dx, dy) = (q2_1d_deriv(p[0]), q2_1d_deriv(p[1]));
    let mut val = [0.0; 9];
    let mut grad = [[0.0; 2]; 9];
    for b in 0..3 {
        for a in 0..3 {
            val[b * 3 + a] = vx[a] * vy[b];
            grad[b * 3 + a] = [dx[a] * vy[b], vx[a] * dy[b]];
        }
    }
    (val, grad)
}

/// Q1 shape values and reference gradients at a point of [-1,1]^2.
pub fn q1_shape(p: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let (vx, vy) = (q1_1d(p[0]), q1_1d(p[1]));
    let (dx, dy) = (q1_1d_deriv(p[0]), q1_1d_deriv(p[1]));
    let mut val = [0.0; 4];
    let mut grad = [[0.0; 2]; 4];
    for b in 0..2 {
        for a in 0..2 {
            val[b * 2 + a] = vx[a] * vy[b];
            grad[b * 2 + a] = [dx[a] * vy[b], vx[a] * dy[b]];
        }
    }
    (val, grad)
}

pub fn tabulate(order: usize) -> Result<QuadratureRule> {
    let (x, w) = gauss_1d(order).ok_or_else(|| {
        Error::Config(format!("unsupported quadrature order {order}; supported: 3, 4, 5"))
    })?;
    let mut rule = QuadratureRule {
        order,
        points: Vec::new(),
        weights: Vec::new(),
        q2_values: Vec::new(),
        q2_grads: Vec::new(),
        q1_values: Vec::new(),
        q1_grads: Vec::new(),
    };
    for (j, &yj) in x.iter().enumerate() {
        for (i, &xi) in x.iter().enumerate() {
            let p = [xi, yj];
            rule.points.push(p);
            rule.weights.push(w[i] * w[j]);
            let (v2, g2) = q2_shape(p);
            let (v1, g1) = q1_shape(p);
            rule.q2_values.push(v2);
            rule.q2_grads.push(g2);
            rule.q1_values.push(v1);
            rule.q1_grads.push(g1);
        }
    }
    Ok(rule)
}

/// Scalar Q2 mass matrix of the reference cell.
pub fn reference_q2_mass() -> DMatrix<f64> {
    let rule = tabulate(3).expect("order 3 is supported");
    let mut m = DMatrix::zeros(9, 9);
    for q in 0..rule.len() {
        let v = &rule.q2_values[q];
        for i in 0..9 {
            for j in 0..9 {
                m[(i, j)] += rule.weights[q] * v[i] * v[j];
            }
        }
    }
    m
}

/// Scalar Q1 mass matrix of the reference cell.
pub fn reference_q1_mass() -> DMatrix<f64> {
    let rule = tabulate(3).expect("order 3 is supported");
    let mut m = DMatrix::zeros(4, 4);
    for q in 0..rule.len() {
        let v = &rule.q1_values[q];
        for i in 0..4 {
            for j in 0..4 {
                m[(i, j)] += rule.weights[q] * v[i] * v[j];
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_one_counts() {
        let m = build_mesh(1).unwrap();
        assert_eq!(m.num_cells(), 4);
        assert_eq!(m.num_q2_nodes(), 25);
        assert_eq!(m.num_q1_nodes(), 9);
    }

    #[test]
    fn level_three_and_four_counts() {
        let m = build_mesh(3).unwrap();
        assert_eq!((m.num_cells(), m.num_q2_nodes(), m.num_q1_nodes()), (64, 289, 81));
        let m = build_mesh(4).unwrap();
        assert_eq!((m.num_cells(), m.num_q2_nodes(), m.num_q1_nodes()), (256, 1089, 289));
    }

    #[test]
    fn level_zero_is_rejected() {
        assert!(matches!(build_mesh(0), Err(Error::InvalidLevel(0))));
    }

    #[test]
    fn dofmap_counts() {
        for l in 1..=6 {
            let m = build_mesh(l).unwrap();
            let d = build_dofmap(&m);
            let nq = (1usize << (l + 1)) + 1;
            assert_eq!(d.n_v_int, 2 * (nq * nq - 4 * (nq - 1)));
            assert_eq!(d.boundary.len(), 2 * 4 * (1usize << (l + 1)));
            assert_eq!(d.coupled_dim(), coupled_dof_count(l));
        }
    }

    #[test]
    fn patches_at_level_three() {
        let m = build_mesh(3).unwrap();
        let p = build_patches(&m);
        assert_eq!(p.patches.len(), 16);
        assert!((p.patches[0].measure - 0.25).abs() < 1e-15);
        let mut seen = vec![0; m.num_cells()];
        for patch in &p.patches {
            for &c in &patch.cells {
                seen[c] += 1;
            }
            let xy = m.q2_coord(patch.center_node);
            assert!((xy[0] - patch.centroid[0]).abs() < 1e-15);
            assert!((xy[1] - patch.centroid[1]).abs() < 1e-15);
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn quadrature_weights_and_center_values() {
        for order in 3..=5 {
            let r = tabulate(order).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 4.0).abs() < 1e-14);
        }
        let (v, _) = q1_shape([0.0, 0.0]);
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(tabulate(2).is_err());
    }

    #[test]
    fn reference_mass_spectra() {
        use crate::chebyshev::scaled_spectrum;
        let (lo, hi) = scaled_spectrum(&reference_q2_mass());
        assert!((lo - 0.25).abs() < 1e-12 && (hi - 25.0 / 16.0).abs() < 1e-12, "{lo} {hi}");
        let (lo, hi) = scaled_spectrum(&reference_q1_mass());
        assert!((lo - 0.25).abs() < 1e-12 && (hi - 2.25).abs() < 1e-12, "{lo} {hi}");
    }
}
