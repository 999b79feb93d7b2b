//! Sparse direct factorization.
//!
//! Thin wrapper around faer's sparse LU (COLAMD column ordering, partial
//! pivoting). Structural singularity is reported by faer; numerical
//! singularity is detected by a probe solve after factorization.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, MatMut};

use crate::error::{Error, Result};
use crate::sparse::{norm2, SparseMatrix};

/// Relative probe residual above which a factorization is declared singular.
const PROBE_TOL: f64 = 1e-6;

pub struct Factorization {
    n: usize,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.n).finish()
    }
}

/// Name of the fill-reducing ordering, for run metadata.
pub const ORDERING: &str = "colamd";

impl Factorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let (n, m) = a.shape();
        if n != m {
            return Err(Error::Dimension(format!("cannot factorize a {n}x{m} matrix")));
        }
        // CSR of A^T read as CSC is A.
        let at = a.transpose();
        let sym = SymbolicSparseColMat::<usize>::new_checked(
            n,
            n,
            at.indptr().to_vec(),
            None,
            at.indices().to_vec(),
        );
        let mat = SparseColMat::<usize, f64>::new(sym, at.data().to_vec());
        let lu = match mat.as_ref().sp_lu() {
            Ok(lu) => lu,
            Err(LuError::SymbolicSingular { index }) => {
                return Err(Error::Singular { pivot: Some(index) })
            }
            Err(LuError::Generic(e)) => return Err(Error::Assembly(format!("{e:?}"))),
        };
        let fac = Self { n, lu };

        if n > 0 {
            let b: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (i as f64).sin()).collect();
            let x = fac.solve(&b);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular { pivot: None });
            }
            let mut r = a.matvec(&x);
            r.iter_mut().zip(&b).for_each(|(ri, bi)| *ri -= bi);
            if norm2(&r) > PROBE_TOL * norm2(&b) {
                return Err(Error::Singular { pivot: None });
            }
        }
        Ok(fac)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let mut m = MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.lu.solve_in_place_with_conj(Conj::No, m.as_mut());
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `A^T x = b` with the same factors.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let mut m = MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.lu.solve_transpose_in_place_with_conj(Conj::No, m.as_mut());
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }

    /// Solves for several right-hand sides stored as columns.
    pub fn solve_columns(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if cols.is_empty() {
            return Vec::new();
        }
        let mut m = Mat::<f64>::from_fn(self.n, cols.len(), |i, j| cols[j][i]);
        self.lu.solve_in_place_with_conj(Conj::No, m.as_mut());
        (0..cols.len())
            .map(|j| (0..self.n).map(|i| m[(i, j)]).collect())
            .collect()
    }
}

/// Factorization of a matrix with a one-dimensional constant nullspace.
///
/// The first unknown is pinned: row and column 0 are replaced by the unit
/// vector. Right-hand sides are projected to zero mean before the solve and
/// the solution mean is removed after it.
#[derive(Debug)]
pub struct PinnedFactorization {
    fac: Factorization,
}

impl PinnedFactorization {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        Ok(Self {
            fac: Factorization::new(&pin_first(a))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.fac.dim()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        remove_mean(b);
        b[0] = 0.0;
        self.fac.solve_in_place(b);
        remove_mean(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Replaces row and column 0 by the first unit vector.
pub fn pin_first(a: &SparseMatrix) -> SparseMatrix {
    let n = a.nrows();
    let mut rows = Vec::with_capacity(a.nnz());
    let mut cols = Vec::with_capacity(a.nnz());
    let mut vals = Vec::with_capacity(a.nnz());
    for (i, j, v) in a.iter() {
        if i != 0 && j != 0 {
            rows.push(i);
            cols.push(j);
            vals.push(v);
        }
    }
    if n > 0 {
        rows.push(0);
        cols.push(0);
        vals.push(1.0);
    }
    SparseMatrix::from_triplets(&rows, &cols, &vals, a.shape()).expect("same shape")
}

pub fn remove_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}
