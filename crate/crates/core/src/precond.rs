//! Block preconditioners for the step system.
//!
//! The outer operator is upper block-triangular over the pressure pair,
//! with either the augmented Lagrangian or the block pressure
//! convection-diffusion Schur approximation. Its momentum block is
//! inverted by a few GMRES iterations preconditioned with a lower
//! block-triangular matrix built from a mass solve and the matching
//! Schur approximation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{ChebyshevMassSolver, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::factor::{Factorization, PinnedFactorization};
use crate::kkt::{Approach, KktSystem};
use crate::krylov::{gmres, KrylovConfig, Preconditioner};
use crate::sparse::SparseMatrix;

/// Jacobi-scaled spectral bounds of the element mass matrices.
pub const Q2_MASS_INTERVAL: (f64, f64) = (0.25, 25.0 / 16.0);
pub const Q1_MASS_INTERVAL: (f64, f64) = (0.25, 2.25);

pub const DEFAULT_INNER_ITERS: usize = 5;

/// Largest system the ideal preconditioners will assemble a dense Schur
/// complement for.
pub const IDEAL_MAX_DIM: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterKind {
    Al,
    Bpcd,
    Ideal,
}

impl std::fmt::Display for OuterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OuterKind::Al => "al",
            OuterKind::Bpcd => "bpcd",
            OuterKind::Ideal => "ideal",
        })
    }
}

impl std::str::FromStr for OuterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "al" => Ok(OuterKind::Al),
            "bpcd" => Ok(OuterKind::Bpcd),
            "ideal" => Ok(OuterKind::Ideal),
            _ => Err(Error::Config(format!(
                "unknown preconditioner '{s}' (expected al, bpcd or ideal)"
            ))),
        }
    }
}

/// Either a fixed Chebyshev iteration or a sparse LU.
#[derive(Debug)]
pub enum MassSolve {
    Chebyshev(ChebyshevMassSolver),
    Direct(Factorization),
}

impl MassSolve {
    pub fn chebyshev(m: &SparseMatrix, interval: (f64, f64), steps: usize) -> Result<Self> {
        Ok(MassSolve::Chebyshev(ChebyshevMassSolver::new(m.clone(), interval, steps)?))
    }

    pub fn direct(m: &SparseMatrix) -> Result<Self> {
        Ok(MassSolve::Direct(Factorization::new(m)?))
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        match self {
            MassSolve::Chebyshev(c) => c.solve_into(b, x),
            MassSolve::Direct(f) => {
                x.copy_from_slice(b);
                f.solve_in_place(x);
            }
        }
    }
}

/// `S~ = (Psi2 + Lambda) Phi^{-1} (Psi1 + Lambda)^T` with `Lambda = M / sqrt(beta)`.
#[derive(Debug)]
pub struct MatchingSchur {
    /// `Phi21 + Lambda`
    lower: Factorization,
    /// `Phi12 + Lambda`; `None` when it is the transpose of `lower`.
    upper: Option<Factorization>,
    phi: SparseMatrix,
}

impl MatchingSchur {
    pub fn new(
        phi12: &SparseMatrix,
        phi21: &SparseMatrix,
        m: &SparseMatrix,
        beta: f64,
        symmetric: bool,
    ) -> Result<Self> {
        let s = 1.0 / beta.sqrt();
        let lower = Factorization::new(&phi21.add_scaled(1.0, m, s)?)?;
        let upper = if symmetric {
            None
        } else {
            Some(Factorization::new(&phi12.add_scaled(1.0, m, s)?)?)
        };
        Ok(Self {
            lower,
            upper,
            phi: m.clone(),
        })
    }

    pub fn from_system(sys: &KktSystem) -> Result<Self> {
        Self::new(
            &sys.phi12,
            &sys.phi21,
            &sys.m,
            sys.beta,
            sys.approach == Approach::Dto,
        )
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    /// `y = S~^{-1} r`
    pub fn apply(&self, r: &[f64], y: &mut [f64]) {
        let mut t = r.to_vec();
        self.lower.solve_in_place(&mut t);
        self.phi.matvec_into(&t, y);
        match &self.upper {
            Some(f) => f.solve_in_place(y),
            None => self.lower.solve_transpose_in_place(y),
        }
    }
}

/// Lower block-triangular preconditioner for the momentum block.
#[derive(Debug)]
pub struct InnerP1 {
    mass: MassSolve,
    matching: MatchingSchur,
    phi21: SparseMatrix,
}

impl InnerP1 {
    pub fn new(sys: &KktSystem, exact_blocks: bool, cheb_steps: usize) -> Result<Self> {
        let mass = if exact_blocks {
            MassSolve::direct(&sys.m)?
        } else {
            MassSolve::chebyshev(&sys.m, Q2_MASS_INTERVAL, cheb_steps)?
        };
        Ok(Self {
            mass,
            matching: MatchingSchur::from_system(sys)?,
            phi21: sys.phi21.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.phi21.nrows()
    }

    pub fn apply(&self, b: &[f64], y: &mut [f64]) {
        let nv = self.phi21.nrows();
        let (b1, b2) = b.split_at(nv);
        let (y1, y2) = y.split_at_mut(nv);
        self.mass.solve_into(b1, y1);
        let mut t = self.phi21.matvec(y1);
        for (ti, bi) in t.iter_mut().zip(b2) {
            *ti -= bi;
        }
        self.matching.apply(&t, y2);
    }
}

impl Preconditioner for &InnerP1 {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        InnerP1::apply(self, x, y)
    }
}

/// `[Kp^{-1} r1 + gamma W^{-1} r2; gamma W^{-1} r1 - Kp^{-1} r2 / beta]`
#[derive(Debug)]
pub struct AlOuterSchur {
    kp: PinnedFactorization,
    inv_w: Vec<f64>,
    gamma: f64,
    beta: f64,
}

impl AlOuterSchur {
    pub fn new(kp: &SparseMatrix, w_diag: &[f64], gamma: f64, beta: f64) -> Result<Self> {
        if let Some(i) = w_diag.iter().position(|&w| !(w > 0.0)) {
            return Err(Error::Parameter(format!("weight {i} is not positive")));
        }
        Ok(Self {
            kp: PinnedFactorization::new(kp)?,
            inv_w: w_diag.iter().map(|w| 1.0 / w).collect(),
            gamma,
            beta,
        })
    }

    pub fn from_system(sys: &KktSystem) -> Result<Self> {
        Self::new(&sys.pressure.kp, &sys.w_diag, sys.gamma, sys.beta)
    }

    pub fn apply(&self, r: &[f64], y: &mut [f64]) {
        let np = self.inv_w.len();
        let (r1, r2) = r.split_at(np);
        let k1 = self.kp.solve(r1);
        let k2 = self.kp.solve(r2);
        let (y1, y2) = y.split_at_mut(np);
        for i in 0..np {
            let g = self.gamma * self.inv_w[i];
            y1[i] = k1[i] + g * r2[i];
            y2[i] = g * r1[i] - k2[i] / self.beta;
        }
    }
}

/// `Mp^{-1} D_p Kp^{-1}` on the pressure pair.
#[derive(Debug)]
pub struct BpcdOuterSchur {
    kp: PinnedFactorization,
    mp: MassSolve,
    dp: SparseMatrix,
}

impl BpcdOuterSchur {
    pub fn from_system(sys: &KktSystem, exact_blocks: bool, cheb_steps: usize) -> Result<Self> {
        let pr = &sys.pressure;
        let nu = sys.nu;
        let forward = pr.kp.scaled(nu).add(&pr.np)?.add(&pr.wp)?;
        let backward = match sys.approach {
            Approach::Otd => pr.kp.scaled(nu).add_scaled(1.0, &pr.np, -1.0)?.add(&pr.wp)?,
            Approach::Dto => forward.transpose(),
        };
        let theta = pr.mp.scaled(-1.0 / sys.beta);
        let dp = SparseMatrix::from_blocks(&[
            vec![Some(&pr.mp), Some(&backward)],
            vec![Some(&forward), Some(&theta)],
        ])?;
        let mp = if exact_blocks {
            MassSolve::direct(&pr.mp)?
        } else {
            MassSolve::chebyshev(&pr.mp, Q1_MASS_INTERVAL, cheb_steps)?
        };
        Ok(Self {
            kp: PinnedFactorization::new(&pr.kp)?,
            mp,
            dp,
        })
    }

    pub fn pressure_operator(&self) -> &SparseMatrix {
        &self.dp
    }

    pub fn apply(&self, r: &[f64], y: &mut [f64]) {
        let np = r.len() / 2;
        let mut k = Vec::with_capacity(2 * np);
        k.extend(self.kp.solve(&r[..np]));
        k.extend(self.kp.solve(&r[np..]));
        let d = self.dp.matvec(&k);
        let (y1, y2) = y.split_at_mut(np);
        self.mp.solve_into(&d[..np], y1);
        self.mp.solve_into(&d[np..], y2);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    P1,
    P2,
}

/// A 2x2 block matrix `[[A11, A12], [A21, A22]]`.
#[derive(Debug, Clone)]
pub struct SaddlePoint {
    pub a11: SparseMatrix,
    pub a12: SparseMatrix,
    pub a21: SparseMatrix,
    pub a22: SparseMatrix,
}

impl SaddlePoint {
    /// The momentum block of a step system.
    pub fn momentum(sys: &KktSystem) -> Self {
        Self {
            a11: sys.phi11.clone(),
            a12: sys.phi12.clone(),
            a21: sys.phi21.clone(),
            a22: sys.theta_block(),
        }
    }

    /// The full step system with one pressure unknown of each block
    /// removed, so that the Schur complement is invertible.
    pub fn pinned_outer(sys: &KktSystem) -> Self {
        let keep: Vec<usize> = (1..sys.n_p).collect();
        let b = sys.b.submatrix(&keep, &(0..sys.n_v).collect::<Vec<_>>());
        let c = SparseMatrix::from_blocks(&[vec![Some(&b), None], vec![None, Some(&b)]])
            .expect("consistent blocks");
        let np = c.nrows();
        Self {
            a11: sys.momentum_matrix(),
            a12: c.transpose(),
            a21: c,
            a22: SparseMatrix::zeros(np, np),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a11.nrows(), self.a22.nrows())
    }

    pub fn dim(&self) -> usize {
        self.a11.nrows() + self.a22.nrows()
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        SparseMatrix::from_blocks(&[
            vec![Some(&self.a11), Some(&self.a12)],
            vec![Some(&self.a21), Some(&self.a22)],
        ])
        .expect("consistent blocks")
    }

    /// `S = A21 A11^{-1} A12 - A22`, densely.
    pub fn dense_schur(&self, a11: &Factorization) -> DMatrix<f64> {
        let (n1, n2) = self.dims();
        let cols: Vec<Vec<f64>> = {
            let t = self.a12.transpose();
            (0..n2)
                .map(|j| {
                    let mut c = vec![0.0; n1];
                    let (idx, val) = t.row(j);
                    for (&i, &v) in idx.iter().zip(val) {
                        c[i] = v;
                    }
                    c
                })
                .collect()
        };
        let x = a11.solve_columns(&cols);
        let mut s = -self.a22.to_dense();
        for (j, xj) in x.iter().enumerate() {
            let col = self.a21.matvec(xj);
            for i in 0..n2 {
                s[(i, j)] += col[i];
            }
        }
        s
    }
}

/// Exact block-triangular preconditioner with a dense Schur complement.
#[derive(Debug)]
pub struct IdealPreconditioner {
    side: Side,
    n1: usize,
    a11: Factorization,
    schur: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    a12: SparseMatrix,
    a21: SparseMatrix,
}

impl IdealPreconditioner {
    pub fn new(sp: &SaddlePoint, side: Side) -> Result<Self> {
        if sp.dim() > IDEAL_MAX_DIM {
            return Err(Error::Config(format!(
                "ideal preconditioner refused for dimension {} (limit {IDEAL_MAX_DIM})",
                sp.dim()
            )));
        }
        let a11 = Factorization::new(&sp.a11)?;
        let s = sp.dense_schur(&a11);
        let lu = s.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular { pivot: None });
        }
        Ok(Self {
            side,
            n1: sp.a11.nrows(),
            a11,
            schur: lu,
            a12: sp.a12.clone(),
            a21: sp.a21.clone(),
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    fn schur_solve(&self, r: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(r);
        self.schur.solve(&v).expect("invertible Schur complement").as_slice().to_vec()
    }

    pub fn apply(&self, b: &[f64], y: &mut [f64]) {
        let (b1, b2) = b.split_at(self.n1);
        let (y1, y2) = y.split_at_mut(self.n1);
        match self.side {
            Side::P1 => {
                y1.copy_from_slice(b1);
                self.a11.solve_in_place(y1);
                let mut t = self.a21.matvec(y1);
                for (ti, bi) in t.iter_mut().zip(b2) {
                    *ti -= bi;
                }
                y2.copy_from_slice(&self.schur_solve(&t));
            }
            Side::P2 => {
                let s = self.schur_solve(b2);
                for (yi, si) in y2.iter_mut().zip(&s) {
                    *yi = -si;
                }
                y1.copy_from_slice(b1);
                self.a12.matvec_add(-1.0, y2, y1);
                self.a11.solve_in_place(y1);
            }
        }
    }
}

impl Preconditioner for IdealPreconditioner {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        IdealPreconditioner::apply(self, x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub outer: OuterKind,
    pub inner_iters: usize,
    pub cheb_steps: usize,
    /// Direct mass solves in place of Chebyshev.
    pub exact_blocks: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            outer: OuterKind::Al,
            inner_iters: DEFAULT_INNER_ITERS,
            cheb_steps: DEFAULT_STEPS,
            exact_blocks: false,
        }
    }
}

impl StackConfig {
    pub fn new(outer: OuterKind) -> Self {
        Self {
            outer,
            ..Self::default()
        }
    }
}

#[derive(Debug)]
enum Outer {
    Al(AlOuterSchur, InnerP1),
    Bpcd(BpcdOuterSchur, InnerP1),
    Ideal(IdealPreconditioner, Vec<usize>),
}

/// The nested preconditioner used inside flexible GMRES.
#[derive(Debug)]
pub struct PrecondStack<'a> {
    sys: &'a KktSystem,
    cfg: StackConfig,
    outer: Outer,
    applications: usize,
    inner_iterations: usize,
}

impl<'a> PrecondStack<'a> {
    pub fn new(sys: &'a KktSystem, cfg: StackConfig) -> Result<Self> {
        if cfg.inner_iters == 0 {
            return Err(Error::Config("inner iteration count must be positive".into()));
        }
        let outer = match cfg.outer {
            OuterKind::Al => {
                if !sys.augmented || sys.gamma == 0.0 {
                    log::warn!("augmented Lagrangian preconditioner on an unaugmented system");
                }
                Outer::Al(
                    AlOuterSchur::from_system(sys)?,
                    InnerP1::new(sys, cfg.exact_blocks, cfg.cheb_steps)?,
                )
            }
            OuterKind::Bpcd => Outer::Bpcd(
                BpcdOuterSchur::from_system(sys, cfg.exact_blocks, cfg.cheb_steps)?,
                InnerP1::new(sys, cfg.exact_blocks, cfg.cheb_steps)?,
            ),
            OuterKind::Ideal => Outer::Ideal(
                IdealPreconditioner::new(&SaddlePoint::pinned_outer(sys), Side::P2)?,
                sys.pinned_indices(),
            ),
        };
        Ok(Self {
            sys,
            cfg,
            outer,
            applications: 0,
            inner_iterations: 0,
        })
    }

    pub fn config(&self) -> &StackConfig {
        &self.cfg
    }

    pub fn applications(&self) -> usize {
        self.applications
    }

    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations
    }

    /// The momentum preconditioner, absent for the ideal stack.
    pub fn inner(&self) -> Option<&InnerP1> {
        match &self.outer {
            Outer::Al(_, p) | Outer::Bpcd(_, p) => Some(p),
            Outer::Ideal(..) => None,
        }
    }

    /// Applies the outer Schur approximation to a pressure pair.
    pub fn apply_schur(&self, r: &[f64], y: &mut [f64]) {
        match &self.outer {
            Outer::Al(s, _) => s.apply(r, y),
            Outer::Bpcd(s, _) => s.apply(r, y),
            Outer::Ideal(..) => panic!("ideal stack has no separate Schur approximation"),
        }
    }

    pub fn apply(&mut self, b: &[f64], y: &mut [f64]) -> Result<()> {
        let sys = self.sys;
        let nm = 2 * sys.n_v;
        self.applications += 1;
        let inner = match &self.outer {
            Outer::Ideal(p, keep) => {
                let bk: Vec<f64> = keep.iter().map(|&i| b[i]).collect();
                let mut yk = vec![0.0; keep.len()];
                p.apply(&bk, &mut yk);
                y.iter_mut().for_each(|v| *v = 0.0);
                for (k, &i) in keep.iter().enumerate() {
                    y[i] = yk[k];
                }
                return Ok(());
            }
            Outer::Al(s, p) => {
                s.apply(&b[nm..], &mut y[nm..]);
                p
            }
            Outer::Bpcd(s, p) => {
                s.apply(&b[nm..], &mut y[nm..]);
                p
            }
        };
        let (ym, yp) = y.split_at_mut(nm);
        for v in yp.iter_mut() {
            *v = -*v;
        }
        let mut rhs = b[..nm].to_vec();
        sys.constraint_transpose_add(-1.0, yp, &mut rhs);
        ym.iter_mut().for_each(|v| *v = 0.0);
        let op = |x: &[f64], out: &mut [f64]| sys.apply_momentum(x, out);
        let mut pc = inner;
        let stats = gmres(&op, &mut pc, &rhs, ym, &KrylovConfig::fixed(self.cfg.inner_iters))?;
        self.inner_iterations += stats.iterations;
        Ok(())
    }
}

impl Preconditioner for PrecondStack<'_> {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        PrecondStack::apply(self, x, y).expect("inner solve configuration was validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::{build_kkt, KktParams, Model, StateIterate};
    use crate::krylov::fgmres;
    use crate::operators::{cavity_lid, lift_boundary, Discretization};
    use crate::sparse::norm2;

    fn system(level: u32, params: &KktParams, model: Model) -> (Discretization, KktSystem) {
        let disc = Discretization::new(level).unwrap();
        let mut s = StateIterate::from_lift(&disc, lift_boundary(&disc, cavity_lid));
        let n = 2 * disc.n_v() + 2 * disc.n_p();
        let d: Vec<f64> = (0..n).map(|i| 0.2 * ((i % 11) as f64 * 0.7).sin()).collect();
        s.update(&disc, &d);
        let sys = build_kkt(&disc, &s, params, model).unwrap();
        (disc, sys)
    }

    fn test_vec(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 0.913).sin()).collect()
    }

    #[test]
    fn outer_kind_parses() {
        assert_eq!("AL".parse::<OuterKind>().unwrap(), OuterKind::Al);
        assert_eq!(OuterKind::Bpcd.to_string(), "bpcd");
        assert!("amg".parse::<OuterKind>().is_err());
    }

    #[test]
    fn ideal_preconditioners_converge_in_two_steps() {
        let p = KktParams::new(0.01, 1e-2);
        let (_, sys) = system(2, &p, Model::NavierStokes);
        let sp = SaddlePoint::pinned_outer(&sys);
        let a = sp.to_sparse();
        let b = test_vec(sp.dim(), 1.0);
        let mut sols = Vec::new();
        for side in [Side::P1, Side::P2] {
            let mut pc = IdealPreconditioner::new(&sp, side).unwrap();
            let mut x = vec![0.0; sp.dim()];
            let cfg = KrylovConfig {
                rtol: 1e-10,
                ..KrylovConfig::default()
            };
            let st = gmres(&a, &mut pc, &b, &mut x, &cfg).unwrap();
            assert!(st.converged && st.iterations <= 2, "{side:?}: {st:?}");
            sols.push(x);
        }
        let d: Vec<f64> = sols[0].iter().zip(&sols[1]).map(|(a, b)| a - b).collect();
        assert!(norm2(&d) < 1e-8 * norm2(&sols[0]));
    }

    #[test]
    fn ideal_guard_refuses_large_systems() {
        let disc = Discretization::new(7).unwrap();
        let n = disc.n_v();
        let sp = SaddlePoint {
            a11: SparseMatrix::identity(n),
            a12: SparseMatrix::zeros(n, n),
            a21: SparseMatrix::zeros(n, n),
            a22: SparseMatrix::identity(n),
        };
        assert!(matches!(IdealPreconditioner::new(&sp, Side::P1), Err(Error::Config(_))));
    }

    #[test]
    fn matching_inverts_its_own_product() {
        let mut p = KktParams::new(0.01, 1e-3);
        p.augment = false;
        let (_, sys) = system(2, &p, Model::NavierStokes);
        let ms = MatchingSchur::from_system(&sys).unwrap();
        let s = 1.0 / p.beta.sqrt();
        let lower = sys.phi21.add_scaled(1.0, &sys.m, s).unwrap();
        let upper = sys.phi12.add_scaled(1.0, &sys.m, s).unwrap();
        let mfac = Factorization::new(&sys.m).unwrap();
        let x = test_vec(sys.n_v, 3.0);
        let sx = lower.matvec(&mfac.solve(&upper.matvec(&x)));
        let mut y = vec![0.0; sys.n_v];
        ms.apply(&sx, &mut y);
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert!(norm2(&d) < 1e-10 * norm2(&x));
    }

    #[test]
    fn inner_p1_is_linear_and_zero_preserving() {
        let p = KktParams::new(0.01, 1e-2);
        let (_, sys) = system(2, &p, Model::NavierStokes);
        let inner = InnerP1::new(&sys, false, 20).unwrap();
        let n = inner.dim();
        let mut y = vec![1.0; n];
        inner.apply(&vec![0.0; n], &mut y);
        assert!(y.iter().all(|&v| v == 0.0));
        let (x1, x2) = (test_vec(n, 0.0), test_vec(n, 5.0));
        let (mut y1, mut y2, mut y12) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        inner.apply(&x1, &mut y1);
        inner.apply(&x2, &mut y2);
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 2.5 * a + b).collect();
        inner.apply(&sum, &mut y12);
        let d: Vec<f64> = (0..n).map(|i| y12[i] - 2.5 * y1[i] - y2[i]).collect();
        assert!(norm2(&d) <= 1e-12 * norm2(&y12));
    }

    #[test]
    fn inner_p1_with_exact_blocks_drives_momentum_gmres() {
        // spectrum in {1} and [1/2, 1]: about 0.17 contraction per step
        let mut p = KktParams::new(0.01, 1e-2);
        p.augment = false;
        let (_, sys) = system(2, &p, Model::Stokes);
        let inner = InnerP1::new(&sys, true, 20).unwrap();
        let n = inner.dim();
        let b = test_vec(n, 2.0);
        let op = |x: &[f64], y: &mut [f64]| sys.apply_momentum(x, y);
        let mut x = vec![0.0; n];
        let cfg = KrylovConfig {
            rtol: 1e-10,
            max_iters: 14,
            restart: 20,
            ..KrylovConfig::default()
        };
        let st = gmres(&op, &mut &inner, &b, &mut x, &cfg).unwrap();
        assert!(st.converged, "{st:?}");
    }

    #[test]
    fn al_schur_specializes_to_block_diagonal() {
        let p = KktParams::new(0.01, 1.0);
        let (_, sys) = system(2, &p, Model::Stokes);
        let al = AlOuterSchur::new(&sys.pressure.kp, &sys.w_diag, 0.0, 1.0).unwrap();
        let kp = PinnedFactorization::new(&sys.pressure.kp).unwrap();
        let np = sys.n_p;
        let r = test_vec(2 * np, 1.0);
        let mut y = vec![0.0; 2 * np];
        al.apply(&r, &mut y);
        let k1 = kp.solve(&r[..np]);
        let k2 = kp.solve(&r[np..]);
        for i in 0..np {
            assert!((y[i] - k1[i]).abs() < 1e-12);
            assert!((y[np + i] + k2[i]).abs() < 1e-12);
        }
        let mut z = vec![1.0; 2 * np];
        al.apply(&vec![0.0; 2 * np], &mut z);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bpcd_pressure_operator_in_the_stokes_limit() {
        let mut p = KktParams::new(0.1, 0.5);
        p.augment = false;
        let (_, sys) = system(2, &p, Model::Stokes);
        let b = BpcdOuterSchur::from_system(&sys, true, 20).unwrap();
        let pr = &sys.pressure;
        let nk = pr.kp.scaled(0.1);
        let th = pr.mp.scaled(-2.0);
        let expect = SparseMatrix::from_blocks(&[
            vec![Some(&pr.mp), Some(&nk)],
            vec![Some(&nk), Some(&th)],
        ])
        .unwrap();
        let d = b.pressure_operator().add_scaled(1.0, &expect, -1.0).unwrap();
        assert!(d.max_abs() < 1e-14);
    }

    #[test]
    fn ideal_stack_converges_in_two_outer_steps() {
        let p = KktParams::new(0.01, 1e-2);
        let (_, sys) = system(2, &p, Model::NavierStokes);
        let mut stack = PrecondStack::new(&sys, StackConfig::new(OuterKind::Ideal)).unwrap();
        let op = |x: &[f64], y: &mut [f64]| sys.apply(x, y);
        let mut x = vec![0.0; sys.dim()];
        let cfg = KrylovConfig {
            rtol: 1e-10,
            ..KrylovConfig::default()
        };
        let st = fgmres(&op, &mut stack, &sys.rhs, &mut x, &cfg).unwrap();
        assert!(st.converged && st.iterations <= 2, "{st:?}");
    }

    #[test]
    fn al_stack_solves_a_cavity_step() {
        let p = KktParams::new(0.01, 1e-2);
        let (_, sys) = system(3, &p, Model::NavierStokes);
        let mut stack = PrecondStack::new(&sys, StackConfig::new(OuterKind::Al)).unwrap();
        let op = |x: &[f64], y: &mut [f64]| sys.apply(x, y);
        let mut x = vec![0.0; sys.dim()];
        let st = fgmres(&op, &mut stack, &sys.rhs, &mut x, &KrylovConfig::default()).unwrap();
        assert!(st.converged && st.iterations < 20, "{st:?}");
        let mut ax = vec![0.0; sys.dim()];
        sys.apply(&x, &mut ax);
        let r: Vec<f64> = ax.iter().zip(&sys.rhs).map(|(a, b)| a - b).collect();
        assert!(norm2(&r) <= 1e-6 * norm2(&sys.rhs));
        let xd = sys.solve_direct().unwrap();
        let nv = 2 * sys.n_v;
        let d: Vec<f64> = x[..nv].iter().zip(&xd[..nv]).map(|(a, b)| a - b).collect();
        assert!(norm2(&d) < 1e-3 * norm2(&xd[..nv]));
    }
}
