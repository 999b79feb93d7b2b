//! The coupled optimality system, its nonlinear residual and the
//! linearized step matrix.
//!
//! Unknowns are ordered `[v; zeta; mu; p]`. Velocity blocks have the
//! interior dimension; the state itself stores full Q2 vectors so that the
//! lifted boundary data enters the residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::Factorization;
use crate::operators::{
    assemble_convection_hessian, assemble_pressure, assemble_velocity, constant_field, Discretization,
    PressureOperators, VelocityOperators,
};
use crate::sparse::{norm2, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// Optimize-then-discretize.
    Otd,
    /// Discretize-then-optimize.
    Dto,
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Approach::Otd => "otd",
            Approach::Dto => "dto",
        })
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "otd" => Ok(Approach::Otd),
            "dto" => Ok(Approach::Dto),
            _ => Err(Error::Config(format!("unknown approach '{s}' (expected otd or dto)"))),
        }
    }
}

/// How the stabilization wind is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpsMode {
    Off,
    /// Assembled at the current iterate.
    Current,
    /// Assembled once at the first Navier-Stokes iterate and then held.
    Lagged,
}

impl std::fmt::Display for LpsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpsMode::Off => "off",
            LpsMode::Current => "current",
            LpsMode::Lagged => "lagged",
        })
    }
}

impl std::str::FromStr for LpsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" | "false" | "no" => Ok(LpsMode::Off),
            "current" => Ok(LpsMode::Current),
            "lagged" | "on" | "true" | "yes" => Ok(LpsMode::Lagged),
            _ => Err(Error::Config(format!(
                "unknown stabilization mode '{s}' (expected off, current or lagged)"
            ))),
        }
    }
}

/// Which model the operators and residual are linearized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    NavierStokes,
    /// Zero wind: no convection, Newton or stabilization terms.
    Stokes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktParams {
    pub nu: f64,
    pub beta: f64,
    pub gamma: f64,
    pub approach: Approach,
    pub augment: bool,
    pub lps: LpsMode,
    /// Add the second derivative of the convection term to the (1,1) block.
    pub full_newton: bool,
    /// Constant forcing `f`.
    pub forcing: [f64; 2],
    /// Constant desired state `v_d`.
    pub desired: [f64; 2],
}

impl KktParams {
    pub fn new(nu: f64, beta: f64) -> Self {
        Self {
            nu,
            beta,
            gamma: default_gamma(beta),
            approach: Approach::Otd,
            augment: true,
            lps: LpsMode::Lagged,
            full_newton: false,
            forcing: [0.0; 2],
            desired: [0.0; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::Parameter(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Parameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Parameter(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `10 / sqrt(beta)`
pub fn default_gamma(beta: f64) -> f64 {
    10.0 / beta.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateIterate {
    /// Full Q2 state velocity, boundary values included.
    pub v: Vec<f64>,
    /// Full Q2 adjoint velocity, zero on the boundary.
    pub zeta: Vec<f64>,
    pub mu: Vec<f64>,
    pub p: Vec<f64>,
    pub k: usize,
    /// Wind the stabilization is held at in lagged mode.
    pub lps_wind: Option<Vec<f64>>,
}

impl StateIterate {
    /// Zero interior values with the given boundary lift.
    pub fn from_lift(disc: &Discretization, lift: Vec<f64>) -> Self {
        let n = disc.dofmap.n_v_full;
        assert_eq!(lift.len(), n);
        let mut v = lift;
        for &i in &disc.dofmap.interior {
            v[i] = 0.0;
        }
        Self {
            v,
            zeta: vec![0.0; n],
            mu: vec![0.0; disc.n_p()],
            p: vec![0.0; disc.n_p()],
            k: 0,
            lps_wind: None,
        }
    }

    /// Adds a correction `[dv; dzeta; dmu; dp]` in interior coordinates.
    pub fn update(&mut self, disc: &Discretization, delta: &[f64]) {
        let (nv, np) = (disc.n_v(), disc.n_p());
        assert_eq!(delta.len(), 2 * nv + 2 * np);
        for (k, &i) in disc.dofmap.interior.iter().enumerate() {
            self.v[i] += delta[k];
            self.zeta[i] += delta[nv + k];
        }
        for j in 0..np {
            self.mu[j] += delta[2 * nv + j];
            self.p[j] += delta[2 * nv + np + j];
        }
        self.k += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub big_r1: Vec<f64>,
    pub big_r2: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl ResidualVector {
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.big_r1.len() + self.big_r2.len() + self.r1.len() + self.r2.len(),
        );
        out.extend_from_slice(&self.big_r1);
        out.extend_from_slice(&self.big_r2);
        out.extend_from_slice(&self.r1);
        out.extend_from_slice(&self.r2);
        out
    }

    pub fn norm(&self) -> f64 {
        (norm2(&self.big_r1).powi(2)
            + norm2(&self.big_r2).powi(2)
            + norm2(&self.r1).powi(2)
            + norm2(&self.r2).powi(2))
        .sqrt()
    }
}

/// The assembled step system.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub approach: Approach,
    pub n_v: usize,
    pub n_p: usize,
    pub nu: f64,
    pub beta: f64,
    /// Augmentation weight actually applied (0 when not augmented).
    pub gamma: f64,
    pub augmented: bool,
    pub m: SparseMatrix,
    pub phi11: SparseMatrix,
    pub phi12: SparseMatrix,
    pub phi21: SparseMatrix,
    pub b: SparseMatrix,
    pub bt: SparseMatrix,
    /// Diagonal of the pressure mass matrix, the augmentation weight `W`.
    pub w_diag: Vec<f64>,
    pub pressure: PressureOperators,
    pub rhs: Vec<f64>,
    pub residual: ResidualVector,
}

fn check_state(disc: &Discretization, s: &StateIterate) -> Result<()> {
    let (nf, np) = (disc.dofmap.n_v_full, disc.n_p());
    if s.v.len() != nf || s.zeta.len() != nf || s.mu.len() != np || s.p.len() != np {
        return Err(Error::Dimension("state does not match the discretization".into()));
    }
    Ok(())
}

fn operators_for(
    disc: &Discretization,
    state: &StateIterate,
    params: &KktParams,
    model: Model,
) -> Result<(VelocityOperators, PressureOperators)> {
    let zero;
    let wind: &[f64] = match model {
        Model::NavierStokes => &state.v,
        Model::Stokes => {
            zero = vec![0.0; disc.dofmap.n_v_full];
            &zero
        }
    };
    let stab = match (model, params.lps) {
        (Model::Stokes, _) | (_, LpsMode::Off) => None,
        (_, LpsMode::Current) => Some(wind),
        (_, LpsMode::Lagged) => Some(state.lps_wind.as_deref().unwrap_or(wind)),
    };
    Ok((
        assemble_velocity(disc, wind, params.nu, stab)?,
        assemble_pressure(disc, wind, params.nu, stab)?,
    ))
}

fn residual_with(
    disc: &Discretization,
    state: &StateIterate,
    params: &KktParams,
    vel: &VelocityOperators,
) -> ResidualVector {
    let nu = params.nu;
    let int = &disc.dofmap.interior;
    let zeta_i = disc.dofmap.restrict(&state.zeta);
    let b = &disc.divergence.b;

    // R1 = M (v_d - v) - (nu K + W) zeta -/+ N-terms - omega - B^T mu
    let vd = constant_field(disc, params.desired);
    let diff: Vec<f64> = vd.iter().zip(&state.v).map(|(a, b)| a - b).collect();
    let mut big_r1 = disc.mass_rows.matvec(&diff);
    disc.stiffness.matvec_add(-nu, &zeta_i, &mut big_r1);
    vel.w.matvec_add(-1.0, &zeta_i, &mut big_r1);
    match params.approach {
        Approach::Otd => vel.n.matvec_add(1.0, &zeta_i, &mut big_r1),
        Approach::Dto => vel.n.matvec_transpose_add(-1.0, &zeta_i, &mut big_r1),
    }
    vel.h.matvec_transpose_add(-1.0, &zeta_i, &mut big_r1);
    b.matvec_transpose_add(-1.0, &state.mu, &mut big_r1);

    // R2 = f - D v - B^T p + (1/beta) M zeta
    let f = constant_field(disc, params.forcing);
    let mut big_r2 = disc.mass_rows.matvec(&f);
    disc.stiffness_rows.matvec_add(-nu, &state.v, &mut big_r2);
    vel.n_rows.matvec_add(-1.0, &state.v, &mut big_r2);
    vel.w_rows.matvec_add(-1.0, &state.v, &mut big_r2);
    b.matvec_transpose_add(-1.0, &state.p, &mut big_r2);
    disc.mass.matvec_add(1.0 / params.beta, &zeta_i, &mut big_r2);

    let r1: Vec<f64> = disc.divergence.b_full.matvec(&state.v).iter().map(|x| -x).collect();
    let r2: Vec<f64> = b.matvec(&zeta_i).iter().map(|x| -x).collect();
    debug_assert_eq!(big_r1.len(), int.len());
    ResidualVector {
        big_r1,
        big_r2,
        r1,
        r2,
    }
}

/// Nonlinear residual `[R1; R2; r1; r2]` at a state.
pub fn eval_residual(
    disc: &Discretization,
    state: &StateIterate,
    params: &KktParams,
    model: Model,
) -> Result<ResidualVector> {
    params.validate()?;
    check_state(disc, state)?;
    let (vel, _) = operators_for(disc, state, params, model)?;
    Ok(residual_with(disc, state, params, &vel))
}

/// Assembles the step system at `state`. With `params.augment` the
/// momentum off-diagonal blocks and right-hand side carry the grad-div
/// term `gamma B^T W^{-1} B`.
pub fn build_kkt(
    disc: &Discretization,
    state: &StateIterate,
    params: &KktParams,
    model: Model,
) -> Result<KktSystem> {
    params.validate()?;
    check_state(disc, state)?;
    let (vel, pres) = operators_for(disc, state, params, model)?;
    let residual = residual_with(disc, state, params, &vel);

    let nu = params.nu;
    let d = vel.k.scaled(nu).add(&vel.n)?.add(&vel.w)?;
    let phi21 = d.add(&vel.h)?;
    let phi12 = match params.approach {
        Approach::Otd => vel
            .k
            .scaled(nu)
            .add_scaled(1.0, &vel.n, -1.0)?
            .add(&vel.w)?
            .add(&vel.h.transpose())?,
        Approach::Dto => phi21.transpose(),
    };
    let phi11 = if params.full_newton && model == Model::NavierStokes {
        vel.m.add(&assemble_convection_hessian(disc, &state.zeta)?)?
    } else {
        vel.m.clone()
    };

    let b = disc.divergence.b.clone();
    let bt = b.transpose();
    let mut sys = KktSystem {
        approach: params.approach,
        n_v: disc.n_v(),
        n_p: disc.n_p(),
        nu,
        beta: params.beta,
        gamma: 0.0,
        augmented: false,
        m: vel.m,
        phi11,
        phi12,
        phi21,
        b,
        bt,
        w_diag: pres.mp_diag.clone(),
        pressure: pres,
        rhs: residual.concat(),
        residual,
    };
    if params.augment {
        augment(&mut sys, params.gamma)?;
    }
    Ok(sys)
}

/// Adds `gamma B^T W^{-1} B` to both off-diagonal momentum blocks and
/// transforms the right-hand side consistently. The weight pairs each
/// momentum row with the constraint of the other velocity.
pub fn augment(sys: &mut KktSystem, gamma: f64) -> Result<()> {
    if sys.augmented {
        return Err(Error::Config("system is already augmented".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Parameter(format!("gamma must be nonnegative, got {gamma}")));
    }
    if let Some(i) = sys.w_diag.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::Parameter(format!("augmentation weight {i} is not positive")));
    }
    sys.augmented = true;
    sys.gamma = gamma;
    if gamma == 0.0 {
        return Ok(());
    }
    let inv_w: Vec<f64> = sys.w_diag.iter().map(|w| 1.0 / w).collect();
    let grad_div = sys.bt.matmul(&sys.b.scale_rows(&inv_w))?.scaled(gamma);
    sys.phi12 = sys.phi12.add(&grad_div)?;
    sys.phi21 = sys.phi21.add(&grad_div)?;

    let (nv, np) = (sys.n_v, sys.n_p);
    let r1: Vec<f64> = sys.rhs[2 * nv..2 * nv + np].iter().zip(&inv_w).map(|(r, w)| r * w).collect();
    let r2: Vec<f64> = sys.rhs[2 * nv + np..].iter().zip(&inv_w).map(|(r, w)| r * w).collect();
    let (top, _) = sys.rhs.split_at_mut(2 * nv);
    let (big_r1, big_r2) = top.split_at_mut(nv);
    sys.b.matvec_transpose_add(gamma, &r2, big_r1);
    sys.b.matvec_transpose_add(gamma, &r1, big_r2);
    Ok(())
}

impl KktSystem {
    pub fn dim(&self) -> usize {
        2 * self.n_v + 2 * self.n_p
    }

    /// The (2,2) momentum block `-M / beta`.
    pub fn theta_block(&self) -> SparseMatrix {
        self.m.scaled(-1.0 / self.beta)
    }

    /// `y = A x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nv, np) = (self.n_v, self.n_p);
        let (xv, rest) = x.split_at(nv);
        let (xz, rest) = rest.split_at(nv);
        let (xm, xp) = rest.split_at(np);
        let (yv, rest) = y.split_at_mut(nv);
        let (yz, rest) = rest.split_at_mut(nv);
        let (ym, yp) = rest.split_at_mut(np);

        self.phi11.matvec_into(xv, yv);
        self.phi12.matvec_add(1.0, xz, yv);
        self.b.matvec_transpose_add(1.0, xm, yv);

        self.phi21.matvec_into(xv, yz);
        self.m.matvec_add(-1.0 / self.beta, xz, yz);
        self.b.matvec_transpose_add(1.0, xp, yz);

        self.b.matvec_into(xv, ym);
        self.b.matvec_into(xz, yp);
    }

    /// `y = F x` for the momentum block alone.
    pub fn apply_momentum(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.n_v;
        let (xv, xz) = x.split_at(nv);
        let (yv, yz) = y.split_at_mut(nv);
        self.phi11.matvec_into(xv, yv);
        self.phi12.matvec_add(1.0, xz, yv);
        self.phi21.matvec_into(xv, yz);
        self.m.matvec_add(-1.0 / self.beta, xz, yz);
    }

    /// `y += alpha * blockdiag(B, B)^T x` for a pressure pair `x`.
    pub fn constraint_transpose_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let (nv, np) = (self.n_v, self.n_p);
        self.b.matvec_transpose_add(alpha, &x[..np], &mut y[..nv]);
        self.b.matvec_transpose_add(alpha, &x[np..], &mut y[nv..2 * nv]);
    }

    /// Momentum block `[[Phi11, Phi12], [Phi21, -M/beta]]`.
    pub fn momentum_matrix(&self) -> SparseMatrix {
        let theta = self.theta_block();
        SparseMatrix::from_blocks(&[
            vec![Some(&self.phi11), Some(&self.phi12)],
            vec![Some(&self.phi21), Some(&theta)],
        ])
        .expect("consistent blocks")
    }

    /// `blockdiag(B, B)`
    pub fn constraint_matrix(&self) -> SparseMatrix {
        SparseMatrix::from_blocks(&[vec![Some(&self.b), None], vec![None, Some(&self.b)]])
            .expect("consistent blocks")
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let f = self.momentum_matrix();
        let c = self.constraint_matrix();
        let ct = c.transpose();
        let zero = SparseMatrix::zeros(2 * self.n_p, 2 * self.n_p);
        SparseMatrix::from_blocks(&[vec![Some(&f), Some(&ct)], vec![Some(&c), Some(&zero)]])
            .expect("consistent blocks")
    }

    /// Indices kept when the first unknown of each pressure block is dropped.
    pub fn pinned_indices(&self) -> Vec<usize> {
        let (nv, np) = (self.n_v, self.n_p);
        (0..self.dim())
            .filter(|&i| i != 2 * nv && i != 2 * nv + np)
            .collect()
    }

    /// The system with the constant pressure modes removed by pinning.
    pub fn pinned_matrix(&self) -> SparseMatrix {
        let keep = self.pinned_indices();
        self.to_sparse().submatrix(&keep, &keep)
    }

    /// Solves the step system by sparse LU on the pinned system.
    pub fn solve_direct(&self) -> Result<Vec<f64>> {
        self.solve_direct_rhs(&self.rhs)
    }

    pub fn solve_direct_rhs(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let keep = self.pinned_indices();
        let fac = Factorization::new(&self.to_sparse().submatrix(&keep, &keep))?;
        let b: Vec<f64> = keep.iter().map(|&i| rhs[i]).collect();
        let y = fac.solve(&b);
        let mut x = vec![0.0; self.dim()];
        for (k, &i) in keep.iter().enumerate() {
            x[i] = y[k];
        }
        self.remove_pressure_means(&mut x);
        Ok(x)
    }

    /// Subtracts the mass-weighted mean from both pressure blocks.
    pub fn remove_pressure_means(&self, x: &mut [f64]) {
        let (nv, np) = (self.n_v, self.n_p);
        let weights = self.pressure.mp.matvec(&vec![1.0; np]);
        let area: f64 = weights.iter().sum();
        for block in [2 * nv, 2 * nv + np] {
            let seg = &mut x[block..block + np];
            let mean = seg.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>() / area;
            seg.iter_mut().for_each(|v| *v -= mean);
        }
    }
}
