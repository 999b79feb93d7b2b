use proptest::prelude::*;

use crate::cavity::{expand_sweep, CaseResult, CaseSpec};
use crate::chebyshev::ChebyshevMassSolver;
use crate::grid::{build_dofmap, build_mesh, coupled_dof_count};
use crate::kkt::{augment, build_kkt, KktParams, Model, StateIterate};
use crate::krylov::{gmres, IdentityPrecond, KrylovConfig};
use crate::newton::rounded_mean;
use crate::operators::{cavity_lid, lift_boundary, Discretization};
use crate::precond::{AlOuterSchur, BpcdOuterSchur, InnerP1, OuterKind, Q2_MASS_INTERVAL};
use crate::report::{read_json, write_json};
use crate::sparse::norm2;
use crate::SparseMatrix;

fn sparse_strategy(max_dim: usize) -> impl Strategy<Value = SparseMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec((0..r, 0..c, -10.0f64..10.0), 0..3 * (r + c)).prop_map(move |t| {
            let (rows, cols, vals): (Vec<_>, Vec<_>, Vec<_>) = t.into_iter().fold(
                (Vec::new(), Vec::new(), Vec::new()),
                |(mut a, mut b, mut v), (i, j, x)| {
                    a.push(i);
                    b.push(j);
                    v.push(x);
                    (a, b, v)
                },
            );
            SparseMatrix::from_triplets(&rows, &cols, &vals, (r, c)).unwrap()
        })
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) <= tol * (1.0 + norm2(a).max(norm2(b)))
}

fn lifted_state(disc: &Discretization, seed: u64) -> StateIterate {
    let mut s = StateIterate::from_lift(disc, lift_boundary(disc, cavity_lid));
    let n = 2 * disc.n_v() + 2 * disc.n_p();
    let d: Vec<f64> = (0..n).map(|i| 0.2 * ((i as f64 + seed as f64) * 0.731).sin()).collect();
    s.update(disc, &d);
    s
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_is_an_involution(a in sparse_strategy(12)) {
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn transpose_product_matches(a in sparse_strategy(12), seed in 0u64..1000) {
        let x: Vec<f64> = (0..a.nrows()).map(|i| ((i as u64 + seed) as f64 * 0.37).cos()).collect();
        prop_assert!(close(&a.matvec_transpose(&x), &a.transpose().matvec(&x), 1e-12));
    }

    #[test]
    fn matrix_market_round_trips(a in sparse_strategy(10)) {
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let b = SparseMatrix::read_matrix_market(buf.as_slice()).unwrap();
        prop_assert_eq!(a.shape(), b.shape());
        prop_assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn rounded_mean_lies_between_extremes(v in prop::collection::vec(1usize..200, 1..12)) {
        let m = rounded_mean(&v);
        prop_assert!(m >= *v.iter().min().unwrap() && m <= *v.iter().max().unwrap());
        let exact = v.iter().sum::<usize>() as f64 / v.len() as f64;
        prop_assert!((m as f64 - exact).abs() <= 0.5);
    }

    #[test]
    fn sweep_is_an_ordered_cross_product(
        levels in prop::collection::vec(1u32..6, 1..4),
        nus in prop::collection::vec(1e-3f64..1.0, 1..4),
        betas in prop::collection::vec(1e-6f64..1.0, 1..4),
    ) {
        let base = CaseSpec::new(1, 0.1, 0.1, OuterKind::Al);
        let specs = expand_sweep(&base, &levels, &nus, &betas, None);
        prop_assert_eq!(specs.len(), levels.len() * nus.len() * betas.len());
        let mut k = 0;
        for &l in &levels {
            for &nu in &nus {
                for &b in &betas {
                    prop_assert_eq!((specs[k].level, specs[k].nu, specs[k].beta), (l, nu, b));
                    prop_assert!((specs[k].gamma - 10.0 / b.sqrt()).abs() <= 1e-12 * specs[k].gamma);
                    prop_assert_eq!(specs[k].dof(), coupled_dof_count(l));
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn json_report_round_trips(
        level in 1u32..8,
        nu in 1e-3f64..1.0,
        beta in 1e-6f64..1.0,
        counts in prop::collection::vec(1usize..100, 0..10),
        converged in any::<bool>(),
    ) {
        let spec = CaseSpec::new(level, nu, beta, OuterKind::Bpcd);
        let r = CaseResult {
            dof: spec.dof(),
            spec,
            newton_iters: counts.len(),
            avg_fgmres: rounded_mean(&counts),
            residuals: counts.iter().map(|&c| 1.0 / (c as f64 + 1.0)).collect(),
            linear_converged: vec![true; counts.len()],
            step_seconds: vec![0.25; counts.len()],
            fgmres_iters: counts,
            runtime_s: 1.5,
            converged,
            error: None,
        };
        let mut buf = Vec::new();
        write_json(std::slice::from_ref(&r), &mut buf).unwrap();
        prop_assert_eq!(read_json(buf.as_slice()).unwrap().results, vec![r]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dofmap_matches_closed_form(level in 1u32..8) {
        let d = build_dofmap(&build_mesh(level).unwrap());
        prop_assert_eq!(d.coupled_dim(), coupled_dof_count(level));
        prop_assert_eq!(d.interior.len() + d.boundary.len(), d.n_v_full);
    }

    #[test]
    fn chebyshev_is_linear(x in vec_strategy(98), y in vec_strategy(98), a in -3.0f64..3.0) {
        let disc = Discretization::new(2).unwrap();
        let cheb = ChebyshevMassSolver::new(disc.mass.clone(), Q2_MASS_INTERVAL, 20).unwrap();
        let lhs = cheb.solve(&x.iter().zip(&y).map(|(u, v)| a * u + v).collect::<Vec<_>>());
        let (cx, cy) = (cheb.solve(&x), cheb.solve(&y));
        let rhs: Vec<f64> = cx.iter().zip(&cy).map(|(u, v)| a * u + v).collect();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn gmres_history_decreases_within_cycles(seed in 0u64..1000, restart in 2usize..8) {
        let disc = Discretization::new(2).unwrap();
        let a = disc.mass.add_scaled(1.0, &disc.stiffness, 0.05).unwrap();
        let b: Vec<f64> = (0..a.nrows()).map(|i| ((i as u64 * 7 + seed) as f64 * 0.13).sin()).collect();
        let mut x = vec![0.0; b.len()];
        let cfg = KrylovConfig { restart, rtol: 1e-8, flexible: false, ..KrylovConfig::default() };
        let st = gmres(&a, &mut IdentityPrecond, &b, &mut x, &cfg).unwrap();
        for w in st.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn preconditioner_pieces_are_linear(seed in 0u64..100, beta_exp in 1i32..6, a in -2.0f64..2.0) {
        let disc = Discretization::new(2).unwrap();
        let beta = 10f64.powi(-beta_exp);
        let state = lifted_state(&disc, seed);
        let mut p = KktParams::new(0.01, beta);
        p.augment = false;
        let sys = build_kkt(&disc, &state, &p, Model::NavierStokes).unwrap();
        let inner = InnerP1::new(&sys, false, 20).unwrap();
        let al = AlOuterSchur::from_system(&sys).unwrap();
        let bpcd = BpcdOuterSchur::from_system(&sys, false, 20).unwrap();
        let check = |n: usize, f: &dyn Fn(&[f64], &mut [f64])| {
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 + seed) as f64 * 0.61).sin()).collect();
            let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 3 + seed) as f64 * 0.29).cos()).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + v).collect();
            let (mut fx, mut fy, mut fm) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            f(&x, &mut fx);
            f(&y, &mut fy);
            f(&mix, &mut fm);
            let rhs: Vec<f64> = fx.iter().zip(&fy).map(|(u, v)| a * u + v).collect();
            close(&fm, &rhs, 1e-12)
        };
        prop_assert!(check(2 * sys.n_v, &|x, y| inner.apply(x, y)));
        prop_assert!(check(2 * sys.n_p, &|x, y| al.apply(x, y)));
        prop_assert!(check(2 * sys.n_p, &|x, y| bpcd.apply(x, y)));
    }

    #[test]
    fn augmentation_never_moves_the_solution(seed in 0u64..100, gamma in 0.0f64..500.0) {
        let disc = Discretization::new(1).unwrap();
        let state = lifted_state(&disc, seed);
        let mut p = KktParams::new(0.02, 1e-2);
        p.augment = false;
        let plain = build_kkt(&disc, &state, &p, Model::NavierStokes).unwrap();
        let mut aug = plain.clone();
        augment(&mut aug, gamma).unwrap();
        let x0 = plain.solve_direct().unwrap();
        let x1 = aug.solve_direct().unwrap();
        prop_assert!(close(&x0, &x1, 1e-8));
    }
}
