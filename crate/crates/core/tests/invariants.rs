use lattice_homog::asymptotic::finite_window_value;
use lattice_homog::bvp::{solve_dirichlet, BoxDomain, Datum, DirichletProblem, Epsilon};
use lattice_homog::cell::{cell_energy, f_hom, solve_corrector, CellOptions};
use lattice_homog::fixtures;
use lattice_homog::{Convention, LatticeGraph};
use proptest::prelude::*;

fn opts(convention: Convention) -> CellOptions {
    CellOptions {
        convention,
        tol: 1e-12,
        max_iter: None,
    }
}

fn example() -> impl Strategy<Value = (&'static str, LatticeGraph)> {
    (0usize..6).prop_map(|i| fixtures::builtin_examples().swap_remove(i))
}

/// An example with every orbit weight rescaled.
fn weighted() -> impl Strategy<Value = LatticeGraph> {
    example().prop_flat_map(|(_, g)| {
        let n = g.orbits().len();
        proptest::collection::vec(0.2f64..5.0, n).prop_map(move |ws| {
            ws.iter()
                .enumerate()
                .fold(g.clone(), |acc, (i, &w)| acc.with_weight(i, w))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gauge_invariance(g in weighted(), z in -3.0f64..3.0, shift in -10.0f64..10.0) {
        let sol = solve_corrector(&g, &[z], opts(Convention::Double)).unwrap();
        let moved: Vec<f64> = sol.corrector.iter().map(|c| c + shift).collect();
        let a = cell_energy(&g, &[z], &sol.corrector, Convention::Double);
        let b = cell_energy(&g, &[z], &moved, Convention::Double);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn corrector_is_a_minimum(g in weighted(), z in -3.0f64..3.0, seed in 0u64..1000) {
        let sol = solve_corrector(&g, &[z], opts(Convention::Double)).unwrap();
        let n = sol.corrector.len();
        let delta: Vec<f64> = (0..n)
            .map(|i| ((seed as f64 + 1.0) * (i as f64 + 0.37)).sin() * 1e-3)
            .collect();
        let perturbed: Vec<f64> = sol.corrector.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let e = cell_energy(&g, &[z], &perturbed, Convention::Double);
        prop_assert!(e >= sol.energy - 1e-10);
    }

    #[test]
    fn even_in_the_slope(g in weighted(), z in -3.0f64..3.0) {
        let a = f_hom(&g, &[z], opts(Convention::Double)).unwrap();
        let b = f_hom(&g, &[-z], opts(Convention::Double)).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
    }

    #[test]
    fn double_is_twice_single(g in weighted(), z in -3.0f64..3.0) {
        let d = f_hom(&g, &[z], opts(Convention::Double)).unwrap();
        let s = f_hom(&g, &[z], opts(Convention::Single)).unwrap();
        prop_assert!((d - 2.0 * s).abs() <= 1e-12 * d.abs().max(1e-12));
    }

    #[test]
    fn heavier_orbit_never_lowers_energy(g in weighted(), which in 0usize..16, extra in 0.0f64..3.0) {
        let i = which % g.orbits().len();
        let heavier = g.with_weight(i, g.orbits()[i].weight + extra);
        let a = f_hom(&g, &[1.0], opts(Convention::Double)).unwrap();
        let b = f_hom(&heavier, &[1.0], opts(Convention::Double)).unwrap();
        prop_assert!(b >= a - 1e-10 * a);
    }

    #[test]
    fn windows_bound_the_cell_value(g in weighted(), k in 2usize..12, z in 0.1f64..3.0) {
        let hom = f_hom(&g, &[z], opts(Convention::Double)).unwrap();
        let w = finite_window_value(&g, &[z], k, opts(Convention::Double)).unwrap();
        prop_assert!(w.value >= hom - 1e-8);
    }

    #[test]
    fn comparison_principle((_, g) in example(), mult in 2i64..8, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let t = g.period();
        let datum = Datum::parse(&format!("{a} + {b}*x^2"), 1).unwrap();
        let p = DirichletProblem::new(g, BoxDomain::unit(1), datum, Epsilon::from_n(t * mult, t).unwrap());
        let s = solve_dirichlet(&p).unwrap();
        for v in &s.u {
            prop_assert!(*v >= s.boundary_min - 1e-9 && *v <= s.boundary_max + 1e-9);
        }
    }
}
