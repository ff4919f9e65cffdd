use proptest::prelude::*;

use cylscat::hamiltonian::assemble_full;
use cylscat::scattering::{smatrix_ode, smatrix_stationary, StationarySettings};
use cylscat::scenario::config::ScenarioConfig;
use cylscat::scenario::{AxialGrid, Part, Profile, Scenario, Shape, Term};
use cylscat::timedelay::CrankNicolson;
use cylscat::C64;

fn two_channel(v00: f64, v01: f64, v11: f64, width: f64) -> Scenario {
    let p = Profile::zero(2)
        .with_term(Part::ShortRange, Term::potential(0, 0, v00, Shape::GaussianWell { center: 0.0, width }))
        .with_term(Part::ShortRange, Term::potential(0, 1, v01, Shape::GaussianWell { center: 0.3, width }))
        .with_term(Part::ShortRange, Term::potential(1, 1, v11, Shape::Barrier { center: -0.5, width }));
    Scenario::free(vec![0.0, 1.0], AxialGrid::spanning(10.0, 400).unwrap()).with_profile(p, f64::INFINITY, 8.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scattering_matrices_are_unitary(
        v00 in -1.5f64..1.5, v01 in -0.8f64..0.8, v11 in -1.5f64..1.5, width in 0.5f64..1.5, lambda in 1.1f64..3.5,
    ) {
        let s = two_channel(v00, v01, v11, width);
        let m = smatrix_ode(&s, lambda).unwrap();
        prop_assert!(m.unitarity_defect <= 1e-8, "{}", m.unitarity_defect);
    }

    #[test]
    fn real_symmetric_couplings_are_reciprocal(
        v00 in -1.5f64..1.5, v01 in -0.8f64..0.8, v11 in -1.5f64..1.5, width in 0.5f64..1.5, lambda in 1.1f64..3.5,
    ) {
        let s = two_channel(v00, v01, v11, width);
        let m = smatrix_ode(&s, lambda).unwrap();
        for (a, b) in [((0, 0), (1, 1)), ((0, 1), (1, 0)), ((0, 0), (0, 1)), ((1, 0), (0, 1)), ((1, 1), (0, 0))] {
            let fwd = m.entry(a.0, a.1, b.0, b.1).unwrap();
            let back = m.entry(b.0, b.1, a.0, a.1).unwrap();
            prop_assert!((fwd - back).norm() <= 1e-8, "{a:?} <- {b:?}: {fwd} vs {back}");
        }
    }

    #[test]
    fn both_routes_agree_on_smooth_bumps(height in -1.5f64..1.5, width in 0.5f64..1.5, lambda in 0.3f64..3.5) {
        // The lattice route is second order only for smooth profiles.
        let p = Profile::zero(1).with_term(Part::ShortRange, Term::potential(0, 0, height, Shape::GaussianWell { center: 0.0, width }));
        let s = Scenario::free(vec![0.0], AxialGrid::spanning(8.0, 320).unwrap()).with_profile(p, f64::INFINITY, 8.0);
        let a = smatrix_ode(&s, lambda).unwrap();
        let b = smatrix_stationary(&s, lambda, &StationarySettings::default()).unwrap();
        let d = (&a.data - &b.data).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-4, "{d}");
    }

    #[test]
    fn free_cylinders_do_not_scatter(lambda in 0.05f64..8.9) {
        let s = Scenario::free(vec![0.0, 1.0, 1.0, 4.0], AxialGrid::spanning(5.0, 100).unwrap());
        prop_assume!(s.check_energy(lambda).is_ok());
        let m = smatrix_ode(&s, lambda).unwrap();
        let n = m.data.nrows();
        let identity = |p: usize, q: usize| C64::new(if p == q { 1.0 } else { 0.0 }, 0.0);
        let worst = (0..n).flat_map(|p| (0..n).map(move |q| (p, q))).map(|(p, q)| (m.data[(p, q)] - identity(p, q)).norm()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12, "{}", worst);
    }

    #[test]
    fn crank_nicolson_conserves_the_norm(
        v01 in -0.8f64..0.8, shift in -3.0f64..3.0, k0 in 0.5f64..2.5, steps in 1usize..40,
    ) {
        let s = two_channel(1.0, v01, -1.0, 1.0);
        let h = assemble_full(&s).unwrap();
        prop_assert!(h.hermiticity_defect() <= 1e-12);
        let cn = CrankNicolson::new(&h, 0.05).unwrap();
        let mut psi: Vec<C64> = s
            .grid
            .xs()
            .iter()
            .flat_map(|&x| {
                let g = (-(x - shift).powi(2)).exp();
                [C64::from_polar(g, k0 * x), C64::from_polar(0.5 * g, -k0 * x)]
            })
            .collect();
        let n0: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        for _ in 0..steps {
            cn.step(&mut psi);
        }
        let n1: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((n1 / n0 - 1.0).abs() <= 1e-12, "{}", n1 / n0 - 1.0);
    }
}

#[test]
fn configs_survive_a_serialization_round_trip() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let cfg = ScenarioConfig::load(&path).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::parse(&text, "round-trip").unwrap(), cfg, "{}", path.display());
    }
}
