use proptest::prelude::*;

use tns::cli::parse_temps;
use tns::coarsegrain2d;
use tns::lattice::TnsConfig;
use tns::models::{gauge_transform, Couplings, DisorderRealization, ImpurityKind, IsingSpec};
use tns::reference::brute_force;
use tns::skeleton::{als_skeletonize, AlsConfig};
use tns::tensor::{contract, svd_truncate};
use tns::{DenseTensor, LogScalar};

fn tensor(shape: Vec<usize>, legs: &'static [&'static str]) -> impl Strategy<Value = DenseTensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(-1.0f64..1.0, n)
        .prop_map(move |d| DenseTensor::new(shape.clone(), d, legs.iter().copied()).unwrap())
}

fn dims(k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, k)
}

fn max_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permute_round_trips(t in dims(4).prop_flat_map(|d| tensor(d, &["a", "b", "c", "d"]))) {
        let p = t.permute(&["c", "a", "d", "b"]).unwrap();
        prop_assert_eq!(p.legs(), &["c", "a", "d", "b"]);
        prop_assert_eq!(p.get(&[0, 0, 0, 0]), t.get(&[0, 0, 0, 0]));
        let back = p.permute(&["a", "b", "c", "d"]).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn regroup_then_ungroup_is_identity(t in dims(3).prop_flat_map(|d| tensor(d, &["a", "b", "c"]))) {
        let (db, dc) = (t.shape()[1], t.shape()[2]);
        let g = t.regroup(&[("a", &["a"]), ("bc", &["b", "c"])]).unwrap();
        prop_assert_eq!(g.shape(), &[t.shape()[0], db * dc]);
        let u = g.ungroup("bc", &[("b", db), ("c", dc)]).unwrap().permute(&["a", "b", "c"]).unwrap();
        prop_assert_eq!(u.data(), t.data());
    }

    #[test]
    fn contraction_is_associative(
        (a, b, c) in (dims(3)).prop_flat_map(|d| (
            tensor(vec![d[0], d[1]], &["i", "j"]),
            tensor(vec![d[1], d[2]], &["j", "k"]),
            tensor(vec![d[2], 2], &["k", "l"]),
        ))
    ) {
        let left = contract(&contract(&a, &b, &[("j", "j")]).unwrap(), &c, &[("k", "k")]).unwrap();
        let right = contract(&a, &contract(&b, &c, &[("k", "k")]).unwrap(), &[("j", "j")]).unwrap();
        let right = right.permute(left.legs()).unwrap();
        prop_assert!(max_diff(&left, &right) < 1e-12);
    }

    #[test]
    fn svd_discarded_weight_is_the_truncation_error(
        t in dims(3).prop_flat_map(|d| tensor(d, &["a", "b", "c"])),
        keep in 1usize..6,
    ) {
        let s = svd_truncate(&t, &["a"], keep, 0.0).unwrap();
        prop_assert!(s.rank() <= keep);
        let bond = s.left.legs().last().unwrap().clone();
        let mut us = s.left.data().to_vec();
        for row in us.chunks_mut(s.rank()) {
            row.iter_mut().zip(&s.singular_values).for_each(|(x, sv)| *x *= sv);
        }
        let us = DenseTensor::new(s.left.shape().to_vec(), us, ["a", "k"]).unwrap();
        let v = s.right.relabel(&[(bond.as_str(), "k")]).unwrap();
        let back = contract(&us, &v, &[("k", "k")]).unwrap().permute(&["a", "b", "c"]).unwrap();
        let err = back.data().iter().zip(t.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!((err - s.discarded_weight).abs() <= 1e-10 * (1.0 + t.norm()), "{} vs {}", err, s.discarded_weight);
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn als_never_beats_zero_and_is_exact_at_full_rank(
        t in (1usize..4, 1usize..6).prop_flat_map(|(c, f)| tensor(vec![c, c, f], &["a", "b", "x"])),
    ) {
        let chi = t.shape()[0];
        let s = als_skeletonize(&t, chi, &AlsConfig::default()).unwrap();
        prop_assert!(s.residual_rel >= 0.0);
        prop_assert!(s.residual_rel < 1e-8, "{}", s.residual_rel);
        prop_assert_eq!(s.x.shape(), &[chi, chi]);
    }

    #[test]
    fn log_scalar_arithmetic(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let (la, lb) = (LogScalar::from_f64(a), LogScalar::from_f64(b));
        let tol = 1e-12 * (a.abs() + b.abs() + 1.0);
        prop_assert!((la.add(&lb).to_f64() - (a + b)).abs() <= tol.max(1e-9 * (a + b).abs()));
        prop_assert!(((la * lb).to_f64() - a * b).abs() <= 1e-12 * (a * b).abs() + 1e-300);
    }

    #[test]
    fn temperature_ranges_are_inclusive(start in 0.5f64..3.0, steps in 0usize..20, h in 0.01f64..0.5) {
        let stop = start + steps as f64 * h;
        let ts = parse_temps(&format!("{start}:{stop}:{h}")).unwrap();
        prop_assert_eq!(ts.len(), steps + 1);
        prop_assert!((ts[steps] - stop).abs() < 1e-9);
    }
}

fn couplings(edges: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(1.0), Just(-1.0), -1.5f64..1.5], edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn small_disordered_torus_matches_enumeration(j in couplings(32), beta in 0.1f64..1.2, field in -0.3f64..0.3) {
        let mut spec = IsingSpec::uniform(2, 2, beta).with_field(field);
        spec.couplings = Couplings::PerEdge(j);
        let r = coarsegrain2d::run_free_energy(&spec, &TnsConfig::with_chi(16)).unwrap();
        let want = brute_force(&spec, &ImpurityKind::None).unwrap().log_abs();
        prop_assert!((r.log_z.log_abs() - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn log_z_is_gauge_invariant(
        j in couplings(32),
        eps in prop::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], 16),
        beta in 0.1f64..1.2,
    ) {
        let mut spec = IsingSpec::uniform(2, 2, beta).with_field(0.05);
        spec.couplings = Couplings::PerEdge(j);
        let cfg = TnsConfig::with_chi(4);
        let a = coarsegrain2d::run_free_energy(&spec, &cfg).unwrap().log_z.log_abs();
        let b = coarsegrain2d::run_free_energy(&gauge_transform(&spec, &eps), &cfg).unwrap().log_z.log_abs();
        prop_assert!((a - b).abs() < 1e-8 * a.abs(), "{} vs {}", a, b);
    }

    #[test]
    fn realizations_round_trip_bit_exactly(j in couplings(32), seed in any::<u64>()) {
        let lat = IsingSpec::uniform(2, 2, 1.0).lattice();
        let r = DisorderRealization::new(&lat, seed, "gaussian", &j);
        let back: DisorderRealization = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(back.couplings().unwrap(), j);
        prop_assert_eq!(back.seed, seed);
    }
}
