use std::collections::BTreeSet;

use adaptive_pir::field::is_prime;
use adaptive_pir::params::{
    default_modulus, derive_system, required_field_size, select_parameters, verify_constraints, ParamsError,
};
use adaptive_pir::protocol::rate_and_cost;
use adaptive_pir::query_array::{build_for_lambda, column_specs, Cell};
use num_rational::Ratio;
use proptest::prelude::*;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm_oracle(n: usize) -> usize {
    (1..=n).fold(1, |acc, i| acc / gcd(acc, i) * i)
}

#[test]
fn derived_sizes_for_small_lambda() {
    // (λ, P, Γ, F) worked by hand.
    let cases: [(usize, usize, &[usize], &[usize]); 4] = [
        (1, 1, &[1], &[1]),
        (2, 4, &[2, 2], &[2, 4]),
        (3, 18, &[6, 3, 9], &[6, 9, 18]),
        (4, 48, &[12, 4, 8, 24], &[12, 16, 24, 48]),
    ];
    for (lambda, p, gamma, f) in cases {
        let sys = derive_system(lambda + 5, 2, 2, 2, 1).unwrap();
        assert_eq!(sys.lambda(), lambda);
        assert_eq!(sys.p(), p);
        assert_eq!(sys.gamma(), gamma);
        assert_eq!(sys.thresholds(), f);
    }
}

#[test]
fn nine_server_rates() {
    let sys = derive_system(9, 2, 2, 2, 3).unwrap();
    let rates: Vec<_> = (0..4).map(|s| rate_and_cost(&sys, s).unwrap().rate).collect();
    assert_eq!(rates, [Ratio::new(4, 9), Ratio::new(3, 8), Ratio::new(2, 7), Ratio::new(1, 6)]);
}

#[test]
fn insufficient_servers_rejected() {
    assert!(matches!(
        derive_system(5, 2, 2, 2, 1),
        Err(ParamsError::InsufficientServers { n: 5, .. })
    ));
}

#[test]
fn canonical_points_feasible_for_all_small_systems() {
    for n in 3..=12 {
        for (k, x, t) in itertools::iproduct!(1..n, 0..n, 1..n) {
            let Ok(sys) = derive_system(n, k, x, t, 1) else { continue };
            let q = default_modulus(&sys);
            assert!(is_prime(q.q()) && q.q() >= required_field_size(&sys));
            let enc = select_parameters(&sys, q).unwrap();
            assert!(verify_constraints(&enc, &sys).unwrap().all_hold(), "({n},{k},{x},{t})");
            let mut used: BTreeSet<u64> = enc.alphas().iter().map(|a| a.value()).collect();
            for i in 0..sys.lambda() {
                for c in 0..k + x {
                    used.insert(enc.beta(i, c).value());
                }
            }
            assert_eq!(used.len() as u64, required_field_size(&sys), "({n},{k},{x},{t})");
        }
    }
}

proptest! {
    #[test]
    fn layer_sizes_match_closed_forms(n in 2usize..25, k in 1usize..6, x in 0usize..5, t in 1usize..5) {
        let Ok(sys) = derive_system(n, k, x, t, 1) else { return Ok(()) };
        let lambda = n - (k + x + t - 1);
        prop_assert_eq!(sys.lambda(), lambda);
        prop_assert_eq!(sys.p(), lambda * lcm_oracle(lambda));
        for s in 0..lambda {
            let f = sys.threshold(s);
            prop_assert_eq!(f * (lambda - s), sys.p());
            prop_assert_eq!(f, sys.gamma()[..=s].iter().sum::<usize>());
            if s > 0 {
                prop_assert!(f > sys.threshold(s - 1));
                prop_assert_eq!(sys.gamma()[s] % lambda, 0);
            }
            let rc = rate_and_cost(&sys, s).unwrap();
            prop_assert_eq!(rc.download, Ratio::from_integer(((n - s) * k * f) as u64));
            prop_assert_eq!(rc.rate, Ratio::new(1, 1) - Ratio::new((k + x + t - 1) as u64, (n - s) as u64));
        }
        prop_assert_eq!(sys.threshold(lambda - 1), sys.p());
    }
}

#[test]
fn array_structure_for_lambda_up_to_six() {
    for lambda in 1..=6 {
        let a = build_for_lambda(lambda).unwrap();
        assert_eq!(a, build_for_lambda(lambda).unwrap(), "deterministic");
        let mut seen_before: BTreeSet<usize> = BTreeSet::new();
        for h in 0..lambda {
            let mut this_layer = BTreeSet::new();
            for j in 0..a.gamma()[h] {
                let stars: BTreeSet<usize> = (0..h).map(|d| (j + lambda - d % lambda) % lambda).collect();
                for i in 0..lambda {
                    match a.layer_cell(h, i, j) {
                        Cell::Star => assert!(stars.contains(&i), "λ={lambda} U^{h} ({i},{j}) star"),
                        Cell::Int(v) => {
                            assert!(!stars.contains(&i), "λ={lambda} U^{h} ({i},{j}) int");
                            assert_eq!(v % lambda, i, "row residue");
                            assert!(v < a.p());
                            if h > 0 {
                                assert!(seen_before.contains(&v), "λ={lambda} U^{h} value {v}");
                            }
                            this_layer.insert(v);
                        }
                    }
                }
            }
            seen_before.extend(this_layer);
        }
    }
}

#[test]
fn column_specs_agree_with_array() {
    for lambda in 1..=5 {
        let a = build_for_lambda(lambda).unwrap();
        let specs = column_specs(&a).unwrap();
        assert_eq!(specs.len(), a.p());
        for spec in &specs {
            let (h, j) = a.locate(spec.global);
            assert_eq!((spec.layer, spec.local), (h, j));
            assert_eq!(spec.rows.len(), lambda - h);
            assert_eq!(spec.compensation.len(), lambda - h - 1);
            for (&row, &res) in spec.rows.iter().zip(&spec.residues) {
                assert_eq!(row % lambda, res);
                assert_eq!(a.cell(res, spec.global), Cell::Int(row));
            }
        }
    }
}
