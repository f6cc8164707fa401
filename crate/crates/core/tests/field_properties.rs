use adaptive_pir::field::{
    is_nonsingular, lagrange_interpolate, poly_eval, solve_linear, FieldElement, FieldMatrix, FieldModulus,
};
use proptest::prelude::*;

const PRIMES: [u64; 5] = [2, 11, 13, 65537, 4_294_967_291];

fn gf(q: u64) -> FieldModulus {
    FieldModulus::new(q).unwrap()
}

/// Plain i128 modular arithmetic as the reference.
fn ref_mul(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

/// Cofactor-expansion determinant over integers mod q.
fn cofactor_det(m: &[Vec<u64>], q: u64) -> u64 {
    let n = m.len();
    if n == 1 {
        return m[0][0] % q;
    }
    let mut acc = 0u64;
    for c in 0..n {
        let minor: Vec<Vec<u64>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, &v)| v).collect())
            .collect();
        let term = ref_mul(m[0][c], cofactor_det(&minor, q), q);
        acc = if c % 2 == 0 { (acc + term) % q } else { (acc + q - term) % q };
    }
    acc
}

fn matrix_strategy(max_dim: usize, q: u64) -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1..=max_dim).prop_flat_map(move |n| prop::collection::vec(prop::collection::vec(0..q, n), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn product_times_inverse(pi in 0..PRIMES.len(), a in any::<u64>(), b in any::<u64>()) {
        let f = gf(PRIMES[pi]);
        let (a, b) = (f.elem(a), f.elem(b));
        prop_assume!(!b.is_zero());
        prop_assert_eq!((a * b) * b.inverse().unwrap(), a);
        prop_assert_eq!((a * b).value(), ref_mul(a.value(), b.value(), f.q()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn interpolation_recovers_polynomial(
        coeffs in prop::collection::vec(0u64..65537, 1..12),
        shift in 0u64..60000,
    ) {
        let f = gf(65537);
        let poly: Vec<FieldElement> = coeffs.iter().map(|&c| f.elem(c)).collect();
        let points: Vec<_> = (0..poly.len() as u64)
            .map(|i| {
                let x = f.elem(shift + 3 * i);
                (x, poly_eval(&poly, x).unwrap())
            })
            .collect();
        prop_assert_eq!(lagrange_interpolate(&points).unwrap(), poly);
    }

    #[test]
    fn solve_inverts_multiplication(
        rows in matrix_strategy(12, 65537),
        xs in prop::collection::vec(0u64..65537, 12),
    ) {
        let f = gf(65537);
        let a = FieldMatrix::from_values(&rows, f).unwrap();
        prop_assume!(is_nonsingular(&a).unwrap());
        let x: Vec<FieldElement> = xs[..rows.len()].iter().map(|&v| f.elem(v)).collect();
        let b = a.mul_vec(&x).unwrap();
        prop_assert_eq!(solve_linear(&a, &b).unwrap(), x);
    }

    #[test]
    fn nonsingularity_agrees_with_cofactor_determinant(rows in matrix_strategy(4, 5), q_small in prop::bool::ANY) {
        let q = if q_small { 5 } else { 13 };
        let rows: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|v| v % q).collect()).collect();
        let a = FieldMatrix::from_values(&rows, gf(q)).unwrap();
        let det = cofactor_det(&rows, q);
        prop_assert_eq!(a.determinant().unwrap().value(), det);
        prop_assert_eq!(is_nonsingular(&a).unwrap(), det != 0);
    }
}

#[test]
fn ten_thousand_inverse_samples_per_field() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for q in PRIMES {
        let f = gf(q);
        for _ in 0..10_000 {
            let a = f.random(&mut rng);
            let b = f.elem(rng.random_range(1..q));
            assert_eq!((a * b) * b.inverse().unwrap(), a, "q={q}");
        }
    }
}
