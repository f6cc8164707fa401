//! System parameters and the choice of evaluation points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, FieldMatrix, FieldModulus};

/// Largest supported layer count; `P = λ·lcm(1..λ)` is already 332640 at 12.
pub const MAX_LAMBDA: usize = 12;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("need N > K+X+T-1 servers (N={n}, K={k}, X={x}, T={t})")]
    InsufficientServers { n: usize, k: usize, x: usize, t: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("field GF({q}) is smaller than the required size {bound}")]
    FieldTooSmall { q: u64, bound: u64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("malformed parameter document: {0}")]
    Json(#[from] serde_json::Error),
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm_upto(n: usize) -> usize {
    (1..=n).fold(1, |acc, v| acc / gcd(acc, v) * v)
}

/// `(N, K, X, T, M)` with the quantities derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SystemParams {
    n: usize,
    k: usize,
    x: usize,
    t: usize,
    m: usize,
    lambda: usize,
    p: usize,
    gamma: Vec<usize>,
    thresholds: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "X")]
    x: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "M")]
    m: usize,
}

impl TryFrom<RawParams> for SystemParams {
    type Error = ParamsError;
    fn try_from(r: RawParams) -> Result<Self, ParamsError> {
        derive_system(r.n, r.k, r.x, r.t, r.m)
    }
}

impl From<SystemParams> for RawParams {
    fn from(p: SystemParams) -> Self {
        RawParams {
            n: p.n,
            k: p.k,
            x: p.x,
            t: p.t,
            m: p.m,
        }
    }
}

/// Validates `(N, K, X, T, M)` and derives λ, P, the layer widths Γ and the
/// cumulative response thresholds F.
pub fn derive_system(
    n: usize,
    k: usize,
    x: usize,
    t: usize,
    m: usize,
) -> Result<SystemParams, ParamsError> {
    if k == 0 {
        return Err(ParamsError::Invalid("K must be at least 1".into()));
    }
    if t == 0 {
        return Err(ParamsError::Invalid("T must be at least 1".into()));
    }
    if m == 0 {
        return Err(ParamsError::Invalid("M must be at least 1".into()));
    }
    if n < k + x + t {
        return Err(ParamsError::InsufficientServers { n, k, x, t });
    }
    let lambda = n - (k + x + t - 1);
    if lambda > MAX_LAMBDA {
        return Err(ParamsError::Invalid(format!(
            "λ = {lambda} exceeds the supported maximum {MAX_LAMBDA}"
        )));
    }
    let p = lambda * lcm_upto(lambda);
    let gamma: Vec<usize> = (0..lambda)
        .map(|h| {
            if h == 0 {
                p / lambda
            } else {
                p / ((lambda - h) * (lambda - h + 1))
            }
        })
        .collect();
    let thresholds = gamma
        .iter()
        .scan(0, |acc, g| {
            *acc += g;
            Some(*acc)
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(thresholds[lambda - 1], p);
    Ok(SystemParams {
        n,
        k,
        x,
        t,
        m,
        lambda,
        p,
        gamma,
        thresholds,
    })
}

impl SystemParams {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn x(&self) -> usize {
        self.x
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn m(&self) -> usize {
        self.m
    }
    /// Number of layers; one more than the largest tolerated straggler count.
    pub fn lambda(&self) -> usize {
        self.lambda
    }
    /// Rows per file.
    pub fn p(&self) -> usize {
        self.p
    }
    /// Column count Γ^h of each layer.
    pub fn gamma(&self) -> &[usize] {
        &self.gamma
    }
    /// `F_S`: responses a server sends before layers `0..=S` are complete.
    pub fn thresholds(&self) -> &[usize] {
        &self.thresholds
    }
    pub fn threshold(&self, s: usize) -> usize {
        self.thresholds[s]
    }

    /// Same system with a different number of files.
    pub fn with_files(&self, m: usize) -> Result<SystemParams, ParamsError> {
        derive_system(self.n, self.k, self.x, self.t, m)
    }
}

/// Minimum field size `N + max{K, λ}` admitting the canonical point choice.
pub fn required_field_size(params: &SystemParams) -> u64 {
    (params.n + params.k.max(params.lambda)) as u64
}

/// Default modulus: the smallest prime at or above [`required_field_size`].
pub fn default_modulus(params: &SystemParams) -> FieldModulus {
    crate::field::smallest_prime_at_least(required_field_size(params))
}

/// Evaluation points `α_n` (servers) and interpolation grid `β` (λ × (K+X)).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EncodingDoc", into = "EncodingDoc")]
pub struct EncodingParameters {
    modulus: FieldModulus,
    alphas: Vec<FieldElement>,
    betas: FieldMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodingDoc {
    q: u64,
    alphas: Vec<u64>,
    betas: Vec<Vec<u64>>,
}

impl From<EncodingParameters> for EncodingDoc {
    fn from(e: EncodingParameters) -> Self {
        EncodingDoc {
            q: e.modulus.q(),
            alphas: e.alphas.iter().map(|a| a.value()).collect(),
            betas: e.betas.to_values(),
        }
    }
}

impl TryFrom<EncodingDoc> for EncodingParameters {
    type Error = ParamsError;
    fn try_from(doc: EncodingDoc) -> Result<Self, ParamsError> {
        let modulus = FieldModulus::new(doc.q)?;
        let check = |v: u64| {
            if v < doc.q {
                Ok(modulus.elem(v))
            } else {
                Err(ParamsError::Invalid(format!("{v} is not an element of GF({})", doc.q)))
            }
        };
        let alphas = doc.alphas.iter().map(|&v| check(v)).collect::<Result<Vec<_>, _>>()?;
        for row in &doc.betas {
            for &v in row {
                check(v)?;
            }
        }
        let betas = FieldMatrix::from_values(&doc.betas, modulus)?;
        EncodingParameters::new(modulus, alphas, betas)
    }
}

impl EncodingParameters {
    pub fn new(
        modulus: FieldModulus,
        alphas: Vec<FieldElement>,
        betas: FieldMatrix,
    ) -> Result<Self, ParamsError> {
        if betas.modulus() != modulus || alphas.iter().any(|a| a.modulus() != modulus) {
            return Err(ParamsError::ShapeMismatch(
                "all points must live in the same field".into(),
            ));
        }
        Ok(EncodingParameters {
            modulus,
            alphas,
            betas,
        })
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }
    pub fn alphas(&self) -> &[FieldElement] {
        &self.alphas
    }
    pub fn alpha(&self, n: usize) -> FieldElement {
        self.alphas[n]
    }
    pub fn betas(&self) -> &FieldMatrix {
        &self.betas
    }
    pub fn beta(&self, i: usize, k: usize) -> FieldElement {
        self.betas.get(i, k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ParamsError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn check_shape(&self, params: &SystemParams) -> Result<(), ParamsError> {
        if self.alphas.len() != params.n {
            return Err(ParamsError::ShapeMismatch(format!(
                "expected {} alphas, got {}",
                params.n,
                self.alphas.len()
            )));
        }
        if self.betas.rows() != params.lambda || self.betas.cols() != params.k + params.x {
            return Err(ParamsError::ShapeMismatch(format!(
                "expected a {}x{} beta grid, got {}x{}",
                params.lambda,
                params.k + params.x,
                self.betas.rows(),
                self.betas.cols()
            )));
        }
        Ok(())
    }
}

/// Canonical points: `α_n = σ_n`, noise points `β_{i,K+j} = α_j`, and data
/// points taken from `σ_N, σ_{N+1}, …` shifted cyclically across rows
/// (when `K > λ`) or across columns (when `K ≤ λ`).
pub fn select_parameters(
    params: &SystemParams,
    modulus: FieldModulus,
) -> Result<EncodingParameters, ParamsError> {
    let bound = required_field_size(params);
    if modulus.q() < bound {
        return Err(ParamsError::FieldTooSmall {
            q: modulus.q(),
            bound,
        });
    }
    let (n, k, x, lambda) = (params.n, params.k, params.x, params.lambda);
    let sigma = |i: usize| modulus.elem(i as u64);
    let alphas: Vec<_> = (0..n).map(sigma).collect();
    let fresh = |i: usize| sigma(n + i);
    let betas = FieldMatrix::from_fn(lambda, k + x, modulus, |i, c| {
        if c >= k {
            alphas[c - k]
        } else if k > lambda {
            // row 0 holds K fresh points, row i is row 0 rotated by i
            fresh((c + i) % k)
        } else {
            // column 0 holds λ fresh points, column c is column 0 rotated by c
            fresh((i + c) % lambda)
        }
    });
    EncodingParameters::new(modulus, alphas, betas)
}

/// A point in the parameter set named by its role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Alpha(usize),
    Beta(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub holds: bool,
    /// First colliding pair, if any.
    pub witness: Option<(Position, Position)>,
}

impl ConstraintCheck {
    fn from_witness(witness: Option<(Position, Position)>) -> Self {
        ConstraintCheck {
            holds: witness.is_none(),
            witness,
        }
    }
}

/// Outcome of checking the four distinctness constraints on `(α, β)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Entries within each β row are distinct.
    pub p0: ConstraintCheck,
    /// Entries within each of the first K β columns are distinct.
    pub p1: ConstraintCheck,
    /// The α are distinct.
    pub p2: ConstraintCheck,
    /// No α equals a data point β_{i,k}, k < K.
    pub p3: ConstraintCheck,
}

impl ConstraintReport {
    pub fn all_hold(&self) -> bool {
        self.p0.holds && self.p1.holds && self.p2.holds && self.p3.holds
    }
}

pub fn verify_constraints(
    enc: &EncodingParameters,
    params: &SystemParams,
) -> Result<ConstraintReport, ParamsError> {
    enc.check_shape(params)?;
    let (k, x, lambda, n) = (params.k, params.x, params.lambda, params.n);
    let b = &enc.betas;

    let p0 = (0..lambda).find_map(|i| {
        (0..k + x).find_map(|c| {
            (c + 1..k + x)
                .find(|&c2| b.get(i, c) == b.get(i, c2))
                .map(|c2| (Position::Beta(i, c), Position::Beta(i, c2)))
        })
    });
    let p1 = (0..k).find_map(|c| {
        (0..lambda).find_map(|i| {
            (i + 1..lambda)
                .find(|&i2| b.get(i, c) == b.get(i2, c))
                .map(|i2| (Position::Beta(i, c), Position::Beta(i2, c)))
        })
    });
    let p2 = (0..n).find_map(|a| {
        (a + 1..n)
            .find(|&a2| enc.alphas[a] == enc.alphas[a2])
            .map(|a2| (Position::Alpha(a), Position::Alpha(a2)))
    });
    let p3 = (0..n).find_map(|a| {
        (0..lambda).find_map(|i| {
            (0..k)
                .find(|&c| enc.alphas[a] == b.get(i, c))
                .map(|c| (Position::Alpha(a), Position::Beta(i, c)))
        })
    });
    Ok(ConstraintReport {
        p0: ConstraintCheck::from_witness(p0),
        p1: ConstraintCheck::from_witness(p1),
        p2: ConstraintCheck::from_witness(p2),
        p3: ConstraintCheck::from_witness(p3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn derive_examples() {
        let p = derive_system(8, 2, 2, 2, 3).unwrap();
        assert_eq!((p.lambda(), p.p()), (3, 18));
        assert_eq!(p.gamma(), &[6, 3, 9]);
        assert_eq!(p.thresholds(), &[6, 9, 18]);

        let p = derive_system(6, 2, 2, 2, 1).unwrap();
        assert_eq!((p.lambda(), p.p()), (1, 1));
        assert_eq!(p.gamma(), &[1]);
        assert_eq!(p.thresholds(), &[1]);

        let p = derive_system(9, 2, 2, 2, 1).unwrap();
        assert_eq!((p.lambda(), p.p()), (4, 48));
        assert_eq!(p.gamma(), &[12, 4, 8, 24]);
    }

    #[test]
    fn derive_rejects() {
        assert!(matches!(
            derive_system(5, 2, 2, 2, 1),
            Err(ParamsError::InsufficientServers { .. })
        ));
        assert!(matches!(derive_system(5, 0, 1, 1, 1), Err(ParamsError::Invalid(_))));
        assert!(matches!(derive_system(5, 1, 1, 0, 1), Err(ParamsError::Invalid(_))));
        assert!(matches!(derive_system(5, 1, 1, 1, 0), Err(ParamsError::Invalid(_))));
    }

    #[test]
    fn gamma_thresholds_consistent() {
        for lambda in 1..=8 {
            let p = derive_system(lambda + 2, 1, 1, 1, 1).unwrap();
            assert_eq!(p.lambda(), lambda);
            assert_eq!(p.gamma().iter().sum::<usize>(), p.p());
            assert!(p.thresholds().windows(2).all(|w| w[0] < w[1]));
            assert_eq!(*p.thresholds().last().unwrap(), p.p());
            // F_S = P/(λ-S)
            for s in 0..lambda {
                assert_eq!(p.threshold(s), p.p() / (lambda - s));
            }
        }
    }

    #[test]
    fn field_size_examples() {
        assert_eq!(required_field_size(&derive_system(8, 2, 2, 2, 1).unwrap()), 11);
        assert_eq!(required_field_size(&derive_system(4, 1, 1, 1, 1).unwrap()), 6);
        assert_eq!(required_field_size(&derive_system(5, 4, 0, 1, 1).unwrap()), 9);
    }

    #[test]
    fn gf11_example_points() {
        let params = derive_system(8, 2, 2, 2, 3).unwrap();
        let q = FieldModulus::new(11).unwrap();
        let enc = select_parameters(&params, q).unwrap();
        let alphas: Vec<u64> = enc.alphas().iter().map(|a| a.value()).collect();
        assert_eq!(alphas, (0..8).collect::<Vec<_>>());
        assert_eq!(
            enc.betas().to_values(),
            vec![vec![8, 9, 0, 1], vec![9, 10, 0, 1], vec![10, 8, 0, 1]]
        );
        assert!(verify_constraints(&enc, &params).unwrap().all_hold());
    }

    #[test]
    fn smallest_shape() {
        let params = derive_system(2, 1, 0, 1, 1).unwrap();
        assert_eq!(params.lambda(), 1);
        let q = default_modulus(&params);
        let enc = select_parameters(&params, q).unwrap();
        assert_eq!(enc.betas().rows(), 1);
        assert_eq!(enc.betas().cols(), 1);
        assert!(!enc.alphas().contains(&enc.beta(0, 0)));
    }

    #[test]
    fn wide_branch_rotates_rows() {
        let params = derive_system(6, 3, 0, 2, 1).unwrap();
        assert_eq!(params.lambda(), 2);
        let enc = select_parameters(&params, default_modulus(&params)).unwrap();
        let b = enc.betas();
        for c in 0..3 {
            assert_eq!(b.get(1, c), b.get(0, (c + 1) % 3));
        }
        assert!(verify_constraints(&enc, &params).unwrap().all_hold());
    }

    #[test]
    fn too_small_field() {
        let params = derive_system(8, 2, 2, 2, 1).unwrap();
        let err = select_parameters(&params, FieldModulus::new(7).unwrap()).unwrap_err();
        assert!(matches!(err, ParamsError::FieldTooSmall { q: 7, bound: 11 }));
    }

    #[test]
    fn forced_violations() {
        let params = derive_system(8, 2, 2, 2, 3).unwrap();
        let q = FieldModulus::new(11).unwrap();
        let enc = select_parameters(&params, q).unwrap();

        let mut alphas = enc.alphas().to_vec();
        alphas[5] = alphas[2];
        let bad = EncodingParameters::new(q, alphas, enc.betas().clone()).unwrap();
        let rep = verify_constraints(&bad, &params).unwrap();
        assert!(!rep.p2.holds);
        assert_eq!(rep.p2.witness, Some((Position::Alpha(2), Position::Alpha(5))));

        let mut betas = enc.betas().clone();
        betas.set(0, 0, enc.alpha(0));
        let bad = EncodingParameters::new(q, enc.alphas().to_vec(), betas).unwrap();
        let rep = verify_constraints(&bad, &params).unwrap();
        assert!(!rep.p3.holds);
        assert_eq!(rep.p3.witness, Some((Position::Alpha(0), Position::Beta(0, 0))));
        // β_{0,0} now also collides with the noise point β_{0,2} = α_0
        assert!(!rep.p0.holds);
    }

    #[test]
    fn canonical_sweep_is_feasible_and_tight() {
        for n in 3..=12 {
            for k in 1..n {
                for x in 0..n {
                    for t in 1..n {
                        let Ok(params) = derive_system(n, k, x, t, 1) else {
                            continue;
                        };
                        let q = default_modulus(&params);
                        let enc = select_parameters(&params, q).unwrap();
                        assert!(verify_constraints(&enc, &params).unwrap().all_hold());
                        let used: BTreeSet<u64> = enc
                            .alphas()
                            .iter()
                            .chain(enc.betas().entries())
                            .map(|e| e.value())
                            .collect();
                        assert_eq!(used.len() as u64, required_field_size(&params));
                    }
                }
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let params = derive_system(8, 2, 2, 2, 3).unwrap();
        let enc = select_parameters(&params, default_modulus(&params)).unwrap();
        let s = enc.to_json();
        assert_eq!(EncodingParameters::from_json(&s).unwrap(), enc);
        assert!(EncodingParameters::from_json(r#"{"q":10,"alphas":[],"betas":[]}"#).is_err());
        assert!(EncodingParameters::from_json(r#"{"q":11,"alphas":[11],"betas":[]}"#).is_err());

        let p: SystemParams = serde_json::from_str(r#"{"N":8,"K":2,"X":2,"T":2,"M":3}"#).unwrap();
        assert_eq!(p, params);
        assert!(serde_json::from_str::<SystemParams>(r#"{"N":3,"K":2,"X":2,"T":2,"M":3}"#).is_err());
    }
}
