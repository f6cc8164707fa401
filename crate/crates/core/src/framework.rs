//! Coding frameworks: the storage basis `b_{i,k}(x)`, the query basis
//! `v^{(R)}_{i,k,t}(x)` and the decoder that recovers a partial file from
//! server answers. Two interchangeable constructions are provided, Lagrange
//! codes and Cauchy-Vandermonde (CSA) codes.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{lagrange_interpolate, poly_eval, FieldElement, FieldError, FieldMatrix};
use crate::params::{EncodingParameters, ParamsError, SystemParams};

/// Upper bound on any single subset enumeration during certification.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum FrameworkError {
    #[error("basis evaluated at one of its poles ({point})")]
    PoleHit { point: u64 },
    #[error("basis points coincide ({point}); the encoding parameters are degenerate")]
    DegeneratePoints { point: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("need {needed} responses, got {got}")]
    InsufficientResponses { needed: usize, got: usize },
    #[error("decoding system is singular")]
    SingularSystem,
    #[error("subset enumeration of size {count} exceeds the limit {ENUMERATION_LIMIT}")]
    EnumerationTooLarge { count: u128 },
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub type Result<T> = std::result::Result<T, FrameworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameworkKind {
    Lagrange,
    #[serde(rename = "CSA")]
    Csa,
}

impl std::str::FromStr for FrameworkKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lagrange" => Ok(FrameworkKind::Lagrange),
            "csa" => Ok(FrameworkKind::Csa),
            other => Err(format!("unknown framework {other:?} (expected lagrange or csa)")),
        }
    }
}

impl std::fmt::Display for FrameworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrameworkKind::Lagrange => "Lagrange",
            FrameworkKind::Csa => "CSA",
        })
    }
}

/// A request for rows `R` of the (folded) file `theta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialFileRequest {
    pub theta: usize,
    pub rows: Vec<usize>,
}

impl PartialFileRequest {
    pub fn new(theta: usize, mut rows: Vec<usize>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        PartialFileRequest { theta, rows }
    }

    pub fn r(&self) -> usize {
        self.rows.len()
    }
}

fn degenerate(e: FieldError, point: FieldElement) -> FrameworkError {
    match e {
        FieldError::DivisionByZero => FrameworkError::DegeneratePoints {
            point: point.value(),
        },
        other => other.into(),
    }
}

/// Basis functions for one framework over fixed encoding parameters.
#[derive(Debug, Clone)]
pub struct BasisSet {
    kind: FrameworkKind,
    enc: EncodingParameters,
    params: SystemParams,
}

impl BasisSet {
    pub fn new(kind: FrameworkKind, enc: EncodingParameters, params: SystemParams) -> Result<Self> {
        enc.check_shape(&params)?;
        Ok(BasisSet { kind, enc, params })
    }

    pub fn kind(&self) -> FrameworkKind {
        self.kind
    }
    pub fn enc(&self) -> &EncodingParameters {
        &self.enc
    }
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    fn check_rows(&self, rows: &[usize]) -> Result<()> {
        let lambda = self.params.lambda();
        if rows.is_empty() || rows.len() > lambda {
            return Err(FrameworkError::InvalidRequest(format!(
                "need between 1 and {lambda} rows, got {}",
                rows.len()
            )));
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) || rows.iter().any(|&i| i >= lambda) {
            return Err(FrameworkError::InvalidRequest(format!(
                "rows {rows:?} must be strictly increasing and below {lambda}"
            )));
        }
        Ok(())
    }

    /// `b_{i,k}(x)` for row `i < λ` and `k < K+X`.
    pub fn storage_basis_eval(&self, i: usize, k: usize, x: FieldElement) -> Result<FieldElement> {
        let kx = self.params.k() + self.params.x();
        if i >= self.params.lambda() || k >= kx {
            return Err(FrameworkError::InvalidRequest(format!("no storage basis ({i}, {k})")));
        }
        let field = self.enc.modulus();
        match self.kind {
            FrameworkKind::Lagrange => {
                let bk = self.enc.beta(i, k);
                let mut num = field.one();
                let mut den = field.one();
                for j in (0..kx).filter(|&j| j != k) {
                    let bj = self.enc.beta(i, j);
                    num *= x - bj;
                    den *= bk - bj;
                }
                num.try_div(den).map_err(|e| degenerate(e, bk))
            }
            FrameworkKind::Csa => {
                if k < self.params.k() {
                    let bk = self.enc.beta(i, k);
                    (x - bk)
                        .inverse()
                        .map_err(|_| FrameworkError::PoleHit { point: x.value() })
                } else {
                    Ok(x.pow((k - self.params.k()) as u64))
                }
            }
        }
    }

    /// `v^{(R)}_{i,k,t}(x)` for `i ∈ R`, `k < K` and `t ≤ T`; `t = T` is the
    /// term that carries the desired symbol.
    pub fn query_basis_eval(
        &self,
        rows: &[usize],
        i: usize,
        k: usize,
        t: usize,
        x: FieldElement,
    ) -> Result<FieldElement> {
        self.check_rows(rows)?;
        let (kk, tt) = (self.params.k(), self.params.t());
        if !rows.contains(&i) || k >= kk || t > tt {
            return Err(FrameworkError::InvalidRequest(format!(
                "no query basis (i={i}, k={k}, t={t}) for rows {rows:?}"
            )));
        }
        let field = self.enc.modulus();
        let alpha = |j: usize| self.enc.alpha(j);
        match self.kind {
            FrameworkKind::Lagrange => {
                let mut num = field.one();
                let mut den = field.one();
                if t < tt {
                    let at = alpha(t);
                    for j in (0..tt).filter(|&j| j != t) {
                        num *= x - alpha(j);
                        den *= at - alpha(j);
                    }
                    for &j in rows {
                        let b = self.enc.beta(j, k);
                        num *= x - b;
                        den *= at - b;
                    }
                    num.try_div(den).map_err(|e| degenerate(e, at))
                } else {
                    let bi = self.enc.beta(i, k);
                    for &j in rows.iter().filter(|&&j| j != i) {
                        let b = self.enc.beta(j, k);
                        num *= x - b;
                        den *= bi - b;
                    }
                    for j in 0..tt {
                        num *= x - alpha(j);
                        den *= bi - alpha(j);
                    }
                    num.try_div(den).map_err(|e| degenerate(e, bi))
                }
            }
            FrameworkKind::Csa => {
                if t < tt {
                    let prod = (0..kk).fold(field.one(), |acc, j| acc * (x - self.enc.beta(i, j)));
                    Ok(x.pow(t as u64) * prod)
                } else {
                    let bk = self.enc.beta(i, k);
                    let mut num = field.one();
                    let mut den = field.one();
                    for j in (0..kk).filter(|&j| j != k) {
                        let b = self.enc.beta(i, j);
                        num *= x - b;
                        den *= bk - b;
                    }
                    num.try_div(den).map_err(|e| degenerate(e, bk))
                }
            }
        }
    }

    /// Storage share `f_i(x) = Σ_k w_k b_{i,k}(x) + Σ_j z_j b_{i,K+j}(x)`.
    pub fn storage_share(
        &self,
        i: usize,
        data: &[FieldElement],
        noise: &[FieldElement],
        x: FieldElement,
    ) -> Result<FieldElement> {
        let (kk, xx) = (self.params.k(), self.params.x());
        if data.len() != kk || noise.len() != xx {
            return Err(FrameworkError::InvalidRequest(format!(
                "storage share needs {kk} data and {xx} noise symbols"
            )));
        }
        let mut acc = self.enc.modulus().zero();
        for (k, &c) in data.iter().chain(noise).enumerate() {
            acc += c * self.storage_basis_eval(i, k, x)?;
        }
        Ok(acc)
    }

    /// Query share `q_{i,k}(x) = Σ_t z_t v_{i,k,t}(x) [+ v_{i,k,T}(x)]`.
    pub fn query_share(
        &self,
        rows: &[usize],
        i: usize,
        k: usize,
        noise: &[FieldElement],
        desired: bool,
        x: FieldElement,
    ) -> Result<FieldElement> {
        let tt = self.params.t();
        if noise.len() != tt {
            return Err(FrameworkError::InvalidRequest(format!(
                "query share needs {tt} noise symbols"
            )));
        }
        let mut acc = self.enc.modulus().zero();
        for (t, &z) in noise.iter().enumerate() {
            acc += z * self.query_basis_eval(rows, i, k, t, x)?;
        }
        if desired {
            acc += self.query_basis_eval(rows, i, k, tt, x)?;
        }
        Ok(acc)
    }

    /// Number of server responses needed with `known` rows already in hand.
    pub fn responses_needed(&self, r: usize, known: usize) -> usize {
        let p = &self.params;
        p.k() + p.x() + p.t() + r - 1 - known
    }

    /// The square system solved by the CSA decoder for sub-response `k`:
    /// Cauchy columns `1/(α_n − β_{i,k})` for the unknown rows, then
    /// Vandermonde columns `α_n^j`, `j < K+X+T−1`.
    pub fn csa_system_matrix(
        &self,
        unknown_rows: &[usize],
        k: usize,
        servers: &[usize],
    ) -> Result<FieldMatrix> {
        let p = &self.params;
        let width = unknown_rows.len() + p.k() + p.x() + p.t() - 1;
        if servers.len() != width {
            return Err(FrameworkError::InvalidRequest(format!(
                "system needs {width} servers, got {}",
                servers.len()
            )));
        }
        let field = self.enc.modulus();
        let mut entries = Vec::with_capacity(width * width);
        for &n in servers {
            let a = self.enc.alpha(n);
            for &i in unknown_rows {
                entries.push(
                    (a - self.enc.beta(i, k))
                        .inverse()
                        .map_err(|_| FrameworkError::PoleHit { point: a.value() })?,
                );
            }
            entries.extend((0..width - unknown_rows.len()).map(|j| a.pow(j as u64)));
        }
        Ok(FieldMatrix::new(width, width, field, entries)?)
    }

    /// Recovers rows `req.rows` of the desired file from server answers.
    ///
    /// `responses` pairs a server index with its `K` sub-responses; only the
    /// first [`responses_needed`](Self::responses_needed) are used. Rows in
    /// `known` are copied to the output verbatim.
    pub fn decode_partial(
        &self,
        req: &PartialFileRequest,
        responses: &[(usize, Vec<FieldElement>)],
        known: &BTreeMap<usize, Vec<FieldElement>>,
    ) -> Result<FieldMatrix> {
        self.check_rows(&req.rows)?;
        let (n_servers, kk) = (self.params.n(), self.params.k());
        if let Some(i) = known.keys().find(|i| !req.rows.contains(i)) {
            return Err(FrameworkError::InvalidRequest(format!("known row {i} is not requested")));
        }
        if known.len() == req.r() {
            return Err(FrameworkError::InvalidRequest("every requested row is already known".into()));
        }
        if known.values().any(|v| v.len() != kk) || responses.iter().any(|(_, v)| v.len() != kk) {
            return Err(FrameworkError::InvalidRequest(format!("rows and responses carry {kk} symbols")));
        }
        let needed = self.responses_needed(req.r(), known.len());
        if responses.len() < needed {
            return Err(FrameworkError::InsufficientResponses {
                needed,
                got: responses.len(),
            });
        }
        let used = &responses[..needed];
        let servers: Vec<usize> = used.iter().map(|(n, _)| *n).collect();
        if servers.iter().any(|&n| n >= n_servers) || !servers.iter().all_unique() {
            return Err(FrameworkError::InvalidRequest(format!(
                "responses must come from distinct servers below {n_servers}"
            )));
        }
        let unknown: Vec<usize> = req.rows.iter().copied().filter(|i| !known.contains_key(i)).collect();

        let field = self.enc.modulus();
        let mut out = FieldMatrix::zeros(req.r(), kk, field);
        for (pos, &i) in req.rows.iter().enumerate() {
            if let Some(row) = known.get(&i) {
                for (k, &v) in row.iter().enumerate() {
                    out.set(pos, k, v);
                }
            }
        }

        for k in 0..kk {
            let recovered: Vec<FieldElement> = match self.kind {
                FrameworkKind::Lagrange => {
                    let mut points: Vec<_> =
                        used.iter().map(|(n, a)| (self.enc.alpha(*n), a[k])).collect();
                    points.extend(known.iter().map(|(&i, w)| (self.enc.beta(i, k), w[k])));
                    let poly = lagrange_interpolate(&points).map_err(|e| match e {
                        FieldError::DuplicateAbscissa(_) => FrameworkError::SingularSystem,
                        other => other.into(),
                    })?;
                    unknown
                        .iter()
                        .map(|&i| poly_eval(&poly, self.enc.beta(i, k)))
                        .collect::<std::result::Result<_, _>>()?
                }
                FrameworkKind::Csa => {
                    let system = self.csa_system_matrix(&unknown, k, &servers)?;
                    let mut rhs = Vec::with_capacity(needed);
                    for (n, a) in used {
                        let alpha = self.enc.alpha(*n);
                        let mut v = a[k];
                        for (&i, w) in known {
                            let inv = (alpha - self.enc.beta(i, k))
                                .inverse()
                                .map_err(|_| FrameworkError::PoleHit { point: alpha.value() })?;
                            v -= w[k] * inv;
                        }
                        rhs.push(v);
                    }
                    let sol = system.solve(&rhs).map_err(|e| match e {
                        FieldError::SingularMatrix => FrameworkError::SingularSystem,
                        other => other.into(),
                    })?;
                    sol[..unknown.len()].to_vec()
                }
            };
            for (&i, v) in unknown.iter().zip(recovered) {
                let pos = req.rows.iter().position(|&j| j == i).expect("unknown ⊆ R");
                out.set(pos, k, v);
            }
        }
        Ok(out)
    }

    /// Answers of every server to a single request: `A_{n,k} = Σ_m Σ_{i∈R}
    /// q^{(m)}_{i,k}(α_n) f^{(m)}_i(α_n)`. `files[m]` is a λ × K matrix,
    /// `storage_noise[m][i]` has X symbols and `query_noise[m][i][k]` has T.
    pub fn answers(
        &self,
        req: &PartialFileRequest,
        files: &[FieldMatrix],
        storage_noise: &[Vec<Vec<FieldElement>>],
        query_noise: &[Vec<Vec<Vec<FieldElement>>>],
    ) -> Result<Vec<Vec<FieldElement>>> {
        let field = self.enc.modulus();
        let kk = self.params.k();
        (0..self.params.n())
            .map(|n| {
                let x = self.enc.alpha(n);
                let mut out = vec![field.zero(); kk];
                for (m, file) in files.iter().enumerate() {
                    for (pos, &i) in req.rows.iter().enumerate() {
                        let f = self.storage_share(i, file.row(i), &storage_noise[m][i], x)?;
                        for (k, o) in out.iter_mut().enumerate() {
                            let q = self.query_share(
                                &req.rows,
                                i,
                                k,
                                &query_noise[m][pos][k],
                                m == req.theta,
                                x,
                            )?;
                            *o += q * f;
                        }
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// Result of [`certify_framework`]; tied to the exact parameters it names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkCertificate {
    pub kind: FrameworkKind,
    pub params: SystemParams,
    pub encoding: EncodingParameters,
    pub f0: bool,
    pub f1: bool,
    pub f2: bool,
    pub f3: bool,
    pub witnesses: Vec<Witness>,
}

impl FrameworkCertificate {
    pub fn all_hold(&self) -> bool {
        self.f0 && self.f1 && self.f2 && self.f3
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// The first failing instance of a condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub condition: String,
    pub row: Option<usize>,
    pub k: Option<usize>,
    pub rows: Option<Vec<usize>>,
    pub servers: Vec<usize>,
    pub known: Vec<usize>,
    pub matrix: Option<Vec<Vec<u64>>>,
    pub detail: String,
}

impl Witness {
    fn new(condition: &str, servers: Vec<usize>, detail: impl Into<String>) -> Self {
        Witness {
            condition: condition.into(),
            row: None,
            k: None,
            rows: None,
            servers,
            known: Vec::new(),
            matrix: None,
            detail: detail.into(),
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn guard(count: u128) -> Result<()> {
    if count > ENUMERATION_LIMIT {
        Err(FrameworkError::EnumerationTooLarge { count })
    } else {
        Ok(())
    }
}

/// Evaluates a basis matrix (rows = servers, cols = basis index) and reports
/// a witness when it is singular or hits a pole.
fn check_matrix(
    field: crate::field::FieldModulus,
    servers: &[usize],
    cols: usize,
    mut entry: impl FnMut(usize, usize) -> Result<FieldElement>,
) -> Option<(Option<FieldMatrix>, String)> {
    let mut entries = Vec::with_capacity(servers.len() * cols);
    for &n in servers {
        for c in 0..cols {
            match entry(n, c) {
                Ok(v) => entries.push(v),
                Err(e) => return Some((None, e.to_string())),
            }
        }
    }
    let m = FieldMatrix::new(servers.len(), cols, field, entries).expect("shape is consistent");
    match m.is_nonsingular() {
        Ok(true) => None,
        _ => Some((Some(m), "singular".into())),
    }
}

fn nonempty_row_sets(lambda: usize) -> Vec<Vec<usize>> {
    (1..=lambda).flat_map(|r| (0..lambda).combinations(r)).collect()
}

/// Checks all four framework conditions. Matrix conditions are checked over
/// every subset. Decodability is checked over every response subset and every
/// known-row subset, for the all-zero file and `exhaustive_trials` random
/// files drawn from `seed`.
pub fn certify_framework(
    basis: &BasisSet,
    exhaustive_trials: usize,
    seed: u64,
) -> Result<FrameworkCertificate> {
    let p = basis.params();
    let (n, kk, xx, tt, lambda) = (p.n(), p.k(), p.x(), p.t(), p.lambda());
    let field = basis.enc().modulus();
    guard(binomial(n, kk + xx))?;
    guard(binomial(n, xx))?;
    guard(binomial(n, tt))?;
    let row_sets = nonempty_row_sets(lambda);
    for rows in &row_sets {
        let r = rows.len();
        for d in 0..r {
            guard(binomial(n, basis.responses_needed(r, d)) * binomial(r, d))?;
        }
    }

    let alpha = |s: usize| basis.enc().alpha(s);
    let mut witnesses = Vec::new();

    let mut f0 = true;
    'f0: for i in 0..lambda {
        for subset in (0..n).combinations(kk + xx) {
            if let Some((m, detail)) = check_matrix(field, &subset, kk + xx, |s, c| {
                basis.storage_basis_eval(i, c, alpha(s))
            }) {
                let mut w = Witness::new("F0", subset, detail);
                w.row = Some(i);
                w.matrix = m.map(|m| m.to_values());
                witnesses.push(w);
                f0 = false;
                break 'f0;
            }
        }
    }

    let mut f1 = true;
    'f1x: for i in 0..lambda {
        for subset in (0..n).combinations(xx) {
            if xx == 0 {
                break;
            }
            if let Some((m, detail)) = check_matrix(field, &subset, xx, |s, c| {
                basis.storage_basis_eval(i, kk + c, alpha(s))
            }) {
                let mut w = Witness::new("F1", subset, detail);
                w.row = Some(i);
                w.matrix = m.map(|m| m.to_values());
                witnesses.push(w);
                f1 = false;
                break 'f1x;
            }
        }
    }
    if f1 {
        let tsubsets: Vec<Vec<usize>> = (0..n).combinations(tt).collect();
        let failure = row_sets.par_iter().find_map_first(|rows| {
            for &i in rows {
                for k in 0..kk {
                    for subset in &tsubsets {
                        if let Some((m, detail)) = check_matrix(field, subset, tt, |s, t| {
                            basis.query_basis_eval(rows, i, k, t, alpha(s))
                        }) {
                            let mut w = Witness::new("F1", subset.clone(), detail);
                            w.row = Some(i);
                            w.k = Some(k);
                            w.rows = Some(rows.clone());
                            w.matrix = m.map(|m| m.to_values());
                            return Some(w);
                        }
                    }
                }
            }
            None
        });
        if let Some(w) = failure {
            witnesses.push(w);
            f1 = false;
        }
    }

    let decode_failures: Vec<(Option<Witness>, Option<Witness>)> = row_sets
        .par_iter()
        .enumerate()
        .map(|(set_index, rows)| decode_check(basis, rows, set_index as u64, exhaustive_trials, seed))
        .collect::<Result<_>>()?;
    let f2_witness = decode_failures.iter().find_map(|(w, _)| w.clone());
    let f3_witness = decode_failures.iter().find_map(|(_, w)| w.clone());
    let f2 = f2_witness.is_none();
    let f3 = f3_witness.is_none();
    witnesses.extend(f2_witness);
    witnesses.extend(f3_witness);

    Ok(FrameworkCertificate {
        kind: basis.kind(),
        params: p.clone(),
        encoding: basis.enc().clone(),
        f0,
        f1,
        f2,
        f3,
        witnesses,
    })
}

/// Random instance for one request: files, storage noise and query noise.
pub(crate) struct Instance {
    pub files: Vec<FieldMatrix>,
    pub storage_noise: Vec<Vec<Vec<FieldElement>>>,
    pub query_noise: Vec<Vec<Vec<Vec<FieldElement>>>>,
}

pub(crate) fn random_instance(
    basis: &BasisSet,
    r: usize,
    zero_files: bool,
    rng: &mut ChaCha20Rng,
) -> Instance {
    let p = basis.params();
    let field = basis.enc().modulus();
    let (m, lambda, kk) = (p.m(), p.lambda(), p.k());
    let files = (0..m)
        .map(|_| {
            FieldMatrix::from_fn(lambda, kk, field, |_, _| {
                if zero_files {
                    field.zero()
                } else {
                    field.random(rng)
                }
            })
        })
        .collect();
    let storage_noise = (0..m)
        .map(|_| (0..lambda).map(|_| (0..p.x()).map(|_| field.random(rng)).collect()).collect())
        .collect();
    let query_noise = (0..m)
        .map(|_| {
            (0..r)
                .map(|_| (0..kk).map(|_| (0..p.t()).map(|_| field.random(rng)).collect()).collect())
                .collect()
        })
        .collect();
    Instance {
        files,
        storage_noise,
        query_noise,
    }
}

fn decode_check(
    basis: &BasisSet,
    rows: &[usize],
    set_index: u64,
    trials: usize,
    seed: u64,
) -> Result<(Option<Witness>, Option<Witness>)> {
    let p = basis.params();
    let (n, kk) = (p.n(), p.k());
    let r = rows.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(set_index);
    let mut f2 = None;
    let mut f3 = None;
    for trial in 0..=trials {
        let inst = random_instance(basis, r, trial == 0, &mut rng);
        let theta = trial % p.m();
        let req = PartialFileRequest::new(theta, rows.to_vec());
        let answers = match basis.answers(&req, &inst.files, &inst.storage_noise, &inst.query_noise) {
            Ok(a) => a,
            Err(e) => {
                let mut w = Witness::new("F2", Vec::new(), format!("answers cannot be formed: {e}"));
                w.rows = Some(rows.to_vec());
                return Ok((Some(w), None));
            }
        };
        let target = &inst.files[theta];
        for d in 0..r {
            let slot = if d == 0 { &mut f2 } else { &mut f3 };
            if slot.is_some() {
                continue;
            }
            let size = basis.responses_needed(r, d);
            'search: for known_rows in rows.iter().copied().combinations(d) {
                let known: BTreeMap<usize, Vec<FieldElement>> =
                    known_rows.iter().map(|&i| (i, target.row(i).to_vec())).collect();
                for servers in (0..n).combinations(size) {
                    let responses: Vec<_> =
                        servers.iter().map(|&s| (s, answers[s].clone())).collect();
                    let outcome = basis.decode_partial(&req, &responses, &known);
                    let ok = matches!(&outcome, Ok(m) if rows.iter().enumerate()
                        .all(|(pos, &i)| (0..kk).all(|k| m.get(pos, k) == target.get(i, k))));
                    if !ok {
                        let detail = match outcome {
                            Ok(_) => format!("trial {trial}: decoded rows differ from the file"),
                            Err(e) => format!("trial {trial}: {e}"),
                        };
                        let mut w = Witness::new(if d == 0 { "F2" } else { "F3" }, servers, detail);
                        w.rows = Some(rows.to_vec());
                        w.known = known_rows.clone();
                        *slot = Some(w);
                        break 'search;
                    }
                }
            }
        }
        if f2.is_some() && (f3.is_some() || r == 1) {
            break;
        }
    }
    Ok((f2, f3))
}
