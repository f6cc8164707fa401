//! The adaptive retrieval scheme: secure storage encoding, per-column private
//! queries, server answers, layered decoding and rate accounting.

mod audit;
mod decoder;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, FieldMatrix, FieldModulus};
use crate::framework::{BasisSet, FrameworkError};
use crate::params::SystemParams;
use crate::query_array::{ColumnSpec, QueryArrayError};

pub use audit::{
    check_privacy, check_secrecy, chi_square_two_sample, chi_square_uniform, EmpiricalTest,
    MatrixWitness, PrivacyReport, SecrecyReport, SubsetSelection,
};
pub use decoder::{adaptive_decode, AdaptiveDecoder, DecodeOutcome, DecodeStatus};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    BadIndex(String),
    #[error("server {server} sent column {got} but its next column is {expected}")]
    OrderViolation {
        server: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row} decoded to two different values")]
    InconsistentDecode { row: usize },
    #[error("straggler count {s} is outside [0, {lambda})")]
    SOutOfRange { s: usize, lambda: usize },
    #[error("cannot parse dataset: {0}")]
    Parse(String),
    #[error(transparent)]
    Framework(#[from] FrameworkError),
    #[error(transparent)]
    QueryArray(#[from] QueryArrayError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// `M` files, each `P × K` over GF(q).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    files: Vec<FieldMatrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    q: u64,
    files: Vec<Vec<Vec<u64>>>,
}

impl Dataset {
    pub fn new(files: Vec<FieldMatrix>, params: &SystemParams) -> Result<Self> {
        let (p, k) = (params.p(), params.k());
        if files.len() != params.m() {
            return Err(ProtocolError::ShapeMismatch(format!(
                "expected {} files, got {}",
                params.m(),
                files.len()
            )));
        }
        if let Some(f) = files.iter().find(|f| f.rows() != p || f.cols() != k) {
            return Err(ProtocolError::ShapeMismatch(format!(
                "files must be {p}x{k}, found {}x{}",
                f.rows(),
                f.cols()
            )));
        }
        if files.windows(2).any(|w| w[0].modulus() != w[1].modulus()) {
            return Err(ProtocolError::ShapeMismatch("files use different fields".into()));
        }
        Ok(Dataset { files })
    }

    /// Uniformly random files.
    pub fn random(params: &SystemParams, modulus: FieldModulus, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let files = (0..params.m())
            .map(|_| FieldMatrix::from_fn(params.p(), params.k(), modulus, |_, _| modulus.random(&mut rng)))
            .collect();
        Dataset { files }
    }

    pub fn from_json(text: &str, params: &SystemParams) -> Result<Self> {
        let doc: DatasetDoc =
            serde_json::from_str(text).map_err(|e| ProtocolError::Parse(e.to_string()))?;
        let modulus = FieldModulus::new(doc.q)?;
        let files = doc
            .files
            .iter()
            .map(|rows| {
                if rows.iter().flatten().any(|&v| v >= doc.q) {
                    return Err(ProtocolError::Parse(format!("value outside GF({})", doc.q)));
                }
                Ok(FieldMatrix::from_values(rows, modulus)?)
            })
            .collect::<Result<_>>()?;
        Dataset::new(files, params)
    }

    pub fn to_json(&self) -> String {
        let doc = DatasetDoc {
            q: self.modulus().q(),
            files: self.files.iter().map(|f| f.to_values()).collect(),
        };
        serde_json::to_string(&doc).expect("dataset serializes")
    }

    /// CSV with one file row per line (`K` values), files stacked in order.
    pub fn from_csv(text: &str, params: &SystemParams, modulus: FieldModulus) -> Result<Self> {
        let mut rows = Vec::new();
        for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let values = line
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<u64>()
                        .ok()
                        .filter(|&v| v < modulus.q())
                        .ok_or_else(|| ProtocolError::Parse(format!("line {}: bad value {v:?}", line_no + 1)))
                })
                .collect::<Result<Vec<u64>>>()?;
            rows.push(values);
        }
        let per_file = params.p();
        if rows.len() != per_file * params.m() {
            return Err(ProtocolError::ShapeMismatch(format!(
                "expected {} rows, got {}",
                per_file * params.m(),
                rows.len()
            )));
        }
        let files = rows
            .chunks(per_file)
            .map(|chunk| Ok(FieldMatrix::from_values(chunk, modulus)?))
            .collect::<Result<_>>()?;
        Dataset::new(files, params)
    }

    pub fn files(&self) -> &[FieldMatrix] {
        &self.files
    }
    pub fn file(&self, m: usize) -> &FieldMatrix {
        &self.files[m]
    }
    pub fn modulus(&self) -> FieldModulus {
        self.files[0].modulus()
    }
}

/// Every noise symbol used in one session, reproducible from the two seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseTranscript {
    /// `[m][i][x]`, one set per file row.
    pub storage: Vec<Vec<Vec<FieldElement>>>,
    /// `[column][m][position in R][k][t]`, fresh per column.
    pub query: Vec<Vec<Vec<Vec<Vec<FieldElement>>>>>,
}

impl NoiseTranscript {
    pub fn storage_noise(
        params: &SystemParams,
        modulus: FieldModulus,
        seed: u64,
    ) -> Vec<Vec<Vec<FieldElement>>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..params.m())
            .map(|_| {
                (0..params.p())
                    .map(|_| (0..params.x()).map(|_| modulus.random(&mut rng)).collect())
                    .collect()
            })
            .collect()
    }

    /// Query noise never depends on the desired index.
    pub fn query_noise(
        params: &SystemParams,
        specs: &[ColumnSpec],
        modulus: FieldModulus,
        seed: u64,
    ) -> Vec<Vec<Vec<Vec<Vec<FieldElement>>>>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1);
        specs
            .iter()
            .map(|spec| {
                (0..params.m())
                    .map(|_| {
                        (0..spec.size())
                            .map(|_| {
                                (0..params.k())
                                    .map(|_| (0..params.t()).map(|_| modulus.random(&mut rng)).collect())
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn from_seeds(
        params: &SystemParams,
        specs: &[ColumnSpec],
        modulus: FieldModulus,
        storage_seed: u64,
        query_seed: u64,
    ) -> Self {
        NoiseTranscript {
            storage: Self::storage_noise(params, modulus, storage_seed),
            query: Self::query_noise(params, specs, modulus, query_seed),
        }
    }
}

/// Server `n`'s stored evaluations `f_i^{(m)}(α_n)`, indexed `[m][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageShare {
    pub server: usize,
    pub values: Vec<Vec<FieldElement>>,
}

/// One column-query: the file rows it combines and `q^{(m)}_{i,k}(α_n)` as
/// `[m][position in rows][k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnQuery {
    pub column: usize,
    pub rows: Vec<usize>,
    pub values: Vec<Vec<Vec<FieldElement>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryBundle {
    pub server: usize,
    pub columns: Vec<ColumnQuery>,
}

/// `K` sub-responses of one server for one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseBundle {
    pub server: usize,
    pub column: usize,
    pub values: Vec<FieldElement>,
}

fn check_shape(basis: &BasisSet, data: &Dataset) -> Result<()> {
    let p = basis.params();
    if data.modulus() != basis.enc().modulus() {
        return Err(ProtocolError::ShapeMismatch("dataset and encoding use different fields".into()));
    }
    if !p.p().is_multiple_of(p.lambda()) {
        return Err(ProtocolError::ShapeMismatch(format!("P={} is not a multiple of λ={}", p.p(), p.lambda())));
    }
    Dataset::new(data.files.clone(), p).map(|_| ())
}

pub fn encode_storage(basis: &BasisSet, data: &Dataset, noise_seed: u64) -> Result<Vec<StorageShare>> {
    let noise = NoiseTranscript::storage_noise(basis.params(), basis.enc().modulus(), noise_seed);
    encode_storage_with(basis, data, &noise)
}

/// Row `i` of every file is encoded with framework row `i mod λ`.
pub fn encode_storage_with(
    basis: &BasisSet,
    data: &Dataset,
    noise: &[Vec<Vec<FieldElement>>],
) -> Result<Vec<StorageShare>> {
    check_shape(basis, data)?;
    let lambda = basis.params().lambda();
    (0..basis.params().n())
        .into_par_iter()
        .map(|n| {
            let x = basis.enc().alpha(n);
            let values = data
                .files
                .iter()
                .zip(noise)
                .map(|(file, z)| {
                    (0..file.rows())
                        .map(|i| Ok(basis.storage_share(i % lambda, file.row(i), &z[i], x)?))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            Ok(StorageShare { server: n, values })
        })
        .collect()
}

pub fn make_queries(
    basis: &BasisSet,
    specs: &[ColumnSpec],
    theta: usize,
    noise_seed: u64,
) -> Result<Vec<QueryBundle>> {
    let noise = NoiseTranscript::query_noise(basis.params(), specs, basis.enc().modulus(), noise_seed);
    make_queries_with(basis, specs, theta, &noise)
}

/// Column `(h, j)` is queried with row set `R̃^h_j`; file row `u` in the
/// column uses framework row `u mod λ`.
pub fn make_queries_with(
    basis: &BasisSet,
    specs: &[ColumnSpec],
    theta: usize,
    noise: &[Vec<Vec<Vec<Vec<FieldElement>>>>],
) -> Result<Vec<QueryBundle>> {
    let p = basis.params();
    if theta >= p.m() {
        return Err(ProtocolError::BadIndex(format!("theta={theta} but M={}", p.m())));
    }
    if specs.len() != p.p() || noise.len() != specs.len() {
        return Err(ProtocolError::ShapeMismatch(format!("expected {} column specs and noise sets", p.p())));
    }
    (0..p.n())
        .into_par_iter()
        .map(|n| {
            let x = basis.enc().alpha(n);
            let columns = specs
                .iter()
                .zip(noise)
                .map(|(spec, z)| {
                    let values = (0..p.m())
                        .map(|m| {
                            spec.residues
                                .iter()
                                .enumerate()
                                .map(|(pos, &i)| {
                                    (0..p.k())
                                        .map(|k| {
                                            Ok(basis.query_share(&spec.residues, i, k, &z[m][pos][k], m == theta, x)?)
                                        })
                                        .collect::<Result<Vec<_>>>()
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ColumnQuery {
                        column: spec.global,
                        rows: spec.rows.clone(),
                        values,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(QueryBundle { server: n, columns })
        })
        .collect()
}

/// Responses of one server, in column order.
pub fn server_answer(share: &StorageShare, bundle: &QueryBundle) -> Result<Vec<ResponseBundle>> {
    if share.server != bundle.server {
        return Err(ProtocolError::ShapeMismatch(format!(
            "share of server {} paired with queries for server {}",
            share.server, bundle.server
        )));
    }
    let mut out = Vec::with_capacity(bundle.columns.len());
    for cq in &bundle.columns {
        if cq.values.len() != share.values.len() {
            return Err(ProtocolError::ShapeMismatch("query and share disagree on M".into()));
        }
        let zero = share.values[0][0].modulus().zero();
        let k = cq.values.first().and_then(|v| v.first()).map_or(0, |v| v.len());
        let mut acc = vec![zero; k];
        for (m, per_row) in cq.values.iter().enumerate() {
            for (&row, qs) in cq.rows.iter().zip(per_row) {
                let f = *share.values[m]
                    .get(row)
                    .ok_or_else(|| ProtocolError::BadIndex(format!("row {row}")))?;
                for (a, &q) in acc.iter_mut().zip(qs) {
                    *a += q * f;
                }
            }
        }
        out.push(ResponseBundle {
            server: share.server,
            column: cq.column,
            values: acc,
        });
    }
    Ok(out)
}

/// Download cost `D_S` (field elements) and retrieval rate `R_S` when `S`
/// servers straggle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateCost {
    pub s: usize,
    pub download: Ratio<u64>,
    pub rate: Ratio<u64>,
}

pub fn rate_and_cost(params: &SystemParams, s: usize) -> Result<RateCost> {
    if s >= params.lambda() {
        return Err(ProtocolError::SOutOfRange {
            s,
            lambda: params.lambda(),
        });
    }
    let download = ((params.n() - s) * params.k() * params.threshold(s)) as u64;
    let desired = (params.p() * params.k()) as u64;
    Ok(RateCost {
        s,
        download: Ratio::from_integer(download),
        rate: Ratio::new(desired, download),
    })
}

/// `p/q (0.xxxxxx)`.
pub fn format_ratio(r: Ratio<u64>) -> String {
    let value = *r.numer() as f64 / *r.denom() as f64;
    format!("{}/{} ({value:.6})", r.numer(), r.denom())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::FrameworkKind;
    use crate::params::{default_modulus, derive_system, select_parameters};
    use crate::query_array::{build_query_array, column_specs};
    use std::collections::BTreeMap;

    pub(crate) fn setup(kind: FrameworkKind, n: usize, k: usize, x: usize, t: usize, m: usize) -> (BasisSet, Vec<ColumnSpec>) {
        let params = derive_system(n, k, x, t, m).unwrap();
        let enc = select_parameters(&params, default_modulus(&params)).unwrap();
        let specs = column_specs(&build_query_array(&params)).unwrap();
        (BasisSet::new(kind, enc, params).unwrap(), specs)
    }

    #[test]
    fn reference_rates_for_eight_servers() {
        let p = derive_system(8, 2, 2, 2, 3).unwrap();
        let rates: Vec<_> = (0..3).map(|s| rate_and_cost(&p, s).unwrap().rate).collect();
        assert_eq!(rates, vec![Ratio::new(3, 8), Ratio::new(2, 7), Ratio::new(1, 6)]);
        assert_eq!(rate_and_cost(&p, 1).unwrap().download, Ratio::from_integer(126));
        assert!(matches!(rate_and_cost(&p, 3), Err(ProtocolError::SOutOfRange { s: 3, lambda: 3 })));
        assert_eq!(format_ratio(Ratio::new(3, 8)), "3/8 (0.375000)");
    }

    #[test]
    fn rate_matches_closed_form() {
        for (n, k, x, t) in [(8, 2, 2, 2), (9, 2, 2, 2), (10, 3, 1, 2), (6, 1, 1, 1)] {
            let p = derive_system(n, k, x, t, 1).unwrap();
            for s in 0..p.lambda() {
                let rc = rate_and_cost(&p, s).unwrap();
                let closed = Ratio::from_integer(1u64) - Ratio::new((k + x + t - 1) as u64, (n - s) as u64);
                assert_eq!(rc.rate, closed);
                assert_eq!(rc.rate * rc.download, Ratio::from_integer((p.p() * k) as u64));
            }
        }
    }

    #[test]
    fn zero_inputs_give_zero_shares() {
        let (basis, _) = setup(FrameworkKind::Lagrange, 8, 2, 2, 2, 2);
        let p = basis.params().clone();
        let f = basis.enc().modulus();
        let data = Dataset::new(vec![FieldMatrix::zeros(p.p(), p.k(), f); 2], &p).unwrap();
        let noise = vec![vec![vec![f.zero(); p.x()]; p.p()]; 2];
        let shares = encode_storage_with(&basis, &data, &noise).unwrap();
        assert_eq!(shares.len(), 8);
        assert!(shares.iter().all(|s| s.values.iter().flatten().all(|v| v.is_zero())));
        assert!(shares.iter().all(|s| s.values.len() * s.values[0].len() == 2 * p.p()));
    }

    #[test]
    fn any_k_plus_x_shares_recover_rows() {
        let (basis, _) = setup(FrameworkKind::Csa, 8, 2, 2, 2, 1);
        let p = basis.params().clone();
        let f = basis.enc().modulus();
        let data = Dataset::random(&p, f, 4);
        let noise = NoiseTranscript::storage_noise(&p, f, 9);
        let shares = encode_storage_with(&basis, &data, &noise).unwrap();
        let servers = [1, 4, 6, 7];
        for i in 0..p.p() {
            let b = FieldMatrix::from_fn(4, 4, f, |r, c| {
                basis.storage_basis_eval(i % 3, c, basis.enc().alpha(servers[r])).unwrap()
            });
            let rhs: Vec<_> = servers.iter().map(|&n| shares[n].values[0][i]).collect();
            let sol = b.solve(&rhs).unwrap();
            assert_eq!(&sol[..2], data.file(0).row(i));
            assert_eq!(&sol[2..], noise[0][i].as_slice());
        }
    }

    #[test]
    fn query_bundles_have_one_query_per_column() {
        let (basis, specs) = setup(FrameworkKind::Lagrange, 8, 2, 2, 2, 3);
        let q = make_queries(&basis, &specs, 1, 5).unwrap();
        assert_eq!(q.len(), 8);
        for bundle in &q {
            assert_eq!(bundle.columns.len(), 18);
            assert_eq!(bundle.columns[0].rows, vec![0, 1, 2]);
            assert_eq!(bundle.columns[17].rows.len(), 1);
        }
        assert!(matches!(make_queries(&basis, &specs, 3, 5), Err(ProtocolError::BadIndex(_))));
    }

    #[test]
    fn theta_only_changes_the_desired_term() {
        let (basis, specs) = setup(FrameworkKind::Lagrange, 8, 2, 2, 2, 2);
        let a = make_queries(&basis, &specs, 0, 5).unwrap();
        let again = make_queries(&basis, &specs, 0, 5).unwrap();
        let b = make_queries(&basis, &specs, 1, 5).unwrap();
        assert_eq!(a, again);
        for (qa, qb) in a.iter().zip(&b) {
            let x = basis.enc().alpha(qa.server);
            for (ca, (cb, spec)) in qa.columns.iter().zip(qb.columns.iter().zip(&specs)) {
                for (pos, &i) in spec.residues.iter().enumerate() {
                    for k in 0..2 {
                        let v = basis.query_basis_eval(&spec.residues, i, k, 2, x).unwrap();
                        assert_eq!(ca.values[0][pos][k] - v, cb.values[0][pos][k]);
                        assert_eq!(ca.values[1][pos][k] + v, cb.values[1][pos][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn answers_are_dot_products() {
        let f = FieldModulus::new(11).unwrap();
        let share = StorageShare {
            server: 0,
            values: vec![vec![f.elem(3), f.elem(5)]],
        };
        let bundle = QueryBundle {
            server: 0,
            columns: vec![ColumnQuery {
                column: 0,
                rows: vec![0, 1],
                values: vec![vec![vec![f.elem(2)], vec![f.elem(7)]]],
            }],
        };
        let out = server_answer(&share, &bundle).unwrap();
        // 2*3 + 7*5 = 41 = 8 mod 11
        assert_eq!(out[0].values, vec![f.elem(8)]);

        let zero = QueryBundle {
            server: 0,
            columns: vec![ColumnQuery {
                column: 0,
                rows: vec![0, 1],
                values: vec![vec![vec![f.zero()], vec![f.zero()]]],
            }],
        };
        assert!(server_answer(&share, &zero).unwrap()[0].values[0].is_zero());
        let other = QueryBundle { server: 1, ..zero };
        assert!(server_answer(&share, &other).is_err());
    }

    #[test]
    fn column_answers_decode_directly() {
        let (basis, specs) = setup(FrameworkKind::Csa, 8, 2, 2, 2, 2);
        let p = basis.params().clone();
        let data = Dataset::random(&p, basis.enc().modulus(), 1);
        let shares = encode_storage(&basis, &data, 2).unwrap();
        let queries = make_queries(&basis, &specs, 1, 3).unwrap();
        let answers: Vec<_> = shares.iter().zip(&queries).map(|(s, q)| server_answer(s, q).unwrap()).collect();
        let spec = &specs[0];
        let req = crate::framework::PartialFileRequest::new(1, spec.residues.clone());
        let responses: Vec<_> = (0..8).map(|n| (n, answers[n][0].values.clone())).collect();
        let out = basis.decode_partial(&req, &responses, &BTreeMap::new()).unwrap();
        for (pos, &row) in spec.rows.iter().enumerate() {
            assert_eq!(out.row(pos), data.file(1).row(row));
        }
    }

    #[test]
    fn dataset_formats() {
        let p = derive_system(4, 1, 1, 1, 2).unwrap();
        let f = FieldModulus::new(7).unwrap();
        let d = Dataset::random(&p, f, 0);
        assert_eq!(Dataset::from_json(&d.to_json(), &p).unwrap(), d);
        let csv: String = d
            .files()
            .iter()
            .flat_map(|file| (0..file.rows()).map(|i| file.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n").collect::<Vec<_>>())
            .collect();
        assert_eq!(Dataset::from_csv(&csv, &p, f).unwrap(), d);
        assert!(Dataset::from_csv("1\n", &p, f).is_err());
        assert!(Dataset::from_csv("9\n1\n", &p, f).is_err());
        assert!(Dataset::from_json(r#"{"q":7,"files":[[[1]]]}"#, &p).is_err());
    }
}
