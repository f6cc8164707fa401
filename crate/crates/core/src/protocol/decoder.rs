use std::collections::BTreeMap;

use crate::field::{FieldElement, FieldMatrix};
use crate::framework::{BasisSet, PartialFileRequest};
use crate::query_array::ColumnSpec;

use super::{ProtocolError, ResponseBundle, Result};

/// A successful retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub file: FieldMatrix,
    /// Number of stragglers the decoder committed to.
    pub stragglers: usize,
    /// Responses used from each server.
    pub consumed: Vec<usize>,
    /// Field elements downloaded in the used responses.
    pub download: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeStatus {
    NeedMore,
    Decoded(DecodeOutcome),
}

/// Consumes responses one at a time and decodes as soon as some straggler
/// count `S` has its threshold met: at least `N − S` servers have delivered
/// their first `F_S` responses. The smallest such `S` wins.
#[derive(Debug, Clone)]
pub struct AdaptiveDecoder {
    basis: BasisSet,
    specs: Vec<ColumnSpec>,
    theta: usize,
    next: Vec<usize>,
    columns: Vec<Vec<(usize, Vec<FieldElement>)>>,
    outcome: Option<DecodeOutcome>,
}

impl AdaptiveDecoder {
    pub fn new(basis: &BasisSet, specs: &[ColumnSpec], theta: usize) -> Result<Self> {
        let p = basis.params();
        if theta >= p.m() {
            return Err(ProtocolError::BadIndex(format!("theta={theta} but M={}", p.m())));
        }
        if specs.len() != p.p() {
            return Err(ProtocolError::ShapeMismatch(format!("expected {} column specs", p.p())));
        }
        Ok(AdaptiveDecoder {
            basis: basis.clone(),
            specs: specs.to_vec(),
            theta,
            next: vec![0; p.n()],
            columns: vec![Vec::new(); p.p()],
            outcome: None,
        })
    }

    /// Responses received so far from `server`.
    pub fn delivered(&self, server: usize) -> usize {
        self.next[server]
    }

    /// Responses received so far for each column.
    pub fn column_counts(&self) -> Vec<usize> {
        self.columns.iter().map(Vec::len).collect()
    }

    pub fn outcome(&self) -> Option<&DecodeOutcome> {
        self.outcome.as_ref()
    }

    /// The smallest `S` whose threshold is met, if any.
    pub fn ready(&self) -> Option<usize> {
        let p = self.basis.params();
        (0..p.lambda()).find(|&s| {
            let f = p.threshold(s);
            self.next.iter().filter(|&&c| c >= f).count() >= p.n() - s
        })
    }

    pub fn push(&mut self, response: ResponseBundle) -> Result<DecodeStatus> {
        if let Some(done) = &self.outcome {
            return Ok(DecodeStatus::Decoded(done.clone()));
        }
        let p = self.basis.params();
        let ResponseBundle { server, column, values } = response;
        if server >= p.n() {
            return Err(ProtocolError::BadIndex(format!("server {server}")));
        }
        if column != self.next[server] {
            return Err(ProtocolError::OrderViolation {
                server,
                expected: self.next[server],
                got: column,
            });
        }
        if column >= p.p() {
            return Err(ProtocolError::BadIndex(format!("column {column}")));
        }
        if values.len() != p.k() {
            return Err(ProtocolError::ShapeMismatch(format!("responses carry {} symbols", p.k())));
        }
        self.next[server] += 1;
        self.columns[column].push((server, values));

        match self.ready() {
            None => Ok(DecodeStatus::NeedMore),
            Some(s) => {
                let outcome = self.decode(s)?;
                self.outcome = Some(outcome.clone());
                Ok(DecodeStatus::Decoded(outcome))
            }
        }
    }

    /// Decodes layer `s` first, then shallower layers using rows recovered
    /// deeper as compensation, and finally reads the file off layer 0.
    fn decode(&self, s: usize) -> Result<DecodeOutcome> {
        let p = self.basis.params();
        let lambda = p.lambda();
        let needed = p.n() - s;
        let mut rows: BTreeMap<usize, Vec<FieldElement>> = BTreeMap::new();
        let mut consumed = vec![0; p.n()];

        for h in (0..=s).rev() {
            let d = s - h;
            for spec in self.specs.iter().filter(|c| c.layer == h) {
                let known = spec.compensation[..d]
                    .iter()
                    .map(|&a| {
                        rows.get(&a)
                            .map(|v| (a % lambda, v.clone()))
                            .ok_or(ProtocolError::InconsistentDecode { row: a })
                    })
                    .collect::<Result<BTreeMap<_, _>>>()?;
                let used = &self.columns[spec.global][..needed];
                for (n, _) in used {
                    consumed[*n] += 1;
                }
                let req = PartialFileRequest::new(self.theta, spec.residues.clone());
                let out = self.basis.decode_partial(&req, used, &known)?;
                for (pos, &row) in spec.rows.iter().enumerate() {
                    let value = out.row(pos).to_vec();
                    match rows.get(&row) {
                        Some(prev) if *prev != value => {
                            return Err(ProtocolError::InconsistentDecode { row });
                        }
                        Some(_) => {}
                        None => {
                            rows.insert(row, value);
                        }
                    }
                }
            }
        }

        let field = self.basis.enc().modulus();
        let mut file = FieldMatrix::zeros(p.p(), p.k(), field);
        for i in 0..p.p() {
            let row = rows.get(&i).ok_or(ProtocolError::InconsistentDecode { row: i })?;
            for (k, &v) in row.iter().enumerate() {
                file.set(i, k, v);
            }
        }
        let download = (consumed.iter().sum::<usize>() * p.k()) as u64;
        Ok(DecodeOutcome {
            file,
            stragglers: s,
            consumed,
            download,
        })
    }
}

/// Feeds `responses` in order until the file is recovered.
pub fn adaptive_decode(
    basis: &BasisSet,
    specs: &[ColumnSpec],
    theta: usize,
    responses: impl IntoIterator<Item = ResponseBundle>,
) -> Result<DecodeStatus> {
    let mut decoder = AdaptiveDecoder::new(basis, specs, theta)?;
    for r in responses {
        if let DecodeStatus::Decoded(out) = decoder.push(r)? {
            return Ok(DecodeStatus::Decoded(out));
        }
    }
    Ok(DecodeStatus::NeedMore)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::FrameworkKind;
    use crate::protocol::tests::setup;
    use crate::protocol::{encode_storage, make_queries, server_answer, Dataset};

    fn responses(kind: FrameworkKind, seed: u64) -> (BasisSet, Vec<ColumnSpec>, Dataset, Vec<Vec<ResponseBundle>>) {
        let (basis, specs) = setup(kind, 8, 2, 2, 2, 3);
        let data = Dataset::random(basis.params(), basis.enc().modulus(), seed);
        let shares = encode_storage(&basis, &data, seed + 1).unwrap();
        let queries = make_queries(&basis, &specs, 2, seed + 2).unwrap();
        let answers = shares.iter().zip(&queries).map(|(s, q)| server_answer(s, q).unwrap()).collect();
        (basis, specs, data, answers)
    }

    /// Round-robin over the given servers, `per_server` responses each.
    fn stream(answers: &[Vec<ResponseBundle>], servers: &[usize], per_server: usize) -> Vec<ResponseBundle> {
        (0..per_server)
            .flat_map(|c| servers.iter().map(move |&n| answers[n][c].clone()))
            .collect()
    }

    #[test]
    fn no_stragglers_uses_six_per_server() {
        let (basis, specs, data, answers) = responses(FrameworkKind::Lagrange, 10);
        let all: Vec<usize> = (0..8).collect();
        let DecodeStatus::Decoded(out) = adaptive_decode(&basis, &specs, 2, stream(&answers, &all, 18)).unwrap() else {
            panic!("expected a decode");
        };
        assert_eq!(out.stragglers, 0);
        assert_eq!(out.consumed, vec![6; 8]);
        assert_eq!(out.download, 8 * 2 * 6);
        assert_eq!(&out.file, data.file(2));
    }

    #[test]
    fn one_straggler_uses_nine_per_server() {
        let (basis, specs, data, answers) = responses(FrameworkKind::Csa, 20);
        let fast: Vec<usize> = (1..8).collect();
        let DecodeStatus::Decoded(out) = adaptive_decode(&basis, &specs, 2, stream(&answers, &fast, 18)).unwrap() else {
            panic!("expected a decode");
        };
        assert_eq!(out.stragglers, 1);
        assert_eq!(out.consumed, vec![0, 9, 9, 9, 9, 9, 9, 9]);
        assert_eq!(&out.file, data.file(2));
    }

    #[test]
    fn two_stragglers_use_everything() {
        let (basis, specs, data, answers) = responses(FrameworkKind::Lagrange, 30);
        let fast = [0, 1, 3, 4, 6, 7];
        let DecodeStatus::Decoded(out) = adaptive_decode(&basis, &specs, 2, stream(&answers, &fast, 18)).unwrap() else {
            panic!("expected a decode");
        };
        assert_eq!(out.stragglers, 2);
        assert_eq!(out.consumed.iter().filter(|&&c| c == 18).count(), 6);
        assert_eq!(&out.file, data.file(2));
    }

    #[test]
    fn one_short_of_threshold_needs_more() {
        let (basis, specs, _, answers) = responses(FrameworkKind::Lagrange, 40);
        let fast: Vec<usize> = (1..8).collect();
        let mut s = stream(&answers, &fast, 9);
        s.pop();
        assert_eq!(adaptive_decode(&basis, &specs, 2, s).unwrap(), DecodeStatus::NeedMore);
    }

    #[test]
    fn skipped_response_is_rejected() {
        let (basis, specs, _, answers) = responses(FrameworkKind::Lagrange, 50);
        let mut dec = AdaptiveDecoder::new(&basis, &specs, 2).unwrap();
        dec.push(answers[3][0].clone()).unwrap();
        assert!(matches!(
            dec.push(answers[3][2].clone()),
            Err(ProtocolError::OrderViolation { server: 3, expected: 1, got: 2 })
        ));
        assert_eq!(dec.delivered(3), 1);
        assert_eq!(dec.column_counts()[0], 1);
    }
}
