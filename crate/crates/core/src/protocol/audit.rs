//! Secrecy and privacy audits: the matrix conditions that make share and
//! query views independent of the secrets, plus seeded chi-square tests on
//! the views themselves.

use std::collections::BTreeSet;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::field::{FieldElement, FieldMatrix};
use crate::framework::{BasisSet, FrameworkError, ENUMERATION_LIMIT};
use crate::query_array::ColumnSpec;

use super::Result;

/// Which server subsets to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsetSelection {
    All,
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTest {
    pub method: String,
    pub draws: usize,
    pub coordinates: usize,
    /// Statistic and degrees of freedom of the coordinate with the smallest p.
    pub statistic: f64,
    pub dof: usize,
    pub min_p_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixWitness {
    pub row: usize,
    pub k: Option<usize>,
    pub rows: Option<Vec<usize>>,
    pub servers: Vec<usize>,
    pub matrix: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecrecyReport {
    pub subsets_checked: usize,
    pub matrices_nonsingular: bool,
    pub witness: Option<MatrixWitness>,
    pub empirical: Option<EmpiricalTest>,
}

impl SecrecyReport {
    pub fn passed(&self) -> bool {
        self.matrices_nonsingular && self.empirical.as_ref().is_none_or(|e| e.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub subsets_checked: usize,
    pub matrices_nonsingular: bool,
    pub witness: Option<MatrixWitness>,
    pub empirical: Option<EmpiricalTest>,
}

impl PrivacyReport {
    pub fn passed(&self) -> bool {
        self.matrices_nonsingular && self.empirical.as_ref().is_none_or(|e| e.passed)
    }
}

const SIGNIFICANCE: f64 = 0.01;
/// Joint histograms are used up to this many cells.
const JOINT_CELLS: u64 = 2000;

fn survival(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .sf(statistic)
}

/// Pearson goodness of fit against the uniform distribution on
/// `counts.len()` cells. Returns `(statistic, dof, p)`.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, usize, f64) {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let dof = counts.len().saturating_sub(1);
    (stat, dof, survival(stat, dof))
}

/// Chi-square test of homogeneity for two histograms over the same cells.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = na + nb;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        let (ea, eb) = (na * col / total, nb * col / total);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dof = cells.saturating_sub(1);
    (stat, dof, survival(stat, dof))
}

fn subsets(n: usize, size: usize, selection: SubsetSelection) -> Result<Vec<Vec<usize>>> {
    match selection {
        SubsetSelection::All => {
            let count = crate::framework::binomial(n, size);
            if count > ENUMERATION_LIMIT {
                return Err(FrameworkError::EnumerationTooLarge { count }.into());
            }
            Ok((0..n).combinations(size).collect())
        }
        SubsetSelection::Sample { count, seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            Ok((0..count)
                .map(|_| {
                    let mut s = sample(&mut rng, n, size).into_vec();
                    s.sort_unstable();
                    s
                })
                .collect())
        }
    }
}

fn singular(
    basis: &BasisSet,
    servers: &[usize],
    cols: usize,
    entry: impl Fn(usize, FieldElement) -> std::result::Result<FieldElement, FrameworkError>,
) -> Result<Option<FieldMatrix>> {
    let field = basis.enc().modulus();
    let mut entries = Vec::with_capacity(servers.len() * cols);
    for &n in servers {
        for c in 0..cols {
            entries.push(entry(c, basis.enc().alpha(n))?);
        }
    }
    let m = FieldMatrix::new(servers.len(), cols, field, entries)?;
    Ok((!m.is_nonsingular()?).then_some(m))
}

/// Tests one view: with a joint histogram when the cell count is small,
/// otherwise coordinate by coordinate.
fn uniformity(views: &[Vec<FieldElement>], q: u64) -> EmpiricalTest {
    let width = views.first().map_or(0, Vec::len);
    let cells = q.checked_pow(width as u32).filter(|&c| c <= JOINT_CELLS);
    let (method, results): (&str, Vec<(f64, usize, f64)>) = match cells {
        Some(cells) if views.len() as u64 >= 5 * cells => {
            let mut counts = vec![0u64; cells as usize];
            for v in views {
                let idx = v.iter().fold(0u64, |acc, e| acc * q + e.value());
                counts[idx as usize] += 1;
            }
            ("joint", vec![chi_square_uniform(&counts)])
        }
        _ => (
            "marginal",
            (0..width)
                .map(|c| {
                    let mut counts = vec![0u64; q as usize];
                    for v in views {
                        counts[v[c].value() as usize] += 1;
                    }
                    chi_square_uniform(&counts)
                })
                .collect(),
        ),
    };
    summarize(method, views.len(), results)
}

fn summarize(method: &str, draws: usize, results: Vec<(f64, usize, f64)>) -> EmpiricalTest {
    let coordinates = results.len();
    let (statistic, dof, min_p_value) = results
        .into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap_or((0.0, 0, 1.0));
    EmpiricalTest {
        method: method.into(),
        draws,
        coordinates,
        statistic,
        dof,
        min_p_value,
        passed: min_p_value > SIGNIFICANCE,
    }
}

/// Every `X`-subset noise matrix must be invertible, and the shares held by
/// the last `X` servers must look uniform across `draws` noise redraws of a
/// fixed data row. `draws = 0` skips the empirical part.
pub fn check_secrecy(
    basis: &BasisSet,
    selection: SubsetSelection,
    draws: usize,
    seed: u64,
) -> Result<SecrecyReport> {
    let p = basis.params();
    let (n, k, x) = (p.n(), p.k(), p.x());
    if x == 0 {
        return Ok(SecrecyReport {
            subsets_checked: 0,
            matrices_nonsingular: true,
            witness: None,
            empirical: None,
        });
    }
    let sets = subsets(n, x, selection)?;
    let mut witness = None;
    'outer: for i in 0..p.lambda() {
        for s in &sets {
            if let Some(m) = singular(basis, s, x, |c, a| basis.storage_basis_eval(i, k + c, a))? {
                witness = Some(MatrixWitness {
                    row: i,
                    k: None,
                    rows: None,
                    servers: s.clone(),
                    matrix: m.to_values(),
                });
                break 'outer;
            }
        }
    }

    let empirical = (draws > 0).then(|| -> Result<EmpiricalTest> {
        let field = basis.enc().modulus();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data: Vec<_> = (0..k).map(|_| field.random(&mut rng)).collect();
        let servers: Vec<usize> = (n - x..n).collect();
        let views = (0..draws)
            .map(|_| {
                let noise: Vec<_> = (0..x).map(|_| field.random(&mut rng)).collect();
                servers
                    .iter()
                    .map(|&s| Ok(basis.storage_share(0, &data, &noise, basis.enc().alpha(s))?))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(uniformity(&views, field.q()))
    });

    Ok(SecrecyReport {
        subsets_checked: sets.len() * p.lambda(),
        matrices_nonsingular: witness.is_none(),
        witness,
        empirical: empirical.transpose()?,
    })
}

/// Every `T`-subset query-noise matrix must be invertible for every row set
/// used by some column. Empirically, the view of the last `T` servers on the
/// first row of column 0 (both sub-query files 0 and 1) must be
/// indistinguishable between `θ = 0` and `θ = 1`.
pub fn check_privacy(
    basis: &BasisSet,
    specs: &[ColumnSpec],
    selection: SubsetSelection,
    draws: usize,
    seed: u64,
) -> Result<PrivacyReport> {
    let p = basis.params();
    let (n, kk, tt) = (p.n(), p.k(), p.t());
    let sets = subsets(n, tt, selection)?;
    let row_sets: BTreeSet<&Vec<usize>> = specs.iter().map(|s| &s.residues).collect();
    let mut witness = None;
    let mut checked = 0;
    'outer: for rows in &row_sets {
        for &i in rows.iter() {
            for k in 0..kk {
                for s in &sets {
                    checked += 1;
                    if let Some(m) = singular(basis, s, tt, |t, a| basis.query_basis_eval(rows, i, k, t, a))? {
                        witness = Some(MatrixWitness {
                            row: i,
                            k: Some(k),
                            rows: Some(rows.to_vec()),
                            servers: s.clone(),
                            matrix: m.to_values(),
                        });
                        break 'outer;
                    }
                }
            }
        }
    }

    let empirical = match specs.first() {
        Some(spec) if draws > 0 => {
            let field = basis.enc().modulus();
            let q = field.q() as usize;
            let servers: Vec<usize> = (n - tt..n).collect();
            let i = spec.residues[0];
            let coords = 2 * servers.len();
            let mut hist = [vec![vec![0u64; q]; coords], vec![vec![0u64; q]; coords]];
            for (theta, h) in hist.iter_mut().enumerate() {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(theta as u64 + 1);
                for _ in 0..draws {
                    for m in 0..2 {
                        let noise: Vec<_> = (0..tt).map(|_| field.random(&mut rng)).collect();
                        for (c, &s) in servers.iter().enumerate() {
                            let v = basis.query_share(&spec.residues, i, 0, &noise, m == theta, basis.enc().alpha(s))?;
                            h[m * servers.len() + c][v.value() as usize] += 1;
                        }
                    }
                }
            }
            let results = (0..coords).map(|c| chi_square_two_sample(&hist[0][c], &hist[1][c])).collect();
            Some(summarize("two-sample", draws, results))
        }
        _ => None,
    };

    Ok(PrivacyReport {
        subsets_checked: checked,
        matrices_nonsingular: witness.is_none(),
        witness,
        empirical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::FrameworkKind;
    use crate::protocol::tests::setup;

    #[test]
    fn chi_square_helpers() {
        let (stat, dof, p) = chi_square_uniform(&[10, 10, 10, 10]);
        assert_eq!((stat, dof), (0.0, 3));
        assert!((p - 1.0).abs() < 1e-12);
        let (_, _, p) = chi_square_uniform(&[40, 0, 0, 0]);
        assert!(p < 1e-6);
        let (stat, dof, _) = chi_square_two_sample(&[5, 5, 0], &[5, 5, 0]);
        assert_eq!((stat, dof), (0.0, 1));
        let (_, _, p) = chi_square_two_sample(&[100, 0], &[0, 100]);
        assert!(p < 1e-6);
    }

    #[test]
    fn reference_instance_is_secure_and_private() {
        for kind in [FrameworkKind::Lagrange, FrameworkKind::Csa] {
            let (basis, specs) = setup(kind, 8, 2, 2, 2, 3);
            let sec = check_secrecy(&basis, SubsetSelection::All, 10_000, 7).unwrap();
            assert!(sec.matrices_nonsingular);
            assert_eq!(sec.subsets_checked, 28 * 3);
            let e = sec.empirical.as_ref().unwrap();
            assert_eq!(e.method, "joint");
            assert!(sec.passed(), "{kind}: {e:?}");

            let priv_ = check_privacy(&basis, &specs, SubsetSelection::All, 10_000, 7).unwrap();
            assert!(priv_.matrices_nonsingular);
            assert!(priv_.passed(), "{kind}: {:?}", priv_.empirical);
        }
    }

    #[test]
    fn no_noise_means_nothing_to_check() {
        let (basis, _) = setup(FrameworkKind::Csa, 4, 1, 0, 1, 1);
        let rep = check_secrecy(&basis, SubsetSelection::All, 100, 0).unwrap();
        assert!(rep.passed() && rep.empirical.is_none() && rep.subsets_checked == 0);
    }

    #[test]
    fn single_query_coordinate_is_uniform() {
        let (basis, specs) = setup(FrameworkKind::Lagrange, 8, 2, 2, 2, 2);
        let field = basis.enc().modulus();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let spec = &specs[0];
        let views: Vec<Vec<FieldElement>> = (0..5000)
            .map(|_| {
                let noise: Vec<_> = (0..2).map(|_| field.random(&mut rng)).collect();
                vec![basis.query_share(&spec.residues, 1, 1, &noise, true, basis.enc().alpha(6)).unwrap()]
            })
            .collect();
        assert!(uniformity(&views, 11).passed);
    }

    #[test]
    fn sampled_subsets_and_guard() {
        let (basis, _) = setup(FrameworkKind::Csa, 8, 2, 2, 2, 1);
        let rep = check_secrecy(&basis, SubsetSelection::Sample { count: 5, seed: 1 }, 0, 0).unwrap();
        assert_eq!(rep.subsets_checked, 15);
        assert!(rep.empirical.is_none());
        assert!(subsets(60, 30, SubsetSelection::All).is_err());
    }

    #[test]
    fn leaky_noise_points_are_flagged() {
        use crate::params::{derive_system, select_parameters, EncodingParameters};
        let params = derive_system(8, 2, 2, 2, 1).unwrap();
        let q = crate::field::FieldModulus::new(11).unwrap();
        let enc = select_parameters(&params, q).unwrap();
        // Two servers sharing a point see the same noise combination.
        let mut alphas = enc.alphas().to_vec();
        alphas[7] = alphas[6];
        let enc = EncodingParameters::new(q, alphas, enc.betas().clone()).unwrap();
        let basis = BasisSet::new(FrameworkKind::Csa, enc, params).unwrap();
        let rep = check_secrecy(&basis, SubsetSelection::All, 0, 0).unwrap();
        assert!(!rep.passed());
        assert_eq!(rep.witness.unwrap().servers, vec![6, 7]);
    }
}
