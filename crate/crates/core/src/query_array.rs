//! The λ × P query array that schedules which file rows each column-query
//! retrieves, split into layers `U^0 … U^{λ-1}`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::params::{derive_system, SystemParams};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryArrayError {
    #[error("query array violates {condition} at column {column}")]
    ConditionsViolated { condition: &'static str, column: usize },
    #[error("malformed query array: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Int(usize),
    Star,
}

impl Cell {
    pub fn as_int(self) -> Option<usize> {
        match self {
            Cell::Int(v) => Some(v),
            Cell::Star => None,
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Int(v) => s.serialize_u64(*v as u64),
            Cell::Star => s.serialize_str("*"),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Cell::Int(v)),
            Raw::Str(s) if s == "*" => Ok(Cell::Star),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad cell {s:?}"))),
        }
    }
}

/// The query array together with its layer boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ArrayDoc", into = "ArrayDoc")]
pub struct QueryArray {
    lambda: usize,
    p: usize,
    gamma: Vec<usize>,
    /// Global index of the first column of each layer.
    offsets: Vec<usize>,
    cells: Vec<Cell>,
}

#[derive(Serialize, Deserialize)]
struct ArrayDoc {
    lambda: usize,
    #[serde(rename = "P")]
    p: usize,
    gamma: Vec<usize>,
    cells: Vec<Vec<Cell>>,
}

impl TryFrom<ArrayDoc> for QueryArray {
    type Error = QueryArrayError;
    fn try_from(doc: ArrayDoc) -> Result<Self, QueryArrayError> {
        let arr = QueryArray::from_rows(doc.lambda, doc.cells)?;
        if arr.p != doc.p || arr.gamma != doc.gamma {
            return Err(QueryArrayError::Malformed(
                "P or gamma disagree with lambda".into(),
            ));
        }
        Ok(arr)
    }
}

impl From<QueryArray> for ArrayDoc {
    fn from(a: QueryArray) -> Self {
        ArrayDoc {
            lambda: a.lambda,
            p: a.p,
            gamma: a.gamma.clone(),
            cells: (0..a.lambda).map(|i| a.row(i).to_vec()).collect(),
        }
    }
}

fn layer_shape(lambda: usize) -> Result<(usize, Vec<usize>), QueryArrayError> {
    if lambda == 0 {
        return Err(QueryArrayError::Malformed("lambda must be positive".into()));
    }
    // Any (K, X, T) with the right λ yields the same shape.
    let sys = derive_system(lambda + 1, 1, 0, 1, 1)
        .map_err(|e| QueryArrayError::Malformed(e.to_string()))?;
    Ok((sys.p(), sys.gamma().to_vec()))
}

fn offsets_of(gamma: &[usize]) -> Vec<usize> {
    gamma
        .iter()
        .scan(0, |acc, g| {
            let start = *acc;
            *acc += g;
            Some(start)
        })
        .collect()
}

/// Builds the query array for the system's λ.
pub fn build_query_array(params: &SystemParams) -> QueryArray {
    build_for_lambda(params.lambda()).expect("SystemParams carries a valid lambda")
}

pub fn build_for_lambda(lambda: usize) -> Result<QueryArray, QueryArrayError> {
    let (p, gamma) = layer_shape(lambda)?;
    let offsets = offsets_of(&gamma);
    let mut cells = vec![Cell::Star; lambda * p];
    let idx = |i: usize, col: usize| i * p + col;

    for i in 0..lambda {
        for j in 0..gamma[0] {
            cells[idx(i, j)] = Cell::Int(i + j * lambda);
        }
    }

    for h in 1..lambda {
        let off = offsets[h];
        for i in 0..lambda {
            // Sources: row i of the already built columns, every λ-th column
            // starting at (i+h-1) mod λ. They fill the non-star cells of row i
            // in ascending column order.
            let first = (i + h - 1) % lambda;
            let mut sources = (0..).map(|t| first + t * lambda).take_while(|&c| c < off);
            for j in 0..gamma[h] {
                let star = (j + lambda - i % lambda) % lambda < h;
                if star {
                    continue;
                }
                let src = sources.next().expect("source count matches non-star count");
                cells[idx(i, off + j)] = cells[idx(i, src)];
            }
            debug_assert!(sources.next().is_none());
        }
    }

    Ok(QueryArray {
        lambda,
        p,
        gamma,
        offsets,
        cells,
    })
}

impl QueryArray {
    /// Wraps explicit rows; P and Γ are derived from λ and must match.
    pub fn from_rows(lambda: usize, rows: Vec<Vec<Cell>>) -> Result<Self, QueryArrayError> {
        let (p, gamma) = layer_shape(lambda)?;
        if rows.len() != lambda || rows.iter().any(|r| r.len() != p) {
            return Err(QueryArrayError::Malformed(format!(
                "expected {lambda} rows of {p} cells"
            )));
        }
        Ok(QueryArray {
            lambda,
            p,
            offsets: offsets_of(&gamma),
            gamma,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn gamma(&self) -> &[usize] {
        &self.gamma
    }
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.p + col]
    }
    pub fn set_cell(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * self.p + col] = cell;
    }
    pub fn row(&self, row: usize) -> &[Cell] {
        &self.cells[row * self.p..(row + 1) * self.p]
    }

    /// Cell `u^h_{row, j}` of layer `h`.
    pub fn layer_cell(&self, h: usize, row: usize, j: usize) -> Cell {
        self.cell(row, self.offsets[h] + j)
    }

    /// Maps a global column to `(layer, local column)`.
    pub fn locate(&self, col: usize) -> (usize, usize) {
        let h = self.offsets.partition_point(|&o| o <= col) - 1;
        (h, col - self.offsets[h])
    }

    pub fn global_column(&self, h: usize, j: usize) -> usize {
        self.offsets[h] + j
    }

    fn column_ints(&self, col: usize) -> Vec<usize> {
        (0..self.lambda).filter_map(|i| self.cell(i, col).as_int()).collect()
    }

    fn layer_union(&self, h: usize) -> BTreeSet<usize> {
        (0..self.gamma[h])
            .flat_map(|j| self.column_ints(self.offsets[h] + j))
            .collect()
    }

    /// One bracketed line per row, `*` for stars and `|` between layers.
    pub fn to_pretty(&self) -> String {
        let width = (self.p.saturating_sub(1)).to_string().len().max(1);
        let mut out = String::new();
        for i in 0..self.lambda {
            out.push('[');
            for h in 0..self.lambda {
                if h > 0 {
                    out.push_str(" |");
                }
                for j in 0..self.gamma[h] {
                    let text = match self.layer_cell(h, i, j) {
                        Cell::Int(v) => v.to_string(),
                        Cell::Star => "*".to_string(),
                    };
                    if !(h == 0 && j == 0) {
                        out.push(' ');
                    }
                    let _ = write!(out, "{text:>width$}");
                }
            }
            out.push_str("]\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("array serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub holds: bool,
    /// First offending global column.
    pub column: Option<usize>,
}

impl ConditionCheck {
    fn at(column: Option<usize>) -> Self {
        ConditionCheck {
            holds: column.is_none(),
            column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Cells are integers in `[0, P)` or stars.
    pub c0: ConditionCheck,
    /// Layer-h columns carry λ-h integers, distinct mod λ.
    pub c1: ConditionCheck,
    /// Layer 0 covers every row `0..P`.
    pub c2: ConditionCheck,
    /// Every column above the last layer has one distinct integer reappearing
    /// in each deeper layer.
    pub c3: ConditionCheck,
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        self.c0.holds && self.c1.holds && self.c2.holds && self.c3.holds
    }

    fn first_failure(&self) -> Option<(&'static str, usize)> {
        [("C0", &self.c0), ("C1", &self.c1), ("C2", &self.c2), ("C3", &self.c3)]
            .into_iter()
            .find_map(|(name, c)| c.column.map(|col| (name, col)))
    }
}

/// Kuhn's augmenting-path matching: can every layer pick its own member?
fn has_distinct_representatives(options: &[Vec<usize>]) -> bool {
    fn augment(
        layer: usize,
        options: &[Vec<usize>],
        owner: &mut Vec<Option<usize>>,
        seen: &mut Vec<bool>,
    ) -> bool {
        for &slot in &options[layer] {
            if seen[slot] {
                continue;
            }
            seen[slot] = true;
            if owner[slot].is_none_or(|o| augment(o, options, owner, seen)) {
                owner[slot] = Some(layer);
                return true;
            }
        }
        false
    }
    let slots = options.iter().flatten().max().map_or(0, |m| m + 1);
    let mut owner = vec![None; slots];
    (0..options.len()).all(|l| augment(l, options, &mut owner, &mut vec![false; slots]))
}

pub fn verify_conditions(arr: &QueryArray) -> ConditionReport {
    let (lambda, p) = (arr.lambda, arr.p);

    let c0 = (0..p).find(|&col| {
        (0..lambda).any(|i| matches!(arr.cell(i, col), Cell::Int(v) if v >= p))
    });

    let c1 = (0..p).find(|&col| {
        let (h, _) = arr.locate(col);
        let ints = arr.column_ints(col);
        let residues: BTreeSet<usize> = ints.iter().map(|v| v % lambda).collect();
        ints.len() != lambda - h || residues.len() != ints.len()
    });

    let covered = arr.layer_union(0);
    let c2 = if (0..p).all(|v| covered.contains(&v)) {
        None
    } else {
        Some(0)
    };

    let unions: Vec<BTreeSet<usize>> = (0..lambda).map(|h| arr.layer_union(h)).collect();
    let c3 = (0..p).find(|&col| {
        let (h, _) = arr.locate(col);
        if h + 1 >= lambda {
            return false;
        }
        let ints = arr.column_ints(col);
        let options: Vec<Vec<usize>> = (h + 1..lambda)
            .map(|r| {
                ints.iter()
                    .enumerate()
                    .filter(|(_, v)| unions[r].contains(v))
                    .map(|(pos, _)| pos)
                    .collect()
            })
            .collect();
        !has_distinct_representatives(&options)
    });

    ConditionReport {
        c0: ConditionCheck::at(c0),
        c1: ConditionCheck::at(c1),
        c2: ConditionCheck::at(c2),
        c3: ConditionCheck::at(c3),
    }
}

/// Per-column retrieval sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub layer: usize,
    /// Column index inside the layer.
    pub local: usize,
    /// Column index in the whole array (also the response order).
    pub global: usize,
    /// File rows retrieved, ordered by array row.
    pub rows: Vec<usize>,
    /// `rows[i] mod λ`, which is also the array row each one sits in.
    pub residues: Vec<usize>,
    /// Compensation rows `(a_0, …, a_{λ-h-2})`, `a_{r-h-1}` recovered by layer `r`.
    pub compensation: Vec<usize>,
}

impl ColumnSpec {
    pub fn size(&self) -> usize {
        self.rows.len()
    }
}

/// Derives every column's sets. The compensation element for layer `r` is
/// `u^h_{(j-r+1) mod λ, j}`.
pub fn column_specs(arr: &QueryArray) -> Result<Vec<ColumnSpec>, QueryArrayError> {
    let report = verify_conditions(arr);
    if let Some((condition, column)) = report.first_failure() {
        return Err(QueryArrayError::ConditionsViolated { condition, column });
    }
    let lambda = arr.lambda;
    let unions: Vec<BTreeSet<usize>> = (0..lambda).map(|h| arr.layer_union(h)).collect();
    let mut specs = Vec::with_capacity(arr.p);
    for h in 0..lambda {
        for j in 0..arr.gamma[h] {
            let global = arr.global_column(h, j);
            let mut rows = Vec::new();
            let mut residues = Vec::new();
            for i in 0..lambda {
                if let Cell::Int(v) = arr.cell(i, global) {
                    rows.push(v);
                    residues.push(v % lambda);
                }
            }
            let mut compensation = Vec::with_capacity(lambda - h - 1);
            for r in h + 1..lambda {
                let row = (j + lambda - (r - 1) % lambda) % lambda;
                let witness = arr.cell(row, global).as_int().filter(|v| unions[r].contains(v));
                match witness {
                    Some(v) => compensation.push(v),
                    None => {
                        return Err(QueryArrayError::ConditionsViolated {
                            condition: "C3",
                            column: global,
                        })
                    }
                }
            }
            specs.push(ColumnSpec {
                layer: h,
                local: j,
                global,
                rows,
                residues,
                compensation,
            });
        }
    }
    Ok(specs)
}
