//! Exact arithmetic over prime fields GF(q), dense polynomials, and linear
//! algebra over GF(q).
//!
//! Polynomials are coefficient vectors with the constant term first.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("{0} is not a prime")]
    NotPrime(u64),
    #[error("modulus {0} is too large (must be below 2^62)")]
    ModulusTooLarge(u64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("field modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u64, right: u64 },
    #[error("polynomial has no coefficients")]
    EmptyPolynomial,
    #[error("no interpolation points given")]
    NoPoints,
    #[error("duplicate abscissa {0} in interpolation points")]
    DuplicateAbscissa(u64),
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        b %= n;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for a in SMALL {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// The modulus of a prime field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct FieldModulus(u64);

impl FieldModulus {
    pub fn new(q: u64) -> Result<Self, FieldError> {
        if q >= 1 << 62 {
            return Err(FieldError::ModulusTooLarge(q));
        }
        if !is_prime(q) {
            return Err(FieldError::NotPrime(q));
        }
        Ok(FieldModulus(q))
    }

    pub fn q(self) -> u64 {
        self.0
    }

    /// Reduces `v` into the field.
    pub fn elem(self, v: u64) -> FieldElement {
        FieldElement {
            value: v % self.0,
            modulus: self,
        }
    }

    /// Maps a signed integer into the field.
    pub fn elem_i64(self, v: i64) -> FieldElement {
        self.elem(v.rem_euclid(self.0 as i64) as u64)
    }

    pub fn zero(self) -> FieldElement {
        self.elem(0)
    }

    pub fn one(self) -> FieldElement {
        self.elem(1)
    }

    /// Canonical enumeration `σ_0, σ_1, …` with `σ_i = i`.
    pub fn elements(self) -> impl Iterator<Item = FieldElement> {
        (0..self.0).map(move |v| self.elem(v))
    }

    /// Number of bytes needed to write any element big-endian.
    pub fn byte_width(self) -> usize {
        let bits = 64 - (self.0 - 1).leading_zeros() as usize;
        bits.div_ceil(8).max(1)
    }

    /// Draws a uniform element.
    pub fn random<R: rand::Rng + ?Sized>(self, rng: &mut R) -> FieldElement {
        self.elem(rng.random_range(0..self.0))
    }
}

impl TryFrom<u64> for FieldModulus {
    type Error = FieldError;
    fn try_from(q: u64) -> Result<Self, FieldError> {
        FieldModulus::new(q)
    }
}

impl From<FieldModulus> for u64 {
    fn from(m: FieldModulus) -> u64 {
        m.0
    }
}

impl fmt::Display for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF({})", self.0)
    }
}

/// Smallest prime `p >= n` (`n < 2` is treated as 2).
pub fn smallest_prime_at_least(n: u64) -> FieldModulus {
    let mut p = n.max(2);
    while !is_prime(p) {
        p += 1;
    }
    FieldModulus(p)
}

/// An element of GF(q) that carries its modulus.
///
/// The operator impls panic on a modulus mismatch; [`field_arith`] and the
/// `try_*` methods report it as an error instead.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    modulus: FieldModulus,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl FieldElement {
    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> FieldModulus {
        self.modulus
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    fn check(self, other: FieldElement) -> Result<(), FieldError> {
        if self.modulus != other.modulus {
            return Err(FieldError::ModulusMismatch {
                left: self.modulus.0,
                right: other.modulus.0,
            });
        }
        Ok(())
    }

    pub fn try_add(self, other: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(other)?;
        let q = self.modulus.0;
        let s = self.value + other.value;
        Ok(FieldElement {
            value: if s >= q { s - q } else { s },
            modulus: self.modulus,
        })
    }

    pub fn try_sub(self, other: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(other)?;
        let q = self.modulus.0;
        let v = if self.value >= other.value {
            self.value - other.value
        } else {
            self.value + q - other.value
        };
        Ok(FieldElement {
            value: v,
            modulus: self.modulus,
        })
    }

    pub fn try_mul(self, other: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(other)?;
        let v = (self.value as u128 * other.value as u128) % self.modulus.0 as u128;
        Ok(FieldElement {
            value: v as u64,
            modulus: self.modulus,
        })
    }

    pub fn try_div(self, other: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(other)?;
        self.try_mul(other.inverse()?)
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inverse(self) -> Result<FieldElement, FieldError> {
        if self.value == 0 {
            return Err(FieldError::DivisionByZero);
        }
        let q = self.modulus.0 as i128;
        let (mut r0, mut r1) = (q, self.value as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let quot = r0 / r1;
            (r0, r1) = (r1, r0 - quot * r1);
            (t0, t1) = (t1, t0 - quot * t1);
        }
        debug_assert_eq!(r0, 1);
        Ok(FieldElement {
            value: t0.rem_euclid(q) as u64,
            modulus: self.modulus,
        })
    }

    pub fn pow(self, mut e: u64) -> FieldElement {
        let mut base = self;
        let mut acc = self.modulus.one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
}

/// Checked binary operation on two field elements.
pub fn field_arith(
    a: FieldElement,
    b: FieldElement,
    op: ArithOp,
) -> Result<FieldElement, FieldError> {
    match op {
        ArithOp::Add => a.try_add(b),
        ArithOp::Sub => a.try_sub(b),
        ArithOp::Mul => a.try_mul(b),
        ArithOp::Div => a.try_div(b),
    }
}

macro_rules! impl_op {
    ($tr:ident, $method:ident, $checked:ident) => {
        impl $tr for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: FieldElement) -> FieldElement {
                match self.$checked(rhs) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }
    };
}

impl_op!(Add, add, try_add);
impl_op!(Sub, sub, try_sub);
impl_op!(Mul, mul, try_mul);
impl_op!(Div, div, try_div);

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: FieldElement) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: FieldElement) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: FieldElement) {
        *self = *self * rhs;
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        self.modulus.zero() - self
    }
}

fn ensure_same(items: impl IntoIterator<Item = FieldElement>) -> Result<(), FieldError> {
    let mut it = items.into_iter();
    if let Some(first) = it.next() {
        for x in it {
            first.check(x)?;
        }
    }
    Ok(())
}

/// Horner evaluation of `coeffs` (constant term first) at `x`.
pub fn poly_eval(coeffs: &[FieldElement], x: FieldElement) -> Result<FieldElement, FieldError> {
    if coeffs.is_empty() {
        return Err(FieldError::EmptyPolynomial);
    }
    ensure_same(coeffs.iter().copied().chain([x]))?;
    Ok(coeffs.iter().rev().fold(x.modulus.zero(), |acc, &c| acc * x + c))
}

pub fn poly_mul(a: &[FieldElement], b: &[FieldElement]) -> Vec<FieldElement> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let zero = a[0].modulus.zero();
    let mut out = vec![zero; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn poly_add(a: &[FieldElement], b: &[FieldElement]) -> Vec<FieldElement> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut out = long.to_vec();
    for (o, &s) in out.iter_mut().zip(short) {
        *o += s;
    }
    out
}

pub fn poly_scale(a: &[FieldElement], s: FieldElement) -> Vec<FieldElement> {
    a.iter().map(|&c| c * s).collect()
}

/// Degree of a coefficient vector, ignoring trailing zeros; `None` for the
/// zero polynomial.
pub fn poly_degree(a: &[FieldElement]) -> Option<usize> {
    a.iter().rposition(|c| !c.is_zero())
}

/// Coefficients of the unique polynomial of degree `< points.len()` through
/// every point. The result always has exactly `points.len()` coefficients.
pub fn lagrange_interpolate(
    points: &[(FieldElement, FieldElement)],
) -> Result<Vec<FieldElement>, FieldError> {
    let Some(&(x0, _)) = points.first() else {
        return Err(FieldError::NoPoints);
    };
    let field = x0.modulus();
    ensure_same(points.iter().flat_map(|&(x, y)| [x, y]))?;
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            if points[i].0 == points[j].0 {
                return Err(FieldError::DuplicateAbscissa(points[i].0.value()));
            }
        }
    }

    // master(x) = Π (x - x_i)
    let mut master = vec![field.one()];
    for &(x, _) in points {
        master = poly_mul(&master, &[-x, field.one()]);
    }

    let mut out = vec![field.zero(); n];
    for (i, &(xi, yi)) in points.iter().enumerate() {
        if yi.is_zero() {
            continue;
        }
        // master / (x - xi) by synthetic division
        let mut quot = vec![field.zero(); n];
        let mut carry = field.zero();
        for d in (0..n).rev() {
            carry = master[d + 1] + carry * xi;
            quot[d] = carry;
        }
        let denom = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .fold(field.one(), |acc, (_, &(xj, _))| acc * (xi - xj));
        let w = yi * denom.inverse()?;
        for (o, &c) in out.iter_mut().zip(&quot) {
            *o += c * w;
        }
    }
    Ok(out)
}

/// Dense row-major matrix over GF(q).
#[derive(Clone, PartialEq, Eq)]
pub struct FieldMatrix {
    rows: usize,
    cols: usize,
    modulus: FieldModulus,
    entries: Vec<FieldElement>,
}

impl fmt::Debug for FieldMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<u64>> = (0..self.rows)
            .map(|r| self.row(r).iter().map(|e| e.value()).collect())
            .collect();
        write!(f, "{}{:?}", self.modulus, rows)
    }
}

impl FieldMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        modulus: FieldModulus,
        entries: Vec<FieldElement>,
    ) -> Result<Self, FieldError> {
        if entries.len() != rows * cols {
            return Err(FieldError::DimensionMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        for e in &entries {
            if e.modulus() != modulus {
                return Err(FieldError::ModulusMismatch {
                    left: modulus.q(),
                    right: e.modulus().q(),
                });
            }
        }
        Ok(FieldMatrix {
            rows,
            cols,
            modulus,
            entries,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        modulus: FieldModulus,
        mut f: impl FnMut(usize, usize) -> FieldElement,
    ) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let e = f(r, c);
                assert_eq!(e.modulus(), modulus, "entry from another field");
                entries.push(e);
            }
        }
        FieldMatrix {
            rows,
            cols,
            modulus,
            entries,
        }
    }

    pub fn from_values(rows: &[Vec<u64>], modulus: FieldModulus) -> Result<Self, FieldError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(FieldError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            entries.extend(r.iter().map(|&v| modulus.elem(v)));
        }
        FieldMatrix::new(rows.len(), cols, modulus, entries)
    }

    pub fn zeros(rows: usize, cols: usize, modulus: FieldModulus) -> Self {
        FieldMatrix::from_fn(rows, cols, modulus, |_, _| modulus.zero())
    }

    pub fn identity(n: usize, modulus: FieldModulus) -> Self {
        FieldMatrix::from_fn(n, n, modulus, |r, c| {
            if r == c {
                modulus.one()
            } else {
                modulus.zero()
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    pub fn get(&self, r: usize, c: usize) -> FieldElement {
        self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: FieldElement) {
        assert_eq!(v.modulus(), self.modulus);
        self.entries[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[FieldElement] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn entries(&self) -> &[FieldElement] {
        &self.entries
    }

    pub fn to_values(&self) -> Vec<Vec<u64>> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|e| e.value()).collect())
            .collect()
    }

    pub fn mul_vec(&self, x: &[FieldElement]) -> Result<Vec<FieldElement>, FieldError> {
        if x.len() != self.cols {
            return Err(FieldError::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        ensure_same(x.iter().copied().chain([self.modulus.zero()]))?;
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(self.modulus.zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    fn require_square(&self) -> Result<(), FieldError> {
        if self.rows != self.cols {
            return Err(FieldError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Row-reduces in place and returns the rank. Pivots are the first nonzero
    /// entry in the column at or below the current row.
    fn eliminate(rows: usize, cols: usize, a: &mut [FieldElement], aug: Option<&mut [FieldElement]>) -> usize {
        let mut aug = aug;
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let Some(p) = (rank..rows).find(|&r| !a[r * cols + c].is_zero()) else {
                continue;
            };
            if p != rank {
                for k in 0..cols {
                    a.swap(p * cols + k, rank * cols + k);
                }
                if let Some(b) = aug.as_deref_mut() {
                    b.swap(p, rank);
                }
            }
            let inv = a[rank * cols + c].inverse().expect("pivot is nonzero");
            for k in c..cols {
                a[rank * cols + k] *= inv;
            }
            if let Some(b) = aug.as_deref_mut() {
                b[rank] *= inv;
            }
            for r in 0..rows {
                if r == rank {
                    continue;
                }
                let factor = a[r * cols + c];
                if factor.is_zero() {
                    continue;
                }
                for k in c..cols {
                    let v = a[rank * cols + k];
                    a[r * cols + k] -= factor * v;
                }
                if let Some(b) = aug.as_deref_mut() {
                    let v = b[rank];
                    b[r] -= factor * v;
                }
            }
            rank += 1;
        }
        rank
    }

    pub fn rank(&self) -> usize {
        let mut a = self.entries.clone();
        Self::eliminate(self.rows, self.cols, &mut a, None)
    }

    pub fn is_nonsingular(&self) -> Result<bool, FieldError> {
        self.require_square()?;
        Ok(self.rank() == self.rows)
    }

    /// Solves `self · x = b`.
    pub fn solve(&self, b: &[FieldElement]) -> Result<Vec<FieldElement>, FieldError> {
        self.require_square()?;
        if b.len() != self.rows {
            return Err(FieldError::DimensionMismatch {
                expected: self.rows,
                got: b.len(),
            });
        }
        ensure_same(b.iter().copied().chain([self.modulus.zero()]))?;
        let mut a = self.entries.clone();
        let mut x = b.to_vec();
        let rank = Self::eliminate(self.rows, self.cols, &mut a, Some(&mut x));
        if rank < self.rows {
            return Err(FieldError::SingularMatrix);
        }
        Ok(x)
    }

    /// Determinant by elimination.
    pub fn determinant(&self) -> Result<FieldElement, FieldError> {
        self.require_square()?;
        let n = self.rows;
        let mut a = self.entries.clone();
        let mut det = self.modulus.one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&r| !a[r * n + c].is_zero()) else {
                return Ok(self.modulus.zero());
            };
            if p != c {
                for k in 0..n {
                    a.swap(p * n + k, c * n + k);
                }
                det = -det;
            }
            let pivot = a[c * n + c];
            det *= pivot;
            let inv = pivot.inverse()?;
            for r in c + 1..n {
                let factor = a[r * n + c] * inv;
                if factor.is_zero() {
                    continue;
                }
                for k in c..n {
                    let v = a[c * n + k];
                    a[r * n + k] -= factor * v;
                }
            }
        }
        Ok(det)
    }
}

/// Solves a square system; free-function form of [`FieldMatrix::solve`].
pub fn solve_linear(a: &FieldMatrix, b: &[FieldElement]) -> Result<Vec<FieldElement>, FieldError> {
    a.solve(b)
}

pub fn is_nonsingular(a: &FieldMatrix) -> Result<bool, FieldError> {
    a.is_nonsingular()
}
