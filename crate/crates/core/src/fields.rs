//! Grid-sampled bundle-valued forms and endomorphism-valued data.
//!
//! Storage is component-major: component `c` of a rank-`r` field occupies
//! `values[c * n_points .. (c + 1) * n_points]`. Endomorphism entry `(i, j)`
//! of a rank-`r` endomorphism field is component `i * r + j`.
//!
//! Bundle-valued fields are stored in the unitary frame of the fiber (see
//! [`crate::hodge::Fiber`]); conversion to the holomorphic frame is available
//! on the fiber.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::C64;

/// Form degree of a field: `(0,0)` or `(0,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormKind {
    Section,
    Form01,
}

impl FormKind {
    /// Cohomological degree `q`.
    pub fn q(self) -> usize {
        match self {
            FormKind::Section => 0,
            FormKind::Form01 => 1,
        }
    }

    pub fn from_q(q: usize) -> Result<Self> {
        match q {
            0 => Ok(FormKind::Section),
            1 => Ok(FormKind::Form01),
            other => Err(Error::Config(format!("q must be 0 or 1, got {other}"))),
        }
    }
}

/// A bundle-valued `(0,q)`-form sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    kind: FormKind,
    rank: usize,
    values: Vec<C64>,
}

impl Field {
    pub fn new(kind: FormKind, rank: usize, values: Vec<C64>) -> Result<Self> {
        if rank == 0 || values.len() % rank != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not split into {rank} components", values.len())));
        }
        Ok(Self { kind, rank, values })
    }

    pub fn zeros(kind: FormKind, rank: usize, n_points: usize) -> Self {
        Self { kind, rank, values: vec![C64::new(0.0, 0.0); rank * n_points] }
    }

    pub fn kind(&self) -> FormKind {
        self.kind
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / self.rank
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let n = self.n_points();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [C64] {
        let n = self.n_points();
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<C64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!("expected {} values, got {}", self.values.len(), values.len())));
        }
        Ok(Self { kind: self.kind, rank: self.rank, values })
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::KindMismatch(format!("{:?} vs {:?}", self.kind, other.kind)));
        }
        if self.rank != other.rank || self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "rank {} / {} values vs rank {} / {} values",
                self.rank,
                self.values.len(),
                other.rank,
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, a: C64) -> Field {
        Field { kind: self.kind, rank: self.rank, values: self.values.iter().map(|v| v * a).collect() }
    }

    /// `self + a * other`.
    pub fn plus_scaled(&self, a: C64, other: &Field) -> Result<Field> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        Ok(Field { kind: self.kind, rank: self.rank, values })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.plus_scaled(C64::new(-1.0, 0.0), other)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.plus_scaled(C64::new(1.0, 0.0), other)
    }

    /// `sum_i coeffs[i] * fields[i]`; `fields` must be non-empty.
    pub fn combination(coeffs: &[C64], fields: &[Field]) -> Result<Field> {
        let first = fields.first().ok_or_else(|| Error::ShapeMismatch("empty combination".into()))?;
        if coeffs.len() != fields.len() {
            return Err(Error::ShapeMismatch("coefficient count differs from field count".into()));
        }
        let mut out = Field::zeros(first.kind, first.rank, first.n_points());
        for (c, f) in coeffs.iter().zip(fields) {
            first.same_shape(f)?;
            crate::linalg::axpy(*c, &f.values, &mut out.values);
        }
        Ok(out)
    }

    /// Largest pointwise magnitude.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Endomorphism-valued `(0,q)`-form sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EndField {
    kind: FormKind,
    rank: usize,
    values: Vec<C64>,
}

impl EndField {
    pub fn new(kind: FormKind, rank: usize, values: Vec<C64>) -> Result<Self> {
        let r2 = rank * rank;
        if rank == 0 || values.len() % r2 != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not split into {r2} entries", values.len())));
        }
        Ok(Self { kind, rank, values })
    }

    /// Constant matrix `m` at every point.
    pub fn constant(kind: FormKind, m: &CMat, n_points: usize) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::ShapeMismatch("endomorphism must be a non-empty square matrix".into()));
        }
        let r = m.nrows();
        let mut values = Vec::with_capacity(r * r * n_points);
        for i in 0..r {
            for j in 0..r {
                values.extend(std::iter::repeat(m[(i, j)]).take(n_points));
            }
        }
        Ok(Self { kind, rank: r, values })
    }

    /// Rank-1 field with the given constant scalar.
    pub fn scalar(kind: FormKind, value: C64, n_points: usize) -> Self {
        Self { kind, rank: 1, values: vec![value; n_points] }
    }

    /// Builds a field from a per-point matrix function.
    pub fn from_fn<F: Fn(usize) -> CMat>(kind: FormKind, rank: usize, n_points: usize, f: F) -> Result<Self> {
        let mut values = vec![C64::new(0.0, 0.0); rank * rank * n_points];
        for p in 0..n_points {
            let m = f(p);
            if m.nrows() != rank || m.ncols() != rank {
                return Err(Error::ShapeMismatch(format!("matrix at point {p} is not {rank}x{rank}")));
            }
            for i in 0..rank {
                for j in 0..rank {
                    values[(i * rank + j) * n_points + p] = m[(i, j)];
                }
            }
        }
        Ok(Self { kind, rank, values })
    }

    pub fn kind(&self) -> FormKind {
        self.kind
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / (self.rank * self.rank)
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Entry `(i, j)` at every point.
    pub fn entry(&self, i: usize, j: usize) -> &[C64] {
        let n = self.n_points();
        let c = i * self.rank + j;
        &self.values[c * n..(c + 1) * n]
    }

    /// Matrix value at one point.
    pub fn at(&self, p: usize) -> CMat {
        let r = self.rank;
        let n = self.n_points();
        CMat::from_fn(r, r, |i, j| self.values[(i * r + j) * n + p])
    }

    /// Pointwise trace.
    pub fn trace(&self) -> Vec<C64> {
        let n = self.n_points();
        (0..n).map(|p| (0..self.rank).map(|i| self.entry(i, i)[p]).sum()).collect()
    }

    /// View as an untwisted rank-`r^2` field (for the Laplacian of `End(F)`).
    pub fn as_field(&self) -> Field {
        Field { kind: self.kind, rank: self.rank * self.rank, values: self.values.clone() }
    }

    /// Inverse of [`EndField::as_field`].
    pub fn from_field(field: &Field) -> Result<Self> {
        let r = (field.rank() as f64).sqrt().round() as usize;
        if r * r != field.rank() {
            return Err(Error::ShapeMismatch(format!("rank {} is not a perfect square", field.rank())));
        }
        Self::new(field.kind(), r, field.values().to_vec())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == C64::new(0.0, 0.0))
    }

    pub fn scaled(&self, a: C64) -> EndField {
        EndField { kind: self.kind, rank: self.rank, values: self.values.iter().map(|v| v * a).collect() }
    }
}
