//! Dense complex linear algebra over a truncated Hilbert space.
//!
//! Basis index `n` is the phonon number; matrices are stored row-major.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

const HERMITIAN_TOL: f64 = 1e-12;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(())
}

fn check_same(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// One ensemble member: a vector of probability amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        check_dim(amps.len())?;
        Ok(Self { amps })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Fock state `|n⟩` in a space of dimension `dim`.
    pub fn basis(dim: usize, n: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::DimensionMismatch { expected: dim, found: n + 1 });
        }
        let mut amps = vec![ZERO; dim];
        amps[n] = ONE;
        Ok(Self { amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        check_same(self.dim(), other.dim())?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn scaled(&self, c: Complex64) -> StateVector {
        StateVector { amps: self.amps.iter().map(|a| a * c).collect() }
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        check_same(self.dim(), other.dim())?;
        Ok(StateVector {
            amps: self.amps.iter().zip(&other.amps).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Dense square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    entries: Vec<Complex64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { dim, entries: vec![ZERO; dim * dim] })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut op = Self::zeros(dim)?;
        for n in 0..dim {
            op.entries[n * dim + n] = ONE;
        }
        Ok(op)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let mut op = Self::zeros(diag.len())?;
        for (n, &d) in diag.iter().enumerate() {
            op.entries[n * op.dim + n] = Complex64::new(d, 0.0);
        }
        Ok(op)
    }

    /// Builds from row-major entries; `entries.len()` must be `dim * dim`.
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        check_dim(dim)?;
        check_same(dim * dim, entries.len())?;
        Ok(Self { dim, entries })
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        check_dim(dim)?;
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            check_same(dim, row.len())?;
            entries.extend(row.iter().map(|&v| Complex64::new(v, 0.0)));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.entries[row * self.dim + col] = value;
    }

    pub fn adjoint(&self) -> Operator {
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                out[c * d + r] = self.entries[r * d + c].conj();
            }
        }
        Operator { dim: d, entries: out }
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        check_same(self.dim, other.dim)?;
        Ok(Operator {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Operator> {
        check_same(self.dim, other.dim)?;
        Ok(Operator {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, c: Complex64) -> Operator {
        Operator { dim: self.dim, entries: self.entries.iter().map(|a| a * c).collect() }
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        check_same(self.dim, other.dim)?;
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for r in 0..d {
            for k in 0..d {
                let a = self.entries[r * d + k];
                if a == ZERO {
                    continue;
                }
                let row = &other.entries[k * d..(k + 1) * d];
                for (o, b) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Ok(Operator { dim: d, entries: out })
    }

    /// Largest entry of `|O − O†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in r..d {
                let diff = self.entries[r * d + c] - self.entries[c * d + r].conj();
                worst = worst.max(diff.norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() <= HERMITIAN_TOL
    }

    /// Writes `self · src` into `dst` without allocating.
    #[inline]
    pub fn apply_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        let d = self.dim;
        debug_assert_eq!(src.len(), d);
        debug_assert_eq!(dst.len(), d);
        for (r, out) in dst.iter_mut().enumerate() {
            let row = &self.entries[r * d..(r + 1) * d];
            let mut acc = ZERO;
            for (a, b) in row.iter().zip(src) {
                acc += a * b;
            }
            *out = acc;
        }
    }

    /// Matrix-vector product; the result is not normalized.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        check_same(self.dim, psi.dim())?;
        let mut out = vec![ZERO; self.dim];
        self.apply_into(&psi.amps, &mut out);
        Ok(StateVector { amps: out })
    }

    /// `⟨ψ|O|ψ⟩` for a normalized `ψ`.
    pub fn expectation(&self, psi: &StateVector) -> Result<Complex64> {
        check_same(self.dim, psi.dim())?;
        Ok(self.expectation_slice(&psi.amps))
    }

    #[inline]
    pub(crate) fn expectation_slice(&self, psi: &[Complex64]) -> Complex64 {
        let d = self.dim;
        let mut acc = ZERO;
        for (r, pr) in psi.iter().enumerate() {
            let row = &self.entries[r * d..(r + 1) * d];
            let mut inner = ZERO;
            for (a, b) in row.iter().zip(psi) {
                inner += a * b;
            }
            acc += pr.conj() * inner;
        }
        acc
    }

    /// Reads the `{"dim", "re", "im"}` JSON operator format.
    pub fn from_json_str(text: &str) -> Result<Operator> {
        let file: OperatorFile = serde_json::from_str(text)?;
        file.into_operator()
    }

    pub fn from_json_file(path: &Path) -> Result<Operator> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::OperatorFile(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_file_format(&self) -> OperatorFile {
        let d = self.dim;
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..d).map(|r| self.entries[r * d..(r + 1) * d].iter().map(f).collect()).collect()
        };
        OperatorFile { dim: d, re: rows(|c| c.re), im: rows(|c| c.im) }
    }
}

/// On-disk operator: `{"dim": D, "re": [[..]], "im": [[..]]}`, row-major.
/// Row-compressed copy of an operator's nonzero entries, used by the
/// per-member kernels. Products with exact zeros are skipped, which leaves
/// every row sum unchanged.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SparseRows {
    Diagonal(Vec<Complex64>),
    Rows { row_start: Vec<usize>, entries: Vec<(usize, Complex64)> },
}

impl SparseRows {
    pub(crate) fn new(op: &Operator) -> Self {
        let d = op.dim;
        let mut row_start = Vec::with_capacity(d + 1);
        let mut entries = Vec::new();
        row_start.push(0);
        for r in 0..d {
            for c in 0..d {
                let v = op.entries[r * d + c];
                if v != ZERO {
                    entries.push((c, v));
                }
            }
            row_start.push(entries.len());
        }
        let diagonal = (0..d).all(|r| entries[row_start[r]..row_start[r + 1]].iter().all(|&(c, _)| c == r));
        if diagonal {
            return SparseRows::Diagonal((0..d).map(|r| op.entries[r * d + r]).collect());
        }
        SparseRows::Rows { row_start, entries }
    }

    #[inline]
    fn row_dot(row_start: &[usize], entries: &[(usize, Complex64)], r: usize, src: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        for &(c, v) in &entries[row_start[r]..row_start[r + 1]] {
            acc += v * src[c];
        }
        acc
    }

    #[inline]
    pub(crate) fn apply_into(&self, src: &[Complex64], dst: &mut [Complex64]) {
        match self {
            SparseRows::Diagonal(diag) => {
                for ((out, v), x) in dst.iter_mut().zip(diag).zip(src) {
                    *out = v * x;
                }
            }
            SparseRows::Rows { row_start, entries } => {
                for (r, out) in dst.iter_mut().enumerate() {
                    *out = Self::row_dot(row_start, entries, r, src);
                }
            }
        }
    }

    /// `⟨ψ|O|ψ⟩`, summed in the same order as [`Operator::expectation`].
    #[inline]
    pub(crate) fn expectation(&self, psi: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        match self {
            SparseRows::Diagonal(diag) => {
                for (pr, v) in psi.iter().zip(diag) {
                    acc += pr.conj() * (v * pr);
                }
            }
            SparseRows::Rows { row_start, entries } => {
                for (r, pr) in psi.iter().enumerate() {
                    acc += pr.conj() * Self::row_dot(row_start, entries, r, psi);
                }
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFile {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl OperatorFile {
    pub fn into_operator(self) -> Result<Operator> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::OperatorFile("dim must be at least 1".into()));
        }
        for (name, m) in [("re", &self.re), ("im", &self.im)] {
            if m.len() != d || m.iter().any(|row| row.len() != d) {
                return Err(Error::OperatorFile(format!("\"{name}\" must be a {d}x{d} matrix")));
            }
        }
        let entries = self
            .re
            .iter()
            .zip(&self.im)
            .flat_map(|(r, i)| r.iter().zip(i).map(|(&a, &b)| Complex64::new(a, b)))
            .collect();
        Operator::from_entries(d, entries)
    }
}

/// Truncated annihilation operator: `a[n, n+1] = sqrt(n+1)`.
pub fn build_annihilation(dim: usize) -> Result<Operator> {
    let mut a = Operator::zeros(dim)?;
    for n in 0..dim.saturating_sub(1) {
        a.set(n, n + 1, Complex64::new(((n + 1) as f64).sqrt(), 0.0));
    }
    Ok(a)
}

/// Number operator `diag(0, 1, ..., D−1)`.
pub fn build_number(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let diag: Vec<f64> = (0..dim).map(|n| n as f64).collect();
    Operator::from_diagonal(&diag)
}

/// Dimensionless position `a + a†`.
pub fn build_position(dim: usize) -> Result<Operator> {
    let a = build_annihilation(dim)?;
    a.add(&a.adjoint())
}

/// Hermitian, unit-trace, positive matrix assembled from or evolved alongside the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        check_dim(dim)?;
        check_same(dim * dim, entries.len())?;
        Ok(Self { dim, entries })
    }

    pub fn from_operator(op: Operator) -> Self {
        Self { dim: op.dim, entries: op.entries }
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { dim, entries: vec![ZERO; dim * dim] })
    }

    /// `|ψ⟩⟨ψ|`
    pub fn pure(psi: &StateVector) -> Self {
        let mut rho = Self { dim: psi.dim(), entries: vec![ZERO; psi.dim() * psi.dim()] };
        rho.add_projector(1.0, psi.amplitudes());
        rho
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        let id = Operator::identity(dim)?;
        Ok(Self::from_operator(id.scale(Complex64::new(1.0 / dim as f64, 0.0))))
    }

    /// Adds `weight · |ψ⟩⟨ψ|` in place.
    pub(crate) fn add_projector(&mut self, weight: f64, psi: &[Complex64]) {
        let d = self.dim;
        for r in 0..d {
            let wr = psi[r] * weight;
            for c in 0..d {
                self.entries[r * d + c] += wr * psi[c].conj();
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn as_operator(&self) -> Operator {
        Operator { dim: self.dim, entries: self.entries.clone() }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|n| self.entries[n * self.dim + n]).sum()
    }

    /// `Tr(ρ O)`
    pub fn expectation(&self, op: &Operator) -> Result<Complex64> {
        check_same(self.dim, op.dim)?;
        let d = self.dim;
        let mut acc = ZERO;
        for r in 0..d {
            for c in 0..d {
                acc += self.entries[r * d + c] * op.entries[c * d + r];
            }
        }
        Ok(acc)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        Operator { dim: self.dim, entries: self.entries.clone() }.hermiticity_defect()
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.hermitian_part();
        let eig = nalgebra::SymmetricEigen::new(m);
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn hermitian_part(&self) -> DMatrix<Complex64> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.entries);
        (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-10) and positivity (−1e-8).
    pub fn validate(&self) -> std::result::Result<(), String> {
        let herm = self.hermiticity_defect();
        if herm > 1e-10 {
            return Err(format!("not Hermitian: defect {herm:e}"));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(format!("trace {tr} differs from 1"));
        }
        let min = self.min_eigenvalue();
        if min < -1e-8 {
            return Err(format!("negative eigenvalue {min:e}"));
        }
        Ok(())
    }
}

/// Half the sum of singular values of `ρ1 − ρ2`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    check_same(a.dim, b.dim)?;
    let diff: Vec<Complex64> = a.entries.iter().zip(&b.entries).map(|(x, y)| x - y).collect();
    let m = DMatrix::from_row_slice(a.dim, a.dim, &diff);
    let sv = m.singular_values();
    Ok(0.5 * sv.iter().sum::<f64>())
}

/// Reads a JSON operator file (see [`OperatorFile`]).
pub fn read_operator_file(path: &Path) -> Result<Operator> {
    Operator::from_json_file(path)
}
