//! Sparse real LU factorization with reuse across right-hand sides.
//!
//! Thin wrapper over `faer`'s supernodal/simplicial sparse LU. A matrix is
//! assembled from triplets, factorized once, and then used for any number
//! of forward/backward substitutions.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::MatMut;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("invalid sparse matrix: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Triplet accumulator for a square sparse matrix. Duplicate entries are
/// summed.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(nnz),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push(Triplet::new(row, col, value));
    }

    /// Stored entries, duplicates included.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Appends every entry of `other`, which must fit inside `self`.
    pub fn extend_from(&mut self, other: &SparseBuilder) {
        debug_assert!(other.n <= self.n);
        self.entries.extend_from_slice(&other.entries);
    }

    /// Entries as `(row, col, value)` triplets, duplicates included.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|t| (t.row, t.col, t.val))
    }

    /// `y = A·x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
        y
    }

    /// Dense row-major copy, mostly for tests on small systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for t in &self.entries {
            d[t.row][t.col] += t.val;
        }
        d
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut cols = vec![0.0; self.n];
        // duplicates must be merged before taking absolute values
        let dense_cols = self.merged();
        for ((_, c), v) in dense_cols {
            cols[c] += v.abs();
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    fn merged(&self) -> Vec<((usize, usize), f64)> {
        let mut sorted: Vec<_> = self
            .entries
            .iter()
            .map(|t| ((t.row, t.col), t.val))
            .collect();
        sorted.sort_by_key(|e| e.0);
        let mut out: Vec<((usize, usize), f64)> = Vec::with_capacity(sorted.len());
        for (key, v) in sorted {
            match out.last_mut() {
                Some((k, acc)) if *k == key => *acc += v,
                _ => out.push((key, v)),
            }
        }
        out
    }

    pub fn factorize(&self) -> Result<LuFactor, LinalgError> {
        LuFactor::new(self)
    }
}

/// Reusable LU factorization of a square sparse matrix.
pub struct LuFactor {
    lu: Lu<usize, f64>,
    n: usize,
    norm1: f64,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactor")
            .field("n", &self.n)
            .field("norm1", &self.norm1)
            .finish()
    }
}

impl LuFactor {
    pub fn new(matrix: &SparseBuilder) -> Result<Self, LinalgError> {
        let n = matrix.n;
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &matrix.entries)
            .map_err(|e| LinalgError::Invalid(format!("{e:?}")))?;
        let lu = mat.sp_lu().map_err(|_| LinalgError::Singular {
            condition: f64::INFINITY,
        })?;
        let factor = Self {
            lu,
            n,
            norm1: matrix.norm1(),
        };
        // a zero numeric pivot shows up as non-finite substitution output
        let mut probe = vec![1.0; n];
        factor.lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut probe, n, 1));
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::Singular {
                condition: f64::INFINITY,
            });
        }
        Ok(factor)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A·x = rhs` in place.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<(), LinalgError> {
        self.check_len(rhs.len())?;
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
        self.check_finite(rhs)
    }

    /// Solves `Aᵀ·x = rhs` in place.
    pub fn solve_transpose(&self, rhs: &mut [f64]) -> Result<(), LinalgError> {
        self.check_len(rhs.len())?;
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
        self.check_finite(rhs)
    }

    /// Hager-Higham estimate of the 1-norm condition number
    /// `‖A‖₁·‖A⁻¹‖₁`. Uses a handful of extra substitutions and never
    /// refactorizes.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let mut y = x.clone();
            if self.solve(&mut y).is_err() {
                return f64::INFINITY;
            }
            let norm_y: f64 = y.iter().map(|v| v.abs()).sum();
            if norm_y <= est {
                break;
            }
            est = norm_y;
            let mut z: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            if self.solve_transpose(&mut z).is_err() {
                return f64::INFINITY;
            }
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, f64::NEG_INFINITY), |acc, e| if e.1 > acc.1 { e } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x.iter_mut().for_each(|v| *v = 0.0);
            x[j] = 1.0;
        }
        est * self.norm1
    }

    fn check_len(&self, len: usize) -> Result<(), LinalgError> {
        if len != self.n {
            return Err(LinalgError::Dimension {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }

    fn check_finite(&self, x: &[f64]) -> Result<(), LinalgError> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(LinalgError::Singular {
                condition: f64::INFINITY,
            })
        }
    }
}
