use num_complex::Complex64;

use super::{Branch, Bus, NetworkError};

/// Square complex matrix in compressed sparse row form. Structural entries
/// are kept even when their numeric value cancels to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseComplex {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseComplex {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzero pattern of row `i` as `(col, value)` pairs, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(p) => self.vals[span.start + p],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span].binary_search(&j).is_ok()
    }

    /// `Y·V`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut d = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, y) in self.row(i) {
                row[j] = y;
            }
        }
        d
    }
}

/// Bus admittance matrix from in-service branches and bus shunts.
///
/// With series admittance `y = 1/(r + jx)`, charging `b`, tap `t` and shift
/// `θ`: `Y_ff += (y + jb/2)/t²`, `Y_tt += y + jb/2`,
/// `Y_ft -= y/(t·e^{-jθ})`, `Y_tf -= y/(t·e^{jθ})`.
pub fn build_ybus(
    buses: &[Bus],
    branches: &[Branch],
    base_mva: f64,
) -> Result<SparseComplex, NetworkError> {
    let n = buses.len();
    let mut trip = Vec::with_capacity(n + 4 * branches.len());
    for (i, bus) in buses.iter().enumerate() {
        trip.push((i, i, Complex64::new(bus.gs, bus.bs) / base_mva));
    }
    for (k, br) in branches.iter().enumerate() {
        if !br.status {
            continue;
        }
        if br.series_r == 0.0 && br.series_x == 0.0 {
            return Err(NetworkError::ZeroImpedance { branch: k });
        }
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.series_r, br.series_x);
        let ytt = ys + Complex64::new(0.0, br.shunt_b / 2.0);
        let t = br.tap_ratio;
        let tap = Complex64::from_polar(t, br.phase_shift());
        let (f, to) = (br.from_idx, br.to_idx);
        trip.push((f, f, ytt / (t * t)));
        trip.push((to, to, ytt));
        trip.push((f, to, -ys / tap.conj()));
        trip.push((to, f, -ys / tap));
    }
    Ok(SparseComplex::from_triplets(n, trip))
}
