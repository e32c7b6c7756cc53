//! Weight matrices `Ω` (sparse, neighborhood structured) and distance
//! matrices `D`.

use crate::error::{invalid, FlowError, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;

const FACTOR_TOL: f64 = 1e-12;
/// Below this many vertices row products run serially.
const PAR_THRESHOLD: usize = 256;

/// Compressed sparse row storage for a square `m x m` matrix.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    m: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(m: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, k, w) in &entries {
            if i >= m || k >= m {
                return Err(invalid(format!("entry ({i},{k}) out of range for m={m}")));
            }
            if !w.is_finite() {
                return Err(invalid(format!("entry ({i},{k}) is not finite")));
            }
        }
        entries.sort_by_key(|&(i, k, _)| (i, k));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(invalid(format!("duplicate entry ({},{})", w[0].0, w[0].1)));
        }
        let mut row_ptr = vec![0; m + 1];
        for &(i, _, _) in &entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = entries.iter().map(|e| e.1).collect();
        let vals = entries.iter().map(|e| e.2).collect();
        Ok(Self { m, row_ptr, cols, vals })
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    fn get(&self, i: usize, k: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&k) {
            Ok(pos) => self.vals[r.start + pos],
            Err(_) => 0.0,
        }
    }

    fn apply_row_into(&self, i: usize, x: &[f64], n: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, w) in self.row(i) {
            for (o, xk) in out.iter_mut().zip(&x[k * n..(k + 1) * n]) {
                *o += w * xk;
            }
        }
    }

    fn apply(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.m * n];
        if self.m >= PAR_THRESHOLD {
            out.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, o)| self.apply_row_into(i, x, n, o));
        } else {
            for (i, o) in out.chunks_mut(n).enumerate() {
                self.apply_row_into(i, x, n, o);
            }
        }
        out
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            for (k, w) in self.row(i) {
                d[(i, k)] = w;
            }
        }
        d
    }

    fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.m {
            for (k, w) in self.row(i) {
                worst = worst.max((w - self.get(k, i)).abs());
            }
        }
        worst
    }
}

/// Symmetric factorization `Ω = Diag(w)^{-1} Ω̂` with `Ω̂ = Ω̂^T`, `w > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub w: Vec<f64>,
    omega_hat: WeightMatrix,
}

impl Factorization {
    pub fn omega_hat(&self) -> &WeightMatrix {
        &self.omega_hat
    }
}

/// Sparse `m x m` averaging parameters `Ω` with neighborhoods
/// `N_i = { k : ω_ik stored }`.
///
/// Nonnegativity, positive diagonal and symmetric neighborhoods are recorded
/// as flags, not enforced: several counterexamples need matrices violating
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    csr: Csr,
    factorization: Option<Box<Factorization>>,
    symmetric_neighborhood: bool,
}

impl WeightMatrix {
    pub fn from_triplets(m: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if m == 0 {
            return Err(invalid("weight matrix needs m >= 1"));
        }
        let csr = Csr::from_triplets(m, entries)?;
        let symmetric_neighborhood = (0..m).all(|i| {
            let r = csr.row_ptr[i]..csr.row_ptr[i + 1];
            csr.cols[r].iter().all(|&k| {
                let rk = csr.row_ptr[k]..csr.row_ptr[k + 1];
                csr.cols[rk].binary_search(&i).is_ok()
            })
        });
        Ok(Self { csr, factorization: None, symmetric_neighborhood })
    }

    /// Builds from a dense row-major `m x m` array, storing nonzero entries.
    pub fn from_dense(m: usize, values: &[f64]) -> Result<Self> {
        if values.len() != m * m {
            return Err(invalid(format!("dense weight matrix needs {} entries", m * m)));
        }
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(idx, &w)| (idx / m, idx % m, w))
            .collect();
        Self::from_triplets(m, entries)
    }

    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(invalid("weight matrix must be square"));
        }
        Self::from_dense(m, &rows.concat())
    }

    pub fn from_nalgebra(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(invalid("weight matrix must be square"));
        }
        let m = a.nrows();
        let values: Vec<f64> = (0..m * m).map(|idx| a[(idx / m, idx % m)]).collect();
        Self::from_dense(m, &values)
    }

    pub fn identity(m: usize) -> Self {
        Self::from_triplets(m, (0..m).map(|i| (i, i, 1.0)).collect())
            .expect("identity is well formed")
    }

    /// `Ω = Diag(w)^{-1} Ω̂`, with the factorization attached.
    pub fn from_factorization(w: Vec<f64>, omega_hat: WeightMatrix) -> Result<Self> {
        let m = omega_hat.m();
        if w.len() != m {
            return Err(invalid("w must have one entry per vertex"));
        }
        if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(invalid("w must be strictly positive"));
        }
        let entries = (0..m)
            .flat_map(|i| omega_hat.row(i).map(move |(k, v)| (i, k, v)).collect::<Vec<_>>())
            .map(|(i, k, v)| (i, k, v / w[i]))
            .collect();
        let omega = Self::from_triplets(m, entries)?;
        omega.with_factorization(w, omega_hat)
    }

    /// Attaches a factorization after checking `Ω = Diag(w)^{-1} Ω̂` and
    /// `Ω̂ = Ω̂^T` within `1e-12`.
    pub fn with_factorization(mut self, w: Vec<f64>, omega_hat: WeightMatrix) -> Result<Self> {
        let m = self.m();
        if w.len() != m || omega_hat.m() != m {
            return Err(invalid("factorization dimensions do not match Ω"));
        }
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("factorization weights w must be positive"));
        }
        let asym = omega_hat.max_asymmetry();
        if asym > FACTOR_TOL {
            return Err(invalid(format!("Ω̂ not symmetric (deviation {asym:e})")));
        }
        for (i, &wi) in w.iter().enumerate() {
            for (k, v) in omega_hat.row(i) {
                if (v / wi - self.get(i, k)).abs() > FACTOR_TOL {
                    return Err(invalid(format!("Ω ≠ Diag(w)^-1 Ω̂ at ({i},{k})")));
                }
            }
            for (k, v) in self.row(i) {
                if (omega_hat.get(i, k) / w[i] - v).abs() > FACTOR_TOL {
                    return Err(invalid(format!("Ω ≠ Diag(w)^-1 Ω̂ at ({i},{k})")));
                }
            }
        }
        self.factorization = Some(Box::new(Factorization { w, omega_hat }));
        Ok(self)
    }

    /// Tries to find `w > 0` with `Diag(w) Ω` symmetric by propagating the
    /// ratios `w_k / w_i = ω_ik / ω_ki` over the neighborhood graph.
    /// Returns `None` when `Ω` is not of that form.
    pub fn detect_factorization(&self) -> Option<Factorization> {
        if let Some(f) = &self.factorization {
            return Some((**f).clone());
        }
        let m = self.m();
        let mut w = vec![0.0_f64; m];
        for root in 0..m {
            if w[root] > 0.0 {
                continue;
            }
            w[root] = 1.0;
            let mut stack = vec![root];
            while let Some(i) = stack.pop() {
                for (k, wik) in self.row(i) {
                    if k == i {
                        continue;
                    }
                    let wki = self.get(k, i);
                    if wki == 0.0 || wik / wki <= 0.0 {
                        return None;
                    }
                    let wk = w[i] * wik / wki;
                    if w[k] == 0.0 {
                        w[k] = wk;
                        stack.push(k);
                    } else if (w[k] - wk).abs() > 1e-10 * w[k].max(wk) {
                        return None;
                    }
                }
            }
        }
        let entries = (0..m)
            .flat_map(|i| self.row(i).map(move |(k, v)| (i, k, v)).collect::<Vec<_>>())
            .map(|(i, k, v)| (i, k, w[i] * v))
            .collect();
        let mut omega_hat = Self::from_triplets(m, entries).ok()?;
        // symmetrize away roundoff
        let dense = omega_hat.to_dense();
        let sym = (&dense + dense.transpose()) * 0.5;
        omega_hat = Self::from_nalgebra(&sym).ok()?;
        if omega_hat.max_asymmetry() > FACTOR_TOL {
            return None;
        }
        Some(Factorization { w, omega_hat })
    }

    pub fn factorization(&self) -> Option<&Factorization> {
        self.factorization.as_deref()
    }

    pub fn m(&self) -> usize {
        self.csr.m
    }

    pub fn nnz(&self) -> usize {
        self.csr.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.csr.row(i)
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.csr.get(i, k)
    }

    /// Neighborhood sizes `|N_i|` (number of stored entries per row).
    pub fn neighborhood_sizes(&self) -> Vec<usize> {
        (0..self.m()).map(|i| self.csr.row_ptr[i + 1] - self.csr.row_ptr[i]).collect()
    }

    /// `Ω 1_m`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.m()).map(|i| self.row(i).map(|(_, w)| w).sum()).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.csr.vals.iter().all(|&w| w >= 0.0)
    }

    pub fn has_positive_diagonal(&self) -> bool {
        (0..self.m()).all(|i| self.get(i, i) > 0.0)
    }

    pub fn is_symmetric_neighborhood(&self) -> bool {
        self.symmetric_neighborhood
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.is_nonnegative() && self.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    /// Uniform weights `ω_ik = 1/|N_i|` on symmetric neighborhoods.
    pub fn is_uniform(&self) -> bool {
        self.symmetric_neighborhood
            && (0..self.m()).all(|i| {
                let n = (self.csr.row_ptr[i + 1] - self.csr.row_ptr[i]) as f64;
                self.row(i).all(|(_, w)| (w - 1.0 / n).abs() < 1e-14)
            })
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.csr.max_asymmetry()
    }

    /// `(Ω X)` for a row-major `m x n` matrix `X`, row by row over neighborhoods.
    pub fn apply(&self, x: &[f64], n: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.m() * n, "Ω application: shape mismatch");
        self.csr.apply(x, n)
    }

    pub(crate) fn apply_row_into(&self, i: usize, x: &[f64], n: usize, out: &mut [f64]) {
        self.csr.apply_row_into(i, x, n, out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.csr.to_dense()
    }

    pub(crate) fn check_dim(&self, m: usize) -> Result<()> {
        if self.m() != m {
            return Err(FlowError::InvalidArgument(format!(
                "Ω has {} rows but the state has {m} vertices",
                self.m()
            )));
        }
        Ok(())
    }
}

/// Dense `m x n` matrix of nonnegative data-to-prototype distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * n || m == 0 || n == 0 {
            return Err(invalid(format!("distance matrix {m}x{n} needs {} entries", m * n)));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(FlowError::Data {
                index: idx / n,
                message: format!("distance entry ({},{}) must be finite and >= 0", idx / n, idx % n),
            });
        }
        Ok(Self { m, n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("rows of unequal length"));
        }
        Self::new(m, n, rows.concat())
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self { m, n, data: vec![0.0; m * n] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_and_products() {
        let om = WeightMatrix::from_dense(3, &[0.0, 0.5, 0.5, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5])
            .unwrap();
        assert!(om.is_nonnegative());
        assert!(!om.has_positive_diagonal());
        assert!(om.is_row_stochastic(1e-15));
        assert_eq!(om.neighborhood_sizes(), vec![2, 3, 3]);
        assert!(om.is_symmetric_neighborhood());
        let x = [1.0, 0.0, 0.0, 1.0, 0.5, 0.5];
        let y = om.apply(&x, 2);
        assert_eq!(y, vec![0.25, 0.75, 0.375, 0.625, 0.5, 0.5]);
    }

    #[test]
    fn factorization_roundtrip() {
        let hat = WeightMatrix::from_dense(3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]).unwrap();
        let om = WeightMatrix::from_factorization(vec![2.0, 4.0, 1.5], hat).unwrap();
        let f = om.factorization().unwrap();
        assert_eq!(f.w, vec![2.0, 4.0, 1.5]);
        let plain = WeightMatrix::from_nalgebra(&om.to_dense()).unwrap();
        let det = plain.detect_factorization().unwrap();
        // w is determined up to a scale per connected component
        let scale = det.w[0] / 2.0;
        for (a, b) in det.w.iter().zip([2.0, 4.0, 1.5]) {
            assert!((a / scale - b).abs() < 1e-12);
        }
        let nonsym = WeightMatrix::from_dense(3, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        assert!(nonsym.detect_factorization().is_none());
    }

    #[test]
    fn rejects_bad_factorization() {
        let om = WeightMatrix::from_dense(2, &[0.5, 0.5, 0.25, 0.75]).unwrap();
        let bad_hat = WeightMatrix::from_dense(2, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(om.clone().with_factorization(vec![2.0, 2.0], bad_hat).is_err());
        let hat = WeightMatrix::from_dense(2, &[1.0, 1.0, 1.0, 3.0]).unwrap();
        assert!(om.with_factorization(vec![2.0, 4.0], hat).is_ok());
    }

    #[test]
    fn distance_validation() {
        assert!(DistanceMatrix::new(1, 2, vec![0.0, -1.0]).is_err());
        assert!(matches!(
            DistanceMatrix::new(2, 1, vec![0.0, f64::NAN]),
            Err(FlowError::Data { index: 1, .. })
        ));
        assert!(WeightMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
    }
}
