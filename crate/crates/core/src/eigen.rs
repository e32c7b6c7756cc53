//! Dense eigenvalue helpers on top of nalgebra's real Schur form.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{FlowError, Result};

pub type C64 = Complex<f64>;

/// Eigenvalues of a general real square matrix, sorted by (re, im).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    if !a.is_square() {
        return Err(FlowError::InvalidArgument("eigenvalues of a non-square matrix".into()));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 1000 * a.nrows().max(10))
        .ok_or_else(|| FlowError::Domain("Schur iteration did not converge".into()))?;
    let mut ev: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
    sort_spectrum(&mut ev);
    Ok(ev)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sort_spectrum(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Largest pairing distance after greedily matching every element of `a`
/// with its nearest unused element of `b`. `None` when lengths differ.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut a = a.to_vec();
    sort_spectrum(&mut a);
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in &a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))?;
        used[k] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

pub fn real_spectrum(v: &[f64]) -> Vec<C64> {
    let mut out: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
    sort_spectrum(&mut out);
    out
}

/// Full eigendecomposition `A = V Λ V⁻¹` of a diagonalizable matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<C64>,
    /// Eigenvectors as columns, unit 2-norm.
    pub vectors: DMatrix<C64>,
}

impl EigenDecomposition {
    /// Coefficients `c` with `V c = x`.
    pub fn coefficients(&self, x: &[f64]) -> Option<DVector<C64>> {
        let rhs = DVector::from_iterator(x.len(), x.iter().map(|&v| C64::new(v, 0.0)));
        self.vectors.clone().lu().solve(&rhs)
    }
}

/// Eigenvectors by SVD null spaces of `A − λI`, one per cluster of nearby
/// eigenvalues. Returns `None` when `A` looks defective or the eigenvector
/// matrix is too ill-conditioned to expand in.
pub fn eigendecomposition(a: &DMatrix<f64>) -> Result<Option<EigenDecomposition>> {
    let n = a.nrows();
    let values = eigenvalues(a)?;
    let scale = 1.0 + a.amax();
    let cluster_tol = 1e-7 * scale;
    let ac = a.map(|v| C64::new(v, 0.0));

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (k, v) in values.iter().enumerate() {
        match clusters.iter_mut().find(|c| (values[c[0]] - v).norm() < cluster_tol) {
            Some(c) => c.push(k),
            None => clusters.push(vec![k]),
        }
    }

    let mut vectors = DMatrix::<C64>::zeros(n, n);
    let mut out_values = Vec::with_capacity(n);
    let mut col = 0;
    for c in &clusters {
        let lambda = c.iter().map(|&k| values[k]).sum::<C64>() / c.len() as f64;
        let mut shifted = ac.clone();
        for d in 0..n {
            shifted[(d, d)] -= lambda;
        }
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested right vectors");
        let sv = &svd.singular_values;
        // singular values come sorted in decreasing order
        for r in 0..c.len() {
            let idx = n - 1 - r;
            if sv[idx] > 1e-6 * scale {
                return Ok(None);
            }
            for d in 0..n {
                vectors[(d, col)] = v_t[(idx, d)].conj();
            }
            out_values.push(lambda);
            col += 1;
        }
    }
    let sv = vectors.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > 1e10 {
        return Ok(None);
    }
    Ok(Some(EigenDecomposition { values: out_values, vectors }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_has_complex_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&a).unwrap();
        let want = [C64::new(0.0, -1.0), C64::new(0.0, 1.0)];
        assert!(multiset_distance(&ev, &want).unwrap() < 1e-14);
    }

    #[test]
    fn multiset_matching() {
        let a = real_spectrum(&[1.0, 2.0, 2.0]);
        let b = real_spectrum(&[2.0, 1.0, 2.0 + 1e-9]);
        assert!(multiset_distance(&a, &b).unwrap() < 2e-9);
        assert!(multiset_distance(&a, &b[..2]).is_none());
        let c = real_spectrum(&[1.0, 1.0, 2.0]);
        assert!(multiset_distance(&a, &c).unwrap() > 0.5);
    }

    #[test]
    fn decomposition_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 0.0, 0.0, 0.0]);
        let e = eigendecomposition(&a).unwrap().unwrap();
        let ac = a.map(|v| C64::new(v, 0.0));
        for k in 0..3 {
            let v = e.vectors.column(k);
            assert!((&ac * v - v * e.values[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn defective_detected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(eigendecomposition(&a).unwrap().is_none());
    }

    #[test]
    fn symmetric_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }
}
