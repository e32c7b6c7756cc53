//! Primitives on the probability simplex and on the assignment manifold
//! (the product of `m` simplices): replicator matrices, tangent projection,
//! the lifting exponential map and its inverse, plus entropy / divergence
//! diagnostics.

use crate::error::{domain, invalid, Result};
use crate::weights::WeightMatrix;

/// Entries below this value count as zero for support computations.
pub const SUPPORT_TOL: f64 = 1e-15;
/// Row-sum tolerance for simplex membership.
pub const SUM_TOL: f64 = 1e-12;

fn sum_tol(values: &[f64]) -> f64 {
    // relative slack for long vectors
    SUM_TOL * (values.len() as f64).max(1.0)
}

/// A point of the closed probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex_row(&values)?;
        Ok(Self(values))
    }

    pub fn barycenter(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, j: usize) -> Self {
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        Self(v)
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_interior(&self) -> bool {
        is_interior_row(&self.0)
    }

    pub fn support(&self) -> Vec<usize> {
        support(&self.0)
    }
}

/// A vector of the tangent space `T_0 = { v : <1, v> = 0 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let s: f64 = values.iter().sum();
        let scale = values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if !s.is_finite() || s.abs() > sum_tol(&values) * scale {
            return Err(invalid(format!("tangent vector entries sum to {s}, expected 0")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Row-stochastic `m x n` matrix; row `i` is the soft label assignment of
/// vertex `i`. Stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentState {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl AssignmentState {
    pub fn new(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(invalid("assignment state needs m >= 1 and n >= 1"));
        }
        if data.len() != m * n {
            return Err(invalid(format!(
                "assignment state of shape {m}x{n} needs {} entries, got {}",
                m * n,
                data.len()
            )));
        }
        for (i, row) in data.chunks(n).enumerate() {
            check_simplex_row(row).map_err(|e| invalid(format!("row {i}: {e}")))?;
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

    pub(crate) fn from_raw(m: usize, n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), m * n);
        Self { m, n, data }
    }

    pub fn barycenter(m: usize, n: usize) -> Self {
        Self::from_raw(m, n, vec![1.0 / n as f64; m * n])
    }

    /// Integral state with row `i` equal to the unit vector `e_{labels[i]}`.
    pub fn from_labels(labels: &[usize], n: usize) -> Result<Self> {
        if labels.is_empty() || n == 0 {
            return Err(invalid("empty labeling"));
        }
        let mut data = vec![0.0; labels.len() * n];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n {
                return Err(invalid(format!("label {l} at vertex {i} out of range 0..{n}")));
            }
            data[i * n + l] = 1.0;
        }
        Ok(Self::from_raw(labels.len(), n, data))
    }

    /// `(1/|J+|) 1_m 1_{J+}^T`.
    pub fn uniform_on(m: usize, n: usize, labels: &[usize]) -> Result<Self> {
        if labels.is_empty() || labels.iter().any(|&j| j >= n) {
            return Err(invalid("label subset must be non-empty and within range"));
        }
        let mut row = vec![0.0; n];
        for &j in labels {
            row[j] = 1.0;
        }
        let k = row.iter().sum::<f64>();
        row.iter_mut().for_each(|v| *v /= k);
        Ok(Self::from_raw(m, n, row.repeat(m)))
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.n)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn is_interior(&self) -> bool {
        is_interior_row(&self.data)
    }

    /// True when every row is a unit vector (within [`SUPPORT_TOL`]).
    pub fn is_integral(&self) -> bool {
        self.rows().all(|r| {
            let ones = r.iter().filter(|&&v| (v - 1.0).abs() < SUPPORT_TOL * 10.0).count();
            let zeros = r.iter().filter(|&&v| v.abs() < SUPPORT_TOL).count();
            ones == 1 && zeros == r.len() - 1
        })
    }

    /// Row-wise argmax; `None` for rows whose maximum is attained more than once.
    pub fn argmax_rows(&self) -> Vec<Option<usize>> {
        self.rows().map(unique_argmax).collect()
    }

    /// Row-wise argmax; ties resolved towards the lowest label index.
    pub fn argmax_rows_lowest(&self) -> Vec<usize> {
        self.rows()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// `max_i ||self_i - other_i||_1`.
    pub fn max_row_l1_distance(&self, other: &AssignmentState) -> f64 {
        assert_eq!((self.m, self.n), (other.m, other.n), "shape mismatch");
        self.rows()
            .zip(other.rows())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_difference(&self, other: &AssignmentState) -> f64 {
        assert_eq!((self.m, self.n), (other.m, other.n), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest row maximum; 1 at integral states, `1/n` at the barycenter.
    pub fn min_row_max(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Tangent field on the assignment manifold, one `T_0` row per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    pub m: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl TangentField {
    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn max_row_sum_abs(&self) -> f64 {
        self.data
            .chunks(self.n)
            .map(|r| r.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

fn check_simplex_row(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(invalid("empty simplex point"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid("simplex entries must be finite and nonnegative"));
    }
    let s: f64 = values.iter().sum();
    if (s - 1.0).abs() > sum_tol(values) {
        return Err(invalid(format!("simplex entries sum to {s}, expected 1")));
    }
    Ok(())
}

pub(crate) fn is_interior_row(values: &[f64]) -> bool {
    values.iter().all(|&v| v > SUPPORT_TOL)
}

pub(crate) fn support(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= SUPPORT_TOL)
        .map(|(j, _)| j)
        .collect()
}

pub(crate) fn unique_argmax(r: &[f64]) -> Option<usize> {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut hits = r.iter().enumerate().filter(|(_, &v)| v == max);
    let first = hits.next().map(|(j, _)| j);
    if hits.next().is_some() {
        None
    } else {
        first
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = p ⊙ x − <p, x> p`, i.e. `R_p x` without forming `R_p`.
pub fn replicator_apply_into(p: &[f64], x: &[f64], out: &mut [f64]) {
    let mean = dot(p, x);
    for ((o, &pj), &xj) in out.iter_mut().zip(p).zip(x) {
        *o = pj * (xj - mean);
    }
}

/// Applies the replicator matrix `R_p = Diag(p) − p p^T` to `x`.
pub fn replicator_apply(p: &SimplexPoint, x: &[f64]) -> Result<TangentVector> {
    if p.dim() != x.len() {
        return Err(invalid(format!(
            "dimension mismatch: p has {} entries, x has {}",
            p.dim(),
            x.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    replicator_apply_into(p.as_slice(), x, &mut out);
    Ok(TangentVector::from_raw(out))
}

/// Orthogonal projection onto `T_0`: subtracts the mean.
pub fn project_tangent(x: &[f64]) -> TangentVector {
    let mut v = x.to_vec();
    project_tangent_in_place(&mut v);
    TangentVector::from_raw(v)
}

pub(crate) fn project_tangent_in_place(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// `out = p e^v / <p, e^v>` with the maximum of `v` subtracted first.
///
/// Entries of `p` may be zero (faces are preserved); callers that need the
/// interior contract check it themselves.
pub(crate) fn exp_map_into(p: &[f64], v: &[f64], out: &mut [f64]) {
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for ((o, &pj), &vj) in out.iter_mut().zip(p).zip(v) {
        *o = pj * (vj - vmax).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Lifting map `exp_p(v) = p e^v / <p, e^v>`.
pub fn exp_map(p: &SimplexPoint, v: &[f64]) -> Result<SimplexPoint> {
    if p.dim() != v.len() {
        return Err(invalid("dimension mismatch between p and v"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("exp_map argument must be finite"));
    }
    if !p.is_interior() {
        return Err(domain("exp_map base point must be interior"));
    }
    let mut out = vec![0.0; v.len()];
    exp_map_into(p.as_slice(), v, &mut out);
    Ok(SimplexPoint::from_raw(out))
}

/// Inverse of [`exp_map`] restricted to `T_0`: `Π_0 log(q / p)`.
pub fn inv_exp_map(p: &SimplexPoint, q: &SimplexPoint) -> Result<TangentVector> {
    if p.dim() != q.dim() {
        return Err(invalid("dimension mismatch between p and q"));
    }
    if !p.is_interior() || !q.is_interior() {
        return Err(domain("inverse exponential map needs interior points"));
    }
    let mut v: Vec<f64> = q
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(a, b)| (a / b).ln())
        .collect();
    project_tangent_in_place(&mut v);
    Ok(TangentVector::from_raw(v))
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Normalized average entropy `−(1/(m log n)) Σ S_ij log S_ij`, in `[0, 1]`.
pub fn avg_entropy(s: &AssignmentState) -> f64 {
    if s.n() < 2 {
        return 0.0;
    }
    let h: f64 = s.as_slice().iter().map(|&v| -xlogx(v)).sum();
    (h / (s.m() as f64 * (s.n() as f64).ln())).clamp(0.0, 1.0)
}

/// `Σ_i w_i KL(S*_i || S_i)`; `+∞` when `supp(S*) ⊄ supp(S)`.
pub fn weighted_kl(sstar: &AssignmentState, s: &AssignmentState, w: &[f64]) -> Result<f64> {
    if (sstar.m(), sstar.n()) != (s.m(), s.n()) || w.len() != s.m() {
        return Err(invalid("shape mismatch in weighted KL divergence"));
    }
    let mut total = 0.0;
    for (i, (a, b)) in sstar.rows().zip(s.rows()).enumerate() {
        let mut kl = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            if x < SUPPORT_TOL {
                continue;
            }
            if y < SUPPORT_TOL {
                return Ok(f64::INFINITY);
            }
            kl += x * (x / y).ln();
        }
        total += w[i] * kl;
    }
    Ok(total)
}

/// Frobenius inner product `<S, Ω̂ S>`, nondecreasing along the S-flow when
/// `Ω = Diag(w)^{-1} Ω̂` with symmetric `Ω̂`.
pub fn lyapunov_value(s: &AssignmentState, omega_hat: &WeightMatrix) -> Result<f64> {
    if omega_hat.m() != s.m() {
        return Err(invalid("Ω̂ dimension does not match the number of vertices"));
    }
    let asym = omega_hat.max_asymmetry();
    if asym > 1e-10 {
        return Err(invalid(format!("Ω̂ is not symmetric (max deviation {asym:e})")));
    }
    let prod = omega_hat.apply(s.as_slice(), s.n());
    Ok(dot(s.as_slice(), &prod))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn replicator_examples() {
        let r = replicator_apply(&sp(&[1.0, 0.0]), &[3.0, -7.0]).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
        let r = replicator_apply(&sp(&[0.5, 0.5]), &[1.0, 1.0]).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
        let r = replicator_apply(&sp(&[0.5, 0.5]), &[1.0, 0.0]).unwrap();
        assert!((r.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((r.as_slice()[1] + 0.25).abs() < 1e-15);
        assert!(replicator_apply(&sp(&[0.5, 0.5]), &[1.0]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_tangent(&[1.0, 1.0, 1.0]).as_slice(), &[0.0, 0.0, 0.0]);
        let v = project_tangent(&[1.0, 0.0, 0.0]);
        let expect = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, b) in v.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let t = project_tangent(&[0.3, -0.1, -0.2]);
        let tt = project_tangent(t.as_slice());
        for (a, b) in t.as_slice().iter().zip(tt.as_slice()) {
            assert!((a - b).abs() < 1e-16);
        }
    }

    #[test]
    fn exp_map_examples() {
        let p = sp(&[0.2, 0.3, 0.5]);
        assert_eq!(exp_map(&p, &[0.0; 3]).unwrap().as_slice(), p.as_slice());
        let q = exp_map(&sp(&[0.5, 0.5]), &[2f64.ln(), 0.0]).unwrap();
        assert!((q.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        let v = [0.3, -1.2, 0.7];
        let a = exp_map(&p, &v).unwrap();
        let b = exp_map(&p, &v.map(|x| x + 5.0)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        // large arguments stay finite
        let big = exp_map(&p, &[1e4, -1e4, 0.0]).unwrap();
        assert!((big.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!(exp_map(&p, &[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn inv_exp_map_examples() {
        let p = sp(&[0.5, 0.5]);
        let v = inv_exp_map(&p, &p).unwrap();
        assert!(v.as_slice().iter().all(|x| x.abs() < 1e-16));
        let v = inv_exp_map(&p, &sp(&[2.0 / 3.0, 1.0 / 3.0])).unwrap();
        let h = 0.5 * 2f64.ln();
        assert!((v.as_slice()[0] - h).abs() < 1e-15);
        assert!((v.as_slice()[1] + h).abs() < 1e-15);
        assert!(matches!(
            inv_exp_map(&p, &sp(&[1.0, 0.0])),
            Err(crate::FlowError::Domain(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        let integral = AssignmentState::from_labels(&[0, 2, 1], 3).unwrap();
        assert_eq!(avg_entropy(&integral), 0.0);
        let bary = AssignmentState::barycenter(4, 3);
        assert!((avg_entropy(&bary) - 1.0).abs() < 1e-15);
        let one = AssignmentState::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!((avg_entropy(&one) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        let s = AssignmentState::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        assert_eq!(weighted_kl(&s, &s, &[1.0, 2.0]).unwrap(), 0.0);
        let star = AssignmentState::from_labels(&[0, 1], 2).unwrap();
        let face = AssignmentState::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(weighted_kl(&star, &face, &[1.0, 1.0]).unwrap(), f64::INFINITY);
        let p = AssignmentState::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let q = AssignmentState::from_rows(&[vec![0.6, 0.4]]).unwrap();
        let plain = 0.3 * (0.3f64 / 0.6).ln() + 0.7 * (0.7f64 / 0.4).ln();
        assert!((weighted_kl(&p, &q, &[1.0]).unwrap() - plain).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_examples() {
        let id = WeightMatrix::identity(3);
        let s = AssignmentState::from_labels(&[0, 1, 1], 2).unwrap();
        assert!((lyapunov_value(&s, &id).unwrap() - 3.0).abs() < 1e-15);
        let b = AssignmentState::barycenter(3, 4);
        assert!((lyapunov_value(&b, &id).unwrap() - 0.75).abs() < 1e-15);
        let asym = WeightMatrix::from_dense(2, &[1.0, 0.5, 0.0, 1.0]).unwrap();
        let s2 = AssignmentState::barycenter(2, 2);
        assert!(lyapunov_value(&s2, &asym).is_err());
    }

    #[test]
    fn state_validation() {
        assert!(AssignmentState::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(AssignmentState::new(1, 2, vec![-0.1, 1.1]).is_err());
        assert!(AssignmentState::new(2, 2, vec![0.5, 0.5]).is_err());
        let s = AssignmentState::from_labels(&[1, 0], 2).unwrap();
        assert!(s.is_integral());
        assert!(!s.is_interior());
        assert_eq!(s.argmax_rows(), vec![Some(1), Some(0)]);
        assert_eq!(AssignmentState::barycenter(1, 2).argmax_rows(), vec![None]);
    }
}
