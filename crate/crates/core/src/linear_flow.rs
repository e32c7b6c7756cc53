//! The linear assignment flow `V̇ = R_Ŝ(ΩV) + b` on the tangent space, its
//! spectral analysis and the lifted-limit prediction of integral labelings.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigen::{eigendecomposition, eigenvalues, C64};
use crate::error::{domain, invalid, FlowError, Result};
use crate::ode::rk4_integrate;
use crate::simplex::{dot, exp_map_into, project_tangent_in_place, replicator_apply_into, AssignmentState};
use crate::stability::DENSE_CAP;
use crate::weights::WeightMatrix;

const RANGE_TOL: f64 = 1e-8;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 100_000;
/// `|c₁|` below this makes the limit prediction indeterminate.
pub const C1_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LinearSystem {
    omega: WeightMatrix,
    shat: AssignmentState,
    b: Option<Vec<f64>>,
    w0: AssignmentState,
}

impl LinearSystem {
    /// `b = None` gives the homogeneous system.
    pub fn new(omega: WeightMatrix, shat: AssignmentState, b: Option<Vec<f64>>, w0: AssignmentState) -> Result<Self> {
        omega.check_dim(shat.m())?;
        if w0.m() != shat.m() || w0.n() != shat.n() {
            return Err(invalid("W0 and Ŝ must have the same shape"));
        }
        if !shat.is_interior() || !w0.is_interior() {
            return Err(domain("Ŝ and W0 must be interior"));
        }
        if let Some(b) = &b {
            let n = shat.n();
            if b.len() != shat.m() * n {
                return Err(invalid("b has the wrong length"));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(invalid("b must be finite"));
            }
            let scale = 1.0 + b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if b.chunks(n).any(|r| r.iter().sum::<f64>().abs() > 1e-12 * scale * n as f64) {
                return Err(invalid("b must lie in the tangent space (zero row-block sums)"));
            }
        }
        Ok(Self { omega, shat, b, w0 })
    }

    pub fn homogeneous(omega: WeightMatrix, shat: AssignmentState, w0: AssignmentState) -> Result<Self> {
        Self::new(omega, shat, None, w0)
    }

    pub fn m(&self) -> usize {
        self.shat.m()
    }

    pub fn n(&self) -> usize {
        self.shat.n()
    }

    pub fn dim(&self) -> usize {
        self.m() * self.n()
    }

    pub fn omega(&self) -> &WeightMatrix {
        &self.omega
    }

    pub fn shat(&self) -> &AssignmentState {
        &self.shat
    }

    pub fn b(&self) -> Option<&[f64]> {
        self.b.as_deref()
    }

    pub fn w0(&self) -> &AssignmentState {
        &self.w0
    }

    pub fn is_homogeneous(&self) -> bool {
        self.b.as_ref().is_none_or(|b| b.iter().all(|&v| v == 0.0))
    }

    /// `AV`, matrix-free.
    pub fn apply_a(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(invalid(format!("expected a vector of length {}, got {}", self.dim(), v.len())));
        }
        Ok(self.apply_a_raw(v))
    }

    fn apply_a_raw(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let ov = self.omega.apply(v, n);
        let mut out = vec![0.0; v.len()];
        for (i, row) in out.chunks_mut(n).enumerate() {
            replicator_apply_into(self.shat.row(i), &ov[i * n..(i + 1) * n], row);
        }
        out
    }

    /// Dense `A = R_Ŝ(Ω ⊗ I_n)`.
    pub fn dense_a(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d > DENSE_CAP {
            return Err(FlowError::ResourceLimit(format!("dense A of size {d} exceeds cap {DENSE_CAP}")));
        }
        let mut a = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for c in 0..d {
            e[c] = 1.0;
            let col = self.apply_a_raw(&e);
            a.set_column(c, &DVector::from_vec(col));
            e[c] = 0.0;
        }
        Ok(a)
    }
}

/// `AV (+ b)`.
pub fn laf_operator_apply(sys: &LinearSystem, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = sys.apply_a(v)?;
    if let Some(b) = &sys.b {
        out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Homogenized {
    pub system: LinearSystem,
    /// `V₀ + A⁺b`.
    pub v0: Vec<f64>,
    /// `−A⁺b`, added to the homogeneous trajectory to recover the original.
    pub shift: Vec<f64>,
}

fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0) * a.nrows() as f64;
    svd.pseudo_inverse(eps).expect("eps is nonnegative")
}

/// Moves the constant term into the initial value.
pub fn homogenize(sys: &LinearSystem, v0: &[f64]) -> Result<Homogenized> {
    if v0.len() != sys.dim() {
        return Err(invalid("V0 has the wrong length"));
    }
    let mut system = sys.clone();
    system.b = None;
    let Some(b) = sys.b.as_ref().filter(|_| !sys.is_homogeneous()) else {
        return Ok(Homogenized { system, v0: v0.to_vec(), shift: vec![0.0; v0.len()] });
    };
    let a = sys.dense_a()?;
    let bv = DVector::from_column_slice(b);
    let x = pinv(&a) * &bv;
    let residual = (&a * &x - &bv).amax();
    if residual > RANGE_TOL * bv.amax().max(1.0) {
        return Err(FlowError::Range(format!("b is not in the range of A (residual {residual:e})")));
    }
    Ok(Homogenized {
        system,
        v0: v0.iter().zip(x.iter()).map(|(v, x)| v + x).collect(),
        shift: x.iter().map(|x| -x).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMethod {
    EigenExpansion,
    Rk4,
}

/// `V(t) = Σ c_i e^{λ_i t} v_i`, or RK4 with step `t/1000` when `A` is not
/// safely diagonalizable.
pub fn propagate(sys: &LinearSystem, v0: &[f64], t: f64) -> Result<(Vec<f64>, PropagationMethod)> {
    if !sys.is_homogeneous() {
        return Err(invalid("propagate needs a homogeneous system; call homogenize first"));
    }
    if v0.len() != sys.dim() {
        return Err(invalid("V0 has the wrong length"));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(invalid("t must be finite and nonnegative"));
    }
    if t == 0.0 {
        return Ok((v0.to_vec(), PropagationMethod::EigenExpansion));
    }
    let a = sys.dense_a()?;
    if let Some(e) = eigendecomposition(&a)? {
        if let Some(c) = e.coefficients(v0) {
            let scaled = DVector::from_iterator(c.len(), c.iter().zip(&e.values).map(|(c, l)| c * (l * t).exp()));
            let v = &e.vectors * scaled;
            let norm = v.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            if v.iter().all(|z| z.im.abs() <= 1e-8 * (1.0 + norm)) {
                return Ok((v.iter().map(|z| z.re).collect(), PropagationMethod::EigenExpansion));
            }
        }
    }
    Ok((propagate_rk4(sys, v0, t, 1000)?, PropagationMethod::Rk4))
}

/// RK4 on `V̇ = AV (+ b)` with `steps` equal steps.
pub fn propagate_rk4(sys: &LinearSystem, v0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    if v0.len() != sys.dim() || steps == 0 {
        return Err(invalid("bad V0 length or zero steps"));
    }
    let h = t / steps as f64;
    Ok(rk4_integrate(v0, h, steps, |v, out| {
        out.copy_from_slice(&laf_operator_apply(sys, v).expect("length checked"));
    }))
}

/// `exp_{W₀}(V / W₀)` row-wise.
pub fn lift_tangent(v: &[f64], w0: &AssignmentState) -> Result<AssignmentState> {
    let n = w0.n();
    if v.len() != w0.m() * n {
        return Err(invalid("V has the wrong length"));
    }
    let mut out = vec![0.0; v.len()];
    for i in 0..w0.m() {
        let p = w0.row(i);
        let dir: Vec<f64> = v[i * n..(i + 1) * n].iter().zip(p).map(|(v, p)| v / p).collect();
        exp_map_into(p, &dir, &mut out[i * n..(i + 1) * n]);
    }
    AssignmentState::new(w0.m(), n, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositivityClass {
    /// All nonzero eigenvalues have positive real part.
    PositiveOffNullspace,
    /// Some but not all nonzero eigenvalues have positive real part.
    Mixed,
    /// No eigenvalue with positive real part.
    NonPositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LafSpectrumReport {
    pub eigenvalues: Vec<C64>,
    pub rank: usize,
    pub nullspace_dim: usize,
    /// All eigenvalues real within 1e-8.
    pub realness: bool,
    pub positivity_class: PositivityClass,
    /// `rank = m(n−1)`; checked when Ω is invertible.
    pub rank_check: Option<bool>,
    /// Real spectrum; checked when Ω is a positive row scaling of a symmetric matrix.
    pub realness_check: Option<bool>,
    /// `m(n−1)` positive eigenvalues; checked when Ω is symmetric positive definite.
    pub positivity_check: Option<bool>,
}

pub fn laf_spectrum_report(sys: &LinearSystem) -> Result<LafSpectrumReport> {
    let a = sys.dense_a()?;
    let ev = eigenvalues(&a)?;
    let (m, n) = (sys.m(), sys.n());
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = 1e-10 * smax.max(1.0) * sys.dim() as f64;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let scale = 1.0 + ev.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let zero_tol = 1e-8 * scale;
    let realness = ev.iter().all(|z| z.im.abs() < 1e-8);
    let nonzero: Vec<&C64> = ev.iter().filter(|z| z.norm() > zero_tol).collect();
    let positive = nonzero.iter().filter(|z| z.re > zero_tol).count();
    let positivity_class = if positive == 0 {
        PositivityClass::NonPositive
    } else if positive == nonzero.len() {
        PositivityClass::PositiveOffNullspace
    } else {
        PositivityClass::Mixed
    };

    let od = sys.omega.to_dense();
    let osv = od.clone().svd(false, false).singular_values;
    let invertible = osv.min() > 1e-10 * osv.max();
    let sym_form = sys.omega.factorization().is_some()
        || sys.omega.detect_factorization().is_some_and(|f| f.w.iter().all(|&w| w > 0.0));
    let spd = sys.omega.max_asymmetry() < 1e-12
        && invertible
        && crate::eigen::symmetric_eigenvalues(&od).first().is_some_and(|&l| l > 0.0);

    Ok(LafSpectrumReport {
        rank_check: invertible.then_some(rank == m * (n - 1)),
        realness_check: sym_form.then_some(realness),
        positivity_check: spd.then_some(positive == m * (n - 1)),
        eigenvalues: ev,
        rank,
        nullspace_dim: sys.dim() - rank,
        realness,
        positivity_class,
    })
}

/// Per-row limit of `exp_p(t·v)` as `t → ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftLimit {
    pub state: AssignmentState,
    /// Rows whose limit is a face point (tied maxima).
    pub tie_rows: Vec<usize>,
}

impl LiftLimit {
    /// Labels per vertex; `None` for tied rows.
    pub fn labels(&self) -> Vec<Option<usize>> {
        let mut out = self.state.argmax_rows();
        for &i in &self.tie_rows {
            out[i] = None;
        }
        out
    }
}

/// `lim exp_{W₀_i}(t·v_i)`: supported on `argmax v_i` with weights
/// proportional to `W₀_i` there. Entries within `1e-10·max|v|` of the row
/// maximum count as tied.
pub fn lift_limit(direction: &[f64], w0: &AssignmentState) -> Result<LiftLimit> {
    let n = w0.n();
    if direction.len() != w0.m() * n {
        return Err(invalid("direction has the wrong length"));
    }
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(invalid("direction must be finite"));
    }
    let mut data = vec![0.0; direction.len()];
    let mut tie_rows = Vec::new();
    // relative to the whole direction: rows it leaves at roundoff level are ties
    let tol = 1e-10 * direction.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    for i in 0..w0.m() {
        let v = &direction[i * n..(i + 1) * n];
        let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let set: Vec<usize> = (0..n).filter(|&j| vmax - v[j] <= tol).collect();
        if set.len() > 1 {
            tie_rows.push(i);
        }
        let p = w0.row(i);
        let mass: f64 = set.iter().map(|&j| p[j]).sum();
        for &j in &set {
            data[i * n + j] = p[j] / mass;
        }
    }
    Ok(LiftLimit { state: AssignmentState::new(w0.m(), n, data)?, tie_rows })
}

/// `V / W₀` entrywise, the exponent direction for [`lift_limit`].
pub fn lifted_direction(v: &[f64], w0: &AssignmentState) -> Vec<f64> {
    v.iter().zip(w0.as_slice()).map(|(v, p)| v / p).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DominantMethod {
    PowerIteration,
    FullDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominantEigen {
    pub value: f64,
    /// Unit 2-norm right eigenvector, in the tangent space.
    pub vector: Vec<f64>,
    pub method: DominantMethod,
}

fn project_blocks(x: &mut [f64], n: usize) {
    x.chunks_mut(n).for_each(project_tangent_in_place);
}

fn normalize(x: &mut [f64]) -> f64 {
    let nrm = dot(x, x).sqrt();
    if nrm > 0.0 {
        x.iter_mut().for_each(|v| *v /= nrm);
    }
    nrm
}

/// Shifted power iteration on `A + cI` restricted to the tangent space, which
/// deflates the null space spanned by `e_i ⊗ 1_n`.
fn power_iteration(a: &DMatrix<f64>, n: usize, seed: u64) -> Option<(f64, Vec<f64>)> {
    let d = a.nrows();
    let shift = (0..d).map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project_blocks(&mut x, n);
    if normalize(&mut x) == 0.0 {
        return None;
    }
    for _ in 0..POWER_MAX_ITER {
        let ax = a * DVector::from_column_slice(&x);
        let lambda = dot(&x, ax.as_slice());
        let res = ax.iter().zip(&x).map(|(y, x)| (y - lambda * x).abs()).fold(0.0, f64::max);
        if res < POWER_TOL * lambda.abs().max(1.0) {
            return Some(polish(a, lambda, x, n));
        }
        let mut y: Vec<f64> = ax.iter().zip(&x).map(|(y, x)| y + shift * x).collect();
        project_blocks(&mut y, n);
        if normalize(&mut y) == 0.0 {
            return None;
        }
        x = y;
    }
    None
}

/// A few steps of inverse iteration at a slightly shifted `λ`; takes the
/// power-iteration residual down to roundoff.
fn polish(a: &DMatrix<f64>, lambda: f64, x: Vec<f64>, n: usize) -> (f64, Vec<f64>) {
    let d = a.nrows();
    let mu = lambda + 1e-8 * (1.0 + lambda.abs());
    let lu = (a - DMatrix::identity(d, d) * mu).lu();
    let mut y = x.clone();
    for _ in 0..3 {
        let Some(z) = lu.solve(&DVector::from_column_slice(&y)) else {
            return (lambda, x);
        };
        let mut z: Vec<f64> = z.iter().copied().collect();
        project_blocks(&mut z, n);
        if normalize(&mut z) == 0.0 || z.iter().any(|v| !v.is_finite()) {
            return (lambda, x);
        }
        y = z;
    }
    if dot(&y, &x) < 0.0 {
        y.iter_mut().for_each(|v| *v = -*v);
    }
    let ay = a * DVector::from_column_slice(&y);
    (dot(&y, ay.as_slice()), y)
}

/// Eigenvalue with maximal real part and its eigenvector. Fails with a
/// domain error when that eigenvalue is complex or not unique.
pub fn dominant_eigenvector(sys: &LinearSystem) -> Result<DominantEigen> {
    let a = sys.dense_a()?;
    let n = sys.n();
    if let Some((value, vector)) = power_iteration(&a, n, 0x5eed) {
        // confirm that nothing with larger real part was missed
        let ev = eigenvalues(&a)?;
        let top = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if (top - value).abs() < 1e-8 * (1.0 + top.abs()) {
            return Ok(DominantEigen { value, vector, method: DominantMethod::PowerIteration });
        }
    }
    let e = eigendecomposition(&a)?.ok_or_else(|| domain("A is not diagonalizable"))?;
    let mut order: Vec<usize> = (0..e.values.len()).collect();
    order.sort_by(|&p, &q| e.values[q].re.total_cmp(&e.values[p].re));
    let best = e.values[order[0]];
    if best.im.abs() > 1e-8 {
        return Err(domain("dominant eigenvalue is complex; the lifted flow has no limit direction"));
    }
    if order.len() > 1 && (e.values[order[1]] - best).norm() < 1e-8 * (1.0 + best.norm()) {
        return Err(domain("dominant eigenvalue is not unique"));
    }
    let mut vector: Vec<f64> = e.vectors.column(order[0]).iter().map(|z| z.re).collect();
    if normalize(&mut vector) == 0.0 {
        vector = e.vectors.column(order[0]).iter().map(|z| z.im).collect();
        normalize(&mut vector);
    }
    Ok(DominantEigen { value: best.re, vector, method: DominantMethod::FullDecomposition })
}

#[derive(Debug, Clone, PartialEq)]
pub enum LimitPrediction {
    Determinate { dominant: DominantEigen, c1: f64, limit: LiftLimit },
    /// `|c₁|` below the threshold: `V₀` sits on the separating hyperplane.
    Indeterminate { dominant: DominantEigen, c1: f64 },
}

/// Predicts the limit of the lifted flow `exp_{W₀}(V(t)/W₀)` for the
/// homogeneous system started at `v0`.
pub fn predict_limit(sys: &LinearSystem, v0: &[f64]) -> Result<LimitPrediction> {
    if !sys.is_homogeneous() {
        return Err(invalid("predict_limit needs a homogeneous system"));
    }
    if v0.len() != sys.dim() {
        return Err(invalid("V0 has the wrong length"));
    }
    let dominant = dominant_eigenvector(sys)?;
    // left eigenvector for the same eigenvalue gives the expansion coefficient
    let at = sys.dense_a()?.transpose();
    let left = match power_iteration(&at, sys.n(), 0x1eff) {
        Some((l, u)) if (l - dominant.value).abs() < 1e-8 * (1.0 + l.abs()) => u,
        _ => {
            let e = eigendecomposition(&at)?.ok_or_else(|| domain("A is not diagonalizable"))?;
            let k = (0..e.values.len())
                .min_by(|&p, &q| {
                    (e.values[p] - dominant.value).norm().total_cmp(&(e.values[q] - dominant.value).norm())
                })
                .expect("nonempty");
            let mut u: Vec<f64> = e.vectors.column(k).iter().map(|z| z.re).collect();
            normalize(&mut u);
            u
        }
    };
    let denom = dot(&left, &dominant.vector);
    if denom.abs() < 1e-14 {
        return Err(domain("left and right dominant eigenvectors are orthogonal"));
    }
    let c1 = dot(&left, v0) / denom;
    if c1.abs() <= C1_TOL {
        return Ok(LimitPrediction::Indeterminate { dominant, c1 });
    }
    let dir: Vec<f64> = dominant.vector.iter().map(|v| c1 * v).collect();
    let limit = lift_limit(&lifted_direction(&dir, sys.w0()), sys.w0())?;
    Ok(LimitPrediction::Determinate { dominant, c1, limit })
}
