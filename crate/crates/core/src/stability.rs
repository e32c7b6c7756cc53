//! Equilibria of the S-flow, Jacobian spectra, stability classification and
//! basin-of-attraction estimates.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;

use crate::eigen::{eigenvalues, real_spectrum, sort_spectrum, symmetric_eigenvalues, C64};
use crate::error::{invalid, FlowError, Result};
use crate::simplex::{dot, support, unique_argmax, AssignmentState};
use crate::weights::WeightMatrix;

pub const EQUILIBRIUM_TOL: f64 = 1e-9;
/// Inequalities of the stability condition must hold by more than this.
pub const STRICT_MARGIN: f64 = 1e-12;
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    ExpStable,
    Unstable,
    NonintegralUnstable,
    Inconclusive,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::ExpStable => "exp_stable",
            Classification::Unstable => "unstable",
            Classification::NonintegralUnstable => "nonintegral_unstable",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

/// Outcome of checking `(ΩS*)_ij < (ΩS*)_ij*` on an integral labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginClass {
    Stable,
    Violated,
    Tie,
}

/// `max_i max_{j∈supp S_i} |(ΩS)_ij − ⟨S_i,(ΩS)_i⟩|` and whether it is below `tol`.
pub fn is_equilibrium(s: &AssignmentState, omega: &WeightMatrix, tol: f64) -> Result<(bool, f64)> {
    omega.check_dim(s.m())?;
    let n = s.n();
    let os = omega.apply(s.as_slice(), n);
    let mut residual: f64 = 0.0;
    for (i, row) in s.rows().enumerate() {
        let q = &os[i * n..(i + 1) * n];
        let mean = dot(row, q);
        for j in support(row) {
            residual = residual.max((q[j] - mean).abs());
        }
    }
    Ok((residual < tol, residual))
}

/// Dense Jacobian of `S ↦ R_S(ΩS)` in row-stacked ordering.
pub fn jacobian(s: &AssignmentState, omega: &WeightMatrix) -> Result<DMatrix<f64>> {
    jacobian_with_cap(s, omega, DENSE_CAP)
}

pub fn jacobian_with_cap(s: &AssignmentState, omega: &WeightMatrix, cap: usize) -> Result<DMatrix<f64>> {
    omega.check_dim(s.m())?;
    let (m, n) = (s.m(), s.n());
    let dim = m * n;
    if dim > cap {
        return Err(FlowError::ResourceLimit(format!(
            "dense Jacobian of size {dim} exceeds cap {cap}; use the closed-form spectra"
        )));
    }
    let os = omega.apply(s.as_slice(), n);
    let mut jac = DMatrix::zeros(dim, dim);
    for i in 0..m {
        let si = s.row(i);
        let qi = &os[i * n..(i + 1) * n];
        let mean = dot(si, qi);
        for a in 0..n {
            for b in 0..n {
                let mut v = -si[a] * qi[b];
                if a == b {
                    v += qi[a] - mean;
                }
                jac[(i * n + a, i * n + b)] += v;
            }
        }
        for (k, w) in omega.row(i) {
            for a in 0..n {
                for b in 0..n {
                    let r = if a == b { si[a] } else { 0.0 } - si[a] * si[b];
                    jac[(i * n + a, k * n + b)] += w * r;
                }
            }
        }
    }
    Ok(jac)
}

/// One closed-form eigenvalue at an integral equilibrium. `label == j*(i)`
/// marks the `−⟨S*_i,(ΩS*)_i⟩` eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralEigenvalue {
    pub value: f64,
    pub vertex: usize,
    pub label: usize,
}

fn integral_labels(sstar: &AssignmentState) -> Result<Vec<usize>> {
    if !sstar.is_integral() {
        return Err(invalid("state is not integral"));
    }
    Ok(sstar.rows().map(|r| unique_argmax(r).expect("integral row")).collect())
}

/// Full spectrum of the Jacobian at an integral equilibrium.
pub fn spectrum_integral(sstar: &AssignmentState, omega: &WeightMatrix) -> Result<Vec<IntegralEigenvalue>> {
    omega.check_dim(sstar.m())?;
    let labels = integral_labels(sstar)?;
    let n = sstar.n();
    let os = omega.apply(sstar.as_slice(), n);
    let mut out = Vec::with_capacity(sstar.m() * n);
    for (i, &js) in labels.iter().enumerate() {
        let q = &os[i * n..(i + 1) * n];
        for (j, &qj) in q.iter().enumerate() {
            let value = if j == js { -q[js] } else { qj - q[js] };
            out.push(IntegralEigenvalue { value, vertex: i, label: j });
        }
    }
    Ok(out)
}

/// σ(Ω), through the symmetric similar matrix when a factorization is known.
pub fn omega_spectrum(omega: &WeightMatrix) -> Result<Vec<C64>> {
    if let Some(f) = omega.factorization() {
        let mut sym = f.omega_hat().to_dense();
        let m = sym.nrows();
        for i in 0..m {
            for k in 0..m {
                sym[(i, k)] /= (f.w[i] * f.w[k]).sqrt();
            }
        }
        return Ok(real_spectrum(&symmetric_eigenvalues(&sym)));
    }
    eigenvalues(&omega.to_dense())
}

/// Jacobian spectrum at `S* = (1/|J₊|) 1_m 1_{J₊}ᵀ` with multiplicities:
/// `−(Ω1)_i/|J₊|` repeated `n − |J₊| + 1` times per vertex and every
/// `λ ∈ σ(Ω)` scaled to `λ/|J₊|` repeated `|J₊| − 1` times.
pub fn spectrum_uniform(jplus: &[usize], n: usize, omega: &WeightMatrix) -> Result<Vec<C64>> {
    let mut set = jplus.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() < 2 {
        return Err(invalid("J₊ must contain at least two labels"));
    }
    if set.len() != jplus.len() || set.iter().any(|&j| j >= n) {
        return Err(invalid("J₊ must be a set of distinct labels below n"));
    }
    let k = set.len() as f64;
    let mut out = Vec::with_capacity(omega.m() * n);
    for r in omega.row_sums() {
        out.extend(std::iter::repeat_n(C64::new(-r / k, 0.0), n - set.len() + 1));
    }
    for l in omega_spectrum(omega)? {
        out.extend(std::iter::repeat_n(l / k, set.len() - 1));
    }
    sort_spectrum(&mut out);
    Ok(out)
}

/// The common support `J₊` if every row equals `(1/|J₊|) 1_{J₊}`.
pub fn uniform_support(s: &AssignmentState) -> Option<Vec<usize>> {
    let first = support(s.row(0));
    let k = first.len() as f64;
    let uniform = s.rows().all(|r| {
        support(r) == first && first.iter().all(|&j| (r[j] - 1.0 / k).abs() < 1e-12)
    });
    uniform.then_some(first)
}

/// Margin check on an integral labeling (no precondition checks).
pub fn classify_margins(sstar: &AssignmentState, omega: &WeightMatrix) -> MarginClass {
    let n = sstar.n();
    let os = omega.apply(sstar.as_slice(), n);
    let mut tie = false;
    for (i, row) in sstar.rows().enumerate() {
        let js = unique_argmax(row).expect("integral row");
        let q = &os[i * n..(i + 1) * n];
        for j in (0..n).filter(|&j| j != js) {
            let gap = q[js] - q[j];
            if gap < -STRICT_MARGIN {
                return MarginClass::Violated;
            }
            if gap <= STRICT_MARGIN {
                tie = true;
            }
        }
    }
    if tie {
        MarginClass::Tie
    } else {
        MarginClass::Stable
    }
}

fn check_flags(omega: &WeightMatrix) -> Result<()> {
    if !omega.is_nonnegative() {
        return Err(FlowError::Precondition("Ω has negative entries".into()));
    }
    if !omega.has_positive_diagonal() {
        return Err(FlowError::Precondition("Ω has a non-positive diagonal entry".into()));
    }
    Ok(())
}

fn require_stable(sstar: &AssignmentState, omega: &WeightMatrix) -> Result<Vec<usize>> {
    omega.check_dim(sstar.m())?;
    let labels = integral_labels(sstar)
        .map_err(|_| FlowError::Precondition("basin estimates need an integral labeling".into()))?;
    match classify_margins(sstar, omega) {
        MarginClass::Stable => Ok(labels),
        MarginClass::Violated => Err(FlowError::Precondition("labeling violates the stability condition".into())),
        MarginClass::Tie => Err(FlowError::Precondition("labeling has ties in the stability condition".into())),
    }
}

/// Per-vertex `(a_i, b_ij, (Ω1)_i)` iteration helper for stable labelings.
fn for_each_gap(sstar: &AssignmentState, omega: &WeightMatrix, labels: &[usize], mut f: impl FnMut(usize, f64, f64)) {
    let n = sstar.n();
    let os = omega.apply(sstar.as_slice(), n);
    let sums = omega.row_sums();
    for (i, &js) in labels.iter().enumerate() {
        let q = &os[i * n..(i + 1) * n];
        for j in (0..n).filter(|&j| j != js) {
            f(i, q[js] - q[j], sums[i]);
        }
    }
}

/// `ε_est = min_i min_{j≠j*} 2(a − b)/((Ω1)_i + a − b)`.
pub fn eps_est(sstar: &AssignmentState, omega: &WeightMatrix) -> Result<f64> {
    let labels = require_stable(sstar, omega)?;
    let mut eps = f64::INFINITY;
    for_each_gap(sstar, omega, &labels, |_, gap, rowsum| {
        eps = eps.min(2.0 * gap / (rowsum + gap));
    });
    // n = 1 has no competing labels; the whole simplex is the basin
    Ok(if eps.is_finite() { eps } else { 2.0 })
}

/// `ε_unif = 2/(1 + max_i |N_i|)`.
pub fn eps_unif(neighborhood_sizes: &[usize]) -> Result<f64> {
    let max = *neighborhood_sizes.iter().max().ok_or_else(|| invalid("no vertices"))?;
    if neighborhood_sizes.contains(&0) {
        return Err(invalid("neighborhood sizes must be at least 1"));
    }
    Ok(2.0 / (1.0 + max as f64))
}

/// Whether `(ΩS)_ij < (ΩS)_ij*` for every vertex and every `j ≠ j*(i)`.
pub fn in_attraction_polytope(s: &AssignmentState, sstar: &AssignmentState, omega: &WeightMatrix) -> Result<bool> {
    omega.check_dim(s.m())?;
    if s.m() != sstar.m() || s.n() != sstar.n() {
        return Err(invalid("state shapes differ"));
    }
    let labels = integral_labels(sstar)?;
    let n = s.n();
    let os = omega.apply(s.as_slice(), n);
    Ok(labels.iter().enumerate().all(|(i, &js)| {
        let q = &os[i * n..(i + 1) * n];
        (0..n).all(|j| j == js || q[j] < q[js])
    }))
}

/// Near-equilibrium rates `β_i ≈ min_{j≠j*} ((ΩS*)_ij* − (ΩS*)_ij)`.
pub fn convergence_rates(sstar: &AssignmentState, omega: &WeightMatrix, delta: f64) -> Result<Vec<f64>> {
    let eps = eps_est(sstar, omega)?;
    if !(delta >= 0.0 && delta < eps) {
        return Err(FlowError::Precondition(format!("delta = {delta} must lie in [0, ε_est = {eps})")));
    }
    let labels = integral_labels(sstar)?;
    let mut beta = vec![f64::INFINITY; sstar.m()];
    for_each_gap(sstar, omega, &labels, |i, gap, _| beta[i] = beta[i].min(gap));
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub equilibrium_tol: f64,
    /// Numeric Jacobian spectra are computed only up to this `m·n`.
    pub numeric_spectrum_limit: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { equilibrium_tol: EQUILIBRIUM_TOL, numeric_spectrum_limit: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub equilibrium: AssignmentState,
    pub is_equilibrium_residual: f64,
    pub classification: Classification,
    pub spectrum: Option<Vec<C64>>,
    pub closed_form_spectrum: Option<Vec<C64>>,
    pub eps_est: Option<f64>,
    pub eps_unif: Option<f64>,
    /// Near-equilibrium approximation of the per-vertex rates.
    pub rates: Option<Vec<f64>>,
}

pub fn classify(sstar: &AssignmentState, omega: &WeightMatrix) -> Result<StabilityReport> {
    classify_with(sstar, omega, &ClassifyOptions::default())
}

pub fn classify_with(sstar: &AssignmentState, omega: &WeightMatrix, opts: &ClassifyOptions) -> Result<StabilityReport> {
    omega.check_dim(sstar.m())?;
    check_flags(omega)?;
    let (ok, residual) = is_equilibrium(sstar, omega, opts.equilibrium_tol)?;
    if !ok {
        return Err(FlowError::Precondition(format!(
            "state is not an equilibrium (residual {residual:e})"
        )));
    }
    let mut report = StabilityReport {
        equilibrium: sstar.clone(),
        is_equilibrium_residual: residual,
        classification: Classification::NonintegralUnstable,
        spectrum: None,
        closed_form_spectrum: None,
        eps_est: None,
        eps_unif: None,
        rates: None,
    };
    if sstar.is_integral() {
        let mut cf: Vec<C64> = spectrum_integral(sstar, omega)?
            .iter()
            .map(|e| C64::new(e.value, 0.0))
            .collect();
        sort_spectrum(&mut cf);
        report.closed_form_spectrum = Some(cf);
        report.classification = match classify_margins(sstar, omega) {
            MarginClass::Stable => Classification::ExpStable,
            MarginClass::Violated => Classification::Unstable,
            MarginClass::Tie => Classification::Inconclusive,
        };
        if report.classification == Classification::ExpStable {
            report.eps_est = Some(eps_est(sstar, omega)?);
            if omega.is_uniform() {
                report.eps_unif = Some(eps_unif(&omega.neighborhood_sizes())?);
            }
            report.rates = Some(convergence_rates(sstar, omega, 0.0)?);
        }
    } else if let Some(jplus) = uniform_support(sstar) {
        report.closed_form_spectrum = Some(spectrum_uniform(&jplus, sstar.n(), omega)?);
    }
    if sstar.m() * sstar.n() <= opts.numeric_spectrum_limit {
        report.spectrum = Some(eigenvalues(&jacobian(sstar, omega)?)?);
    }
    Ok(report)
}

impl StabilityReport {
    /// Flat `key=value` text, one entry per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "none".into());
        let _ = writeln!(s, "m={}", self.equilibrium.m());
        let _ = writeln!(s, "n={}", self.equilibrium.n());
        let _ = writeln!(s, "classification={}", self.classification.as_str());
        let _ = writeln!(s, "is_equilibrium_residual={}", self.is_equilibrium_residual);
        let _ = writeln!(s, "eps_est={}", opt(self.eps_est));
        let _ = writeln!(s, "eps_unif={}", opt(self.eps_unif));
        if let Some(r) = &self.rates {
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            let _ = writeln!(s, "min_rate={min}");
        }
        let spec = self.spectrum.as_ref().or(self.closed_form_spectrum.as_ref());
        if let Some(sp) = spec {
            let max_re = sp.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, "spectrum_source={}", if self.spectrum.is_some() { "numeric" } else { "closed_form" });
            let _ = writeln!(s, "spectral_abscissa={max_re}");
        }
        s
    }

    /// Spectrum CSV with columns `re,im`; prefers the numeric spectrum.
    pub fn write_spectrum_csv<W: Write>(&self, out: W) -> Result<()> {
        let sp = self.spectrum.as_ref().or(self.closed_form_spectrum.as_ref());
        write_spectrum_csv(sp.map(Vec::as_slice).unwrap_or(&[]), out)
    }
}

pub fn write_spectrum_csv<W: Write>(spectrum: &[C64], mut out: W) -> Result<()> {
    writeln!(out, "re,im")?;
    for c in spectrum {
        writeln!(out, "{},{}", c.re, c.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::multiset_distance;
    use crate::flow::sflow_rhs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nonpos() -> WeightMatrix {
        WeightMatrix::from_dense(3, &[0.0, 0.5, 0.5, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]).unwrap()
    }

    fn random_omega(rng: &mut ChaCha8Rng, m: usize) -> WeightMatrix {
        let v: Vec<f64> = (0..m * m).map(|_| rng.gen_range(0.05..1.0)).collect();
        WeightMatrix::from_dense(m, &v).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, m: usize, n: usize) -> AssignmentState {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        AssignmentState::from_rows(&rows).unwrap()
    }

    #[test]
    fn equilibria_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let om = random_omega(&mut rng, 4);
        let s = AssignmentState::from_labels(&[0, 2, 1, 2], 3).unwrap();
        assert_eq!(is_equilibrium(&s, &om, 1e-9).unwrap(), (true, 0.0));
        let rs = WeightMatrix::from_dense(2, &[0.3, 0.7, 0.6, 0.4]).unwrap();
        let u = AssignmentState::uniform_on(2, 3, &[0, 1]).unwrap();
        assert!(is_equilibrium(&u, &rs, 1e-9).unwrap().0);
        let mut p = AssignmentState::barycenter(4, 3).into_vec();
        p[0] += 0.1;
        let t: f64 = p[..3].iter().sum();
        p[..3].iter_mut().for_each(|v| *v /= t);
        let p = AssignmentState::new(4, 3, p).unwrap();
        let (ok, res) = is_equilibrium(&p, &om, 1e-9).unwrap();
        assert!(!ok && res > 1e-3);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let om = random_omega(&mut rng, 3);
            let s = random_state(&mut rng, 3, 3);
            let j = jacobian(&s, &om).unwrap();
            let d = s.as_slice().len();
            let h = 1e-6;
            let f = |x: &[f64]| {
                let st = AssignmentState::from_raw(3, 3, x.to_vec());
                sflow_rhs(&st, &om).unwrap().data
            };
            for c in 0..d {
                let mut xp = s.as_slice().to_vec();
                let mut xm = xp.clone();
                xp[c] += h;
                xm[c] -= h;
                let (fp, fm) = (f(&xp), f(&xm));
                for r in 0..d {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    assert!((j[(r, c)] - fd).abs() < 1e-6 * (1.0 + j.amax()));
                }
            }
        }
    }

    #[test]
    fn jacobian_block_diagonal_at_integral() {
        let om = random_omega(&mut ChaCha8Rng::seed_from_u64(3), 3);
        let s = AssignmentState::from_labels(&[0, 1, 1], 2).unwrap();
        let j = jacobian(&s, &om).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                if r / 2 != c / 2 {
                    assert_eq!(j[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn jacobian_cap() {
        let s = AssignmentState::barycenter(3, 2);
        assert!(matches!(
            jacobian_with_cap(&s, &WeightMatrix::identity(3), 4),
            Err(FlowError::ResourceLimit(_))
        ));
    }

    #[test]
    fn nonpos_diag_line_spectrum() {
        let p = 0.5;
        let s = AssignmentState::from_rows(&[vec![p, 1.0 - p], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let ev = eigenvalues(&jacobian(&s, &nonpos()).unwrap()).unwrap();
        let want = real_spectrum(&[0.0, -0.5, -0.625, -0.25, -0.25, -0.625]);
        assert!(multiset_distance(&ev, &want).unwrap() < 1e-10);
    }

    #[test]
    fn integral_spectrum_examples() {
        let s = AssignmentState::from_labels(&[0, 1], 2).unwrap();
        let ev = spectrum_integral(&s, &WeightMatrix::identity(2)).unwrap();
        assert!(ev.iter().all(|e| e.value == -1.0));
        assert!(spectrum_integral(&AssignmentState::barycenter(2, 2), &WeightMatrix::identity(2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let om = random_omega(&mut rng, 4);
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
            let s = AssignmentState::from_labels(&labels, 3).unwrap();
            let cf: Vec<C64> = spectrum_integral(&s, &om).unwrap().iter().map(|e| C64::new(e.value, 0.0)).collect();
            let num = eigenvalues(&jacobian(&s, &om).unwrap()).unwrap();
            assert!(multiset_distance(&cf, &num).unwrap() < 1e-8);
        }
    }

    #[test]
    fn constant_labeling_row_stochastic() {
        let om = WeightMatrix::from_dense(2, &[0.3, 0.7, 0.6, 0.4]).unwrap();
        let s = AssignmentState::from_labels(&[1, 1], 3).unwrap();
        let ev = spectrum_integral(&s, &om).unwrap();
        for e in ev {
            if e.label == 1 {
                assert!((e.value + 1.0).abs() < 1e-15);
            } else {
                assert!(e.value < 0.0);
            }
        }
    }

    #[test]
    fn uniform_spectrum_matches_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (m, n, jp) in [(3, 3, vec![0, 1, 2]), (4, 3, vec![0, 2]), (2, 4, vec![1, 2, 3])] {
            let om = random_omega(&mut rng, m);
            let s = AssignmentState::uniform_on(m, n, &jp).unwrap();
            let cf = spectrum_uniform(&jp, n, &om).unwrap();
            let num = eigenvalues(&jacobian(&s, &om).unwrap()).unwrap();
            assert!(multiset_distance(&cf, &num).unwrap() < 1e-8);
        }
        assert!(spectrum_uniform(&[0], 3, &WeightMatrix::identity(2)).is_err());
        let id = spectrum_uniform(&[0, 1], 2, &WeightMatrix::identity(2)).unwrap();
        assert!(multiset_distance(&id, &real_spectrum(&[-0.5, -0.5, 0.5, 0.5])).unwrap() < 1e-14);
    }

    #[test]
    fn classify_examples() {
        let om = WeightMatrix::from_dense(2, &[0.55, 0.45, 0.25, 0.75]).unwrap();
        let stable = AssignmentState::from_labels(&[0, 0], 2).unwrap();
        let r = classify(&stable, &om).unwrap();
        assert_eq!(r.classification, Classification::ExpStable);
        assert!(r.eps_est.unwrap() > 0.0);
        let unstable = AssignmentState::from_labels(&[0, 1], 2).unwrap();
        let weak = WeightMatrix::from_dense(2, &[0.4, 0.6, 0.25, 0.75]).unwrap();
        assert_eq!(classify(&unstable, &weak).unwrap().classification, Classification::Unstable);
        let half = AssignmentState::uniform_on(2, 3, &[0, 2]).unwrap();
        let rs = WeightMatrix::from_dense(2, &[0.6, 0.4, 0.3, 0.7]).unwrap();
        let r = classify(&half, &rs).unwrap();
        assert_eq!(r.classification, Classification::NonintegralUnstable);
        let max_re = r.spectrum.unwrap().iter().map(|c| c.re).fold(f64::MIN, f64::max);
        assert!(max_re > -1e-10);
        let tie = WeightMatrix::from_dense(2, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(classify(&unstable, &tie).unwrap().classification, Classification::Inconclusive);
        assert!(matches!(classify(&stable, &nonpos()), Err(FlowError::InvalidArgument(_))));
        let neg = WeightMatrix::from_dense(2, &[0.5, -0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(classify(&stable, &neg), Err(FlowError::Precondition(_))));
        let zero_diag = WeightMatrix::from_dense(2, &[0.0, 1.0, 0.5, 0.5]).unwrap();
        assert!(matches!(classify(&stable, &zero_diag), Err(FlowError::Precondition(_))));
    }

    #[test]
    fn eps_examples() {
        assert_eq!(eps_unif(&[4, 9, 6]).unwrap(), 0.2);
        assert_eq!(eps_unif(&[1]).unwrap(), 1.0);
        assert!(eps_unif(&[]).is_err());
        // uniform row-stochastic weights on a constant labeling
        let om = WeightMatrix::from_dense(3, &[0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.5, 0.5]).unwrap();
        let s = AssignmentState::from_labels(&[2, 2, 2], 3).unwrap();
        assert!((eps_est(&s, &om).unwrap() - 1.0).abs() < 1e-15);
        let bad = AssignmentState::from_labels(&[2, 0, 2], 3).unwrap();
        assert!(matches!(eps_est(&bad, &om), Err(FlowError::Precondition(_))));
    }

    #[test]
    fn eps_est_two_vertex_grid_oracle() {
        let om = WeightMatrix::from_dense(2, &[0.55, 0.45, 0.25, 0.75]).unwrap();
        let sstar = AssignmentState::from_labels(&[0, 0], 2).unwrap();
        let eps = eps_est(&sstar, &om).unwrap();
        // largest ε with every grid point of the ℓ1-ball inside A(S*)
        let g = 400;
        let mut best = f64::INFINITY;
        for a in 0..=g {
            for b in 0..=g {
                let (x, y) = (a as f64 / g as f64, b as f64 / g as f64);
                let s = AssignmentState::from_rows(&[vec![x, 1.0 - x], vec![y, 1.0 - y]]).unwrap();
                if !in_attraction_polytope(&s, &sstar, &om).unwrap() {
                    best = best.min(s.max_row_l1_distance(&sstar));
                }
            }
        }
        assert!(eps <= best + 1e-12);
        assert!(eps >= 0.9 * best, "eps {eps} vs brute force {best}");
    }

    #[test]
    fn polytope_empty_for_split_labeling() {
        let om = WeightMatrix::from_dense(2, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        let sstar = AssignmentState::from_labels(&[0, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let s = random_state(&mut rng, 2, 2);
            assert!(!in_attraction_polytope(&s, &sstar, &om).unwrap());
        }
        let om = WeightMatrix::from_dense(2, &[0.55, 0.45, 0.25, 0.75]).unwrap();
        let s = AssignmentState::from_labels(&[1, 1], 2).unwrap();
        assert!(in_attraction_polytope(&s, &s, &om).unwrap());
    }

    #[test]
    fn rates() {
        let om = WeightMatrix::from_dense(3, &[0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.5, 0.5]).unwrap();
        let s = AssignmentState::from_labels(&[0, 0, 0], 2).unwrap();
        let b = convergence_rates(&s, &om, 0.1).unwrap();
        assert!(b.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(convergence_rates(&s, &om, 5.0).is_err());
    }

    #[test]
    fn report_serialization() {
        let om = WeightMatrix::from_dense(2, &[0.55, 0.45, 0.25, 0.75]).unwrap();
        let r = classify(&AssignmentState::from_labels(&[0, 0], 2).unwrap(), &om).unwrap();
        let kv = r.to_kv();
        assert!(kv.contains("classification=exp_stable"));
        assert!(kv.lines().all(|l| l.contains('=')));
        let mut buf = Vec::new();
        r.write_spectrum_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("re,im\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
