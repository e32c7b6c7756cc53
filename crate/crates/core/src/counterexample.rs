//! Weight matrices that violate the convergence hypotheses: a vanishing
//! diagonal entry, and circulant doubly stochastic Ω whose skew part drives
//! rock-paper-scissors type orbits.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, FlowError, Result};
use crate::flow::{representative_rhs_raw, sflow_init, Quadrature, WAccumulator};
use crate::integrator::euler_step_unchecked;
use crate::ode::{lift_rows, lifted_sflow_field, log_coordinates, rk4_step};
use crate::simplex::{dot, exp_map_into, AssignmentState, SimplexPoint};
use crate::weights::{DistanceMatrix, WeightMatrix};

const PARAM_TOL: f64 = 1e-12;

/// `μ = α e_n + (β/n) 1_n + Σ_k γ_k (e_k − e_{n−k})`, one `γ_k` for each
/// `k = 1..⌊(n−1)/2⌋`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantParams {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Vec<f64>,
}

impl CirculantParams {
    /// `n = 3` parameters with `β = 1 − α`.
    pub fn n3(alpha: f64, gamma: f64) -> Self {
        Self { n: 3, alpha, beta: 1.0 - alpha, gamma: vec![gamma] }
    }

    pub fn center() -> Self {
        Self { n: 3, alpha: -0.5, beta: 1.5, gamma: vec![0.5] }
    }

    pub fn cycle() -> Self {
        Self { n: 3, alpha: 0.0, beta: 1.0, gamma: vec![1.0 / 3.0] }
    }

    pub fn spiral() -> Self {
        Self { n: 3, alpha: 0.1, beta: 0.9, gamma: vec![0.3] }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(invalid("n must be at least 2"));
        }
        if self.gamma.len() != (n - 1) / 2 {
            return Err(invalid(format!("expected {} gamma values for n = {n}", (n - 1) / 2)));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.gamma.iter().all(|g| g.is_finite())) {
            return Err(invalid("parameters must be finite"));
        }
        if (self.alpha + self.beta - 1.0).abs() > PARAM_TOL {
            return Err(invalid(format!("α + β = 1 violated (α + β = {})", self.alpha + self.beta)));
        }
        if self.alpha + self.beta / (n as f64) < -PARAM_TOL {
            return Err(invalid("α + β/n ≥ 0 violated"));
        }
        for (k, g) in self.gamma.iter().enumerate() {
            if self.beta / n as f64 + PARAM_TOL < g.abs() {
                return Err(invalid(format!("β/n ≥ |γ_{}| violated", k + 1)));
            }
        }
        Ok(())
    }

    /// `μ` as a vector `(μ_1, …, μ_n)`.
    pub fn mu(&self) -> Vec<f64> {
        let n = self.n;
        let mut mu = vec![self.beta / n as f64; n];
        mu[n - 1] += self.alpha;
        for (k, g) in self.gamma.iter().enumerate() {
            mu[k] += g;
            mu[n - k - 2] -= g;
        }
        mu
    }
}

/// `Σ_k c_k P^k` with `(P^k)_ij = 1` iff `i − j ≡ k (mod n)`; `c = (c_1..c_n)`.
pub fn circulant_matrix(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let k = (i + n - j) % n;
            out[i * n + j] = c[(k + n - 1) % n];
        }
    }
    out
}

pub fn circulant_from_params(params: &CirculantParams) -> Result<WeightMatrix> {
    params.validate()?;
    WeightMatrix::from_dense(params.n, &circulant_matrix(&params.mu()))
}

/// Circulant deviation `max |S − Σ p_k P^k|` for the representative `p`
/// read off the first column.
fn representative_raw(s: &AssignmentState) -> (Vec<f64>, f64) {
    let n = s.n();
    let p: Vec<f64> = (1..=n).map(|k| s.get(k % n, 0)).collect();
    let c = circulant_matrix(&p);
    let dev = c.iter().zip(s.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (p, dev)
}

/// The `p ∈ Δ_n` with `S = Σ_k p_k P^k`.
pub fn representative_of(s: &AssignmentState) -> Result<SimplexPoint> {
    if s.m() != s.n() {
        return Err(invalid("circulant states are square"));
    }
    let (p, dev) = representative_raw(s);
    if dev > 1e-10 {
        return Err(invalid(format!("state is not circulant (deviation {dev:e})")));
    }
    SimplexPoint::new(p)
}

/// Replaces each cyclic diagonal of a square `n × n` array by its mean.
fn project_circulant(x: &mut [f64], n: usize) {
    for k in 0..n {
        let mean = (0..n).map(|i| x[i * n + (i + k) % n]).sum::<f64>() / n as f64;
        for i in 0..n {
            x[i * n + (i + k) % n] = mean;
        }
    }
}

/// Distance of a square state from the circulant set.
pub fn circulant_deviation(s: &AssignmentState) -> f64 {
    representative_raw(s).1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductDiagnostic {
    pub pi: f64,
    pub dpi_dt: f64,
    pub predicted_sign: Sign,
}

fn is_barycenter(p: &[f64]) -> bool {
    let n = p.len() as f64;
    p.iter().all(|&v| (v - 1.0 / n).abs() < PARAM_TOL)
}

/// `π = Π_j p_j` and `dπ/dt = π(1 − n⟨p, Ωp⟩)` along the representative flow.
pub fn product_diagnostic(p: &SimplexPoint, params: &CirculantParams) -> Result<ProductDiagnostic> {
    let omega = circulant_from_params(params)?;
    if p.dim() != params.n {
        return Err(invalid("p has the wrong dimension"));
    }
    if !p.is_interior() {
        return Err(FlowError::Domain("p must be interior".into()));
    }
    let x = p.as_slice();
    let op = omega.apply(x, 1);
    let pi: f64 = x.iter().product();
    let dpi_dt = pi * (1.0 - params.n as f64 * dot(x, &op));
    let predicted_sign = if is_barycenter(x) || params.alpha == 0.0 {
        Sign::Zero
    } else if params.alpha > 0.0 {
        Sign::Negative
    } else {
        Sign::Positive
    };
    Ok(ProductDiagnostic { pi, dpi_dt, predicted_sign })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    BarycenterSink,
    Frozen,
    Periodic,
    VertexAttractor,
    BoundarySpiral,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::BarycenterSink => "barycenter_sink",
            Regime::Frozen => "frozen",
            Regime::Periodic => "periodic",
            Regime::VertexAttractor => "vertex_attractor",
            Regime::BoundarySpiral => "boundary_spiral",
        }
    }
}

pub fn regime_classify(params: &CirculantParams) -> Result<Regime> {
    if params.n != 3 {
        return Err(FlowError::Unsupported("regime classification exists for n = 3 only".into()));
    }
    params.validate()?;
    let (a, g) = (params.alpha, params.gamma[0].abs());
    Ok(if a < 0.0 {
        Regime::BarycenterSink
    } else if a == 0.0 {
        if g == 0.0 {
            Regime::Frozen
        } else {
            Regime::Periodic
        }
    } else if g == 0.0 || a > g {
        Regime::VertexAttractor
    } else {
        Regime::BoundarySpiral
    })
}

/// The 3×2 system whose Ω has a zero diagonal entry, with its line of
/// non-isolated equilibria.
#[derive(Debug, Clone)]
pub struct NonposDiagExample {
    pub omega: WeightMatrix,
}

pub fn build_nonpos_diag_example() -> NonposDiagExample {
    let omega = WeightMatrix::from_dense(3, &[0.0, 0.5, 0.5, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5])
        .expect("fixed finite matrix");
    NonposDiagExample { omega }
}

impl NonposDiagExample {
    /// Rows `(p, 1−p), (1, 0), (0, 1)`.
    pub fn line_point(&self, p: f64) -> Result<AssignmentState> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p must lie in [0, 1]"));
        }
        AssignmentState::from_rows(&[vec![p, 1.0 - p], vec![1.0, 0.0], vec![0.0, 1.0]])
    }

    /// Jacobian spectrum along the line.
    pub fn spectrum(&self, p: f64) -> Vec<f64> {
        vec![0.0, -0.5, -(p + 2.0) / 4.0, -p / 2.0, -(1.0 - p) / 2.0, -(3.0 - p) / 4.0]
    }

    /// Max distance of rows 2 and 3 from their vertices.
    pub fn distance_to_line(&self, s: &AssignmentState) -> f64 {
        (1.0 - s.get(1, 0)).max(1.0 - s.get(2, 1))
    }
}

/// Fixed `D` and the parametrized Ω of the W-flow demonstration.
pub fn build_wflow_demo(params: &CirculantParams) -> Result<(DistanceMatrix, WeightMatrix)> {
    if params.n != 3 {
        return Err(FlowError::Unsupported("the W-flow demonstration is defined for n = 3".into()));
    }
    let omega = circulant_from_params(params)?;
    let d = DistanceMatrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]])?;
    Ok((d, omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `p ← exp_p(h Ωp)`.
    GeometricEuler,
    /// RK4 in log coordinates, `u̇ = Ω exp_1(u)`.
    LiftedRk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub h: f64,
    pub steps: usize,
    pub record_every: usize,
    pub scheme: Scheme,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { h: 1e-2, steps: 20_000, record_every: 10, scheme: Scheme::LiftedRk4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeRun {
    pub times: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub final_p: Vec<f64>,
    pub min_p: f64,
    /// Accumulated angle around the barycenter (radians, signed).
    pub winding: f64,
    pub pi_initial: f64,
    pub pi_final: f64,
    /// `max_t |π(t) − π(0)|`.
    pub max_pi_drift: f64,
    /// Steps where the sign of `Δπ` contradicted the predicted sign.
    pub sign_violations: usize,
    /// Time between the last two positively oriented crossings of `p₁ = p₂`.
    pub period: Option<f64>,
    /// Max-abs distance between the states at those two crossings.
    pub return_distance: Option<f64>,
}

impl RepresentativeRun {
    /// Periodicity by the section return test (threshold 1e-3).
    pub fn is_periodic(&self) -> bool {
        self.return_distance.is_some_and(|d| d < 1e-3)
    }

    pub fn distance_to_barycenter(&self) -> f64 {
        let n = self.final_p.len() as f64;
        self.final_p.iter().map(|v| (v - 1.0 / n).abs()).fold(0.0, f64::max)
    }

    pub fn distance_to_vertex(&self) -> f64 {
        let max = self.final_p.iter().copied().fold(0.0, f64::max);
        1.0 - max
    }
}

/// Angle of `p − barycenter` in the plane of `Δ_3`.
fn simplex_angle(p: &[f64]) -> f64 {
    let x = (p[0] - p[1]) / 2f64.sqrt();
    let y = (p[0] + p[1] - 2.0 * p[2]) / 6f64.sqrt();
    y.atan2(x)
}

/// Integrates `ṗ = R_p(Ωp)` and records the regime diagnostics.
pub fn run_representative(params: &CirculantParams, p0: &SimplexPoint, cfg: &RunConfig) -> Result<RepresentativeRun> {
    let omega = circulant_from_params(params)?;
    let n = params.n;
    if p0.dim() != n || !p0.is_interior() {
        return Err(invalid("p0 must be an interior point of the n-simplex"));
    }
    if !(cfg.h > 0.0) || cfg.record_every == 0 {
        return Err(invalid("h must be positive and record_every at least 1"));
    }
    let predicted = product_diagnostic(p0, params)?.predicted_sign;
    let ones = vec![1.0 / n as f64; n];
    let mut u: Vec<f64> = p0.as_slice().iter().map(|v| v.ln()).collect();
    let mut p = p0.as_slice().to_vec();
    let field = |u: &[f64], out: &mut [f64]| {
        let mut q = vec![0.0; u.len()];
        exp_map_into(&ones, u, &mut q);
        out.copy_from_slice(&omega.apply(&q, 1));
    };

    let pi_initial: f64 = p.iter().product();
    let mut run = RepresentativeRun {
        times: vec![0.0],
        samples: vec![p.clone()],
        final_p: p.clone(),
        min_p: p.iter().copied().fold(1.0, f64::min),
        winding: 0.0,
        pi_initial,
        pi_final: pi_initial,
        max_pi_drift: 0.0,
        sign_violations: 0,
        period: None,
        return_distance: None,
    };
    let mut pi_prev = pi_initial;
    let mut angle_prev = (n == 3).then(|| simplex_angle(&p));
    let mut crossings: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut next = vec![0.0; n];
    for step in 1..=cfg.steps {
        let t = step as f64 * cfg.h;
        match cfg.scheme {
            Scheme::LiftedRk4 => {
                rk4_step(&mut u, cfg.h, &field);
                let mx = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                u.iter_mut().for_each(|v| *v -= mx);
                exp_map_into(&ones, &u, &mut next);
            }
            Scheme::GeometricEuler => {
                let v: Vec<f64> = omega.apply(&p, 1).iter().map(|x| cfg.h * x).collect();
                exp_map_into(&p, &v, &mut next);
            }
        }
        let pi: f64 = next.iter().product();
        run.max_pi_drift = run.max_pi_drift.max((pi - pi_initial).abs());
        let dpi = pi - pi_prev;
        let bad = match predicted {
            Sign::Negative => dpi > 1e-10,
            Sign::Positive => dpi < -1e-10,
            Sign::Zero => false,
        };
        run.sign_violations += bad as usize;
        pi_prev = pi;
        if let Some(prev) = angle_prev {
            let a = simplex_angle(&next);
            let mut d = a - prev;
            d = (d + PI).rem_euclid(2.0 * PI) - PI;
            run.winding += d;
            angle_prev = Some(a);
            let (g0, g1) = (p[0] - p[1], next[0] - next[1]);
            if g0 < 0.0 && g1 >= 0.0 {
                let s = -g0 / (g1 - g0);
                let at: Vec<f64> = p.iter().zip(&next).map(|(a, b)| a + s * (b - a)).collect();
                crossings.push((t - cfg.h + s * cfg.h, at));
            }
        }
        run.min_p = next.iter().copied().fold(run.min_p, f64::min);
        p.copy_from_slice(&next);
        if step % cfg.record_every == 0 || step == cfg.steps {
            run.times.push(t);
            run.samples.push(p.clone());
        }
    }
    if let [.., (t0, a), (t1, b)] = crossings.as_slice() {
        run.period = Some(t1 - t0);
        run.return_distance = Some(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    run.final_p = p;
    run.pi_final = pi_prev;
    Ok(run)
}

/// S- and W-trajectories of the demonstration instance.
#[derive(Debug, Clone)]
pub struct WflowDemoRun {
    pub times: Vec<f64>,
    pub s: Vec<AssignmentState>,
    pub w: Vec<AssignmentState>,
    /// Largest circulant deviation of any S sample.
    pub max_circulant_deviation: f64,
}

impl WflowDemoRun {
    /// Index of the sample closest to time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            return 0;
        }
        if k >= self.times.len() {
            return self.times.len() - 1;
        }
        if (self.times[k] - t).abs() < (t - self.times[k - 1]).abs() {
            k
        } else {
            k - 1
        }
    }
}

/// Integrates the S-flow from `S(0) = exp_1(−ΩD)` and recovers `W` by
/// trapezoidal quadrature.
///
/// The circulant subspace is invariant but can be transversally unstable
/// (the barycenter under `Ω_center`), so rounding errors would eventually
/// carry the run off it. Each step is projected back onto the subspace;
/// `max_circulant_deviation` is the largest per-step deviation measured
/// before projection.
pub fn run_wflow_demo(params: &CirculantParams, cfg: &RunConfig) -> Result<WflowDemoRun> {
    let (d, omega) = build_wflow_demo(params)?;
    let s0 = sflow_init(&d, &omega)?;
    let n = 3;
    let mut acc = WAccumulator::new(3, n, Quadrature::Trapezoid);
    acc.push(0.0, &s0)?;
    let mut out = WflowDemoRun {
        times: vec![0.0],
        s: vec![s0.clone()],
        w: vec![acc.current()],
        max_circulant_deviation: circulant_deviation(&s0),
    };
    let field = lifted_sflow_field(&omega, n);
    let mut u = log_coordinates(&s0);
    let mut s = s0;
    for step in 1..=cfg.steps {
        let t = step as f64 * cfg.h;
        s = match cfg.scheme {
            Scheme::LiftedRk4 => {
                rk4_step(&mut u, cfg.h, &field);
                AssignmentState::from_raw(3, n, lift_rows(&u, n))
            }
            Scheme::GeometricEuler => euler_step_unchecked(&s, &omega, cfg.h),
        };
        out.max_circulant_deviation = out.max_circulant_deviation.max(circulant_deviation(&s));
        match cfg.scheme {
            Scheme::LiftedRk4 => {
                project_circulant(&mut u, n);
                s = AssignmentState::from_raw(3, n, lift_rows(&u, n));
            }
            Scheme::GeometricEuler => {
                let mut x = s.into_vec();
                project_circulant(&mut x, n);
                s = AssignmentState::from_raw(3, n, x);
            }
        }
        acc.push(t, &s)?;
        if step % cfg.record_every == 0 || step == cfg.steps {
            out.times.push(t);
            out.s.push(s.clone());
            out.w.push(acc.current());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub gamma: f64,
    pub regime: Regime,
    pub final_pi: f64,
    pub winding: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl Sweep {
    /// CSV `alpha,gamma,regime,final_pi,winding`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "alpha,gamma,regime,final_pi,winding")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.alpha, r.gamma, r.regime.as_str(), r.final_pi, r.winding)?;
        }
        Ok(())
    }
}

/// Random interior start from the seeded generator.
pub fn random_interior(rng: &mut impl Rng, n: usize) -> SimplexPoint {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    SimplexPoint::new(v.into_iter().map(|x| x / s).collect()).expect("normalized positive vector")
}

/// Interior start on `Δ_n` drawn from a generator seeded with `seed`.
pub fn seeded_start(seed: u64, n: usize) -> SimplexPoint {
    random_interior(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

/// Runs every feasible `(α, γ)` pair for `n = 3` from one seeded random start
/// per pair. Infeasible pairs are skipped. Pairs run in parallel; output
/// order follows the input grid.
pub fn parameter_sweep(alphas: &[f64], gammas: &[f64], cfg: &RunConfig, seed: u64) -> Result<Sweep> {
    use rayon::prelude::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(f64, f64, SimplexPoint)> = alphas
        .iter()
        .flat_map(|&a| gammas.iter().map(move |&g| (a, g)))
        .map(|(a, g)| (a, g, random_interior(&mut rng, 3)))
        .filter(|(a, g, _)| CirculantParams::n3(*a, *g).validate().is_ok())
        .collect();
    let rows: Result<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|(a, g, p0)| {
            let params = CirculantParams::n3(*a, *g);
            let run = run_representative(&params, p0, cfg)?;
            Ok(SweepRow {
                alpha: *a,
                gamma: *g,
                regime: regime_classify(&params)?,
                final_pi: run.pi_final,
                winding: run.winding,
            })
        })
        .collect();
    Ok(Sweep { seed, rows: rows? })
}

/// `representative_rhs` without validation, for the phase portrait sampler.
pub(crate) fn representative_field(p: &[f64], omega: &WeightMatrix) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    representative_rhs_raw(p, omega, &mut out);
    out
}
