//! Vector fields of the S-flow and of the original assignment flow, the
//! similarity map, S-flow initialization from data and the recovery of the
//! assignments `W(t)` from an S-trajectory.

use crate::error::{domain, invalid, Result};
use crate::integrator::Trajectory;
use crate::simplex::{
    exp_map_into, is_interior_row, project_tangent_in_place, replicator_apply_into,
    AssignmentState, SimplexPoint, TangentField, TangentVector,
};
use crate::weights::{DistanceMatrix, WeightMatrix};
use rayon::prelude::*;

const PAR_ROWS: usize = 256;

/// Fills `out` row by row; rows run on the rayon pool for large `m`.
pub(crate) fn for_each_row<F>(out: &mut [f64], n: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if out.len() / n.max(1) >= PAR_ROWS {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| f(i, r));
    } else {
        out.chunks_mut(n).enumerate().for_each(|(i, r)| f(i, r));
    }
}

/// Right-hand side `F(S) = R_S(Ω S)` of the S-flow.
pub fn sflow_rhs(s: &AssignmentState, omega: &WeightMatrix) -> Result<TangentField> {
    omega.check_dim(s.m())?;
    Ok(sflow_rhs_raw(s.as_slice(), s.m(), s.n(), omega))
}

pub(crate) fn sflow_rhs_raw(s: &[f64], m: usize, n: usize, omega: &WeightMatrix) -> TangentField {
    let mut data = vec![0.0; m * n];
    for_each_row(&mut data, n, |i, out| {
        let mut os = vec![0.0; n];
        omega.apply_row_into(i, s, n, &mut os);
        replicator_apply_into(&s[i * n..(i + 1) * n], &os, out);
    });
    TangentField { m, n, data }
}

/// Initial value `S(0) = exp_{1_W}(−Ω D)` (row-wise softmax of `−(ΩD)_i`).
pub fn sflow_init(d: &DistanceMatrix, omega: &WeightMatrix) -> Result<AssignmentState> {
    omega.check_dim(d.m())?;
    let n = d.n();
    let od = omega.apply(d.as_slice(), n);
    let bary = vec![1.0 / n as f64; n];
    let mut data = vec![0.0; d.m() * n];
    for_each_row(&mut data, n, |i, out| {
        let neg: Vec<f64> = od[i * n..(i + 1) * n].iter().map(|v| -v).collect();
        exp_map_into(&bary, &neg, out);
    });
    Ok(AssignmentState::from_raw(d.m(), n, data))
}

/// Similarity map `S_i(W) = exp_{1_S}( Σ_k ω_ik (exp_{1_S}^{-1}(W_k) − D_k) )`.
pub fn similarity_map(
    w: &AssignmentState,
    d: &DistanceMatrix,
    omega: &WeightMatrix,
) -> Result<AssignmentState> {
    check_wd(w, d, omega)?;
    let (m, n) = (w.m(), w.n());
    // exp_{1_S}^{-1}(W_k) − D_k, stacked
    let mut lifted = vec![0.0; m * n];
    for (k, out) in lifted.chunks_mut(n).enumerate() {
        for (o, &x) in out.iter_mut().zip(w.row(k)) {
            *o = (x * n as f64).ln();
        }
        project_tangent_in_place(out);
        for (o, &dk) in out.iter_mut().zip(d.row(k)) {
            *o -= dk;
        }
    }
    let avg = omega.apply(&lifted, n);
    let bary = vec![1.0 / n as f64; n];
    let mut data = vec![0.0; m * n];
    for_each_row(&mut data, n, |i, out| exp_map_into(&bary, &avg[i * n..(i + 1) * n], out));
    Ok(AssignmentState::from_raw(m, n, data))
}

/// Right-hand side `R_W S(W)` of the assignment flow.
pub fn assignment_rhs(
    w: &AssignmentState,
    d: &DistanceMatrix,
    omega: &WeightMatrix,
) -> Result<TangentField> {
    let s = similarity_map(w, d, omega)?;
    let (m, n) = (w.m(), w.n());
    let mut data = vec![0.0; m * n];
    for_each_row(&mut data, n, |i, out| replicator_apply_into(w.row(i), s.row(i), out));
    Ok(TangentField { m, n, data })
}

fn check_wd(w: &AssignmentState, d: &DistanceMatrix, omega: &WeightMatrix) -> Result<()> {
    omega.check_dim(w.m())?;
    if (d.m(), d.n()) != (w.m(), w.n()) {
        return Err(invalid("distance matrix shape does not match the assignment state"));
    }
    if !is_interior_row(w.as_slice()) {
        return Err(domain("similarity map needs an interior assignment state"));
    }
    Ok(())
}

/// Quadrature rule for integrating `S(τ)` over a stored trajectory grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Left Riemann sum. Paired with the geometric Euler S-flow this
    /// reproduces the geometric Euler W-flow exactly.
    LeftRectangle,
}

/// Running lift `W(t) = exp_{1_W}( ∫_0^t Π_0 S(τ) dτ )`.
#[derive(Debug, Clone)]
pub struct WAccumulator {
    m: usize,
    n: usize,
    quadrature: Quadrature,
    integral: Vec<f64>,
    last: Option<(f64, Vec<f64>)>,
}

impl WAccumulator {
    pub fn new(m: usize, n: usize, quadrature: Quadrature) -> Self {
        Self { m, n, quadrature, integral: vec![0.0; m * n], last: None }
    }

    /// Adds the next sample; times must increase.
    pub fn push(&mut self, t: f64, s: &AssignmentState) -> Result<()> {
        if (s.m(), s.n()) != (self.m, self.n) {
            return Err(invalid("state shape changed along the trajectory"));
        }
        let mut cur = s.as_slice().to_vec();
        for r in cur.chunks_mut(self.n) {
            project_tangent_in_place(r);
        }
        if let Some((t0, prev)) = &self.last {
            let dt = t - t0;
            if dt <= 0.0 {
                return Err(invalid("trajectory times must be strictly increasing"));
            }
            match self.quadrature {
                Quadrature::Trapezoid => {
                    for ((acc, a), b) in self.integral.iter_mut().zip(prev).zip(&cur) {
                        *acc += 0.5 * dt * (a + b);
                    }
                }
                Quadrature::LeftRectangle => {
                    for (acc, a) in self.integral.iter_mut().zip(prev) {
                        *acc += dt * a;
                    }
                }
            }
        }
        self.last = Some((t, cur));
        Ok(())
    }

    /// The integral `∫ Π_0 S dτ` accumulated so far.
    pub fn integral(&self) -> &[f64] {
        &self.integral
    }

    pub fn current(&self) -> AssignmentState {
        let n = self.n;
        let bary = vec![1.0 / n as f64; n];
        let mut data = vec![0.0; self.m * n];
        for (out, v) in data.chunks_mut(n).zip(self.integral.chunks(n)) {
            exp_map_into(&bary, v, out);
        }
        AssignmentState::from_raw(self.m, n, data)
    }
}

/// Recovers `W` at the final time of an S-trajectory.
pub fn w_from_s_accumulate(trajectory: &Trajectory, quadrature: Quadrature) -> Result<AssignmentState> {
    let first = trajectory
        .states
        .first()
        .ok_or_else(|| invalid("empty trajectory"))?;
    let mut acc = WAccumulator::new(first.m(), first.n(), quadrature);
    for (t, s) in trajectory.times.iter().zip(&trajectory.states) {
        acc.push(*t, s)?;
    }
    Ok(acc.current())
}

/// `ṗ = R_p(Ω p)`: the replicator equation obeyed by the representative of a
/// circulant S-flow.
pub fn representative_rhs(p: &SimplexPoint, omega: &WeightMatrix) -> Result<TangentVector> {
    let n = p.dim();
    omega.check_dim(n)?;
    let op = omega.apply(p.as_slice(), 1);
    let mut out = vec![0.0; n];
    replicator_apply_into(p.as_slice(), &op, &mut out);
    Ok(TangentVector::from_raw(out))
}

pub(crate) fn representative_rhs_raw(p: &[f64], omega: &WeightMatrix, out: &mut [f64]) {
    let op = omega.apply(p, 1);
    replicator_apply_into(p, &op, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_stochastic() -> WeightMatrix {
        WeightMatrix::from_dense(3, &[0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5]).unwrap()
    }

    #[test]
    fn sflow_rhs_vanishes_at_equilibria() {
        let om = row_stochastic();
        let s = AssignmentState::from_labels(&[0, 1, 1], 2).unwrap();
        assert_eq!(sflow_rhs(&s, &om).unwrap().max_abs(), 0.0);
        let b = AssignmentState::barycenter(3, 4);
        assert!(sflow_rhs(&b, &om).unwrap().max_abs() < 1e-16);
        let nonpos = WeightMatrix::from_dense(3, &[0.0, 0.5, 0.5, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5])
            .unwrap();
        for p in [0.0, 0.3, 0.5, 1.0] {
            let s = AssignmentState::from_rows(&[vec![p, 1.0 - p], vec![1.0, 0.0], vec![0.0, 1.0]])
                .unwrap();
            assert!(sflow_rhs(&s, &nonpos).unwrap().max_abs() < 1e-16);
        }
        assert!(sflow_rhs(&AssignmentState::barycenter(2, 2), &om).is_err());
    }

    #[test]
    fn sflow_rhs_respects_faces() {
        let om = row_stochastic();
        let s = AssignmentState::from_rows(&[
            vec![0.0, 0.4, 0.6],
            vec![0.2, 0.0, 0.8],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let f = sflow_rhs(&s, &om).unwrap();
        assert_eq!(f.row(0)[0], 0.0);
        assert_eq!(f.row(1)[1], 0.0);
        assert!(f.max_row_sum_abs() < 1e-15);
    }

    #[test]
    fn init_examples() {
        let om = row_stochastic();
        let s = sflow_init(&DistanceMatrix::zeros(3, 2), &om).unwrap();
        assert_eq!(s, AssignmentState::barycenter(3, 2));
        let d = DistanceMatrix::from_rows(&[vec![2.0, 2.0], vec![0.5, 0.5], vec![7.0, 7.0]]).unwrap();
        let s = sflow_init(&d, &om).unwrap();
        assert!(s.max_abs_difference(&AssignmentState::barycenter(3, 2)) < 1e-15);
        let one = WeightMatrix::identity(1);
        let d = DistanceMatrix::from_rows(&[vec![0.0, 2f64.ln()]]).unwrap();
        let s = sflow_init(&d, &one).unwrap();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn similarity_examples() {
        let om = row_stochastic();
        let b = AssignmentState::barycenter(3, 3);
        let s = similarity_map(&b, &DistanceMatrix::zeros(3, 3), &om).unwrap();
        assert!(s.max_abs_difference(&b) < 1e-15);
        let w = AssignmentState::from_rows(&[vec![0.1, 0.2, 0.7]]).unwrap();
        let s = similarity_map(&w, &DistanceMatrix::zeros(1, 3), &WeightMatrix::identity(1)).unwrap();
        assert!(s.max_abs_difference(&w) < 1e-15);
        let face = AssignmentState::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(similarity_map(&face, &DistanceMatrix::zeros(1, 2), &WeightMatrix::identity(1)).is_err());
    }

    #[test]
    fn assignment_rhs_points_to_argmin() {
        let om = row_stochastic();
        let d = DistanceMatrix::from_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![1.5, 0.2, 1.0],
            vec![2.0, 1.0, 0.1],
        ])
        .unwrap();
        let f = assignment_rhs(&AssignmentState::barycenter(3, 3), &d, &om).unwrap();
        for (i, j) in [(0, 0), (1, 1), (2, 2)] {
            assert!(f.row(i)[j] > 0.0, "row {i}");
        }
        assert!(f.max_row_sum_abs() < 1e-15);
    }

    #[test]
    fn w_accumulator_constant_barycenter() {
        let mut acc = WAccumulator::new(2, 3, Quadrature::Trapezoid);
        let b = AssignmentState::barycenter(2, 3);
        for k in 0..10 {
            acc.push(k as f64 * 0.1, &b).unwrap();
        }
        assert!(acc.current().max_abs_difference(&b) < 1e-15);
        assert!(acc.push(0.5, &b).is_err());
        assert!(w_from_s_accumulate(&Trajectory::default(), Quadrature::Trapezoid).is_err());
    }

    #[test]
    fn w_accumulator_integral_state_converges() {
        let star = AssignmentState::from_labels(&[2, 0], 3).unwrap();
        let mut acc = WAccumulator::new(2, 3, Quadrature::Trapezoid);
        let mut prev_gap = f64::INFINITY;
        for k in 0..=40 {
            acc.push(k as f64 * 0.5, &star).unwrap();
            let gap = acc.current().max_row_l1_distance(&star);
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
        // ||W_i(T) − e_j||_1 = 4 e^{-T} / (1 + 2 e^{-T}) at T = 20
        let t: f64 = 20.0;
        let expect = 4.0 * (-t).exp() / (1.0 + 2.0 * (-t).exp());
        assert!((prev_gap - expect).abs() < 1e-15);
    }

    #[test]
    fn representative_examples() {
        let ds = WeightMatrix::from_dense(3, &[0.2, 0.5, 0.3, 0.3, 0.2, 0.5, 0.5, 0.3, 0.2]).unwrap();
        let r = representative_rhs(&SimplexPoint::barycenter(3), &ds).unwrap();
        assert!(r.as_slice().iter().all(|v| v.abs() < 1e-16));
        let r = representative_rhs(&SimplexPoint::vertex(3, 1), &ds).unwrap();
        assert!(r.as_slice().iter().all(|v| *v == 0.0));
        // α = 0, β = 1, γ: RPS dynamics
        let g = 0.2;
        let mu = [1.0 / 3.0 + g, 1.0 / 3.0 - g, 1.0 / 3.0];
        let rps = WeightMatrix::from_dense(3, &[mu[2], mu[1], mu[0], mu[0], mu[2], mu[1], mu[1], mu[0], mu[2]])
            .unwrap();
        let p = [0.5, 0.3, 0.2];
        let r = representative_rhs(&SimplexPoint::new(p.to_vec()).unwrap(), &rps).unwrap();
        let expect = [
            g * p[0] * (p[2] - p[1]),
            g * p[1] * (p[0] - p[2]),
            g * p[2] * (p[1] - p[0]),
        ];
        for (a, b) in r.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-16);
        }
    }
}
