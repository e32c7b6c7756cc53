//! Classical RK4, used as a high-order reference integrator: for the linear
//! flow fallback, for cross-checking the geometric Euler scheme, and for the
//! representative flow of the counterexample runs.
//!
//! The lifted variants integrate `u̇ = ΩS(u)` with `S = exp_1(u)` row-wise.
//! This is the S-flow written in logarithmic coordinates, so every stage stays
//! on the open manifold.

use crate::flow::for_each_row;
use crate::simplex::{exp_map_into, AssignmentState};
use crate::weights::WeightMatrix;

/// One RK4 step of `ẏ = f(y)` in place. `f(y, out)` writes the derivative.
pub fn rk4_step<F>(y: &mut [f64], h: f64, f: &F)
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = y.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f(y, &mut k1);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..d {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    for i in 0..d {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// `steps` RK4 steps of size `h`.
pub fn rk4_integrate<F>(y0: &[f64], h: f64, steps: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut y = y0.to_vec();
    for _ in 0..steps {
        rk4_step(&mut y, h, &f);
    }
    y
}

/// Row-wise `exp_1` of log coordinates.
pub fn lift_rows(u: &[f64], n: usize) -> Vec<f64> {
    let ones = vec![1.0 / n as f64; n];
    let mut out = vec![0.0; u.len()];
    for_each_row(&mut out, n, |i, row| exp_map_into(&ones, &u[i * n..(i + 1) * n], row));
    out
}

/// Log coordinates of an interior state.
pub fn log_coordinates(s: &AssignmentState) -> Vec<f64> {
    s.as_slice().iter().map(|v| v.ln()).collect()
}

/// Derivative of the lifted S-flow, `u̇ = Ω exp_1(u)`.
pub fn lifted_sflow_field(omega: &WeightMatrix, n: usize) -> impl Fn(&[f64], &mut [f64]) + '_ {
    move |u, out| {
        let s = lift_rows(u, n);
        out.copy_from_slice(&omega.apply(&s, n));
    }
}

/// RK4 on the lifted S-flow from an interior state.
pub fn rk4_sflow(s0: &AssignmentState, omega: &WeightMatrix, h: f64, steps: usize) -> AssignmentState {
    let n = s0.n();
    let u = rk4_integrate(&log_coordinates(s0), h, steps, lifted_sflow_field(omega, n));
    AssignmentState::from_raw(s0.m(), n, lift_rows(&u, n))
}
