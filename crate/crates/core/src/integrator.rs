//! Geometric Euler integration of the S-flow, `S ← exp_S(h Ω S)`, with
//! trajectory recording and certified termination.

use std::io::Write;

use crate::error::{domain, invalid, Result};
use crate::flow::for_each_row;
use crate::simplex::{avg_entropy, exp_map_into, lyapunov_value, AssignmentState};
use crate::stability::{classify_margins, eps_est, MarginClass};
use crate::weights::WeightMatrix;

/// When integration stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationMode {
    /// Average entropy below the threshold.
    Entropy,
    /// Rounded state is a stable labeling and the iterate lies in its
    /// certified attraction ball.
    AttractionCertified,
    /// Run exactly `max_steps` steps.
    FixedSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub h: f64,
    pub max_steps: usize,
    pub entropy_threshold: f64,
    pub record_every: usize,
    pub termination_mode: TerminationMode,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            max_steps: 100_000,
            entropy_threshold: 1e-3,
            record_every: 10,
            termination_mode: TerminationMode::AttractionCertified,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(invalid("step size h must be positive"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1"));
        }
        if !(self.entropy_threshold > 0.0 && self.entropy_threshold < 1.0) {
            return Err(invalid("entropy threshold must lie in (0, 1)"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// Per-sample scalar diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub avg_entropy: f64,
    pub lyapunov: Option<f64>,
    pub min_rowmax: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<AssignmentState>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&AssignmentState> {
        self.states.last()
    }

    pub(crate) fn record(&mut self, t: f64, s: &AssignmentState, omega: &WeightMatrix) {
        let lyapunov = omega
            .factorization()
            .and_then(|f| lyapunov_value(s, f.omega_hat()).ok());
        self.diagnostics.push(Diagnostics {
            avg_entropy: avg_entropy(s),
            lyapunov,
            min_rowmax: s.min_row_max(),
        });
        self.times.push(t);
        self.states.push(s.clone());
    }

    /// Long-format CSV: `t,i,j,value`.
    pub fn write_long_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,i,j,value")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for i in 0..s.m() {
                for j in 0..s.n() {
                    writeln!(out, "{t},{i},{j},{}", s.get(i, j))?;
                }
            }
        }
        Ok(())
    }

    /// Diagnostics CSV: `t,avg_entropy,lyapunov,min_rowmax` (empty lyapunov
    /// field when no symmetric factorization is available).
    pub fn write_diagnostics_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,avg_entropy,lyapunov,min_rowmax")?;
        for (t, d) in self.times.iter().zip(&self.diagnostics) {
            let lyap = d.lyapunov.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{t},{},{lyap},{}", d.avg_entropy, d.min_rowmax)?;
        }
        Ok(())
    }
}

/// Which criterion ended the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Entropy,
    AttractionCertified,
    FixedSteps,
    /// `max_steps` exhausted before the configured criterion fired.
    Budget,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Entropy => "entropy",
            Termination::AttractionCertified => "attraction_certified",
            Termination::FixedSteps => "fixed_steps",
            Termination::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminationRecord {
    pub criterion: Termination,
    /// Index `T` of the final iterate.
    pub steps: usize,
    pub final_entropy: f64,
    /// Present in attraction-certified mode.
    pub certificate: Option<CertifiedRounding>,
}

/// Result of rounding a state and checking the attraction certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedRounding {
    pub certified: bool,
    /// Row-wise argmax rounding; `None` when some row has a tied maximum.
    pub sstar: Option<AssignmentState>,
    /// Rows whose maximum is attained more than once.
    pub tie_rows: Vec<usize>,
    /// Whether the rounded labeling satisfies the strict stability condition.
    pub stable: bool,
    /// `ε_est(S*, Ω)`; 0 when `S*` is missing or not stable.
    pub epsilon: f64,
    /// `max_i ||S_i − S*_i||_1`; infinite when `S*` is missing.
    pub distance: f64,
    /// `epsilon − distance`.
    pub margin: f64,
    /// Reason for a failed certificate, if any.
    pub reason: Option<String>,
}

/// One geometric Euler step `F_h(S) = exp_S(h Ω S)`.
pub fn euler_step(s: &AssignmentState, omega: &WeightMatrix, h: f64) -> Result<AssignmentState> {
    omega.check_dim(s.m())?;
    if !(h > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    if !s.is_interior() {
        return Err(domain("geometric Euler step needs an interior state"));
    }
    Ok(euler_step_unchecked(s, omega, h))
}

/// Face-preserving step: zero entries stay zero, positive entries stay
/// positive. Used after the interior check on the initial value.
pub(crate) fn euler_step_unchecked(s: &AssignmentState, omega: &WeightMatrix, h: f64) -> AssignmentState {
    let (m, n) = (s.m(), s.n());
    let x = s.as_slice();
    let mut data = vec![0.0; m * n];
    for_each_row(&mut data, n, |i, out| {
        let mut v = vec![0.0; n];
        omega.apply_row_into(i, x, n, &mut v);
        v.iter_mut().for_each(|e| *e *= h);
        exp_map_into(&x[i * n..(i + 1) * n], &v, out);
    });
    AssignmentState::from_raw(m, n, data)
}

/// Iterates [`euler_step`] from `s0` until the configured criterion fires or
/// the step budget runs out.
pub fn integrate(
    s0: &AssignmentState,
    omega: &WeightMatrix,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, TerminationRecord)> {
    cfg.validate()?;
    omega.check_dim(s0.m())?;
    if !s0.is_interior() {
        return Err(domain("integration must start from an interior state"));
    }
    let mut traj = Trajectory::default();
    let mut s = s0.clone();
    traj.record(0.0, &s, omega);

    let check = |s: &AssignmentState, step: usize| -> Option<(Termination, Option<CertifiedRounding>)> {
        match cfg.termination_mode {
            TerminationMode::Entropy => {
                (avg_entropy(s) < cfg.entropy_threshold).then_some((Termination::Entropy, None))
            }
            TerminationMode::AttractionCertified => {
                if !step.is_multiple_of(cfg.record_every) {
                    return None;
                }
                let c = certified_round(s, omega);
                c.certified.then_some((Termination::AttractionCertified, Some(c)))
            }
            TerminationMode::FixedSteps => None,
        }
    };

    if let Some((criterion, certificate)) = check(&s, 0) {
        return Ok((
            traj,
            TerminationRecord { criterion, steps: 0, final_entropy: avg_entropy(&s), certificate },
        ));
    }

    let mut fired = None;
    let mut steps = 0;
    for step in 1..=cfg.max_steps {
        s = euler_step_unchecked(&s, omega, cfg.h);
        steps = step;
        let t = step as f64 * cfg.h;
        if let Some(f) = check(&s, step) {
            traj.record(t, &s, omega);
            fired = Some(f);
            break;
        }
        if step % cfg.record_every == 0 || step == cfg.max_steps {
            traj.record(t, &s, omega);
        }
    }

    let (criterion, certificate) = match (fired, cfg.termination_mode) {
        (Some(f), _) => f,
        (None, TerminationMode::FixedSteps) => (Termination::FixedSteps, None),
        (None, TerminationMode::AttractionCertified) => {
            (Termination::Budget, Some(certified_round(&s, omega)))
        }
        (None, TerminationMode::Entropy) => (Termination::Budget, None),
    };
    Ok((
        traj,
        TerminationRecord { criterion, steps, final_entropy: avg_entropy(&s), certificate },
    ))
}

/// Rounds `s` row-wise and checks whether the attraction certificate
/// guarantees convergence of the discrete iteration to the rounded labeling.
pub fn certified_round(s: &AssignmentState, omega: &WeightMatrix) -> CertifiedRounding {
    let argmax = s.argmax_rows();
    let tie_rows: Vec<usize> = argmax
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(i, _)| i)
        .collect();
    if !tie_rows.is_empty() {
        return CertifiedRounding {
            certified: false,
            sstar: None,
            reason: Some(format!("argmax tie in {} row(s)", tie_rows.len())),
            tie_rows,
            stable: false,
            epsilon: 0.0,
            distance: f64::INFINITY,
            margin: f64::NEG_INFINITY,
        };
    }
    let labels: Vec<usize> = argmax.into_iter().map(Option::unwrap).collect();
    let sstar = AssignmentState::from_labels(&labels, s.n()).expect("labels within range");
    let distance = s.max_row_l1_distance(&sstar);
    let mut out = CertifiedRounding {
        certified: false,
        sstar: None,
        tie_rows,
        stable: false,
        epsilon: 0.0,
        distance,
        margin: -distance,
        reason: None,
    };
    if !omega.is_nonnegative() || !omega.has_positive_diagonal() {
        out.reason = Some("Ω must be nonnegative with positive diagonal".into());
    } else if omega.m() != s.m() {
        out.reason = Some("Ω dimension mismatch".into());
    } else if classify_margins(&sstar, omega) != MarginClass::Stable {
        out.reason = Some("rounded labeling violates the strict stability condition".into());
    } else {
        out.stable = true;
        out.epsilon = eps_est(&sstar, omega).expect("stable labeling has a basin estimate");
        out.margin = out.epsilon - distance;
        out.certified = distance < out.epsilon;
        if !out.certified {
            out.reason = Some("state outside the certified attraction ball".into());
        }
    }
    out.sstar = Some(sstar);
    out
}

/// Max-abs gap at `t_end` between geometric Euler runs with step `h` and with
/// the finer `reference_h`.
pub fn discretization_error_probe(
    s0: &AssignmentState,
    omega: &WeightMatrix,
    h: f64,
    t_end: f64,
    reference_h: f64,
) -> Result<f64> {
    omega.check_dim(s0.m())?;
    if !(h > 0.0 && reference_h > 0.0 && t_end >= 0.0) {
        return Err(invalid("step sizes must be positive and t_end nonnegative"));
    }
    if reference_h > h && (reference_h - h).abs() > 1e-15 {
        return Err(invalid("reference step must not exceed h"));
    }
    if !s0.is_interior() {
        return Err(domain("probe needs an interior initial state"));
    }
    let steps = |step: f64| -> Result<usize> {
        let k = t_end / step;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
            return Err(invalid(format!("t_end = {t_end} is not a multiple of {step}")));
        }
        Ok(k.round() as usize)
    };
    let (k, k_ref) = (steps(h)?, steps(reference_h)?);
    let run = |k: usize, step: f64| {
        let mut s = s0.clone();
        for _ in 0..k {
            s = euler_step_unchecked(&s, omega, step);
        }
        s
    };
    Ok(run(k, h).max_abs_difference(&run(k_ref, reference_h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::sflow_init;
    use crate::weights::DistanceMatrix;

    fn omega3() -> WeightMatrix {
        WeightMatrix::from_dense(3, &[0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5]).unwrap()
    }

    #[test]
    fn barycenter_is_fixed() {
        let b = AssignmentState::barycenter(3, 4);
        let s = euler_step(&b, &omega3(), 0.1).unwrap();
        assert!(s.max_abs_difference(&b) < 1e-16);
    }

    #[test]
    fn rejects_boundary_state() {
        let s = AssignmentState::from_labels(&[0, 1, 0], 2).unwrap();
        assert!(euler_step(&s, &omega3(), 0.1).is_err());
        assert!(euler_step(&AssignmentState::barycenter(3, 2), &omega3(), 0.0).is_err());
    }

    #[test]
    fn integral_and_line_equilibria_are_fixed_points() {
        let s = AssignmentState::from_labels(&[0, 1, 1], 2).unwrap();
        assert_eq!(euler_step_unchecked(&s, &omega3(), 0.3), s);
        let nonpos = WeightMatrix::from_dense(3, &[0.0, 0.5, 0.5, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5])
            .unwrap();
        let line = AssignmentState::from_rows(&[vec![0.3, 0.7], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(euler_step_unchecked(&line, &nonpos, 0.1).max_abs_difference(&line) < 1e-16);
    }

    #[test]
    fn manifold_preserved() {
        let d = DistanceMatrix::from_rows(&[vec![0.0, 3.0, 1.0], vec![2.0, 0.5, 1.0], vec![1.0, 1.0, 0.0]])
            .unwrap();
        let mut s = sflow_init(&d, &omega3()).unwrap();
        for _ in 0..50 {
            s = euler_step(&s, &omega3(), 0.2).unwrap();
            for r in s.rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(r.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn fixed_steps_sample_count() {
        let s0 = AssignmentState::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        for (max_steps, every) in [(10, 3), (9, 3), (7, 1), (5, 10)] {
            let cfg = IntegratorConfig {
                max_steps,
                record_every: every,
                termination_mode: TerminationMode::FixedSteps,
                ..Default::default()
            };
            let (traj, rec) = integrate(&s0, &omega3(), &cfg).unwrap();
            assert_eq!(traj.len(), max_steps.div_ceil(every) + 1);
            assert_eq!(rec.criterion, Termination::FixedSteps);
            assert_eq!(rec.steps, max_steps);
            assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            IntegratorConfig { h: 0.0, ..Default::default() },
            IntegratorConfig { max_steps: 0, ..Default::default() },
            IntegratorConfig { entropy_threshold: 1.0, ..Default::default() },
            IntegratorConfig { record_every: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn certified_round_examples() {
        let om = omega3();
        let star = AssignmentState::from_labels(&[1, 1, 1], 2).unwrap();
        let c = certified_round(&star, &om);
        assert!(c.certified);
        assert_eq!(c.margin, c.epsilon);
        let b = AssignmentState::barycenter(3, 2);
        let c = certified_round(&b, &om);
        assert!(!c.certified);
        assert_eq!(c.tie_rows, vec![0, 1, 2]);
        assert!(c.sstar.is_none());
        let b3 = AssignmentState::from_rows(&vec![vec![0.34, 0.33, 0.33]; 3]).unwrap();
        let c = certified_round(&b3, &om);
        assert!(!c.certified);
        assert!(c.distance >= 2.0 - 2.0 / 3.0 - 0.03);
    }

    #[test]
    fn probe_examples() {
        let s0 = AssignmentState::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        assert_eq!(discretization_error_probe(&s0, &omega3(), 0.1, 1.0, 0.1).unwrap(), 0.0);
        assert!(discretization_error_probe(&s0, &omega3(), 0.3, 1.0, 0.01).is_err());
        let eq = AssignmentState::barycenter(3, 2);
        assert!(discretization_error_probe(&eq, &omega3(), 0.1, 1.0, 0.1 / 16.0).unwrap() < 1e-15);
    }

    #[test]
    fn deterministic_runs() {
        let d = DistanceMatrix::from_rows(&[vec![0.0, 3.0], vec![2.0, 0.5], vec![1.0, 1.2]]).unwrap();
        let s0 = sflow_init(&d, &omega3()).unwrap();
        let cfg = IntegratorConfig::default();
        let a = integrate(&s0, &omega3(), &cfg).unwrap();
        let b = integrate(&s0, &omega3(), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
