//! Velocity-limited kinematic swing simulation.
//!
//! Each step solves
//!
//! ```text
//!     minimize    (theta_end - theta - dtheta)' W2 (theta_end - theta - dtheta)
//!     subject to  m ⊗ l_dot_min dt <= m ⊗ (G(theta) dtheta) <= m ⊗ l_dot_max dt
//! ```
//!
//! where the per-muscle bounds follow the ramp model of [`velocity_bounds`]:
//! a muscle speeds up by at most `alpha * dt` per step (and never beyond its
//! limit) but can stop at once. No inertia, friction or elasticity is modeled.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::analysis;
use crate::error::{Error, Result};
use crate::model::{check_dimension, MuscleModel};
use crate::qp::{self, QpStatus, QuadraticProgram};
use crate::statics::Mask;
use crate::{JointVector, MuscleJacobian, MuscleVector};

/// Actuator speed model: per-muscle speed limit (m/s) and ramp rate (m/s²).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityLimitModel {
    limits: MuscleVector,
    alpha: f64,
}

impl VelocityLimitModel {
    pub fn new(limits: MuscleVector, alpha: f64) -> Result<Self> {
        if let Some(i) = limits.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(
                format!("l_dot_limit[{i}]"),
                format!("must be strictly positive, got {}", limits[i]),
            ));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(
                "alpha",
                format!("must be strictly positive, got {alpha}"),
            ));
        }
        Ok(Self { limits, alpha })
    }

    pub fn uniform(muscles: usize, limit: f64, alpha: f64) -> Result<Self> {
        Self::new(DVector::from_element(muscles, limit), alpha)
    }

    pub fn limits(&self) -> &MuscleVector {
        &self.limits
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Per-muscle `(l_dot_min, l_dot_max)` for the next step given the current rates.
    pub fn bounds(&self, rates: &MuscleVector, dt: f64) -> (MuscleVector, MuscleVector) {
        let m = self.limits.len();
        let mut lower = DVector::zeros(m);
        let mut upper = DVector::zeros(m);
        for i in 0..m {
            let (lo, hi) = velocity_bounds(rates[i], self.limits[i], self.alpha, dt);
            lower[i] = lo;
            upper[i] = hi;
        }
        (lower, upper)
    }

    /// Length a muscle starting at rest can cover after `steps` steps when it
    /// accelerates as fast as the ramp allows. Entry `k` is the length after
    /// `k` steps; entry 0 is zero.
    pub fn ramp_elongation(&self, muscle: usize, dt: f64, steps: usize) -> Vec<f64> {
        let limit = self.limits[muscle];
        let mut profile = Vec::with_capacity(steps + 1);
        let (mut rate, mut length) = (0.0, 0.0);
        profile.push(length);
        for _ in 0..steps {
            rate = velocity_bounds(rate, limit, self.alpha, dt).1;
            length += rate * dt;
            profile.push(length);
        }
        profile
    }
}

/// Bounds on the next muscle length rate given the current `rate`.
///
/// For `rate >= 0`: `(min(rate - alpha dt, 0), min(rate + alpha dt, limit))`.
/// For `rate < 0` the rule is mirrored:
/// `(max(rate - alpha dt, -limit), max(rate + alpha dt, 0))`.
pub fn velocity_bounds(rate: f64, limit: f64, alpha: f64, dt: f64) -> (f64, f64) {
    let ramp = alpha * dt;
    if rate >= 0.0 {
        ((rate - ramp).min(0.0), (rate + ramp).min(limit))
    } else {
        ((rate - ramp).max(-limit), (rate + ramp).max(0.0))
    }
}

/// Result of one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub delta_theta: JointVector,
    /// `G(theta) dtheta / dt` for every muscle, masked ones included.
    pub new_rates: MuscleVector,
}

/// One step from `theta` toward `theta_end` with `mask` selecting the
/// velocity-constrained muscles.
#[allow(clippy::too_many_arguments)]
pub fn step<M: MuscleModel + ?Sized>(
    model: &M,
    theta: &JointVector,
    theta_end: &JointVector,
    mask: &Mask,
    rates: &MuscleVector,
    limits: &VelocityLimitModel,
    dt: f64,
    w2: &DMatrix<f64>,
) -> Result<StepOutput> {
    let jacobian = model.muscle_jacobian(theta)?;
    step_with_jacobian(&jacobian, theta, theta_end, mask, rates, limits, dt, w2)
}

#[allow(clippy::too_many_arguments)]
fn step_with_jacobian(
    jacobian: &MuscleJacobian,
    theta: &JointVector,
    theta_end: &JointVector,
    mask: &Mask,
    rates: &MuscleVector,
    limits: &VelocityLimitModel,
    dt: f64,
    w2: &DMatrix<f64>,
) -> Result<StepOutput> {
    let (m, n) = jacobian.shape();
    check_dimension("theta", n, theta.len())?;
    check_dimension("theta_end", n, theta_end.len())?;
    check_dimension("rates", m, rates.len())?;
    check_dimension("l_dot_limit", m, limits.limits.len())?;
    mask.check_len(m)?;
    if w2.shape() != (n, n) {
        return Err(Error::Dimension {
            what: "W2",
            expected: n,
            actual: w2.nrows(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }

    let (lower, upper) = limits.bounds(rates, dt);
    let weights = mask.weights();
    for i in 0..m {
        if mask.is_active(i) && !(lower[i] <= 0.0 && upper[i] >= 0.0) {
            // Standing still must always be allowed; the ramp rule guarantees it.
            return Err(Error::invalid(
                format!("velocity bounds of muscle {i}"),
                format!("[{}, {}] exclude zero", lower[i], upper[i]),
            ));
        }
    }

    let remaining = theta_end - theta;
    let problem = QuadraticProgram::new(2.0 * w2, -2.0 * (w2 * &remaining)).with_inequalities(
        DMatrix::from_diagonal(&weights) * jacobian,
        lower.component_mul(&weights) * dt,
        upper.component_mul(&weights) * dt,
    );
    let solution = qp::solve_default(&problem)?;
    if solution.status != QpStatus::Optimal {
        return Err(Error::QpFailed {
            status: solution.status,
            residual: solution.kkt_residual,
        });
    }
    let new_rates = jacobian * &solution.x / dt;
    Ok(StepOutput {
        delta_theta: solution.x,
        new_rates,
    })
}

/// Which muscles are velocity-constrained during a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskPolicy {
    /// The same mask at every step.
    Fixed(Mask),
    /// Recompute the mask at every step: muscle `i` is released when its speed
    /// index along `theta_end - theta`, using `G(theta)`, exceeds `threshold`.
    Inhibition { threshold: f64 },
    /// Masked muscles start with `slack` meters of extra length. A masked
    /// muscle stays unconstrained until the length it has to gain, minus what
    /// the ramp could have paid out from rest, exceeds its slack; from then on
    /// it is constrained like any other muscle.
    Slack { mask: Mask, slack: MuscleVector },
}

/// Tolerance when deciding that pre-elongation slack has run out, meters.
pub const SLACK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    /// Convergence radius on `|theta - theta_end|`, radians.
    pub epsilon: f64,
    pub max_steps: usize,
    pub limits: VelocityLimitModel,
    /// Joint-space weight of the step objective.
    pub w2: DMatrix<f64>,
}

pub const DEFAULT_DT: f64 = 0.03;
pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_MAX_STEPS: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.46;
pub const DEFAULT_L_DOT_LIMIT: f64 = 0.30;

impl SimConfig {
    /// Defaults: `dt = 0.03 s`, `epsilon = 0.01 rad`, 1000 steps, `W2 = I`.
    pub fn new(joints: usize, limits: VelocityLimitModel) -> Self {
        Self {
            dt: DEFAULT_DT,
            epsilon: DEFAULT_EPSILON,
            max_steps: DEFAULT_MAX_STEPS,
            limits,
            w2: DMatrix::identity(joints, joints),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(
                "dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be positive, got {}", self.epsilon),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationCap,
}

/// Time series of one simulation.
///
/// Row `k` holds the state at `times[k] = k dt`. The rate columns of row `k`
/// describe the step that led into it (`delta_thetas[k] = theta_k - theta_{k-1}`,
/// `muscle_rates[k] = G(theta_{k-1}) delta_thetas[k] / dt`) and `masks[k]` is
/// the mask that step used. Row 0 has zero rates and the initial mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub times: Vec<f64>,
    pub thetas: Vec<JointVector>,
    pub delta_thetas: Vec<JointVector>,
    pub muscle_lengths: Vec<MuscleVector>,
    pub muscle_rates: Vec<MuscleVector>,
    pub masks: Vec<Mask>,
    pub t_cost: f64,
    pub termination: Termination,
}

impl SimTrace {
    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Joint velocities `delta_thetas[k] / dt`.
    pub fn joint_rates(&self) -> impl Iterator<Item = JointVector> + '_ {
        self.delta_thetas.iter().map(|d| d / self.dt)
    }

    /// Largest `|dtheta / dt|` over all steps and joints.
    pub fn max_joint_speed(&self) -> f64 {
        self.delta_thetas
            .iter()
            .map(|d| d.amax() / self.dt)
            .fold(0.0, f64::max)
    }

    /// Muscles masked at any step.
    pub fn masked_union(&self) -> Mask {
        let m = self.masks.first().map_or(0, Mask::len);
        Mask::from(
            (0..m)
                .map(|i| self.masks.iter().all(|mask| mask.is_active(i)))
                .collect::<Vec<_>>(),
        )
    }

    /// CSV with a header row and one row per state. Columns: `t`,
    /// `theta_1..n`, `theta_dot_1..n`, `l_1..m`, `l_dot_1..m`, `mask_1..m`
    /// (1-based muscle and joint numbers). Reals use 9 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.thetas.first().map_or(0, |t| t.len());
        let m = self.muscle_lengths.first().map_or(0, |l| l.len());
        let mut out = String::from("t");
        for prefix in ["theta", "theta_dot"] {
            for j in 1..=n {
                write!(out, ",{prefix}_{j}").unwrap();
            }
        }
        for prefix in ["l", "l_dot", "mask"] {
            for i in 1..=m {
                write!(out, ",{prefix}_{i}").unwrap();
            }
        }
        out.push('\n');
        for k in 0..self.times.len() {
            out.push_str(&format_real(self.times[k]));
            let rate = &self.delta_thetas[k] / self.dt;
            for value in self.thetas[k]
                .iter()
                .chain(rate.iter())
                .chain(self.muscle_lengths[k].iter())
                .chain(self.muscle_rates[k].iter())
            {
                out.push(',');
                out.push_str(&format_real(*value));
            }
            for bit in self.masks[k].iter() {
                out.push_str(if bit { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

/// Nine significant digits in scientific notation; `-0` is printed as `0`.
pub fn format_real(value: f64) -> String {
    let value = if value == 0.0 { 0.0 } else { value };
    format!("{value:.8e}")
}

/// Runs the swing from `theta_start` until `|theta - theta_end| < epsilon` or
/// `max_steps` steps. Muscle rates start at zero.
pub fn simulate<M: MuscleModel + ?Sized>(
    model: &M,
    theta_start: &JointVector,
    theta_end: &JointVector,
    policy: &MaskPolicy,
    config: &SimConfig,
) -> Result<SimTrace> {
    config.validate()?;
    let n = model.joint_count();
    let m = model.muscle_count();
    check_dimension("theta_start", n, theta_start.len())?;
    check_dimension("theta_end", n, theta_end.len())?;
    check_dimension("l_dot_limit", m, config.limits.limits.len())?;
    if theta_start == theta_end {
        return Err(Error::invalid("theta_end", "must differ from theta_start"));
    }
    model.check_posture(theta_end)?;
    let slack_state = match policy {
        MaskPolicy::Fixed(mask) => {
            mask.check_len(m)?;
            None
        }
        MaskPolicy::Inhibition { threshold } => {
            if !threshold.is_finite() {
                return Err(Error::invalid("c_threshold", "must be finite"));
            }
            None
        }
        MaskPolicy::Slack { mask, slack } => {
            mask.check_len(m)?;
            check_dimension("slack", m, slack.len())?;
            let ramps: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    config
                        .limits
                        .ramp_elongation(i, config.dt, config.max_steps)
                })
                .collect();
            Some((vec![false; m], ramps))
        }
    };
    let mut slack_state = slack_state;

    let dt = config.dt;
    let mut theta = theta_start.clone();
    let mut rates = DVector::zeros(m);
    let initial_lengths = model.muscle_lengths(&theta)?;

    let mut trace = SimTrace {
        dt,
        times: vec![0.0],
        thetas: vec![theta.clone()],
        delta_thetas: vec![DVector::zeros(n)],
        muscle_lengths: vec![initial_lengths.clone()],
        muscle_rates: vec![DVector::zeros(m)],
        masks: Vec::new(),
        t_cost: 0.0,
        termination: Termination::IterationCap,
    };

    let mut steps = 0;
    let mut converged = (&theta - theta_end).norm() < config.epsilon;
    let mut first_mask = None;
    while !converged && steps < config.max_steps {
        let step_index = steps + 1;
        let wrap = |source: Error| Error::Step {
            step: step_index,
            source: Box::new(source),
        };
        let jacobian = model.muscle_jacobian(&theta).map_err(wrap)?;
        let lengths = trace.muscle_lengths.last().expect("trace has a row");
        let mask = match policy {
            MaskPolicy::Fixed(mask) => mask.clone(),
            MaskPolicy::Inhibition { threshold } => {
                let r = analysis::moment_arms(&jacobian, &(theta_end - &theta)).map_err(wrap)?;
                let q = analysis::speed_index(&r, config.limits.limits()).map_err(wrap)?;
                Mask::from(q.iter().map(|&qi| !(qi > *threshold)).collect::<Vec<_>>())
            }
            MaskPolicy::Slack { mask, slack } => {
                let (exhausted, ramps) = slack_state.as_mut().expect("slack state");
                for i in 0..m {
                    if !mask.is_active(i) && !exhausted[i] {
                        let required = lengths[i] - initial_lengths[i];
                        if required - ramps[i][steps] > slack[i] + SLACK_TOLERANCE {
                            exhausted[i] = true;
                        }
                    }
                }
                Mask::from(
                    (0..m)
                        .map(|i| mask.is_active(i) || exhausted[i])
                        .collect::<Vec<_>>(),
                )
            }
        };
        let out = step_with_jacobian(
            &jacobian,
            &theta,
            theta_end,
            &mask,
            &rates,
            &config.limits,
            dt,
            &config.w2,
        )
        .map_err(wrap)?;
        theta += &out.delta_theta;
        rates = out.new_rates;
        steps += 1;

        let lengths = model.muscle_lengths(&theta).map_err(wrap)?;
        trace.times.push(steps as f64 * dt);
        trace.thetas.push(theta.clone());
        trace.delta_thetas.push(out.delta_theta);
        trace.muscle_lengths.push(lengths);
        trace.muscle_rates.push(rates.clone());
        if first_mask.is_none() {
            first_mask = Some(mask.clone());
        }
        trace.masks.push(mask);
        converged = (&theta - theta_end).norm() < config.epsilon;
    }

    let initial_mask = match (first_mask, policy) {
        (Some(mask), _) => mask,
        (None, MaskPolicy::Fixed(mask)) | (None, MaskPolicy::Slack { mask, .. }) => mask.clone(),
        (None, MaskPolicy::Inhibition { .. }) => Mask::all_active(m),
    };
    trace.masks.insert(0, initial_mask);
    trace.t_cost = steps as f64 * dt;
    trace.termination = if converged {
        Termination::Converged
    } else {
        Termination::IterationCap
    };
    Ok(trace)
}
