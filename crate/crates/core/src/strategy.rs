//! Antagonist management strategies and their comparison.
//!
//! * **Basic**: every muscle is velocity-constrained for the whole swing.
//! * **Method 1** (inhibition): muscles whose speed index exceeds a threshold
//!   are left unconstrained, re-evaluated at every step.
//! * **Method 2** (pre-elongation): a greedy search picks antagonists that can
//!   be slackened while the start posture stays holdable, then computes how
//!   much each must be lengthened beforehand so that it never binds.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::analysis;
use crate::error::{Error, Result};
use crate::model::{check_dimension, MuscleModel};
use crate::sim::{self, format_real, MaskPolicy, SimConfig, SimTrace, VelocityLimitModel};
use crate::statics::{self, Mask, TensionVector};
use crate::{JointVector, MuscleVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Basic,
    Method1,
    Method2,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Basic, Strategy::Method1, Strategy::Method2];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Basic => "Basic",
            Strategy::Method1 => "Method1",
            Strategy::Method2 => "Method2",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "basic" => Ok(Strategy::Basic),
            "method1" => Ok(Strategy::Method1),
            "method2" => Ok(Strategy::Method2),
            _ => Err(Error::invalid(
                "strategy",
                format!("unknown strategy `{s}` (expected Basic, Method1 or Method2)"),
            )),
        }
    }
}

/// Inhibition mask: muscle `i` is released (bit 0) iff `q[i] > threshold`.
pub fn method1_mask(q: &MuscleVector, threshold: f64) -> Mask {
    Mask::from(q.iter().map(|&qi| !(qi > threshold)).collect::<Vec<_>>())
}

/// Outcome of the greedy elongation search.
#[derive(Debug, Clone, PartialEq)]
pub struct Method2Search {
    pub mask: Mask,
    /// Minimum-effort tensions holding `theta_start` with `mask`.
    pub tensions: TensionVector,
    /// Antagonists in the order they were tried (descending speed index).
    pub candidates: Vec<usize>,
    /// The candidate whose release made the posture unholdable, if any.
    pub rejected: Option<usize>,
}

/// Greedy search over antagonists (`q > 0` along the motion) in descending
/// speed-index order. Each one is released in turn while the start posture
/// stays holdable; the search stops at the first release that breaks it.
#[allow(clippy::too_many_arguments)]
pub fn method2_search<M: MuscleModel + ?Sized>(
    model: &M,
    theta_start: &JointVector,
    theta_end: &JointVector,
    limits: &VelocityLimitModel,
    f_min: f64,
    f_max: f64,
    w1: &DMatrix<f64>,
) -> Result<Method2Search> {
    let m = model.muscle_count();
    let mut mask = Mask::all_active(m);
    let mut tensions = statics::feasibility(model, theta_start, &mask, f_min, f_max, w1)?
        .ok_or(Error::PostureUnholdable)?;
    let q = analysis::speed_index_for_motion(model, theta_start, theta_end, limits.limits())?;
    let candidates: Vec<usize> = analysis::speed_order(&q)
        .into_iter()
        .filter(|&i| q[i] > 0.0)
        .collect();
    let mut rejected = None;
    for &i in &candidates {
        mask.set(i, false);
        match statics::feasibility(model, theta_start, &mask, f_min, f_max, w1)? {
            Some(f) => tensions = f,
            None => {
                mask.set(i, true);
                rejected = Some(i);
                break;
            }
        }
    }
    Ok(Method2Search {
        mask,
        tensions,
        candidates,
        rejected,
    })
}

/// Pre-elongation each masked muscle needs so that it never has to lengthen
/// faster than the ramp allows from rest:
/// `max_k (h(theta_k) - h(theta_0) - fastest(k))`, clamped at zero.
/// Unmasked muscles get zero.
pub fn elongation_amounts<M: MuscleModel + ?Sized>(
    model: &M,
    trace: &SimTrace,
    mask: &Mask,
    limits: &VelocityLimitModel,
) -> Result<MuscleVector> {
    let m = model.muscle_count();
    mask.check_len(m)?;
    check_dimension("l_dot_limit", m, limits.limits().len())?;
    let steps = trace.steps();
    let lengths = trace
        .thetas
        .iter()
        .map(|theta| model.muscle_lengths(theta))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DVector::zeros(m);
    for i in mask.masked_indices() {
        let fastest = limits.ramp_elongation(i, trace.dt, steps);
        out[i] = lengths
            .iter()
            .zip(&fastest)
            .map(|(l, reach)| l[i] - lengths[0][i] - reach)
            .fold(0.0, f64::max);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    /// Inhibition threshold on the speed index, s/rad.
    pub c_threshold: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Tension weight of the holding problem.
    pub w1: DMatrix<f64>,
    pub sim: SimConfig,
}

pub const DEFAULT_F_MIN: f64 = 10.0;
pub const DEFAULT_F_MAX: f64 = 200.0;

impl StrategyConfig {
    /// `C = 0`, tensions in `[10, 200]` N, `W1 = I` and [`SimConfig::new`].
    pub fn new(joints: usize, limits: VelocityLimitModel) -> Self {
        let m = limits.limits().len();
        Self {
            c_threshold: 0.0,
            f_min: DEFAULT_F_MIN,
            f_max: DEFAULT_F_MAX,
            w1: DMatrix::identity(m, m),
            sim: SimConfig::new(joints, limits),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// Basic: all ones. Method 1: muscles released at any step. Method 2: the
    /// searched mask.
    pub mask: Mask,
    /// Pre-elongation per muscle, meters (zero except for Method 2).
    pub elongation: MuscleVector,
    pub trace: SimTrace,
    pub max_joint_speed: f64,
    pub t_cost: f64,
    pub feasible_tensions: Option<TensionVector>,
}

impl StrategyResult {
    fn new(strategy: Strategy, mask: Mask, elongation: MuscleVector, trace: SimTrace) -> Self {
        Self {
            strategy,
            mask,
            elongation,
            max_joint_speed: trace.max_joint_speed(),
            t_cost: trace.t_cost,
            trace,
            feasible_tensions: None,
        }
    }
}

/// Runs a single strategy.
pub fn run_strategy<M: MuscleModel + ?Sized>(
    strategy: Strategy,
    model: &M,
    theta_start: &JointVector,
    theta_end: &JointVector,
    config: &StrategyConfig,
) -> Result<StrategyResult> {
    let m = model.muscle_count();
    let sim = &config.sim;
    match strategy {
        Strategy::Basic => {
            let mask = Mask::all_active(m);
            let trace = sim::simulate(
                model,
                theta_start,
                theta_end,
                &MaskPolicy::Fixed(mask.clone()),
                sim,
            )?;
            Ok(StrategyResult::new(
                strategy,
                mask,
                DVector::zeros(m),
                trace,
            ))
        }
        Strategy::Method1 => {
            let policy = MaskPolicy::Inhibition {
                threshold: config.c_threshold,
            };
            let trace = sim::simulate(model, theta_start, theta_end, &policy, sim)?;
            Ok(StrategyResult::new(
                strategy,
                trace.masked_union(),
                DVector::zeros(m),
                trace,
            ))
        }
        Strategy::Method2 => {
            let search = method2_search(
                model,
                theta_start,
                theta_end,
                &sim.limits,
                config.f_min,
                config.f_max,
                &config.w1,
            )?;
            let free = sim::simulate(
                model,
                theta_start,
                theta_end,
                &MaskPolicy::Fixed(search.mask.clone()),
                sim,
            )?;
            let elongation = elongation_amounts(model, &free, &search.mask, &sim.limits)?;
            let policy = MaskPolicy::Slack {
                mask: search.mask.clone(),
                slack: elongation.clone(),
            };
            let trace = sim::simulate(model, theta_start, theta_end, &policy, sim)?;
            let mut result = StrategyResult::new(strategy, search.mask, elongation, trace);
            result.feasible_tensions = Some(search.tensions);
            Ok(result)
        }
    }
}

/// Runs `strategies` concurrently and returns results in the order given.
pub fn compare<M: MuscleModel + ?Sized>(
    model: &M,
    theta_start: &JointVector,
    theta_end: &JointVector,
    strategies: &[Strategy],
    config: &StrategyConfig,
) -> Result<Vec<StrategyResult>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&s| scope.spawn(move || run_strategy(s, model, theta_start, theta_end, config)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("strategy thread panicked"))
            .collect()
    })
}

/// Summary CSV: one row per result with `max_joint_speed` (rad/s), `t_cost`
/// (s), 1-based `masked_muscle_indices` joined by `;`, and
/// `total_elongation` (m).
pub fn summary_csv(results: &[StrategyResult]) -> String {
    let mut out =
        String::from("strategy,max_joint_speed,t_cost,masked_muscle_indices,total_elongation\n");
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.strategy,
            format_real(r.max_joint_speed),
            format_real(r.t_cost),
            masked_list(&r.mask),
            format_real(r.elongation.sum())
        )
        .unwrap();
    }
    out
}

/// Fixed-width table of the same figures, for terminals.
pub fn summary_table(results: &[StrategyResult]) -> String {
    let mut out = format!(
        "{:<10}{:>22}{:>12}{:>18}{:>20}\n",
        "strategy", "max speed [rad/s]", "t_cost [s]", "masked muscles", "elongation [m]"
    );
    for r in results {
        let masked = masked_list(&r.mask);
        writeln!(
            out,
            "{:<10}{:>22.3}{:>12.2}{:>18}{:>20.4}",
            r.strategy.name(),
            r.max_joint_speed,
            r.t_cost,
            if masked.is_empty() { "-" } else { &masked },
            r.elongation.sum()
        )
        .unwrap();
    }
    out
}

fn masked_list(mask: &Mask) -> String {
    mask.masked_indices()
        .iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(";")
}
