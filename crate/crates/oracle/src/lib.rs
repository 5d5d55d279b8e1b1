//! Slow, independent reference computations for testing `musclespeed`.
//!
//! Nothing here calls the library's QP solver or simulator. The QP oracle
//! enumerates active sets and solves each KKT system with an SVD; the
//! simulation oracles re-implement the ramp rule and step loop on top of it.
//! Everything is exponential in problem size and meant for small instances.

use musclespeed::qp::{QpSolution, QpStatus, QuadraticProgram};
use musclespeed::{Mask, MuscleModel, RobotModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("problem too large for enumeration: {0}")]
    TooLarge(String),
    #[error("start posture cannot be held with every muscle active")]
    UnholdableBaseline,
    #[error("swing must be nonzero")]
    ZeroSwing,
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("simulation did not converge in {0} steps")]
    NoConvergence(usize),
    #[error(transparent)]
    Model(#[from] musclespeed::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;

pub const MAX_VARIABLES: usize = 6;
pub const MAX_INEQUALITIES: usize = 8;

/// Feasibility tolerance used when accepting an active-set candidate.
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum RowState {
    Free,
    Lower,
    Upper,
}

/// Global minimizer of a convex QP by trying every assignment of inequality
/// rows to {inactive, at lower bound, at upper bound}, solving the resulting
/// equality-constrained KKT system and keeping the best feasible candidate.
///
/// The QP must be bounded below on its feasible set.
pub fn qp_enumerate(qp: &QuadraticProgram) -> Result<QpSolution> {
    let k = qp.hessian.nrows();
    let rows = qp.ineq_matrix.nrows();
    if k > MAX_VARIABLES || rows > MAX_INEQUALITIES {
        return Err(OracleError::TooLarge(format!(
            "{k} variables, {rows} inequality rows"
        )));
    }
    let p = qp.eq_matrix.nrows();
    let mut states = vec![RowState::Free; rows];
    // (objective, x, equality multipliers, inequality multipliers)
    type Candidate = (f64, DVector<f64>, DVector<f64>, DVector<f64>);
    let mut best: Option<Candidate> = None;
    let mut candidates = 0usize;
    loop {
        let active: Vec<(usize, f64)> = states
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                RowState::Free => None,
                RowState::Lower => Some((i, qp.lower[i])),
                RowState::Upper => Some((i, qp.upper[i])),
            })
            .collect();
        // More than k active rows adds nothing a k-row subset would not find.
        let usable = active.len() <= k && active.iter().all(|(_, b)| b.is_finite());
        if usable {
            candidates += 1;
            if let Some((x, eq_mult, act_mult)) = kkt_point(qp, &active) {
                if qp.max_violation(&x) <= FEASIBILITY_TOL * (1.0 + x.amax()) {
                    let value = qp.objective(&x);
                    let mut ineq = DVector::zeros(rows);
                    for ((i, _), mu) in active.iter().zip(act_mult.iter()) {
                        ineq[*i] = *mu;
                    }
                    if best
                        .as_ref()
                        .is_none_or(|(v, ..)| value < *v - 1e-13 * (1.0 + v.abs()))
                    {
                        best = Some((value, x, eq_mult, ineq));
                    }
                }
            }
        }
        if !advance(&mut states, qp) {
            break;
        }
    }
    Ok(match best {
        Some((_, x, eq, ineq)) => QpSolution {
            max_violation: qp.max_violation(&x),
            x,
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            eq_multipliers: eq,
            ineq_multipliers: ineq,
            iterations: candidates,
        },
        None => QpSolution {
            x: DVector::zeros(k),
            status: QpStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            eq_multipliers: DVector::zeros(p),
            ineq_multipliers: DVector::zeros(rows),
            max_violation: f64::INFINITY,
            iterations: candidates,
        },
    })
}

/// Next row-state assignment in odometer order; rows with equal bounds only
/// use the `Lower` state.
fn advance(states: &mut [RowState], qp: &QuadraticProgram) -> bool {
    for (i, s) in states.iter_mut().enumerate() {
        let pinned = qp.lower[i] == qp.upper[i];
        *s = match s {
            RowState::Free => RowState::Lower,
            RowState::Lower if !pinned => RowState::Upper,
            _ => {
                *s = RowState::Free;
                continue;
            }
        };
        return true;
    }
    false
}

/// Stationary point of the QP with the given rows held at their bounds.
/// Returns `(x, equality multipliers, active-row multipliers)` or `None` when
/// the KKT system is inconsistent.
fn kkt_point(
    qp: &QuadraticProgram,
    active: &[(usize, f64)],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let k = qp.hessian.nrows();
    let p = qp.eq_matrix.nrows();
    let a = active.len();
    let size = k + p + a;
    let mut kkt = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    kkt.view_mut((0, 0), (k, k)).copy_from(&qp.hessian);
    rhs.rows_mut(0, k).copy_from(&(-&qp.linear));
    for r in 0..p {
        let row = qp.eq_matrix.row(r);
        for c in 0..k {
            kkt[(k + r, c)] = row[c];
            kkt[(c, k + r)] = row[c];
        }
        rhs[k + r] = qp.eq_rhs[r];
    }
    for (slot, (i, bound)) in active.iter().enumerate() {
        let row = qp.ineq_matrix.row(*i);
        for c in 0..k {
            kkt[(k + p + slot, c)] = row[c];
            kkt[(c, k + p + slot)] = row[c];
        }
        rhs[k + p + slot] = *bound;
    }
    let svd = kkt.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max().max(1.0);
    let z = svd.solve(&rhs, cutoff).ok()?;
    let residual = (&kkt * &z - &rhs).amax();
    if residual > 1e-8 * (1.0 + rhs.amax()) {
        return None;
    }
    // Stationarity reads Q x + c + A' y = 0, so multipliers come out negated.
    let x = z.rows(0, k).into_owned();
    let eq = -z.rows(k, p).into_owned();
    let act = -z.rows(k + p, a).into_owned();
    Some((x, eq, act))
}

/// Minimum-norm tensions for the active muscles of `mask` that produce
/// `tau = -G' f` with every active tension in `[f_min, f_max]`. Masked
/// muscles are removed from the problem and reported as zero.
pub fn feasible_tensions(
    jacobian: &DMatrix<f64>,
    tau: &DVector<f64>,
    mask: &Mask,
    f_min: f64,
    f_max: f64,
) -> Result<Option<DVector<f64>>> {
    let active: Vec<usize> = (0..mask.len()).filter(|&i| mask.is_active(i)).collect();
    let m = jacobian.nrows();
    let n = jacobian.ncols();
    if active.is_empty() {
        return Ok((tau.amax() <= 1e-9).then(|| DVector::zeros(m)));
    }
    let k = active.len();
    let mut eq = DMatrix::zeros(n, k);
    for (c, &i) in active.iter().enumerate() {
        for j in 0..n {
            eq[(j, c)] = -jacobian[(i, j)];
        }
    }
    let qp = QuadraticProgram::new(DMatrix::identity(k, k) * 2.0, DVector::zeros(k))
        .with_equalities(eq, tau.clone())
        .with_inequalities(
            DMatrix::identity(k, k),
            DVector::from_element(k, f_min),
            DVector::from_element(k, f_max),
        );
    let solution = qp_enumerate(&qp)?;
    if solution.status != QpStatus::Optimal {
        return Ok(None);
    }
    let mut f = DVector::zeros(m);
    for (c, &i) in active.iter().enumerate() {
        f[i] = solution.x[c];
    }
    Ok(Some(f))
}

/// Central-difference Jacobian of an arbitrary vector function.
pub fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut plus = x.clone();
        plus[j] += step;
        let mut minus = x.clone();
        minus[j] -= step;
        jac.set_column(j, &((f(&plus) - f(&minus)) / (2.0 * step)));
    }
    jac
}

/// `|h(theta + delta v) - h(theta) - delta G v|_inf` for a unit direction `v`.
pub fn jacobian_consistency<M: MuscleModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    direction: &DVector<f64>,
    delta: f64,
) -> Result<f64> {
    let v = direction / direction.norm();
    let g = model.muscle_jacobian(theta)?;
    let moved = model.muscle_lengths(&(theta + &v * delta))?;
    let here = model.muscle_lengths(theta)?;
    Ok((moved - here - g * v * delta).amax())
}

/// Planar forward kinematics for models whose joints all rotate about `±y`
/// and whose via points lie in the x-z plane, written with explicit
/// trigonometry. Returns world `(x, z)` of a point on `link`.
fn planar_point(
    model: &RobotModel,
    theta: &DVector<f64>,
    link: usize,
    offset: (f64, f64),
) -> (f64, f64) {
    let (mut x, mut z, mut phi) = (0.0, 0.0, 0.0_f64);
    for j in 0..link {
        x += model.links()[j].length * phi.cos();
        z += model.links()[j].length * phi.sin();
        // Rotation about -y by t maps local x to (cos t, sin t) in x-z.
        phi += -model.joints()[j].axis.y * theta[j];
    }
    let (c, s) = (phi.cos(), phi.sin());
    (
        x + c * offset.0 - s * offset.1,
        z + s * offset.0 + c * offset.1,
    )
}

fn check_planar(model: &RobotModel) -> Result<()> {
    for joint in model.joints() {
        if joint.axis.x != 0.0 || joint.axis.z != 0.0 || joint.axis.y.abs() != 1.0 {
            return Err(OracleError::Unsupported("joint axes must be ±y".into()));
        }
    }
    for muscle in model.muscles() {
        if muscle.via_points.iter().any(|v| v.offset.y != 0.0) {
            return Err(OracleError::Unsupported(
                "via points must lie in the x-z plane".into(),
            ));
        }
    }
    Ok(())
}

/// Muscle lengths of a planar model by direct trigonometric evaluation.
pub fn planar_lengths(model: &RobotModel, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_planar(model)?;
    Ok(DVector::from_iterator(
        model.muscles().len(),
        model.muscles().iter().map(|muscle| {
            let points: Vec<(f64, f64)> = muscle
                .via_points
                .iter()
                .map(|v| planar_point(model, theta, v.link, (v.offset.x, v.offset.z)))
                .collect();
            points
                .windows(2)
                .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
                .sum::<f64>()
                + muscle.rest_length_offset
        }),
    ))
}

/// Holding torque of a planar model under gravity `-g z`: joint `j` must
/// supply `sum over distal links of m g (x_com - x_j)`, signed so that
/// positive torque drives positive `theta_j` for axis `-y`.
pub fn planar_holding_torque(model: &RobotModel, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_planar(model)?;
    let g = model.gravity();
    if g.x != 0.0 || g.y != 0.0 {
        return Err(OracleError::Unsupported(
            "gravity must point along z".into(),
        ));
    }
    let n = model.joints().len();
    let links = model.links();
    Ok(DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let pivot = planar_point(model, theta, j + 1, (0.0, 0.0));
            let sign = -model.joints()[j].axis.y;
            (j + 1..links.len())
                .map(|l| {
                    let com = planar_point(model, theta, l, (links[l].com_offset, 0.0));
                    sign * links[l].mass * -g.z * (com.0 - pivot.0)
                })
                .sum()
        }),
    ))
}

/// Ramp rule for the next rate bounds, written independently of the library.
fn ramp(rate: f64, limit: f64, alpha: f64, dt: f64) -> (f64, f64) {
    let up = alpha * dt;
    if rate < 0.0 {
        let (lo, hi) = ramp(-rate, limit, alpha, dt);
        return (-hi, -lo);
    }
    ((rate - up).min(0.0), (rate + up).min(limit))
}

/// Time cost of a one-joint swing driven against a single muscle with
/// constant moment arm, stepping the closed-form solution of the 1-D step
/// problem.
pub fn scalar_sim(
    moment_arm: f64,
    swing: f64,
    limit: f64,
    alpha: f64,
    dt: f64,
    epsilon: f64,
    max_steps: usize,
) -> Result<f64> {
    if swing == 0.0 {
        return Err(OracleError::ZeroSwing);
    }
    let mut remaining = swing;
    let mut rate = 0.0;
    let mut steps = 0;
    while remaining.abs() >= epsilon {
        if steps == max_steps {
            return Err(OracleError::NoConvergence(max_steps));
        }
        let (lo, hi) = ramp(rate, limit, alpha, dt);
        // Muscle length change is a * dtheta; pick dtheta closest to `remaining`.
        let dtheta = if moment_arm == 0.0 {
            remaining
        } else {
            let (a, b) = (lo * dt / moment_arm, hi * dt / moment_arm);
            remaining.clamp(a.min(b), a.max(b))
        };
        rate = moment_arm * dtheta / dt;
        remaining -= dtheta;
        steps += 1;
    }
    Ok(steps as f64 * dt)
}

/// Parameters shared by the mask-space oracles.
#[derive(Debug, Clone)]
pub struct SwingSetup {
    pub limits: DVector<f64>,
    pub alpha: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub f_min: f64,
    pub f_max: f64,
}

/// Time cost of a fixed-mask swing (masked muscles unconstrained), each step
/// solved with [`qp_enumerate`] and the Jacobian from [`fd_jacobian`].
pub fn fixed_mask_t_cost<M: MuscleModel + ?Sized>(
    model: &M,
    theta_start: &DVector<f64>,
    theta_end: &DVector<f64>,
    mask: &Mask,
    setup: &SwingSetup,
) -> Result<f64> {
    let n = theta_start.len();
    let m = setup.limits.len();
    let mut theta = theta_start.clone();
    let mut rates = DVector::zeros(m);
    let mut steps = 0;
    while (&theta - theta_end).norm() >= setup.epsilon {
        if steps == setup.max_steps {
            return Err(OracleError::NoConvergence(setup.max_steps));
        }
        let g = fd_jacobian(
            |t| model.muscle_lengths(t).expect("posture inside limits"),
            &theta,
            1e-6,
        );
        let active: Vec<usize> = (0..m).filter(|&i| mask.is_active(i)).collect();
        let mut rows = DMatrix::zeros(active.len(), n);
        let mut lower = DVector::zeros(active.len());
        let mut upper = DVector::zeros(active.len());
        for (r, &i) in active.iter().enumerate() {
            rows.set_row(r, &g.row(i));
            let (lo, hi) = ramp(rates[i], setup.limits[i], setup.alpha, setup.dt);
            lower[r] = lo * setup.dt;
            upper[r] = hi * setup.dt;
        }
        let remaining = theta_end - &theta;
        let qp = QuadraticProgram::new(DMatrix::identity(n, n) * 2.0, -2.0 * &remaining)
            .with_inequalities(rows, lower, upper);
        let solution = qp_enumerate(&qp)?;
        if solution.status != QpStatus::Optimal {
            return Err(OracleError::Unsupported(format!(
                "step {} has no feasible motion",
                steps + 1
            )));
        }
        rates = &g * &solution.x / setup.dt;
        theta += solution.x;
        steps += 1;
    }
    Ok(steps as f64 * setup.dt)
}

/// Result of the exhaustive mask search.
#[derive(Debug, Clone)]
pub struct MaskRanking {
    pub best: Mask,
    pub best_t_cost: f64,
    /// Every mask with its time cost, or `None` when it cannot hold the start posture.
    pub all: Vec<(Mask, Option<f64>)>,
}

pub const MAX_MASK_MUSCLES: usize = 10;

/// Tries all `2^m` masks: statically infeasible ones are discarded, the rest
/// are ranked by fixed-mask time cost. Ties go to the mask with more active
/// muscles, then to the lexicographically larger bit string.
pub fn mask_enumerate<M: MuscleModel + ?Sized>(
    model: &M,
    theta_start: &DVector<f64>,
    theta_end: &DVector<f64>,
    setup: &SwingSetup,
) -> Result<MaskRanking> {
    let m = model.muscle_count();
    if m > MAX_MASK_MUSCLES {
        return Err(OracleError::TooLarge(format!("{m} muscles")));
    }
    let g = fd_jacobian(
        |t| model.muscle_lengths(t).expect("posture inside limits"),
        theta_start,
        1e-6,
    );
    let tau = model.holding_torque(theta_start)?;
    let mut all = Vec::with_capacity(1 << m);
    for bits in (0..1u32 << m).rev() {
        let mask = Mask::from(
            (0..m)
                .map(|i| bits & (1 << (m - 1 - i)) != 0)
                .collect::<Vec<_>>(),
        );
        let holdable = feasible_tensions(&g, &tau, &mask, setup.f_min, setup.f_max)?.is_some();
        if bits == (1 << m) - 1 && !holdable {
            return Err(OracleError::UnholdableBaseline);
        }
        let t_cost = if holdable {
            Some(fixed_mask_t_cost(
                model,
                theta_start,
                theta_end,
                &mask,
                setup,
            )?)
        } else {
            None
        };
        all.push((mask, t_cost));
    }
    let (best, best_t_cost) = all
        .iter()
        .filter_map(|(mask, t)| t.map(|t| (mask, t)))
        .fold(None::<(&Mask, f64)>, |acc, (mask, t)| match acc {
            Some((b, bt)) if bt < t - 1e-12 => Some((b, bt)),
            Some((b, bt)) if (bt - t).abs() <= 1e-12 && active_count(b) >= active_count(mask) => {
                Some((b, bt))
            }
            _ => Some((mask, t)),
        })
        .map(|(mask, t)| (mask.clone(), t))
        .expect("the all-active mask is holdable");
    Ok(MaskRanking {
        best,
        best_t_cost,
        all,
    })
}

fn active_count(mask: &Mask) -> usize {
    mask.iter().filter(|&b| b).count()
}

/// Random convex QP within the enumeration limits, reproducible from `seed`.
///
/// About a fifth of the instances draw their bounds independently of any
/// reference point and are often infeasible; the rest are built around a
/// random point and are feasible. Some Hessians are only semidefinite, in
/// which case every variable gets finite box bounds so the problem stays
/// bounded.
pub fn random_small_qp(seed: u64) -> QuadraticProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=MAX_VARIABLES);
    let semidefinite = k >= 2 && rng.random_bool(0.2);
    let rank = if semidefinite {
        rng.random_range(1..k)
    } else {
        k
    };
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.random_range(-1.0..1.0) };
    let factor = DMatrix::from_fn(k, rank, |_, _| normal(&mut rng));
    let mut hessian = &factor * factor.transpose();
    if !semidefinite {
        hessian += DMatrix::identity(k, k) * 0.1;
    }
    let linear = DVector::from_fn(k, |_, _| normal(&mut rng) * 2.0);
    let reference = DVector::from_fn(k, |_, _| normal(&mut rng));
    let free_bounds = rng.random_bool(0.2);

    let p = if k > 1 {
        rng.random_range(0..=(k - 1).min(2))
    } else {
        0
    };
    let eq_matrix = DMatrix::from_fn(p, k, |_, _| normal(&mut rng));
    let eq_rhs = &eq_matrix * &reference;

    let boxed = if semidefinite { k } else { 0 };
    let extra = rng.random_range(0..=(MAX_INEQUALITIES - boxed).min(4));
    let rows = boxed + extra;
    let mut ineq = DMatrix::zeros(rows, k);
    for i in 0..boxed {
        ineq[(i, i)] = 1.0;
    }
    for i in boxed..rows {
        for j in 0..k {
            ineq[(i, j)] = normal(&mut rng);
        }
    }
    let at_reference = &ineq * &reference;
    let mut lower = DVector::zeros(rows);
    let mut upper = DVector::zeros(rows);
    for i in 0..rows {
        let (lo, hi) = if free_bounds {
            let a = normal(&mut rng);
            let b = normal(&mut rng);
            (a.min(b), a.max(b))
        } else {
            let c = at_reference[i];
            (
                c - rng.random_range(0.0..0.5),
                c + rng.random_range(0.0..0.5),
            )
        };
        let kind = rng.random_range(0..10);
        (lower[i], upper[i]) = match kind {
            0 if i >= boxed => (f64::NEG_INFINITY, hi),
            1 if i >= boxed => (lo, f64::INFINITY),
            2 if !free_bounds => (at_reference[i], at_reference[i]),
            _ => (lo, hi),
        };
    }
    QuadraticProgram::new(hessian, linear)
        .with_equalities(eq_matrix, eq_rhs)
        .with_inequalities(ineq, lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, v(&[-2.0, -4.0]));
        let s = qp_enumerate(&qp).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x - v(&[1.0, 2.0])).amax() < 1e-12);
    }

    #[test]
    fn bound_active_minimum() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, v(&[-2.0, -4.0]))
            .with_inequalities(
                DMatrix::identity(2, 2),
                v(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
                v(&[0.5, 0.5]),
            );
        let s = qp_enumerate(&qp).unwrap();
        assert!((&s.x - v(&[0.5, 0.5])).amax() < 1e-12);
        // Upper-active rows carry negative multipliers: Q x + c = (-1, -3).
        assert!((&s.ineq_multipliers - v(&[-1.0, -3.0])).amax() < 1e-10);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), v(&[0.0])).with_inequalities(
            a,
            v(&[1.0, f64::NEG_INFINITY]),
            v(&[f64::INFINITY, 0.0]),
        );
        assert_eq!(qp_enumerate(&qp).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn scalar_oracle_trivia() {
        assert!(matches!(
            scalar_sim(0.02, 0.0, 0.3, 0.46, 0.03, 0.01, 100),
            Err(OracleError::ZeroSwing)
        ));
        assert_eq!(
            scalar_sim(0.0, 1.0, 0.3, 0.46, 0.03, 0.01, 100).unwrap(),
            0.03
        );
        // First step: 0.0138 m/s * 0.03 s / 0.02 m = 0.0207 rad.
        let t = scalar_sim(0.02, 0.0207, 0.3, 0.46, 0.03, 1e-9, 100).unwrap();
        assert_eq!(t, 0.03);
    }

    #[test]
    fn ramp_is_mirrored() {
        assert_eq!(ramp(-0.29, 0.30, 0.46, 0.03), (-0.30, 0.0));
    }
}
