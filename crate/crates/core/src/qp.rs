//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize     1/2 x' Q x + c' x
//!     subject to   A x = b
//!                  lower <= C x <= upper
//! ```
//!
//! with `Q` symmetric positive semidefinite. Bounds may be infinite. The solver
//! is the dual active-set method of Goldfarb and Idnani: it starts from the
//! unconstrained minimizer, repeatedly adds the most violated constraint and
//! drops constraints whose multipliers would turn negative. A violated
//! constraint that cannot be added by any dual step proves infeasibility.
//!
//! The method needs a positive definite `Q`. A singular or badly conditioned
//! `Q` is handled by proximal point iterations, each of which adds a small
//! multiple of `|x - x_prev|^2` to the objective.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default KKT tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
/// Default cap on active-set changes.
pub const DEFAULT_MAX_ITERATIONS: usize = 500;
/// Proximal weight, relative to the largest diagonal entry of `Q`, used when
/// `Q` is singular or nearly so.
const PROXIMAL_WEIGHT: f64 = 1e-3;
/// Squared Cholesky pivots below this (relative) trigger the proximal scheme.
const CONDITION_LIMIT: f64 = 1e-8;
const PROXIMAL_ITERATIONS: usize = 10_000;
/// Proximal iterations stop once the KKT residual of the original problem is
/// this fraction of the requested tolerance.
const PROXIMAL_TARGET: f64 = 1e-2;

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem `min 1/2 x'Qx + c'x`.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let k = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, k),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, k),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(
        mut self,
        matrix: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        self.ineq_matrix = matrix;
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dimension(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest violation of any equality or bound at `x` (zero when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.eq_matrix * x - &self.eq_rhs).amax();
        let cx = &self.ineq_matrix * x;
        let ineq = (0..cx.len())
            .map(|i| (self.lower[i] - cx[i]).max(cx[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }

    /// Checks dimensions, symmetry, semidefiniteness and bound ordering.
    pub fn validate(&self) -> Result<()> {
        let k = self.linear.len();
        let malformed = |msg: String| Err(Error::MalformedQp(msg));
        if self.hessian.shape() != (k, k) {
            return malformed(format!("Q is {:?}, expected {k}x{k}", self.hessian.shape()));
        }
        if self.eq_matrix.ncols() != k || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return malformed(format!(
                "equality matrix is {:?} with {} right-hand sides",
                self.eq_matrix.shape(),
                self.eq_rhs.len()
            ));
        }
        let q = self.ineq_matrix.nrows();
        if self.ineq_matrix.ncols() != k || self.lower.len() != q || self.upper.len() != q {
            return malformed(format!(
                "inequality matrix is {:?} with {} lower and {} upper bounds",
                self.ineq_matrix.shape(),
                self.lower.len(),
                self.upper.len()
            ));
        }
        let finite = self
            .hessian
            .iter()
            .chain(self.linear.iter())
            .chain(self.eq_matrix.iter())
            .chain(self.eq_rhs.iter())
            .chain(self.ineq_matrix.iter())
            .all(|v| v.is_finite());
        if !finite {
            return malformed("non-finite problem data".into());
        }
        for i in 0..q {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return malformed(format!(
                    "row {i} has lower bound {} above upper bound {}",
                    self.lower[i], self.upper[i]
                ));
            }
        }
        let asymmetry = (&self.hessian - self.hessian.transpose()).amax();
        if asymmetry > SYMMETRY_TOLERANCE * (1.0 + self.hessian.amax()) {
            return malformed(format!("Q is not symmetric (max asymmetry {asymmetry:e})"));
        }
        if k > 0 {
            let min_eig = SymmetricEigen::new(self.hessian.clone()).eigenvalues.min();
            if min_eig < -PSD_TOLERANCE {
                return malformed(format!(
                    "Q is not positive semidefinite (eigenvalue {min_eig:e})"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    /// The active-set iteration finished but the KKT residual exceeds the tolerance.
    Inaccurate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Largest entry of the [`KktReport`] for `x` and the returned multipliers.
    pub kkt_residual: f64,
    /// Multipliers `y` of `A x = b`.
    pub eq_multipliers: DVector<f64>,
    /// Signed multipliers of the two-sided rows: positive when the lower bound
    /// is active, negative when the upper bound is.
    pub ineq_multipliers: DVector<f64>,
    /// Largest constraint violation at `x`. For an infeasible problem this is
    /// the violation left at the point where infeasibility was proven.
    pub max_violation: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// KKT residuals of a candidate point.
///
/// `stationarity` is scaled by `1 + max(|Qx|, |c|)`; the others are absolute.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// KKT residuals for `x` with explicit multipliers (sign convention as in
/// [`QpSolution`]).
pub fn check_kkt_with_multipliers(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    eq_multipliers: &DVector<f64>,
    ineq_multipliers: &DVector<f64>,
) -> Result<KktReport> {
    let k = qp.dimension();
    crate::model::check_dimension("x", k, x.len())?;
    crate::model::check_dimension("eq_multipliers", qp.eq_rhs.len(), eq_multipliers.len())?;
    crate::model::check_dimension("ineq_multipliers", qp.lower.len(), ineq_multipliers.len())?;

    let qx = &qp.hessian * x;
    let gradient = &qx + &qp.linear;
    let residual = &gradient
        - qp.eq_matrix.transpose() * eq_multipliers
        - qp.ineq_matrix.transpose() * ineq_multipliers;
    let scale = 1.0 + qx.amax().max(qp.linear.amax());
    let stationarity = residual.amax() / scale;

    let primal = qp.max_violation(x);

    let cx = &qp.ineq_matrix * x;
    let mut dual: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..cx.len() {
        let lam = ineq_multipliers[i];
        if lam > 0.0 {
            if qp.lower[i].is_finite() {
                complementarity = complementarity.max(lam * (cx[i] - qp.lower[i]).abs());
            } else {
                dual = dual.max(lam);
            }
        } else if lam < 0.0 {
            if qp.upper[i].is_finite() {
                complementarity = complementarity.max(-lam * (qp.upper[i] - cx[i]).abs());
            } else {
                dual = dual.max(-lam);
            }
        }
    }
    Ok(KktReport {
        stationarity,
        primal,
        dual,
        complementarity,
    })
}

/// KKT residuals for `x` alone. Multipliers are estimated by least squares
/// over the constraints that are active at `x` (within `1e-7` relative).
pub fn check_kkt(qp: &QuadraticProgram, x: &DVector<f64>) -> Result<KktReport> {
    qp.validate()?;
    crate::model::check_dimension("x", qp.dimension(), x.len())?;
    let p = qp.eq_rhs.len();
    let cx = &qp.ineq_matrix * x;
    let near = |value: f64, bound: f64| {
        bound.is_finite() && (value - bound).abs() <= 1e-7 * (1.0 + bound.abs())
    };
    let active: Vec<usize> = (0..cx.len())
        .filter(|&i| near(cx[i], qp.lower[i]) || near(cx[i], qp.upper[i]))
        .collect();

    let k = qp.dimension();
    let cols = p + active.len();
    let mut basis = DMatrix::zeros(k, cols);
    for i in 0..p {
        basis.set_column(i, &qp.eq_matrix.row(i).transpose());
    }
    for (slot, &i) in active.iter().enumerate() {
        basis.set_column(p + slot, &qp.ineq_matrix.row(i).transpose());
    }
    let gradient = &qp.hessian * x + &qp.linear;
    let coeffs = if cols == 0 {
        DVector::zeros(0)
    } else {
        basis
            .clone()
            .svd(true, true)
            .solve(&gradient, 1e-12)
            .map_err(|e| Error::MalformedQp(e.to_string()))?
    };

    let eq = coeffs.rows(0, p).into_owned();
    let mut ineq = DVector::zeros(cx.len());
    let mut dual: f64 = 0.0;
    for (slot, &i) in active.iter().enumerate() {
        let lam = coeffs[p + slot];
        let at_lower = near(cx[i], qp.lower[i]);
        let at_upper = near(cx[i], qp.upper[i]);
        match (at_lower, at_upper) {
            (true, false) => dual = dual.max(-lam),
            (false, true) => dual = dual.max(lam),
            _ => {}
        }
        ineq[i] = lam;
    }
    let mut report = check_kkt_with_multipliers(qp, x, &eq, &ineq)?;
    report.dual = report.dual.max(dual);
    Ok(report)
}

/// Solves `qp`. Malformed input and indefinite `Q` are errors; infeasibility
/// and iteration exhaustion are reported through [`QpSolution::status`].
pub fn solve(qp: &QuadraticProgram, tolerance: f64, max_iterations: usize) -> Result<QpSolution> {
    qp.validate()?;
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance", "must be positive"));
    }
    let p = qp.eq_rhs.len();
    let q = qp.lower.len();

    // Translate to the one-sided form n'x >= b (inequalities) and n'x = b.
    let mut equalities: Vec<Constraint> = Vec::new();
    let mut inequalities: Vec<Constraint> = Vec::new();
    let mut trivially_violated: f64 = 0.0;
    for i in 0..p {
        let normal = qp.eq_matrix.row(i).transpose();
        if normal.amax() == 0.0 {
            trivially_violated = trivially_violated.max(qp.eq_rhs[i].abs());
            continue;
        }
        equalities.push(Constraint {
            normal,
            rhs: qp.eq_rhs[i],
            origin: Origin::Equality(i),
        });
    }
    for i in 0..q {
        let row = qp.ineq_matrix.row(i).transpose();
        let (lo, hi) = (qp.lower[i], qp.upper[i]);
        if row.amax() == 0.0 {
            trivially_violated = trivially_violated.max(lo.max(-hi).max(0.0));
            continue;
        }
        if lo == hi {
            equalities.push(Constraint {
                normal: row,
                rhs: lo,
                origin: Origin::Fixed(i),
            });
            continue;
        }
        if lo.is_finite() {
            inequalities.push(Constraint {
                normal: row.clone(),
                rhs: lo,
                origin: Origin::Lower(i),
            });
        }
        if hi.is_finite() {
            inequalities.push(Constraint {
                normal: -row,
                rhs: -hi,
                origin: Origin::Upper(i),
            });
        }
    }

    let hessian = 0.5 * (&qp.hessian + qp.hessian.transpose());
    let run = |hessian: &DMatrix<f64>, linear: &DVector<f64>| -> Result<DualRun> {
        let mut solver = DualActiveSet::new(factorize(hessian)?, linear, max_iterations);
        let outcome = if trivially_violated > tolerance {
            Outcome::Infeasible
        } else {
            solver.run(&equalities, &inequalities, tolerance)
        };
        let mut eq_multipliers = DVector::zeros(p);
        let mut ineq_multipliers = DVector::zeros(q);
        for (&id, &u) in solver.active.iter().zip(&solver.u) {
            let origin = if id < equalities.len() {
                equalities[id].origin
            } else {
                inequalities[id - equalities.len()].origin
            };
            match origin {
                Origin::Equality(i) => eq_multipliers[i] = u,
                Origin::Fixed(i) | Origin::Lower(i) => ineq_multipliers[i] += u,
                Origin::Upper(i) => ineq_multipliers[i] -= u,
            }
        }
        Ok(DualRun {
            outcome,
            x: solver.x,
            eq_multipliers,
            ineq_multipliers,
            iterations: solver.iterations,
        })
    };

    let (mut result, mut iterations) = (None::<DualRun>, 0);
    match proximal_weight(&hessian) {
        None => {
            let r = run(&hessian, &qp.linear)?;
            iterations = r.iterations;
            result = Some(r);
        }
        Some(rho) => {
            // Proximal point iterations: each subproblem adds rho/2 |x - center|^2,
            // which is strictly convex, and the centers converge to a minimizer of
            // the original problem.
            let shifted = &hessian + DMatrix::identity(hessian.nrows(), hessian.nrows()) * rho;
            let mut center = DVector::zeros(hessian.nrows());
            for _ in 0..PROXIMAL_ITERATIONS {
                let r = run(&shifted, &(&qp.linear - &center * rho))?;
                iterations += r.iterations;
                let done = !matches!(r.outcome, Outcome::Optimal)
                    || check_kkt_with_multipliers(
                        qp,
                        &r.x,
                        &r.eq_multipliers,
                        &r.ineq_multipliers,
                    )?
                    .max()
                        <= PROXIMAL_TARGET * tolerance
                    || (&r.x - &center).amax() <= f64::EPSILON * (1.0 + r.x.amax());
                center = r.x.clone();
                result = Some(r);
                if done {
                    break;
                }
            }
        }
    }
    let DualRun {
        outcome,
        x,
        eq_multipliers,
        ineq_multipliers,
        ..
    } = result.expect("at least one dual run");
    let report = check_kkt_with_multipliers(qp, &x, &eq_multipliers, &ineq_multipliers)?;
    let max_violation = qp.max_violation(&x).max(trivially_violated);
    let status = match outcome {
        Outcome::Optimal if report.max() <= tolerance => QpStatus::Optimal,
        Outcome::Optimal => QpStatus::Inaccurate,
        Outcome::Infeasible => QpStatus::Infeasible,
        Outcome::IterationLimit => QpStatus::IterationLimit,
    };
    Ok(QpSolution {
        x,
        status,
        kkt_residual: report.max(),
        eq_multipliers,
        ineq_multipliers,
        max_violation,
        iterations,
    })
}

/// [`solve`] with [`DEFAULT_TOLERANCE`] and [`DEFAULT_MAX_ITERATIONS`].
pub fn solve_default(qp: &QuadraticProgram) -> Result<QpSolution> {
    solve(qp, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)
}

#[derive(Debug, Clone, Copy)]
enum Origin {
    Equality(usize),
    Fixed(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone)]
struct Constraint {
    normal: DVector<f64>,
    rhs: f64,
    origin: Origin,
}

impl Constraint {
    fn slack(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.rhs
    }
}

enum Outcome {
    Optimal,
    Infeasible,
    IterationLimit,
}

struct DualRun {
    outcome: Outcome,
    x: DVector<f64>,
    eq_multipliers: DVector<f64>,
    ineq_multipliers: DVector<f64>,
    iterations: usize,
}

/// Proximal weight for a Hessian too close to singular for a direct
/// factorization, or `None` when it can be factorized as is.
fn proximal_weight(hessian: &DMatrix<f64>) -> Option<f64> {
    let scale = hessian
        .diagonal()
        .iter()
        .fold(1.0f64, |a, &b| a.max(b.abs()));
    match hessian.clone().cholesky() {
        Some(chol)
            if chol
                .l_dirty()
                .diagonal()
                .iter()
                .all(|&d| d * d > CONDITION_LIMIT * scale) =>
        {
            None
        }
        _ => Some(PROXIMAL_WEIGHT * scale),
    }
}

struct Factor {
    /// Lower Cholesky factor of the (possibly ridged) Hessian.
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `L^{-T}`; the columns are rotated as constraints enter and leave.
    j: DMatrix<f64>,
}

fn factorize(hessian: &DMatrix<f64>) -> Result<Factor> {
    let k = hessian.nrows();
    let chol = hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::MalformedQp("Hessian is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::MalformedQp("singular Cholesky factor".into()))?;
    Ok(Factor {
        chol,
        j: l_inv.transpose(),
    })
}

struct DualActiveSet {
    k: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    x: DVector<f64>,
    /// Constraint ids in the working set (equalities first, then inequalities
    /// offset by the number of equalities).
    active: Vec<usize>,
    u: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl DualActiveSet {
    fn new(factor: Factor, linear: &DVector<f64>, max_iterations: usize) -> Self {
        let k = linear.len();
        let x = -factor.chol.solve(linear);
        Self {
            k,
            j: factor.j,
            r: DMatrix::zeros(k, k),
            r_norm: 1.0,
            x,
            active: Vec::new(),
            u: Vec::new(),
            iterations: 0,
            max_iterations,
        }
    }

    fn iq(&self) -> usize {
        self.active.len()
    }

    /// Step direction data for constraint normal `n`: returns `(d, z, r)` with
    /// `d = J'n`, `z` the primal direction and `r` the change of the active
    /// multipliers per unit step.
    fn directions(&self, normal: &DVector<f64>) -> (DVector<f64>, DVector<f64>, Vec<f64>) {
        let iq = self.iq();
        let d = self.j.transpose() * normal;
        let mut z = DVector::zeros(self.k);
        for col in iq..self.k {
            z.axpy(d[col], &self.j.column(col), 1.0);
        }
        let mut r = vec![0.0; iq];
        for i in (0..iq).rev() {
            let tail: f64 = (i + 1..iq).map(|c| self.r[(i, c)] * r[c]).sum();
            r[i] = (d[i] - tail) / self.r[(i, i)];
        }
        (d, z, r)
    }

    /// True when `normal` has no component outside the span of the working set.
    fn is_dependent(&self, d: &DVector<f64>) -> bool {
        let iq = self.iq();
        let outside: f64 = d.rows(iq, self.k - iq).norm_squared();
        outside <= 1e-14 * d.norm_squared()
    }

    fn add_constraint(&mut self, id: usize, u: f64, mut d: DVector<f64>) -> bool {
        let k = self.k;
        let iq = self.iq();
        let mut col = k;
        while col > iq + 1 {
            col -= 1;
            let (mut cc, mut ss) = (d[col - 1], d[col]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[col] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[col - 1] = -h;
            } else {
                d[col - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for row in 0..k {
                let t1 = self.j[(row, col - 1)];
                let t2 = self.j[(row, col)];
                let rotated = t1 * cc + t2 * ss;
                self.j[(row, col - 1)] = rotated;
                self.j[(row, col)] = xny * (t1 + rotated) - t2;
            }
        }
        self.active.push(id);
        self.u.push(u);
        for row in 0..=iq {
            self.r[(row, iq)] = d[row];
        }
        if d[iq].abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    fn delete_constraint(&mut self, position: usize) {
        let k = self.k;
        self.active.remove(position);
        self.u.remove(position);
        let iq = self.iq();
        for c in position..iq {
            for row in 0..k {
                self.r[(row, c)] = self.r[(row, c + 1)];
            }
        }
        for row in 0..k {
            self.r[(row, iq)] = 0.0;
        }
        for c in position..iq {
            let (mut cc, mut ss) = (self.r[(c, c)], self.r[(c + 1, c)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(c + 1, c)] = 0.0;
            if cc < 0.0 {
                self.r[(c, c)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(c, c)] = h;
            }
            let xny = ss / (1.0 + cc);
            for c2 in c + 1..iq {
                let t1 = self.r[(c, c2)];
                let t2 = self.r[(c + 1, c2)];
                let rotated = t1 * cc + t2 * ss;
                self.r[(c, c2)] = rotated;
                self.r[(c + 1, c2)] = xny * (t1 + rotated) - t2;
            }
            for row in 0..k {
                let t1 = self.j[(row, c)];
                let t2 = self.j[(row, c + 1)];
                let rotated = t1 * cc + t2 * ss;
                self.j[(row, c)] = rotated;
                self.j[(row, c + 1)] = xny * (rotated + t1) - t2;
            }
        }
    }

    fn run(
        &mut self,
        equalities: &[Constraint],
        inequalities: &[Constraint],
        tolerance: f64,
    ) -> Outcome {
        let neq = equalities.len();

        for (id, c) in equalities.iter().enumerate() {
            let (d, z, r) = self.directions(&c.normal);
            let gap = c.rhs - c.normal.dot(&self.x);
            if self.is_dependent(&d) {
                // Redundant rows are skipped; inconsistent ones make the problem infeasible.
                if gap.abs() <= tolerance * (1.0 + c.rhs.abs()) {
                    continue;
                }
                return Outcome::Infeasible;
            }
            let t = gap / z.dot(&c.normal);
            self.x.axpy(t, &z, 1.0);
            for (u, ri) in self.u.iter_mut().zip(&r) {
                *u -= t * ri;
            }
            if !self.add_constraint(id, t, d) {
                let last = self.iq() - 1;
                self.delete_constraint(last);
            }
        }

        let mut excluded = vec![false; inequalities.len()];
        loop {
            // Most violated inequality outside the working set.
            let mut worst: Option<(usize, f64)> = None;
            for (i, c) in inequalities.iter().enumerate() {
                if excluded[i] || self.active.contains(&(neq + i)) {
                    continue;
                }
                let s = c.slack(&self.x);
                let threshold = 1e-11 * (1.0 + c.rhs.abs() + c.normal.amax() * self.x.amax());
                if s < -threshold && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((i, s));
                }
            }
            let Some((ip, mut slack)) = worst else {
                return Outcome::Optimal;
            };
            let constraint = &inequalities[ip];
            let mut u_new = 0.0;

            loop {
                self.iterations += 1;
                if self.iterations > self.max_iterations {
                    return Outcome::IterationLimit;
                }
                let (d, z, r) = self.directions(&constraint.normal);

                // Largest dual step before an active inequality multiplier hits zero.
                let mut partial = f64::INFINITY;
                let mut blocking = None;
                for (pos, (&id, &ri)) in self.active.iter().zip(&r).enumerate() {
                    if id >= neq && ri > 0.0 {
                        let ratio = self.u[pos] / ri;
                        if ratio < partial {
                            partial = ratio;
                            blocking = Some(pos);
                        }
                    }
                }
                let full = if self.is_dependent(&d) {
                    f64::INFINITY
                } else {
                    -slack / z.dot(&constraint.normal)
                };
                let step = partial.min(full);
                if step.is_infinite() {
                    return Outcome::Infeasible;
                }

                for (u, ri) in self.u.iter_mut().zip(&r) {
                    *u -= step * ri;
                }
                u_new += step;

                if full.is_infinite() {
                    // Pure dual step: drop the blocking constraint and retry.
                    self.delete_constraint(blocking.expect("finite partial step has a blocker"));
                    continue;
                }

                self.x.axpy(step, &z, 1.0);
                if full <= partial {
                    if !self.add_constraint(neq + ip, u_new, d) {
                        let last = self.iq() - 1;
                        self.delete_constraint(last);
                        excluded[ip] = true;
                    }
                    break;
                }
                self.delete_constraint(blocking.expect("partial step has a blocker"));
                slack = constraint.slack(&self.x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unconstrained_minimum_at_origin() {
        let qp = QuadraticProgram::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3));
        let sol = solve_default(&qp).unwrap();
        assert!(sol.is_optimal());
        assert_eq!(sol.x, DVector::zeros(3));
    }

    #[test]
    fn active_box_bound() {
        // (x - 2)^2 = x^2 - 4x + 4
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), v(&[-4.0]))
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), v(&[0.0]), v(&[1.0]));
        let sol = solve_default(&qp).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert!(sol.ineq_multipliers[0] < 0.0);
    }

    #[test]
    fn symmetric_equality() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]));
        let sol = solve_default(&qp).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.x, v(&[0.5, 0.5]), epsilon = 1e-12);
        let report = check_kkt(&qp, &sol.x).unwrap();
        assert!(report.max() <= 1e-10, "{report:?}");
        let perturbed = v(&[0.6, 0.5]);
        assert!(check_kkt(&qp, &perturbed).unwrap().max() > 1e-3);
    }

    #[test]
    fn infeasible_box_and_equality() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[3.0]))
            .with_inequalities(DMatrix::identity(2, 2), v(&[0.0, 0.0]), v(&[1.0, 1.0]));
        let sol = solve_default(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!(sol.max_violation > 0.5);
    }

    #[test]
    fn zero_row_outside_bounds_is_infeasible() {
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::zeros(1, 1), v(&[1.0]), v(&[2.0]));
        assert_eq!(solve_default(&qp).unwrap().status, QpStatus::Infeasible);
        let ok = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::zeros(1, 1), v(&[0.0]), v(&[0.0]));
        assert!(solve_default(&ok).unwrap().is_optimal());
    }

    #[test]
    fn semidefinite_hessian() {
        // Second coordinate has no curvature but is boxed.
        let qp = QuadraticProgram::new(DMatrix::from_diagonal(&v(&[2.0, 0.0])), v(&[-2.0, 0.0]))
            .with_inequalities(
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                v(&[-1.0]),
                v(&[1.0]),
            );
        let sol = solve_default(&qp).unwrap();
        assert!(sol.is_optimal(), "{sol:?}");
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn malformed_inputs_are_errors() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(solve_default(&qp), Err(Error::MalformedQp(_))));
        let indefinite =
            QuadraticProgram::new(DMatrix::from_diagonal(&v(&[1.0, -1.0])), DVector::zeros(2));
        assert!(matches!(
            solve_default(&indefinite),
            Err(Error::MalformedQp(_))
        ));
        let crossed = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::identity(1, 1), v(&[1.0]), v(&[0.0]));
        assert!(matches!(
            solve_default(&crossed),
            Err(Error::MalformedQp(_))
        ));
        let asym = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
        );
        assert!(matches!(solve_default(&asym), Err(Error::MalformedQp(_))));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
                v(&[1.0, 2.0]),
            );
        let sol = solve_default(&qp).unwrap();
        assert!(sol.is_optimal(), "{sol:?}");
        assert_abs_diff_eq!(sol.x, v(&[0.5, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn iteration_limit_is_reported() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), v(&[-5.0, -5.0]))
            .with_inequalities(DMatrix::identity(2, 2), v(&[-1.0, -1.0]), v(&[1.0, 1.0]));
        let sol = solve(&qp, 1e-8, 1).unwrap();
        assert_eq!(sol.status, QpStatus::IterationLimit);
    }
}
