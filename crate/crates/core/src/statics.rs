//! Gravity holding torque and static tension feasibility under a muscle mask.
//!
//! Tensions are non-negative pulls. With `G` the muscle Jacobian, a tension
//! vector `f` produces the joint torque `-G' f`; holding a posture requires
//! `-G' (m ⊗ f) = tau_nec` where `m` is the mask of tension-bearing muscles.

use std::fmt;

use nalgebra::{DMatrix, DVector, Point3};

use crate::error::{Error, Result};
use crate::model::{check_dimension, MuscleModel, RobotModel};
use crate::qp::{self, QpStatus, QuadraticProgram};
use crate::{JointVector, MuscleJacobian, MuscleVector};

/// Muscle tensions in newtons.
pub type TensionVector = MuscleVector;

/// Per-muscle flags: `true` means the muscle is managed (velocity-constrained
/// and tension-bearing), `false` means it is inhibited or pre-elongated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn all_active(muscles: usize) -> Self {
        Mask(vec![true; muscles])
    }

    pub fn all_masked(muscles: usize) -> Self {
        Mask(vec![false; muscles])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Mask(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, muscle: usize) -> bool {
        self.0[muscle]
    }

    pub fn set(&mut self, muscle: usize, active: bool) {
        self.0[muscle] = active;
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    /// Indices of masked (inactive) muscles.
    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| !self.0[i]).collect()
    }

    /// `true` when every muscle active here is also active in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }

    /// The mask as 0/1 weights.
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.0.len(),
            self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }),
        )
    }

    pub(crate) fn check_len(&self, muscles: usize) -> Result<()> {
        if self.0.len() == muscles {
            Ok(())
        } else {
            Err(Error::MaskLength {
                expected: muscles,
                actual: self.0.len(),
            })
        }
    }
}

impl From<Vec<bool>> for Mask {
    fn from(bits: Vec<bool>) -> Self {
        Mask(bits)
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Torque the muscles must exert at each joint to hold `theta` against gravity.
///
/// For joint `j` with world axis `a` and pivot `p`, every link distal to the
/// joint contributes `-a · ((com - p) × m g)`.
pub fn gravity_torque(model: &RobotModel, theta: &JointVector) -> Result<JointVector> {
    model.check_posture(theta)?;
    let frames = model.link_frames(theta)?;
    let pivots = model.joint_pivots(&frames);
    let weights: Vec<(Point3<f64>, nalgebra::Vector3<f64>)> = model
        .links()
        .iter()
        .zip(&frames)
        .map(|(link, frame)| {
            (
                frame * Point3::new(link.com_offset, 0.0, 0.0),
                model.gravity() * link.mass,
            )
        })
        .collect();
    Ok(DVector::from_iterator(
        pivots.len(),
        pivots.iter().enumerate().map(|(j, (pivot, axis))| {
            -weights[j + 1..]
                .iter()
                .map(|(com, weight)| axis.dot(&(com - pivot).cross(weight)))
                .sum::<f64>()
        }),
    ))
}

/// Minimum-effort tensions holding `tau` with only the active muscles of
/// `mask`, each within `[f_min, f_max]`:
///
/// ```text
///     minimize    (m ⊗ f)' W1 (m ⊗ f)
///     subject to  tau = -G' (m ⊗ f)
///                 m ⊗ f_min <= m ⊗ f <= m ⊗ f_max
/// ```
///
/// Returns `None` when no such tensions exist. Masked entries are reported as 0.
pub fn feasible_tensions(
    jacobian: &MuscleJacobian,
    tau: &JointVector,
    mask: &Mask,
    f_min: f64,
    f_max: f64,
    w1: &DMatrix<f64>,
) -> Result<Option<TensionVector>> {
    let (m, n) = jacobian.shape();
    check_dimension("tau", n, tau.len())?;
    mask.check_len(m)?;
    if w1.shape() != (m, m) {
        return Err(Error::Dimension {
            what: "W1",
            expected: m,
            actual: w1.nrows(),
        });
    }
    if !(f_min <= f_max) || !f_min.is_finite() || !f_max.is_finite() {
        return Err(Error::invalid(
            "f_min/f_max",
            format!("need f_min <= f_max, got [{f_min}, {f_max}]"),
        ));
    }
    let selector = DMatrix::from_diagonal(&mask.weights());
    let hessian = 2.0 * &selector * w1 * &selector;
    let problem = QuadraticProgram::new(hessian, DVector::zeros(m))
        .with_equalities(-jacobian.transpose() * &selector, tau.clone())
        .with_inequalities(
            selector.clone(),
            mask.weights() * f_min,
            mask.weights() * f_max,
        );
    let solution = qp::solve_default(&problem)?;
    match solution.status {
        QpStatus::Optimal => {
            let tensions = solution.x.component_mul(&mask.weights());
            Ok(Some(tensions))
        }
        QpStatus::Infeasible => Ok(None),
        status => Err(Error::QpFailed {
            status,
            residual: solution.kkt_residual,
        }),
    }
}

/// [`feasible_tensions`] with the Jacobian and holding torque of `model` at `theta`.
pub fn feasibility<M: MuscleModel + ?Sized>(
    model: &M,
    theta: &JointVector,
    mask: &Mask,
    f_min: f64,
    f_max: f64,
    w1: &DMatrix<f64>,
) -> Result<Option<TensionVector>> {
    mask.check_len(model.muscle_count())?;
    let jacobian = model.muscle_jacobian(theta)?;
    let tau = model.holding_torque(theta)?;
    feasible_tensions(&jacobian, &tau, mask, f_min, f_max, w1)
}

/// Torque produced by `tensions` through `jacobian`: `-G' f`.
pub fn muscle_torque(jacobian: &MuscleJacobian, tensions: &TensionVector) -> JointVector {
    -jacobian.transpose() * tensions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Joint, Link, MusclePath, PulleyModel, ViaPoint};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// Horizontal link at theta = 0; positive angles raise it.
    fn pendulum(muscles: Vec<MusclePath>) -> RobotModel {
        RobotModel::new(
            "pendulum",
            vec![
                Link {
                    name: "base".into(),
                    length: 0.1,
                    mass: 1.0,
                    com_offset: 0.0,
                },
                Link {
                    name: "link".into(),
                    length: 1.0,
                    mass: 1.0,
                    com_offset: 0.5,
                },
            ],
            vec![Joint {
                name: "pitch".into(),
                axis: Vector3::new(0.0, -1.0, 0.0),
                limits: (-3.0, 3.0),
            }],
            muscles,
            Vector3::new(0.0, 0.0, -9.81),
        )
        .unwrap()
    }

    fn lifter() -> MusclePath {
        // From a base point above the pivot to the middle of the link.
        MusclePath {
            name: "lifter".into(),
            via_points: vec![
                ViaPoint {
                    link: 0,
                    offset: Vector3::new(0.1, 0.0, 0.2),
                },
                ViaPoint {
                    link: 1,
                    offset: Vector3::new(0.3, 0.0, 0.0),
                },
            ],
            rest_length_offset: 0.0,
        }
    }

    fn pair() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.02, -0.02])
    }

    #[test]
    fn horizontal_and_vertical_pendulum() {
        let model = pendulum(vec![lifter()]);
        let tau = gravity_torque(&model, &v(&[0.0])).unwrap();
        assert_abs_diff_eq!(tau[0], 4.905, epsilon = 1e-12);
        let tau = gravity_torque(&model, &v(&[std::f64::consts::FRAC_PI_2])).unwrap();
        assert_abs_diff_eq!(tau[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_lifting_muscle_holds_the_pendulum() {
        // A muscle above the link shortens as the link rises, so its pull
        // produces a raising torque that balances gravity.
        let model = pendulum(vec![lifter()]);
        let theta = v(&[0.2]);
        let f = feasibility(
            &model,
            &theta,
            &Mask::all_active(1),
            0.0,
            1000.0,
            &DMatrix::identity(1, 1),
        )
        .unwrap()
        .expect("holdable");
        assert!(f[0] > 0.0);
        let g = model.muscle_jacobian(&theta).unwrap();
        let tau = gravity_torque(&model, &theta).unwrap();
        assert_abs_diff_eq!(muscle_torque(&g, &f), tau, epsilon = 1e-6);
    }

    #[test]
    fn balanced_pair_sits_at_lower_bound() {
        let f = feasible_tensions(
            &pair(),
            &v(&[0.0]),
            &Mask::all_active(2),
            10.0,
            200.0,
            &DMatrix::identity(2, 2),
        )
        .unwrap()
        .unwrap();
        assert_abs_diff_eq!(f, v(&[10.0, 10.0]), epsilon = 1e-9);
    }

    #[test]
    fn masked_pair_uses_remaining_muscle() {
        let mask = Mask::from_bits(&[0, 1]);
        let f = feasible_tensions(
            &pair(),
            &v(&[0.5]),
            &mask,
            10.0,
            200.0,
            &DMatrix::identity(2, 2),
        )
        .unwrap()
        .unwrap();
        assert_eq!(f[0], 0.0);
        assert_abs_diff_eq!(f[1], 25.0, epsilon = 1e-9);

        let none = feasible_tensions(
            &pair(),
            &v(&[-0.5]),
            &mask,
            10.0,
            200.0,
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn pulley_model_uses_its_load() {
        let model = PulleyModel::new(v(&[0.3, 0.3]), pair(), vec![(-1.0, 1.0)])
            .unwrap()
            .with_load(v(&[0.5]))
            .unwrap();
        let f = feasibility(
            &model,
            &v(&[0.0]),
            &Mask::all_active(2),
            10.0,
            200.0,
            &DMatrix::identity(2, 2),
        )
        .unwrap()
        .unwrap();
        assert_abs_diff_eq!(muscle_torque(&pair(), &f)[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn argument_errors() {
        let w = DMatrix::identity(2, 2);
        assert!(matches!(
            feasible_tensions(&pair(), &v(&[0.0]), &Mask::all_active(3), 10.0, 200.0, &w),
            Err(Error::MaskLength { .. })
        ));
        assert!(
            feasible_tensions(&pair(), &v(&[0.0]), &Mask::all_active(2), 20.0, 10.0, &w).is_err()
        );
        assert!(feasible_tensions(
            &pair(),
            &v(&[0.0, 1.0]),
            &Mask::all_active(2),
            10.0,
            20.0,
            &w
        )
        .is_err());
    }

    #[test]
    fn mask_helpers() {
        let mask = Mask::from_bits(&[1, 0, 1, 0]);
        assert_eq!(mask.masked_indices(), vec![1, 3]);
        assert_eq!(mask.to_string(), "1010");
        assert!(Mask::from_bits(&[1, 0, 0, 0]).is_subset_of(&mask));
        assert!(!Mask::all_active(4).is_subset_of(&mask));
    }
}
