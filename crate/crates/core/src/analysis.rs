//! Moment arms along a motion direction, the speed index and muscle roles.
//!
//! For a motion direction `v`, the signed moment arm of muscle `i` is
//! `r[i] = (G v)[i] / |v|`: how many meters the muscle lengthens per radian of
//! motion. Lengthening muscles (`r > 0`) resist the motion and are
//! antagonists; shortening ones (`r < 0`) drive it and are agonists. Dividing
//! by each muscle's speed limit gives the speed index `q`: the larger it is,
//! the sooner that muscle saturates.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{check_dimension, MuscleModel};
use crate::{JointVector, MuscleJacobian, MuscleVector};

/// Moment arms with magnitude at or below this (meters) are neutral.
pub const CLASSIFICATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MuscleRole {
    Agonist,
    Antagonist,
    Neutral,
}

impl fmt::Display for MuscleRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MuscleRole::Agonist => "agonist",
            MuscleRole::Antagonist => "antagonist",
            MuscleRole::Neutral => "neutral",
        })
    }
}

/// `r = G direction / |direction|`.
pub fn moment_arms(jacobian: &MuscleJacobian, direction: &JointVector) -> Result<MuscleVector> {
    check_dimension("direction", jacobian.ncols(), direction.len())?;
    let norm = direction.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroDirection);
    }
    // Normalize first so that scaling the direction cannot change the result.
    let unit = direction / norm;
    Ok(jacobian * unit)
}

pub fn classify(moment_arms: &MuscleVector) -> Vec<MuscleRole> {
    moment_arms
        .iter()
        .map(|&r| {
            if r > CLASSIFICATION_TOLERANCE {
                MuscleRole::Antagonist
            } else if r < -CLASSIFICATION_TOLERANCE {
                MuscleRole::Agonist
            } else {
                MuscleRole::Neutral
            }
        })
        .collect()
}

/// `q = r / limits`, elementwise.
pub fn speed_index(moment_arms: &MuscleVector, limits: &MuscleVector) -> Result<MuscleVector> {
    check_dimension("limits", moment_arms.len(), limits.len())?;
    if let Some(i) = limits.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::invalid(
            format!("l_dot_limit[{i}]"),
            format!("must be strictly positive, got {}", limits[i]),
        ));
    }
    Ok(moment_arms.component_div(limits))
}

/// Moment arms, speed index and roles for a whole motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionAnalysis {
    /// Posture where the Jacobian was evaluated: the midpoint of the motion.
    pub midpoint: JointVector,
    pub moment_arms: MuscleVector,
    pub speed_index: MuscleVector,
    pub roles: Vec<MuscleRole>,
}

/// Evaluates the Jacobian halfway between `start` and `end` and projects it on
/// `end - start`.
pub fn analyze_motion<M: MuscleModel + ?Sized>(
    model: &M,
    start: &JointVector,
    end: &JointVector,
    limits: &MuscleVector,
) -> Result<MotionAnalysis> {
    check_dimension("theta_start", model.joint_count(), start.len())?;
    check_dimension("theta_end", model.joint_count(), end.len())?;
    check_dimension("l_dot_limit", model.muscle_count(), limits.len())?;
    if start == end {
        return Err(Error::invalid("theta_end", "must differ from theta_start"));
    }
    let midpoint = (start + end) / 2.0;
    let jacobian = model.muscle_jacobian(&midpoint)?;
    let r = moment_arms(&jacobian, &(end - start))?;
    let q = speed_index(&r, limits)?;
    Ok(MotionAnalysis {
        midpoint,
        roles: classify(&r),
        moment_arms: r,
        speed_index: q,
    })
}

/// Speed index of the motion `start -> end`, using the Jacobian at the midpoint.
pub fn speed_index_for_motion<M: MuscleModel + ?Sized>(
    model: &M,
    start: &JointVector,
    end: &JointVector,
    limits: &MuscleVector,
) -> Result<MuscleVector> {
    analyze_motion(model, start, end, limits).map(|a| a.speed_index)
}

/// Muscle indices sorted by descending `q`; ties keep ascending index order.
pub fn speed_order(q: &MuscleVector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| {
        q[b].partial_cmp(&q[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PulleyModel;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn one_dof_pair() {
        let g = DMatrix::from_row_slice(2, 1, &[0.02, -0.02]);
        let r = moment_arms(&g, &v(&[1.0])).unwrap();
        assert_eq!(r, v(&[0.02, -0.02]));
        assert_eq!(
            classify(&r),
            vec![MuscleRole::Antagonist, MuscleRole::Agonist]
        );
        let scaled = moment_arms(&g, &v(&[7.5])).unwrap();
        assert_eq!(scaled, r);
    }

    #[test]
    fn zero_direction_is_an_error() {
        let g = DMatrix::from_row_slice(2, 1, &[0.02, -0.02]);
        assert!(matches!(
            moment_arms(&g, &v(&[0.0])),
            Err(Error::ZeroDirection)
        ));
    }

    #[test]
    fn neutral_when_zero() {
        assert_eq!(classify(&v(&[0.0, 0.0])), vec![MuscleRole::Neutral; 2]);
        assert_eq!(classify(&v(&[5e-10])), vec![MuscleRole::Neutral]);
    }

    #[test]
    fn speed_index_examples() {
        let q = speed_index(&v(&[0.02, -0.02]), &v(&[0.30, 0.30])).unwrap();
        assert_abs_diff_eq!(
            q,
            v(&[0.066_666_666_666_666_67, -0.066_666_666_666_666_67]),
            epsilon = 1e-15
        );

        let q = speed_index(&v(&[0.02, 0.02]), &v(&[0.30, 0.15])).unwrap();
        assert_abs_diff_eq!(q[1], 0.133_333_333_333_333_33, epsilon = 1e-15);
        assert_eq!(speed_order(&q), vec![1, 0]);

        assert!(speed_index(&v(&[0.02]), &v(&[0.0])).is_err());
        assert!(speed_index(&v(&[0.02]), &v(&[-0.3])).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(speed_order(&v(&[0.1, 0.3, 0.1, 0.3])), vec![1, 3, 0, 2]);
    }

    #[test]
    fn motion_requires_distinct_endpoints() {
        let model = PulleyModel::new(
            v(&[0.3]),
            DMatrix::from_element(1, 1, 0.02),
            vec![(-2.0, 2.0)],
        )
        .unwrap();
        let a = v(&[0.5]);
        assert!(speed_index_for_motion(&model, &a, &a, &v(&[0.3])).is_err());
        let q = speed_index_for_motion(&model, &a, &v(&[-0.5]), &v(&[0.3])).unwrap();
        // Moving toward negative angles shortens a positive-arm muscle.
        assert_abs_diff_eq!(q[0], -0.02 / 0.3, epsilon = 1e-10);
    }

    #[test]
    fn reference_swing_flexors_resist() {
        let scenario = crate::scenario::reference_scenario();
        let a = analyze_motion(
            &scenario.model,
            &scenario.theta_start,
            &scenario.theta_end,
            &scenario.l_dot_limit,
        )
        .unwrap();
        use MuscleRole::{Agonist, Antagonist};
        assert_eq!(
            a.roles,
            vec![Antagonist, Agonist, Antagonist, Agonist, Antagonist]
        );
        // Sorting by q puts every antagonist ahead of every agonist.
        let order = speed_order(&a.speed_index);
        assert_eq!(order[0], 4);
        let first_agonist = order.iter().position(|&i| a.roles[i] == Agonist).unwrap();
        assert!(order[first_agonist..]
            .iter()
            .all(|&i| a.roles[i] != Antagonist));
    }
}
