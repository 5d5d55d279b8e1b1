//! Robot geometry and the joint-to-muscle length map.
//!
//! A [`RobotModel`] is a serial chain: `links[0]` is the fixed base and joint
//! `j` connects `links[j]` (parent) to `links[j + 1]` (child). Each link frame
//! has its x axis along the link; joint `j` sits at the distal end of its parent,
//! `(links[j].length, 0, 0)` in the parent frame, and rotates the child about
//! `joints[j].axis` (expressed in the parent frame).
//!
//! Muscles are straight segments between consecutive via points. Muscle length
//! is the sum of the segment lengths plus a constant rest offset.

use nalgebra::{DMatrix, DVector, Isometry3, Point3, Rotation3, Translation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::{JointVector, MuscleJacobian, MuscleVector};

/// Central-difference step for [`MuscleModel::muscle_jacobian`], in radians.
pub const FD_STEP: f64 = 1e-5;

/// Anything that maps joint angles to muscle lengths and knows what torque it
/// takes to hold a posture.
///
/// The Jacobian is always obtained numerically from `muscle_lengths`, so a new
/// geometry only needs the length map.
pub trait MuscleModel: Sync {
    fn joint_count(&self) -> usize;
    fn muscle_count(&self) -> usize;
    /// `(lower, upper)` angle limits of joint `j`.
    fn joint_limits(&self, joint: usize) -> (f64, f64);
    /// Muscle lengths `l = h(theta)`. Errors if `theta` has the wrong length
    /// or leaves the joint limits.
    fn muscle_lengths(&self, theta: &JointVector) -> Result<MuscleVector>;
    /// Joint torque the muscles must exert to hold `theta` statically.
    fn holding_torque(&self, theta: &JointVector) -> Result<JointVector>;

    /// Muscle Jacobian by central differences with step [`FD_STEP`].
    fn muscle_jacobian(&self, theta: &JointVector) -> Result<MuscleJacobian> {
        check_dimension("theta", self.joint_count(), theta.len())?;
        for (j, &angle) in theta.iter().enumerate() {
            let (lower, upper) = self.joint_limits(j);
            if !(angle - FD_STEP >= lower && angle + FD_STEP <= upper) {
                return Err(Error::NearLimit {
                    joint: j,
                    angle,
                    step: FD_STEP,
                });
            }
        }
        let mut jac = DMatrix::zeros(self.muscle_count(), self.joint_count());
        let mut probe = theta.clone();
        for j in 0..self.joint_count() {
            probe[j] = theta[j] + FD_STEP;
            let plus = self.muscle_lengths(&probe)?;
            probe[j] = theta[j] - FD_STEP;
            let minus = self.muscle_lengths(&probe)?;
            probe[j] = theta[j];
            jac.set_column(j, &((plus - minus) / (2.0 * FD_STEP)));
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "muscle Jacobian has non-finite entries".into(),
            ));
        }
        Ok(jac)
    }

    /// Fails unless every angle lies within its joint limits.
    fn check_posture(&self, theta: &JointVector) -> Result<()> {
        check_dimension("theta", self.joint_count(), theta.len())?;
        for (j, &angle) in theta.iter().enumerate() {
            let (lower, upper) = self.joint_limits(j);
            if !(angle >= lower && angle <= upper) {
                return Err(Error::OutOfRange {
                    joint: j,
                    angle,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_dimension(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    /// Meters from the link origin to the next joint, along local x.
    pub length: f64,
    /// Kilograms.
    pub mass: f64,
    /// Center of mass position along local x, meters.
    pub com_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Rotation axis in the parent link frame (normalized on construction).
    pub axis: Vector3<f64>,
    pub limits: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViaPoint {
    pub link: usize,
    /// Position in the link frame, meters.
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusclePath {
    pub name: String,
    pub via_points: Vec<ViaPoint>,
    pub rest_length_offset: f64,
}

impl MusclePath {
    /// Joints spanned by this muscle (the joints between its first and last link).
    pub fn spanned_joints(&self) -> std::ops::Range<usize> {
        let first = self.via_points.first().map_or(0, |v| v.link);
        let last = self.via_points.last().map_or(0, |v| v.link);
        first..last
    }
}

/// Serial-chain arm with via-point muscle routing.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    links: Vec<Link>,
    joints: Vec<Joint>,
    muscles: Vec<MusclePath>,
    gravity: Vector3<f64>,
}

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

impl RobotModel {
    /// Builds a model and checks its invariants. `links` must hold one more
    /// entry than `joints` (the base link comes first).
    pub fn new(
        name: impl Into<String>,
        links: Vec<Link>,
        mut joints: Vec<Joint>,
        muscles: Vec<MusclePath>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidModel("at least one joint is required".into()));
        }
        if muscles.is_empty() {
            return Err(Error::InvalidModel(
                "at least one muscle is required".into(),
            ));
        }
        if links.len() != joints.len() + 1 {
            return Err(Error::InvalidModel(format!(
                "{} joints need {} links (base first), found {}",
                joints.len(),
                joints.len() + 1,
                links.len()
            )));
        }
        for (i, link) in links.iter().enumerate() {
            if !(link.length > 0.0 && link.length.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "links[{i}].length must be strictly positive, got {}",
                    link.length
                )));
            }
            if !(link.mass > 0.0 && link.mass.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "links[{i}].mass must be strictly positive, got {}",
                    link.mass
                )));
            }
            if !link.com_offset.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "links[{i}].com_offset is not finite"
                )));
            }
        }
        for (j, joint) in joints.iter_mut().enumerate() {
            let norm = joint.axis.norm();
            if !(norm > 1e-12 && norm.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "joints[{j}].axis has zero length"
                )));
            }
            joint.axis /= norm;
            let (lower, upper) = joint.limits;
            if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "joints[{j}].limits must satisfy lower < upper, got [{lower}, {upper}]"
                )));
            }
        }
        for (i, muscle) in muscles.iter().enumerate() {
            let vias = &muscle.via_points;
            if vias.len() < 2 {
                return Err(Error::InvalidModel(format!(
                    "muscles[{i}] needs at least 2 via points, found {}",
                    vias.len()
                )));
            }
            for (k, via) in vias.iter().enumerate() {
                if via.link >= links.len() {
                    return Err(Error::InvalidModel(format!(
                        "muscles[{i}].via_points[{k}] references missing link {}",
                        via.link
                    )));
                }
                if via.offset.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "muscles[{i}].via_points[{k}].offset is not finite"
                    )));
                }
            }
            if vias.windows(2).any(|w| w[1].link < w[0].link) {
                return Err(Error::InvalidModel(format!(
                    "muscles[{i}] via point link indices must be non-decreasing"
                )));
            }
            if vias[0].link == vias[vias.len() - 1].link {
                return Err(Error::InvalidModel(format!(
                    "muscles[{i}] starts and ends on link {} and spans no joint",
                    vias[0].link
                )));
            }
            if !muscle.rest_length_offset.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "muscles[{i}].rest_length_offset is not finite"
                )));
            }
        }
        if gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidModel("gravity is not finite".into()));
        }
        Ok(Self {
            name: name.into(),
            links,
            joints,
            muscles,
            gravity,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn muscles(&self) -> &[MusclePath] {
        &self.muscles
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    /// World pose of every link frame (base first) at `theta`.
    ///
    /// Does not check joint limits, only the dimension.
    pub fn link_frames(&self, theta: &JointVector) -> Result<Vec<Isometry3<f64>>> {
        check_dimension("theta", self.joints.len(), theta.len())?;
        let mut frames = Vec::with_capacity(self.links.len());
        let mut frame = Isometry3::identity();
        frames.push(frame);
        for (j, joint) in self.joints.iter().enumerate() {
            let pivot = Translation3::new(self.links[j].length, 0.0, 0.0);
            let rotation = Rotation3::from_axis_angle(&Unit::new_unchecked(joint.axis), theta[j]);
            frame *= Isometry3::from_parts(pivot, rotation.into());
            frames.push(frame);
        }
        Ok(frames)
    }

    /// World position of joint `j`'s pivot and its axis in world coordinates.
    pub(crate) fn joint_pivots(
        &self,
        frames: &[Isometry3<f64>],
    ) -> Vec<(Point3<f64>, Vector3<f64>)> {
        self.joints
            .iter()
            .enumerate()
            .map(|(j, joint)| {
                let child = &frames[j + 1];
                (child.translation.vector.into(), child.rotation * joint.axis)
            })
            .collect()
    }

    fn lengths_at(&self, frames: &[Isometry3<f64>]) -> MuscleVector {
        DVector::from_iterator(
            self.muscles.len(),
            self.muscles.iter().map(|muscle| {
                let path: f64 = muscle
                    .via_points
                    .windows(2)
                    .map(|w| {
                        let a = frames[w[0].link] * Point3::from(w[0].offset);
                        let b = frames[w[1].link] * Point3::from(w[1].offset);
                        (b - a).norm()
                    })
                    .sum();
                path + muscle.rest_length_offset
            }),
        )
    }
}

impl MuscleModel for RobotModel {
    fn joint_count(&self) -> usize {
        self.joints.len()
    }

    fn muscle_count(&self) -> usize {
        self.muscles.len()
    }

    fn joint_limits(&self, joint: usize) -> (f64, f64) {
        self.joints[joint].limits
    }

    fn muscle_lengths(&self, theta: &JointVector) -> Result<MuscleVector> {
        self.check_posture(theta)?;
        let frames = self.link_frames(theta)?;
        let lengths = self.lengths_at(&frames);
        if let Some(i) = lengths.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::InvalidModel(format!(
                "muscle {i} ({}) has non-positive length {}",
                self.muscles[i].name, lengths[i]
            )));
        }
        Ok(lengths)
    }

    fn holding_torque(&self, theta: &JointVector) -> Result<JointVector> {
        crate::statics::gravity_torque(self, theta)
    }
}

/// Idealized pulley rig: every muscle wraps a pulley of fixed radius on each
/// joint, so lengths are affine in the joint angles, `l = l0 + M theta`, and
/// the Jacobian is the constant matrix `M`.
///
/// The holding torque is a constant load (zero unless set).
#[derive(Debug, Clone, PartialEq)]
pub struct PulleyModel {
    base_lengths: MuscleVector,
    moment_arms: DMatrix<f64>,
    limits: Vec<(f64, f64)>,
    load: JointVector,
}

impl PulleyModel {
    pub fn new(
        base_lengths: MuscleVector,
        moment_arms: DMatrix<f64>,
        limits: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let (m, n) = moment_arms.shape();
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel(
                "pulley model needs at least one joint and one muscle".into(),
            ));
        }
        check_dimension("base_lengths", m, base_lengths.len())?;
        check_dimension("limits", n, limits.len())?;
        if let Some((j, _)) = limits.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
            return Err(Error::InvalidModel(format!(
                "joint {j} limits are not increasing"
            )));
        }
        if moment_arms
            .iter()
            .chain(base_lengths.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidModel(
                "pulley model has non-finite entries".into(),
            ));
        }
        Ok(Self {
            base_lengths,
            load: DVector::zeros(n),
            moment_arms,
            limits,
        })
    }

    /// Replaces the constant holding torque.
    pub fn with_load(mut self, load: JointVector) -> Result<Self> {
        check_dimension("load", self.moment_arms.ncols(), load.len())?;
        self.load = load;
        Ok(self)
    }

    pub fn moment_arms(&self) -> &DMatrix<f64> {
        &self.moment_arms
    }
}

impl MuscleModel for PulleyModel {
    fn joint_count(&self) -> usize {
        self.moment_arms.ncols()
    }

    fn muscle_count(&self) -> usize {
        self.moment_arms.nrows()
    }

    fn joint_limits(&self, joint: usize) -> (f64, f64) {
        self.limits[joint]
    }

    fn muscle_lengths(&self, theta: &JointVector) -> Result<MuscleVector> {
        self.check_posture(theta)?;
        Ok(&self.base_lengths + &self.moment_arms * theta)
    }

    fn holding_torque(&self, theta: &JointVector) -> Result<JointVector> {
        self.check_posture(theta)?;
        Ok(self.load.clone())
    }
}

/// Free function form of [`MuscleModel::muscle_lengths`].
pub fn muscle_lengths<M: MuscleModel + ?Sized>(
    model: &M,
    theta: &JointVector,
) -> Result<MuscleVector> {
    model.muscle_lengths(theta)
}

/// Free function form of [`MuscleModel::muscle_jacobian`].
pub fn muscle_jacobian<M: MuscleModel + ?Sized>(
    model: &M,
    theta: &JointVector,
) -> Result<MuscleJacobian> {
    model.muscle_jacobian(theta)
}

/// Bundled planar two-joint arm (shoulder pitch, elbow pitch) with five
/// muscles: shoulder flexor/extensor, elbow flexor/extensor and a biarticular
/// flexor. It is a stand-in geometry, not a measured robot.
pub const REFERENCE_ARM_TOML: &str = include_str!("../data/reference_arm.toml");

/// Swing-down scenario for the reference arm.
pub const REFERENCE_SCENARIO_TOML: &str = include_str!("../data/reference_scenario.toml");

/// Parses [`REFERENCE_ARM_TOML`].
pub fn reference_arm() -> RobotModel {
    crate::scenario::parse_model(
        REFERENCE_ARM_TOML,
        std::path::Path::new("reference_arm.toml"),
    )
    .expect("bundled reference arm is valid")
}
