//! TOML files for robot models and swing scenarios.
//!
//! Model file:
//!
//! ```toml
//! schema_version = 1
//! name = "two-link arm"
//! gravity = [0.0, 0.0, -9.81]        # optional
//!
//! [[links]]                           # base link first
//! name = "base"
//! length = 0.1
//! mass = 1.0
//! com_offset = 0.05
//!
//! [[joints]]
//! name = "shoulder"
//! axis = [0.0, -1.0, 0.0]
//! limits = [-2.5, 1.2]
//!
//! [[muscles]]
//! name = "shoulder flexor"
//! rest_length_offset = 0.0            # optional
//! via_points = [
//!     { link = "base", offset = [0.1, 0.0, 0.05] },
//!     { link = "upper_arm", offset = [0.1, 0.0, 0.03] },
//! ]
//! ```
//!
//! Scenario file (only `model`, `theta_start` and `theta_end` are required):
//!
//! ```toml
//! schema_version = 1
//! model = "arm.toml"                  # relative to this file
//! theta_start = [-0.3, 1.8]
//! theta_end = [-1.5, 0.1]
//! c_threshold = 0.0
//! dt = 0.03
//! epsilon = 0.01
//! max_steps = 1000
//! f_min = 10.0
//! f_max = 200.0
//! alpha = 0.46
//! l_dot_limit = 0.30                  # or one value per muscle
//! strategies = ["Basic", "Method1", "Method2"]
//! output_dir = "out"                  # relative to this file
//! ```
//!
//! Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, Joint, Link, MuscleModel, MusclePath, RobotModel, ViaPoint, DEFAULT_GRAVITY, FD_STEP,
};
use crate::sim::{
    SimConfig, VelocityLimitModel, DEFAULT_ALPHA, DEFAULT_DT, DEFAULT_EPSILON, DEFAULT_L_DOT_LIMIT,
    DEFAULT_MAX_STEPS,
};
use crate::strategy::{Strategy, StrategyConfig, DEFAULT_F_MAX, DEFAULT_F_MIN};
use crate::{JointVector, MuscleVector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default = "schema_version")]
    schema_version: u32,
    name: String,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    links: Vec<LinkEntry>,
    joints: Vec<JointEntry>,
    muscles: Vec<MuscleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntry {
    name: String,
    length: f64,
    mass: f64,
    com_offset: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    name: String,
    axis: [f64; 3],
    limits: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MuscleEntry {
    name: String,
    #[serde(default)]
    rest_length_offset: f64,
    via_points: Vec<ViaEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViaEntry {
    link: String,
    offset: [f64; 3],
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_gravity() -> [f64; 3] {
    DEFAULT_GRAVITY
}

fn check_schema(version: u32, path: &Path) -> Result<()> {
    if version == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unsupported schema_version {version} (expected {SCHEMA_VERSION})"),
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses a model file's contents; `path` is only used in error messages.
pub fn parse_model(text: &str, path: &Path) -> Result<RobotModel> {
    let file: ModelFile = parse_toml(text, path)?;
    check_schema(file.schema_version, path)?;
    let mut link_index = std::collections::HashMap::new();
    for (i, link) in file.links.iter().enumerate() {
        if link_index.insert(link.name.as_str(), i).is_some() {
            return Err(Error::InvalidModel(format!(
                "duplicate link name `{}`",
                link.name
            )));
        }
    }
    let mut muscles = Vec::with_capacity(file.muscles.len());
    for (i, muscle) in file.muscles.iter().enumerate() {
        let mut via_points = Vec::with_capacity(muscle.via_points.len());
        for (k, via) in muscle.via_points.iter().enumerate() {
            let link = *link_index.get(via.link.as_str()).ok_or_else(|| {
                Error::InvalidModel(format!(
                    "muscles[{i}].via_points[{k}] references missing link `{}`",
                    via.link
                ))
            })?;
            via_points.push(ViaPoint {
                link,
                offset: Vector3::from(via.offset),
            });
        }
        muscles.push(MusclePath {
            name: muscle.name.clone(),
            via_points,
            rest_length_offset: muscle.rest_length_offset,
        });
    }
    RobotModel::new(
        file.name,
        file.links
            .into_iter()
            .map(|l| Link {
                name: l.name,
                length: l.length,
                mass: l.mass,
                com_offset: l.com_offset,
            })
            .collect(),
        file.joints
            .into_iter()
            .map(|j| Joint {
                name: j.name,
                axis: Vector3::from(j.axis),
                limits: (j.limits[0], j.limits[1]),
            })
            .collect(),
        muscles,
        Vector3::from(file.gravity),
    )
}

pub fn load_model(path: &Path) -> Result<RobotModel> {
    parse_model(&read(path)?, path)
}

/// Serializes a model in the file format read by [`parse_model`].
pub fn model_to_toml(model: &RobotModel) -> String {
    let links = model.links();
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        name: model.name.clone(),
        gravity: (*model.gravity()).into(),
        links: links
            .iter()
            .map(|l| LinkEntry {
                name: l.name.clone(),
                length: l.length,
                mass: l.mass,
                com_offset: l.com_offset,
            })
            .collect(),
        joints: model
            .joints()
            .iter()
            .map(|j| JointEntry {
                name: j.name.clone(),
                axis: j.axis.into(),
                limits: [j.limits.0, j.limits.1],
            })
            .collect(),
        muscles: model
            .muscles()
            .iter()
            .map(|m| MuscleEntry {
                name: m.name.clone(),
                rest_length_offset: m.rest_length_offset,
                via_points: m
                    .via_points
                    .iter()
                    .map(|v| ViaEntry {
                        link: links[v.link].name.clone(),
                        offset: v.offset.into(),
                    })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("model serializes to TOML")
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "schema_version")]
    schema_version: u32,
    model: PathBuf,
    theta_start: Vec<f64>,
    theta_end: Vec<f64>,
    c_threshold: Option<f64>,
    dt: Option<f64>,
    epsilon: Option<f64>,
    max_steps: Option<usize>,
    f_min: Option<f64>,
    f_max: Option<f64>,
    alpha: Option<f64>,
    l_dot_limit: Option<ScalarOrList>,
    strategies: Option<Vec<String>>,
    output_dir: Option<PathBuf>,
}

/// A swing experiment with every default applied. Paths are already
/// resolved against the scenario file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model_path: PathBuf,
    pub model: RobotModel,
    pub theta_start: JointVector,
    pub theta_end: JointVector,
    pub c_threshold: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub alpha: f64,
    pub l_dot_limit: MuscleVector,
    pub strategies: Vec<Strategy>,
    pub output_dir: PathBuf,
}

impl Scenario {
    /// Checks parameter ranges and dimensions against the model. Call again
    /// after changing fields by hand.
    pub fn validate(&self) -> Result<()> {
        let n = self.model.joint_count();
        let m = self.model.muscle_count();
        model::check_dimension("theta_start", n, self.theta_start.len())?;
        model::check_dimension("theta_end", n, self.theta_end.len())?;
        model::check_dimension("l_dot_limit", m, self.l_dot_limit.len())?;
        for (field, value) in [
            ("dt", self.dt),
            ("epsilon", self.epsilon),
            ("alpha", self.alpha),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(
                    field,
                    format!("must be strictly positive, got {value}"),
                ));
            }
        }
        if !self.c_threshold.is_finite() {
            return Err(Error::invalid("c_threshold", "must be finite"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps", "must be at least 1"));
        }
        if !(self.f_min.is_finite() && self.f_max.is_finite() && self.f_min <= self.f_max) {
            return Err(Error::invalid(
                "f_min",
                format!(
                    "need f_min <= f_max, got f_min = {}, f_max = {}",
                    self.f_min, self.f_max
                ),
            ));
        }
        if let Some(i) = self
            .l_dot_limit
            .iter()
            .position(|&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(Error::invalid(
                format!("l_dot_limit[{i}]"),
                format!("must be strictly positive, got {}", self.l_dot_limit[i]),
            ));
        }
        if self.theta_start == self.theta_end {
            return Err(Error::invalid("theta_end", "must differ from theta_start"));
        }
        for (field, theta) in [
            ("theta_start", &self.theta_start),
            ("theta_end", &self.theta_end),
        ] {
            for (j, &angle) in theta.iter().enumerate() {
                let (lower, upper) = self.model.joint_limits(j);
                if !(angle - FD_STEP >= lower && angle + FD_STEP <= upper) {
                    return Err(Error::invalid(
                        format!("{field}[{j}]"),
                        format!("{angle} must lie inside the joint limits [{lower}, {upper}]"),
                    ));
                }
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid(
                "strategies",
                "must name at least one strategy",
            ));
        }
        Ok(())
    }

    pub fn velocity_limits(&self) -> Result<VelocityLimitModel> {
        VelocityLimitModel::new(self.l_dot_limit.clone(), self.alpha)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut config = SimConfig::new(self.model.joint_count(), self.velocity_limits()?);
        config.dt = self.dt;
        config.epsilon = self.epsilon;
        config.max_steps = self.max_steps;
        Ok(config)
    }

    pub fn strategy_config(&self) -> Result<StrategyConfig> {
        let m = self.model.muscle_count();
        Ok(StrategyConfig {
            c_threshold: self.c_threshold,
            f_min: self.f_min,
            f_max: self.f_max,
            w1: DMatrix::identity(m, m),
            sim: self.sim_config()?,
        })
    }
}

/// Parses a scenario; `path` locates relative paths and names the file in errors.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario> {
    parse_scenario_with(text, path, load_model)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&read(path)?, path)
}

fn parse_scenario_with(
    text: &str,
    path: &Path,
    load: impl FnOnce(&Path) -> Result<RobotModel>,
) -> Result<Scenario> {
    let file: ScenarioFile = parse_toml(text, path)?;
    check_schema(file.schema_version, path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let model_path = base.join(&file.model);
    let model = load(&model_path)?;
    let m = model.muscle_count();
    let l_dot_limit = match file.l_dot_limit {
        None => DVector::from_element(m, DEFAULT_L_DOT_LIMIT),
        Some(ScalarOrList::Scalar(v)) => DVector::from_element(m, v),
        Some(ScalarOrList::List(v)) => DVector::from_vec(v),
    };
    let strategies = match file.strategies {
        None => Strategy::ALL.to_vec(),
        Some(names) => {
            let mut parsed = names
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<Strategy>>>()?;
            parsed.sort();
            parsed.dedup();
            parsed
        }
    };
    let scenario = Scenario {
        model_path,
        model,
        theta_start: DVector::from_vec(file.theta_start),
        theta_end: DVector::from_vec(file.theta_end),
        c_threshold: file.c_threshold.unwrap_or(0.0),
        dt: file.dt.unwrap_or(DEFAULT_DT),
        epsilon: file.epsilon.unwrap_or(DEFAULT_EPSILON),
        max_steps: file.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
        f_min: file.f_min.unwrap_or(DEFAULT_F_MIN),
        f_max: file.f_max.unwrap_or(DEFAULT_F_MAX),
        alpha: file.alpha.unwrap_or(DEFAULT_ALPHA),
        l_dot_limit,
        strategies,
        output_dir: base.join(file.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// The bundled swing-down scenario on [`model::reference_arm`].
pub fn reference_scenario() -> Scenario {
    parse_scenario_with(
        model::REFERENCE_SCENARIO_TOML,
        Path::new("reference_scenario.toml"),
        |_| Ok(model::reference_arm()),
    )
    .expect("bundled reference scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_MODEL: &str = r#"
name = "pendulum"
[[links]]
name = "base"
length = 0.1
mass = 1.0
com_offset = 0.0
[[links]]
name = "arm"
length = 0.5
mass = 1.0
com_offset = 0.25
[[joints]]
name = "shoulder"
axis = [0.0, -1.0, 0.0]
limits = [-2.0, 2.0]
[[muscles]]
name = "lifter"
via_points = [{ link = "base", offset = [0.1, 0.0, 0.1] }, { link = "arm", offset = [0.2, 0.0, 0.0] }]
[[muscles]]
name = "lowerer"
via_points = [{ link = "base", offset = [0.1, 0.0, -0.1] }, { link = "arm", offset = [0.2, 0.0, 0.0] }]
"#;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir =
            std::env::temp_dir().join(format!("musclespeed-scenario-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn minimal_scenario_gets_defaults() {
        let dir = temp_dir("defaults");
        write(&dir, "pendulum.toml", MINIMAL_MODEL);
        let path = write(
            &dir,
            "swing.toml",
            "model = \"pendulum.toml\"\ntheta_start = [0.5]\ntheta_end = [-0.5]\n",
        );
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.c_threshold, 0.0);
        assert_eq!(s.dt, 0.03);
        assert_eq!(s.epsilon, 0.01);
        assert_eq!(s.max_steps, 1000);
        assert_eq!(s.f_min, 10.0);
        assert_eq!(s.f_max, 200.0);
        assert_eq!(s.alpha, 0.46);
        assert_eq!(s.l_dot_limit, DVector::from_element(2, 0.30));
        assert_eq!(s.strategies, Strategy::ALL.to_vec());
        assert_eq!(s.output_dir, dir.join("out"));
        assert_eq!(s.model_path, dir.join("pendulum.toml"));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn scenario_rejections() {
        let dir = temp_dir("reject");
        write(&dir, "pendulum.toml", MINIMAL_MODEL);
        let cases = [
            ("dt = 0.0\n", "dt"),
            ("f_min = 300.0\n", "f_min"),
            ("l_dot_limit = [0.3]\n", "l_dot_limit"),
            ("l_dot_limit = -0.3\n", "l_dot_limit"),
            ("epsilon = 0.0\n", "epsilon"),
            ("strategies = [\"Method3\"]\n", "strategy"),
            ("dtt = 0.03\n", "dtt"),
        ];
        for (extra, needle) in cases {
            let text = format!(
                "model = \"pendulum.toml\"\ntheta_start = [0.5]\ntheta_end = [-0.5]\n{extra}"
            );
            let path = write(&dir, "bad.toml", &text);
            let err = load_scenario(&path).unwrap_err().to_string();
            assert!(err.contains(needle), "{extra}: {err}");
        }
        let path = write(
            &dir,
            "same.toml",
            "model = \"pendulum.toml\"\ntheta_start = [0.5]\ntheta_end = [0.5]\n",
        );
        assert!(load_scenario(&path).is_err());
        let path = write(
            &dir,
            "outside.toml",
            "model = \"pendulum.toml\"\ntheta_start = [0.5]\ntheta_end = [-2.5]\n",
        );
        assert!(load_scenario(&path).is_err());
        let path = write(
            &dir,
            "dims.toml",
            "model = \"pendulum.toml\"\ntheta_start = [0.5, 0.1]\ntheta_end = [-0.5, 0.1]\n",
        );
        assert!(matches!(load_scenario(&path), Err(Error::Dimension { .. })));
        assert!(matches!(
            load_scenario(&dir.join("missing.toml")),
            Err(Error::Io { .. })
        ));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn per_muscle_limits_and_strategy_subset() {
        let dir = temp_dir("subset");
        write(&dir, "pendulum.toml", MINIMAL_MODEL);
        let path = write(
            &dir,
            "swing.toml",
            "model = \"pendulum.toml\"\ntheta_start = [0.5]\ntheta_end = [-0.5]\nl_dot_limit = [0.3, 0.15]\nstrategies = [\"Method1\", \"Basic\"]\n",
        );
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.l_dot_limit, DVector::from_vec(vec![0.3, 0.15]));
        assert_eq!(s.strategies, vec![Strategy::Basic, Strategy::Method1]);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn model_rejections() {
        let path = Path::new("m.toml");
        let no_muscles = MINIMAL_MODEL
            .split("[[muscles]]")
            .next()
            .unwrap()
            .to_string()
            + "muscles = []\n";
        assert!(parse_model(&no_muscles, path).is_err());
        let missing_link = MINIMAL_MODEL.replacen("link = \"arm\"", "link = \"forearm\"", 1);
        let err = parse_model(&missing_link, path).unwrap_err().to_string();
        assert!(err.contains("forearm"), "{err}");
        let massless = MINIMAL_MODEL.replacen("mass = 1.0", "mass = 0.0", 1);
        assert!(parse_model(&massless, path).is_err());
        let typo = MINIMAL_MODEL.replacen("com_offset = 0.0", "com_ofset = 0.0", 1);
        let err = parse_model(&typo, path).unwrap_err().to_string();
        assert!(err.contains("com_ofset"), "{err}");
        let future = format!("schema_version = 2\n{MINIMAL_MODEL}");
        assert!(parse_model(&future, path).is_err());
    }

    #[test]
    fn model_round_trip() {
        let path = Path::new("m.toml");
        for text in [MINIMAL_MODEL, model::REFERENCE_ARM_TOML] {
            let model = parse_model(text, path).unwrap();
            let again = parse_model(&model_to_toml(&model), path).unwrap();
            assert_eq!(model, again);
        }
    }

    #[test]
    fn reference_files_load() {
        let s = reference_scenario();
        assert_eq!(s.model.joint_count(), 2);
        assert_eq!(s.model.muscle_count(), 5);
        let on_disk = load_scenario(
            &Path::new(env!("CARGO_MANIFEST_DIR")).join("data/reference_scenario.toml"),
        )
        .unwrap();
        assert_eq!(on_disk.model, s.model);
        assert_eq!(on_disk.theta_start, s.theta_start);
    }
}
