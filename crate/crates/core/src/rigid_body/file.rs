//! Text schema for model files (TOML), and the built-in presets.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Actuator, BaseAxis, ContactAxes, Frame, Link, PointMass, RobotModel};
use crate::error::{Error, Result};

/// Major.minor schema version written into every model file.
pub const SCHEMA_VERSION: &str = "1.0";

const PRESETS: &[(&str, &str)] = &[
    ("bouncing_ball", include_str!("../../../../models/bouncing_ball.toml")),
    ("compass", include_str!("../../../../models/compass.toml")),
    ("five_link", include_str!("../../../../models/five_link.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Loads a built-in preset by name.
pub fn preset(name: &str) -> Result<RobotModel> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Model(format!("no preset named `{name}`")))?;
    ModelFile::parse(text)?.build()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub attach: f64,
    #[serde(default = "plus_one")]
    pub direction: f64,
    pub mass: f64,
    pub inertia: f64,
    pub com: f64,
    pub length: f64,
}

fn plus_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassSpec {
    pub name: String,
    /// Link name, or `"base"`.
    pub link: String,
    #[serde(default)]
    pub offset: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub name: String,
    pub link: String,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "planar")]
    pub axes: ContactAxes,
}

fn planar() -> ContactAxes {
    ContactAxes::Xz
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub child: String,
    pub torque_limit: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSpec {
    #[serde(default)]
    pub swing_foot: Option<String>,
    #[serde(default)]
    pub hip: Option<String>,
}

/// On-disk model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: String,
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub restitution: f64,
    #[serde(default = "plus_one")]
    pub leg_length: f64,
    #[serde(default)]
    pub min_step: f64,
    #[serde(default)]
    pub base: Vec<BaseAxis>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub point_masses: Vec<PointMassSpec>,
    #[serde(default)]
    pub frames: Vec<FrameSpec>,
    #[serde(default)]
    pub actuators: Vec<ActuatorSpec>,
    /// Signed permutation over all coordinates, row-major.
    pub relabel: Vec<Vec<f64>>,
    /// Optional `[lo, hi]` per coordinate.
    #[serde(default)]
    pub joint_limits: Vec<[f64; 2]>,
    #[serde(default)]
    pub roles: RoleSpec,
}

fn default_gravity() -> f64 {
    9.81
}

/// Rejects files whose schema major version differs from ours.
pub fn check_schema(version: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().map(str::to_owned);
    if major(version) != major(SCHEMA_VERSION) {
        return Err(Error::Schema(version.to_string()));
    }
    Ok(())
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        check_schema(&file.schema_version)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<RobotModel> {
        let link_index = |name: &str| -> Result<usize> {
            self.links
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| Error::Model(format!("unknown link `{name}`")))
        };
        let optional_link = |name: &str| -> Result<Option<usize>> {
            if name == "base" {
                Ok(None)
            } else {
                link_index(name).map(Some)
            }
        };
        let links = self
            .links
            .iter()
            .map(|l| {
                Ok(Link {
                    name: l.name.clone(),
                    parent: l.parent.as_deref().map(link_index).transpose()?,
                    attach: l.attach,
                    direction: l.direction,
                    mass: l.mass,
                    inertia: l.inertia,
                    com: l.com,
                    length: l.length,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let point_masses = self
            .point_masses
            .iter()
            .map(|p| {
                Ok(PointMass { name: p.name.clone(), link: optional_link(&p.link)?, offset: p.offset, mass: p.mass })
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = self
            .frames
            .iter()
            .map(|f| Ok(Frame { name: f.name.clone(), link: optional_link(&f.link)?, offset: f.offset, axes: f.axes }))
            .collect::<Result<Vec<_>>>()?;
        let actuators = self
            .actuators
            .iter()
            .map(|a| {
                Ok(Actuator {
                    name: a.name.clone(),
                    parent: a.parent.as_deref().map(link_index).transpose()?,
                    child: link_index(&a.child)?,
                    torque_limit: a.torque_limit,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = links.len() + self.base.len();
        if self.relabel.len() != n || self.relabel.iter().any(|r| r.len() != n) {
            return Err(Error::Model(format!("relabel matrix must be {n}x{n}")));
        }
        let relabel = DMatrix::from_fn(n, n, |r, c| self.relabel[r][c]);

        let mut model = RobotModel::new(
            self.name.clone(),
            self.gravity,
            self.restitution,
            links,
            self.base.clone(),
            point_masses,
            frames,
            actuators,
            relabel,
        )?;
        model.leg_length = self.leg_length;
        model.min_step = self.min_step;
        if !self.joint_limits.is_empty() {
            model.joint_limits = self.joint_limits.iter().map(|l| (l[0], l[1])).collect();
        }
        model.swing_foot = self.roles.swing_foot.clone();
        model.hip = self.roles.hip.clone();
        model.validate()?;
        Ok(model)
    }
}

impl RobotModel {
    /// Loads a model from a file path, or a preset when `spec` names one.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            return ModelFile::load(path)?.build();
        }
        if preset_names().contains(&spec) {
            return preset(spec);
        }
        Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("model not found: {spec}"))))
    }
}
