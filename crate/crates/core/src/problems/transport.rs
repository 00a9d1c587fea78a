//! Heterogeneous multi-robot collective transport.
//!
//! Up to `K` robots, each with a frame, motor, battery and optional sensor,
//! push a circular object. Each robot has a one-component `slot_k` module
//! that marks it as part of the team; the objective maximizes `−Σ slot_k`,
//! which minimizes team size and with it the exponentially growing
//! interference between robots. Weights and pushes share one unit (kg).

use serde::{Deserialize, Serialize};

use super::{check_param, require_features, ProblemError};
use crate::catalog::{DesignSpace, FeatureMatrix};
use crate::expr::{feat, sel, Constraint, DesignSpec, FeatureExpr, Objective, Sense};

const FRAME_FEATURES: [&str; 2] = ["weight", "area"];
const MOTOR_FEATURES: [&str; 4] = ["push", "weight", "power", "area"];
const BATTERY_FEATURES: [&str; 3] = ["weight", "power", "area"];
const SENSOR_FEATURES: [&str; 4] = ["coverage", "weight", "power", "area"];

/// Per-robot module kinds, in design-vector order within a robot.
pub const ROBOT_MODULES: [&str; 5] = ["slot", "frame", "motor", "battery", "sensor"];

/// How the sensing requirement is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coverage {
    /// The team's summed sensor coverage meets the threshold.
    #[default]
    Team,
    /// Every active robot's own coverage meets the threshold.
    PerRobot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportParams {
    pub object_weight: f64,
    pub object_radius: f64,
    pub min_frame_radius: f64,
    pub coverage_threshold: f64,
    pub coverage: Coverage,
    /// Caps the team size below the encirclement bound.
    pub team_cap: Option<usize>,
    /// Adds `slot_k >= slot_{k+1}`.
    pub symmetry_breaking: bool,
}

impl Default for TransportParams {
    fn default() -> Self {
        Self {
            object_weight: 10.0,
            object_radius: 0.5,
            min_frame_radius: 0.15,
            coverage_threshold: 0.5,
            coverage: Coverage::Team,
            team_cap: None,
            symmetry_breaking: true,
        }
    }
}

impl TransportParams {
    pub const KEYS: [&'static str; 6] = [
        "weight",
        "object_radius",
        "min_frame_radius",
        "coverage_threshold",
        "team_cap",
        "symmetry_breaking",
    ];

    /// Overrides one parameter by name (`weight` is the object weight).
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ProblemError> {
        match key {
            "weight" | "object_weight" => self.object_weight = value,
            "object_radius" => self.object_radius = value,
            "min_frame_radius" => self.min_frame_radius = value,
            "coverage_threshold" => self.coverage_threshold = value,
            "team_cap" => {
                check_param(key, value >= 1.0 && value.fract() == 0.0, "must be a positive integer")?;
                self.team_cap = Some(value as usize);
            }
            "symmetry_breaking" => self.symmetry_breaking = value != 0.0,
            _ => return Err(ProblemError::UnknownParam(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        check_param(
            "weight",
            self.object_weight.is_finite() && self.object_weight >= 0.0,
            "must be non-negative",
        )?;
        check_param(
            "coverage_threshold",
            (0.0..=1.0).contains(&self.coverage_threshold),
            "must lie in [0, 1]",
        )?;
        check_param("team_cap", self.team_cap != Some(0), "must be positive")?;
        Ok(())
    }

    /// Team size bound: the encirclement bound, lowered to `team_cap`.
    pub fn team_size(&self) -> Result<usize, ProblemError> {
        let k = max_team_size(self.object_radius, self.min_frame_radius)?;
        let k = self.team_cap.map_or(k, |cap| cap.min(k));
        if k == 0 {
            return Err(ProblemError::Premise("the object admits no robot around it".into()));
        }
        Ok(k)
    }
}

/// Robots of the smallest frame that fit around the object:
/// `⌊π (R_object + R_frame) / R_frame⌋`.
pub fn max_team_size(object_radius: f64, min_frame_radius: f64) -> Result<usize, ProblemError> {
    check_param(
        "object_radius",
        object_radius.is_finite() && object_radius >= 0.0,
        "must be non-negative",
    )?;
    check_param(
        "min_frame_radius",
        min_frame_radius.is_finite() && min_frame_radius > 0.0,
        "must be positive",
    )?;
    let k = (std::f64::consts::PI * (object_radius + min_frame_radius) / min_frame_radius).floor();
    Ok(k as usize)
}

/// The four shared catalogs every robot draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportCatalogs {
    pub frame: FeatureMatrix,
    pub motor: FeatureMatrix,
    pub battery: FeatureMatrix,
    pub sensor: FeatureMatrix,
}

impl TransportCatalogs {
    /// Reads the catalogs from a space holding modules `frame`, `motor`,
    /// `battery` and `sensor`.
    pub fn from_space(space: &DesignSpace) -> Result<Self, ProblemError> {
        for m in space.modules() {
            if !["frame", "motor", "battery", "sensor"].contains(&m.module_id()) {
                return Err(ProblemError::UnexpectedModule(m.module_id().to_string()));
            }
        }
        let get = |id: &str| super::module(space, id).cloned();
        Ok(Self {
            frame: get("frame")?,
            motor: get("motor")?,
            battery: get("battery")?,
            sensor: get("sensor")?,
        })
    }
}

fn replica(m: &FeatureMatrix, id: String, optional: bool) -> Result<FeatureMatrix, ProblemError> {
    let columns = (0..m.len())
        .map(|j| (m.component_names()[j].clone(), m.column(j)))
        .collect();
    Ok(FeatureMatrix::new(id, m.features().to_vec(), columns)?.with_optional(optional))
}

fn robot_module(kind: &str, k: usize) -> String {
    format!("{kind}_{k}")
}

fn all(m: &FeatureMatrix) -> Vec<String> {
    m.component_names().to_vec()
}

/// Builds the team problem over `K` replicated robots.
pub fn build_transport_spec(c: &TransportCatalogs, p: &TransportParams) -> Result<DesignSpec, ProblemError> {
    p.validate()?;
    require_features(&c.frame, &FRAME_FEATURES)?;
    require_features(&c.motor, &MOTOR_FEATURES)?;
    require_features(&c.battery, &BATTERY_FEATURES)?;
    require_features(&c.sensor, &SENSOR_FEATURES)?;
    let k_max = p.team_size()?;
    let slot = FeatureMatrix::new("slot", vec!["active".into()], vec![("on".into(), vec![1.0])])?;
    let mut modules = Vec::with_capacity(5 * k_max);
    for k in 1..=k_max {
        modules.push(replica(&slot, robot_module("slot", k), true)?);
        modules.push(replica(&c.frame, robot_module("frame", k), true)?);
        modules.push(replica(&c.motor, robot_module("motor", k), true)?);
        modules.push(replica(&c.battery, robot_module("battery", k), true)?);
        modules.push(replica(&c.sensor, robot_module("sensor", k), true)?);
    }
    let space = DesignSpace::new(modules)?;

    let on = |k: usize| sel(&robot_module("slot", k), &["on"]);
    let weight = |k: usize| {
        FeatureExpr::sum(["frame", "motor", "battery", "sensor"].map(|m| feat(&robot_module(m, k), "weight")))
    };
    let push = |k: usize| feat(&robot_module("motor", k), "push");

    let mut spec = DesignSpec::new(space).maximize(Objective::new("team_size", -FeatureExpr::sum((1..=k_max).map(on))));
    spec = spec.subject_to(Constraint::le(
        "team_push",
        FeatureExpr::sum((1..=k_max).map(|k| weight(k) - push(k))),
        -p.object_weight,
    ));
    if p.coverage == Coverage::Team {
        spec = spec.subject_to(Constraint::le(
            "coverage",
            -FeatureExpr::sum((1..=k_max).map(|k| feat(&robot_module("sensor", k), "coverage"))),
            -p.coverage_threshold,
        ));
    }
    for k in 1..=k_max {
        for (kind, m) in [("frame", &c.frame), ("motor", &c.motor), ("battery", &c.battery)] {
            spec = spec.subject_to(
                Constraint::new(
                    format!("slot_{kind}_{k}"),
                    on(k) - sel(&robot_module(kind, k), &all(m)),
                    Sense::Eq,
                    0.0,
                )
                .implicit(),
            );
        }
        spec = spec.subject_to(
            Constraint::le(
                format!("slot_sensor_{k}"),
                sel(&robot_module("sensor", k), &all(&c.sensor)) - on(k),
                0.0,
            )
            .implicit(),
        );
        spec = spec.subject_to(Constraint::le(format!("self_push_{k}"), weight(k) - push(k), 0.0));
        if p.coverage == Coverage::PerRobot {
            spec = spec.subject_to(Constraint::le(
                format!("coverage_{k}"),
                on(k).scaled(p.coverage_threshold) - feat(&robot_module("sensor", k), "coverage"),
                0.0,
            ));
        }
        spec = spec.subject_to(
            Constraint::le(
                format!("power_{k}"),
                feat(&robot_module("motor", k), "power") + feat(&robot_module("sensor", k), "power")
                    - feat(&robot_module("battery", k), "power"),
                0.0,
            )
            .implicit(),
        );
        spec = spec.subject_to(
            Constraint::le(
                format!("area_{k}"),
                feat(&robot_module("motor", k), "area")
                    + feat(&robot_module("sensor", k), "area")
                    + feat(&robot_module("battery", k), "area")
                    - feat(&robot_module("frame", k), "area"),
                0.0,
            )
            .implicit(),
        );
        if p.symmetry_breaking && k < k_max {
            spec = spec.subject_to(Constraint::le(format!("symmetry_{k}"), on(k + 1) - on(k), 0.0).implicit());
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// One active robot of a transport design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotSummary {
    pub robot: usize,
    pub frame: String,
    pub motor: String,
    pub battery: String,
    pub sensor: Option<String>,
    /// Motor push minus own weight.
    pub push_margin: f64,
    pub coverage: f64,
}

/// Active robots of a design over a space built by [`build_transport_spec`].
pub fn team_summary(space: &DesignSpace, choices: &[Option<usize>]) -> Result<Vec<RobotSummary>, ProblemError> {
    let mut out = Vec::new();
    for k in 1.. {
        let Some(s) = space.module_position(&robot_module("slot", k)) else {
            break;
        };
        if choices[s].is_none() {
            continue;
        }
        let pick = |kind: &str| -> Result<Option<(usize, usize)>, ProblemError> {
            let i = space
                .module_position(&robot_module(kind, k))
                .ok_or_else(|| ProblemError::MissingModule(robot_module(kind, k)))?;
            Ok(choices[i].map(|j| (i, j)))
        };
        let name = |at: Option<(usize, usize)>| at.map(|(i, j)| space.modules()[i].component_names()[j].clone());
        let value = |at: Option<(usize, usize)>, f: &str| -> Result<f64, ProblemError> {
            Ok(match at {
                Some((i, j)) => space.modules()[i].row(f)?[j],
                None => 0.0,
            })
        };
        let (fa, ma, ba, sa) = (pick("frame")?, pick("motor")?, pick("battery")?, pick("sensor")?);
        let (frame, motor, battery, sensor) = (name(fa), name(ma), name(ba), name(sa));
        let weight = value(fa, "weight")? + value(ma, "weight")? + value(ba, "weight")? + value(sa, "weight")?;
        let incomplete = || ProblemError::Domain(format!("robot {k} is active without a full configuration"));
        out.push(RobotSummary {
            robot: k,
            frame: frame.ok_or_else(incomplete)?,
            motor: motor.ok_or_else(incomplete)?,
            battery: battery.ok_or_else(incomplete)?,
            sensor,
            push_margin: value(ma, "push")? - weight,
            coverage: value(sa, "coverage")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn team_size_bound_examples() {
        assert_eq!(max_team_size(0.0, 0.1).unwrap(), 3);
        assert_eq!(max_team_size(0.5, 0.1).unwrap(), 18);
        assert!(max_team_size(0.5, 0.0).is_err());
        assert!(max_team_size(-1.0, 0.1).is_err());
    }

    #[test]
    fn team_cap_lowers_the_bound() {
        let p = TransportParams {
            object_radius: 0.5,
            min_frame_radius: 0.1,
            team_cap: Some(4),
            ..TransportParams::default()
        };
        assert_eq!(p.team_size().unwrap(), 4);
    }

    #[test]
    fn params_accept_weight_alias() {
        let mut p = TransportParams::default();
        p.set("weight", 80.0).unwrap();
        assert_eq!(p.object_weight, 80.0);
        assert!(p.set("team_cap", 0.5).is_err());
        assert!(p.set("speed", 1.0).is_err());
    }
}
