//! Racing drone: pick motors, frame, camera, computer (board plus visual
//! navigation pipeline) and battery to maximize forward top speed.
//!
//! Top speed follows from the force balance at zero forward acceleration:
//!
//! ```text
//! v_max = ( 4(4T)² / (ρ² c_d² L⁴) · ((4T)² / (gM)² − 1) )^(1/4)
//! ```
//!
//! with `T` the per-motor thrust, `L` the frame length and `M = Σ ω_i W_i`
//! the total mass (`ω = 4` for the motors). The exact expression feeds the
//! oracle; lowering uses three conservative surrogates:
//!
//! * speed: with thrust-to-weight at least `r̄`, the bracket is at least
//!   `r̄² − 1`, so `v_max ≥ κ √T / L` with `κ = (64 (r̄² − 1) / (ρ² c_d²))^(1/4)`.
//! * tracking: the fourth power of the frame-rate bound is taken in log
//!   space, the `−1` dropped and `−log Σ gω_iW_i` bounded through Jensen's
//!   inequality by the mean of the per-module logs minus `log n`.
//! * flight time: the total current is bounded by six motor currents, which
//!   holds when camera and computer together draw at most two motors' worth.

use serde::{Deserialize, Serialize};

use super::{check_param, module, require_features, require_positive, ProblemError};
use crate::catalog::DesignSpace;
use crate::expr::{feat, unary, ColumnFn, Constraint, DesignSpec, FeatureExpr, Objective, SurrogateKind};

/// Module identifiers, in design-vector order.
pub const DRONE_MODULES: [&str; 5] = ["motor", "frame", "camera", "computer", "battery"];

const MOTOR_FEATURES: [&str; 6] = ["weight", "voltage", "current", "cost", "thrust", "size"];
const FRAME_FEATURES: [&str; 3] = ["weight", "cost", "length"];
const CAMERA_FEATURES: [&str; 7] = ["weight", "voltage", "current", "cost", "fps", "focal_length", "size"];
const COMPUTER_FEATURES: [&str; 6] = ["weight", "voltage", "current", "cost", "vin_fps", "size"];
const BATTERY_FEATURES: [&str; 6] = ["weight", "voltage", "current", "capacity", "cost", "size"];

/// Physical constants and requirements. Weights in kg, thrust in N, lengths
/// in m, currents in A, battery capacity in Ah, flight time in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneParams {
    pub rho: f64,
    pub c_d: f64,
    pub g: f64,
    /// Minimum thrust-to-weight ratio.
    pub r_bar: f64,
    /// Budget.
    pub b_bar: f64,
    /// Minimum flight time in minutes.
    pub t_bar: f64,
    /// Usable fraction of the battery capacity.
    pub alpha: f64,
    /// Largest feature displacement between frames the tracker handles, px.
    pub delta_u: f64,
    /// Distance of tracked features, m.
    pub d: f64,
    /// Number of motors.
    pub omega_motor: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self {
            rho: 1.2,
            c_d: 1.3,
            g: 9.81,
            r_bar: 2.0,
            b_bar: 1000.0,
            t_bar: 5.0,
            alpha: 0.8,
            delta_u: 30.0,
            d: 5.0,
            omega_motor: 4.0,
        }
    }
}

impl DroneParams {
    pub const KEYS: [&'static str; 10] = [
        "rho",
        "c_d",
        "g",
        "r_bar",
        "b_bar",
        "t_bar",
        "alpha",
        "delta_u",
        "d",
        "omega_motor",
    ];

    /// Overrides one parameter by name.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ProblemError> {
        let slot = match key {
            "rho" => &mut self.rho,
            "c_d" => &mut self.c_d,
            "g" => &mut self.g,
            "r_bar" => &mut self.r_bar,
            "b_bar" => &mut self.b_bar,
            "t_bar" => &mut self.t_bar,
            "alpha" => &mut self.alpha,
            "delta_u" => &mut self.delta_u,
            "d" => &mut self.d,
            "omega_motor" => &mut self.omega_motor,
            _ => return Err(ProblemError::UnknownParam(key.to_string())),
        };
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        for (name, v) in [
            ("rho", self.rho),
            ("c_d", self.c_d),
            ("g", self.g),
            ("b_bar", self.b_bar),
            ("t_bar", self.t_bar),
            ("delta_u", self.delta_u),
            ("d", self.d),
            ("omega_motor", self.omega_motor),
        ] {
            check_param(name, v.is_finite() && v > 0.0, "must be positive")?;
        }
        check_param("r_bar", self.r_bar.is_finite() && self.r_bar > 1.0, "must exceed 1")?;
        check_param("alpha", self.alpha > 0.0 && self.alpha <= 1.0, "must lie in (0, 1]")?;
        Ok(())
    }

    fn omega(&self, module: &str) -> f64 {
        if module == "motor" {
            self.omega_motor
        } else {
            1.0
        }
    }
}

/// `κ` of the speed surrogate `κ √T / L`.
pub fn speed_kappa(p: &DroneParams) -> f64 {
    (64.0 * (p.r_bar * p.r_bar - 1.0) / (p.rho * p.rho * p.c_d * p.c_d)).powf(0.25)
}

fn weighted_sum(p: &DroneParams, feature: &str, modules: &[&str]) -> FeatureExpr {
    FeatureExpr::sum(modules.iter().map(|m| feat(m, feature).scaled(p.omega(m))))
}

/// `v_max⁴` as an expression; negative when thrust cannot carry the weight.
fn vmax_fourth(p: &DroneParams) -> FeatureExpr {
    let total_thrust_sq = feat("motor", "thrust").scaled(p.omega_motor).powf(2.0);
    let mass = weighted_sum(p, "weight", &DRONE_MODULES);
    let drag = 4.0 / (p.rho * p.rho * p.c_d * p.c_d);
    let lead = total_thrust_sq.clone() * drag / feat("frame", "length").powf(4.0);
    let ratio_sq = total_thrust_sq / mass.powf(2.0) * (1.0 / (p.g * p.g));
    lead * (ratio_sq - 1.0)
}

/// Builds the drone co-design problem over the five drone modules.
pub fn build_drone_spec(space: DesignSpace, p: &DroneParams) -> Result<DesignSpec, ProblemError> {
    p.validate()?;
    for m in space.modules() {
        if !DRONE_MODULES.contains(&m.module_id()) {
            return Err(ProblemError::UnexpectedModule(m.module_id().to_string()));
        }
        if m.is_optional() {
            return Err(ProblemError::Premise(format!(
                "drone module `{}` cannot be optional",
                m.module_id()
            )));
        }
    }
    let motor = module(&space, "motor")?;
    let frame = module(&space, "frame")?;
    let camera = module(&space, "camera")?;
    let computer = module(&space, "computer")?;
    let battery = module(&space, "battery")?;
    require_features(motor, &MOTOR_FEATURES)?;
    require_features(frame, &FRAME_FEATURES)?;
    require_features(camera, &CAMERA_FEATURES)?;
    require_features(computer, &COMPUTER_FEATURES)?;
    require_features(battery, &BATTERY_FEATURES)?;
    require_positive(motor, &["weight", "thrust", "current"])?;
    require_positive(frame, &["weight", "length"])?;
    require_positive(camera, &["weight", "fps", "focal_length"])?;
    require_positive(computer, &["weight"])?;
    require_positive(battery, &["weight", "capacity"])?;

    let max = |row: &[f64]| row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |row: &[f64]| row.iter().copied().fold(f64::INFINITY, f64::min);
    let extra = max(camera.row("current")?) + max(computer.row("current")?);
    let motor_min = min(motor.row("current")?);
    if extra > (6.0 - p.omega_motor) * motor_min {
        return Err(ProblemError::Premise(format!(
            "flight-time surrogate needs camera plus computer current ({extra}) at most {} times the \
             smallest motor current ({motor_min})",
            6.0 - p.omega_motor
        )));
    }

    let hours = p.t_bar / 60.0;
    let g = p.g;
    let n = DRONE_MODULES.len() as f64;
    let jensen = 2.0 / n;
    let om = p.omega_motor;

    let speed_surrogate = feat("motor", "thrust").sqrt() * speed_kappa(p) / feat("frame", "length");
    let objective = Objective::new("v_max", vmax_fourth(p).powf(0.25))
        .with_surrogate(SurrogateKind::SpeedLowerBound, speed_surrogate);

    let cost = weighted_sum(p, "cost", &DRONE_MODULES);
    let budget = Constraint::le("budget", cost.clone(), p.b_bar);

    let current = weighted_sum(p, "current", &["motor", "camera", "computer"]);
    let flight_time = Constraint::le(
        "flight_time",
        current / feat("battery", "capacity").scaled(p.alpha),
        1.0 / hours,
    )
    .with_surrogate(
        SurrogateKind::FlightTimeUpperBound,
        unary(
            "motor",
            ColumnFn::new("ln(6*current)", |c| (6.0 * c.get("current")).ln()),
        ) + unary(
            "battery",
            ColumnFn::new(format!("-ln({}*capacity)", p.alpha), {
                let alpha = p.alpha;
                move |c| -(alpha * c.get("capacity")).ln()
            }),
        ),
        -hours.ln(),
    );

    let thrust = Constraint::le(
        "thrust_ratio",
        weighted_sum(p, "weight", &DRONE_MODULES).scaled(p.r_bar * g) - feat("motor", "thrust").scaled(om),
        0.0,
    )
    .implicit();

    let power = Constraint::le(
        "power",
        unary("motor", ColumnFn::product_of(&["current", "voltage"])).scaled(om)
            + unary("camera", ColumnFn::product_of(&["current", "voltage"]))
            + unary("computer", ColumnFn::product_of(&["current", "voltage"]))
            - unary("battery", ColumnFn::product_of(&["current", "voltage"])),
        0.0,
    )
    .implicit();

    let sizes = ["motor", "camera", "computer", "battery"]
        .map(|m| Constraint::le(format!("size_{m}"), feat(m, "size") - feat("frame", "length"), 0.0).implicit());

    let delta = p.delta_u * p.d;
    let tracking_exact = feat("camera", "focal_length").powf(4.0) * vmax_fourth(p) * (1.0 / delta.powi(4))
        - feat("camera", "fps").powf(4.0);
    let log_weight = move |c: &crate::expr::Column<'_>, omega: f64| (g * omega * c.get("weight")).ln();
    let tracking_surrogate = unary(
        "motor",
        ColumnFn::new("4ln(4T)-(2/n)ln(g*4W)", move |c| {
            4.0 * (om * c.get("thrust")).ln() - jensen * log_weight(c, om)
        }),
    ) + unary(
        "frame",
        ColumnFn::new("-4ln(L)-(2/n)ln(gW)", move |c| {
            -4.0 * c.get("length").ln() - jensen * log_weight(c, 1.0)
        }),
    ) + unary(
        "camera",
        ColumnFn::new("4ln(f)-4ln(fps)-(2/n)ln(gW)", move |c| {
            4.0 * c.get("focal_length").ln() - 4.0 * c.get("fps").ln() - jensen * log_weight(c, 1.0)
        }),
    ) + unary(
        "computer",
        ColumnFn::new("-(2/n)ln(gW)", move |c| -jensen * log_weight(c, 1.0)),
    ) + unary(
        "battery",
        ColumnFn::new("-(2/n)ln(gW)", move |c| -jensen * log_weight(c, 1.0)),
    );
    let beta = (4.0 / (delta.powi(4) * p.rho * p.rho * p.c_d * p.c_d)).ln();
    let tracking = Constraint::le("tracking", tracking_exact, 0.0)
        .implicit()
        .with_surrogate(SurrogateKind::Ic4UpperBound, tracking_surrogate, 2.0 * n.ln() - beta);

    let vin_rate = Constraint::le("vin_rate", feat("camera", "fps") - feat("computer", "vin_fps"), 0.0).implicit();

    let mut spec = DesignSpec::new(space)
        .maximize(objective)
        .subject_to(budget)
        .subject_to(flight_time)
        .subject_to(thrust)
        .subject_to(power);
    for s in sizes {
        spec = spec.subject_to(s);
    }
    spec = spec.subject_to(tracking).subject_to(vin_rate);
    spec.cost = Some(cost);
    spec.validate()?;
    Ok(spec)
}

/// Exact top speed of a design (choices in [`DRONE_MODULES`] order of the space).
pub fn exact_vmax(space: &DesignSpace, choices: &[Option<usize>], p: &DroneParams) -> Result<f64, ProblemError> {
    let value = |m: &str, f: &str| -> Result<f64, ProblemError> {
        let i = space
            .module_position(m)
            .ok_or_else(|| ProblemError::MissingModule(m.to_string()))?;
        let matrix = &space.modules()[i];
        let j = choices
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| ProblemError::Domain(format!("module `{m}` has no selected component")))?;
        let row = matrix.row(f)?;
        Ok(row[j])
    };
    let thrust = p.omega_motor * value("motor", "thrust")?;
    let mut mass = 0.0;
    for m in DRONE_MODULES {
        mass += p.omega(m) * value(m, "weight")?;
    }
    let length = value("frame", "length")?;
    let weight_force = p.g * mass;
    let bracket = (thrust / weight_force).powi(2) - 1.0;
    if bracket < 0.0 {
        return Err(ProblemError::Domain(format!(
            "total thrust {thrust} N cannot carry weight {weight_force} N"
        )));
    }
    let lead = 4.0 * thrust * thrust / (p.rho * p.rho * p.c_d * p.c_d * length.powi(4));
    Ok((lead * bracket).powf(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::FeatureMatrix;
    use crate::expr::{evaluate_choices, Evaluator};

    fn single(id: &str, features: &[&str], values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(
            id,
            features.iter().map(|f| (*f).into()).collect(),
            vec![(format!("{id}1"), values.to_vec())],
        )
        .unwrap()
    }

    /// One component per module: thrust 5 N, frame 0.22 m, total mass 1 kg.
    fn single_space() -> DesignSpace {
        DesignSpace::new(vec![
            single("motor", &MOTOR_FEATURES, &[0.05, 11.1, 2.0, 20.0, 5.0, 0.03]),
            single("frame", &FRAME_FEATURES, &[0.3, 60.0, 0.22]),
            single("camera", &CAMERA_FEATURES, &[0.05, 5.0, 0.5, 40.0, 120.0, 300.0, 0.04]),
            single("computer", &COMPUTER_FEATURES, &[0.2, 5.0, 2.0, 200.0, 150.0, 0.1]),
            single("battery", &BATTERY_FEATURES, &[0.25, 11.1, 50.0, 1.5, 30.0, 0.12]),
        ])
        .unwrap()
    }

    #[test]
    fn single_option_catalog_has_five_variables() {
        let spec = build_drone_spec(single_space(), &DroneParams::default()).unwrap();
        assert_eq!(spec.space.total_dim(), 5);
        let report = Evaluator::new(&spec).unwrap().check(&[Some(0); 5]).unwrap();
        assert_eq!(report.checks.len(), 10);
    }

    #[test]
    fn exact_expression_matches_closed_form() {
        let p = DroneParams::default();
        let space = single_space();
        let spec = build_drone_spec(space.clone(), &p).unwrap();
        let choices = [Some(0); 5];
        let expr = evaluate_choices(&space, &spec.objectives[0].expr, &choices).unwrap();
        let direct = exact_vmax(&space, &choices, &p).unwrap();
        assert!((expr - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn surrogate_is_exact_at_the_ratio_bound() {
        // Choose r_bar equal to the design's thrust-to-weight ratio.
        let space = single_space();
        let mut p = DroneParams::default();
        p.r_bar = 4.0 * 5.0 / (p.g * 1.0);
        let spec = build_drone_spec(space.clone(), &p).unwrap();
        let surrogate = &spec.objectives[0].surrogate.as_ref().unwrap().expr;
        let s = evaluate_choices(&space, surrogate, &[Some(0); 5]).unwrap();
        let v = exact_vmax(&space, &[Some(0); 5], &p).unwrap();
        assert!((s - v).abs() <= 1e-12 * v);
    }

    #[test]
    fn thrust_below_weight_is_a_domain_error() {
        let space = single_space();
        let p = DroneParams {
            omega_motor: 0.1,
            ..DroneParams::default()
        };
        assert!(matches!(
            exact_vmax(&space, &[Some(0); 5], &p),
            Err(ProblemError::Domain(_))
        ));
    }

    #[test]
    fn missing_feature_and_bad_params_are_rejected() {
        let mut modules = single_space().modules().to_vec();
        modules[1] = single("frame", &["weight", "cost"], &[0.3, 60.0]);
        let space = DesignSpace::new(modules).unwrap();
        assert!(matches!(
            build_drone_spec(space, &DroneParams::default()),
            Err(ProblemError::MissingFeature { .. })
        ));
        let p = DroneParams {
            r_bar: 1.0,
            ..DroneParams::default()
        };
        assert!(matches!(
            build_drone_spec(single_space(), &p),
            Err(ProblemError::Param { .. })
        ));
        let mut p = DroneParams::default();
        assert!(p.set("nope", 1.0).is_err());
        p.set("t_bar", 8.0).unwrap();
        assert_eq!(p.t_bar, 8.0);
    }

    #[test]
    fn flight_time_premise_is_checked() {
        let mut modules = single_space().modules().to_vec();
        modules[3] = single("computer", &COMPUTER_FEATURES, &[0.2, 5.0, 9.0, 200.0, 150.0, 0.1]);
        let space = DesignSpace::new(modules).unwrap();
        assert!(matches!(
            build_drone_spec(space, &DroneParams::default()),
            Err(ProblemError::Premise(_))
        ));
    }

    #[test]
    fn kappa_closed_form() {
        let p = DroneParams::default();
        let want = (64.0_f64 * 3.0 / (1.44 * 1.69)).powf(0.25);
        assert!((speed_kappa(&p) - want).abs() < 1e-15);
    }
}
