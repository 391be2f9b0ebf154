//! Scenario files: a strict JSON schema describing the world, the sensor,
//! and every controller knob for one reproducible run.
//!
//! Every field is optional except `persons`; missing fields take the
//! documented defaults. Unknown keys are rejected outright — a silently
//! ignored typo in a gain name costs an afternoon of bad tuning.

use serde::Deserialize;
use thiserror::Error;

use crate::control::{LostPolicy, PidConfig, ServoConfig};
use crate::geometry::CameraIntrinsics;
use crate::perception::NoiseModel;
use crate::tracker::TrackerConfig;
use crate::world::{Occluder, PersonSpec, Pose2, RobotParams};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invariant violated for `{0}`")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulation step, seconds. Locked to the camera frame rate.
    pub dt: f64,
    /// Total simulated time, seconds.
    pub duration: f64,
    /// Give up if no target is acquired within this many seconds.
    pub max_acquire_seconds: f64,
    pub camera: CameraSection,
    pub robot: RobotSection,
    pub persons: Vec<PersonSection>,
    /// Static walls: (x1, y1, x2, y2, height) per entry.
    pub occluders: Vec<[f64; 5]>,
    pub noise: NoiseSection,
    pub tracker: TrackerSection,
    pub servo: ServoSection,
    pub estimation: EstimationSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dt: 1.0 / 30.0,
            duration: 30.0,
            max_acquire_seconds: 5.0,
            camera: CameraSection::default(),
            robot: RobotSection::default(),
            persons: Vec::new(),
            occluders: Vec::new(),
            noise: NoiseSection::default(),
            tracker: TrackerSection::default(),
            servo: ServoSection::default(),
            estimation: EstimationSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub baseline: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let k = CameraIntrinsics::default();
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            baseline: k.baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSection {
    pub track_width: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub wheel_speed_max: f64,
    pub camera_height: f64,
    /// Starting pose (x, y, theta).
    pub initial_pose: [f64; 3],
}

impl Default for RobotSection {
    fn default() -> Self {
        let p = RobotParams::default();
        Self {
            track_width: p.track_width,
            v_max: p.v_max,
            omega_max: p.omega_max,
            wheel_speed_max: p.wheel_speed_max,
            camera_height: p.camera_height,
            initial_pose: [0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonSection {
    /// (time, x, y) triples, strictly increasing in time.
    pub waypoints: Vec<[f64; 3]>,
    pub head_height: f64,
    pub head_radius: f64,
    pub body_width: f64,
    pub body_height: f64,
}

impl Default for PersonSection {
    fn default() -> Self {
        let p = PersonSpec::default();
        Self {
            waypoints: Vec::new(),
            head_height: p.head_height,
            head_radius: p.head_radius,
            body_width: p.body_width,
            body_height: p.body_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub pixel_sigma: f64,
    pub depth_sigma0: f64,
    pub depth_k: f64,
    pub miss_rate: f64,
    pub occlusion_drop_threshold: f64,
    pub conf_sigma: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            pixel_sigma: n.pixel_sigma,
            depth_sigma0: n.depth_sigma0,
            depth_k: n.depth_k,
            miss_rate: n.miss_rate,
            occlusion_drop_threshold: n.occlusion_drop_threshold,
            conf_sigma: n.conf_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub gate_iou: f64,
    pub blend_pos: f64,
    pub blend_vel: f64,
    pub coast_limit: u32,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        Self {
            gate_iou: t.gate_iou,
            blend_pos: t.blend_pos,
            blend_vel: t.blend_vel,
            coast_limit: t.coast_limit,
        }
    }
}

/// Per-loop PID overrides. Unset fields fall back to that loop's
/// reference gains, so a partial `linear_pid` never inherits angular
/// defaults.
#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PidSection {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub kd: Option<f64>,
    pub i_min: Option<f64>,
    pub i_max: Option<f64>,
    pub out_min: Option<f64>,
    pub out_max: Option<f64>,
    pub deriv_on_measurement: Option<bool>,
}

impl PidSection {
    fn resolve(&self, base: PidConfig) -> PidConfig {
        PidConfig {
            kp: self.kp.unwrap_or(base.kp),
            ki: self.ki.unwrap_or(base.ki),
            kd: self.kd.unwrap_or(base.kd),
            i_min: self.i_min.unwrap_or(base.i_min),
            i_max: self.i_max.unwrap_or(base.i_max),
            out_min: self.out_min.unwrap_or(base.out_min),
            out_max: self.out_max.unwrap_or(base.out_max),
            deriv_on_measurement: self.deriv_on_measurement.unwrap_or(base.deriv_on_measurement),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LostPolicySection {
    Stop,
    HoldLastOmega,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoSection {
    pub angular_pid: PidSection,
    pub linear_pid: PidSection,
    pub d_ref: f64,
    pub bearing_deadband: f64,
    pub distance_deadband: f64,
    pub lost_policy: LostPolicySection,
    pub search_rate: f64,
}

impl Default for ServoSection {
    fn default() -> Self {
        let s = ServoConfig::default();
        Self {
            angular_pid: PidSection::default(),
            linear_pid: PidSection::default(),
            d_ref: s.d_ref,
            bearing_deadband: s.bearing_deadband,
            distance_deadband: s.distance_deadband,
            lost_policy: LostPolicySection::Stop,
            search_rate: s.search_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    /// EWMA smoothing factor in (0, 1].
    pub alpha: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self { alpha: 0.3 }
    }
}

/// Parses and validates scenario JSON.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        let message = inner.to_string();
        if message.starts_with("unknown field") {
            ScenarioError::UnknownKey(path)
        } else {
            ScenarioError::Syntax {
                line: inner.line(),
                column: inner.column(),
                message,
            }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure(ok: bool, field: &str) -> Result<(), ScenarioError> {
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::InvariantViolation(field.to_string()))
    }
}

impl ScenarioConfig {
    /// Checks every documented invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        ensure(self.dt > 0.0 && self.dt.is_finite(), "dt")?;
        ensure(self.duration > 0.0 && self.duration.is_finite(), "duration")?;
        ensure(self.max_acquire_seconds > 0.0, "max_acquire_seconds")?;

        let c = &self.camera;
        ensure(c.fx > 0.0, "camera.fx")?;
        ensure(c.fy > 0.0, "camera.fy")?;
        ensure(c.width > 0.0, "camera.width")?;
        ensure(c.height > 0.0, "camera.height")?;
        ensure(c.baseline > 0.0, "camera.baseline")?;
        ensure(c.cx >= 0.0 && c.cx < c.width, "camera.cx")?;
        ensure(c.cy >= 0.0 && c.cy < c.height, "camera.cy")?;

        let r = &self.robot;
        ensure(r.track_width > 0.0, "robot.track_width")?;
        ensure(r.v_max > 0.0, "robot.v_max")?;
        ensure(r.omega_max > 0.0, "robot.omega_max")?;
        ensure(r.wheel_speed_max > 0.0, "robot.wheel_speed_max")?;
        ensure(r.camera_height > 0.0, "robot.camera_height")?;
        ensure(r.initial_pose.iter().all(|v| v.is_finite()), "robot.initial_pose")?;

        ensure(!self.persons.is_empty(), "persons")?;
        for (i, p) in self.persons.iter().enumerate() {
            ensure(!p.waypoints.is_empty(), &format!("persons[{i}].waypoints"))?;
            ensure(
                p.waypoints.windows(2).all(|w| w[0][0] < w[1][0]),
                &format!("persons[{i}].waypoints"),
            )?;
            ensure(p.head_radius > 0.0, &format!("persons[{i}].head_radius"))?;
            ensure(p.head_height > 0.0, &format!("persons[{i}].head_height"))?;
            ensure(p.body_width >= 0.0, &format!("persons[{i}].body_width"))?;
            ensure(p.body_height >= 0.0, &format!("persons[{i}].body_height"))?;
        }
        for (i, o) in self.occluders.iter().enumerate() {
            ensure(o.iter().all(|v| v.is_finite()), &format!("occluders[{i}]"))?;
            ensure(o[4] >= 0.0, &format!("occluders[{i}].height"))?;
        }

        let n = &self.noise;
        ensure(n.pixel_sigma >= 0.0, "noise.pixel_sigma")?;
        ensure(n.depth_sigma0 >= 0.0, "noise.depth_sigma0")?;
        ensure(n.depth_k >= 0.0, "noise.depth_k")?;
        ensure((0.0..=1.0).contains(&n.miss_rate), "noise.miss_rate")?;
        ensure(
            (0.0..=1.0).contains(&n.occlusion_drop_threshold),
            "noise.occlusion_drop_threshold",
        )?;
        ensure(n.conf_sigma >= 0.0, "noise.conf_sigma")?;

        let t = &self.tracker;
        ensure(t.gate_iou > 0.0 && t.gate_iou < 1.0, "tracker.gate_iou")?;
        ensure(t.blend_pos > 0.0 && t.blend_pos <= 1.0, "tracker.blend_pos")?;
        ensure(t.blend_vel > 0.0 && t.blend_vel <= 1.0, "tracker.blend_vel")?;
        ensure(t.coast_limit >= 1, "tracker.coast_limit")?;

        let s = &self.servo;
        let resolved = [
            (s.angular_pid.resolve(PidConfig::angular_default()), "angular_pid"),
            (s.linear_pid.resolve(PidConfig::linear_default()), "linear_pid"),
        ];
        for (pid, name) in &resolved {
            ensure(pid.kp >= 0.0, &format!("servo.{name}.kp"))?;
            ensure(pid.ki >= 0.0, &format!("servo.{name}.ki"))?;
            ensure(pid.kd >= 0.0, &format!("servo.{name}.kd"))?;
            ensure(pid.i_min <= 0.0 && pid.i_max >= 0.0, &format!("servo.{name}.i_min"))?;
            ensure(pid.out_min < pid.out_max, &format!("servo.{name}.out_min"))?;
        }
        ensure(s.d_ref > 0.0, "servo.d_ref")?;
        ensure(s.bearing_deadband >= 0.0, "servo.bearing_deadband")?;
        ensure(s.distance_deadband >= 0.0, "servo.distance_deadband")?;
        ensure(s.search_rate >= 0.0, "servo.search_rate")?;

        ensure(
            self.estimation.alpha > 0.0 && self.estimation.alpha <= 1.0,
            "estimation.alpha",
        )?;
        Ok(())
    }

    pub fn camera_intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.camera.fx,
            fy: self.camera.fy,
            cx: self.camera.cx,
            cy: self.camera.cy,
            width: self.camera.width,
            height: self.camera.height,
            baseline: self.camera.baseline,
        }
    }

    pub fn robot_params(&self) -> RobotParams {
        RobotParams {
            track_width: self.robot.track_width,
            v_max: self.robot.v_max,
            omega_max: self.robot.omega_max,
            wheel_speed_max: self.robot.wheel_speed_max,
            camera_height: self.robot.camera_height,
        }
    }

    pub fn initial_pose(&self) -> Pose2 {
        let [x, y, theta] = self.robot.initial_pose;
        Pose2::new(x, y, theta)
    }

    pub fn person_specs(&self) -> Vec<PersonSpec> {
        self.persons
            .iter()
            .map(|p| PersonSpec {
                waypoints: p.waypoints.iter().map(|w| (w[0], w[1], w[2])).collect(),
                head_height: p.head_height,
                head_radius: p.head_radius,
                body_width: p.body_width,
                body_height: p.body_height,
            })
            .collect()
    }

    pub fn occluder_list(&self) -> Vec<Occluder> {
        self.occluders
            .iter()
            .map(|o| Occluder { x1: o[0], y1: o[1], x2: o[2], y2: o[3], height: o[4] })
            .collect()
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            pixel_sigma: self.noise.pixel_sigma,
            depth_sigma0: self.noise.depth_sigma0,
            depth_k: self.noise.depth_k,
            miss_rate: self.noise.miss_rate,
            occlusion_drop_threshold: self.noise.occlusion_drop_threshold,
            conf_sigma: self.noise.conf_sigma,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            gate_iou: self.tracker.gate_iou,
            blend_pos: self.tracker.blend_pos,
            blend_vel: self.tracker.blend_vel,
            coast_limit: self.tracker.coast_limit,
        }
    }

    pub fn servo_config(&self) -> ServoConfig {
        ServoConfig {
            angular_pid: self.servo.angular_pid.resolve(PidConfig::angular_default()),
            linear_pid: self.servo.linear_pid.resolve(PidConfig::linear_default()),
            d_ref: self.servo.d_ref,
            bearing_deadband: self.servo.bearing_deadband,
            distance_deadband: self.servo.distance_deadband,
            lost_policy: match self.servo.lost_policy {
                LostPolicySection::Stop => LostPolicy::Stop,
                LostPolicySection::HoldLastOmega => LostPolicy::HoldLastOmega,
            },
            search_rate: self.servo.search_rate,
        }
    }
}
