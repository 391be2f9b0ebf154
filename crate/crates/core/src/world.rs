//! Deterministic 2D ground-plane world: differential-drive kinematics,
//! scripted actors, fixed-step simulation state.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("time step must be positive (got {0})")]
    NonPositiveDt(f64),
}

/// Planar pose. Heading is wrapped to (-pi, pi] after every operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI);
    if t == 0.0 {
        PI
    } else {
        t - PI
    }
}

/// Planar velocity command: forward speed plus angular rate
/// (positive omega = counterclockwise).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub v: f64,
    pub omega: f64,
}

impl Twist {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// Left/right wheel rim speeds in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSpeeds {
    pub v_left: f64,
    pub v_right: f64,
}

/// Physical robot parameters. Defaults are Kobuki-like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotParams {
    /// Wheel separation in meters.
    pub track_width: f64,
    /// Forward speed limit, m/s.
    pub v_max: f64,
    /// Angular rate limit, rad/s.
    pub omega_max: f64,
    /// Per-wheel rim speed limit, m/s.
    pub wheel_speed_max: f64,
    /// Camera mounting height above ground, meters.
    pub camera_height: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            track_width: 0.23,
            v_max: 0.7,
            omega_max: 3.14,
            wheel_speed_max: 1.0,
            camera_height: 0.3,
        }
    }
}

/// Scripted actor: piecewise-linear waypoints plus head geometry.
///
/// The body, when given nonzero extents, acts as a moving occluder: a
/// vertical billboard of `body_width` centered on the actor, facing the
/// camera, spanning ground to `body_height`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonSpec {
    /// (time, x, y) triples with strictly increasing times.
    pub waypoints: Vec<(f64, f64, f64)>,
    /// Height of the head sphere center above ground, meters.
    pub head_height: f64,
    /// Head sphere radius, meters.
    pub head_radius: f64,
    /// Plan-view width of the body billboard, meters (0 disables it).
    pub body_width: f64,
    /// Top of the body billboard above ground, meters.
    pub body_height: f64,
}

impl Default for PersonSpec {
    fn default() -> Self {
        Self {
            waypoints: Vec::new(),
            head_height: 1.7,
            head_radius: 0.11,
            body_width: 0.45,
            body_height: 1.8,
        }
    }
}

/// A static vertical wall segment in plan view, spanning ground to `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub height: f64,
}

/// One actor's state at an instant: plan position plus its geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonState {
    pub x: f64,
    pub y: f64,
    pub head_height: f64,
    pub head_radius: f64,
    pub body_width: f64,
    pub body_height: f64,
}

/// Full simulation state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub robot: Pose2,
    pub persons: Vec<PersonState>,
    pub occluders: Vec<Occluder>,
}

/// Exact constant-twist arc integration of the unicycle model.
///
/// Closed-form arc rather than Euler, so the result is independent of how
/// the interval is subdivided.
pub fn integrate_unicycle(p: Pose2, cmd: Twist, dt: f64) -> Result<Pose2, WorldError> {
    if dt <= 0.0 {
        return Err(WorldError::NonPositiveDt(dt));
    }
    let theta_next = p.theta + cmd.omega * dt;
    let (x, y) = if cmd.omega.abs() < 1e-9 {
        (
            p.x + cmd.v * p.theta.cos() * dt,
            p.y + cmd.v * p.theta.sin() * dt,
        )
    } else {
        let r = cmd.v / cmd.omega;
        (
            p.x + r * (theta_next.sin() - p.theta.sin()),
            p.y - r * (theta_next.cos() - p.theta.cos()),
        )
    };
    Ok(Pose2::new(x, y, theta_next))
}

/// Maps a twist to wheel rim speeds.
///
/// If either wheel would exceed `wheel_speed_max`, both are scaled by a
/// common factor so the commanded curvature is preserved.
pub fn twist_to_wheels(cmd: Twist, params: &RobotParams) -> WheelSpeeds {
    let half = params.track_width / 2.0;
    let mut v_left = cmd.v - cmd.omega * half;
    let mut v_right = cmd.v + cmd.omega * half;
    let peak = v_left.abs().max(v_right.abs());
    if peak > params.wheel_speed_max {
        let scale = params.wheel_speed_max / peak;
        v_left *= scale;
        v_right *= scale;
    }
    WheelSpeeds { v_left, v_right }
}

/// Inverse of [`twist_to_wheels`] for unsaturated commands.
pub fn wheels_to_twist(w: WheelSpeeds, params: &RobotParams) -> Twist {
    Twist {
        v: (w.v_left + w.v_right) / 2.0,
        omega: (w.v_right - w.v_left) / params.track_width,
    }
}

/// Piecewise-linear actor position at time `t`.
///
/// Clamps to the first waypoint before the script starts and the last after
/// it ends.
pub fn waypoint_position(spec: &PersonSpec, t: f64) -> (f64, f64) {
    let wps = &spec.waypoints;
    assert!(!wps.is_empty(), "PersonSpec must have at least one waypoint");
    if t <= wps[0].0 {
        return (wps[0].1, wps[0].2);
    }
    let last = wps[wps.len() - 1];
    if t >= last.0 {
        return (last.1, last.2);
    }
    for pair in wps.windows(2) {
        let (t0, x0, y0) = pair[0];
        let (t1, x1, y1) = pair[1];
        if t < t1 {
            let a = (t - t0) / (t1 - t0);
            return (x0 + a * (x1 - x0), y0 + a * (y1 - y0));
        }
    }
    (last.1, last.2)
}

impl PersonSpec {
    /// The actor's instantaneous state at time `t`.
    pub fn state_at(&self, t: f64) -> PersonState {
        let (x, y) = waypoint_position(self, t);
        PersonState {
            x,
            y,
            head_height: self.head_height,
            head_radius: self.head_radius,
            body_width: self.body_width,
            body_height: self.body_height,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn straight_line_step() {
        let p = integrate_unicycle(Pose2::new(0.0, 0.0, 0.0), Twist::new(1.0, 0.0), 1.0).unwrap();
        assert_eq!((p.x, p.y, p.theta), (1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_circle_arc() {
        // radius v/omega = 1; after a quarter turn the pose is (1, 1, pi/2)
        let p = integrate_unicycle(
            Pose2::new(0.0, 0.0, 0.0),
            Twist::new(PI / 2.0, PI / 2.0),
            1.0,
        )
        .unwrap();
        assert_relative_eq!(p.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.y, 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.theta, PI / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_in_place_wraps_to_pi() {
        let p = integrate_unicycle(Pose2::new(0.0, 0.0, 0.0), Twist::new(0.0, 1.0), PI).unwrap();
        assert_eq!(p.theta, PI);
        assert_eq!((p.x, p.y), (0.0, 0.0));
    }

    #[test]
    fn non_positive_dt_rejected() {
        assert_eq!(
            integrate_unicycle(Pose2::new(0.0, 0.0, 0.0), Twist::default(), 0.0),
            Err(WorldError::NonPositiveDt(0.0))
        );
    }

    #[test]
    fn wheels_straight_motion() {
        let w = twist_to_wheels(Twist::new(1.0, 0.0), &params());
        assert_eq!((w.v_left, w.v_right), (1.0, 1.0));
    }

    #[test]
    fn wheels_spin_in_place() {
        // v_l = -omega * L/2 = -0.5, v_r = +0.5
        let p = RobotParams { track_width: 0.5, ..params() };
        let w = twist_to_wheels(Twist::new(0.0, 2.0), &p);
        assert_relative_eq!(w.v_left, -0.5);
        assert_relative_eq!(w.v_right, 0.5);
    }

    #[test]
    fn wheel_saturation_preserves_ratio() {
        let p = RobotParams { wheel_speed_max: 0.5, ..params() };
        let w = twist_to_wheels(Twist::new(1.0, 0.0), &p);
        assert_relative_eq!(w.v_left, 0.5);
        assert_relative_eq!(w.v_right, 0.5);
    }

    #[test]
    fn waypoint_interpolation_and_clamps() {
        let spec = PersonSpec {
            waypoints: vec![(0.0, 0.0, 0.0), (10.0, 10.0, 0.0)],
            ..Default::default()
        };
        assert_eq!(waypoint_position(&spec, 0.0), (0.0, 0.0));
        assert_eq!(waypoint_position(&spec, 5.0), (5.0, 0.0));
        assert_eq!(waypoint_position(&spec, 99.0), (10.0, 0.0));
    }

    #[test]
    fn theta_stays_wrapped_over_many_random_steps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut p = Pose2::new(0.0, 0.0, 0.0);
        for _ in 0..1_000_000 {
            let cmd = Twist::new(rng.gen_range(-0.7..0.7), rng.gen_range(-3.14..3.14));
            p = integrate_unicycle(p, cmd, 1.0 / 30.0).unwrap();
            assert!(p.theta > -PI && p.theta <= PI, "theta escaped: {}", p.theta);
        }
    }

    proptest! {
        #[test]
        fn halved_steps_agree_with_full_step(
            x in -5.0f64..5.0, y in -5.0f64..5.0, th in -3.0f64..3.0,
            v in -0.7f64..0.7, om in -3.0f64..3.0,
        ) {
            let p = Pose2::new(x, y, th);
            let cmd = Twist::new(v, om);
            let dt = 1.0 / 30.0;
            let full = integrate_unicycle(p, cmd, dt).unwrap();
            let half = integrate_unicycle(p, cmd, dt / 2.0).unwrap();
            let two = integrate_unicycle(half, cmd, dt / 2.0).unwrap();
            prop_assert!((full.x - two.x).abs() < 1e-9);
            prop_assert!((full.y - two.y).abs() < 1e-9);
            prop_assert!((wrap_angle(full.theta - two.theta)).abs() < 1e-9);
        }

        #[test]
        fn wheel_mapping_roundtrips_unsaturated(
            v in -0.5f64..0.5, om in -2.0f64..2.0,
        ) {
            let p = params();
            let cmd = Twist::new(v, om);
            let w = twist_to_wheels(cmd, &p);
            prop_assume!(w.v_left.abs() <= p.wheel_speed_max && w.v_right.abs() <= p.wheel_speed_max);
            let back = wheels_to_twist(w, &p);
            prop_assert!((back.v - v).abs() < 1e-12);
            prop_assert!((back.omega - om).abs() < 1e-12);
        }
    }
}
