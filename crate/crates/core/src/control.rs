//! The two-PID visual servo: one controller steers on the normalized
//! horizontal box offset, the other drives range to the following
//! distance. Deadbands keep noise from turning into hunting, and the
//! integral resets while its error sits inside the deadband so no residual
//! windup creeps the robot around the setpoint.

use thiserror::Error;

use crate::estimation::DepthEstimate;
use crate::geometry::{BoundingBox, CameraIntrinsics};
use crate::tracker::TrackStatus;
use crate::world::{RobotParams, Twist};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("time step must be positive (got {0})")]
    NonPositiveDt(f64),
    #[error("depth must be positive (got {0})")]
    NonPositiveDepth(f64),
}

/// Discrete PID gains and clamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Integral term clamp, output units.
    pub i_min: f64,
    pub i_max: f64,
    /// Output clamp.
    pub out_min: f64,
    pub out_max: f64,
    /// Differentiate the measurement instead of the error, avoiding a
    /// derivative kick on setpoint changes.
    pub deriv_on_measurement: bool,
}

impl PidConfig {
    /// Reference angular-loop gains.
    pub fn angular_default() -> Self {
        Self {
            kp: 1.2,
            ki: 0.1,
            kd: 0.05,
            i_min: -0.3,
            i_max: 0.3,
            out_min: -3.14,
            out_max: 3.14,
            deriv_on_measurement: true,
        }
    }

    /// Reference linear-loop gains.
    pub fn linear_default() -> Self {
        Self {
            kp: 0.8,
            ki: 0.05,
            kd: 0.0,
            i_min: -0.3,
            i_max: 0.3,
            out_min: -0.7,
            out_max: 0.7,
            deriv_on_measurement: true,
        }
    }
}

/// PID controller memory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    /// Accumulated integral term, output units.
    pub integral: f64,
    pub prev_error: f64,
    pub prev_measurement: f64,
    /// Set after the first step; the derivative is zero until then.
    pub primed: bool,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One discrete PID step.
///
/// The derivative uses the error difference, or the negated measurement
/// difference when `deriv_on_measurement` is set (the measurement argument
/// should carry the sign convention error = setpoint - measurement).
/// Conditional anti-windup: the integral increment is discarded when the
/// pre-clamp output saturates in the direction of the error.
pub fn pid_step(
    s: &PidState,
    cfg: &PidConfig,
    error: f64,
    measurement: f64,
    dt: f64,
) -> Result<(PidState, f64), ControlError> {
    if dt <= 0.0 {
        return Err(ControlError::NonPositiveDt(dt));
    }
    let p = cfg.kp * error;
    let d = if !s.primed {
        0.0
    } else if cfg.deriv_on_measurement {
        -cfg.kd * (measurement - s.prev_measurement) / dt
    } else {
        cfg.kd * (error - s.prev_error) / dt
    };
    let candidate = (s.integral + cfg.ki * error * dt).clamp(cfg.i_min, cfg.i_max);
    let pre_clamp = p + candidate + d;
    let windup = (pre_clamp > cfg.out_max && error > 0.0) || (pre_clamp < cfg.out_min && error < 0.0);
    let integral = if windup { s.integral } else { candidate };
    let output = (p + integral + d).clamp(cfg.out_min, cfg.out_max);
    Ok((
        PidState { integral, prev_error: error, prev_measurement: measurement, primed: true },
        output,
    ))
}

/// Normalized horizontal offset of the box center in [-1, 1]; positive
/// means the target sits right of image center.
pub fn angular_error(b: &BoundingBox, k: &CameraIntrinsics) -> f64 {
    let (cu, _) = b.center();
    let half = k.width / 2.0;
    ((cu - half) / half).clamp(-1.0, 1.0)
}

/// Range error in meters; positive means the target is too far away.
pub fn linear_error(depth: f64, cfg: &ServoConfig) -> Result<f64, ControlError> {
    if depth <= 0.0 {
        return Err(ControlError::NonPositiveDepth(depth));
    }
    Ok(depth - cfg.d_ref)
}

/// What the servo does when the tracker has lost the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LostPolicy {
    /// Zero twist, PID states reset.
    Stop,
    /// Rotate in place toward the side the target was last drifting.
    HoldLastOmega,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoConfig {
    pub angular_pid: PidConfig,
    pub linear_pid: PidConfig,
    /// Desired following distance, meters.
    pub d_ref: f64,
    /// Normalized bearing error treated as zero.
    pub bearing_deadband: f64,
    /// Distance error treated as zero, meters.
    pub distance_deadband: f64,
    pub lost_policy: LostPolicy,
    /// Search rotation rate for [`LostPolicy::HoldLastOmega`], rad/s.
    pub search_rate: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            angular_pid: PidConfig::angular_default(),
            linear_pid: PidConfig::linear_default(),
            d_ref: 1.5,
            bearing_deadband: 0.03,
            distance_deadband: 0.05,
            lost_policy: LostPolicy::Stop,
            search_rate: 0.5,
        }
    }
}

/// Servo memory: both PID states plus the last commanded turn rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ServoState {
    pub angular: PidState,
    pub linear: PidState,
    pub last_omega: f64,
}

/// One control step.
///
/// With a usable box: turn rate from the angular PID on the normalized
/// offset (sign flipped so a target right of center commands a clockwise
/// turn), speed from the linear PID on the smoothed depth. While the
/// tracker coasts the turn keeps following the predicted box but the
/// speed is forced to zero — an occluded target's depth samples belong to
/// the occluder. Without a usable box the lost policy applies.
pub fn servo_step(
    s: &ServoState,
    cfg: &ServoConfig,
    bbox: Option<&BoundingBox>,
    depth: &DepthEstimate,
    status: TrackStatus,
    k: &CameraIntrinsics,
    limits: &RobotParams,
    dt: f64,
) -> Result<(ServoState, Twist), ControlError> {
    if dt <= 0.0 {
        return Err(ControlError::NonPositiveDt(dt));
    }
    let bbox = match (status, bbox) {
        (TrackStatus::Lost, _) | (_, None) => {
            let mut next = *s;
            let twist = match cfg.lost_policy {
                LostPolicy::Stop => {
                    next.angular.reset();
                    next.linear.reset();
                    Twist::new(0.0, 0.0)
                }
                LostPolicy::HoldLastOmega => {
                    let omega = (s.last_omega.signum() * cfg.search_rate)
                        .clamp(-limits.omega_max, limits.omega_max);
                    Twist::new(0.0, if s.last_omega == 0.0 { 0.0 } else { omega })
                }
            };
            next.last_omega = twist.omega;
            return Ok((next, twist));
        }
        (_, Some(b)) => b,
    };

    let mut next = *s;

    let e_ang_raw = angular_error(bbox, k);
    let in_band = e_ang_raw.abs() <= cfg.bearing_deadband;
    let (e_ang, m_ang) = if in_band { (0.0, 0.0) } else { (e_ang_raw, -e_ang_raw) };
    if in_band {
        next.angular.integral = 0.0;
    }
    let (ang_state, ang_out) = pid_step(&next.angular, &cfg.angular_pid, e_ang, m_ang, dt)?;
    next.angular = ang_state;
    let omega = (-ang_out).clamp(-limits.omega_max, limits.omega_max);

    let v = if status == TrackStatus::Coasting || !depth.initialized {
        0.0
    } else {
        let e_lin_raw = linear_error(depth.smoothed, cfg)?;
        let in_band = e_lin_raw.abs() <= cfg.distance_deadband;
        let (e_lin, m_lin) = if in_band { (0.0, 0.0) } else { (e_lin_raw, -e_lin_raw) };
        if in_band {
            next.linear.integral = 0.0;
        }
        let (lin_state, lin_out) = pid_step(&next.linear, &cfg.linear_pid, e_lin, m_lin, dt)?;
        next.linear = lin_state;
        lin_out.clamp(-limits.v_max, limits.v_max)
    };

    next.last_omega = omega;
    Ok((next, Twist::new(v, omega)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const DT: f64 = 1.0 / 30.0;

    fn wide_pid(kp: f64, ki: f64, kd: f64) -> PidConfig {
        PidConfig {
            kp,
            ki,
            kd,
            i_min: -10.0,
            i_max: 10.0,
            out_min: -100.0,
            out_max: 100.0,
            deriv_on_measurement: false,
        }
    }

    #[test]
    fn pure_proportional_step() {
        let cfg = wide_pid(2.0, 0.0, 0.0);
        let (s, out) = pid_step(&PidState::default(), &cfg, 0.5, -0.5, DT).unwrap();
        assert_relative_eq!(out, 1.0);
        assert_eq!(s.integral, 0.0);
        assert!(s.primed);
    }

    #[test]
    fn zero_error_zero_output() {
        let cfg = wide_pid(2.0, 1.0, 0.5);
        let (_, out) = pid_step(&PidState::default(), &cfg, 0.0, 0.0, DT).unwrap();
        assert_eq!(out, 0.0);
    }

    #[test]
    fn saturated_output_skips_integral_increment() {
        let cfg = PidConfig { out_min: -1.0, out_max: 1.0, ..wide_pid(10.0, 1.0, 0.0) };
        let (s, out) = pid_step(&PidState::default(), &cfg, 1.0, -1.0, DT).unwrap();
        assert_relative_eq!(out, 1.0);
        assert_eq!(s.integral, 0.0);
    }

    #[test]
    fn integral_clamped_to_bounds() {
        let cfg = PidConfig { i_min: -0.1, i_max: 0.1, ..wide_pid(0.0, 100.0, 0.0) };
        let mut s = PidState::default();
        for _ in 0..50 {
            let (next, _) = pid_step(&s, &cfg, 1.0, -1.0, DT).unwrap();
            assert!(next.integral <= 0.1 + 1e-15);
            s = next;
        }
        assert_relative_eq!(s.integral, 0.1);
    }

    #[test]
    fn derivative_zero_on_first_step() {
        let cfg = wide_pid(0.0, 0.0, 5.0);
        let (s, out) = pid_step(&PidState::default(), &cfg, 1.0, -1.0, DT).unwrap();
        assert_eq!(out, 0.0);
        let (_, out2) = pid_step(&s, &cfg, 2.0, -2.0, DT).unwrap();
        // error derivative (2 - 1) / dt scaled by kd
        assert_relative_eq!(out2, 5.0 * 30.0);
    }

    #[test]
    fn derivative_on_measurement_ignores_error_jump() {
        let cfg = PidConfig { deriv_on_measurement: true, ..wide_pid(0.0, 0.0, 5.0) };
        let (s, _) = pid_step(&PidState::default(), &cfg, 1.0, -1.0, DT).unwrap();
        // setpoint moved (error jumps) while the measurement stayed put
        let (_, out) = pid_step(&s, &cfg, 3.0, -1.0, DT).unwrap();
        assert_eq!(out, 0.0);
    }

    #[test]
    fn angular_error_examples() {
        let k = CameraIntrinsics::default();
        let centered = BoundingBox::from_center(320.0, 100.0, 40.0, 40.0).unwrap();
        assert_eq!(angular_error(&centered, &k), 0.0);
        let right_edge = BoundingBox::from_center(640.0, 100.0, 40.0, 40.0).unwrap();
        assert_eq!(angular_error(&right_edge, &k), 1.0);
        let half_right = BoundingBox::from_center(480.0, 100.0, 40.0, 40.0).unwrap();
        assert_relative_eq!(angular_error(&half_right, &k), 0.5);
    }

    #[test]
    fn linear_error_examples() {
        let cfg = ServoConfig::default();
        assert_eq!(linear_error(1.5, &cfg).unwrap(), 0.0);
        assert_relative_eq!(linear_error(3.0, &cfg).unwrap(), 1.5);
        assert_relative_eq!(linear_error(1.0, &cfg).unwrap(), -0.5);
        assert_eq!(linear_error(0.0, &cfg), Err(ControlError::NonPositiveDepth(0.0)));
    }

    fn tracked_depth(z: f64) -> DepthEstimate {
        DepthEstimate { raw_median: z, smoothed: z, initialized: true, alpha: 0.3 }
    }

    #[test]
    fn centered_at_distance_commands_zero_twist() {
        let cfg = ServoConfig::default();
        let k = CameraIntrinsics::default();
        let limits = RobotParams::default();
        let bbox = BoundingBox::from_center(320.0, 200.0, 40.0, 40.0).unwrap();
        let (_, twist) = servo_step(
            &ServoState::default(),
            &cfg,
            Some(&bbox),
            &tracked_depth(cfg.d_ref),
            TrackStatus::Tracking,
            &k,
            &limits,
            DT,
        )
        .unwrap();
        assert_eq!(twist, Twist::new(0.0, 0.0));
    }

    #[test]
    fn target_right_of_center_turns_clockwise() {
        let cfg = ServoConfig::default();
        let k = CameraIntrinsics::default();
        let limits = RobotParams::default();
        let bbox = BoundingBox::from_center(480.0, 200.0, 40.0, 40.0).unwrap();
        let (_, twist) = servo_step(
            &ServoState::default(),
            &cfg,
            Some(&bbox),
            &tracked_depth(cfg.d_ref),
            TrackStatus::Tracking,
            &k,
            &limits,
            DT,
        )
        .unwrap();
        assert!(twist.omega < 0.0, "omega = {}", twist.omega);
        assert_eq!(twist.v, 0.0);
    }

    #[test]
    fn coasting_freezes_linear_motion() {
        let cfg = ServoConfig::default();
        let k = CameraIntrinsics::default();
        let limits = RobotParams::default();
        let bbox = BoundingBox::from_center(480.0, 200.0, 40.0, 40.0).unwrap();
        let (_, twist) = servo_step(
            &ServoState::default(),
            &cfg,
            Some(&bbox),
            &tracked_depth(5.0),
            TrackStatus::Coasting,
            &k,
            &limits,
            DT,
        )
        .unwrap();
        assert_eq!(twist.v, 0.0);
        assert!(twist.omega < 0.0);
    }

    #[test]
    fn lost_with_stop_policy_zeroes_and_resets() {
        let cfg = ServoConfig::default();
        let k = CameraIntrinsics::default();
        let limits = RobotParams::default();
        let mut state = ServoState::default();
        state.linear.integral = 0.2;
        state.angular.integral = -0.1;
        let (next, twist) = servo_step(
            &state,
            &cfg,
            None,
            &tracked_depth(2.0),
            TrackStatus::Lost,
            &k,
            &limits,
            DT,
        )
        .unwrap();
        assert_eq!(twist, Twist::new(0.0, 0.0));
        assert_eq!(next.angular.integral, 0.0);
        assert_eq!(next.linear.integral, 0.0);
    }

    #[test]
    fn lost_with_hold_policy_searches_toward_last_turn() {
        let cfg = ServoConfig { lost_policy: LostPolicy::HoldLastOmega, ..Default::default() };
        let k = CameraIntrinsics::default();
        let limits = RobotParams::default();
        let state = ServoState { last_omega: -0.8, ..Default::default() };
        let (_, twist) = servo_step(
            &state,
            &cfg,
            None,
            &tracked_depth(2.0),
            TrackStatus::Lost,
            &k,
            &limits,
            DT,
        )
        .unwrap();
        assert_eq!(twist.v, 0.0);
        assert_relative_eq!(twist.omega, -cfg.search_rate);
    }

    proptest! {
        #[test]
        fn outputs_always_within_robot_limits(
            cu in 0.0f64..640.0,
            depth in 0.1f64..15.0,
            int_a in -0.3f64..0.3,
            int_l in -0.3f64..0.3,
            coasting in proptest::bool::ANY,
        ) {
            let cfg = ServoConfig::default();
            let k = CameraIntrinsics::default();
            let limits = RobotParams::default();
            let mut state = ServoState::default();
            state.angular.integral = int_a;
            state.linear.integral = int_l;
            let bbox = BoundingBox::from_center(cu, 200.0, 40.0, 40.0).unwrap();
            let status = if coasting { TrackStatus::Coasting } else { TrackStatus::Tracking };
            let (_, twist) = servo_step(
                &state, &cfg, Some(&bbox), &tracked_depth(depth), status, &k, &limits, DT,
            ).unwrap();
            prop_assert!(twist.v.abs() <= limits.v_max);
            prop_assert!(twist.omega.abs() <= limits.omega_max);
        }
    }
}
