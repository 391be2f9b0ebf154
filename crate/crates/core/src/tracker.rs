//! Single-object bounding-box tracking.
//!
//! The built-in tracker keeps a constant-velocity estimate of the box,
//! gates candidate detections by IoU against its prediction, blends
//! matches in, and coasts on its motion model through misses. Any
//! implementation honoring the same contract — initialize from a
//! detection, emit one box per frame, survive short occlusions —
//! can stand in for it.

use crate::geometry::{iou, BoundingBox};
use crate::perception::Detection;

/// Minimum box extent the tracker will predict, pixels.
const MIN_EXTENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Matched a detection this frame.
    Tracking,
    /// Running on the motion model; no acceptable detection.
    Coasting,
    /// Coasted past the limit. Absorbing until re-initialized.
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Minimum IoU between prediction and detection to accept a match.
    pub gate_iou: f64,
    /// Blend gain toward the measured center and size, in (0, 1].
    pub blend_pos: f64,
    /// Blend gain toward the finite-difference velocity, in (0, 1].
    pub blend_vel: f64,
    /// Missed frames tolerated before the track is lost.
    pub coast_limit: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { gate_iou: 0.3, blend_pos: 0.5, blend_vel: 0.3, coast_limit: 45 }
    }
}

/// Center and extents of the last matched measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Measurement {
    cu: f64,
    cv: f64,
    w: f64,
    h: f64,
}

/// Tracker memory across frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerState {
    pub bbox: BoundingBox,
    /// Pixel velocity of the box center, per second.
    pub vel: (f64, f64),
    /// Rate of change of (w, h), pixels per second.
    pub size_vel: (f64, f64),
    pub frames_since_match: u32,
    pub status: TrackStatus,
    /// Velocities are learned from differences of consecutive matched
    /// measurements; None until the first post-init match.
    last_meas: Option<Measurement>,
}

/// Starts a track on a detector output. Confidence is not carried over.
pub fn tracker_init(d: &Detection) -> TrackerState {
    TrackerState {
        bbox: d.bbox,
        vel: (0.0, 0.0),
        size_vel: (0.0, 0.0),
        frames_since_match: 0,
        status: TrackStatus::Tracking,
        last_meas: None,
    }
}

/// Constant-velocity prediction of the box after `dt`. Extents are floored
/// at [`MIN_EXTENT`]. The state itself is not advanced.
pub fn tracker_predict(s: &TrackerState, dt: f64) -> BoundingBox {
    assert!(dt > 0.0, "dt must be positive");
    let (cu, cv) = s.bbox.center();
    let w = (s.bbox.w + s.size_vel.0 * dt).max(MIN_EXTENT);
    let h = (s.bbox.h + s.size_vel.1 * dt).max(MIN_EXTENT);
    BoundingBox::from_center(cu + s.vel.0 * dt, cv + s.vel.1 * dt, w, h)
        .expect("extents floored positive")
}

/// Advances the track one frame against the detections.
///
/// The best detection by IoU against the prediction is blended in if it
/// clears the gate; otherwise the prediction is adopted and the miss
/// counter advances. Returns the post-update box — the tracker emits a box
/// every frame, matched or coasting. A lost track never re-matches; the
/// pipeline re-initializes from the detector instead.
pub fn tracker_update(
    s: &TrackerState,
    cfg: &TrackerConfig,
    detections: &[Detection],
    dt: f64,
) -> (TrackerState, BoundingBox) {
    assert!(dt > 0.0, "dt must be positive");
    let predicted = tracker_predict(s, dt);

    let best = if s.status == TrackStatus::Lost {
        None
    } else {
        detections
            .iter()
            .map(|d| (d, iou(&predicted, &d.bbox)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .filter(|(_, overlap)| *overlap >= cfg.gate_iou)
    };

    let next = match best {
        Some((d, _)) => {
            let (pu, pv) = predicted.center();
            let (mu, mv) = d.bbox.center();
            let cu = pu + cfg.blend_pos * (mu - pu);
            let cv = pv + cfg.blend_pos * (mv - pv);
            let w = (predicted.w + cfg.blend_pos * (d.bbox.w - predicted.w)).max(MIN_EXTENT);
            let h = (predicted.h + cfg.blend_pos * (d.bbox.h - predicted.h)).max(MIN_EXTENT);
            let (vel, size_vel) = match s.last_meas {
                Some(prev) => {
                    let gap = (s.frames_since_match + 1) as f64 * dt;
                    let fd_vel = ((mu - prev.cu) / gap, (mv - prev.cv) / gap);
                    let fd_size = ((d.bbox.w - prev.w) / gap, (d.bbox.h - prev.h) / gap);
                    (
                        (
                            s.vel.0 + cfg.blend_vel * (fd_vel.0 - s.vel.0),
                            s.vel.1 + cfg.blend_vel * (fd_vel.1 - s.vel.1),
                        ),
                        (
                            s.size_vel.0 + cfg.blend_vel * (fd_size.0 - s.size_vel.0),
                            s.size_vel.1 + cfg.blend_vel * (fd_size.1 - s.size_vel.1),
                        ),
                    )
                }
                // first match after init: no measurement pair to difference yet
                None => (s.vel, s.size_vel),
            };
            TrackerState {
                bbox: BoundingBox::from_center(cu, cv, w, h).expect("extents floored positive"),
                vel,
                size_vel,
                frames_since_match: 0,
                status: TrackStatus::Tracking,
                last_meas: Some(Measurement { cu: mu, cv: mv, w: d.bbox.w, h: d.bbox.h }),
            }
        }
        None => {
            let frames = s.frames_since_match + 1;
            TrackerState {
                bbox: predicted,
                vel: s.vel,
                size_vel: s.size_vel,
                frames_since_match: frames,
                status: if frames > cfg.coast_limit {
                    TrackStatus::Lost
                } else {
                    TrackStatus::Coasting
                },
                last_meas: s.last_meas,
            }
        }
    };
    let bbox = next.bbox;
    (next, bbox)
}
