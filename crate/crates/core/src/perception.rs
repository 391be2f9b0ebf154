//! Synthetic stand-in for the stereo camera and head detector.
//!
//! Heads are spheres, bodies and walls are vertical billboards/segments.
//! Everything is ray-cast in the camera frame, so detections and depth
//! patches follow the same geometry the controller is later judged
//! against. All randomness comes from a caller-owned seeded generator.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{project_head_bbox, BoundingBox, CameraIntrinsics, CameraPoint};
use crate::world::{Pose2, RobotParams, WorldState};

/// Rays that hit nothing closer than this are background.
pub const MAX_RANGE: f64 = 20.0;

/// Number of rays cast across a head's angular width for occlusion tests.
pub const OCCLUSION_RAYS: usize = 21;

/// Detector confidence for a fully visible head before noise.
pub const BASE_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("target depth must be positive (got {0})")]
    NonPositiveDepth(f64),
    #[error("bounding box does not intersect the image")]
    EmptyIntersection,
}

/// One detector output: a box plus its confidence in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Grid of per-pixel depth samples inside a box, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPatch {
    pub width: usize,
    pub height: usize,
    /// Row-major samples in meters; only entries flagged in `valid` are meaningful.
    pub samples: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthPatch {
    /// Iterator over the valid depth values.
    pub fn valid_samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples
            .iter()
            .zip(self.valid.iter())
            .filter_map(|(s, v)| v.then_some(*s))
    }
}

/// Sensor noise parameters. Zeroing every field gives an ideal sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Std-dev of bbox center and size jitter, pixels.
    pub pixel_sigma: f64,
    /// Base depth noise, meters.
    pub depth_sigma0: f64,
    /// Quadratic depth noise coefficient (1/m): sigma(Z) = sigma0 + k * Z^2.
    pub depth_k: f64,
    /// Probability a visible head yields no detection in a frame.
    pub miss_rate: f64,
    /// Heads occluded beyond this fraction produce no detection.
    pub occlusion_drop_threshold: f64,
    /// Std-dev of confidence jitter.
    pub conf_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 1.0,
            depth_sigma0: 0.02,
            depth_k: 0.005,
            miss_rate: 0.02,
            occlusion_drop_threshold: 0.5,
            conf_sigma: 0.02,
        }
    }
}

impl NoiseModel {
    /// An exactly noise-free sensor.
    pub fn noiseless() -> Self {
        Self {
            pixel_sigma: 0.0,
            depth_sigma0: 0.0,
            depth_k: 0.0,
            miss_rate: 0.0,
            occlusion_drop_threshold: 0.5,
            conf_sigma: 0.0,
        }
    }
}

/// A vertical occluding rectangle in the camera frame: plan segment
/// (a..b in X/Z) spanning camera-frame heights y_top..y_bottom
/// (Y points down, so y_top <= y_bottom).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSegment {
    pub ax: f64,
    pub az: f64,
    pub bx: f64,
    pub bz: f64,
    pub y_top: f64,
    pub y_bottom: f64,
}

/// Transforms a world point (x, y, height-above-ground) into the camera
/// frame of a robot at `pose` with the camera `camera_height` up.
pub fn to_camera_frame(pose: &Pose2, camera_height: f64, x: f64, y: f64, h: f64) -> CameraPoint {
    let dx = x - pose.x;
    let dy = y - pose.y;
    let (sin_t, cos_t) = pose.theta.sin_cos();
    CameraPoint::new(
        dx * sin_t - dy * cos_t,
        camera_height - h,
        dx * cos_t + dy * sin_t,
    )
}

/// Camera-frame point of a person's head center.
pub fn head_camera_point(world: &WorldState, params: &RobotParams, person_idx: usize) -> CameraPoint {
    let p = &world.persons[person_idx];
    to_camera_frame(&world.robot, params.camera_height, p.x, p.y, p.head_height)
}

/// Whether a camera point lies within the horizontal field of view.
pub fn in_horizontal_fov(k: &CameraIntrinsics, p: &CameraPoint) -> bool {
    if p.z <= 0.0 {
        return false;
    }
    let u = k.fx * p.x / p.z + k.cx;
    (0.0..=k.width).contains(&u)
}

/// All occluding surfaces of a world in the camera frame: static walls plus
/// one billboard per person with a nonzero body. Billboards face the camera.
pub fn occluder_segments(world: &WorldState, params: &RobotParams) -> Vec<PlanSegment> {
    let mut segs = Vec::with_capacity(world.occluders.len() + world.persons.len());
    for occ in &world.occluders {
        let a = to_camera_frame(&world.robot, params.camera_height, occ.x1, occ.y1, 0.0);
        let b = to_camera_frame(&world.robot, params.camera_height, occ.x2, occ.y2, 0.0);
        segs.push(PlanSegment {
            ax: a.x,
            az: a.z,
            bx: b.x,
            bz: b.z,
            y_top: params.camera_height - occ.height,
            y_bottom: params.camera_height,
        });
    }
    for p in &world.persons {
        if p.body_width <= 0.0 || p.body_height <= 0.0 {
            continue;
        }
        let c = to_camera_frame(&world.robot, params.camera_height, p.x, p.y, 0.0);
        let range = c.plan_range();
        if range < 1e-9 {
            continue;
        }
        // unit vector perpendicular to the line of sight, in the plan
        let px = c.z / range;
        let pz = -c.x / range;
        let half = p.body_width / 2.0;
        segs.push(PlanSegment {
            ax: c.x - px * half,
            az: c.z - pz * half,
            bx: c.x + px * half,
            bz: c.z + pz * half,
            y_top: params.camera_height - p.body_height,
            y_bottom: params.camera_height,
        });
    }
    segs
}

/// Distance along a plan ray (unit direction `(dx, dz)` from the origin) to
/// a segment, or None if it misses.
fn plan_ray_segment(dx: f64, dz: f64, seg: &PlanSegment) -> Option<f64> {
    // segment normal in the plan
    let nx = seg.az - seg.bz;
    let nz = seg.bx - seg.ax;
    let denom = dx * nx + dz * nz;
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (seg.ax * nx + seg.az * nz) / denom;
    if t <= 0.0 {
        return None;
    }
    let hx = t * dx - seg.ax;
    let hz = t * dz - seg.az;
    let ex = seg.bx - seg.ax;
    let ez = seg.bz - seg.az;
    let len2 = ex * ex + ez * ez;
    if len2 < 1e-18 {
        return None;
    }
    let s = (hx * ex + hz * ez) / len2;
    if (0.0..=1.0).contains(&s) {
        Some(t)
    } else {
        None
    }
}

/// Fraction of a head's angular width hidden by nearer occluders.
///
/// Casts [`OCCLUSION_RAYS`] evenly spaced rays across the head's angular
/// extent in the horizontal plane; a ray counts as blocked when a segment
/// closer than the head intersects it and reaches at least head height.
pub fn occlusion_fraction(
    target_center: CameraPoint,
    target_radius: f64,
    occluders: &[PlanSegment],
    _k: &CameraIntrinsics,
) -> Result<f64, PerceptionError> {
    if target_center.z <= 0.0 {
        return Err(PerceptionError::NonPositiveDepth(target_center.z));
    }
    let range = target_center.plan_range();
    if occluders.is_empty() || range <= target_radius {
        return Ok(0.0);
    }
    let azimuth = target_center.x.atan2(target_center.z);
    let half_width = (target_radius / range).asin();
    let mut blocked = 0usize;
    for i in 0..OCCLUSION_RAYS {
        let frac = i as f64 / (OCCLUSION_RAYS - 1) as f64;
        let a = azimuth - half_width + 2.0 * half_width * frac;
        let (dx, dz) = (a.sin(), a.cos());
        let hit = occluders.iter().any(|seg| {
            seg.y_top <= target_center.y
                && plan_ray_segment(dx, dz, seg).is_some_and(|t| t < range - 1e-9)
        });
        if hit {
            blocked += 1;
        }
    }
    Ok(blocked as f64 / OCCLUSION_RAYS as f64)
}

fn sample_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    } else {
        0.0
    }
}

/// Runs the synthetic head detector over every person in the world.
///
/// A head is reported unless it is behind the camera, outside the
/// horizontal field of view, occluded beyond the drop threshold, or lost to
/// a random miss. Output order follows the world's person order, so results
/// are deterministic given the generator state.
pub fn detect_heads<R: Rng>(
    world: &WorldState,
    k: &CameraIntrinsics,
    params: &RobotParams,
    noise: &NoiseModel,
    rng: &mut R,
) -> Vec<Detection> {
    let segments = occluder_segments(world, params);
    let mut out = Vec::new();
    for idx in 0..world.persons.len() {
        let person = &world.persons[idx];
        let center = head_camera_point(world, params, idx);
        if center.z <= person.head_radius {
            continue;
        }
        if !in_horizontal_fov(k, &center) {
            continue;
        }
        let occ = match occlusion_fraction(center, person.head_radius, &segments, k) {
            Ok(f) => f,
            Err(_) => continue,
        };
        if occ > noise.occlusion_drop_threshold {
            continue;
        }
        if noise.miss_rate > 0.0 && rng.gen::<f64>() < noise.miss_rate {
            continue;
        }
        let Ok(bbox) = project_head_bbox(k, center, person.head_radius) else {
            continue;
        };
        let (cu, cv) = bbox.center();
        let cu = cu + sample_normal(rng, noise.pixel_sigma);
        let cv = cv + sample_normal(rng, noise.pixel_sigma);
        let w = (bbox.w + sample_normal(rng, noise.pixel_sigma)).max(2.0);
        let h = (bbox.h + sample_normal(rng, noise.pixel_sigma)).max(2.0);
        let confidence =
            (BASE_CONFIDENCE * (1.0 - occ) + sample_normal(rng, noise.conf_sigma)).clamp(0.0, 1.0);
        out.push(Detection {
            bbox: BoundingBox::from_center(cu, cv, w, h).expect("extents clamped positive"),
            confidence,
        });
    }
    out
}

/// Depth (camera Z) of the nearest surface along the ray through pixel
/// (u, v), or None when nothing is hit within [`MAX_RANGE`].
///
/// The ray is parameterized so the parameter equals camera depth.
fn cast_pixel_ray(
    u: f64,
    v: f64,
    k: &CameraIntrinsics,
    spheres: &[(CameraPoint, f64)],
    segments: &[PlanSegment],
) -> Option<f64> {
    let rx = (u - k.cx) / k.fx;
    let ry = (v - k.cy) / k.fy;
    let rz = 1.0;
    let mut nearest = f64::INFINITY;

    let r2 = rx * rx + ry * ry + rz * rz;
    for (c, radius) in spheres {
        let rc = rx * c.x + ry * c.y + rz * c.z;
        let disc = rc * rc - r2 * (c.x * c.x + c.y * c.y + c.z * c.z - radius * radius);
        if disc < 0.0 {
            continue;
        }
        let t = (rc - disc.sqrt()) / r2;
        if t > 0.0 && t < nearest {
            nearest = t;
        }
    }

    for seg in segments {
        if let Some(t) = plan_ray_segment(rx, rz, seg) {
            let y_hit = t * ry;
            if y_hit >= seg.y_top && y_hit <= seg.y_bottom && t < nearest {
                nearest = t;
            }
        }
    }

    (nearest <= MAX_RANGE).then_some(nearest)
}

/// Samples the synthetic stereo depth image on a stride grid inside
/// `bbox` clipped to the image.
///
/// Each sampled pixel ray returns the nearest hit among head spheres and
/// occluders, perturbed by gaussian noise with
/// sigma = depth_sigma0 + depth_k * Z^2. Background pixels are invalid.
pub fn sample_depth_patch<R: Rng>(
    world: &WorldState,
    bbox: &BoundingBox,
    k: &CameraIntrinsics,
    params: &RobotParams,
    noise: &NoiseModel,
    rng: &mut R,
    stride: usize,
) -> Result<DepthPatch, PerceptionError> {
    assert!(stride >= 1, "stride must be at least 1");
    let u_lo = bbox.x.ceil().max(0.0) as i64;
    let u_hi = (bbox.x + bbox.w).floor().min(k.width - 1.0) as i64;
    let v_lo = bbox.y.ceil().max(0.0) as i64;
    let v_hi = (bbox.y + bbox.h).floor().min(k.height - 1.0) as i64;
    if u_lo > u_hi || v_lo > v_hi {
        return Err(PerceptionError::EmptyIntersection);
    }

    let spheres: Vec<(CameraPoint, f64)> = (0..world.persons.len())
        .map(|i| (head_camera_point(world, params, i), world.persons[i].head_radius))
        .collect();
    let segments = occluder_segments(world, params);

    let us: Vec<i64> = (u_lo..=u_hi).step_by(stride).collect();
    let vs: Vec<i64> = (v_lo..=v_hi).step_by(stride).collect();
    let mut samples = Vec::with_capacity(us.len() * vs.len());
    let mut valid = Vec::with_capacity(us.len() * vs.len());
    for &v in &vs {
        for &u in &us {
            match cast_pixel_ray(u as f64, v as f64, k, &spheres, &segments) {
                Some(z) => {
                    let sigma = noise.depth_sigma0 + noise.depth_k * z * z;
                    let z = (z + sample_normal(rng, sigma)).max(1e-3);
                    samples.push(z);
                    valid.push(true);
                }
                None => {
                    samples.push(0.0);
                    valid.push(false);
                }
            }
        }
    }
    Ok(DepthPatch {
        width: us.len(),
        height: vs.len(),
        samples,
        valid,
    })
}
