//! Pinhole/stereo camera math and bounding-box algebra.
//!
//! Camera frame convention: Z forward, X right, Y down. All boxes are
//! continuous-valued; rasterization to integer pixels happens only in
//! depth-patch sampling.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point depth must be positive (got {0})")]
    NonPositiveDepth(f64),
    #[error("disparity must be positive (got {0})")]
    NonPositiveDisparity(f64),
    #[error("bounding box extents must be positive (w={w}, h={h})")]
    DegenerateBox { w: f64, h: f64 },
}

/// Pinhole intrinsics plus the stereo baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Focal length in pixels, horizontal.
    pub fx: f64,
    /// Focal length in pixels, vertical.
    pub fy: f64,
    /// Principal point, horizontal (pixels).
    pub cx: f64,
    /// Principal point, vertical (pixels).
    pub cy: f64,
    /// Image width in pixels.
    pub width: f64,
    /// Image height in pixels.
    pub height: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
}

impl CameraIntrinsics {
    /// Half of the horizontal field of view, radians.
    pub fn half_hfov(&self) -> f64 {
        (self.width / (2.0 * self.fx)).atan()
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            baseline: 0.1,
        }
    }
}

/// Axis-aligned pixel-space box, top-left anchored, continuous-valued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::DegenerateBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Box constructed from its center point and extents.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// A point in the camera frame (meters): Z forward, X right, Y down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CameraPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Distance from the camera origin in the horizontal (X, Z) plane.
    pub fn plan_range(&self) -> f64 {
        self.x.hypot(self.z)
    }
}

/// Projects a camera-frame point to pixel coordinates.
///
/// The result may lie outside the image; callers clamp.
pub fn project_point(k: &CameraIntrinsics, p: CameraPoint) -> Result<(f64, f64), GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Back-projects a pixel at known depth to a camera-frame point.
pub fn back_project(k: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Result<CameraPoint, GeometryError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(CameraPoint::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z))
}

/// Depth from stereo disparity: Z = fx * baseline / d.
pub fn depth_from_disparity(k: &CameraIntrinsics, d: f64) -> Result<f64, GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::NonPositiveDisparity(d));
    }
    Ok(k.fx * k.baseline / d)
}

/// Disparity a stereo unit would report for a point at depth Z.
pub fn disparity_from_depth(k: &CameraIntrinsics, z: f64) -> Result<f64, GeometryError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(k.fx * k.baseline / z)
}

/// Image box of a head modeled as a sphere of `radius` at `center`.
///
/// Small-sphere approximation: the box is centered on the projected center
/// with extents 2*f*radius/Z; the error vs the exact conic outline is
/// O((radius/Z)^2).
pub fn project_head_bbox(
    k: &CameraIntrinsics,
    center: CameraPoint,
    radius: f64,
) -> Result<BoundingBox, GeometryError> {
    if center.z <= radius {
        return Err(GeometryError::NonPositiveDepth(center.z - radius));
    }
    let (u, v) = project_point(k, center)?;
    let w = 2.0 * k.fx * radius / center.z;
    let h = 2.0 * k.fy * radius / center.z;
    BoundingBox::from_center(u, v, w, h)
}

/// Intersection-over-union of two boxes, in [0, 1].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}
