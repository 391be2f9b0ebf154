//! Person-following robot simulator.
//!
//! A deterministic desk-scale testbed for a camera-servoed follower:
//! a synthetic head detector and stereo depth sensor observe scripted
//! actors, a single-object tracker bridges occlusions, a median + EWMA
//! filter steadies the range measurement, and two PID loops turn the
//! result into differential-drive motion.

pub mod control;
pub mod estimation;
pub mod geometry;
pub mod perception;
pub mod pipeline;
pub mod scenario;
pub mod tracker;
pub mod world;
