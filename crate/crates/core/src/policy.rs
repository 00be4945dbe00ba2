//! Scripted blind navigation controllers.
//!
//! A controller sees only the robot's pose, planar velocity and its own
//! previous command. It drives toward the goal and, when forward progress
//! stalls, sidesteps for a while before driving on. Variants differ in which
//! side they prefer, which spreads trajectories over different routes around
//! the obstacles.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2, Vec2};
use crate::rng::{self, Stream};
use crate::worldsim::{Twist, MAX_ANGULAR_SPEED, MAX_LINEAR_SPEED};

/// Observation history cap: 30 s at 25 Hz.
pub const HISTORY_MAX: usize = 750;
/// Ticks averaged for stall detection (1 s).
pub const STALL_WINDOW: usize = 25;
pub const NUM_VARIANTS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavObservation {
    pub pose: Pose2,
    /// World-frame planar velocity `(xdot, ydot)`.
    pub velocity: Vec2,
    pub prev_cmd: Twist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyVariant {
    pub id: u8,
    /// Probability of sidestepping to the left when stalled.
    pub lateral_bias: f64,
    pub probe_duration: u32,
    /// Mean forward speed (m/s) below which the robot counts as stalled.
    pub stall_threshold: f64,
    /// Heading error (rad) beyond which the turn rate saturates.
    pub heading_limit: f64,
}

impl PolicyVariant {
    pub fn builtin(id: u8) -> Result<PolicyVariant, PolicyError> {
        let base =
            PolicyVariant { id, lateral_bias: 0.5, probe_duration: 25, stall_threshold: 0.03, heading_limit: 0.3 };
        match id {
            1 => Ok(PolicyVariant { lateral_bias: 0.8, ..base }),
            2 => Ok(PolicyVariant { lateral_bias: 0.2, ..base }),
            3 => Ok(PolicyVariant { lateral_bias: 0.5, probe_duration: 50, ..base }),
            _ => Err(PolicyError::UnknownVariant(id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("unknown navigation policy variant {0} (expected 1..={NUM_VARIANTS})")]
    UnknownVariant(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Drive { ticks: usize },
    Probe { side: Side, remaining: u32 },
}

#[derive(Debug, Clone)]
pub struct NavPolicy {
    pub variant: PolicyVariant,
    mode: Mode,
    rng: ChaCha8Rng,
    probes: Vec<Side>,
}

/// Builtin variant `id` with its decision stream seeded from `seed`.
pub fn make_policy(id: u8, seed: u64) -> Result<NavPolicy, PolicyError> {
    Ok(NavPolicy::new(PolicyVariant::builtin(id)?, seed))
}

impl NavPolicy {
    pub fn new(variant: PolicyVariant, seed: u64) -> Self {
        let rng = rng::stream(rng::derive_seed(seed, variant.id as u64), Stream::Policy);
        NavPolicy { variant, mode: Mode::Drive { ticks: 0 }, rng, probes: Vec::new() }
    }

    /// Sides chosen at each stall so far.
    pub fn probe_history(&self) -> &[Side] {
        &self.probes
    }

    pub fn is_probing(&self) -> bool {
        matches!(self.mode, Mode::Probe { .. })
    }

    fn drive(&self, pose: Option<&Pose2>) -> Twist {
        let theta = pose.map_or(0.0, |p| p.theta);
        let omega = if theta.abs() > self.variant.heading_limit {
            -theta.signum() * MAX_ANGULAR_SPEED
        } else {
            (-2.0 * theta).clamp(-MAX_ANGULAR_SPEED, MAX_ANGULAR_SPEED)
        };
        Twist::new(MAX_LINEAR_SPEED, 0.0, omega)
    }

    fn sidestep(side: Side) -> Twist {
        match side {
            Side::Left => Twist::new(0.0, MAX_LINEAR_SPEED, 0.0),
            Side::Right => Twist::new(0.0, -MAX_LINEAR_SPEED, 0.0),
        }
    }

    /// Next velocity command given the observation history (oldest first).
    pub fn command(&mut self, history: &[NavObservation]) -> Twist {
        let history = &history[history.len().saturating_sub(HISTORY_MAX)..];
        let last = history.last();
        let cmd = match self.mode {
            Mode::Probe { side, remaining } if remaining > 0 => {
                self.mode = Mode::Probe { side, remaining: remaining - 1 };
                Self::sidestep(side)
            }
            Mode::Probe { .. } => {
                self.mode = Mode::Drive { ticks: 0 };
                self.drive(last.map(|o| &o.pose))
            }
            Mode::Drive { ticks } => {
                let ticks = ticks + 1;
                if ticks > STALL_WINDOW && history.len() >= STALL_WINDOW && self.stalled(history) {
                    let side = if self.rng.random_bool(self.variant.lateral_bias) { Side::Left } else { Side::Right };
                    self.probes.push(side);
                    self.mode = Mode::Probe { side, remaining: self.variant.probe_duration.saturating_sub(1) };
                    Self::sidestep(side)
                } else {
                    self.mode = Mode::Drive { ticks };
                    self.drive(last.map(|o| &o.pose))
                }
            }
        };
        cmd.clamped()
    }

    fn stalled(&self, history: &[NavObservation]) -> bool {
        let window = &history[history.len() - STALL_WINDOW..];
        let mean: f64 = window.iter().map(|o| o.velocity.x.abs()).sum::<f64>() / STALL_WINDOW as f64;
        mean < self.variant.stall_threshold
    }
}
