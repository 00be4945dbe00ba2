//! Trot-gait proprioception surrogate.
//!
//! Joint positions follow a fixed sinusoidal trot whose amplitude grows with
//! the commanded speed. Joint torques are a baseline profile of the gait plus
//! the contact wrench routed to whichever legs are in stance. Obstacles can
//! therefore only show up in the torques (and in the robot pose, which is
//! recorded alongside).

use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::math;
use crate::worldsim::{Twist, Wrench, MAX_ANGULAR_SPEED, MAX_LINEAR_SPEED};

pub const NUM_LEGS: usize = 4;
pub const JOINTS_PER_LEG: usize = 3;
pub const NUM_JOINTS: usize = NUM_LEGS * JOINTS_PER_LEG;

/// Leg order used for every 12-vector: front-right, front-left, rear-right, rear-left.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

pub type JointVector = [f64; NUM_JOINTS];

/// Constants of the gait surrogate. The defaults mirror `config/gait.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitConstants {
    /// Stepping frequency in Hz.
    pub step_frequency: f64,
    /// Per-leg phase offsets in radians. Diagonal pairs share a phase.
    pub leg_phase: [f64; NUM_LEGS],
    /// Hip, thigh, calf phase lag within a leg.
    pub joint_lag: [f64; JOINTS_PER_LEG],
    /// Standing posture (hip, thigh, calf), identical for every leg.
    pub offset: [f64; JOINTS_PER_LEG],
    /// Swing amplitude per unit of normalized command magnitude.
    pub amplitude: [f64; JOINTS_PER_LEG],
    /// Constant load torque of the baseline profile.
    pub gravity_torque: [f64; JOINTS_PER_LEG],
    pub stiffness: [f64; JOINTS_PER_LEG],
    pub damping: [f64; JOINTS_PER_LEG],
    /// Response of each joint type to the body wrench `(fx, fy, torque)`.
    /// The `fy` column of the hip flips sign on left legs.
    pub wrench_gain: [[f64; 3]; JOINTS_PER_LEG],
}

impl Default for GaitConstants {
    fn default() -> Self {
        GaitConstants {
            step_frequency: 2.0,
            leg_phase: [0.0, PI, PI, 0.0],
            joint_lag: [0.0, 0.0, 0.5 * PI],
            offset: [0.0, 0.8, -1.5],
            amplitude: [0.05, 0.25, 0.35],
            gravity_torque: [0.0, -1.5, 4.0],
            stiffness: [5.0, 8.0, 8.0],
            damping: [0.2, 0.3, 0.3],
            wrench_gain: [[0.0, 0.02, 0.05], [0.03, 0.0, 0.01], [0.05, 0.0, 0.0]],
        }
    }
}

impl GaitConstants {
    /// Total torque deviation per newton of `fx`, summed over all joints.
    pub fn fx_deviation_constant(&self) -> f64 {
        self.wrench_gain.iter().map(|g| g[0]).sum()
    }
}

/// Standard deviations of the additive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub q: f64,
    pub qdot: f64,
    pub tau: f64,
}

impl NoiseLevels {
    pub const ZERO: NoiseLevels = NoiseLevels { q: 0.0, qdot: 0.0, tau: 0.0 };
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels { q: 0.005, qdot: 0.05, tau: 0.2 }
    }
}

/// One tick of proprioception together with the pose and command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioSample {
    pub q: JointVector,
    pub qdot: JointVector,
    pub tau: JointVector,
    pub pose: Pose2,
    pub cmd: Twist,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitState {
    pub t: f64,
    pub q: JointVector,
    pub qdot: JointVector,
}

/// Magnitude of a command relative to the velocity limits; linear in the command.
pub fn command_magnitude(cmd: &Twist) -> f64 {
    let (a, b, c) = (cmd.vx / MAX_LINEAR_SPEED, cmd.vy / MAX_LINEAR_SPEED, cmd.omega / MAX_ANGULAR_SPEED);
    math::sqrt(a * a + b * b + c * c)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProprioModel {
    pub gait: GaitConstants,
    pub noise: NoiseLevels,
}

impl ProprioModel {
    pub fn new(gait: GaitConstants, noise: NoiseLevels) -> Self {
        Self { gait, noise }
    }

    fn omega(&self) -> f64 {
        2.0 * PI * self.gait.step_frequency
    }

    pub fn gait_state(&self, t: f64, cmd: &Twist) -> GaitState {
        let g = &self.gait;
        let mag = command_magnitude(cmd);
        let w = self.omega();
        let mut q = [0.0; NUM_JOINTS];
        let mut qdot = [0.0; NUM_JOINTS];
        for leg in 0..NUM_LEGS {
            for j in 0..JOINTS_PER_LEG {
                let i = leg * JOINTS_PER_LEG + j;
                let amp = g.amplitude[j] * mag;
                let phase = w * t + g.leg_phase[leg] + g.joint_lag[j];
                q[i] = g.offset[j] + amp * math::sin(phase);
                qdot[i] = amp * w * math::cos(phase);
            }
        }
        GaitState { t, q, qdot }
    }

    pub fn baseline_torque(&self, gait: &GaitState) -> JointVector {
        let g = &self.gait;
        let mut tau = [0.0; NUM_JOINTS];
        for (i, t) in tau.iter_mut().enumerate() {
            let j = i % JOINTS_PER_LEG;
            *t = g.gravity_torque[j] + g.stiffness[j] * (gait.q[i] - g.offset[j]) + g.damping[j] * gait.qdot[i];
        }
        tau
    }

    /// Legs whose foot phase has `sin < 0` carry the load. If none qualify
    /// (an exact phase crossing) every leg shares it.
    pub fn stance_legs(&self, t: f64) -> [bool; NUM_LEGS] {
        let w = self.omega();
        let mut stance = [false; NUM_LEGS];
        for (leg, s) in stance.iter_mut().enumerate() {
            *s = math::sin(w * t + self.gait.leg_phase[leg]) < 0.0;
        }
        if !stance.iter().any(|&s| s) {
            stance = [true; NUM_LEGS];
        }
        stance
    }

    /// The 12x3 matrix routing a body wrench onto joint torques at time `t`.
    pub fn load_distribution(&self, t: f64) -> [[f64; 3]; NUM_JOINTS] {
        let stance = self.stance_legs(t);
        let share = 1.0 / stance.iter().filter(|&&s| s).count() as f64;
        let mut g = [[0.0; 3]; NUM_JOINTS];
        for leg in 0..NUM_LEGS {
            if !stance[leg] {
                continue;
            }
            let left = leg % 2 == 1;
            for j in 0..JOINTS_PER_LEG {
                let mut row = self.gait.wrench_gain[j];
                if left && j == 0 {
                    row[1] = -row[1];
                }
                g[leg * JOINTS_PER_LEG + j] = [row[0] * share, row[1] * share, row[2] * share];
            }
        }
        g
    }

    /// Baseline torques plus the routed wrench, then additive sensor noise.
    pub fn effort_channels<R: Rng + ?Sized>(&self, gait: &GaitState, wrench: &Wrench, rng: &mut R) -> JointVector {
        let mut tau = self.baseline_torque(gait);
        let dist = self.load_distribution(gait.t);
        for (t, row) in tau.iter_mut().zip(dist.iter()) {
            *t += row[0] * wrench.fx + row[1] * wrench.fy + row[2] * wrench.torque;
        }
        add_noise(&mut tau, self.noise.tau, rng);
        tau
    }

    pub fn assemble<R: Rng + ?Sized>(
        &self,
        t: f64,
        cmd: &Twist,
        wrench: &Wrench,
        pose: Pose2,
        rng: &mut R,
    ) -> ProprioSample {
        let gait = self.gait_state(t, cmd);
        let tau = self.effort_channels(&gait, wrench, rng);
        let mut q = gait.q;
        let mut qdot = gait.qdot;
        add_noise(&mut q, self.noise.q, rng);
        add_noise(&mut qdot, self.noise.qdot, rng);
        ProprioSample { q, qdot, tau, pose, cmd: *cmd }
    }
}

fn add_noise<R: Rng + ?Sized>(values: &mut JointVector, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    for v in values.iter_mut() {
        *v += normal.sample(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> ProprioModel {
        ProprioModel::new(GaitConstants::default(), NoiseLevels::ZERO)
    }

    #[test]
    fn standing_has_no_motion() {
        let m = quiet();
        let s = m.gait_state(1.37, &Twist::ZERO);
        for i in 0..NUM_JOINTS {
            assert_eq!(s.q[i], m.gait.offset[i % 3]);
            assert_eq!(s.qdot[i], 0.0);
        }
    }

    #[test]
    fn diagonal_legs_move_together() {
        let m = quiet();
        let s = m.gait_state(0.731, &Twist::new(0.4, 0.1, 0.2));
        assert_eq!(s.q[0..3], s.q[9..12]);
        assert_eq!(s.q[3..6], s.q[6..9]);
        assert_ne!(s.q[0..3], s.q[3..6]);
    }

    #[test]
    fn gait_is_periodic() {
        let m = quiet();
        let cmd = Twist::new(0.4, 0.0, 0.0);
        let a = m.gait_state(0.3, &cmd);
        let b = m.gait_state(0.8, &cmd);
        for i in 0..NUM_JOINTS {
            assert!((a.q[i] - b.q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn qdot_matches_finite_difference() {
        let m = quiet();
        let cmd = Twist::new(0.25, -0.1, 0.3);
        let h = 1e-6;
        let (lo, mid, hi) = (m.gait_state(0.42 - h, &cmd), m.gait_state(0.42, &cmd), m.gait_state(0.42 + h, &cmd));
        for i in 0..NUM_JOINTS {
            let fd = (hi.q[i] - lo.q[i]) / (2.0 * h);
            assert!((fd - mid.qdot[i]).abs() < 1e-6, "joint {i}: {fd} vs {}", mid.qdot[i]);
        }
    }

    #[test]
    fn amplitude_is_linear_in_command() {
        let m = quiet();
        let a = m.gait_state(0.1, &Twist::new(0.2, 0.0, 0.0));
        let b = m.gait_state(0.1, &Twist::new(0.4, 0.0, 0.0));
        for i in 0..NUM_JOINTS {
            let off = m.gait.offset[i % 3];
            assert!(((b.q[i] - off) - 2.0 * (a.q[i] - off)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_wrench_gives_baseline() {
        let m = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = m.gait_state(0.9, &Twist::new(0.4, 0.0, 0.0));
        assert_eq!(m.effort_channels(&g, &Wrench::ZERO, &mut rng), m.baseline_torque(&g));
    }

    #[test]
    fn wrench_deviation_is_linear_with_documented_constant() {
        let m = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &t in &[0.0, 0.1, 0.33, 0.6, 0.87] {
            let g = m.gait_state(t, &Twist::new(0.4, 0.0, 0.0));
            let base = m.baseline_torque(&g);
            let w = Wrench { fx: -10.0, fy: 0.0, torque: 0.0 };
            let one = m.effort_channels(&g, &w, &mut rng);
            let two = m.effort_channels(&g, &w.scaled(2.0), &mut rng);
            let sum: f64 = one.iter().zip(base.iter()).map(|(a, b)| a - b).sum();
            assert!((sum - (-10.0 * m.gait.fx_deviation_constant())).abs() < 1e-12);
            for i in 0..NUM_JOINTS {
                assert!(((two[i] - base[i]) - 2.0 * (one[i] - base[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn only_stance_legs_take_load() {
        let m = quiet();
        let t = 0.1;
        let stance = m.stance_legs(t);
        assert_eq!(stance.iter().filter(|&&s| s).count(), 2);
        let dist = m.load_distribution(t);
        for leg in 0..NUM_LEGS {
            let loaded = dist[leg * 3..leg * 3 + 3].iter().any(|r| r.iter().any(|&v| v != 0.0));
            assert_eq!(loaded, stance[leg]);
        }
    }

    #[test]
    fn contact_changes_only_torques() {
        let m = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cmd = Twist::new(0.4, 0.0, 0.0);
        let free = m.assemble(1.2, &cmd, &Wrench::ZERO, Pose2::IDENTITY, &mut rng);
        let blocked = m.assemble(1.2, &cmd, &Wrench { fx: -20.0, fy: 3.0, torque: 1.0 }, Pose2::IDENTITY, &mut rng);
        assert_eq!(free.q, blocked.q);
        assert_eq!(free.qdot, blocked.qdot);
        assert_ne!(free.tau, blocked.tau);
    }

    #[test]
    fn noise_is_seeded() {
        let m = ProprioModel::default();
        let cmd = Twist::new(0.4, 0.0, 0.0);
        let a = m.assemble(0.5, &cmd, &Wrench::ZERO, Pose2::IDENTITY, &mut ChaCha8Rng::seed_from_u64(9));
        let b = m.assemble(0.5, &cmd, &Wrench::ZERO, Pose2::IDENTITY, &mut ChaCha8Rng::seed_from_u64(9));
        let c = m.assemble(0.5, &cmd, &Wrench::ZERO, Pose2::IDENTITY, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
