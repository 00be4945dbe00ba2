//! Episode rollout, contact windows, contact modes and curation.
//!
//! A rollout records every tick. Trajectories handed to the model are usually
//! subsampled by a fixed stride; windows and the contact mode are computed on
//! the full-rate record first and carried along, so nothing about contact
//! timing is lost by subsampling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2, Vec2};
use crate::policy::{make_policy, NavObservation, NavPolicy, PolicyError, HISTORY_MAX};
use crate::proprio::{ProprioModel, ProprioSample};
use crate::rng::{self, Stream};
use crate::worldsim::{spawn_scene, Category, ContactLabel, ObstacleState, SimError, Twist, World};

/// 60 s at 25 Hz.
pub const T_MAX: u32 = 1500;
pub const DEFAULT_STRIDE: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub tick: u32,
    pub proprio: ProprioSample,
    pub obstacle_poses: Vec<Pose2>,
    pub contact_labels: Vec<ContactLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactWindow {
    pub obstacle: usize,
    pub t_first: u32,
    pub t_final: u32,
    /// Contact flag for each tick of `[t_first, t_final]`.
    pub per_step_contact: Vec<bool>,
}

impl ContactWindow {
    pub fn contains(&self, tick: u32) -> bool {
        self.t_first <= tick && tick <= self.t_final
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContactMode {
    NoContact,
    DirectMovable,
    DirectStatic,
    MovablePlusIndirectStatic,
    Multi,
}

impl ContactMode {
    pub const ALL: [ContactMode; 5] = [
        ContactMode::NoContact,
        ContactMode::DirectMovable,
        ContactMode::DirectStatic,
        ContactMode::MovablePlusIndirectStatic,
        ContactMode::Multi,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ContactMode::NoContact => "no-contact",
            ContactMode::DirectMovable => "direct-movable",
            ContactMode::DirectStatic => "direct-static",
            ContactMode::MovablePlusIndirectStatic => "movable+indirect-static",
            ContactMode::Multi => "multi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: u64,
    pub seed: u64,
    pub category: Category,
    pub policy_id: u8,
    /// Obstacle states before the first tick; sizes and physical parameters
    /// never change afterwards.
    pub obstacles: Vec<ObstacleState>,
    /// Ticks actually simulated, `min(t_goal, T_MAX)`.
    pub terminal_tick: u32,
    pub goal_reached: bool,
    /// Tick spacing of `steps`.
    pub stride: u32,
    pub steps: Vec<TrajectoryStep>,
    pub windows: Vec<ContactWindow>,
    pub contact_mode: ContactMode,
}

impl Trajectory {
    /// Keeps steps whose tick is a multiple of `stride`.
    pub fn subsample(&self, stride: u32) -> Trajectory {
        let stride = stride.max(1);
        let mut out = self.clone();
        out.stride = self.stride * stride;
        out.steps.retain(|s| s.tick % out.stride == 0);
        out
    }

    pub fn window(&self, obstacle: usize) -> Option<&ContactWindow> {
        self.windows.iter().find(|w| w.obstacle == obstacle)
    }

    /// Contacted obstacles ordered by first contact, ties by index.
    pub fn slot_order(&self) -> Vec<usize> {
        let mut w: Vec<&ContactWindow> = self.windows.iter().collect();
        w.sort_by_key(|w| (w.t_first, w.obstacle));
        w.iter().map(|w| w.obstacle).collect()
    }

    /// Robot position averaged over ticks with any obstacle contact.
    pub fn mean_contact_position(&self) -> Option<Vec2> {
        let mut sum = Vec2::ZERO;
        let mut n = 0usize;
        for s in &self.steps {
            if s.contact_labels.iter().any(|l| l.in_contact()) {
                sum = sum + s.proprio.pose.position();
                n += 1;
            }
        }
        (n > 0).then(|| sum * (1.0 / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub stride: u32,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Spawns the scene for `category` and rolls it.
pub fn roll_episode(
    category: Category,
    policy_id: u8,
    seed: u64,
    proprio: &ProprioModel,
) -> Result<Trajectory, DatasetError> {
    let world = spawn_scene(category, rng::derive_seed(seed, Stream::Scene as u64))?;
    roll_world(world, category, policy_id, seed, proprio)
}

/// Rolls a prepared world until the goal or `T_MAX`.
pub fn roll_world(
    world: World,
    category: Category,
    policy_id: u8,
    seed: u64,
    proprio: &ProprioModel,
) -> Result<Trajectory, DatasetError> {
    Ok(roll_with(world, category, make_policy(policy_id, seed)?, seed, proprio))
}

/// [`roll_world`] with an explicit controller.
pub fn roll_with(
    mut world: World,
    category: Category,
    mut policy: NavPolicy,
    seed: u64,
    proprio: &ProprioModel,
) -> Trajectory {
    let policy_id = policy.variant.id;
    let mut noise = rng::stream(seed, Stream::SensorNoise);
    let obstacles = world.obstacles.clone();
    let mut history: Vec<NavObservation> = Vec::with_capacity(HISTORY_MAX);
    let mut steps = Vec::new();
    let mut prev_cmd = Twist::ZERO;
    let mut goal_reached = false;

    for tick in 0..T_MAX {
        let cmd = policy.command(&history);
        let out = world.step(cmd);
        let labels = world.contact_graph();
        let sample =
            proprio.assemble(tick as f64 * world.dt, &cmd.clamped(), &out.net_wrench, out.robot_pose, &mut noise);
        steps.push(TrajectoryStep {
            tick,
            proprio: sample,
            obstacle_poses: world.obstacles.iter().map(|o| o.pose).collect(),
            contact_labels: labels,
        });
        if history.len() == HISTORY_MAX {
            history.remove(0);
        }
        history.push(NavObservation {
            pose: out.robot_pose,
            velocity: Vec2::new(out.velocity.vx, out.velocity.vy),
            prev_cmd,
        });
        prev_cmd = cmd;
        if out.goal_reached {
            goal_reached = true;
            break;
        }
    }

    let mut traj = Trajectory {
        episode: 0,
        seed,
        category,
        policy_id,
        obstacles,
        terminal_tick: steps.len() as u32,
        goal_reached,
        stride: 1,
        steps,
        windows: Vec::new(),
        contact_mode: ContactMode::NoContact,
    };
    traj.windows = compute_contact_windows(&traj.steps, traj.obstacles.len());
    traj.contact_mode = classify_contact_mode(&traj.steps, &traj.obstacles);
    traj
}

/// Windows `[t_first_i, t_final]` where `t_final` is the last contact tick of
/// any obstacle. Steps are expected at full rate.
pub fn compute_contact_windows(steps: &[TrajectoryStep], num_obstacles: usize) -> Vec<ContactWindow> {
    let mut first: Vec<Option<u32>> = alloc::vec![None; num_obstacles];
    let mut t_final: Option<u32> = None;
    for s in steps {
        for (i, l) in s.contact_labels.iter().enumerate() {
            if l.in_contact() {
                first[i].get_or_insert(s.tick);
                t_final = Some(t_final.map_or(s.tick, |t| t.max(s.tick)));
            }
        }
    }
    let Some(t_final) = t_final else { return Vec::new() };
    first
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let t_first = (*f)?;
            let per_step_contact = steps
                .iter()
                .filter(|s| s.tick >= t_first && s.tick <= t_final)
                .map(|s| s.contact_labels[i].in_contact())
                .collect();
            Some(ContactWindow { obstacle: i, t_first, t_final, per_step_contact })
        })
        .collect()
}

pub fn classify_contact_mode(steps: &[TrajectoryStep], obstacles: &[ObstacleState]) -> ContactMode {
    let (mut direct_movable, mut direct_static, mut indirect_static, mut indirect_movable) =
        (false, false, false, false);
    for s in steps {
        for (l, o) in s.contact_labels.iter().zip(obstacles) {
            match (l, o.is_static) {
                (ContactLabel::Direct, false) => direct_movable = true,
                (ContactLabel::Direct, true) => direct_static = true,
                (ContactLabel::Indirect, true) => indirect_static = true,
                (ContactLabel::Indirect, false) => indirect_movable = true,
                (ContactLabel::None, _) => {}
            }
        }
    }
    match (direct_movable, direct_static, indirect_static, indirect_movable) {
        (false, false, false, false) => ContactMode::NoContact,
        (true, false, false, false) => ContactMode::DirectMovable,
        (false, true, false, false) => ContactMode::DirectStatic,
        (true, false, true, false) => ContactMode::MovablePlusIndirectStatic,
        _ => ContactMode::Multi,
    }
}

/// Counts per contact mode and policy variant.
pub type Histogram = BTreeMap<(ContactMode, u8), usize>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurationReport {
    pub cap_per_mode: usize,
    pub before: Vec<((ContactMode, u8), usize)>,
    pub after: Vec<((ContactMode, u8), usize)>,
}

impl CurationReport {
    pub fn mode_totals(cells: &[((ContactMode, u8), usize)]) -> BTreeMap<ContactMode, usize> {
        let mut m = BTreeMap::new();
        for ((mode, _), n) in cells {
            *m.entry(*mode).or_insert(0) += n;
        }
        m
    }

    /// Plain-text table, one row per mode, one column per policy.
    pub fn to_table(&self) -> String {
        use core::fmt::Write;
        let mut policies: Vec<u8> = self.before.iter().map(|((_, p), _)| *p).collect();
        policies.sort_unstable();
        policies.dedup();
        let lookup = |cells: &[((ContactMode, u8), usize)], m: ContactMode, p: u8| {
            cells.iter().find(|(k, _)| *k == (m, p)).map_or(0, |(_, n)| *n)
        };
        let mut s = String::new();
        let _ = writeln!(s, "curation (cap {} per mode and policy)", self.cap_per_mode);
        let _ = write!(s, "{:<26}", "mode");
        for p in &policies {
            let _ = write!(s, " {:>13}", alloc::format!("policy {p}"));
        }
        let _ = writeln!(s, " {:>13}", "total");
        for m in ContactMode::ALL {
            let _ = write!(s, "{:<26}", m.name());
            let (mut tb, mut ta) = (0, 0);
            for &p in &policies {
                let (b, a) = (lookup(&self.before, m, p), lookup(&self.after, m, p));
                tb += b;
                ta += a;
                let _ = write!(s, " {:>13}", alloc::format!("{b} -> {a}"));
            }
            let _ = writeln!(s, " {:>13}", alloc::format!("{tb} -> {ta}"));
        }
        s
    }
}

pub fn histogram(trajectories: &[Trajectory]) -> Histogram {
    let mut h = Histogram::new();
    for t in trajectories {
        *h.entry((t.contact_mode, t.policy_id)).or_insert(0) += 1;
    }
    h
}

fn cells_of(trajectories: &[Trajectory]) -> BTreeMap<(ContactMode, u8), Vec<usize>> {
    let mut cells: BTreeMap<(ContactMode, u8), Vec<usize>> = BTreeMap::new();
    for (i, t) in trajectories.iter().enumerate() {
        cells.entry((t.contact_mode, t.policy_id)).or_default().push(i);
    }
    cells
}

fn shuffled_cells(trajectories: &[Trajectory], seed: u64) -> BTreeMap<(ContactMode, u8), Vec<usize>> {
    let mut rng = rng::stream(seed, Stream::Curation);
    let mut cells = cells_of(trajectories);
    for members in cells.values_mut() {
        members.shuffle(&mut rng);
    }
    cells
}

fn finish(trajectories: Vec<Trajectory>, mut keep: Vec<usize>, cap: usize) -> (Vec<Trajectory>, CurationReport) {
    keep.sort_unstable();
    let before = histogram(&trajectories).into_iter().collect();
    let mut slots: Vec<Option<Trajectory>> = trajectories.into_iter().map(Some).collect();
    let kept: Vec<Trajectory> = keep.iter().filter_map(|&i| slots[i].take()).collect();
    let after = histogram(&kept).into_iter().collect();
    (kept, CurationReport { cap_per_mode: cap, before, after })
}

/// Keeps at most `cap` trajectories per (mode, policy) cell, chosen by a
/// seeded shuffle. Survivors keep their input order.
pub fn curate(trajectories: Vec<Trajectory>, cap: usize, seed: u64) -> (Vec<Trajectory>, CurationReport) {
    let keep = shuffled_cells(&trajectories, seed).into_values().flat_map(|m| m.into_iter().take(cap)).collect();
    finish(trajectories, keep, cap)
}

/// Curates with the smallest cap that reaches `target`, then trims the
/// fullest cells by one each until exactly `target` remain. Returns fewer
/// only when the input itself is smaller.
pub fn curate_to_target(trajectories: Vec<Trajectory>, target: usize, seed: u64) -> (Vec<Trajectory>, CurationReport) {
    let cells = shuffled_cells(&trajectories, seed);
    let total = |cap: usize| cells.values().map(|m| m.len().min(cap)).sum::<usize>();
    let largest = cells.values().map(Vec::len).max().unwrap_or(0);
    let (mut lo, mut hi) = (0, largest);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if total(mid) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let cap = lo;
    let mut excess = total(cap).saturating_sub(target);
    let mut keep = Vec::new();
    for members in cells.values() {
        let mut n = members.len().min(cap);
        if excess > 0 && members.len() >= cap && cap > 0 {
            n -= 1;
            excess -= 1;
        }
        keep.extend_from_slice(&members[..n]);
    }
    finish(trajectories, keep, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn step(tick: u32, labels: &[ContactLabel]) -> TrajectoryStep {
        TrajectoryStep {
            tick,
            proprio: ProprioSample {
                q: [0.0; 12],
                qdot: [0.0; 12],
                tau: [0.0; 12],
                pose: Pose2::IDENTITY,
                cmd: Twist::ZERO,
            },
            obstacle_poses: vec![Pose2::IDENTITY; labels.len()],
            contact_labels: labels.to_vec(),
        }
    }

    fn scripted(n: u32, spans: &[(u32, u32)]) -> Vec<TrajectoryStep> {
        (0..n)
            .map(|t| {
                let l: Vec<ContactLabel> = spans
                    .iter()
                    .map(|&(a, b)| if t >= a && t <= b { ContactLabel::Direct } else { ContactLabel::None })
                    .collect();
                step(t, &l)
            })
            .collect()
    }

    #[test]
    fn windows_share_final_tick() {
        let w = compute_contact_windows(&scripted(100, &[(10, 50), (30, 70)]), 2);
        assert_eq!((w[0].t_first, w[0].t_final), (10, 70));
        assert_eq!((w[1].t_first, w[1].t_final), (30, 70));
        assert_eq!(w[0].per_step_contact.len(), 61);
        assert!(w[0].per_step_contact[0] && !w[0].per_step_contact[60]);
    }

    #[test]
    fn single_tick_and_empty_windows() {
        let w = compute_contact_windows(&scripted(10, &[(5, 5)]), 1);
        assert_eq!((w[0].t_first, w[0].t_final), (5, 5));
        assert_eq!(w[0].per_step_contact, vec![true]);
        assert!(compute_contact_windows(&scripted(10, &[(20, 30)]), 1).is_empty());
    }

    fn obstacle(is_static: bool) -> ObstacleState {
        ObstacleState { is_static, pose: Pose2::IDENTITY, width: 0.5, length: 0.5, mass: 1.0, friction: 0.5 }
    }

    #[test]
    fn modes() {
        use ContactLabel::*;
        let obs = [obstacle(false), obstacle(true)];
        let m = |l: &[ContactLabel]| classify_contact_mode(&[step(0, &[None, None]), step(1, l)], &obs);
        assert_eq!(m(&[None, None]), ContactMode::NoContact);
        assert_eq!(m(&[Direct, None]), ContactMode::DirectMovable);
        assert_eq!(m(&[None, Direct]), ContactMode::DirectStatic);
        assert_eq!(m(&[Direct, Indirect]), ContactMode::MovablePlusIndirectStatic);
        assert_eq!(m(&[Direct, Direct]), ContactMode::Multi);
    }

    fn fake(policy: u8, mode: ContactMode, episode: u64) -> Trajectory {
        Trajectory {
            episode,
            seed: episode,
            category: Category::Easy,
            policy_id: policy,
            obstacles: Vec::new(),
            terminal_tick: 0,
            goal_reached: true,
            stride: 1,
            steps: Vec::new(),
            windows: Vec::new(),
            contact_mode: mode,
        }
    }

    #[test]
    fn curation_caps_cells() {
        let all: Vec<Trajectory> = (0..40).map(|i| fake(1, ContactMode::DirectMovable, i)).collect();
        let (kept, report) = curate(all.clone(), 10, 3);
        assert_eq!(kept.len(), 10);
        assert!(kept.windows(2).all(|w| w[0].episode < w[1].episode));
        assert!(kept.iter().all(|k| all.contains(k)));
        assert_eq!(report.after, vec![((ContactMode::DirectMovable, 1), 10)]);
        let (same, _) = curate(all[..5].to_vec(), 10, 3);
        assert_eq!(same, all[..5].to_vec());
    }

    #[test]
    fn curate_to_target_is_exact() {
        let mut all = Vec::new();
        let mut e = 0;
        for (p, n) in [(1u8, 50), (2, 7), (3, 30)] {
            for mode in [ContactMode::NoContact, ContactMode::DirectMovable] {
                for _ in 0..n {
                    all.push(fake(p, mode, e));
                    e += 1;
                }
            }
        }
        for target in [0, 1, 13, 60, 100, 174, 500] {
            let (kept, _) = curate_to_target(all.clone(), target, 9);
            assert_eq!(kept.len(), target.min(all.len()), "target {target}");
        }
    }
}
