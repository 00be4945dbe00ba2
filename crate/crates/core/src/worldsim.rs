//! Quasi-static planar corridor world.
//!
//! The robot and the obstacles are oriented boxes inside a walled corridor
//! spanning `x in [0, 4]`, `y in [-1, 1]`. Bodies have no inertia: a movable
//! obstacle moves only while something pushes into it, and every tick ends
//! with the overlaps removed by a fixed number of projection passes.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{convex_clip, minimal_translation, obb_corners, polygon_centroid, wrap_angle, Obb, Pose2, Vec2};

pub const CORRIDOR_LENGTH: f64 = 4.0;
pub const CORRIDOR_WIDTH: f64 = 2.0;
pub const GOAL_X: f64 = 3.2;
pub const ROBOT_LENGTH: f64 = 0.65;
pub const ROBOT_WIDTH: f64 = 0.30;
pub const ROBOT_START: Pose2 = Pose2 { x: 0.5, y: 0.0, theta: 0.0 };
pub const DT: f64 = 0.04;
pub const MAX_LINEAR_SPEED: f64 = 0.4;
pub const MAX_ANGULAR_SPEED: f64 = 0.8;
pub const N_MAX: usize = 3;
/// Contact stiffness used to turn absorbed penetration into a force (N/m).
pub const CONTACT_STIFFNESS: f64 = 2000.0;
pub const PUSH_PASSES: usize = 8;
pub const RESIDUAL_TOLERANCE: f64 = 1e-4;
pub const MAX_ROTATION_PER_PASS: f64 = 0.1;
/// Overlaps at or below this depth are ignored.
const PENETRATION_EPS: f64 = 1e-9;
const WALL_THICKNESS: f64 = 1.0;
const SPAWN_ATTEMPTS: usize = 1000;

/// Obstacle extents accepted by the world.
pub const MIN_EXTENT: f64 = 0.1;
pub const MAX_EXTENT: f64 = 1.8;

/// Domain-randomization ranges for spawned obstacles.
pub mod ranges {
    pub const MOVABLE_MASS: (f64, f64) = (1.0, 8.0);
    pub const FRICTION: (f64, f64) = (0.1, 0.8);
    /// Movable boxes are long frontal planks: the long side spans the corridor.
    pub const MOVABLE_WIDTH: (f64, f64) = (0.8, 1.8);
    pub const MOVABLE_LENGTH: (f64, f64) = (0.2, 0.4);
    pub const STATIC_SIDE: (f64, f64) = (0.3, 0.8);
}

/// Body-frame velocity command `(vx, vy, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { vx: 0.0, vy: 0.0, omega: 0.0 };

    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn clamped(&self) -> Twist {
        Twist {
            vx: self.vx.clamp(-MAX_LINEAR_SPEED, MAX_LINEAR_SPEED),
            vy: self.vy.clamp(-MAX_LINEAR_SPEED, MAX_LINEAR_SPEED),
            omega: self.omega.clamp(-MAX_ANGULAR_SPEED, MAX_ANGULAR_SPEED),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.omega == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Obstacle-free corridor, used for debugging and calibration.
    Empty,
    Easy,
    Medium,
    Hard,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Easy, Category::Medium, Category::Hard];

    pub fn name(&self) -> &'static str {
        match self {
            Category::Empty => "empty",
            Category::Easy => "easy",
            Category::Medium => "medium",
            Category::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        match s.to_ascii_lowercase().as_str() {
            "empty" => Some(Category::Empty),
            "easy" => Some(Category::Easy),
            "medium" => Some(Category::Medium),
            "hard" => Some(Category::Hard),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub is_static: bool,
    pub pose: Pose2,
    /// Extent along the local y axis.
    pub width: f64,
    /// Extent along the local x axis.
    pub length: f64,
    /// Ignored for static obstacles.
    pub mass: f64,
    pub friction: f64,
}

impl ObstacleState {
    pub fn obb(&self) -> Obb {
        Obb::new(self.pose, self.width, self.length)
    }

    /// Fraction of an imposed overlap a pusher can actually displace this body by.
    pub fn push_compliance(&self) -> f64 {
        1.0 / (1.0 + self.friction * self.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Wall {
    Start,
    End,
    Right,
    Left,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Start, Wall::End, Wall::Right, Wall::Left];

    pub fn obb(&self) -> Obb {
        let half_t = 0.5 * WALL_THICKNESS;
        let span_x = CORRIDOR_LENGTH + 2.0 * WALL_THICKNESS;
        let span_y = CORRIDOR_WIDTH + 2.0 * WALL_THICKNESS;
        let half_w = 0.5 * CORRIDOR_WIDTH;
        match self {
            Wall::Start => Obb::new(Pose2::new(-half_t, 0.0, 0.0), span_y, WALL_THICKNESS),
            Wall::End => Obb::new(Pose2::new(CORRIDOR_LENGTH + half_t, 0.0, 0.0), span_y, WALL_THICKNESS),
            Wall::Right => Obb::new(Pose2::new(0.5 * CORRIDOR_LENGTH, -half_w - half_t, 0.0), WALL_THICKNESS, span_x),
            Wall::Left => Obb::new(Pose2::new(0.5 * CORRIDOR_LENGTH, half_w + half_t, 0.0), WALL_THICKNESS, span_x),
        }
    }
}

/// Anything that can take part in a contact. Ordering is robot, obstacles, walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Body {
    Robot,
    Obstacle(usize),
    Wall(Wall),
}

/// Unordered contact pair, stored with the smaller body first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContactEdge(pub Body, pub Body);

impl ContactEdge {
    pub fn new(a: Body, b: Body) -> Self {
        if a <= b {
            ContactEdge(a, b)
        } else {
            ContactEdge(b, a)
        }
    }

    pub fn involves(&self, body: Body) -> bool {
        self.0 == body || self.1 == body
    }
}

/// Net contact wrench on the robot, expressed in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub fx: f64,
    pub fy: f64,
    pub torque: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench { fx: 0.0, fy: 0.0, torque: 0.0 };

    pub fn scaled(&self, k: f64) -> Wrench {
        Wrench { fx: self.fx * k, fy: self.fy * k, torque: self.torque * k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactLabel {
    None,
    Direct,
    Indirect,
}

impl ContactLabel {
    pub fn in_contact(&self) -> bool {
        !matches!(self, ContactLabel::None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub robot_pose: Pose2,
    /// World-frame `(xdot, ydot, thetadot)` realized over the tick.
    pub velocity: Twist,
    pub contacts: Vec<ContactEdge>,
    pub net_wrench: Wrench,
    pub goal_reached: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PushResolution {
    pub contacts: Vec<ContactEdge>,
    pub wrench: Wrench,
    /// The passes could not remove all overlap and the tick was undone.
    pub rolled_back: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("could not place obstacles for {category:?} scene with seed {seed} after {attempts} attempts")]
    Placement { category: Category, seed: u64, attempts: usize },
    #[error("obstacle {index} has invalid extents ({width} x {length})")]
    InvalidObstacle { index: usize, width: f64, length: f64 },
    #[error("{count} obstacles requested, at most {N_MAX} supported")]
    TooManyObstacles { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub robot: Pose2,
    pub obstacles: Vec<ObstacleState>,
    pub tick: u64,
    pub dt: f64,
    pub goal_x: f64,
    last_contacts: Vec<ContactEdge>,
}

impl World {
    /// Robot at the start pose facing +x, with the given obstacles.
    pub fn new(obstacles: Vec<ObstacleState>) -> Result<World, SimError> {
        if obstacles.len() > N_MAX {
            return Err(SimError::TooManyObstacles { count: obstacles.len() });
        }
        for (index, o) in obstacles.iter().enumerate() {
            let ok = |v: f64| (MIN_EXTENT..=MAX_EXTENT).contains(&v);
            if !ok(o.width) || !ok(o.length) {
                return Err(SimError::InvalidObstacle { index, width: o.width, length: o.length });
            }
        }
        Ok(World { robot: ROBOT_START, obstacles, tick: 0, dt: DT, goal_x: GOAL_X, last_contacts: Vec::new() })
    }

    pub fn empty() -> World {
        World::new(Vec::new()).expect("an empty world is valid")
    }

    pub fn robot_obb(&self) -> Obb {
        Obb::new(self.robot, ROBOT_WIDTH, ROBOT_LENGTH)
    }

    pub fn body_obb(&self, body: Body) -> Obb {
        match body {
            Body::Robot => self.robot_obb(),
            Body::Obstacle(i) => self.obstacles[i].obb(),
            Body::Wall(w) => w.obb(),
        }
    }

    fn is_mobile(&self, body: Body) -> bool {
        match body {
            Body::Robot => true,
            Body::Obstacle(i) => !self.obstacles[i].is_static,
            Body::Wall(_) => false,
        }
    }

    fn bodies(&self) -> impl Iterator<Item = Body> + '_ {
        core::iter::once(Body::Robot)
            .chain((0..self.obstacles.len()).map(Body::Obstacle))
            .chain(Wall::ALL.into_iter().map(Body::Wall))
    }

    fn distance_to_robot(&self, body: Body) -> f64 {
        match body {
            Body::Robot => 0.0,
            _ => (self.body_obb(body).center.position() - self.robot.position()).norm(),
        }
    }

    /// Contact edges produced by the most recent step.
    pub fn contacts(&self) -> &[ContactEdge] {
        &self.last_contacts
    }

    /// Overlapping pairs with at least one mobile body, in resolution order:
    /// nearest to the robot first, ties by body order.
    fn penetrating_pairs(&self) -> Vec<(Body, Body)> {
        let bodies: Vec<Body> = self.bodies().collect();
        let mut pairs: Vec<(f64, Body, Body)> = Vec::new();
        for (i, &a) in bodies.iter().enumerate() {
            for &b in &bodies[i + 1..] {
                if !self.is_mobile(a) && !self.is_mobile(b) {
                    continue;
                }
                let hit = minimal_translation(&self.body_obb(a), &self.body_obb(b));
                if hit.is_some_and(|p| p.depth > PENETRATION_EPS) {
                    let d = self.distance_to_robot(a).min(self.distance_to_robot(b));
                    pairs.push((d, a, b));
                }
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        pairs.into_iter().map(|(_, a, b)| (a, b)).collect()
    }

    /// Deepest remaining overlap involving a mobile body.
    pub fn max_penetration(&self) -> f64 {
        let bodies: Vec<Body> = self.bodies().collect();
        let mut worst: f64 = 0.0;
        for (i, &a) in bodies.iter().enumerate() {
            for &b in &bodies[i + 1..] {
                if !self.is_mobile(a) && !self.is_mobile(b) {
                    continue;
                }
                if let Some(p) = minimal_translation(&self.body_obb(a), &self.body_obb(b)) {
                    worst = worst.max(p.depth);
                }
            }
        }
        worst
    }

    fn translate(&mut self, body: Body, d: Vec2) {
        match body {
            Body::Robot => self.robot = self.robot.translated(d),
            Body::Obstacle(i) => self.obstacles[i].pose = self.obstacles[i].pose.translated(d),
            Body::Wall(_) => unreachable!("walls never move"),
        }
    }

    /// Moves the robot to `target` and removes the resulting overlaps.
    ///
    /// Each pass visits overlapping pairs nearest-to-robot first. A movable
    /// obstacle yields `1 / (1 + friction * mass)` of the imposed overlap, the
    /// rest is pushed back onto its pusher; static bodies and walls push the
    /// other body out completely. An obstacle pushed out of a static body or
    /// wall is pinned against that normal for the rest of the tick. If overlap
    /// above [`RESIDUAL_TOLERANCE`] survives all passes the tick is undone.
    pub fn resolve_push_chain(&mut self, target: Pose2) -> PushResolution {
        let saved_robot = self.robot;
        let saved_poses: Vec<Pose2> = self.obstacles.iter().map(|o| o.pose).collect();
        self.robot = target;

        let mut pins: Vec<Vec<Vec2>> = vec![Vec::new(); self.obstacles.len()];
        let mut edges: BTreeSet<ContactEdge> = BTreeSet::new();
        let mut force = Vec2::ZERO;
        let mut torque = 0.0;

        for _ in 0..PUSH_PASSES {
            let pairs = self.penetrating_pairs();
            if pairs.is_empty() {
                break;
            }
            for (a, b) in pairs {
                let Some(push) = self.resolve_pair(a, b, &mut pins) else { continue };
                edges.insert(ContactEdge::new(a, b));
                if push.robot_shift > 0.0 {
                    let f = push.robot_normal * (CONTACT_STIFFNESS * push.robot_shift);
                    force = force + f;
                    torque += (push.contact_point - self.robot.position()).cross(f);
                }
            }
        }

        let rolled_back = self.max_penetration() > RESIDUAL_TOLERANCE;
        if rolled_back {
            self.robot = saved_robot;
            for (o, p) in self.obstacles.iter_mut().zip(saved_poses) {
                o.pose = p;
            }
        }
        let body_force = force.rotated(-self.robot.theta);
        PushResolution {
            contacts: edges.into_iter().collect(),
            wrench: Wrench { fx: body_force.x, fy: body_force.y, torque },
            rolled_back,
        }
    }

    fn resolve_pair(&mut self, a: Body, b: Body, pins: &mut [Vec<Vec2>]) -> Option<PairPush> {
        match (self.is_mobile(a), self.is_mobile(b)) {
            (false, false) => None,
            (true, true) => {
                let (pusher, pushee) =
                    if self.distance_to_robot(b) < self.distance_to_robot(a) { (b, a) } else { (a, b) };
                self.push_mobile(pusher, pushee, pins)
            }
            (true, false) => self.push_out(b, a, pins),
            (false, true) => self.push_out(a, b, pins),
        }
    }

    /// An immobile body expels a mobile one along the minimal translation.
    fn push_out(&mut self, fixed: Body, mover: Body, pins: &mut [Vec<Vec2>]) -> Option<PairPush> {
        let fixed_box = self.body_obb(fixed);
        let mover_box = self.body_obb(mover);
        let pen = minimal_translation(&fixed_box, &mover_box).filter(|p| p.depth > PENETRATION_EPS)?;
        let contact_point = overlap_point(&fixed_box, &mover_box);
        self.translate(mover, pen.normal * pen.depth);
        match mover {
            Body::Obstacle(i) => {
                pins[i].push(pen.normal);
                Some(PairPush { robot_shift: 0.0, robot_normal: pen.normal, contact_point })
            }
            _ => Some(PairPush { robot_shift: pen.depth, robot_normal: pen.normal, contact_point }),
        }
    }

    /// A mobile pusher drives into a movable obstacle.
    fn push_mobile(&mut self, pusher: Body, pushee: Body, pins: &mut [Vec<Vec2>]) -> Option<PairPush> {
        let Body::Obstacle(q) = pushee else { unreachable!("the robot is always the pusher") };
        let pusher_box = self.body_obb(pusher);
        let pushee_box = self.body_obb(pushee);
        let pen = minimal_translation(&pusher_box, &pushee_box).filter(|p| p.depth > PENETRATION_EPS)?;
        let n = pen.normal;
        let contact_point = overlap_point(&pusher_box, &pushee_box);

        let mut free = n;
        for &pin in &pins[q] {
            let along = free.dot(pin);
            if along < 0.0 {
                free = free - pin * along;
            }
        }
        let obstacle = self.obstacles[q];
        let yielded = obstacle.push_compliance() * pen.depth;
        let shift = free * yielded;
        self.translate(pushee, shift);

        let lever = (contact_point - obstacle.pose.position()).cross(n);
        let half_span = 0.5 * obstacle.length.max(obstacle.width);
        let spin = (lever * shift.norm() / half_span).clamp(-MAX_ROTATION_PER_PASS, MAX_ROTATION_PER_PASS);
        let pose = &mut self.obstacles[q].pose;
        pose.theta = wrap_angle(pose.theta + spin);

        let remaining = (pen.depth - yielded * n.dot(free)).max(0.0);
        if remaining > 0.0 {
            self.translate(pusher, -n * remaining);
        }
        let robot_shift = if pusher == Body::Robot { remaining } else { 0.0 };
        Some(PairPush { robot_shift, robot_normal: -n, contact_point })
    }

    /// Advances one tick under a body-frame velocity command.
    pub fn step(&mut self, cmd: Twist) -> StepOutcome {
        let cmd = cmd.clamped();
        let before = self.robot;
        // Quasi-static: nothing moves unless the robot does.
        let resolution = if cmd.is_zero() {
            PushResolution::default()
        } else {
            let local = Pose2::new(cmd.vx * self.dt, cmd.vy * self.dt, cmd.omega * self.dt);
            let target = before.compose(&local);
            self.resolve_push_chain(target)
        };
        self.tick += 1;
        self.last_contacts = resolution.contacts;
        let after = self.robot;
        StepOutcome {
            robot_pose: after,
            velocity: Twist {
                vx: (after.x - before.x) / self.dt,
                vy: (after.y - before.y) / self.dt,
                omega: wrap_angle(after.theta - before.theta) / self.dt,
            },
            contacts: self.last_contacts.clone(),
            net_wrench: resolution.wrench,
            goal_reached: after.x > self.goal_x,
        }
    }

    /// Per-obstacle reachability from the robot over the latest contact edges.
    pub fn contact_graph(&self) -> Vec<ContactLabel> {
        contact_labels(&self.last_contacts, &self.obstacles)
    }
}

struct PairPush {
    /// Distance the robot was pushed back, zero when the robot was not involved.
    robot_shift: f64,
    /// Direction of that push-back.
    robot_normal: Vec2,
    contact_point: Vec2,
}

fn overlap_point(a: &Obb, b: &Obb) -> Vec2 {
    let overlap = convex_clip(&obb_corners(a), &obb_corners(b));
    polygon_centroid(&overlap).unwrap_or_else(|| (a.center.position() + b.center.position()) * 0.5)
}

/// Direct contact is an edge to the robot; indirect contact is reachable from
/// the robot through movable obstacles only. Walls never relay contact.
pub fn contact_labels(edges: &[ContactEdge], obstacles: &[ObstacleState]) -> Vec<ContactLabel> {
    let mut labels = vec![ContactLabel::None; obstacles.len()];
    let mut frontier: Vec<usize> = Vec::new();
    for e in edges {
        if let ContactEdge(Body::Robot, Body::Obstacle(i)) = *e {
            if labels[i] == ContactLabel::None {
                labels[i] = ContactLabel::Direct;
                if !obstacles[i].is_static {
                    frontier.push(i);
                }
            }
        }
    }
    while let Some(u) = frontier.pop() {
        for e in edges {
            let other = match *e {
                ContactEdge(Body::Obstacle(x), Body::Obstacle(y)) if x == u => y,
                ContactEdge(Body::Obstacle(x), Body::Obstacle(y)) if y == u => x,
                _ => continue,
            };
            if labels[other] == ContactLabel::None {
                labels[other] = ContactLabel::Indirect;
                if !obstacles[other].is_static {
                    frontier.push(other);
                }
            }
        }
    }
    labels
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Samples a scene for `category`; identical seeds give identical worlds.
///
/// Easy holds one obstacle (movable or static with equal odds), Medium one
/// movable in front of one static, Hard one movable in front of two statics.
/// All orientations start at zero and no obstacle center lies past the goal line.
pub fn spawn_scene(category: Category, seed: u64) -> Result<World, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<bool> = match category {
        Category::Empty => Vec::new(),
        Category::Easy => vec![rng.random_bool(0.5)],
        Category::Medium => vec![false, true],
        Category::Hard => vec![false, true, true],
    };
    let mut obstacles: Vec<ObstacleState> = kinds
        .iter()
        .map(|&is_static| {
            let (width, length) = if is_static {
                (uniform(&mut rng, ranges::STATIC_SIDE), uniform(&mut rng, ranges::STATIC_SIDE))
            } else {
                (uniform(&mut rng, ranges::MOVABLE_WIDTH), uniform(&mut rng, ranges::MOVABLE_LENGTH))
            };
            let mass = uniform(&mut rng, ranges::MOVABLE_MASS);
            let friction = uniform(&mut rng, ranges::FRICTION);
            ObstacleState { is_static, pose: Pose2::IDENTITY, width, length, mass, friction }
        })
        .collect();

    // Rear faces keep this much room in front of the robot's start footprint.
    let front_clearance = ROBOT_START.x + 0.5 * ROBOT_LENGTH + 0.3;
    let side_clearance = 0.02;
    let gap = 0.1;
    for _ in 0..SPAWN_ATTEMPTS {
        for o in obstacles.iter_mut() {
            let x_lo = front_clearance + 0.5 * o.length;
            let y_hi = 0.5 * CORRIDOR_WIDTH - 0.5 * o.width - side_clearance;
            let x = uniform(&mut rng, (x_lo, GOAL_X));
            let y = uniform(&mut rng, (-y_hi, y_hi));
            o.pose = Pose2::new(x, y, 0.0);
        }
        if placement_ok(&obstacles, gap) {
            return World::new(obstacles);
        }
    }
    Err(SimError::Placement { category, seed, attempts: SPAWN_ATTEMPTS })
}

fn placement_ok(obstacles: &[ObstacleState], gap: f64) -> bool {
    let movable_x = obstacles.iter().filter(|o| !o.is_static).map(|o| o.pose.x).next();
    if let Some(mx) = movable_x {
        if obstacles.len() > 1 && obstacles.iter().any(|o| o.is_static && o.pose.x <= mx) {
            return false;
        }
    }
    let grown = |o: &ObstacleState| Obb::new(o.pose, o.width + gap, o.length + gap);
    for (i, a) in obstacles.iter().enumerate() {
        for b in &obstacles[i + 1..] {
            if minimal_translation(&grown(a), &grown(b)).is_some() {
                return false;
            }
        }
    }
    true
}
