use probe_core::dataset::{
    curate, histogram, roll_episode, roll_world, ContactMode, CurationReport, Trajectory, T_MAX,
};
use probe_core::geometry::{obb_corners, Pose2};
use probe_core::proprio::ProprioModel;
use probe_core::rng::{derive_seed, Stream};
use probe_core::worldsim::{
    spawn_scene, Category, ObstacleState, Twist, World, CORRIDOR_LENGTH, CORRIDOR_WIDTH, GOAL_X,
};
use proptest::prelude::*;

const EPISODES: u64 = 100;

fn scene_seed(seed: u64) -> u64 {
    derive_seed(seed, Stream::Scene as u64)
}

fn category_of(i: u64) -> Category {
    [Category::Easy, Category::Medium, Category::Hard][(i % 3) as usize]
}

fn policy_of(i: u64) -> u8 {
    (i / 3 % 3 + 1) as u8
}

fn inside_corridor(world: &World) -> bool {
    let tol = 1e-4;
    let ok = |p: probe_core::geometry::Vec2| {
        p.x >= -tol && p.x <= CORRIDOR_LENGTH + tol && p.y.abs() <= 0.5 * CORRIDOR_WIDTH + tol
    };
    obb_corners(&world.robot_obb()).into_iter().all(ok)
        && world.obstacles.iter().all(|o| obb_corners(&o.obb()).into_iter().all(ok))
}

#[test]
fn replay_is_bitwise_identical() {
    let pm = ProprioModel::default();
    for i in 0..EPISODES {
        let seed = derive_seed(11, i);
        let a = roll_episode(category_of(i), policy_of(i), seed, &pm).unwrap();
        let b = roll_episode(category_of(i), policy_of(i), seed, &pm).unwrap();
        assert!(a == b, "episode {i} differs on replay");
    }
}

#[test]
fn statics_stay_put_and_bodies_stay_inside() {
    let pm = ProprioModel::default();
    for i in 0..EPISODES {
        let seed = derive_seed(12, i);
        let t = roll_episode(category_of(i), policy_of(i), seed, &pm).unwrap();
        for step in &t.steps {
            for (o, pose) in t.obstacles.iter().zip(&step.obstacle_poses) {
                if o.is_static {
                    assert_eq!(*pose, o.pose, "episode {i} tick {}", step.tick);
                }
            }
            let mut world = World::new(
                t.obstacles.iter().zip(&step.obstacle_poses).map(|(o, &pose)| ObstacleState { pose, ..*o }).collect(),
            )
            .unwrap();
            world.robot = step.proprio.pose;
            assert!(inside_corridor(&world), "episode {i} tick {}", step.tick);
        }
    }
}

#[test]
fn zero_command_is_a_fixed_point_mid_episode() {
    for i in 0..EPISODES {
        let mut world = spawn_scene(category_of(i), scene_seed(derive_seed(13, i))).unwrap();
        let drive = Twist::new(0.4, 0.05 * (i as f64 % 3.0 - 1.0), 0.1);
        for _ in 0..(100 + 7 * i) {
            world.step(drive);
        }
        let robot = world.robot;
        let obstacles = world.obstacles.clone();
        let first = world.step(Twist::ZERO);
        let second = world.step(Twist::ZERO);
        assert_eq!(world.robot, robot);
        assert_eq!(world.obstacles, obstacles);
        assert_eq!(first.net_wrench, second.net_wrench);
    }
}

fn same_robot_path(a: &Trajectory, b: &Trajectory) -> bool {
    a.steps.len() == b.steps.len() && a.steps.iter().zip(&b.steps).all(|(x, y)| x.proprio.pose == y.proprio.pose)
}

#[test]
fn untouched_obstacles_do_not_matter() {
    let pm = ProprioModel::default();
    // Small static block in a far corner behind the goal line.
    let decoy = ObstacleState {
        is_static: true,
        pose: Pose2::new(CORRIDOR_LENGTH - 0.15, 0.5 * CORRIDOR_WIDTH - 0.15, 0.0),
        width: 0.2,
        length: 0.2,
        mass: 1.0,
        friction: 0.5,
    };
    let mut checked = 0;
    for i in 0..EPISODES {
        let seed = derive_seed(14, i);
        let cat = [Category::Empty, Category::Easy, Category::Medium][(i % 3) as usize];
        let world = spawn_scene(cat, scene_seed(seed)).unwrap();
        let base = roll_world(world.clone(), cat, policy_of(i), seed, &pm).unwrap();

        for k in (0..base.obstacles.len()).filter(|&k| base.window(k).is_none()) {
            let mut fewer = world.obstacles.clone();
            fewer.remove(k);
            let t = roll_world(World::new(fewer).unwrap(), cat, policy_of(i), seed, &pm).unwrap();
            assert!(same_robot_path(&base, &t), "episode {i}: removing obstacle {k} changed the path");
            checked += 1;
        }

        if world.obstacles.len() < 3 {
            let mut more = world.obstacles.clone();
            more.push(decoy);
            let t = roll_world(World::new(more).unwrap(), cat, policy_of(i), seed, &pm).unwrap();
            if t.window(t.obstacles.len() - 1).is_none() {
                assert!(same_robot_path(&base, &t), "episode {i}: adding an untouched block changed the path");
                checked += 1;
            }
        }
    }
    assert!(checked >= EPISODES as usize, "only {checked} comparisons");
}

#[test]
fn empty_corridor_reaches_goal_without_contact() {
    let t = roll_episode(Category::Empty, 1, 5, &ProprioModel::default()).unwrap();
    assert!(t.goal_reached);
    assert!(t.windows.is_empty());
    assert_eq!(t.contact_mode, ContactMode::NoContact);
    assert!(t.steps.last().unwrap().proprio.pose.x > GOAL_X);
}

#[test]
fn wall_to_wall_block_prevents_goal() {
    let wall = ObstacleState {
        is_static: true,
        pose: Pose2::new(2.0, 0.0, 0.0),
        width: 1.8,
        length: 0.3,
        mass: 1.0,
        friction: 0.5,
    };
    for policy in 1..=3 {
        let world = World::new(vec![wall]).unwrap();
        let t = roll_world(world, Category::Easy, policy, 9, &ProprioModel::default()).unwrap();
        assert!(!t.goal_reached);
        assert_eq!(t.terminal_tick, T_MAX);
        assert_eq!(t.steps.len(), T_MAX as usize);
        assert_eq!(t.contact_mode, ContactMode::DirectStatic);
    }
}

#[test]
fn labels_agree_with_windows() {
    let pm = ProprioModel::default();
    for i in 0..30 {
        let t = roll_episode(category_of(i), policy_of(i), derive_seed(15, i), &pm).unwrap();
        let t_final = t.windows.first().map(|w| w.t_final);
        for w in &t.windows {
            assert_eq!(Some(w.t_final), t_final);
            assert_eq!(w.per_step_contact.len(), (w.t_final - w.t_first + 1) as usize);
        }
        for s in &t.steps {
            for (k, l) in s.contact_labels.iter().enumerate() {
                let w = t.window(k);
                if l.in_contact() {
                    assert!(w.is_some_and(|w| w.contains(s.tick)));
                }
                if let Some(w) = w.filter(|w| w.contains(s.tick)) {
                    assert_eq!(w.per_step_contact[(s.tick - w.t_first) as usize], l.in_contact());
                }
            }
        }
    }
}

/// Robot y relative to the movable box when the robot's center passes the
/// box's final x position.
fn pass_side(t: &Trajectory) -> Option<f64> {
    let m = t.obstacles.iter().position(|o| !o.is_static)?;
    let last = t.steps.last()?;
    let bx = last.obstacle_poses[m];
    let s = t.steps.iter().find(|s| s.proprio.pose.x >= bx.x)?;
    Some((s.proprio.pose.y - s.obstacle_poses[m].y).signum())
}

#[test]
fn biased_variants_pass_on_opposite_sides() {
    let pm = ProprioModel::default();
    let (mut left, mut right, mut pairs, mut opposite) = ((0, 0), (0, 0), 0, 0);
    for i in 0..200 {
        let seed = derive_seed(16, i);
        let a = roll_episode(Category::Medium, 1, seed, &pm).unwrap();
        let b = roll_episode(Category::Medium, 2, seed, &pm).unwrap();
        let sa = pass_side(&a).filter(|_| a.goal_reached);
        let sb = pass_side(&b).filter(|_| b.goal_reached);
        if let Some(s) = sa {
            left.0 += usize::from(s > 0.0);
            left.1 += 1;
        }
        if let Some(s) = sb {
            right.0 += usize::from(s < 0.0);
            right.1 += 1;
        }
        if let (Some(x), Some(y)) = (sa, sb) {
            pairs += 1;
            opposite += usize::from(x != y);
        }
    }
    let share = |(k, n): (usize, usize)| k as f64 / n as f64;
    println!(
        "variant 1 left of the box in {}/{} successful runs, variant 2 right in {}/{}; same-seed pairs on opposite sides {}/{}",
        left.0, left.1, right.0, right.1, opposite, pairs
    );
    assert!(left.1 >= 50 && right.1 >= 50);
    assert!(share(left) >= 0.6 && share(right) >= 0.6);
}

fn synthetic(policy: u8, mode: ContactMode, episode: u64) -> Trajectory {
    Trajectory {
        episode,
        seed: episode,
        category: Category::Medium,
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curation_balances_skewed_mixtures(
        counts in proptest::collection::vec(10usize..400, 15),
        seed in any::<u64>(),
    ) {
        let cap = 20;
        let mut all = Vec::new();
        let mut e = 0;
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                all.push(synthetic((c / 5 + 1) as u8, ContactMode::ALL[c % 5], e));
                e += 1;
            }
        }
        let (kept, report) = curate(all.clone(), cap, seed);
        prop_assert!(kept.iter().all(|k| all.contains(k)));
        let after: Vec<_> = histogram(&kept).into_iter().collect();
        prop_assert_eq!(&report.after, &after);
        let totals: Vec<usize> = CurationReport::mode_totals(&report.after).into_values().filter(|&n| n > 0).collect();
        let (lo, hi) = (*totals.iter().min().unwrap(), *totals.iter().max().unwrap());
        prop_assert!(hi <= 2 * lo, "{:?}", totals);
    }
}
