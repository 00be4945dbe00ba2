//! End-to-end acceptance checks, one line per criterion. The learning
//! criteria train real models and take most of the half hour this suite
//! needs on one core.

use std::f64::consts::{FRAC_PI_4, PI};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use probe::config::{Curation, RunConfig};
use probe::io::{parse_checkpoint, parse_dataset, read_checkpoint, read_dataset, write_checkpoint, write_dataset};
use probe::io::{Checkpoint, Predictor};
use probe::{pipeline, Error};
use probe_core::dataset::{compute_contact_windows, roll_episode, roll_world, Dataset, TrajectoryStep};
use probe_core::eval::ablation_suite;
use probe_core::geometry::{obb_corners, rotated_iou, Obb, Pose2, Vec2};
use probe_core::model::*;
use probe_core::proprio::{ProprioModel, ProprioSample};
use probe_core::rng::{derive_seed, seeded, Stream};
use probe_core::worldsim::{
    spawn_scene, Category, ContactLabel, ObstacleState, Twist, World, CORRIDOR_LENGTH, CORRIDOR_WIDTH,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Written straight to the process stdout so the lines survive test capture.
fn report(n: usize, name: &str, o: &Outcome, elapsed: Duration) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n:>2}: {status} {name} [{:.1}s] {}\n", elapsed.as_secs_f64(), o.detail);
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

// 1. Rotated IoU against point sampling.

fn inside(b: &Obb, p: Vec2) -> bool {
    let (dx, dy) = (p.x - b.center.x, p.y - b.center.y);
    let (s, c) = b.center.theta.sin_cos();
    let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
    lx.abs() <= 0.5 * b.length && ly.abs() <= 0.5 * b.width
}

fn sampled_iou(a: &Obb, b: &Obb, n: usize, rng: &mut impl Rng) -> f64 {
    let pts: Vec<Vec2> = obb_corners(a).into_iter().chain(obb_corners(b)).collect();
    let lo = pts.iter().fold(Vec2::new(f64::MAX, f64::MAX), |m, p| Vec2::new(m.x.min(p.x), m.y.min(p.y)));
    let hi = pts.iter().fold(Vec2::new(f64::MIN, f64::MIN), |m, p| Vec2::new(m.x.max(p.x), m.y.max(p.y)));
    let (mut both, mut any) = (0u64, 0u64);
    for _ in 0..n {
        let p = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        let (ia, ib) = (inside(a, p), inside(b, p));
        both += u64::from(ia && ib);
        any += u64::from(ia || ib);
    }
    if any == 0 {
        0.0
    } else {
        both as f64 / any as f64
    }
}

fn iou_oracle() -> Outcome {
    let mut rng = seeded(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut obb = |spread: f64| {
            let pose = Pose2::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-PI..PI),
            );
            Obb::new(pose, rng.random_range(0.1..1.8), rng.random_range(0.1..1.8))
        };
        let (a, b) = (obb(0.2), obb(0.8));
        worst = worst.max((rotated_iou(&a, &b) - sampled_iou(&a, &b, 100_000, &mut rng)).abs());
    }
    let unit = Obb::new(Pose2::new(0.3, -0.2, 0.7), 1.0, 0.6);
    let identity = (rotated_iou(&unit, &unit) - 1.0).abs();
    let disjoint = rotated_iou(&unit, &Obb::new(Pose2::new(3.0, 2.0, 0.1), 1.0, 0.6));
    let square = Obb::new(Pose2::IDENTITY, 1.0, 1.0);
    let overlap = 2.0 * (2.0f64.sqrt() - 1.0);
    let diagonal =
        (rotated_iou(&square, &Obb::new(Pose2::new(0.0, 0.0, FRAC_PI_4), 1.0, 1.0)) - overlap / (2.0 - overlap)).abs();
    outcome(
        worst <= 0.01 && identity <= 1e-9 && disjoint == 0.0 && diagonal <= 1e-6,
        format!("worst |exact - sampled| {worst:.4} over 200 pairs; identity gap {identity:.1e}; disjoint {disjoint}; 45 degree gap {diagonal:.1e}"),
    )
}

// 2. Causality of the encoder.

fn random_params(seed: u64, config: &OrmConfig, scale: f64) -> OrmParams {
    let mut p = OrmParams::init(&OrmConfig { seed, ..config.clone() }, Normalizer::identity()).unwrap();
    let n = p.values.len();
    p.values = random_values(n, scale, &mut seeded(seed ^ 0xA5A5));
    p
}

fn causality() -> Outcome {
    let config = OrmConfig { max_tokens: 48, ..OrmConfig::desk() };
    let mut rng = seeded(77);
    let mut checked = 0;
    for draw in 0..20 {
        let p = random_params(draw, &config, 0.2);
        for _ in 0..20 {
            let len = rng.random_range(2..=config.max_tokens);
            let ex = synthetic_example(&mut rng, len, 0);
            let base = forward(&p, &ex.features, len).out;
            let k = rng.random_range(1..len);
            let mut f = ex.features.clone();
            for v in &mut f[k * NUM_FEATURES..] {
                *v += rng.random_range(-3.0..3.0);
            }
            let after = forward(&p, &f, len).out;
            if base[..k * OUTPUTS] != after[..k * OUTPUTS] {
                return outcome(false, format!("draw {draw}: outputs before token {k} changed"));
            }
            checked += 1;
        }
    }
    outcome(true, format!("{checked} suffix perturbations, every prefix output bitwise unchanged"))
}

// 3. Backprop against central differences.

fn gradient() -> Outcome {
    let p = OrmParams::init(&OrmConfig { seed: 3, ..OrmConfig::tiny() }, Normalizer::identity()).unwrap();
    let mut rng = seeded(3);
    let batch: Vec<Example> = (0..3).map(|i| synthetic_example(&mut rng, 5 + 4 * i, i as u64)).collect();
    let clean = finite_diff_check(&p, &batch);
    let faulty = finite_diff_check_with(&p, &batch, 200, 0, GradFault::ScaleDecoder(1.5));
    outcome(
        clean <= 1e-4 && faulty > 1e-2,
        format!("max relative error {clean:.2e}; corrupted decoder gradient {faulty:.2e}"),
    )
}

// 4. Masked cells carry no signal.

fn mask_contract() -> Outcome {
    let p = random_params(8, &OrmConfig::tiny(), 0.3);
    let mut rng = seeded(8);
    let mut batch: Vec<Example> = (0..4).map(|i| synthetic_example(&mut rng, 6 + i, i as u64)).collect();
    let refs = |b: &[Example]| batch_gradient(&p, &b.iter().collect::<Vec<_>>(), GradFault::None);

    let (_, before) = refs(&batch);
    for ex in &mut batch {
        for (label, &m) in ex.labels.iter_mut().zip(&ex.mask) {
            if !m {
                *label = random_label(&mut rng);
            }
        }
    }
    let (_, after) = refs(&batch);
    let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();

    for ex in &mut batch {
        ex.mask.fill(false);
        ex.window_len = [0; N_SLOTS];
    }
    let (loss, grad) = refs(&batch);
    let nonzero = grad.iter().filter(|&&g| g != 0.0).count();
    outcome(
        changed == 0 && loss == 0.0 && nonzero == 0,
        format!("{changed} gradient entries moved by masked labels; all-masked loss {loss}, {nonzero} nonzero gradient entries"),
    )
}

// 5. Contact windows on scripted label sequences.

fn scripted(len: u32, contact: &[&[(u32, u32, ContactLabel)]]) -> Vec<TrajectoryStep> {
    let zero = [0.0; 12];
    (0..len)
        .map(|t| TrajectoryStep {
            tick: t,
            proprio: ProprioSample { q: zero, qdot: zero, tau: zero, pose: Pose2::IDENTITY, cmd: Twist::ZERO },
            obstacle_poses: vec![Pose2::IDENTITY; contact.len()],
            contact_labels: contact
                .iter()
                .map(|spans| spans.iter().find(|(a, b, _)| (*a..=*b).contains(&t)).map_or(ContactLabel::None, |s| s.2))
                .collect(),
        })
        .collect()
}

fn contact_windows() -> Outcome {
    use ContactLabel::{Direct, Indirect};
    // Scripted steps and the expected (obstacle, first, final) of each window.
    let cases: [(Vec<TrajectoryStep>, Vec<(usize, u32, u32)>); 3] = [
        (scripted(60, &[&[(12, 30, Direct)]]), vec![(0, 12, 30)]),
        (scripted(80, &[&[(5, 12, Direct)], &[(20, 34, Direct)]]), vec![(0, 5, 34), (1, 20, 34)]),
        (
            scripted(120, &[&[(3, 4, Direct), (40, 41, Direct)], &[(8, 15, Indirect)], &[]]),
            vec![(0, 3, 41), (1, 8, 41)],
        ),
    ];
    for (k, (steps, expected)) in cases.iter().enumerate() {
        let n = steps[0].contact_labels.len();
        let got: Vec<(usize, u32, u32)> =
            compute_contact_windows(steps, n).iter().map(|w| (w.obstacle, w.t_first, w.t_final)).collect();
        if got != *expected {
            return outcome(false, format!("episode {}: got {got:?}, expected {expected:?}", k + 1));
        }
    }
    let third = compute_contact_windows(&cases[2].0, 3);
    let flags = &third[0].per_step_contact;
    let expected_flags: Vec<bool> = (3..=41).map(|t| t <= 4 || t >= 40).collect();
    outcome(*flags == expected_flags, "3 scripted episodes reproduce the hand-derived windows and shared final tick")
}

// 6. Simulator properties.

fn category_of(i: u64) -> Category {
    [Category::Easy, Category::Medium, Category::Hard][(i % 3) as usize]
}

fn policy_of(i: u64) -> u8 {
    (i / 3 % 3 + 1) as u8
}

fn contained(world: &World) -> bool {
    let ok = |p: Vec2| p.x >= -1e-4 && p.x <= CORRIDOR_LENGTH + 1e-4 && p.y.abs() <= 0.5 * CORRIDOR_WIDTH + 1e-4;
    obb_corners(&world.robot_obb()).into_iter().all(ok)
        && world.obstacles.iter().all(|o| obb_corners(&o.obb()).into_iter().all(ok))
}

fn simulator() -> Outcome {
    let pm = ProprioModel::default();
    let mut failures = Vec::new();
    let mut irrelevant = 0;
    for i in 0..100u64 {
        let seed = derive_seed(606, i);
        let (cat, pol) = (category_of(i), policy_of(i));
        let a = roll_episode(cat, pol, seed, &pm).unwrap();
        if a != roll_episode(cat, pol, seed, &pm).unwrap() {
            failures.push(format!("replay {i}"));
        }
        for s in &a.steps {
            let moved = a.obstacles.iter().zip(&s.obstacle_poses).any(|(o, p)| o.is_static && *p != o.pose);
            let mut w = World::new(
                a.obstacles.iter().zip(&s.obstacle_poses).map(|(o, &pose)| ObstacleState { pose, ..*o }).collect(),
            )
            .unwrap();
            w.robot = s.proprio.pose;
            if moved || !contained(&w) {
                failures.push(format!("episode {i} tick {}", s.tick));
                break;
            }
        }

        let mut world = spawn_scene(cat, derive_seed(seed, Stream::Scene as u64)).unwrap();
        for _ in 0..(60 + 5 * i) {
            world.step(Twist::new(0.4, 0.1 * ((i % 5) as f64 - 2.0), 0.2 * ((i % 3) as f64 - 1.0)));
        }
        let (robot, obstacles) = (world.robot, world.obstacles.clone());
        world.step(Twist::ZERO);
        if world.robot != robot || world.obstacles != obstacles {
            failures.push(format!("fixed point {i}"));
        }

        // Scenes with room for a decoy, so every episode adds a comparison.
        let cat = [Category::Easy, Category::Medium][(i % 2) as usize];
        let world = spawn_scene(cat, derive_seed(seed, Stream::Scene as u64)).unwrap();
        let a = roll_world(world.clone(), cat, pol, seed, &pm).unwrap();
        for k in (0..a.obstacles.len()).filter(|&k| a.window(k).is_none()) {
            let mut fewer = world.obstacles.clone();
            fewer.remove(k);
            let b = roll_world(World::new(fewer).unwrap(), cat, pol, seed, &pm).unwrap();
            let same = a.steps.len() == b.steps.len()
                && a.steps.iter().zip(&b.steps).all(|(x, y)| x.proprio.pose == y.proprio.pose);
            if !same {
                failures.push(format!("irrelevant obstacle {k} of episode {i}"));
            }
            irrelevant += 1;
        }
        if world.obstacles.len() < 3 {
            let decoy = ObstacleState {
                is_static: true,
                pose: Pose2::new(CORRIDOR_LENGTH - 0.15, -0.5 * CORRIDOR_WIDTH + 0.15, 0.0),
                width: 0.2,
                length: 0.2,
                mass: 1.0,
                friction: 0.5,
            };
            let mut more = world.obstacles.clone();
            more.push(decoy);
            let b = roll_world(World::new(more).unwrap(), cat, pol, seed, &pm).unwrap();
            if b.window(b.obstacles.len() - 1).is_none() {
                let same = a.steps.len() == b.steps.len()
                    && a.steps.iter().zip(&b.steps).all(|(x, y)| x.proprio.pose == y.proprio.pose);
                if !same {
                    failures.push(format!("decoy in episode {i}"));
                }
                irrelevant += 1;
            }
        }
    }
    outcome(
        failures.is_empty() && irrelevant >= 100,
        format!("100 episodes each; {irrelevant} irrelevant-obstacle comparisons; failures {failures:?}"),
    )
}

// 7, 8 and 10 share one Easy run.

struct EasyRun {
    dataset: Dataset,
    state: TrainState,
    movable: Option<f64>,
    baseline: Option<f64>,
    baseline_offset: Option<f64>,
    contact: Option<f64>,
    heldout: usize,
}

fn curated(category: Category, pool: usize, target: usize) -> RunConfig {
    RunConfig {
        seed: 7,
        categories: vec![category],
        episodes: pool,
        curation: Curation { target: Some(target), cap_per_mode: None },
        ..RunConfig::default()
    }
}

fn easy_run() -> Result<EasyRun, Error> {
    let cfg = curated(Category::Easy, 3000, 2000);
    let dataset = pipeline::generate(&cfg)?.dataset;
    let (train, heldout) = pipeline::split(&dataset, cfg.seed);
    let state = pipeline::train(&cfg.orm_config()?, &train, &heldout, None, None, &mut |_| Ok(()))?;
    let predictor = Predictor::Orm(Box::new(state));
    let (e, _, n) = pipeline::evaluate_split(&predictor, &dataset, cfg.seed)?;
    let Predictor::Orm(state) = predictor else { unreachable!() };
    Ok(EasyRun {
        dataset,
        state: *state,
        movable: e.movable_iou(),
        baseline: e.baseline_iou(),
        baseline_offset: e.baseline_offset_iou(),
        contact: e.contact.value(),
        heldout: n,
    })
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| format!("{v:.3}"))
}

fn learning(run: &EasyRun, elapsed: Duration) -> Outcome {
    let (m, b) = (run.movable.unwrap_or(0.0), run.baseline.unwrap_or(0.0));
    let n = run.dataset.trajectories.len();
    outcome(
        n == 2000 && m >= 0.30 && m >= b + 0.10 && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "{n} Easy episodes, {} held out: movable IoU {} vs baseline {} (with offset {}); reference 0.473",
            run.heldout,
            show(run.movable),
            show(run.baseline),
            show(run.baseline_offset)
        ),
    )
}

fn contact_accuracy(run: &EasyRun) -> Outcome {
    outcome(run.contact.is_some_and(|a| a >= 0.85), format!("in-window contact accuracy {}", show(run.contact)))
}

// 9. Channel ablation on Medium.

fn ablation() -> Result<Outcome, Error> {
    let cfg = curated(Category::Medium, 1600, 1000);
    let dataset = pipeline::generate(&cfg)?.dataset;
    let (train, heldout) = pipeline::split(&dataset, cfg.seed);
    let rows = ablation_suite(&train, &heldout, &cfg.orm_config()?, &['A', 'B', 'C', 'D', 'E'])?;
    let iou = |s: char| rows.iter().find(|r| r.subset == s).and_then(|r| r.movable_iou).unwrap_or(0.0);
    let summary: Vec<String> =
        rows.iter().map(|r| format!("{} {}/{}", r.subset, show(r.movable_iou), show(r.static_iou))).collect();
    Ok(outcome(
        dataset.trajectories.len() == 1000 && iou('D') >= iou('A') + 0.05 && iou('E') >= iou('A') + 0.05,
        format!("{} Medium episodes; movable/static IoU {}", dataset.trajectories.len(), summary.join(", ")),
    ))
}

// 10. File round trips.

fn numeric_gap(a: &serde_json::Value, b: &serde_json::Value) -> Option<f64> {
    use serde_json::Value::*;
    match (a, b) {
        (Number(x), Number(y)) => Some((x.as_f64()? - y.as_f64()?).abs()),
        (Array(x), Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).try_fold(0.0f64, |m, (p, q)| Some(m.max(numeric_gap(p, q)?)))
        }
        (Object(x), Object(y)) if x.len() == y.len() => {
            x.iter().try_fold(0.0f64, |m, (k, p)| Some(m.max(numeric_gap(p, y.get(k)?)?)))
        }
        _ => (a == b).then_some(0.0),
    }
}

fn round_trips(run: &EasyRun) -> Result<Outcome, Error> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(Path::new("tempdir"), e))?;
    let data = Dataset { stride: run.dataset.stride, trajectories: run.dataset.trajectories[..100].to_vec() };
    let dpath = dir.path().join("dataset.jsonl");
    write_dataset(&dpath, "acceptance", &data)?;
    let (_, back) = read_dataset(&dpath)?;
    let dgap = numeric_gap(&serde_json::to_value(&data).unwrap(), &serde_json::to_value(&back).unwrap());

    let ck = Checkpoint::new("acceptance", 7, Predictor::Orm(Box::new(run.state.clone())));
    let cpath = dir.path().join("checkpoint.json");
    write_checkpoint(&cpath, &ck)?;
    let ck_back = read_checkpoint(&cpath)?;
    let cgap = numeric_gap(&serde_json::to_value(&ck).unwrap(), &serde_json::to_value(&ck_back).unwrap());

    let dtext = std::fs::read_to_string(&dpath).unwrap();
    let ctext = std::fs::read_to_string(&cpath).unwrap();
    let cut_dataset = parse_dataset(&dpath, &dtext[..dtext.len() * 2 / 3]);
    let cut_checkpoint = parse_checkpoint(&cpath, &ctext[..ctext.len() * 2 / 3]);
    let truncation = matches!(cut_dataset, Err(Error::Truncated { .. } | Error::Parse { .. }))
        && matches!(cut_checkpoint, Err(Error::Truncated { .. }));

    let pass = back == data
        && ck_back == ck
        && dgap.is_some_and(|g| g <= 1e-9)
        && cgap.is_some_and(|g| g <= 1e-9)
        && truncation;
    Ok(outcome(
        pass,
        format!(
            "100 trajectories and a trained checkpoint: max field gaps {} / {}; truncated files rejected: {truncation}",
            dgap.map_or("structure differs".into(), |g| format!("{g:e}")),
            cgap.map_or("structure differs".into(), |g| format!("{g:e}"))
        ),
    ))
}

#[test]
fn acceptance() {
    let mut passed = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome, t: Duration| {
        report(n, name, &o, t);
        passed.push((n, o.pass));
    };

    let (o, t) = timed(iou_oracle);
    let o = Outcome { pass: o.pass && t < Duration::from_secs(10), ..o };
    record(1, "rotated IoU oracle", o, t);

    let (o, t) = timed(causality);
    let o = Outcome { pass: o.pass && t < Duration::from_secs(30), ..o };
    record(2, "causality", o, t);

    let (o, t) = timed(gradient);
    let o = Outcome { pass: o.pass && t < Duration::from_secs(60), ..o };
    record(3, "gradient check", o, t);

    let (o, t) = timed(mask_contract);
    record(4, "mask contract", o, t);

    let (o, t) = timed(contact_windows);
    record(5, "contact windows", o, t);

    let (o, t) = timed(simulator);
    let o = Outcome { pass: o.pass && t < Duration::from_secs(120), ..o };
    record(6, "simulator properties", o, t);

    let (run, t) = timed(easy_run);
    match run {
        Ok(run) => {
            record(7, "learning demonstration", learning(&run, t), t);
            record(8, "contact classification", contact_accuracy(&run), Duration::ZERO);
            let (o, t10) = timed(|| round_trips(&run));
            record(10, "round trips", o.unwrap_or_else(|e| outcome(false, e.to_string())), t10);
        }
        Err(e) => {
            for (n, name) in [(7, "learning demonstration"), (8, "contact classification"), (10, "round trips")] {
                record(n, name, outcome(false, format!("easy run failed: {e}")), t);
            }
        }
    }

    let (o, t) = timed(ablation);
    let o = o.unwrap_or_else(|e| outcome(false, e.to_string()));
    let o = Outcome { pass: o.pass && t <= Duration::from_secs(2 * 3600), ..o };
    record(9, "channel ablation", o, t);

    passed.sort();
    let failed: Vec<usize> = passed.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
