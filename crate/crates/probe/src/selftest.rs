//! Fast invariant checks run by `probe selftest`.

use std::f64::consts::{FRAC_PI_4, PI};
use std::time::Instant;

use probe_core::dataset::roll_episode;
use probe_core::geometry::{obb_corners, rotated_iou, Obb, Pose2, Vec2};
use probe_core::model::{
    batch_gradient, finite_diff_check_with, forward, random_label, random_values, synthetic_example, train_orm,
    GradFault, Normalizer, OrmConfig, OrmParams, TrainState, NUM_FEATURES, N_SLOTS, OUTPUTS,
};
use probe_core::proprio::ProprioModel;
use probe_core::rng::{derive_seed, seeded, stream, Stream};
use probe_core::worldsim::Category;
use rand::Rng;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// Corrupts the backward pass so `gradient-check` must fail.
    pub inject_fault: bool,
}

pub fn run(options: Options) -> Vec<CheckResult> {
    let checks: [(&'static str, &dyn Fn() -> Result<String, String>); 5] = [
        ("iou-oracle", &iou_oracle),
        ("causality", &causality),
        ("gradient-check", &|| gradient_check(options.inject_fault)),
        ("mask-zeroing", &mask_zeroing),
        ("determinism", &determinism),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let r = f();
            let seconds = start.elapsed().as_secs_f64();
            let passed = r.is_ok();
            CheckResult { name, passed, detail: r.unwrap_or_else(|e| e), seconds }
        })
        .collect()
}

/// IoU of two boxes from point membership only.
pub fn monte_carlo_iou(a: &Obb, b: &Obb, samples: usize, seed: u64) -> f64 {
    let pts: Vec<Vec2> = obb_corners(a).into_iter().chain(obb_corners(b)).collect();
    let (lo_x, hi_x) = pts.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.x), h.max(p.x)));
    let (lo_y, hi_y) = pts.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.y), h.max(p.y)));
    let mut rng = stream(seed, Stream::GradCheck);
    let (mut both, mut any) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Vec2::new(rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
        let (ia, ib) = (a.contains(p), b.contains(p));
        both += usize::from(ia && ib);
        any += usize::from(ia || ib);
    }
    if any == 0 {
        0.0
    } else {
        both as f64 / any as f64
    }
}

/// Overlapping pair drawn around the origin.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> (Obb, Obb) {
    let mut side = || rng.random_range(0.1..1.8);
    let (w1, l1, w2, l2) = (side(), side(), side(), side());
    let a = Obb::new(Pose2::new(0.0, 0.0, rng.random_range(-PI..PI)), w1, l1);
    let b = Obb::new(
        Pose2::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-PI..PI)),
        w2,
        l2,
    );
    (a, b)
}

fn iou_oracle() -> Result<String, String> {
    let mut rng = seeded(11);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let (a, b) = random_pair(&mut rng);
        let d = (rotated_iou(&a, &b) - monte_carlo_iou(&a, &b, 100_000, k)).abs();
        worst = worst.max(d);
    }
    let unit = Obb::new(Pose2::IDENTITY, 1.0, 1.0);
    let turned = Obb::new(Pose2::new(0.0, 0.0, FRAC_PI_4), 1.0, 1.0);
    let far = Obb::new(Pose2::new(5.0, 0.0, 0.3), 1.0, 1.0);
    let overlap = 2.0 * (2.0f64.sqrt() - 1.0);
    let diagonal = (rotated_iou(&unit, &turned) - overlap / (2.0 - overlap)).abs();
    let identity = (rotated_iou(&unit, &unit) - 1.0).abs();
    let disjoint = rotated_iou(&unit, &far);
    if worst <= 0.01 && identity <= 1e-9 && disjoint == 0.0 && diagonal <= 1e-6 {
        Ok(format!("200 pairs, worst sampling gap {worst:.4}"))
    } else {
        Err(format!("sampling gap {worst:.4}, identity {identity:e}, disjoint {disjoint}, 45 degree {diagonal:e}"))
    }
}

fn tiny(seed: u64, randomize: bool) -> OrmParams {
    let mut p = OrmParams::init(&OrmConfig { seed, ..OrmConfig::tiny() }, Normalizer::identity()).expect("tiny config");
    if randomize {
        let n = p.values.len();
        p.values = random_values(n, 0.5, &mut seeded(seed ^ 0x55));
    }
    p
}

fn causality() -> Result<String, String> {
    let mut rng = seeded(5);
    for draw in 0..20 {
        let p = tiny(draw, true);
        for _ in 0..20 {
            let len = rng.random_range(2..=p.config.max_tokens);
            let ex = synthetic_example(&mut rng, len, 0);
            let base = forward(&p, &ex.features, len).out;
            let k = rng.random_range(1..len);
            let mut f = ex.features.clone();
            for v in &mut f[k * NUM_FEATURES..] {
                *v = rng.random_range(-5.0..5.0);
            }
            let changed = forward(&p, &f, len).out;
            if base[..k * OUTPUTS] != changed[..k * OUTPUTS] {
                return Err(format!("draw {draw}: prefix of {k} tokens changed"));
            }
        }
    }
    Ok("400 suffix perturbations, prefixes bitwise unchanged".into())
}

fn gradient_check(inject_fault: bool) -> Result<String, String> {
    let fault = if inject_fault { GradFault::ScaleDecoder(1.5) } else { GradFault::None };
    let p = tiny(1, false);
    let mut rng = seeded(1);
    let batch: Vec<_> = (0..2).map(|i| synthetic_example(&mut rng, 4 + 3 * i, i as u64)).collect();
    let err = finite_diff_check_with(&p, &batch, 200, 0, fault);
    if err <= GRADIENT_TOLERANCE {
        Ok(format!("max relative error {err:.2e}"))
    } else {
        Err(format!("max relative error {err:.2e} exceeds {GRADIENT_TOLERANCE:e}"))
    }
}

fn mask_zeroing() -> Result<String, String> {
    let p = tiny(4, false);
    let mut rng = seeded(4);
    let mut ex = synthetic_example(&mut rng, 6, 0);
    let (_, before) = batch_gradient(&p, &[&ex], GradFault::None);
    for (label, &m) in ex.labels.iter_mut().zip(&ex.mask) {
        if !m {
            *label = random_label(&mut rng);
        }
    }
    let (_, after) = batch_gradient(&p, &[&ex], GradFault::None);
    if before != after {
        return Err("labels outside the windows changed the gradient".into());
    }
    ex.mask.fill(false);
    ex.window_len = [0; N_SLOTS];
    let (loss, grad) = batch_gradient(&p, &[&ex], GradFault::None);
    if loss != 0.0 || grad.iter().any(|&g| g != 0.0) {
        return Err(format!("all-masked batch gave loss {loss}"));
    }
    Ok("masked cells are inert".into())
}

fn determinism() -> Result<String, String> {
    let pm = ProprioModel::default();
    for i in 0..3u64 {
        let seed = derive_seed(17, i);
        let a = roll_episode(Category::ALL[i as usize], (i % 3 + 1) as u8, seed, &pm).map_err(|e| e.to_string())?;
        let b = roll_episode(Category::ALL[i as usize], (i % 3 + 1) as u8, seed, &pm).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("episode seed {seed} replayed differently"));
        }
    }
    let mut rng = seeded(9);
    let data: Vec<_> = (0..6).map(|i| synthetic_example(&mut rng, 8, i)).collect();
    let config = OrmConfig { epochs: 2, max_tokens: 8, ..OrmConfig::tiny() };
    let init = OrmParams::init(&config, Normalizer::fit(&data)).map_err(|e| e.to_string())?;
    let a = train_orm(TrainState::new(init.clone()), &data, &mut |_| None).map_err(|e| e.to_string())?;
    let b = train_orm(TrainState::new(init), &data, &mut |_| None).map_err(|e| e.to_string())?;
    if a != b {
        return Err("two training runs diverged".into());
    }
    Ok("3 episodes and 2 training runs replayed bitwise".into())
}
