//! Final-contact metrics, report aggregation, baselines and the input
//! channel ablation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::geometry::{rotated_iou, wrap_angle, Obb, Pose2, Vec2};
use crate::model::{
    build_examples, denormalize, forward, train_orm, ChannelMask, Example, ModelError, Normalizer, OrmConfig,
    OrmParams, SlotLabel, TrainLog, TrainState, MIN_PREDICTED_SIDE, N_SLOTS, OUTPUTS, SLOT_OUTPUTS,
};
use crate::rng::{self, Stream};
use crate::worldsim::Category;

pub const HELDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Movable,
    Static1,
    Static2,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Movable, Role::Static1, Role::Static2];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Movable => "Movable",
            Role::Static1 => "Static 1",
            Role::Static2 => "Static 2",
        }
    }
}

/// Movable obstacles are `Movable`; statics are numbered by index order.
pub fn role_of(traj: &Trajectory, obstacle: usize) -> Role {
    if !traj.obstacles[obstacle].is_static {
        return Role::Movable;
    }
    let rank = traj.obstacles[..obstacle].iter().filter(|o| o.is_static).count();
    if rank == 0 {
        Role::Static1
    } else {
        Role::Static2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsErrors {
    pub x: f64,
    pub y: f64,
    /// Absent for static obstacles, whose orientation is fixed.
    pub theta: Option<f64>,
    pub shape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleResult {
    pub episode: u64,
    pub category: Category,
    pub role: Role,
    pub iou_final: f64,
    pub abs_err: AbsErrors,
}

/// Box in world units with sides clamped to [`MIN_PREDICTED_SIDE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxEstimate {
    pub pose: Pose2,
    pub width: f64,
    pub length: f64,
}

impl BoxEstimate {
    pub fn obb(&self) -> Obb {
        Obb::new(self.pose, self.width.max(MIN_PREDICTED_SIDE), self.length.max(MIN_PREDICTED_SIDE))
    }

    /// Regression part of a raw slot output.
    pub fn from_raw(raw: &[f64]) -> BoxEstimate {
        let p = denormalize(raw);
        BoxEstimate { pose: p.pose, width: p.width, length: p.length }
    }

    pub fn from_label(label: &SlotLabel) -> BoxEstimate {
        let mut raw = [0.0; SLOT_OUTPUTS];
        raw[2..].copy_from_slice(&label.target);
        BoxEstimate::from_raw(&raw)
    }
}

pub fn iou_final(truth: &BoxEstimate, pred: &BoxEstimate) -> f64 {
    rotated_iou(&truth.obb(), &pred.obb())
}

pub fn abs_errors_final(truth: &BoxEstimate, pred: &BoxEstimate, is_static: bool) -> AbsErrors {
    let (t, p) = (truth.obb(), pred.obb());
    AbsErrors {
        x: (t.center.x - p.center.x).abs(),
        y: (t.center.y - p.center.y).abs(),
        theta: (!is_static).then(|| wrap_angle(t.center.theta - p.center.theta).abs()),
        shape: 0.5 * ((t.width - p.width).abs() + (t.length - p.length).abs()),
    }
}

/// Scores each occupied slot at the last token of its window. The truth box
/// is read from the example's labels so that a perfect predictor scores
/// exactly 1.
pub fn final_results(traj: &Trajectory, example: &Example, raw: &[f64]) -> Vec<ObstacleResult> {
    let mut out = Vec::new();
    for (slot, &obstacle) in example.slots.iter().enumerate() {
        let Some(t) = example.final_token[slot] else { continue };
        let label = &example.labels[t * N_SLOTS + slot];
        let at = t * OUTPUTS + slot * SLOT_OUTPUTS;
        let truth = BoxEstimate::from_label(label);
        let pred = BoxEstimate::from_raw(&raw[at..at + SLOT_OUTPUTS]);
        out.push(result_for(traj, obstacle, &truth, &pred));
    }
    out
}

fn result_for(traj: &Trajectory, obstacle: usize, truth: &BoxEstimate, pred: &BoxEstimate) -> ObstacleResult {
    ObstacleResult {
        episode: traj.episode,
        category: traj.category,
        role: role_of(traj, obstacle),
        iou_final: iou_final(truth, pred),
        abs_err: abs_errors_final(truth, pred, traj.obstacles[obstacle].is_static),
    }
}

/// Raw outputs that reproduce the labels: saturated logits and exact boxes.
pub fn oracle_outputs(example: &Example) -> Vec<f64> {
    let mut raw = vec![0.0; example.len * OUTPUTS];
    for t in 0..example.len {
        for s in 0..N_SLOTS {
            let l = &example.labels[t * N_SLOTS + s];
            let at = t * OUTPUTS + s * SLOT_OUTPUTS;
            raw[at] = if l.contact > 0.5 { 15.0 } else { -15.0 };
            raw[at + 1] = if l.is_static > 0.5 { 15.0 } else { -15.0 };
            raw[at + 2..at + SLOT_OUTPUTS].copy_from_slice(&l.target);
        }
    }
    raw
}

/// Oracle outputs with i.i.d. Gaussian noise on every regression entry.
pub fn noisy_oracle<R: Rng + ?Sized>(example: &Example, sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut raw = oracle_outputs(example);
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        for (i, v) in raw.iter_mut().enumerate() {
            if i % SLOT_OUTPUTS >= 2 {
                *v += n.sample(rng);
            }
        }
    }
    raw
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportCell {
    pub count: usize,
    pub iou: f64,
    pub x: f64,
    pub y: f64,
    pub theta: Option<f64>,
    pub shape: f64,
}

/// Category-by-role means of per-obstacle results.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<((Category, Role), ReportCell)>,
}

/// Fixed reference values: (category, role, IoU, x, y, theta, shape).
pub const REFERENCE: [(Category, Role, f64, f64, f64, Option<f64>, f64); 7] = [
    (Category::Easy, Role::Movable, 0.473, 0.135, 0.101, Some(0.198), 0.183),
    (Category::Easy, Role::Static1, 0.501, 0.087, 0.104, None, 0.172),
    (Category::Medium, Role::Movable, 0.496, 0.115, 0.095, Some(0.201), 0.162),
    (Category::Medium, Role::Static1, 0.331, 0.430, 0.169, None, 0.186),
    (Category::Hard, Role::Movable, 0.481, 0.128, 0.108, Some(0.214), 0.172),
    (Category::Hard, Role::Static1, 0.432, 0.091, 0.138, None, 0.117),
    (Category::Hard, Role::Static2, 0.404, 0.094, 0.151, None, 0.120),
];

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate_report(results: &[ObstacleResult]) -> Report {
    let mut groups: BTreeMap<(Category, Role), Vec<&ObstacleResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.category, r.role)).or_default().push(r);
    }
    let cells = groups
        .into_iter()
        .map(|(k, rs)| {
            let cell = ReportCell {
                count: rs.len(),
                iou: mean(rs.iter().map(|r| r.iou_final)).unwrap_or(0.0),
                x: mean(rs.iter().map(|r| r.abs_err.x)).unwrap_or(0.0),
                y: mean(rs.iter().map(|r| r.abs_err.y)).unwrap_or(0.0),
                theta: mean(rs.iter().filter_map(|r| r.abs_err.theta)),
                shape: mean(rs.iter().map(|r| r.abs_err.shape)).unwrap_or(0.0),
            };
            (k, cell)
        })
        .collect();
    Report { cells }
}

impl Report {
    pub fn cell(&self, category: Category, role: Role) -> Option<&ReportCell> {
        self.cells.iter().find(|(k, _)| *k == (category, role)).map(|(_, c)| c)
    }

    /// Table with one row per category and role; the reference values sit
    /// in parentheses next to each measured number.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<9} {:>5} {:>15} {:>15} {:>15} {:>15} {:>15}",
            "category", "role", "n", "IoU", "x", "y", "theta", "shape"
        );
        let num = |v: Option<f64>| v.map_or_else(|| String::from("–"), |v| format!("{v:.3}"));
        for cat in Category::ALL {
            for role in Role::ALL {
                let reference = REFERENCE.iter().find(|r| r.0 == cat && r.1 == role);
                let cell = self.cell(cat, role);
                if cell.is_none() && reference.is_none() {
                    continue;
                }
                let pair = |v: Option<f64>, r: Option<f64>| format!("{} ({})", num(v), num(r));
                let _ = writeln!(
                    s,
                    "{:<8} {:<9} {:>5} {:>15} {:>15} {:>15} {:>15} {:>15}",
                    cat.name(),
                    role.name(),
                    cell.map_or(0, |c| c.count),
                    pair(cell.map(|c| c.iou), reference.map(|r| r.2)),
                    pair(cell.map(|c| c.x), reference.map(|r| r.3)),
                    pair(cell.map(|c| c.y), reference.map(|r| r.4)),
                    pair(cell.and_then(|c| c.theta), reference.and_then(|r| r.5)),
                    pair(cell.map(|c| c.shape), reference.map(|r| r.6)),
                );
            }
        }
        s
    }
}

/// Whether an episode belongs to the held-out split.
pub fn is_heldout(episode: u64, seed: u64) -> bool {
    let h = rng::derive_seed(rng::derive_seed(seed, Stream::Split as u64), episode);
    ((h >> 11) as f64 / (1u64 << 53) as f64) < HELDOUT_FRACTION
}

/// `(train, heldout)` by episode hash.
pub fn split_heldout(trajs: Vec<Trajectory>, seed: u64) -> (Vec<Trajectory>, Vec<Trajectory>) {
    trajs.into_iter().partition(|t| !is_heldout(t.episode, seed))
}

/// Dataset-mean movable box, fitted on training trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub width: f64,
    pub length: f64,
    pub theta: f64,
    /// Mean of (final box center minus mean robot contact position).
    pub offset: Vec2,
}

impl Baseline {
    pub fn fit(train: &[Trajectory], examples: &[Example]) -> Option<Baseline> {
        let (mut w, mut l, mut th, mut off, mut n) = (0.0, 0.0, 0.0, Vec2::ZERO, 0usize);
        for (traj, ex) in train.iter().zip(examples) {
            let Some(contact) = traj.mean_contact_position() else { continue };
            for (slot, &o) in ex.slots.iter().enumerate() {
                let Some(t) = ex.final_token[slot] else { continue };
                if traj.obstacles[o].is_static {
                    continue;
                }
                let b = BoxEstimate::from_label(&ex.labels[t * N_SLOTS + slot]);
                w += b.width;
                l += b.length;
                th += b.pose.theta;
                off = off + (b.pose.position() - contact);
                n += 1;
            }
        }
        (n > 0).then(|| {
            let k = 1.0 / n as f64;
            Baseline { width: w * k, length: l * k, theta: th * k, offset: off * k }
        })
    }

    /// Mean box placed at the robot's mean contact position, optionally
    /// shifted by the mean training offset.
    pub fn predict(&self, traj: &Trajectory, with_offset: bool) -> Option<BoxEstimate> {
        let c = traj.mean_contact_position()?;
        let c = if with_offset { c + self.offset } else { c };
        Some(BoxEstimate { pose: Pose2::new(c.x, c.y, self.theta), width: self.width, length: self.length })
    }

    pub fn results(&self, traj: &Trajectory, example: &Example, with_offset: bool) -> Vec<ObstacleResult> {
        let mut out = Vec::new();
        let Some(pred) = self.predict(traj, with_offset) else { return out };
        for (slot, &o) in example.slots.iter().enumerate() {
            let Some(t) = example.final_token[slot] else { continue };
            if traj.obstacles[o].is_static {
                continue;
            }
            let truth = BoxEstimate::from_label(&example.labels[t * N_SLOTS + slot]);
            out.push(result_for(traj, o, &truth, &pred));
        }
        out
    }
}

/// Share of supervised cells whose contact flag is predicted correctly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl ContactAccuracy {
    pub fn add(&mut self, example: &Example, raw: &[f64]) {
        for t in 0..example.len {
            for s in 0..N_SLOTS {
                if !example.mask[t * N_SLOTS + s] {
                    continue;
                }
                let logit = raw[t * OUTPUTS + s * SLOT_OUTPUTS];
                let predicted = logit > 0.0;
                let actual = example.labels[t * N_SLOTS + s].contact > 0.5;
                self.correct += usize::from(predicted == actual);
                self.total += 1;
            }
        }
    }

    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Everything measured on a held-out set with one set of parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub results: Vec<ObstacleResult>,
    pub baseline: Vec<ObstacleResult>,
    pub baseline_offset: Vec<ObstacleResult>,
    pub contact: ContactAccuracy,
}

fn role_mean(results: &[ObstacleResult], movable: bool) -> Option<f64> {
    mean(results.iter().filter(|r| (r.role == Role::Movable) == movable).map(|r| r.iou_final))
}

impl Evaluation {
    pub fn movable_iou(&self) -> Option<f64> {
        role_mean(&self.results, true)
    }

    pub fn static_iou(&self) -> Option<f64> {
        role_mean(&self.results, false)
    }

    pub fn baseline_iou(&self) -> Option<f64> {
        role_mean(&self.baseline, true)
    }

    pub fn baseline_offset_iou(&self) -> Option<f64> {
        role_mean(&self.baseline_offset, true)
    }

    pub fn report(&self) -> Report {
        aggregate_report(&self.results)
    }
}

pub fn evaluate(
    params: &OrmParams,
    trajs: &[Trajectory],
    examples: &[Example],
    baseline: Option<&Baseline>,
) -> Evaluation {
    evaluate_with(&mut |ex| forward(params, &ex.features, ex.len).out, trajs, examples, baseline)
}

/// [`evaluate`] for any predictor that maps an example to raw outputs.
pub fn evaluate_with(
    predict: &mut dyn FnMut(&Example) -> Vec<f64>,
    trajs: &[Trajectory],
    examples: &[Example],
    baseline: Option<&Baseline>,
) -> Evaluation {
    let mut e = Evaluation::default();
    for (traj, ex) in trajs.iter().zip(examples) {
        if ex.slots.is_empty() {
            continue;
        }
        let raw = predict(ex);
        e.results.extend(final_results(traj, ex, &raw));
        e.contact.add(ex, &raw);
        if let Some(b) = baseline {
            e.baseline.extend(b.results(traj, ex, false));
            e.baseline_offset.extend(b.results(traj, ex, true));
        }
    }
    e
}

/// Mean movable IoU only, for per-epoch monitoring.
pub fn movable_iou(params: &OrmParams, trajs: &[Trajectory], examples: &[Example]) -> Option<f64> {
    evaluate(params, trajs, examples, None).movable_iou()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub params: OrmParams,
    pub log: TrainLog,
    pub evaluation: Evaluation,
}

/// Fits normalization and parameters on `train`, logs held-out movable IoU
/// after every epoch and evaluates the final parameters on `heldout`.
pub fn fit_and_evaluate(train: &[Trajectory], heldout: &[Trajectory], config: &OrmConfig) -> Result<Fit, ModelError> {
    let train_ex = build_examples(train, config.max_tokens)?;
    let test_ex = build_examples(heldout, config.max_tokens)?;
    let params = OrmParams::init(config, Normalizer::fit(&train_ex))?;
    let state = train_orm(TrainState::new(params), &train_ex, &mut |p| movable_iou(p, heldout, &test_ex))?;
    let baseline = Baseline::fit(train, &train_ex);
    let evaluation = evaluate(&state.params, heldout, &test_ex, baseline.as_ref());
    Ok(Fit { params: state.params, log: state.log, evaluation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: char,
    pub mask: ChannelMask,
    pub movable_iou: Option<f64>,
    pub static_iou: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Trains one model per channel subset; configs differ only in the mask.
pub fn ablation_suite(
    train: &[Trajectory],
    heldout: &[Trajectory],
    base: &OrmConfig,
    subsets: &[char],
) -> Result<Vec<AblationRow>, ModelError> {
    let mut rows = Vec::new();
    for &subset in subsets {
        let mask = ChannelMask::subset(subset).ok_or(ModelError::Config("unknown ablation subset"))?;
        let config = OrmConfig { channel_mask: mask, ..base.clone() };
        let fit = fit_and_evaluate(train, heldout, &config)?;
        rows.push(AblationRow {
            subset: subset.to_ascii_uppercase(),
            mask,
            movable_iou: fit.evaluation.movable_iou(),
            static_iou: fit.evaluation.static_iou(),
            final_loss: fit.log.epochs.last().map(|e| e.mean_loss),
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<7} {:<16} {:>12} {:>12}", "subset", "channels", "movable IoU", "static IoU");
    let num = |v: Option<f64>| v.map_or_else(|| String::from("–"), |v| format!("{v:.3}"));
    for r in rows {
        let mut ch = Vec::new();
        for (on, name) in [(r.mask.q, "q"), (r.mask.qdot, "qdot"), (r.mask.tau, "tau"), (r.mask.pose, "pose")] {
            if on {
                ch.push(name);
            }
        }
        let _ =
            writeln!(s, "{:<7} {:<16} {:>12} {:>12}", r.subset, ch.join(","), num(r.movable_iou), num(r.static_iou));
    }
    s
}
