use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{normalize_box, ModelError, N_SLOTS};
use crate::dataset::Trajectory;
use crate::math;
use crate::proprio::NUM_JOINTS;

/// q, qdot, tau for all joints, then x, y, sin(theta), cos(theta).
pub const NUM_FEATURES: usize = 3 * NUM_JOINTS + 4;

/// Per-feature z-normalization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer { mean: vec![0.0; NUM_FEATURES], std: vec![1.0; NUM_FEATURES] }
    }

    pub fn fit(examples: &[Example]) -> Self {
        let n: usize = examples.iter().map(|e| e.len).sum();
        if n == 0 {
            return Self::identity();
        }
        let mut mean = vec![0.0; NUM_FEATURES];
        for e in examples {
            for row in e.features.chunks_exact(NUM_FEATURES) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; NUM_FEATURES];
        for e in examples {
            for row in e.features.chunks_exact(NUM_FEATURES) {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let std = var.iter().map(|v| math::sqrt(v / n as f64)).map(|s| if s > 1e-9 { s } else { 1.0 }).collect();
        Normalizer { mean, std }
    }
}

/// Supervision for one slot at one token.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotLabel {
    pub contact: f64,
    pub is_static: f64,
    /// Normalized x, y, theta, w, l.
    pub target: [f64; 5],
}

/// One trajectory as model input and masked targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub episode: u64,
    pub len: usize,
    /// Raw features, `len * NUM_FEATURES`.
    pub features: Vec<f64>,
    /// `len * N_SLOTS` cells. Cells outside a window hold whatever is known
    /// (ground truth or zeros) and are never read by the loss.
    pub labels: Vec<SlotLabel>,
    /// True inside the slot's contact window.
    pub mask: Vec<bool>,
    /// Obstacle index held by each slot.
    pub slots: Vec<usize>,
    /// Token at the end of each occupied slot's window.
    pub final_token: [Option<usize>; N_SLOTS],
    /// Number of supervised tokens per slot.
    pub window_len: [usize; N_SLOTS],
}

impl Example {
    pub fn token(&self, t: usize) -> &[f64] {
        &self.features[t * NUM_FEATURES..(t + 1) * NUM_FEATURES]
    }
}

/// Token span `[first, last]` covering an obstacle's window on the
/// subsampled steps. A window that falls between two samples snaps to the
/// next sample, or to the last token when none follows.
fn token_span(ticks: &[u32], t_first: u32, t_final: u32) -> Option<(usize, usize)> {
    if ticks.is_empty() {
        return None;
    }
    let first = ticks.iter().position(|&t| t >= t_first).unwrap_or(ticks.len() - 1);
    let last = ticks.iter().rposition(|&t| t <= t_final).unwrap_or(0).max(first);
    Some((first, last))
}

pub fn build_example(traj: &Trajectory, max_tokens: usize) -> Result<Example, ModelError> {
    let len = traj.steps.len();
    if len > max_tokens {
        return Err(ModelError::SequenceTooLong { episode: traj.episode, len, max: max_tokens });
    }
    let mut features = Vec::with_capacity(len * NUM_FEATURES);
    for s in &traj.steps {
        let p = &s.proprio;
        features.extend_from_slice(&p.q);
        features.extend_from_slice(&p.qdot);
        features.extend_from_slice(&p.tau);
        features.extend_from_slice(&[p.pose.x, p.pose.y, math::sin(p.pose.theta), math::cos(p.pose.theta)]);
    }

    let ticks: Vec<u32> = traj.steps.iter().map(|s| s.tick).collect();
    let mut labels = vec![SlotLabel::default(); len * N_SLOTS];
    let mut mask = vec![false; len * N_SLOTS];
    let mut final_token = [None; N_SLOTS];
    let mut window_len = [0; N_SLOTS];
    let slots: Vec<usize> = traj.slot_order().into_iter().take(N_SLOTS).collect();
    for (slot, &i) in slots.iter().enumerate() {
        let w = traj.window(i).expect("slot comes from a window");
        let Some((first, last)) = token_span(&ticks, w.t_first, w.t_final) else { continue };
        let o = &traj.obstacles[i];
        for (t, step) in traj.steps.iter().enumerate() {
            labels[t * N_SLOTS + slot] = SlotLabel {
                contact: if step.contact_labels[i].in_contact() { 1.0 } else { 0.0 },
                is_static: if o.is_static { 1.0 } else { 0.0 },
                target: normalize_box(step.obstacle_poses[i], o.width, o.length),
            };
        }
        for t in first..=last {
            mask[t * N_SLOTS + slot] = true;
        }
        final_token[slot] = Some(last);
        window_len[slot] = last + 1 - first;
    }
    Ok(Example { episode: traj.episode, len, features, labels, mask, slots, final_token, window_len })
}

pub fn build_examples(trajs: &[Trajectory], max_tokens: usize) -> Result<Vec<Example>, ModelError> {
    trajs.iter().map(|t| build_example(t, max_tokens)).collect()
}

/// Random features and random labels on windows that end at the last token,
/// for checks that do not need a simulator.
pub fn synthetic_example<R: rand::Rng + ?Sized>(rng: &mut R, len: usize, episode: u64) -> Example {
    let features = (0..len * NUM_FEATURES).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let mut labels = vec![SlotLabel::default(); len * N_SLOTS];
    let mut mask = vec![false; len * N_SLOTS];
    let occupied = if len == 0 { 0 } else { rng.random_range(1..=N_SLOTS) };
    let mut final_token = [None; N_SLOTS];
    let mut window_len = [0; N_SLOTS];
    for slot in 0..occupied {
        let first = rng.random_range(0..len);
        for t in first..len {
            labels[t * N_SLOTS + slot] = random_label(rng);
            mask[t * N_SLOTS + slot] = true;
        }
        final_token[slot] = Some(len - 1);
        window_len[slot] = len - first;
    }
    Example { episode, len, features, labels, mask, slots: (0..occupied).collect(), final_token, window_len }
}

pub fn random_label<R: rand::Rng + ?Sized>(rng: &mut R) -> SlotLabel {
    let mut target = [0.0; 5];
    target.iter_mut().for_each(|v| *v = rng.random::<f64>() - 0.5);
    SlotLabel {
        contact: f64::from(u8::from(rng.random_bool(0.5))),
        is_static: f64::from(u8::from(rng.random_bool(0.5))),
        target,
    }
}
