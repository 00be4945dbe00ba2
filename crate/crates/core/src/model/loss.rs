use alloc::vec;
use alloc::vec::Vec;

use super::{sigmoid, Example, SlotLabel, N_SLOTS, OUTPUTS, SLOT_OUTPUTS};
use crate::geometry::wrap_angle;
use crate::math;

const LOGIT_CLAMP: f64 = 15.0;

/// Unweighted loss components of one supervised cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub contact_bce: f64,
    pub static_bce: f64,
    pub pose_mse: f64,
    pub shape_mse: f64,
}

impl LossTerms {
    pub fn weighted(&self, alphas: &[f64; 4]) -> f64 {
        alphas[0] * self.contact_bce
            + alphas[1] * self.static_bce
            + alphas[2] * self.pose_mse
            + alphas[3] * self.shape_mse
    }
}

/// BCE on a clamped logit and its derivative with respect to the raw logit.
fn bce(raw: f64, y: f64) -> (f64, f64) {
    let z = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let softplus = z.max(0.0) + math::ln_1p(math::exp(-z.abs()));
    let grad = if raw.abs() < LOGIT_CLAMP { sigmoid(z) - y } else { 0.0 };
    (softplus - y * z, grad)
}

fn residuals(raw: &[f64], label: &SlotLabel) -> ([f64; 3], [f64; 2]) {
    let t = &label.target;
    ([raw[2] - t[0], raw[3] - t[1], wrap_angle(raw[4] - t[2])], [raw[5] - t[3], raw[6] - t[4]])
}

pub fn slot_loss_terms(raw: &[f64], label: &SlotLabel) -> LossTerms {
    let (pose, shape) = residuals(raw, label);
    LossTerms {
        contact_bce: bce(raw[0], label.contact).0,
        static_bce: bce(raw[1], label.is_static).0,
        pose_mse: pose.iter().map(|e| e * e).sum::<f64>() / 3.0,
        shape_mse: shape.iter().map(|e| e * e).sum::<f64>() / 2.0,
    }
}

/// Window-averaged loss of one sequence, summed over slots, and its gradient
/// with respect to the raw outputs. Only masked cells are read.
pub fn masked_loss(out: &[f64], example: &Example, alphas: &[f64; 4]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; out.len()];
    let mut loss = 0.0;
    for slot in 0..N_SLOTS {
        let n = example.window_len[slot];
        if n == 0 {
            continue;
        }
        let inv = 1.0 / n as f64;
        for t in 0..example.len {
            if !example.mask[t * N_SLOTS + slot] {
                continue;
            }
            let label = &example.labels[t * N_SLOTS + slot];
            let at = t * OUTPUTS + slot * SLOT_OUTPUTS;
            let raw = &out[at..at + SLOT_OUTPUTS];
            loss += inv * slot_loss_terms(raw, label).weighted(alphas);
            let (pose, shape) = residuals(raw, label);
            let g = &mut grad[at..at + SLOT_OUTPUTS];
            g[0] = inv * alphas[0] * bce(raw[0], label.contact).1;
            g[1] = inv * alphas[1] * bce(raw[1], label.is_static).1;
            for i in 0..3 {
                g[2 + i] = inv * alphas[2] * 2.0 * pose[i] / 3.0;
            }
            for i in 0..2 {
                g[5 + i] = inv * alphas[3] * shape[i];
            }
        }
    }
    (loss, grad)
}
