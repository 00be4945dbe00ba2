//! Obstacle reconstruction model: a causal transformer encoder over
//! proprioceptive tokens followed by a two-layer decoder that emits, per
//! token, seven values for each of `N_SLOTS` obstacle slots.
//!
//! Everything runs in `f64` on one flat parameter vector; gradients are
//! hand-derived in [`network`].

mod data;
mod loss;
mod network;
mod train;

pub use data::{
    build_example, build_examples, random_label, synthetic_example, Example, Normalizer, SlotLabel, NUM_FEATURES,
};
pub use loss::{masked_loss, slot_loss_terms, LossTerms};
pub use network::{backward, forward, predict, ForwardCache, GradFault};
pub use train::{
    batch_gradient, batch_loss, finite_diff_check, finite_diff_check_with, train_orm, train_orm_until, Adam, EpochLog,
    ModelError, TrainLog, TrainState,
};

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DEFAULT_STRIDE, T_MAX};
use crate::geometry::{wrap_angle, Pose2};
use crate::rng::{self, Stream};
use crate::worldsim::{CORRIDOR_LENGTH, CORRIDOR_WIDTH, MAX_EXTENT};

pub const N_SLOTS: usize = 3;
/// Per slot: contact logit, static logit, x, y, theta, w, l.
pub const SLOT_OUTPUTS: usize = 7;
pub const OUTPUTS: usize = N_SLOTS * SLOT_OUTPUTS;
/// Smallest predicted box side used for geometry.
pub const MIN_PREDICTED_SIDE: f64 = 0.05;

/// Input channel groups that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMask {
    pub q: bool,
    pub qdot: bool,
    pub tau: bool,
    pub pose: bool,
}

impl ChannelMask {
    pub const ALL: ChannelMask = ChannelMask { q: true, qdot: true, tau: true, pose: true };

    /// Ablation subsets `A` to `E`.
    pub fn subset(name: char) -> Option<ChannelMask> {
        let m = |q, qdot, tau, pose| Some(ChannelMask { q, qdot, tau, pose });
        match name.to_ascii_uppercase() {
            'A' => m(true, false, false, false),
            'B' => m(true, true, false, false),
            'C' => m(true, true, true, false),
            'D' => m(true, true, true, true),
            'E' => m(false, false, true, true),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.q || self.qdot || self.tau || self.pose)
    }

    /// Whether input feature `f` is kept.
    pub fn keeps(&self, f: usize) -> bool {
        match f {
            0..=11 => self.q,
            12..=23 => self.qdot,
            24..=35 => self.tau,
            _ => self.pose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrmConfig {
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    /// Hidden width of the feed-forward layer inside each block.
    pub ff_hidden: usize,
    /// Hidden width of the decoder.
    pub mlp_hidden: usize,
    /// Length of the positional table.
    pub max_tokens: usize,
    pub channel_mask: ChannelMask,
    /// Weights of contact BCE, static BCE, pose MSE and shape MSE.
    pub alphas: [f64; 4],
    pub learning_rate: f64,
    /// Anneal the step size along a half cosine to zero over all epochs.
    pub cosine_decay: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl OrmConfig {
    fn base(embed_dim: usize, num_blocks: usize, epochs: usize) -> Self {
        OrmConfig {
            embed_dim,
            num_blocks,
            num_heads: 2,
            ff_hidden: 4 * embed_dim,
            mlp_hidden: 2 * embed_dim,
            max_tokens: (T_MAX as usize).div_ceil(DEFAULT_STRIDE as usize),
            channel_mask: ChannelMask::ALL,
            alphas: [1.0; 4],
            learning_rate: 3e-4,
            cosine_decay: false,
            epochs,
            batch_size: 16,
            seed: 0,
        }
    }

    /// Full-size model: 512-d embedding, four blocks, 20 epochs.
    pub fn full() -> Self {
        OrmConfig::base(512, 4, 20)
    }

    /// Sized for a single CPU core. Pose and shape terms are up-weighted
    /// because their targets are normalized by the corridor and extent scale.
    pub fn desk() -> Self {
        OrmConfig {
            alphas: [1.0, 1.0, 20.0, 5.0],
            learning_rate: 1e-3,
            cosine_decay: true,
            batch_size: 8,
            ..OrmConfig::base(64, 2, 10)
        }
    }

    /// Gradient-check size.
    pub fn tiny() -> Self {
        OrmConfig { max_tokens: 16, batch_size: 2, ..OrmConfig::base(8, 1, 1) }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &'static str| Err(ModelError::Config(what));
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad("embed_dim must be a positive multiple of num_heads");
        }
        if self.ff_hidden == 0 || self.mlp_hidden == 0 || self.max_tokens == 0 {
            return bad("layer widths and max_tokens must be positive");
        }
        if self.channel_mask.is_empty() {
            return bad("channel_mask selects no input channel");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alphas must be finite and non-negative");
        }
        Ok(())
    }
}

/// Offsets of one encoder block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor. Linear weights are `[out][in]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embed_w: usize,
    pub embed_b: usize,
    pub pos: usize,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub dec_w1: usize,
    pub dec_b1: usize,
    pub dec_w2: usize,
    pub dec_b2: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &OrmConfig) -> Layout {
        let (d, f, m) = (c.embed_dim, c.ff_hidden, c.mlp_hidden);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let embed_w = take(d * NUM_FEATURES);
        let embed_b = take(d);
        let pos = take(c.max_tokens * d);
        let blocks = (0..c.num_blocks)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(f * d),
                b1: take(f),
                w2: take(d * f),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let dec_w1 = take(m * d);
        let dec_b1 = take(m);
        let dec_w2 = take(OUTPUTS * m);
        let dec_b2 = take(OUTPUTS);
        Layout { embed_w, embed_b, pos, blocks, lnf_g, lnf_b, dec_w1, dec_b1, dec_w2, dec_b2, total: at }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrmParams {
    pub config: OrmConfig,
    pub norm: Normalizer,
    pub values: Vec<f64>,
}

impl OrmParams {
    /// Seeded initialization; weights scale with `1/sqrt(fan_in)`, residual
    /// output projections are shrunk by the depth.
    pub fn init(config: &OrmConfig, norm: Normalizer) -> Result<OrmParams, ModelError> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut values = alloc::vec![0.0; layout.total];
        let mut rng = rng::stream(config.seed, Stream::Init);
        let (d, f, m) = (config.embed_dim, config.ff_hidden, config.mlp_hidden);
        let mut fill = |values: &mut [f64], at: usize, n: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in &mut values[at..at + n] {
                *v = normal.sample(&mut rng);
            }
        };
        let inv = |n: usize| 1.0 / crate::math::sqrt(n as f64);
        let depth = inv(2 * config.num_blocks.max(1));
        fill(&mut values, layout.embed_w, d * NUM_FEATURES, inv(NUM_FEATURES));
        fill(&mut values, layout.pos, config.max_tokens * d, 0.1);
        for b in &layout.blocks {
            values[b.ln1_g..b.ln1_g + d].fill(1.0);
            values[b.ln2_g..b.ln2_g + d].fill(1.0);
            for w in [b.wq, b.wk, b.wv] {
                fill(&mut values, w, d * d, inv(d));
            }
            fill(&mut values, b.wo, d * d, inv(d) * depth);
            fill(&mut values, b.w1, f * d, inv(d));
            fill(&mut values, b.w2, d * f, inv(f) * depth);
        }
        values[layout.lnf_g..layout.lnf_g + d].fill(1.0);
        fill(&mut values, layout.dec_w1, m * d, inv(d));
        fill(&mut values, layout.dec_w2, OUTPUTS * m, inv(m));
        Ok(OrmParams { config: config.clone(), norm, values })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A slot's decoded output in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub contact_prob: f64,
    pub static_prob: f64,
    pub pose: Pose2,
    pub width: f64,
    pub length: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + crate::math::exp(-z))
    } else {
        let e = crate::math::exp(z);
        e / (1.0 + e)
    }
}

/// Maps raw slot outputs back to world units. Sides are clamped to
/// [`MIN_PREDICTED_SIDE`].
pub fn denormalize(raw: &[f64]) -> SlotPrediction {
    SlotPrediction {
        contact_prob: sigmoid(raw[0]),
        static_prob: sigmoid(raw[1]),
        pose: Pose2::new(raw[2] * CORRIDOR_LENGTH, raw[3] * CORRIDOR_WIDTH, wrap_angle(raw[4])),
        width: (raw[5] * MAX_EXTENT).max(MIN_PREDICTED_SIDE),
        length: (raw[6] * MAX_EXTENT).max(MIN_PREDICTED_SIDE),
    }
}

/// Inverse of [`denormalize`] for the regression entries.
pub fn normalize_box(pose: Pose2, width: f64, length: f64) -> [f64; 5] {
    [pose.x / CORRIDOR_LENGTH, pose.y / CORRIDOR_WIDTH, pose.theta, width / MAX_EXTENT, length / MAX_EXTENT]
}

/// Uniform random parameters, for property tests.
pub fn random_values<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}
