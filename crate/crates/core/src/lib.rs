//! Proprioceptive obstacle reconstruction for a blind legged robot.
//!
//! A robot walks down a cluttered corridor without vision. This crate holds
//! everything that is pure computation: oriented-box geometry, a
//! quasi-static planar push simulator, a trot-gait proprioception surrogate,
//! scripted navigation controllers, trajectory labelling and curation, the
//! causal-transformer reconstruction model with hand-written reverse-mode
//! gradients, and the evaluation metrics. File formats and the command-line
//! front end live in the `probe` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod math;
pub mod model;
pub mod policy;
pub mod proprio;
pub mod rng;
pub mod worldsim;
