//! Visual grounding score (VGS) guided decoding.
//!
//! Vision-language models tend to hallucinate tokens that come from the
//! language prior rather than from the image. Those tokens keep (or gain)
//! probability when the image is degraded, while grounded tokens lose it.
//! This crate measures that per token,
//!
//! ```text
//! vgs(t)   = (p_orig(t) - p_dist(t)) / (p_orig(t) + p_dist(t))
//! p_out(t) ∝ p_orig(t) * max(1 + alpha * vgs(t), delta)
//! ```
//!
//! and uses it to reweight greedy decoding. The crate is `no_std` with
//! `alloc`; file formats, the remote provider client and the experiment
//! runner live in the `vgs` crate.
//!
//! Modules:
//! - [`prob`]: probability vectors, softmax, sparse-to-dense alignment
//! - [`distort`]: seeded Gaussian + Poisson image distortion
//! - [`model`]: the provider abstraction plus scripted and synthetic backends
//! - [`decode`]: greedy, VCD-style and VGS decoders and the decode loop
//! - [`eval`]: answer normalization, closed accuracy, open recall, reports
//! - [`stats`]: exact McNemar and paired bootstrap

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod decode;
pub mod distort;
pub mod eval;
pub mod model;
pub mod prob;
pub mod rng;
pub mod stats;

pub use decode::{
    compute_vgs, run_decode, vcd_adjust, vgs_reweight, DecodeConfig, DecodeError, DecodeOutput,
    DecodeTrace, StepRecord, Strategy, VgsParams, VgsVec,
};
pub use distort::{distort, noise_energy, Image, NoiseMode, NoiseParams};
pub use model::{
    CountingProvider, ModelError, ModelProvider, Prefix, ProviderDist, Query, ScriptedModel,
    SyntheticModel, SyntheticModelSpec,
};
pub use prob::{densify_pair, normalize, softmax, LogitVec, ProbDist, SparseDist, TokenId, Vocab};
