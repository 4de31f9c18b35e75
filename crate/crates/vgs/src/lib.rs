//! File formats, the remote provider client and the experiment runner for
//! visual grounding score guided decoding. The algorithms themselves live in
//! [`vgs_core`].

pub mod experiment;
pub mod formats;
pub mod image_io;
pub mod remote;
pub mod report;
pub mod synth;
pub mod trace;

pub use vgs_core;
