//! Decoding strategies and the autoregressive loop.
//!
//! Every strategy selects the argmax of its final distribution (ties to the
//! lowest token id). They differ in how that distribution is formed:
//!
//! - [`Strategy::Greedy`]: `p_orig` as-is, one forward pass per step.
//! - [`Strategy::Vcd`]: subtractive log-space contrast against the
//!   distorted-image distribution, restricted to a plausibility set.
//! - [`Strategy::Vgs`]: multiplicative reweighting by the visual grounding
//!   score, `p_orig(t) * max(1 + alpha * vgs(t), delta)`, renormalized.
//!
//! Contrastive strategies distort the image once per episode and query the
//! provider twice per step.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::distort::{distort, DistortError, Image, NoiseParams};
use crate::model::{ModelError, ModelProvider, Prefix, ProviderDist, Query};
use crate::prob::{densify_pair, normalize, ProbDist, ProbError, TokenId, Vocab};

/// Stand-in for `ln(0)` inside [`vcd_adjust`].
pub const LOG_ZERO: f64 = -1e9;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_VCD_ALPHA: f64 = 1.0;
pub const DEFAULT_VCD_BETA: f64 = 0.1;
pub const DEFAULT_MAX_LEN: usize = 64;
pub const DEFAULT_TAIL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Strategy {
    Greedy,
    Vcd,
    Vgs,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Vcd => "vcd",
            Strategy::Vgs => "vgs",
        }
    }

    /// Provider calls per decoding step.
    pub fn passes_per_step(self) -> usize {
        match self {
            Strategy::Greedy => 1,
            Strategy::Vcd | Strategy::Vgs => 2,
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Strategy::Greedy),
            "vcd" => Ok(Strategy::Vcd),
            "vgs" => Ok(Strategy::Vgs),
            other => Err(alloc::format!("unknown strategy {other:?}")),
        }
    }
}

/// Reweighting strength `alpha >= 0` and probability floor `0 < delta < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VgsParams {
    pub alpha: f64,
    pub delta: f64,
}

impl Default for VgsParams {
    fn default() -> Self {
        VgsParams {
            alpha: DEFAULT_ALPHA,
            delta: DEFAULT_DELTA,
        }
    }
}

impl VgsParams {
    pub fn new(alpha: f64, delta: f64) -> Result<Self, DecodeError> {
        let p = VgsParams { alpha, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(DecodeError::Config("alpha must be finite and >= 0".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DecodeError::Config("delta must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `max(1 + alpha * score, delta)`.
    pub fn factor(&self, score: f64) -> f64 {
        (1.0 + self.alpha * score).max(self.delta)
    }
}

/// Per-token visual grounding scores, each in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VgsVec(Vec<f64>);

impl VgsVec {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn score(&self, id: TokenId) -> f64 {
        self.0.get(id.index()).copied().unwrap_or(0.0)
    }
}

/// `(p_orig - p_dist) / (p_orig + p_dist)` per token; `0/0` is taken as 0.
pub fn compute_vgs(p_orig: &ProbDist, p_dist: &ProbDist) -> Result<VgsVec, ProbError> {
    if p_orig.len() != p_dist.len() {
        return Err(ProbError::LengthMismatch(p_orig.len(), p_dist.len()));
    }
    let scores = p_orig
        .as_slice()
        .iter()
        .zip(p_dist.as_slice())
        .map(|(&a, &b)| {
            let s = a + b;
            if s == 0.0 {
                0.0
            } else {
                ((a - b) / s).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok(VgsVec(scores))
}

/// `normalize(p_orig(t) * max(1 + alpha * vgs(t), delta))`.
pub fn vgs_reweight(
    p_orig: &ProbDist,
    g: &VgsVec,
    params: &VgsParams,
) -> Result<ProbDist, ProbError> {
    if p_orig.len() != g.0.len() {
        return Err(ProbError::LengthMismatch(p_orig.len(), g.0.len()));
    }
    let weighted: Vec<f64> = p_orig
        .as_slice()
        .iter()
        .zip(&g.0)
        .map(|(&p, &s)| p * params.factor(s))
        .collect();
    // every factor is >= delta > 0 and p_orig has positive mass
    normalize(&weighted)
}

/// VCD-style contrast.
///
/// Candidates are tokens with `p_orig(t) >= beta * max p_orig`. Over those,
/// `score(t) = (1 + alpha) ln p_orig(t) - alpha ln p_dist(t)` is softmaxed;
/// everything else gets zero.
pub fn vcd_adjust(
    p_orig: &ProbDist,
    p_dist: &ProbDist,
    vcd_alpha: f64,
    vcd_beta: f64,
) -> Result<ProbDist, ProbError> {
    if p_orig.len() != p_dist.len() {
        return Err(ProbError::LengthMismatch(p_orig.len(), p_dist.len()));
    }
    let ln = |p: f64| if p > 0.0 { libm::log(p) } else { LOG_ZERO };
    let top = p_orig.as_slice().iter().copied().fold(0.0, f64::max);
    let cutoff = vcd_beta * top;
    let scores: Vec<Option<f64>> = p_orig
        .as_slice()
        .iter()
        .zip(p_dist.as_slice())
        .map(|(&a, &b)| (a >= cutoff).then(|| (1.0 + vcd_alpha) * ln(a) - vcd_alpha * ln(b)))
        .collect();
    let max = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    // beta <= 1 keeps the argmax of p_orig in the candidate set
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| s.map_or(0.0, |s| libm::exp(s - max)))
        .collect();
    normalize(&exps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub vgs: VgsParams,
    pub vcd_alpha: f64,
    pub vcd_beta: f64,
    /// Distortion settings; `noise.seed` seeds the episode's distortion.
    pub noise: NoiseParams,
    pub max_len: usize,
    /// Floor used when densifying top-k provider output.
    pub tail_floor: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Vgs,
            vgs: VgsParams::default(),
            vcd_alpha: DEFAULT_VCD_ALPHA,
            vcd_beta: DEFAULT_VCD_BETA,
            noise: NoiseParams::default(),
            max_len: DEFAULT_MAX_LEN,
            tail_floor: DEFAULT_TAIL_FLOOR,
        }
    }
}

impl DecodeConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        DecodeConfig {
            strategy,
            ..DecodeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        self.vgs.validate()?;
        if !(self.vcd_alpha.is_finite() && self.vcd_alpha >= 0.0) {
            return Err(DecodeError::Config(
                "vcd_alpha must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.vcd_beta) {
            return Err(DecodeError::Config("vcd_beta must lie in [0, 1]".into()));
        }
        if self.max_len == 0 {
            return Err(DecodeError::Config("max_len must be >= 1".into()));
        }
        if !(self.tail_floor > 0.0 && self.tail_floor.is_finite()) {
            return Err(DecodeError::Config("tail_floor must be > 0".into()));
        }
        self.noise.validate().map_err(DecodeError::Noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: usize,
    pub token: TokenId,
    pub p_orig: f64,
    pub p_dist: Option<f64>,
    pub vgs: Option<f64>,
    pub factor: Option<f64>,
    pub p_final: f64,
    /// Rank of the chosen token under `p_orig`; 0 means greedy agrees.
    pub orig_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecodeTrace {
    pub strategy: Strategy,
    pub steps: Vec<StepRecord>,
    pub forward_passes: usize,
}

impl DecodeTrace {
    fn new(strategy: Strategy) -> Self {
        DecodeTrace {
            strategy,
            steps: Vec::new(),
            forward_passes: 0,
        }
    }

    /// Steps where the strategy overrode the greedy choice.
    pub fn overrides(&self) -> usize {
        self.steps.iter().filter(|s| s.orig_rank > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Generated content, without the end-of-sequence token.
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
    pub hit_eos: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("distortion failed: {0}")]
    Noise(DistortError),
    #[error("provider failed at step {step}: {source}")]
    Provider {
        step: usize,
        source: ModelError,
        partial: Box<DecodeOutput>,
    },
}

impl DecodeError {
    pub fn partial(&self) -> Option<&DecodeOutput> {
        match self {
            DecodeError::Provider { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

fn dense_for(vocab: &Vocab, d: ProviderDist, tail_floor: f64) -> Result<ProbDist, ModelError> {
    match d {
        ProviderDist::Dense(p) if p.len() == vocab.len() => Ok(p),
        ProviderDist::Dense(p) => Err(ProbError::LengthMismatch(p.len(), vocab.len()).into()),
        ProviderDist::Sparse(s) => Ok(s.densify(vocab.len(), tail_floor)?),
    }
}

fn align(
    vocab: &Vocab,
    orig: ProviderDist,
    dist: ProviderDist,
    tail_floor: f64,
) -> Result<(ProbDist, ProbDist), ModelError> {
    match (orig, dist) {
        (ProviderDist::Dense(a), ProviderDist::Dense(b)) => Ok((
            dense_for(vocab, ProviderDist::Dense(a), tail_floor)?,
            dense_for(vocab, ProviderDist::Dense(b), tail_floor)?,
        )),
        (a, b) => Ok(densify_pair(
            &a.to_sparse(),
            &b.to_sparse(),
            vocab.len(),
            tail_floor,
        )?),
    }
}

/// Runs one decoding episode until end-of-sequence or `cfg.max_len` tokens.
pub fn run_decode<P: ModelProvider + ?Sized>(
    provider: &P,
    image: &Image,
    query: &Query,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError> {
    cfg.validate()?;
    let vocab = provider.vocab();
    let eos = vocab.eos();
    let distorted = match cfg.strategy {
        Strategy::Greedy => None,
        Strategy::Vcd | Strategy::Vgs => {
            Some(distort(image, &cfg.noise).map_err(DecodeError::Noise)?)
        }
    };

    let mut out = DecodeOutput {
        tokens: Vec::new(),
        trace: DecodeTrace::new(cfg.strategy),
        hit_eos: false,
    };
    let mut prefix = Prefix::default();

    for step in 0..cfg.max_len {
        let result = decode_step(
            provider,
            image,
            distorted.as_ref(),
            query,
            &prefix,
            cfg,
            &mut out.trace,
        );
        let record = match result {
            Ok(r) => r,
            Err(source) => {
                return Err(DecodeError::Provider {
                    step,
                    source,
                    partial: Box::new(out),
                })
            }
        };
        let token = record.token;
        out.trace.steps.push(StepRecord { step, ..record });
        if token == eos {
            out.hit_eos = true;
            break;
        }
        out.tokens.push(token);
        prefix.push(token);
    }
    Ok(out)
}

fn decode_step<P: ModelProvider + ?Sized>(
    provider: &P,
    image: &Image,
    distorted: Option<&Image>,
    query: &Query,
    prefix: &Prefix,
    cfg: &DecodeConfig,
    trace: &mut DecodeTrace,
) -> Result<StepRecord, ModelError> {
    let vocab = provider.vocab();
    trace.forward_passes += 1;
    let orig = provider.distribution(image, query, prefix)?;

    let Some(distorted) = distorted else {
        let p_orig = dense_for(vocab, orig, cfg.tail_floor)?;
        let token = p_orig.argmax();
        return Ok(StepRecord {
            step: 0,
            token,
            p_orig: p_orig.prob(token),
            p_dist: None,
            vgs: None,
            factor: None,
            p_final: p_orig.prob(token),
            orig_rank: 0,
        });
    };

    trace.forward_passes += 1;
    let dist = provider.distribution(distorted, query, prefix)?;
    let (p_orig, p_dist) = align(vocab, orig, dist, cfg.tail_floor)?;
    let g = compute_vgs(&p_orig, &p_dist)?;
    let (p_final, factor) = match cfg.strategy {
        Strategy::Vgs => (vgs_reweight(&p_orig, &g, &cfg.vgs)?, true),
        Strategy::Vcd => (
            vcd_adjust(&p_orig, &p_dist, cfg.vcd_alpha, cfg.vcd_beta)?,
            false,
        ),
        Strategy::Greedy => unreachable!("greedy has no distorted pass"),
    };
    let token = p_final.argmax();
    Ok(StepRecord {
        step: 0,
        token,
        p_orig: p_orig.prob(token),
        p_dist: Some(p_dist.prob(token)),
        vgs: Some(g.score(token)),
        factor: factor.then(|| cfg.vgs.factor(g.score(token))),
        p_final: p_final.prob(token),
        orig_rank: p_orig.rank_of(token),
    })
}

/// Final distribution for one step, outside the loop. Useful for analysis.
pub fn final_distribution(
    strategy: Strategy,
    p_orig: &ProbDist,
    p_dist: &ProbDist,
    cfg: &DecodeConfig,
) -> Result<ProbDist, ProbError> {
    match strategy {
        Strategy::Greedy => Ok(p_orig.clone()),
        Strategy::Vgs => vgs_reweight(p_orig, &compute_vgs(p_orig, p_dist)?, &cfg.vgs),
        Strategy::Vcd => vcd_adjust(p_orig, p_dist, cfg.vcd_alpha, cfg.vcd_beta),
    }
}
