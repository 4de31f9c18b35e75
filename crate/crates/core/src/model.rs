//! Conditional distribution providers: `(image, query, prefix) -> distribution`.
//!
//! Two in-process backends live here. [`ScriptedModel`] is a lookup table for
//! exact tests. [`SyntheticModel`] mixes a language prior with image-keyed
//! "visual" rows, and its grounding weight decays with the noise energy
//! between the queried image and its clean reference. That gives the
//! behaviour guided decoding looks for: grounded tokens lose mass under
//! distortion and prior-driven tokens gain it.
//!
//! The remote HTTP backend is in the `vgs` crate.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::distort::{noise_energy, DistortError, Image};
use crate::prob::{ProbDist, ProbError, SparseDist, TokenId, Vocab, SUM_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendErrorKind {
    Timeout,
    Transport,
    Status(u16),
    Schema,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} after {attempts} attempt(s): {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    pub attempts: u32,
    /// Whether a later call may reasonably succeed.
    pub retryable: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("no entry for image {image:?} with prefix {prefix:?}")]
    UnknownContext { image: String, prefix: Vec<TokenId> },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Image(#[from] DistortError),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
}

/// The text query `Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query(String);

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.is_empty() {
            return Err(ModelError::InvalidInput("query must be non-empty".into()));
        }
        Ok(Query(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Tokens generated so far.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Prefix(Vec<TokenId>);

impl Prefix {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Prefix(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, t: TokenId) {
        self.0.push(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    Dense,
    SparseTopK,
}

/// A provider's answer: a full distribution, or the top-k slice of one.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderDist {
    Dense(ProbDist),
    Sparse(SparseDist),
}

impl ProviderDist {
    pub fn to_sparse(&self) -> SparseDist {
        match self {
            ProviderDist::Dense(p) => SparseDist::from_dense(p),
            ProviderDist::Sparse(s) => s.clone(),
        }
    }
}

pub trait ModelProvider {
    fn vocab(&self) -> &Vocab;

    fn capability(&self) -> Capability {
        Capability::Dense
    }

    /// Next-token distribution given the image, query and generated prefix.
    /// Must be deterministic for equal arguments.
    fn distribution(
        &self,
        image: &Image,
        query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError>;
}

impl<P: ModelProvider + ?Sized> ModelProvider for &P {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn capability(&self) -> Capability {
        (**self).capability()
    }
    fn distribution(
        &self,
        image: &Image,
        query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError> {
        (**self).distribution(image, query, prefix)
    }
}

impl<P: ModelProvider + ?Sized> ModelProvider for Box<P> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn capability(&self) -> Capability {
        (**self).capability()
    }
    fn distribution(
        &self,
        image: &Image,
        query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError> {
        (**self).distribution(image, query, prefix)
    }
}

fn row(vocab: &Vocab, probs: Vec<f64>) -> Result<ProbDist, ModelError> {
    if probs.len() != vocab.len() {
        return Err(ProbError::LengthMismatch(probs.len(), vocab.len()).into());
    }
    Ok(ProbDist::new(probs)?)
}

fn image_key(image: &Image) -> Result<&str, ModelError> {
    image
        .id()
        .ok_or_else(|| ModelError::InvalidInput("image has no id".into()))
}

/// Lookup table keyed by `(image id, prefix)`.
///
/// A distorted image (id ending in `:distorted`) uses its own rows when the
/// table has them and otherwise falls back to the clean image's rows.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    vocab: Vocab,
    table: BTreeMap<(String, Vec<TokenId>), ProbDist>,
}

impl ScriptedModel {
    pub fn new(vocab: Vocab) -> Self {
        ScriptedModel {
            vocab,
            table: BTreeMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        image_id: impl Into<String>,
        prefix: Vec<TokenId>,
        probs: Vec<f64>,
    ) -> Result<(), ModelError> {
        let p = row(&self.vocab, probs)?;
        self.table.insert((image_id.into(), prefix), p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn get(&self, id: &str, prefix: &Prefix) -> Option<&ProbDist> {
        // BTreeMap<(String, Vec)> cannot be probed with borrowed parts
        self.table.get(&(id.to_string(), prefix.tokens().to_vec()))
    }
}

impl ModelProvider for ScriptedModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn distribution(
        &self,
        image: &Image,
        _query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError> {
        let id = image_key(image)?;
        let base = image.base_id().unwrap_or(id);
        self.get(id, prefix)
            .or_else(|| self.get(base, prefix))
            .cloned()
            .map(ProviderDist::Dense)
            .ok_or_else(|| ModelError::UnknownContext {
                image: id.to_string(),
                prefix: prefix.tokens().to_vec(),
            })
    }
}

/// Prior/visual mixture parameters.
///
/// `prior` is keyed by prefix. `visual` is keyed by `(clean image id,
/// prefix)`; a context without a visual row carries no visual evidence and
/// the output is the prior alone.
#[derive(Debug, Clone)]
pub struct SyntheticModelSpec {
    pub vocab: Vocab,
    pub prior: BTreeMap<Vec<TokenId>, ProbDist>,
    pub visual: BTreeMap<(String, Vec<TokenId>), ProbDist>,
    /// Grounding weight on the clean image, in [0, 1].
    pub g0: f64,
    /// Exponential decay of grounding per unit RMS noise energy.
    pub decay: f64,
}

impl SyntheticModelSpec {
    pub fn new(vocab: Vocab, g0: f64, decay: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&g0) {
            return Err(ModelError::InvalidInput("g0 must lie in [0, 1]".into()));
        }
        if !(decay.is_finite() && decay >= 0.0) {
            return Err(ModelError::InvalidInput(
                "decay must be finite and >= 0".into(),
            ));
        }
        Ok(SyntheticModelSpec {
            vocab,
            prior: BTreeMap::new(),
            visual: BTreeMap::new(),
            g0,
            decay,
        })
    }

    pub fn set_prior(&mut self, prefix: Vec<TokenId>, probs: Vec<f64>) -> Result<(), ModelError> {
        let p = row(&self.vocab, probs)?;
        self.prior.insert(prefix, p);
        Ok(())
    }

    pub fn set_visual(
        &mut self,
        image_id: impl Into<String>,
        prefix: Vec<TokenId>,
        probs: Vec<f64>,
    ) -> Result<(), ModelError> {
        let p = row(&self.vocab, probs)?;
        self.visual.insert((image_id.into(), prefix), p);
        Ok(())
    }

    /// `g(e) = g0 * exp(-decay * e)`.
    pub fn grounding(&self, energy: f64) -> f64 {
        self.g0 * libm::exp(-self.decay * energy)
    }
}

/// `(1 - g(e)) * prior(.|y) + g(e) * visual(.|v_ref, y)` with
/// `e = noise_energy(v_ref, v)`.
pub fn synthetic_distribution(
    spec: &SyntheticModelSpec,
    v: &Image,
    v_ref: &Image,
    y: &Prefix,
) -> Result<ProbDist, ModelError> {
    let prior = spec
        .prior
        .get(y.tokens())
        .ok_or_else(|| ModelError::UnknownContext {
            image: v.id().unwrap_or_default().to_string(),
            prefix: y.tokens().to_vec(),
        })?;
    let key = v_ref.base_id().unwrap_or_default().to_string();
    let Some(visual) = spec.visual.get(&(key, y.tokens().to_vec())) else {
        return Ok(prior.clone());
    };
    let g = spec.grounding(noise_energy(v_ref, v)?);
    let mixed: Vec<f64> = prior
        .as_slice()
        .iter()
        .zip(visual.as_slice())
        .map(|(&p, &q)| (1.0 - g) * p + g * q)
        .collect();
    // a convex combination of two distributions is already normalized
    debug_assert!((mixed.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
    Ok(ProbDist::new(mixed)?)
}

/// [`SyntheticModelSpec`] plus the clean reference images it measures
/// distortion against.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    spec: SyntheticModelSpec,
    references: BTreeMap<String, Image>,
}

impl SyntheticModel {
    pub fn new(spec: SyntheticModelSpec) -> Self {
        SyntheticModel {
            spec,
            references: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    /// Registers `image` as the clean reference for its id.
    pub fn add_reference(&mut self, image: Image) -> Result<(), ModelError> {
        let id = image_key(&image)?.to_string();
        self.references.insert(id, image);
        Ok(())
    }

    pub fn has_reference(&self, id: &str) -> bool {
        self.references.contains_key(id)
    }
}

impl ModelProvider for SyntheticModel {
    fn vocab(&self) -> &Vocab {
        &self.spec.vocab
    }

    fn distribution(
        &self,
        image: &Image,
        _query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError> {
        image_key(image)?;
        let base = image.base_id().unwrap_or_default();
        let reference = self.references.get(base).ok_or_else(|| {
            ModelError::InvalidInput(alloc::format!("no reference image registered for {base:?}"))
        })?;
        synthetic_distribution(&self.spec, image, reference, prefix).map(ProviderDist::Dense)
    }
}

/// Wraps a provider and counts forward passes.
#[derive(Debug)]
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: ModelProvider> ModelProvider for CountingProvider<P> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn capability(&self) -> Capability {
        self.inner.capability()
    }

    fn distribution(
        &self,
        image: &Image,
        query: &Query,
        prefix: &Prefix,
    ) -> Result<ProviderDist, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.distribution(image, query, prefix)
    }
}
