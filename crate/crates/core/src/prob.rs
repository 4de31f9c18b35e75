//! Probability-vector and logit numerics shared by every decoder.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Absolute tolerance for "sums to one".
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbError {
    #[error("empty vector")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("negative probability {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("sparse probabilities sum to {0}, which exceeds 1")]
    MassExceedsOne(f64),
    #[error("all-zero vector cannot be normalized")]
    Degenerate,
    #[error("duplicate token id {0}")]
    DuplicateToken(u32),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("duplicate token string {0:?}")]
    DuplicateTokenString(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("tail floor must be positive, got {0}")]
    BadTailFloor(f64),
}

/// Index into a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

/// Ordered token strings plus the end-of-sequence marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    eos: TokenId,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, eos: TokenId) -> Result<Self, ProbError> {
        if tokens.is_empty() {
            return Err(ProbError::Empty);
        }
        let mut seen = BTreeSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(ProbError::DuplicateTokenString(t.clone()));
            }
        }
        if eos.index() >= tokens.len() {
            return Err(ProbError::TokenOutOfRange {
                id: eos.0,
                size: tokens.len(),
            });
        }
        Ok(Vocab { tokens, eos })
    }

    /// Vocabulary whose token strings are `<0>`, `<1>`, ... for backends that
    /// only expose ids.
    pub fn opaque(size: usize, eos: TokenId) -> Result<Self, ProbError> {
        let tokens = (0..size).map(|i| alloc::format!("<{i}>")).collect();
        Vocab::new(tokens, eos)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, s: &str) -> Option<TokenId> {
        self.tokens
            .iter()
            .position(|t| t == s)
            .map(|i| TokenId(i as u32))
    }

    /// Renders a token sequence as whitespace-joined strings.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token_str(*id).unwrap_or("<unk>"));
        }
        out
    }
}

/// Raw logits `z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVec(Vec<f64>);

impl LogitVec {
    pub fn new(values: Vec<f64>) -> Result<Self, ProbError> {
        if values.is_empty() {
            return Err(ProbError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ProbError::NonFinite(i));
        }
        Ok(LogitVec(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Dense distribution over a vocabulary. Entries are non-negative and sum to
/// one within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        check_non_negative(&probs)?;
        let sum: f64 = probs.iter().sum();
        if libm::fabs(sum - 1.0) > SUM_TOLERANCE {
            return Err(ProbError::NotNormalized(sum));
        }
        Ok(ProbDist(probs))
    }

    pub fn one_hot(len: usize, at: TokenId) -> Result<Self, ProbError> {
        if at.index() >= len {
            return Err(ProbError::TokenOutOfRange {
                id: at.0,
                size: len,
            });
        }
        let mut v = vec![0.0; len];
        v[at.index()] = 1.0;
        Ok(ProbDist(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.0.get(id.index()).copied().unwrap_or(0.0)
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.0)
    }

    /// 0-based rank of `id` when tokens are ordered by descending probability
    /// with ties broken by lowest id.
    pub fn rank_of(&self, id: TokenId) -> usize {
        let p = self.prob(id);
        self.0
            .iter()
            .enumerate()
            .filter(|&(i, &q)| q > p || (q == p && i < id.index()))
            .count()
    }
}

pub(crate) fn argmax(v: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

fn check_non_negative(v: &[f64]) -> Result<(), ProbError> {
    if v.is_empty() {
        return Err(ProbError::Empty);
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProbError::NonFinite(index));
        }
        if value < 0.0 {
            return Err(ProbError::Negative { index, value });
        }
    }
    Ok(())
}

/// Numerically stable softmax: `exp(z_i - max z) / sum_j exp(z_j - max z)`.
pub fn softmax(z: &LogitVec) -> ProbDist {
    let z = z.as_slice();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| libm::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    // max entry contributes exp(0) = 1, so sum >= 1.
    ProbDist(exps.into_iter().map(|e| e / sum).collect())
}

/// Divides a non-negative vector by its sum.
pub fn normalize(v: &[f64]) -> Result<ProbDist, ProbError> {
    check_non_negative(v)?;
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(ProbError::Degenerate);
    }
    Ok(ProbDist(v.iter().map(|&x| x / sum).collect()))
}

/// Top-k style distribution: `(token, prob)` pairs with total mass at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDist {
    entries: Vec<(TokenId, f64)>,
}

impl SparseDist {
    pub fn new(entries: Vec<(TokenId, f64)>) -> Result<Self, ProbError> {
        let mut seen = BTreeSet::new();
        let mut sum = 0.0;
        for (index, &(id, p)) in entries.iter().enumerate() {
            if !seen.insert(id) {
                return Err(ProbError::DuplicateToken(id.0));
            }
            if !p.is_finite() {
                return Err(ProbError::NonFinite(index));
            }
            if p < 0.0 {
                return Err(ProbError::Negative { index, value: p });
            }
            sum += p;
        }
        if sum > 1.0 + SUM_TOLERANCE {
            return Err(ProbError::MassExceedsOne(sum));
        }
        Ok(SparseDist { entries })
    }

    /// Every entry of a dense distribution, as a sparse one.
    pub fn from_dense(p: &ProbDist) -> Self {
        SparseDist {
            entries: p
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &q)| (TokenId(i as u32), q))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Densifies this distribution alone (see [`densify_pair`]).
    pub fn densify(&self, vocab_size: usize, tail_floor: f64) -> Result<ProbDist, ProbError> {
        if !(tail_floor > 0.0 && tail_floor.is_finite()) {
            return Err(ProbError::BadTailFloor(tail_floor));
        }
        densify_one(self, vocab_size, tail_floor)
    }
}

fn densify_one(s: &SparseDist, vocab_size: usize, tail_floor: f64) -> Result<ProbDist, ProbError> {
    if vocab_size == 0 {
        return Err(ProbError::Empty);
    }
    let mut dense = vec![0.0; vocab_size];
    let mut present = vec![false; vocab_size];
    for &(id, p) in &s.entries {
        if id.index() >= vocab_size {
            return Err(ProbError::TokenOutOfRange {
                id: id.0,
                size: vocab_size,
            });
        }
        dense[id.index()] = p;
        present[id.index()] = true;
    }
    let missing = present.iter().filter(|&&p| !p).count();
    if missing > 0 {
        let residual = (1.0 - s.mass()).max(0.0);
        let share = (residual / missing as f64).max(tail_floor);
        for (d, _) in dense.iter_mut().zip(&present).filter(|(_, &p)| !p) {
            *d = share;
        }
    }
    if dense.iter().all(|&d| d == 0.0) {
        // every token listed with zero mass: nothing to go on but the floor
        dense.fill(tail_floor);
    }
    normalize(&dense)
}

/// Aligns two sparse distributions onto a shared dense support of
/// `vocab_size` tokens.
///
/// Tokens absent from one input receive that input's unassigned mass
/// (`1 - sum`) spread uniformly, with each share raised to at least
/// `tail_floor`. Both outputs are renormalized. This approximates a
/// full-vocabulary distribution when a backend only reports its top-k.
pub fn densify_pair(
    a: &SparseDist,
    b: &SparseDist,
    vocab_size: usize,
    tail_floor: f64,
) -> Result<(ProbDist, ProbDist), ProbError> {
    if !(tail_floor > 0.0 && tail_floor.is_finite()) {
        return Err(ProbError::BadTailFloor(tail_floor));
    }
    Ok((
        densify_one(a, vocab_size, tail_floor)?,
        densify_one(b, vocab_size, tail_floor)?,
    ))
}
