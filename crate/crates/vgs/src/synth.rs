//! Synthetic VQA benchmark for the prior/visual mixture provider.
//!
//! Every answer is a short path through a fixed token tree:
//!
//! ```text
//! []            -> yes | no | left | right
//! [yes], [no]   -> </s>
//! [side]        -> upper | lower
//! [side, level] -> lobe
//! [.., lobe]    -> </s>
//! ```
//!
//! Tokens off the tree have zero mass in every row, so each reachable prefix
//! has a prior row. The shared prior leans towards `no`, `left` and `upper`;
//! each image's visual rows lean towards its gold answer with a per-item
//! strength, so weakly grounded items are answered from the prior under
//! greedy decoding.

use std::path::{Path, PathBuf};

use rand::Rng;
use vgs_core::eval::{QType, VqaItem};
use vgs_core::rng::{derive_seed, stream};

use crate::formats::{write_dataset, PriorRow, ScriptedContext, SyntheticFile};

pub const VOCAB: [&str; 8] = [
    "</s>", "yes", "no", "left", "right", "upper", "lower", "lobe",
];
const EOS: u32 = 0;
const YES: u32 = 1;
const NO: u32 = 2;
const LEFT: u32 = 3;
const RIGHT: u32 = 4;
const UPPER: u32 = 5;
const LOWER: u32 = 6;
const LOBE: u32 = 7;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n_open: usize,
    pub n_closed: usize,
    pub seed: u64,
    pub g0: f64,
    pub decay: f64,
    /// Visual strength of the gold token is drawn uniformly from this range.
    pub strength: (f64, f64),
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_open: 40,
            n_closed: 60,
            seed: 0,
            g0: 0.5,
            decay: 10.0,
            strength: (0.5, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub items: Vec<VqaItem>,
    pub model: SyntheticFile,
}

fn row(entries: &[(u32, f64)]) -> Vec<f64> {
    let mut p = vec![0.0; VOCAB.len()];
    for &(t, v) in entries {
        p[t as usize] = v;
    }
    p
}

fn prior_rows() -> Vec<PriorRow> {
    let mut rows = vec![PriorRow {
        prefix: vec![],
        probs: row(&[(NO, 0.4), (YES, 0.15), (LEFT, 0.3), (RIGHT, 0.15)]),
    }];
    for a in [YES, NO] {
        rows.push(PriorRow {
            prefix: vec![a],
            probs: row(&[(EOS, 1.0)]),
        });
    }
    for side in [LEFT, RIGHT] {
        rows.push(PriorRow {
            prefix: vec![side],
            probs: row(&[(UPPER, 0.65), (LOWER, 0.35)]),
        });
        for level in [UPPER, LOWER] {
            rows.push(PriorRow {
                prefix: vec![side, level],
                probs: row(&[(LOBE, 1.0)]),
            });
            rows.push(PriorRow {
                prefix: vec![side, level, LOBE],
                probs: row(&[(EOS, 1.0)]),
            });
        }
    }
    rows
}

pub fn generate(opts: &SynthOptions) -> SyntheticBenchmark {
    let mut items = Vec::with_capacity(opts.n_open + opts.n_closed);
    let mut visual = Vec::new();
    let (lo, hi) = opts.strength;
    let n = opts.n_open + opts.n_closed;
    for i in 0..n {
        let id = format!("q{i:04}");
        let image = format!("img{i:04}");
        let mut rng = stream(derive_seed(opts.seed, id.as_bytes()));
        let mut strength = || {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let mut ctx = |prefix: Vec<u32>, gold: u32, other: u32, s: f64| {
            visual.push(ScriptedContext {
                image_id: image.clone(),
                prefix,
                probs: row(&[(gold, s), (other, 1.0 - s)]),
            })
        };
        if i < opts.n_closed {
            let yes = i % 2 == 0;
            let (gold, other) = if yes { (YES, NO) } else { (NO, YES) };
            ctx(vec![], gold, other, strength());
            items.push(VqaItem {
                id,
                image,
                question: "Is there evidence of an abnormality?".into(),
                answer: VOCAB[gold as usize].into(),
                qtype: QType::Closed,
            });
        } else {
            let (side, other_side) = if i % 2 == 0 {
                (RIGHT, LEFT)
            } else {
                (LEFT, RIGHT)
            };
            let (level, other_level) = if i % 3 == 0 {
                (UPPER, LOWER)
            } else {
                (LOWER, UPPER)
            };
            ctx(vec![], side, other_side, strength());
            ctx(vec![side], level, other_level, strength());
            items.push(VqaItem {
                id,
                image,
                question: "Where is the lesion located?".into(),
                answer: format!("{} {} lobe", VOCAB[side as usize], VOCAB[level as usize]),
                qtype: QType::Open,
            });
        }
    }
    SyntheticBenchmark {
        items,
        model: SyntheticFile {
            vocab: VOCAB.iter().map(|s| s.to_string()).collect(),
            eos_id: EOS,
            g0: opts.g0,
            decay: opts.decay,
            prior: prior_rows(),
            visual,
        },
    }
}

impl SyntheticBenchmark {
    /// Writes `dataset.jsonl` and `model.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let dataset = dir.join(DATASET_FILE);
        let model = dir.join(MODEL_FILE);
        write_dataset(&dataset, &self.items)?;
        self.model.save(&model)?;
        Ok((dataset, model))
    }
}
