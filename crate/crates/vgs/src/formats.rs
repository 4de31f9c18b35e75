//! JSON file formats: VQA datasets (JSONL), scripted-model tables and
//! synthetic-model specs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vgs_core::eval::VqaItem;
use vgs_core::{ModelError, ScriptedModel, SyntheticModelSpec, TokenId, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Line {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{0} contains no items")]
    Empty(String),
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("model table: {0}")]
    Model(#[from] ModelError),
    #[error("vocabulary: {0}")]
    Vocab(#[from] vgs_core::prob::ProbError),
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    serde_json::from_str(&read(path)?).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a JSONL dataset, one item per non-blank line.
pub fn load_dataset(path: &Path) -> Result<Vec<VqaItem>, FormatError> {
    let text = read(path)?;
    let mut items = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: VqaItem = serde_json::from_str(line).map_err(|source| FormatError::Line {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(FormatError::DuplicateId(item.id));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(FormatError::Empty(path.display().to_string()));
    }
    Ok(items)
}

pub fn write_dataset(path: &Path, items: &[VqaItem]) -> std::io::Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("items serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScriptedContext {
    pub image_id: String,
    pub prefix: Vec<u32>,
    pub probs: Vec<f64>,
}

/// `{contexts: [{image_id, prefix, probs}]}`, optionally with `vocab` (token
/// strings) and `eos_id`. Without a vocabulary, tokens are rendered `<id>`
/// and `eos_id` defaults to 0.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScriptedFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<u32>,
    pub contexts: Vec<ScriptedContext>,
}

impl ScriptedFile {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        parse_json(path)
    }

    pub fn into_model(self) -> Result<ScriptedModel, FormatError> {
        let eos = TokenId(self.eos_id.unwrap_or(0));
        let vocab = match self.vocab {
            Some(tokens) => Vocab::new(tokens, eos)?,
            None => {
                let size = self
                    .contexts
                    .first()
                    .map(|c| c.probs.len())
                    .ok_or_else(|| FormatError::Invalid("scripted table has no contexts".into()))?;
                Vocab::opaque(size, eos)?
            }
        };
        let mut model = ScriptedModel::new(vocab);
        for c in self.contexts {
            model.insert(c.image_id, ids(&c.prefix), c.probs)?;
        }
        Ok(model)
    }
}

fn ids(raw: &[u32]) -> Vec<TokenId> {
    raw.iter().copied().map(TokenId).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PriorRow {
    pub prefix: Vec<u32>,
    pub probs: Vec<f64>,
}

/// Synthetic prior/visual mixture spec.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticFile {
    pub vocab: Vec<String>,
    pub eos_id: u32,
    pub g0: f64,
    pub decay: f64,
    pub prior: Vec<PriorRow>,
    pub visual: Vec<ScriptedContext>,
}

impl SyntheticFile {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        parse_json(path)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("spec serializes"),
        )
    }

    pub fn into_spec(self) -> Result<SyntheticModelSpec, FormatError> {
        let vocab = Vocab::new(self.vocab, TokenId(self.eos_id))?;
        let mut spec = SyntheticModelSpec::new(vocab, self.g0, self.decay)?;
        for r in self.prior {
            spec.set_prior(ids(&r.prefix), r.probs)?;
        }
        for v in self.visual {
            spec.set_visual(v.image_id, ids(&v.prefix), v.probs)?;
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vgs_core::eval::QType;
    use vgs_core::{Image, ModelProvider, Prefix, ProviderDist, Query};

    #[test]
    fn dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let items = vec![
            VqaItem {
                id: "a".into(),
                image: "img0".into(),
                question: "Is there a fracture?".into(),
                answer: "no".into(),
                qtype: QType::Closed,
            },
            VqaItem {
                id: "b".into(),
                image: "scans/img1.png".into(),
                question: "Where is the lesion?".into(),
                answer: "right upper lobe".into(),
                qtype: QType::Open,
            },
        ];
        write_dataset(&path, &items).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), items);

        std::fs::write(&path, "\n  \n").unwrap();
        assert!(matches!(load_dataset(&path), Err(FormatError::Empty(_))));

        std::fs::write(&path, "{\"id\": 1}\n").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(FormatError::Line { line: 1, .. })
        ));

        std::fs::write(
            &path,
            r#"{"id":"x","image":"i","question":"q","answer":"a","qtype":"maybe"}"#,
        )
        .unwrap();
        assert!(load_dataset(&path).is_err());

        let dup = r#"{"id":"x","image":"i","question":"q","answer":"a","qtype":"open"}"#;
        std::fs::write(&path, format!("{dup}\n{dup}\n")).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(FormatError::DuplicateId(_))
        ));

        assert!(matches!(
            load_dataset(&dir.path().join("missing.jsonl")),
            Err(FormatError::Io { .. })
        ));
    }

    #[test]
    fn scripted_file_builds_model() {
        let json = r#"{"contexts": [
            {"image_id": "img0", "prefix": [], "probs": [0.7, 0.2, 0.1]},
            {"image_id": "img0", "prefix": [0], "probs": [0.0, 0.0, 1.0]}
        ], "eos_id": 2}"#;
        let file: ScriptedFile = serde_json::from_str(json).unwrap();
        let model = file.into_model().unwrap();
        assert_eq!(model.vocab().len(), 3);
        assert_eq!(model.vocab().eos(), TokenId(2));
        let img = Image::constant(1, 1, 1, 0.5).unwrap().with_id("img0");
        let d = model
            .distribution(&img, &Query::new("q").unwrap(), &Prefix::default())
            .unwrap();
        let ProviderDist::Dense(p) = d else { panic!() };
        assert_eq!(p.as_slice(), &[0.7, 0.2, 0.1]);
    }

    #[test]
    fn scripted_file_rejects_bad_rows() {
        let json = r#"{"vocab": ["a", "b"], "contexts": [
            {"image_id": "img0", "prefix": [], "probs": [0.7, 0.2, 0.1]}
        ]}"#;
        let file: ScriptedFile = serde_json::from_str(json).unwrap();
        assert!(file.into_model().is_err());
    }

    #[test]
    fn synthetic_file_builds_spec() {
        let file = SyntheticFile {
            vocab: vec!["</s>".into(), "no".into(), "yes".into()],
            eos_id: 0,
            g0: 0.6,
            decay: 10.0,
            prior: vec![PriorRow {
                prefix: vec![],
                probs: vec![0.1, 0.6, 0.3],
            }],
            visual: vec![ScriptedContext {
                image_id: "img".into(),
                prefix: vec![],
                probs: vec![0.1, 0.1, 0.8],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        file.save(&path).unwrap();
        let spec = SyntheticFile::load(&path).unwrap().into_spec().unwrap();
        assert_eq!(spec.g0, 0.6);
        assert_eq!(spec.prior.len(), 1);
        assert_eq!(spec.visual.len(), 1);
    }
}
