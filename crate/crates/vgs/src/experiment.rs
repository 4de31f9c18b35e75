//! Experiment runner: dataset in, one report per (strategy, alpha) out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vgs_core::decode::{DEFAULT_MAX_LEN, DEFAULT_TAIL_FLOOR, DEFAULT_VCD_ALPHA, DEFAULT_VCD_BETA};
use vgs_core::distort::{DEFAULT_LAMBDA, DEFAULT_SIGMA};
use vgs_core::eval::{EvalReport, ItemRecord, QType, Significance, VqaItem};
use vgs_core::rng::derive_seed;
use vgs_core::stats::{
    bootstrap_delta, mcnemar_chi2, mcnemar_exact, PairedOutcomes, DEFAULT_RESAMPLES,
};
use vgs_core::{
    run_decode, DecodeConfig, Image, ModelProvider, NoiseMode, NoiseParams, Query, Strategy,
    SyntheticModel, VgsParams,
};

use crate::formats::{load_dataset, FormatError, ScriptedFile, SyntheticFile};
use crate::image_io::load_image;
use crate::remote::{
    RemoteClient, RemoteOptions, RemoteProvider, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TOP_K,
};
use crate::report::{emit_report, ReportFormat};
use crate::trace::{trace_records, write_jsonl};

/// Side length of the gray stand-in used when an item's image is not a file.
pub const PLACEHOLDER_SIZE: usize = 32;
/// Fraction of failed items above which a run exits with code 3.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderSpec {
    Scripted {
        path: PathBuf,
    },
    Synthetic {
        path: PathBuf,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_top_k")]
        top_k: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_timeout() -> f64 {
    30.0
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl ProviderSpec {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        ProviderSpec::Remote {
            endpoint: endpoint.into(),
            top_k: DEFAULT_TOP_K,
            timeout_secs: default_timeout(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub provider: Option<ProviderSpec>,
    pub strategies: Vec<Strategy>,
    pub alphas: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub noise_mode: NoiseMode,
    pub delta: f64,
    pub vcd_alpha: f64,
    pub vcd_beta: f64,
    pub max_len: usize,
    pub tail_floor: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub trace: bool,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub bootstrap_resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            provider: None,
            strategies: vec![Strategy::Greedy, Strategy::Vgs],
            alphas: vec![1.0],
            sigma: DEFAULT_SIGMA,
            lambda: DEFAULT_LAMBDA,
            noise_mode: NoiseMode::Shot,
            delta: VgsParams::default().delta,
            vcd_alpha: DEFAULT_VCD_ALPHA,
            vcd_beta: DEFAULT_VCD_BETA,
            max_len: DEFAULT_MAX_LEN,
            tail_floor: DEFAULT_TAIL_FLOOR,
            seed: 0,
            out: PathBuf::from("vgs-out"),
            trace: false,
            workers: None,
            bootstrap_resamples: DEFAULT_RESAMPLES,
        }
    }
}

impl ExperimentConfig {
    /// Loads a JSON config. Relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.dataset.as_mut() {
            rebase(d);
        }
        if let Some(ProviderSpec::Scripted { path } | ProviderSpec::Synthetic { path }) =
            cfg.provider.as_mut()
        {
            rebase(path);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    fn decode_config(&self, strategy: Strategy, alpha: f64) -> DecodeConfig {
        DecodeConfig {
            strategy,
            vgs: VgsParams {
                alpha,
                delta: self.delta,
            },
            vcd_alpha: self.vcd_alpha,
            vcd_beta: self.vcd_beta,
            noise: NoiseParams {
                sigma: self.sigma,
                lambda: self.lambda,
                mode: self.noise_mode,
                seed: self.seed,
            },
            max_len: self.max_len,
            tail_floor: self.tail_floor,
        }
    }

    /// The (strategy, alpha) runs in configuration order, duplicates removed.
    pub fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = Vec::new();
        let sweep = self.alphas.len() > 1;
        for &strategy in &self.strategies {
            let alphas: Vec<Option<f64>> = match strategy {
                Strategy::Vgs => self.alphas.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for alpha in alphas {
                let label = match alpha {
                    Some(a) if sweep => format!("vgs(alpha={a})"),
                    _ => strategy.name().to_string(),
                };
                if runs.iter().all(|r| r.label != label) {
                    runs.push(Run {
                        strategy,
                        alpha,
                        label,
                    });
                }
            }
        }
        runs
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        if self.alphas.is_empty() {
            return bad("at least one alpha is required");
        }
        if self.dataset.is_none() {
            return bad("no dataset given");
        }
        if self.provider.is_none() {
            return bad("no provider given");
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be >= 1");
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1");
        }
        for &a in &self.alphas {
            self.decode_config(Strategy::Vgs, a)
                .validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// One decoding configuration applied to every item.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub strategy: Strategy,
    pub alpha: Option<f64>,
    pub label: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(#[from] FormatError),
    #[error("provider: {0}")]
    Provider(String),
    #[error("output: {0}")]
    Output(String),
    #[error("{failed} of {total} items failed in run {label}")]
    TooManyFailures {
        label: String,
        failed: usize,
        total: usize,
        reports: Vec<EvalReport>,
    },
}

impl ExperimentError {
    pub fn exit_code(&self) -> u8 {
        match self {
            ExperimentError::TooManyFailures { .. } => 3,
            _ => 2,
        }
    }
}

type DynProvider = Box<dyn ModelProvider + Send + Sync>;

fn placeholder(id: &str) -> Image {
    Image::constant(PLACEHOLDER_SIZE, PLACEHOLDER_SIZE, 1, 0.5)
        .expect("placeholder dimensions are valid")
        .with_id(id)
}

/// Loads each distinct image reference once. A reference naming a file
/// (relative to the dataset directory) is decoded; anything else becomes a
/// gray placeholder. Either way the image id is the reference string.
pub fn resolve_images(
    items: &[VqaItem],
    dataset_dir: &Path,
) -> Result<BTreeMap<String, Image>, ExperimentError> {
    let mut images = BTreeMap::new();
    for item in items {
        if images.contains_key(&item.image) {
            continue;
        }
        let path = dataset_dir.join(&item.image);
        let image = if path.is_file() {
            load_image(&path)
                .map_err(|e| ExperimentError::Dataset(FormatError::Invalid(e.to_string())))?
                .with_id(item.image.as_str())
        } else {
            log::debug!("image {:?} is not a file, using placeholder", item.image);
            placeholder(&item.image)
        };
        images.insert(item.image.clone(), image);
    }
    Ok(images)
}

fn build_provider(
    spec: &ProviderSpec,
    images: &BTreeMap<String, Image>,
    first: &VqaItem,
) -> Result<DynProvider, ExperimentError> {
    let err = |e: &dyn std::fmt::Display| ExperimentError::Provider(e.to_string());
    Ok(match spec {
        ProviderSpec::Scripted { path } => Box::new(
            ScriptedFile::load(path)
                .and_then(ScriptedFile::into_model)
                .map_err(|e| err(&e))?,
        ),
        ProviderSpec::Synthetic { path } => {
            let spec = SyntheticFile::load(path)
                .and_then(SyntheticFile::into_spec)
                .map_err(|e| err(&e))?;
            let mut model = SyntheticModel::new(spec);
            for image in images.values() {
                model.add_reference(image.clone()).map_err(|e| err(&e))?;
            }
            Box::new(model)
        }
        ProviderSpec::Remote {
            endpoint,
            top_k,
            timeout_secs,
            max_in_flight,
        } => {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) || *top_k == 0 {
                return Err(ExperimentError::Config(
                    "remote timeout and top_k must be positive".into(),
                ));
            }
            let client = RemoteClient::new(
                endpoint,
                RemoteOptions {
                    timeout: Duration::from_secs_f64(*timeout_secs),
                    top_k: *top_k,
                    max_in_flight: *max_in_flight,
                    ..RemoteOptions::default()
                },
            );
            let query = Query::new(first.question.as_str()).map_err(|e| err(&e))?;
            Box::new(
                RemoteProvider::discover(client, &images[&first.image], &query)
                    .map_err(|e| err(&e))?,
            )
        }
    })
}

/// Output of a finished experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub reports: Vec<EvalReport>,
    pub report_paths: Vec<PathBuf>,
}

fn trace_file_name(item_id: &str) -> String {
    let safe: String = item_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.jsonl")
}

/// Runs every configured (strategy, alpha) over the dataset and writes
/// `report.json`, `report.txt` and, with tracing on, `traces/{item}.jsonl`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let dataset = cfg.dataset.as_ref().expect("validated");
    let mut items = load_dataset(dataset)?;
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let dataset_dir = dataset.parent().unwrap_or(Path::new(""));
    let images = resolve_images(&items, dataset_dir)?;
    let provider = build_provider(
        cfg.provider.as_ref().expect("validated"),
        &images,
        &items[0],
    )?;
    let runs = cfg.runs();
    log::info!(
        "{} items, {} runs: {}",
        items.len(),
        runs.len(),
        runs.iter()
            .map(|r| r.label.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );

    let traces_dir = cfg.out.join("traces");
    if cfg.trace {
        std::fs::create_dir_all(&traces_dir)
            .map_err(|e| ExperimentError::Output(format!("{}: {e}", traces_dir.display())))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let per_item: Vec<Vec<ItemRecord>> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                run_item(
                    cfg,
                    &runs,
                    provider.as_ref(),
                    &images[&item.image],
                    item,
                    &traces_dir,
                )
            })
            .collect::<Result<_, _>>()
    })?;

    let mut reports: Vec<EvalReport> = runs
        .iter()
        .enumerate()
        .map(|(k, run)| {
            let records = per_item.iter().map(|r| r[k].clone()).collect();
            EvalReport::aggregate(run.label.as_str(), run.strategy.name(), run.alpha, records)
        })
        .collect();
    attach_baseline(&mut reports, cfg);

    let report_paths = emit_report(
        &reports,
        &cfg.out,
        &[ReportFormat::Json, ReportFormat::Text],
    )
    .map_err(|e| ExperimentError::Output(e.to_string()))?;

    if let Some(r) = reports
        .iter()
        .find(|r| r.n_failed as f64 > MAX_FAILURE_RATE * r.items.len() as f64)
    {
        return Err(ExperimentError::TooManyFailures {
            label: r.label.clone(),
            failed: r.n_failed,
            total: r.items.len(),
            reports: reports.clone(),
        });
    }
    Ok(ExperimentOutcome {
        reports,
        report_paths,
    })
}

fn run_item(
    cfg: &ExperimentConfig,
    runs: &[Run],
    provider: &(dyn ModelProvider + Send + Sync),
    image: &Image,
    item: &VqaItem,
    traces_dir: &Path,
) -> Result<Vec<ItemRecord>, ExperimentError> {
    let seed = derive_seed(cfg.seed, item.id.as_bytes());
    let vocab = provider.vocab();
    let mut records = Vec::with_capacity(runs.len());
    let mut trace = Vec::new();
    let query = Query::new(item.question.as_str());
    for run in runs {
        let mut dc = cfg.decode_config(run.strategy, run.alpha.unwrap_or(0.0));
        dc.noise.seed = seed;
        let result = match &query {
            Ok(q) => run_decode(provider, image, q, &dc).map_err(|e| {
                if let (true, Some(p)) = (cfg.trace, e.partial()) {
                    trace.extend(trace_records(&p.trace, vocab, &run.label));
                }
                e.to_string()
            }),
            Err(e) => Err(e.to_string()),
        };
        let record = match result {
            Ok(out) => {
                if cfg.trace {
                    trace.extend(trace_records(&out.trace, vocab, &run.label));
                }
                ItemRecord::scored(
                    item.id.clone(),
                    item.qtype,
                    item.answer.clone(),
                    vocab.render(&out.tokens),
                )
            }
            Err(e) => {
                log::warn!("item {} ({}): {e}", item.id, run.label);
                ItemRecord::failed(item.id.clone(), item.qtype, item.answer.clone(), e)
            }
        };
        if let Some(err) = record.error.as_deref().filter(|_| record.is_excluded()) {
            log::info!("item {} excluded: {err}", item.id);
        }
        records.push(record);
    }
    if cfg.trace {
        let path = traces_dir.join(trace_file_name(&item.id));
        std::fs::File::create(&path)
            .and_then(|f| write_jsonl(std::io::BufWriter::new(f), &trace))
            .map_err(|e| ExperimentError::Output(format!("{}: {e}", path.display())))?;
    }
    Ok(records)
}

/// Fills Δ and significance against the greedy report, when there is one.
fn attach_baseline(reports: &mut [EvalReport], cfg: &ExperimentConfig) {
    let Some(base_idx) = reports
        .iter()
        .position(|r| r.strategy == Strategy::Greedy.name())
    else {
        log::warn!("no greedy run; Δ and significance are omitted");
        return;
    };
    let base = reports[base_idx].clone();
    for (i, report) in reports.iter_mut().enumerate() {
        if i == base_idx {
            continue;
        }
        report.delta_vs_baseline = Some(report.overall - base.overall);
        report.significance = Some(significance(&base, report, cfg));
    }
}

fn significance(base: &EvalReport, cand: &EvalReport, cfg: &ExperimentConfig) -> Significance {
    let paired = |qtype: Option<QType>| -> (Vec<f64>, Vec<f64>) {
        base.items
            .iter()
            .zip(&cand.items)
            .filter(|(a, _)| qtype.is_none_or(|q| a.qtype == q))
            .filter_map(|(a, b)| Some((a.score?, b.score?)))
            .unzip()
    };
    let (ca, cb) = paired(Some(QType::Closed));
    let to_bool = |v: &[f64]| v.iter().map(|&s| s > 0.5).collect::<Vec<_>>();
    let po = PairedOutcomes::from_outcomes(&to_bool(&ca), &to_bool(&cb)).ok();
    let (mcnemar_exact_p, mcnemar_chi2_p) = po
        .as_ref()
        .map_or((1.0, 1.0), |po| (mcnemar_exact(po), mcnemar_chi2(po)));
    let boot = |qtype: Option<QType>, tag: &str| {
        let (a, b) = paired(qtype);
        let seed = derive_seed(
            cfg.seed,
            format!("bootstrap/{tag}/{}", cand.label).as_bytes(),
        );
        bootstrap_delta(&a, &b, cfg.bootstrap_resamples, seed).ok()
    };
    Significance {
        closed_baseline_only: po.as_ref().map_or(0, |p| p.n10),
        closed_candidate_only: po.as_ref().map_or(0, |p| p.n01),
        mcnemar_exact_p,
        mcnemar_chi2_p,
        open_bootstrap: boot(Some(QType::Open), "open"),
        overall_bootstrap: boot(None, "overall"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_partial_json() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"provider": {"kind": "remote", "endpoint": "http://x"}, "alphas": [0, 0.5]}"#,
        )
        .unwrap();
        assert_eq!(cfg.sigma, 0.07);
        assert_eq!(cfg.lambda, 70.0);
        assert_eq!(cfg.delta, 0.01);
        assert_eq!(cfg.noise_mode, NoiseMode::Shot);
        assert_eq!(cfg.bootstrap_resamples, 10_000);
        assert_eq!(cfg.provider, Some(ProviderSpec::remote("http://x")));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sigmaa": 1}"#).is_err());
    }

    #[test]
    fn runs_expand_alphas_for_vgs_only() {
        let cfg = ExperimentConfig {
            strategies: vec![
                Strategy::Greedy,
                Strategy::Vgs,
                Strategy::Vcd,
                Strategy::Greedy,
            ],
            alphas: vec![0.0, 1.0],
            ..ExperimentConfig::default()
        };
        let labels: Vec<String> = cfg.runs().into_iter().map(|r| r.label).collect();
        assert_eq!(labels, ["greedy", "vgs(alpha=0)", "vgs(alpha=1)", "vcd"]);
        let single = ExperimentConfig::default();
        let labels: Vec<String> = single.runs().into_iter().map(|r| r.label).collect();
        assert_eq!(labels, ["greedy", "vgs"]);
    }

    #[test]
    fn validation_catches_missing_pieces() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_err());
        cfg.dataset = Some("d.jsonl".into());
        cfg.provider = Some(ProviderSpec::Scripted {
            path: "m.json".into(),
        });
        assert!(cfg.validate().is_ok());
        cfg.alphas = vec![-1.0];
        assert!(cfg.validate().is_err());
        cfg.alphas = vec![1.0];
        cfg.strategies.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_names_are_path_safe() {
        assert_eq!(trace_file_name("a/b c"), "a_b_c.jsonl");
        assert_eq!(trace_file_name("q-01.x"), "q-01.x.jsonl");
    }
}
