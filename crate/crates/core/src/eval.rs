//! Whole-model compression and per-language perplexity reports.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Segment, Source};
use crate::error::{MbsError, Result};
use crate::hessian::{accumulate_grouped, column_norms, DEFAULT_LAMBDA_REL};
use crate::linalg::Matrix;
use crate::model::ModelCheckpoint;
use crate::prune::{self, magnitude_prune, obs_prune, wanda_prune, ObsOptions, SparsityMask};
use crate::quantize::{gptq_quantize, rtn_quantize, QuantGrid, QuantOptions};
use crate::sampler::{materialize, CalibrationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Magnitude,
    Wanda,
    SparseGpt,
    Gptq,
    Rtn,
}

impl Method {
    pub fn is_pruning(self) -> bool {
        matches!(self, Method::Magnitude | Method::Wanda | Method::SparseGpt)
    }

    pub fn needs_hessian(self) -> bool {
        matches!(self, Method::SparseGpt | Method::Gptq)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::SparseGpt => "sparsegpt",
            Method::Gptq => "gptq",
            Method::Rtn => "rtn",
        })
    }
}

impl FromStr for Method {
    type Err = MbsError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "magnitude" => Method::Magnitude,
            "wanda" => Method::Wanda,
            "sparsegpt" => Method::SparseGpt,
            "gptq" => Method::Gptq,
            "rtn" => Method::Rtn,
            _ => return Err(MbsError::InvalidArgument(format!("unknown method \"{s}\""))),
        })
    }
}

fn default_seg_len() -> usize {
    64
}

fn default_block_size() -> usize {
    32
}

fn default_lambda_rel() -> f64 {
    DEFAULT_LAMBDA_REL
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub method: Method,
    #[serde(default)]
    pub sparsity: Option<f64>,
    #[serde(default)]
    pub bits: Option<u32>,
    #[serde(default)]
    pub group_size: Option<usize>,
    #[serde(default = "default_lambda_rel")]
    pub lambda_rel: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    pub calibration_plan: CalibrationPlan,
    pub seed: u64,
    /// Tokens per calibration segment.
    #[serde(default = "default_seg_len")]
    pub seg_len: usize,
    /// Keep each language's Hessian part alongside the merged matrix.
    #[serde(default)]
    pub per_language_hessians: bool,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl CompressionConfig {
    pub fn pruning(method: Method, sparsity: f64, plan: CalibrationPlan, seed: u64) -> Self {
        Self {
            method,
            sparsity: Some(sparsity),
            bits: None,
            group_size: None,
            lambda_rel: DEFAULT_LAMBDA_REL,
            block_size: default_block_size(),
            calibration_plan: plan,
            seed,
            seg_len: default_seg_len(),
            per_language_hessians: false,
            threads: 1,
        }
    }

    pub fn quantization(
        method: Method,
        bits: u32,
        group_size: usize,
        plan: CalibrationPlan,
        seed: u64,
    ) -> Self {
        Self {
            sparsity: None,
            bits: Some(bits),
            group_size: Some(group_size),
            ..Self::pruning(method, 0.0, plan, seed)
        }
    }

    /// Exactly the parameters of the chosen method must be set.
    pub fn validate(&self) -> Result<()> {
        let quant_set = self.bits.is_some() || self.group_size.is_some();
        if self.method.is_pruning() {
            let s = self.sparsity.ok_or_else(|| {
                MbsError::InvalidArgument(format!("{} needs a sparsity", self.method))
            })?;
            prune::validate_sparsity(s)?;
            if quant_set {
                return Err(MbsError::InvalidArgument(format!(
                    "{} is a pruning method; bits/group_size do not apply",
                    self.method
                )));
            }
        } else {
            if self.sparsity.is_some() {
                return Err(MbsError::InvalidArgument(format!(
                    "{} is a quantization method; sparsity does not apply",
                    self.method
                )));
            }
            self.quant_options()?.validate()?;
        }
        if self.block_size == 0 || self.seg_len == 0 {
            return Err(MbsError::InvalidArgument(
                "block_size and seg_len must be at least 1".into(),
            ));
        }
        if !(self.lambda_rel.is_finite() && self.lambda_rel >= 0.0) {
            return Err(MbsError::InvalidArgument(format!(
                "lambda_rel must be ≥ 0, got {}",
                self.lambda_rel
            )));
        }
        self.calibration_plan.validate()
    }

    fn quant_options(&self) -> Result<QuantOptions> {
        match (self.bits, self.group_size) {
            (Some(bits), Some(group_size)) => Ok(QuantOptions {
                bits,
                group_size,
                lambda_rel: self.lambda_rel,
                threads: self.threads,
            }),
            _ => Err(MbsError::InvalidArgument(format!(
                "{} needs bits and group_size",
                self.method
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutcome {
    pub layer_index: usize,
    pub layer_error: f64,
    pub mask: Option<SparsityMask>,
    pub grid: Option<QuantGrid>,
    /// Per-language Hessian parts, when requested.
    pub hessian_parts: Option<IndexMap<String, Matrix<f64>>>,
}

#[derive(Debug, Clone)]
pub struct CompressionOutcome {
    pub checkpoint: ModelCheckpoint,
    pub layers: Vec<LayerOutcome>,
    pub n_calibration_windows: usize,
}

impl CompressionOutcome {
    /// Grids of every layer for quantization runs.
    pub fn grids(&self) -> Option<Vec<QuantGrid>> {
        self.layers.iter().map(|l| l.grid.clone()).collect()
    }
}

/// Contiguous window ranges per language for segments stored in language order.
fn language_ranges(segments: &[Segment], k: usize) -> Vec<(String, Range<usize>)> {
    let mut out: Vec<(String, Range<usize>)> = Vec::new();
    let mut pos = 0;
    for seg in segments {
        let n = seg.len().saturating_sub(k);
        match out.last_mut() {
            Some((lang, r)) if *lang == seg.lang_id => r.end += n,
            _ => out.push((seg.lang_id.clone(), pos..pos + n)),
        }
        pos += n;
    }
    out.retain(|(_, r)| !r.is_empty());
    out
}

/// Compresses every linear layer in order. Each layer's inputs are captured
/// by running the calibration segments through the model with all earlier
/// layers already compressed. The embedding table is never modified.
pub fn compress_model(
    ckpt: &ModelCheckpoint,
    config: &CompressionConfig,
    corpus: &Corpus,
) -> Result<CompressionOutcome> {
    config.validate()?;
    ckpt.validate()?;
    let k = ckpt.config.context_k;
    if config.seg_len <= k {
        return Err(MbsError::InvalidArgument(format!(
            "seg_len {} leaves no prediction windows for context {k}",
            config.seg_len
        )));
    }
    let segments = materialize(
        &config.calibration_plan,
        corpus,
        config.seg_len,
        config.seed,
    )?;
    let groups = language_ranges(&segments, k);
    let n_windows = groups.last().map_or(0, |(_, r)| r.end);

    let mut working = ckpt.clone();
    let mut layers = Vec::with_capacity(working.layers.len());
    for l in 0..working.layers.len() {
        let outcome = compress_layer(&mut working, l, &segments, &groups, config)
            .map_err(|e| e.in_layer(l))?;
        layers.push(outcome);
    }
    working.validate()?;
    Ok(CompressionOutcome {
        checkpoint: working,
        layers,
        n_calibration_windows: n_windows,
    })
}

fn compress_layer(
    model: &mut ModelCheckpoint,
    l: usize,
    segments: &[Segment],
    groups: &[(String, Range<usize>)],
    config: &CompressionConfig,
) -> Result<LayerOutcome> {
    let cap = model.capture_layer(segments, l)?;
    let w = &model.layers[l].weights;
    let hessian = if config.method.needs_hessian() {
        Some(accumulate_grouped(&cap, groups)?)
    } else {
        None
    };
    let mut outcome = LayerOutcome {
        layer_index: l,
        layer_error: 0.0,
        mask: None,
        grid: None,
        hessian_parts: None,
    };
    let new_weights = match config.method {
        Method::Magnitude | Method::Wanda | Method::SparseGpt => {
            let sparsity = config.sparsity.expect("validated");
            let res = match config.method {
                Method::Magnitude => {
                    let mask = magnitude_prune(w, sparsity)?;
                    let new_weights = mask.apply(w);
                    let layer_error = prune::layer_error(w, &new_weights, &cap)?;
                    prune::PruneResult {
                        new_weights,
                        mask,
                        layer_error,
                    }
                }
                Method::Wanda => wanda_prune(w, &column_norms(&cap)?, &cap, sparsity)?,
                _ => {
                    let opts = ObsOptions {
                        sparsity,
                        block_size: config.block_size,
                        lambda_rel: config.lambda_rel,
                        threads: config.threads,
                    };
                    obs_prune(w, hessian.as_ref().expect("computed above"), &cap, &opts)?
                }
            };
            let mut mask = res.mask;
            mask.layer_index = l;
            mask.check_counts()?;
            outcome.layer_error = res.layer_error;
            outcome.mask = Some(mask);
            res.new_weights
        }
        Method::Gptq | Method::Rtn => {
            let opts = config.quant_options()?;
            let res = match config.method {
                Method::Gptq => {
                    gptq_quantize(w, hessian.as_ref().expect("computed above"), &cap, &opts)?
                }
                _ => rtn_quantize(w, &cap, &opts)?,
            };
            outcome.layer_error = res.layer_error;
            outcome.grid = Some(res.grid);
            res.new_weights
        }
    };
    if config.per_language_hessians {
        outcome.hessian_parts = match hessian {
            Some(h) => h.per_language,
            None => Some(
                accumulate_grouped(&cap, groups)?
                    .per_language
                    .expect("grouped keeps parts"),
            ),
        };
    }
    model.layers[l].weights = new_weights;
    Ok(outcome)
}

/// `(compressed/dense − 1)·100`.
pub fn increase_pct(dense_ppl: f64, compressed_ppl: f64) -> f64 {
    (compressed_ppl / dense_ppl - 1.0) * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub lang: String,
    pub dense_ppl: f64,
    pub compressed_ppl: f64,
    pub increase_pct: f64,
}

impl ReportRow {
    pub fn new(lang: impl Into<String>, dense_ppl: f64, compressed_ppl: f64) -> Self {
        Self {
            lang: lang.into(),
            dense_ppl,
            compressed_ppl,
            increase_pct: increase_pct(dense_ppl, compressed_ppl),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub rows: Vec<ReportRow>,
}

/// Arithmetic means of the report columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportAverages {
    pub dense_ppl: f64,
    pub compressed_ppl: f64,
    pub increase_pct: f64,
}

impl PerplexityReport {
    pub fn row(&self, lang: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.lang == lang)
    }

    pub fn averages(&self) -> Option<ReportAverages> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mean = |f: fn(&ReportRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        Some(ReportAverages {
            dense_ppl: mean(|r| r.dense_ppl),
            compressed_ppl: mean(|r| r.compressed_ppl),
            increase_pct: mean(|r| r.increase_pct),
        })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lang", "dense_ppl", "compressed_ppl", "increase_pct"])?;
        for r in &self.rows {
            w.write_record([
                r.lang.clone(),
                r.dense_ppl.to_string(),
                r.compressed_ppl.to_string(),
                r.increase_pct.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| MbsError::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses the CSV form; every row's increase must agree with its
    /// perplexities to within 1e-9.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["lang", "dense_ppl", "compressed_ppl", "increase_pct"] {
            return Err(MbsError::InvalidArgument(format!(
                "unexpected report header {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| MbsError::InvalidArgument(format!("bad report row {rec:?}")))
            };
            let row = ReportRow {
                lang: rec.get(0).unwrap_or_default().to_string(),
                dense_ppl: num(1)?,
                compressed_ppl: num(2)?,
                increase_pct: num(3)?,
            };
            if (increase_pct(row.dense_ppl, row.compressed_ppl) - row.increase_pct).abs() > 1e-9 {
                return Err(MbsError::InvalidArgument(format!(
                    "row \"{}\": increase {} does not match its perplexities",
                    row.lang, row.increase_pct
                )));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| MbsError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MbsError::io(path, e))?;
        Self::from_csv_str(&text)
    }
}

/// Each language's whole evaluation text as a single segment, in manifest order.
pub fn eval_segments(corpus: &Corpus, langs: &[String]) -> Result<Vec<(String, Vec<Segment>)>> {
    langs
        .iter()
        .map(|lang| {
            let tokens = corpus.tokens(lang, Source::Eval)?;
            if tokens.is_empty() {
                return Err(MbsError::InvalidArgument(format!(
                    "no evaluation text for \"{lang}\""
                )));
            }
            Ok((
                lang.clone(),
                vec![Segment {
                    lang_id: lang.clone(),
                    tokens: tokens.to_vec(),
                }],
            ))
        })
        .collect()
}

/// Dense vs compressed perplexity per language.
pub fn report(
    dense: &ModelCheckpoint,
    compressed: &ModelCheckpoint,
    eval: &[(String, Vec<Segment>)],
) -> Result<PerplexityReport> {
    if dense.config != compressed.config {
        return Err(MbsError::Shape(
            "dense and compressed checkpoints differ in configuration".into(),
        ));
    }
    let mut rows = Vec::with_capacity(eval.len());
    for (lang, segs) in eval {
        if segs.is_empty() {
            return Err(MbsError::InvalidArgument(format!(
                "no evaluation segments for \"{lang}\""
            )));
        }
        let d = dense.perplexity(segs).map_err(|e| e.in_language(lang))?;
        let c = compressed
            .perplexity(segs)
            .map_err(|e| e.in_language(lang))?;
        rows.push(ReportRow::new(lang.clone(), d, c));
    }
    Ok(PerplexityReport { rows })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| MbsError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Everything needed to replay a run: the command, its resolved
/// configuration and seed, and content hashes of inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: "mbs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Records `path` with its SHA-256 under `inputs`.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| MbsError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::MarkovLanguage;
    use crate::model::ModelConfig;
    use crate::sampler::{plan_equal, plan_mbs};

    fn corpus() -> Corpus {
        let a = MarkovLanguage::new(b"abcdefgh", 2, 3, 1);
        let b = MarkovLanguage::new(b"stuvwxyz", 2, 3, 2);
        Corpus::from_texts([
            ("A", a.generate(3000, 0), a.generate(300, 1)),
            ("B", b.generate(1000, 0), b.generate(300, 1)),
        ])
        .unwrap()
    }

    fn model() -> ModelCheckpoint {
        let cfg = ModelConfig {
            context_k: 3,
            embed_dim: 4,
            hidden_dim: 16,
            n_hidden_layers: 2,
            ..Default::default()
        };
        ModelCheckpoint::init(cfg, 5).unwrap()
    }

    fn small(mut c: CompressionConfig) -> CompressionConfig {
        c.seg_len = 16;
        c
    }

    #[test]
    fn report_fixture() {
        let r = ReportRow::new("avg", 20.08, 26.28);
        assert!((r.increase_pct - 30.88).abs() < 5e-3);
        assert_eq!(format!("{:.0}", r.increase_pct), "31");
        let single = PerplexityReport {
            rows: vec![r.clone()],
        };
        let a = single.averages().unwrap();
        assert_eq!(
            (a.dense_ppl, a.compressed_ppl, a.increase_pct),
            (20.08, 26.28, r.increase_pct)
        );
    }

    #[test]
    fn report_csv_round_trip() {
        let rep = PerplexityReport {
            rows: vec![
                ReportRow::new("en", 12.345678901, 13.0),
                ReportRow::new("zh-Hans", 1.0 / 3.0, 0.5),
            ],
        };
        let text = rep.to_csv_string().unwrap();
        assert!(text.starts_with("lang,dense_ppl,compressed_ppl,increase_pct\n"));
        assert_eq!(PerplexityReport::from_csv_str(&text).unwrap(), rep);
        let bad = text.replace("lang,", "language,");
        assert!(PerplexityReport::from_csv_str(&bad).is_err());
        assert!(PerplexityReport::from_csv_str(
            "lang,dense_ppl,compressed_ppl,increase_pct\nx,1,2,3\n"
        )
        .is_err());
    }

    #[test]
    fn config_validation() {
        let plan = plan_mbs(corpus().manifest(), 4).unwrap();
        let good = CompressionConfig::pruning(Method::Wanda, 0.5, plan.clone(), 1);
        good.validate().unwrap();
        let mut c = good.clone();
        c.sparsity = Some(1.0);
        assert!(c.validate().is_err());
        c.sparsity = None;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.bits = Some(3);
        assert!(c.validate().is_err());
        let q = CompressionConfig::quantization(Method::Gptq, 3, 8, plan.clone(), 1);
        q.validate().unwrap();
        let mut c = q.clone();
        c.sparsity = Some(0.5);
        assert!(c.validate().is_err());
        assert!(CompressionConfig::quantization(Method::Rtn, 1, 8, plan, 1)
            .validate()
            .is_err());
        assert_eq!("SparseGPT".parse::<Method>().unwrap(), Method::SparseGpt);
        assert!("obs".parse::<Method>().is_err());

        let json = serde_json::to_string(&good).unwrap();
        assert_eq!(
            serde_json::from_str::<CompressionConfig>(&json).unwrap(),
            good
        );
        let extra = json.replacen('{', "{\"typo\":1,", 1);
        assert!(serde_json::from_str::<CompressionConfig>(&extra).is_err());
    }

    #[test]
    fn sparsity_zero_is_identity_and_embedding_untouched() {
        let corpus = corpus();
        let m = model();
        let plan = plan_equal(corpus.manifest(), 4).unwrap();
        for method in [Method::Magnitude, Method::Wanda, Method::SparseGpt] {
            let out = compress_model(
                &m,
                &small(CompressionConfig::pruning(method, 0.0, plan.clone(), 3)),
                &corpus,
            )
            .unwrap();
            assert_eq!(out.checkpoint, m, "{method}");
        }
        let out = compress_model(
            &m,
            &small(CompressionConfig::pruning(
                Method::SparseGpt,
                0.5,
                plan.clone(),
                3,
            )),
            &corpus,
        )
        .unwrap();
        assert_eq!(out.checkpoint.embedding_bytes(), m.embedding_bytes());
        for (l, o) in out.layers.iter().enumerate() {
            let mask = o.mask.as_ref().unwrap();
            assert_eq!(mask.layer_index, l);
            mask.check_counts().unwrap();
        }
        // recompressing at sparsity 0 changes nothing
        let again = compress_model(
            &out.checkpoint,
            &small(CompressionConfig::pruning(Method::SparseGpt, 0.0, plan, 4)),
            &corpus,
        )
        .unwrap();
        assert_eq!(again.checkpoint, out.checkpoint);
    }

    #[test]
    fn quantization_run_and_parts() {
        let corpus = corpus();
        let m = model();
        let plan = plan_mbs(corpus.manifest(), 6).unwrap();
        let mut cfg = small(CompressionConfig::quantization(Method::Gptq, 3, 4, plan, 2));
        cfg.per_language_hessians = true;
        let out = compress_model(&m, &cfg, &corpus).unwrap();
        let grids = out.grids().unwrap();
        for (layer, grid) in out.checkpoint.layers.iter().zip(&grids) {
            grid.check_membership(&layer.weights).unwrap();
        }
        let parts = out.layers[0].hessian_parts.as_ref().unwrap();
        assert_eq!(parts.keys().collect::<Vec<_>>(), vec!["A", "B"]);
        assert_eq!(out.n_calibration_windows, 6 * (16 - 3));

        cfg.per_language_hessians = false;
        let plain = compress_model(&m, &cfg, &corpus).unwrap();
        assert_eq!(plain.checkpoint, out.checkpoint);
        assert!(plain.layers[0].hessian_parts.is_none());
    }

    #[test]
    fn errors_carry_layer_and_language() {
        let corpus = corpus();
        let m = model();
        let plan = plan_mbs(corpus.manifest(), 4).unwrap();
        let mut cfg = small(CompressionConfig::pruning(Method::Wanda, 0.5, plan, 1));
        cfg.seg_len = 5000;
        let msg = compress_model(&m, &cfg, &corpus).unwrap_err().to_string();
        assert!(
            msg.contains("corpus too short") && msg.contains("\"A\""),
            "{msg}"
        );
        cfg.seg_len = 3;
        assert!(compress_model(&m, &cfg, &corpus).is_err());
    }

    #[test]
    fn identity_report() {
        let corpus = corpus();
        let m = model();
        let langs = vec!["A".to_string(), "B".to_string()];
        let ev = eval_segments(&corpus, &langs).unwrap();
        let rep = report(&m, &m, &ev).unwrap();
        assert!(rep.rows.iter().all(|r| r.increase_pct == 0.0));
        assert_eq!(rep.rows.len(), 2);
        assert!(eval_segments(&corpus, &["C".to_string()]).is_err());
    }

    #[test]
    fn manifest_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, b"abc").unwrap();
        let mut m = RunManifest::new("plan", Some(1), serde_json::json!({"total": 4}));
        m.add_input(&p).unwrap();
        assert_eq!(
            m.inputs.values().next().unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let out = dir.path().join("run.json");
        m.save(&out).unwrap();
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
