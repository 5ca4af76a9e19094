//! Angular-error evaluation of pose generation and the conditioning
//! ablation runner.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::annotation::splitmix64;
use crate::dataset::TextRecord;
use crate::diffusion::schedule::normalize_pose;
use crate::diffusion::{ddim_sample, train, Model, ModelConfig, TrainConfig, TrainItem, Vocab};
use crate::error::{EvalError, ModelError};
use crate::geometry::{angular_error_deg, YawPitch};

/// First 16 hex digits of the SHA-256 of `text`.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Seed for one record, derived from the master seed and the record key.
pub fn record_seed(master: u64, r: &TextRecord) -> u64 {
    let key = ((r.sample_id as u64) << 16) | ((r.precision as u64) << 8) | r.variant as u64;
    splitmix64(master ^ splitmix64(key))
}

/// Something that maps a description to a (gaze, head) pose.
pub trait PosePredictor: Sync {
    fn predict(&self, record: &TextRecord, seed: u64) -> Result<(YawPitch, YawPitch), EvalError>;
    fn fingerprint(&self) -> String;
}

/// Returns the stored labels.
pub struct OraclePredictor;

impl PosePredictor for OraclePredictor {
    fn predict(&self, r: &TextRecord, _seed: u64) -> Result<(YawPitch, YawPitch), EvalError> {
        Ok((r.gaze, r.head))
    }
    fn fingerprint(&self) -> String {
        fingerprint("oracle")
    }
}

/// Always predicts the same pose; (0,0,0,0) is the straight-ahead baseline.
pub struct ConstantPredictor {
    pub gaze: YawPitch,
    pub head: YawPitch,
}

impl PosePredictor for ConstantPredictor {
    fn predict(&self, _r: &TextRecord, _seed: u64) -> Result<(YawPitch, YawPitch), EvalError> {
        Ok((self.gaze, self.head))
    }
    fn fingerprint(&self) -> String {
        fingerprint(&format!("constant {} {}", self.gaze, self.head))
    }
}

/// DDIM sampling conditioned on the record text.
pub struct DiffusionPredictor<'a> {
    pub model: &'a Model,
    pub steps: usize,
}

impl PosePredictor for DiffusionPredictor<'_> {
    fn predict(&self, r: &TextRecord, seed: u64) -> Result<(YawPitch, YawPitch), EvalError> {
        let tokens = self.model.vocab.encode(&r.text)?;
        let cond = self.model.condition(&tokens)?;
        Ok(ddim_sample(self.model, &cond, self.steps, seed)?)
    }
    fn fingerprint(&self) -> String {
        let cfg = serde_json::to_string(&self.model.config).expect("config serializes");
        fingerprint(&format!("{cfg} steps={}", self.steps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub sample_id: u32,
    pub variant: u32,
    pub pred_gaze: YawPitch,
    pub pred_head: YawPitch,
    pub head_err: f64,
    pub gaze_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub head_mean: f64,
    pub head_median: f64,
    pub gaze_mean: f64,
    pub gaze_median: f64,
    pub n: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub rows: Vec<EvalRow>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// One predictor call per record; head and gaze errors come from the same
/// prediction.
pub fn evaluate(p: &dyn PosePredictor, records: &[TextRecord], seed: u64) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let rows: Vec<EvalRow> = records
        .par_iter()
        .map(|r| {
            let (g, h) = p.predict(r, record_seed(seed, r))?;
            Ok(EvalRow {
                sample_id: r.sample_id,
                variant: r.variant,
                pred_gaze: g,
                pred_head: h,
                head_err: angular_error_deg(h, r.head),
                gaze_err: angular_error_deg(g, r.gaze),
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let he: Vec<f64> = rows.iter().map(|r| r.head_err).collect();
    let ge: Vec<f64> = rows.iter().map(|r| r.gaze_err).collect();
    Ok(EvalReport {
        head_mean: mean(&he),
        head_median: median(&he),
        gaze_mean: mean(&ge),
        gaze_median: median(&ge),
        n: rows.len(),
        seed,
        fingerprint: p.fingerprint(),
        rows,
    })
}

pub fn evaluate_model(model: &Model, records: &[TextRecord], steps: usize, seed: u64) -> Result<EvalReport, EvalError> {
    evaluate(&DiffusionPredictor { model, steps }, records, seed)
}

/// Tokenized training targets; unknown words map to UNK.
pub fn train_items(records: &[TextRecord], vocab: &Vocab) -> Result<Vec<TrainItem>, ModelError> {
    records
        .iter()
        .map(|r| Ok(TrainItem { tokens: vocab.encode(&r.text)?, x0: normalize_pose(r.gaze, r.head) }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub name: String,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub outcome: Result<EvalReport, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationSettings {
    pub train: TrainConfig,
    pub sample_steps: usize,
    pub seed: u64,
}

/// Trains and evaluates each configuration on the same data, seeds and
/// step budget. A configuration that fails to build or diverges yields a
/// failed row; the others still run.
pub fn run_ablation(
    configs: &[AblationConfig],
    train_records: &[TextRecord],
    test_records: &[TextRecord],
    settings: &AblationSettings,
) -> Result<Vec<AblationRow>, EvalError> {
    if configs.len() < 2 {
        return Err(EvalError::TooFewConfigs(configs.len()));
    }
    if test_records.is_empty() {
        return Err(EvalError::Empty);
    }
    let texts: Vec<&str> = train_records.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocab::build(&texts)?;
    let items = train_items(train_records, &vocab)?;
    let rows = configs
        .iter()
        .map(|c| {
            let outcome = (|| -> Result<EvalReport, EvalError> {
                let model = Model::new(c.model.clone(), vocab.clone(), settings.seed)?;
                let (model, _) = train(model, &items, &[], &settings.train, None)?;
                evaluate_model(&model, test_records, settings.sample_steps, settings.seed)
            })();
            AblationRow { name: c.name.clone(), outcome: outcome.map_err(|e| e.to_string()) }
        })
        .collect();
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str = "config,head_mean_deg,head_median_deg,gaze_mean_deg,gaze_median_deg,n,seed";

pub fn ablation_csv(rows: &[AblationRow], seed: u64) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        match &r.outcome {
            Ok(e) => {
                let _ = writeln!(
                    s,
                    "{},{:.4},{:.4},{:.4},{:.4},{},{}",
                    r.name, e.head_mean, e.head_median, e.gaze_mean, e.gaze_median, e.n, e.seed
                );
            }
            Err(_) => {
                let _ = writeln!(s, "{},failed,failed,failed,failed,0,{seed}", r.name);
            }
        }
    }
    s
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let mut s = format!(
        "{:<width$}  {:>10}  {:>12}  {:>10}  {:>12}  {:>5}\n",
        "config", "head mean", "head median", "gaze mean", "gaze median", "n"
    );
    for r in rows {
        match &r.outcome {
            Ok(e) => {
                let _ = writeln!(
                    s,
                    "{:<width$}  {:>10.2}  {:>12.2}  {:>10.2}  {:>12.2}  {:>5}",
                    r.name, e.head_mean, e.head_median, e.gaze_mean, e.gaze_median, e.n
                );
            }
            Err(reason) => {
                let _ = writeln!(s, "{:<width$}  failed: {reason}", r.name);
            }
        }
    }
    s
}
