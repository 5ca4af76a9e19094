//! Line-delimited dataset files, splitting, statistics and validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::annotation::{template_annotate, validate_description, Precision, Rule, Source};
use crate::error::{ConfigError, DatasetError};
use crate::geometry::{angular_error_deg, compose_gaze, Convention, YawPitch};
use crate::grid::PoseSample;
use crate::numfmt::format_angle;

pub const FORMAT_VERSION: u64 = 1;
pub const GENERATOR: &str = concat!("tog ", env!("CARGO_PKG_VERSION"));
/// Stored gaze may differ from the recomposed one by at most this much.
pub const GAZE_TOLERANCE_DEG: f64 = 0.01;

/// One description of one pose sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TextRecord {
    pub sample_id: u32,
    pub head: YawPitch,
    pub eye: YawPitch,
    pub gaze: YawPitch,
    pub precision: Precision,
    pub text: String,
    pub source: Source,
    pub variant: u32,
}

impl TextRecord {
    pub fn key(&self) -> (u32, Precision, u32, Source) {
        (self.sample_id, self.precision, self.variant, self.source)
    }

    fn check(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        if self.text.contains('\n') {
            return Err("text contains a newline".into());
        }
        if !(self.head.is_finite() && self.eye.is_finite() && self.gaze.is_finite()) {
            return Err("non-finite angle".into());
        }
        if self.variant as usize >= self.precision.default_variants() {
            return Err(format!("variant {} out of range for {} precision", self.variant, self.precision));
        }
        Ok(())
    }

    /// The JSON line for this record, with fixed key order and angle
    /// formatting.
    pub fn to_line(&self) -> String {
        let pair = |p: YawPitch| format!("[{},{}]", format_angle(p.yaw), format_angle(p.pitch));
        let mut s = String::with_capacity(160 + self.text.len());
        let _ = write!(
            s,
            "{{\"id\":{},\"head\":{},\"eye\":{},\"gaze\":{},\"precision\":\"{}\",\"text\":{},\"source\":\"{}\",\"variant\":{}}}",
            self.sample_id,
            pair(self.head),
            pair(self.eye),
            pair(self.gaze),
            self.precision,
            serde_json::to_string(&self.text).expect("string serializes"),
            self.source.as_str(),
            self.variant
        );
        s
    }
}

impl TextRecord {
    /// Angles are quantized to their stored decimal form so a written and
    /// re-read record compares equal to the original.
    pub fn from_sample(s: &PoseSample, precision: Precision, text: String, source: Source, variant: u32) -> Self {
        Self {
            sample_id: s.id,
            head: quantize(s.head),
            eye: quantize(s.eye),
            gaze: quantize(s.gaze),
            precision,
            text,
            source,
            variant,
        }
    }
}

pub fn quantize(p: YawPitch) -> YawPitch {
    let q = |v: f64| format_angle(v).parse::<f64>().expect("formatted angle parses");
    YawPitch::new(q(p.yaw), q(p.pitch))
}

/// Offline annotation of every sample: one low-precision and three
/// high-precision descriptions each, in sample order. The variant index
/// doubles as the phrase seed.
pub fn template_records(samples: &[PoseSample]) -> Vec<TextRecord> {
    samples
        .par_iter()
        .flat_map_iter(|s| {
            let low = (Precision::Low, 0u32);
            let highs = (0..Precision::High.default_variants() as u32).map(|v| (Precision::High, v));
            std::iter::once(low).chain(highs).map(move |(p, v)| {
                TextRecord::from_sample(s, p, template_annotate(s, p, v as u64), Source::Template, v)
            })
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: u32,
    head: [f64; 2],
    eye: [f64; 2],
    gaze: [f64; 2],
    precision: Precision,
    text: String,
    source: Source,
    variant: u32,
}

#[derive(Deserialize)]
struct Header {
    format_version: u64,
    #[allow(dead_code)]
    generator: Option<String>,
    convention: Option<String>,
}

pub fn header_line(conv: Convention) -> String {
    format!(
        "{{\"format_version\":{FORMAT_VERSION},\"generator\":{},\"convention\":\"{conv}\"}}",
        serde_json::to_string(GENERATOR).expect("string serializes")
    )
}

/// Writes `records` with a header line. Returns the number of records
/// written. Nothing is written when a record is invalid.
pub fn write_records(records: &[TextRecord], path: &Path, conv: Convention) -> Result<usize, DatasetError> {
    for (index, r) in records.iter().enumerate() {
        r.check().map_err(|reason| DatasetError::InvalidRecord { index, reason })?;
    }
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let f = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{}", header_line(conv)).map_err(io)?;
    for r in records {
        writeln!(w, "{}", r.to_line()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number in the file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub records: Vec<TextRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub convention: Option<Convention>,
}

pub fn read_records(path: &Path) -> Result<LoadedDataset, DatasetError> {
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let f = fs::File::open(path).map_err(io)?;
    let mut lines = BufReader::new(f).lines();
    let first = lines.next().ok_or_else(|| DatasetError::Header("file is empty".into()))?.map_err(io)?;
    let header: Header = serde_json::from_str(&first).map_err(|e| DatasetError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(DatasetError::Version { found: header.format_version, expected: FORMAT_VERSION });
    }
    let convention = match header.convention {
        Some(c) => Some(c.parse().map_err(|e| DatasetError::Header(format!("{e}")))?),
        None => None,
    };
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(raw) => {
                let r = TextRecord {
                    sample_id: raw.id,
                    head: YawPitch::new(raw.head[0], raw.head[1]),
                    eye: YawPitch::new(raw.eye[0], raw.eye[1]),
                    gaze: YawPitch::new(raw.gaze[0], raw.gaze[1]),
                    precision: raw.precision,
                    text: raw.text,
                    source: raw.source,
                    variant: raw.variant,
                };
                match r.check() {
                    Ok(()) => records.push(r),
                    Err(message) => diagnostics.push(Diagnostic { line: line_no, message }),
                }
            }
            Err(e) => diagnostics.push(Diagnostic { line: line_no, message: e.to_string() }),
        }
    }
    Ok(LoadedDataset { records, diagnostics, convention })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_ratio: 0.9, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(ConfigError::Invalid(format!("train ratio {} must lie in (0, 1)", self.train_ratio)));
        }
        Ok(())
    }
}

/// Shuffled sample ids partitioned into (train, test).
pub fn split_ids(ids: &BTreeSet<u32>, spec: &SplitSpec) -> (Vec<u32>, Vec<u32>) {
    let mut ids: Vec<u32> = ids.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let n_train = (spec.train_ratio * ids.len() as f64).floor() as usize;
    let test = ids.split_off(n_train);
    (ids, test)
}

/// Partitions records by sample id; all descriptions of one pose stay on
/// the same side. Record order is preserved within each side.
pub fn split_dataset(
    records: &[TextRecord],
    spec: &SplitSpec,
) -> Result<(Vec<TextRecord>, Vec<TextRecord>), ConfigError> {
    spec.validate()?;
    let ids: BTreeSet<u32> = records.iter().map(|r| r.sample_id).collect();
    let (train_ids, _) = split_ids(&ids, spec);
    let train_ids: HashSet<u32> = train_ids.into_iter().collect();
    Ok(records.iter().cloned().partition(|r| train_ids.contains(&r.sample_id)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetStats {
    pub total: usize,
    pub distinct_samples: usize,
    pub by_precision: BTreeMap<Precision, usize>,
    pub by_source: BTreeMap<Source, usize>,
    /// Records per 10° bucket of gaze yaw, keyed by the bucket's lower edge.
    pub gaze_yaw_hist: BTreeMap<i32, usize>,
    pub gaze_pitch_hist: BTreeMap<i32, usize>,
    pub head_yaw_hist: BTreeMap<i32, usize>,
    pub head_pitch_hist: BTreeMap<i32, usize>,
    pub duplicate_keys: Vec<(u32, Precision, u32, Source)>,
}

fn bucket10(v: f64) -> i32 {
    ((v / 10.0).floor() as i32) * 10
}

pub fn dataset_stats(records: &[TextRecord]) -> DatasetStats {
    let mut s = DatasetStats { total: records.len(), ..Default::default() };
    let mut seen = HashSet::new();
    let mut samples = HashSet::new();
    for r in records {
        *s.by_precision.entry(r.precision).or_default() += 1;
        *s.by_source.entry(r.source).or_default() += 1;
        *s.gaze_yaw_hist.entry(bucket10(r.gaze.yaw)).or_default() += 1;
        *s.gaze_pitch_hist.entry(bucket10(r.gaze.pitch)).or_default() += 1;
        *s.head_yaw_hist.entry(bucket10(r.head.yaw)).or_default() += 1;
        *s.head_pitch_hist.entry(bucket10(r.head.pitch)).or_default() += 1;
        samples.insert(r.sample_id);
        if !seen.insert(r.key()) {
            s.duplicate_keys.push(r.key());
        }
    }
    s.distinct_samples = samples.len();
    s
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "total = {}", self.total);
        let _ = writeln!(out, "distinct_samples = {}", self.distinct_samples);
        for p in [Precision::Low, Precision::High] {
            let _ = writeln!(out, "precision.{p} = {}", self.by_precision.get(&p).copied().unwrap_or(0));
        }
        for src in [Source::Llm, Source::Template] {
            let _ = writeln!(out, "source.{} = {}", src.as_str(), self.by_source.get(&src).copied().unwrap_or(0));
        }
        let _ = writeln!(out, "duplicate_keys = {}", self.duplicate_keys.len());
        for (name, h) in [
            ("head_yaw", &self.head_yaw_hist),
            ("head_pitch", &self.head_pitch_hist),
            ("gaze_yaw", &self.gaze_yaw_hist),
            ("gaze_pitch", &self.gaze_pitch_hist),
        ] {
            for (k, v) in h {
                let _ = writeln!(out, "hist.{name}.{k} = {v}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Flag {
    GazeMismatch { deviation_deg: f64 },
    Description(Rule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFlag {
    pub index: usize,
    pub sample_id: u32,
    pub flag: Flag,
}

impl RecordFlag {
    pub fn rule_name(&self) -> &'static str {
        match &self.flag {
            Flag::GazeMismatch { .. } => "gaze-mismatch",
            Flag::Description(r) => r.name(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationSummary {
    pub checked: usize,
    pub flags: Vec<RecordFlag>,
}

pub fn validate_records(records: &[TextRecord], conv: Convention) -> ValidationSummary {
    let flags: Vec<RecordFlag> = records
        .par_iter()
        .enumerate()
        .flat_map_iter(|(index, r)| {
            let mut out = Vec::new();
            let dev = angular_error_deg(compose_gaze(r.head, r.eye, conv), r.gaze);
            if dev > GAZE_TOLERANCE_DEG {
                out.push(RecordFlag { index, sample_id: r.sample_id, flag: Flag::GazeMismatch { deviation_deg: dev } });
            }
            for v in validate_description(&r.text, r.precision).violations {
                out.push(RecordFlag { index, sample_id: r.sample_id, flag: Flag::Description(v.rule) });
            }
            out
        })
        .collect();
    ValidationSummary { checked: records.len(), flags }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u32, precision: Precision, variant: u32) -> TextRecord {
        TextRecord {
            sample_id: id,
            head: YawPitch::new(60.0, 0.0),
            eye: YawPitch::new(50.0, 10.0),
            gaze: compose_gaze(YawPitch::new(60.0, 0.0), YawPitch::new(50.0, 10.0), Convention::default()),
            precision,
            text: "The person's head turns left, gaze shifts left and up".into(),
            source: Source::Template,
            variant,
        }
    }

    #[test]
    fn line_format_is_fixed() {
        let mut r = rec(3, Precision::Low, 0);
        r.gaze = YawPitch::new(109.5, -0.0);
        r.text = "say \"hi\"".into();
        assert_eq!(
            r.to_line(),
            r#"{"id":3,"head":[60,0],"eye":[50,10],"gaze":[109.5,0],"precision":"low","text":"say \"hi\"","source":"template","variant":0}"#
        );
    }

    #[test]
    fn write_four_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let recs: Vec<_> = (0..4).map(|i| rec(i, Precision::Low, 0)).collect();
        assert_eq!(write_records(&recs, &p, Convention::default()).unwrap(), 4);
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        let back = read_records(&p).unwrap();
        assert!(back.diagnostics.is_empty());
        assert_eq!(back.convention, Some(Convention::default()));
        assert_eq!(back.records.len(), 4);
    }

    #[test]
    fn empty_text_rejected_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs: Vec<_> = (0..3).map(|i| rec(i, Precision::Low, 0)).collect();
        recs[2].text = String::new();
        match write_records(&recs, &dir.path().join("x"), Convention::default()) {
            Err(DatasetError::InvalidRecord { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jsonl");
        fs::write(&p, "{\"format_version\":2,\"generator\":\"x\"}\n").unwrap();
        assert!(matches!(read_records(&p), Err(DatasetError::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn split_small() {
        let recs = vec![rec(1, Precision::Low, 0), rec(2, Precision::Low, 0), rec(2, Precision::High, 0)];
        let (tr, te) = split_dataset(&recs, &SplitSpec { train_ratio: 0.5, seed: 1 }).unwrap();
        let tr_ids: BTreeSet<_> = tr.iter().map(|r| r.sample_id).collect();
        let te_ids: BTreeSet<_> = te.iter().map(|r| r.sample_id).collect();
        assert_eq!((tr_ids.len(), te_ids.len()), (1, 1));
        assert_eq!(tr.len() + te.len(), 3);
        assert!(split_dataset(&recs, &SplitSpec { train_ratio: 1.0, seed: 1 }).is_err());
    }

    #[test]
    fn stats_and_duplicates() {
        assert_eq!(dataset_stats(&[]), DatasetStats::default());
        let recs = vec![rec(1, Precision::Low, 0), rec(1, Precision::High, 0), rec(1, Precision::High, 0)];
        let s = dataset_stats(&recs);
        assert_eq!(s.total, 3);
        assert_eq!(s.by_precision[&Precision::High], 2);
        assert_eq!(s.duplicate_keys.len(), 1);
        assert_eq!(s.gaze_yaw_hist[&100], 3);
    }

    #[test]
    fn validation_flags() {
        let mut recs = vec![rec(1, Precision::Low, 0), rec(2, Precision::Low, 0)];
        assert!(validate_records(&recs, Convention::default()).flags.is_empty());
        recs[0].gaze.yaw += 1.0;
        recs[1].text = "The person turns the head far to the left while the gaze drifts upward".into();
        let v = validate_records(&recs, Convention::default());
        assert_eq!(v.flags.len(), 2);
        assert_eq!(v.flags[0].rule_name(), "gaze-mismatch");
        assert_eq!(v.flags[1].rule_name(), "length");
    }
}
