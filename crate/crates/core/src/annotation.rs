//! Prompt construction for LLM annotation, deterministic template
//! descriptions, subject substitution, and the description checks shared by
//! both sources.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{AnnotationError, ConfigError};
use crate::grid::PoseSample;
use crate::numfmt::format_angle;

pub const DEFAULT_SUBJECT: &str = "The person";

/// Band thresholds in degrees of absolute value.
pub const CENTER_BELOW: f64 = 5.0;
pub const SLIGHT_BELOW: f64 = 25.0;
pub const MID_UP_TO: f64 = 60.0;

pub const LOW_MAX_WORDS: usize = 10;
pub const HIGH_WORDS: (usize, usize) = (20, 30);

const EMBEDDED_PHRASES: &str = include_str!("../assets/phrases.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Low,
    High,
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::Low => "low",
            Precision::High => "high",
        }
    }

    /// Descriptions requested per sample at this precision.
    pub fn default_variants(&self) -> usize {
        match self {
            Precision::Low => 1,
            Precision::High => 3,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Precision::Low),
            "high" => Ok(Precision::High),
            _ => Err(ConfigError::Invalid(format!("unknown precision `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub precision: Precision,
    pub n_variants: usize,
    pub subject: String,
}

impl PromptSpec {
    pub fn new(precision: Precision) -> Self {
        Self { precision, n_variants: precision.default_variants(), subject: DEFAULT_SUBJECT.to_string() }
    }
}

const NUMBER_WORDS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];

/// The annotation prompt for one pose sample.
pub fn build_prompt(sample: &PoseSample, spec: &PromptSpec) -> String {
    let (req2, req3) = match spec.precision {
        Precision::Low => ("Offer rough direction descriptions regardless of extent;", "Be one sentence and within 10 words;"),
        Precision::High => ("Offer precise direction descriptions with a clear extent;", "Be concise, between 20 and 30 words;"),
    };
    let mut p = String::new();
    p.push_str(
        "Imagine describing someone's head and gaze movement. Given four numbers representing yaw and pitch \
         for both head and gaze (positive for left/up, negative for right/down), craft a detailed description. \
         Your narrative should:\n",
    );
    p.push_str("1. Avoid numerical values for angles;\n");
    p.push_str(&format!("2. {req2}\n"));
    p.push_str(&format!("3. {req3}\n"));
    p.push_str(&format!(
        "4. Begin with '{}' and describe 'the head' and 'the gaze' impersonally.\n",
        spec.subject
    ));
    p.push_str(&values_line(sample));
    if spec.n_variants > 1 {
        let n = NUMBER_WORDS.get(spec.n_variants).map(|s| s.to_string()).unwrap_or_else(|| spec.n_variants.to_string());
        p.push('\n');
        p.push_str(&format!("Please give me {n} different descriptions."));
    }
    p
}

/// `Head yaw: A. Head pitch: B. Gaze yaw: C. Gaze pitch: D.`
pub fn values_line(sample: &PoseSample) -> String {
    format!(
        "Head yaw: {}. Head pitch: {}. Gaze yaw: {}. Gaze pitch: {}.",
        format_angle(sample.head.yaw),
        format_angle(sample.head.pitch),
        format_angle(sample.gaze.yaw),
        format_angle(sample.gaze.pitch)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    HeadYaw,
    HeadPitch,
    GazeYaw,
    GazePitch,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::HeadYaw, Axis::HeadPitch, Axis::GazeYaw, Axis::GazePitch];

    pub fn value(&self, sample: &PoseSample) -> f64 {
        match self {
            Axis::HeadYaw => sample.head.yaw,
            Axis::HeadPitch => sample.head.pitch,
            Axis::GazeYaw => sample.gaze.yaw,
            Axis::GazePitch => sample.gaze.pitch,
        }
    }
}

/// Qualitative extent of one angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    ExtremeNeg,
    MidNeg,
    SlightNeg,
    Center,
    SlightPos,
    MidPos,
    ExtremePos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Slight,
    Mid,
    Extreme,
}

impl Band {
    pub fn from_degrees(v: f64) -> Band {
        let a = v.abs();
        let ext = if a < CENTER_BELOW {
            return Band::Center;
        } else if a < SLIGHT_BELOW {
            Extent::Slight
        } else if a <= MID_UP_TO {
            Extent::Mid
        } else {
            Extent::Extreme
        };
        Band::with_sign(v > 0.0, ext)
    }

    fn with_sign(pos: bool, ext: Extent) -> Band {
        match (pos, ext) {
            (true, Extent::Slight) => Band::SlightPos,
            (true, Extent::Mid) => Band::MidPos,
            (true, Extent::Extreme) => Band::ExtremePos,
            (false, Extent::Slight) => Band::SlightNeg,
            (false, Extent::Mid) => Band::MidNeg,
            (false, Extent::Extreme) => Band::ExtremeNeg,
        }
    }

    /// −1, 0 or +1.
    pub fn sign(&self) -> i8 {
        match self {
            Band::ExtremeNeg | Band::MidNeg | Band::SlightNeg => -1,
            Band::Center => 0,
            _ => 1,
        }
    }

    pub fn extent(&self) -> Option<Extent> {
        match self {
            Band::Center => None,
            Band::SlightNeg | Band::SlightPos => Some(Extent::Slight),
            Band::MidNeg | Band::MidPos => Some(Extent::Mid),
            Band::ExtremeNeg | Band::ExtremePos => Some(Extent::Extreme),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectionBucket {
    pub axis: Axis,
    pub band: Band,
}

pub fn bucket(sample: &PoseSample, axis: Axis) -> DirectionBucket {
    DirectionBucket { axis, band: Band::from_degrees(axis.value(sample)) }
}

/// Where a description came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Llm,
    Template,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Llm => "llm",
            Source::Template => "template",
        }
    }
}

impl FromStr for Source {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Source::Llm),
            "template" => Ok(Source::Template),
            _ => Err(ConfigError::Invalid(format!("unknown source `{s}`"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Phrase tables

/// Synonym and frame tables for [`template_annotate`].
#[derive(Debug, Clone)]
pub struct PhraseTable {
    pub version: u32,
    entries: BTreeMap<String, Vec<String>>,
}

const REQUIRED_KEYS: &[&str] = &[
    "dir.left",
    "dir.right",
    "dir.up",
    "dir.down",
    "dir.up.high",
    "dir.down.high",
    "extent.slight",
    "extent.mid",
    "extent.extreme",
    "low.head_verb",
    "low.gaze_verb",
    "low.both_center",
    "low.head_center",
    "low.gaze_center",
    "low.both",
    "high.head_verb",
    "high.head_verb_intr",
    "high.gaze_verb",
    "high.head_act_center",
    "high.head_intr_center",
    "high.gaze_act_center",
    "high.frame",
    "high.tail",
];

impl PhraseTable {
    pub fn parse(text: &str) -> Result<Self, AnnotationError> {
        let mut entries = BTreeMap::new();
        let mut version = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AnnotationError::PhraseTable(format!("line {}: expected `key = value`", ln + 1)))?;
            let k = k.trim();
            if k == "version" {
                version = Some(
                    v.trim()
                        .parse::<u32>()
                        .map_err(|_| AnnotationError::PhraseTable(format!("line {}: bad version", ln + 1)))?,
                );
                continue;
            }
            let alts: Vec<String> = v.split('|').map(|s| s.trim().to_string()).collect();
            if alts.iter().any(|a| a.is_empty()) {
                return Err(AnnotationError::PhraseTable(format!("line {}: empty alternative for `{k}`", ln + 1)));
            }
            entries.insert(k.to_string(), alts);
        }
        let version = version.ok_or_else(|| AnnotationError::PhraseTable("missing `version`".into()))?;
        for key in REQUIRED_KEYS {
            if !entries.contains_key(*key) {
                return Err(AnnotationError::PhraseTable(format!("missing key `{key}`")));
            }
        }
        Ok(Self { version, entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, AnnotationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| AnnotationError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// The table compiled into the crate.
    pub fn embedded() -> &'static PhraseTable {
        static TABLE: OnceLock<PhraseTable> = OnceLock::new();
        TABLE.get_or_init(|| PhraseTable::parse(EMBEDDED_PHRASES).expect("embedded phrase table is valid"))
    }

    fn alts(&self, key: &str) -> &[String] {
        &self.entries[key]
    }

    fn pick(&self, key: &str, h: u64) -> &str {
        let a = self.alts(key);
        &a[(h % a.len() as u64) as usize]
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn slot_hash(sample_id: u32, seed: u64, slot: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(sample_id as u64) ^ seed) ^ slot.wrapping_mul(0x2545_F491_4F6C_DD1D))
}

// ---------------------------------------------------------------------------
// Template descriptions

struct Phrasing<'a> {
    table: &'a PhraseTable,
    sample_id: u32,
    seed: u64,
    slot: u64,
}

impl<'a> Phrasing<'a> {
    fn next(&mut self, key: &str) -> &'a str {
        self.slot += 1;
        let table: &'a PhraseTable = self.table;
        table.pick(key, slot_hash(self.sample_id, self.seed, self.slot))
    }

    fn yaw_word(&mut self, band: Band, high: bool) -> Option<String> {
        let _ = high;
        match band.sign() {
            1 => Some(self.next("dir.left").to_string()),
            -1 => Some(self.next("dir.right").to_string()),
            _ => None,
        }
    }

    fn pitch_word(&mut self, band: Band, high: bool) -> Option<String> {
        let key = match (band.sign(), high) {
            (1, false) => "dir.up",
            (-1, false) => "dir.down",
            (1, true) => "dir.up.high",
            (-1, true) => "dir.down.high",
            _ => return None,
        };
        Some(self.next(key).to_string())
    }

    fn extent_word(&mut self, band: Band) -> &'a str {
        match band.extent() {
            Some(Extent::Slight) => self.next("extent.slight"),
            Some(Extent::Mid) => self.next("extent.mid"),
            _ => self.next("extent.extreme"),
        }
    }

    /// Low precision: direction words only, e.g. `up and left`.
    fn low_phrase(&mut self, yaw: Band, pitch: Band) -> (String, String) {
        let y = self.yaw_word(yaw, false);
        let p = self.pitch_word(pitch, false);
        match (p, y) {
            (Some(p), Some(y)) => (format!("{p} and {y}"), format!("{p}-{y}")),
            (Some(w), None) | (None, Some(w)) => (w.clone(), w),
            (None, None) => unreachable!("center handled by caller"),
        }
    }

    /// High precision: each moving axis with its extent, e.g.
    /// `sharply left and slightly upwards`.
    fn high_phrase(&mut self, yaw: Band, pitch: Band) -> String {
        let mut parts = Vec::new();
        if let Some(w) = self.yaw_word(yaw, true) {
            parts.push(format!("{} {w}", self.extent_word(yaw)));
        }
        if let Some(w) = self.pitch_word(pitch, true) {
            parts.push(format!("{} {w}", self.extent_word(pitch)));
        }
        parts.join(" and ")
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn fill(frame: &str, vars: &[(&str, &str)]) -> String {
    let mut s = frame.to_string();
    for (k, v) in vars {
        s = s.replace(k, v);
    }
    s
}

/// Deterministic description of `sample` using the embedded phrase table.
pub fn template_annotate(sample: &PoseSample, precision: Precision, variant_seed: u64) -> String {
    template_annotate_with(PhraseTable::embedded(), sample, precision, variant_seed)
}

pub fn template_annotate_with(
    table: &PhraseTable,
    sample: &PoseSample,
    precision: Precision,
    variant_seed: u64,
) -> String {
    let hy = Band::from_degrees(sample.head.yaw);
    let hp = Band::from_degrees(sample.head.pitch);
    let gy = Band::from_degrees(sample.gaze.yaw);
    let gp = Band::from_degrees(sample.gaze.pitch);
    let head_center = hy == Band::Center && hp == Band::Center;
    let gaze_center = gy == Band::Center && gp == Band::Center;
    let mut ph = Phrasing { table, sample_id: sample.id, seed: variant_seed, slot: 0 };
    // consecutive seeds walk the frame list, so they never share a frame
    let frame_idx = |n: usize| ((splitmix64(sample.id as u64) % n as u64 + variant_seed) % n as u64) as usize;

    match precision {
        Precision::Low => {
            let key = match (head_center, gaze_center) {
                (true, true) => "low.both_center",
                (true, false) => "low.head_center",
                (false, true) => "low.gaze_center",
                (false, false) => "low.both",
            };
            let frames = table.alts(key);
            let frame = &frames[frame_idx(frames.len())];
            let hv = ph.next("low.head_verb");
            let gv = ph.next("low.gaze_verb");
            let (h_full, h_compact) = if head_center { (String::new(), String::new()) } else { ph.low_phrase(hy, hp) };
            let (g_full, g_compact) = if gaze_center { (String::new(), String::new()) } else { ph.low_phrase(gy, gp) };
            let attempts = [(&h_full, &g_full), (&h_full, &g_compact), (&h_compact, &g_compact)];
            let mut out = String::new();
            for (h, g) in attempts {
                out = fill(frame, &[("{hv}", hv), ("{gv}", gv), ("{H}", h), ("{G}", g)]);
                if word_count(&out) <= LOW_MAX_WORDS {
                    break;
                }
            }
            out
        }
        Precision::High => {
            let frames = table.alts("high.frame");
            let frame = &frames[frame_idx(frames.len())];
            let head_act = if head_center {
                ph.next("high.head_act_center").to_string()
            } else {
                format!("{} the head {}", ph.next("high.head_verb"), ph.high_phrase(hy, hp))
            };
            let head_intr = if head_center {
                ph.next("high.head_intr_center").to_string()
            } else {
                format!("{} {}", ph.next("high.head_verb_intr"), ph.high_phrase(hy, hp))
            };
            let gaze_act = if gaze_center {
                ph.next("high.gaze_act_center").to_string()
            } else {
                format!("{} {}", ph.next("high.gaze_verb"), ph.high_phrase(gy, gp))
            };
            let body = fill(frame, &[("{HEAD_ACT}", &head_act), ("{HEAD_INTR}", &head_intr), ("{GAZE_ACT}", &gaze_act)]);
            let tails = table.alts("high.tail");
            let start = (slot_hash(sample.id, variant_seed, 1_000) % tails.len() as u64) as usize;
            let mut fallback = None;
            for k in 0..tails.len() {
                let s = body.replace("{TAIL}", &tails[(start + k) % tails.len()]);
                let n = word_count(&s);
                if (HIGH_WORDS.0..=HIGH_WORDS.1).contains(&n) {
                    return s;
                }
                fallback.get_or_insert(s);
            }
            fallback.unwrap_or(body)
        }
    }
}

// ---------------------------------------------------------------------------
// Subject substitution

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub text: String,
    /// Set when the text contained no "The person" / "the person" to replace.
    pub warning: bool,
}

pub fn substitute_subject(text: &str, subject: &str) -> Result<Substitution, AnnotationError> {
    let subject = subject.trim();
    if subject.is_empty() {
        return Err(AnnotationError::EmptySubject);
    }
    let found = text.contains(DEFAULT_SUBJECT) || text.contains("the person");
    let mut lower = subject.to_string();
    if let Some(first) = lower.get(0..1) {
        let l = first.to_lowercase();
        lower.replace_range(0..1, &l);
    }
    let mut upper = subject.to_string();
    if let Some(first) = upper.get(0..1) {
        let u = first.to_uppercase();
        upper.replace_range(0..1, &u);
    }
    let out = replace_phrase(&replace_phrase(text, DEFAULT_SUBJECT, &upper), "the person", &lower);
    Ok(Substitution { text: out, warning: !found })
}

/// Replaces whole-word occurrences of `phrase`.
fn replace_phrase(text: &str, phrase: &str, with: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find(phrase) {
        let before_ok = rest[..pos].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = &rest[pos + phrase.len()..];
        let after_ok = after.chars().next().is_none_or(|c| !c.is_alphanumeric());
        out.push_str(&rest[..pos]);
        if before_ok && after_ok {
            out.push_str(with);
        } else {
            out.push_str(phrase);
        }
        rest = after;
    }
    out.push_str(rest);
    out
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisEstimate {
    pub band: Band,
    /// False when the text never mentioned this axis and `band` is the
    /// center default.
    pub confident: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectionEstimate {
    pub head_yaw: AxisEstimate,
    pub head_pitch: AxisEstimate,
    pub gaze_yaw: AxisEstimate,
    pub gaze_pitch: AxisEstimate,
    /// Direction words were found but neither "head" nor "gaze"; they were
    /// attributed to the gaze.
    pub unanchored: bool,
}

impl DirectionEstimate {
    pub fn get(&self, axis: Axis) -> AxisEstimate {
        match axis {
            Axis::HeadYaw => self.head_yaw,
            Axis::HeadPitch => self.head_pitch,
            Axis::GazeYaw => self.gaze_yaw,
            Axis::GazePitch => self.gaze_pitch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Head,
    Gaze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Word {
    Anchor(Target),
    Extent(Extent),
    Yaw(bool),
    Pitch(bool),
    Center,
    Level,
    Filler,
    Other,
}

fn classify(tok: &str) -> Word {
    match tok {
        "head" | "heads" => Word::Anchor(Target::Head),
        "gaze" | "gazes" | "gazing" | "gazed" | "eye" | "eyes" => Word::Anchor(Target::Gaze),
        "slightly" | "gently" | "subtly" | "little" | "bit" | "barely" | "minimal" | "minimally" | "faintly"
        | "softly" | "mildly" => Word::Extent(Extent::Slight),
        "moderately" | "noticeably" | "clearly" | "somewhat" | "partially" => Word::Extent(Extent::Mid),
        "sharply" | "significantly" | "strongly" | "far" | "deeply" | "fully" | "extremely" | "hard" | "steeply"
        | "greatly" | "heavily" => Word::Extent(Extent::Extreme),
        "left" | "leftward" | "leftwards" => Word::Yaw(true),
        "right" | "rightward" | "rightwards" => Word::Yaw(false),
        "up" | "upward" | "upwards" | "upper" | "raised" | "lifted" | "rise" | "rises" | "rising" => Word::Pitch(true),
        "down" | "downward" | "downwards" | "lower" | "lowered" | "dipped" | "dips" | "dipping" | "descending"
        | "decline" | "declines" => Word::Pitch(false),
        "straight" | "ahead" | "forward" | "forwards" | "straightforward" | "centered" | "centred" | "front" => {
            Word::Center
        }
        "level" => Word::Level,
        "and" | "the" | "both" | "his" | "her" | "their" | "its" | "a" => Word::Filler,
        _ => Word::Other,
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Default, Clone, Copy)]
struct Slot {
    band: Option<Band>,
    directional: bool,
}

/// Recovers per-axis direction bands from a description.
///
/// Direction words attach to the most recent "head"/"gaze" mention; anchors
/// joined only by connectives ("the head and the gaze") share the words that
/// follow. An extent adverb applies to the next direction word. Direction
/// words without any extent default to the mid band.
pub fn parse_directions(text: &str) -> Result<DirectionEstimate, AnnotationError> {
    let toks = tokens(text);
    // slots: [head yaw, head pitch, gaze yaw, gaze pitch]
    let mut slots = [Slot::default(); 4];
    let mut group: Vec<Target> = Vec::new();
    let mut pending_pre_anchor: Vec<(Word, Option<Extent>)> = Vec::new();
    let mut since_anchor_directional = false;
    let mut only_filler_since_anchor = true;
    let mut extent: Option<Extent> = None;
    let mut saw_anchor = false;
    let mut saw_direction = false;

    fn apply(slots: &mut [Slot; 4], group: &[Target], w: Word, ext: Option<Extent>) {
        for t in group {
            let base = match t {
                Target::Head => 0,
                Target::Gaze => 2,
            };
            match w {
                Word::Yaw(pos) => {
                    slots[base] = Slot { band: Some(Band::with_sign(pos, ext.unwrap_or(Extent::Mid))), directional: true }
                }
                Word::Pitch(pos) => {
                    slots[base + 1] =
                        Slot { band: Some(Band::with_sign(pos, ext.unwrap_or(Extent::Mid))), directional: true }
                }
                Word::Center => {
                    for i in [base, base + 1] {
                        if !slots[i].directional {
                            slots[i] = Slot { band: Some(Band::Center), directional: false };
                        }
                    }
                }
                Word::Level => {
                    if !slots[base + 1].directional {
                        slots[base + 1] = Slot { band: Some(Band::Center), directional: false };
                    }
                }
                _ => {}
            }
        }
    }

    for tok in &toks {
        let w = classify(tok);
        match w {
            Word::Anchor(t) => {
                saw_anchor = true;
                if group.is_empty() || since_anchor_directional || !only_filler_since_anchor {
                    group = vec![t];
                } else if !group.contains(&t) {
                    group.push(t);
                }
                if !pending_pre_anchor.is_empty() {
                    for (pw, pe) in pending_pre_anchor.drain(..) {
                        apply(&mut slots, &group, pw, pe);
                    }
                }
                since_anchor_directional = false;
                only_filler_since_anchor = true;
                extent = None;
            }
            Word::Extent(e) => {
                extent = Some(e);
                only_filler_since_anchor = false;
            }
            Word::Yaw(_) | Word::Pitch(_) | Word::Center | Word::Level => {
                saw_direction = true;
                if group.is_empty() {
                    pending_pre_anchor.push((w, extent.take()));
                } else {
                    apply(&mut slots, &group, w, extent.take());
                }
                since_anchor_directional = true;
                only_filler_since_anchor = false;
            }
            Word::Filler => {}
            Word::Other => {
                only_filler_since_anchor = false;
            }
        }
    }
    if !saw_direction {
        return Err(AnnotationError::Unparseable(text.to_string()));
    }
    let unanchored = !saw_anchor;
    if unanchored {
        for (pw, pe) in pending_pre_anchor.drain(..) {
            apply(&mut slots, &[Target::Gaze], pw, pe);
        }
    }
    let est = |s: Slot| AxisEstimate { band: s.band.unwrap_or(Band::Center), confident: s.band.is_some() };
    Ok(DirectionEstimate {
        head_yaw: est(slots[0]),
        head_pitch: est(slots[1]),
        gaze_yaw: est(slots[2]),
        gaze_pitch: est(slots[3]),
        unanchored,
    })
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    Subject,
    SingleSentence,
    Length,
    NumericAngle,
    MentionsHeadAndGaze,
    Empty,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Subject => "subject",
            Rule::SingleSentence => "single-sentence",
            Rule::Length => "length",
            Rule::NumericAngle => "numeric-angle",
            Rule::MentionsHeadAndGaze => "mentions-head-gaze",
            Rule::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

pub fn validate_description(text: &str, precision: Precision) -> ValidationReport {
    validate_description_for(text, precision, DEFAULT_SUBJECT)
}

pub fn validate_description_for(text: &str, precision: Precision, subject: &str) -> ValidationReport {
    let mut r = ValidationReport::default();
    let mut flag = |rule: Rule, detail: String| r.violations.push(Violation { rule, detail });
    let t = text.trim();
    if t.is_empty() {
        flag(Rule::Empty, "description is empty".into());
        return r;
    }
    if !t.starts_with(subject) {
        flag(Rule::Subject, format!("does not begin with `{subject}`"));
    }
    let body = t.trim_end_matches(['.', '!', '?', ' ', '"', '\'']);
    if body.contains(['.', '!', '?']) {
        flag(Rule::SingleSentence, "more than one sentence".into());
    }
    let n = word_count(t);
    match precision {
        Precision::Low if n > LOW_MAX_WORDS => flag(Rule::Length, format!("{n} words > {LOW_MAX_WORDS}")),
        Precision::High if !(HIGH_WORDS.0..=HIGH_WORDS.1).contains(&n) => {
            flag(Rule::Length, format!("{n} words outside [{}, {}]", HIGH_WORDS.0, HIGH_WORDS.1))
        }
        _ => {}
    }
    if let Some(m) = numeric_angle(t) {
        flag(Rule::NumericAngle, format!("numeric angle `{m}`"));
    }
    let lower = t.to_lowercase();
    if !(lower.contains("head") && lower.contains("gaz")) {
        flag(Rule::MentionsHeadAndGaze, "must mention both the head and the gaze".into());
    }
    r
}

/// First `<number> <degree token>` occurrence, if any.
fn numeric_angle(text: &str) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let mut j = i;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let rest: String = chars[j..].iter().take(8).collect::<String>().to_lowercase();
            let unit = rest.starts_with('°')
                || rest.starts_with("degree")
                || rest.starts_with("deg")
                    && rest[3..].chars().next().is_none_or(|c| !c.is_alphabetic());
            if unit {
                return Some(chars[start..j.min(chars.len())].iter().collect::<String>().trim().to_string());
            }
        } else {
            i += 1;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::YawPitch;

    fn sample(head: (f64, f64), gaze: (f64, f64)) -> PoseSample {
        PoseSample {
            id: 7,
            head: YawPitch::new(head.0, head.1),
            eye: YawPitch::ZERO,
            gaze: YawPitch::new(gaze.0, gaze.1),
        }
    }

    #[test]
    fn low_prompt_requirements() {
        let p = build_prompt(&sample((0.0, 0.0), (0.0, 0.0)), &PromptSpec::new(Precision::Low));
        assert!(p.contains("Avoid numerical values for angles"));
        assert!(p.contains("Be one sentence and within 10 words"));
        assert!(p.contains("Offer rough direction descriptions regardless of extent;"));
        assert!(p.contains("4. Begin with 'The person' and describe 'the head' and 'the gaze' impersonally."));
        assert!(!p.contains("different descriptions"));
    }

    #[test]
    fn high_prompt_ends_with_multiplicity() {
        let p = build_prompt(&sample((0.0, 0.0), (0.0, 0.0)), &PromptSpec::new(Precision::High));
        assert!(p.contains("2. Offer precise direction descriptions with a clear extent;"));
        assert!(p.contains("3. Be concise, between 20 and 30 words;"));
        assert!(p.ends_with("Please give me three different descriptions."));
        assert!(!p.contains("within 10 words"));
    }

    #[test]
    fn values_line_format() {
        let s = sample((60.0, 0.0), (109.0, 10.0));
        assert_eq!(values_line(&s), "Head yaw: 60. Head pitch: 0. Gaze yaw: 109. Gaze pitch: 10.");
        assert!(build_prompt(&s, &PromptSpec::new(Precision::Low)).ends_with(&values_line(&s)));
    }

    #[test]
    fn bands() {
        assert_eq!(Band::from_degrees(0.0), Band::Center);
        assert_eq!(Band::from_degrees(-4.9), Band::Center);
        assert_eq!(Band::from_degrees(5.0), Band::SlightPos);
        assert_eq!(Band::from_degrees(25.0), Band::MidPos);
        assert_eq!(Band::from_degrees(-60.0), Band::MidNeg);
        assert_eq!(Band::from_degrees(60.5), Band::ExtremePos);
    }

    #[test]
    fn straight_ahead_template() {
        let t = template_annotate(&sample((0.0, 0.0), (0.0, 0.0)), Precision::Low, 0);
        assert!(t.contains("straight ahead"), "{t}");
        assert!(t.starts_with("The person"));
        assert!(word_count(&t) <= 10);
    }

    #[test]
    fn left_turn_template() {
        let t = template_annotate(&sample((60.0, 0.0), (109.0, 10.0)), Precision::Low, 0);
        let est = parse_directions(&t).unwrap();
        assert_eq!(t.matches("left").count(), 2, "{t}");
        assert!(t.contains("up"), "{t}");
        assert_eq!(est.head_yaw.band.sign(), 1);
        assert_eq!(est.gaze_pitch.band.sign(), 1);
        assert_eq!(t, template_annotate(&sample((60.0, 0.0), (109.0, 10.0)), Precision::Low, 0));
    }

    #[test]
    fn seeds_change_surface_form() {
        let s = sample((-30.0, 20.0), (-70.0, -10.0));
        for p in [Precision::Low, Precision::High] {
            let a = template_annotate(&s, p, 0);
            let b = template_annotate(&s, p, 1);
            let c = template_annotate(&s, p, 2);
            assert!(a != b && b != c && a != c, "{a} | {b} | {c}");
        }
    }

    #[test]
    fn subject_substitution() {
        let s = substitute_subject("The person kept the head and the gaze straight ahead", "The girl").unwrap();
        assert_eq!(s.text, "The girl kept the head and the gaze straight ahead");
        assert!(!s.warning);
        let same = substitute_subject("The person's head turns left", DEFAULT_SUBJECT).unwrap();
        assert_eq!(same.text, "The person's head turns left");
        let none = substitute_subject("A head turns left", "The boy").unwrap();
        assert_eq!(none.text, "A head turns left");
        assert!(none.warning);
        let inner = substitute_subject("Look at the person now", "The farmer").unwrap();
        assert_eq!(inner.text, "Look at the farmer now");
        assert!(matches!(substitute_subject("The person", "  "), Err(AnnotationError::EmptySubject)));
        // no partial-word match
        assert_eq!(substitute_subject("The personal view", "The boy").unwrap().text, "The personal view");
    }

    #[test]
    fn parse_table_rows() {
        let e = parse_directions("The person's head turns left, gaze shifts left and slightly up").unwrap();
        assert_eq!(e.head_yaw.band.sign(), 1);
        assert_eq!(e.gaze_yaw.band.sign(), 1);
        assert_eq!(e.gaze_pitch.band, Band::SlightPos);
        assert_eq!(e.head_pitch.band, Band::Center);
        assert!(!e.head_pitch.confident);

        let e = parse_directions("The person kept the head and the gaze straight ahead").unwrap();
        for a in Axis::ALL {
            assert_eq!(e.get(a).band, Band::Center);
            assert!(e.get(a).confident);
        }

        let e = parse_directions(
            "The person directed the head significantly to the right and downward, while the gaze extended far right, with a minimal decline.",
        )
        .unwrap();
        assert_eq!(e.head_yaw.band, Band::ExtremeNeg);
        assert_eq!(e.head_pitch.band.sign(), -1);
        assert_eq!(e.gaze_yaw.band, Band::ExtremeNeg);
        assert_eq!(e.gaze_pitch.band, Band::SlightNeg);
    }

    #[test]
    fn parse_gazing_clause() {
        let e = parse_directions("The person tilts the head right, gazing up and left").unwrap();
        assert_eq!(e.head_yaw.band.sign(), -1);
        assert_eq!(e.gaze_yaw.band.sign(), 1);
        assert_eq!(e.gaze_pitch.band.sign(), 1);
        assert_eq!(e.head_pitch.band, Band::Center);
    }

    #[test]
    fn unparseable() {
        assert!(matches!(parse_directions("The weather is nice"), Err(AnnotationError::Unparseable(_))));
        let e = parse_directions("The person looks sharply left").unwrap();
        assert!(e.unanchored);
        assert_eq!(e.gaze_yaw.band, Band::ExtremePos);
    }

    #[test]
    fn validation_examples() {
        assert!(validate_description("The person tilts the head right, gazing up and left", Precision::Low).passed());
        let r = validate_description("The person looks 60 degrees upward", Precision::Low);
        assert!(r.has(Rule::NumericAngle));
        let fifteen = "The person turns the head left while the gaze moves up toward the bright window quite fast";
        assert_eq!(word_count(fifteen), 17);
        let fifteen = "The person turns the head left while the gaze moves up toward the window now";
        assert_eq!(word_count(fifteen), 15);
        let r = validate_description(fifteen, Precision::High);
        assert!(r.has(Rule::Length));
        assert!(!r.has(Rule::Subject));
        let r = validate_description("A man turns. The head and gaze follow.", Precision::Low);
        assert!(r.has(Rule::Subject) && r.has(Rule::SingleSentence));
        assert!(validate_description("  ", Precision::Low).has(Rule::Empty));
        assert!(numeric_angle("rotated 30° left").is_some());
        assert!(numeric_angle("about 12 deg up").is_some());
        assert!(numeric_angle("3 degrees").is_some());
        assert!(numeric_angle("the 2 eyes").is_none());
    }

    #[test]
    fn phrase_table_override_checks_keys() {
        assert!(PhraseTable::parse("version = 1\ndir.left = left\n").is_err());
        assert!(PhraseTable::parse("dir.left = left\n").is_err());
        let t = PhraseTable::parse(EMBEDDED_PHRASES).unwrap();
        assert_eq!(t.version, 1);
    }
}
