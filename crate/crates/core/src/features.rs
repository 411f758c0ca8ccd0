//! Gesture meta features.
//!
//! Five whole-body features followed by five features per configured
//! localisation:
//!
//! | token  | meaning |
//! |--------|---------|
//! | `O-FM` | mean per-frame movement of all usable points (no gestures involved) |
//! | `O-GM` | share of whole-body movement that happens while any gesture is active |
//! | `O-GS` | mean gesture surprise over every gesture |
//! | `O-GD` | mean within-gesture std of per-frame unit movement |
//! | `O-GC` | gesture count / frames |
//! | `*-GL` | mean gesture length / frames |
//! | `*-GC` | gesture count / frames |
//! | `*-GA` | mean per-frame unit movement within gestures |
//! | `*-GT` | total unit movement within gestures / frames |
//! | `*-GS` | mean gesture surprise |
//!
//! "frames" is the sample's tracked frame count: separators are excluded.
//! A feature with no input gesture holds [`ABSENT`].

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gestures::{GestureSpan, MovementSeries};
use crate::pose::{LocalisationKind, UnitKind};

pub const ABSENT: f64 = -1.0;

pub const OVERALL_FEATURES: [&str; 5] = ["FM", "GM", "GS", "GD", "GC"];
pub const LOCALISED_FEATURES: [&str; 5] = ["GL", "GC", "GA", "GT", "GS"];

/// Feature names in vector order, e.g. `O-FM`, ..., `Hn-GL`, ...
pub fn feature_names(localisations: &[LocalisationKind]) -> Vec<String> {
    let mut names: Vec<String> = OVERALL_FEATURES.iter().map(|f| format!("O-{f}")).collect();
    for loc in localisations {
        names.extend(LOCALISED_FEATURES.iter().map(|f| format!("{}-{f}", loc.token())));
    }
    names
}

/// Movement and detected gestures of one unit on one track.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitAnalysis {
    pub unit: UnitKind,
    pub movement: MovementSeries,
    pub spans: Vec<GestureSpan>,
}

/// Everything feature extraction needs from one cleaned track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackAnalysis {
    pub frames: usize,
    pub body_movement: MovementSeries,
    pub units: Vec<UnitAnalysis>,
}

fn total_frames(tracks: &[TrackAnalysis]) -> usize {
    tracks.iter().map(|t| t.frames).sum()
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values).unwrap_or(0.0);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Surprise of each gesture of one unit: the idle gap before it, as a
/// proportion of `total_frames`. The first gesture on each track measures
/// from the track start. `spans` must be ordered by `(track, start_frame)`.
pub fn gesture_surprise(spans: &[GestureSpan], total_frames: usize) -> Vec<f64> {
    let n = total_frames as f64;
    let mut previous: Option<&GestureSpan> = None;
    spans
        .iter()
        .map(|span| {
            let gap = match previous {
                Some(prev) if prev.track == span.track => span.start_frame - prev.end_frame - 1,
                _ => span.start_frame,
            };
            previous = Some(span);
            gap as f64 / n
        })
        .collect()
}

/// All spans of one unit across the sample, in track order.
fn unit_spans(tracks: &[TrackAnalysis], unit: UnitKind) -> Vec<GestureSpan> {
    tracks
        .iter()
        .flat_map(|t| t.units.iter().filter(move |u| u.unit == unit))
        .flat_map(|u| u.spans.iter().copied())
        .collect()
}

fn unit_kinds(tracks: &[TrackAnalysis]) -> Vec<UnitKind> {
    let mut kinds: Vec<UnitKind> = tracks.iter().flat_map(|t| t.units.iter().map(|u| u.unit)).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

fn span_movement<'a>(tracks: &'a [TrackAnalysis], span: &GestureSpan) -> &'a [f64] {
    let unit = tracks[span.track]
        .units
        .iter()
        .find(|u| u.unit == span.unit)
        .expect("span refers to an analysed unit");
    &unit.movement.values[span.start_frame..=span.end_frame]
}

/// `[O-FM, O-GM, O-GS, O-GD, O-GC]`.
pub fn overall_features(tracks: &[TrackAnalysis]) -> [f64; 5] {
    let n = total_frames(tracks);
    if n == 0 {
        return [ABSENT; 5];
    }
    let nf = n as f64;

    let mut body_total = 0.0;
    let mut body_in_gesture = 0.0;
    for track in tracks {
        let mut active = vec![false; track.frames];
        for span in track.units.iter().flat_map(|u| &u.spans) {
            active[span.start_frame..=span.end_frame].fill(true);
        }
        for (v, on) in track.body_movement.values.iter().zip(&active) {
            body_total += v;
            if *on {
                body_in_gesture += v;
            }
        }
    }
    let frame_movement = body_total / nf;

    let mut surprises = Vec::new();
    let mut deviations = Vec::new();
    for unit in unit_kinds(tracks) {
        let spans = unit_spans(tracks, unit);
        surprises.extend(gesture_surprise(&spans, n));
        deviations.extend(spans.iter().map(|s| population_std(span_movement(tracks, s))));
    }
    let count = surprises.len();
    if count == 0 {
        return [frame_movement, ABSENT, ABSENT, ABSENT, 0.0];
    }
    let movement_share = if body_total > 0.0 { body_in_gesture / body_total } else { 0.0 };
    [
        frame_movement,
        movement_share,
        mean(&surprises).unwrap(),
        mean(&deviations).unwrap(),
        count as f64 / nf,
    ]
}

/// `[GL, GC, GA, GT, GS]` for one localisation, pooling its units' gestures.
pub fn localised_features(localisation: LocalisationKind, tracks: &[TrackAnalysis]) -> [f64; 5] {
    let n = total_frames(tracks);
    let nf = n as f64;
    let mut lengths = Vec::new();
    let mut averages = Vec::new();
    let mut total_movement = 0.0;
    let mut surprises = Vec::new();
    for &unit in localisation.unit_kinds() {
        let spans = unit_spans(tracks, unit);
        surprises.extend(gesture_surprise(&spans, n));
        for span in &spans {
            let movement = span_movement(tracks, span);
            let sum: f64 = movement.iter().sum();
            lengths.push(span.frame_count() as f64);
            averages.push(sum / movement.len() as f64);
            total_movement += sum;
        }
    }
    if lengths.is_empty() {
        return [ABSENT; 5];
    }
    [
        mean(&lengths).unwrap() / nf,
        lengths.len() as f64 / nf,
        mean(&averages).unwrap(),
        total_movement / nf,
        mean(&surprises).unwrap(),
    ]
}

/// Feature vector of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sample_id: String,
    pub participant_id: String,
    pub localisations: Vec<LocalisationKind>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn names(&self) -> Vec<String> {
        feature_names(&self.localisations)
    }
}

/// Concatenate the overall block and one block per configured localisation.
/// `localised` must list exactly the configured localisations in order.
pub fn assemble_feature_vector(
    sample_id: &str,
    participant_id: &str,
    overall: [f64; 5],
    localised: &[(LocalisationKind, [f64; 5])],
    config: &[LocalisationKind],
) -> Result<FeatureVector> {
    let kinds: Vec<LocalisationKind> = localised.iter().map(|(k, _)| *k).collect();
    if kinds != config {
        return Err(Error::Validation(format!(
            "sample {sample_id}: localised blocks {kinds:?} do not match configuration {config:?}"
        )));
    }
    let mut values = overall.to_vec();
    for (_, block) in localised {
        values.extend_from_slice(block);
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "sample {sample_id}: feature {bad} is not finite"
        )));
    }
    Ok(FeatureVector {
        sample_id: sample_id.to_string(),
        participant_id: participant_id.to_string(),
        localisations: config.to_vec(),
        values,
    })
}

/// Full feature extraction for one analysed sample.
pub fn sample_features(
    sample_id: &str,
    participant_id: &str,
    tracks: &[TrackAnalysis],
    localisations: &[LocalisationKind],
) -> Result<FeatureVector> {
    let localised: Vec<_> = localisations
        .iter()
        .map(|&l| (l, localised_features(l, tracks)))
        .collect();
    assemble_feature_vector(sample_id, participant_id, overall_features(tracks), &localised, localisations)
}

/// Bitset over feature positions; bit `i` selects feature `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureMask {
    pub bits: u64,
    pub len: usize,
}

impl FeatureMask {
    pub const MAX_LEN: usize = 63;

    pub fn new(bits: u64, len: usize) -> Self {
        assert!(len <= Self::MAX_LEN, "mask length {len} exceeds {}", Self::MAX_LEN);
        debug_assert!(len == 64 || bits >> len == 0, "bits beyond mask length");
        FeatureMask { bits, len }
    }

    pub fn all(len: usize) -> Self {
        FeatureMask::new((1u64 << len) - 1, len)
    }

    pub fn from_indices(indices: &[usize], len: usize) -> Self {
        FeatureMask::new(indices.iter().fold(0, |acc, &i| acc | 1 << i), len)
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.len).filter(|&i| self.contains(i)).collect()
    }

    /// `"1010..."` with feature 0 first.
    pub fn bit_string(&self) -> String {
        (0..self.len).map(|i| if self.contains(i) { '1' } else { '0' }).collect()
    }

    pub fn parse_bit_string(s: &str) -> Result<Self> {
        if s.len() > Self::MAX_LEN || s.chars().any(|c| c != '0' && c != '1') {
            return Err(Error::Config(format!("invalid mask bit string `{s}`")));
        }
        let bits = s.chars().enumerate().fold(0u64, |acc, (i, c)| if c == '1' { acc | 1 << i } else { acc });
        Ok(FeatureMask::new(bits, s.len()))
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bit_string())
    }
}

/// Samples by features, with identifying columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub participant_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let names = vectors.first().map(FeatureVector::names).unwrap_or_default();
        for v in vectors {
            if v.names() != names {
                return Err(Error::Validation(format!(
                    "sample {} was built with localisations {:?}, others with a different set",
                    v.sample_id, v.localisations
                )));
            }
        }
        Ok(FeatureMatrix {
            names,
            sample_ids: vectors.iter().map(|v| v.sample_id.clone()).collect(),
            participant_ids: vectors.iter().map(|v| v.participant_id.clone()).collect(),
            rows: vectors.iter().map(|v| v.values.clone()).collect(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    /// Write as CSV preceded by a `# config_hash=... seed=...` line.
    pub fn write_csv(&self, path: &Path, config_hash: &str, seed: u64) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "# config_hash={config_hash} seed={seed}").map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header = vec!["sample_id".to_string(), "participant_id".to_string()];
        header.extend(self.names.iter().cloned());
        let wrap = |e: csv::Error| Error::parse(path, e.to_string());
        writer.write_record(&header).map_err(wrap)?;
        for ((id, participant), row) in self.sample_ids.iter().zip(&self.participant_ids).zip(&self.rows) {
            let mut record = vec![id.clone(), participant.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            writer.write_record(&record).map_err(wrap)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a matrix written by [`FeatureMatrix::write_csv`]. Returns the
    /// embedded config hash when present.
    pub fn read_csv(path: &Path) -> Result<(Self, Option<String>)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let (hash, rest) = match first.strip_prefix('#') {
            Some(meta) => (
                meta.split_whitespace()
                    .find_map(|kv| kv.strip_prefix("config_hash="))
                    .map(str::to_string),
                String::new(),
            ),
            None => (None, first),
        };
        let mut body = rest;
        std::io::Read::read_to_string(&mut reader, &mut body).map_err(|e| Error::io(path, e))?;
        let mut csv_reader = csv::Reader::from_reader(body.as_bytes());
        let headers = csv_reader.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
        if headers.get(0) != Some("sample_id") || headers.get(1) != Some("participant_id") {
            return Err(Error::schema(path, "feature matrix must start with sample_id,participant_id"));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut matrix = FeatureMatrix {
            names,
            sample_ids: Vec::new(),
            participant_ids: Vec::new(),
            rows: Vec::new(),
        };
        for (i, record) in csv_reader.records().enumerate() {
            let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
            matrix.sample_ids.push(record[0].to_string());
            matrix.participant_ids.push(record[1].to_string());
            let row = record
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(path, format!("row {}: `{v}` is not a number", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            matrix.rows.push(row);
        }
        Ok((matrix, hash))
    }
}
