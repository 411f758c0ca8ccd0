//! Per-sample orchestration of the stages and their checkpoint formats.
//!
//! `prepare` (load, split, filter, recover, smooth) -> `detect` (movement,
//! windows, gestures) -> `features`. Each stage can be written to disk and
//! resumed; resuming produces the same bytes as running end to end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{sample_features, FeatureMatrix, FeatureVector, TrackAnalysis, UnitAnalysis};
use crate::gestures::{
    auto_threshold, body_movement_series, detect_gestures, unit_movement_series, window_average,
    DetectorConfig, GestureRecord, GestureSpan, MovementThreshold,
};
use crate::ingest::{filter_short_samples, load_samples, LoadedSample, SampleRecord, DEFAULT_MIN_DURATION_S};
use crate::pose::{LocalisationKind, Point, PoseFrame, PoseTrack, UnitKind};
use crate::prepare::{clean_track, SmoothingConfig};

/// Everything that shapes the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub smoothing: SmoothingConfig,
    pub detector: DetectorConfig,
    pub localisations: Vec<LocalisationKind>,
    pub min_duration_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            smoothing: SmoothingConfig::default(),
            detector: DetectorConfig::default(),
            localisations: LocalisationKind::DEFAULT_SET.to_vec(),
            min_duration_s: DEFAULT_MIN_DURATION_S,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        self.detector.validate()?;
        let mut sorted = self.localisations.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.localisations {
            return Err(Error::Config(
                "localisations must be unique and in hands, head, legs, feet order".into(),
            ));
        }
        if !(self.min_duration_s >= 0.0) {
            return Err(Error::Config("min_duration_s must be non-negative".into()));
        }
        Ok(())
    }

    /// Units scanned for gestures, in localisation order.
    pub fn units(&self) -> Vec<UnitKind> {
        self.localisations
            .iter()
            .flat_map(|l| l.unit_kinds().iter().copied())
            .collect()
    }

    /// Short digest identifying artifacts built with this configuration.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    Sha256::digest(&json)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A sample with cleaned tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub record: SampleRecord,
    pub source_frames: usize,
    pub tracks: Vec<PoseTrack>,
}

impl PreparedSample {
    pub fn total_frames(&self) -> usize {
        self.tracks.iter().map(PoseTrack::len).sum()
    }
}

pub fn prepare_sample(sample: &LoadedSample, cfg: &PipelineConfig) -> Result<PreparedSample> {
    Ok(PreparedSample {
        record: sample.record.clone(),
        source_frames: sample.source_frames,
        tracks: sample
            .tracks
            .iter()
            .map(|t| clean_track(t, cfg.smoothing))
            .collect::<Result<_>>()?,
    })
}

/// Load, filter and clean every sample of a manifest, in manifest order.
pub fn prepare_records(records: &[SampleRecord], cfg: &PipelineConfig) -> Result<Vec<PreparedSample>> {
    cfg.validate()?;
    let loaded = filter_short_samples(load_samples(records)?, cfg.min_duration_s);
    loaded.par_iter().map(|s| prepare_sample(s, cfg)).collect()
}

/// Movement series for the configured units and the whole body, without
/// gestures yet.
fn movement_analysis(tracks: &[PoseTrack], units: &[UnitKind]) -> Vec<TrackAnalysis> {
    tracks
        .iter()
        .map(|track| TrackAnalysis {
            frames: track.len(),
            body_movement: body_movement_series(track),
            units: units
                .iter()
                .map(|&unit| UnitAnalysis {
                    unit,
                    movement: unit_movement_series(track, unit),
                    spans: Vec::new(),
                })
                .collect(),
        })
        .collect()
}

/// Movement threshold used for a sample: fixed, or the percentile of the
/// pooled window averages of all units on all tracks.
pub fn sample_threshold(analysis: &[TrackAnalysis], cfg: &DetectorConfig) -> f64 {
    match cfg.movement_threshold {
        MovementThreshold::Fixed(m) => m,
        MovementThreshold::Auto => {
            let pooled: Vec<f64> = analysis
                .iter()
                .flat_map(|t| &t.units)
                .flat_map(|u| window_average(&u.movement.values, cfg.window_length).values)
                .collect();
            auto_threshold(&pooled)
        }
    }
}

/// Detect gestures on cleaned tracks.
pub fn analyse_tracks(tracks: &[PoseTrack], cfg: &PipelineConfig) -> Vec<TrackAnalysis> {
    let mut analysis = movement_analysis(tracks, &cfg.units());
    let threshold = sample_threshold(&analysis, &cfg.detector);
    for (track_idx, track) in analysis.iter_mut().enumerate() {
        for unit in &mut track.units {
            let windows = window_average(&unit.movement.values, cfg.detector.window_length);
            unit.spans = detect_gestures(&windows, threshold, &cfg.detector, unit.unit, track_idx);
        }
    }
    analysis
}

/// Rebuild the analysis of cleaned tracks from previously detected spans.
pub fn analyse_with_spans(
    tracks: &[PoseTrack],
    cfg: &PipelineConfig,
    spans: &[GestureSpan],
) -> Result<Vec<TrackAnalysis>> {
    let mut analysis = movement_analysis(tracks, &cfg.units());
    for span in spans {
        let track = analysis.get_mut(span.track).ok_or_else(|| {
            Error::Validation(format!("gesture refers to missing track {}", span.track))
        })?;
        if span.start_frame > span.end_frame || span.end_frame >= track.frames {
            return Err(Error::Validation(format!(
                "gesture {}..{} outside track {} of {} frames",
                span.start_frame, span.end_frame, span.track, track.frames
            )));
        }
        let unit = track.units.iter_mut().find(|u| u.unit == span.unit).ok_or_else(|| {
            Error::Validation(format!("gesture for unit {} which is not configured", span.unit))
        })?;
        unit.spans.push(*span);
    }
    for unit in analysis.iter_mut().flat_map(|t| &mut t.units) {
        unit.spans.sort();
    }
    Ok(analysis)
}

pub fn sample_spans(analysis: &[TrackAnalysis]) -> Vec<GestureSpan> {
    analysis
        .iter()
        .flat_map(|t| &t.units)
        .flat_map(|u| u.spans.iter().copied())
        .collect()
}

pub fn prepared_features(sample: &PreparedSample, cfg: &PipelineConfig) -> Result<FeatureVector> {
    let analysis = analyse_tracks(&sample.tracks, cfg);
    sample_features(
        &sample.record.sample_id,
        &sample.record.participant_id,
        &analysis,
        &cfg.localisations,
    )
}

/// Single-shot feature extraction for a manifest.
pub fn features_from_records(records: &[SampleRecord], cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let prepared = prepare_records(records, cfg)?;
    let vectors = prepared
        .par_iter()
        .map(|s| prepared_features(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_vectors(&vectors)
}

/// Feature extraction from checkpointed prepared samples and gestures.
pub fn features_from_checkpoints(
    prepared: &[PreparedSample],
    gestures: &[GestureRecord],
    cfg: &PipelineConfig,
) -> Result<FeatureMatrix> {
    let mut by_sample: BTreeMap<&str, Vec<GestureSpan>> = BTreeMap::new();
    for g in gestures {
        by_sample.entry(g.sample_id.as_str()).or_default().push(g.span());
    }
    let vectors = prepared
        .par_iter()
        .map(|s| {
            let spans = by_sample.get(s.record.sample_id.as_str()).map_or(&[][..], Vec::as_slice);
            let analysis = analyse_with_spans(&s.tracks, cfg, spans)?;
            sample_features(&s.record.sample_id, &s.record.participant_id, &analysis, &cfg.localisations)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_vectors(&vectors)
}

#[derive(Serialize, Deserialize)]
struct PreparedTrackLine {
    origin_range: (usize, usize),
    usable: Vec<bool>,
    frames: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct PreparedLine {
    config_hash: String,
    record: SampleRecord,
    source_frames: usize,
    tracks: Vec<PreparedTrackLine>,
}

/// JSON lines, one prepared sample per line.
pub fn write_prepared(path: &Path, samples: &[PreparedSample], config_hash: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let line = PreparedLine {
            config_hash: config_hash.to_string(),
            record: s.record.clone(),
            source_frames: s.source_frames,
            tracks: s
                .tracks
                .iter()
                .map(|t| PreparedTrackLine {
                    origin_range: t.origin_range,
                    usable: t.usable.clone(),
                    frames: t
                        .frames
                        .iter()
                        .map(|f| f.coords.iter().map(|p| [p.x, p.y]).collect())
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::parse(path, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Returns the samples and the config hash they were built with.
pub fn read_prepared(path: &Path) -> Result<(Vec<PreparedSample>, Option<String>)> {
    let mut hash = None;
    let lines: Vec<PreparedLine> = read_json_lines(path)?;
    let mut samples = Vec::with_capacity(lines.len());
    for line in lines {
        check_hash(path, &mut hash, &line.config_hash)?;
        let fps = line.record.fps;
        let tracks = line
            .tracks
            .into_iter()
            .map(|t| {
                let frames = t
                    .frames
                    .into_iter()
                    .map(|f| PoseFrame::new(f.into_iter().map(|[x, y]| Point::new(x, y)).collect(), t.usable.clone()))
                    .collect();
                PoseTrack {
                    frames,
                    fps,
                    origin_range: t.origin_range,
                    usable: t.usable,
                }
            })
            .collect();
        samples.push(PreparedSample {
            record: line.record,
            source_frames: line.source_frames,
            tracks,
        });
    }
    Ok((samples, hash))
}

pub fn write_gestures(path: &Path, records: &[GestureRecord]) -> Result<()> {
    write_json_lines(path, records)
}

pub fn read_gestures(path: &Path) -> Result<(Vec<GestureRecord>, Option<String>)> {
    let records: Vec<GestureRecord> = read_json_lines(path)?;
    let mut hash = None;
    for r in &records {
        if let Some(h) = &r.config_hash {
            check_hash(path, &mut hash, h)?;
        }
    }
    Ok((records, hash))
}

fn check_hash(path: &Path, seen: &mut Option<String>, hash: &str) -> Result<()> {
    match seen {
        Some(h) if h != hash => Err(Error::Validation(format!(
            "{}: mixed config hashes {h} and {hash}",
            path.display()
        ))),
        Some(_) => Ok(()),
        None => {
            *seen = Some(hash.to_string());
            Ok(())
        }
    }
}

pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::parse(path, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(items)
}
