//! Per-unit movement series, window averaging and the threshold gesture
//! detector.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::pose::{PoseTrack, UnitKind};

pub const DEFAULT_MOVEMENT_THRESHOLD: f64 = 0.5;
/// Percentile of pooled window averages used by the automatic threshold.
pub const AUTO_THRESHOLD_PERCENTILE: f64 = 75.0;

/// Per-frame mean movement of a set of points. `values[0]` is 0 since the
/// first frame of a track has no predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct MovementSeries {
    pub values: Vec<f64>,
    /// True when none of the points were usable; `values` are then all 0.
    pub empty: bool,
}

impl MovementSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean L2 displacement from the previous frame over the usable points.
pub fn movement_series(track: &PoseTrack, points: &[usize]) -> MovementSeries {
    let usable: Vec<usize> = points.iter().copied().filter(|&p| track.usable[p]).collect();
    let mut values = vec![0.0; track.len()];
    if usable.is_empty() {
        return MovementSeries { values, empty: true };
    }
    let denom = usable.len() as f64;
    for (t, pair) in track.frames.windows(2).enumerate() {
        let total: f64 = usable
            .iter()
            .map(|&p| pair[1].coords[p].distance(&pair[0].coords[p]))
            .sum();
        values[t + 1] = total / denom;
    }
    MovementSeries { values, empty: false }
}

pub fn unit_movement_series(track: &PoseTrack, unit: UnitKind) -> MovementSeries {
    movement_series(track, &unit.point_indices())
}

/// Movement averaged over every point of the layout.
pub fn body_movement_series(track: &PoseTrack) -> MovementSeries {
    let all: Vec<usize> = (0..track.point_count()).collect();
    movement_series(track, &all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries {
    pub values: Vec<f64>,
    pub window_length: usize,
    /// Length of the underlying per-frame series.
    pub frames: usize,
}

/// Mean of consecutive non-overlapping blocks of `l` frames; the last block
/// may be shorter and averages its own length.
pub fn window_average(series: &[f64], l: usize) -> WindowSeries {
    assert!(l >= 1, "window length must be positive");
    WindowSeries {
        values: series
            .chunks(l)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect(),
        window_length: l,
        frames: series.len(),
    }
}

/// Threshold on window movement: fixed, or chosen per sample from the
/// distribution of its window averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MovementThreshold {
    Fixed(f64),
    Auto,
}

impl Default for MovementThreshold {
    fn default() -> Self {
        MovementThreshold::Fixed(DEFAULT_MOVEMENT_THRESHOLD)
    }
}

impl fmt::Display for MovementThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MovementThreshold::Fixed(m) => write!(f, "{m}"),
            MovementThreshold::Auto => f.write_str("auto"),
        }
    }
}

impl std::str::FromStr for MovementThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(MovementThreshold::Auto);
        }
        s.parse::<f64>()
            .ok()
            .filter(|m| m.is_finite() && *m > 0.0)
            .map(MovementThreshold::Fixed)
            .ok_or_else(|| Error::Config(format!("movement threshold must be positive or `auto`, got `{s}`")))
    }
}

impl Serialize for MovementThreshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MovementThreshold::Fixed(m) => serializer.serialize_f64(*m),
            MovementThreshold::Auto => serializer.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for MovementThreshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Number(m) if m.is_finite() && m > 0.0 => Ok(MovementThreshold::Fixed(m)),
            Repr::Number(m) => Err(serde::de::Error::custom(format!(
                "movement threshold must be positive, got {m}"
            ))),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Frames per averaging window.
    pub window_length: usize,
    pub movement_threshold: MovementThreshold,
    /// Consecutive below-threshold windows that end a gesture.
    pub end_patience: usize,
    /// Minimum `end_window - start_window` for a gesture to be kept.
    pub min_gesture_windows: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window_length: 10,
            movement_threshold: MovementThreshold::default(),
            end_patience: 3,
            min_gesture_windows: 3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.end_patience == 0 || self.min_gesture_windows == 0 {
            return Err(Error::Config(
                "detector window_length, end_patience and min_gesture_windows must be positive".into(),
            ));
        }
        if let MovementThreshold::Fixed(m) = self.movement_threshold {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!("movement threshold must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

/// Gesture in window indices, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    pub end: usize,
}

/// Scan window movement for sustained activity.
///
/// A gesture opens at the first window with movement `>= threshold` and
/// closes once `end_patience` consecutive windows fall below it; its end is
/// the last window at or above the threshold. A gesture still open at the
/// end of the series closes at the final window. Gestures with
/// `end - start < min_windows` are dropped.
pub fn detect_window_spans(
    windows: &[f64],
    threshold: f64,
    end_patience: usize,
    min_windows: usize,
) -> Vec<WindowSpan> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut below = 0;
    for (i, &w) in windows.iter().enumerate() {
        if w >= threshold {
            start.get_or_insert(i);
            below = 0;
        } else if let Some(s) = start {
            below += 1;
            if below == end_patience {
                let end = i - end_patience;
                if end - s >= min_windows {
                    spans.push(WindowSpan { start: s, end });
                }
                start = None;
                below = 0;
            }
        }
    }
    if let Some(s) = start {
        let end = windows.len() - 1;
        if end - s >= min_windows {
            spans.push(WindowSpan { start: s, end });
        }
    }
    spans
}

/// Detected gesture of one unit, in frame indices local to its track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GestureSpan {
    pub unit: UnitKind,
    pub track: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl GestureSpan {
    pub fn frame_count(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }
}

/// Run the detector on a window series and convert the result to frames.
pub fn detect_gestures(
    windows: &WindowSeries,
    threshold: f64,
    cfg: &DetectorConfig,
    unit: UnitKind,
    track: usize,
) -> Vec<GestureSpan> {
    let l = windows.window_length;
    detect_window_spans(&windows.values, threshold, cfg.end_patience, cfg.min_gesture_windows)
        .into_iter()
        .map(|s| GestureSpan {
            unit,
            track,
            start_frame: s.start * l,
            end_frame: ((s.end + 1) * l - 1).min(windows.frames - 1),
        })
        .collect()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64))
}

/// Automatic threshold from pooled window averages, never zero.
pub fn auto_threshold(window_values: &[f64]) -> f64 {
    percentile(window_values, AUTO_THRESHOLD_PERCENTILE)
        .unwrap_or(DEFAULT_MOVEMENT_THRESHOLD)
        .max(f64::MIN_POSITIVE)
}

/// One line of the gesture dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureRecord {
    pub sample_id: String,
    pub track: usize,
    pub unit: UnitKind,
    pub start_frame: usize,
    pub end_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl GestureRecord {
    pub fn new(sample_id: &str, span: &GestureSpan, config_hash: Option<&str>) -> Self {
        GestureRecord {
            sample_id: sample_id.to_string(),
            track: span.track,
            unit: span.unit,
            start_frame: span.start_frame,
            end_frame: span.end_frame,
            config_hash: config_hash.map(str::to_string),
        }
    }

    pub fn span(&self) -> GestureSpan {
        GestureSpan {
            unit: self.unit,
            track: self.track,
            start_frame: self.start_frame,
            end_frame: self.end_frame,
        }
    }
}
