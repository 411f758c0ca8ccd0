//! Manifest and pose-file loading, track splitting and the minimum-duration
//! sample filter.
//!
//! Manifest: CSV with header `sample_id, participant_id, fps, pose_path`
//! followed by any number of numeric label columns. `fps` may be omitted or
//! blank (30 is assumed). Empty label cells mean "no score".
//!
//! Pose file: `{"layout": "body25+hands", "fps": 30, "frames": [[[x, y, c], ...67], ...]}`
//! with the confidence `c` optional.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Point, PoseFrame, PoseTrack, TOTAL_POINTS};

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_MIN_DURATION_S: f64 = 60.0;
/// Points reported with a lower confidence than this count as undetected.
pub const MIN_CONFIDENCE: f64 = 0.05;
pub const LAYOUT_NAME: &str = "body25+hands";

const REQUIRED_COLUMNS: [&str; 3] = ["sample_id", "participant_id", "pose_path"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub participant_id: String,
    pub fps: f64,
    /// Resolved against the manifest's directory when relative.
    pub pose_path: PathBuf,
    pub labels: BTreeMap<String, f64>,
}

/// Binarisation range and threshold for one label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub binarization_threshold: f64,
}

impl LabelSchema {
    pub fn new(name: &str, min: f64, max: f64, threshold: f64) -> Result<Self> {
        if !(min <= threshold && threshold < max) {
            return Err(Error::Config(format!(
                "label `{name}`: threshold {threshold} outside [{min}, {max})"
            )));
        }
        Ok(LabelSchema {
            name: name.to_string(),
            min,
            max,
            binarization_threshold: threshold,
        })
    }

    /// Thresholds chosen for balanced classes on the interview data set.
    pub fn builtin(name: &str) -> Option<LabelSchema> {
        let (min, max, threshold) = match name {
            "phq8" => (0.0, 24.0, 7.0),
            "gad7" => (0.0, 21.0, 7.0),
            "pss" => (0.0, 40.0, 17.0),
            "sss8" => (0.0, 32.0, 6.0),
            "neuroticism" => (8.0, 40.0, 17.0),
            "extraversion" => (8.0, 40.0, 16.0),
            "agreeableness" => (9.0, 45.0, 25.0),
            "conscientiousness" => (9.0, 45.0, 20.0),
            "openness" => (10.0, 50.0, 27.0),
            _ => return None,
        };
        Some(LabelSchema {
            name: name.to_string(),
            min,
            max,
            binarization_threshold: threshold,
        })
    }
}

/// Header names of the label columns of a manifest, in file order.
pub fn manifest_label_columns(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    Ok(headers
        .iter()
        .filter(|h| !REQUIRED_COLUMNS.contains(h) && *h != "fps")
        .map(str::to_string)
        .collect())
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::schema(path, "missing header row"));
    }
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 3];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name)
            .ok_or_else(|| Error::schema(path, format!("missing required column `{name}`")))?;
    }
    let [id_col, participant_col, pose_col] = required;
    let fps_col = column("fps");
    let label_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !REQUIRED_COLUMNS.contains(h) && *h != "fps")
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        // 1-based data row, header excluded
        let row_no = row_idx + 1;
        let cell = |i: usize| row.get(i).unwrap_or("");

        let sample_id = cell(id_col).to_string();
        if sample_id.is_empty() {
            return Err(Error::parse(path, format!("row {row_no}: empty sample_id")));
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::Validation(format!(
                "{}: duplicate sample_id `{sample_id}` at row {row_no}",
                path.display()
            )));
        }
        let participant_id = cell(participant_col).to_string();
        if participant_id.is_empty() {
            return Err(Error::parse(path, format!("row {row_no}: empty participant_id")));
        }
        let fps = match fps_col.map(cell) {
            None | Some("") => DEFAULT_FPS,
            Some(text) => parse_number(path, row_no, "fps", text)?,
        };
        if !(fps > 0.0) {
            return Err(Error::Validation(format!(
                "{}: row {row_no}: fps must be positive, got {fps}",
                path.display()
            )));
        }
        let pose_path = PathBuf::from(cell(pose_col));
        let pose_path = if pose_path.is_relative() {
            base.join(pose_path)
        } else {
            pose_path
        };
        let mut labels = BTreeMap::new();
        for (i, name) in &label_cols {
            let text = cell(*i);
            if !text.is_empty() {
                labels.insert(name.clone(), parse_number(path, row_no, name, text)?);
            }
        }
        records.push(SampleRecord {
            sample_id,
            participant_id,
            fps,
            pose_path,
            labels,
        });
    }
    Ok(records)
}

fn parse_number(path: &Path, row: usize, column: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::parse(
                path,
                format!("row {row}, column `{column}`: `{text}` is not a number"),
            )
        })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// Write a manifest. `pose_path`s are written relative to the manifest's
/// directory when possible.
pub fn write_manifest(path: &Path, records: &[SampleRecord], label_columns: &[String]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["sample_id", "participant_id", "fps", "pose_path"];
    header.extend(label_columns.iter().map(String::as_str));
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in records {
        let pose = r.pose_path.strip_prefix(base).unwrap_or(&r.pose_path);
        let mut row = vec![
            r.sample_id.clone(),
            r.participant_id.clone(),
            r.fps.to_string(),
            pose.to_string_lossy().into_owned(),
        ];
        row.extend(
            label_columns
                .iter()
                .map(|c| r.labels.get(c).map(f64::to_string).unwrap_or_default()),
        );
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    layout: String,
    fps: f64,
    frames: Vec<Vec<Vec<f64>>>,
}

/// Decode a pose document. Returns the file's fps and its frames.
pub fn parse_pose_json(path: &Path, text: &str) -> Result<(f64, Vec<PoseFrame>)> {
    let doc: PoseFile =
        serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    if doc.layout != LAYOUT_NAME {
        return Err(Error::parse(
            path,
            format!("unsupported layout `{}` (expected `{LAYOUT_NAME}`)", doc.layout),
        ));
    }
    let frames = doc
        .frames
        .iter()
        .enumerate()
        .map(|(i, raw)| decode_frame(path, i, raw))
        .collect::<Result<Vec<_>>>()?;
    Ok((doc.fps, frames))
}

fn decode_frame(path: &Path, index: usize, raw: &[Vec<f64>]) -> Result<PoseFrame> {
    if raw.len() != TOTAL_POINTS {
        return Err(Error::parse(
            path,
            format!("frame {index}: expected {TOTAL_POINTS} points, found {}", raw.len()),
        ));
    }
    let mut coords = Vec::with_capacity(TOTAL_POINTS);
    let mut detected = Vec::with_capacity(TOTAL_POINTS);
    for (p, values) in raw.iter().enumerate() {
        let (x, y, c) = match values.as_slice() {
            [x, y] => (*x, *y, 1.0),
            [x, y, c] => (*x, *y, *c),
            _ => {
                return Err(Error::parse(
                    path,
                    format!("frame {index}, point {p}: expected [x, y] or [x, y, c]"),
                ))
            }
        };
        coords.push(Point::new(x, y));
        detected.push(is_detected(x, y, c));
    }
    Ok(PoseFrame::new(coords, detected))
}

/// Pose estimators report a missed point as `(0, 0)` or with low confidence.
pub fn is_detected(x: f64, y: f64, confidence: f64) -> bool {
    !(x == 0.0 && y == 0.0) && confidence >= MIN_CONFIDENCE
}

pub fn read_pose_file(path: &Path) -> Result<(f64, Vec<PoseFrame>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_json(path, &text)
}

pub fn load_pose_sequence(record: &SampleRecord) -> Result<Vec<PoseFrame>> {
    let (fps, frames) = read_pose_file(&record.pose_path)?;
    if (fps - record.fps).abs() > 1e-9 {
        log::warn!(
            "{}: pose file fps {fps} differs from manifest fps {}; using the manifest",
            record.sample_id,
            record.fps
        );
    }
    Ok(frames)
}

/// Serialise raw frames as a pose document. Each entry of `frames` holds
/// `[x, y, confidence]` per point.
pub fn write_pose_file(path: &Path, fps: f64, frames: &[Vec<[f64; 3]>]) -> Result<()> {
    let doc = PoseFile {
        layout: LAYOUT_NAME.to_string(),
        fps,
        frames: frames
            .iter()
            .map(|f| f.iter().map(|p| p.to_vec()).collect())
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &doc).map_err(|e| Error::parse(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Split a sample into tracks at full-failure frames. A sample with no
/// detected frame yields no tracks.
pub fn split_on_full_failures(frames: &[PoseFrame], fps: f64) -> Vec<PoseTrack> {
    let mut tracks = Vec::new();
    let mut start: Option<usize> = None;
    for (i, frame) in frames.iter().enumerate() {
        match (frame.is_full_failure(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                tracks.push(PoseTrack::new(frames[s..i].to_vec(), fps, (s, i - 1)));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tracks.push(PoseTrack::new(frames[s..].to_vec(), fps, (s, frames.len() - 1)));
    }
    tracks
}

/// A sample after loading and splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub record: SampleRecord,
    /// Frame count of the raw sample, separators included.
    pub source_frames: usize,
    pub tracks: Vec<PoseTrack>,
}

impl LoadedSample {
    pub fn duration_s(&self) -> f64 {
        self.source_frames as f64 / self.record.fps
    }
}

pub fn load_sample(record: &SampleRecord) -> Result<LoadedSample> {
    let frames = load_pose_sequence(record)?;
    Ok(LoadedSample {
        source_frames: frames.len(),
        tracks: split_on_full_failures(&frames, record.fps),
        record: record.clone(),
    })
}

/// Keep samples whose raw duration is at least `min_duration_s`.
pub fn filter_short_samples(samples: Vec<LoadedSample>, min_duration_s: f64) -> Vec<LoadedSample> {
    samples
        .into_iter()
        .filter(|s| {
            let keep = s.duration_s() >= min_duration_s;
            if !keep {
                log::info!(
                    "excluding {}: {:.2} s is shorter than {min_duration_s} s",
                    s.record.sample_id,
                    s.duration_s()
                );
            }
            keep
        })
        .collect()
}

/// Read a whole manifest's pose files in parallel, preserving manifest order.
pub fn load_samples(records: &[SampleRecord]) -> Result<Vec<LoadedSample>> {
    use rayon::prelude::*;
    records.par_iter().map(load_sample).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn frame(value: f64) -> PoseFrame {
        PoseFrame::new(vec![Point::new(value, value); TOTAL_POINTS], vec![true; TOTAL_POINTS])
    }

    fn failure() -> PoseFrame {
        PoseFrame::new(vec![Point::default(); TOTAL_POINTS], vec![false; TOTAL_POINTS])
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn manifest_with_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "m.csv",
            "sample_id,participant_id,fps,pose_path,phq8\n\
             a,p1,30,a.json,8\nb,p1,25,b.json,3\nc,p2,,/abs/c.json,12\n",
        );
        let records = load_manifest(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(|r| r.labels.contains_key("phq8")));
        assert_eq!(records[0].labels["phq8"], 8.0);
        assert_eq!(records[1].fps, 25.0);
        assert_eq!(records[2].fps, DEFAULT_FPS);
        assert_eq!(records[0].pose_path, dir.path().join("a.json"));
        assert_eq!(records[2].pose_path, PathBuf::from("/abs/c.json"));
        assert_eq!(manifest_label_columns(&path).unwrap(), vec!["phq8"]);
    }

    #[test]
    fn empty_manifest_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "m.csv", "");
        assert!(matches!(load_manifest(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "m.csv", "sample_id,fps,pose_path\na,30,a.json\n");
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("participant_id"), "{err}");
    }

    #[test]
    fn duplicate_sample_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "m.csv",
            "sample_id,participant_id,pose_path\na,p,a.json\na,q,b.json\n",
        );
        assert!(matches!(load_manifest(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn non_numeric_label_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "m.csv",
            "sample_id,participant_id,pose_path,gad7\na,p,a.json,4\nb,p,b.json,high\n",
        );
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("gad7"), "{err}");
    }

    #[test]
    fn blank_label_cell_is_missing_score() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "m.csv",
            "sample_id,participant_id,pose_path,phq8\na,p,a.json,\n",
        );
        assert!(load_manifest(&path).unwrap()[0].labels.is_empty());
    }

    fn pose_doc(frames: &[Vec<[f64; 3]>]) -> String {
        let doc = PoseFile {
            layout: LAYOUT_NAME.into(),
            fps: 30.0,
            frames: frames.iter().map(|f| f.iter().map(|p| p.to_vec()).collect()).collect(),
        };
        serde_json::to_string(&doc).unwrap()
    }

    #[test]
    fn all_points_present() {
        let frames = vec![vec![[5.0, 6.0, 0.9]; TOTAL_POINTS]; 100];
        let (_, decoded) = parse_pose_json(Path::new("x"), &pose_doc(&frames)).unwrap();
        assert_eq!(decoded.len(), 100);
        assert!(decoded.iter().all(|f| f.detected.iter().all(|&d| d)));
    }

    #[test]
    fn zero_left_hand_block_is_undetected() {
        let mut frame = vec![[5.0, 6.0, 1.0]; TOTAL_POINTS];
        for p in &mut frame[25..46] {
            *p = [0.0, 0.0, 0.0];
        }
        let (_, decoded) = parse_pose_json(Path::new("x"), &pose_doc(&[frame])).unwrap();
        let detected = &decoded[0].detected;
        assert!(detected[25..46].iter().all(|&d| !d));
        assert!(detected[..25].iter().chain(&detected[46..]).all(|&d| d));
    }

    #[test]
    fn low_confidence_and_missing_confidence() {
        let text = format!(
            "{{\"layout\":\"body25+hands\",\"fps\":30,\"frames\":[[{}]]}}",
            (0..TOTAL_POINTS)
                .map(|p| match p {
                    0 => "[1,2,0.01]".to_string(),
                    _ => "[1,2]".to_string(),
                })
                .collect::<Vec<_>>()
                .join(",")
        );
        let (_, decoded) = parse_pose_json(Path::new("x"), &text).unwrap();
        assert!(!decoded[0].detected[0]);
        assert!(decoded[0].detected[1]);
    }

    #[test]
    fn wrong_point_count_names_frame() {
        let mut frames = vec![vec![[1.0, 1.0, 1.0]; TOTAL_POINTS]; 3];
        frames[2].pop();
        let err = parse_pose_json(Path::new("x"), &pose_doc(&frames)).unwrap_err();
        assert!(err.to_string().contains("frame 2"), "{err}");
    }

    #[test]
    fn all_zero_frame_splits_track() {
        let mut frames = vec![vec![[3.0, 4.0, 1.0]; TOTAL_POINTS]; 5];
        frames[2] = vec![[0.0, 0.0, 0.0]; TOTAL_POINTS];
        let (_, decoded) = parse_pose_json(Path::new("x"), &pose_doc(&frames)).unwrap();
        assert!(decoded[2].is_full_failure());
        let tracks = split_on_full_failures(&decoded, 30.0);
        let ranges: Vec<_> = tracks.iter().map(|t| t.origin_range).collect();
        assert_eq!(ranges, vec![(0, 1), (3, 4)]);
    }

    #[test]
    fn split_interior_failures() {
        let frames: Vec<_> = (0..300)
            .map(|i| if (100..110).contains(&i) { failure() } else { frame(1.0) })
            .collect();
        let tracks = split_on_full_failures(&frames, 30.0);
        let ranges: Vec<_> = tracks.iter().map(|t| t.origin_range).collect();
        assert_eq!(ranges, vec![(0, 99), (110, 299)]);
        assert_eq!(tracks[0].len(), 100);
        assert_eq!(tracks[1].len(), 190);
    }

    #[test]
    fn split_without_failures_is_identity() {
        let frames = vec![frame(2.0); 50];
        let tracks = split_on_full_failures(&frames, 30.0);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].origin_range, (0, 49));
        assert_eq!(tracks[0].frames, frames);
    }

    #[test]
    fn split_all_failures_is_empty() {
        assert!(split_on_full_failures(&vec![failure(); 10], 30.0).is_empty());
    }

    /// Independent run finder: scan the detected mask for maximal runs.
    fn brute_force_runs(mask: &[bool]) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        for s in 0..mask.len() {
            if !mask[s] || (s > 0 && mask[s - 1]) {
                continue;
            }
            let mut e = s;
            while e + 1 < mask.len() && mask[e + 1] {
                e += 1;
            }
            runs.push((s, e));
        }
        runs
    }

    #[test]
    fn split_failures_at_both_ends() {
        let mask: Vec<bool> = (0..40).map(|i| (7..33).contains(&i)).collect();
        let frames: Vec<_> = mask.iter().map(|&ok| if ok { frame(1.0) } else { failure() }).collect();
        let ranges: Vec<_> = split_on_full_failures(&frames, 30.0)
            .iter()
            .map(|t| t.origin_range)
            .collect();
        assert_eq!(ranges, brute_force_runs(&mask));
        assert_eq!(ranges, vec![(7, 32)]);
    }

    proptest::proptest! {
        #[test]
        fn split_matches_run_finder_and_reconstructs(mask in proptest::collection::vec(proptest::bool::weighted(0.8), 1..200)) {
            let frames: Vec<_> = mask.iter().map(|&ok| if ok { frame(1.0) } else { failure() }).collect();
            let tracks = split_on_full_failures(&frames, 30.0);
            let ranges: Vec<_> = tracks.iter().map(|t| t.origin_range).collect();
            proptest::prop_assert_eq!(&ranges, &brute_force_runs(&mask));
            let mut covered: Vec<usize> = ranges.iter().flat_map(|&(s, e)| s..=e).collect();
            covered.extend(mask.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i));
            covered.sort_unstable();
            proptest::prop_assert_eq!(covered, (0..mask.len()).collect::<Vec<_>>());
        }
    }

    fn sample(id: &str, frames: usize) -> LoadedSample {
        LoadedSample {
            record: SampleRecord {
                sample_id: id.into(),
                participant_id: "p".into(),
                fps: 30.0,
                pose_path: PathBuf::new(),
                labels: BTreeMap::new(),
            },
            source_frames: frames,
            tracks: Vec::new(),
        }
    }

    #[test]
    fn duration_filter_boundaries() {
        let kept = filter_short_samples(vec![sample("short", 59 * 30), sample("exact", 60 * 30)], 60.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].record.sample_id, "exact");
    }

    #[test]
    fn duration_filter_counts_and_is_idempotent() {
        let samples: Vec<_> = (0..65)
            .map(|i| sample(&i.to_string(), if i < 12 { 30 * 45 } else { 30 * 120 }))
            .collect();
        let once = filter_short_samples(samples, 60.0);
        assert_eq!(once.len(), 53);
        let twice = filter_short_samples(once.clone(), 60.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn label_schema_validation() {
        assert!(LabelSchema::new("x", 0.0, 10.0, 10.0).is_err());
        assert!(LabelSchema::new("x", 0.0, 10.0, 0.0).is_ok());
        assert_eq!(LabelSchema::builtin("phq8").unwrap().binarization_threshold, 7.0);
        assert!(LabelSchema::builtin("age").is_none());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut labels = BTreeMap::new();
        labels.insert("phq8".to_string(), 9.0);
        let records = vec![SampleRecord {
            sample_id: "s".into(),
            participant_id: "p".into(),
            fps: 30.0,
            pose_path: dir.path().join("poses/s.json"),
            labels,
        }];
        write_manifest(&path, &records, &["phq8".to_string()]).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), records);
    }
}
