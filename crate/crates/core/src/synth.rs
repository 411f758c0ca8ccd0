//! Synthetic pose data with planted gestures and known ground truth.
//!
//! Every sample first draws its full-failure frames, which fix the tracks.
//! Each detection unit then runs a renewal process inside every track:
//! exponential gaps at the class rate, truncated-normal durations rounded to
//! whole trajectory periods. During a gesture the unit's points trace a
//! circle at the class amplitude (pixels per frame) and return to rest.
//! Gaussian jitter and point losses are applied to every frame.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gestures::{GestureRecord, GestureSpan};
use crate::ingest::{
    is_detected, split_on_full_failures, write_manifest, write_pose_file, LabelSchema, LoadedSample, SampleRecord,
};
use crate::learn::stream_seed;
use crate::pipeline::{config_hash, write_json_lines};
use crate::pose::{Point, PoseFrame, UnitKind, HAND_POINTS, LEFT_HAND_OFFSET, RIGHT_HAND_OFFSET, TOTAL_POINTS};

const PARTICIPANT_STREAM: u64 = 0x5041_5254;
const CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassParams {
    pub gesture_rate_per_min: f64,
    pub mean_gesture_duration_s: f64,
    pub gesture_duration_std_s: f64,
    /// Displacement per frame of a moving point.
    pub amplitude: f64,
    pub jitter_std: f64,
    /// Per point and frame.
    pub partial_loss_prob: f64,
    /// Per frame.
    pub full_failure_prob: f64,
}

impl Default for ClassParams {
    fn default() -> Self {
        ClassParams {
            gesture_rate_per_min: 6.0,
            mean_gesture_duration_s: 3.0,
            gesture_duration_std_s: 1.0,
            amplitude: 2.0,
            jitter_std: 0.2,
            partial_loss_prob: 0.01,
            full_failure_prob: 0.0005,
        }
    }
}

impl ClassParams {
    pub fn scaled(&self, rate: f64, amplitude: f64) -> Self {
        ClassParams {
            gesture_rate_per_min: self.gesture_rate_per_min * rate,
            amplitude: self.amplitude * amplitude,
            ..self.clone()
        }
    }

    fn validate(&self, which: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth {which}: {msg}")));
        if !(self.gesture_rate_per_min >= 0.0 && self.gesture_rate_per_min.is_finite()) {
            return bad("gesture_rate_per_min must be non-negative");
        }
        if !(self.mean_gesture_duration_s > 0.0) || !(self.gesture_duration_std_s >= 0.0) {
            return bad("gesture durations must be positive");
        }
        if !(self.amplitude >= 0.0) || !(self.jitter_std >= 0.0) {
            return bad("amplitude and jitter_std must be non-negative");
        }
        for (name, p) in [("partial_loss_prob", self.partial_loss_prob), ("full_failure_prob", self.full_failure_prob)] {
            if !(0.0..1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub participants_per_class: usize,
    pub samples_per_participant: usize,
    pub fps: f64,
    pub duration_s: f64,
    /// Quiet time forced after each gesture.
    pub min_rest_s: f64,
    pub period_frames: usize,
    pub units: Vec<UnitKind>,
    pub label: String,
    pub negative: ClassParams,
    pub positive: ClassParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let negative = ClassParams::default();
        SynthConfig {
            participants_per_class: 20,
            samples_per_participant: 1,
            fps: 30.0,
            duration_s: 90.0,
            min_rest_s: 1.5,
            period_frames: 40,
            units: UnitKind::ALL.to_vec(),
            label: "phq8".into(),
            positive: negative.scaled(0.5, 0.7),
            negative,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.participants_per_class == 0 || self.samples_per_participant == 0 {
            return Err(Error::Config("synth needs at least one participant per class and one sample each".into()));
        }
        if !(self.fps > 0.0) || !(self.duration_s > 0.0) || !(self.min_rest_s >= 0.0) {
            return Err(Error::Config("synth fps and duration_s must be positive".into()));
        }
        if self.period_frames < 2 {
            return Err(Error::Config("synth period_frames must be at least 2".into()));
        }
        self.schema()?;
        self.negative.validate("negative")?;
        self.positive.validate("positive")?;
        for p in [&self.negative, &self.positive] {
            if p.mean_gesture_duration_s > self.duration_s {
                log::warn!(
                    "synth: {} s samples cannot host a {} s mean gesture",
                    self.duration_s,
                    p.mean_gesture_duration_s
                );
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<LabelSchema> {
        LabelSchema::builtin(&self.label)
            .ok_or_else(|| Error::Config(format!("synth label `{}` has no built-in range", self.label)))
    }

    pub fn sample_count(&self) -> usize {
        2 * self.participants_per_class * self.samples_per_participant
    }

    pub fn frames_per_sample(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    fn params(&self, positive: bool) -> &ClassParams {
        if positive {
            &self.positive
        } else {
            &self.negative
        }
    }
}

/// One generated sample kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub record: SampleRecord,
    pub positive: bool,
    /// `[x, y, confidence]` per point per frame.
    pub raw: Vec<Vec<[f64; 3]>>,
    pub truth: Vec<GestureSpan>,
}

impl SynthSample {
    pub fn frames(&self) -> Vec<PoseFrame> {
        self.raw
            .iter()
            .map(|f| {
                let coords = f.iter().map(|p| Point::new(p[0], p[1])).collect();
                let detected = f.iter().map(|p| is_detected(p[0], p[1], p[2])).collect();
                PoseFrame::new(coords, detected)
            })
            .collect()
    }

    pub fn loaded(&self) -> LoadedSample {
        let frames = self.frames();
        LoadedSample {
            source_frames: frames.len(),
            tracks: split_on_full_failures(&frames, self.record.fps),
            record: self.record.clone(),
        }
    }
}

fn rest_pose() -> Vec<[f64; 2]> {
    let body: [[f64; 2]; 25] = [
        [320.0, 120.0],
        [320.0, 180.0],
        [270.0, 180.0],
        [250.0, 260.0],
        [260.0, 330.0],
        [370.0, 180.0],
        [390.0, 260.0],
        [380.0, 330.0],
        [320.0, 340.0],
        [295.0, 340.0],
        [290.0, 450.0],
        [290.0, 560.0],
        [345.0, 340.0],
        [350.0, 450.0],
        [350.0, 560.0],
        [310.0, 110.0],
        [330.0, 110.0],
        [300.0, 115.0],
        [340.0, 115.0],
        [365.0, 580.0],
        [375.0, 578.0],
        [345.0, 570.0],
        [275.0, 580.0],
        [265.0, 578.0],
        [295.0, 570.0],
    ];
    let mut pose = body.to_vec();
    for (wrist, side) in [(body[7], 1.0), (body[4], -1.0)] {
        pose.push(wrist);
        for j in 1..HAND_POINTS {
            let finger = ((j - 1) / 4) as f64;
            let joint = ((j - 1) % 4 + 1) as f64;
            pose.push([wrist[0] + side * (finger * 5.0 - 10.0), wrist[1] + 6.0 * joint]);
        }
    }
    pose
}

/// Points displaced by a gesture of `unit`. Hand gestures move the whole hand.
pub fn moving_points(unit: UnitKind) -> Vec<usize> {
    match unit {
        UnitKind::LeftHand => (LEFT_HAND_OFFSET..LEFT_HAND_OFFSET + HAND_POINTS).collect(),
        UnitKind::RightHand => (RIGHT_HAND_OFFSET..RIGHT_HAND_OFFSET + HAND_POINTS).collect(),
        other => other.point_indices(),
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn participant_of(cfg: &SynthConfig, index: usize) -> (usize, bool) {
    let participant = index / cfg.samples_per_participant;
    (participant, participant % 2 == 1)
}

/// Maximal runs of non-failure frames, inclusive.
fn track_ranges(failure: &[bool]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = None;
    for (i, &f) in failure.iter().enumerate() {
        match (f, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                ranges.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        ranges.push((s, failure.len() - 1));
    }
    ranges
}

/// Deterministic in `(cfg.seed, index)` alone.
pub fn synthesize_sample(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    let schema = cfg.schema()?;
    let (participant, positive) = participant_of(cfg, index);
    let params = cfg.params(positive);
    let participant_id = format!("P{:03}", participant + 1);
    let sample_id = format!("{participant_id}_S{}", index % cfg.samples_per_participant + 1);

    let mut prng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed ^ PARTICIPANT_STREAM, participant as u64));
    let cut = schema.binarization_threshold.floor();
    let score = if positive {
        prng.random_range(cut + 1.0..=schema.max).floor()
    } else {
        prng.random_range(schema.min..=cut).floor()
    };
    let shift = [prng.random_range(-30.0..30.0), prng.random_range(-30.0..30.0)];

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, index as u64));
    let n = cfg.frames_per_sample();
    let failure: Vec<bool> = (0..n).map(|_| rng.random_bool(params.full_failure_prob)).collect();
    let tracks = track_ranges(&failure);

    let mut offsets = vec![[0.0f64; 2]; n * TOTAL_POINTS];
    let mut truth = Vec::new();
    let period = cfg.period_frames;
    let omega = 2.0 * PI / period as f64;
    let radius = params.amplitude / (2.0 * (omega / 2.0).sin());
    let rest_frames = (cfg.min_rest_s * cfg.fps).round() as usize;
    let rate_per_frame = params.gesture_rate_per_min / (60.0 * cfg.fps);
    let duration = Normal::new(params.mean_gesture_duration_s * cfg.fps, params.gesture_duration_std_s * cfg.fps)
        .map_err(|e| Error::Config(format!("synth duration: {e}")))?;
    for (track, &(ts, te)) in tracks.iter().enumerate() {
        if rate_per_frame <= 0.0 {
            break;
        }
        let gaps = Exp::new(rate_per_frame).map_err(|e| Error::Config(format!("synth rate: {e}")))?;
        for &unit in &cfg.units {
            let points = moving_points(unit);
            let mut t = ts;
            loop {
                let start = t + gaps.sample(&mut rng).floor() as usize;
                let frames = loop {
                    let d: f64 = duration.sample(&mut rng);
                    if d > 0.0 {
                        break d;
                    }
                };
                let length = ((frames / period as f64).round() as usize).max(1) * period;
                let end = start + length - 1;
                if end > te {
                    break;
                }
                let theta = rng.random_range(0.0..2.0 * PI);
                let (sin_t, cos_t) = theta.sin_cos();
                for f in start..=end {
                    let tau = (f - start + 1) as f64;
                    let (a, b) = (radius * (1.0 - (omega * tau).cos()), radius * (omega * tau).sin());
                    let d = [cos_t * a - sin_t * b, sin_t * a + cos_t * b];
                    for &p in &points {
                        let o = &mut offsets[f * TOTAL_POINTS + p];
                        o[0] += d[0];
                        o[1] += d[1];
                    }
                }
                truth.push(GestureSpan {
                    unit,
                    track,
                    start_frame: start - ts,
                    end_frame: end - ts,
                });
                t = end + 1 + rest_frames;
            }
        }
    }
    truth.sort();

    let rest = rest_pose();
    let jitter = Normal::new(0.0, params.jitter_std).map_err(|e| Error::Config(format!("synth jitter: {e}")))?;
    let mut raw = Vec::with_capacity(n);
    for (f, &failed) in failure.iter().enumerate() {
        let mut frame = Vec::with_capacity(TOTAL_POINTS);
        let mut any = false;
        for p in 0..TOTAL_POINTS {
            let o = offsets[f * TOTAL_POINTS + p];
            let x = round3(rest[p][0] + shift[0] + o[0] + jitter.sample(&mut rng));
            let y = round3(rest[p][1] + shift[1] + o[1] + jitter.sample(&mut rng));
            let lost = rng.random_bool(params.partial_loss_prob);
            if failed || lost {
                frame.push([0.0, 0.0, 0.0]);
            } else {
                any = true;
                frame.push([x, y, CONFIDENCE]);
            }
        }
        if !failed && !any {
            frame[1][2] = CONFIDENCE;
            frame[1][0] = round3(rest[1][0] + shift[0]);
            frame[1][1] = round3(rest[1][1] + shift[1]);
        }
        raw.push(frame);
    }

    let record = SampleRecord {
        sample_id: sample_id.clone(),
        participant_id,
        fps: cfg.fps,
        pose_path: PathBuf::from(format!("poses/{sample_id}.json")),
        labels: BTreeMap::from([(cfg.label.clone(), score)]),
    };
    Ok(SynthSample {
        record,
        positive,
        raw,
        truth,
    })
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    (0..cfg.sample_count()).into_par_iter().map(|i| synthesize_sample(cfg, i)).collect()
}

/// Paths written by [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub truth: PathBuf,
    pub samples: usize,
    pub gestures: usize,
    pub config_hash: String,
}

/// Write `manifest.csv`, `poses/<sample>.json` and `truth.jsonl` under `out`.
pub fn generate_dataset(cfg: &SynthConfig, out: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let poses = out.join("poses");
    std::fs::create_dir_all(&poses).map_err(|e| Error::io(&poses, e))?;
    let hash = cfg.hash();
    let written: Vec<(SampleRecord, Vec<GestureRecord>)> = (0..cfg.sample_count())
        .into_par_iter()
        .map(|i| {
            let mut sample = synthesize_sample(cfg, i)?;
            sample.record.pose_path = out.join(&sample.record.pose_path);
            write_pose_file(&sample.record.pose_path, cfg.fps, &sample.raw)?;
            let truth = sample
                .truth
                .iter()
                .map(|s| GestureRecord::new(&sample.record.sample_id, s, Some(&hash)))
                .collect();
            Ok((sample.record, truth))
        })
        .collect::<Result<_>>()?;
    let (records, truth): (Vec<SampleRecord>, Vec<Vec<GestureRecord>>) = written.into_iter().unzip();
    let truth: Vec<GestureRecord> = truth.into_iter().flatten().collect();
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &records, std::slice::from_ref(&cfg.label))?;
    let truth_path = out.join("truth.jsonl");
    write_json_lines(&truth_path, &truth)?;
    Ok(SynthOutput {
        manifest,
        truth: truth_path,
        samples: records.len(),
        gestures: truth.len(),
        config_hash: hash,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub detected: usize,
    pub truth: usize,
}

/// Inclusive-frame intersection over union; spans in different tracks or
/// units never overlap.
pub fn span_iou(a: &GestureSpan, b: &GestureSpan) -> f64 {
    if a.track != b.track || a.unit != b.unit {
        return 0.0;
    }
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame.min(b.end_frame);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.frame_count() + b.frame_count() - inter;
    inter as f64 / union as f64
}

/// One-to-one greedy matching by descending IoU, pairs below `iou_threshold`
/// never match.
pub fn plant_report(detected: &[GestureRecord], truth: &[GestureRecord], iou_threshold: f64) -> PlantReport {
    let mut pairs = Vec::new();
    for (i, d) in detected.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if d.sample_id != t.sample_id {
                continue;
            }
            let iou = span_iou(&d.span(), &t.span());
            if iou > 0.0 && iou >= iou_threshold {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            matched += 1;
        }
    }
    let ratio = |den: usize| {
        if den == 0 {
            if detected.is_empty() && truth.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            matched as f64 / den as f64
        }
    };
    let (precision, recall) = (ratio(detected.len()), ratio(truth.len()));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PlantReport {
        precision,
        recall,
        f1,
        matched,
        detected: detected.len(),
        truth: truth.len(),
    }
}
