//! Track cleaning: fill partial detection losses, then low-pass each
//! coordinate channel window by window.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Point, PoseTrack};

/// Coordinate written for points never detected within a track.
pub const UNUSABLE_COORD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub window_length: usize,
    /// Number of low frequency bins kept (DC included).
    pub keep_frequencies: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            window_length: 64,
            keep_frequencies: 5,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.keep_frequencies == 0 {
            return Err(Error::Config(
                "smoothing window_length and keep_frequencies must be positive".into(),
            ));
        }
        if self.window_length < 2 * self.keep_frequencies {
            return Err(Error::Config(format!(
                "smoothing window_length {} must be at least twice keep_frequencies {}",
                self.window_length, self.keep_frequencies
            )));
        }
        Ok(())
    }
}

/// Fill frames where a point went undetected.
///
/// Interior gaps are linearly interpolated between the closest detected
/// frames on either side; gaps touching a track end hold the nearest
/// detected value. Points with no detection in the whole track are set to
/// `(-1, -1)` and marked unusable.
pub fn recover_partial_detections(track: &PoseTrack) -> PoseTrack {
    let mut out = track.clone();
    let points = track.point_count();
    for p in 0..points {
        let detected: Vec<usize> = (0..track.len())
            .filter(|&t| track.frames[t].detected[p])
            .collect();
        if detected.is_empty() {
            out.usable[p] = false;
            for frame in &mut out.frames {
                frame.coords[p] = Point::new(UNUSABLE_COORD, UNUSABLE_COORD);
            }
            continue;
        }
        let first = detected[0];
        let last = *detected.last().unwrap();
        let first_value = track.frames[first].coords[p];
        let last_value = track.frames[last].coords[p];
        for t in 0..first {
            out.frames[t].coords[p] = first_value;
        }
        for t in last + 1..track.len() {
            out.frames[t].coords[p] = last_value;
        }
        for pair in detected.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b == a + 1 {
                continue;
            }
            let from = track.frames[a].coords[p];
            let to = track.frames[b].coords[p];
            let span = (b - a) as f64;
            for t in a + 1..b {
                let w = (t - a) as f64 / span;
                out.frames[t].coords[p] =
                    Point::new(from.x + (to.x - from.x) * w, from.y + (to.y - from.y) * w);
            }
        }
        for frame in &mut out.frames {
            frame.detected[p] = true;
        }
    }
    out
}

/// Windowed Fourier low-pass filter with cached transform plans.
pub struct LowPass {
    cfg: SmoothingConfig,
    planner: FftPlanner<f64>,
    buffer: Vec<Complex64>,
}

impl LowPass {
    pub fn new(cfg: SmoothingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LowPass {
            cfg,
            planner: FftPlanner::new(),
            buffer: Vec::new(),
        })
    }

    /// Smooth a series window by window in place. A trailing window shorter
    /// than `2 * keep_frequencies` is left as is.
    pub fn apply(&mut self, series: &mut [f64]) {
        let keep = self.cfg.keep_frequencies;
        for chunk in series.chunks_mut(self.cfg.window_length) {
            if chunk.len() < 2 * keep {
                continue;
            }
            let forward = self.planner.plan_fft_forward(chunk.len());
            let inverse = self.planner.plan_fft_inverse(chunk.len());
            self.filter_window(chunk, &forward, &inverse);
        }
    }

    fn filter_window(&mut self, chunk: &mut [f64], forward: &Arc<dyn Fft<f64>>, inverse: &Arc<dyn Fft<f64>>) {
        let n = chunk.len();
        let keep = self.cfg.keep_frequencies;
        self.buffer.clear();
        self.buffer.extend(chunk.iter().map(|&v| Complex64::new(v, 0.0)));
        forward.process(&mut self.buffer);
        // bins keep..=n-keep are the non-retained frequencies and their mirrors
        for bin in &mut self.buffer[keep..=n - keep] {
            *bin = Complex64::new(0.0, 0.0);
        }
        inverse.process(&mut self.buffer);
        let scale = 1.0 / n as f64;
        for (out, c) in chunk.iter_mut().zip(&self.buffer) {
            *out = c.re * scale;
        }
    }
}

/// Smooth one series with the given configuration.
pub fn smooth_series(series: &[f64], cfg: SmoothingConfig) -> Result<Vec<f64>> {
    let mut out = series.to_vec();
    LowPass::new(cfg)?.apply(&mut out);
    Ok(out)
}

/// Low-pass the x and y channel of every usable point independently.
pub fn smooth_track(track: &PoseTrack, cfg: SmoothingConfig) -> Result<PoseTrack> {
    let mut filter = LowPass::new(cfg)?;
    let mut out = track.clone();
    let mut xs = vec![0.0; track.len()];
    let mut ys = vec![0.0; track.len()];
    for p in 0..track.point_count() {
        if !track.usable[p] {
            continue;
        }
        for (t, frame) in track.frames.iter().enumerate() {
            xs[t] = frame.coords[p].x;
            ys[t] = frame.coords[p].y;
        }
        filter.apply(&mut xs);
        filter.apply(&mut ys);
        for (t, frame) in out.frames.iter_mut().enumerate() {
            frame.coords[p] = Point::new(xs[t], ys[t]);
        }
    }
    Ok(out)
}

/// Recovery followed by smoothing.
pub fn clean_track(track: &PoseTrack, cfg: SmoothingConfig) -> Result<PoseTrack> {
    smooth_track(&recover_partial_detections(track), cfg)
}
