//! Keypoint layout, frames, tracks, detection units and body localisations.
//!
//! The layout is the 25-point body model followed by two 21-point hand
//! models: indices `0..25` body, `25..46` left hand, `46..67` right hand.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BODY_POINTS: usize = 25;
pub const HAND_POINTS: usize = 21;
pub const TOTAL_POINTS: usize = BODY_POINTS + 2 * HAND_POINTS;

pub const LEFT_HAND_OFFSET: usize = BODY_POINTS;
pub const RIGHT_HAND_OFFSET: usize = BODY_POINTS + HAND_POINTS;

/// Fingertip offsets (thumb, index, middle, ring, little) inside a hand block.
const FINGERTIPS: [usize; 5] = [4, 8, 12, 16, 20];

/// Point counts of the keypoint layout consumed by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeypointLayout {
    pub body_point_count: usize,
    pub hand_point_count: usize,
}

impl KeypointLayout {
    pub const BODY25_HANDS: KeypointLayout = KeypointLayout {
        body_point_count: BODY_POINTS,
        hand_point_count: HAND_POINTS,
    };

    pub const fn total(&self) -> usize {
        self.body_point_count + 2 * self.hand_point_count
    }
}

/// Raw pixel coordinate of one keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One frame of estimator output.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub coords: Vec<Point>,
    /// `false` where the estimator did not find the point.
    pub detected: Vec<bool>,
}

impl PoseFrame {
    pub fn new(coords: Vec<Point>, detected: Vec<bool>) -> Self {
        debug_assert_eq!(coords.len(), detected.len());
        PoseFrame { coords, detected }
    }

    /// Frame where no point at all was detected. These separate tracks.
    pub fn is_full_failure(&self) -> bool {
        !self.detected.iter().any(|&d| d)
    }

    pub fn point_count(&self) -> usize {
        self.coords.len()
    }
}

/// Contiguous run of frames between full-detection failures.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub frames: Vec<PoseFrame>,
    pub fps: f64,
    /// Inclusive `(start, end)` frame indices within the source sample.
    pub origin_range: (usize, usize),
    /// Per point: `false` once recovery found the point missing for the whole
    /// track. Such points hold `(-1, -1)` and never contribute movement.
    pub usable: Vec<bool>,
}

impl PoseTrack {
    pub fn new(frames: Vec<PoseFrame>, fps: f64, origin_range: (usize, usize)) -> Self {
        let points = frames.first().map_or(0, PoseFrame::point_count);
        PoseTrack {
            frames,
            fps,
            origin_range,
            usable: vec![true; points],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.usable.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    LeftHand,
    RightHand,
    Head,
    LeftKnee,
    RightKnee,
    LeftFoot,
    RightFoot,
}

impl UnitKind {
    pub const ALL: [UnitKind; 7] = [
        UnitKind::LeftHand,
        UnitKind::RightHand,
        UnitKind::Head,
        UnitKind::LeftKnee,
        UnitKind::RightKnee,
        UnitKind::LeftFoot,
        UnitKind::RightFoot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UnitKind::LeftHand => "left_hand",
            UnitKind::RightHand => "right_hand",
            UnitKind::Head => "head",
            UnitKind::LeftKnee => "left_knee",
            UnitKind::RightKnee => "right_knee",
            UnitKind::LeftFoot => "left_foot",
            UnitKind::RightFoot => "right_foot",
        }
    }

    pub fn point_indices(&self) -> Vec<usize> {
        match self {
            UnitKind::LeftHand => FINGERTIPS.iter().map(|o| LEFT_HAND_OFFSET + o).collect(),
            UnitKind::RightHand => FINGERTIPS.iter().map(|o| RIGHT_HAND_OFFSET + o).collect(),
            // nose, right eye, left eye, right ear, left ear
            UnitKind::Head => vec![0, 15, 16, 17, 18],
            UnitKind::LeftKnee => vec![13],
            UnitKind::RightKnee => vec![10],
            // ankle, big toe, small toe, heel
            UnitKind::LeftFoot => vec![14, 19, 20, 21],
            UnitKind::RightFoot => vec![11, 22, 23, 24],
        }
    }

    pub fn localisation(&self) -> LocalisationKind {
        match self {
            UnitKind::LeftHand | UnitKind::RightHand => LocalisationKind::Hands,
            UnitKind::Head => LocalisationKind::Head,
            UnitKind::LeftKnee | UnitKind::RightKnee => LocalisationKind::Legs,
            UnitKind::LeftFoot | UnitKind::RightFoot => LocalisationKind::Feet,
        }
    }

    pub fn unit(&self) -> DetectionUnit {
        DetectionUnit {
            kind: *self,
            point_indices: self.point_indices(),
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UnitKind::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown detection unit `{s}`")))
    }
}

/// Smallest group of points scanned for gestures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionUnit {
    pub kind: UnitKind,
    pub point_indices: Vec<usize>,
}

/// Named body region whose units pool into one feature block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalisationKind {
    Hands,
    Head,
    Legs,
    Feet,
}

impl LocalisationKind {
    /// Fixed feature-vector order.
    pub const ALL: [LocalisationKind; 4] = [
        LocalisationKind::Hands,
        LocalisationKind::Head,
        LocalisationKind::Legs,
        LocalisationKind::Feet,
    ];

    pub const DEFAULT_SET: [LocalisationKind; 3] = [
        LocalisationKind::Hands,
        LocalisationKind::Head,
        LocalisationKind::Legs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LocalisationKind::Hands => "hands",
            LocalisationKind::Head => "head",
            LocalisationKind::Legs => "legs",
            LocalisationKind::Feet => "feet",
        }
    }

    /// Prefix used in feature notation tokens.
    pub fn token(&self) -> &'static str {
        match self {
            LocalisationKind::Hands => "Hn",
            LocalisationKind::Head => "He",
            LocalisationKind::Legs => "L",
            LocalisationKind::Feet => "F",
        }
    }

    pub fn unit_kinds(&self) -> &'static [UnitKind] {
        match self {
            LocalisationKind::Hands => &[UnitKind::LeftHand, UnitKind::RightHand],
            LocalisationKind::Head => &[UnitKind::Head],
            LocalisationKind::Legs => &[UnitKind::LeftKnee, UnitKind::RightKnee],
            LocalisationKind::Feet => &[UnitKind::LeftFoot, UnitKind::RightFoot],
        }
    }

    pub fn localisation(&self) -> Localisation {
        Localisation {
            kind: *self,
            units: self.unit_kinds().iter().map(UnitKind::unit).collect(),
        }
    }
}

impl fmt::Display for LocalisationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LocalisationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LocalisationKind::ALL
            .into_iter()
            .find(|l| l.as_str() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown localisation `{}` (expected hands, head, legs or feet)",
                    s.trim()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Localisation {
    pub kind: LocalisationKind,
    pub units: Vec<DetectionUnit>,
}

/// Detection units of the named localisation.
pub fn localisation_points(name: &str) -> Result<Vec<DetectionUnit>> {
    Ok(name.parse::<LocalisationKind>()?.localisation().units)
}

/// Parse a comma separated localisation list, sorted into feature order and
/// de-duplicated.
pub fn parse_localisation_set(list: &str) -> Result<Vec<LocalisationKind>> {
    let mut set = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<LocalisationKind>>>()?;
    set.sort();
    set.dedup();
    Ok(set)
}
