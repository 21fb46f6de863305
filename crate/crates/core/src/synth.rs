//! Seeded synthetic scenes whose node features encode the class in one
//! statistic of a small value set.
//!
//! | task           | class 0         | class 1            | shared            |
//! |----------------|-----------------|--------------------|-------------------|
//! | skew_coded     | {−√2, √2}       | {−1, −1, 2}        | mean 0, var 2     |
//! | variance_coded | {−1, 1}         | {−2, 2}            | mean 0, m3 0      |
//! | mean_coded     | {−1, 1}         | {0, 2}             | var 1, m3 0       |
//!
//! Each feature of each node is an independent uniform draw from its
//! video's class set, rounded to `f32` so feature files round-trip exactly.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HegError, Result};
use crate::features::FeatureTable;
use crate::numerics::{derive_seed, seeded_rng, unit_f64, DetRng, Matrix};
use crate::scene::{BoundingBox, Detection, VideoSequence};

const SKEW_CLASS0: [f64; 2] = [-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2];
const SKEW_CLASS1: [f64; 3] = [-1.0, -1.0, 2.0];
const VARIANCE_CLASS0: [f64; 2] = [-1.0, 1.0];
const VARIANCE_CLASS1: [f64; 2] = [-2.0, 2.0];
const MEAN_CLASS0: [f64; 2] = [-1.0, 1.0];
const MEAN_CLASS1: [f64; 2] = [0.0, 2.0];

pub const SYNTH_FPS: f64 = 12.0;
pub const SYNTH_FRAME_WIDTH: u32 = 1280;
pub const SYNTH_FRAME_HEIGHT: u32 = 960;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    SkewCoded,
    VarianceCoded,
    MeanCoded,
}

impl SynthTask {
    pub fn name(self) -> &'static str {
        match self {
            SynthTask::SkewCoded => "skew_coded",
            SynthTask::VarianceCoded => "variance_coded",
            SynthTask::MeanCoded => "mean_coded",
        }
    }

    pub const CLASSES: usize = 2;

    /// Equiprobable support of one feature of a class-`class` node.
    pub fn value_set(self, class: usize) -> &'static [f64] {
        match (self, class) {
            (SynthTask::SkewCoded, 0) => &SKEW_CLASS0,
            (SynthTask::SkewCoded, _) => &SKEW_CLASS1,
            (SynthTask::VarianceCoded, 0) => &VARIANCE_CLASS0,
            (SynthTask::VarianceCoded, _) => &VARIANCE_CLASS1,
            (SynthTask::MeanCoded, 0) => &MEAN_CLASS0,
            (SynthTask::MeanCoded, _) => &MEAN_CLASS1,
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthTask {
    type Err = HegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "skew_coded" | "skew" => Ok(SynthTask::SkewCoded),
            "variance_coded" | "variance" => Ok(SynthTask::VarianceCoded),
            "mean_coded" | "mean" => Ok(SynthTask::MeanCoded),
            other => Err(HegError::Domain(format!("unknown synthetic task {other:?}"))),
        }
    }
}

/// Mean, variance and third central moment of an equiprobable value set,
/// by direct summation.
pub fn set_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let central = |m: i32| values.iter().map(|v| (v - mean).powi(m)).sum::<f64>() / n;
    (mean, central(2), central(3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub feature_dim: usize,
    pub task: SynthTask,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_videos: 100,
            frames_per_video: 16,
            min_objects: 2,
            max_objects: 6,
            feature_dim: 8,
            task: SynthTask::SkewCoded,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_video < 2 {
            return Err(HegError::Domain(format!(
                "synthetic videos need at least 2 frames, got {}",
                self.frames_per_video
            )));
        }
        if self.feature_dim == 0 {
            return Err(HegError::Domain("feature_dim must be at least 1".into()));
        }
        if self.min_objects > self.max_objects || self.max_objects == 0 {
            return Err(HegError::Domain(format!(
                "object range {}..={} is empty or allows no objects",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

/// A generated video and the features of every detection.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub sequence: VideoSequence,
    pub features: FeatureTable,
}

pub fn video_id(index: usize) -> String {
    format!("synth_{index:05}")
}

fn uniform_index(rng: &mut DetRng, n: usize) -> usize {
    ((unit_f64(rng) * n as f64) as usize).min(n - 1)
}

/// Videos alternate labels, so any prefix is balanced to within one.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    (0..spec.num_videos)
        .into_par_iter()
        .map(|i| generate_video(spec, i))
        .collect()
}

/// Video `index` of `spec`, independent of every other index.
pub fn generate_video(spec: &SynthSpec, index: usize) -> Result<SynthVideo> {
    spec.validate()?;
    let label = index % SynthTask::CLASSES;
    let mut rng = seeded_rng(derive_seed(spec.seed, index as u64));
    let (w, h) = (SYNTH_FRAME_WIDTH as f64, SYNTH_FRAME_HEIGHT as f64);

    // one straight-line track per object slot
    let tracks: Vec<[f64; 6]> = (0..spec.max_objects)
        .map(|_| {
            [
                unit_f64(&mut rng) * w,
                unit_f64(&mut rng) * h,
                (unit_f64(&mut rng) - 0.5) * 10.0,
                (unit_f64(&mut rng) - 0.5) * 10.0,
                40.0 + unit_f64(&mut rng) * 160.0,
                40.0 + unit_f64(&mut rng) * 160.0,
            ]
        })
        .collect();

    let values = spec.task.value_set(label);
    let mut detections = Vec::new();
    let mut data = Vec::new();
    let mut keys = Vec::new();
    for frame in 0..spec.frames_per_video {
        let count = spec.min_objects + uniform_index(&mut rng, spec.max_objects - spec.min_objects + 1);
        for (object, t) in tracks.iter().take(count).enumerate() {
            let cx = (t[0] + t[2] * frame as f64).clamp(0.0, w - 1.0);
            let cy = (t[1] + t[3] * frame as f64).clamp(0.0, h - 1.0);
            detections.push(Detection {
                frame_index: frame,
                object_id: object as u64,
                bbox: BoundingBox::new(cx, cy, t[4], t[5])?,
                agent_class: None,
            });
            keys.push((frame, object as u64));
            for _ in 0..spec.feature_dim {
                data.push(values[uniform_index(&mut rng, values.len())] as f32 as f64);
            }
        }
    }
    let sequence = VideoSequence {
        video_id: video_id(index),
        fps: SYNTH_FPS,
        frame_count: spec.frames_per_video,
        frame_width: SYNTH_FRAME_WIDTH,
        frame_height: SYNTH_FRAME_HEIGHT,
        detections,
        label,
    };
    sequence.validate()?;
    let features = FeatureTable::new(Matrix::from_vec(keys.len(), spec.feature_dim, data)?, keys)?;
    Ok(SynthVideo { sequence, features })
}

/// Index lists of a 70/15/15 split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split of `0..n`; each list is ascending. Train takes ⌊0.7·n⌋
/// items, validation ⌊0.15·n⌋ and test the rest.
pub fn split_indices(n: usize, seed: u64) -> Splits {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, 0x5_911)));
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Splits {
        train: sorted(&order[..n_train]),
        val: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
    }
}
