//! Videos, per-frame detections and spatio-temporal tube geometry.
//!
//! Boxes are kept in center format `(center_x, center_y, width, height)`.
//! Annotation files carry corner format `(x1, y1, x2, y2)` and are converted
//! on the way in and out.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HegError, Result};

/// Axis-aligned box in center format, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64) -> Result<Self> {
        let finite = [center_x, center_y, width, height].iter().all(|v| v.is_finite());
        if !finite || !(width > 0.0) || !(height > 0.0) {
            return Err(HegError::Domain(format!(
                "invalid box ({center_x}, {center_y}, {width}, {height}): width and height must be positive"
            )));
        }
        Ok(Self {
            center_x,
            center_y,
            width,
            height,
        })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.center_x - self.width / 2.0,
            self.center_y - self.height / 2.0,
            self.center_x + self.width / 2.0,
            self.center_y + self.height / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Area of the overlap with the image rectangle `[0, w] × [0, h]`.
    pub fn area_inside(&self, image_width: f64, image_height: f64) -> f64 {
        let [x1, y1, x2, y2] = self.corners();
        let w = (x2.min(image_width) - x1.max(0.0)).max(0.0);
        let h = (y2.min(image_height) - y1.max(0.0)).max(0.0);
        w * h
    }

    /// Scales width and height about the center.
    pub fn scaled(&self, factor: f64) -> BoundingBox {
        BoundingBox {
            width: self.width * factor,
            height: self.height * factor,
            ..*self
        }
    }

    /// Intersection with the image rectangle, or `None` when they are disjoint.
    pub fn clamped(&self, image_width: f64, image_height: f64) -> Option<BoundingBox> {
        let [x1, y1, x2, y2] = self.corners();
        let (x1, y1) = (x1.max(0.0), y1.max(0.0));
        let (x2, y2) = (x2.min(image_width), y2.min(image_height));
        BoundingBox::from_corners(x1, y1, x2, y2).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub object_id: u64,
    pub bbox: BoundingBox,
    pub agent_class: Option<String>,
}

/// One annotated video and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub video_id: String,
    pub fps: f64,
    pub frame_count: usize,
    pub frame_width: u32,
    pub frame_height: u32,
    pub detections: Vec<Detection>,
    pub label: usize,
}

impl VideoSequence {
    /// Checks the per-detection invariants: frame in range, box intersects the
    /// image, and no object appears twice in one frame.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(HegError::Domain(format!(
                "video {}: fps must be positive, got {}",
                self.video_id, self.fps
            )));
        }
        let (w, h) = (self.frame_width as f64, self.frame_height as f64);
        let mut seen = std::collections::HashSet::new();
        for d in &self.detections {
            if d.frame_index >= self.frame_count {
                return Err(HegError::Domain(format!(
                    "video {}: detection of object {} at frame {} but the video has {} frames",
                    self.video_id, d.object_id, d.frame_index, self.frame_count
                )));
            }
            if d.bbox.area_inside(w, h) <= 0.0 {
                return Err(HegError::Domain(format!(
                    "video {}: box of object {} at frame {} lies outside the {}x{} image",
                    self.video_id, d.object_id, d.frame_index, self.frame_width, self.frame_height
                )));
            }
            if !seen.insert((d.frame_index, d.object_id)) {
                return Err(HegError::Domain(format!(
                    "video {}: object {} annotated twice at frame {}",
                    self.video_id, d.object_id, d.frame_index
                )));
            }
        }
        Ok(())
    }

    /// Detections on `frame`, ordered by object id.
    pub fn detections_at(&self, frame: usize) -> Vec<&Detection> {
        let mut out: Vec<&Detection> = self
            .detections
            .iter()
            .filter(|d| d.frame_index == frame)
            .collect();
        out.sort_by_key(|d| d.object_id);
        out
    }
}

/// Frame indices `0, stride, 2·stride, …` below the frame count.
pub fn sample_frames(seq: &VideoSequence, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(HegError::Domain("frame stride must be at least 1".into()));
    }
    Ok((0..seq.frame_count).step_by(stride).collect())
}

/// Seconds between two sampled frames.
pub fn sample_interval_seconds(fps: f64, stride: usize) -> f64 {
    stride as f64 / fps
}

/// Geometry of one object's spatio-temporal tube.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeWindow {
    pub object_id: u64,
    /// Half-open `[start, end)`.
    pub frame_range: (usize, usize),
    pub crop_box: BoundingBox,
    pub tau: usize,
    pub channels: usize,
}

impl TubeWindow {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.frame_range.0..self.frame_range.1
    }
}

pub const RGB_CHANNELS: usize = 3;

/// Tube around a detection: `[t − τ/2, t + τ/2)`, shifted to stay inside the
/// video so it always spans `tau` frames, with the box scaled about its
/// center and clipped to the image.
pub fn tube_window(det: &Detection, seq: &VideoSequence, tau: usize, scale: f64) -> Result<TubeWindow> {
    if tau < 2 || tau % 2 != 0 {
        return Err(HegError::Domain(format!("tau must be even and >= 2, got {tau}")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(HegError::Domain(format!("box scale must be positive, got {scale}")));
    }
    let frames = seq.frame_count;
    if frames < tau {
        return Err(HegError::SequenceTooShort { frames, tau });
    }
    let half = tau / 2;
    let mut start = det.frame_index.saturating_sub(half);
    if start + tau > frames {
        start = frames - tau;
    }
    let crop_box = det
        .bbox
        .scaled(scale)
        .clamped(seq.frame_width as f64, seq.frame_height as f64)
        .ok_or_else(|| {
            HegError::Domain(format!(
                "object {} at frame {} has no overlap with the image",
                det.object_id, det.frame_index
            ))
        })?;
    Ok(TubeWindow {
        object_id: det.object_id,
        frame_range: (start, start + tau),
        crop_box,
        tau,
        channels: RGB_CHANNELS,
    })
}

/// One line of an annotation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum AnnotationRecord {
    Video {
        video_id: String,
        fps: f64,
        frame_count: usize,
        frame_width: u32,
        frame_height: u32,
        label: usize,
    },
    Detection {
        video_id: String,
        frame_index: usize,
        object_id: u64,
        #[serde(rename = "box")]
        corners: [f64; 4],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent_class: Option<String>,
    },
}

/// Reads a line-delimited JSON annotation file. A `video` header record must
/// precede that video's `detection` records; several videos may share a file.
pub fn read_annotations(path: &Path) -> Result<Vec<VideoSequence>> {
    let file = File::open(path).map_err(|e| HegError::io(path, e))?;
    let mut videos: Vec<VideoSequence> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HegError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| {
            HegError::Ingestion(format!("{}:{}: {msg}", path.display(), lineno + 1))
        };
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        match record {
            AnnotationRecord::Video {
                video_id,
                fps,
                frame_count,
                frame_width,
                frame_height,
                label,
            } => {
                if videos.iter().any(|v| v.video_id == video_id) {
                    return Err(at(format!("duplicate header for video {video_id}")));
                }
                videos.push(VideoSequence {
                    video_id,
                    fps,
                    frame_count,
                    frame_width,
                    frame_height,
                    detections: Vec::new(),
                    label,
                });
            }
            AnnotationRecord::Detection {
                video_id,
                frame_index,
                object_id,
                corners,
                agent_class,
            } => {
                let video = videos
                    .iter_mut()
                    .find(|v| v.video_id == video_id)
                    .ok_or_else(|| at(format!("detection for video {video_id} before its header")))?;
                let [x1, y1, x2, y2] = corners;
                let bbox = BoundingBox::from_corners(x1, y1, x2, y2).map_err(|e| at(e.to_string()))?;
                video.detections.push(Detection {
                    frame_index,
                    object_id,
                    bbox,
                    agent_class,
                });
            }
        }
    }
    for v in &videos {
        v.validate()
            .map_err(|e| HegError::Ingestion(format!("{}: {e}", path.display())))?;
    }
    Ok(videos)
}

pub fn write_annotations(path: &Path, videos: &[VideoSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| HegError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut emit = |record: &AnnotationRecord| -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| HegError::Internal(format!("serializing annotation: {e}")))?;
        writeln!(out, "{line}").map_err(|e| HegError::io(path, e))
    };
    for v in videos {
        emit(&AnnotationRecord::Video {
            video_id: v.video_id.clone(),
            fps: v.fps,
            frame_count: v.frame_count,
            frame_width: v.frame_width,
            frame_height: v.frame_height,
            label: v.label,
        })?;
        for d in &v.detections {
            emit(&AnnotationRecord::Detection {
                video_id: v.video_id.clone(),
                frame_index: d.frame_index,
                object_id: d.object_id,
                corners: d.bbox.corners(),
                agent_class: d.agent_class.clone(),
            })?;
        }
    }
    out.flush().map_err(|e| HegError::io(path, e))
}
