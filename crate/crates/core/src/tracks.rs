//! Face-track construction from raw per-frame detections.
//!
//! Linking is greedy frame-by-frame with fully specified tie-breaking (higher
//! IoU, then lower track creation index), so outputs are bit-stable. The
//! thresholds are conventions exposed as parameters; see the defaults below.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BoundingBox, FaceObservation, FaceTrack, Turn};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::Real;

/// Minimum IoU for a detection to join an existing track.
pub const DEFAULT_IOU_LINK_THRESHOLD: Real = 0.5;
/// Maximum frame gap bridged when linking.
pub const DEFAULT_MAX_GAP: usize = 1;
/// Tracks shorter than this are dropped as false positives.
pub const DEFAULT_MIN_TRACK_LEN: usize = 2;

/// Intersection over union of two boxes; symmetric, in [0, 1], and 0 for
/// disjoint boxes.
pub fn iou<S: Scalar>(a: &BoundingBox<S>, b: &BoundingBox<S>) -> S {
    let ix = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(S::zero());
    let iy = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(S::zero());
    let intersection = ix * iy;
    let union = a.area() + b.area() - intersection;
    intersection / union
}

/// One raw face detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Real>>,
}

/// Per-frame detections for one clip, ordered by frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    frames: BTreeMap<usize, Vec<Detection>>,
}

impl DetectionSet {
    pub fn new() -> Self {
        DetectionSet::default()
    }

    pub fn push(&mut self, frame_index: usize, detection: Detection) {
        self.frames.entry(frame_index).or_default().push(detection);
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &[Detection])> {
        self.frames.iter().map(|(f, d)| (*f, d.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame_index: usize,
    detections: Vec<Detection>,
}

/// Loads a line-delimited detection file (one frame per line).
pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut set = DetectionSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let record: FrameRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        for det in record.detections {
            set.push(record.frame_index, det);
        }
    }
    Ok(set)
}

/// Writes a detection set line-delimited (one frame per line).
pub fn save_detections(set: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for (frame_index, detections) in set.frames() {
        let record = FrameRecord {
            frame_index,
            detections: detections.to_vec(),
        };
        serde_json::to_writer(&mut writer, &record)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Loads a line-delimited face-track file (one track per line).
pub fn load_tracks(path: impl AsRef<Path>) -> Result<Vec<FaceTrack>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tracks = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let track: FaceTrack =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if track.is_empty() {
            return Err(Error::parse(path, idx + 1, "track has no observations"));
        }
        tracks.push(track);
    }
    Ok(tracks)
}

/// Writes face tracks line-delimited (one track per line).
pub fn save_tracks(tracks: &[FaceTrack], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for track in tracks {
        serde_json::to_writer(&mut writer, track)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Links detections in adjacent frames into face tracks.
///
/// A detection in frame `f + g` (`1 <= g <= max_gap`) joins the track whose
/// most recent box has maximal IoU at or above `iou_link_threshold`; every
/// detection ends up in exactly one track.
pub fn merge_tracks(
    detections: &DetectionSet,
    iou_link_threshold: Real,
    max_gap: usize,
) -> Result<Vec<FaceTrack>> {
    if !(iou_link_threshold > 0.0 && iou_link_threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "iou_link_threshold must be in (0, 1], got {iou_link_threshold}"
        )));
    }
    if max_gap < 1 {
        return Err(Error::InvalidInput("max_gap must be >= 1".into()));
    }

    let mut tracks: Vec<Vec<FaceObservation>> = Vec::new();
    for (frame, frame_detections) in detections.frames() {
        for detection in frame_detections {
            let mut best: Option<(usize, Real)> = None;
            for (track_idx, track) in tracks.iter().enumerate() {
                let last = track.last().expect("tracks are never empty");
                if last.frame_index >= frame || frame - last.frame_index > max_gap {
                    continue;
                }
                let overlap = iou(&detection.bbox, &last.bbox);
                if overlap < iou_link_threshold {
                    continue;
                }
                // Strictly-greater keeps the earliest-created track on ties.
                if best.map_or(true, |(_, best_iou)| overlap > best_iou) {
                    best = Some((track_idx, overlap));
                }
            }
            let observation = FaceObservation {
                frame_index: frame,
                bbox: detection.bbox,
                embedding: detection.embedding.clone(),
            };
            match best {
                Some((track_idx, _)) => tracks[track_idx].push(observation),
                None => tracks.push(vec![observation]),
            }
        }
    }

    Ok(tracks
        .into_iter()
        .map(|observations| FaceTrack {
            label: None,
            speaking_prob: None,
            observations,
        })
        .collect())
}

/// Drops tracks shorter than `min_len`, preserving order.
pub fn clean_tracks(tracks: Vec<FaceTrack>, min_len: usize) -> Result<Vec<FaceTrack>> {
    if min_len < 1 {
        return Err(Error::InvalidInput("min_len must be >= 1".into()));
    }
    Ok(tracks.into_iter().filter(|t| t.len() >= min_len).collect())
}

/// Frame with the most active tracks; earliest frame on ties.
///
/// With no detected frames at all, returns `default` or fails.
pub fn select_key_frame(turn: &Turn, default: Option<usize>) -> Result<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for track in &turn.tracks {
        for obs in &track.observations {
            *counts.entry(obs.frame_index).or_insert(0) += 1;
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for (frame, count) in counts {
        if best.map_or(true, |(_, best_count)| count > best_count) {
            best = Some((frame, count));
        }
    }
    match (best, default) {
        (Some((frame, _)), _) => Ok(frame),
        (None, Some(frame)) => Ok(frame),
        (None, None) => Err(Error::InvalidInput(
            "turn has no detected frames and no default key frame is configured".into(),
        )),
    }
}
