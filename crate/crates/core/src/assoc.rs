//! Semantic observations and temporal instance tracking.
//!
//! Tracking associates each active track with the new observation that
//! maximizes an inlier-based matching score: keypoints propagated forward
//! must land inside the candidate's mask, keypoints propagated backward
//! must land inside the track's mask, and each agreeing keypoint
//! contributes its detection confidence to the score.

use crate::raster::MaskImage;
use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssocError {
    #[error("observation has {keypoints} keypoints but {confidences} confidences")]
    ConfidenceCountMismatch { keypoints: usize, confidences: usize },
    #[error("bounding box {bbox:?} exceeds image bounds {width}x{height}")]
    BboxOutOfBounds { bbox: (f64, f64, f64, f64), width: usize, height: usize },
    #[error("propagation supplies {given} predictions for {expected} keypoints")]
    PropagationMismatch { given: usize, expected: usize },
    #[error("tracker expected {expected} forward propagations, got {given}")]
    ForwardCountMismatch { expected: usize, given: usize },
    #[error("tracker expected {expected} backward propagations, got {given}")]
    BackwardCountMismatch { expected: usize, given: usize },
}

/// Axis-aligned detection bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bbox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// One per-frame object detection: category, segmentation mask, keypoints
/// with validity and confidences, bounding box, and detection confidence.
#[derive(Debug, Clone)]
pub struct SemanticObservation {
    pub class: u32,
    pub mask: MaskImage,
    pub keypoints: Vec<Vector2<f64>>,
    pub keypoint_valid: Vec<bool>,
    pub bbox: Bbox,
    pub confidence: f64,
    pub keypoint_confidence: Vec<f64>,
}

impl SemanticObservation {
    pub fn validate(&self) -> Result<(), AssocError> {
        if self.keypoint_confidence.len() != self.keypoints.len()
            || self.keypoint_valid.len() != self.keypoints.len()
        {
            return Err(AssocError::ConfidenceCountMismatch {
                keypoints: self.keypoints.len(),
                confidences: self.keypoint_confidence.len(),
            });
        }
        let (w, h) = (self.mask.width() as f64, self.mask.height() as f64);
        if self.bbox.x < 0.0
            || self.bbox.y < 0.0
            || self.bbox.x + self.bbox.w > w
            || self.bbox.y + self.bbox.h > h
        {
            return Err(AssocError::BboxOutOfBounds {
                bbox: (self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h),
                width: self.mask.width(),
                height: self.mask.height(),
            });
        }
        Ok(())
    }
}

/// True per point iff it falls inside the image and the mask is set at its
/// (rounded-down) pixel.
pub fn inlier_mask(points: &[Vector2<f64>], mask: &MaskImage) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            if p.x < 0.0 || p.y < 0.0 {
                return false;
            }
            let (x, y) = (p.x.floor() as usize, p.y.floor() as usize);
            x < mask.width() && y < mask.height() && mask.get(x, y) >= 0.5
        })
        .collect()
}

/// Keypoint positions predicted in another frame, with per-keypoint success.
#[derive(Debug, Clone)]
pub struct PropagatedKeypoints {
    pub positions: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
}

/// Matching score between a tracked observation and a candidate at the next
/// frame: sum over keypoints of forward-inlier x backward-inlier x
/// confidence. Different classes score zero by convention.
pub fn match_score(
    tracked: &SemanticObservation,
    candidate: &SemanticObservation,
    forward: &PropagatedKeypoints,
    backward: &PropagatedKeypoints,
) -> Result<f64, AssocError> {
    if tracked.class != candidate.class {
        return Ok(0.0);
    }
    let n = tracked.keypoints.len();
    if forward.positions.len() != n || backward.positions.len() != candidate.keypoints.len() {
        return Err(AssocError::PropagationMismatch {
            given: forward.positions.len(),
            expected: n,
        });
    }
    let fwd_in = inlier_mask(&forward.positions, &candidate.mask);
    let bwd_in = inlier_mask(&backward.positions, &tracked.mask);
    let mut score = 0.0;
    for k in 0..n.min(candidate.keypoints.len()) {
        let fwd_ok = fwd_in[k] && forward.valid[k] && tracked.keypoint_valid[k];
        let bwd_ok = bwd_in[k] && backward.valid[k] && candidate.keypoint_valid[k];
        if fwd_ok && bwd_ok {
            score += tracked.keypoint_confidence[k];
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Lost,
}

/// A temporal chain of observations attributed to one object instance.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: usize,
    pub class: u32,
    /// (frame index, observation) pairs over consecutive frames.
    pub observations: Vec<(usize, SemanticObservation)>,
    pub status: TrackStatus,
}

impl Track {
    pub fn last_frame(&self) -> usize {
        self.observations.last().map(|(f, _)| *f).unwrap_or(0)
    }

    pub fn last_observation(&self) -> &SemanticObservation {
        &self.observations.last().expect("track cannot be empty").1
    }

    /// Per keypoint, the (frame, pixel) measurements whose confidence meets
    /// `q_min` and whose validity flag is set.
    pub fn high_quality_measurements(&self, q_min: f64) -> Vec<Vec<(usize, Vector2<f64>)>> {
        let n = self.observations.first().map(|(_, o)| o.keypoints.len()).unwrap_or(0);
        let mut per_kp = vec![Vec::new(); n];
        for (frame, obs) in &self.observations {
            for (k, slot) in per_kp.iter_mut().enumerate().take(obs.keypoints.len()) {
                if obs.keypoint_valid[k] && obs.keypoint_confidence[k] >= q_min {
                    slot.push((*frame, obs.keypoints[k]));
                }
            }
        }
        per_kp
    }
}

/// Result of one tracking step.
#[derive(Debug, Clone, Default)]
pub struct StepResult {
    /// (track id, index into the submitted observations).
    pub assignments: Vec<(usize, usize)>,
    /// Ids of tracks spawned for unmatched observations.
    pub new_tracks: Vec<usize>,
    /// Ids of tracks declared lost this step.
    pub lost: Vec<usize>,
}

/// Width/height ratio bounds for bounding-box compatibility.
const BBOX_RATIO_MAX: f64 = 1.5;

/// Sequential single-writer instance tracker.
#[derive(Debug, Default)]
pub struct Tracker {
    tracks: Vec<Track>,
    next_id: usize,
}

impl Tracker {
    pub fn new() -> Self {
        Tracker::default()
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn into_tracks(self) -> Vec<Track> {
        self.tracks
    }

    /// Ids of currently active tracks, in id order. Forward propagations
    /// submitted to [`Tracker::step`] must follow this order.
    pub fn active_ids(&self) -> Vec<usize> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(|t| t.id)
            .collect()
    }

    pub fn track(&self, id: usize) -> &Track {
        &self.tracks[id]
    }

    /// Advances tracking to `frame`. `forward[i]` predicts the keypoints of
    /// the i-th active track (in [`Tracker::active_ids`] order) at `frame`;
    /// `backward[j]` predicts observation j's keypoints at the track frame.
    ///
    /// Matching is greedy by descending score over (track, observation)
    /// pairs with positive score and equal class; the chosen candidate must
    /// also have a compatible bounding box (width and height each within a
    /// factor of 1.5 of the track's last box), otherwise the track is
    /// declared lost. Unmatched observations spawn new tracks.
    pub fn step(
        &mut self,
        frame: usize,
        observations: Vec<SemanticObservation>,
        forward: &[PropagatedKeypoints],
        backward: &[PropagatedKeypoints],
    ) -> Result<StepResult, AssocError> {
        let active: Vec<usize> = self.active_ids();
        if forward.len() != active.len() {
            return Err(AssocError::ForwardCountMismatch {
                expected: active.len(),
                given: forward.len(),
            });
        }
        if backward.len() != observations.len() {
            return Err(AssocError::BackwardCountMismatch {
                expected: observations.len(),
                given: backward.len(),
            });
        }

        // Score every (active track, observation) pair.
        let mut scored: Vec<(f64, usize, usize)> = Vec::new();
        for (ai, &tid) in active.iter().enumerate() {
            let tracked = self.tracks[tid].last_observation();
            for (oi, obs) in observations.iter().enumerate() {
                let s = match_score(tracked, obs, &forward[ai], &backward[oi])?;
                if s > 0.0 {
                    scored.push((s, tid, oi));
                }
            }
        }
        // Descending score; ties broken by track id then observation index.
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });

        let mut result = StepResult::default();
        let mut track_decided = vec![false; self.tracks.len()];
        let mut obs_taken = vec![false; observations.len()];
        let mut pending: Vec<(usize, usize)> = Vec::new();
        for (_, tid, oi) in &scored {
            if track_decided[*tid] || obs_taken[*oi] {
                continue;
            }
            track_decided[*tid] = true;
            let prev = self.tracks[*tid].last_observation().bbox;
            let cand = observations[*oi].bbox;
            if bbox_compatible(&prev, &cand) {
                obs_taken[*oi] = true;
                pending.push((*tid, *oi));
            } else {
                // The argmax candidate is implausible; the instance is gone.
                self.tracks[*tid].status = TrackStatus::Lost;
                result.lost.push(*tid);
            }
        }

        // Tracks with no positive-score candidate are lost.
        for &tid in &active {
            if !track_decided[tid] {
                self.tracks[tid].status = TrackStatus::Lost;
                result.lost.push(tid);
            }
        }

        // Move matched observations into their tracks, spawn the rest.
        let mut by_obs: Vec<Option<usize>> = vec![None; observations.len()];
        for &(tid, oi) in &pending {
            by_obs[oi] = Some(tid);
        }
        for (oi, obs) in observations.into_iter().enumerate() {
            match by_obs[oi] {
                Some(tid) => {
                    self.tracks[tid].observations.push((frame, obs));
                    result.assignments.push((tid, oi));
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.push(Track {
                        id,
                        class: obs.class,
                        observations: vec![(frame, obs)],
                        status: TrackStatus::Active,
                    });
                    result.new_tracks.push(id);
                }
            }
        }
        result.assignments.sort_unstable();
        result.lost.sort_unstable();
        Ok(result)
    }
}

fn bbox_compatible(a: &Bbox, b: &Bbox) -> bool {
    let ratio_ok = |x: f64, y: f64| -> bool {
        if x <= 0.0 || y <= 0.0 {
            return false;
        }
        let r = x / y;
        (1.0 / BBOX_RATIO_MAX..=BBOX_RATIO_MAX).contains(&r)
    };
    ratio_ok(a.w, b.w) && ratio_ok(a.h, b.h)
}
