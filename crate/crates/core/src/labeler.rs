//! Prototype nearest-neighbour character labelling for face tracks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{CharacterId, FaceTrack, ScoreTable};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tracks::iou;
use crate::Real;

/// Score threshold above which a track receives a label.
pub const DEFAULT_LABEL_THRESHOLD: Real = 0.6;
/// Number of largest cosine similarities pooled per character.
pub const DEFAULT_TOP_K: usize = 5;
/// IoU above which two faces count as the same face during validation.
pub const DEFAULT_IOU_MATCH: Real = 0.5;

/// Cosine similarity of two equal-dimension vectors with non-zero norm.
pub fn cosine<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = S::zero();
    let mut nu = S::zero();
    let mut nv = S::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu.is_zero() || nv.is_zero() {
        return Err(Error::InvalidInput("cosine of zero-norm vector".into()));
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Reference face embeddings per character, nominally 20 per character in
/// varied viewing angles.
#[derive(Debug, Clone, Default)]
pub struct PrototypeBank {
    prototypes: BTreeMap<CharacterId, Vec<Vec<Real>>>,
}

impl PrototypeBank {
    pub fn new() -> Self {
        PrototypeBank::default()
    }

    pub fn insert(&mut self, character: CharacterId, vector: Vec<Real>) -> Result<()> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prototype for '{character}' has non-finite entries"
            )));
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidInput(format!(
                "prototype for '{character}' has zero norm"
            )));
        }
        if let Some(existing) = self.prototypes.values().flatten().next() {
            if existing.len() != vector.len() {
                return Err(Error::Shape(format!(
                    "prototype for '{character}' has dimension {}, bank uses {}",
                    vector.len(),
                    existing.len()
                )));
            }
        }
        self.prototypes.entry(character).or_default().push(vector);
        Ok(())
    }

    pub fn characters(&self) -> impl Iterator<Item = &CharacterId> {
        self.prototypes.keys()
    }

    pub fn prototypes_of(&self, character: &CharacterId) -> Option<&[Vec<Real>]> {
        self.prototypes.get(character).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Loads a bank from the score-table container: one row per prototype,
    /// row label = character name (repeated), columns = vector components.
    pub fn from_score_table(table: &ScoreTable) -> Result<Self> {
        let mut bank = PrototypeBank::new();
        for (label, vector) in table.rows().iter().zip(table.values()) {
            bank.insert(CharacterId::new(label)?, vector.clone())?;
        }
        Ok(bank)
    }

    pub fn to_score_table(&self) -> Result<ScoreTable> {
        let dim = self
            .prototypes
            .values()
            .flatten()
            .next()
            .map_or(0, Vec::len);
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (character, vectors) in &self.prototypes {
            for vector in vectors {
                rows.push(character.as_str().to_string());
                values.push(vector.clone());
            }
        }
        let cols = (0..dim).map(|d| d.to_string()).collect();
        ScoreTable::new(rows, cols, values)
    }
}

/// Loads a prototype bank file (score-table container).
pub fn load_prototype_bank(path: impl AsRef<Path>) -> Result<PrototypeBank> {
    PrototypeBank::from_score_table(&crate::corpus::load_score_table(path)?)
}

/// Labels one track by pooled prototype similarity.
///
/// All (observation, prototype) cosine similarities of a character are pooled
/// jointly; the mean of the `top_k` largest is the character's score. The
/// best-scoring character is returned when its score exceeds `threshold`,
/// otherwise the track is left unlabelled.
pub fn label_track(
    track: &FaceTrack,
    bank: &PrototypeBank,
    threshold: Real,
    top_k: usize,
) -> Result<Option<CharacterId>> {
    if top_k < 1 {
        return Err(Error::InvalidInput("top_k must be >= 1".into()));
    }
    if bank.is_empty() {
        return Err(Error::InvalidInput("prototype bank is empty".into()));
    }
    let mut embeddings = Vec::with_capacity(track.len());
    for (i, obs) in track.observations.iter().enumerate() {
        match &obs.embedding {
            Some(e) => embeddings.push(e),
            None => {
                return Err(Error::InvalidInput(format!(
                    "observation {i} (frame {}) has no embedding",
                    obs.frame_index
                )))
            }
        }
    }

    let mut best: Option<(&CharacterId, Real)> = None;
    for (character, prototypes) in &bank.prototypes {
        let mut sims = Vec::with_capacity(embeddings.len() * prototypes.len());
        for embedding in &embeddings {
            for prototype in prototypes {
                sims.push(cosine(embedding, prototype)?);
            }
        }
        sims.sort_by(|a, b| b.partial_cmp(a).expect("cosine values are finite"));
        let k = top_k.min(sims.len());
        let score = sims[..k].iter().sum::<Real>() / k as Real;
        // Strictly-greater keeps the lexicographically smallest name on ties
        // (BTreeMap iterates names in order).
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((character, score));
        }
    }

    let (character, score) = best.expect("bank is non-empty");
    Ok((score > threshold).then(|| character.clone()))
}

/// Outcome of comparing automatic labels against reference annotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub auto_faces: usize,
    pub reference_faces: usize,
    pub matched_pairs: usize,
    pub correct_pairs: usize,
}

impl ValidationReport {
    /// Fraction of matched face pairs carrying identical names; 0 when
    /// nothing matched.
    pub fn accuracy(&self) -> Real {
        if self.matched_pairs == 0 {
            0.0
        } else {
            self.correct_pairs as Real / self.matched_pairs as Real
        }
    }
}

/// Matches per-frame faces across two labelled track sets by IoU and reports
/// how often matched faces agree on the name.
///
/// Matching is greedy highest-IoU-first and one-to-one within each frame;
/// only pairs with IoU strictly above `iou_match` count.
pub fn validate_labels(
    auto: &[FaceTrack],
    reference: &[FaceTrack],
    iou_match: Real,
) -> Result<ValidationReport> {
    if !(iou_match > 0.0 && iou_match <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "iou_match must be in (0, 1], got {iou_match}"
        )));
    }
    let auto_faces = collect_faces(auto, "auto")?;
    let reference_faces = collect_faces(reference, "reference")?;

    let mut frames: Vec<usize> = auto_faces.keys().copied().collect();
    frames.retain(|f| reference_faces.contains_key(f));

    let mut matched = 0usize;
    let mut correct = 0usize;
    for frame in frames {
        let a_faces = &auto_faces[&frame];
        let r_faces = &reference_faces[&frame];
        let mut pairs = Vec::new();
        for (ai, (abox, _)) in a_faces.iter().enumerate() {
            for (ri, (rbox, _)) in r_faces.iter().enumerate() {
                let overlap = iou(abox, rbox);
                if overlap > iou_match {
                    pairs.push((overlap, ai, ri));
                }
            }
        }
        pairs.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .expect("iou is finite")
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        let mut a_used = vec![false; a_faces.len()];
        let mut r_used = vec![false; r_faces.len()];
        for (_, ai, ri) in pairs {
            if a_used[ai] || r_used[ri] {
                continue;
            }
            a_used[ai] = true;
            r_used[ri] = true;
            matched += 1;
            if a_faces[ai].1 == r_faces[ri].1 {
                correct += 1;
            }
        }
    }

    Ok(ValidationReport {
        auto_faces: auto_faces.values().map(Vec::len).sum(),
        reference_faces: reference_faces.values().map(Vec::len).sum(),
        matched_pairs: matched,
        correct_pairs: correct,
    })
}

type FacesByFrame = BTreeMap<usize, Vec<(crate::BoundingBox, CharacterId)>>;

fn collect_faces(tracks: &[FaceTrack], side: &str) -> Result<FacesByFrame> {
    let mut faces: FacesByFrame = BTreeMap::new();
    for (i, track) in tracks.iter().enumerate() {
        let label = track.label.clone().ok_or_else(|| {
            Error::InvalidInput(format!("{side} track {i} has no label"))
        })?;
        for obs in &track.observations {
            faces
                .entry(obs.frame_index)
                .or_default()
                .push((obs.bbox, label.clone()));
        }
    }
    Ok(faces)
}
