//! Shared data model and on-disk formats.
//!
//! Sessions are stored line-delimited, one JSON session object per line.
//! Optional fields are omitted when absent rather than null-filled, and real
//! numbers round-trip exactly. Score tables (`rows`/`cols`/`values`,
//! row-major) are the generic container for externally computed
//! probabilities, perplexities, embeddings, and prototypes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::{Matrix, Real};

/// Canonical character name. Lower-cased on construction; comparison is
/// exact string equality after that normalization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CharacterId(String);

impl CharacterId {
    pub fn new(name: &str) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::InvalidInput("character name is empty".into()));
        }
        if name.trim() != name {
            return Err(Error::InvalidInput(format!(
                "character name {name:?} has surrounding whitespace"
            )));
        }
        Ok(CharacterId(name.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CharacterId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CharacterId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        CharacterId::new(&value)
    }
}

impl From<CharacterId> for String {
    fn from(id: CharacterId) -> String {
        id.0
    }
}

/// Axis-aligned face box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<S> {
    x_min: S,
    y_min: S,
    x_max: S,
    y_max: S,
}

impl<S: Scalar> BoundingBox<S> {
    pub fn new(x_min: S, y_min: S, x_max: S, y_max: S) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < S::zero()) {
            return Err(Error::InvalidInput(format!(
                "bounding box coordinates must be finite and non-negative, got \
                 [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidInput(format!(
                "degenerate bounding box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> S {
        self.x_min
    }
    pub fn y_min(&self) -> S {
        self.y_min
    }
    pub fn x_max(&self) -> S {
        self.x_max
    }
    pub fn y_max(&self) -> S {
        self.y_max
    }

    pub fn width(&self) -> S {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> S {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> S {
        self.width() * self.height()
    }
}

// Serialized as the 4-array [x_min, y_min, x_max, y_max].
impl<S: Scalar + Serialize> Serialize for BoundingBox<S> {
    fn serialize<Ser: serde::Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        [self.x_min, self.y_min, self.x_max, self.y_max].serialize(serializer)
    }
}

impl<'de, S: Scalar + Deserialize<'de>> Deserialize<'de> for BoundingBox<S> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[S; 4]>::deserialize(deserializer)?;
        BoundingBox::new(x_min, y_min, x_max, y_max).map_err(serde::de::Error::custom)
    }
}

/// One detected face in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub frame_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Real>>,
}

/// Temporally linked face observations belonging to one person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTrack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<CharacterId>,
    /// Probability that this face is the speaking face, from the visual model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaking_prob: Option<Real>,
    pub observations: Vec<FaceObservation>,
}

impl FaceTrack {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.observations.first().map(|o| o.frame_index)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.observations.last().map(|o| o.frame_index)
    }

    /// Inclusive frame span, in frames.
    pub fn span_frames(&self) -> usize {
        match (self.first_frame(), self.last_frame()) {
            (Some(first), Some(last)) => last - first + 1,
            _ => 0,
        }
    }
}

/// One turn of speaking: utterance text plus its visual context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<CharacterId>,
    pub start_time: Real,
    pub end_time: Real,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracks: Vec<FaceTrack>,
}

impl Turn {
    pub fn duration(&self) -> Real {
        self.end_time - self.start_time
    }

    /// Labelled track of `character` with the given label, if any.
    pub fn has_track_of(&self, character: &CharacterId) -> bool {
        self.tracks.iter().any(|t| t.label.as_ref() == Some(character))
    }
}

/// An ordered window of turns sharing one visual-context source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub source_id: String,
    pub turns: Vec<Turn>,
}

impl Session {
    /// Checks every domain invariant; errors name the session and turn.
    pub fn validate(&self, opts: &ValidateOptions) -> Result<()> {
        let mut dim = opts.embedding_dim;
        self.validate_inner(opts, &mut dim)
    }

    fn validate_inner(&self, opts: &ValidateOptions, dim: &mut Option<usize>) -> Result<()> {
        let ctx = format!("session '{}'", self.source_id);
        if self.turns.is_empty() {
            return Err(Error::invariant(&ctx, "session has no turns"));
        }
        for pair in self.turns.windows(2) {
            if pair[1].start_time < pair[0].start_time {
                return Err(Error::invariant(&ctx, "turns not ordered by start_time"));
            }
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let tctx = format!("{ctx} turn {i}");
            validate_turn(turn, &tctx, opts, dim)?;
        }
        Ok(())
    }
}

fn validate_turn(
    turn: &Turn,
    ctx: &str,
    opts: &ValidateOptions,
    dim: &mut Option<usize>,
) -> Result<()> {
    if turn.utterance.is_empty() {
        return Err(Error::invariant(ctx, "field 'utterance' is empty"));
    }
    if !turn.start_time.is_finite() || !turn.end_time.is_finite() {
        return Err(Error::invariant(ctx, "non-finite timestamps"));
    }
    if turn.end_time < turn.start_time {
        return Err(Error::invariant(
            ctx,
            format!(
                "field 'end_time' ({}) precedes 'start_time' ({})",
                turn.end_time, turn.start_time
            ),
        ));
    }
    if let Some(roster) = &opts.roster {
        for track in &turn.tracks {
            if let Some(label) = &track.label {
                if !roster.contains(label) {
                    return Err(Error::invariant(
                        ctx,
                        format!("track label '{label}' not in roster"),
                    ));
                }
            }
        }
    }
    for (k, track) in turn.tracks.iter().enumerate() {
        validate_track(track, &format!("{ctx} track {k}"), opts, dim)?;
    }
    Ok(())
}

fn validate_track(
    track: &FaceTrack,
    ctx: &str,
    opts: &ValidateOptions,
    dim: &mut Option<usize>,
) -> Result<()> {
    if track.observations.is_empty() {
        return Err(Error::invariant(ctx, "field 'observations' is empty"));
    }
    if let Some(p) = track.speaking_prob {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::invariant(
                ctx,
                format!("field 'speaking_prob' out of [0,1]: {p}"),
            ));
        }
    }
    for pair in track.observations.windows(2) {
        let (prev, next) = (pair[0].frame_index, pair[1].frame_index);
        if next <= prev {
            return Err(Error::invariant(
                ctx,
                format!("frame indices not strictly increasing ({prev} then {next})"),
            ));
        }
        if let Some(max_gap) = opts.max_track_gap {
            if next - prev > max_gap {
                return Err(Error::invariant(
                    ctx,
                    format!("frame gap {} exceeds max gap {max_gap}", next - prev),
                ));
            }
        }
    }
    for obs in &track.observations {
        if let Some(embedding) = &obs.embedding {
            if embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::invariant(ctx, "field 'embedding' has non-finite entries"));
            }
            match *dim {
                Some(d) if d != embedding.len() => {
                    return Err(Error::invariant(
                        ctx,
                        format!(
                            "field 'embedding' has dimension {}, expected {d}",
                            embedding.len()
                        ),
                    ));
                }
                Some(_) => {}
                None => *dim = Some(embedding.len()),
            }
        }
    }
    Ok(())
}

/// Knobs for corpus validation.
///
/// The defaults check only intrinsic invariants. A frame-gap bound and a
/// roster are pipeline conventions, so they are opt-in; the embedding
/// dimension is inferred from the first embedding seen when not pinned.
#[derive(Debug, Clone, Default)]
pub struct ValidateOptions {
    pub embedding_dim: Option<usize>,
    pub max_track_gap: Option<usize>,
    pub roster: Option<Vec<CharacterId>>,
}

/// Loads a line-delimited session file, validating every invariant.
pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    load_sessions_with(path, &ValidateOptions::default())
}

/// [`load_sessions`] with explicit validation options.
///
/// Malformed records are rejected, never repaired; errors carry the
/// 1-indexed line number.
pub fn load_sessions_with(path: impl AsRef<Path>, opts: &ValidateOptions) -> Result<Vec<Session>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut sessions = Vec::new();
    let mut dim = opts.embedding_dim;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let session: Session = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        session
            .validate_inner(opts, &mut dim)
            .map_err(|e| amend_line(e, line_no))?;
        sessions.push(session);
    }
    Ok(sessions)
}

fn amend_line(err: Error, line: usize) -> Error {
    match err {
        Error::Invariant { context, message } => Error::Invariant {
            context: format!("line {line}, {context}"),
            message,
        },
        other => other,
    }
}

/// Writes sessions line-delimited; `load_sessions` of the result reproduces
/// the input exactly.
pub fn save_sessions(sessions: &[Session], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for session in sessions {
        session.validate(&ValidateOptions::default())?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for session in sessions {
        serde_json::to_writer(&mut writer, session)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Generic labelled score container (`values` is row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoreTableRaw", into = "ScoreTableRaw")]
pub struct ScoreTable {
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<Vec<Real>>,
}

#[derive(Serialize, Deserialize)]
struct ScoreTableRaw {
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<Vec<Real>>,
}

impl TryFrom<ScoreTableRaw> for ScoreTable {
    type Error = Error;
    fn try_from(raw: ScoreTableRaw) -> Result<Self> {
        ScoreTable::new(raw.rows, raw.cols, raw.values)
    }
}

impl From<ScoreTable> for ScoreTableRaw {
    fn from(t: ScoreTable) -> ScoreTableRaw {
        ScoreTableRaw {
            rows: t.rows,
            cols: t.cols,
            values: t.values,
        }
    }
}

impl ScoreTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: Vec<Vec<Real>>) -> Result<Self> {
        if values.len() != rows.len() {
            return Err(Error::Shape(format!(
                "score table has {} rows of values for {} row labels",
                values.len(),
                rows.len()
            )));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(Error::Shape(format!(
                    "score table row {i} has {} values for {} column labels",
                    row.len(),
                    cols.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "score table row {i} contains non-finite value {bad}"
                )));
            }
        }
        Ok(ScoreTable { rows, cols, values })
    }

    pub fn from_matrix(rows: Vec<String>, cols: Vec<String>, matrix: &Matrix) -> Result<Self> {
        let values = matrix.outer_iter().map(|r| r.to_vec()).collect();
        ScoreTable::new(rows, cols, values)
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn values(&self) -> &[Vec<Real>] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Real {
        self.values[row][col]
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut m = Array2::zeros((self.rows.len(), self.cols.len()));
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Reads one score table from a JSON file.
pub fn load_score_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::parse(path, 1, e.to_string()))
}

/// Writes one score table as a JSON file.
pub fn save_score_table(table: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, table).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads a line-delimited file of score tables (one JSON table per line),
/// e.g. one table per session in corpus order.
pub fn load_score_tables(path: impl AsRef<Path>) -> Result<Vec<ScoreTable>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut tables = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let table = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        tables.push(table);
    }
    Ok(tables)
}

/// Writes score tables line-delimited.
pub fn save_score_tables(tables: &[ScoreTable], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for table in tables {
        serde_json::to_writer(&mut writer, table)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Options for [`corpus_statistics`].
#[derive(Debug, Clone)]
pub struct StatsOptions {
    /// Frames per second used to convert track frame spans into seconds; the
    /// session schema carries frame indices, not wall-clock frame times.
    pub fps: Real,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions { fps: 25.0 }
    }
}

/// Corpus-level statistics.
///
/// Per-turn quantities (words, tracks, track seconds) are averaged over
/// unique turns; the speaker-absence percentages are averaged over turn
/// instances, because session-wide absence depends on the enclosing window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStatistics {
    pub sessions: usize,
    /// Turns deduplicated by (source_id, start_time); overlapping windows
    /// share turns.
    pub unique_turns: usize,
    /// Mean whitespace-token count per unique utterance.
    pub mean_words_per_utterance: Real,
    pub mean_speakers_per_session: Real,
    pub mean_tracks_per_turn: Real,
    pub mean_track_seconds: Real,
    /// Fraction of speaker-labelled turn instances whose speaker has no
    /// labelled track in that turn.
    pub frac_speaker_missing_current: Real,
    /// Fraction of speaker-labelled turn instances whose speaker has no
    /// labelled track anywhere in the enclosing session.
    pub frac_speaker_missing_session: Real,
}

/// Computes corpus statistics over all sessions.
pub fn corpus_statistics(sessions: &[Session], opts: &StatsOptions) -> Result<CorpusStatistics> {
    if sessions.is_empty() {
        return Err(Error::InvalidInput("no sessions given".into()));
    }
    if !(opts.fps.is_finite() && opts.fps > 0.0) {
        return Err(Error::InvalidInput(format!("fps must be positive, got {}", opts.fps)));
    }

    let mut seen = HashSet::new();
    let mut words = 0usize;
    let mut tracks = 0usize;
    let mut track_frames = 0usize;
    let mut speaker_turns = 0usize;
    let mut missing_current = 0usize;
    let mut missing_session = 0usize;
    let mut speakers_total = 0usize;

    for session in sessions {
        let mut speakers: Vec<&CharacterId> = Vec::new();
        let session_labels: HashSet<&CharacterId> = session
            .turns
            .iter()
            .flat_map(|t| t.tracks.iter().filter_map(|tr| tr.label.as_ref()))
            .collect();
        for turn in &session.turns {
            if seen.insert((session.source_id.as_str(), turn.start_time.to_bits())) {
                words += turn.utterance.split_whitespace().count();
                tracks += turn.tracks.len();
                track_frames += turn.tracks.iter().map(FaceTrack::span_frames).sum::<usize>();
            }
            if let Some(speaker) = &turn.speaker {
                speaker_turns += 1;
                if !turn.has_track_of(speaker) {
                    missing_current += 1;
                }
                if !session_labels.contains(speaker) {
                    missing_session += 1;
                }
                if !speakers.contains(&speaker) {
                    speakers.push(speaker);
                }
            }
        }
        speakers_total += speakers.len();
    }

    let unique_turns = seen.len();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as Real / den as Real
        }
    };
    let unique_tracks = tracks;
    Ok(CorpusStatistics {
        sessions: sessions.len(),
        unique_turns,
        mean_words_per_utterance: ratio(words, unique_turns),
        mean_speakers_per_session: ratio(speakers_total, sessions.len()),
        mean_tracks_per_turn: ratio(unique_tracks, unique_turns),
        mean_track_seconds: ratio(track_frames, unique_tracks) / opts.fps,
        frac_speaker_missing_current: ratio(missing_current, speaker_turns),
        frac_speaker_missing_session: ratio(missing_session, speaker_turns),
    })
}
