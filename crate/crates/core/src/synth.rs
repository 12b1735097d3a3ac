//! Seeded synthetic corpus generator with planted ground truth.
//!
//! Every quantity the pipelines estimate (speakers, face presence, speaking
//! probabilities, pairwise similarities, embedding clusters) is planted at a
//! configurable noise level and recorded in an oracle, so each stage can be
//! verified end-to-end without real data. The corpus matches the on-disk
//! schemas only; it is not a statistical replica of any real dataset.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    BoundingBox, CharacterId, FaceObservation, FaceTrack, ScoreTable, Session, Turn,
};
use crate::error::{Error, Result};
use crate::head::{HeadExample, LabelMatrix};
use crate::rng::{derive_seed, seeded_rng};
use crate::{Matrix, Real, Vector};

/// Names available to the generator roster.
pub const ROSTER_NAMES: [&str; 18] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy",
    "mallory", "niaj", "olivia", "peggy", "quentin", "rupert", "sybil", "trent",
];

const VOCAB: [&str; 40] = [
    "about", "after", "again", "anyway", "because", "before", "better", "coffee", "coming",
    "dinner", "doing", "enough", "every", "funny", "going", "gonna", "great", "happy", "hello",
    "know", "later", "listen", "little", "maybe", "money", "never", "nothing", "okay", "people",
    "please", "really", "right", "sorry", "story", "sure", "thanks", "there", "think", "tonight",
    "weird",
];

/// Frame rate the generator assumes when planting track durations.
pub const SYNTH_FPS: Real = 25.0;

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub sessions: usize,
    /// Turns per session; 5 or 8.
    pub turns_per_session: usize,
    /// Characters in the corpus roster (at most 18).
    pub roster_size: usize,
    /// Characters active per session.
    pub cast_size: usize,
    /// Probability that the speaker's face track appears in its turn.
    pub p_face_present: Real,
    /// Probability that each non-speaking cast face appears in a turn.
    pub p_background_face: Real,
    /// Probability that the visual model scores the speaker's face highest,
    /// given the face is present.
    pub p_vision_correct: Real,
    /// Corruption of the planted similarities towards 0.5 (0 = clean).
    pub sim_noise: Real,
    /// Utterance embedding dimension.
    pub embedding_dim: usize,
    /// Isotropic spread of per-speaker embedding clusters around their unit
    /// centroids.
    pub embedding_spread: Real,
    /// Probability that an utterance mentions a cast member by name.
    pub name_mention_prob: Real,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            sessions: 50,
            turns_per_session: 5,
            roster_size: 6,
            cast_size: 3,
            p_face_present: 0.9,
            p_background_face: 0.5,
            p_vision_correct: 0.8,
            sim_noise: 0.3,
            embedding_dim: 16,
            embedding_spread: 0.25,
            name_mention_prob: 0.3,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sessions < 1 {
            return Err(Error::InvalidInput("sessions must be >= 1".into()));
        }
        if self.turns_per_session != 5 && self.turns_per_session != 8 {
            return Err(Error::InvalidInput(format!(
                "turns_per_session must be 5 or 8, got {}",
                self.turns_per_session
            )));
        }
        if self.roster_size < 2 || self.roster_size > ROSTER_NAMES.len() {
            return Err(Error::InvalidInput(format!(
                "roster_size must be in [2, {}], got {}",
                ROSTER_NAMES.len(),
                self.roster_size
            )));
        }
        if self.cast_size < 2 || self.cast_size > self.roster_size {
            return Err(Error::InvalidInput(format!(
                "cast_size must be in [2, roster_size], got {}",
                self.cast_size
            )));
        }
        for (name, p) in [
            ("p_face_present", self.p_face_present),
            ("p_background_face", self.p_background_face),
            ("p_vision_correct", self.p_vision_correct),
            ("sim_noise", self.sim_noise),
            ("name_mention_prob", self.name_mention_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidInput("embedding_dim must be >= 2".into()));
        }
        if !(self.embedding_spread > 0.0 && self.embedding_spread.is_finite()) {
            return Err(Error::InvalidInput("embedding_spread must be positive".into()));
        }
        Ok(())
    }
}

/// Planted truth for one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOracle {
    pub speaker: CharacterId,
    /// The speaker's own face track was planted in this turn.
    pub face_present: bool,
    /// The speaker's track carries the strictly highest speaking probability
    /// in this turn.
    pub vision_correct: bool,
    /// No track of the speaker was planted anywhere in the session.
    pub absent_from_session: bool,
}

/// Planted truth for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOracle {
    pub turns: Vec<TurnOracle>,
}

/// Corpus-level bookkeeping, recorded during construction rather than
/// recomputed from the emitted files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOracle {
    pub seed: u64,
    pub spec: GeneratorSpec,
    pub sessions: Vec<SessionOracle>,
    pub speaker_turns: usize,
    pub missing_current: usize,
    pub missing_session: usize,
    pub total_words: usize,
    pub total_tracks: usize,
    pub total_track_frames: usize,
    pub distinct_speakers_total: usize,
}

impl CorpusOracle {
    pub fn frac_missing_current(&self) -> Real {
        self.missing_current as Real / self.speaker_turns as Real
    }

    pub fn frac_missing_session(&self) -> Real {
        self.missing_session as Real / self.speaker_turns as Real
    }
}

/// A generated corpus plus its planted truth.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub sessions: Vec<Session>,
    /// Planted pairwise similarity matrix per session.
    pub psim: Vec<Matrix>,
    /// Planted utterance embeddings per session.
    pub embeddings: Vec<Vec<Vector>>,
    pub oracle: CorpusOracle,
}

impl SynthCorpus {
    /// Similarity matrices in the score-table container, one per session.
    pub fn psim_tables(&self) -> Result<Vec<ScoreTable>> {
        self.psim
            .iter()
            .map(|p| {
                let labels: Vec<String> = (0..p.nrows()).map(|i| i.to_string()).collect();
                ScoreTable::from_matrix(labels.clone(), labels, p)
            })
            .collect()
    }

    /// Utterance embeddings in the score-table container, one per session.
    pub fn embedding_tables(&self) -> Result<Vec<ScoreTable>> {
        self.embeddings
            .iter()
            .map(|vectors| {
                let rows: Vec<String> = (0..vectors.len()).map(|i| i.to_string()).collect();
                let dim = vectors.first().map_or(0, Vector::len);
                let cols: Vec<String> = (0..dim).map(|d| d.to_string()).collect();
                let values = vectors.iter().map(|v| v.to_vec()).collect();
                ScoreTable::new(rows, cols, values)
            })
            .collect()
    }

    /// Per-turn speaking probabilities in the score-table container.
    pub fn m1_tables(&self) -> Result<Vec<ScoreTable>> {
        self.sessions.iter().map(crate::solver::extract_m1_scores).collect()
    }

    /// Training examples for the similarity head.
    pub fn head_examples(&self) -> Vec<HeadExample<Real>> {
        self.sessions
            .iter()
            .zip(&self.embeddings)
            .map(|(session, embeddings)| {
                let speakers: Vec<CharacterId> = session
                    .turns
                    .iter()
                    .map(|t| t.speaker.clone().expect("synthetic turns have speakers"))
                    .collect();
                HeadExample {
                    embeddings: embeddings.clone(),
                    labels: LabelMatrix::from_speakers(&speakers),
                }
            })
            .collect()
    }
}

/// Generates a corpus; the output is fully determined by `spec` and `seed`.
pub fn generate_corpus(spec: &GeneratorSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let roster: Vec<CharacterId> = ROSTER_NAMES[..spec.roster_size]
        .iter()
        .map(|n| CharacterId::new(n).expect("roster names are valid"))
        .collect();

    // Per-character unit centroids for utterance embeddings.
    let mut centroid_rng = seeded_rng(derive_seed(seed, u64::MAX));
    let centroids: Vec<Vector> = (0..spec.roster_size)
        .map(|_| {
            let mut v: Vector =
                Array1::from_shape_simple_fn(spec.embedding_dim, || centroid_rng.sample(StandardNormal));
            let norm = v.dot(&v).sqrt();
            v.mapv_inplace(|x| x / norm);
            v
        })
        .collect();

    let mut sessions = Vec::with_capacity(spec.sessions);
    let mut psims = Vec::with_capacity(spec.sessions);
    let mut embeddings = Vec::with_capacity(spec.sessions);
    let mut session_oracles = Vec::with_capacity(spec.sessions);
    let mut total_words = 0usize;
    let mut total_tracks = 0usize;
    let mut total_track_frames = 0usize;
    let mut missing_current = 0usize;
    let mut missing_session = 0usize;
    let mut distinct_speakers_total = 0usize;

    for session_idx in 0..spec.sessions {
        let mut rng = seeded_rng(derive_seed(seed, session_idx as u64));

        // Session cast: a distinct roster subset.
        let mut indices: Vec<usize> = (0..spec.roster_size).collect();
        for i in 0..spec.cast_size {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        let cast: Vec<usize> = indices[..spec.cast_size].to_vec();

        let m = spec.turns_per_session;
        let speakers: Vec<usize> = (0..m).map(|_| cast[rng.random_range(0..cast.len())]).collect();

        let mut turns = Vec::with_capacity(m);
        let mut planted_presence: Vec<Vec<usize>> = Vec::with_capacity(m);
        let mut turn_face_present = Vec::with_capacity(m);
        let mut turn_vision_correct = Vec::with_capacity(m);
        let mut cursor = 0.0;
        for &speaker in &speakers {
            let start_time = cursor;
            let end_time = start_time + rng.random_range(1.0..3.0);
            cursor = end_time + rng.random_range(0.5..2.0);

            // Utterance text with occasional cast-name mentions.
            let n_words = rng.random_range(4..=12usize);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
                .collect();
            if rng.random_range(0.0..1.0) < spec.name_mention_prob {
                let mentioned = roster[cast[rng.random_range(0..cast.len())]].as_str();
                let position = rng.random_range(0..words.len());
                words[position] = if rng.random_range(0.0..1.0) < 0.5 {
                    let mut chars = mentioned.chars();
                    let first = chars.next().expect("names are non-empty");
                    format!("{}{}", first.to_uppercase(), chars.as_str())
                } else {
                    mentioned.to_string()
                };
            }
            let utterance = words.join(" ");
            total_words += utterance.split_whitespace().count();

            // Who is visible this turn: the speaker with p_face_present,
            // everyone else in the cast independently.
            let face_present = rng.random_range(0.0..1.0) < spec.p_face_present;
            let mut present: Vec<usize> = Vec::new();
            if face_present {
                present.push(speaker);
            }
            for &member in &cast {
                if member != speaker && rng.random_range(0.0..1.0) < spec.p_background_face {
                    present.push(member);
                }
            }

            // Speaking probabilities: one high slot, everyone else low.
            let low = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(0.05..0.45);
            let high = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(0.70..0.95);
            let mut probs = vec![0.0; present.len()];
            if face_present {
                let correct_draw = rng.random_range(0.0..1.0) < spec.p_vision_correct;
                if correct_draw || present.len() == 1 {
                    for (slot, member) in present.iter().enumerate() {
                        probs[slot] = if *member == speaker { high(&mut rng) } else { low(&mut rng) };
                    }
                } else {
                    let distractor = loop {
                        let k = rng.random_range(0..present.len());
                        if present[k] != speaker {
                            break k;
                        }
                    };
                    for (slot, member) in present.iter().enumerate() {
                        probs[slot] = if slot == distractor {
                            high(&mut rng)
                        } else if *member == speaker {
                            low(&mut rng)
                        } else {
                            low(&mut rng)
                        };
                    }
                }
            } else {
                for slot in 0..present.len() {
                    probs[slot] = low(&mut rng);
                }
            }

            // One contiguous track per present character, parked on the
            // character's home column so identities stay spatially disjoint.
            let mut tracks = Vec::with_capacity(present.len());
            for (slot, &member) in present.iter().enumerate() {
                let first_frame = rng.random_range(0..4usize);
                let len = rng.random_range(3..=6usize);
                let home_x = 120.0 * member as Real;
                let home_y = 40.0;
                let observations = (0..len)
                    .map(|k| {
                        let dx: Real = rng.random_range(-2.0..2.0);
                        let dy: Real = rng.random_range(-2.0..2.0);
                        let x = (home_x + dx).max(0.0);
                        let y = (home_y + dy).max(0.0);
                        FaceObservation {
                            frame_index: first_frame + k,
                            bbox: BoundingBox::new(x, y, x + 64.0, y + 64.0)
                                .expect("synthetic boxes are valid"),
                            embedding: None,
                        }
                    })
                    .collect::<Vec<_>>();
                total_tracks += 1;
                total_track_frames += len;
                tracks.push(FaceTrack {
                    label: Some(roster[member].clone()),
                    speaking_prob: Some(probs[slot]),
                    observations,
                });
            }

            // Actual outcome: is the speaker's slot the strict argmax?
            let vision_correct = face_present
                && present
                    .iter()
                    .zip(&probs)
                    .all(|(member, p)| *member == speaker || *p < probs[0]);

            planted_presence.push(present.clone());
            turn_face_present.push(face_present);
            turn_vision_correct.push(vision_correct);
            turns.push(Turn {
                utterance,
                speaker: Some(roster[speaker].clone()),
                start_time,
                end_time,
                key_frame: None,
                tracks,
            });
        }

        // Similarity matrix: planted labels pushed towards 0.5 by sim_noise.
        let signal = (1.0 - spec.sim_noise) * 0.998;
        let mut psim = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                let y = if speakers[i] == speakers[j] { 1.0 } else { 0.0 };
                let jitter = spec.sim_noise * rng.random_range(-0.1..0.1);
                psim[(i, j)] = (0.5 + (y - 0.5) * signal + jitter).clamp(1e-3, 1.0 - 1e-3);
            }
        }

        // Utterance embeddings from per-speaker clusters.
        let session_embeddings: Vec<Vector> = speakers
            .iter()
            .map(|&speaker| {
                let noise: Vector = Array1::from_shape_simple_fn(spec.embedding_dim, || {
                    let g: Real = rng.sample(StandardNormal);
                    g * spec.embedding_spread
                });
                &centroids[speaker] + &noise
            })
            .collect();

        // Bookkeeping straight from the plants.
        let mut turn_oracles = Vec::with_capacity(m);
        for (i, &speaker) in speakers.iter().enumerate() {
            let in_session = planted_presence.iter().any(|p| p.contains(&speaker));
            if !turn_face_present[i] {
                missing_current += 1;
            }
            if !in_session {
                missing_session += 1;
            }
            turn_oracles.push(TurnOracle {
                speaker: roster[speaker].clone(),
                face_present: turn_face_present[i],
                vision_correct: turn_vision_correct[i],
                absent_from_session: !in_session,
            });
        }
        let mut distinct = speakers.clone();
        distinct.sort_unstable();
        distinct.dedup();
        distinct_speakers_total += distinct.len();

        sessions.push(Session {
            source_id: format!("synth-{session_idx:05}"),
            turns,
        });
        psims.push(psim);
        embeddings.push(session_embeddings);
        session_oracles.push(SessionOracle { turns: turn_oracles });
    }

    let speaker_turns = spec.sessions * spec.turns_per_session;
    Ok(SynthCorpus {
        sessions,
        psim: psims,
        embeddings,
        oracle: CorpusOracle {
            seed,
            spec: spec.clone(),
            sessions: session_oracles,
            speaker_turns,
            missing_current,
            missing_session,
            total_words,
            total_tracks,
            total_track_frames,
            distinct_speakers_total,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_statistics, StatsOptions, ValidateOptions};
    use crate::solver::{accuracy, identify_all, IdentifyConfig};

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::default();
        let a = generate_corpus(&spec, 42).unwrap();
        let b = generate_corpus(&spec, 42).unwrap();
        assert_eq!(a.sessions, b.sessions);
        assert_eq!(a.psim, b.psim);
        assert_eq!(a.oracle, b.oracle);
        let c = generate_corpus(&spec, 43).unwrap();
        assert_ne!(a.sessions, c.sessions);
    }

    #[test]
    fn generated_sessions_satisfy_corpus_invariants() {
        let spec = GeneratorSpec::default();
        let corpus = generate_corpus(&spec, 7).unwrap();
        let opts = ValidateOptions {
            max_track_gap: Some(1),
            ..ValidateOptions::default()
        };
        for session in &corpus.sessions {
            session.validate(&opts).unwrap();
            assert_eq!(session.turns.len(), spec.turns_per_session);
        }
        // Gaps always below the windowing limit.
        for session in &corpus.sessions {
            for pair in session.turns.windows(2) {
                assert!(pair[1].start_time - pair[0].end_time < 8.0);
            }
        }
    }

    #[test]
    fn statistics_match_generator_bookkeeping() {
        let spec = GeneratorSpec {
            sessions: 40,
            p_face_present: 0.7,
            ..GeneratorSpec::default()
        };
        let corpus = generate_corpus(&spec, 11).unwrap();
        let stats = corpus_statistics(&corpus.sessions, &StatsOptions { fps: SYNTH_FPS }).unwrap();
        let oracle = &corpus.oracle;
        assert_eq!(stats.sessions, spec.sessions);
        assert_eq!(stats.unique_turns, oracle.speaker_turns);
        assert!(
            (stats.frac_speaker_missing_current - oracle.frac_missing_current()).abs() < 1e-12
        );
        assert!(
            (stats.frac_speaker_missing_session - oracle.frac_missing_session()).abs() < 1e-12
        );
        let expected_words = oracle.total_words as Real / oracle.speaker_turns as Real;
        assert!((stats.mean_words_per_utterance - expected_words).abs() < 1e-12);
        let expected_tracks = oracle.total_tracks as Real / oracle.speaker_turns as Real;
        assert!((stats.mean_tracks_per_turn - expected_tracks).abs() < 1e-12);
        let expected_secs =
            oracle.total_track_frames as Real / oracle.total_tracks as Real / SYNTH_FPS;
        assert!((stats.mean_track_seconds - expected_secs).abs() < 1e-12);
        let expected_speakers =
            oracle.distinct_speakers_total as Real / spec.sessions as Real;
        assert!((stats.mean_speakers_per_session - expected_speakers).abs() < 1e-12);
    }

    #[test]
    fn noiseless_plant_solves_perfectly_with_vision_only() {
        let spec = GeneratorSpec {
            sessions: 20,
            p_face_present: 1.0,
            p_vision_correct: 1.0,
            sim_noise: 0.0,
            ..GeneratorSpec::default()
        };
        let corpus = generate_corpus(&spec, 3).unwrap();
        let cfg = IdentifyConfig {
            alpha: 1.0,
            ..IdentifyConfig::default()
        };
        let predictions = identify_all(&corpus.sessions, &corpus.psim, &cfg).unwrap();
        assert_eq!(accuracy(&predictions, &corpus.sessions).unwrap(), 1.0);
    }

    #[test]
    fn vision_correct_oracle_matches_emitted_probabilities() {
        let spec = GeneratorSpec {
            sessions: 30,
            p_vision_correct: 0.6,
            ..GeneratorSpec::default()
        };
        let corpus = generate_corpus(&spec, 9).unwrap();
        for (session, oracle) in corpus.sessions.iter().zip(&corpus.oracle.sessions) {
            for (turn, turn_oracle) in session.turns.iter().zip(&oracle.turns) {
                let speaker_prob = turn
                    .tracks
                    .iter()
                    .find(|t| t.label.as_ref() == Some(&turn_oracle.speaker))
                    .and_then(|t| t.speaking_prob);
                let max_other = turn
                    .tracks
                    .iter()
                    .filter(|t| t.label.as_ref() != Some(&turn_oracle.speaker))
                    .filter_map(|t| t.speaking_prob)
                    .fold(Real::NEG_INFINITY, Real::max);
                let actual = match speaker_prob {
                    Some(p) => turn.tracks.len() == 1 || p > max_other,
                    None => false,
                };
                assert_eq!(actual, turn_oracle.vision_correct);
                assert_eq!(speaker_prob.is_some(), turn_oracle.face_present);
            }
        }
    }

    #[test]
    fn psim_encodes_planted_partition_when_clean() {
        let spec = GeneratorSpec {
            sessions: 5,
            sim_noise: 0.0,
            ..GeneratorSpec::default()
        };
        let corpus = generate_corpus(&spec, 13).unwrap();
        for (session, psim) in corpus.sessions.iter().zip(&corpus.psim) {
            for i in 0..session.turns.len() {
                for j in 0..session.turns.len() {
                    let same = session.turns[i].speaker == session.turns[j].speaker;
                    let p = psim[(i, j)];
                    assert!(p > 0.0 && p < 1.0);
                    assert_eq!(p > 0.5, same);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = GeneratorSpec::default();
        spec.turns_per_session = 6;
        assert!(generate_corpus(&spec, 0).is_err());
        spec = GeneratorSpec::default();
        spec.cast_size = 1;
        assert!(generate_corpus(&spec, 0).is_err());
        spec = GeneratorSpec::default();
        spec.sim_noise = 1.5;
        assert!(generate_corpus(&spec, 0).is_err());
    }

    #[test]
    fn tables_align_with_sessions() {
        let corpus = generate_corpus(&GeneratorSpec::default(), 21).unwrap();
        let psims = corpus.psim_tables().unwrap();
        let embeddings = corpus.embedding_tables().unwrap();
        assert_eq!(psims.len(), corpus.sessions.len());
        assert_eq!(embeddings.len(), corpus.sessions.len());
        assert_eq!(psims[0].rows().len(), corpus.sessions[0].turns.len());
        assert_eq!(
            embeddings[0].cols().len(),
            GeneratorSpec::default().embedding_dim
        );
    }
}
