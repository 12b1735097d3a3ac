//! Session selection and evaluation-set construction.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::corpus::{CharacterId, Session, Turn};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::Real;

/// Adjacent turns further apart than this never share a session; a heuristic
/// scene boundary.
pub const DEFAULT_MAX_GAP_SECONDS: Real = 8.0;
/// Window sizes the session pipelines are normally run with.
pub const DEFAULT_WINDOW_SIZES: [usize; 2] = [5, 8];
/// Fraction of labelled tracks removed for the noisy evaluation variant.
pub const DEFAULT_NOISE_FRACTION: Real = 0.2;

/// Selects every window of `m` consecutive turns in which all speakers are
/// roster members and every inter-turn gap (`next.start_time -
/// prev.end_time`) is strictly shorter than `max_gap_seconds`.
///
/// Windows overlap freely; each becomes a [`Session`] carrying `source_id`.
pub fn slide_windows(
    source_id: &str,
    turns: &[Turn],
    m: usize,
    roster: &[CharacterId],
    max_gap_seconds: Real,
) -> Result<Vec<Session>> {
    if m < 1 {
        return Err(Error::InvalidInput("window size must be >= 1".into()));
    }
    if !(max_gap_seconds > 0.0) {
        return Err(Error::InvalidInput(format!(
            "max_gap_seconds must be positive, got {max_gap_seconds}"
        )));
    }
    let mut sessions = Vec::new();
    if turns.len() < m {
        return Ok(sessions);
    }
    for start in 0..=(turns.len() - m) {
        let window = &turns[start..start + m];
        let roster_ok = window.iter().all(|turn| {
            turn.speaker
                .as_ref()
                .is_some_and(|speaker| roster.contains(speaker))
        });
        if !roster_ok {
            continue;
        }
        let gaps_ok = window
            .windows(2)
            .all(|pair| pair[1].start_time - pair[0].end_time < max_gap_seconds);
        if !gaps_ok {
            continue;
        }
        sessions.push(Session {
            source_id: source_id.to_string(),
            turns: window.to_vec(),
        });
    }
    Ok(sessions)
}

/// All characters whose labelled faces appear anywhere in the session,
/// ordered by first appearance. May be empty; the caller decides fallbacks.
pub fn candidate_set(session: &Session) -> Vec<CharacterId> {
    let mut candidates = Vec::new();
    for turn in &session.turns {
        for track in &turn.tracks {
            if let Some(label) = &track.label {
                if !candidates.contains(label) {
                    candidates.push(label.clone());
                }
            }
        }
    }
    candidates
}

/// Removes exactly `floor(fraction * L)` labelled tracks, chosen uniformly
/// without replacement by the seeded generator, where `L` counts labelled
/// tracks in the session. Everything else is untouched.
pub fn make_noisy(session: &Session, fraction: Real, seed: u64) -> Result<Session> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "noise fraction must be in [0, 1], got {fraction}"
        )));
    }
    // Labelled-track slots in deterministic (turn, track) order.
    let mut slots = Vec::new();
    for (ti, turn) in session.turns.iter().enumerate() {
        for (ki, track) in turn.tracks.iter().enumerate() {
            if track.label.is_some() {
                slots.push((ti, ki));
            }
        }
    }
    let total = slots.len();
    let remove_count = (fraction * total as Real).floor() as usize;

    // Partial Fisher-Yates: the first remove_count entries are the sample.
    let mut rng = seeded_rng(seed);
    for i in 0..remove_count {
        let j = rng.random_range(i..total);
        slots.swap(i, j);
    }
    let removed: std::collections::HashSet<(usize, usize)> =
        slots[..remove_count].iter().copied().collect();

    let mut noisy = session.clone();
    for (ti, turn) in noisy.turns.iter_mut().enumerate() {
        let mut ki = 0usize;
        turn.tracks.retain(|_| {
            let keep = !removed.contains(&(ti, ki));
            ki += 1;
            keep
        });
    }
    Ok(noisy)
}

/// Loads a roster file: one character name per line, blank lines ignored.
pub fn load_roster(path: impl AsRef<Path>) -> Result<Vec<CharacterId>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut roster = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        let id =
            CharacterId::new(name).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if !roster.contains(&id) {
            roster.push(id);
        }
    }
    Ok(roster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FaceObservation, FaceTrack};

    fn character(name: &str) -> CharacterId {
        CharacterId::new(name).unwrap()
    }

    fn labelled_track(name: &str) -> FaceTrack {
        FaceTrack {
            label: Some(character(name)),
            speaking_prob: Some(0.5),
            observations: vec![FaceObservation {
                frame_index: 0,
                bbox: crate::BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                embedding: None,
            }],
        }
    }

    fn unlabelled_track() -> FaceTrack {
        FaceTrack {
            label: None,
            ..labelled_track("x")
        }
    }

    /// Turns with the given speakers and inter-turn gaps (seconds).
    fn turn_stream(speakers: &[&str], gaps: &[Real]) -> Vec<Turn> {
        assert_eq!(gaps.len() + 1, speakers.len());
        let mut turns = Vec::new();
        let mut t = 0.0;
        for (i, name) in speakers.iter().enumerate() {
            if i > 0 {
                t += gaps[i - 1];
            }
            turns.push(Turn {
                utterance: format!("utterance {i}"),
                speaker: Some(character(name)),
                start_time: t,
                end_time: t + 1.0,
                key_frame: None,
                tracks: vec![],
            });
            t += 1.0;
        }
        turns
    }

    fn roster(names: &[&str]) -> Vec<CharacterId> {
        names.iter().map(|n| character(n)).collect()
    }

    #[test]
    fn long_gap_blocks_window() {
        let turns = turn_stream(&["a", "b", "a", "b", "a"], &[3.0, 2.0, 7.0, 9.0]);
        let sessions = slide_windows("ep", &turns, 5, &roster(&["a", "b"]), 8.0).unwrap();
        assert!(sessions.is_empty());
    }

    #[test]
    fn window_count_is_n_minus_m_plus_one() {
        let turns = turn_stream(&["a", "b", "a", "b", "a", "b"], &[1.0; 5]);
        let sessions = slide_windows("ep", &turns, 5, &roster(&["a", "b"]), 8.0).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].turns[0].utterance, "utterance 0");
        assert_eq!(sessions[1].turns[0].utterance, "utterance 1");
        assert!(sessions.iter().all(|s| s.source_id == "ep"));
    }

    #[test]
    fn non_roster_speaker_excludes_windows() {
        let turns = turn_stream(
            &["a", "b", "stranger", "a", "b", "a", "b", "a"],
            &[1.0; 7],
        );
        let sessions = slide_windows("ep", &turns, 5, &roster(&["a", "b"]), 8.0).unwrap();
        // Of the four candidate windows only 3..=7 avoids the stranger.
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].turns[0].utterance, "utterance 3");
    }

    #[test]
    fn missing_speaker_fails_roster_rule() {
        let mut turns = turn_stream(&["a", "b", "a"], &[1.0, 1.0]);
        turns[1].speaker = None;
        assert!(slide_windows("ep", &turns, 3, &roster(&["a", "b"]), 8.0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn short_stream_yields_nothing() {
        let turns = turn_stream(&["a", "b"], &[1.0]);
        assert!(slide_windows("ep", &turns, 5, &roster(&["a", "b"]), 8.0)
            .unwrap()
            .is_empty());
    }

    fn session_with_tracks(track_names: &[&[&str]]) -> Session {
        let mut turns = turn_stream(&vec!["a"; track_names.len()], &vec![1.0; track_names.len() - 1]);
        for (turn, names) in turns.iter_mut().zip(track_names) {
            turn.tracks = names.iter().map(|n| labelled_track(n)).collect();
        }
        Session {
            source_id: "ep".into(),
            turns,
        }
    }

    #[test]
    fn candidate_set_orders_by_first_appearance() {
        let session = session_with_tracks(&[&["ross", "rachel"], &["joey", "ross"]]);
        let c = candidate_set(&session);
        assert_eq!(c, roster(&["ross", "rachel", "joey"]));
    }

    #[test]
    fn candidate_set_empty_without_labels() {
        let mut session = session_with_tracks(&[&[], &[]]);
        session.turns[0].tracks.push(unlabelled_track());
        assert!(candidate_set(&session).is_empty());
    }

    #[test]
    fn noisy_removes_exact_floor_count() {
        let mut session = session_with_tracks(&[
            &["a", "b"],
            &["c", "d", "e"],
            &["f", "g", "h", "i", "j"],
        ]);
        session.turns[0].tracks.push(unlabelled_track());
        let labelled = |s: &Session| -> usize {
            s.turns
                .iter()
                .flat_map(|t| &t.tracks)
                .filter(|t| t.label.is_some())
                .count()
        };
        assert_eq!(labelled(&session), 10);
        let noisy = make_noisy(&session, 0.2, 7).unwrap();
        assert_eq!(labelled(&noisy), 8);
        // Unlabelled tracks are never removed.
        let unlabelled: usize = noisy
            .turns
            .iter()
            .flat_map(|t| &t.tracks)
            .filter(|t| t.label.is_none())
            .count();
        assert_eq!(unlabelled, 1);
    }

    #[test]
    fn noisy_zero_fraction_is_identity() {
        let session = session_with_tracks(&[&["a", "b"], &["c"]]);
        assert_eq!(make_noisy(&session, 0.0, 3).unwrap(), session);
    }

    #[test]
    fn noisy_is_deterministic_per_seed() {
        let session = session_with_tracks(&[&["a", "b", "c"], &["d", "e", "f"]]);
        let one = make_noisy(&session, 0.5, 11).unwrap();
        let two = make_noisy(&session, 0.5, 11).unwrap();
        assert_eq!(one, two);
        // Candidate set only shrinks.
        let before = candidate_set(&session);
        for candidate in candidate_set(&one) {
            assert!(before.contains(&candidate));
        }
    }

    #[test]
    fn noisy_preserves_everything_else() {
        let session = session_with_tracks(&[&["a", "b", "c", "d", "e"]]);
        let noisy = make_noisy(&session, 0.4, 5).unwrap();
        assert_eq!(noisy.source_id, session.source_id);
        assert_eq!(noisy.turns.len(), session.turns.len());
        for (a, b) in noisy.turns.iter().zip(&session.turns) {
            assert_eq!(a.utterance, b.utterance);
            assert_eq!(a.speaker, b.speaker);
            assert_eq!(a.start_time, b.start_time);
            assert_eq!(a.end_time, b.end_time);
        }
    }

    #[test]
    fn roster_file_parses_one_name_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roster.txt");
        std::fs::write(&path, "Ross\nrachel\n\njoey\n").unwrap();
        let names = load_roster(&path).unwrap();
        assert_eq!(names, roster(&["ross", "rachel", "joey"]));
    }
}
