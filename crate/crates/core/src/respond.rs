//! Response-selection evaluation and speaker perturbations.
//!
//! Candidate scores (e.g. perplexities) come from an external model; this
//! module builds the candidate lists, rewrites speaker names for the
//! perturbed evaluation variants, and applies lowest-score selection.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharacterId, ScoreTable, Session};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::Real;

/// Negative responses sampled per item.
pub const DEFAULT_NEGATIVES: usize = 9;

/// One response-selection item: the candidate utterances for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub source_id: String,
    /// Position of the ground-truth response within `candidates`.
    pub gold_index: usize,
    pub candidates: Vec<String>,
}

/// Builds per-session candidate lists: the true last utterance plus
/// `negatives_per_item` distinct other utterances from the corpus pool,
/// shuffled deterministically.
pub fn build_candidates(
    sessions: &[Session],
    negatives_per_item: usize,
    seed: u64,
) -> Result<Vec<CandidateItem>> {
    // Unique utterance strings in first-appearance order.
    let mut pool: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for session in sessions {
        for turn in &session.turns {
            if seen.insert(turn.utterance.as_str()) {
                pool.push(&turn.utterance);
            }
        }
    }

    sessions
        .iter()
        .enumerate()
        .map(|(idx, session)| {
            let gold = session
                .turns
                .last()
                .ok_or_else(|| Error::invariant(format!("session '{}'", session.source_id), "no turns"))?
                .utterance
                .clone();
            let mut eligible: Vec<&str> = pool.iter().copied().filter(|u| **u != gold).collect();
            if eligible.len() < negatives_per_item {
                return Err(Error::InvalidInput(format!(
                    "utterance pool has {} candidates besides the ground truth, need {}",
                    eligible.len(),
                    negatives_per_item
                )));
            }
            let mut rng = seeded_rng(derive_seed(seed, idx as u64));
            // Partial Fisher-Yates: sample negatives without replacement.
            for i in 0..negatives_per_item {
                let j = rng.random_range(i..eligible.len());
                eligible.swap(i, j);
            }
            let mut candidates: Vec<String> = Vec::with_capacity(negatives_per_item + 1);
            candidates.push(gold.clone());
            candidates.extend(eligible[..negatives_per_item].iter().map(|u| u.to_string()));
            // Full shuffle of the candidate order.
            for i in (1..candidates.len()).rev() {
                let j = rng.random_range(0..=i);
                candidates.swap(i, j);
            }
            let gold_index = candidates
                .iter()
                .position(|c| *c == gold)
                .expect("ground truth stays in the list");
            Ok(CandidateItem {
                source_id: session.source_id.clone(),
                gold_index,
                candidates,
            })
        })
        .collect()
}

/// Speaker perturbation applied to evaluation sessions (never to training
/// data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Every turn's speaker is a fresh uniform roster draw.
    Random,
    /// Like `Random`, but the last turn keeps its true speaker.
    RandomHistory,
    /// One non-identity roster permutation renames every speaker label and
    /// every roster-name occurrence inside utterance text.
    Shuffled,
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PerturbMode::Random),
            "random_history" | "random-history" => Ok(PerturbMode::RandomHistory),
            "shuffled" => Ok(PerturbMode::Shuffled),
            other => Err(Error::InvalidInput(format!("unknown perturbation mode '{other}'"))),
        }
    }
}

/// Seeded non-identity permutation of the roster, as a name mapping.
pub fn shuffled_mapping(
    roster: &[CharacterId],
    seed: u64,
) -> Result<BTreeMap<CharacterId, CharacterId>> {
    if roster.len() < 2 {
        return Err(Error::InvalidInput(
            "shuffling names needs a roster of at least two characters".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut perm: Vec<usize> = (0..roster.len()).collect();
    loop {
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            break;
        }
    }
    Ok(roster
        .iter()
        .cloned()
        .zip(perm.into_iter().map(|p| roster[p].clone()))
        .collect())
}

/// Inverse of a bijective name mapping.
pub fn invert_mapping(
    mapping: &BTreeMap<CharacterId, CharacterId>,
) -> BTreeMap<CharacterId, CharacterId> {
    mapping.iter().map(|(k, v)| (v.clone(), k.clone())).collect()
}

/// Replaces whole-word, case-insensitive occurrences of mapped names.
///
/// All names are replaced simultaneously in one pass (so a->b, b->c never
/// chains), and the replacement's first letter copies the casing of the
/// original occurrence's first letter.
pub fn replace_names(text: &str, mapping: &BTreeMap<CharacterId, CharacterId>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if word.is_empty() {
            return;
        }
        let key = word.to_lowercase();
        match CharacterId::new(&key).ok().and_then(|id| mapping.get(&id)) {
            Some(replacement) => {
                let name = replacement.as_str();
                let first_upper = word.chars().next().is_some_and(char::is_uppercase);
                if first_upper {
                    let mut chars = name.chars();
                    if let Some(first) = chars.next() {
                        out.extend(first.to_uppercase());
                        out.push_str(chars.as_str());
                    }
                } else {
                    out.push_str(name);
                }
            }
            None => out.push_str(word),
        }
        word.clear();
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            flush(&mut word, &mut out);
            out.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Applies an explicit name mapping to speaker labels and utterance text.
pub fn apply_mapping(session: &Session, mapping: &BTreeMap<CharacterId, CharacterId>) -> Session {
    let mut out = session.clone();
    for turn in &mut out.turns {
        if let Some(speaker) = &turn.speaker {
            if let Some(renamed) = mapping.get(speaker) {
                turn.speaker = Some(renamed.clone());
            }
        }
        turn.utterance = replace_names(&turn.utterance, mapping);
    }
    out
}

/// Produces the perturbed copy of a session.
///
/// Timestamps, tracks, and non-name text are never touched; only `Shuffled`
/// rewrites utterance text.
pub fn perturb_speakers(
    session: &Session,
    mode: PerturbMode,
    seed: u64,
    roster: &[CharacterId],
) -> Result<Session> {
    if roster.is_empty() {
        return Err(Error::InvalidInput("empty roster".into()));
    }
    for (i, turn) in session.turns.iter().enumerate() {
        match &turn.speaker {
            Some(speaker) if roster.contains(speaker) => {}
            Some(speaker) => {
                return Err(Error::invariant(
                    format!("session '{}' turn {i}", session.source_id),
                    format!("speaker '{speaker}' not in roster"),
                ))
            }
            None => {
                return Err(Error::invariant(
                    format!("session '{}' turn {i}", session.source_id),
                    "turn has no speaker to perturb",
                ))
            }
        }
    }
    match mode {
        PerturbMode::Random | PerturbMode::RandomHistory => {
            let mut rng = seeded_rng(seed);
            let mut out = session.clone();
            let last = out.turns.len() - 1;
            for (i, turn) in out.turns.iter_mut().enumerate() {
                if mode == PerturbMode::RandomHistory && i == last {
                    continue;
                }
                turn.speaker = Some(roster[rng.random_range(0..roster.len())].clone());
            }
            Ok(out)
        }
        PerturbMode::Shuffled => {
            let mapping = shuffled_mapping(roster, seed)?;
            Ok(apply_mapping(session, &mapping))
        }
    }
}

/// Per-item argmin of the score rows; ties go to the lowest index.
pub fn select_by_score(scores: &ScoreTable) -> Result<Vec<usize>> {
    if scores.cols().is_empty() {
        return Err(Error::InvalidInput("score table has no candidate columns".into()));
    }
    Ok(scores
        .values()
        .iter()
        .map(|row| {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate().skip(1) {
                if *v < row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Fraction of items whose chosen candidate is the ground truth.
pub fn selection_accuracy(choices: &[usize], gold: &[usize]) -> Result<Real> {
    if choices.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} choices for {} gold indices",
            choices.len(),
            gold.len()
        )));
    }
    if choices.is_empty() {
        return Err(Error::InvalidInput("no items to score".into()));
    }
    let correct = choices.iter().zip(gold).filter(|(c, g)| c == g).count();
    Ok(correct as Real / choices.len() as Real)
}

/// Writes candidate items line-delimited.
pub fn save_candidates(items: &[CandidateItem], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads candidate items written by [`save_candidates`].
pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateItem>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let item: CandidateItem =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if item.gold_index >= item.candidates.len() {
            return Err(Error::parse(path, idx + 1, "gold_index out of range"));
        }
        items.push(item);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;

    fn character(name: &str) -> CharacterId {
        CharacterId::new(name).unwrap()
    }

    fn session(speakers_utterances: &[(&str, &str)]) -> Session {
        Session {
            source_id: "s".into(),
            turns: speakers_utterances
                .iter()
                .enumerate()
                .map(|(i, (speaker, utterance))| Turn {
                    utterance: utterance.to_string(),
                    speaker: Some(character(speaker)),
                    start_time: i as Real,
                    end_time: i as Real + 0.5,
                    key_frame: None,
                    tracks: vec![],
                })
                .collect(),
        }
    }

    fn corpus() -> Vec<Session> {
        (0..8)
            .map(|k| {
                let a = format!("utterance {k} a");
                let b = format!("utterance {k} b");
                let mut s = session(&[("ross", &a), ("rachel", &b)]);
                s.source_id = format!("s{k}");
                s
            })
            .collect()
    }

    #[test]
    fn candidates_have_requested_size_and_contain_gold() {
        let sessions = corpus();
        let items = build_candidates(&sessions, 9, 1).unwrap();
        assert_eq!(items.len(), sessions.len());
        for (item, session) in items.iter().zip(&sessions) {
            assert_eq!(item.candidates.len(), 10);
            let gold = &session.turns.last().unwrap().utterance;
            assert_eq!(&item.candidates[item.gold_index], gold);
            // Negatives are distinct and never equal the ground truth.
            let mut others: Vec<&String> = item
                .candidates
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != item.gold_index)
                .map(|(_, c)| c)
                .collect();
            others.sort();
            others.dedup();
            assert_eq!(others.len(), 9);
            assert!(others.iter().all(|c| *c != gold));
        }
    }

    #[test]
    fn zero_negatives_make_singleton_lists() {
        let sessions = corpus();
        let items = build_candidates(&sessions, 0, 1).unwrap();
        assert!(items.iter().all(|i| i.candidates.len() == 1 && i.gold_index == 0));
        let choices: Vec<usize> = items.iter().map(|_| 0).collect();
        let gold: Vec<usize> = items.iter().map(|i| i.gold_index).collect();
        assert_eq!(selection_accuracy(&choices, &gold).unwrap(), 1.0);
    }

    #[test]
    fn candidates_are_deterministic_per_seed() {
        let sessions = corpus();
        assert_eq!(
            build_candidates(&sessions, 5, 9).unwrap(),
            build_candidates(&sessions, 5, 9).unwrap()
        );
        assert_ne!(
            build_candidates(&sessions, 5, 9).unwrap(),
            build_candidates(&sessions, 5, 10).unwrap()
        );
    }

    #[test]
    fn pool_too_small_is_an_error() {
        let sessions = vec![session(&[("ross", "only one"), ("rachel", "and two")])];
        assert!(build_candidates(&sessions, 9, 0).is_err());
    }

    #[test]
    fn replace_names_whole_words_case_insensitive() {
        let mapping: BTreeMap<CharacterId, CharacterId> =
            [(character("ross"), character("joey"))].into_iter().collect();
        assert_eq!(replace_names("Hey Ross!", &mapping), "Hey Joey!");
        assert_eq!(replace_names("hey ross, it's rossland", &mapping), "hey joey, it's rossland");
        assert_eq!(replace_names("ROSS said", &mapping), "Joey said");
        assert_eq!(replace_names("Ross's idea", &mapping), "Joey's idea");
    }

    #[test]
    fn replace_names_applies_simultaneously() {
        let mapping: BTreeMap<CharacterId, CharacterId> = [
            (character("ross"), character("joey")),
            (character("joey"), character("chandler")),
        ]
        .into_iter()
        .collect();
        assert_eq!(
            replace_names("Ross met Joey", &mapping),
            "Joey met Chandler"
        );
    }

    fn roster(names: &[&str]) -> Vec<CharacterId> {
        names.iter().map(|n| character(n)).collect()
    }

    #[test]
    fn shuffled_mapping_is_a_non_identity_bijection() {
        let roster = roster(&["ross", "rachel", "joey"]);
        for seed in 0..20 {
            let mapping = shuffled_mapping(&roster, seed).unwrap();
            let mut targets: Vec<&CharacterId> = mapping.values().collect();
            targets.sort();
            targets.dedup();
            assert_eq!(targets.len(), roster.len());
            assert!(mapping.iter().any(|(k, v)| k != v), "seed {seed} gave identity");
        }
        assert!(shuffled_mapping(&roster[..1], 0).is_err());
    }

    #[test]
    fn shuffled_perturbation_roundtrips_through_inverse() {
        let roster = roster(&["ross", "rachel", "joey"]);
        let s = session(&[
            ("ross", "Rachel look at Joey"),
            ("rachel", "what about ross and Ross"),
            ("joey", "nothing here"),
        ]);
        let forward = perturb_speakers(&s, PerturbMode::Shuffled, 5, &roster).unwrap();
        let mapping = shuffled_mapping(&roster, 5).unwrap();
        let back = apply_mapping(&forward, &invert_mapping(&mapping));
        assert_eq!(back, s);
        // Structure untouched.
        for (a, b) in forward.turns.iter().zip(&s.turns) {
            assert_eq!(a.start_time, b.start_time);
            assert_eq!(a.end_time, b.end_time);
            assert_eq!(a.tracks, b.tracks);
        }
    }

    #[test]
    fn random_history_keeps_last_speaker() {
        let roster = roster(&["a", "b", "c", "d"]);
        let s = session(&[("a", "one"), ("b", "two"), ("c", "three")]);
        for seed in 0..10 {
            let p = perturb_speakers(&s, PerturbMode::RandomHistory, seed, &roster).unwrap();
            assert_eq!(p.turns.last().unwrap().speaker, s.turns.last().unwrap().speaker);
            assert!(p.turns.iter().all(|t| t.utterance == s.turns[0].utterance
                || t.utterance == s.turns[1].utterance
                || t.utterance == s.turns[2].utterance));
        }
    }

    #[test]
    fn random_mode_draws_from_roster_only() {
        let roster = roster(&["a", "b"]);
        let s = session(&[("a", "one"), ("b", "two")]);
        let p = perturb_speakers(&s, PerturbMode::Random, 3, &roster).unwrap();
        assert!(p
            .turns
            .iter()
            .all(|t| roster.contains(t.speaker.as_ref().unwrap())));
        // Utterance text untouched in random modes.
        assert_eq!(p.turns[0].utterance, "one");
    }

    #[test]
    fn perturb_rejects_speaker_outside_roster() {
        let s = session(&[("stranger", "hi")]);
        assert!(perturb_speakers(&s, PerturbMode::Random, 0, &roster(&["a", "b"])).is_err());
    }

    #[test]
    fn select_by_score_is_argmin_with_low_tie() {
        let table = ScoreTable::new(
            vec!["i0".into(), "i1".into()],
            (0..6).map(|c| c.to_string()).collect(),
            vec![
                vec![5.0, 3.0, 1.0, 9.0, 1.0, 2.0],
                vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.4],
            ],
        )
        .unwrap();
        assert_eq!(select_by_score(&table).unwrap(), vec![2, 5]);
        let tied = ScoreTable::new(
            vec!["i".into()],
            (0..6).map(|c| c.to_string()).collect(),
            vec![vec![3.0, 2.0, 1.0, 4.0, 4.0, 1.0]],
        )
        .unwrap();
        assert_eq!(select_by_score(&tied).unwrap(), vec![2]);
    }

    #[test]
    fn selection_is_invariant_under_monotone_transforms() {
        let rows: Vec<Vec<Real>> = (0..20)
            .map(|i| {
                let mut rng = crate::rng::seeded_rng(i);
                (0..10).map(|_| rng.random_range(0.1..50.0)).collect()
            })
            .collect();
        let labels: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        let cols: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let base = ScoreTable::new(labels.clone(), cols.clone(), rows.clone()).unwrap();
        let transformed = ScoreTable::new(
            labels,
            cols,
            rows.iter()
                .map(|r| r.iter().map(|v| (v * 0.1).exp() + 1.0).collect())
                .collect(),
        )
        .unwrap();
        assert_eq!(
            select_by_score(&base).unwrap(),
            select_by_score(&transformed).unwrap()
        );
    }

    #[test]
    fn candidates_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("candidates.jsonl");
        let items = build_candidates(&corpus(), 3, 7).unwrap();
        save_candidates(&items, &path).unwrap();
        assert_eq!(load_candidates(&path).unwrap(), items);
    }
}
