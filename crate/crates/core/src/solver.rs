//! Reward matrices and the constrained quadratic binary assignment solvers.
//!
//! Each session yields a candidate set `C` (size `l`), a text reward `A`
//! (`m x m`, mean-subtracted pairwise same-speaker scores) and a vision
//! reward `B` (`l x m`, per-candidate speaking probabilities). Choosing one
//! candidate per turn maximizes
//!
//! ```text
//! (1 - alpha) * sum_{i != j} A[i][j] * [x_i == x_j]  +  alpha * sum_i B[x_i][i]
//! ```
//!
//! The constant diagonal quadratic terms are excluded; `A` is used
//! unsymmetrized, so pairs (i, j) and (j, i) both contribute. All solvers
//! break ties towards the lexicographically smallest index sequence.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharacterId, ScoreTable, Session};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::{derive_seed, seeded_rng};
use crate::sessions::candidate_set;
use crate::{Matrix, Real};

/// Default enumeration budget for [`solve_exact`].
pub const DEFAULT_BUDGET: u64 = 10_000_000;
/// Default reward weight with one frame as visual context.
pub const DEFAULT_ALPHA_FRAME: Real = 0.8;
/// Default reward weight with video as visual context.
pub const DEFAULT_ALPHA_VIDEO: Real = 0.7;
/// Default reward weight when the text rewards come from ground-truth labels.
pub const DEFAULT_ALPHA_TEXT_ORACLE: Real = 0.2;

/// One solvable instance: candidates, rewards, and the mixing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardInstance<S> {
    candidates: Vec<CharacterId>,
    a: Array2<S>,
    b: Array2<S>,
    alpha: S,
}

impl<S: Scalar> RewardInstance<S> {
    pub fn new(
        candidates: Vec<CharacterId>,
        a: Array2<S>,
        b: Array2<S>,
        alpha: S,
    ) -> Result<Self> {
        let l = candidates.len();
        if l == 0 {
            return Err(Error::InvalidInput("candidate set is empty".into()));
        }
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].contains(c) {
                return Err(Error::InvalidInput(format!("duplicate candidate '{c}'")));
            }
        }
        let m = a.nrows();
        if a.ncols() != m || m == 0 {
            return Err(Error::Shape(format!(
                "text reward must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != l || b.ncols() != m {
            return Err(Error::Shape(format!(
                "vision reward is {}x{}, expected {l}x{m}",
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("text reward has non-finite entries".into()));
        }
        if b.iter().any(|v| !(v.is_finite() && *v >= S::zero() && *v <= S::one())) {
            return Err(Error::InvalidInput(
                "vision reward entries must be finite and in [0, 1]".into(),
            ));
        }
        if !(alpha.is_finite() && alpha >= S::zero() && alpha <= S::one()) {
            return Err(Error::InvalidInput(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(RewardInstance { candidates, a, b, alpha })
    }

    pub fn turns(&self) -> usize {
        self.a.nrows()
    }

    pub fn candidates(&self) -> &[CharacterId] {
        &self.candidates
    }

    pub fn text_reward(&self) -> &Array2<S> {
        &self.a
    }

    pub fn vision_reward(&self) -> &Array2<S> {
        &self.b
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }
}

/// How an assignment was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Enumeration,
    BranchAndBound,
    LocalSearch,
}

/// One candidate index per turn, with the achieved objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<S> {
    pub choice: Vec<usize>,
    pub objective: S,
    pub method: SolveMethod,
}

impl<S> Assignment<S> {
    /// Maps candidate indices back to character names.
    pub fn speakers(&self, candidates: &[CharacterId]) -> Vec<CharacterId> {
        self.choice.iter().map(|&c| candidates[c].clone()).collect()
    }
}

/// Text reward: the similarity matrix minus the mean of all its entries
/// (diagonal included). Without the shift every entry is positive and the
/// solver prefers assigning one speaker to every turn.
pub fn build_text_reward<S: Scalar>(p_sim: &Array2<S>) -> Array2<S> {
    let count = S::from_f64c((p_sim.len()) as f64);
    let mean = p_sim.iter().fold(S::zero(), |acc, &v| acc + v) / count;
    p_sim.mapv(|v| v - mean)
}

/// Vision reward: `B[c][j]` is the speaking probability of candidate `c`'s
/// labelled track in turn `j`, 0 when the face is absent, and the maximum
/// when several tracks of one candidate appear in the same turn.
pub fn build_vision_reward(session: &Session, candidates: &[CharacterId]) -> Result<Matrix> {
    let l = candidates.len();
    let m = session.turns.len();
    let mut b = Array2::zeros((l, m));
    for (j, turn) in session.turns.iter().enumerate() {
        for track in &turn.tracks {
            let Some(label) = &track.label else { continue };
            let c = candidates.iter().position(|cand| cand == label).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "labelled track '{label}' in turn {j} is not in the candidate set"
                ))
            })?;
            let prob = track.speaking_prob.ok_or_else(|| {
                Error::invariant(
                    format!("session '{}' turn {j}", session.source_id),
                    format!("labelled track '{label}' has no speaking_prob"),
                )
            })?;
            if prob > b[(c, j)] {
                b[(c, j)] = prob;
            }
        }
    }
    Ok(b)
}

fn check_choice<S: Scalar>(inst: &RewardInstance<S>, choice: &[usize]) -> Result<()> {
    if choice.len() != inst.turns() {
        return Err(Error::Shape(format!(
            "assignment has {} entries for {} turns",
            choice.len(),
            inst.turns()
        )));
    }
    let l = inst.candidates.len();
    if let Some(&bad) = choice.iter().find(|&&c| c >= l) {
        return Err(Error::InvalidInput(format!(
            "candidate index {bad} out of range for {l} candidates"
        )));
    }
    Ok(())
}

/// Objective value of an assignment.
pub fn objective<S: Scalar>(inst: &RewardInstance<S>, choice: &[usize]) -> Result<S> {
    check_choice(inst, choice)?;
    Ok(objective_unchecked(inst, choice))
}

/// Canonical evaluation used by every solver, so equal assignments always
/// produce bit-identical objective values.
fn objective_unchecked<S: Scalar>(inst: &RewardInstance<S>, choice: &[usize]) -> S {
    let m = inst.turns();
    let mut linear = S::zero();
    for (i, &c) in choice.iter().enumerate() {
        linear += inst.b[(c, i)];
    }
    let mut quadratic = S::zero();
    for i in 0..m {
        for j in 0..m {
            if i != j && choice[i] == choice[j] {
                quadratic += inst.a[(i, j)];
            }
        }
    }
    (S::one() - inst.alpha) * quadratic + inst.alpha * linear
}

/// Exhaustive enumeration of all `l^m` assignments.
///
/// Fails upfront when `l^m` exceeds `budget`; ties resolve to the
/// lexicographically smallest index sequence.
pub fn solve_exact<S: Scalar>(inst: &RewardInstance<S>, budget: u64) -> Result<Assignment<S>> {
    let m = inst.turns();
    let l = inst.candidates.len();
    let required = (l as u128)
        .checked_pow(m as u32)
        .ok_or(Error::BudgetExceeded { required: u128::MAX, budget })?;
    if required > u128::from(budget) {
        return Err(Error::BudgetExceeded { required, budget });
    }

    let mut x = vec![0usize; m];
    let mut best_x = x.clone();
    let mut best = objective_unchecked(inst, &x);
    'enumeration: loop {
        // Advance the odometer; most significant digit first gives
        // lexicographic visiting order.
        let mut pos = m;
        loop {
            if pos == 0 {
                break 'enumeration;
            }
            pos -= 1;
            x[pos] += 1;
            if x[pos] < l {
                break;
            }
            x[pos] = 0;
        }
        let value = objective_unchecked(inst, &x);
        if value > best {
            best = value;
            best_x.copy_from_slice(&x);
        }
    }
    Ok(Assignment {
        choice: best_x,
        objective: best,
        method: SolveMethod::Enumeration,
    })
}

/// Exact branch-and-bound over turns.
///
/// The bound at a partial assignment adds, per unassigned turn, the best
/// linear reward plus every non-negative pair reward the turn could still
/// collect; leaves are re-scored with the canonical objective so results
/// agree with [`solve_exact`] exactly, including tie-breaking.
pub fn solve_bnb<S: Scalar>(inst: &RewardInstance<S>) -> Assignment<S> {
    let m = inst.turns();
    let l = inst.candidates.len();
    let alpha = inst.alpha;
    let one_minus = S::one() - alpha;

    // pair_gain[i][j] = max(0, a_ij + a_ji), the optimistic reward of
    // co-assigning turns i and j.
    let mut pair_gain = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                pair_gain[(i, j)] = (inst.a[(i, j)] + inst.a[(j, i)]).max(S::zero());
            }
        }
    }
    let col_max: Vec<S> = (0..m)
        .map(|i| (0..l).map(|c| inst.b[(c, i)]).fold(S::neg_infinity(), S::max))
        .collect();

    // tail_lin[k] = sum_{i >= k} col_max[i]
    let mut tail_lin = vec![S::zero(); m + 1];
    for k in (0..m).rev() {
        tail_lin[k] = tail_lin[k + 1] + col_max[k];
    }
    // future[k] = sum_{k <= i < j} pair_gain[i][j]
    let mut future = vec![S::zero(); m + 1];
    for k in (0..m).rev() {
        let mut row = S::zero();
        for j in (k + 1)..m {
            row += pair_gain[(k, j)];
        }
        future[k] = future[k + 1] + row;
    }
    // cross_sum[k] = sum_{i >= k} sum_{j < k} pair_gain[i][j]
    let mut cross = Array2::<S>::zeros((m, m + 1));
    for i in 0..m {
        for k in 1..=m {
            let extra = if k - 1 == i { S::zero() } else { pair_gain[(i, k - 1)] };
            cross[(i, k)] = cross[(i, k - 1)] + extra;
        }
    }
    let cross_sum: Vec<S> = (0..=m)
        .map(|k| (k..m).map(|i| cross[(i, k)]).fold(S::zero(), |acc, v| acc + v))
        .collect();
    // Assignment-independent optimistic completion per depth.
    let tail_bound: Vec<S> = (0..=m)
        .map(|k| alpha * tail_lin[k] + one_minus * (future[k] + cross_sum[k]))
        .collect();

    struct Search<'a, S> {
        inst: &'a RewardInstance<S>,
        pair_sum: Array2<S>,
        tail_bound: &'a [S],
        best: S,
        best_x: Vec<usize>,
        x: Vec<usize>,
    }

    impl<S: Scalar> Search<'_, S> {
        fn dfs(&mut self, depth: usize, quad_acc: S, lin_acc: S) {
            let m = self.inst.turns();
            if depth == m {
                let value = objective_unchecked(self.inst, &self.x);
                if value > self.best {
                    self.best = value;
                    self.best_x.copy_from_slice(&self.x);
                }
                return;
            }
            let alpha = self.inst.alpha;
            let achieved = (S::one() - alpha) * quad_acc + alpha * lin_acc;
            let ub = achieved + self.tail_bound[depth];
            let margin = S::from_f64c(1e-9) * (S::one() + ub.abs() + self.best.abs());
            if ub <= self.best - margin {
                return;
            }
            for c in 0..self.inst.candidates.len() {
                self.x[depth] = c;
                let mut quad = quad_acc;
                for j in 0..depth {
                    if self.x[j] == c {
                        quad += self.pair_sum[(depth, j)];
                    }
                }
                let lin = lin_acc + self.inst.b[(c, depth)];
                self.dfs(depth + 1, quad, lin);
            }
        }
    }

    let mut pair_sum = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                pair_sum[(i, j)] = inst.a[(i, j)] + inst.a[(j, i)];
            }
        }
    }
    let mut search = Search {
        inst,
        pair_sum,
        tail_bound: &tail_bound,
        best: S::neg_infinity(),
        best_x: vec![0; m],
        x: vec![0; m],
    };
    search.dfs(0, S::zero(), S::zero());

    Assignment {
        choice: search.best_x,
        objective: search.best,
        method: SolveMethod::BranchAndBound,
    }
}

/// Per-turn argmax of the vision reward, lowest index on ties.
fn greedy_choice<S: Scalar>(inst: &RewardInstance<S>) -> Vec<usize> {
    let l = inst.candidates.len();
    (0..inst.turns())
        .map(|i| {
            let mut best = 0usize;
            for c in 1..l {
                if inst.b[(c, i)] > inst.b[(best, i)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Best-improvement single-turn reassignment until a local optimum or the
/// iteration cap. Returns the final choice and objective.
fn local_search<S: Scalar>(
    inst: &RewardInstance<S>,
    mut x: Vec<usize>,
    iterations: usize,
) -> (Vec<usize>, S) {
    let m = inst.turns();
    let l = inst.candidates.len();
    let mut current = objective_unchecked(inst, &x);
    for _ in 0..iterations {
        let mut best_move: Option<(usize, usize, S)> = None;
        for turn in 0..m {
            let original = x[turn];
            for c in 0..l {
                if c == original {
                    continue;
                }
                x[turn] = c;
                let value = objective_unchecked(inst, &x);
                if value > current && best_move.map_or(true, |(_, _, v)| value > v) {
                    best_move = Some((turn, c, value));
                }
            }
            x[turn] = original;
        }
        match best_move {
            Some((turn, c, value)) => {
                x[turn] = c;
                current = value;
            }
            None => break,
        }
    }
    (x, current)
}

/// Greedy initialization followed by best-improvement local search.
///
/// The result never scores below the greedy start. `seed` drives the
/// restarts of [`solve_heuristic_restarts`]; the plain call is deterministic.
pub fn solve_heuristic<S: Scalar>(
    inst: &RewardInstance<S>,
    seed: u64,
    iterations: usize,
) -> Result<Assignment<S>> {
    solve_heuristic_restarts(inst, seed, iterations, 0)
}

/// [`solve_heuristic`] plus `restarts` extra runs from seeded random
/// assignments, keeping the best result (first found wins ties).
pub fn solve_heuristic_restarts<S: Scalar>(
    inst: &RewardInstance<S>,
    seed: u64,
    iterations: usize,
    restarts: usize,
) -> Result<Assignment<S>> {
    if iterations < 1 {
        return Err(Error::InvalidInput("iterations must be >= 1".into()));
    }
    let l = inst.candidates.len();
    let (mut best_x, mut best) = local_search(inst, greedy_choice(inst), iterations);
    let mut rng = seeded_rng(seed);
    for _ in 0..restarts {
        let start: Vec<usize> = (0..inst.turns()).map(|_| rng.random_range(0..l)).collect();
        let (x, value) = local_search(inst, start, iterations);
        if value > best {
            best = value;
            best_x = x;
        }
    }
    Ok(Assignment {
        choice: best_x,
        objective: best,
        method: SolveMethod::LocalSearch,
    })
}

/// Solver selection for the identification pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    BranchAndBound,
    LocalSearch,
}

/// Configuration for [`identify_speakers`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub alpha: Real,
    pub solver: SolverKind,
    /// Enumeration budget for [`SolverKind::Exact`].
    pub budget: u64,
    /// Local-search iteration cap.
    pub iterations: usize,
    /// Local-search restarts.
    pub restarts: usize,
    pub seed: u64,
    /// Used only when a session has no labelled faces at all.
    pub fallback_roster: Vec<CharacterId>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            alpha: DEFAULT_ALPHA_FRAME,
            solver: SolverKind::BranchAndBound,
            budget: DEFAULT_BUDGET,
            iterations: 100,
            restarts: 8,
            seed: 0,
            fallback_roster: Vec::new(),
        }
    }
}

impl IdentifyConfig {
    /// Copy with the per-session seed for session `index`, the derivation
    /// evaluation harnesses use so results stay order-independent.
    pub fn for_session(&self, index: usize) -> Self {
        IdentifyConfig {
            seed: derive_seed(self.seed, index as u64),
            ..self.clone()
        }
    }
}

/// Dispatches to the configured solver.
pub fn solve(inst: &RewardInstance<Real>, cfg: &IdentifyConfig) -> Result<Assignment<Real>> {
    match cfg.solver {
        SolverKind::Exact => solve_exact(inst, cfg.budget),
        SolverKind::BranchAndBound => Ok(solve_bnb(inst)),
        SolverKind::LocalSearch => {
            solve_heuristic_restarts(inst, cfg.seed, cfg.iterations, cfg.restarts)
        }
    }
}

/// Pairwise same-speaker ground truth as a 0/1 similarity source, standing
/// in for text-model outputs in the oracle-text setting.
pub fn ground_truth_similarity(session: &Session) -> Result<Matrix> {
    let m = session.turns.len();
    let mut y = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let (a, b) = (&session.turns[i].speaker, &session.turns[j].speaker);
            match (a, b) {
                (Some(a), Some(b)) => {
                    if a == b {
                        y[(i, j)] = 1.0;
                    }
                }
                _ => {
                    return Err(Error::invariant(
                        format!("session '{}'", session.source_id),
                        "ground-truth similarity needs a speaker on every turn",
                    ))
                }
            }
        }
    }
    Ok(y)
}

/// Outcome of identifying one session's speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct Identified {
    pub speakers: Vec<CharacterId>,
    /// Objective of the solved instance; absent when the fallback roster
    /// was used.
    pub objective: Option<Real>,
    pub method: Option<SolveMethod>,
}

/// Identifies one speaker per turn of a session.
///
/// Builds the reward instance from `p_sim` and the session's labelled
/// tracks, solves it, and maps candidate indices back to names. When the
/// session has no labelled faces the speakers are drawn uniformly (seeded)
/// from the fallback roster.
pub fn identify_speakers_detailed(
    session: &Session,
    p_sim: &Matrix,
    cfg: &IdentifyConfig,
) -> Result<Identified> {
    let m = session.turns.len();
    if p_sim.nrows() != m || p_sim.ncols() != m {
        return Err(Error::Shape(format!(
            "similarity matrix is {}x{} for a {m}-turn session",
            p_sim.nrows(),
            p_sim.ncols()
        )));
    }
    let candidates = candidate_set(session);
    if candidates.is_empty() {
        if cfg.fallback_roster.is_empty() {
            return Err(Error::InvalidInput(format!(
                "session '{}' has no labelled faces and no fallback roster was given",
                session.source_id
            )));
        }
        let mut rng = seeded_rng(cfg.seed);
        let speakers = (0..m)
            .map(|_| cfg.fallback_roster[rng.random_range(0..cfg.fallback_roster.len())].clone())
            .collect();
        return Ok(Identified {
            speakers,
            objective: None,
            method: None,
        });
    }
    let a = build_text_reward(p_sim);
    let b = build_vision_reward(session, &candidates)?;
    let inst = RewardInstance::new(candidates, a, b, cfg.alpha)?;
    let assignment = solve(&inst, cfg)?;
    Ok(Identified {
        speakers: assignment.speakers(inst.candidates()),
        objective: Some(assignment.objective),
        method: Some(assignment.method),
    })
}

/// [`identify_speakers_detailed`], speakers only.
pub fn identify_speakers(
    session: &Session,
    p_sim: &Matrix,
    cfg: &IdentifyConfig,
) -> Result<Vec<CharacterId>> {
    Ok(identify_speakers_detailed(session, p_sim, cfg)?.speakers)
}

/// Micro-averaged per-turn exact-match accuracy.
pub fn accuracy(predictions: &[Vec<CharacterId>], sessions: &[Session]) -> Result<Real> {
    if predictions.len() != sessions.len() {
        return Err(Error::Shape(format!(
            "{} prediction lists for {} sessions",
            predictions.len(),
            sessions.len()
        )));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (predicted, session) in predictions.iter().zip(sessions) {
        if predicted.len() != session.turns.len() {
            return Err(Error::Shape(format!(
                "session '{}': {} predictions for {} turns",
                session.source_id,
                predicted.len(),
                session.turns.len()
            )));
        }
        for (choice, turn) in predicted.iter().zip(&session.turns) {
            let gold = turn.speaker.as_ref().ok_or_else(|| {
                Error::invariant(
                    format!("session '{}'", session.source_id),
                    "turn has no gold speaker label",
                )
            })?;
            total += 1;
            if choice == gold {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no turns to evaluate".into()));
    }
    Ok(correct as Real / total as Real)
}

/// Identifies speakers for every session with per-session derived seeds, so
/// results do not depend on evaluation order.
pub fn identify_all_detailed(
    sessions: &[Session],
    psims: &[Matrix],
    cfg: &IdentifyConfig,
) -> Result<Vec<Identified>> {
    if sessions.len() != psims.len() {
        return Err(Error::Shape(format!(
            "{} similarity matrices for {} sessions",
            psims.len(),
            sessions.len()
        )));
    }
    sessions
        .iter()
        .zip(psims)
        .enumerate()
        .map(|(idx, (session, p_sim))| {
            identify_speakers_detailed(session, p_sim, &cfg.for_session(idx))
        })
        .collect()
}

/// [`identify_all_detailed`], speakers only.
pub fn identify_all(
    sessions: &[Session],
    psims: &[Matrix],
    cfg: &IdentifyConfig,
) -> Result<Vec<Vec<CharacterId>>> {
    Ok(identify_all_detailed(sessions, psims, cfg)?
        .into_iter()
        .map(|identified| identified.speakers)
        .collect())
}

/// Accuracy of [`identify_all`] per grid value of alpha.
///
/// At `alpha = 0` the result equals a text-only pipeline, at `alpha = 1` a
/// vision-only pipeline.
pub fn alpha_sweep(
    sessions: &[Session],
    psims: &[Matrix],
    grid: &[Real],
    cfg: &IdentifyConfig,
) -> Result<Vec<(Real, Real)>> {
    if let Some(bad) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidInput(format!("alpha {bad} outside [0, 1]")));
    }
    grid.iter()
        .map(|&alpha| {
            let sweep_cfg = IdentifyConfig { alpha, ..cfg.clone() };
            let predictions = identify_all(sessions, psims, &sweep_cfg)?;
            Ok((alpha, accuracy(&predictions, sessions)?))
        })
        .collect()
}

/// Groups indices by equal key: each class sorted, classes ordered by first
/// member. Two assignments induce the same partition exactly when this
/// output matches.
pub fn partition_classes<K: PartialEq>(keys: &[K]) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        match classes
            .iter_mut()
            .find(|class| keys[class[0]] == *key)
        {
            Some(class) => class.push(i),
            None => classes.push(vec![i]),
        }
    }
    classes
}

/// Track key used by M1 score tables: `"<turn>:<track>"`.
pub fn track_key(turn: usize, track: usize) -> String {
    format!("{turn}:{track}")
}

/// Extracts a session's speaking probabilities into the score-table
/// container (rows keyed by [`track_key`], one `p_speak` column).
pub fn extract_m1_scores(session: &Session) -> Result<ScoreTable> {
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (ti, turn) in session.turns.iter().enumerate() {
        for (ki, track) in turn.tracks.iter().enumerate() {
            if let Some(p) = track.speaking_prob {
                rows.push(track_key(ti, ki));
                values.push(vec![p]);
            }
        }
    }
    ScoreTable::new(rows, vec!["p_speak".into()], values)
}

/// Applies an external M1 score table to a session's tracks.
pub fn apply_m1_scores(session: &mut Session, table: &ScoreTable) -> Result<()> {
    if table.cols().len() != 1 {
        return Err(Error::Shape(format!(
            "M1 score table must have exactly one column, got {}",
            table.cols().len()
        )));
    }
    for (row, value) in table.rows().iter().zip(table.values()) {
        let (turn_str, track_str) = row.split_once(':').ok_or_else(|| {
            Error::InvalidInput(format!("M1 row key '{row}' is not '<turn>:<track>'"))
        })?;
        let (ti, ki): (usize, usize) = match (turn_str.parse(), track_str.parse()) {
            (Ok(t), Ok(k)) => (t, k),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "M1 row key '{row}' is not '<turn>:<track>'"
                )))
            }
        };
        let prob = value[0];
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidInput(format!(
                "M1 probability {prob} for '{row}' outside [0, 1]"
            )));
        }
        let track = session
            .turns
            .get_mut(ti)
            .and_then(|turn| turn.tracks.get_mut(ki))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "M1 row key '{row}' does not name a track in session '{}'",
                    session.source_id
                ))
            })?;
        track.speaking_prob = Some(prob);
    }
    Ok(())
}
