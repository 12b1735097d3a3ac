//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (visible with `--nocapture`).
//!
//! The solver agreement and pipeline criteria run against seeded random
//! instances and the synthetic benchmark; regression values are frozen from
//! their first derivation.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;

use mmc_core::corpus::CharacterId;
use mmc_core::head::{
    head_forward, head_gradient, head_loss, pairwise_accuracy, train_head, HeadExample,
    HeadGradient, HeadParams, LabelMatrix, TrainConfig,
};
use mmc_core::labeler::{cosine, label_track, validate_labels, PrototypeBank};
use mmc_core::respond::{
    apply_mapping, invert_mapping, select_by_score, selection_accuracy, shuffled_mapping,
};
use mmc_core::rng::seeded_rng;
use mmc_core::sessions::slide_windows;
use mmc_core::solver::{
    accuracy, alpha_sweep, build_text_reward, ground_truth_similarity, identify_all,
    partition_classes, solve_bnb, solve_exact, solve_heuristic_restarts, IdentifyConfig,
    RewardInstance, SolverKind, DEFAULT_BUDGET,
};
use mmc_core::synth::{generate_corpus, GeneratorSpec};
use mmc_core::corpus::{FaceObservation, FaceTrack, ScoreTable, Session, Turn};
use mmc_core::Real;

fn characters(names: &[&str]) -> Vec<CharacterId> {
    names.iter().map(|n| CharacterId::new(n).unwrap()).collect()
}

fn random_instance(seed: u64, forced_alpha: Option<Real>) -> RewardInstance<Real> {
    let mut rng = seeded_rng(seed);
    let m = rng.random_range(1..=8usize);
    let l = rng.random_range(1..=6usize);
    let a = Array2::from_shape_simple_fn((m, m), || rng.random_range(-0.5..0.5));
    let b = Array2::from_shape_simple_fn((l, m), || rng.random_range(0.0..1.0));
    let alphas = [0.0, 0.2, 0.5, 0.7, 0.8, 1.0];
    let alpha = forced_alpha.unwrap_or_else(|| alphas[rng.random_range(0..alphas.len())]);
    let names: Vec<CharacterId> = (0..l)
        .map(|i| CharacterId::new(&format!("c{i}")).unwrap())
        .collect();
    RewardInstance::new(names, a, b, alpha).unwrap()
}

/// Criterion 1 — solver exactness: branch-and-bound matches enumeration on
/// 1000 seeded instances with zero objective mismatches; restarted local
/// search is never above exact and closes the gap on >= 95%.
#[test]
fn criterion_1_solver_exactness() {
    let started = Instant::now();
    let total = 1000;
    let mut heuristic_exact = 0usize;
    for seed in 0..total {
        let inst = random_instance(seed, None);
        let exact = solve_exact(&inst, DEFAULT_BUDGET).unwrap();
        let bnb = solve_bnb(&inst);
        assert_eq!(bnb.objective, exact.objective, "seed {seed}: objective mismatch");
        assert_eq!(bnb.choice, exact.choice, "seed {seed}: tie-break mismatch");

        let heuristic = solve_heuristic_restarts(&inst, seed, 200, 20).unwrap();
        assert!(
            heuristic.objective <= exact.objective,
            "seed {seed}: heuristic above exact"
        );
        if heuristic.objective == exact.objective {
            heuristic_exact += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(
        heuristic_exact * 100 >= 95 * total as usize,
        "heuristic exact on {heuristic_exact}/{total}"
    );
    assert!(elapsed.as_secs() < 60, "criterion 1 took {elapsed:?}");
    println!(
        "criterion 1 PASS: 1000/1000 bnb exact, heuristic optimal on {heuristic_exact}/1000, {elapsed:?}"
    );
}

/// Criterion 2 — reduction identities: alpha = 1 is the per-column argmax of
/// the vision reward; alpha = 0 with ground-truth similarities recovers the
/// planted partition up to renaming on 100 synthetic sessions.
#[test]
fn criterion_2_reduction_identities() {
    for seed in 5000..5300u64 {
        let inst = random_instance(seed, Some(1.0));
        let solved = solve_exact(&inst, DEFAULT_BUDGET).unwrap();
        let b = inst.vision_reward();
        for turn in 0..inst.turns() {
            let mut best = 0usize;
            for c in 1..inst.candidates().len() {
                if b[(c, turn)] > b[(best, turn)] {
                    best = c;
                }
            }
            assert_eq!(solved.choice[turn], best, "seed {seed} turn {turn}");
        }
    }

    let spec = GeneratorSpec {
        sessions: 100,
        p_face_present: 1.0,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec, 91).unwrap();
    for session in &corpus.sessions {
        let p_sim = ground_truth_similarity(session).unwrap();
        let candidates = mmc_core::sessions::candidate_set(session);
        let a = build_text_reward(&p_sim);
        let b = mmc_core::solver::build_vision_reward(session, &candidates).unwrap();
        let inst = RewardInstance::new(candidates.clone(), a, b, 0.0).unwrap();
        let solved = solve_exact(&inst, DEFAULT_BUDGET).unwrap();
        let gold: Vec<&CharacterId> = session
            .turns
            .iter()
            .map(|t| t.speaker.as_ref().unwrap())
            .collect();
        assert_eq!(
            partition_classes(&solved.choice),
            partition_classes(&gold),
            "session {} partition mismatch",
            session.source_id
        );
    }
    println!("criterion 2 PASS: 300 argmax reductions, 100/100 partitions recovered");
}

/// Criterion 3 — mean subtraction rationale: with all-positive rewards the
/// exact solver collapses to a constant assignment; centering restores the
/// planted non-constant one.
#[test]
fn criterion_3_mean_subtraction() {
    let p_sim = ndarray::array![
        [0.9, 0.9, 0.1],
        [0.9, 0.9, 0.1],
        [0.1, 0.1, 0.9],
    ];
    let b = ndarray::array![[0.8, 0.7, 0.1], [0.1, 0.2, 0.8]];
    let candidates = characters(&["s1", "s2"]);
    let alpha = 0.1;

    let raw = RewardInstance::new(candidates.clone(), p_sim.clone(), b.clone(), alpha).unwrap();
    let raw_choice = solve_exact(&raw, DEFAULT_BUDGET).unwrap().choice;
    assert!(
        raw_choice.iter().all(|&c| c == raw_choice[0]),
        "raw similarities must collapse to one speaker, got {raw_choice:?}"
    );

    let centered =
        RewardInstance::new(candidates, build_text_reward(&p_sim), b, alpha).unwrap();
    let centered_choice = solve_exact(&centered, DEFAULT_BUDGET).unwrap().choice;
    assert_eq!(centered_choice, vec![0, 0, 1], "centering must recover the plant");
    println!("criterion 3 PASS: raw -> {raw_choice:?}, centered -> {centered_choice:?}");
}

fn finite_difference(
    params: &HeadParams<f64>,
    h: &[Array1<f64>],
    y: &LabelMatrix<f64>,
    step: f64,
) -> HeadGradient<f64> {
    let loss_at = |p: &HeadParams<f64>| {
        head_loss(head_forward(p, h).unwrap().as_array(), y).unwrap()
    };
    let probe = |plus: HeadParams<f64>, minus: HeadParams<f64>| {
        (loss_at(&plus) - loss_at(&minus)) / (2.0 * step)
    };
    let mut grad = HeadGradient::zeros_like(params);
    for r in 0..params.hidden_dim() {
        for c in 0..params.w1.ncols() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.w1[(r, c)] += step;
            minus.w1[(r, c)] -= step;
            grad.w1[(r, c)] = probe(plus, minus);
        }
    }
    for k in 0..params.hidden_dim() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.b1[k] += step;
        minus.b1[k] -= step;
        grad.b1[k] = probe(plus, minus);
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.w2[k] += step;
        minus.w2[k] -= step;
        grad.w2[k] = probe(plus, minus);
    }
    let mut plus = params.clone();
    let mut minus = params.clone();
    plus.b2 += step;
    minus.b2 -= step;
    grad.b2 = probe(plus, minus);
    grad
}

/// Criterion 4 — analytic gradients match central finite differences at step
/// 1e-5 with max relative error < 1e-4 over 100 random draws, in under 10 s.
#[test]
fn criterion_4_gradient_correctness() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let mut rng = seeded_rng(9000 + draw);
        let d = rng.random_range(1..=8usize);
        let m = rng.random_range(1..=5usize);
        let hidden = rng.random_range(1..=6usize);
        let params = HeadParams::<f64>::init(d, hidden, 77 + draw);
        let h: Vec<Array1<f64>> = (0..m)
            .map(|_| Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0)))
            .collect();
        let speakers: Vec<CharacterId> = (0..m)
            .map(|_| CharacterId::new(&format!("s{}", rng.random_range(0..3u8))).unwrap())
            .collect();
        let y = LabelMatrix::from_speakers(&speakers);

        let (_, analytic) = head_gradient(&params, &h, &y).unwrap();
        let numeric = finite_difference(&params, &h, &y, 1e-5);

        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        let mut draw_worst: f64 = rel(analytic.b2, numeric.b2);
        for (a, n) in analytic.w1.iter().zip(numeric.w1.iter()) {
            draw_worst = draw_worst.max(rel(*a, *n));
        }
        for (a, n) in analytic.b1.iter().zip(numeric.b1.iter()) {
            draw_worst = draw_worst.max(rel(*a, *n));
        }
        for (a, n) in analytic.w2.iter().zip(numeric.w2.iter()) {
            draw_worst = draw_worst.max(rel(*a, *n));
        }
        assert!(draw_worst < 1e-4, "draw {draw}: relative error {draw_worst}");
        worst = worst.max(draw_worst);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "criterion 4 took {elapsed:?}");
    println!("criterion 4 PASS: max relative error {worst:.3e} over 100 draws, {elapsed:?}");
}

/// Criterion 5 — learnability: the separable synthetic task reaches >= 99%
/// pairwise accuracy at threshold 0.5 within the default training budget.
#[test]
fn criterion_5_learnability() {
    // Same-speaker turns share one-hot embeddings, others are orthogonal.
    let mut rng = seeded_rng(42);
    let speakers = ["a", "b", "c", "d"];
    let dataset: Vec<HeadExample<f64>> = (0..20)
        .map(|_| {
            let cast: Vec<usize> = (0..5).map(|_| rng.random_range(0..speakers.len())).collect();
            let ids: Vec<CharacterId> = cast
                .iter()
                .map(|&s| CharacterId::new(speakers[s]).unwrap())
                .collect();
            let embeddings = cast
                .iter()
                .map(|&s| {
                    let mut v = Array1::zeros(speakers.len());
                    v[s] = 1.0;
                    v
                })
                .collect();
            HeadExample {
                embeddings,
                labels: LabelMatrix::from_speakers(&ids),
            }
        })
        .collect();

    let outcome = train_head(&dataset, &TrainConfig::default()).unwrap();
    assert!(
        outcome.loss_trace.iter().all(|l| l.is_finite()),
        "loss trace must stay finite"
    );
    let acc = pairwise_accuracy(&outcome.params, &dataset, 0.5).unwrap();
    assert!(acc >= 0.99, "pairwise accuracy {acc}");
    println!(
        "criterion 5 PASS: pairwise accuracy {:.2}% after {} epochs",
        acc * 100.0,
        outcome.loss_trace.len()
    );
}

/// Criterion 6 — fusion benefit on the frozen benchmark: the best interior
/// alpha beats vision-only by >= 1 point and beats text-only. The full sweep
/// is regression-locked from its first derivation.
#[test]
fn criterion_6_fusion_benefit() {
    let spec = GeneratorSpec {
        sessions: 100,
        p_face_present: 0.9,
        p_vision_correct: 0.7,
        sim_noise: 0.2,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec, 20_260_809).unwrap();
    let grid: Vec<Real> = (0..=10).map(|i| i as Real / 10.0).collect();
    let cfg = IdentifyConfig {
        solver: SolverKind::BranchAndBound,
        ..IdentifyConfig::default()
    };
    let sweep = alpha_sweep(&corpus.sessions, &corpus.psim, &grid, &cfg).unwrap();

    // Frozen correct-turn counts out of 500 (first derivation).
    let frozen = [349, 439, 440, 440, 440, 439, 434, 428, 383, 360, 347];
    for ((alpha, acc), want) in sweep.iter().zip(frozen) {
        let correct = (acc * 500.0).round() as i64;
        assert_eq!(
            correct, want,
            "alpha {alpha}: regression moved ({correct} vs {want} correct turns)"
        );
    }

    let text_only = sweep.first().unwrap().1;
    let vision_only = sweep.last().unwrap().1;
    let best_interior = sweep[1..10]
        .iter()
        .map(|(_, acc)| *acc)
        .fold(Real::NEG_INFINITY, Real::max);
    assert!(
        best_interior >= vision_only + 0.01,
        "interior {best_interior} vs vision {vision_only}"
    );
    assert!(best_interior > text_only, "interior {best_interior} vs text {text_only}");
    println!(
        "criterion 6 PASS: text {:.1}%, vision {:.1}%, best interior {:.1}%",
        text_only * 100.0,
        vision_only * 100.0,
        best_interior * 100.0
    );
}

/// Criterion 8 — response-selection harness: oracle scores select perfectly;
/// i.i.d. random scores land within 3 binomial sigma of 10%; the shuffled
/// perturbation composed with its inverse is the identity.
#[test]
fn criterion_8_response_harness() {
    let items = 10_000usize;
    let candidates = 10usize;
    let cols: Vec<String> = (0..candidates).map(|c| c.to_string()).collect();
    let mut rng = seeded_rng(4242);
    let gold: Vec<usize> = (0..items).map(|_| rng.random_range(0..candidates)).collect();

    // Oracle scores: ground truth strictly lowest.
    let oracle_rows: Vec<Vec<Real>> = gold
        .iter()
        .map(|&g| (0..candidates).map(|c| if c == g { 0.5 } else { 2.0 + c as Real }).collect())
        .collect();
    let oracle = ScoreTable::new(
        (0..items).map(|i| i.to_string()).collect(),
        cols.clone(),
        oracle_rows,
    )
    .unwrap();
    let choices = select_by_score(&oracle).unwrap();
    assert_eq!(selection_accuracy(&choices, &gold).unwrap(), 1.0);

    // I.i.d. continuous random scores.
    let random_rows: Vec<Vec<Real>> = (0..items)
        .map(|_| (0..candidates).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let random = ScoreTable::new(
        (0..items).map(|i| i.to_string()).collect(),
        cols,
        random_rows,
    )
    .unwrap();
    let random_acc =
        selection_accuracy(&select_by_score(&random).unwrap(), &gold).unwrap();
    let sigma = (0.1 * 0.9 / items as Real).sqrt();
    assert!(
        (random_acc - 0.1).abs() <= 3.0 * sigma,
        "random accuracy {random_acc} outside 0.1 +- {}",
        3.0 * sigma
    );

    // Shuffled perturbation round trip on a corpus with name mentions.
    let spec = GeneratorSpec {
        sessions: 20,
        name_mention_prob: 0.8,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec, 8).unwrap();
    let roster = characters(&["alice", "bob", "carol", "dave", "erin", "frank"]);
    let mapping = shuffled_mapping(&roster, 31).unwrap();
    let inverse = invert_mapping(&mapping);
    for session in &corpus.sessions {
        let forward = apply_mapping(session, &mapping);
        let back = apply_mapping(&forward, &inverse);
        assert_eq!(&back, session, "{} not restored", session.source_id);
    }
    println!(
        "criterion 8 PASS: oracle 100%, random {:.2}% (target 10% +- {:.2}%), inverse identity on 20 sessions",
        random_acc * 100.0,
        300.0 * sigma
    );
}

/// Criterion 9 — labelling: with separated prototypes (intra >= 0.9,
/// inter <= 0.3, t = 0.6, k = 5) every track is labelled correctly, and one
/// planted mismatch in twenty matched pairs scores exactly 0.95.
#[test]
fn criterion_9_labeler_validator() {
    let names = ["alice", "bob", "carol", "dave", "erin", "frank"];
    let dim = names.len();
    let mut rng = seeded_rng(55);
    let mut perturbed_unit = |axis: usize| {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        for entry in v.iter_mut() {
            *entry += rng.random_range(-0.08..0.08);
        }
        v
    };

    let mut bank = PrototypeBank::new();
    let mut all_prototypes: Vec<(usize, Vec<Real>)> = Vec::new();
    for (axis, name) in names.iter().enumerate() {
        for _ in 0..20 {
            let v = perturbed_unit(axis);
            bank.insert(CharacterId::new(name).unwrap(), v.clone()).unwrap();
            all_prototypes.push((axis, v));
        }
    }
    // The construction must satisfy the stated separation.
    for (i, (axis_a, a)) in all_prototypes.iter().enumerate() {
        for (axis_b, b) in all_prototypes.iter().skip(i + 1) {
            let sim = cosine(a, b).unwrap();
            if axis_a == axis_b {
                assert!(sim >= 0.9, "intra-class cosine {sim}");
            } else {
                assert!(sim <= 0.3, "inter-class cosine {sim}");
            }
        }
    }

    let bbox = mmc_core::BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let mut correct = 0usize;
    let total = 60usize;
    for k in 0..total {
        let axis = k % dim;
        let observations = (0..3)
            .map(|frame| FaceObservation {
                frame_index: frame,
                bbox,
                embedding: Some(perturbed_unit(axis)),
            })
            .collect();
        let track = FaceTrack {
            label: None,
            speaking_prob: None,
            observations,
        };
        let label = label_track(&track, &bank, 0.6, 5).unwrap();
        if label == Some(CharacterId::new(names[axis]).unwrap()) {
            correct += 1;
        }
    }
    assert_eq!(correct, total, "labeling accuracy {correct}/{total}");

    // 20 matched pairs with exactly one planted name mismatch.
    let track_at = |name: &str, frame: usize| FaceTrack {
        label: Some(CharacterId::new(name).unwrap()),
        speaking_prob: None,
        observations: vec![FaceObservation {
            frame_index: frame,
            bbox,
            embedding: None,
        }],
    };
    let reference: Vec<FaceTrack> = (0..20).map(|i| track_at("alice", i)).collect();
    let mut auto = reference.clone();
    auto[13].label = Some(CharacterId::new("bob").unwrap());
    let report = validate_labels(&auto, &reference, 0.5).unwrap();
    assert_eq!(report.matched_pairs, 20);
    assert_eq!(report.accuracy(), 0.95);
    println!("criterion 9 PASS: 60/60 tracks labelled, planted mismatch scores 0.95");
}

/// Criterion 10 — windowing: `slide_windows` agrees with an independent
/// brute-force scan on 1000 random turn streams with zero disagreements.
#[test]
fn criterion_10_window_rules() {
    let roster = characters(&["a", "b", "c", "d", "e", "f"]);
    let stranger = CharacterId::new("stranger").unwrap();
    let mut disagreements = 0usize;
    for seed in 0..1000u64 {
        let mut rng = seeded_rng(70_000 + seed);
        let n = rng.random_range(1..=20usize);
        let m = if rng.random_range(0.0..1.0) < 0.5 { 5 } else { 8 };
        let mut turns: Vec<Turn> = Vec::with_capacity(n);
        let mut t = 0.0;
        for i in 0..n {
            let speaker = match rng.random_range(0..20u8) {
                0 => None,
                1 | 2 => Some(stranger.clone()),
                _ => Some(roster[rng.random_range(0..roster.len())].clone()),
            };
            let start = t;
            let end = start + rng.random_range(0.5..2.0);
            t = end + rng.random_range(0.0..12.0);
            turns.push(Turn {
                utterance: format!("turn {i}"),
                speaker,
                start_time: start,
                end_time: end,
                key_frame: None,
                tracks: vec![],
            });
        }

        let got = slide_windows("stream", &turns, m, &roster, 8.0).unwrap();

        // Independent scan, written directly from the two rules.
        let mut want: Vec<Session> = Vec::new();
        if turns.len() >= m {
            for start in 0..=(turns.len() - m) {
                let window = &turns[start..start + m];
                let mut ok = true;
                for turn in window {
                    match &turn.speaker {
                        Some(s) if roster.iter().any(|r| r == s) => {}
                        _ => ok = false,
                    }
                }
                for k in 1..m {
                    if !(window[k].start_time - window[k - 1].end_time < 8.0) {
                        ok = false;
                    }
                }
                if ok {
                    want.push(Session {
                        source_id: "stream".into(),
                        turns: window.to_vec(),
                    });
                }
            }
        }
        if got != want {
            disagreements += 1;
        }
    }
    assert_eq!(disagreements, 0);
    println!("criterion 10 PASS: 1000/1000 streams agree with the brute-force scan");
}

/// Pipeline sanity shared by several criteria: identify_all on a clean plant
/// is perfect at alpha = 1.
#[test]
fn noiseless_plant_end_to_end() {
    let spec = GeneratorSpec {
        sessions: 25,
        p_face_present: 1.0,
        p_vision_correct: 1.0,
        sim_noise: 0.0,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec, 17).unwrap();
    let cfg = IdentifyConfig { alpha: 1.0, ..IdentifyConfig::default() };
    let predictions = identify_all(&corpus.sessions, &corpus.psim, &cfg).unwrap();
    assert_eq!(accuracy(&predictions, &corpus.sessions).unwrap(), 1.0);
}
