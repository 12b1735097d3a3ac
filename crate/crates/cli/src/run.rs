//! Subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use mmc_core::corpus::{
    corpus_statistics, load_score_table, load_score_tables, load_sessions_with, save_score_tables,
    save_sessions, ScoreTable, Session, StatsOptions, ValidateOptions,
};
use mmc_core::head::{
    head_forward, load_head_params, pairwise_accuracy, save_head_params, train_head, HeadExample,
    LabelMatrix, Optimizer, TrainConfig,
};
use mmc_core::labeler::{label_track, load_prototype_bank};
use mmc_core::respond::{
    build_candidates, load_candidates, perturb_speakers, save_candidates, select_by_score,
    selection_accuracy, PerturbMode,
};
use mmc_core::rng::derive_seed;
use mmc_core::sessions::{load_roster, make_noisy, slide_windows};
use mmc_core::solver::{
    accuracy, alpha_sweep, apply_m1_scores, ground_truth_similarity, identify_speakers_detailed,
    Identified, IdentifyConfig, SolveMethod, SolverKind,
};
use mmc_core::synth::{generate_corpus, GeneratorSpec, ROSTER_NAMES};
use mmc_core::tracks::{clean_tracks, load_detections, load_tracks, merge_tracks, save_tracks};
use mmc_core::{Matrix, Real};

use crate::report::{load_record, render, save_record, sweep_tsv, ReportRecord};
use crate::{Cli, Command, RespondEvalCommand};

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Tracks(args) => tracks(args),
        Command::Label(args) => label(args),
        Command::Sessions(args) => sessions(args),
        Command::Noisy(args) => noisy(args),
        Command::TrainHead(args) => train(args),
        Command::Solve(args) => solve(args, cli.jobs),
        Command::SweepAlpha(args) => sweep(args, cli.jobs),
        Command::RespondEval(command) => respond(command),
        Command::Synth(args) => synth(args),
        Command::Stats(args) => stats(args),
        Command::Report(args) => report(args),
    }
}

fn ingest(args: &crate::IngestArgs) -> Result<()> {
    let opts = ValidateOptions {
        max_track_gap: args.max_track_gap,
        roster: args.roster.as_ref().map(load_roster).transpose()?,
        ..ValidateOptions::default()
    };
    let sessions = load_sessions_with(&args.input, &opts)?;
    let turns: usize = sessions.iter().map(|s| s.turns.len()).sum();
    println!("sessions: {}", sessions.len());
    println!("turns: {turns}");
    if let Some(out) = &args.out {
        save_sessions(&sessions, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn tracks(args: &crate::TracksArgs) -> Result<()> {
    let detections = load_detections(&args.detections)?;
    let raw = merge_tracks(&detections, args.iou_threshold, args.max_gap)?;
    let merged = raw.len();
    let cleaned = clean_tracks(raw, args.min_len)?;
    println!("detections: {}", detections.len());
    println!("tracks: {merged} merged, {} after cleaning", cleaned.len());
    save_tracks(&cleaned, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn label(args: &crate::LabelArgs) -> Result<()> {
    let tracks = load_tracks(&args.tracks)?;
    let bank = load_prototype_bank(&args.prototypes)?;
    let mut labelled = Vec::new();
    let mut discarded = 0usize;
    for mut track in tracks {
        match label_track(&track, &bank, args.threshold, args.top_k)? {
            Some(character) => {
                track.label = Some(character);
                labelled.push(track);
            }
            None if args.keep_unlabelled => {
                track.label = None;
                labelled.push(track);
            }
            None => discarded += 1,
        }
    }
    println!("labelled: {}", labelled.iter().filter(|t| t.label.is_some()).count());
    println!("discarded: {discarded}");
    save_tracks(&labelled, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn sessions(args: &crate::SessionsArgs) -> Result<()> {
    let streams = load_sessions_with(&args.input, &ValidateOptions::default())?;
    let roster = load_roster(&args.roster)?;
    let mut selected = Vec::new();
    for stream in &streams {
        selected.extend(slide_windows(
            &stream.source_id,
            &stream.turns,
            args.window_size,
            &roster,
            args.max_gap_seconds,
        )?);
    }
    println!("streams: {}", streams.len());
    println!("sessions: {}", selected.len());
    save_sessions(&selected, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn noisy(args: &crate::NoisyArgs) -> Result<()> {
    let sessions = load_sessions_with(&args.input, &ValidateOptions::default())?;
    let noisy: Vec<Session> = sessions
        .iter()
        .enumerate()
        .map(|(idx, session)| make_noisy(session, args.noise_fraction, derive_seed(args.seed, idx as u64)))
        .collect::<mmc_core::Result<_>>()?;
    println!("seed: {}", args.seed);
    println!("sessions: {}", noisy.len());
    save_sessions(&noisy, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn load_embedding_tables(path: &Path, sessions: &[Session]) -> Result<Vec<Vec<Array1<Real>>>> {
    let tables = load_score_tables(path)?;
    if tables.len() != sessions.len() {
        bail!(
            "{} embedding tables for {} sessions in {}",
            tables.len(),
            sessions.len(),
            path.display()
        );
    }
    tables
        .iter()
        .zip(sessions)
        .enumerate()
        .map(|(idx, (table, session))| {
            if table.rows().len() != session.turns.len() {
                bail!(
                    "embedding table {idx} has {} rows for {} turns",
                    table.rows().len(),
                    session.turns.len()
                );
            }
            Ok(table
                .values()
                .iter()
                .map(|row| Array1::from_vec(row.clone()))
                .collect())
        })
        .collect()
}

fn train(args: &crate::TrainHeadArgs) -> Result<()> {
    let sessions = load_sessions_with(&args.sessions, &ValidateOptions::default())?;
    let embeddings = load_embedding_tables(&args.embeddings, &sessions)?;
    let dataset: Vec<HeadExample<Real>> = sessions
        .iter()
        .zip(embeddings)
        .map(|(session, embeddings)| {
            let speakers = session
                .turns
                .iter()
                .map(|t| {
                    t.speaker.clone().ok_or_else(|| {
                        mmc_core::Error::invariant(
                            format!("session '{}'", session.source_id),
                            "training needs a speaker on every turn",
                        )
                    })
                })
                .collect::<mmc_core::Result<Vec<_>>>()?;
            Ok(HeadExample {
                embeddings,
                labels: LabelMatrix::from_speakers(&speakers),
            })
        })
        .collect::<Result<_>>()?;

    let optimizer = match args.optimizer.as_str() {
        "sgd" => Optimizer::Sgd,
        "adam" => Optimizer::adam(),
        other => bail!("unknown optimizer '{other}' (expected sgd or adam)"),
    };
    let config = TrainConfig {
        hidden_dim: args.hidden,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        optimizer,
    };
    let outcome = train_head(&dataset, &config)?;
    let train_accuracy = pairwise_accuracy(&outcome.params, &dataset, 0.5)?;
    println!("seed: {}", args.seed);
    println!("epochs: {}", outcome.loss_trace.len());
    println!("final loss: {:.6}", outcome.loss_trace.last().copied().unwrap_or(f64::NAN));
    println!("train pairwise accuracy: {:.2}%", train_accuracy * 100.0);
    save_head_params(&outcome.params, &args.params_out)?;
    println!("wrote {}", args.params_out.display());
    if let Some(trace_out) = &args.trace_out {
        let mut text = String::from("epoch\tloss\n");
        for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
            text.push_str(&format!("{epoch}\t{loss}\n"));
        }
        fs::write(trace_out, text).with_context(|| format!("writing {}", trace_out.display()))?;
        println!("wrote {}", trace_out.display());
    }
    Ok(())
}

struct PsimSource<'a> {
    psim: &'a Option<PathBuf>,
    params: &'a Option<PathBuf>,
    embeddings: &'a Option<PathBuf>,
    text_oracle: bool,
}

fn resolve_psims(source: &PsimSource<'_>, sessions: &[Session]) -> Result<Vec<Matrix>> {
    if let Some(path) = source.psim {
        let tables = load_score_tables(path)?;
        if tables.len() != sessions.len() {
            bail!(
                "{} similarity tables for {} sessions in {}",
                tables.len(),
                sessions.len(),
                path.display()
            );
        }
        return Ok(tables.iter().map(ScoreTable::to_matrix).collect());
    }
    if let Some(path) = source.params {
        let params = load_head_params(path)?;
        let embeddings_path = source
            .embeddings
            .as_ref()
            .context("--params requires --embeddings")?;
        let embeddings = load_embedding_tables(embeddings_path, sessions)?;
        return embeddings
            .iter()
            .map(|h| Ok(head_forward(&params, h)?.into_inner()))
            .collect();
    }
    if source.text_oracle {
        return sessions
            .iter()
            .map(|s| Ok(ground_truth_similarity(s)?))
            .collect();
    }
    bail!("one similarity source is required");
}

fn solver_kind(name: &str) -> Result<SolverKind> {
    Ok(match name {
        "exact" => SolverKind::Exact,
        "bnb" => SolverKind::BranchAndBound,
        "local" => SolverKind::LocalSearch,
        other => bail!("unknown solver '{other}' (expected exact, bnb, or local)"),
    })
}

/// Solves every session, optionally in parallel; per-session seeds keep the
/// output independent of the thread count.
fn identify_jobs(
    sessions: &[Session],
    psims: &[Matrix],
    cfg: &IdentifyConfig,
    jobs: usize,
) -> Result<Vec<Identified>> {
    if jobs == 1 {
        return Ok(mmc_core::solver::identify_all_detailed(sessions, psims, cfg)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    let results: mmc_core::Result<Vec<Identified>> = pool.install(|| {
        sessions
            .par_iter()
            .zip(psims.par_iter())
            .enumerate()
            .map(|(idx, (session, p_sim))| {
                identify_speakers_detailed(session, p_sim, &cfg.for_session(idx))
            })
            .collect()
    });
    Ok(results?)
}

#[derive(Serialize)]
struct AssignmentRecord<'a> {
    source_id: &'a str,
    speakers: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<Real>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<SolveMethod>,
}

fn all_turns_labelled(sessions: &[Session]) -> bool {
    sessions
        .iter()
        .all(|s| s.turns.iter().all(|t| t.speaker.is_some()))
}

fn solve(args: &crate::SolveArgs, jobs: usize) -> Result<()> {
    let mut sessions = load_sessions_with(&args.sessions, &ValidateOptions::default())?;
    if let Some(path) = &args.m1_scores {
        let tables = load_score_tables(path)?;
        if tables.len() != sessions.len() {
            bail!("{} M1 tables for {} sessions", tables.len(), sessions.len());
        }
        for (session, table) in sessions.iter_mut().zip(&tables) {
            apply_m1_scores(session, table)?;
        }
    }
    let source = PsimSource {
        psim: &args.psim,
        params: &args.params,
        embeddings: &args.embeddings,
        text_oracle: args.text_oracle,
    };
    let psims = resolve_psims(&source, &sessions)?;
    let cfg = IdentifyConfig {
        alpha: args.alpha,
        solver: solver_kind(&args.solver)?,
        budget: args.budget,
        iterations: args.iterations,
        restarts: args.restarts,
        seed: args.seed,
        fallback_roster: args
            .fallback_roster
            .as_ref()
            .map(load_roster)
            .transpose()?
            .unwrap_or_default(),
    };
    let identified = identify_jobs(&sessions, &psims, &cfg, jobs)?;

    println!("seed: {}", args.seed);
    println!("sessions: {}", sessions.len());
    let turns: usize = sessions.iter().map(|s| s.turns.len()).sum();
    let acc = if all_turns_labelled(&sessions) {
        let predictions: Vec<Vec<_>> = identified.iter().map(|i| i.speakers.clone()).collect();
        let value = accuracy(&predictions, &sessions)?;
        println!("accuracy: {:.2}%", value * 100.0);
        Some(value)
    } else {
        println!("accuracy: n/a (sessions lack gold speakers)");
        None
    };

    if let Some(out) = &args.assignments_out {
        let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        let mut writer = std::io::BufWriter::new(file);
        for (session, identified) in sessions.iter().zip(&identified) {
            let record = AssignmentRecord {
                source_id: &session.source_id,
                speakers: identified.speakers.iter().map(|c| c.as_str()).collect(),
                objective: identified.objective,
                method: identified.method,
            };
            serde_json::to_writer(&mut writer, &record)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        println!("wrote {}", out.display());
    }
    if let Some(out) = &args.result_out {
        save_record(
            &ReportRecord::SpeakerId {
                label: args.label.clone(),
                accuracy: acc,
                turns,
                sessions: sessions.len(),
                alpha: args.alpha,
                solver: args.solver.clone(),
                seed: args.seed,
            },
            out,
        )?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn sweep(args: &crate::SweepAlphaArgs, jobs: usize) -> Result<()> {
    let mut sessions = load_sessions_with(&args.sessions, &ValidateOptions::default())?;
    if let Some(path) = &args.m1_scores {
        let tables = load_score_tables(path)?;
        if tables.len() != sessions.len() {
            bail!("{} M1 tables for {} sessions", tables.len(), sessions.len());
        }
        for (session, table) in sessions.iter_mut().zip(&tables) {
            apply_m1_scores(session, table)?;
        }
    }
    let source = PsimSource {
        psim: &args.psim,
        params: &args.params,
        embeddings: &args.embeddings,
        text_oracle: args.text_oracle,
    };
    let mut psims = resolve_psims(&source, &sessions)?;

    if args.holdout_fraction > 0.0 {
        if !(0.0..=1.0).contains(&args.holdout_fraction) {
            bail!("holdout fraction must be in [0, 1]");
        }
        let keep = ((sessions.len() as f64) * args.holdout_fraction).floor() as usize;
        if keep == 0 {
            bail!("holdout fraction keeps zero sessions");
        }
        let chosen =
            mmc_core::rng::choose_indices(derive_seed(args.seed, u64::MAX - 1), sessions.len(), keep);
        sessions = chosen.iter().map(|&i| sessions[i].clone()).collect();
        psims = chosen.iter().map(|&i| psims[i].clone()).collect();
        println!("holdout sessions: {}", sessions.len());
    }

    let cfg = IdentifyConfig {
        alpha: 0.0,
        solver: solver_kind(&args.solver)?,
        budget: args.budget,
        iterations: args.iterations,
        restarts: args.restarts,
        seed: args.seed,
        fallback_roster: args
            .fallback_roster
            .as_ref()
            .map(load_roster)
            .transpose()?
            .unwrap_or_default(),
    };
    // Grid points are independent; per-session parallelism happens inside.
    let series: Vec<(f64, f64)> = if jobs == 1 {
        alpha_sweep(&sessions, &psims, &args.grid, &cfg)?
    } else {
        args.grid
            .iter()
            .map(|&alpha| {
                let point_cfg = IdentifyConfig { alpha, ..cfg.clone() };
                let identified = identify_jobs(&sessions, &psims, &point_cfg, jobs)?;
                let predictions: Vec<Vec<_>> =
                    identified.iter().map(|i| i.speakers.clone()).collect();
                Ok((alpha, accuracy(&predictions, &sessions)?))
            })
            .collect::<Result<_>>()?
    };

    println!("seed: {}", args.seed);
    for (alpha, acc) in &series {
        println!("alpha {alpha:>5.2}: {:.2}%", acc * 100.0);
    }
    if let Some(out) = &args.out {
        save_record(
            &ReportRecord::AlphaSweep {
                label: args.label.clone(),
                seed: args.seed,
                series,
            },
            out,
        )?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn respond(command: &RespondEvalCommand) -> Result<()> {
    match command {
        RespondEvalCommand::Build(args) => {
            let sessions = load_sessions_with(&args.sessions, &ValidateOptions::default())?;
            let items = build_candidates(&sessions, args.negatives, args.seed)?;
            println!("seed: {}", args.seed);
            println!("items: {}", items.len());
            save_candidates(&items, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        RespondEvalCommand::Perturb(args) => {
            let sessions = load_sessions_with(&args.sessions, &ValidateOptions::default())?;
            let roster = load_roster(&args.roster)?;
            let mode: PerturbMode = args.mode.parse()?;
            let perturbed: Vec<Session> = sessions
                .iter()
                .enumerate()
                .map(|(idx, session)| {
                    // One corpus-wide name permutation; fresh draws per
                    // session otherwise.
                    let seed = match mode {
                        PerturbMode::Shuffled => args.seed,
                        _ => derive_seed(args.seed, idx as u64),
                    };
                    perturb_speakers(session, mode, seed, &roster)
                })
                .collect::<mmc_core::Result<_>>()?;
            println!("seed: {}", args.seed);
            println!("sessions: {}", perturbed.len());
            save_sessions(&perturbed, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        RespondEvalCommand::Select(args) => {
            let items = load_candidates(&args.candidates)?;
            let scores = load_score_table(&args.scores)?;
            if scores.rows().len() != items.len() {
                bail!(
                    "score table has {} rows for {} candidate items",
                    scores.rows().len(),
                    items.len()
                );
            }
            for (idx, item) in items.iter().enumerate() {
                if item.candidates.len() != scores.cols().len() {
                    bail!(
                        "item {idx} has {} candidates but the score table has {} columns",
                        item.candidates.len(),
                        scores.cols().len()
                    );
                }
            }
            let choices = select_by_score(&scores)?;
            let gold: Vec<usize> = items.iter().map(|i| i.gold_index).collect();
            let acc = selection_accuracy(&choices, &gold)?;
            println!("items: {}", items.len());
            println!("selection accuracy: {:.2}%", acc * 100.0);
            if let Some(out) = &args.choices_out {
                fs::write(out, format!("{}\n", serde_json::to_string(&choices)?))
                    .with_context(|| format!("writing {}", out.display()))?;
                println!("wrote {}", out.display());
            }
            if let Some(out) = &args.result_out {
                save_record(
                    &ReportRecord::ResponseSelection {
                        label: args.label.clone(),
                        accuracy: acc,
                        items: items.len(),
                        seed: 0,
                    },
                    out,
                )?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
    }
}

fn synth(args: &crate::SynthArgs) -> Result<()> {
    let spec = GeneratorSpec {
        sessions: args.sessions,
        turns_per_session: args.turns,
        roster_size: args.roster_size,
        cast_size: args.cast_size,
        p_face_present: args.p_face_present,
        p_background_face: args.p_background_face,
        p_vision_correct: args.p_vision_correct,
        sim_noise: args.sim_noise,
        embedding_dim: args.embedding_dim,
        embedding_spread: args.embedding_spread,
        name_mention_prob: args.name_mention_prob,
    };
    let corpus = generate_corpus(&spec, args.seed)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let path = |name: &str| args.out_dir.join(name);

    save_sessions(&corpus.sessions, path("sessions.jsonl"))?;
    save_score_tables(&corpus.psim_tables()?, path("psim.jsonl"))?;
    save_score_tables(&corpus.embedding_tables()?, path("embeddings.jsonl"))?;
    save_score_tables(&corpus.m1_tables()?, path("m1.jsonl"))?;
    fs::write(
        path("oracle.json"),
        format!("{}\n", serde_json::to_string_pretty(&corpus.oracle)?),
    )?;
    let roster_text: String = ROSTER_NAMES[..spec.roster_size]
        .iter()
        .map(|name| format!("{name}\n"))
        .collect();
    fs::write(path("roster.txt"), roster_text)?;

    println!("seed: {}", args.seed);
    println!("sessions: {}", corpus.sessions.len());
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

fn stats(args: &crate::StatsArgs) -> Result<()> {
    let sessions = load_sessions_with(&args.sessions, &ValidateOptions::default())?;
    let stats = corpus_statistics(&sessions, &StatsOptions { fps: args.fps })?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
        return Ok(());
    }
    println!("sessions:                      {}", stats.sessions);
    println!("unique turns:                  {}", stats.unique_turns);
    println!("words per utterance:           {:.2}", stats.mean_words_per_utterance);
    println!("speakers per session:          {:.2}", stats.mean_speakers_per_session);
    println!("face tracks per clip:          {:.2}", stats.mean_tracks_per_turn);
    println!("seconds per face track:        {:.2}", stats.mean_track_seconds);
    println!(
        "% speakers not in current clip: {:.2}",
        stats.frac_speaker_missing_current * 100.0
    );
    println!(
        "% speakers not in all clips:    {:.2}",
        stats.frac_speaker_missing_session * 100.0
    );
    Ok(())
}

fn report(args: &crate::ReportArgs) -> Result<()> {
    if args.inputs.is_empty() {
        bail!("no result records given");
    }
    let records: Vec<ReportRecord> = args
        .inputs
        .iter()
        .map(|path| load_record(path))
        .collect::<Result<_>>()?;
    let text = render(&records);
    print!("{text}");
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.txt"), &text)?;
        for record in &records {
            if let ReportRecord::AlphaSweep { label, series, .. } = record {
                let file = dir.join(format!("{}.tsv", sanitize(label)));
                fs::write(&file, sweep_tsv(series))?;
            }
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
