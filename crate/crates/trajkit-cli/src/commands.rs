//! Subcommand implementations. Every command is deterministic given its
//! inputs, config and seed; data files never embed timestamps. Outputs are
//! written atomically (temp file + rename) so concurrent batch workers
//! cannot interleave.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use trajkit_core::io::{
    read_matches, read_pair_stats, read_trajectory, write_matches, write_pair_stats,
    write_trajectory, MatchSet, PairStats, SparseModel,
};
use trajkit_core::metrics::{evaluate, reconstruction_rate};
use trajkit_core::pose::Trajectory;
use trajkit_core::repair::{repair_and_revalidate, RepairOutcome, VerdictRecord};
use trajkit_core::retriever::{
    build_and_encode_queries, encode_memory, reconstruct_memory, retrieve, synth_memory_features,
    QueryPose, RetrieverConfig, RetrieverDims, RetrieverParams,
};
use trajkit_core::synth::{
    clean_pair_stats, generate_with_config, inject, trajectory_matches, CorruptionKind,
    CorruptionSpec, SynthConfig,
};
use trajkit_core::verify::{run_checks, write_check_report, CheckReport};
use trajkit_core::window::{
    diversity_score, extract_clips, sample_local_window, seconds_to_steps, select_query_pose,
    segment, WindowRecord,
};
use trajkit_core::Intrinsics;

use crate::config::PipelineConfig;

/// Exit status contract: clean, flagged/discarded, input error.
pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_FLAGGED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Write through a temp file in the target directory, then rename.
fn write_atomic(path: &Path, build: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    build(&mut buf)?;
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)
        .with_context(|| format!("creating output directory {}", parent.display()))?;
    let tmp = parent.join(format!(
        ".tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, &buf).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// One video's inputs: a COLMAP model directory plus record streams.
pub struct VideoInputs {
    pub model: SparseModel,
    pub trajectory: Trajectory,
    pub stats: Vec<PairStats>,
    pub matches: Vec<MatchSet>,
}

pub fn load_video(
    model_dir: &Path,
    stats_path: &Path,
    matches_path: Option<&Path>,
) -> Result<VideoInputs> {
    let model = SparseModel::from_dir(model_dir)
        .with_context(|| format!("loading sparse model from {}", model_dir.display()))?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    let trajectory = model
        .trajectory(None)
        .context("assembling trajectory from registered images")?;
    let stats = read_pair_stats(BufReader::new(fs::File::open(stats_path).with_context(
        || format!("opening pair stats {}", stats_path.display()),
    )?))
    .with_context(|| format!("parsing pair stats {}", stats_path.display()))?;
    let matches = match matches_path {
        Some(p) => read_matches(BufReader::new(
            fs::File::open(p).with_context(|| format!("opening matches {}", p.display()))?,
        ))
        .with_context(|| format!("parsing matches {}", p.display()))?,
        None => Vec::new(),
    };
    Ok(VideoInputs {
        model,
        trajectory,
        stats,
        matches,
    })
}

fn check_video(inputs: &VideoInputs, config: &PipelineConfig, seed: u64) -> Result<CheckReport> {
    Ok(run_checks(
        &inputs.trajectory,
        &inputs.stats,
        &inputs.matches,
        Some(&inputs.model),
        &config.check,
        seed,
    )?)
}

pub fn run_check(
    model_dir: &Path,
    stats_path: &Path,
    matches_path: Option<&Path>,
    out: &Path,
    config: &PipelineConfig,
    seed: u64,
) -> Result<i32> {
    let inputs = load_video(model_dir, stats_path, matches_path)?;
    let report = check_video(&inputs, config, seed)?;
    write_atomic(out, |buf| {
        write_check_report(buf, &report)?;
        Ok(())
    })?;
    let bad = report.bad_index.count_bad();
    eprintln!(
        "{} transitions, {bad} bad",
        report.transitions.len()
    );
    Ok(if bad == 0 { EXIT_CLEAN } else { EXIT_FLAGGED })
}

#[allow(clippy::too_many_arguments)]
pub fn run_repair(
    model_dir: &Path,
    stats_path: &Path,
    matches_path: Option<&Path>,
    out_trajectory: &Path,
    out_report: &Path,
    video_id: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<i32> {
    let inputs = load_video(model_dir, stats_path, matches_path)?;
    let report = check_video(&inputs, config, seed)?;
    let result = repair_and_revalidate(
        &inputs.trajectory,
        &report,
        &inputs.stats,
        &inputs.matches,
        Some(&inputs.model),
        &config.check,
        &config.repair,
        seed,
    )?;
    let verdict = VerdictRecord::from_result(video_id, &result);

    write_atomic(out_report, |buf| {
        write_check_report(&mut *buf, &report)?;
        serde_json::to_writer(&mut *buf, &verdict)?;
        buf.write_all(b"\n")?;
        Ok(())
    })?;

    let exported = match &result.outcome {
        RepairOutcome::Accepted => Some(&inputs.trajectory),
        RepairOutcome::Fixed { trajectory, .. } => Some(trajectory),
        RepairOutcome::Discarded { .. } => None,
    };
    match exported {
        Some(traj) => {
            write_atomic(out_trajectory, |buf| {
                write_trajectory(buf, traj)?;
                Ok(())
            })?;
            eprintln!("verdict: {:?}", verdict.verdict);
            Ok(EXIT_CLEAN)
        }
        None => {
            eprintln!("verdict: discarded ({:?})", verdict.reason.unwrap());
            Ok(EXIT_FLAGGED)
        }
    }
}

/// Batch layout: every subdirectory of `root` holding `model/cameras.txt` is
/// one video with `pair_stats.jsonl` and optional `matches.jsonl` beside it.
pub fn discover_batch(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut videos = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let entry = entry?;
        let dir = entry.path();
        if dir.is_dir() && dir.join("model").join("cameras.txt").is_file() {
            videos.push((entry.file_name().to_string_lossy().into_owned(), dir));
        }
    }
    videos.sort();
    if videos.is_empty() {
        bail!("no video directories under {}", root.display());
    }
    Ok(videos)
}

pub fn run_batch(
    root: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
    seed: u64,
    jobs: usize,
    repair_mode: bool,
) -> Result<i32> {
    let videos = discover_batch(root)?;
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let codes: Vec<i32> = pool.install(|| {
        use rayon::prelude::*;
        videos
            .par_iter()
            .map(|(name, dir)| {
                let matches = dir.join("matches.jsonl");
                let matches = matches.is_file().then_some(matches);
                let outcome = if repair_mode {
                    run_repair(
                        &dir.join("model"),
                        &dir.join("pair_stats.jsonl"),
                        matches.as_deref(),
                        &out_dir.join(format!("{name}.trajectory.jsonl")),
                        &out_dir.join(format!("{name}.report.jsonl")),
                        name,
                        config,
                        seed,
                    )
                } else {
                    run_check(
                        &dir.join("model"),
                        &dir.join("pair_stats.jsonl"),
                        matches.as_deref(),
                        &out_dir.join(format!("{name}.report.jsonl")),
                        config,
                        seed,
                    )
                };
                match outcome {
                    Ok(code) => code,
                    Err(err) => {
                        eprintln!("{name}: error: {err:#}");
                        EXIT_ERROR
                    }
                }
            })
            .collect()
    });
    Ok(codes.into_iter().max().unwrap_or(EXIT_CLEAN))
}

pub fn run_window(
    trajectory_path: &Path,
    out: &Path,
    video_id: &str,
    config: &PipelineConfig,
    seed: u64,
) -> Result<i32> {
    let read = read_trajectory(BufReader::new(fs::File::open(trajectory_path).with_context(
        || format!("opening trajectory {}", trajectory_path.display()),
    )?))?;
    for w in &read.warnings {
        eprintln!("warning: {w}");
    }
    let traj = read.trajectory;
    let rate = traj.pose_rate_hz();
    let clips = extract_clips(&traj, config.window.clip_seconds, config.window.stride_seconds)?;
    let l_steps = seconds_to_steps(config.window.window_seconds, rate)?;

    let mut records = Vec::with_capacity(clips.len());
    for (idx, clip) in clips.iter().enumerate() {
        let poses = segment(&traj, clip.t0, clip.t1);
        let owned: Vec<_> = poses.into_iter().cloned().collect();
        let (path_length, total_rotation) = diversity_score(&owned)?;
        let kept = config.diversity.keeps(path_length, total_rotation);
        let window = sample_local_window(clip.t0, clip.t1, l_steps, seed.wrapping_add(idx as u64))?;
        // The terminal pose is the retrieval query; requiring it here keeps
        // the manifest honest about gaps.
        select_query_pose(clip, &traj)?;
        records.push(WindowRecord {
            video_id: video_id.to_string(),
            t0: clip.t0,
            t1: clip.t1,
            k_s: window.k_s,
            k_e: window.k_e,
            kept,
            path_length,
            total_rotation,
        });
    }
    write_atomic(out, |buf| {
        for rec in &records {
            serde_json::to_writer(&mut *buf, rec)?;
            buf.write_all(b"\n")?;
        }
        Ok(())
    })?;
    eprintln!(
        "{} clips, {} kept",
        records.len(),
        records.iter().filter(|r| r.kept).count()
    );
    Ok(EXIT_CLEAN)
}

pub fn run_metrics(
    gt_path: &Path,
    pred_path: &Path,
    model_dir: Option<&Path>,
    total_frames: Option<usize>,
    out: Option<&Path>,
    config: &PipelineConfig,
) -> Result<i32> {
    let gt = read_trajectory(BufReader::new(fs::File::open(gt_path)?))?.trajectory;
    let pred = read_trajectory(BufReader::new(fs::File::open(pred_path)?))?.trajectory;
    let mut record = evaluate(&gt, &pred, &config.metrics)?;
    if let Some(dir) = model_dir {
        let mut model = SparseModel::from_dir(dir)?;
        if let Some(total) = total_frames {
            model = model.with_total_frame_count(total)?;
        }
        record.reconstruction_rate = Some(reconstruction_rate(&model)?);
    }

    let line = serde_json::to_string(&record)?;
    match out {
        Some(path) => write_atomic(path, |buf| {
            buf.write_all(line.as_bytes())?;
            buf.write_all(b"\n")?;
            Ok(())
        })?,
        None => println!("{line}"),
    }
    let recon = record
        .reconstruction_rate
        .map(|r| format!("  Recon. {r:.3}"))
        .unwrap_or_default();
    eprintln!(
        "AUC@30 {:.4}  AUC@15 {:.4}  CosSim {:.4}{recon}  ({} frames)",
        record.auc30, record.auc15, record.cosine, record.n_frames
    );
    Ok(EXIT_CLEAN)
}

/// The fixed pinhole camera every simulated video uses.
fn simulated_intrinsics() -> Intrinsics {
    Intrinsics::new(1000.0, 1000.0, 640.0, 360.0, 1280, 720).expect("valid constants")
}

pub fn parse_corruption(text: &str) -> Result<CorruptionSpec> {
    // kind@transition:magnitude, e.g. teleport@20:50
    let (kind, rest) = text
        .split_once('@')
        .with_context(|| format!("corruption {text:?} is not kind@transition:magnitude"))?;
    let (at, magnitude) = rest
        .split_once(':')
        .with_context(|| format!("corruption {text:?} is not kind@transition:magnitude"))?;
    let kind = match kind {
        "teleport" => CorruptionKind::CenterTeleport,
        "rotation" => CorruptionKind::RotationJump,
        "flip" => CorruptionKind::ForwardFlip,
        "jitter" => CorruptionKind::JitterBurst,
        other => bail!("unknown corruption kind {other:?} (teleport|rotation|flip|jitter)"),
    };
    Ok(CorruptionSpec {
        kind,
        at_transition: at
            .parse()
            .with_context(|| format!("bad transition index {at:?}"))?,
        magnitude: magnitude
            .parse()
            .with_context(|| format!("bad magnitude {magnitude:?}"))?,
    })
}

fn write_colmap_model(dir: &Path, traj: &Trajectory, k: &Intrinsics) -> Result<()> {
    write_atomic(&dir.join("cameras.txt"), |buf| {
        writeln!(buf, "# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]")?;
        writeln!(
            buf,
            "1 PINHOLE {} {} {} {} {} {}",
            k.width, k.height, k.fx, k.fy, k.cx, k.cy
        )?;
        Ok(())
    })?;
    write_atomic(&dir.join("images.txt"), |buf| {
        writeln!(
            buf,
            "# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME, then POINTS2D[]"
        )?;
        for (i, pose) in traj.poses().iter().enumerate() {
            let [w, x, y, z] = pose.rotation.quat_wxyz();
            let t = pose.translation;
            writeln!(
                buf,
                "{} {w} {x} {y} {z} {} {} {} 1 {}",
                i + 1,
                t.x,
                t.y,
                t.z,
                pose.frame_name
            )?;
            writeln!(buf)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn run_simulate(
    out_dir: &Path,
    corruptions: &[String],
    with_matches: bool,
    config: &PipelineConfig,
    seed: u64,
) -> Result<i32> {
    let synth_cfg = SynthConfig {
        n_steps: config.synth.n_steps,
        knot_count: config.synth.knot_count,
        ..SynthConfig::default()
    };
    let clean = generate_with_config(seed, &synth_cfg);
    let mut observed = clean.clone();
    for text in corruptions {
        let spec = parse_corruption(text)?;
        observed = inject(&observed, &spec)
            .with_context(|| format!("applying corruption {text:?}"))?;
    }

    let k = simulated_intrinsics();
    fs::create_dir_all(out_dir.join("model"))?;
    write_colmap_model(&out_dir.join("model"), &observed, &k)?;
    write_atomic(&out_dir.join("gt_trajectory.jsonl"), |buf| {
        write_trajectory(buf, &clean)?;
        Ok(())
    })?;
    let stats = clean_pair_stats(&observed);
    write_atomic(&out_dir.join("pair_stats.jsonl"), |buf| {
        write_pair_stats(buf, &stats)?;
        Ok(())
    })?;
    if with_matches {
        let matches = trajectory_matches(
            &clean,
            &k,
            config.synth.points_per_pair,
            config.synth.noise_px,
            seed,
        )?;
        write_atomic(&out_dir.join("matches.jsonl"), |buf| {
            write_matches(buf, &matches)?;
            Ok(())
        })?;
    }
    eprintln!(
        "simulated {} poses ({} corruption(s)) into {}",
        observed.len(),
        corruptions.len(),
        out_dir.display()
    );
    Ok(EXIT_CLEAN)
}

pub fn run_retrieve(
    trajectory_path: &Path,
    t0: Option<i64>,
    t1: Option<i64>,
    out: &Path,
    config: &PipelineConfig,
    seed: u64,
) -> Result<i32> {
    let traj = read_trajectory(BufReader::new(fs::File::open(trajectory_path)?))?.trajectory;
    let rate = traj.pose_rate_hz();
    let clip_steps = seconds_to_steps(config.window.clip_seconds, rate)?;
    let l_steps = seconds_to_steps(config.window.window_seconds, rate)?;

    let last = traj
        .poses()
        .last()
        .context("trajectory has no poses")?
        .time_step;
    let t1 = t1.unwrap_or(last);
    let t0 = t0.unwrap_or(t1 - clip_steps);
    anyhow::ensure!(t0 >= 0 && t1 > t0, "invalid clip interval [{t0}, {t1}]");

    let window = sample_local_window(t0, t1, l_steps, seed)?;
    let bank_poses: Vec<_> = traj
        .poses()
        .iter()
        .filter(|p| p.time_step >= window.k_s && p.time_step <= window.k_e)
        .cloned()
        .collect();
    anyhow::ensure!(
        !bank_poses.is_empty(),
        "no poses inside the sampled window [{}, {}]",
        window.k_s,
        window.k_e
    );
    let query_pose = traj
        .pose_at_step(t1)
        .with_context(|| format!("no pose at query step {t1}"))?;

    let dims = RetrieverDims::default();
    let params = RetrieverParams::with_config(
        seed,
        RetrieverConfig {
            dims,
            zero_output_projections: config.retriever.zero_output_projections,
            positional_encoding: config.retriever.positional_encoding,
        },
    );
    let bank = synth_memory_features(&bank_poses, dims.m_mem, dims.d_mem, seed);
    let encoded = encode_memory(&bank, &params)?;
    let queries = build_and_encode_queries(&QueryPose::from_pose(query_pose), &params)?;
    let retrieval = retrieve(&queries, &encoded, &params)?;
    let reconstructed = reconstruct_memory(&retrieval.world_tokens, &params)?;

    write_atomic(out, |buf| {
        let header = serde_json::json!({
            "record": "header",
            "t0": t0,
            "t1": t1,
            "k_s": window.k_s,
            "k_e": window.k_e,
            "seed": seed,
            "bank_entries": bank.entries.len(),
            "m_query": dims.m_query,
            "d_model": dims.d_model,
        });
        serde_json::to_writer(&mut *buf, &header)?;
        buf.write_all(b"\n")?;
        for entry in &bank.entries {
            let rec = serde_json::json!({
                "record": "bank_entry",
                "time_step": entry.time_step,
                "pose_token": entry.pose_token,
            });
            serde_json::to_writer(&mut *buf, &rec)?;
            buf.write_all(b"\n")?;
        }
        for i in 0..retrieval.world_tokens.0.nrows() {
            let values: Vec<f64> = retrieval.world_tokens.0.row(i).iter().copied().collect();
            let rec = serde_json::json!({ "record": "world_token", "index": i, "values": values });
            serde_json::to_writer(&mut *buf, &rec)?;
            buf.write_all(b"\n")?;
        }
        for i in 0..reconstructed.nrows() {
            let values: Vec<f64> = reconstructed.row(i).iter().copied().collect();
            let rec =
                serde_json::json!({ "record": "reconstructed_memory", "index": i, "values": values });
            serde_json::to_writer(&mut *buf, &rec)?;
            buf.write_all(b"\n")?;
        }
        Ok(())
    })?;
    eprintln!(
        "window [{}, {}] -> {} world tokens",
        window.k_s,
        window.k_e,
        retrieval.world_tokens.0.nrows()
    );
    Ok(EXIT_CLEAN)
}
