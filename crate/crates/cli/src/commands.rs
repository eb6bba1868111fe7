use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use ventrate_core::evaluation::{
    association_accuracy, detection_report, mae, mann_whitney_u, pearson, rate_pairs, tracking_detection_pr,
    AssociationResult,
};
use ventrate_core::io::{
    read_estimates, read_jsonl, read_stream, read_tracks, write_estimates, write_estimates_csv, write_histogram_csv,
    write_jsonl, write_report, write_stream, write_tracks, FormatError,
};
use ventrate_core::numfmt::round6;
use ventrate_core::robustness::{downsample_tracks, run_robustness, CorruptionKind, CorruptionSpec, PenRole, PenTracks, RobustnessError};
use ventrate_core::synthgen::{generate, truth_to_gt_sets, write_camera_csv, FishTruth, PenScenario, SynthError, SyntheticTruth};
use ventrate_core::tracker::{filter_frame, Tracker};
use ventrate_core::ventilation::{estimate_tracks, median, pen_report};
use ventrate_core::{seed, TrackOutcome, TrackRecord, TrackerConfig};

use crate::config::KeyValues;
use crate::error::{CliError, CliResult};
use crate::{EvalMode, GlobalArgs};

fn params(g: &GlobalArgs) -> CliResult<KeyValues> {
    let mut kv = match &g.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    kv.overlay(&g.overrides)?;
    Ok(kv)
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{}: no such file", path.display())))
    }
}

fn out_dir(g: &GlobalArgs) -> CliResult<&Path> {
    fs::create_dir_all(&g.out_dir).map_err(|source| CliError::Io {
        path: g.out_dir.clone(),
        source,
    })?;
    Ok(&g.out_dir)
}

fn check_fps(fps: f64) -> CliResult<f64> {
    if fps.is_finite() && fps > 0.0 {
        Ok(fps)
    } else {
        Err(CliError::config(format!("fps must be positive, got {fps}")))
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> CliError + '_ {
    move |source| CliError::Format {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let io_err = |source| CliError::Io {
        path: path.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
    Ok(path)
}

fn write_json<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    w.write_all(b"\n")
}

fn load_tracks(path: &Path, fps_flag: Option<f64>) -> CliResult<(Vec<TrackRecord>, f64, u64)> {
    let (tracks, summary) = read_tracks(open(path)?).map_err(format_err(path))?;
    let fps = fps_flag
        .or(summary.as_ref().map(|s| s.fps))
        .ok_or_else(|| CliError::config(format!("{}: no frame rate recorded; pass --fps", path.display())))?;
    let n_frames = summary.map(|s| s.n_frames).unwrap_or_else(|| {
        tracks
            .iter()
            .filter_map(TrackRecord::last_frame)
            .max()
            .map_or(0, |f| u64::from(f) + 1)
    });
    Ok((tracks, check_fps(fps)?, n_frames))
}

fn load_truth(path: &Path) -> CliResult<SyntheticTruth> {
    let fish: Vec<FishTruth> = read_jsonl(open(path)?).map_err(format_err(path))?;
    Ok(SyntheticTruth {
        fish,
        ..SyntheticTruth::default()
    })
}

fn synth_error(e: SynthError) -> CliError {
    CliError::config(e)
}

pub fn synth(g: &GlobalArgs, n_fish: Option<usize>, vr_median: Option<f64>, noise: Option<String>) -> CliResult<()> {
    let mut kv = params(g)?;
    if let Some(n) = n_fish {
        kv.insert("n_fish", n);
    }
    if let Some(v) = vr_median {
        kv.insert("vr_median", v);
    }
    if let Some(n) = noise {
        kv.insert("noise", n);
    }
    if let Some(f) = g.fps {
        kv.insert("fps", f);
    }
    let mut scenario = PenScenario {
        seed: g.seed,
        ..PenScenario::default()
    };
    // `noise` first so that individual noise keys refine the preset
    if let Some(preset) = kv.remove("noise") {
        scenario.set("noise", &preset).map_err(synth_error)?;
    }
    kv.apply(|k, v| scenario.set(k, v))?;
    let dir = out_dir(g)?;
    let (truth, meta, frames) = generate(&scenario).map_err(synth_error)?;
    write_file(dir, "stream.jsonl", |w| write_stream(w, &meta, &frames))?;
    write_file(dir, "truth.jsonl", |w| write_jsonl(w, &truth.fish))?;
    write_file(dir, "camera.csv", |w| write_camera_csv(w, &truth))?;
    println!(
        "synth: {} fish, {} frames, {} detections -> {}",
        truth.fish.len(),
        frames.len(),
        frames.iter().map(|f| f.detections.len()).sum::<usize>(),
        dir.display()
    );
    Ok(())
}

pub fn track(g: &GlobalArgs, stream: &Path) -> CliResult<()> {
    require_file(stream)?;
    let mut config = TrackerConfig::default();
    params(g)?.apply(|k, v| config.set(k, v))?;
    config.validate().map_err(CliError::config)?;
    let dir = out_dir(g)?;

    let (meta, frames) = read_stream(open(stream)?).map_err(format_err(stream))?;
    let fps = check_fps(g.fps.unwrap_or(meta.fps))?;
    let started = Instant::now();
    let mut tracker = Tracker::new(config).map_err(CliError::config)?;
    for f in &frames {
        // the reader has already rejected out-of-order frames
        tracker
            .step(&filter_frame(f))
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let tracks = tracker.finish();
    let elapsed = started.elapsed().as_secs_f64();
    let n_frames = frames.last().map_or(0, |f| u64::from(f.frame_index) + 1);
    write_file(dir, "tracks.jsonl", |w| write_tracks(w, &tracks, fps, n_frames))?;
    let throughput = if elapsed > 0.0 { frames.len() as f64 / elapsed } else { 0.0 };
    println!("track: {} frames, {} tracks, {throughput:.1} frames/s", frames.len(), tracks.len());
    Ok(())
}

pub fn estimate(g: &GlobalArgs, tracks_path: &Path, source_id: Option<String>) -> CliResult<()> {
    require_file(tracks_path)?;
    let mut kv = params(g)?;
    let source_id = source_id
        .or_else(|| kv.remove("source_id"))
        .unwrap_or_else(|| tracks_path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()));
    if let Some((k, _)) = kv.iter().next() {
        return Err(CliError::config(format!("unknown estimate key '{k}'")));
    }
    let dir = out_dir(g)?;
    let (tracks, fps, n_frames) = load_tracks(tracks_path, g.fps)?;
    let outcomes = estimate_tracks(&tracks, fps, seed::derive(g.seed, "estimate"));
    let plain: Vec<TrackOutcome> = outcomes.iter().map(|(_, o)| o.clone()).collect();
    let report = pen_report(&plain, &source_id, n_frames, fps);
    if report.n_after_qc > report.n_with_cycle || report.n_with_cycle > report.n_fish {
        return Err(CliError::Internal("pen report counts are not nested".into()));
    }
    write_file(dir, "estimates.jsonl", |w| write_estimates(w, &outcomes))?;
    write_file(dir, "estimates.csv", |w| write_estimates_csv(w, &outcomes))?;
    write_file(dir, "report.json", |w| write_report(w, &report))?;
    write_file(dir, "histogram.csv", |w| write_histogram_csv(w, &report))?;
    println!(
        "estimate: {} tracks, {} with a cycle, {} after QC, median {}",
        report.n_fish,
        report.n_with_cycle,
        report.n_after_qc,
        report.median_vr_cpm.map_or("n/a".into(), |m| format!("{m:.2} cpm"))
    );
    Ok(())
}

#[derive(Serialize)]
struct TrackEval {
    association: AssociationResult,
    detection: Vec<ventrate_core::evaluation::tracking_metrics::ClassPr>,
}

#[derive(Serialize)]
struct RatePair {
    fish_id: u64,
    track_id: u64,
    truth_cpm: f64,
    predicted_cpm: f64,
}

#[derive(Serialize)]
struct RatesEval {
    n_pairs: usize,
    pearson_r: Option<f64>,
    mae_cpm: Option<f64>,
    pairs: Vec<RatePair>,
}

pub fn eval(g: &GlobalArgs, mode: EvalMode, preds: &Path, truth_path: &Path, estimates: Option<&Path>) -> CliResult<()> {
    require_file(preds)?;
    require_file(truth_path)?;
    if mode == EvalMode::Rates {
        require_file(estimates.ok_or_else(|| CliError::config("rates mode needs --estimates"))?)?;
    }
    let dir = out_dir(g)?;
    let truth = load_truth(truth_path)?;
    let gt = truth_to_gt_sets(&truth);
    let written = match mode {
        EvalMode::Detect => {
            let (_, frames) = read_stream(open(preds)?).map_err(format_err(preds))?;
            let report = detection_report(&frames, &gt.frames);
            println!(
                "detect: mAP50 {}, mAP50-95 {}",
                fmt_opt(report.map50),
                fmt_opt(report.map50_95)
            );
            write_file(dir, "eval_detect.json", |w| write_json(w, &report))?
        }
        EvalMode::Track => {
            let (tracks, _) = read_tracks(open(preds)?).map_err(format_err(preds))?;
            let report = TrackEval {
                association: association_accuracy(&gt.tracks, &tracks),
                detection: tracking_detection_pr(&gt, &tracks),
            };
            println!("track: mean association accuracy {}", fmt_opt(report.association.mean()));
            write_file(dir, "eval_track.json", |w| write_json(w, &report))?
        }
        EvalMode::Rates => {
            let est_path = estimates.expect("checked above");
            let (tracks, _) = read_tracks(open(preds)?).map_err(format_err(preds))?;
            let outcomes = read_estimates(open(est_path)?).map_err(format_err(est_path))?;
            let report = rates_eval(&truth, &tracks, &outcomes);
            println!(
                "rates: {} pairs, r {}, MAE {}",
                report.n_pairs,
                fmt_opt(report.pearson_r),
                fmt_opt(report.mae_cpm)
            );
            write_file(dir, "eval_rates.json", |w| write_json(w, &report))?
        }
    };
    log::info!("wrote {}", written.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn rates_eval(truth: &SyntheticTruth, tracks: &[TrackRecord], outcomes: &[(u64, TrackOutcome)]) -> RatesEval {
    let gt_tracks: Vec<TrackRecord> = truth.fish.iter().map(FishTruth::to_track).collect();
    let pairs: Vec<RatePair> = rate_pairs(&gt_tracks, tracks)
        .into_iter()
        .filter_map(|(fish_id, track_id)| {
            let truth_cpm = truth.fish.iter().find(|f| f.fish_id == fish_id)?.gt_vr?;
            let predicted_cpm = outcomes.iter().find(|(id, _)| *id == track_id)?.1.rate()?;
            Some(RatePair {
                fish_id,
                track_id,
                truth_cpm,
                predicted_cpm,
            })
        })
        .collect();
    let t: Vec<f64> = pairs.iter().map(|p| p.truth_cpm).collect();
    let p: Vec<f64> = pairs.iter().map(|p| p.predicted_cpm).collect();
    RatesEval {
        n_pairs: pairs.len(),
        pearson_r: pearson(&t, &p).ok().map(round6),
        mae_cpm: mae(&t, &p).ok().filter(|_| !t.is_empty()).map(round6),
        pairs,
    }
}

fn robustness_error(e: RobustnessError) -> CliError {
    match e {
        RobustnessError::TooShort { .. } => CliError::Internal(e.to_string()),
        _ => CliError::config(e),
    }
}

fn parse_pen(spec: &str) -> CliResult<(String, PenRole, PathBuf)> {
    let bad = || CliError::config(format!("--pen expects name=role:path, got '{spec}'"));
    let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
    let (role, path) = rest.split_once(':').ok_or_else(bad)?;
    let role = PenRole::parse(role).ok_or_else(bad)?;
    Ok((name.to_string(), role, PathBuf::from(path)))
}

pub fn corrupt(g: &GlobalArgs, kind: Option<String>, pen_specs: &[String]) -> CliResult<()> {
    let pens_in: Vec<(String, PenRole, PathBuf)> = pen_specs.iter().map(|s| parse_pen(s)).collect::<CliResult<_>>()?;
    for (_, _, p) in &pens_in {
        require_file(p)?;
    }
    let mut kv = params(g)?;
    if let Some(k) = kind {
        kv.insert("kind", k);
    }
    let kind_text = kv
        .remove("kind")
        .ok_or_else(|| CliError::config("corruption kind missing; pass --kind"))?;
    let kind = CorruptionKind::parse(&kind_text).ok_or_else(|| CliError::config(format!("unknown corruption kind '{kind_text}'")))?;
    let mut spec = CorruptionSpec {
        seed: g.seed,
        ..CorruptionSpec::new(kind)
    };
    kv.apply(|k, v| spec.set(k, v))?;
    spec.validate().map_err(robustness_error)?;
    let dir = out_dir(g)?;

    let mut fps = None;
    let mut pens = Vec::new();
    for (name, role, path) in pens_in {
        let (tracks, pen_fps, _) = load_tracks(&path, g.fps)?;
        if fps.is_some_and(|f| f != pen_fps) {
            return Err(CliError::config("pens were recorded at different frame rates"));
        }
        fps = Some(pen_fps);
        pens.push(PenTracks { name, role, tracks });
    }
    let fps = fps.expect("at least one pen");
    let result = run_robustness(&pens, &spec, fps).map_err(robustness_error)?;
    write_file(dir, &format!("robustness_{}.csv", kind.as_str()), |w| result.write_csv(w))?;
    for &inc in &spec.incidences {
        let (sig, total) = result.significant_replicates(inc, 0.01);
        println!(
            "{kind} incidence {inc}: max mean dmVR {}, significant {sig}/{total}",
            fmt_opt(result.max_mean_delta(inc))
        );
    }
    Ok(())
}

pub fn downsample(g: &GlobalArgs, tracks_path: &Path, factor: u32) -> CliResult<()> {
    require_file(tracks_path)?;
    let dir = out_dir(g)?;
    let (tracks, fps, n_frames) = load_tracks(tracks_path, g.fps)?;
    let (out, new_fps) = downsample_tracks(&tracks, factor, fps).map_err(robustness_error)?;
    let new_frames = n_frames.div_ceil(u64::from(factor));
    write_file(dir, "tracks_downsampled.jsonl", |w| write_tracks(w, &out, new_fps, new_frames))?;
    println!("downsample: {} tracks at {new_fps} fps", out.len());
    Ok(())
}

pub fn compare(g: &GlobalArgs, a: &Path, b: &Path) -> CliResult<()> {
    require_file(a)?;
    require_file(b)?;
    let dir = out_dir(g)?;
    let rates = |p: &Path| -> CliResult<Vec<f64>> {
        let est = read_estimates(open(p)?).map_err(format_err(p))?;
        Ok(est.iter().filter_map(|(_, o)| o.rate()).collect())
    };
    let (ra, rb) = (rates(a)?, rates(b)?);
    let test = mann_whitney_u(&ra, &rb).ok();
    let cell = |v: Option<f64>| v.map(|x| round6(x).to_string()).unwrap_or_default();
    let row = format!(
        "{},{},{},{},{},{}",
        cell(median(&ra)),
        cell(median(&rb)),
        ra.len(),
        rb.len(),
        cell(test.map(|t| t.u)),
        cell(test.map(|t| t.p_value))
    );
    write_file(dir, "compare.csv", |w| {
        writeln!(w, "median_a,median_b,n_a,n_b,u,p_value")?;
        writeln!(w, "{row}")
    })?;
    println!("median_a,median_b,n_a,n_b,u,p_value\n{row}");
    Ok(())
}
