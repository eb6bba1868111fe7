//! Track corruption experiments and frame-rate downsampling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::stats::mann_whitney_u;
use crate::numfmt::round6;
use crate::seed;
use crate::track::TrackRecord;
use crate::ventilation::{estimate_tracks, median};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    MissedSingle,
    MissedAdjacentPair,
    IdentitySwitch,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [
        CorruptionKind::MissedSingle,
        CorruptionKind::MissedAdjacentPair,
        CorruptionKind::IdentitySwitch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::MissedSingle => "missed_single",
            CorruptionKind::MissedAdjacentPair => "missed_adjacent_pair",
            CorruptionKind::IdentitySwitch => "identity_switch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RobustnessError {
    #[error("invalid corruption spec: {0}")]
    Invalid(String),
    #[error("pen {0} has no estimable track")]
    NoBaseline(String),
    #[error("track {track_id} with {len} entries cannot take {k} corruptions")]
    TooShort { track_id: u64, len: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub count_min: usize,
    pub count_max: usize,
    pub incidences: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind) -> Self {
        Self {
            kind,
            count_min: 1,
            count_max: 3,
            incidences: vec![0.25, 0.5, 0.75, 1.0],
            replicates: 5,
            seed: seed::DEFAULT_SEED,
        }
    }

    /// Sets one field from its textual form; `incidences` is comma-separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RobustnessError> {
        let v = value.trim();
        let bad = || RobustnessError::Invalid(format!("{key}: cannot parse '{v}'"));
        match key {
            "kind" => self.kind = CorruptionKind::parse(v).ok_or_else(bad)?,
            "count_min" => self.count_min = v.parse().map_err(|_| bad())?,
            "count_max" => self.count_max = v.parse().map_err(|_| bad())?,
            "replicates" => self.replicates = v.parse().map_err(|_| bad())?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "incidences" => {
                self.incidences = v
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?
            }
            _ => return Err(RobustnessError::Invalid(format!("unknown corruption key '{key}'"))),
        }
        Ok(())
    }

    /// Incidence 0 is accepted as an uncorrupted control.
    pub fn validate(&self) -> Result<(), RobustnessError> {
        if self.count_min < 1 || self.count_min > self.count_max {
            return Err(RobustnessError::Invalid("need 1 <= count_min <= count_max".into()));
        }
        if self.replicates == 0 {
            return Err(RobustnessError::Invalid("need at least one replicate".into()));
        }
        if let Some(bad) = self.incidences.iter().find(|i| !(0.0..=1.0).contains(*i)) {
            return Err(RobustnessError::Invalid(format!("incidence {bad} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Sorted `k`-subset of `0..n` whose members differ by more than `spacing`,
/// uniform over all such subsets: draw from `0..n-(k-1)*spacing` and shift
/// the i-th smallest pick by `i * spacing`.
fn spaced_subset<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, spacing: usize) -> Option<Vec<usize>> {
    let slots = (n + spacing).checked_sub(k * spacing)?;
    if slots < k {
        return None;
    }
    let mut picks = sample(rng, slots, k).into_vec();
    picks.sort_unstable();
    Some(picks.into_iter().enumerate().map(|(i, c)| c + i * spacing).collect())
}

fn too_short(track: &TrackRecord, k: usize) -> RobustnessError {
    RobustnessError::TooShort {
        track_id: track.track_id,
        len: track.entries.len(),
        k,
    }
}

/// Removes `k` non-adjacent interior entries; endpoints are kept.
pub fn corrupt_missed_single<R: Rng + ?Sized>(track: &TrackRecord, k: usize, rng: &mut R) -> Result<TrackRecord, RobustnessError> {
    let n = track.entries.len();
    let interior = n.saturating_sub(2);
    if k == 0 {
        return Err(too_short(track, k));
    }
    let starts = spaced_subset(rng, interior, k, 1).ok_or_else(|| too_short(track, k))?;
    let drop: Vec<usize> = starts.into_iter().map(|s| s + 1).collect();
    Ok(without(track, &drop))
}

/// Removes `k` interior runs of exactly two consecutive entries, separated
/// from each other and from the endpoints by kept entries.
pub fn corrupt_missed_adjacent<R: Rng + ?Sized>(track: &TrackRecord, k: usize, rng: &mut R) -> Result<TrackRecord, RobustnessError> {
    let n = track.entries.len();
    let interior = n.saturating_sub(2);
    // k blocks of two plus k - 1 separators must fit: 3k - 1 <= interior.
    // Block starts s_i satisfy s_{i+1} >= s_i + 3 and s_k <= interior - 2;
    // with c_i = s_i - 2i the c_i are distinct in 0..=interior - 2k.
    if k == 0 || interior + 1 < 3 * k {
        return Err(too_short(track, k));
    }
    let mut picks = sample(rng, interior - 2 * k + 1, k).into_vec();
    picks.sort_unstable();
    let drop: Vec<usize> = picks
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| {
            let s = c + 2 * i + 1;
            [s, s + 1]
        })
        .collect();
    Ok(without(track, &drop))
}

fn without(track: &TrackRecord, sorted_drop: &[usize]) -> TrackRecord {
    let mut d = sorted_drop.iter().peekable();
    let entries = track
        .entries
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            if d.peek() == Some(&i) {
                d.next();
                false
            } else {
                true
            }
        })
        .map(|(_, e)| *e)
        .collect();
    TrackRecord::new(track.track_id, entries)
}

/// Splits a track at `k` distinct cut points into `k + 1` fragments, each
/// given a fresh id taken from `next_id`.
pub fn corrupt_identity_switch<R: Rng + ?Sized>(
    track: &TrackRecord,
    k: usize,
    next_id: &mut u64,
    rng: &mut R,
) -> Result<Vec<TrackRecord>, RobustnessError> {
    let n = track.entries.len();
    // cuts sit before entries 1..n-1
    if k == 0 || n < k + 1 {
        return Err(too_short(track, k));
    }
    let mut cuts: Vec<usize> = sample(rng, n - 1, k).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n);
    Ok(bounds
        .windows(2)
        .map(|w| {
            let id = *next_id;
            *next_id += 1;
            TrackRecord::new(id, track.entries[w[0]..w[1]].to_vec())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenRole {
    Normal,
    High,
    Other,
}

impl PenRole {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(PenRole::Normal),
            "high" => Some(PenRole::High),
            "other" => Some(PenRole::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenTracks {
    pub name: String,
    pub role: PenRole,
    pub tracks: Vec<TrackRecord>,
}

/// Applies one corruption replicate to a pen's tracks.
pub fn corrupt_tracks<R: Rng + ?Sized>(
    tracks: &[TrackRecord],
    kind: CorruptionKind,
    incidence: f64,
    count_range: (usize, usize),
    rng: &mut R,
) -> Vec<TrackRecord> {
    let n_corrupt = (incidence * tracks.len() as f64).round() as usize;
    let mut chosen = vec![false; tracks.len()];
    for i in sample(rng, tracks.len(), n_corrupt.min(tracks.len())) {
        chosen[i] = true;
    }
    let mut next_id = tracks.iter().map(|t| t.track_id).max().unwrap_or(0) + 1;
    let mut out = Vec::with_capacity(tracks.len());
    for (t, &c) in tracks.iter().zip(&chosen) {
        if !c {
            out.push(t.clone());
            continue;
        }
        let k = rng.random_range(count_range.0..=count_range.1);
        let result = match kind {
            CorruptionKind::MissedSingle => corrupt_missed_single(t, k, rng).map(|t| vec![t]),
            CorruptionKind::MissedAdjacentPair => corrupt_missed_adjacent(t, k, rng).map(|t| vec![t]),
            CorruptionKind::IdentitySwitch => corrupt_identity_switch(t, k, &mut next_id, rng),
        };
        match result {
            Ok(ts) => out.extend(ts),
            Err(e) => {
                log::debug!("{kind}: {e}; left unchanged");
                out.push(t.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub pen: String,
    pub kind: CorruptionKind,
    pub incidence: f64,
    pub replicate: usize,
    pub median_vr: Option<f64>,
    pub delta_mvr: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Largest p over this pen's normal-versus-high comparisons.
    pub mann_whitney_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    pub incidence: f64,
    pub replicate: usize,
    pub normal: String,
    pub high: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    pub kind: CorruptionKind,
    pub baseline: Vec<(String, f64)>,
    pub rows: Vec<RobustnessRow>,
    pub pair_tests: Vec<PairTest>,
}

impl RobustnessResult {
    /// Mean change in median rate over replicates.
    pub fn mean_delta(&self, pen: &str, incidence: f64) -> Option<f64> {
        let d: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.pen == pen && r.incidence == incidence)
            .filter_map(|r| r.delta_mvr)
            .collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }

    /// Largest per-pen mean change at one incidence.
    pub fn max_mean_delta(&self, incidence: f64) -> Option<f64> {
        self.baseline
            .iter()
            .filter_map(|(p, _)| self.mean_delta(p, incidence))
            .reduce(f64::max)
    }

    /// Replicates at `incidence` in which every normal-versus-high comparison
    /// has p below `alpha`, out of the replicates run.
    pub fn significant_replicates(&self, incidence: f64, alpha: f64) -> (usize, usize) {
        let mut by_rep: BTreeMap<usize, bool> = BTreeMap::new();
        for t in self.pair_tests.iter().filter(|t| t.incidence == incidence) {
            let e = by_rep.entry(t.replicate).or_insert(true);
            *e &= t.p_value < alpha;
        }
        (by_rep.values().filter(|v| **v).count(), by_rep.len())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "pen,kind,incidence,replicate,median_vr,delta_mvr,ci_low,ci_high,mann_whitney_p")?;
        let f = |v: Option<f64>| v.map(|x| round6(x).to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.pen,
                r.kind,
                r.incidence,
                r.replicate,
                f(r.median_vr),
                f(r.delta_mvr),
                f(r.ci_low),
                f(r.ci_high),
                r.mann_whitney_p.map(|p| format!("{p:e}")).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Mean plus or minus 1.96 standard errors.
pub fn normal_ci(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, mean));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    Some((mean - half, mean + half))
}

fn estimated_rates(tracks: &[TrackRecord], fps: f64, estimate_seed: u64) -> Vec<f64> {
    estimate_tracks(tracks, fps, estimate_seed)
        .iter()
        .filter_map(|(_, o)| o.rate())
        .collect()
}

/// Runs every incidence and replicate of `spec` on every pen.
///
/// Each replicate draws a fresh corrupted subset. Uncorrupted tracks keep
/// their ids and therefore their imputation draws, so incidence 0
/// reproduces the baseline exactly.
pub fn run_robustness(pens: &[PenTracks], spec: &CorruptionSpec, fps: f64) -> Result<RobustnessResult, RobustnessError> {
    spec.validate()?;
    let estimate_seed = seed::derive(spec.seed, "estimate");
    let mut baseline = Vec::new();
    for p in pens {
        let rates = estimated_rates(&p.tracks, fps, estimate_seed);
        let m = median(&rates).ok_or_else(|| RobustnessError::NoBaseline(p.name.clone()))?;
        baseline.push((p.name.clone(), m));
    }

    let mut rows = Vec::new();
    let mut pair_tests = Vec::new();
    for &incidence in &spec.incidences {
        let group_start = rows.len();
        for rep in 0..spec.replicates {
            let mut rates_by_pen: Vec<Vec<f64>> = Vec::with_capacity(pens.len());
            for (pi, p) in pens.iter().enumerate() {
                let label = format!("corrupt/{}/{}/{}", spec.kind, p.name, incidence);
                let mut rng = seed::rng(seed::derive_indexed(spec.seed, &label, rep as u64));
                let corrupted = corrupt_tracks(&p.tracks, spec.kind, incidence, (spec.count_min, spec.count_max), &mut rng);
                let rates = estimated_rates(&corrupted, fps, estimate_seed);
                let m = median(&rates);
                rows.push(RobustnessRow {
                    pen: p.name.clone(),
                    kind: spec.kind,
                    incidence,
                    replicate: rep,
                    median_vr: m,
                    delta_mvr: m.map(|m| (m - baseline[pi].1).abs()),
                    ci_low: None,
                    ci_high: None,
                    mann_whitney_p: None,
                });
                rates_by_pen.push(rates);
            }
            for (ni, n) in pens.iter().enumerate().filter(|(_, p)| p.role == PenRole::Normal) {
                for (hi, h) in pens.iter().enumerate().filter(|(_, p)| p.role == PenRole::High) {
                    let p_value = mann_whitney_u(&rates_by_pen[ni], &rates_by_pen[hi])
                        .map(|r| r.p_value)
                        .unwrap_or(1.0);
                    pair_tests.push(PairTest {
                        incidence,
                        replicate: rep,
                        normal: n.name.clone(),
                        high: h.name.clone(),
                        p_value,
                    });
                }
            }
        }
        // Confidence intervals and worst-case p per pen within this incidence.
        for p in pens {
            let deltas: Vec<f64> = rows[group_start..]
                .iter()
                .filter(|r| r.pen == p.name)
                .filter_map(|r| r.delta_mvr)
                .collect();
            let ci = normal_ci(&deltas);
            for r in rows[group_start..].iter_mut().filter(|r| r.pen == p.name) {
                r.ci_low = ci.map(|c| c.0);
                r.ci_high = ci.map(|c| c.1);
                r.mann_whitney_p = pair_tests
                    .iter()
                    .filter(|t| t.incidence == incidence && t.replicate == r.replicate)
                    .filter(|t| t.normal == p.name || t.high == p.name)
                    .map(|t| t.p_value)
                    .reduce(f64::max);
            }
        }
    }
    Ok(RobustnessResult {
        kind: spec.kind,
        baseline,
        rows,
        pair_tests,
    })
}

/// Keeps entries on frames divisible by `factor`, renumbers frames by
/// integer division and divides the frame rate. Tracks left empty are dropped.
pub fn downsample_tracks(tracks: &[TrackRecord], factor: u32, fps: f64) -> Result<(Vec<TrackRecord>, f64), RobustnessError> {
    if factor < 2 {
        return Err(RobustnessError::Invalid(format!("downsampling factor must be >= 2, got {factor}")));
    }
    let out = tracks
        .iter()
        .filter_map(|t| {
            let entries: Vec<_> = t
                .entries
                .iter()
                .filter(|e| e.frame_index % factor == 0)
                .map(|e| {
                    let mut e = *e;
                    e.frame_index /= factor;
                    e
                })
                .collect();
            (!entries.is_empty()).then(|| TrackRecord::new(t.track_id, entries))
        })
        .collect();
    Ok((out, fps / factor as f64))
}
