//! Line-delimited JSON file formats.
//!
//! Detection stream: a `VideoMeta` header line followed by one
//! `FrameRecord` per line in strictly increasing frame order. Tracks file:
//! one `TrackRecord` per line and a closing `{"summary": ...}` line. All
//! reals are written rounded to six decimals, so writing a parsed file
//! reproduces it byte for byte.

use std::io::{BufRead, BufReader, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{FrameRecord, VideoMeta};
use crate::numfmt::{ser_f64, ser_opt_f64};
use crate::track::TrackRecord;
use crate::ventilation::{PenReport, TrackOutcome, VentilationEstimate, HISTOGRAM_BINS, HISTOGRAM_BIN_WIDTH};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: frame index {got} does not follow {last}")]
    NonMonotonic { line: usize, last: u32, got: u32 },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("missing header line")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn json_line<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|source| FormatError::Json { line, source })
}

/// Non-empty lines with their 1-based numbers.
fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), FormatError>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|s| (i + 1, s)).map_err(FormatError::from))
        .filter(|r| !matches!(r, Ok((_, s)) if s.trim().is_empty()))
}

pub fn write_stream<W: Write>(w: &mut W, meta: &VideoMeta, frames: &[FrameRecord]) -> std::io::Result<()> {
    json_line(w, meta)?;
    for f in frames {
        json_line(w, f)?;
    }
    Ok(())
}

/// Incremental reader over a detection stream.
pub struct StreamReader<R: BufRead> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
    last: Option<u32>,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R) -> Result<(VideoMeta, Self), FormatError> {
        let mut this = Self {
            lines: reader.lines().enumerate(),
            last: None,
        };
        let (line, text) = this.next_line().ok_or(FormatError::MissingHeader)??;
        let meta: VideoMeta = parse_line(&text, line)?;
        if !(meta.fps.is_finite() && meta.fps > 0.0) {
            return Err(FormatError::Invalid {
                line,
                message: format!("fps must be positive, got {}", meta.fps),
            });
        }
        Ok((meta, this))
    }

    fn next_line(&mut self) -> Option<Result<(usize, String), FormatError>> {
        loop {
            match self.lines.next()? {
                (_, Err(e)) => return Some(Err(e.into())),
                (_, Ok(s)) if s.trim().is_empty() => continue,
                (i, Ok(s)) => return Some(Ok((i + 1, s))),
            }
        }
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<FrameRecord, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, text) = match self.next_line()? {
            Ok(x) => x,
            Err(e) => return Some(Err(e)),
        };
        let frame: FrameRecord = match parse_line(&text, line) {
            Ok(f) => f,
            Err(e) => return Some(Err(e)),
        };
        if let Some(last) = self.last {
            if frame.frame_index <= last {
                return Some(Err(FormatError::NonMonotonic {
                    line,
                    last,
                    got: frame.frame_index,
                }));
            }
        }
        self.last = Some(frame.frame_index);
        Some(Ok(frame))
    }
}

pub fn parse_stream(bytes: &[u8]) -> Result<(VideoMeta, Vec<FrameRecord>), FormatError> {
    let (meta, reader) = StreamReader::new(bytes)?;
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((meta, frames))
}

pub fn read_stream<R: Read>(r: R) -> Result<(VideoMeta, Vec<FrameRecord>), FormatError> {
    let (meta, reader) = StreamReader::new(BufReader::new(r))?;
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((meta, frames))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracksSummary {
    pub n_tracks: usize,
    pub n_entries: usize,
    #[serde(serialize_with = "ser_f64")]
    pub fps: f64,
    pub n_frames: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TracksLine {
    Summary { summary: TracksSummary },
    Track(TrackRecord),
}

pub fn write_tracks<W: Write>(w: &mut W, tracks: &[TrackRecord], fps: f64, n_frames: u64) -> std::io::Result<()> {
    for t in tracks {
        json_line(w, t)?;
    }
    let summary = TracksSummary {
        n_tracks: tracks.len(),
        n_entries: tracks.iter().map(|t| t.entries.len()).sum(),
        fps,
        n_frames,
    };
    json_line(w, &TracksLine::Summary { summary })
}

/// Reads a tracks file; the summary line is optional but must agree with the
/// tracks when present.
pub fn read_tracks<R: Read>(r: R) -> Result<(Vec<TrackRecord>, Option<TracksSummary>), FormatError> {
    let mut tracks = Vec::new();
    let mut summary = None;
    for item in numbered_lines(BufReader::new(r)) {
        let (line, text) = item?;
        if summary.is_some() {
            return Err(FormatError::Invalid {
                line,
                message: "content after summary line".into(),
            });
        }
        match parse_line::<TracksLine>(&text, line)? {
            TracksLine::Track(t) => {
                if !t.is_ordered() {
                    return Err(FormatError::Invalid {
                        line,
                        message: format!("track {} entries not in increasing frame order", t.track_id),
                    });
                }
                tracks.push(t);
            }
            TracksLine::Summary { summary: s } => {
                let n_entries: usize = tracks.iter().map(|t: &TrackRecord| t.entries.len()).sum();
                if s.n_tracks != tracks.len() || s.n_entries != n_entries {
                    return Err(FormatError::Invalid {
                        line,
                        message: "summary counts disagree with tracks".into(),
                    });
                }
                summary = Some(s);
            }
        }
    }
    Ok((tracks, summary))
}

/// Flat per-track outcome row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub track_id: u64,
    pub outcome: String,
    #[serde(default, serialize_with = "ser_opt_f64")]
    pub rate_cpm: Option<f64>,
    #[serde(default, serialize_with = "ser_opt_f64")]
    pub cycle_frames: Option<f64>,
    #[serde(default)]
    pub n_cycles: Option<usize>,
    #[serde(default)]
    pub used_span: Option<(u32, u32)>,
}

impl EstimateRow {
    pub fn from_outcome(track_id: u64, outcome: &TrackOutcome) -> Self {
        let est = match outcome {
            TrackOutcome::Estimated(e) => Some(e),
            _ => None,
        };
        Self {
            track_id,
            outcome: outcome.label().to_string(),
            rate_cpm: est.map(|e| e.ventilation_rate_cpm),
            cycle_frames: est.map(|e| e.cycle_duration_frames),
            n_cycles: est.map(|e| e.n_complete_cycles),
            used_span: est.map(|e| e.used_span),
        }
    }

    pub fn to_outcome(&self) -> Option<TrackOutcome> {
        if self.outcome == "estimated" {
            Some(TrackOutcome::Estimated(VentilationEstimate {
                track_id: self.track_id,
                cycle_duration_frames: self.cycle_frames?,
                ventilation_rate_cpm: self.rate_cpm?,
                n_complete_cycles: self.n_cycles?,
                used_span: self.used_span?,
            }))
        } else {
            TrackOutcome::from_label(&self.outcome)
        }
    }
}

pub fn write_estimates<W: Write>(w: &mut W, outcomes: &[(u64, TrackOutcome)]) -> std::io::Result<()> {
    for (id, o) in outcomes {
        json_line(w, &EstimateRow::from_outcome(*id, o))?;
    }
    Ok(())
}

pub fn read_estimates<R: Read>(r: R) -> Result<Vec<(u64, TrackOutcome)>, FormatError> {
    let rows: Vec<(usize, EstimateRow)> = read_jsonl_numbered(r)?;
    rows.into_iter()
        .map(|(line, row)| {
            row.to_outcome().map(|o| (row.track_id, o)).ok_or_else(|| FormatError::Invalid {
                line,
                message: format!("unknown or incomplete outcome '{}'", row.outcome),
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| crate::numfmt::round6(x).to_string()).unwrap_or_default()
}

pub fn write_estimates_csv<W: Write>(w: &mut W, outcomes: &[(u64, TrackOutcome)]) -> std::io::Result<()> {
    writeln!(w, "track_id,outcome,rate_cpm,cycle_frames,n_cycles")?;
    for (id, o) in outcomes {
        let row = EstimateRow::from_outcome(*id, o);
        writeln!(
            w,
            "{},{},{},{},{}",
            row.track_id,
            row.outcome,
            fmt_opt(row.rate_cpm),
            fmt_opt(row.cycle_frames),
            row.n_cycles.map(|n| n.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn write_report<W: Write>(w: &mut W, report: &PenReport) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, report)?;
    w.write_all(b"\n")
}

pub fn write_histogram_csv<W: Write>(w: &mut W, report: &PenReport) -> std::io::Result<()> {
    writeln!(w, "bin_low_cpm,bin_high_cpm,count")?;
    for (k, c) in report.histogram.iter().enumerate() {
        let lo = k as f64 * HISTOGRAM_BIN_WIDTH;
        writeln!(w, "{},{},{}", lo, lo + HISTOGRAM_BIN_WIDTH, c)?;
    }
    writeln!(w, "{},inf,{}", HISTOGRAM_BINS as f64 * HISTOGRAM_BIN_WIDTH, report.histogram_overflow)
}

pub fn write_jsonl<W: Write, T: Serialize>(w: &mut W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        json_line(w, item)?;
    }
    Ok(())
}

fn read_jsonl_numbered<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<(usize, T)>, FormatError> {
    numbered_lines(BufReader::new(r))
        .map(|item| {
            let (line, text) = item?;
            Ok((line, parse_line(&text, line)?))
        })
        .collect()
}

pub fn read_jsonl<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>, FormatError> {
    Ok(read_jsonl_numbered(r)?.into_iter().map(|(_, t)| t).collect())
}
