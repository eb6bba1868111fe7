//! Identity-consistent detection sequences as consumed downstream of the tracker.

use serde::{Deserialize, Serialize};

use crate::detection::{BBox, MouthState};
use crate::numfmt::ser_f64;

/// One associated detection in a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame_index: u32,
    pub bbox: BBox,
    pub state: MouthState,
    #[serde(serialize_with = "ser_f64")]
    pub confidence: f64,
}

/// A finished track: id plus its entries in strictly increasing frame order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u64,
    pub entries: Vec<TrackEntry>,
}

impl TrackRecord {
    pub fn new(track_id: u64, entries: Vec<TrackEntry>) -> Self {
        Self { track_id, entries }
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.entries.first().map(|e| e.frame_index)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.entries.last().map(|e| e.frame_index)
    }

    pub fn is_ordered(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].frame_index < w[1].frame_index)
    }

    /// Frame-span length including gaps.
    pub fn span_len(&self) -> usize {
        match (self.first_frame(), self.last_frame()) {
            (Some(a), Some(b)) => (b - a) as usize + 1,
            _ => 0,
        }
    }
}
