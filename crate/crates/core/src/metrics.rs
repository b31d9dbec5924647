//! Truth-based scoring of filter decisions.
//!
//! A particle counts as a findable track when it left a hit on all four
//! layers; a signal frame counts as reconstructable when all three decay
//! products are findable. Track matching is exact on hit indices, so a
//! reconstructed track is credited only if it picked the true hit on
//! every layer.

use serde::Serialize;

use crate::pipeline::{FrameDecision, Verdict};
use crate::toygen::{TruthFrame, TruthParticle};

/// Counters accumulated over one run, one frame at a time.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TruthMetrics {
    pub signal_frames: u64,
    pub signal_frames_kept: u64,
    pub reconstructable_signal_frames: u64,
    pub reconstructable_signal_frames_kept: u64,
    pub background_frames: u64,
    pub background_frames_kept: u64,
    pub findable_tracks: u64,
    pub found_tracks: u64,
}

pub fn findable_hits(p: &TruthParticle) -> Option<[u32; 4]> {
    if p.charge == 0 {
        return None;
    }
    let mut quad = [0u32; 4];
    for (layer, slot) in quad.iter_mut().enumerate() {
        *slot = p.hit_index(layer)? as u32;
    }
    Some(quad)
}

pub fn is_reconstructable(truth: &TruthFrame) -> bool {
    truth.is_signal && truth.signal_fully_instrumented()
}

impl TruthMetrics {
    pub fn record(&mut self, truth: &TruthFrame, decision: &FrameDecision, tracks: &[[u32; 4]]) {
        let kept = decision.verdict == Verdict::Keep;
        if truth.is_signal {
            self.signal_frames += 1;
            self.signal_frames_kept += u64::from(kept);
            if truth.signal_fully_instrumented() {
                self.reconstructable_signal_frames += 1;
                self.reconstructable_signal_frames_kept += u64::from(kept);
            }
        } else {
            self.background_frames += 1;
            self.background_frames_kept += u64::from(kept);
        }
        for particle in &truth.particles {
            if let Some(quad) = findable_hits(particle) {
                self.findable_tracks += 1;
                self.found_tracks += u64::from(tracks.contains(&quad));
            }
        }
    }

    /// Kept fraction of signal frames whose three products all crossed
    /// every layer. Frames that physics already lost are not held against
    /// the filter.
    pub fn signal_efficiency(&self) -> Option<f64> {
        ratio(
            self.reconstructable_signal_frames_kept,
            self.reconstructable_signal_frames,
        )
    }

    /// Kept fraction over all signal frames, acceptance losses included.
    pub fn raw_signal_efficiency(&self) -> Option<f64> {
        ratio(self.signal_frames_kept, self.signal_frames)
    }

    /// Fraction of background frames discarded.
    pub fn background_rejection(&self) -> Option<f64> {
        ratio(self.background_frames_kept, self.background_frames).map(|f| 1.0 - f)
    }

    /// Fraction of findable tracks reconstructed with all four hits right.
    pub fn track_efficiency(&self) -> Option<f64> {
        ratio(self.found_tracks, self.findable_tracks)
    }

    pub fn merge(&mut self, other: &TruthMetrics) {
        self.signal_frames += other.signal_frames;
        self.signal_frames_kept += other.signal_frames_kept;
        self.reconstructable_signal_frames += other.reconstructable_signal_frames;
        self.reconstructable_signal_frames_kept += other.reconstructable_signal_frames_kept;
        self.background_frames += other.background_frames;
        self.background_frames_kept += other.background_frames_kept;
        self.findable_tracks += other.findable_tracks;
        self.found_tracks += other.found_tracks;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}
