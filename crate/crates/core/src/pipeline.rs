//! Frame filter: the three stages composed per frame, run over a chunked
//! stream by a bounded worker pool.
//!
//! Kept frames are re-serialized from the parsed hit words, so the output
//! stream is byte-stable: the same input and configuration produce identical
//! output for any worker count. A chunk that fails to parse aborts the run
//! with its index.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufWriter, Read};
use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::cuts::select_triplets;
use crate::framestore::{
    geometry_fingerprint, ChunkStreamWriter, CorruptChunk, FileError, FrameHits, FrameRef,
    ParsedChunk, RawHit, StoreError, StreamMeta, DEFAULT_CHUNK_CAPACITY,
};
use crate::geometry::{PhysicsConstants, Vec3, NUM_LAYERS};
use crate::metrics::TruthMetrics;
use crate::toygen::TruthFrame;
use crate::triplet_fit::{fit_track, TrackCandidate};
use crate::vertex::evaluate_frame;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Worker threads parsing and filtering chunks.
    pub workers: usize,
    /// Chunks buffered between the reader and the workers.
    pub queue_depth: usize,
    /// Chunk capacity assumed when the input has no `.meta` sidecar.
    pub chunk_capacity: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            workers: 1,
            queue_depth: 4,
            chunk_capacity: DEFAULT_CHUNK_CAPACITY,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("pipeline.workers must be at least 1".into());
        }
        if self.queue_depth == 0 {
            return Err("pipeline.queue_depth must be at least 1".into());
        }
        if self.chunk_capacity < crate::framestore::MIN_CHUNK_CAPACITY {
            return Err(format!(
                "pipeline.chunk_capacity must be at least {}",
                crate::framestore::MIN_CHUNK_CAPACITY
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// per-frame decision
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Discard,
}

/// Why a frame was kept; `None` marks a discard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepReason {
    TripletOverflow,
    TrackOverflow,
    CombOverflow,
    VertexFound,
    None,
}

impl std::fmt::Display for KeepReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KeepReason::TripletOverflow => "triplet_overflow",
            KeepReason::TrackOverflow => "track_overflow",
            KeepReason::CombOverflow => "comb_overflow",
            KeepReason::VertexFound => "vertex_found",
            KeepReason::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDecision {
    pub frame_id: u64,
    pub verdict: Verdict,
    pub reason: KeepReason,
    /// Layer-0/1/2 combinations enumerated by the cut stage.
    pub n_combinations: u64,
    /// Combinations that passed all four cuts.
    pub n_cut_survivors: u64,
    /// Track candidates accepted by the triplet fit.
    pub n_tracks: u64,
    /// Charge-valid track triples evaluated by the vertex stage.
    pub n_triples: u64,
}

impl FrameDecision {
    fn keep(&mut self, reason: KeepReason) {
        self.verdict = Verdict::Keep;
        self.reason = reason;
    }

    /// A decision keeps a frame exactly when it has a reason.
    pub fn is_consistent(&self) -> bool {
        (self.verdict == Verdict::Keep) == (self.reason != KeepReason::None)
    }
}

/// Runs cuts, triplet fits and the vertex search on one frame.
///
/// Any stage overflow short-circuits to a keep with that reason. Also
/// returns the hit quadruples of accepted tracks for truth matching.
pub fn process_frame(
    frame_id: u64,
    layers: [&[RawHit]; NUM_LAYERS],
    cfg: &RunConfig,
    consts: &PhysicsConstants<f64>,
) -> (FrameDecision, Vec<[u32; 4]>) {
    let hits: [Vec<Vec3<f64>>; NUM_LAYERS] = std::array::from_fn(|l| {
        layers[l]
            .iter()
            .map(|h| Vec3::new(h[0] as f64, h[1] as f64, h[2] as f64))
            .collect()
    });
    let slices: [&[Vec3<f64>]; NUM_LAYERS] = std::array::from_fn(|l| hits[l].as_slice());

    let sel = select_triplets([slices[0], slices[1], slices[2]], &cfg.cuts);
    let mut decision = FrameDecision {
        frame_id,
        verdict: Verdict::Discard,
        reason: KeepReason::None,
        n_combinations: sel.counters.enumerated,
        n_cut_survivors: sel.counters.pass_rt,
        n_tracks: 0,
        n_triples: 0,
    };
    if sel.overflow {
        decision.keep(KeepReason::TripletOverflow);
        return (decision, Vec::new());
    }

    let mut tracks: Vec<TrackCandidate<f64>> = Vec::new();
    let mut track_overflow = false;
    for cand in &sel.candidates {
        if let Ok(track) = fit_track(cand, slices, &cfg.fit, &cfg.geometry, consts) {
            tracks.push(track);
            if tracks.len() > cfg.fit.max_tracks {
                track_overflow = true;
                break;
            }
        }
    }
    decision.n_tracks = tracks.len() as u64;
    let quads: Vec<[u32; 4]> = tracks.iter().map(|t| t.hits).collect();
    if track_overflow {
        decision.keep(KeepReason::TrackOverflow);
        return (decision, quads);
    }

    let outcome = evaluate_frame(&tracks, &cfg.vertex, &cfg.geometry, consts);
    decision.n_triples = outcome.n_triples;
    if outcome.comb_overflow {
        decision.keep(KeepReason::CombOverflow);
    } else if outcome.keep {
        decision.keep(KeepReason::VertexFound);
    }
    (decision, quads)
}

// ---------------------------------------------------------------------------
// run report
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptByReason {
    pub triplet_overflow: u64,
    pub track_overflow: u64,
    pub comb_overflow: u64,
    pub vertex_found: u64,
}

impl KeptByReason {
    fn bump(&mut self, reason: KeepReason) {
        match reason {
            KeepReason::TripletOverflow => self.triplet_overflow += 1,
            KeepReason::TrackOverflow => self.track_overflow += 1,
            KeepReason::CombOverflow => self.comb_overflow += 1,
            KeepReason::VertexFound => self.vertex_found += 1,
            KeepReason::None => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.triplet_overflow + self.track_overflow + self.comb_overflow + self.vertex_found
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub frames_total: u64,
    pub frames_kept: u64,
    pub kept_by_reason: KeptByReason,
    pub combinations: u64,
    pub cut_survivors: u64,
    pub tracks: u64,
    pub vertex_triples: u64,
    pub truth: Option<TruthMetrics>,
    pub workers: usize,
    pub wall_seconds: f64,
    pub frames_per_sec: f64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("chunk {chunk}: {source}")]
    Corrupt { chunk: usize, source: CorruptChunk },
    #[error("input stream geometry {stream} does not match configured geometry {config}")]
    GeometryMismatch { stream: String, config: String },
    #[error("worker pool stopped before delivering all chunks")]
    WorkersLost,
}

// ---------------------------------------------------------------------------
// chunked run
// ---------------------------------------------------------------------------

struct OwnedFrame {
    frame_id: u64,
    layers: [Vec<RawHit>; NUM_LAYERS],
}

impl OwnedFrame {
    fn copy_of(frame: &FrameRef<'_>) -> Self {
        Self {
            frame_id: frame.frame_id(),
            layers: frame.layers().map(<[RawHit]>::to_vec),
        }
    }

    fn view(&self) -> FrameHits<'_> {
        FrameHits {
            frame_id: self.frame_id,
            layers: std::array::from_fn(|l| self.layers[l].as_slice()),
        }
    }
}

#[derive(Default)]
struct ChunkOutcome {
    decisions: Vec<FrameDecision>,
    kept: Vec<OwnedFrame>,
    tracks: Vec<Vec<[u32; 4]>>,
}

fn process_chunk(
    index: usize,
    bytes: &[u8],
    capacity: usize,
    cfg: &RunConfig,
    consts: &PhysicsConstants<f64>,
    want_tracks: bool,
) -> Result<ChunkOutcome, PipelineError> {
    let chunk = ParsedChunk::parse(bytes, capacity).map_err(|source| PipelineError::Corrupt {
        chunk: index,
        source,
    })?;
    let mut out = ChunkOutcome::default();
    for frame in chunk.iter() {
        let (decision, quads) = process_frame(frame.frame_id(), frame.layers(), cfg, consts);
        if decision.verdict == Verdict::Keep {
            out.kept.push(OwnedFrame::copy_of(&frame));
        }
        out.decisions.push(decision);
        if want_tracks {
            out.tracks.push(quads);
        }
    }
    Ok(out)
}

/// Chunk capacity of an input stream: from its `.meta` sidecar when present
/// (with a geometry guard), otherwise from the pipeline settings.
pub fn stream_capacity(cfg: &RunConfig, input: &Path) -> Result<usize, PipelineError> {
    match StreamMeta::load(input) {
        Ok(meta) => {
            let fingerprint = geometry_fingerprint(&cfg.geometry);
            if meta.geometry_hash != fingerprint {
                return Err(PipelineError::GeometryMismatch {
                    stream: meta.geometry_hash,
                    config: fingerprint,
                });
            }
            Ok(meta.capacity as usize)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(cfg.pipeline.chunk_capacity),
        Err(e) => Err(PipelineError::Io(e)),
    }
}

/// Filters a chunk stream, optionally writing kept frames to `output` and
/// scoring decisions against `truth`.
pub fn run(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    truth: Option<&[TruthFrame]>,
) -> Result<RunReport, PipelineError> {
    let fingerprint = geometry_fingerprint(&cfg.geometry);
    let capacity = stream_capacity(cfg, input)?;

    let size = fs::metadata(input)?.len();
    if size % capacity as u64 != 0 {
        return Err(FileError::RaggedFile {
            path: input.to_path_buf(),
            size,
            capacity,
        }
        .into());
    }
    let n_chunks = (size / capacity as u64) as usize;

    let mut file = File::open(input)?;
    let mut writer = match output {
        Some(path) => {
            let out = BufWriter::new(File::create(path)?);
            Some((path, ChunkStreamWriter::new(out, capacity)?))
        }
        None => None,
    };

    let truth_map: Option<HashMap<u64, &TruthFrame>> =
        truth.map(|frames| frames.iter().map(|f| (f.frame_id, f)).collect());
    let consts = PhysicsConstants::<f64>::default();
    let workers = cfg.pipeline.workers.max(1);
    let want_tracks = truth_map.is_some();

    let mut report = RunReport {
        frames_total: 0,
        frames_kept: 0,
        kept_by_reason: KeptByReason::default(),
        combinations: 0,
        cut_survivors: 0,
        tracks: 0,
        vertex_triples: 0,
        truth: truth_map.as_ref().map(|_| TruthMetrics::default()),
        workers,
        wall_seconds: 0.0,
        frames_per_sec: 0.0,
    };

    let started = Instant::now();
    let collected: Result<(), PipelineError> = thread::scope(|s| {
        let (chunk_tx, chunk_rx) =
            mpsc::sync_channel::<Result<(usize, Vec<u8>), io::Error>>(cfg.pipeline.queue_depth);
        let chunk_rx = Arc::new(Mutex::new(chunk_rx));
        let (res_tx, res_rx) =
            mpsc::sync_channel::<Result<(usize, ChunkOutcome), PipelineError>>(workers + 1);

        s.spawn(move || {
            for index in 0..n_chunks {
                let mut buf = vec![0u8; capacity];
                let msg = file.read_exact(&mut buf).map(|_| (index, buf));
                let stop = msg.is_err();
                if chunk_tx.send(msg).is_err() || stop {
                    return;
                }
            }
        });

        for _ in 0..workers {
            let rx = Arc::clone(&chunk_rx);
            let tx = res_tx.clone();
            let consts = &consts;
            s.spawn(move || loop {
                let msg = rx.lock().unwrap().recv();
                let (index, bytes) = match msg {
                    Err(_) => return,
                    Ok(Err(e)) => {
                        let _ = tx.send(Err(PipelineError::Io(e)));
                        return;
                    }
                    Ok(Ok(pair)) => pair,
                };
                let out = process_chunk(index, &bytes, capacity, cfg, consts, want_tracks)
                    .map(|o| (index, o));
                if tx.send(out).is_err() {
                    return;
                }
            });
        }
        drop(res_tx);

        // Collector: restore chunk order so output bytes and truth scoring
        // never depend on worker scheduling.
        let mut pending: BTreeMap<usize, ChunkOutcome> = BTreeMap::new();
        let mut next = 0usize;
        for _ in 0..n_chunks {
            let (index, outcome) = res_rx.recv().map_err(|_| PipelineError::WorkersLost)??;
            pending.insert(index, outcome);
            while let Some(outcome) = pending.remove(&next) {
                next += 1;
                for (i, decision) in outcome.decisions.iter().enumerate() {
                    report.frames_total += 1;
                    report.combinations += decision.n_combinations;
                    report.cut_survivors += decision.n_cut_survivors;
                    report.tracks += decision.n_tracks;
                    report.vertex_triples += decision.n_triples;
                    if decision.verdict == Verdict::Keep {
                        report.frames_kept += 1;
                        report.kept_by_reason.bump(decision.reason);
                    }
                    if let (Some(map), Some(metrics)) = (&truth_map, report.truth.as_mut()) {
                        if let Some(truth_frame) = map.get(&decision.frame_id) {
                            metrics.record(truth_frame, decision, &outcome.tracks[i]);
                        }
                    }
                }
                if let Some((_, w)) = writer.as_mut() {
                    for frame in &outcome.kept {
                        w.push(&frame.view())?;
                    }
                }
            }
        }
        Ok(())
    });
    collected?;

    report.wall_seconds = started.elapsed().as_secs_f64();
    report.frames_per_sec = if report.frames_total > 0 && report.wall_seconds > 0.0 {
        report.frames_total as f64 / report.wall_seconds
    } else {
        0.0
    };

    if let Some((path, w)) = writer {
        let (chunks, frames) = w.finish()?;
        StreamMeta {
            capacity: capacity as u64,
            geometry_hash: fingerprint,
            frames,
            chunks,
        }
        .save(path)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BenchRow {
    pub workers: usize,
    pub frames: u64,
    pub median_fps: f64,
    pub min_fps: f64,
    pub max_fps: f64,
}

/// Repeats a report-only run for each worker count and keeps the median
/// frame rate together with the spread.
pub fn bench(
    cfg: &RunConfig,
    input: &Path,
    worker_counts: &[usize],
    repeats: usize,
) -> Result<Vec<BenchRow>, PipelineError> {
    let repeats = repeats.max(1);
    let mut rows = Vec::with_capacity(worker_counts.len());
    for &workers in worker_counts {
        let mut local = cfg.clone();
        local.pipeline.workers = workers.max(1);
        let mut fps = Vec::with_capacity(repeats);
        let mut frames = 0;
        for _ in 0..repeats {
            let report = run(&local, input, None, None)?;
            frames = report.frames_total;
            fps.push(report.frames_per_sec);
        }
        fps.sort_by(f64::total_cmp);
        let median = if fps.len() % 2 == 1 {
            fps[fps.len() / 2]
        } else {
            0.5 * (fps[fps.len() / 2 - 1] + fps[fps.len() / 2])
        };
        rows.push(BenchRow {
            workers,
            frames,
            median_fps: median,
            min_fps: fps[0],
            max_fps: *fps.last().unwrap(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toygen::{GeneratedFrame, MsModel, ToyGenerator};

    fn noiseless_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        // One decay per frame: the Poisson mean is negligible and signal
        // frames are topped up to a single decay.
        cfg.gen.muon_rate = 1.0;
        cfg.gen.signal_fraction = 1.0;
        cfg.gen.noise_hits_per_frame = 0.0;
        cfg.gen.ms = MsModel::Off;
        cfg.gen.pixel_sigma = 0.0;
        cfg
    }

    fn instrumented_frame(cfg: &RunConfig, seed: u64) -> GeneratedFrame {
        let consts = PhysicsConstants::default();
        let mut gen = ToyGenerator::new(cfg.gen.clone(), cfg.geometry, consts, seed);
        loop {
            let frame = gen.next_frame();
            if frame.truth.is_signal && frame.truth.signal_fully_instrumented() {
                return frame;
            }
        }
    }

    #[test]
    fn empty_frame_is_discarded() {
        let cfg = RunConfig::default();
        let consts = PhysicsConstants::default();
        let (d, quads) = process_frame(7, [&[], &[], &[], &[]], &cfg, &consts);
        assert_eq!(d.verdict, Verdict::Discard);
        assert_eq!(d.reason, KeepReason::None);
        assert!(d.is_consistent());
        assert_eq!(d.n_combinations, 0);
        assert!(quads.is_empty());
    }

    #[test]
    fn clean_signal_frame_is_kept_for_its_vertex() {
        let cfg = noiseless_cfg();
        let consts = PhysicsConstants::default();
        let frame = instrumented_frame(&cfg, 41);
        let hits = frame.frame_hits();
        let (d, quads) = process_frame(hits.frame_id, hits.layers, &cfg, &consts);
        assert_eq!(d.reason, KeepReason::VertexFound);
        assert_eq!(d.verdict, Verdict::Keep);
        assert!(d.is_consistent());
        assert!(d.n_tracks >= 3);
        assert_eq!(quads.len() as u64, d.n_tracks);
    }

    #[test]
    fn track_overflow_short_circuits() {
        let mut cfg = noiseless_cfg();
        cfg.fit.max_tracks = 1;
        let consts = PhysicsConstants::default();
        let frame = instrumented_frame(&cfg, 42);
        let hits = frame.frame_hits();
        let (d, _) = process_frame(hits.frame_id, hits.layers, &cfg, &consts);
        assert_eq!(d.reason, KeepReason::TrackOverflow);
        assert_eq!(d.n_tracks, 2, "stops right after the extra track");
        assert_eq!(d.n_triples, 0, "vertex stage must not run");
    }

    #[test]
    fn triplet_overflow_short_circuits() {
        let mut cfg = noiseless_cfg();
        cfg.cuts.cuts_max = 1;
        let consts = PhysicsConstants::default();
        let frame = instrumented_frame(&cfg, 43);
        let hits = frame.frame_hits();
        let (d, quads) = process_frame(hits.frame_id, hits.layers, &cfg, &consts);
        assert_eq!(d.reason, KeepReason::TripletOverflow);
        assert_eq!(d.n_tracks, 0, "fit stage must not run");
        assert!(quads.is_empty());
    }

    #[test]
    fn settings_validation() {
        assert!(PipelineSettings::default().validate().is_ok());
        assert!(PipelineSettings {
            workers: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PipelineSettings {
            queue_depth: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PipelineSettings {
            chunk_capacity: 8,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
