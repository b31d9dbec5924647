//! Threshold tuning: monotone scans over a truth-labelled run pick the
//! tightest thresholds that still keep a requested fraction of true objects.
//!
//! The four selection cuts split the allowed stage loss evenly, so their
//! combined retention stays at or above the target even when the losses do
//! not overlap. The fit and vertex chi2 limits take the target directly.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::cuts::{select_triplets, TripletCandidate};
use crate::framestore::{read_chunk_file, FileError};
use crate::geometry::{circle_radius_3pt, cos_phi, tan_lambda, PhysicsConstants, Vec3, NUM_LAYERS};
use crate::pipeline::{self, PipelineError};
use crate::toygen::TruthFrame;
use crate::triplet_fit::fit_track;
use crate::vertex::evaluate_frame;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("retention must be within [0, 1], got {0}")]
    InvalidRetention(f64),
    #[error("no {stage} samples in the tuning input; the retention target is unreachable")]
    NoSamples { stage: &'static str },
    #[error("frame {frame}: truth hit indices do not fit the hit stream; wrong truth file?")]
    TruthMismatch { frame: u64 },
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TuneReport {
    pub frames: u64,
    pub truth_triplets: u64,
    pub track_chi2_samples: u64,
    pub vertex_chi2_samples: u64,
    /// Fractions of the truth samples passing the tuned thresholds.
    pub triplet_retention: f64,
    pub track_retention: f64,
    pub vertex_retention: f64,
    /// Fraction of enumerated combinations the tuned cuts discard.
    pub combination_rejection: f64,
    /// Retention 0 asked for thresholds at the sample minimum.
    pub degenerate: bool,
}

/// Per-triplet cut observables, kept together so the retention measurement
/// sees the same tuples the quantiles were drawn from.
struct CutObservables {
    delta_tan_lambda: f64,
    cos_phi01: f64,
    cos_phi12: f64,
    abs_rt: f64,
}

/// Derives thresholds from a truth-labelled chunk stream and returns the
/// tuned configuration with a measurement of what it achieves.
pub fn tune_thresholds(
    cfg: &RunConfig,
    input: &Path,
    truth: &[TruthFrame],
    retention: f64,
) -> Result<(RunConfig, TuneReport), TuneError> {
    if !(0.0..=1.0).contains(&retention) {
        return Err(TuneError::InvalidRetention(retention));
    }

    let capacity = pipeline::stream_capacity(cfg, input)?;
    let chunks = read_chunk_file(input, capacity)?;
    let truth_by_id: HashMap<u64, &TruthFrame> = truth.iter().map(|f| (f.frame_id, f)).collect();
    let consts = PhysicsConstants::<f64>::default();

    let mut relaxed_fit = cfg.fit;
    relaxed_fit.chi2_max = f64::INFINITY;
    let mut relaxed_vertex = cfg.vertex;
    relaxed_vertex.chi2_vertex_max = f64::INFINITY;
    relaxed_vertex.p_total_max = f64::INFINITY;

    let mut frames = 0u64;
    let mut observables: Vec<CutObservables> = Vec::new();
    let mut track_chi2: Vec<f64> = Vec::new();
    let mut vertex_chi2: Vec<f64> = Vec::new();

    for chunk in &chunks {
        for frame in chunk.iter() {
            let Some(truth_frame) = truth_by_id.get(&frame.frame_id()) else {
                continue;
            };
            frames += 1;
            let hits: [Vec<Vec3<f64>>; NUM_LAYERS] = std::array::from_fn(|l| {
                frame
                    .layer(l)
                    .iter()
                    .map(|h| Vec3::new(h[0] as f64, h[1] as f64, h[2] as f64))
                    .collect()
            });
            let slices: [&[Vec3<f64>]; NUM_LAYERS] = std::array::from_fn(|l| hits[l].as_slice());

            let mut signal_tracks = Vec::new();
            for particle in &truth_frame.particles {
                let (Some(i0), Some(i1), Some(i2)) = (
                    particle.hit_index(0),
                    particle.hit_index(1),
                    particle.hit_index(2),
                ) else {
                    continue;
                };
                if i0 >= hits[0].len() || i1 >= hits[1].len() || i2 >= hits[2].len() {
                    return Err(TuneError::TruthMismatch {
                        frame: frame.frame_id(),
                    });
                }
                let (h0, h1, h2) = (hits[0][i0], hits[1][i1], hits[2][i2]);
                let (Some(t01), Some(t12)) = (tan_lambda(h0, h1), tan_lambda(h1, h2)) else {
                    continue;
                };
                let (Some(c01), Some(c12)) = (cos_phi(h0.xy(), h1.xy()), cos_phi(h1.xy(), h2.xy()))
                else {
                    continue;
                };
                let Some(rt) = circle_radius_3pt(h0.xy(), h1.xy(), h2.xy()) else {
                    continue;
                };
                observables.push(CutObservables {
                    delta_tan_lambda: (t12 - t01).abs(),
                    cos_phi01: c01,
                    cos_phi12: c12,
                    abs_rt: rt.abs(),
                });

                if particle.hit_index(3).is_none() {
                    continue;
                }
                let cand = TripletCandidate {
                    i0: i0 as u32,
                    i1: i1 as u32,
                    i2: i2 as u32,
                    rt,
                };
                if let Ok(track) = fit_track(&cand, slices, &relaxed_fit, &cfg.geometry, &consts) {
                    track_chi2.push(track.chi2_global);
                    if particle.kind.is_signal() {
                        signal_tracks.push(track);
                    }
                }
            }

            if truth_frame.is_signal && signal_tracks.len() == 3 {
                let outcome =
                    evaluate_frame(&signal_tracks, &relaxed_vertex, &cfg.geometry, &consts);
                if let Some(best) = outcome.best {
                    vertex_chi2.push(best.chi2);
                }
            }
        }
    }

    // Quantile thresholds. The cut comparisons are inclusive, so the order
    // statistic itself is enough; the fit accepts strictly below its limit,
    // so that threshold moves one ulp up to keep the boundary sample.
    let sub_q = 1.0 - (1.0 - retention) / 4.0;
    let mut tuned = cfg.clone();
    {
        let mut dlam: Vec<f64> = observables.iter().map(|o| o.delta_tan_lambda).collect();
        let mut c01: Vec<f64> = observables.iter().map(|o| o.cos_phi01).collect();
        let mut c12: Vec<f64> = observables.iter().map(|o| o.cos_phi12).collect();
        let mut art: Vec<f64> = observables.iter().map(|o| o.abs_rt).collect();
        tuned.cuts.delta_lambda_max = upper_quantile(&mut dlam, sub_q, "truth triplet")?;
        tuned.cuts.phi01_min_cos = lower_quantile(&mut c01, sub_q, "truth triplet")?;
        tuned.cuts.phi12_min_cos = lower_quantile(&mut c12, sub_q, "truth triplet")?;
        let (rt_min, rt_max) = window_quantiles(&mut art, sub_q, "truth triplet")?;
        tuned.cuts.rt_min = rt_min;
        tuned.cuts.rt_max = rt_max;
    }
    tuned.fit.chi2_max = upper_quantile(&mut track_chi2, retention, "track chi2")?.next_up();
    tuned.vertex.chi2_vertex_max = upper_quantile(&mut vertex_chi2, retention, "vertex chi2")?;

    // Measure what the tuned thresholds achieve on the same sample.
    let kept_triplets = observables
        .iter()
        .filter(|o| {
            o.delta_tan_lambda <= tuned.cuts.delta_lambda_max
                && o.cos_phi01 >= tuned.cuts.phi01_min_cos
                && o.cos_phi12 >= tuned.cuts.phi12_min_cos
                && o.abs_rt >= tuned.cuts.rt_min
                && o.abs_rt <= tuned.cuts.rt_max
        })
        .count();
    let kept_tracks = track_chi2
        .iter()
        .filter(|&&c| c < tuned.fit.chi2_max)
        .count();
    let kept_vertices = vertex_chi2
        .iter()
        .filter(|&&c| c <= tuned.vertex.chi2_vertex_max)
        .count();

    let mut wide_open = tuned.cuts;
    wide_open.cuts_max = usize::MAX;
    let (mut enumerated, mut survivors) = (0u64, 0u64);
    for chunk in &chunks {
        for frame in chunk.iter() {
            if !truth_by_id.contains_key(&frame.frame_id()) {
                continue;
            }
            let hits: [Vec<Vec3<f64>>; 3] = std::array::from_fn(|l| {
                frame
                    .layer(l)
                    .iter()
                    .map(|h| Vec3::new(h[0] as f64, h[1] as f64, h[2] as f64))
                    .collect()
            });
            let sel = select_triplets([&hits[0], &hits[1], &hits[2]], &wide_open);
            enumerated += sel.counters.enumerated;
            survivors += sel.counters.pass_rt;
        }
    }

    let report = TuneReport {
        frames,
        truth_triplets: observables.len() as u64,
        track_chi2_samples: track_chi2.len() as u64,
        vertex_chi2_samples: vertex_chi2.len() as u64,
        triplet_retention: kept_triplets as f64 / observables.len() as f64,
        track_retention: kept_tracks as f64 / track_chi2.len() as f64,
        vertex_retention: kept_vertices as f64 / vertex_chi2.len() as f64,
        combination_rejection: if enumerated > 0 {
            1.0 - survivors as f64 / enumerated as f64
        } else {
            0.0
        },
        degenerate: retention == 0.0,
    };
    Ok((tuned, report))
}

/// Smallest sample value with at least a `q` fraction at or below it.
fn upper_quantile(samples: &mut [f64], q: f64, stage: &'static str) -> Result<f64, TuneError> {
    if samples.is_empty() {
        return Err(TuneError::NoSamples { stage });
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(samples[k - 1])
}

/// Largest sample value with at least a `q` fraction at or above it.
fn lower_quantile(samples: &mut [f64], q: f64, stage: &'static str) -> Result<f64, TuneError> {
    if samples.is_empty() {
        return Err(TuneError::NoSamples { stage });
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(samples[n - k])
}

/// Two-sided window dropping at most half the allowed loss on each side.
fn window_quantiles(
    samples: &mut [f64],
    q: f64,
    stage: &'static str,
) -> Result<(f64, f64), TuneError> {
    if samples.is_empty() {
        return Err(TuneError::NoSamples { stage });
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let cut = (((1.0 - q) / 2.0) * n as f64).floor() as usize;
    let cut = cut.min((n - 1) / 2);
    Ok((samples[cut], samples[n - 1 - cut]))
}
