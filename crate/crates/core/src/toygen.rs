//! Toy frame generator: muon decays at rest in the target, helix
//! propagation through the barrel layers, multiple scattering, pixel
//! smearing and uniform surface noise.
//!
//! One generator instance produces a deterministic frame stream for a given
//! (seed, config) pair; generation is single-threaded on purpose so the
//! stream is reproducible byte for byte.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framestore::{
    geometry_fingerprint, ChunkStreamWriter, FileError, FrameHits, RawHit, StreamMeta,
};
use crate::geometry::{
    circle_intersections, wrap_angle, Circle2D, DetectorGeometry, PhysicsConstants, Vec2, Vec3,
    NUM_LAYERS,
};

/// 80 um pixel pitch; the usual pitch/sqrt(12) resolution.
pub const PIXEL_PITCH_MM: f64 = 0.080;

pub fn default_pixel_sigma() -> f64 {
    PIXEL_PITCH_MM / 12f64.sqrt()
}

// ---------------------------------------------------------------------------
// truth records
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticleKind {
    #[serde(rename = "signal_e+")]
    SignalEPlus,
    #[serde(rename = "signal_e-")]
    SignalEMinus,
    #[serde(rename = "michel_e+")]
    MichelEPlus,
    /// Signal-like three-track background with part of the energy missing;
    /// only produced when internal conversion is enabled.
    #[serde(rename = "ic_e+")]
    ConversionEPlus,
    #[serde(rename = "ic_e-")]
    ConversionEMinus,
    #[serde(rename = "noise")]
    Noise,
}

impl ParticleKind {
    pub fn is_signal(self) -> bool {
        matches!(self, ParticleKind::SignalEPlus | ParticleKind::SignalEMinus)
    }
}

/// Generated particle with its per-layer hit indices (-1 where no hit).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthParticle {
    pub kind: ParticleKind,
    /// +1 or -1; 0 for noise entries.
    pub charge: i8,
    /// Momentum at the origin, MeV/c.
    pub p: [f64; 3],
    /// Decay vertex (for noise: the hit position itself), mm.
    pub origin: [f64; 3],
    /// Index into the frame's per-layer hit slice, or -1.
    pub hits: [i32; NUM_LAYERS],
}

impl TruthParticle {
    pub fn momentum(&self) -> Vec3<f64> {
        Vec3::new(self.p[0], self.p[1], self.p[2])
    }

    pub fn origin_point(&self) -> Vec3<f64> {
        Vec3::new(self.origin[0], self.origin[1], self.origin[2])
    }

    pub fn hit_index(&self, layer: usize) -> Option<usize> {
        (self.hits[layer] >= 0).then(|| self.hits[layer] as usize)
    }

    pub fn has_hits(&self, layers: std::ops::Range<usize>) -> bool {
        layers.into_iter().all(|l| self.hits[l] >= 0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFrame {
    pub frame_id: u64,
    pub is_signal: bool,
    pub particles: Vec<TruthParticle>,
}

impl TruthFrame {
    pub fn signal_particles(&self) -> impl Iterator<Item = &TruthParticle> {
        self.particles.iter().filter(|p| p.kind.is_signal())
    }

    /// True when all three signal decay products left a hit on every layer,
    /// i.e. the signal is reconstructable by a four-hit track filter.
    pub fn signal_fully_instrumented(&self) -> bool {
        self.is_signal
            && self
                .signal_particles()
                .filter(|p| p.has_hits(0..NUM_LAYERS))
                .count()
                == 3
    }
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Multiple-scattering model applied at each layer crossing.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum MsModel {
    /// Highland angle at the particle's current momentum.
    Highland { x_over_x0: f64 },
    /// Fixed plane-projected angle, rad.
    Fixed { sigma: f64 },
    /// No scattering (noiseless studies).
    Off,
}

impl MsModel {
    fn sigma(&self, consts: &PhysicsConstants<f64>, p: f64) -> f64 {
        match *self {
            MsModel::Highland { x_over_x0 } => consts.highland_sigma(p, x_over_x0),
            MsModel::Fixed { sigma } => sigma,
            MsModel::Off => 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Muon stopping rate, 1/s.
    pub muon_rate: f64,
    /// Frame length, ns.
    pub frame_ns: f64,
    /// Probability that a frame contains a signal decay.
    pub signal_fraction: f64,
    /// Mean uniform-surface noise hits per frame.
    pub noise_hits_per_frame: f64,
    pub ms: MsModel,
    /// Hit smearing along the layer surface, mm (0 = exact hits).
    pub pixel_sigma: f64,
    /// Target region along z: decays sampled uniformly in |z| <= this, mm.
    pub target_half_z: f64,
    /// Probability that a background decay is a signal-like internal
    /// conversion instead of a single positron.
    pub internal_conversion_fraction: f64,
    /// Fraction of the parent energy carried away invisibly in conversions.
    pub internal_conversion_energy_loss: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            muon_rate: 1e8,
            frame_ns: 64.0,
            signal_fraction: 0.001,
            noise_hits_per_frame: 2.0,
            ms: MsModel::Highland { x_over_x0: 0.00115 },
            pixel_sigma: default_pixel_sigma(),
            target_half_z: 50.0,
            internal_conversion_fraction: 0.0,
            internal_conversion_energy_loss: 0.15,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.muon_rate > 0.0) {
            return Err("gen.muon_rate must be positive".into());
        }
        if !(self.frame_ns > 0.0) {
            return Err("gen.frame_ns must be positive".into());
        }
        for (key, v) in [
            ("gen.signal_fraction", self.signal_fraction),
            (
                "gen.internal_conversion_fraction",
                self.internal_conversion_fraction,
            ),
            (
                "gen.internal_conversion_energy_loss",
                self.internal_conversion_energy_loss,
            ),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{key} must lie in [0, 1]"));
            }
        }
        if self.noise_hits_per_frame < 0.0 || self.pixel_sigma < 0.0 {
            return Err("gen.noise_hits_per_frame and gen.pixel_sigma must be >= 0".into());
        }
        if !(self.target_half_z > 0.0) {
            return Err("gen.target_half_z must be positive".into());
        }
        if let MsModel::Highland { x_over_x0 } = self.ms {
            if !(x_over_x0 > 0.0) {
                return Err("gen.ms.x_over_x0 must be positive".into());
            }
        }
        if let MsModel::Fixed { sigma } = self.ms {
            if sigma < 0.0 {
                return Err("gen.ms.sigma must be >= 0".into());
            }
        }
        Ok(())
    }

    pub fn mean_decays_per_frame(&self) -> f64 {
        self.muon_rate * self.frame_ns * 1e-9
    }
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

/// One generated frame: per-layer stored hits plus the truth record.
#[derive(Clone, Debug)]
pub struct GeneratedFrame {
    pub frame_id: u64,
    pub layers: [Vec<RawHit>; NUM_LAYERS],
    pub truth: TruthFrame,
}

impl GeneratedFrame {
    pub fn frame_hits(&self) -> FrameHits<'_> {
        FrameHits {
            frame_id: self.frame_id,
            layers: [
                &self.layers[0],
                &self.layers[1],
                &self.layers[2],
                &self.layers[3],
            ],
        }
    }
}

pub struct ToyGenerator {
    cfg: GenConfig,
    geom: DetectorGeometry<f64>,
    consts: PhysicsConstants<f64>,
    rng: ChaCha12Rng,
    next_id: u64,
}

#[derive(Clone, Copy)]
struct HelixState {
    pos: Vec3<f64>,
    /// Transverse direction of travel, rad.
    phi: f64,
    /// Dip angle: tan(lambda) = pz / pt.
    lambda: f64,
    /// Momentum magnitude, MeV/c (conserved by scattering).
    p: f64,
    charge: i8,
}

/// Exact crossing point and the smeared position actually recorded.
#[derive(Clone, Copy, Debug)]
pub struct LayerCrossing {
    pub exact: Vec3<f64>,
    pub recorded: Vec3<f64>,
}

impl ToyGenerator {
    pub fn new(
        cfg: GenConfig,
        geom: DetectorGeometry<f64>,
        consts: PhysicsConstants<f64>,
        seed: u64,
    ) -> Self {
        Self {
            cfg,
            geom,
            consts,
            rng: ChaCha12Rng::seed_from_u64(seed),
            next_id: 0,
        }
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn next_frame(&mut self) -> GeneratedFrame {
        let frame_id = self.next_id;
        self.next_id += 1;

        let is_signal = self.rng.random_bool(self.cfg.signal_fraction);
        let mut n_decays = poisson(&mut self.rng, self.cfg.mean_decays_per_frame());
        if is_signal {
            n_decays = n_decays.max(1);
        }

        let mut layers: [Vec<RawHit>; NUM_LAYERS] = Default::default();
        let mut particles = Vec::new();

        for decay in 0..n_decays {
            let vertex = self.sample_vertex();
            let products: Vec<(ParticleKind, i8, Vec3<f64>)> = if is_signal && decay == 0 {
                self.sample_three_body(1.0)
                    .into_iter()
                    .zip([
                        ParticleKind::SignalEPlus,
                        ParticleKind::SignalEMinus,
                        ParticleKind::SignalEPlus,
                    ])
                    .map(|((q, p), kind)| (kind, q, p))
                    .collect()
            } else if self.rng.random_bool(self.cfg.internal_conversion_fraction) {
                let scale = 1.0 - self.cfg.internal_conversion_energy_loss;
                self.sample_three_body(scale)
                    .into_iter()
                    .zip([
                        ParticleKind::ConversionEPlus,
                        ParticleKind::ConversionEMinus,
                        ParticleKind::ConversionEPlus,
                    ])
                    .map(|((q, p), kind)| (kind, q, p))
                    .collect()
            } else {
                let p = self.sample_michel();
                vec![(ParticleKind::MichelEPlus, 1, p)]
            };

            for (kind, charge, momentum) in products {
                let crossings = self.propagate_stochastic(vertex, momentum, charge);
                let mut hits = [-1i32; NUM_LAYERS];
                for (l, crossing) in crossings.iter().enumerate() {
                    if let Some(c) = crossing {
                        hits[l] = layers[l].len() as i32;
                        layers[l].push([
                            c.recorded.x as f32,
                            c.recorded.y as f32,
                            c.recorded.z as f32,
                        ]);
                    }
                }
                particles.push(TruthParticle {
                    kind,
                    charge,
                    p: [momentum.x, momentum.y, momentum.z],
                    origin: [vertex.x, vertex.y, vertex.z],
                    hits,
                });
            }
        }

        let n_noise = poisson(&mut self.rng, self.cfg.noise_hits_per_frame);
        for _ in 0..n_noise {
            let (layer, pos) = self.sample_noise_hit();
            let mut hits = [-1i32; NUM_LAYERS];
            hits[layer] = layers[layer].len() as i32;
            layers[layer].push([pos.x as f32, pos.y as f32, pos.z as f32]);
            particles.push(TruthParticle {
                kind: ParticleKind::Noise,
                charge: 0,
                p: [0.0; 3],
                origin: [pos.x, pos.y, pos.z],
                hits,
            });
        }

        GeneratedFrame {
            frame_id,
            layers,
            truth: TruthFrame {
                frame_id,
                is_signal,
                particles,
            },
        }
    }

    // -- decay sampling ------------------------------------------------------

    fn sample_vertex(&mut self) -> Vec3<f64> {
        let r = self.geom.target_radius * self.rng.random::<f64>().sqrt();
        let phi = self
            .rng
            .random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let z = self
            .rng
            .random_range(-self.cfg.target_half_z..self.cfg.target_half_z);
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    }

    /// Three-electron decay of the parent at rest, uniform over phase space.
    /// `scale` < 1 removes energy for the internal-conversion approximation.
    fn sample_three_body(&mut self, scale: f64) -> [(i8, Vec3<f64>); 3] {
        let m = self.consts.muon_rest_energy;
        let me = self.consts.electron_mass;
        let e_max = (m * m - 3.0 * me * me) / (2.0 * m);
        let (p1, p2, cos12) = loop {
            let e1 = self.rng.random_range(me..e_max);
            let e2 = self.rng.random_range(me..e_max);
            let e3 = m - e1 - e2;
            if e3 < me || e3 > e_max {
                continue;
            }
            let p1 = (e1 * e1 - me * me).sqrt();
            let p2 = (e2 * e2 - me * me).sqrt();
            let p3 = (e3 * e3 - me * me).sqrt();
            if p3 > p1 + p2 || p3 < (p1 - p2).abs() {
                continue;
            }
            let cos12 = ((p3 * p3 - p1 * p1 - p2 * p2) / (2.0 * p1 * p2)).clamp(-1.0, 1.0);
            break (p1, p2, cos12);
        };
        let n1 = self.sample_direction();
        let (e1, e2) = orthonormal_basis(n1);
        let psi = self.rng.random_range(0.0..std::f64::consts::TAU);
        let sin12 = (1.0 - cos12 * cos12).sqrt();
        let d2 = n1
            .scale(cos12)
            .add(e1.scale(sin12 * psi.cos()))
            .add(e2.scale(sin12 * psi.sin()));
        let v1 = n1.scale(p1 * scale);
        let v2 = d2.scale(p2 * scale);
        let v3 = v1.add(v2).scale(-1.0);
        [(1, v1), (-1, v2), (1, v3)]
    }

    /// Single positron with momentum from the 3x^2 - 2x^3 spectrum shape.
    fn sample_michel(&mut self) -> Vec3<f64> {
        let p_end = self.consts.michel_endpoint_momentum();
        let x = loop {
            let x = self.rng.random::<f64>();
            let u = self.rng.random::<f64>();
            if u <= 3.0 * x * x - 2.0 * x * x * x {
                break x;
            }
        };
        self.sample_direction().scale(x * p_end)
    }

    fn sample_direction(&mut self) -> Vec3<f64> {
        let cos_theta = self.rng.random_range(-1.0..1.0f64);
        let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
        let phi = self.rng.random_range(0.0..std::f64::consts::TAU);
        Vec3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta)
    }

    fn sample_noise_hit(&mut self) -> (usize, Vec3<f64>) {
        // area-weighted layer choice, uniform over the chosen surface
        let areas: Vec<f64> = (0..NUM_LAYERS)
            .map(|l| self.geom.layer_radii[l] * self.geom.half_lengths[l])
            .collect();
        let total: f64 = areas.iter().sum();
        let mut pick = self.rng.random_range(0.0..total);
        let mut layer = NUM_LAYERS - 1;
        for (l, a) in areas.iter().enumerate() {
            if pick < *a {
                layer = l;
                break;
            }
            pick -= a;
        }
        let r = self.geom.layer_radii[layer];
        let phi = self
            .rng
            .random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let z = self
            .rng
            .random_range(-self.geom.half_lengths[layer]..self.geom.half_lengths[layer]);
        (layer, Vec3::new(r * phi.cos(), r * phi.sin(), z))
    }

    // -- propagation ---------------------------------------------------------

    /// Propagates with the configured scattering and pixel smearing.
    fn propagate_stochastic(
        &mut self,
        origin: Vec3<f64>,
        momentum: Vec3<f64>,
        charge: i8,
    ) -> [Option<LayerCrossing>; NUM_LAYERS] {
        let pt = momentum.xy().norm();
        if pt <= 0.0 {
            return [None; NUM_LAYERS];
        }
        let mut state = HelixState {
            pos: origin,
            phi: momentum.xy().azimuth(),
            lambda: momentum.z.atan2(pt),
            p: momentum.norm(),
            charge,
        };
        let mut out = [None; NUM_LAYERS];
        for (l, slot) in out.iter_mut().enumerate() {
            let Some(exact) = first_layer_crossing(&state, &self.geom, l) else {
                break; // cannot reach this radius, so none beyond it either
            };
            if exact.is_none() {
                continue; // crossed the radius outside the instrumented z range
            }
            let (exact, turn) = exact.unwrap();
            if exact.z.abs() <= self.geom.half_lengths[l] {
                let recorded = self.smear_on_surface(exact, l);
                *slot = Some(LayerCrossing { exact, recorded });
                // advance the direction to the crossing, then kink it
                state.phi = wrap_angle(state.phi + sense(charge) * turn);
                state.pos = exact;
                let sigma = self.cfg.ms.sigma(&self.consts, state.p);
                if sigma > 0.0 {
                    let n = Normal::new(0.0, sigma).expect("positive sigma");
                    let theta_kick: f64 = n.sample(&mut self.rng);
                    let phi_kick: f64 = n.sample(&mut self.rng);
                    let cos_l = state.lambda.cos();
                    state.lambda += theta_kick;
                    if cos_l.abs() > 1e-9 {
                        state.phi = wrap_angle(state.phi + phi_kick / cos_l);
                    }
                }
            } else {
                // moved past the radius outside the layer; no material crossed
                state.phi = wrap_angle(state.phi + sense(charge) * turn);
                state.pos = exact;
            }
        }
        out
    }

    /// Noiseless propagation (no scattering, no smearing); the truth path.
    pub fn propagate_exact(
        origin: Vec3<f64>,
        momentum: Vec3<f64>,
        charge: i8,
        geom: &DetectorGeometry<f64>,
    ) -> [Option<Vec3<f64>>; NUM_LAYERS] {
        let pt = momentum.xy().norm();
        if pt <= 0.0 {
            return [None; NUM_LAYERS];
        }
        let mut state = HelixState {
            pos: origin,
            phi: momentum.xy().azimuth(),
            lambda: momentum.z.atan2(pt),
            p: momentum.norm(),
            charge,
        };
        let mut out = [None; NUM_LAYERS];
        for (l, slot) in out.iter_mut().enumerate() {
            let Some(cross) = first_layer_crossing(&state, geom, l) else {
                break;
            };
            if let Some((exact, turn)) = cross {
                if exact.z.abs() <= geom.half_lengths[l] {
                    *slot = Some(exact);
                }
                state.phi = wrap_angle(state.phi + sense(charge) * turn);
                state.pos = exact;
            }
        }
        out
    }

    fn smear_on_surface(&mut self, exact: Vec3<f64>, layer: usize) -> Vec3<f64> {
        if self.cfg.pixel_sigma <= 0.0 {
            return exact;
        }
        let r = self.geom.layer_radii[layer];
        let n = Normal::new(0.0, self.cfg.pixel_sigma).expect("positive sigma");
        let dphi: f64 = n.sample(&mut self.rng) / r;
        let dz: f64 = n.sample(&mut self.rng);
        let phi = exact.xy().azimuth() + dphi;
        Vec3::new(r * phi.cos(), r * phi.sin(), exact.z + dz)
    }
}

fn sense(charge: i8) -> f64 {
    // charge +1 turns counter-clockwise seen from +z
    if charge >= 0 {
        1.0
    } else {
        -1.0
    }
}

fn orthonormal_basis(n: Vec3<f64>) -> (Vec3<f64>, Vec3<f64>) {
    let seed = if n.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let e1 = seed.cross(n);
    let e1 = e1.scale(1.0 / e1.norm());
    let e2 = n.cross(e1);
    (e1, e2)
}

/// First crossing of the helix with the cylinder of layer `l`, if any.
///
/// `Ok` values carry the crossing point and the transverse turning angle
/// from the current position (always positive, measured along travel).
/// Outer `None`: the helix never reaches the radius. Inner `None` is not
/// used; z-range rejection happens at the caller, which still needs the
/// state advanced.
fn first_layer_crossing(
    state: &HelixState,
    geom: &DetectorGeometry<f64>,
    layer: usize,
) -> Option<Option<(Vec3<f64>, f64)>> {
    let pt = state.p * state.lambda.cos();
    if pt <= 0.0 {
        return None;
    }
    let rt = pt / (geom.b_field * crate::geometry::PT_CONVERSION);
    let dir = Vec2::new(state.phi.cos(), state.phi.sin());
    let q = sense(state.charge);
    let center = state.pos.xy().add(dir.rot90().scale(q * rt));
    let track = Circle2D::new(center, rt);
    let layer_circle = Circle2D::new(Vec2::new(0.0, 0.0), geom.layer_radii[layer]);
    let (a, b) = circle_intersections(&track, &layer_circle)?;
    let theta0 = state.pos.xy().sub(center).azimuth();
    let turn_to = |p: Vec2<f64>| -> f64 {
        let t = q * (p.sub(center).azimuth() - theta0);
        let t = t.rem_euclid(std::f64::consts::TAU);
        if t < 1e-12 {
            std::f64::consts::TAU
        } else {
            t
        }
    };
    let (ta, tb) = (turn_to(a), turn_to(b));
    let (point, turn) = if ta <= tb { (a, ta) } else { (b, tb) };
    let z = state.pos.z + turn * rt * state.lambda.tan();
    Some(Some((Vec3::new(point.x, point.y, z), turn)))
}

fn poisson(rng: &mut ChaCha12Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive mean");
    let n: f64 = d.sample(rng);
    n as usize
}

// ---------------------------------------------------------------------------
// stream files
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("truth record: {0}")]
    Truth(#[from] serde_json::Error),
}

/// Generates `n_frames` frames and writes the chunk file, its metadata
/// sidecar and (optionally) the line-delimited truth file.
#[allow(clippy::too_many_arguments)]
pub fn generate_to_files(
    cfg: &GenConfig,
    geom: &DetectorGeometry<f64>,
    consts: &PhysicsConstants<f64>,
    n_frames: u64,
    seed: u64,
    capacity: usize,
    chunk_path: &Path,
    truth_path: Option<&Path>,
) -> Result<StreamMeta, GenError> {
    let mut generator = ToyGenerator::new(cfg.clone(), *geom, *consts, seed);
    let out = BufWriter::new(File::create(chunk_path).map_err(FileError::Io)?);
    let mut writer = ChunkStreamWriter::new(out, capacity).map_err(FileError::Store)?;
    let mut truth_out = match truth_path {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    for _ in 0..n_frames {
        let frame = generator.next_frame();
        writer.push(&frame.frame_hits())?;
        if let Some(w) = truth_out.as_mut() {
            serde_json::to_writer(&mut *w, &frame.truth)?;
            w.write_all(b"\n")?;
        }
    }
    let (chunks, frames) = writer.finish()?;
    if let Some(mut w) = truth_out {
        w.flush()?;
    }
    let meta = StreamMeta {
        capacity: capacity as u64,
        geometry_hash: geometry_fingerprint(geom),
        frames,
        chunks,
    };
    meta.save(chunk_path)?;
    Ok(meta)
}

pub fn read_truth_file(path: &Path) -> Result<Vec<TruthFrame>, GenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
